//! Procedural audio-visual scenes, questions about them and the feature
//! tensors a model sees.
//!
//! A [`SceneSpec`] is the symbolic ground truth: which instruments sit at
//! which patch, when they sound, how loud and in which frequency band.
//! [`answer_oracle`] evaluates a [`QuestionSpec`] against it by rule, and
//! [`synthesize_features`] renders both into a [`FeatureBundle`] by adding
//! fixed random codebook vectors plus Gaussian noise.
//!
//! Classes 4 and 5 form the frequency-critical pair: they share their visual
//! and audio codes and differ only in the band their energy lands in.

mod dataset;
mod features;
mod fixture;
mod question;
mod scene;

pub use dataset::{generate_dataset, generate_sample, sample_seed, Sample, Split};
pub use features::{band_energy, synthesize_features, Codebooks, FeatureBundle};
pub use fixture::{read_fixture, read_fixture_from, write_fixture, write_fixture_to, FIXTURE_MAGIC, FIXTURE_VERSION};
pub use question::{
    answer_index, answer_oracle, is_frequency_critical, Modality, QuestionSpec, QuestionType, Template, ANSWERS,
    ANSWER_NO, ANSWER_YES,
};
pub use scene::{generate_scene, Instrument, SceneSpec};

use crate::{Error, Result};

/// Number of instrument classes.
pub const NUM_CLASSES: usize = 6;
/// The frequency-critical class pair.
pub const CRITICAL_PAIR: (usize, usize) = (4, 5);
/// Upper bound on instruments per scene.
pub const MAX_INSTRUMENTS: usize = 4;

/// The other member of the frequency-critical pair, if `class` is in it.
pub fn pair_mate(class: usize) -> Option<usize> {
    match class {
        c if c == CRITICAL_PAIR.0 => Some(CRITICAL_PAIR.1),
        c if c == CRITICAL_PAIR.1 => Some(CRITICAL_PAIR.0),
        _ => None,
    }
}

/// Frequency band an instrument class sounds in.
pub fn class_band(class: usize, bands: usize) -> usize {
    class % bands
}

/// Shapes and generation knobs of the synthetic task.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Segments `T`.
    pub segments: usize,
    /// Feature width `D`.
    pub dim: usize,
    /// Patches per segment `M'`.
    pub patches: usize,
    /// Question tokens `N`.
    pub words: usize,
    /// Frequency bands `F`.
    pub bands: usize,
    /// Answer vocabulary size `V`.
    pub vocab: usize,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    pub min_instruments: usize,
    pub max_instruments: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            segments: 8,
            dim: 32,
            patches: 4,
            words: 6,
            bands: 8,
            vocab: 8,
            noise: 0.05,
            min_instruments: 1,
            max_instruments: MAX_INSTRUMENTS,
        }
    }
}

impl SynthConfig {
    /// Largest instrument count a scene can hold.
    pub fn instrument_cap(&self) -> usize {
        self.max_instruments.min(self.patches).min(MAX_INSTRUMENTS)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("segments", self.segments),
            ("dim", self.dim),
            ("patches", self.patches),
            ("words", self.words),
            ("bands", self.bands),
            ("min_instruments", self.min_instruments),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.min_instruments > self.instrument_cap() {
            return Err(Error::Config(format!(
                "min_instruments {} exceeds the per-scene cap {}",
                self.min_instruments,
                self.instrument_cap()
            )));
        }
        if self.vocab < ANSWERS.len() {
            return Err(Error::Config(format!(
                "answer vocabulary of {} cannot hold the {} answers",
                self.vocab,
                ANSWERS.len()
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and non-negative", self.noise)));
        }
        Ok(())
    }
}
