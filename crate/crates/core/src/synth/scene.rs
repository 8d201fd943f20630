use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_band, pair_mate, SynthConfig, NUM_CLASSES};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub class: usize,
    /// Patch index in `0..M'`.
    pub position: usize,
    /// Frequency band in `0..F`.
    pub band: usize,
    /// Activity per segment.
    pub schedule: Vec<bool>,
    /// In `[0.2, 1.0]`.
    pub loudness: f64,
}

impl Instrument {
    pub fn is_sounding(&self) -> bool {
        self.schedule.iter().any(|&a| a)
    }

    /// First active segment.
    pub fn onset(&self) -> Option<usize> {
        self.schedule.iter().position(|&a| a)
    }
}

/// Symbolic ground truth of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub instruments: Vec<Instrument>,
    pub segments: usize,
    pub patches: usize,
    pub bands: usize,
}

impl SceneSpec {
    pub fn find_class(&self, class: usize) -> Option<&Instrument> {
        self.instruments.iter().find(|i| i.class == class)
    }

    pub fn at_position(&self, position: usize) -> Option<&Instrument> {
        self.instruments.iter().find(|i| i.position == position)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruments.len() > self.patches {
            return Err(Error::invalid("scene", "more instruments than patches"));
        }
        for (i, inst) in self.instruments.iter().enumerate() {
            let ok = inst.class < NUM_CLASSES
                && inst.position < self.patches
                && inst.band < self.bands
                && inst.schedule.len() == self.segments
                && (0.2..=1.0).contains(&inst.loudness);
            if !ok {
                return Err(Error::invalid("scene", format!("instrument {i} out of range: {inst:?}")));
            }
            if self.instruments[..i].iter().any(|o| o.position == inst.position) {
                return Err(Error::invalid("scene", format!("two instruments at patch {}", inst.position)));
            }
        }
        Ok(())
    }
}

pub(crate) fn loudness<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(0.2..=1.0)
}

/// One contiguous active run of `len` segments.
pub(crate) fn run_schedule<R: Rng>(rng: &mut R, segments: usize, len: usize) -> Vec<bool> {
    let len = len.clamp(1, segments);
    let start = rng.gen_range(0..=segments - len);
    (0..segments).map(|t| t >= start && t < start + len).collect()
}

/// Run of at least a quarter of the clip.
pub(crate) fn sounding_schedule<R: Rng>(rng: &mut R, segments: usize) -> Vec<bool> {
    let min = segments.div_ceil(4).max(1);
    let len = rng.gen_range(min..=segments);
    run_schedule(rng, segments, len)
}

/// `k` distinct classes containing `required`, never both members of the
/// critical pair, never any class in `exclude`.
pub(crate) fn pick_classes<R: Rng>(rng: &mut R, k: usize, required: &[usize], exclude: &[usize]) -> Vec<usize> {
    let mut chosen: Vec<usize> = required.to_vec();
    let mut pool: Vec<usize> = (0..NUM_CLASSES).collect();
    pool.shuffle(rng);
    for c in pool {
        if chosen.len() >= k {
            break;
        }
        let clash = chosen.contains(&c) || exclude.contains(&c) || pair_mate(c).is_some_and(|m| chosen.contains(&m));
        if !clash {
            chosen.push(c);
        }
    }
    chosen
}

/// Places `classes` on distinct random patches with the given schedules.
pub(crate) fn place<R: Rng>(
    rng: &mut R,
    cfg: &SynthConfig,
    classes: &[usize],
    schedules: Vec<Vec<bool>>,
    loudness: Vec<f64>,
) -> SceneSpec {
    let mut positions: Vec<usize> = (0..cfg.patches).collect();
    positions.shuffle(rng);
    let instruments = classes
        .iter()
        .zip(positions)
        .zip(schedules.into_iter().zip(loudness))
        .map(|((&class, position), (schedule, loudness))| Instrument {
            class,
            position,
            band: class_band(class, cfg.bands),
            schedule,
            loudness,
        })
        .collect();
    SceneSpec {
        instruments,
        segments: cfg.segments,
        patches: cfg.patches,
        bands: cfg.bands,
    }
}

/// Unconditioned scene: instrument count uniform over the allowed range,
/// distinct classes on distinct patches, each sounding with probability 3/4
/// for one contiguous run.
pub fn generate_scene(seed: u64, cfg: &SynthConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(cfg.min_instruments..=cfg.instrument_cap());
    let classes = pick_classes(&mut rng, k, &[], &[]);
    let schedules = (0..k)
        .map(|_| {
            if rng.gen_bool(0.75) {
                sounding_schedule(&mut rng, cfg.segments)
            } else {
                vec![false; cfg.segments]
            }
        })
        .collect();
    let loud = (0..k).map(|_| loudness(&mut rng)).collect();
    Ok(place(&mut rng, cfg, &classes, schedules, loud))
}
