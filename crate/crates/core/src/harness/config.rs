use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{Ablation, GuidanceStage, ModelConfig};
use crate::qcr::PROMPT_KEYWORDS;
use crate::synth::SynthConfig;
use crate::{Error, Result};

/// Everything a run depends on.
///
/// The textual form is one `key = value` pair per line with `#` comments;
/// keys are the field names. List values are comma separated and may be
/// empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub segments: usize,
    pub dim: usize,
    pub patches: usize,
    pub words: usize,
    pub bands: usize,
    pub heads: usize,
    pub freq_hidden: usize,
    pub vocab: usize,
    pub ffn_hidden: usize,
    pub noise: f64,

    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,

    #[serde(flatten)]
    pub ablation: Ablation,

    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub output_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            segments: 8,
            dim: 32,
            patches: 4,
            words: 6,
            bands: 8,
            heads: 4,
            freq_hidden: 32,
            vocab: 8,
            ffn_hidden: 128,
            noise: 0.05,
            learning_rate: 1e-3,
            decay_factor: 0.1,
            decay_period: 17,
            batch_size: 32,
            epochs: 20,
            weight_decay: 1e-2,
            ablation: Ablation::default(),
            seed: 0,
            train_count: 2000,
            val_count: 500,
            output_path: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "segments" => self.segments = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "patches" => self.patches = parse_num(key, value)?,
            "words" => self.words = parse_num(key, value)?,
            "bands" => self.bands = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "freq_hidden" => self.freq_hidden = parse_num(key, value)?,
            "vocab" => self.vocab = parse_num(key, value)?,
            "ffn_hidden" => self.ffn_hidden = parse_num(key, value)?,
            "noise" => self.noise = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "decay_factor" => self.decay_factor = parse_num(key, value)?,
            "decay_period" => self.decay_period = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "disable_qgmc" => self.ablation.disable_qgmc = parse_bool(key, value)?,
            "disable_sti" => self.ablation.disable_sti = parse_bool(key, value)?,
            "disable_tfi" => self.ablation.disable_tfi = parse_bool(key, value)?,
            "disable_qcr" => self.ablation.disable_qcr = parse_bool(key, value)?,
            "qgmc_variant" => self.ablation.qgmc_variant = value.parse()?,
            "prompt_mode" => self.ablation.prompt_mode = value.parse()?,
            "prompt_keywords" => self.ablation.prompt_keywords = parse_list(value),
            "query_guidance_removed" => {
                self.ablation.query_guidance_removed =
                    parse_list(value).iter().map(|s| s.parse()).collect::<Result<Vec<GuidanceStage>>>()?
            }
            "seed" => self.seed = parse_num(key, value)?,
            "train_count" => self.train_count = parse_num(key, value)?,
            "val_count" => self.val_count = parse_num(key, value)?,
            "output_path" => self.output_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// The textual form accepted by [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let a = &self.ablation;
        let stages: Vec<&str> = a.query_guidance_removed.iter().map(|s| s.name()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
        kv("segments", self.segments.to_string());
        kv("dim", self.dim.to_string());
        kv("patches", self.patches.to_string());
        kv("words", self.words.to_string());
        kv("bands", self.bands.to_string());
        kv("heads", self.heads.to_string());
        kv("freq_hidden", self.freq_hidden.to_string());
        kv("vocab", self.vocab.to_string());
        kv("ffn_hidden", self.ffn_hidden.to_string());
        kv("noise", format!("{:?}", self.noise));
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("decay_factor", format!("{:?}", self.decay_factor));
        kv("decay_period", self.decay_period.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("disable_qgmc", a.disable_qgmc.to_string());
        kv("disable_sti", a.disable_sti.to_string());
        kv("disable_tfi", a.disable_tfi.to_string());
        kv("disable_qcr", a.disable_qcr.to_string());
        kv("qgmc_variant", a.qgmc_variant.name().to_string());
        kv("prompt_mode", a.prompt_mode.name().to_string());
        kv("prompt_keywords", a.prompt_keywords.join(","));
        kv("query_guidance_removed", stages.join(","));
        kv("seed", self.seed.to_string());
        kv("train_count", self.train_count.to_string());
        kv("val_count", self.val_count.to_string());
        kv(
            "output_path",
            self.output_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor {} must lie in (0, 1]", self.decay_factor));
        }
        let counts = [
            ("decay_period", self.decay_period),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("train_count", self.train_count),
            ("val_count", self.val_count),
            ("heads", self.heads),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{k} must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.dim % self.heads != 0 {
            return bad(format!("heads {} must divide dim {}", self.heads, self.dim));
        }
        if let Some(k) = self.ablation.prompt_keywords.iter().find(|k| !PROMPT_KEYWORDS.contains(&k.as_str())) {
            return bad(format!("unknown prompt keyword `{k}`"));
        }
        self.ablation.validate()?;
        self.synth_config().validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            segments: self.segments,
            dim: self.dim,
            patches: self.patches,
            words: self.words,
            bands: self.bands,
            vocab: self.vocab,
            noise: self.noise,
            ..SynthConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            segments: self.segments,
            dim: self.dim,
            patches: self.patches,
            words: self.words,
            bands: self.bands,
            vocab: self.vocab,
            heads: self.heads,
            freq_hidden: self.freq_hidden,
            ffn_hidden: self.ffn_hidden,
            ablation: self.ablation.clone(),
        }
    }
}
