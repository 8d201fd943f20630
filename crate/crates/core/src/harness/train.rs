use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{lr_at_epoch, AdamW};
use super::RunConfig;
use crate::model::{Batch, QStar};
use crate::nn::apply_stat_updates;
use crate::qcr::AnswerDistribution;
use crate::synth::{generate_dataset, Codebooks, FeatureBundle, Modality, Split};
use crate::{Error, Result, Scalar};

/// Anything that maps feature bundles to answer indices.
pub trait Predictor {
    fn predict(&self, bundles: &[&FeatureBundle]) -> Result<Vec<usize>>;
}

impl<S: Scalar> Predictor for QStar<S> {
    fn predict(&self, bundles: &[&FeatureBundle]) -> Result<Vec<usize>> {
        let logits = self.logits(&Batch::from_bundles(bundles)?)?;
        Ok(AnswerDistribution::batch(&logits).into_iter().map(|d| d.argmax).collect())
    }
}

/// Accuracies over a labelled set. Group accuracies are `None` when the set
/// holds no sample of that group; `overall` is sample-weighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    pub audio: Option<f64>,
    pub visual: Option<f64>,
    pub audio_visual: Option<f64>,
    pub frequency_critical: Option<f64>,
    pub per_template: BTreeMap<String, f64>,
    pub samples: usize,
    pub frequency_critical_samples: usize,
}

#[derive(Default)]
struct Tally {
    hit: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, ok: bool) {
        self.hit += ok as usize;
        self.total += 1;
    }

    fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hit as f64 / self.total as f64)
    }
}

pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, data: &[FeatureBundle], batch_size: usize) -> Result<Accuracy> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let mut overall = Tally::default();
    let mut by_modality: BTreeMap<Modality, Tally> = BTreeMap::new();
    let mut by_template: BTreeMap<String, Tally> = BTreeMap::new();
    let mut critical = Tally::default();
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&FeatureBundle> = chunk.iter().collect();
        let preds = predictor.predict(&refs)?;
        if preds.len() != chunk.len() {
            return Err(Error::invalid("evaluate", "predictor returned the wrong number of answers"));
        }
        for (b, &p) in chunk.iter().zip(&preds) {
            let ok = p == b.label;
            overall.add(ok);
            by_modality.entry(b.question_type.modality()).or_default().add(ok);
            by_template
                .entry(b.question_type.template().name().to_string())
                .or_default()
                .add(ok);
            if b.question_type.is_frequency_critical() {
                critical.add(ok);
            }
        }
    }
    let group = |m| by_modality.get(&m).and_then(Tally::rate);
    Ok(Accuracy {
        overall: overall.rate().expect("non-empty"),
        audio: group(Modality::Audio),
        visual: group(Modality::Visual),
        audio_visual: group(Modality::AudioVisual),
        frequency_critical: critical.rate(),
        per_template: by_template
            .into_iter()
            .map(|(k, t)| (k, t.rate().expect("entry exists")))
            .collect(),
        samples: overall.total,
        frequency_critical_samples: critical.total,
    })
}

/// Outcome of one training run.
///
/// Wall-clock time is kept for display but left out of the serialized
/// document, which is therefore identical for identical inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: RunConfig,
    pub num_params: usize,
    pub epoch_losses: Vec<f64>,
    pub accuracy: Accuracy,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Generated train and validation sets plus the codebooks they came from.
pub struct Data {
    pub codebooks: Codebooks,
    pub train: Vec<FeatureBundle>,
    pub val: Vec<FeatureBundle>,
}

pub fn generate_data(cfg: &RunConfig) -> Result<Data> {
    let codebooks = Codebooks::new(cfg.seed, &cfg.synth_config())?;
    let bundles = |split, n| -> Result<Vec<FeatureBundle>> {
        Ok(generate_dataset(cfg.seed, split, n, &codebooks)?
            .into_iter()
            .map(|s| s.bundle)
            .collect())
    };
    Ok(Data {
        train: bundles(Split::Train, cfg.train_count)?,
        val: bundles(Split::Val, cfg.val_count)?,
        codebooks,
    })
}

fn model_seed(seed: u64) -> u64 {
    seed ^ 0x51_5354_6172
}

/// Freshly initialised model for `cfg`, drawing its prompt bank from the
/// run's codebooks.
pub fn build_model(cfg: &RunConfig, codebooks: &Codebooks) -> Result<QStar<f64>> {
    cfg.validate()?;
    QStar::new(&cfg.model_config(), model_seed(cfg.seed), &codebooks.prompt_bank()?)
}

/// Per-epoch progress callback: `(epoch, mean train loss, learning rate)`.
pub type EpochObserver<'a> = dyn FnMut(usize, f64, f64) + 'a;

pub fn train(cfg: &RunConfig) -> Result<(QStar<f64>, RunReport)> {
    train_observed(cfg, &mut |_, _, _| {})
}

pub fn train_observed(cfg: &RunConfig, observer: &mut EpochObserver) -> Result<(QStar<f64>, RunReport)> {
    let started = Instant::now();
    let data = generate_data(cfg)?;
    let mut model = build_model(cfg, &data.codebooks)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.learning_rate, cfg.decay_factor, cfg.decay_period, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((epoch as u64 + 1) << 32));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&FeatureBundle> = chunk.iter().map(|&i| &data.train[i]).collect();
            let out = model.loss_and_grads(&Batch::from_bundles(&refs)?)?;
            if !out.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {} at epoch {epoch}, step {step} (optimizer step {})",
                    out.loss,
                    opt.steps() + 1
                )));
            }
            total += out.loss * chunk.len() as f64;
            opt.step(model.store_mut(), &out.grads, lr);
            apply_stat_updates(model.store_mut(), &out.updates);
        }
        let mean = total / data.train.len() as f64;
        observer(epoch, mean, lr);
        epoch_losses.push(mean);
    }
    let accuracy = evaluate(&model, &data.val, cfg.batch_size.max(64))?;
    let report = RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        num_params: model.num_params(),
        epoch_losses,
        accuracy,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
