//! Model assembly: the three stages wired end to end, with ablation switches.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::nn::{Ctx, Mode, ParamId, ParamStore, StatUpdate};
use crate::qcr::{answer_head, cross_entropy_loss, qcr_forward, qcr_prompt_variant, AnswerHeadParams, PromptBank, PromptMode, QcrParams};
use crate::qgmc::{QgmcStage, QgmcVariant};
use crate::stfi::{sti_forward, tfi_forward, StiParams, TfiParams};
use crate::synth::{FeatureBundle, QuestionType};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Pipeline stage whose query guidance can be removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceStage {
    /// Question-guided correlation of the input streams.
    Beginning,
    /// Question term of the frequency attention.
    Middle,
    /// Keyword prompts in the reasoning block.
    Final,
}

impl GuidanceStage {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceStage::Beginning => "beginning",
            GuidanceStage::Middle => "middle",
            GuidanceStage::Final => "final",
        }
    }
}

impl fmt::Display for GuidanceStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuidanceStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beginning" | "b" | "B" => Ok(GuidanceStage::Beginning),
            "middle" | "m" | "M" => Ok(GuidanceStage::Middle),
            "final" | "f" | "F" => Ok(GuidanceStage::Final),
            _ => Err(Error::Config(format!("unknown guidance stage `{s}`"))),
        }
    }
}

/// Module switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub disable_qgmc: bool,
    pub disable_sti: bool,
    pub disable_tfi: bool,
    pub disable_qcr: bool,
    pub qgmc_variant: QgmcVariant,
    pub prompt_mode: PromptMode,
    /// Keywords kept from the prompt bank.
    pub prompt_keywords: Vec<String>,
    pub query_guidance_removed: Vec<GuidanceStage>,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            disable_qgmc: false,
            disable_sti: false,
            disable_tfi: false,
            disable_qcr: false,
            qgmc_variant: QgmcVariant::Qgmc,
            prompt_mode: PromptMode::Keywords,
            prompt_keywords: crate::qcr::PROMPT_KEYWORDS.iter().map(|k| k.to_string()).collect(),
            query_guidance_removed: Vec::new(),
        }
    }
}

impl Ablation {
    pub fn removes(&self, stage: GuidanceStage) -> bool {
        self.query_guidance_removed.contains(&stage)
    }

    /// Rejects switch combinations that name a stage twice or act on a
    /// module that is disabled.
    pub fn validate(&self) -> Result<()> {
        let conflict = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.disable_qgmc && self.qgmc_variant != QgmcVariant::Qgmc {
            return conflict("qgmc_variant is set but disable_qgmc removes the stage");
        }
        if self.removes(GuidanceStage::Beginning) && (self.disable_qgmc || self.qgmc_variant != QgmcVariant::Qgmc) {
            return conflict("removing beginning guidance needs the full correlation stage");
        }
        if self.removes(GuidanceStage::Middle) && self.disable_tfi {
            return conflict("removing middle guidance needs the temporal-frequency stage");
        }
        if self.removes(GuidanceStage::Final) && self.disable_qcr {
            return conflict("removing final guidance needs the reasoning block");
        }
        let mut stages = self.query_guidance_removed.clone();
        stages.sort_unstable();
        stages.dedup();
        if stages.len() != self.query_guidance_removed.len() {
            return conflict("query_guidance_removed lists a stage twice");
        }
        Ok(())
    }

    /// Prompt mode after guidance removal is applied.
    pub fn effective_prompt_mode(&self) -> PromptMode {
        if self.removes(GuidanceStage::Final) {
            PromptMode::None
        } else {
            self.prompt_mode
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub segments: usize,
    pub dim: usize,
    pub patches: usize,
    pub words: usize,
    pub bands: usize,
    pub vocab: usize,
    pub heads: usize,
    /// Hidden width `H` of the frequency attention.
    pub freq_hidden: usize,
    pub ffn_hidden: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            segments: 8,
            dim: 32,
            patches: 4,
            words: 6,
            bands: 8,
            vocab: 8,
            heads: 4,
            freq_hidden: 32,
            ffn_hidden: 128,
            ablation: Ablation::default(),
        }
    }
}

/// A mini-batch of stacked feature bundles.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub f_v: Tensor<S>,
    pub f_p: Tensor<S>,
    pub f_a: Tensor<S>,
    pub f_ast: Tensor<S>,
    pub f_w: Tensor<S>,
    pub f_sentence: Tensor<S>,
    pub labels: Vec<usize>,
    pub tags: Vec<QuestionType>,
}

fn stack<S: Scalar>(parts: &[&Tensor<f64>]) -> Result<Tensor<S>> {
    let first = parts[0].shape();
    let mut data = Vec::with_capacity(parts.len() * parts[0].len());
    for t in parts {
        if t.shape() != first {
            return Err(Error::shape("batch", first, t.shape()));
        }
        data.extend(t.data().iter().map(|&x| S::of(x)));
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first);
    Tensor::new(&shape, data)
}

impl<S: Scalar> Batch<S> {
    pub fn from_bundles(bundles: &[&FeatureBundle]) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::invalid("batch", "no samples"));
        }
        let col = |f: fn(&FeatureBundle) -> &Tensor<f64>| stack(&bundles.iter().map(|b| f(b)).collect::<Vec<_>>());
        Ok(Batch {
            f_v: col(|b| &b.f_v)?,
            f_p: col(|b| &b.f_p)?,
            f_a: col(|b| &b.f_a)?,
            f_ast: col(|b| &b.f_ast)?,
            f_w: col(|b| &b.f_w)?,
            f_sentence: col(|b| &b.f_sentence)?,
            labels: bundles.iter().map(|b| b.label).collect(),
            tags: bundles.iter().map(|b| b.question_type).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loss, gradients of every trainable parameter the forward pass touched,
/// and pending batch-norm statistic updates.
pub struct StepOutput<S> {
    pub loss: S,
    pub grads: Vec<(ParamId, Tensor<S>)>,
    pub updates: Vec<StatUpdate<S>>,
}

/// The assembled model. A disabled module is replaced by a pass-through:
/// without the correlation stage the raw streams continue, without the
/// spatial-temporal path the visual stream continues, without the
/// temporal-frequency path the audio stream continues, and without the
/// reasoning block both streams are mean-pooled over time into the answer head.
pub struct QStar<S: Scalar> {
    config: ModelConfig,
    store: ParamStore<S>,
    qgmc: Option<QgmcStage>,
    sti: Option<StiParams>,
    tfi: Option<TfiParams>,
    qcr: Option<QcrParams>,
    head: Option<AnswerHeadParams>,
    bank: PromptBank<S>,
    ast_reads: AtomicUsize,
}

impl<S: Scalar> QStar<S> {
    /// `keywords` is the full keyword prompt bank; the configured mode and
    /// keyword subset select from it.
    pub fn new(config: &ModelConfig, seed: u64, keywords: &PromptBank<S>) -> Result<Self> {
        let ab = &config.ablation;
        ab.validate()?;
        let (d, h, ff) = (config.dim, config.heads, config.ffn_hidden);
        if ff < d {
            return Err(Error::Config(format!("ffn_hidden {ff} must be at least dim {d}")));
        }
        if config.freq_hidden == 0 {
            return Err(Error::Config("freq_hidden must be at least 1".into()));
        }
        let mut store = ParamStore::new(seed);
        let qgmc = match (ab.disable_qgmc, ab.removes(GuidanceStage::Beginning)) {
            (true, _) => None,
            (false, true) => Some(QgmcStage::unguided(&mut store, d, h, ff)?),
            (false, false) => Some(QgmcStage::new(&mut store, ab.qgmc_variant, d, h, ff)?),
        };
        let sti = (!ab.disable_sti)
            .then(|| StiParams::new(&mut store, d, h, ff))
            .transpose()?;
        let tfi = (!ab.disable_tfi)
            .then(|| TfiParams::new(&mut store, d, config.freq_hidden, !ab.removes(GuidanceStage::Middle)))
            .transpose()?;
        let (qcr, head, bank) = if ab.disable_qcr {
            (None, Some(AnswerHeadParams::new(&mut store, d, config.vocab)), PromptBank::empty())
        } else {
            let bank = qcr_prompt_variant(ab.effective_prompt_mode(), &keywords.subset(&ab.prompt_keywords)?)?;
            (Some(QcrParams::new(&mut store, d, h, config.vocab)?), None, bank)
        };
        Ok(QStar {
            config: config.clone(),
            store,
            qgmc,
            sti,
            tfi,
            qcr,
            head,
            bank,
            ast_reads: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn prompt_bank(&self) -> &PromptBank<S> {
        &self.bank
    }

    /// Trainable scalar count.
    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Number of forward passes that read the time-frequency features.
    pub fn ast_reads(&self) -> usize {
        self.ast_reads.load(Ordering::Relaxed)
    }

    /// Logits `[B, V]` for a batch.
    pub fn forward(&self, ctx: &mut Ctx<S>, batch: &Batch<S>) -> Result<Var> {
        let c = &self.config;
        let b = batch.len();
        let expect: [(&str, &Tensor<S>, Vec<usize>); 6] = [
            ("f_v", &batch.f_v, vec![b, c.segments, c.dim]),
            ("f_p", &batch.f_p, vec![b, c.segments, c.patches, c.dim]),
            ("f_a", &batch.f_a, vec![b, c.segments, c.dim]),
            ("f_ast", &batch.f_ast, vec![b, c.segments, c.bands, c.dim]),
            ("f_w", &batch.f_w, vec![b, c.words, c.dim]),
            ("f_sentence", &batch.f_sentence, vec![b, c.dim]),
        ];
        for (name, t, want) in &expect {
            if t.shape() != want.as_slice() {
                return Err(Error::shape(name, t.shape(), want));
            }
        }
        let f_v = ctx.g.constant(batch.f_v.clone());
        let f_a = ctx.g.constant(batch.f_a.clone());
        let f_w = ctx.g.constant(batch.f_w.clone());
        let sentence = ctx.g.constant(batch.f_sentence.clone());

        let (vq, aq) = match &self.qgmc {
            Some(stage) => stage.forward(ctx, f_v, f_a, f_w)?,
            None => (f_v, f_a),
        };
        let vi = match &self.sti {
            Some(p) => {
                let f_p = ctx.g.constant(batch.f_p.clone());
                sti_forward(ctx, f_p, aq, vq, p)?
            }
            None => vq,
        };
        let ai = match &self.tfi {
            Some(p) => {
                self.ast_reads.fetch_add(1, Ordering::Relaxed);
                let f_ast = ctx.g.constant(batch.f_ast.clone());
                tfi_forward(ctx, f_ast, aq, f_w, p)?
            }
            None => aq,
        };
        match (&self.qcr, &self.head) {
            (Some(p), _) => qcr_forward(ctx, vi, ai, sentence, &self.bank, p),
            (None, Some(head)) => {
                let pv = ctx.g.mean_axis(vi, 1)?;
                let pa = ctx.g.mean_axis(ai, 1)?;
                answer_head(ctx, pv, pa, sentence, head)
            }
            (None, None) => unreachable!("either the reasoning block or a bare head is built"),
        }
    }

    /// Training-mode loss and gradients for one batch.
    pub fn loss_and_grads(&self, batch: &Batch<S>) -> Result<StepOutput<S>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store, Mode::Train);
        let logits = self.forward(&mut ctx, batch)?;
        let (bound, updates) = ctx.finish();
        let loss = cross_entropy_loss(&mut g, logits, &batch.labels)?;
        g.backward(loss)?;
        let grads = bound
            .into_iter()
            .filter(|&(id, _)| self.store.is_trainable(id))
            .map(|(id, v)| {
                let grad = g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (id, grad)
            })
            .collect();
        Ok(StepOutput {
            loss: g.value(loss).item(),
            grads,
            updates,
        })
    }

    /// Evaluation-mode logits `[B, V]`.
    pub fn logits(&self, batch: &Batch<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store, Mode::Eval);
        let out = self.forward(&mut ctx, batch)?;
        Ok(g.value(out).clone())
    }

    /// Operations recorded by one forward pass.
    pub fn op_count(&self, batch: &Batch<S>, mode: Mode) -> Result<usize> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store, mode);
        self.forward(&mut ctx, batch)?;
        Ok(g.op_count())
    }
}

/// Parameter file magic.
pub const PARAMS_MAGIC: [u8; 4] = *b"QSTP";
const PARAMS_VERSION: u16 = 1;

impl<S: Scalar> QStar<S> {
    /// Writes every parameter and buffer as named double-precision tensors.
    pub fn save_params(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&PARAMS_MAGIC);
        buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for id in self.store.ids() {
            let name = self.store.name(id).as_bytes();
            let t = self.store.get(id);
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(t.rank() as u8);
            for &e in t.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &x in t.data() {
                buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    /// Loads parameters saved from a model built with the same configuration.
    pub fn load_params(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = fs::read(path)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::Format(format!("truncated parameter file at offset {pos}")))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != PARAMS_MAGIC {
            return Err(Error::Format("not a parameter file".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes"));
        if version != PARAMS_VERSION {
            return Err(Error::Format(format!("unsupported parameter file version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        if count != self.store.len() {
            return Err(Error::Format(format!(
                "parameter file holds {count} tensors, model has {}",
                self.store.len()
            )));
        }
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8_lossy(take(len)?).into_owned();
            if name != self.store.name(id) {
                return Err(Error::Format(format!("expected `{}`, found `{name}`", self.store.name(id))));
            }
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
            }
            if shape != self.store.get(id).shape() {
                return Err(Error::shape("load_params", self.store.get(id).shape(), &shape));
            }
            let n: usize = shape.iter().product();
            let data = take(n * 8)?
                .chunks_exact(8)
                .map(|b| S::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect();
            self.store.set(id, Tensor::new(&shape, data)?);
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes in parameter file".into()));
        }
        Ok(())
    }
}
