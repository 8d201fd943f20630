//! Query context reasoning and answer prediction.
//!
//! Prompt keyword embeddings and the sentence embedding form a short context
//! sequence; after self-attention it queries the visual and audio streams.
//! The pooled results are fused (`tanh` linear layer), gated element-wise by
//! the sentence embedding and classified over the answer vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{cross_attention, self_attention, AttentionParams, Ctx, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

/// The five aspects of a music scene that questions are about.
pub const PROMPT_KEYWORDS: [&str; 5] = [
    "type",
    "performance_duration",
    "location",
    "temporal_sequence",
    "loudness",
];

/// Keyword prompts and their embeddings, one row per keyword.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank<S> {
    pub keywords: Vec<String>,
    /// `[keywords.len(), D]`; `None` for an empty bank.
    pub embeddings: Option<Tensor<S>>,
}

impl<S: Scalar> PromptBank<S> {
    pub fn new(keywords: Vec<String>, embeddings: Tensor<S>) -> Result<Self> {
        let s = embeddings.shape();
        if s.len() != 2 || s[0] != keywords.len() {
            return Err(Error::shape("prompt_bank", &[keywords.len()], s));
        }
        for row in embeddings.data().chunks(s[1]) {
            let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
            if !(norm > S::zero() && norm <= S::of(10.0)) {
                return Err(Error::invalid("prompt_bank", format!("embedding norm {norm} outside (0, 10]")));
            }
        }
        Ok(PromptBank {
            keywords,
            embeddings: Some(embeddings),
        })
    }

    pub fn empty() -> Self {
        PromptBank {
            keywords: Vec::new(),
            embeddings: None,
        }
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// Keeps only the listed keywords, in bank order.
    pub fn subset(&self, keep: &[String]) -> Result<Self> {
        if let Some(bad) = keep.iter().find(|k| !self.keywords.contains(k)) {
            return Err(Error::Config(format!("unknown prompt keyword `{bad}`")));
        }
        let Some(emb) = &self.embeddings else {
            return Ok(Self::empty());
        };
        let d = emb.shape()[1];
        let mut keywords = Vec::new();
        let mut data = Vec::new();
        for (i, k) in self.keywords.iter().enumerate() {
            if keep.contains(k) {
                keywords.push(k.clone());
                data.extend_from_slice(&emb.data()[i * d..(i + 1) * d]);
            }
        }
        if keywords.is_empty() {
            return Ok(Self::empty());
        }
        let n = keywords.len();
        PromptBank::new(keywords, Tensor::new(&[n, d], data)?)
    }
}

/// How the query context is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Sentence embedding only.
    None,
    /// Keyword prompt bank plus the sentence embedding.
    Keywords,
    /// Questions rewritten as declarative statements; not implemented.
    DeclarativeTranslation,
    /// Captions from a video captioner; not implemented.
    Caption,
}

impl PromptMode {
    pub fn name(self) -> &'static str {
        match self {
            PromptMode::None => "none",
            PromptMode::Keywords => "keywords",
            PromptMode::DeclarativeTranslation => "declarative_translation",
            PromptMode::Caption => "caption",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PromptMode::None,
            PromptMode::Keywords,
            PromptMode::DeclarativeTranslation,
            PromptMode::Caption,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown prompt mode `{s}`")))
    }
}

/// Resolves the bank used for `mode` from the full keyword bank.
pub fn qcr_prompt_variant<S: Scalar>(mode: PromptMode, keywords: &PromptBank<S>) -> Result<PromptBank<S>> {
    match mode {
        PromptMode::None => Ok(PromptBank::empty()),
        PromptMode::Keywords => Ok(keywords.clone()),
        PromptMode::DeclarativeTranslation => Err(Error::Unimplemented("declarative_translation prompting")),
        PromptMode::Caption => Err(Error::Unimplemented("caption prompting")),
    }
}

/// Fusion layer and classifier shared by every head configuration.
#[derive(Clone, Debug)]
pub struct AnswerHeadParams {
    /// `2D -> D`, followed by tanh.
    pub w_fc: ParamId,
    pub b_fc: ParamId,
    /// `D -> V`.
    pub w_cls: ParamId,
    pub b_cls: ParamId,
    pub vocab: usize,
}

impl AnswerHeadParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, vocab: usize) -> Self {
        AnswerHeadParams {
            w_fc: store.weight("head.w_fc", &[2 * dim, dim], 2 * dim),
            b_fc: store.zeros("head.b_fc", &[dim]),
            w_cls: store.weight("head.w_cls", &[dim, vocab], dim),
            b_cls: store.zeros("head.b_cls", &[vocab]),
            vocab,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QcrParams {
    pub sa_qc: AttentionParams,
    pub ca_v: AttentionParams,
    pub ca_a: AttentionParams,
    pub head: AnswerHeadParams,
}

impl QcrParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, heads: usize, vocab: usize) -> Result<Self> {
        Ok(QcrParams {
            sa_qc: AttentionParams::new(store, "qcr.sa_qc", dim, heads)?,
            ca_v: AttentionParams::new(store, "qcr.ca_v", dim, heads)?,
            ca_a: AttentionParams::new(store, "qcr.ca_a", dim, heads)?,
            head: AnswerHeadParams::new(store, dim, vocab),
        })
    }
}

/// `logits = W_cls (F_sentence * tanh(W_fc [visual; audio] + b_fc)) + b_cls`
/// for pooled `visual, audio: [..., D]`.
pub fn answer_head<S: Scalar>(
    ctx: &mut Ctx<S>,
    visual: Var,
    audio: Var,
    f_sentence: Var,
    p: &AnswerHeadParams,
) -> Result<Var> {
    let last = ctx.g.shape(visual).len() - 1;
    let joined = ctx.g.concat(&[visual, audio], last)?;
    let (w_fc, b_fc) = (ctx.p(p.w_fc), ctx.p(p.b_fc));
    let fused = ctx.g.linear(joined, w_fc, Some(b_fc))?;
    let f_av = ctx.g.tanh(fused);
    let e = ctx.g.mul(f_sentence, f_av)?;
    let (w_cls, b_cls) = (ctx.p(p.w_cls), ctx.p(p.b_cls));
    ctx.g.linear(e, w_cls, Some(b_cls))
}

/// Intermediates of the reasoning block.
#[derive(Clone, Copy, Debug)]
pub struct QcrTrace {
    /// Query context `[..., P + 1, D]`.
    pub context: Var,
    pub f_fv: Var,
    pub f_fa: Var,
    pub logits: Var,
}

/// `F_vi, F_ai: [..., T, D]`, `F_sentence: [..., D]`; returns logits `[..., V]`.
pub fn qcr_trace<S: Scalar>(
    ctx: &mut Ctx<S>,
    f_vi: Var,
    f_ai: Var,
    f_sentence: Var,
    bank: &PromptBank<S>,
    p: &QcrParams,
) -> Result<QcrTrace> {
    let vs = ctx.g.shape(f_vi).to_vec();
    let ss = ctx.g.shape(f_sentence).to_vec();
    let r = vs.len();
    if r < 2 || ctx.g.shape(f_ai) != vs || ss.len() != r - 1 || ss[..r - 2] != vs[..r - 2] || ss[r - 2] != vs[r - 1] {
        return Err(Error::shape("qcr", &vs, &ss));
    }
    let d = vs[r - 1];
    let mut token_shape = ss.clone();
    token_shape.insert(r - 2, 1);
    let sentence_token = ctx.g.reshape(f_sentence, &token_shape)?;
    let tokens = match &bank.embeddings {
        Some(emb) => {
            if emb.shape()[1] != d {
                return Err(Error::shape("qcr", emb.shape(), &vs));
            }
            let prompt = ctx.g.constant(emb.clone());
            let mut full = vs[..r - 2].to_vec();
            full.extend([bank.len(), d]);
            let prompt = ctx.g.expand(prompt, &full)?;
            ctx.g.concat(&[prompt, sentence_token], r - 2)?
        }
        None => sentence_token,
    };
    let context = self_attention(ctx, tokens, &p.sa_qc)?;
    let f_fv = cross_attention(ctx, context, f_vi, &p.ca_v)?;
    let f_fa = cross_attention(ctx, context, f_ai, &p.ca_a)?;
    let pooled_v = ctx.g.mean_axis(f_fv, r - 2)?;
    let pooled_a = ctx.g.mean_axis(f_fa, r - 2)?;
    let logits = answer_head(ctx, pooled_v, pooled_a, f_sentence, &p.head)?;
    Ok(QcrTrace {
        context,
        f_fv,
        f_fa,
        logits,
    })
}

pub fn qcr_forward<S: Scalar>(
    ctx: &mut Ctx<S>,
    f_vi: Var,
    f_ai: Var,
    f_sentence: Var,
    bank: &PromptBank<S>,
    p: &QcrParams,
) -> Result<Var> {
    Ok(qcr_trace(ctx, f_vi, f_ai, f_sentence, bank, p)?.logits)
}

/// Logits, probabilities and prediction for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerDistribution {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub argmax: usize,
}

impl AnswerDistribution {
    pub fn from_logits<S: Scalar>(logits: &[S]) -> Self {
        let logits: Vec<f64> = logits.iter().map(|x| x.to_f64_lossy()).collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probabilities = exps.iter().map(|e| e / total).collect();
        // first maximal index
        let argmax = logits
            .iter()
            .enumerate()
            .fold(0, |best, (i, &l)| if l > logits[best] { i } else { best });
        AnswerDistribution {
            logits,
            probabilities,
            argmax,
        }
    }

    /// One distribution per row of a `[B, V]` logit tensor.
    pub fn batch<S: Scalar>(logits: &Tensor<S>) -> Vec<Self> {
        let v = *logits.shape().last().expect("logits have a vocabulary axis");
        logits.data().chunks(v).map(Self::from_logits).collect()
    }
}

/// Mean negative log-likelihood of `labels` under `logits: [B, V]`,
/// computed through a log-sum-exp stabilised log-softmax.
pub fn cross_entropy_loss<S: Scalar>(g: &mut Graph<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("cross_entropy", &s, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {bad} out of range for vocabulary of {}", s[1]),
        ));
    }
    let lp = g.log_softmax(logits, 1)?;
    let picked = g.pick(lp, labels)?;
    let mean = g.mean_axis(picked, 0)?;
    Ok(g.scale(mean, -S::one()))
}
