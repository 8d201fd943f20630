//! Query-guided multimodal correlation.
//!
//! Self-enhances the frame-level visual, audio and word features, lets the
//! words capture shared semantics from both media streams, and propagates the
//! resulting query-guided context back into each stream:
//!
//! ```text
//! W    = SA(F_w)
//! F_qv = CA(W, SA(F_v))            F_qa = CA(W, SA(F_a))
//! F_qg = F_qv + F_qa + W
//! F_vq = CA(F_v, F_qg)             F_aq = CA(F_a, F_qg)
//! F_vq' = FFN(F_vq + F_v)          F_aq' = FFN(F_aq + F_a)
//! ```
//!
//! All inputs may carry leading batch axes: `F_v, F_a: [..., T, D]`,
//! `F_w: [..., N, D]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{cross_attention, ffn, self_attention, AttentionParams, Ctx, FfnParams, ParamStore};
use crate::tensor::Var;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug)]
pub struct QgmcParams {
    pub sa_v: AttentionParams,
    pub sa_a: AttentionParams,
    pub sa_w: AttentionParams,
    pub ca_capture_v: AttentionParams,
    pub ca_capture_a: AttentionParams,
    pub ca_prop_v: AttentionParams,
    pub ca_prop_a: AttentionParams,
    pub ffn_v: FfnParams,
    pub ffn_a: FfnParams,
}

impl QgmcParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, heads: usize, d_ff: usize) -> Result<Self> {
        let att = |store: &mut ParamStore<S>, n: &str| AttentionParams::new(store, &format!("qgmc.{n}"), dim, heads);
        Ok(QgmcParams {
            sa_v: att(store, "sa_v")?,
            sa_a: att(store, "sa_a")?,
            sa_w: att(store, "sa_w")?,
            ca_capture_v: att(store, "ca_capture_v")?,
            ca_capture_a: att(store, "ca_capture_a")?,
            ca_prop_v: att(store, "ca_prop_v")?,
            ca_prop_a: att(store, "ca_prop_a")?,
            ffn_v: FfnParams::new(store, "qgmc.ffn_v", dim, d_ff, dim)?,
            ffn_a: FfnParams::new(store, "qgmc.ffn_a", dim, d_ff, dim)?,
        })
    }
}

/// Every intermediate of one query-guided correlation pass.
#[derive(Clone, Copy, Debug)]
pub struct QgmcTrace {
    pub words: Var,
    pub f_qv: Var,
    pub f_qa: Var,
    pub f_qg: Var,
    pub f_vq: Var,
    pub f_aq: Var,
    pub visual: Var,
    pub audio: Var,
}

fn check_dims<S: Scalar>(ctx: &Ctx<S>, f_v: Var, f_a: Var, f_w: Var) -> Result<()> {
    let (v, a, w) = (ctx.g.shape(f_v), ctx.g.shape(f_a), ctx.g.shape(f_w));
    if v != a || v.len() < 2 || w.len() != v.len() || w.last() != v.last() || w[..w.len() - 2] != v[..v.len() - 2] {
        return Err(Error::shape("qgmc", v, w));
    }
    Ok(())
}

pub fn qgmc_trace<S: Scalar>(ctx: &mut Ctx<S>, f_v: Var, f_a: Var, f_w: Var, p: &QgmcParams) -> Result<QgmcTrace> {
    check_dims(ctx, f_v, f_a, f_w)?;
    // self-enhancing; SA(F_w) is shared by capture and aggregation
    let words = self_attention(ctx, f_w, &p.sa_w)?;
    let sv = self_attention(ctx, f_v, &p.sa_v)?;
    let sa = self_attention(ctx, f_a, &p.sa_a)?;
    // capturing
    let f_qv = cross_attention(ctx, words, sv, &p.ca_capture_v)?;
    let f_qa = cross_attention(ctx, words, sa, &p.ca_capture_a)?;
    let f_qg = ctx.g.add(f_qv, f_qa)?;
    let f_qg = ctx.g.add(f_qg, words)?;
    // propagating
    let f_vq = cross_attention(ctx, f_v, f_qg, &p.ca_prop_v)?;
    let f_aq = cross_attention(ctx, f_a, f_qg, &p.ca_prop_a)?;
    let rv = ctx.g.add(f_vq, f_v)?;
    let ra = ctx.g.add(f_aq, f_a)?;
    let visual = ffn(ctx, rv, &p.ffn_v)?;
    let audio = ffn(ctx, ra, &p.ffn_a)?;
    Ok(QgmcTrace {
        words,
        f_qv,
        f_qa,
        f_qg,
        f_vq,
        f_aq,
        visual,
        audio,
    })
}

/// Returns the query-guided `(visual, audio)` features, both `[..., T, D]`.
pub fn qgmc_forward<S: Scalar>(ctx: &mut Ctx<S>, f_v: Var, f_a: Var, f_w: Var, p: &QgmcParams) -> Result<(Var, Var)> {
    let t = qgmc_trace(ctx, f_v, f_a, f_w, p)?;
    Ok((t.visual, t.audio))
}

/// Early-stage feature processing strategies that can stand in for the
/// query-guided correlation module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QgmcVariant {
    /// (a) audio and visual streams cross-attend each other; the question is
    /// not consulted until the answer head.
    AvstEarlyFusion,
    /// (b) each stream cross-attends the self-enhanced words independently.
    SeparateCa,
    /// (c) each stream first cross-attends the other stream, then the words.
    SequentialCa,
    /// (d) the full query-guided correlation.
    Qgmc,
}

impl QgmcVariant {
    pub const ALL: [QgmcVariant; 4] = [
        QgmcVariant::AvstEarlyFusion,
        QgmcVariant::SeparateCa,
        QgmcVariant::SequentialCa,
        QgmcVariant::Qgmc,
    ];

    pub fn letter(self) -> char {
        match self {
            QgmcVariant::AvstEarlyFusion => 'a',
            QgmcVariant::SeparateCa => 'b',
            QgmcVariant::SequentialCa => 'c',
            QgmcVariant::Qgmc => 'd',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QgmcVariant::AvstEarlyFusion => "avst_early_fusion",
            QgmcVariant::SeparateCa => "separate_ca",
            QgmcVariant::SequentialCa => "sequential_ca",
            QgmcVariant::Qgmc => "qgmc",
        }
    }
}

impl fmt::Display for QgmcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QgmcVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QgmcVariant::ALL
            .into_iter()
            .find(|v| s == v.name() || s.len() == 1 && s.starts_with(v.letter()))
            .ok_or_else(|| Error::Config(format!("unknown qgmc variant `{s}` (expected a|b|c|d or a full name)")))
    }
}

/// Parameters for whichever early-stage strategy a model uses.
#[derive(Clone, Debug)]
pub enum QgmcStage {
    EarlyFusion {
        ca_v: AttentionParams,
        ca_a: AttentionParams,
        ffn_v: FfnParams,
        ffn_a: FfnParams,
    },
    Separate {
        sa_w: AttentionParams,
        ca_v: AttentionParams,
        ca_a: AttentionParams,
        ffn_v: FfnParams,
        ffn_a: FfnParams,
    },
    Sequential {
        sa_w: AttentionParams,
        ca_v_other: AttentionParams,
        ca_v_words: AttentionParams,
        ca_a_other: AttentionParams,
        ca_a_words: AttentionParams,
        ffn_v: FfnParams,
        ffn_a: FfnParams,
    },
    Full(QgmcParams),
    /// Query guidance removed at the beginning of the pipeline: streams are
    /// only self-enhanced and refined, `FFN(SA(F_x) + F_x)`.
    Unguided {
        sa_v: AttentionParams,
        sa_a: AttentionParams,
        ffn_v: FfnParams,
        ffn_a: FfnParams,
    },
}

impl QgmcStage {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        variant: QgmcVariant,
        dim: usize,
        heads: usize,
        d_ff: usize,
    ) -> Result<Self> {
        let att = |store: &mut ParamStore<S>, n: &str| AttentionParams::new(store, &format!("qgmc.{n}"), dim, heads);
        let ff = |store: &mut ParamStore<S>, n: &str| FfnParams::new(store, &format!("qgmc.{n}"), dim, d_ff, dim);
        Ok(match variant {
            QgmcVariant::AvstEarlyFusion => QgmcStage::EarlyFusion {
                ca_v: att(store, "ca_v")?,
                ca_a: att(store, "ca_a")?,
                ffn_v: ff(store, "ffn_v")?,
                ffn_a: ff(store, "ffn_a")?,
            },
            QgmcVariant::SeparateCa => QgmcStage::Separate {
                sa_w: att(store, "sa_w")?,
                ca_v: att(store, "ca_v")?,
                ca_a: att(store, "ca_a")?,
                ffn_v: ff(store, "ffn_v")?,
                ffn_a: ff(store, "ffn_a")?,
            },
            QgmcVariant::SequentialCa => QgmcStage::Sequential {
                sa_w: att(store, "sa_w")?,
                ca_v_other: att(store, "ca_v_other")?,
                ca_v_words: att(store, "ca_v_words")?,
                ca_a_other: att(store, "ca_a_other")?,
                ca_a_words: att(store, "ca_a_words")?,
                ffn_v: ff(store, "ffn_v")?,
                ffn_a: ff(store, "ffn_a")?,
            },
            QgmcVariant::Qgmc => QgmcStage::Full(QgmcParams::new(store, dim, heads, d_ff)?),
        })
    }

    pub fn unguided<S: Scalar>(store: &mut ParamStore<S>, dim: usize, heads: usize, d_ff: usize) -> Result<Self> {
        Ok(QgmcStage::Unguided {
            sa_v: AttentionParams::new(store, "qgmc.sa_v", dim, heads)?,
            sa_a: AttentionParams::new(store, "qgmc.sa_a", dim, heads)?,
            ffn_v: FfnParams::new(store, "qgmc.ffn_v", dim, d_ff, dim)?,
            ffn_a: FfnParams::new(store, "qgmc.ffn_a", dim, d_ff, dim)?,
        })
    }

    /// Whether the word features are read at all.
    pub fn uses_question(&self) -> bool {
        !matches!(self, QgmcStage::EarlyFusion { .. } | QgmcStage::Unguided { .. })
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<S>, f_v: Var, f_a: Var, f_w: Var) -> Result<(Var, Var)> {
        let refine = |ctx: &mut Ctx<S>, upd: Var, orig: Var, p: &FfnParams| -> Result<Var> {
            let r = ctx.g.add(upd, orig)?;
            ffn(ctx, r, p)
        };
        match self {
            QgmcStage::Full(p) => qgmc_forward(ctx, f_v, f_a, f_w, p),
            QgmcStage::EarlyFusion { ca_v, ca_a, ffn_v, ffn_a } => {
                let v = cross_attention(ctx, f_v, f_a, ca_v)?;
                let a = cross_attention(ctx, f_a, f_v, ca_a)?;
                Ok((refine(ctx, v, f_v, ffn_v)?, refine(ctx, a, f_a, ffn_a)?))
            }
            QgmcStage::Separate {
                sa_w,
                ca_v,
                ca_a,
                ffn_v,
                ffn_a,
            } => {
                check_dims(ctx, f_v, f_a, f_w)?;
                let words = self_attention(ctx, f_w, sa_w)?;
                let v = cross_attention(ctx, f_v, words, ca_v)?;
                let a = cross_attention(ctx, f_a, words, ca_a)?;
                Ok((refine(ctx, v, f_v, ffn_v)?, refine(ctx, a, f_a, ffn_a)?))
            }
            QgmcStage::Sequential {
                sa_w,
                ca_v_other,
                ca_v_words,
                ca_a_other,
                ca_a_words,
                ffn_v,
                ffn_a,
            } => {
                check_dims(ctx, f_v, f_a, f_w)?;
                let words = self_attention(ctx, f_w, sa_w)?;
                let v = cross_attention(ctx, f_v, f_a, ca_v_other)?;
                let v = cross_attention(ctx, v, words, ca_v_words)?;
                let a = cross_attention(ctx, f_a, f_v, ca_a_other)?;
                let a = cross_attention(ctx, a, words, ca_a_words)?;
                Ok((refine(ctx, v, f_v, ffn_v)?, refine(ctx, a, f_a, ffn_a)?))
            }
            QgmcStage::Unguided { sa_v, sa_a, ffn_v, ffn_a } => {
                let v = self_attention(ctx, f_v, sa_v)?;
                let a = self_attention(ctx, f_a, sa_a)?;
                Ok((refine(ctx, v, f_v, ffn_v)?, refine(ctx, a, f_a, ffn_a)?))
            }
        }
    }
}
