use super::{layer_norm, Ctx, ParamId, ParamStore};
use crate::tensor::Var;
use crate::{Error, Result, Scalar};

/// Projection weights of one multi-head attention unit plus its post-norm.
///
/// All four projections are `dim x dim` and bias-free; `heads` divides `dim`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub dim: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("model dim {dim} is not divisible by {heads} heads"),
            ));
        }
        Ok(AttentionParams {
            w_q: store.weight(format!("{name}.w_q"), &[dim, dim], dim),
            w_k: store.weight(format!("{name}.w_k"), &[dim, dim], dim),
            w_v: store.weight(format!("{name}.w_v"), &[dim, dim], dim),
            w_o: store.weight(format!("{name}.w_o"), &[dim, dim], dim),
            ln_gamma: store.ones(format!("{name}.ln_gamma"), &[dim]),
            ln_beta: store.zeros(format!("{name}.ln_beta"), &[dim]),
            dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// `[..., L, D] -> [..., heads, L, D/heads]`
fn split_heads<S: Scalar>(ctx: &mut Ctx<S>, x: Var, heads: usize) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    let r = shape.len();
    let mut split = shape[..r - 1].to_vec();
    split.extend([heads, shape[r - 1] / heads]);
    let x = ctx.g.reshape(x, &split)?;
    let mut perm: Vec<usize> = (0..r + 1).collect();
    perm.swap(r - 2, r - 1);
    ctx.g.transpose(x, &perm)
}

/// `[..., heads, L, dh] -> [..., L, heads * dh]`
fn merge_heads<S: Scalar>(ctx: &mut Ctx<S>, x: Var) -> Result<Var> {
    let r = ctx.g.shape(x).len();
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 3, r - 2);
    let x = ctx.g.transpose(x, &perm)?;
    let shape = ctx.g.shape(x).to_vec();
    let mut merged = shape[..r - 2].to_vec();
    merged.push(shape[r - 2] * shape[r - 1]);
    ctx.g.reshape(x, &merged)
}

/// Multi-head scaled dot-product attention with residual and post-norm:
/// `LayerNorm(q_in + W_o MHA(q_in W_q, kv_in W_k, kv_in W_v))`.
///
/// `q_in: [..., Lq, D]`, `kv_in: [..., Lk, D]` with broadcastable leading
/// axes. Also returns the attention weights `[..., heads, Lq, Lk]`.
pub fn attention_with_weights<S: Scalar>(
    ctx: &mut Ctx<S>,
    q_in: Var,
    kv_in: Var,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    let (qs, ks) = (ctx.g.shape(q_in).to_vec(), ctx.g.shape(kv_in).to_vec());
    if qs.len() < 2 || ks.len() < 2 || qs[qs.len() - 1] != p.dim || ks[ks.len() - 1] != p.dim {
        return Err(Error::shape("attention", &qs, &ks));
    }
    let (wq, wk, wv, wo) = (ctx.p(p.w_q), ctx.p(p.w_k), ctx.p(p.w_v), ctx.p(p.w_o));
    let q = ctx.g.matmul(q_in, wq)?;
    let k = ctx.g.matmul(kv_in, wk)?;
    let v = ctx.g.matmul(kv_in, wv)?;
    let q = split_heads(ctx, q, p.heads)?;
    let k = split_heads(ctx, k, p.heads)?;
    let v = split_heads(ctx, v, p.heads)?;
    let kt = ctx.g.transpose_last(k)?;
    let scores = ctx.g.matmul(q, kt)?;
    let scores = ctx.g.scale(scores, S::of(1.0 / (p.head_dim() as f64).sqrt()));
    let last = ctx.g.shape(scores).len() - 1;
    let weights = ctx.g.softmax(scores, last)?;
    let mixed = ctx.g.matmul(weights, v)?;
    let merged = merge_heads(ctx, mixed)?;
    let projected = ctx.g.matmul(merged, wo)?;
    let residual = ctx.g.add(q_in, projected)?;
    let out = layer_norm(ctx, residual, p.ln_gamma, p.ln_beta)?;
    Ok((out, weights))
}

pub fn self_attention<S: Scalar>(ctx: &mut Ctx<S>, x: Var, p: &AttentionParams) -> Result<Var> {
    Ok(attention_with_weights(ctx, x, x, p)?.0)
}

/// Queries from `q_in`, keys and values from `kv_in`.
pub fn cross_attention<S: Scalar>(ctx: &mut Ctx<S>, q_in: Var, kv_in: Var, p: &AttentionParams) -> Result<Var> {
    Ok(attention_with_weights(ctx, q_in, kv_in, p)?.0)
}
