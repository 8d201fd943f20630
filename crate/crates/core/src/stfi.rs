//! Spatial-temporal and temporal-frequency interaction.
//!
//! The spatial-temporal path refines patch features against the query-guided
//! audio and fuses them with an audio-visual temporal correlation. The
//! temporal-frequency path weights time-frequency audio bands by a softmax
//! frequency attention, collapses the bands and fuses the result with the
//! query-guided audio through a convolutional block.

use crate::nn::{conv_block, ffn, self_attention, AttentionParams, ConvBlockParams, Ctx, FfnParams, ParamId, ParamStore};
use crate::nn::cross_attention;
use crate::tensor::Var;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug)]
pub struct StiParams {
    pub sa_p: AttentionParams,
    pub ca_sp: AttentionParams,
    /// `2D -> D` fusion FFN.
    pub ffn_fuse: FfnParams,
}

impl StiParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, heads: usize, d_ff: usize) -> Result<Self> {
        Ok(StiParams {
            sa_p: AttentionParams::new(store, "sti.sa_p", dim, heads)?,
            ca_sp: AttentionParams::new(store, "sti.ca_sp", dim, heads)?,
            ffn_fuse: FfnParams::new(store, "sti.ffn_fuse", 2 * dim, d_ff, dim)?,
        })
    }
}

/// Intermediates of the spatial-temporal path.
#[derive(Clone, Copy, Debug)]
pub struct StiTrace {
    /// Patch-level spatial interaction `[..., T, M', D]`, before pooling.
    pub spatial: Var,
    /// Spatial interaction mean-pooled over patches, `[..., T, D]`.
    pub spatial_pooled: Var,
    /// `[..., D, D]` softmax-normalised audio-visual correlation.
    pub correlation: Var,
    /// Temporal interaction `[..., T, D]`.
    pub temporal: Var,
    pub output: Var,
}

/// `F_p: [..., T, M', D]`, `F_aq', F_vq': [..., T, D]`.
pub fn sti_trace<S: Scalar>(ctx: &mut Ctx<S>, f_p: Var, f_aq: Var, f_vq: Var, p: &StiParams) -> Result<StiTrace> {
    let ps = ctx.g.shape(f_p).to_vec();
    let (a_s, v_s) = (ctx.g.shape(f_aq).to_vec(), ctx.g.shape(f_vq).to_vec());
    let r = ps.len();
    if r < 3 || a_s != v_s || a_s.len() != r - 1 || a_s[..r - 3] != ps[..r - 3] || a_s[r - 3] != ps[r - 3] || a_s[r - 2] != ps[r - 1] {
        return Err(Error::shape("sti", &ps, &a_s));
    }
    // spatial: each segment's patches attend over the whole audio sequence
    let patches = self_attention(ctx, f_p, &p.sa_p)?;
    let mut kv_shape = a_s.clone();
    kv_shape.insert(r - 3, 1);
    let audio_kv = ctx.g.reshape(f_aq, &kv_shape)?;
    let spatial = cross_attention(ctx, patches, audio_kv, &p.ca_sp)?;
    let spatial_pooled = ctx.g.mean_axis(spatial, r - 2)?;
    // temporal: F_vq' softmax(F_aq'^T F_vq')
    let at = ctx.g.transpose_last(f_aq)?;
    let scores = ctx.g.matmul(at, f_vq)?;
    let last = ctx.g.shape(scores).len() - 1;
    let correlation = ctx.g.softmax(scores, last)?;
    let temporal = ctx.g.matmul(f_vq, correlation)?;
    let fused = ctx.g.concat(&[spatial_pooled, temporal], r - 2)?;
    let output = ffn(ctx, fused, &p.ffn_fuse)?;
    Ok(StiTrace {
        spatial,
        spatial_pooled,
        correlation,
        temporal,
        output,
    })
}

pub fn sti_forward<S: Scalar>(ctx: &mut Ctx<S>, f_p: Var, f_aq: Var, f_vq: Var, p: &StiParams) -> Result<Var> {
    Ok(sti_trace(ctx, f_p, f_aq, f_vq, p)?.output)
}

#[derive(Clone, Debug)]
pub struct TfiParams {
    /// `D -> 1` question projection; `None` when the question term is dropped.
    pub w1: Option<ParamId>,
    /// `H -> 1`.
    pub w2: ParamId,
    /// `D -> H`.
    pub w3: ParamId,
    pub conv: ConvBlockParams,
    pub dim: usize,
    pub hidden: usize,
}

impl TfiParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, hidden: usize, use_question: bool) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("tfi", "frequency hidden width must be positive"));
        }
        Ok(TfiParams {
            w1: use_question.then(|| store.weight("tfi.w1", &[dim, 1], dim)),
            w2: store.weight("tfi.w2", &[hidden, 1], hidden),
            w3: store.weight("tfi.w3", &[dim, hidden], dim),
            conv: ConvBlockParams::new(store, "tfi.conv", 2 * dim, dim),
            dim,
            hidden,
        })
    }
}

/// Frequency attention over `F_ast: [..., T, F, D]` given `F_w: [..., N, D]`.
///
/// Band scores are `W1 q + W2 relu(W3 f_mean[f])` with `f_mean` the temporal
/// mean of `F_ast` and `q` the mean word embedding. The question term is the
/// same for every band. Returns `a_f: [..., F]` and the reweighted
/// `F_ast': [..., T, F, D]`.
pub fn frequency_attention<S: Scalar>(ctx: &mut Ctx<S>, f_ast: Var, f_w: Var, p: &TfiParams) -> Result<(Var, Var)> {
    let s = ctx.g.shape(f_ast).to_vec();
    let ws = ctx.g.shape(f_w).to_vec();
    let r = s.len();
    if r < 3 || s[r - 1] != p.dim || ws.len() != r - 1 || ws[r - 2] != p.dim || ws[..r - 3] != s[..r - 3] {
        return Err(Error::shape("frequency_attention", &s, &ws));
    }
    let bands = s[r - 2];
    let f_mean = ctx.g.mean_axis(f_ast, r - 3)?;
    let w3 = ctx.p(p.w3);
    let hidden = ctx.g.matmul(f_mean, w3)?;
    let hidden = ctx.g.relu(hidden);
    let w2 = ctx.p(p.w2);
    let band_scores = ctx.g.matmul(hidden, w2)?;
    let mut score_shape = s[..r - 3].to_vec();
    score_shape.push(bands);
    let mut scores = ctx.g.reshape(band_scores, &score_shape)?;
    if let Some(w1) = p.w1 {
        let q = ctx.g.mean_axis(f_w, r - 3)?;
        let mut q_shape = s[..r - 3].to_vec();
        q_shape.extend([1, p.dim]);
        let q = ctx.g.reshape(q, &q_shape)?;
        let w1 = ctx.p(w1);
        let question = ctx.g.matmul(q, w1)?;
        let mut c_shape = s[..r - 3].to_vec();
        c_shape.push(1);
        let question = ctx.g.reshape(question, &c_shape)?;
        scores = ctx.g.add(scores, question)?;
    }
    let last = score_shape.len() - 1;
    let a_f = ctx.g.softmax(scores, last)?;
    let mut bcast = s[..r - 3].to_vec();
    bcast.extend([1, bands, 1]);
    let weights = ctx.g.reshape(a_f, &bcast)?;
    let weighted = ctx.g.mul(f_ast, weights)?;
    Ok((a_f, weighted))
}

/// `F_ast: [..., T, F, D]`, `F_aq': [..., T, D]`, `F_w: [..., N, D]` to `F_ai: [..., T, D]`.
pub fn tfi_forward<S: Scalar>(ctx: &mut Ctx<S>, f_ast: Var, f_aq: Var, f_w: Var, p: &TfiParams) -> Result<Var> {
    let s = ctx.g.shape(f_ast).to_vec();
    let a_s = ctx.g.shape(f_aq).to_vec();
    let r = s.len();
    if r < 3 || a_s.len() != r - 1 || a_s[..r - 2] != s[..r - 2] || a_s[r - 2] != p.dim {
        return Err(Error::shape("tfi", &s, &a_s));
    }
    let (_, weighted) = frequency_attention(ctx, f_ast, f_w, p)?;
    // a_f-weighted combination of bands
    let collapsed = ctx.g.sum_axis(weighted, r - 2)?;
    let joined = ctx.g.concat(&[collapsed, f_aq], r - 2)?;
    let segments = s[r - 3];
    let batch: usize = s[..r - 3].iter().product();
    let seq = ctx.g.reshape(joined, &[batch, segments, 2 * p.dim])?;
    let out = conv_block(ctx, seq, &p.conv)?;
    ctx.g.reshape(out, &a_s)
}
