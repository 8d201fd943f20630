use super::{Ctx, Mode, ParamId, ParamStore, StatUpdate, NORM_EPS};
use crate::tensor::{Tensor, Var};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNormParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        BatchNormParams {
            gamma: store.ones(format!("{name}.gamma"), &[channels]),
            beta: store.zeros(format!("{name}.beta"), &[channels]),
            running_mean: store.buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            channels,
        }
    }
}

/// Per-channel batch normalisation of `[..., C]` over every other axis.
///
/// Training mode normalises with the batch statistics and records a
/// running-statistic update on the context (unbiased variance); evaluation
/// mode uses the stored running statistics.
pub fn batch_norm<S: Scalar>(ctx: &mut Ctx<S>, x: Var, p: &BatchNormParams) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.last() != Some(&p.channels) {
        return Err(Error::shape("batch_norm", &shape, &[p.channels]));
    }
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let normalized = match ctx.mode() {
        Mode::Train => {
            let flat = ctx.g.reshape(x, &[rows, p.channels])?;
            let (n, mean, var) = ctx.g.standardize_with_stats(flat, 0, S::of(NORM_EPS))?;
            let correction = if rows > 1 {
                S::of(rows as f64 / (rows - 1) as f64)
            } else {
                S::one()
            };
            ctx.record(StatUpdate {
                mean: p.running_mean,
                var: p.running_var,
                batch_mean: mean,
                batch_var: var.map(|v| v * correction),
            });
            ctx.g.reshape(n, &shape)?
        }
        Mode::Eval => {
            let mean = ctx.store().get(p.running_mean).clone();
            let inv_std = ctx
                .store()
                .get(p.running_var)
                .map(|v| S::one() / (v + S::of(NORM_EPS)).sqrt());
            let mean = ctx.g.constant(mean);
            let inv_std = ctx.g.constant(inv_std);
            let centered = ctx.g.sub(x, mean)?;
            ctx.g.mul(centered, inv_std)?
        }
    };
    let (gamma, beta) = (ctx.p(p.gamma), ctx.p(p.beta));
    let y = ctx.g.mul(normalized, gamma)?;
    ctx.g.add(y, beta)
}

/// Two same-length convolutions (kernel 3, padding 1), each followed by
/// batch norm and ReLU: `2D -> D -> D` channels.
///
/// The convolutions carry no bias since the following batch norm removes it.
#[derive(Clone, Debug)]
pub struct ConvBlockParams {
    pub conv1: ParamId,
    pub bn1: BatchNormParams,
    pub conv2: ParamId,
    pub bn2: BatchNormParams,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvBlockParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, c_in: usize, c_out: usize) -> Self {
        let kernel = 3;
        ConvBlockParams {
            conv1: store.weight(format!("{name}.conv1"), &[kernel, c_in, c_out], kernel * c_in),
            bn1: BatchNormParams::new(store, &format!("{name}.bn1"), c_out),
            conv2: store.weight(format!("{name}.conv2"), &[kernel, c_out, c_out], kernel * c_out),
            bn2: BatchNormParams::new(store, &format!("{name}.bn2"), c_out),
            c_in,
            c_out,
            kernel,
        }
    }
}

/// `x: [B, T, C_in]` treated as a length-`T` sequence with `C_in` channels.
pub fn conv_block<S: Scalar>(ctx: &mut Ctx<S>, x: Var, p: &ConvBlockParams) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != p.c_in {
        return Err(Error::shape("conv_block", &shape, &[p.c_in, p.c_out]));
    }
    let pad = (p.kernel - 1) / 2;
    let w1 = ctx.p(p.conv1);
    let h = ctx.g.conv1d(x, w1, None, pad)?;
    let h = batch_norm(ctx, h, &p.bn1)?;
    let h = ctx.g.relu(h);
    let w2 = ctx.p(p.conv2);
    let h = ctx.g.conv1d(h, w2, None, pad)?;
    let h = batch_norm(ctx, h, &p.bn2)?;
    Ok(ctx.g.relu(h))
}
