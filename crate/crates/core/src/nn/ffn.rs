use super::{layer_norm, Ctx, ParamId, ParamStore};
use crate::tensor::Var;
use crate::{Error, Result, Scalar};

/// Two-layer position-wise feed-forward network with post-norm.
///
/// When input and output widths match the block is residual,
/// `LayerNorm(x + W2 relu(W1 x + b1) + b2)`; a width-changing block (the
/// spatial-temporal fusion FFN) drops the residual term.
#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

impl FfnParams {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Result<Self> {
        if d_hidden < d_out {
            return Err(Error::invalid(
                "ffn",
                format!("hidden width {d_hidden} is narrower than output width {d_out}"),
            ));
        }
        Ok(FfnParams {
            w1: store.weight(format!("{name}.w1"), &[d_in, d_hidden], d_in),
            b1: store.zeros(format!("{name}.b1"), &[d_hidden]),
            w2: store.weight(format!("{name}.w2"), &[d_hidden, d_out], d_hidden),
            b2: store.zeros(format!("{name}.b2"), &[d_out]),
            ln_gamma: store.ones(format!("{name}.ln_gamma"), &[d_out]),
            ln_beta: store.zeros(format!("{name}.ln_beta"), &[d_out]),
            d_in,
            d_hidden,
            d_out,
        })
    }

    pub fn is_residual(&self) -> bool {
        self.d_in == self.d_out
    }
}

pub fn ffn<S: Scalar>(ctx: &mut Ctx<S>, x: Var, p: &FfnParams) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.last() != Some(&p.d_in) {
        return Err(Error::shape("ffn", &shape, &[p.d_in, p.d_out]));
    }
    let (w1, b1, w2, b2) = (ctx.p(p.w1), ctx.p(p.b1), ctx.p(p.w2), ctx.p(p.b2));
    let h = ctx.g.linear(x, w1, Some(b1))?;
    let h = ctx.g.relu(h);
    let y = ctx.g.linear(h, w2, Some(b2))?;
    let y = if p.is_residual() { ctx.g.add(x, y)? } else { y };
    layer_norm(ctx, y, p.ln_gamma, p.ln_beta)
}
