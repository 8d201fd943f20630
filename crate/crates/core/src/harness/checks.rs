//! Gradient checks of every block and of the whole model at toy sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Batch, ModelConfig, QStar};
use crate::nn::{conv_block, cross_attention, ffn, self_attention, AttentionParams, ConvBlockParams, Ctx, FfnParams, Mode, ParamStore};
use crate::qcr::{cross_entropy_loss, qcr_forward, PromptBank, QcrParams, PROMPT_KEYWORDS};
use crate::qgmc::{qgmc_forward, QgmcParams};
use crate::stfi::{frequency_attention, sti_forward, tfi_forward, StiParams, TfiParams};
use crate::synth::{QuestionType, Template};
use crate::tensor::{grad_check_sampled, Graph, GradCheckReport, Tensor, Var};
use crate::Result;

/// Tolerance on the maximum relative gradient error.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Toy sizes: `T=4, M'=2, N=3, F=4, D=8, h=2, V=4`, batch of 2.
#[derive(Clone, Copy, Debug)]
pub struct ToyDims {
    pub batch: usize,
    pub segments: usize,
    pub patches: usize,
    pub words: usize,
    pub bands: usize,
    pub dim: usize,
    pub heads: usize,
    pub vocab: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        ToyDims {
            batch: 2,
            segments: 4,
            patches: 2,
            words: 3,
            bands: 4,
            dim: 8,
            heads: 2,
            vocab: 4,
        }
    }
}

/// Coordinates checked per tensor.
const COORDS_PER_TENSOR: usize = 48;

/// Scalar read-out `sum(out * R)` with a fixed random `R`, so that
/// normalised outputs still carry informative gradients.
fn readout(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(Tensor::randn(g.shape(out), 1.0, &mut rng));
    let prod = g.mul(out, r)?;
    Ok(g.sum_all(prod))
}

fn store_tensors(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.ids().map(|id| store.get(id).clone()).collect()
}

/// Runs `block` on fresh data inputs and every parameter of `store`.
fn check_block<F>(name: &str, seed: u64, data: Vec<Tensor<f64>>, store: &ParamStore<f64>, block: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx<f64>, &[Var]) -> Result<Var>,
{
    let n_data = data.len();
    let mut inputs = data;
    inputs.extend(store_tensors(store));
    grad_check_sampled(
        name,
        |g, vars| {
            let out = {
                let mut ctx = Ctx::with_bound(g, store, &vars[n_data..], Mode::Train);
                block(&mut ctx, &vars[..n_data])?
            };
            readout(g, out, seed ^ 0xfeed)
        },
        &inputs,
        GRADCHECK_TOL,
        COORDS_PER_TENSOR,
        seed,
    )
}

/// Gradient checks of every block and of the model loss for one seed.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let t = ToyDims::default();
    let (b, d, h) = (t.batch, t.dim, t.heads);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = |shape: &[usize]| Tensor::<f64>::randn(shape, 1.0, &mut rng);
    let seq = [b, t.segments, d];
    let words = [b, t.words, d];
    let mut reports = Vec::new();

    let mut store = ParamStore::new(seed);
    let p = AttentionParams::new(&mut store, "sa", d, h)?;
    reports.push(check_block("self_attention", seed, vec![x(&seq)], &store, |c, v| {
        self_attention(c, v[0], &p)
    })?);

    let mut store = ParamStore::new(seed);
    let p = AttentionParams::new(&mut store, "ca", d, h)?;
    reports.push(check_block("cross_attention", seed, vec![x(&seq), x(&words)], &store, |c, v| {
        cross_attention(c, v[0], v[1], &p)
    })?);

    let mut store = ParamStore::new(seed);
    let p = FfnParams::new(&mut store, "ffn", d, 4 * d, d)?;
    reports.push(check_block("ffn", seed, vec![x(&seq)], &store, |c, v| ffn(c, v[0], &p))?);

    let mut store = ParamStore::new(seed);
    let p = ConvBlockParams::new(&mut store, "conv", 2 * d, d);
    reports.push(check_block("conv_block", seed, vec![x(&[b, t.segments, 2 * d])], &store, |c, v| {
        conv_block(c, v[0], &p)
    })?);

    let ast = [b, t.segments, t.bands, d];
    let mut store = ParamStore::new(seed);
    let p = TfiParams::new(&mut store, d, d, true)?;
    reports.push(check_block("frequency_attention", seed, vec![x(&ast), x(&words)], &store, |c, v| {
        let (a_f, weighted) = frequency_attention(c, v[0], v[1], &p)?;
        let flat = c.g.reshape(weighted, &[b, t.segments * t.bands * d])?;
        c.g.concat(&[a_f, flat], 1)
    })?);

    let mut store = ParamStore::new(seed);
    let p = StiParams::new(&mut store, d, h, 4 * d)?;
    let patches = [b, t.segments, t.patches, d];
    reports.push(check_block("sti_forward", seed, vec![x(&patches), x(&seq), x(&seq)], &store, |c, v| {
        sti_forward(c, v[0], v[1], v[2], &p)
    })?);

    let mut store = ParamStore::new(seed);
    let p = TfiParams::new(&mut store, d, d, true)?;
    reports.push(check_block("tfi_forward", seed, vec![x(&ast), x(&seq), x(&words)], &store, |c, v| {
        tfi_forward(c, v[0], v[1], v[2], &p)
    })?);

    let mut store = ParamStore::new(seed);
    let p = QgmcParams::new(&mut store, d, h, 4 * d)?;
    reports.push(check_block("qgmc_forward", seed, vec![x(&seq), x(&seq), x(&words)], &store, |c, v| {
        let (vq, aq) = qgmc_forward(c, v[0], v[1], v[2], &p)?;
        c.g.concat(&[vq, aq], 1)
    })?);

    let mut store = ParamStore::new(seed);
    let p = QcrParams::new(&mut store, d, h, t.vocab)?;
    let bank = PromptBank::new(
        PROMPT_KEYWORDS.iter().map(|k| k.to_string()).collect(),
        x(&[PROMPT_KEYWORDS.len(), d]),
    )?;
    reports.push(check_block("qcr_forward", seed, vec![x(&seq), x(&seq), x(&[b, d])], &store, |c, v| {
        qcr_forward(c, v[0], v[1], v[2], &bank, &p)
    })?);

    reports.push(model_check(seed)?);
    Ok(reports)
}

/// Cross-entropy loss of the full model on a random toy batch, checked
/// against every parameter.
fn model_check(seed: u64) -> Result<GradCheckReport> {
    let t = ToyDims::default();
    let (b, d) = (t.batch, t.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd);
    let mut x = |shape: &[usize]| Tensor::<f64>::randn(shape, 1.0, &mut rng);
    let batch = Batch {
        f_v: x(&[b, t.segments, d]),
        f_p: x(&[b, t.segments, t.patches, d]),
        f_a: x(&[b, t.segments, d]),
        f_ast: x(&[b, t.segments, t.bands, d]),
        f_w: x(&[b, t.words, d]),
        f_sentence: x(&[b, d]),
        labels: (0..b).map(|i| (seed as usize + 3 * i) % t.vocab).collect(),
        tags: vec![QuestionType::new(Template::Existential, false); b],
    };
    let bank = PromptBank::new(PROMPT_KEYWORDS.iter().map(|k| k.to_string()).collect(), x(&[PROMPT_KEYWORDS.len(), d]))?;
    let mc = ModelConfig {
        segments: t.segments,
        dim: d,
        patches: t.patches,
        words: t.words,
        bands: t.bands,
        vocab: t.vocab,
        heads: t.heads,
        freq_hidden: d,
        ffn_hidden: 4 * d,
        ablation: Default::default(),
    };
    let model = QStar::new(&mc, seed, &bank)?;
    let store = model.store();
    grad_check_sampled(
        "qstar_loss",
        |g, vars| {
            let logits = {
                let mut ctx = Ctx::with_bound(g, store, vars, Mode::Train);
                model.forward(&mut ctx, &batch)?
            };
            cross_entropy_loss(g, logits, &batch.labels)
        },
        &store_tensors(store),
        GRADCHECK_TOL,
        COORDS_PER_TENSOR,
        seed,
    )
}
