//! Stage forwards against loop-level re-implementations. Each function
//! returns the relative error of one random instance.

use super::*;
use qstar::nn::{cross_attention, AttentionParams, Ctx, Mode, ParamStore};
use qstar::qcr::{qcr_forward, PromptBank, QcrParams, PROMPT_KEYWORDS};
use qstar::qgmc::{qgmc_forward, QgmcParams};
use qstar::stfi::{frequency_attention, sti_forward, tfi_forward, StiParams, TfiParams};
use qstar::tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const B: usize = 2;
const T: usize = 5;
const M: usize = 3;
const N: usize = 4;
const F: usize = 3;
const D: usize = 8;
const H: usize = 2;
const HIDDEN: usize = 6;
const V: usize = 5;

fn inputs(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect()
}

fn rows(m: &[Mat]) -> Vec<f64> {
    m.iter().flat_map(|x| x.d.iter().copied()).collect()
}

/// Rows of patch tensor `[B, T, M, D]` for sample `b`, segment `t`.
fn patch_rows(p: &Tensor<f64>, b: usize, t: usize) -> Mat {
    let off = ((b * T) + t) * M * D;
    Mat::new(M, D, p.data()[off..off + M * D].to_vec())
}

pub fn attention_error(seed: u64) -> f64 {
    let mut store = ParamStore::new(seed);
    let p = AttentionParams::new(&mut store, "ca", D, H).unwrap();
    randomize(&mut store, seed);
    let x = inputs(seed, &[&[B, T, D], &[B, N, D]]);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, Mode::Train);
    let (q, kv) = (ctx.g.constant(x[0].clone()), ctx.g.constant(x[1].clone()));
    let out = cross_attention(&mut ctx, q, kv, &p).unwrap();
    let got = ctx.g.value(out).data().to_vec();
    let want: Vec<Mat> = (0..B).map(|b| attention(&store, &p, &slice(&x[0], b), &slice(&x[1], b))).collect();
    rel_err(&got, &rows(&want))
}

fn qgmc_reference(store: &ParamStore<f64>, p: &QgmcParams, v: &Mat, a: &Mat, w: &Mat) -> (Mat, Mat) {
    let words = attention(store, &p.sa_w, w, w);
    let sv = attention(store, &p.sa_v, v, v);
    let sa = attention(store, &p.sa_a, a, a);
    let f_qv = attention(store, &p.ca_capture_v, &words, &sv);
    let f_qa = attention(store, &p.ca_capture_a, &words, &sa);
    let f_qg = add(&add(&f_qv, &f_qa), &words);
    let f_vq = attention(store, &p.ca_prop_v, v, &f_qg);
    let f_aq = attention(store, &p.ca_prop_a, a, &f_qg);
    (ffn(store, &p.ffn_v, &add(&f_vq, v)), ffn(store, &p.ffn_a, &add(&f_aq, a)))
}

pub fn qgmc_error(seed: u64) -> f64 {
    let mut store = ParamStore::new(seed);
    let p = QgmcParams::new(&mut store, D, H, 4 * D).unwrap();
    randomize(&mut store, seed);
    let x = inputs(seed, &[&[B, T, D], &[B, T, D], &[B, N, D]]);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, Mode::Train);
    let vars: Vec<_> = x.iter().map(|t| ctx.g.constant(t.clone())).collect();
    let (vq, aq) = qgmc_forward(&mut ctx, vars[0], vars[1], vars[2], &p).unwrap();
    let want: Vec<(Mat, Mat)> = (0..B)
        .map(|b| qgmc_reference(&store, &p, &slice(&x[0], b), &slice(&x[1], b), &slice(&x[2], b)))
        .collect();
    let wv: Vec<Mat> = want.iter().map(|w| w.0.clone()).collect();
    let wa: Vec<Mat> = want.iter().map(|w| w.1.clone()).collect();
    rel_err(ctx.g.value(vq).data(), &rows(&wv)).max(rel_err(ctx.g.value(aq).data(), &rows(&wa)))
}

pub fn sti_error(seed: u64) -> f64 {
    let mut store = ParamStore::new(seed);
    let p = StiParams::new(&mut store, D, H, 4 * D).unwrap();
    randomize(&mut store, seed);
    let x = inputs(seed, &[&[B, T, M, D], &[B, T, D], &[B, T, D]]);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, Mode::Train);
    let vars: Vec<_> = x.iter().map(|t| ctx.g.constant(t.clone())).collect();
    let out = sti_forward(&mut ctx, vars[0], vars[1], vars[2], &p).unwrap();
    let mut want = Vec::new();
    for b in 0..B {
        let (aq, vq) = (slice(&x[1], b), slice(&x[2], b));
        let mut pooled = Mat::zeros(T, D);
        for t in 0..T {
            let pt = patch_rows(&x[0], b, t);
            let refined = attention(&store, &p.sa_p, &pt, &pt);
            let spatial = attention(&store, &p.ca_sp, &refined, &aq);
            for (j, v) in mean_rows(&spatial).into_iter().enumerate() {
                pooled.set(t, j, v);
            }
        }
        let corr = softmax_rows(&matmul(&aq.transpose(), &vq));
        let temporal = matmul(&vq, &corr);
        want.push(ffn(&store, &p.ffn_fuse, &Mat::hstack(&pooled, &temporal)));
    }
    rel_err(ctx.g.value(out).data(), &rows(&want))
}

/// Per-band scores and weights for one sample: `F_ast` rows are `(t, f)`.
fn band_weights(store: &ParamStore<f64>, p: &TfiParams, ast: &Mat, w: &Mat) -> Vec<f64> {
    let w1 = store.get(p.w1.unwrap()).data().to_vec();
    let w2 = store.get(p.w2).data().to_vec();
    let w3 = Mat::from_param(store, p.w3);
    let q = mean_rows(w);
    let question: f64 = q.iter().zip(&w1).map(|(a, b)| a * b).sum();
    let scores: Vec<f64> = (0..F)
        .map(|f| {
            let mean: Vec<f64> = (0..D)
                .map(|d| (0..T).map(|t| ast.at(t * F + f, d)).sum::<f64>() / T as f64)
                .collect();
            let mut s = question;
            for k in 0..HIDDEN {
                let h: f64 = (0..D).map(|d| mean[d] * w3.at(d, k)).sum();
                s += w2[k] * h.max(0.0);
            }
            s
        })
        .collect();
    softmax_vec(&scores)
}

pub fn frequency_attention_error(seed: u64) -> f64 {
    let mut store = ParamStore::new(seed);
    let p = TfiParams::new(&mut store, D, HIDDEN, true).unwrap();
    randomize(&mut store, seed);
    let x = inputs(seed, &[&[B, T, F, D], &[B, N, D]]);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, Mode::Train);
    let (ast, w) = (ctx.g.constant(x[0].clone()), ctx.g.constant(x[1].clone()));
    let (a_f, weighted) = frequency_attention(&mut ctx, ast, w, &p).unwrap();
    let (mut want_a, mut want_w) = (Vec::new(), Vec::new());
    for b in 0..B {
        let rows_b = slice(&x[0], b);
        let a = band_weights(&store, &p, &rows_b, &slice(&x[1], b));
        for t in 0..T {
            for (f, af) in a.iter().enumerate() {
                want_w.extend(rows_b.row(t * F + f).iter().map(|v| v * af));
            }
        }
        want_a.extend(a);
    }
    rel_err(ctx.g.value(a_f).data(), &want_a).max(rel_err(ctx.g.value(weighted).data(), &want_w))
}

pub fn tfi_error(seed: u64) -> f64 {
    let mut store = ParamStore::new(seed);
    let p = TfiParams::new(&mut store, D, HIDDEN, true).unwrap();
    randomize(&mut store, seed);
    let x = inputs(seed, &[&[B, T, F, D], &[B, T, D], &[B, N, D]]);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, Mode::Train);
    let vars: Vec<_> = x.iter().map(|t| ctx.g.constant(t.clone())).collect();
    let out = tfi_forward(&mut ctx, vars[0], vars[1], vars[2], &p).unwrap();
    let joined: Vec<Mat> = (0..B)
        .map(|b| {
            let rows_b = slice(&x[0], b);
            let a = band_weights(&store, &p, &rows_b, &slice(&x[2], b));
            let mut collapsed = Mat::zeros(T, D);
            for t in 0..T {
                for d in 0..D {
                    collapsed.set(t, d, (0..F).map(|f| a[f] * rows_b.at(t * F + f, d)).sum());
                }
            }
            Mat::hstack(&collapsed, &slice(&x[1], b))
        })
        .collect();
    let want = conv_block(&store, &p.conv, &joined);
    rel_err(ctx.g.value(out).data(), &rows(&want))
}

pub fn qcr_error(seed: u64) -> f64 {
    let mut store = ParamStore::new(seed);
    let p = QcrParams::new(&mut store, D, H, V).unwrap();
    randomize(&mut store, seed);
    let x = inputs(seed, &[&[B, T, D], &[B, T, D], &[B, D], &[PROMPT_KEYWORDS.len(), D]]);
    let bank = PromptBank::new(PROMPT_KEYWORDS.iter().map(|k| k.to_string()).collect(), x[3].clone()).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &store, Mode::Train);
    let vars: Vec<_> = x[..3].iter().map(|t| ctx.g.constant(t.clone())).collect();
    let out = qcr_forward(&mut ctx, vars[0], vars[1], vars[2], &bank, &p).unwrap();
    let prompts = slice(&x[3].reshape(&[1, PROMPT_KEYWORDS.len(), D]).unwrap(), 0);
    let mut want = Vec::new();
    for b in 0..B {
        let sentence = Mat::new(1, D, x[2].data()[b * D..(b + 1) * D].to_vec());
        let tokens = Mat::vstack(&[prompts.clone(), sentence.clone()]);
        let context = attention(&store, &p.sa_qc, &tokens, &tokens);
        let pv = mean_rows(&attention(&store, &p.ca_v, &context, &slice(&x[0], b)));
        let pa = mean_rows(&attention(&store, &p.ca_a, &context, &slice(&x[1], b)));
        let joined = Mat::new(1, 2 * D, [pv, pa].concat());
        let fused = add_row(&matmul(&joined, &Mat::from_param(&store, p.head.w_fc)), &Mat::from_param(&store, p.head.b_fc));
        let e = Mat::new(1, D, fused.d.iter().zip(&sentence.d).map(|(f, s)| f.tanh() * s).collect());
        want.push(add_row(&matmul(&e, &Mat::from_param(&store, p.head.w_cls)), &Mat::from_param(&store, p.head.b_cls)));
    }
    rel_err(ctx.g.value(out).data(), &rows(&want))
}
