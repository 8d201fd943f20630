//! Loop-level reference implementations used by the oracle tests. Nothing
//! here touches the tape: every routine works on plain row-major matrices.

#![allow(dead_code)]

pub mod brute_force;
pub mod stages;

use qstar::nn::{AttentionParams, BatchNormParams, ConvBlockParams, FfnParams, ParamId, ParamStore};
use qstar::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl Mat {
    pub fn new(r: usize, c: usize, d: Vec<f64>) -> Mat {
        assert_eq!(r * c, d.len());
        Mat { r, c, d }
    }

    pub fn zeros(r: usize, c: usize) -> Mat {
        Mat::new(r, c, vec![0.0; r * c])
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.d[i * self.c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.c..(i + 1) * self.c]
    }

    pub fn from_param(store: &ParamStore<f64>, id: ParamId) -> Mat {
        let t = store.get(id);
        match t.shape() {
            [r, c] => Mat::new(*r, *c, t.data().to_vec()),
            [c] => Mat::new(1, *c, t.data().to_vec()),
            s => panic!("not a matrix: {s:?}"),
        }
    }

    pub fn vstack(parts: &[Mat]) -> Mat {
        let c = parts[0].c;
        let mut d = Vec::new();
        for p in parts {
            assert_eq!(p.c, c);
            d.extend_from_slice(&p.d);
        }
        Mat::new(d.len() / c, c, d)
    }

    pub fn hstack(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.r, b.r);
        let mut out = Mat::zeros(a.r, a.c + b.c);
        for i in 0..a.r {
            for j in 0..a.c {
                out.set(i, j, a.at(i, j));
            }
            for j in 0..b.c {
                out.set(i, a.c + j, b.at(i, j));
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.c, self.r);
        for i in 0..self.r {
            for j in 0..self.c {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }
}

/// Slice `index` of the leading axis, flattened to rows of the last axis.
pub fn slice(t: &Tensor<f64>, index: usize) -> Mat {
    let s = t.shape();
    let c = s[s.len() - 1];
    let per: usize = s[1..].iter().product();
    Mat::new(per / c, c, t.data()[index * per..(index + 1) * per].to_vec())
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.c, b.r);
    let mut out = Mat::zeros(a.r, b.c);
    for i in 0..a.r {
        for j in 0..b.c {
            let mut s = 0.0;
            for k in 0..a.c {
                s += a.at(i, k) * b.at(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    assert_eq!((a.r, a.c), (b.r, b.c));
    Mat::new(a.r, a.c, a.d.iter().zip(&b.d).map(|(x, y)| x + y).collect())
}

pub fn add_row(a: &Mat, bias: &Mat) -> Mat {
    let mut out = a.clone();
    for i in 0..a.r {
        for j in 0..a.c {
            out.set(i, j, a.at(i, j) + bias.d[j]);
        }
    }
    out
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    Mat::new(a.r, a.c, a.d.iter().map(|&x| f(x)).collect())
}

pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn softmax_rows(a: &Mat) -> Mat {
    let mut d = Vec::with_capacity(a.d.len());
    for i in 0..a.r {
        d.extend(softmax_vec(a.row(i)));
    }
    Mat::new(a.r, a.c, d)
}

pub fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> Mat {
    let mut out = Mat::zeros(x.r, x.c);
    for i in 0..x.r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / x.c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.c as f64;
        for j in 0..x.c {
            out.set(i, j, (row[j] - mean) / (var + EPS).sqrt() * gamma.d[j] + beta.d[j]);
        }
    }
    out
}

/// Training-mode batch norm: statistics over all rows, biased variance.
pub fn batch_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> Mat {
    let mut out = Mat::zeros(x.r, x.c);
    for j in 0..x.c {
        let mean = (0..x.r).map(|i| x.at(i, j)).sum::<f64>() / x.r as f64;
        let var = (0..x.r).map(|i| (x.at(i, j) - mean).powi(2)).sum::<f64>() / x.r as f64;
        for i in 0..x.r {
            out.set(i, j, (x.at(i, j) - mean) / (var + EPS).sqrt() * gamma.d[j] + beta.d[j]);
        }
    }
    out
}

pub fn mean_rows(a: &Mat) -> Vec<f64> {
    (0..a.c).map(|j| (0..a.r).map(|i| a.at(i, j)).sum::<f64>() / a.r as f64).collect()
}

/// `LN(q + W_o concat_h softmax(q W_q^h (kv W_k^h)^T / sqrt(dh)) kv W_v^h)`,
/// one head at a time.
pub fn attention(store: &ParamStore<f64>, p: &AttentionParams, q_in: &Mat, kv: &Mat) -> Mat {
    let (wq, wk, wv, wo) = (
        Mat::from_param(store, p.w_q),
        Mat::from_param(store, p.w_k),
        Mat::from_param(store, p.w_v),
        Mat::from_param(store, p.w_o),
    );
    let q = matmul(q_in, &wq);
    let k = matmul(kv, &wk);
    let v = matmul(kv, &wv);
    let dh = p.dim / p.heads;
    let mut merged = Mat::zeros(q_in.r, p.dim);
    for h in 0..p.heads {
        for i in 0..q.r {
            let scores: Vec<f64> = (0..k.r)
                .map(|j| (0..dh).map(|e| q.at(i, h * dh + e) * k.at(j, h * dh + e)).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax_vec(&scores);
            for e in 0..dh {
                merged.set(i, h * dh + e, (0..k.r).map(|j| w[j] * v.at(j, h * dh + e)).sum());
            }
        }
    }
    let y = add(q_in, &matmul(&merged, &wo));
    layer_norm(&y, &Mat::from_param(store, p.ln_gamma), &Mat::from_param(store, p.ln_beta))
}

pub fn ffn(store: &ParamStore<f64>, p: &FfnParams, x: &Mat) -> Mat {
    let h = map(
        &add_row(&matmul(x, &Mat::from_param(store, p.w1)), &Mat::from_param(store, p.b1)),
        |v| v.max(0.0),
    );
    let y = add_row(&matmul(&h, &Mat::from_param(store, p.w2)), &Mat::from_param(store, p.b2));
    let y = if p.d_in == p.d_out { add(x, &y) } else { y };
    layer_norm(&y, &Mat::from_param(store, p.ln_gamma), &Mat::from_param(store, p.ln_beta))
}

/// Same-length cross-correlation with zero padding; `w: [k, c_in, c_out]`.
pub fn conv1d(x: &Mat, w: &Tensor<f64>) -> Mat {
    let (k, ci, co) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let pad = (k - 1) / 2;
    let mut out = Mat::zeros(x.r, co);
    for t in 0..x.r {
        for o in 0..co {
            let mut s = 0.0;
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= x.r as isize {
                    continue;
                }
                for c in 0..ci {
                    s += x.at(src as usize, c) * w.data()[(j * ci + c) * co + o];
                }
            }
            out.set(t, o, s);
        }
    }
    out
}

fn bn_stage(store: &ParamStore<f64>, p: &BatchNormParams, per_sample: Vec<Mat>) -> Vec<Mat> {
    let rows = per_sample[0].r;
    let joined = Mat::vstack(&per_sample);
    let normed = batch_norm(&joined, &Mat::from_param(store, p.gamma), &Mat::from_param(store, p.beta));
    let normed = map(&normed, |v| v.max(0.0));
    (0..per_sample.len())
        .map(|b| Mat::new(rows, normed.c, normed.d[b * rows * normed.c..(b + 1) * rows * normed.c].to_vec()))
        .collect()
}

/// Training-mode conv block over a batch of `[T, C_in]` sequences.
pub fn conv_block(store: &ParamStore<f64>, p: &ConvBlockParams, xs: &[Mat]) -> Vec<Mat> {
    let h = bn_stage(store, &p.bn1, xs.iter().map(|x| conv1d(x, store.get(p.conv1))).collect());
    bn_stage(store, &p.bn2, h.iter().map(|x| conv1d(x, store.get(p.conv2))).collect())
}

/// Replaces every trainable parameter with `N(0, 0.5^2)` draws, so that
/// norm gains and biases are exercised too.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::randn(&shape, 0.5, &mut rng));
    }
}

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
