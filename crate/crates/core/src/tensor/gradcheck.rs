use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Floor on the relative-error denominator.
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// `(input, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Largest `|analytic - numeric|` among coordinates over tolerance.
    pub failing_abs_error: f64,
}

impl GradCheckReport {
    fn new(
        op_name: &str,
        max_rel_error: f64,
        failing_abs_error: f64,
        tolerance: f64,
        worst: Option<(usize, usize, f64, f64)>,
    ) -> Self {
        GradCheckReport {
            op_name: op_name.to_string(),
            max_rel_error,
            tolerance,
            // NaN compares false, so a non-finite error is a failure.
            passed: max_rel_error <= tolerance,
            worst,
            failing_abs_error,
        }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<20} max_rel_error={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.op_name,
            self.max_rel_error,
            self.tolerance
        )?;
        match self.worst {
            Some((i, k, a, n)) if !self.passed => write!(
                f,
                " worst input {i}[{k}]: analytic {a:.6e} numeric {n:.6e}; failing abs error <= {:.1e}",
                self.failing_abs_error
            ),
            _ => Ok(()),
        }
    }
}

/// Compares reverse-mode gradients of a scalar-valued closure with central
/// differences at step [`FD_STEP`].
///
/// The closure receives one graph node per entry of `inputs` and must return
/// a scalar node; it is evaluated once with gradients and twice per input
/// element without. The per-element error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(op_name: &str, f: F, inputs: &[Tensor<f64>], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check(op_name, f, inputs, tolerance, |_, len| (0..len).collect())
}

/// [`grad_check`] restricted to at most `per_input` coordinates of each
/// input, chosen uniformly without replacement from a stream seeded by `seed`.
pub fn grad_check_sampled<F>(
    op_name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    tolerance: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= per_input {
                (0..t.len()).collect()
            } else {
                let mut idx = rand::seq::index::sample(&mut rng, t.len(), per_input).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    check(op_name, f, inputs, tolerance, |which, _| picks[which].clone())
}

fn check<F, C>(op_name: &str, f: F, inputs: &[Tensor<f64>], tolerance: f64, coords: C) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    C: Fn(usize, usize) -> Vec<usize>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_err = 0.0f64;
    let mut worst = None;
    let mut max_abs = 0.0f64;
    for (which, grad) in analytic.iter().enumerate() {
        for idx in coords(which, grad.len()) {
            let orig = work[which].data()[idx];
            work[which].data_mut()[idx] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[idx];
            if !a.is_finite() || !numeric.is_finite() {
                return Ok(GradCheckReport::new(op_name, f64::INFINITY, f64::INFINITY, tolerance, Some((which, idx, a, numeric))));
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            if err > tolerance {
                max_abs = max_abs.max((a - numeric).abs());
            }
            if err > max_err || worst.is_none() {
                max_err = err;
                worst = Some((which, idx, a, numeric));
            }
        }
    }
    Ok(GradCheckReport::new(op_name, max_err, max_abs, tolerance, worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_passes() {
        let x = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = grad_check(
            "cube",
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let cube = g.mul(sq, v[0])?;
                Ok(g.sum_all(cube))
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // relu evaluated exactly at its kink: analytic 0, numeric 0.5
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let r = grad_check(
            "relu_kink",
            |g, v| {
                let y = g.relu(v[0]);
                Ok(g.sum_all(y))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_is_failure() {
        let x = Tensor::new(&[1], vec![1e308]).unwrap();
        let r = grad_check(
            "overflow",
            |g, v| {
                let y = g.mul(v[0], v[0])?;
                Ok(g.sum_all(y))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error.is_infinite());
    }
}
