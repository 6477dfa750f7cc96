//! Finite-difference gradient verification.
//!
//! For up to `max_coords` randomly sampled coordinates per parameter tensor,
//! compares the analytic gradient from [`backward`] against a central
//! difference `(f(x+ε) − f(x−ε)) / 2ε`. The relative error of a pair `(a, n)`
//! is `|a − n| / max(|a| + |n|, 1e-6)`; the floor absorbs cancellation noise
//! where both values are near zero. The function under test must be
//! deterministic — freeze any stochastic sampling before checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, Tensor};
use crate::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MAX_COORDS: usize = 200;

/// Outcome of a gradient check over one scalar-valued function.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

pub(crate) fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Check `build`'s gradients with respect to every tensor in `params`.
///
/// `build` receives replacement leaves positionally matched to `params` and
/// must return a real scalar loss. `analytic_scale` deliberately corrupts the
/// analytic gradient and exists so the failure path itself can be tested;
/// production callers pass 1.0 via [`gradcheck`].
pub fn gradcheck_scaled<F>(
    name: &str,
    build: F,
    params: &[(String, Tensor)],
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
    analytic_scale: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    for (pname, t) in params {
        if !t.requires_grad() {
            return Err(Error::Contract(format!(
                "gradcheck parameter '{pname}' does not require gradients"
            )));
        }
    }
    let loss = build(&leaves)?;
    let base = loss.item();
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "gradcheck '{name}': loss is not finite at the base point"
        )));
    }
    let grads = backward(&loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;

    for (pi, (pname, t)) in params.iter().enumerate() {
        let n = t.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        let analytic_buf = grads.real(t);
        let base_data = t.real_data().to_vec();
        for &ci in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = base_data.clone();
                data[ci] += delta;
                let mut replaced = leaves.clone();
                replaced[pi] = Tensor::param(data, t.shape())?;
                let v = build(&replaced)?.item();
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "gradcheck '{name}': non-finite loss perturbing '{pname}' at coordinate {ci}"
                    )));
                }
                Ok(v)
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let analytic = analytic_buf.map_or(0.0, |g| g[ci]) * analytic_scale;
            let re = rel_err(analytic, numeric);
            checked += 1;
            if re > max_rel {
                max_rel = re;
                worst = Some((pname.clone(), ci));
            }
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        worst,
        coords_checked: checked,
        tol,
    })
}

/// Standard entry point: analytic gradients compared as-is.
pub fn gradcheck<F>(
    name: &str,
    build: F,
    params: &[(String, Tensor)],
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    gradcheck_scaled(name, build, params, eps, tol, max_coords, seed, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(name: &str, t: Tensor) -> (String, Tensor) {
        (name.to_string(), t)
    }

    /// loss = mean((x·W − y)²) — linear in W, so central differences are
    /// exact up to rounding and the check must come out far below 1e-8.
    #[test]
    fn linear_model_passes_tightly() {
        let x = Tensor::from_vec(
            vec![0.3, -1.2, 0.7, 0.9, 0.4, -0.5, 1.1, -0.8, 0.2, -0.1, 0.6, 1.4],
            &[4, 3],
        )
        .unwrap();
        let y = Tensor::from_vec(vec![0.5, -0.3, 1.2, 0.1, -0.7, 0.9, 0.2, 0.4], &[4, 2]).unwrap();
        let w0 = Tensor::param(
            vec![0.11, -0.23, 0.31, 0.07, -0.17, 0.29],
            &[3, 2],
        )
        .unwrap();
        let build = |leaves: &[Tensor]| -> crate::Result<Tensor> {
            let pred = x.matmul(&leaves[0])?;
            let r = pred.sub(&y)?;
            r.mul(&r)?.mean_all()
        };
        let report = gradcheck("linear", build, &[named("w", w0)], 1e-5, 1e-8, 200, 0).unwrap();
        assert!(
            report.passed(),
            "linear model gradcheck failed: {:e}",
            report.max_rel_err
        );
    }

    /// A gradient deliberately scaled by 2 must report a relative error of
    /// about |2g − g| / (|2g| + |g|) = 1/3.
    #[test]
    fn broken_gradient_is_detected() {
        let x = Tensor::from_vec(vec![0.4, -0.9, 1.3], &[3]).unwrap();
        let w = Tensor::param(vec![0.2, 0.5, -0.7], &[3]).unwrap();
        let build = |leaves: &[Tensor]| -> crate::Result<Tensor> {
            leaves[0].mul(&x)?.sum_all()
        };
        let report =
            gradcheck_scaled("broken", build, &[named("w", w)], 1e-5, 1e-4, 200, 0, 2.0).unwrap();
        assert!(!report.passed());
        assert!(
            (report.max_rel_err - 1.0 / 3.0).abs() < 1e-6,
            "expected rel error ≈ 0.333, got {}",
            report.max_rel_err
        );
    }

    /// Nonlinear composite through fft, modulus, softmax and matmul.
    #[test]
    fn composite_complex_path_passes() {
        let w = Tensor::param(
            vec![0.31, -0.44, 0.22, 0.15, -0.07, 0.38, -0.29, 0.12, 0.05, -0.33, 0.27, 0.41],
            &[12],
        )
        .unwrap();
        let build = |leaves: &[Tensor]| -> crate::Result<Tensor> {
            let spec = leaves[0].fft(0)?;
            let mag = spec.modulus()?; // length 12
            let att = mag.reshape(&[3, 4])?.softmax(1)?;
            let v = Tensor::from_vec(
                vec![0.6, -0.2, 0.9, 0.3, -0.5, 0.8, 0.1, -0.9, 0.4, 0.7, -0.3, 0.2],
                &[4, 3],
            )?;
            att.matmul(&v)?.mean_all()
        };
        let report = gradcheck("composite", build, &[named("w", w)], 1e-5, 1e-6, 200, 1).unwrap();
        assert!(
            report.passed(),
            "composite gradcheck failed: {:e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let w = Tensor::param(vec![0.0], &[1]).unwrap();
        let build = |leaves: &[Tensor]| -> crate::Result<Tensor> {
            leaves[0].recip()?.sum_all() // 1/0 at the base point
        };
        let err = gradcheck("bad", build, &[named("w", w)], 1e-5, 1e-4, 10, 0).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got: {err}");
    }
}
