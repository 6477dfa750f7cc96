//! Discrete Fourier transforms along one tensor axis, with gradients.
//!
//! Convention: the forward transform is unnormalized, the inverse carries the
//! full `1/n` factor, so `ifft(fft(x)) == x` and Parseval reads
//! `Σ|x|² = (1/n)·Σ|X|²`. Power-of-two extents use an iterative radix-2
//! kernel; other extents use a naive O(n²) DFT up to 64 and Bluestein's
//! chirp-z algorithm beyond that.
//!
//! Because the DFT matrix `F` is symmetric, the gradient pullbacks are
//! `F^H g = n·ifft(g)` for the forward transform and `(1/n)·fft(g)` for the
//! inverse — both expressed below through one `(inverse, normalized)` helper.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{check_axis, Inner, Storage, Tensor};
use crate::Result;

// ── Kernels on a single line ─────────────────────────────────────────────────

/// Unnormalized transform of one line; `inverse` flips the twiddle sign only.
fn transform_line(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else if n <= 64 {
        naive_dft(buf, inverse);
    } else {
        bluestein(buf, inverse);
    }
}

fn twiddle(k: usize, n: usize, inverse: bool) -> Complex64 {
    let sign = if inverse { 1.0 } else { -1.0 };
    let angle = sign * 2.0 * PI * k as f64 / n as f64;
    Complex64::new(angle.cos(), angle.sin())
}

/// Iterative radix-2 with bit-reversal permutation.
fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let levels = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - levels)) as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let w = twiddle(k, size, inverse);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        size *= 2;
    }
}

/// Direct O(n²) DFT for small non-power-of-two extents.
fn naive_dft(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let input: Vec<Complex64> = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &x) in input.iter().enumerate() {
            acc += x * twiddle((k * t) % n, n, inverse);
        }
        *out = acc;
    }
}

/// Bluestein/chirp-z: expresses an arbitrary-length DFT as a circular
/// convolution of power-of-two size `m ≥ 2n−1`.
fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp(k) = exp(sign·iπ·k²/n); reduce k² mod 2n to keep angles accurate
    let chirp = |k: usize| -> Complex64 {
        let q = (k * k) % (2 * n);
        let angle = sign * PI * q as f64 / n as f64;
        Complex64::new(angle.cos(), angle.sin())
    };
    let m = (2 * n - 1).next_power_of_two();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp(k);
        let c = chirp(k).conj();
        b[k] = c;
        if k > 0 {
            b[m - k] = c;
        }
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * scale * chirp(k);
    }
}

/// Transform every line of `shape` along `axis`. `normalized` multiplies the
/// result by `1/extent` (used by the inverse transform and by gradients).
pub(crate) fn transform_axis(
    data: &[Complex64],
    shape: &[usize],
    axis: usize,
    inverse: bool,
    normalized: bool,
) -> Vec<Complex64> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = data.to_vec();
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    let scale = if normalized { 1.0 / len as f64 } else { 1.0 };
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for k in 0..len {
                line[k] = out[base + k * inner];
            }
            transform_line(&mut line, inverse);
            for k in 0..len {
                out[base + k * inner] = line[k] * scale;
            }
        }
    }
    out
}

// ── Tensor ops ───────────────────────────────────────────────────────────────

fn promote(t: &Tensor) -> Vec<Complex64> {
    match t.storage() {
        Storage::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        Storage::Complex(v) => v.clone(),
    }
}

fn fft_node(t: &Tensor, axis: usize, inverse: bool) -> Result<Tensor> {
    check_axis(axis, t.rank())?;
    let data = promote(t);
    let out = transform_axis(&data, t.shape(), axis, inverse, inverse);
    let parent_real = matches!(t.storage(), Storage::Real(_));
    let grad = move |inner: &Inner, g: &Storage| {
        let gv = g.as_complex();
        // fft pullback: unnormalized inverse; ifft pullback: normalized forward
        let gp = transform_axis(gv, &inner.shape, axis, !inverse, inverse);
        let storage = if parent_real {
            Storage::Real(gp.iter().map(|z| z.re).collect())
        } else {
            Storage::Complex(gp)
        };
        vec![Some(storage)]
    };
    Ok(Tensor::make(
        Storage::Complex(out),
        t.shape().to_vec(),
        vec![t.clone()],
        Box::new(grad),
    ))
}

impl Tensor {
    /// Unnormalized forward DFT along `axis`. Real input is promoted; the
    /// output is always complex.
    pub fn fft(&self, axis: usize) -> Result<Tensor> {
        fft_node(self, axis, false)
    }

    /// Inverse DFT along `axis`, carrying the full `1/extent` factor.
    pub fn ifft(&self, axis: usize) -> Result<Tensor> {
        fft_node(self, axis, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    fn seeded_signal(n: usize, seed: u64) -> Vec<Complex64> {
        // small deterministic LCG keeps these oracles self-contained
        let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(13);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        (0..n).map(|_| c(next(), next())).collect()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut buf = vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        transform_line(&mut buf, false);
        for z in &buf {
            assert!((z - c(1.0, 0.0)).norm() < 1e-12, "expected flat ones, got {z}");
        }
    }

    #[test]
    fn constant_signal_concentrates_at_dc() {
        let n = 12;
        let x = Tensor::from_vec(vec![3.5; n], &[n]).unwrap();
        let spec = x.fft(0).unwrap();
        let s = spec.complex_data();
        assert!((s[0] - c(3.5 * n as f64, 0.0)).norm() < 1e-10);
        for z in &s[1..] {
            assert!(z.norm() < 1e-10, "non-DC bin should vanish, got {z}");
        }
    }

    #[test]
    fn roundtrip_all_lengths_to_64() {
        for n in 1..=64usize {
            let x = seeded_signal(n, n as u64);
            let fwd = transform_axis(&x, &[n], 0, false, false);
            let back = transform_axis(&fwd, &[n], 0, true, true);
            assert!(
                max_abs_diff(&x, &back) < 1e-10,
                "roundtrip failed at length {n}"
            );
        }
    }

    #[test]
    fn bluestein_matches_naive_dft() {
        for &n in &[12usize, 25, 37, 60, 100, 129] {
            let x = seeded_signal(n, 1000 + n as u64);
            let mut direct = x.clone();
            naive_dft(&mut direct, false);
            let mut blue = x.clone();
            bluestein(&mut blue, false);
            assert!(
                max_abs_diff(&direct, &blue) < 1e-9,
                "bluestein disagrees with direct DFT at length {n}"
            );
        }
    }

    #[test]
    fn parseval_energy_identity() {
        for &n in &[8usize, 12, 31, 64] {
            let x = seeded_signal(n, 7 * n as u64);
            let spec = transform_axis(&x, &[n], 0, false, false);
            let time_energy: f64 = x.iter().map(|z| z.norm_sqr()).sum();
            let freq_energy: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            let rel = (time_energy - freq_energy).abs() / time_energy;
            assert!(rel < 1e-9, "Parseval violated at n={n}: rel={rel:e}");
        }
    }

    #[test]
    fn linearity_of_transform() {
        let n = 12;
        let a = seeded_signal(n, 3);
        let b = seeded_signal(n, 4);
        let sum: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = transform_axis(&a, &[n], 0, false, false);
        let fb = transform_axis(&b, &[n], 0, false, false);
        let fsum = transform_axis(&sum, &[n], 0, false, false);
        let combined: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x + y).collect();
        assert!(max_abs_diff(&fsum, &combined) < 1e-10);
    }

    #[test]
    fn axis_generic_transform_matches_per_line() {
        // shape [2, 12, 3], transform along axis 1
        let shape = [2usize, 12, 3];
        let data = seeded_signal(72, 99);
        let out = transform_axis(&data, &shape, 1, false, false);
        for o in 0..2 {
            for i in 0..3 {
                let mut line: Vec<Complex64> =
                    (0..12).map(|k| data[o * 36 + k * 3 + i]).collect();
                naive_dft(&mut line, false);
                for k in 0..12 {
                    assert!((out[o * 36 + k * 3 + i] - line[k]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn invalid_axis_is_reported() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let err = x.fft(1).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "got: {err}");
    }

    #[test]
    fn fft_gradient_matches_finite_difference() {
        // loss = Re(sum(fft(x) ⊙ w)) with complex constant w exercises the
        // full complex pullback; check a few coordinates by central difference.
        let n = 12;
        let x0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let w: Vec<Complex64> = (0..n).map(|i| c(0.3 + i as f64 * 0.11, 0.2 - i as f64 * 0.05)).collect();
        let loss_of = |xv: &[f64]| -> f64 {
            let x = Tensor::param(xv.to_vec(), &[n]).unwrap();
            let wt = Tensor::from_complex_vec(w.clone(), &[n]).unwrap();
            x.fft(0)
                .unwrap()
                .mul(&wt)
                .unwrap()
                .real()
                .unwrap()
                .sum_all()
                .unwrap()
                .item()
        };
        let x = Tensor::param(x0.clone(), &[n]).unwrap();
        let wt = Tensor::from_complex_vec(w.clone(), &[n]).unwrap();
        let loss = x
            .fft(0)
            .unwrap()
            .mul(&wt)
            .unwrap()
            .real()
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = backward(&loss).unwrap();
        let analytic = grads.real(&x).unwrap();
        let eps = 1e-6;
        for i in [0usize, 3, 7, 11] {
            let mut plus = x0.clone();
            plus[i] += eps;
            let mut minus = x0.clone();
            minus[i] -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            assert!(
                (analytic[i] - fd).abs() < 1e-7,
                "coordinate {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }
}
