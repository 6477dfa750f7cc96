//! Dual-branch temporal learning in the frequency domain.
//!
//! The dominant branch runs multi-head attention among the T frequency bins
//! of each node's series: Q/K/V are linear projections of the signal, moved
//! to the frequency domain with an FFT along time; attention scores are the
//! moduli of `Q_F·K_F^H` (softmax over a complex matrix is undefined, so the
//! real moduli serve as affinities), and the re-weighted spectrum returns
//! through an inverse FFT. The residual branch applies a complex-weight
//! linear layer per frequency bin, with ReLU on the real and imaginary parts
//! separately. Branch outputs fuse by addition.
//!
//! Frequencies use the full two-sided spectrum. Because the attention weights
//! are invariant under bin reflection (|S| is conjugate-symmetric for real
//! input), its inverse FFT is real up to float error; the residual branch's
//! ReLUs break that symmetry, so both branches take the real part explicitly.

use rand_chacha::ChaCha8Rng;

use crate::init::{kaiming_param, zero_param};
use crate::tensor::Tensor;
use crate::{Error, Result};

// ── Fourier attention ────────────────────────────────────────────────────────

/// Projections for the frequency-bin attention. No biases: zero input must
/// produce zero output so an all-residual gate silences this branch.
#[derive(Debug, Clone)]
pub struct FourierAttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub heads: usize,
}

impl FourierAttentionParams {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Result<FourierAttentionParams> {
        check_heads(d, heads)?;
        Ok(FourierAttentionParams {
            w_q: kaiming_param(rng, &[d, d], d)?,
            w_k: kaiming_param(rng, &[d, d], d)?,
            w_v: kaiming_param(rng, &[d, d], d)?,
            heads,
        })
    }
}

pub(crate) fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "feature width {d} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// `B×T×N×D` → `B×N×h×T×d_h`: heads split from the feature axis, time kept
/// innermost-but-one so the FFT and attention run per (sample, node, head).
fn split_heads_time(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, t, n, d) = shape4(x)?;
    x.reshape(&[b, t, n, heads, d / heads])?
        .permute(&[0, 2, 3, 1, 4])
}

fn merge_heads_time(x: &Tensor) -> Result<Tensor> {
    // B×N×h×T×d_h → B×T×N×D
    let s = x.shape().to_vec();
    let (b, n, h, t, dh) = (s[0], s[1], s[2], s[3], s[4]);
    x.permute(&[0, 3, 1, 2, 4])?.reshape(&[b, t, n, h * dh])
}

pub(crate) fn shape4(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::Contract(format!(
            "expected a B×T×N×D tensor, got shape {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Attention weights over frequency bins, `B×N×h×T×T`, rows summing to 1.
fn attention_weights(qf: &Tensor, kf: &Tensor, dh: usize) -> Result<Tensor> {
    let scores = qf.matmul(&kf.conj()?.swap_last2()?)?;
    scores
        .modulus()?
        .scale(1.0 / (dh as f64).sqrt())
        .softmax(4)
}

/// The dominant temporal branch. Returns `B×T×N×D`.
pub fn fourier_attention(x: &Tensor, p: &FourierAttentionParams) -> Result<Tensor> {
    Ok(fourier_attention_with_residue(x, p)?.0)
}

/// As [`fourier_attention`], also reporting the largest imaginary residue of
/// the inverse FFT relative to the output scale (a conjugate-symmetry check).
pub(crate) fn fourier_attention_with_residue(
    x: &Tensor,
    p: &FourierAttentionParams,
) -> Result<(Tensor, f64)> {
    let (_, _, _, d) = shape4(x)?;
    check_heads(d, p.heads)?;
    let dh = d / p.heads;

    let qf = split_heads_time(&x.matmul(&p.w_q)?, p.heads)?.fft(3)?;
    let kf = split_heads_time(&x.matmul(&p.w_k)?, p.heads)?.fft(3)?;
    let vf = split_heads_time(&x.matmul(&p.w_v)?, p.heads)?.fft(3)?;

    let weights = attention_weights(&qf, &kf, dh)?;
    let spectrum = weights.to_complex()?.matmul(&vf)?;
    let time = spectrum.ifft(3)?;

    let mut max_im: f64 = 0.0;
    let mut max_re: f64 = 0.0;
    for z in time.complex_data() {
        max_im = max_im.max(z.im.abs());
        max_re = max_re.max(z.re.abs());
    }
    let residue = max_im / max_re.max(1e-300);

    Ok((merge_heads_time(&time.real()?)?, residue))
}

/// Test hook: the row-stochastic weights actually used by the branch.
#[cfg(test)]
pub(crate) fn fourier_attention_weights(
    x: &Tensor,
    p: &FourierAttentionParams,
) -> Result<Tensor> {
    let (_, _, _, d) = shape4(x)?;
    let dh = d / p.heads;
    let qf = split_heads_time(&x.matmul(&p.w_q)?, p.heads)?.fft(3)?;
    let kf = split_heads_time(&x.matmul(&p.w_k)?, p.heads)?.fft(3)?;
    attention_weights(&qf, &kf, dh)
}

// ── Frequency-domain MLP ─────────────────────────────────────────────────────

/// One complex-weight layer: `W = W_r + i·W_i` (both `D×D`), bias `b_r + i·b_i`.
#[derive(Debug, Clone)]
pub struct FrequencyMlpLayer {
    pub w_r: Tensor,
    pub w_i: Tensor,
    pub b_r: Tensor,
    pub b_i: Tensor,
}

/// The residual temporal branch: a stack of complex layers applied per
/// frequency bin (depth 1 by default).
#[derive(Debug, Clone)]
pub struct FrequencyMlpParams {
    pub layers: Vec<FrequencyMlpLayer>,
}

impl FrequencyMlpParams {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, depth: usize) -> Result<FrequencyMlpParams> {
        if depth == 0 {
            return Err(Error::Config("frequency MLP depth must be ≥ 1".into()));
        }
        let layers = (0..depth)
            .map(|_| {
                Ok(FrequencyMlpLayer {
                    w_r: kaiming_param(rng, &[d, d], d)?,
                    w_i: kaiming_param(rng, &[d, d], d)?,
                    b_r: zero_param(&[d])?,
                    b_i: zero_param(&[d])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrequencyMlpParams { layers })
    }

    /// Identity configuration: `W_r = I`, everything else zero. Exactly the
    /// identity map on signals whose spectrum has nonnegative real and
    /// imaginary parts in every bin.
    pub fn identity(d: usize) -> Result<FrequencyMlpParams> {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        Ok(FrequencyMlpParams {
            layers: vec![FrequencyMlpLayer {
                w_r: Tensor::param(eye, &[d, d])?,
                w_i: Tensor::param(vec![0.0; d * d], &[d, d])?,
                b_r: Tensor::param(vec![0.0; d], &[d])?,
                b_i: Tensor::param(vec![0.0; d], &[d])?,
            }],
        })
    }
}

/// Residual branch forward: FFT along time, complex layers per bin, inverse
/// FFT, real part. Per layer, with spectrum `z = re + i·im`:
///
/// ```text
/// re' = relu(re·W_r − im·W_i + b_r)
/// im' = relu(im·W_r + re·W_i + b_i)
/// ```
pub fn frequency_mlp(x: &Tensor, p: &FrequencyMlpParams) -> Result<Tensor> {
    shape4(x)?;
    let xf = x.fft(1)?;
    let mut re = xf.real()?;
    let mut im = xf.imag()?;
    for layer in &p.layers {
        let re_next = re
            .matmul(&layer.w_r)?
            .sub(&im.matmul(&layer.w_i)?)?
            .add(&layer.b_r)?
            .relu()?;
        let im_next = im
            .matmul(&layer.w_r)?
            .add(&re.matmul(&layer.w_i)?)?
            .add(&layer.b_i)?
            .relu()?;
        re = re_next;
        im = im_next;
    }
    Tensor::complex(&re, &im)?.ifft(1)?.real()
}

/// Combine the two branch outputs (elementwise sum).
pub fn fuse(main: &Tensor, residual: &Tensor) -> Result<Tensor> {
    if main.shape() != residual.shape() {
        return Err(Error::Dim {
            op: "fuse",
            lhs: main.shape().to_vec(),
            rhs: residual.shape().to_vec(),
        });
    }
    main.add(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(b: usize, t: usize, n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..b * t * n * d).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(data, &[b, t, n, d]).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_output_in_both_branches() {
        let mut r = rng(1);
        let fa = FourierAttentionParams::init(&mut r, 8, 4).unwrap();
        let fm = FrequencyMlpParams::init(&mut r, 8, 1).unwrap();
        let x = Tensor::zeros(&[2, 4, 3, 8]);
        let a = fourier_attention(&x, &fa).unwrap();
        assert!(a.real_data().iter().all(|&v| v == 0.0));
        let m = frequency_mlp(&x, &fm).unwrap();
        assert!(m.real_data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn single_step_sequence_reduces_to_the_value_projection() {
        // T=1: one frequency bin, softmax over one element is 1
        let mut r = rng(2);
        let p = FourierAttentionParams::init(&mut r, 8, 4).unwrap();
        let x = random_input(2, 1, 3, 8, 3);
        let out = fourier_attention(&x, &p).unwrap();
        let expected = x.matmul(&p.w_v).unwrap();
        for (a, b) in out.real_data().iter().zip(expected.real_data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng(4);
        let p = FourierAttentionParams::init(&mut r, 8, 4).unwrap();
        let x = random_input(2, 6, 3, 8, 5);
        let w = fourier_attention_weights(&x, &p).unwrap();
        let sums = w.sum_axis(4, false).unwrap();
        for &s in sums.real_data() {
            assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
        }
    }

    #[test]
    fn inverse_fft_output_is_real_up_to_float_error() {
        // conjugate symmetry survives modulus-softmax reweighting
        let mut r = rng(6);
        let mut p = FourierAttentionParams::init(&mut r, 8, 4).unwrap();
        p.w_v = crate::init::eye_param(8).unwrap(); // identity value projection
        let x = random_input(2, 8, 3, 8, 7);
        let (_, residue) = fourier_attention_with_residue(&x, &p).unwrap();
        assert!(residue < 1e-8, "imaginary residue {residue}");
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let mut r = rng(8);
        let p = FourierAttentionParams::init(&mut r, 8, 4).unwrap();
        let x = random_input(2, 4, 3, 8, 9);
        let out = fourier_attention(&x, &p).unwrap();
        // swap the two samples
        let len = x.numel() / 2;
        let d = x.real_data();
        let swapped: Vec<f64> = d[len..].iter().chain(&d[..len]).copied().collect();
        let xs = Tensor::from_vec(swapped, x.shape()).unwrap();
        let outs = fourier_attention(&xs, &p).unwrap();
        let (a, b) = (out.real_data(), outs.real_data());
        assert_eq!(&a[..len], &b[len..]);
        assert_eq!(&a[len..], &b[..len]);
    }

    #[test]
    fn indivisible_head_count_is_rejected() {
        let mut r = rng(10);
        assert!(FourierAttentionParams::init(&mut r, 6, 4).is_err());
        assert!(FourierAttentionParams::init(&mut r, 8, 0).is_err());
    }

    #[test]
    fn fourier_attention_gradients_match_finite_differences() {
        let mut r = rng(12);
        let p = FourierAttentionParams::init(&mut r, 8, 4).unwrap();
        let x = random_input(2, 8, 3, 8, 13);
        let weight = random_input(2, 8, 3, 8, 14); // fixed projection weights for the loss
        let named = vec![
            ("w_q".to_string(), p.w_q.clone()),
            ("w_k".to_string(), p.w_k.clone()),
            ("w_v".to_string(), p.w_v.clone()),
        ];
        let report = gradcheck(
            "fourier_attention",
            |ps| {
                let q = FourierAttentionParams {
                    w_q: ps[0].clone(),
                    w_k: ps[1].clone(),
                    w_v: ps[2].clone(),
                    heads: 4,
                };
                fourier_attention(&x, &q)?.mul(&weight)?.sum_all()
            },
            &named,
            1e-5,
            1e-4,
            150,
            15,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn constant_positive_signal_passes_identity_layer_unchanged() {
        // DC bin is real-positive; every other bin is zero
        let p = FrequencyMlpParams::identity(4).unwrap();
        let x = Tensor::from_vec(vec![2.5; 1 * 6 * 2 * 4], &[1, 6, 2, 4]).unwrap();
        let out = frequency_mlp(&x, &p).unwrap();
        for &v in out.real_data() {
            assert!((v - 2.5).abs() < 1e-10, "got {v}");
        }
    }

    #[test]
    fn nonnegative_symmetric_spectrum_is_a_fixed_point_of_identity() {
        // craft x = ifft(spectrum) with re ≥ 0, im = 0, reflection-symmetric —
        // a real signal whose bins all survive the ReLUs untouched
        let t = 6;
        let spec = [3.0, 1.0, 0.5, 0.2, 0.5, 1.0];
        let bins: Vec<_> = spec
            .iter()
            .map(|&re| num_complex::Complex64::new(re, 0.0))
            .collect();
        let xc = Tensor::from_complex_vec(bins, &[1, t, 1, 1]).unwrap().ifft(1).unwrap();
        let x = xc.real().unwrap();
        let p = FrequencyMlpParams::identity(1).unwrap();
        let out = frequency_mlp(&x, &p).unwrap();
        for (a, b) in out.real_data().iter().zip(x.real_data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_weights_zero_the_residual_branch() {
        let p = FrequencyMlpParams {
            layers: vec![FrequencyMlpLayer {
                w_r: Tensor::param(vec![0.0; 16], &[4, 4]).unwrap(),
                w_i: Tensor::param(vec![0.0; 16], &[4, 4]).unwrap(),
                b_r: Tensor::param(vec![0.0; 4], &[4]).unwrap(),
                b_i: Tensor::param(vec![0.0; 4], &[4]).unwrap(),
            }],
        };
        let x = random_input(1, 4, 2, 4, 20);
        let out = frequency_mlp(&x, &p).unwrap();
        for &v in out.real_data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn frequency_mlp_gradients_match_finite_differences() {
        let mut r = rng(22);
        let p = FrequencyMlpParams::init(&mut r, 4, 2).unwrap();
        let x = random_input(2, 6, 2, 4, 23);
        let weight = random_input(2, 6, 2, 4, 24);
        let mut named = Vec::new();
        for (i, layer) in p.layers.iter().enumerate() {
            named.push((format!("l{i}.w_r"), layer.w_r.clone()));
            named.push((format!("l{i}.w_i"), layer.w_i.clone()));
            named.push((format!("l{i}.b_r"), layer.b_r.clone()));
            named.push((format!("l{i}.b_i"), layer.b_i.clone()));
        }
        let report = gradcheck(
            "frequency_mlp",
            |ps| {
                let layers = ps
                    .chunks(4)
                    .map(|c| FrequencyMlpLayer {
                        w_r: c[0].clone(),
                        w_i: c[1].clone(),
                        b_r: c[2].clone(),
                        b_i: c[3].clone(),
                    })
                    .collect();
                frequency_mlp(&x, &FrequencyMlpParams { layers })?
                    .mul(&weight)?
                    .sum_all()
            },
            &named,
            1e-5,
            1e-4,
            100,
            25,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn fuse_is_commutative_addition() {
        let a = random_input(1, 3, 2, 4, 30);
        let b = random_input(1, 3, 2, 4, 31);
        let ab = fuse(&a, &b).unwrap();
        let ba = fuse(&b, &a).unwrap();
        assert_eq!(ab.real_data(), ba.real_data());
        let cancel = fuse(&a, &a.neg()).unwrap();
        assert!(cancel.real_data().iter().all(|&v| v == 0.0));
        let zero = fuse(&a, &Tensor::zeros(&[1, 3, 2, 4])).unwrap();
        assert_eq!(zero.real_data(), a.real_data());
    }
}
