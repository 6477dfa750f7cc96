//! Gated split of the embedded signal into a dominant part and a residual.
//!
//! The gate is a sigmoid linear map over concatenated prior embeddings —
//! time-of-day, day-of-week, node — broadcast to every (sample, step, node)
//! position. It never sees the observed flow: the split is decided entirely
//! by *when* and *where* a value sits, not by the value itself. The two parts
//! reconstruct the input exactly: `main + residual == x_emb`.

use rand_chacha::ChaCha8Rng;

use crate::embedding::Embedded;
use crate::init::{kaiming_param, zero_param};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Gate parameters: weight `(k·D) × D` where `k` is the number of concatenated
/// embedding sources (3 for the full model), bias `D`.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl GateParams {
    /// `sources` = how many D-wide embeddings feed the gate (1..=3).
    pub fn init(rng: &mut ChaCha8Rng, sources: usize, d: usize) -> Result<GateParams> {
        if !(1..=3).contains(&sources) {
            return Err(Error::Config(format!(
                "gate needs between 1 and 3 embedding sources, got {sources}"
            )));
        }
        Ok(GateParams {
            w: kaiming_param(rng, &[sources * d, d], sources * d)?,
            // zero bias starts the split at an even 50/50
            b: zero_param(&[d])?,
        })
    }
}

/// Gate weights Λ ∈ (0,1)^{B×T×N×D} from whichever prior embeddings exist.
///
/// Time embeddings broadcast over nodes; the node embedding broadcasts over
/// samples and steps. Concatenation order is fixed (day, week, node) and must
/// stay stable across checkpoints.
pub fn gate(emb: &Embedded, params: &GateParams, b: usize, t: usize, n: usize) -> Result<Tensor> {
    let mut parts: Vec<Tensor> = Vec::new();
    for e in [&emb.e_day, &emb.e_week] {
        if let Some(e) = e {
            let d = e.shape()[2];
            parts.push(e.reshape(&[b, t, 1, d])?.broadcast_to(&[b, t, n, d])?);
        }
    }
    if let Some(e) = &emb.e_node {
        let d = e.shape()[1];
        parts.push(e.reshape(&[1, 1, n, d])?.broadcast_to(&[b, t, n, d])?);
    }
    if parts.is_empty() {
        return Err(Error::Contract(
            "gate needs at least one prior embedding".into(),
        ));
    }
    let stacked = Tensor::concat(&parts, 3)?;
    let width = stacked.shape()[3];
    if params.w.shape()[0] != width {
        return Err(Error::Dim {
            op: "gate",
            lhs: vec![width],
            rhs: params.w.shape().to_vec(),
        });
    }
    stacked.matmul(&params.w)?.add(&params.b)?.sigmoid()
}

/// Split `x_emb` with gate weights: `(x ⊙ Λ, x ⊙ (1−Λ))`.
pub fn decompose(x_emb: &Tensor, lambda: &Tensor) -> Result<(Tensor, Tensor)> {
    if x_emb.shape() != lambda.shape() {
        return Err(Error::Dim {
            op: "decompose",
            lhs: x_emb.shape().to_vec(),
            rhs: lambda.shape().to_vec(),
        });
    }
    let main = x_emb.mul(lambda)?;
    let residual = x_emb.mul(&lambda.neg().add_scalar(1.0)?)?;
    Ok((main, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingParams;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn embedded(b: usize, t: usize, n: usize, d: usize) -> Embedded {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EmbeddingParams::init(&mut rng, 3, d, 288, n, true, true).unwrap();
        let x = Tensor::from_vec(
            (0..b * t * n * 3).map(|i| (i as f64) * 0.01 - 0.3).collect(),
            &[b, t, n, 3],
        )
        .unwrap();
        let tod: Vec<usize> = (0..b * t).map(|i| (i * 37) % 288).collect();
        let dow: Vec<usize> = (0..b * t).map(|i| i % 7).collect();
        p.embed(&x, &tod, &dow).unwrap()
    }

    #[test]
    fn zero_gate_parameters_split_evenly() {
        let emb = embedded(2, 3, 4, 5);
        let params = GateParams {
            w: Tensor::param(vec![0.0; 15 * 5], &[15, 5]).unwrap(),
            b: Tensor::param(vec![0.0; 5], &[5]).unwrap(),
        };
        let lam = gate(&emb, &params, 2, 3, 4).unwrap();
        assert_eq!(lam.shape(), &[2, 3, 4, 5]);
        for &v in lam.real_data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn saturated_bias_sends_everything_to_the_main_branch() {
        let emb = embedded(1, 2, 3, 4);
        let params = GateParams {
            w: Tensor::param(vec![0.0; 12 * 4], &[12, 4]).unwrap(),
            b: Tensor::param(vec![20.0; 4], &[4]).unwrap(),
        };
        let lam = gate(&emb, &params, 1, 2, 3).unwrap();
        for &v in lam.real_data() {
            assert!(v > 1.0 - 1e-8);
        }
        let (_, res) = decompose(&emb.x_emb, &lam).unwrap();
        for &v in res.real_data() {
            assert!(v.abs() < 1e-7);
        }
    }

    #[test]
    fn gate_is_strictly_inside_the_unit_interval() {
        let emb = embedded(2, 2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = GateParams::init(&mut rng, 3, 4).unwrap();
        let lam = gate(&emb, &params, 2, 2, 3).unwrap();
        for &v in lam.real_data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn gate_ignores_the_observed_flow() {
        // same calendar and node identity, different flow values → same Λ
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = EmbeddingParams::init(&mut rng, 3, 4, 288, 3, true, true).unwrap();
        let gp = GateParams::init(&mut rng, 3, 4).unwrap();
        let tod = vec![10usize, 20];
        let dow = vec![1usize, 2];
        let xa = Tensor::from_vec(vec![0.7; 1 * 2 * 3 * 3], &[1, 2, 3, 3]).unwrap();
        let xb = Tensor::from_vec(vec![-4.2; 1 * 2 * 3 * 3], &[1, 2, 3, 3]).unwrap();
        let la = gate(&p.embed(&xa, &tod, &dow).unwrap(), &gp, 1, 2, 3).unwrap();
        let lb = gate(&p.embed(&xb, &tod, &dow).unwrap(), &gp, 1, 2, 3).unwrap();
        assert_eq!(la.real_data(), lb.real_data());
    }

    #[test]
    fn missing_sources_shrink_the_gate_input() {
        let mut emb = embedded(1, 2, 3, 4);
        emb.e_node = None; // two sources left
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = GateParams::init(&mut rng, 2, 4).unwrap();
        assert!(gate(&emb, &params, 1, 2, 3).is_ok());
        // wrong width rejected
        let wide = GateParams::init(&mut rng, 3, 4).unwrap();
        assert!(gate(&emb, &wide, 1, 2, 3).is_err());
    }

    #[test]
    fn gate_gradients_match_finite_differences() {
        let emb = embedded(1, 2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = GateParams::init(&mut rng, 3, 4).unwrap();
        let named = vec![
            ("gate.w".to_string(), params.w.clone()),
            ("gate.b".to_string(), params.b.clone()),
        ];
        let report = crate::tensor::gradcheck(
            "gate",
            |ps| {
                let q = GateParams {
                    w: ps[0].clone(),
                    b: ps[1].clone(),
                };
                let lam = gate(&emb, &q, 1, 2, 3)?;
                let (main, res) = decompose(&emb.x_emb, &lam)?;
                main.mul(&main)?.sum_all()?.add(&res.sum_all()?)
            },
            &named,
            1e-5,
            1e-5,
            200,
            17,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #[test]
        fn reconstruction_is_exact(vals in proptest::collection::vec(-10.0f64..10.0, 24),
                                   gates in proptest::collection::vec(0.001f64..0.999, 24)) {
            let x = Tensor::from_vec(vals, &[1, 2, 3, 4]).unwrap();
            let lam = Tensor::from_vec(gates, &[1, 2, 3, 4]).unwrap();
            let (main, res) = decompose(&x, &lam).unwrap();
            let back = main.add(&res).unwrap();
            for (a, b) in back.real_data().iter().zip(x.real_data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
