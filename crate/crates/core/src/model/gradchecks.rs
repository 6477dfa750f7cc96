//! Module-by-module and end-to-end analytic-vs-numeric gradient checks,
//! runnable from the command line. Every check freezes its stochastic inputs
//! (Gumbel noise) so the function under test is deterministic, and the
//! end-to-end check runs the mask in soft mode — a hard-thresholded forward is
//! piecewise constant, so finite differences would see no slope through it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::WindowBatch;
use crate::decomposition::{decompose, gate, GateParams};
use crate::embedding::{Embedded, EmbeddingParams};
use crate::model::{huber_loss, AblationFlags, Forecaster, ForwardMode, ModelConfig};
use crate::spatial::{
    connectivity_scores, draw_mask_noise, masked_spatial_attention, sample_mask, MaskMode,
    MaskParams, SpatialAttentionParams,
};
use crate::temporal::{fourier_attention, frequency_mlp, FourierAttentionParams, FrequencyMlpParams};
use crate::tensor::{gradcheck_scaled, GradCheckReport, Tensor};
use crate::Result;

pub const MODULES: [&str; 7] = [
    "embedding",
    "gate",
    "fourier_attention",
    "frequency_mlp",
    "connectivity_mask",
    "spatial_attention",
    "end_to_end",
];

/// Coordinate-sampling seed shared by all checks.
const CHECK_SEED: u64 = 1729;
/// Multiplier applied to the analytic gradient when a bug is injected, to
/// prove the checks can actually fail.
const INJECT_SCALE: f64 = 2.0;
const EPS: f64 = 1e-5;
const MAX_COORDS: usize = 200;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(data, shape).expect("rand_tensor")
}

fn scale_for(module: &str, inject: Option<&str>) -> f64 {
    if inject == Some(module) {
        INJECT_SCALE
    } else {
        1.0
    }
}

fn check_embedding(inject: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = EmbeddingParams::init(&mut rng, 3, 4, 288, 5, true, true)?;
    let x = rand_tensor(&mut rng, &[2, 3, 5, 3], -1.0, 1.0);
    let tod: Vec<usize> = (0..6).map(|_| rng.gen_range(0..288)).collect();
    let dow: Vec<usize> = (0..6).map(|_| rng.gen_range(0..7)).collect();
    let params = vec![
        ("w1".to_string(), p.w1),
        ("b1".to_string(), p.b1),
        ("w2".to_string(), p.w2),
        ("b2".to_string(), p.b2),
        ("tod_table".to_string(), p.tod_table.unwrap()),
        ("dow_table".to_string(), p.dow_table.unwrap()),
        ("node_table".to_string(), p.node_table.unwrap()),
    ];
    gradcheck_scaled(
        "embedding",
        |ps| {
            let q = EmbeddingParams {
                w1: ps[0].clone(),
                b1: ps[1].clone(),
                w2: ps[2].clone(),
                b2: ps[3].clone(),
                tod_table: Some(ps[4].clone()),
                dow_table: Some(ps[5].clone()),
                node_table: Some(ps[6].clone()),
            };
            let emb = q.embed(&x, &tod, &dow)?;
            let mut loss = emb.x_emb.mul(&emb.x_emb)?.mean_all()?;
            for part in [emb.e_day.unwrap(), emb.e_week.unwrap(), emb.e_node.unwrap()] {
                loss = loss.add(&part.mul(&part)?.mean_all()?)?;
            }
            Ok(loss)
        },
        &params,
        EPS,
        1e-6,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("embedding", inject),
    )
}

fn check_gate(inject: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (b, t, n, d) = (2, 3, 4, 6);
    let emb = Embedded {
        x_emb: rand_tensor(&mut rng, &[b, t, n, d], -1.0, 1.0),
        e_day: Some(rand_tensor(&mut rng, &[b, t, d], -1.0, 1.0)),
        e_week: Some(rand_tensor(&mut rng, &[b, t, d], -1.0, 1.0)),
        e_node: Some(rand_tensor(&mut rng, &[n, d], -1.0, 1.0)),
    };
    let p = GateParams::init(&mut rng, 3, d)?;
    let params = vec![("w".to_string(), p.w), ("b".to_string(), p.b)];
    gradcheck_scaled(
        "gate",
        |ps| {
            let q = GateParams {
                w: ps[0].clone(),
                b: ps[1].clone(),
            };
            let lambda = gate(&emb, &q, b, t, n)?;
            let (main, residual) = decompose(&emb.x_emb, &lambda)?;
            main.mul(&main)?
                .mean_all()?
                .add(&residual.sum_all()?.scale(0.01))
        },
        &params,
        EPS,
        1e-5,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("gate", inject),
    )
}

fn check_fourier_attention(inject: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (b, t, n, d, heads) = (2, 8, 3, 8, 4);
    let x = rand_tensor(&mut rng, &[b, t, n, d], -1.0, 1.0);
    let p = FourierAttentionParams::init(&mut rng, d, heads)?;
    let params = vec![
        ("w_q".to_string(), p.w_q),
        ("w_k".to_string(), p.w_k),
        ("w_v".to_string(), p.w_v),
    ];
    gradcheck_scaled(
        "fourier_attention",
        |ps| {
            let q = FourierAttentionParams {
                w_q: ps[0].clone(),
                w_k: ps[1].clone(),
                w_v: ps[2].clone(),
                heads,
            };
            let out = fourier_attention(&x, &q)?;
            out.mul(&out)?.mean_all()
        },
        &params,
        EPS,
        1e-4,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("fourier_attention", inject),
    )
}

fn check_frequency_mlp(inject: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (b, t, n, d) = (2, 8, 3, 8);
    let x = rand_tensor(&mut rng, &[b, t, n, d], -1.0, 1.0);
    let p = FrequencyMlpParams::init(&mut rng, d, 2)?;
    let mut params = Vec::new();
    for (j, layer) in p.layers.iter().enumerate() {
        params.push((format!("l{j}.w_r"), layer.w_r.clone()));
        params.push((format!("l{j}.w_i"), layer.w_i.clone()));
        params.push((format!("l{j}.b_r"), layer.b_r.clone()));
        params.push((format!("l{j}.b_i"), layer.b_i.clone()));
    }
    gradcheck_scaled(
        "frequency_mlp",
        |ps| {
            let layers = ps
                .chunks_exact(4)
                .map(|c| crate::temporal::FrequencyMlpLayer {
                    w_r: c[0].clone(),
                    w_i: c[1].clone(),
                    b_r: c[2].clone(),
                    b_i: c[3].clone(),
                })
                .collect();
            let out = frequency_mlp(&x, &FrequencyMlpParams { layers })?;
            out.mul(&out)?.mean_all()
        },
        &params,
        EPS,
        1e-4,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("frequency_mlp", inject),
    )
}

fn check_connectivity_mask(inject: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let (b, t, n) = (2, 6, 4);
    // ε at the scale of typical spectral distances so probabilities stay off
    // the clamp rails and gradients are live.
    let p = MaskParams::init(t, 1.0, 0.5)?;
    let flow = rand_tensor(&mut rng, &[b, t, n], -1.0, 1.0);
    let noise = draw_mask_noise(&mut rng, b, n);
    let params = vec![("a".to_string(), p.a.clone())];
    gradcheck_scaled(
        "connectivity_mask",
        |ps| {
            let q = MaskParams {
                a: ps[0].clone(),
                epsilon: p.epsilon,
                tau: p.tau,
            };
            let scores = connectivity_scores(&flow, &q)?;
            let mask = sample_mask(&scores, &q, &MaskMode::Soft(noise.clone()))?;
            mask.binary.mul(&mask.binary)?.mean_all()
        },
        &params,
        EPS,
        1e-4,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("connectivity_mask", inject),
    )
}

fn check_spatial_attention(inject: Option<&str>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let (b, t, n, d, heads) = (2, 4, 5, 8, 4);
    let x = rand_tensor(&mut rng, &[b, t, n, d], -1.0, 1.0);
    // fixed sparse-but-valid mask: diagonal plus a few random links
    let mut m = vec![0.0; b * n * n];
    for s in 0..b {
        for i in 0..n {
            m[(s * n + i) * n + i] = 1.0;
            let j = rng.gen_range(0..n);
            m[(s * n + i) * n + j] = 1.0;
        }
    }
    let mask = Tensor::from_vec(m, &[b, n, n]).unwrap();
    let p = SpatialAttentionParams::init(&mut rng, d, heads)?;
    let params = vec![
        ("w_q".to_string(), p.w_q),
        ("w_k".to_string(), p.w_k),
        ("w_v".to_string(), p.w_v),
    ];
    gradcheck_scaled(
        "spatial_attention",
        |ps| {
            let q = SpatialAttentionParams {
                w_q: ps[0].clone(),
                w_k: ps[1].clone(),
                w_v: ps[2].clone(),
                heads,
            };
            let out = masked_spatial_attention(&x, &mask, &q)?;
            out.mul(&out)?.mean_all()
        },
        &params,
        EPS,
        1e-4,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("spatial_attention", inject),
    )
}

/// Canonical end-to-end configuration: every mechanism enabled, sizes small
/// enough that the full sweep stays well under a minute.
pub fn canonical_config() -> ModelConfig {
    ModelConfig {
        t: 8,
        h: 4,
        n: 5,
        c: 3,
        d: 8,
        l: 1,
        heads: 4,
        tau: 0.5,
        // distance-scale ε keeps mask probabilities off the clamp rails
        epsilon: 1.0,
        seed: 1234,
        ablation: AblationFlags::default(),
        ..ModelConfig::default()
    }
}

fn canonical_batch(rng: &mut ChaCha8Rng, config: &ModelConfig, b: usize) -> WindowBatch {
    let (t, h, n, c) = (config.t, config.h, config.n, config.c);
    WindowBatch {
        b,
        t,
        n,
        h,
        x: (0..b * t * n * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        y_raw: (0..b * h * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        tod: (0..b * t).map(|_| rng.gen_range(0..24)).collect(),
        dow: (0..b * t).map(|_| rng.gen_range(0..7)).collect(),
    }
}

fn check_end_to_end(inject: Option<&str>) -> Result<GradCheckReport> {
    let config = canonical_config();
    let model = Forecaster::new(&config, 24)?;
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let batch = canonical_batch(&mut rng, &config, 2);
    let target = rand_tensor(&mut rng, &[2, config.h, config.n], -1.0, 1.0);
    let noise = draw_mask_noise(&mut rng, 2, config.n);
    let params = model.param_tensors();
    gradcheck_scaled(
        "end_to_end",
        |ps| {
            let m = model.with_params(ps)?;
            let pred = m.forward(
                &batch,
                &ForwardMode::Soft {
                    noise: noise.clone(),
                },
            )?;
            huber_loss(&pred, &target, config.delta)
        },
        &params,
        EPS,
        1e-4,
        MAX_COORDS,
        CHECK_SEED,
        scale_for("end_to_end", inject),
    )
}

/// Run every check; `inject` corrupts the named module's analytic gradient so
/// the failure path is exercisable on demand.
pub fn run_all(inject: Option<&str>) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_embedding(inject)?,
        check_gate(inject)?,
        check_fourier_attention(inject)?,
        check_frequency_mlp(inject)?,
        check_connectivity_mask(inject)?,
        check_spatial_attention(inject)?,
        check_end_to_end(inject)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_modules_pass() {
        let reports = run_all(None).unwrap();
        assert_eq!(reports.len(), MODULES.len());
        for r in &reports {
            assert!(
                r.passed(),
                "{}: max rel err {:.3e} ≥ tol {:.1e}",
                r.name,
                r.max_rel_err,
                r.tol
            );
            assert!(r.coords_checked > 0, "{} checked nothing", r.name);
        }
    }

    #[test]
    fn injected_bug_is_caught_in_the_right_module() {
        let reports = run_all(Some("fourier_attention")).unwrap();
        for r in &reports {
            if r.name == "fourier_attention" {
                assert!(!r.passed(), "injected bug went unnoticed");
            } else {
                assert!(r.passed(), "{} failed collaterally", r.name);
            }
        }
    }
}
