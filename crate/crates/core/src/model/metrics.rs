//! Evaluation metrics on the original (denormalized) flow scale.

use serde::Serialize;

use crate::data::{Dataset, Split};
use crate::model::{huber_loss, Forecaster, ForwardMode};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct HorizonMetrics {
    /// 1-based step into the future.
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Mean absolute percentage error over entries whose true value clears
    /// the threshold; `None` when no entry does.
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub per_horizon: Vec<HorizonMetrics>,
}

struct Accumulator {
    abs: f64,
    sq: f64,
    count: usize,
    pct: f64,
    pct_count: usize,
}

impl Accumulator {
    fn new() -> Accumulator {
        Accumulator {
            abs: 0.0,
            sq: 0.0,
            count: 0,
            pct: 0.0,
            pct_count: 0,
        }
    }

    fn push(&mut self, pred: f64, truth: f64, mape_threshold: f64) {
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if truth.abs() >= mape_threshold {
            self.pct += (e / truth).abs();
            self.pct_count += 1;
        }
    }

    fn mae(&self) -> f64 {
        self.abs / self.count as f64
    }

    fn rmse(&self) -> f64 {
        (self.sq / self.count as f64).sqrt()
    }

    fn mape(&self) -> Option<f64> {
        (self.pct_count > 0).then(|| self.pct / self.pct_count as f64)
    }
}

/// Aggregate and per-horizon error metrics. Both buffers are `W×H×N`
/// row-major (window, horizon step, node), on the raw flow scale.
pub fn compute_metrics(
    pred: &[f64],
    truth: &[f64],
    h: usize,
    n: usize,
    mape_threshold: f64,
) -> Result<MetricsReport> {
    if pred.len() != truth.len() || pred.is_empty() || pred.len() % (h * n) != 0 {
        return Err(Error::Contract(format!(
            "metric buffers must be equal non-empty multiples of h×n = {}×{}, got {} and {}",
            h,
            n,
            pred.len(),
            truth.len()
        )));
    }
    let mut total = Accumulator::new();
    let mut horizons: Vec<Accumulator> = (0..h).map(|_| Accumulator::new()).collect();
    for (i, (&p, &y)) in pred.iter().zip(truth).enumerate() {
        let step = (i / n) % h;
        total.push(p, y, mape_threshold);
        horizons[step].push(p, y, mape_threshold);
    }
    Ok(MetricsReport {
        mae: total.mae(),
        rmse: total.rmse(),
        mape: total.mape(),
        per_horizon: horizons
            .iter()
            .enumerate()
            .map(|(k, a)| HorizonMetrics {
                horizon: k + 1,
                mae: a.mae(),
                rmse: a.rmse(),
                mape: a.mape(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    /// Mean Huber loss on the normalized scale — directly comparable with
    /// the training log.
    pub huber_normalized: f64,
    pub windows: usize,
}

/// Run the model over one split in eval mode and score the denormalized
/// predictions against raw targets.
pub fn evaluate(model: &Forecaster, dataset: &Dataset, split: Split) -> Result<EvalOutcome> {
    let range = dataset.split_range(split);
    if range.is_empty() {
        return Err(Error::InsufficientData(format!(
            "split {split:?} holds no windows"
        )));
    }
    let idxs: Vec<usize> = range.collect();
    let mut pred = Vec::with_capacity(idxs.len() * dataset.h * dataset.nodes);
    let mut truth = Vec::with_capacity(pred.capacity());
    let mut huber_sum = 0.0;
    for chunk in idxs.chunks(model.config.batch_size) {
        let batch = dataset.batch(chunk);
        let out = model.forward(&batch, &ForwardMode::Eval)?;
        let target = Tensor::from_vec(
            batch.y_normalized(&dataset.normalizer),
            &[batch.b, batch.h, batch.n],
        )?;
        huber_sum += huber_loss(&out, &target, model.config.delta)?.item() * batch.b as f64;
        pred.extend(
            out.real_data()
                .iter()
                .map(|&v| dataset.normalizer.denormalize(v)),
        );
        truth.extend_from_slice(&batch.y_raw);
    }
    let metrics = compute_metrics(
        &pred,
        &truth,
        dataset.h,
        dataset.nodes,
        model.config.mape_threshold,
    )?;
    Ok(EvalOutcome {
        metrics,
        huber_normalized: huber_sum / idxs.len() as f64,
        windows: idxs.len(),
    })
}
