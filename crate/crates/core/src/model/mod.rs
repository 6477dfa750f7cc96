//! The full forecaster: embedding → L × (decompose → dual temporal branch →
//! masked spatial attention) → linear output head.

pub mod checkpoint;
pub mod config;
pub mod gradchecks;
pub mod metrics;
pub mod optim;
pub mod train;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowBatch;
use crate::decomposition::{decompose, gate, GateParams};
use crate::embedding::{Embedded, EmbeddingParams};
use crate::init::{kaiming_param, zero_param};
use crate::spatial::{
    connectivity_scores, masked_spatial_attention, sample_mask, MaskMode, MaskParams, SpatialMask,
    SpatialAttentionParams,
};
use crate::temporal::{
    fourier_attention, frequency_mlp, fuse, FourierAttentionParams, FrequencyMlpParams,
};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub use config::{AblationFlags, ModelConfig, ABLATION_NAMES};

// ── RNG streams ──────────────────────────────────────────────────────────────

/// Independent deterministic RNG per purpose, all derived from the run seed.
/// Stream 0 = parameter init, 1 = shuffling, 2 = mask noise.
pub(crate) fn stream_rng(seed: u64, stream: u8) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[16] = stream;
    ChaCha8Rng::from_seed(bytes)
}

// ── Blocks ───────────────────────────────────────────────────────────────────

/// One temporal+spatial block. Which fields are present is decided once by the
/// ablation flags; every block of a model has the same layout but its own
/// parameters (including the gate, which re-reads the shared embeddings).
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub gate: Option<GateParams>,
    pub fourier: Option<FourierAttentionParams>,
    pub freq_mlp: Option<FrequencyMlpParams>,
    pub spatial: Option<SpatialAttentionParams>,
}

impl BlockParams {
    fn apply(&self, emb: &Embedded, cur: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, n) = (cur.shape()[0], cur.shape()[1], cur.shape()[2]);
        let temporal = match (&self.gate, &self.fourier, &self.freq_mlp) {
            (Some(g), Some(fa), Some(fm)) => {
                let lambda = gate(emb, g, b, t, n)?;
                let (main, residual) = decompose(cur, &lambda)?;
                fuse(&fourier_attention(&main, fa)?, &frequency_mlp(&residual, fm)?)?
            }
            (None, Some(fa), None) => fourier_attention(cur, fa)?,
            (None, None, Some(fm)) => frequency_mlp(cur, fm)?,
            _ => {
                return Err(Error::Contract(
                    "block has an inconsistent gate/branch combination".into(),
                ))
            }
        };
        match (&self.spatial, mask) {
            (Some(sp), Some(m)) => masked_spatial_attention(&temporal, m, sp),
            (None, None) => Ok(temporal),
            _ => Err(Error::Contract(
                "spatial parameters and mask presence must agree".into(),
            )),
        }
    }
}

// ── Forward modes ────────────────────────────────────────────────────────────

/// How the connectivity mask behaves during a forward pass.
///
/// `Train` binarizes with a straight-through gradient; `Soft` keeps the
/// relaxed sigmoid in the forward value too (finite differences can only see a
/// slope through the soft surface, so gradient checking uses this mode);
/// `Eval` thresholds probabilities deterministically with no noise.
#[derive(Debug, Clone)]
pub enum ForwardMode {
    Train { noise: Tensor },
    Soft { noise: Tensor },
    Eval,
}

// ── The model ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub steps_per_day: usize,
    pub embedding: EmbeddingParams,
    /// Metric for the learned connectivity mask; absent under `no_spatial`
    /// and `no_mask`.
    pub mask: Option<MaskParams>,
    pub blocks: Vec<BlockParams>,
    /// `(T·D) × H`, shared across nodes.
    pub head_w: Tensor,
    /// `H`.
    pub head_b: Tensor,
}

impl Forecaster {
    pub fn new(config: &ModelConfig, steps_per_day: usize) -> Result<Forecaster> {
        config.validate()?;
        if steps_per_day == 0 {
            return Err(Error::Config("steps_per_day must be positive".into()));
        }
        let ab = &config.ablation;
        let uses_gate = ab.uses_gate();
        let with_time = uses_gate && !ab.no_time_embedding;
        let with_node = uses_gate && !ab.no_node_embedding;
        let gate_sources = 2 * with_time as usize + with_node as usize;

        let mut rng = stream_rng(config.seed, 0);
        let embedding = EmbeddingParams::init(
            &mut rng,
            config.c,
            config.d,
            steps_per_day,
            config.n,
            with_time,
            with_node,
        )?;
        let mask = if ab.no_spatial || ab.no_mask {
            None
        } else {
            Some(MaskParams::init(config.t, config.epsilon, config.tau)?)
        };
        let mut blocks = Vec::with_capacity(config.l);
        for _ in 0..config.l {
            blocks.push(BlockParams {
                gate: uses_gate
                    .then(|| GateParams::init(&mut rng, gate_sources, config.d))
                    .transpose()?,
                fourier: (!ab.mlp_only)
                    .then(|| FourierAttentionParams::init(&mut rng, config.d, config.heads))
                    .transpose()?,
                freq_mlp: (!ab.attention_only)
                    .then(|| FrequencyMlpParams::init(&mut rng, config.d, config.freq_mlp_depth))
                    .transpose()?,
                spatial: (!ab.no_spatial)
                    .then(|| SpatialAttentionParams::init(&mut rng, config.d, config.heads))
                    .transpose()?,
            });
        }
        let in_width = config.t * config.d;
        let head_w = kaiming_param(&mut rng, &[in_width, config.h], in_width)?;
        let head_b = zero_param(&[config.h])?;
        Ok(Forecaster {
            config: config.clone(),
            steps_per_day,
            embedding,
            mask,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Predictions on the normalized scale, `B×H×N`.
    pub fn forward(&self, batch: &WindowBatch, mode: &ForwardMode) -> Result<Tensor> {
        let (b, t, n) = (batch.b, batch.t, batch.n);
        if t != self.config.t || n != self.config.n {
            return Err(Error::Contract(format!(
                "batch is {t} steps × {n} nodes but the model expects {} × {}",
                self.config.t, self.config.n
            )));
        }
        let x = Tensor::from_vec(batch.x.clone(), &[b, t, n, self.config.c])?;
        let emb = self.embedding.embed(&x, &batch.tod, &batch.dow)?;
        let mask = self.mask_for(batch, mode)?;
        let mut cur = emb.x_emb.clone();
        for block in &self.blocks {
            cur = block.apply(&emb, &cur, mask.as_ref())?;
        }
        // Per node, flatten the T×D block history and project to H steps.
        let flat = cur
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, n, t * self.config.d])?;
        flat.matmul(&self.head_w)?.add(&self.head_b)?.permute(&[0, 2, 1])
    }

    /// The mask tensor used by every block of one forward pass (computed
    /// once), or `None` when the variant has no spatial stage.
    fn mask_for(&self, batch: &WindowBatch, mode: &ForwardMode) -> Result<Option<Tensor>> {
        if self.config.ablation.no_spatial {
            return Ok(None);
        }
        if self.config.ablation.no_mask {
            return Ok(Some(Tensor::ones(&[batch.b, batch.n, batch.n])));
        }
        let mask_mode = match mode {
            ForwardMode::Train { noise } => MaskMode::Train(noise.clone()),
            ForwardMode::Soft { noise } => MaskMode::Soft(noise.clone()),
            ForwardMode::Eval => MaskMode::Eval,
        };
        Ok(Some(self.sample_connectivity(batch, &mask_mode)?.binary))
    }

    fn sample_connectivity(&self, batch: &WindowBatch, mode: &MaskMode) -> Result<SpatialMask> {
        let params = self.mask.as_ref().ok_or_else(|| {
            Error::Config("this model variant has no learned connectivity mask".into())
        })?;
        let flow = Tensor::from_vec(batch.flow(), &[batch.b, batch.t, batch.n])?;
        let scores = connectivity_scores(&flow, params)?;
        sample_mask(&scores, params, mode)
    }

    /// Deterministic connectivity for inspection/export: scores, normalized
    /// probabilities, and the thresholded binary mask.
    pub fn connectivity(&self, batch: &WindowBatch) -> Result<SpatialMask> {
        self.sample_connectivity(batch, &MaskMode::Eval)
    }

    // ── Parameter iteration ──────────────────────────────────────────────────
    //
    // `params` and `params_mut` must list the same names in the same order;
    // checkpointing, Adam state, and gradient checking all key off these
    // names. A unit test pins the agreement.

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        let e = &self.embedding;
        out.push(("embed.w1".into(), &e.w1));
        out.push(("embed.b1".into(), &e.b1));
        out.push(("embed.w2".into(), &e.w2));
        out.push(("embed.b2".into(), &e.b2));
        if let Some(t) = &e.tod_table {
            out.push(("embed.tod_table".into(), t));
        }
        if let Some(t) = &e.dow_table {
            out.push(("embed.dow_table".into(), t));
        }
        if let Some(t) = &e.node_table {
            out.push(("embed.node_table".into(), t));
        }
        if let Some(m) = &self.mask {
            out.push(("mask.a".into(), &m.a));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(g) = &block.gate {
                out.push((format!("block{i}.gate.w"), &g.w));
                out.push((format!("block{i}.gate.b"), &g.b));
            }
            if let Some(f) = &block.fourier {
                out.push((format!("block{i}.fourier.w_q"), &f.w_q));
                out.push((format!("block{i}.fourier.w_k"), &f.w_k));
                out.push((format!("block{i}.fourier.w_v"), &f.w_v));
            }
            if let Some(f) = &block.freq_mlp {
                for (j, layer) in f.layers.iter().enumerate() {
                    out.push((format!("block{i}.fmlp.l{j}.w_r"), &layer.w_r));
                    out.push((format!("block{i}.fmlp.l{j}.w_i"), &layer.w_i));
                    out.push((format!("block{i}.fmlp.l{j}.b_r"), &layer.b_r));
                    out.push((format!("block{i}.fmlp.l{j}.b_i"), &layer.b_i));
                }
            }
            if let Some(s) = &block.spatial {
                out.push((format!("block{i}.spatial.w_q"), &s.w_q));
                out.push((format!("block{i}.spatial.w_k"), &s.w_k));
                out.push((format!("block{i}.spatial.w_v"), &s.w_v));
            }
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        let e = &mut self.embedding;
        out.push(("embed.w1".into(), &mut e.w1));
        out.push(("embed.b1".into(), &mut e.b1));
        out.push(("embed.w2".into(), &mut e.w2));
        out.push(("embed.b2".into(), &mut e.b2));
        if let Some(t) = &mut e.tod_table {
            out.push(("embed.tod_table".into(), t));
        }
        if let Some(t) = &mut e.dow_table {
            out.push(("embed.dow_table".into(), t));
        }
        if let Some(t) = &mut e.node_table {
            out.push(("embed.node_table".into(), t));
        }
        if let Some(m) = &mut self.mask {
            out.push(("mask.a".into(), &mut m.a));
        }
        for (i, block) in self.blocks.iter_mut().enumerate() {
            if let Some(g) = &mut block.gate {
                out.push((format!("block{i}.gate.w"), &mut g.w));
                out.push((format!("block{i}.gate.b"), &mut g.b));
            }
            if let Some(f) = &mut block.fourier {
                out.push((format!("block{i}.fourier.w_q"), &mut f.w_q));
                out.push((format!("block{i}.fourier.w_k"), &mut f.w_k));
                out.push((format!("block{i}.fourier.w_v"), &mut f.w_v));
            }
            if let Some(f) = &mut block.freq_mlp {
                for (j, layer) in f.layers.iter_mut().enumerate() {
                    out.push((format!("block{i}.fmlp.l{j}.w_r"), &mut layer.w_r));
                    out.push((format!("block{i}.fmlp.l{j}.w_i"), &mut layer.w_i));
                    out.push((format!("block{i}.fmlp.l{j}.b_r"), &mut layer.b_r));
                    out.push((format!("block{i}.fmlp.l{j}.b_i"), &mut layer.b_i));
                }
            }
            if let Some(s) = &mut block.spatial {
                out.push((format!("block{i}.spatial.w_q"), &mut s.w_q));
                out.push((format!("block{i}.spatial.w_k"), &mut s.w_k));
                out.push((format!("block{i}.spatial.w_v"), &mut s.w_v));
            }
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Owned copies of all parameters, in iteration order.
    pub fn param_tensors(&self) -> Vec<(String, Tensor)> {
        self.params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// A copy of the model with every parameter replaced, in iteration order.
    pub fn with_params(&self, ordered: &[Tensor]) -> Result<Forecaster> {
        let mut copy = self.clone();
        let mut slots = copy.params_mut();
        if slots.len() != ordered.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                ordered.len()
            )));
        }
        for ((name, slot), new) in slots.iter_mut().zip(ordered) {
            if slot.shape() != new.shape() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, replacement has {:?}",
                    slot.shape(),
                    new.shape()
                )));
            }
            **slot = new.clone();
        }
        drop(slots);
        Ok(copy)
    }
}

// ── Loss ─────────────────────────────────────────────────────────────────────

/// Mean Huber loss between two same-shape tensors (normalized scale).
pub fn huber_loss(pred: &Tensor, target: &Tensor, delta: f64) -> Result<Tensor> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!(
            "huber delta must be positive, got {delta}"
        )));
    }
    pred.sub(target)?.huber(delta)?.mean_all()
}
