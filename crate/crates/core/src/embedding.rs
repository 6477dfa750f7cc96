//! Input projection and the three learnable prior tables.
//!
//! Raw windows (flow, time-of-day fraction, day-of-week fraction) are lifted
//! to D dimensions by a small MLP (C→D hidden layer with ReLU, then a linear
//! D→D map). Alongside, three lookup tables provide priors: one row per
//! time-of-day slot, one per weekday, one per node. The tables feed only the
//! decomposition gate; they are not added onto the projected signal.

use rand_chacha::ChaCha8Rng;

use crate::init::{kaiming_param, uniform_param, zero_param};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Learnable parameters: the input MLP plus optional prior tables.
/// Tables are absent when an ablation removes their consumer.
#[derive(Debug, Clone)]
pub struct EmbeddingParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    /// `steps_per_day × D`.
    pub tod_table: Option<Tensor>,
    /// `7 × D`.
    pub dow_table: Option<Tensor>,
    /// `N × D`.
    pub node_table: Option<Tensor>,
}

/// Outputs of [`EmbeddingParams::embed`].
#[derive(Debug, Clone)]
pub struct Embedded {
    /// `B × T × N × D` projected signal.
    pub x_emb: Tensor,
    /// `B × T × D` time-of-day rows, when the table exists.
    pub e_day: Option<Tensor>,
    /// `B × T × D` day-of-week rows.
    pub e_week: Option<Tensor>,
    /// `N × D` node rows.
    pub e_node: Option<Tensor>,
}

impl EmbeddingParams {
    /// Seeded initialization. Tables: uniform ±1/√D. Projections: fan-in
    /// uniform. Biases: zero.
    pub fn init(
        rng: &mut ChaCha8Rng,
        c: usize,
        d: usize,
        steps_per_day: usize,
        n: usize,
        with_time_tables: bool,
        with_node_table: bool,
    ) -> Result<EmbeddingParams> {
        let table_bound = 1.0 / (d as f64).sqrt();
        Ok(EmbeddingParams {
            w1: kaiming_param(rng, &[c, d], c)?,
            b1: zero_param(&[d])?,
            w2: kaiming_param(rng, &[d, d], d)?,
            b2: zero_param(&[d])?,
            tod_table: with_time_tables
                .then(|| uniform_param(rng, &[steps_per_day, d], table_bound))
                .transpose()?,
            dow_table: with_time_tables
                .then(|| uniform_param(rng, &[7, d], table_bound))
                .transpose()?,
            node_table: with_node_table
                .then(|| uniform_param(rng, &[n, d], table_bound))
                .transpose()?,
        })
    }

    /// Project a batch and gather the prior rows for its calendar indices.
    ///
    /// `x` is `B × T × N × C`; `tod`/`dow` hold `B·T` indices row-major.
    pub fn embed(&self, x: &Tensor, tod: &[usize], dow: &[usize]) -> Result<Embedded> {
        if x.rank() != 4 {
            return Err(Error::Contract(format!(
                "embed expects B×T×N×C input, got shape {:?}",
                x.shape()
            )));
        }
        let (b, t) = (x.shape()[0], x.shape()[1]);
        if tod.len() != b * t || dow.len() != b * t {
            return Err(Error::Contract(format!(
                "calendar index buffers must hold {}×{} entries, got {} and {}",
                b,
                t,
                tod.len(),
                dow.len()
            )));
        }
        let hidden = x.matmul(&self.w1)?.add(&self.b1)?.relu()?;
        let x_emb = hidden.matmul(&self.w2)?.add(&self.b2)?;
        let e_day = self
            .tod_table
            .as_ref()
            .map(|tb| tb.gather_rows(tod, &[b, t]))
            .transpose()?;
        let e_week = self
            .dow_table
            .as_ref()
            .map(|tb| tb.gather_rows(dow, &[b, t]))
            .transpose()?;
        Ok(Embedded {
            x_emb,
            e_day,
            e_week,
            e_node: self.node_table.clone(),
        })
    }
}
