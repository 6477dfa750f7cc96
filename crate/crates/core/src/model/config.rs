//! Model and training configuration.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Switches that remove one mechanism at a time for comparison runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Temporal stage = Fourier attention on the undecomposed signal.
    pub attention_only: bool,
    /// Temporal stage = frequency MLP on the undecomposed signal.
    pub mlp_only: bool,
    /// Drop the node table from the gate input.
    pub no_node_embedding: bool,
    /// Drop the time-of-day and day-of-week tables from the gate input.
    pub no_time_embedding: bool,
    /// Skip the spatial stage entirely.
    pub no_spatial: bool,
    /// Keep spatial attention but with an all-ones mask (no metric to learn).
    pub no_mask: bool,
}

pub const ABLATION_NAMES: [&str; 6] = [
    "attention_only",
    "mlp_only",
    "no_node_embedding",
    "no_time_embedding",
    "no_spatial",
    "no_mask",
];

impl AblationFlags {
    /// Parse a comma-separated flag list, e.g. `"no_mask"` or
    /// `"attention_only,no_spatial"`.
    pub fn parse_list(s: &str) -> Result<AblationFlags> {
        let mut flags = AblationFlags::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "attention_only" => flags.attention_only = true,
                "mlp_only" => flags.mlp_only = true,
                "no_node_embedding" => flags.no_node_embedding = true,
                "no_time_embedding" => flags.no_time_embedding = true,
                "no_spatial" => flags.no_spatial = true,
                "no_mask" => flags.no_mask = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation {other:?}; known: {}",
                        ABLATION_NAMES.join(", ")
                    )))
                }
            }
        }
        Ok(flags)
    }

    /// The decomposition gate exists only when both temporal branches do.
    pub fn uses_gate(&self) -> bool {
        !(self.attention_only || self.mlp_only)
    }

    pub fn active(&self) -> Vec<&'static str> {
        let set = [
            self.attention_only,
            self.mlp_only,
            self.no_node_embedding,
            self.no_time_embedding,
            self.no_spatial,
            self.no_mask,
        ];
        ABLATION_NAMES
            .iter()
            .zip(set)
            .filter_map(|(n, on)| on.then_some(*n))
            .collect()
    }
}

/// Everything needed to build and train one model. `n = 0` means "infer the
/// node count from the dataset". The feature width `d` was tuned over
/// {32, 64, 96, 128} originally; any multiple of `heads` works here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input window length.
    pub t: usize,
    /// Prediction horizon.
    pub h: usize,
    /// Node count (0 = infer from data).
    pub n: usize,
    /// Input channels.
    pub c: usize,
    /// Embedding width.
    pub d: usize,
    /// Number of temporal+spatial blocks.
    pub l: usize,
    pub heads: usize,
    /// Gumbel-Sigmoid temperature.
    pub tau: f64,
    /// Inverse-distance offset for connectivity scores.
    pub epsilon: f64,
    /// Huber threshold (normalized scale).
    pub delta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub seed: u64,
    /// Targets with |value| below this are excluded from MAPE.
    pub mape_threshold: f64,
    pub freq_mlp_depth: usize,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            t: 12,
            h: 12,
            n: 0,
            c: 3,
            d: 32,
            l: 1,
            heads: 4,
            tau: 0.5,
            epsilon: 1e-6,
            delta: 1.0,
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 20,
            lr_milestones: vec![40, 70],
            lr_decay: 0.1,
            seed: 0,
            mape_threshold: 1.0,
            freq_mlp_depth: 1,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<ModelConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t", self.t),
            ("h", self.h),
            ("c", self.c),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("freq_mlp_depth", self.freq_mlp_depth),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n < 2 {
            return Err(Error::Config(format!(
                "need at least 2 nodes, got {} (0 means: not yet inferred from data)",
                self.n
            )));
        }
        if !(1..=4).contains(&self.l) {
            return Err(Error::Config(format!("l must be in 1..=4, got {}", self.l)));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "d = {} must be a positive multiple of heads = {}",
                self.d, self.heads
            )));
        }
        for (name, v) in [
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("lr", self.lr),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.mape_threshold < 0.0 {
            return Err(Error::Config("mape_threshold must be ≥ 0".into()));
        }
        if self.ablation.attention_only && self.ablation.mlp_only {
            return Err(Error::Config(
                "attention_only and mlp_only are mutually exclusive temporal variants".into(),
            ));
        }
        if self.ablation.uses_gate()
            && self.ablation.no_node_embedding
            && self.ablation.no_time_embedding
        {
            return Err(Error::Config(
                "the gate needs at least one of the node/time embeddings".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> ModelConfig {
        ModelConfig {
            n: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn defaults_validate_once_nodes_are_known() {
        assert!(ModelConfig::default().validate().is_err()); // n unresolved
        assert!(valid().validate().is_ok());
    }

    #[test]
    fn toml_roundtrip_preserves_the_config() {
        let mut c = valid();
        c.ablation.no_mask = true;
        c.lr_milestones = vec![10, 20, 30];
        let back = ModelConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = ModelConfig::from_toml("d = 16\nseed = 9\n").unwrap();
        assert_eq!(c.d, 16);
        assert_eq!(c.seed, 9);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.heads, 4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = valid();
        c.d = 30; // not divisible by 4 heads
        assert!(c.validate().is_err());

        let mut c = valid();
        c.l = 5;
        assert!(c.validate().is_err());

        let mut c = valid();
        c.ablation.attention_only = true;
        c.ablation.mlp_only = true;
        assert!(c.validate().is_err());

        let mut c = valid();
        c.ablation.no_node_embedding = true;
        c.ablation.no_time_embedding = true;
        assert!(c.validate().is_err());

        // ...but that pair is fine when the gate is gone anyway
        c.ablation.attention_only = true;
        assert!(c.validate().is_ok());

        let mut c = valid();
        c.delta = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_list_parsing() {
        let f = AblationFlags::parse_list("no_mask, attention_only").unwrap();
        assert!(f.no_mask && f.attention_only);
        assert!(!f.uses_gate());
        assert_eq!(f.active(), vec!["attention_only", "no_mask"]);
        assert!(AblationFlags::parse_list("bogus").is_err());
        assert_eq!(AblationFlags::parse_list("").unwrap(), AblationFlags::default());
    }
}
