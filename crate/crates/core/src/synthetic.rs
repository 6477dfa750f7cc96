//! Synthetic traffic with planted structure.
//!
//! Node `n` in cluster `c` produces
//!
//! ```text
//! daily_amplitude · sin(2π · tod_fraction + phase(c))
//!   + weekly_amplitude · WEEK_PROFILE[dow]
//!   + AR(1) noise (coefficient 0.8, innovation std = noise_std)
//!   + sparse event pulses (arrival rate events/node/day, half-cosine, 6 steps)
//! ```
//!
//! All nodes of a cluster share one phase, so their noiseless components are
//! identical (correlation 1); phases of distinct clusters differ by at least
//! π/4, which caps the cluster count at 8. Every stream is seeded per node,
//! so generation is a pure function of the spec.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{TrafficSeries, SECONDS_PER_DAY};
use crate::{Error, Result};

pub const AR_COEFFICIENT: f64 = 0.8;
pub const EVENT_STEPS: usize = 6;
pub const MAX_CLUSTERS: usize = 8;

/// Additive weekly shape, Monday first: busy weekdays, quiet weekend.
pub const WEEK_PROFILE: [f64; 7] = [0.3, 0.2, 0.15, 0.2, 0.35, -0.6, -0.6];

fn default_start() -> i64 {
    1_136_160_000 // 2006-01-02 00:00:00 UTC, a Monday
}

// ── Spec ─────────────────────────────────────────────────────────────────────

/// Declarative description of a synthetic dataset (TOML on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub steps: usize,
    pub interval_seconds: u32,
    /// Cluster id per node; ids must cover `0..K` with no gaps, K ≤ 8.
    pub cluster_assignment: Vec<usize>,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub noise_std: f64,
    /// Expected event arrivals per node per day.
    pub event_rate: f64,
    pub event_magnitude: f64,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_timestamp: i64,
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<SyntheticSpec> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| Error::Spec(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 nodes, got {}",
                self.nodes
            )));
        }
        if self.steps == 0 {
            return Err(Error::Spec("steps must be positive".into()));
        }
        if self.interval_seconds == 0 || SECONDS_PER_DAY % self.interval_seconds as i64 != 0 {
            return Err(Error::Spec(format!(
                "interval_seconds must divide a day evenly, got {}",
                self.interval_seconds
            )));
        }
        if self.cluster_assignment.len() != self.nodes {
            return Err(Error::Spec(format!(
                "cluster_assignment has {} entries for {} nodes",
                self.cluster_assignment.len(),
                self.nodes
            )));
        }
        let k = self.cluster_count();
        if k > MAX_CLUSTERS {
            return Err(Error::Spec(format!(
                "at most {MAX_CLUSTERS} clusters keep phases π/4 apart, got {k}"
            )));
        }
        let mut seen = vec![false; k];
        for &c in &self.cluster_assignment {
            seen[c] = true; // c < k by construction of cluster_count
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Spec(
                "cluster ids must cover 0..K with no gaps".into(),
            ));
        }
        if !(self.daily_amplitude > 0.0) || !(self.weekly_amplitude > 0.0) {
            return Err(Error::Spec(format!(
                "amplitudes must be positive, got daily={}, weekly={}",
                self.daily_amplitude, self.weekly_amplitude
            )));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("event_rate", self.event_rate),
            ("event_magnitude", self.event_magnitude),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Spec(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

// ── Generation ───────────────────────────────────────────────────────────────

/// Latent phase of a cluster: equally spaced over at most a half turn of
/// spare room, never closer than π/4.
pub fn phase_of(cluster: usize, cluster_count: usize) -> f64 {
    2.0 * PI * cluster as f64 / cluster_count.max(4) as f64
}

/// Half-cosine event pulse, `k ∈ 0..EVENT_STEPS`, peak at the center.
fn pulse(k: usize) -> f64 {
    (PI * (k as f64 + 0.5) / EVENT_STEPS as f64).sin()
}

fn node_rng(seed: u64, node: usize, stream: u8) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(node as u64).to_le_bytes());
    bytes[16] = stream;
    ChaCha8Rng::from_seed(bytes)
}

/// The deterministic periodic part of a node's series at one step.
pub fn noiseless_value(spec: &SyntheticSpec, step: usize, node: usize) -> f64 {
    let ts = spec.start_timestamp + step as i64 * spec.interval_seconds as i64;
    let tod_fraction = ts.rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64;
    let dow = (ts.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize;
    let phase = phase_of(spec.cluster_assignment[node], spec.cluster_count());
    spec.daily_amplitude * (2.0 * PI * tod_fraction + phase).sin()
        + spec.weekly_amplitude * WEEK_PROFILE[dow]
}

/// Generate the series described by `spec`; a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TrafficSeries> {
    spec.validate()?;
    let (steps, nodes) = (spec.steps, spec.nodes);
    let steps_per_day = (SECONDS_PER_DAY / spec.interval_seconds as i64) as f64;
    let p_event = spec.event_rate / steps_per_day;
    let mut values = vec![0.0; steps * nodes];

    for node in 0..nodes {
        for step in 0..steps {
            values[step * nodes + node] = noiseless_value(spec, step, node);
        }
        if spec.noise_std > 0.0 {
            let normal = Normal::new(0.0, spec.noise_std)
                .map_err(|e| Error::Spec(format!("noise_std: {e}")))?;
            let mut rng = node_rng(spec.seed, node, 0);
            let mut e = 0.0;
            for step in 0..steps {
                e = AR_COEFFICIENT * e + normal.sample(&mut rng);
                values[step * nodes + node] += e;
            }
        }
        if p_event > 0.0 {
            let mut rng = node_rng(spec.seed, node, 1);
            for step in 0..steps {
                if rng.gen::<f64>() < p_event {
                    for k in 0..EVENT_STEPS.min(steps - step) {
                        values[(step + k) * nodes + node] += spec.event_magnitude * pulse(k);
                    }
                }
            }
        }
    }

    TrafficSeries::new(
        values,
        steps,
        nodes,
        spec.start_timestamp,
        spec.interval_seconds,
        Vec::new(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> SyntheticSpec {
        SyntheticSpec {
            nodes: 4,
            steps: 400,
            interval_seconds: 1800,
            cluster_assignment: vec![0, 0, 1, 1],
            daily_amplitude: 10.0,
            weekly_amplitude: 2.0,
            noise_std: 0.0,
            event_rate: 0.0,
            event_magnitude: 0.0,
            seed: 7,
            start_timestamp: default_start(),
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (
            a.iter().sum::<f64>() / n,
            b.iter().sum::<f64>() / n,
        );
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            let (da, db) = (a[i] - ma, b[i] - mb);
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    fn column(s: &TrafficSeries, node: usize) -> Vec<f64> {
        (0..s.steps).map(|t| s.value(t, node)).collect()
    }

    #[test]
    fn single_cluster_noiseless_nodes_are_identical() {
        let mut spec = base_spec();
        spec.cluster_assignment = vec![0; 4];
        let s = generate_synthetic(&spec).unwrap();
        let first = column(&s, 0);
        for n in 1..4 {
            assert_eq!(column(&s, n), first);
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let mut spec = base_spec();
        spec.noise_std = 1.0;
        spec.event_rate = 2.0;
        spec.event_magnitude = 5.0;
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.values, b.values);
        spec.seed = 8;
        let c = generate_synthetic(&spec).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn cluster_phases_are_at_least_a_quarter_pi_apart() {
        for k in 2..=MAX_CLUSTERS {
            for c in 1..k {
                let gap = phase_of(c, k) - phase_of(c - 1, k);
                assert!(gap >= PI / 4.0 - 1e-12, "k={k} c={c} gap={gap}");
            }
        }
    }

    #[test]
    fn within_cluster_correlation_beats_cross_cluster() {
        let mut spec = base_spec();
        spec.noise_std = 0.1 * spec.daily_amplitude;
        let s = generate_synthetic(&spec).unwrap();
        let cols: Vec<Vec<f64>> = (0..4).map(|n| column(&s, n)).collect();
        let within = (pearson(&cols[0], &cols[1]) + pearson(&cols[2], &cols[3])) / 2.0;
        let cross = (pearson(&cols[0], &cols[2])
            + pearson(&cols[0], &cols[3])
            + pearson(&cols[1], &cols[2])
            + pearson(&cols[1], &cols[3]))
            / 4.0;
        assert!(
            within > cross,
            "within={within:.3} should exceed cross={cross:.3}"
        );
        assert!(within > 0.9, "within-cluster correlation too low: {within}");
    }

    #[test]
    fn noiseless_component_matches_pure_generation() {
        let spec = base_spec();
        let s = generate_synthetic(&spec).unwrap();
        for step in (0..spec.steps).step_by(37) {
            for node in 0..spec.nodes {
                assert_eq!(s.value(step, node), noiseless_value(&spec, step, node));
            }
        }
    }

    #[test]
    fn events_only_add_nonnegative_bumps() {
        let mut spec = base_spec();
        spec.event_rate = 6.0;
        spec.event_magnitude = 4.0;
        let s = generate_synthetic(&spec).unwrap();
        let mut saw_bump = false;
        for step in 0..spec.steps {
            for node in 0..spec.nodes {
                let diff = s.value(step, node) - noiseless_value(&spec, step, node);
                assert!(diff >= -1e-12);
                if diff > 0.5 * spec.event_magnitude {
                    saw_bump = true;
                }
            }
        }
        assert!(saw_bump, "expected at least one visible event pulse");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = base_spec();
        s.nodes = 1;
        s.cluster_assignment = vec![0];
        assert!(matches!(s.validate(), Err(Error::Spec(_))));

        let mut s = base_spec();
        s.daily_amplitude = 0.0;
        assert!(s.validate().is_err());

        let mut s = base_spec();
        s.cluster_assignment = vec![0, 0, 2, 2]; // gap: no cluster 1
        assert!(s.validate().is_err());

        let mut s = base_spec();
        s.noise_std = -1.0;
        assert!(s.validate().is_err());

        let mut s = base_spec();
        s.interval_seconds = 7000;
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_spec_parses_with_default_start() {
        let text = r#"
            nodes = 2
            steps = 100
            interval_seconds = 300
            cluster_assignment = [0, 1]
            daily_amplitude = 5.0
            weekly_amplitude = 1.0
            noise_std = 0.5
            event_rate = 1.0
            event_magnitude = 3.0
            seed = 42
        "#;
        let spec = SyntheticSpec::from_toml(text).unwrap();
        assert_eq!(spec.start_timestamp, default_start());
        assert_eq!(spec.cluster_count(), 2);
        // 2006-01-02 is a Monday
        let s = generate_synthetic(&spec).unwrap();
        assert_eq!(s.dow_index(0), 0);
    }
}
