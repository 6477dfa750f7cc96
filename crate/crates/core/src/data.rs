//! Dataset plumbing: CSV loading, calendar features, normalization,
//! sliding windows and the chronological 6:2:2 split.
//!
//! A series is a steps × nodes table of flow values with a start timestamp
//! and a fixed sampling interval. Calendar indices are pure arithmetic on
//! epoch seconds (UTC, no DST handling): day-of-week uses Monday = 0 and
//! time-of-day slots are `seconds_into_day / interval`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
/// Input channels per (step, node): normalized flow, ToD fraction, DoW fraction.
pub const CHANNELS: usize = 3;

// ── Series ───────────────────────────────────────────────────────────────────

/// A multi-node flow series sampled on a regular grid.
#[derive(Debug, Clone)]
pub struct TrafficSeries {
    /// Row-major `steps × nodes` values.
    pub values: Vec<f64>,
    pub steps: usize,
    pub nodes: usize,
    pub start_timestamp: i64,
    pub interval_seconds: u32,
    pub node_ids: Vec<String>,
}

impl TrafficSeries {
    pub fn new(
        values: Vec<f64>,
        steps: usize,
        nodes: usize,
        start_timestamp: i64,
        interval_seconds: u32,
        node_ids: Vec<String>,
    ) -> Result<TrafficSeries> {
        if values.len() != steps * nodes {
            return Err(Error::Contract(format!(
                "series buffer has {} values but {} steps × {} nodes were declared",
                values.len(),
                steps,
                nodes
            )));
        }
        if interval_seconds == 0 || SECONDS_PER_DAY % interval_seconds as i64 != 0 {
            return Err(Error::Config(format!(
                "interval_seconds must divide a day evenly, got {interval_seconds}"
            )));
        }
        let node_ids = if node_ids.is_empty() {
            (0..nodes).map(|i| format!("n{i}")).collect()
        } else if node_ids.len() == nodes {
            node_ids
        } else {
            return Err(Error::Contract(format!(
                "{} node ids for {} nodes",
                node_ids.len(),
                nodes
            )));
        };
        Ok(TrafficSeries {
            values,
            steps,
            nodes,
            start_timestamp,
            interval_seconds,
            node_ids,
        })
    }

    pub fn value(&self, step: usize, node: usize) -> f64 {
        self.values[step * self.nodes + node]
    }

    pub fn timestamp(&self, step: usize) -> i64 {
        self.start_timestamp + step as i64 * self.interval_seconds as i64
    }

    pub fn steps_per_day(&self) -> usize {
        (SECONDS_PER_DAY / self.interval_seconds as i64) as usize
    }

    /// Slot within the day, in `0..steps_per_day`.
    pub fn tod_index(&self, step: usize) -> usize {
        let secs = self.timestamp(step).rem_euclid(SECONDS_PER_DAY);
        (secs / self.interval_seconds as i64) as usize
    }

    /// Day of week with Monday = 0 … Sunday = 6.
    pub fn dow_index(&self, step: usize) -> usize {
        let day = self.timestamp(step).div_euclid(SECONDS_PER_DAY);
        // 1970-01-01 was a Thursday (= 3 under Monday = 0)
        (day + 3).rem_euclid(7) as usize
    }
}

// ── Metadata sidecar ─────────────────────────────────────────────────────────

/// Sidecar describing the time grid of a CSV series (`<stem>.meta.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub start_timestamp: i64,
    pub interval_seconds: u32,
}

/// Path of the metadata sidecar belonging to a data CSV.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

impl SeriesMeta {
    pub fn load(path: &Path) -> Result<SeriesMeta> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("metadata {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("meta serialization");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

// ── CSV loading ──────────────────────────────────────────────────────────────

/// Parse a rectangular numeric CSV. An optional first line of non-numeric
/// cells is taken as node ids. Line and column numbers in errors are 1-based.
pub fn parse_csv(text: &str, start_timestamp: i64, interval_seconds: u32) -> Result<TrafficSeries> {
    let mut node_ids: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut nodes = 0usize;
    let mut steps = 0usize;

    for (li, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if li == 0 && line.trim().is_empty() {
            continue;
        }
        if line.trim().is_empty() {
            // allow a trailing blank line only
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if steps == 0 && node_ids.is_empty() {
            // first content line: header if any cell fails to parse
            let numeric: Vec<Option<f64>> = cells.iter().map(|c| c.trim().parse().ok()).collect();
            if numeric.iter().any(|v| v.is_none()) {
                node_ids = cells.iter().map(|c| c.trim().to_string()).collect();
                nodes = node_ids.len();
                continue;
            }
        }
        if nodes == 0 {
            nodes = cells.len();
        }
        if cells.len() != nodes {
            return Err(Error::Parse {
                line: li + 1,
                column: cells.len().min(nodes) + 1,
                msg: format!("expected {} columns, found {}", nodes, cells.len()),
            });
        }
        for (ci, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: li + 1,
                column: ci + 1,
                msg: format!("not a number: {:?}", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: li + 1,
                    column: ci + 1,
                    msg: format!("non-finite value: {v}"),
                });
            }
            values.push(v);
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            msg: "no data rows".into(),
        });
    }
    TrafficSeries::new(values, steps, nodes, start_timestamp, interval_seconds, node_ids)
}

/// Load a series from a CSV file given its time-grid parameters.
pub fn load_csv(path: &Path, start_timestamp: i64, interval_seconds: u32) -> Result<TrafficSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, start_timestamp, interval_seconds)
}

/// Load a series plus its `<stem>.meta.json` sidecar.
pub fn load_csv_with_meta(path: &Path) -> Result<TrafficSeries> {
    // read the CSV first so a missing dataset is reported as such
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta = SeriesMeta::load(&meta_path(path))?;
    parse_csv(&text, meta.start_timestamp, meta.interval_seconds)
}

/// Write a series as CSV (header of node ids, shortest-roundtrip floats)
/// plus its metadata sidecar. Loading the pair reproduces the series exactly.
pub fn save_csv_with_meta(series: &TrafficSeries, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&series.node_ids.join(","));
    out.push('\n');
    for step in 0..series.steps {
        for node in 0..series.nodes {
            if node > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", series.value(step, node)));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    SeriesMeta {
        start_timestamp: series.start_timestamp,
        interval_seconds: series.interval_seconds,
    }
    .save(&meta_path(path))
}

// ── Normalization ────────────────────────────────────────────────────────────

/// Z-score parameters fitted on the training split only; applied to the flow
/// channel (channel 0). Calendar channels stay as plain fractions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
    pub fitted_on: String,
}

impl Normalizer {
    /// Fit on the steps covered by training-window inputs: with `n_train`
    /// windows of length `t`, that is the first `n_train + t − 1` steps.
    pub fn fit_train_split(series: &TrafficSeries, t: usize, h: usize) -> Result<Normalizer> {
        let w = window_count(series.steps, t, h)?;
        let (n_train, _, _) = split_counts(w)?;
        let covered = n_train + t - 1;
        let slice = &series.values[..covered * series.nodes];
        let n = slice.len() as f64;
        let mean = slice.iter().sum::<f64>() / n;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 {
            return Err(Error::Numeric(
                "normalizer: training-split values are constant (zero standard deviation)".into(),
            ));
        }
        Ok(Normalizer {
            mean,
            std,
            fitted_on: "train".into(),
        })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

// ── Windows and splits ───────────────────────────────────────────────────────

/// One training example: `t` input steps and `h` target steps for all nodes.
#[derive(Debug, Clone)]
pub struct Window {
    /// Index of the first input step in the source series.
    pub start: usize,
    /// `t × nodes × CHANNELS`, channel 0 normalized.
    pub x: Vec<f64>,
    /// `h × nodes` targets in raw units.
    pub y: Vec<f64>,
    /// Per input step: time-of-day slot and day-of-week.
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
}

pub fn window_count(steps: usize, t: usize, h: usize) -> Result<usize> {
    if t == 0 || h == 0 {
        return Err(Error::Config(format!(
            "window lengths must be positive, got t={t}, h={h}"
        )));
    }
    if steps < t + h {
        return Err(Error::InsufficientData(format!(
            "series has {steps} steps but one window needs t+h = {}",
            t + h
        )));
    }
    Ok(steps - t - h + 1)
}

/// Chronological stride-1 windows with calendar channels and normalized flow.
pub fn make_windows(
    series: &TrafficSeries,
    t: usize,
    h: usize,
    norm: &Normalizer,
) -> Result<Vec<Window>> {
    let count = window_count(series.steps, t, h)?;
    let n = series.nodes;
    let spd = series.steps_per_day() as f64;
    let mut windows = Vec::with_capacity(count);
    for start in 0..count {
        let mut x = Vec::with_capacity(t * n * CHANNELS);
        let mut tod = Vec::with_capacity(t);
        let mut dow = Vec::with_capacity(t);
        for k in 0..t {
            let step = start + k;
            let ti = series.tod_index(step);
            let di = series.dow_index(step);
            tod.push(ti);
            dow.push(di);
            for node in 0..n {
                x.push(norm.normalize(series.value(step, node)));
                x.push(ti as f64 / spd);
                x.push(di as f64 / 7.0);
            }
        }
        let mut y = Vec::with_capacity(h * n);
        for k in 0..h {
            for node in 0..n {
                y.push(series.value(start + t + k, node));
            }
        }
        windows.push(Window {
            start,
            x,
            y,
            tod,
            dow,
        });
    }
    Ok(windows)
}

/// Sizes of the chronological 6:2:2 split: `⌊0.6W⌋ / ⌊0.2W⌋ / remainder`.
pub fn split_counts(w: usize) -> Result<(usize, usize, usize)> {
    if w < 5 {
        return Err(Error::InsufficientData(format!(
            "need at least 5 windows to split 6:2:2, got {w}"
        )));
    }
    let train = (6 * w) / 10;
    let val = (2 * w) / 10;
    let test = w - train - val;
    Ok((train, val, test))
}

/// Split a chronological window list 6:2:2; no validation or test window
/// precedes a training window.
pub fn split_6_2_2(windows: &[Window]) -> Result<(&[Window], &[Window], &[Window])> {
    let (a, b, _) = split_counts(windows.len())?;
    Ok((&windows[..a], &windows[a..a + b], &windows[a + b..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}, expected train|val|test"
            ))),
        }
    }
}

/// Windowed, normalized, split dataset ready for batching.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub t: usize,
    pub h: usize,
    pub nodes: usize,
    pub steps_per_day: usize,
    pub node_ids: Vec<String>,
    pub normalizer: Normalizer,
    pub windows: Vec<Window>,
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl Dataset {
    pub fn from_series(series: &TrafficSeries, t: usize, h: usize) -> Result<Dataset> {
        let normalizer = Normalizer::fit_train_split(series, t, h)?;
        Dataset::from_series_with_normalizer(series, t, h, normalizer)
    }

    /// Build windows with a caller-supplied normalizer instead of fitting one
    /// — evaluation of a checkpoint must scale flow exactly as training did.
    pub fn from_series_with_normalizer(
        series: &TrafficSeries,
        t: usize,
        h: usize,
        normalizer: Normalizer,
    ) -> Result<Dataset> {
        let windows = make_windows(series, t, h, &normalizer)?;
        let (a, b, _) = split_counts(windows.len())?;
        let w = windows.len();
        Ok(Dataset {
            t,
            h,
            nodes: series.nodes,
            steps_per_day: series.steps_per_day(),
            node_ids: series.node_ids.clone(),
            normalizer,
            windows,
            train: 0..a,
            val: a..a + b,
            test: a + b..w,
        })
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Assemble a batch from window indices.
    pub fn batch(&self, idxs: &[usize]) -> WindowBatch {
        let b = idxs.len();
        let (t, n, h) = (self.t, self.nodes, self.h);
        let mut x = Vec::with_capacity(b * t * n * CHANNELS);
        let mut y = Vec::with_capacity(b * h * n);
        let mut tod = Vec::with_capacity(b * t);
        let mut dow = Vec::with_capacity(b * t);
        for &i in idxs {
            let w = &self.windows[i];
            x.extend_from_slice(&w.x);
            y.extend_from_slice(&w.y);
            tod.extend_from_slice(&w.tod);
            dow.extend_from_slice(&w.dow);
        }
        WindowBatch {
            b,
            t,
            n,
            h,
            x,
            y_raw: y,
            tod,
            dow,
        }
    }
}

/// A batch of windows: `x` is `b × t × n × CHANNELS` (channel 0 normalized),
/// `y_raw` is `b × h × n` in raw units, calendar indices are `b × t`.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub b: usize,
    pub t: usize,
    pub n: usize,
    pub h: usize,
    pub x: Vec<f64>,
    pub y_raw: Vec<f64>,
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
}

impl WindowBatch {
    /// The normalized flow channel as a `b × t × n` buffer.
    pub fn flow(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.b * self.t * self.n);
        for i in 0..self.b * self.t * self.n {
            out.push(self.x[i * CHANNELS]);
        }
        out
    }

    /// Targets normalized with `norm`, same layout as `y_raw`.
    pub fn y_normalized(&self, norm: &Normalizer) -> Vec<f64> {
        self.y_raw.iter().map(|&v| norm.normalize(v)).collect()
    }
}
