//! Parameter sweeps over the simulator and their CSV persistence.
//!
//! Grid points are enumerated lexicographically in `(d, Θ₀, …, Θ_{S−1}, l)`
//! with the load varying fastest. The file format is plain CSV with a fixed
//! header and six-decimal fixed-point values; generated rows are rounded to
//! that precision so a save/load round trip is bit exact.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{self, DeploymentConfig, NetworkScenario};

/// Seeded uniform subsample of the full grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub isd_values_m: Vec<f64>,
    pub tilt_values_deg: Vec<f64>,
    pub load_values_mbps: Vec<f64>,
    pub subsample: Option<Subsample>,
}

fn stepped(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

impl SweepGrid {
    /// ISD 20–160 km by 20 km, tilt 0–90° (5° steps, 10° for four
    /// sectors), load 10–70 Mbps by 20 Mbps.
    pub fn default_for(sectors: usize) -> Self {
        let tilt_step = if sectors == 4 { 10.0 } else { 5.0 };
        Self {
            isd_values_m: stepped(20_000.0, 160_000.0, 20_000.0),
            tilt_values_deg: stepped(0.0, 90.0, tilt_step),
            load_values_mbps: stepped(10.0, 70.0, 20.0),
            subsample: None,
        }
    }

    /// Number of points in the full Cartesian product.
    pub fn cardinality(&self, sectors: usize) -> usize {
        self.isd_values_m.len() * self.tilt_values_deg.len().pow(sectors as u32) * self.load_values_mbps.len()
    }

    pub fn validate(&self, scenario: &NetworkScenario) -> Result<()> {
        if self.isd_values_m.is_empty() || self.tilt_values_deg.is_empty() || self.load_values_mbps.is_empty() {
            return Err(Error::Config("sweep grid axes must be non-empty".into()));
        }
        let b = &scenario.bounds;
        for &t in &self.tilt_values_deg {
            for &d in &self.isd_values_m {
                for &l in &self.load_values_mbps {
                    DeploymentConfig::new(d, vec![t; scenario.sectors], l).validate(b, scenario.sectors)?;
                }
            }
        }
        Ok(())
    }

    /// Grid point at lexicographic `index`.
    pub fn config_at(&self, sectors: usize, mut index: usize) -> DeploymentConfig {
        let n_load = self.load_values_mbps.len();
        let n_tilt = self.tilt_values_deg.len();
        let load = self.load_values_mbps[index % n_load];
        index /= n_load;
        let mut tilts = vec![0.0; sectors];
        for t in tilts.iter_mut().rev() {
            *t = self.tilt_values_deg[index % n_tilt];
            index /= n_tilt;
        }
        DeploymentConfig::new(self.isd_values_m[index], tilts, load)
    }

    /// Indices that will be evaluated, ascending.
    pub fn selected_indices(&self, sectors: usize) -> Vec<usize> {
        let total = self.cardinality(sectors);
        match self.subsample {
            Some(Subsample { count, seed }) if count < total => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = rand::seq::index::sample(&mut rng, total, count).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..total).collect(),
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub config: DeploymentConfig,
    pub t_x_mbps: f64,
    pub mean_ru: f64,
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub rows: Vec<DatasetRow>,
    /// Grid points whose evaluation failed and were left out.
    pub skipped: usize,
}

/// Value as it will read back from the six-decimal CSV encoding.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

fn canonical_row(config: &DeploymentConfig, t: f64, ru: f64) -> DatasetRow {
    DatasetRow {
        config: DeploymentConfig::new(
            quantize(config.isd_m / 1000.0) * 1000.0,
            config.uptilts_deg.iter().map(|&v| quantize(v)).collect(),
            quantize(config.load_mbps),
        ),
        t_x_mbps: quantize(t),
        mean_ru: quantize(ru),
    }
}

/// Evaluates the grid (or its subsample) with the scenario's drop count.
///
/// Every point uses the same simulation seed, so neighbouring points see the
/// same aircraft drops. Failed points are logged and counted, not fatal.
pub fn generate(scenario: &NetworkScenario, grid: &SweepGrid, sim_seed: u64) -> Result<GenerateReport> {
    scenario.validate()?;
    grid.validate(scenario)?;
    let indices = grid.selected_indices(scenario.sectors);
    let results: Vec<Result<DatasetRow>> = indices
        .par_iter()
        .map(|&i| {
            let cfg = grid.config_at(scenario.sectors, i);
            simulator::evaluate(scenario, &cfg, scenario.n_drops, sim_seed).map(|r| canonical_row(&cfg, r.t_x_mbps, r.mean_ru))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (i, r) in indices.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                skipped += 1;
                log::warn!("grid point {i} skipped: {e}");
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} grid points failed to evaluate");
    }
    Ok(GenerateReport { rows, skipped })
}

fn lexicographic(a: &DeploymentConfig, b: &DeploymentConfig) -> Ordering {
    let (va, vb) = (a.to_vector(), b.to_vector());
    for (x, y) in va.iter().zip(&vb) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    va.len().cmp(&vb.len())
}

/// Row with the largest `t_X`; ties go to the lexicographically smallest
/// configuration.
pub fn exhaustive_best(rows: &[DatasetRow]) -> Result<&DatasetRow> {
    let mut iter = rows.iter();
    let mut best = iter.next().ok_or_else(|| Error::Domain("no rows to search".into()))?;
    for row in iter {
        let better = match row.t_x_mbps.total_cmp(&best.t_x_mbps) {
            Ordering::Greater => true,
            Ordering::Equal => lexicographic(&row.config, &best.config) == Ordering::Less,
            Ordering::Less => false,
        };
        if better {
            best = row;
        }
    }
    Ok(best)
}

/// Header line for `sectors` tilt columns.
pub fn header(sectors: usize) -> String {
    let mut h = String::from("isd_km");
    for i in 0..sectors {
        let _ = write!(h, ",theta_{i}");
    }
    h.push_str(",load_mbps,t50_mbps,ru");
    h
}

/// Serialises rows; all rows must share the tilt-vector length `sectors`.
pub fn to_csv(rows: &[DatasetRow], sectors: usize) -> Result<String> {
    let mut out = header(sectors);
    out.push('\n');
    for row in rows {
        if row.config.uptilts_deg.len() != sectors {
            return Err(Error::Schema(format!(
                "row has {} tilt values, dataset has {sectors} sectors",
                row.config.uptilts_deg.len()
            )));
        }
        let _ = write!(out, "{:.6}", row.config.isd_m / 1000.0);
        for t in &row.config.uptilts_deg {
            let _ = write!(out, ",{t:.6}");
        }
        let _ = writeln!(out, ",{:.6},{:.6},{:.6}", row.config.load_mbps, row.t_x_mbps, row.mean_ru);
    }
    Ok(out)
}

/// A dataset read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sectors: usize,
    pub rows: Vec<DatasetRow>,
}

/// Parses CSV text. `expected_sectors`, when given, must match the header.
pub fn from_csv(text: &str, expected_sectors: Option<usize>) -> Result<Dataset> {
    let mut lines = text.split('\n').enumerate();
    let (_, head) = lines.next().ok_or_else(|| Error::Schema("empty dataset file".into()))?;
    let head = head.trim_end_matches('\r');
    let n_theta = head.split(',').filter(|c| c.starts_with("theta_")).count();
    let sectors = match expected_sectors {
        Some(s) => s,
        None => n_theta,
    };
    let expected = header(sectors);
    if head != expected {
        return Err(Error::Schema(format!("dataset header must be `{expected}`, found `{head}`")));
    }
    let width = sectors + 4;
    let mut rows = Vec::new();
    let mut lines = lines.peekable();
    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        if line.is_empty() && lines.peek().is_none() {
            break;
        }
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            return Err(Error::parse(line_no, "blank line"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Schema(format!(
                "line {line_no}: expected {width} columns for {sectors} sectors, found {}",
                fields.len()
            )));
        }
        let mut values = Vec::with_capacity(width);
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::parse(line_no, format!("column {} is not a number: `{f}`", col + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(line_no, format!("column {} is not finite", col + 1)));
            }
            values.push(v);
        }
        rows.push(DatasetRow {
            config: DeploymentConfig::new(values[0] * 1000.0, values[1..=sectors].to_vec(), values[sectors + 1]),
            t_x_mbps: values[sectors + 2],
            mean_ru: values[sectors + 3],
        });
    }
    Ok(Dataset { sectors, rows })
}

pub fn save(path: &Path, rows: &[DatasetRow], sectors: usize) -> Result<()> {
    let text = to_csv(rows, sectors)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected_sectors: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv(&text, expected_sectors)
}
