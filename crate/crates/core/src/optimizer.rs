//! Embedding-based search over deployment parameters.
//!
//! A trainable `n × (S+2−c)` matrix is squashed through `ReLU(tanh(·))` into
//! `[0, 1]`, mapped affinely onto the parameter box and scored by a
//! differentiable surrogate. Adam maximises the batch-average score; the best
//! batch seen so far is kept and the search stops after `k_max` epochs
//! without improvement.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::ApproxModel;
use crate::error::{Error, Result};
use crate::neuralnet::AdamState;
use crate::simulator::{self, DeploymentConfig, NetworkScenario, ParameterBounds, SimResult};

/// A differentiable score over physical parameter vectors `(d, Θ, l)`.
pub trait Surrogate {
    fn input_dim(&self) -> usize;

    /// Score and its gradient with respect to the physical inputs.
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.value_and_gradient(x).map(|(v, _)| v)
    }
}

impl Surrogate for ApproxModel {
    fn input_dim(&self) -> usize {
        ApproxModel::input_dim(self)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        ApproxModel::value_and_gradient(self, x, false)
    }
}

/// Surrogate that skips the range check, for queries below the trained load range.
#[derive(Debug, Clone, Copy)]
pub struct Extrapolating<'a>(pub &'a ApproxModel);

impl Surrogate for Extrapolating<'_> {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.0.value_and_gradient(x, true)
    }
}

/// Parameters held constant during the search, keyed by input dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedParams {
    values: BTreeMap<usize, f64>,
}

impl FixedParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, dim: usize) -> Option<f64> {
        self.values.get(&dim).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    pub fn set(&mut self, dim: usize, value: f64) -> &mut Self {
        self.values.insert(dim, value);
        self
    }

    pub fn isd(mut self, isd_m: f64) -> Self {
        self.values.insert(0, isd_m);
        self
    }

    pub fn load(mut self, load_mbps: f64, sectors: usize) -> Self {
        self.values.insert(sectors + 1, load_mbps);
        self
    }

    pub fn tilt(mut self, sector: usize, deg: f64) -> Self {
        self.values.insert(1 + sector, deg);
        self
    }

    /// Parses `isd=80km`, `isd=80000`, `load=15` or `theta0=30` / `theta_0=30`.
    ///
    /// Plain ISD values are metres; a `km` suffix converts.
    pub fn parse_assignment(&mut self, text: &str, sectors: usize) -> Result<()> {
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("fixed parameter `{text}` is not of the form name=value")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        let number = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("fixed parameter `{text}` has a non-numeric value")))
        };
        match key.as_str() {
            "isd" | "d" => {
                let metres = match value.strip_suffix("km") {
                    Some(km) => number(km)? * 1000.0,
                    None => number(value.strip_suffix('m').unwrap_or(value))?,
                };
                self.values.insert(0, metres);
            }
            "load" | "l" => {
                self.values.insert(sectors + 1, number(value)?);
            }
            _ => {
                let index = key
                    .strip_prefix("theta")
                    .map(|s| s.trim_start_matches('_'))
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown fixed parameter `{key}`")))?;
                if index >= sectors {
                    return Err(Error::Incompatible(format!(
                        "cannot fix theta_{index}: the model has {sectors} sector(s)"
                    )));
                }
                self.values.insert(1 + index, number(value)?);
            }
        }
        Ok(())
    }

    /// Checks dimensions and that every value lies within `ranges`.
    pub fn validate(&self, ranges: &[(f64, f64)]) -> Result<()> {
        for (dim, v) in self.iter() {
            let Some(&(lo, hi)) = ranges.get(dim) else {
                return Err(Error::Incompatible(format!("fixed dimension {dim} does not exist")));
            };
            if !(v >= lo && v <= hi) {
                return Err(Error::Config(format!(
                    "fixed {} = {v} outside [{lo}, {hi}]",
                    dimension_name(dim, ranges.len() - 2)
                )));
            }
        }
        if self.count() >= ranges.len() {
            return Err(Error::Config("every parameter is fixed; nothing to optimise".into()));
        }
        Ok(())
    }
}

pub fn dimension_name(dim: usize, sectors: usize) -> String {
    match dim {
        0 => "isd".into(),
        d if d == sectors + 1 => "load".into(),
        d => format!("theta_{}", d - 1),
    }
}

/// Decoding box per input dimension.
///
/// The load range runs from `load_floor` (default `l_min`) to the trained maximum.
pub fn decode_ranges(bounds: &ParameterBounds, sectors: usize, load_floor: Option<f64>) -> Vec<(f64, f64)> {
    let mut ranges = bounds.dimension_ranges(sectors);
    if let Some(floor) = load_floor {
        ranges[sectors + 1].0 = floor;
    }
    ranges
}

/// `ReLU(tanh(r))`.
pub fn squash(raw: f64) -> f64 {
    raw.tanh().max(0.0)
}

/// Derivative of [`squash`], with subgradient 0 at the kink.
pub fn squash_derivative(raw: f64) -> f64 {
    let t = raw.tanh();
    if t > 0.0 {
        1.0 - t * t
    } else {
        0.0
    }
}

/// Trainable embedding `w_D` and the dimensions its columns drive.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    /// Row-major `n × free_dims.len()`.
    pub raw: Vec<f64>,
    pub n: usize,
    pub free_dims: Vec<usize>,
}

impl EmbeddingMatrix {
    /// Uniform initialisation in `[0.1, 1.5]`, clear of the dead half of the squash.
    pub fn init(n: usize, free_dims: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = (0..n * free_dims.len()).map(|_| rng.gen_range(0.1..=1.5)).collect();
        Self { raw, n, free_dims }
    }

    pub fn cols(&self) -> usize {
        self.free_dims.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.cols()..(i + 1) * self.cols()]
    }
}

/// Decodes one embedding row into a full physical vector.
pub fn squash_decode(raw_row: &[f64], free_dims: &[usize], fixed: &FixedParams, ranges: &[(f64, f64)]) -> Vec<f64> {
    let mut x = vec![0.0; ranges.len()];
    for (dim, v) in fixed.iter() {
        x[dim] = v;
    }
    for (&r, &dim) in raw_row.iter().zip(free_dims) {
        let (lo, hi) = ranges[dim];
        x[dim] = (lo + squash(r) * (hi - lo)).clamp(lo, hi);
    }
    x
}

/// Batch objective and its gradient with respect to the raw embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEvaluation {
    /// Decoded rows in physical units.
    pub rows: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    /// `ε_i = −score_i`.
    pub errors: Vec<f64>,
    /// `L = −mean(score)`.
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn batch_loss<S: Surrogate + ?Sized>(
    emb: &EmbeddingMatrix,
    fixed: &FixedParams,
    ranges: &[(f64, f64)],
    surrogate: &S,
) -> Result<BatchEvaluation> {
    let n = emb.n;
    let cols = emb.cols();
    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut grad = vec![0.0; emb.raw.len()];
    for i in 0..n {
        let raw_row = emb.row(i);
        let x = squash_decode(raw_row, &emb.free_dims, fixed, ranges);
        let (score, g) = surrogate.value_and_gradient(&x)?;
        for (j, &dim) in emb.free_dims.iter().enumerate() {
            let (lo, hi) = ranges[dim];
            grad[i * cols + j] = -g[dim] * (hi - lo) * squash_derivative(raw_row[j]) / n as f64;
        }
        rows.push(x);
        scores.push(score);
    }
    let loss = -scores.iter().sum::<f64>() / n as f64;
    let errors = scores.iter().map(|s| -s).collect();
    Ok(BatchEvaluation {
        rows,
        scores,
        errors,
        loss,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    /// Batch size `n`.
    pub n: usize,
    /// Adam steps per epoch `τ`.
    pub tau: usize,
    /// Plateau limit.
    pub k_max: usize,
    pub lr: f64,
    pub seed: u64,
    /// Hard cap on epochs in case improvements never stop.
    pub max_epochs: usize,
    /// Lower decoding bound for the load, below `l_min` (extrapolation).
    pub load_floor_mbps: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            n: 4,
            tau: 1000,
            k_max: 20,
            lr: 1e-2,
            seed: 0,
            max_epochs: 10_000,
            load_floor_mbps: None,
        }
    }
}

/// A batch of decoded configurations with their surrogate scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBatch {
    pub rows: Vec<DeploymentConfig>,
    pub surrogate_scores: Vec<f64>,
}

impl CandidateBatch {
    fn from_vectors(rows: &[Vec<f64>], scores: &[f64]) -> Result<Self> {
        Ok(Self {
            rows: rows.iter().map(|r| DeploymentConfig::from_vector(r)).collect::<Result<_>>()?,
            surrogate_scores: scores.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eps_min: f64,
    pub eps_star: f64,
    pub plateau: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRun {
    /// Best batch `D*`.
    pub best: CandidateBatch,
    pub eps_star: f64,
    pub history: Vec<EpochRecord>,
    /// Last batch evaluated.
    pub last_batch: CandidateBatch,
    pub epochs: usize,
    /// Set when `max_epochs` ended the run before the plateau rule did.
    pub hit_epoch_cap: bool,
}

/// Runs the embedding search against `surrogate`.
pub fn train<S: Surrogate + ?Sized>(
    surrogate: &S,
    bounds: &ParameterBounds,
    fixed: &FixedParams,
    settings: &OptimizerSettings,
) -> Result<OptimizerRun> {
    let dim = surrogate.input_dim();
    if dim < 3 {
        return Err(Error::Config(format!("surrogate input size {dim} cannot hold (d, theta, l)")));
    }
    let sectors = dim - 2;
    if settings.n == 0 || settings.tau == 0 || settings.k_max == 0 || settings.max_epochs == 0 {
        return Err(Error::Config("n, tau, k_max and max_epochs must be positive".into()));
    }
    if !(settings.lr > 0.0) {
        return Err(Error::Config("optimizer learning rate must be positive".into()));
    }
    bounds.validate()?;
    if let Some(floor) = settings.load_floor_mbps {
        if !(floor >= 0.0 && floor < bounds.l_max_mbps) {
            return Err(Error::Config(format!("load floor {floor} Mbps outside [0, l_max)")));
        }
    }
    let ranges = decode_ranges(bounds, sectors, settings.load_floor_mbps);
    fixed.validate(&ranges)?;
    let free_dims: Vec<usize> = (0..dim).filter(|d| fixed.get(*d).is_none()).collect();

    let mut emb = EmbeddingMatrix::init(settings.n, free_dims, settings.seed);
    let mut adam = AdamState::new(emb.raw.len(), settings.lr);
    let mut eps_star = f64::INFINITY;
    let mut best: Option<CandidateBatch> = None;
    let mut history = Vec::new();
    let mut plateau = 0;
    let mut last = None;
    let mut epoch = 0;
    while plateau < settings.k_max && epoch < settings.max_epochs {
        epoch += 1;
        let mut eps_min = f64::INFINITY;
        let mut dagger = None;
        for _ in 0..settings.tau {
            let eval = batch_loss(&emb, fixed, &ranges, surrogate)?;
            let step_min = eval.errors.iter().cloned().fold(f64::INFINITY, f64::min);
            if step_min < eps_min {
                eps_min = step_min;
                dagger = Some(CandidateBatch::from_vectors(&eval.rows, &eval.scores)?);
            }
            adam.step(&mut emb.raw, &eval.grad)?;
            last = Some(eval);
        }
        if eps_min < eps_star {
            eps_star = eps_min;
            best = dagger;
            plateau = 0;
        } else {
            plateau += 1;
        }
        log::debug!("optimizer epoch {epoch}: eps_min {eps_min:.6}, eps* {eps_star:.6}, k {plateau}");
        history.push(EpochRecord {
            epoch,
            eps_min,
            eps_star,
            plateau,
        });
    }
    let best = best.ok_or_else(|| Error::NonConvergence {
        iterations: epoch,
        residual: f64::NAN,
        last_iterate: emb.raw.clone(),
    })?;
    let last = last.expect("tau > 0 guarantees at least one evaluation");
    Ok(OptimizerRun {
        best,
        eps_star,
        history,
        last_batch: CandidateBatch::from_vectors(&last.rows, &last.scores)?,
        epochs: epoch,
        hit_epoch_cap: plateau < settings.k_max,
    })
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Domain("cannot select from an empty batch".into()));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Re-scores `batch` with `surrogate` and returns the top row with its score.
pub fn select_best<S: Surrogate + ?Sized>(batch: &CandidateBatch, surrogate: &S) -> Result<(DeploymentConfig, f64)> {
    let scores = batch
        .rows
        .iter()
        .map(|r| surrogate.value(&r.to_vector()))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax(&scores)?;
    Ok((batch.rows[i].clone(), scores[i]))
}

/// Ground-truth evaluation of a chosen configuration.
pub fn verify(config: &DeploymentConfig, scenario: &NetworkScenario, seed: u64) -> Result<SimResult> {
    simulator::evaluate(scenario, config, scenario.n_drops, seed)
}

/// One line of a best/batch report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub config: DeploymentConfig,
    pub surrogate_t50: Option<f64>,
    pub verified_t50: Option<f64>,
}

pub fn report_header(sectors: usize) -> String {
    let mut cols = vec!["isd_km".to_string()];
    cols.extend((0..sectors).map(|i| format!("theta_{i}")));
    cols.extend(["load_mbps", "surrogate_t50", "verified_t50"].map(String::from));
    cols.join(",")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

pub fn report_csv(rows: &[ReportRow], sectors: usize) -> Result<String> {
    let mut out = report_header(sectors);
    out.push('\n');
    for r in rows {
        if r.config.uptilts_deg.len() != sectors {
            return Err(Error::Schema(format!("report row has {} tilts, expected {sectors}", r.config.uptilts_deg.len())));
        }
        let mut fields = vec![format!("{:.6}", r.config.isd_m / 1000.0)];
        fields.extend(r.config.uptilts_deg.iter().map(|t| format!("{t:.6}")));
        fields.push(format!("{:.6}", r.config.load_mbps));
        fields.push(fmt_opt(r.surrogate_t50));
        fields.push(fmt_opt(r.verified_t50));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,eps_min,eps_star,plateau\n");
    for h in history {
        out.push_str(&format!("{},{:.6},{:.6},{}\n", h.epoch, h.eps_min, h.eps_star, h.plateau));
    }
    out
}
