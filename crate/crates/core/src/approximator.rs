//! Surrogate of the simulator: an MLP mapping `(d, Θ, l)` to `t_X`.
//!
//! Inputs are min-max normalised with the parameter bounds; the target is
//! learned directly in Mbps with a mean-squared-error loss and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetRow;
use crate::error::{Error, Result};
use crate::neuralnet::{AdamState, Checkpoint, CheckpointMeta, Mlp, NormalizationRecord};
use crate::simulator::{self, DeploymentConfig, ParameterBounds};

/// Per-dimension affine map between physical units and `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalizer {
    pub fn new(mins: Vec<f64>, maxs: Vec<f64>) -> Result<Self> {
        if mins.len() != maxs.len() || mins.iter().zip(&maxs).any(|(a, b)| !(b > a)) {
            return Err(Error::Config("normaliser needs max > min in every dimension".into()));
        }
        Ok(Self { mins, maxs })
    }

    pub fn from_bounds(bounds: &ParameterBounds, sectors: usize) -> Result<Self> {
        let (mins, maxs) = bounds.dimension_ranges(sectors).into_iter().unzip();
        Self::new(mins, maxs)
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    /// Index of the first dimension outside `[min, max]`, if any.
    pub fn out_of_range(&self, x: &[f64]) -> Option<usize> {
        x.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .position(|(v, (lo, hi))| !(v >= lo && v <= hi))
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    /// Neurons per hidden layer; defaults to 10 for one sector and 16 otherwise.
    pub hidden_width: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate reached at the last epoch under cosine annealing.
    pub final_lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden_width: None,
            epochs: 2000,
            lr: 3e-3,
            final_lr: 1e-5,
            batch_size: 16,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

pub fn default_hidden_width(sectors: usize) -> usize {
    if sectors == 1 {
        10
    } else {
        16
    }
}

/// The trained surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxModel {
    pub net: Mlp,
    pub normalizer: Normalizer,
    pub sectors: usize,
    pub x_percentile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ApproxModel,
    /// Entry 0 is the loss before the first update.
    pub history: Vec<EpochLoss>,
    pub train_rows: Vec<DatasetRow>,
    pub validation_rows: Vec<DatasetRow>,
}

fn mse(net: &Mlp, samples: &[(Vec<f64>, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut acc = 0.0;
    for (x, t) in samples {
        let y = net.predict(x)?[0];
        acc += (y - t).powi(2);
    }
    Ok(acc / samples.len() as f64)
}

/// Fits a fresh surrogate to `rows` with shuffled mini-batch Adam.
pub fn train(
    rows: &[DatasetRow],
    bounds: &ParameterBounds,
    sectors: usize,
    x_percentile: f64,
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    if rows.len() < 20 {
        return Err(Error::Config(format!("need at least 20 rows to train, got {}", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| r.config.uptilts_deg.len() != sectors) {
        return Err(Error::Schema(format!(
            "row with {} tilt values in a {sectors}-sector dataset",
            r.config.uptilts_deg.len()
        )));
    }
    if settings.epochs == 0 || settings.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&settings.validation_fraction) {
        return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
    }
    let normalizer = Normalizer::from_bounds(bounds, sectors)?;
    let width = settings.hidden_width.unwrap_or_else(|| default_hidden_width(sectors));
    let sizes = [sectors + 2, width, width, width, 1];

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (settings.validation_fraction * rows.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let encode = |r: &DatasetRow| (normalizer.normalize(&r.config.to_vector()), r.t_x_mbps);
    let train_set: Vec<(Vec<f64>, f64)> = train_idx.iter().map(|&i| encode(&rows[i])).collect();
    let val_set: Vec<(Vec<f64>, f64)> = val_idx.iter().map(|&i| encode(&rows[i])).collect();

    let mut net = Mlp::init(&sizes, rng_next_seed(&mut rng))?;
    let mean_target = train_set.iter().map(|s| s.1).sum::<f64>() / train_set.len() as f64;
    net.set_bias(sizes.len() - 2, 0, mean_target);
    let mut adam = AdamState::new(net.params().len(), settings.lr);

    let mut history = Vec::with_capacity(settings.epochs + 1);
    history.push(EpochLoss {
        epoch: 0,
        train_mse: mse(&net, &train_set)?,
        validation_mse: mse(&net, &val_set)?,
    });
    let mut batch_order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; net.params().len()];
    for epoch in 1..=settings.epochs {
        let progress = (epoch - 1) as f64 / settings.epochs.max(2).saturating_sub(1) as f64;
        adam.lr = settings.final_lr + 0.5 * (settings.lr - settings.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos());
        batch_order.shuffle(&mut rng);
        for batch in batch_order.chunks(settings.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let (x, t) = &train_set[i];
                let (y, cache) = net.forward(x)?;
                let g = net.backward(&cache, &[scale * (y[0] - t)])?;
                for (acc, gi) in grad.iter_mut().zip(&g.params) {
                    *acc += gi;
                }
            }
            net.adam_step(&mut adam, &grad)?;
        }
        history.push(EpochLoss {
            epoch,
            train_mse: mse(&net, &train_set)?,
            validation_mse: mse(&net, &val_set)?,
        });
    }
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: settings.epochs,
            residual: f64::NAN,
            last_iterate: Vec::new(),
        });
    }

    Ok(TrainOutcome {
        model: ApproxModel {
            net,
            normalizer,
            sectors,
            x_percentile,
        },
        history,
        train_rows: train_idx.iter().map(|&i| rows[i].clone()).collect(),
        validation_rows: val_idx.iter().map(|&i| rows[i].clone()).collect(),
    })
}

fn rng_next_seed(rng: &mut ChaCha8Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}

impl ApproxModel {
    pub fn input_dim(&self) -> usize {
        self.sectors + 2
    }

    fn check_vector(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Domain(format!(
                "surrogate expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if let Some(i) = self.normalizer.out_of_range(x) {
            return Err(Error::Domain(format!(
                "input {i} = {} outside the surrogate's range [{}, {}]",
                x[i], self.normalizer.mins[i], self.normalizer.maxs[i]
            )));
        }
        Ok(())
    }

    /// Estimated `t_X` in Mbps; out-of-range configurations are refused.
    pub fn predict(&self, config: &DeploymentConfig) -> Result<f64> {
        self.predict_vector(&config.to_vector())
    }

    pub fn predict_vector(&self, x: &[f64]) -> Result<f64> {
        self.check_vector(x)?;
        Ok(self.net.predict(&self.normalizer.normalize(x))?[0])
    }

    /// Prediction and gradient with respect to physical inputs.
    ///
    /// With `extrapolate` the range check is skipped.
    pub fn value_and_gradient(&self, x: &[f64], extrapolate: bool) -> Result<(f64, Vec<f64>)> {
        if extrapolate {
            if x.len() != self.input_dim() {
                return Err(Error::Domain("surrogate input has the wrong length".into()));
            }
        } else {
            self.check_vector(x)?;
        }
        let u = self.normalizer.normalize(x);
        let (y, cache) = self.net.forward(&u)?;
        let g = self.net.backward(&cache, &[1.0])?;
        let grad = g
            .input
            .iter()
            .zip(self.normalizer.mins.iter().zip(&self.normalizer.maxs))
            .map(|(gi, (lo, hi))| gi / (hi - lo))
            .collect();
        Ok((y[0], grad))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.net,
            NormalizationRecord {
                mins: self.normalizer.mins.clone(),
                maxs: self.normalizer.maxs.clone(),
            },
            CheckpointMeta {
                s: self.sectors,
                x_percentile: self.x_percentile,
            },
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = ck.network()?;
        let s = ck.meta.s;
        if net.input_size() != s + 2 || net.output_size() != 1 {
            return Err(Error::Schema(format!(
                "checkpoint layer sizes {:?} do not fit a {s}-sector surrogate",
                ck.layer_sizes
            )));
        }
        let normalizer = Normalizer::new(ck.normalization.mins.clone(), ck.normalization.maxs.clone())
            .map_err(|e| Error::Schema(e.to_string()))?;
        if normalizer.dim() != s + 2 {
            return Err(Error::Schema("normalisation length does not match the input size".into()));
        }
        Ok(Self {
            net,
            normalizer,
            sectors: s,
            x_percentile: ck.meta.x_percentile,
        })
    }
}

/// Sorted absolute errors paired with their empirical CDF value.
pub fn error_cdf(model: &ApproxModel, rows: &[DatasetRow]) -> Result<Vec<(f64, f64)>> {
    if rows.is_empty() {
        return Err(Error::Domain("error CDF needs at least one row".into()));
    }
    let mut errors = Vec::with_capacity(rows.len());
    for r in rows {
        let y = model.net.predict(&model.normalizer.normalize(&r.config.to_vector()))?[0];
        errors.push((y - r.t_x_mbps).abs());
    }
    Ok(empirical_cdf(errors))
}

pub fn empirical_cdf(mut values: Vec<f64>) -> Vec<(f64, f64)> {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().enumerate().map(|(i, v)| (v, (i + 1) as f64 / n)).collect()
}

/// Fraction of points with value `≤ x`.
pub fn cdf_at(cdf: &[(f64, f64)], x: f64) -> f64 {
    cdf.iter().take_while(|(v, _)| *v <= x).last().map_or(0.0, |p| p.1)
}

/// Nearest-rank quantile of the absolute errors (`q` in percent).
pub fn error_quantile(cdf: &[(f64, f64)], q: f64) -> Result<f64> {
    let errors: Vec<f64> = cdf.iter().map(|p| p.0).collect();
    simulator::percentile(&errors, q)
}

pub fn cdf_to_csv(cdf: &[(f64, f64)]) -> String {
    let mut out = String::from("abs_error_mbps,cdf\n");
    for (e, c) in cdf {
        out.push_str(&format!("{e:.6},{c:.6}\n"));
    }
    out
}

pub fn history_to_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_mse,validation_mse\n");
    for h in history {
        out.push_str(&format!("{},{:.6},{:.6}\n", h.epoch, h.train_mse, h.validation_mse));
    }
    out
}
