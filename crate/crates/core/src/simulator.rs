//! Downlink system-level evaluator.
//!
//! One evaluation runs several independent aircraft drops. Within a drop
//! every aircraft attaches to its strongest sector, sector resource
//! utilisation is solved self-consistently with the interference it causes,
//! and per-aircraft throughput follows from a truncated Shannon map with
//! equal sharing among the aircraft attached to a sector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, AircraftDrop, SectorGeometry, SiteLayout};
use crate::radio::{self, ArrayConfig, LinkBudget};

/// Box constraints on the decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterBounds {
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub l_min_mbps: f64,
    /// Upper end of the load range the surrogate is trained on. The physical
    /// problem has no upper load bound; this only limits surrogate queries.
    pub l_max_mbps: f64,
}

impl Default for ParameterBounds {
    fn default() -> Self {
        Self {
            d_min_m: 20_000.0,
            d_max_m: 160_000.0,
            theta_min_deg: 0.0,
            theta_max_deg: 90.0,
            l_min_mbps: 10.0,
            l_max_mbps: 70.0,
        }
    }
}

impl ParameterBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d_min_m > 0.0
            && self.d_min_m <= self.d_max_m
            && self.theta_min_deg >= 0.0
            && self.theta_min_deg < self.theta_max_deg
            && self.theta_max_deg <= 90.0
            && self.l_min_mbps >= 0.0
            && self.l_min_mbps < self.l_max_mbps;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent parameter bounds: {self:?}")))
        }
    }

    /// Lower/upper bounds per input dimension `(d, Θ₀…Θ_{S−1}, l)`.
    pub fn dimension_ranges(&self, sectors: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(sectors + 2);
        out.push((self.d_min_m, self.d_max_m));
        out.extend(std::iter::repeat_n((self.theta_min_deg, self.theta_max_deg), sectors));
        out.push((self.l_min_mbps, self.l_max_mbps));
        out
    }
}

/// Decision variables: ISD `d`, tilt vector `Θ` and per-aircraft load `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub isd_m: f64,
    pub uptilts_deg: Vec<f64>,
    pub load_mbps: f64,
}

impl DeploymentConfig {
    pub fn new(isd_m: f64, uptilts_deg: Vec<f64>, load_mbps: f64) -> Self {
        Self {
            isd_m,
            uptilts_deg,
            load_mbps,
        }
    }

    /// Flat vector `(d, Θ₀…Θ_{S−1}, l)` in physical units.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.uptilts_deg.len() + 2);
        v.push(self.isd_m);
        v.extend_from_slice(&self.uptilts_deg);
        v.push(self.load_mbps);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::Domain(format!("configuration vector too short: {}", v.len())));
        }
        Ok(Self::new(v[0], v[1..v.len() - 1].to_vec(), v[v.len() - 1]))
    }

    /// Checks the physical constraints; the load has only a lower bound.
    pub fn validate(&self, bounds: &ParameterBounds, sectors: usize) -> Result<()> {
        if self.uptilts_deg.len() != sectors {
            return Err(Error::Config(format!(
                "expected {sectors} up-tilt angles, got {}",
                self.uptilts_deg.len()
            )));
        }
        if !(self.isd_m >= bounds.d_min_m && self.isd_m <= bounds.d_max_m) {
            return Err(Error::Config(format!(
                "isd {} m outside [d_min, d_max] = [{}, {}] m",
                self.isd_m, bounds.d_min_m, bounds.d_max_m
            )));
        }
        for (i, &t) in self.uptilts_deg.iter().enumerate() {
            if !(t >= bounds.theta_min_deg && t <= bounds.theta_max_deg) {
                return Err(Error::Config(format!(
                    "theta_{i} = {t} deg outside [theta_min, theta_max] = [{}, {}] deg",
                    bounds.theta_min_deg, bounds.theta_max_deg
                )));
            }
        }
        if !(self.load_mbps >= bounds.l_min_mbps && self.load_mbps.is_finite()) {
            return Err(Error::Config(format!(
                "load {} Mbps below l_min = {} Mbps",
                self.load_mbps, bounds.l_min_mbps
            )));
        }
        Ok(())
    }
}

/// Load-to-interference coupling and rate-map parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadModel {
    pub se_alpha: f64,
    pub se_max_bps_hz: f64,
    pub sinr_min_db: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iters: usize,
    pub damping: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self {
            se_alpha: 0.75,
            se_max_bps_hz: 7.8,
            sinr_min_db: -10.0,
            fixed_point_tol: 1e-4,
            fixed_point_max_iters: 100,
            damping: 0.5,
        }
    }
}

impl LoadModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.fixed_point_tol > 0.0) {
            return Err(Error::Config("fixed-point tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Truncated Shannon spectral efficiency in bps/Hz.
    pub fn spectral_efficiency(&self, sinr_db: f64) -> f64 {
        if sinr_db < self.sinr_min_db {
            return 0.0;
        }
        let lin = 10f64.powf(sinr_db / 10.0);
        (self.se_alpha * (1.0 + lin).log2()).min(self.se_max_bps_hz)
    }
}

/// Everything about the network that is not a decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkScenario {
    pub sectors: usize,
    pub bs_height_m: f64,
    pub altitude_m: f64,
    pub array: ArrayConfig,
    pub link: LinkBudget,
    pub load_model: LoadModel,
    pub bounds: ParameterBounds,
    pub aircraft_per_drop: usize,
    pub n_drops: usize,
    /// Percentile `X` of `t_X`.
    pub percentile: f64,
    /// Keep only the center site. Used to isolate noise-limited behaviour.
    pub single_site: bool,
}

impl NetworkScenario {
    pub fn new(sectors: usize) -> Self {
        Self {
            sectors,
            bs_height_m: geometry::DEFAULT_BS_HEIGHT_M,
            altitude_m: geometry::DEFAULT_ALTITUDE_M,
            array: ArrayConfig::default(),
            link: LinkBudget::default(),
            load_model: LoadModel::default(),
            bounds: ParameterBounds::default(),
            aircraft_per_drop: 100,
            n_drops: 20,
            percentile: 50.0,
            single_site: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        geometry::validate_sector_count(self.sectors)?;
        self.array.validate()?;
        self.link.validate()?;
        self.load_model.validate()?;
        self.bounds.validate()?;
        if self.aircraft_per_drop == 0 || self.n_drops == 0 {
            return Err(Error::Config("aircraft per drop and drop count must be positive".into()));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Config(format!("percentile must lie in (0, 100], got {}", self.percentile)));
        }
        if !(self.altitude_m > self.bs_height_m) {
            return Err(Error::Config("aircraft altitude must exceed base-station height".into()));
        }
        Ok(())
    }

    pub fn layout(&self, isd_m: f64) -> Result<SiteLayout> {
        let layout = geometry::build_layout(isd_m, self.sectors)?.with_bs_height(self.bs_height_m);
        Ok(if self.single_site { layout.single_site() } else { layout })
    }

    pub fn noise_mw(&self) -> f64 {
        radio::dbm_to_mw(radio::noise_power_dbm(&self.link))
    }
}

/// Received power (mW) from every sector at every aircraft, row-major by aircraft.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    pub n_users: usize,
    pub n_sectors: usize,
    pub mw: Vec<f64>,
}

impl PowerMatrix {
    pub fn row(&self, user: usize) -> &[f64] {
        &self.mw[user * self.n_sectors..(user + 1) * self.n_sectors]
    }
}

pub fn received_powers(
    drop: &AircraftDrop,
    layout: &SiteLayout,
    sectors: &[SectorGeometry],
    array: &ArrayConfig,
    link: &LinkBudget,
) -> Result<PowerMatrix> {
    let n_sectors = sectors.len();
    let mut mw = Vec::with_capacity(drop.positions.len() * n_sectors);
    for &rx in &drop.positions {
        let mut site_angles = Vec::with_capacity(layout.site_positions.len());
        for &site in &layout.site_positions {
            let (_, eff) = geometry::wrap_distance(site, rx, layout);
            let angles = geometry::elevation_azimuth(eff, layout.bs_height_m, rx, drop.altitude_m);
            let loss = radio::pathloss_db(angles.slant_range_m, link.carrier_hz)?;
            site_angles.push((angles, loss));
        }
        for sector in sectors {
            let (angles, loss) = site_angles[sector.site_index];
            let gain = radio::array_gain_db(angles.elevation_deg, angles.azimuth_deg, sector, array, link.carrier_hz);
            mw.push(radio::dbm_to_mw(radio::rx_power_dbm(link, gain, loss)));
        }
    }
    Ok(PowerMatrix {
        n_users: drop.positions.len(),
        n_sectors,
        mw,
    })
}

/// Strongest-sector association; ties go to the lowest (site, sector) index.
pub fn associate(powers: &PowerMatrix) -> Vec<usize> {
    (0..powers.n_users)
        .map(|u| {
            let row = powers.row(u);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// SINR in dB of `user` served by `serving`, with interferers weighted by
/// their utilisation.
pub fn sinr_db(powers: &PowerMatrix, user: usize, serving: usize, rho: &[f64], noise_mw: f64) -> f64 {
    let row = powers.row(user);
    let interference: f64 = row
        .iter()
        .zip(rho)
        .enumerate()
        .filter(|&(j, _)| j != serving)
        .map(|(_, (p, r))| p * r)
        .sum();
    radio::mw_to_dbm(row[serving] / (noise_mw + interference))
}

/// Per-aircraft throughput under equal sharing of the carrier.
pub fn user_throughput_mbps(sinr_db: f64, n_attached: usize, link: &LinkBudget, lm: &LoadModel) -> f64 {
    let n = n_attached.max(1) as f64;
    link.bandwidth_hz * lm.spectral_efficiency(sinr_db) / n / 1e6
}

/// Fixed point of the load coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSolution {
    pub rho: Vec<f64>,
    pub iterations: usize,
    /// `max_j |F_j(ρ) − ρ_j|` at the returned iterate.
    pub residual: f64,
}

/// The coupling map `F(ρ)_j = min(1, Σ_{u∈j} l / r_u(ρ))`.
pub fn load_map(
    powers: &PowerMatrix,
    serving: &[usize],
    rho: &[f64],
    load_mbps: f64,
    noise_mw: f64,
    link: &LinkBudget,
    lm: &LoadModel,
) -> Vec<f64> {
    let mut demand = vec![0.0; powers.n_sectors];
    for (u, &j) in serving.iter().enumerate() {
        let sinr = sinr_db(powers, u, j, rho, noise_mw);
        let rate = link.bandwidth_hz * lm.spectral_efficiency(sinr) / 1e6;
        demand[j] += if rate > 0.0 { load_mbps / rate } else { f64::INFINITY };
    }
    demand.into_iter().map(|d| d.min(1.0)).collect()
}

/// Damped fixed-point iteration started from full utilisation.
///
/// Stops as soon as the residual of the current iterate is below the
/// tolerance and returns that iterate.
pub fn solve_load_coupling(
    powers: &PowerMatrix,
    serving: &[usize],
    load_mbps: f64,
    noise_mw: f64,
    link: &LinkBudget,
    lm: &LoadModel,
) -> Result<LoadSolution> {
    let mut rho = vec![1.0; powers.n_sectors];
    let mut residual = f64::INFINITY;
    for iterations in 0..=lm.fixed_point_max_iters {
        let next = load_map(powers, serving, &rho, load_mbps, noise_mw, link, lm);
        residual = next.iter().zip(&rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual < lm.fixed_point_tol {
            return Ok(LoadSolution {
                rho,
                iterations,
                residual,
            });
        }
        if iterations == lm.fixed_point_max_iters {
            break;
        }
        for (r, f) in rho.iter_mut().zip(&next) {
            *r = (1.0 - lm.damping) * *r + lm.damping * f;
        }
    }
    Err(Error::NonConvergence {
        iterations: lm.fixed_point_max_iters,
        residual,
        last_iterate: rho,
    })
}

/// Nearest-rank percentile: the value at 1-based rank `⌈x/100·N⌉`.
pub fn percentile(samples: &[f64], x: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("percentile of an empty sample".into()));
    }
    if !(x > 0.0 && x <= 100.0) {
        return Err(Error::Domain(format!("percentile must lie in (0, 100], got {x}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((x / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Per-drop outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DropResult {
    pub throughput_mbps: Vec<f64>,
    pub sinr_db: Vec<f64>,
    pub serving: Vec<usize>,
    pub rho: Vec<f64>,
}

/// Outcome of one deployment evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub throughput_samples_mbps: Vec<f64>,
    pub sinr_samples_db: Vec<f64>,
    pub x_percentile: f64,
    pub t_x_mbps: f64,
    pub mean_ru: f64,
}

/// Runs one drop on a prepared layout.
pub fn simulate_drop(
    scenario: &NetworkScenario,
    layout: &SiteLayout,
    sectors: &[SectorGeometry],
    drop: &AircraftDrop,
    load_mbps: f64,
) -> Result<DropResult> {
    let powers = received_powers(drop, layout, sectors, &scenario.array, &scenario.link)?;
    let serving = associate(&powers);
    let noise = scenario.noise_mw();
    let solution = solve_load_coupling(&powers, &serving, load_mbps, noise, &scenario.link, &scenario.load_model)?;
    let mut attached = vec![0usize; powers.n_sectors];
    for &j in &serving {
        attached[j] += 1;
    }
    let mut sinrs = Vec::with_capacity(serving.len());
    let mut rates = Vec::with_capacity(serving.len());
    for (u, &j) in serving.iter().enumerate() {
        let s = sinr_db(&powers, u, j, &solution.rho, noise);
        sinrs.push(s);
        rates.push(user_throughput_mbps(s, attached[j], &scenario.link, &scenario.load_model));
    }
    Ok(DropResult {
        throughput_mbps: rates,
        sinr_db: sinrs,
        serving,
        rho: solution.rho,
    })
}

/// Seed of drop `index` within an evaluation seeded by `seed`.
pub fn drop_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Monte Carlo estimate of `t_X` for one deployment.
///
/// Drops run in parallel and are merged in drop order, so the result is a
/// pure function of the arguments.
pub fn evaluate(scenario: &NetworkScenario, config: &DeploymentConfig, n_drops: usize, seed: u64) -> Result<SimResult> {
    scenario.validate()?;
    config.validate(&scenario.bounds, scenario.sectors)?;
    if n_drops == 0 {
        return Err(Error::Config("drop count must be positive".into()));
    }
    let layout = scenario.layout(config.isd_m)?;
    let sectors = layout.sector_geometries(&config.uptilts_deg)?;
    let drops: Vec<DropResult> = (0..n_drops)
        .into_par_iter()
        .map(|i| {
            let drop = geometry::drop_aircraft(&layout, scenario.aircraft_per_drop, scenario.altitude_m, drop_seed(seed, i))?;
            simulate_drop(scenario, &layout, &sectors, &drop, config.load_mbps)
        })
        .collect::<Result<_>>()?;

    let mut throughput = Vec::with_capacity(n_drops * scenario.aircraft_per_drop);
    let mut sinr = Vec::with_capacity(n_drops * scenario.aircraft_per_drop);
    let mut ru_sum = 0.0;
    for d in &drops {
        throughput.extend_from_slice(&d.throughput_mbps);
        sinr.extend_from_slice(&d.sinr_db);
        ru_sum += d.rho.iter().sum::<f64>() / d.rho.len() as f64;
    }
    let t_x_mbps = percentile(&throughput, scenario.percentile)?;
    Ok(SimResult {
        throughput_samples_mbps: throughput,
        sinr_samples_db: sinr,
        x_percentile: scenario.percentile,
        t_x_mbps,
        mean_ru: ru_sum / n_drops as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]]) -> PowerMatrix {
        PowerMatrix {
            n_users: rows.len(),
            n_sectors: rows[0].len(),
            mw: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[10.0, 20.0, 30.0, 40.0], 50.0).unwrap(), 20.0);
        assert_eq!(percentile(&[40.0, 10.0, 30.0, 20.0], 100.0).unwrap(), 40.0);
        assert_eq!(percentile(&[40.0, 10.0, 30.0, 20.0], 1.0).unwrap(), 10.0);
        for x in [0.1, 37.0, 50.0, 100.0] {
            assert_eq!(percentile(&[7.0], x).unwrap(), 7.0);
        }
        assert!(matches!(percentile(&[], 50.0), Err(Error::Domain(_))));
        assert!(percentile(&[1.0], 0.0).is_err());
    }

    #[test]
    fn median_of_uniform_sample_concentrates() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        assert!((percentile(&xs, 50.0).unwrap() - 0.5).abs() <= 0.02);
    }

    #[test]
    fn throughput_map() {
        let link = LinkBudget::default();
        let lm = LoadModel::default();
        assert_relative_eq!(user_throughput_mbps(0.0, 1, &link, &lm), 75.0, epsilon = 1e-9);
        assert_eq!(user_throughput_mbps(-20.0, 1, &link, &lm), 0.0);
        assert!(0.75 * (1.0f64 + 1e4).log2() > 7.8);
        assert_relative_eq!(user_throughput_mbps(40.0, 1, &link, &lm), 780.0, epsilon = 1e-9);
        assert_relative_eq!(user_throughput_mbps(40.0, 3, &link, &lm), 260.0, epsilon = 1e-9);
    }

    #[test]
    fn sinr_limits() {
        let p = matrix(&[&[1.0, 1.0, 1.0]]);
        let noise = 1e-9;
        let snr = radio::mw_to_dbm(1.0 / noise);
        assert_eq!(sinr_db(&p, 0, 0, &[0.0, 0.0, 0.0], noise), snr);
        let s = sinr_db(&p, 0, 0, &[1.0, 1.0, 1.0], noise);
        assert!((s + 10.0 * 2f64.log10()).abs() < 1e-6);
        for rho in [[0.3, 0.2, 0.9], [1.0, 0.0, 0.5]] {
            assert!(sinr_db(&p, 0, 0, &rho, noise) <= snr);
        }
    }

    #[test]
    fn association_is_argmax_with_low_index_ties() {
        let p = matrix(&[&[1.0, 3.0, 2.0], &[5.0, 5.0, 1.0], &[0.1, 0.2, 0.3]]);
        assert_eq!(associate(&p), vec![1, 0, 2]);
    }

    /// One cell, one aircraft whose interference-free rate is 400 Mbps: the
    /// fixed point is l/400.
    #[test]
    fn single_user_fixed_point() {
        let link = LinkBudget::default();
        let lm = LoadModel {
            fixed_point_tol: 1e-12,
            fixed_point_max_iters: 200,
            ..LoadModel::default()
        };
        // SE = 4 bps/Hz  <=>  0.75·log2(1+snr) = 4
        let snr = 2f64.powf(4.0 / 0.75) - 1.0;
        let noise = 1e-9;
        let p = matrix(&[&[snr * noise]]);
        let sol = solve_load_coupling(&p, &[0], 40.0, noise, &link, &lm).unwrap();
        assert_relative_eq!(sol.rho[0], 0.1, epsilon = 1e-9);
        let sol = solve_load_coupling(&p, &[0], 1e-9, noise, &link, &lm).unwrap();
        assert!(sol.rho[0] < 1e-9);
    }

    #[test]
    fn symmetric_cells_share_utilisation() {
        let link = LinkBudget::default();
        let lm = LoadModel::default();
        let noise = 1e-9;
        let p = matrix(&[&[1e-6, 1e-8], &[1e-8, 1e-6], &[2e-7, 3e-9], &[3e-9, 2e-7]]);
        let sol = solve_load_coupling(&p, &[0, 1, 0, 1], 30.0, noise, &link, &lm).unwrap();
        assert_relative_eq!(sol.rho[0], sol.rho[1], epsilon = 1e-12);
        assert!(sol.rho[0] > 0.0 && sol.rho[0] < 1.0);
        let f = load_map(&p, &[0, 1, 0, 1], &sol.rho, 30.0, noise, &link, &lm);
        for (a, b) in f.iter().zip(&sol.rho) {
            assert!((a - b).abs() < lm.fixed_point_tol);
        }
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let link = LinkBudget::default();
        let lm = LoadModel {
            fixed_point_max_iters: 1,
            fixed_point_tol: 1e-15,
            ..LoadModel::default()
        };
        let p = matrix(&[&[1e-6, 1e-7], &[1e-7, 1e-6]]);
        match solve_load_coupling(&p, &[0, 1], 20.0, 1e-9, &link, &lm) {
            Err(Error::NonConvergence { last_iterate, .. }) => assert_eq!(last_iterate.len(), 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    fn small_scenario(sectors: usize) -> NetworkScenario {
        NetworkScenario {
            aircraft_per_drop: 40,
            n_drops: 3,
            ..NetworkScenario::new(sectors)
        }
    }

    #[test]
    fn overhead_aircraft_attaches_to_site_below() {
        let sc = small_scenario(1);
        let layout = sc.layout(20_000.0).unwrap();
        let sectors = layout.sector_geometries(&[90.0]).unwrap();
        for site in [0, 4, 13] {
            let drop = AircraftDrop {
                positions: vec![layout.site_positions[site]],
                altitude_m: 12_000.0,
                seed: 0,
            };
            let p = received_powers(&drop, &layout, &sectors, &sc.array, &sc.link).unwrap();
            assert_eq!(associate(&p), vec![site]);
        }
    }

    /// Exhaustive re-derivation of the association from the link-budget
    /// primitives, independent of the power-matrix path.
    #[test]
    fn association_matches_exhaustive_scan() {
        let sc = small_scenario(3);
        let layout = sc.layout(40_000.0).unwrap();
        let sectors = layout.sector_geometries(&[20.0, 45.0, 70.0]).unwrap();
        let drop = geometry::drop_aircraft(&layout, 60, 12_000.0, 77).unwrap();
        let p = received_powers(&drop, &layout, &sectors, &sc.array, &sc.link).unwrap();
        let serving = associate(&p);
        for (u, &rx) in drop.positions.iter().enumerate() {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (j, s) in sectors.iter().enumerate() {
                let site = layout.site_positions[s.site_index];
                let eff = layout
                    .cluster_shift_vectors
                    .iter()
                    .map(|v| site + *v)
                    .min_by(|a, b| a.distance(rx).total_cmp(&b.distance(rx)))
                    .unwrap();
                let a = geometry::elevation_azimuth(eff, layout.bs_height_m, rx, 12_000.0);
                let g = radio::array_gain_db(a.elevation_deg, a.azimuth_deg, s, &sc.array, sc.link.carrier_hz);
                let pw = radio::rx_power_dbm(&sc.link, g, radio::pathloss_db(a.slant_range_m, sc.link.carrier_hz).unwrap());
                if pw > best.0 {
                    best = (pw, j);
                }
            }
            assert_eq!(serving[u], best.1, "aircraft {u}");
            let row = p.row(u);
            assert!(row.iter().all(|&x| x <= row[serving[u]]));
        }
    }

    #[test]
    fn evaluate_is_deterministic() {
        let sc = small_scenario(1);
        let cfg = DeploymentConfig::new(40_000.0, vec![45.0], 30.0);
        let a = evaluate(&sc, &cfg, 3, 11).unwrap();
        let b = evaluate(&sc, &cfg, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_ru >= 0.0 && a.mean_ru <= 1.0);
        assert_eq!(a.t_x_mbps, percentile(&a.throughput_samples_mbps, 50.0).unwrap());
        let c = evaluate(&sc, &cfg, 3, 12).unwrap();
        assert_ne!(a.throughput_samples_mbps, c.throughput_samples_mbps);
    }

    #[test]
    fn evaluate_rejects_out_of_bounds() {
        let sc = small_scenario(1);
        for cfg in [
            DeploymentConfig::new(40_000.0, vec![95.0], 30.0),
            DeploymentConfig::new(10_000.0, vec![45.0], 30.0),
            DeploymentConfig::new(40_000.0, vec![45.0], 5.0),
            DeploymentConfig::new(40_000.0, vec![45.0, 10.0], 30.0),
        ] {
            assert!(matches!(evaluate(&sc, &cfg, 1, 0), Err(Error::Config(_))), "{cfg:?}");
        }
        let err = evaluate(&sc, &DeploymentConfig::new(40_000.0, vec![95.0], 30.0), 1, 0).unwrap_err();
        assert!(err.to_string().contains("theta_0"));
    }

    #[test]
    fn single_site_sinr_equals_snr() {
        let sc = NetworkScenario {
            single_site: true,
            ..small_scenario(1)
        };
        let layout = sc.layout(20_000.0).unwrap();
        let sectors = layout.sector_geometries(&[60.0]).unwrap();
        let drop = geometry::drop_aircraft(&layout, 30, 12_000.0, 3).unwrap();
        let r = simulate_drop(&sc, &layout, &sectors, &drop, 30.0).unwrap();
        let p = received_powers(&drop, &layout, &sectors, &sc.array, &sc.link).unwrap();
        for (u, s) in r.sinr_db.iter().enumerate() {
            let snr = radio::mw_to_dbm(p.row(u)[0] / sc.noise_mw());
            assert!((s - snr).abs() <= 1e-12 * snr.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn percentile_monotone_in_x(xs in prop::collection::vec(-1e3f64..1e3, 1..60), a in 0.5f64..100.0, b in 0.5f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(percentile(&xs, lo).unwrap() <= percentile(&xs, hi).unwrap());
        }

        #[test]
        fn returned_fixed_point_has_small_residual(seed in any::<u64>(), load in 1f64..80.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (users, cells) = (12, 4);
            let mw: Vec<f64> = (0..users * cells).map(|_| 10f64.powf(rng.gen_range(-9.0..-5.0))).collect();
            let p = PowerMatrix { n_users: users, n_sectors: cells, mw };
            let serving = associate(&p);
            let link = LinkBudget::default();
            let lm = LoadModel { fixed_point_max_iters: 2000, ..LoadModel::default() };
            let sol = solve_load_coupling(&p, &serving, load, 1e-9, &link, &lm).unwrap();
            let f = load_map(&p, &serving, &sol.rho, load, 1e-9, &link, &lm);
            let res = f.iter().zip(&sol.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(res <= lm.fixed_point_tol);
            prop_assert!(sol.rho.iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }
}
