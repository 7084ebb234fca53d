//! Antenna patterns and link budget.
//!
//! Each sector carries an `n_rows × n_cols` uniform planar array whose
//! boresight is mechanically tilted `uptilt_deg` above the horizon at the
//! sector azimuth. Array weights are uniform and co-phased, so the tilt is
//! the only steering.
//!
//! Directions are handled in the sector's local frame:
//!
//! * `x'` along boresight,
//! * `y'` horizontal, perpendicular to boresight (array columns),
//! * `z'` completing the right-handed frame (array rows).
//!
//! The element pattern is the usual parabolic sector model, evaluated on the
//! local vertical offset `asin(z')` and local azimuth `atan2(y', x')`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SectorGeometry;

/// Planar array and element-pattern parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub spacing_wavelengths: f64,
    pub element_gain_max_dbi: f64,
    pub element_hpbw_deg: f64,
    pub element_front_back_db: f64,
    pub element_sla_db: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_rows: 4,
            n_cols: 4,
            spacing_wavelengths: 0.5,
            element_gain_max_dbi: 8.0,
            element_hpbw_deg: 65.0,
            element_front_back_db: 30.0,
            element_sla_db: 30.0,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Config("array must have at least one row and one column".into()));
        }
        if !(self.spacing_wavelengths > 0.0) {
            return Err(Error::Config("array element spacing must be positive".into()));
        }
        if !(self.element_hpbw_deg > 0.0) {
            return Err(Error::Config("element beamwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Peak composite gain: element maximum plus coherent array gain.
    pub fn peak_gain_dbi(&self) -> f64 {
        self.element_gain_max_dbi + 10.0 * (self.element_count() as f64).log10()
    }
}

/// Transmitter power, carrier and receiver noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub noise_psd_dbm_hz: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 49.0,
            carrier_hz: 3.5e9,
            bandwidth_hz: 1e8,
            noise_figure_db: 9.0,
            noise_psd_dbm_hz: -174.0,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::Config("carrier frequency must be positive".into()));
        }
        Ok(())
    }
}

/// Parabolic element pattern in dBi.
///
/// `theta` is the vertical offset from boresight and `phi` the horizontal
/// offset, both in degrees.
pub fn element_gain_db(theta_off_boresight_deg: f64, phi_off_boresight_deg: f64, cfg: &ArrayConfig) -> f64 {
    let hpbw = cfg.element_hpbw_deg;
    let a_v = -(12.0 * (theta_off_boresight_deg / hpbw).powi(2)).min(cfg.element_sla_db);
    let a_h = -(12.0 * (phi_off_boresight_deg / hpbw).powi(2)).min(cfg.element_front_back_db);
    cfg.element_gain_max_dbi - (-(a_v + a_h)).min(cfg.element_front_back_db)
}

/// Unit direction vector in the global east-north-up frame.
pub fn direction(elevation_deg: f64, azimuth_deg: f64) -> [f64; 3] {
    let (se, ce) = elevation_deg.to_radians().sin_cos();
    let (sa, ca) = azimuth_deg.to_radians().sin_cos();
    [ce * ca, ce * sa, se]
}

/// Global direction expressed in the frame of an antenna whose boresight
/// points at (`tilt_deg` elevation, `azimuth_deg`).
pub fn to_antenna_frame(dir: [f64; 3], azimuth_deg: f64, tilt_deg: f64) -> [f64; 3] {
    let (sa, ca) = azimuth_deg.to_radians().sin_cos();
    let u1x = ca * dir[0] + sa * dir[1];
    let u1y = -sa * dir[0] + ca * dir[1];
    let u1z = dir[2];
    let (st, ct) = tilt_deg.to_radians().sin_cos();
    [ct * u1x + st * u1z, u1y, -st * u1x + ct * u1z]
}

/// `|Σ exp(j·k·d·m·u)|²` over `n` elements centered on the array axis.
fn line_array_power(n: usize, spacing_wavelengths: f64, u: f64) -> f64 {
    let psi = 2.0 * std::f64::consts::PI * spacing_wavelengths * u;
    let center = (n as f64 - 1.0) / 2.0;
    let (mut re, mut im) = (0.0, 0.0);
    for m in 0..n {
        let (s, c) = (psi * (m as f64 - center)).sin_cos();
        re += c;
        im += s;
    }
    re * re + im * im
}

/// Array-factor gain in dB for a direction given in the antenna frame.
///
/// Normalised so the co-phased peak equals `10·log10(n_rows·n_cols)`.
pub fn array_factor_db(local: [f64; 3], cfg: &ArrayConfig) -> f64 {
    let p = line_array_power(cfg.n_cols, cfg.spacing_wavelengths, local[1])
        * line_array_power(cfg.n_rows, cfg.spacing_wavelengths, local[2]);
    10.0 * (p / cfg.element_count() as f64).max(1e-30).log10()
}

/// Composite sector gain towards (`elevation_deg`, `azimuth_deg`).
///
/// The carrier is accepted for interface symmetry; with spacing expressed in
/// wavelengths the pattern is frequency independent.
pub fn array_gain_db(
    elevation_deg: f64,
    azimuth_deg: f64,
    sector: &SectorGeometry,
    cfg: &ArrayConfig,
    _carrier_hz: f64,
) -> f64 {
    let local = to_antenna_frame(
        direction(elevation_deg, azimuth_deg),
        sector.boresight_azimuth_deg,
        sector.uptilt_deg,
    );
    let theta_off = local[2].clamp(-1.0, 1.0).asin().to_degrees();
    let phi_off = local[1].atan2(local[0]).to_degrees();
    element_gain_db(theta_off, phi_off, cfg) + array_factor_db(local, cfg)
}

/// Free-space path loss in dB (range in meters, carrier in Hz).
pub fn pathloss_db(slant_range_m: f64, carrier_hz: f64) -> Result<f64> {
    if !(slant_range_m > 0.0) {
        return Err(Error::Domain(format!("slant range must be positive, got {slant_range_m}")));
    }
    Ok(20.0 * slant_range_m.log10() + 20.0 * carrier_hz.log10() - 147.55)
}

/// Received power in dBm assuming an isotropic aircraft antenna.
pub fn rx_power_dbm(link: &LinkBudget, gain_db: f64, pathloss_db: f64) -> f64 {
    link.tx_power_dbm + gain_db - pathloss_db
}

/// Thermal noise over the full carrier bandwidth, in dBm.
pub fn noise_power_dbm(link: &LinkBudget) -> f64 {
    link.noise_psd_dbm_hz + 10.0 * link.bandwidth_hz.log10() + link.noise_figure_db
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}
