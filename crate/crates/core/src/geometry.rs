//! Site layout, wrap-around and aircraft placement.
//!
//! The network is the classic 19-site two-ring hexagonal cluster. Sites sit
//! on a triangular lattice with spacing equal to the inter-site distance
//! (ISD); each site owns a pointy-top hexagonal cell. Copies of the cluster
//! tile the plane on a coarser lattice spanned by `3·a1 + 2·a2` and its 60°
//! rotations (|shift| = √19·ISD), which is what wrap-around exploits.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of sites in the cluster.
pub const SITE_COUNT: usize = 19;

pub const DEFAULT_BS_HEIGHT_M: f64 = 35.0;
pub const DEFAULT_ALTITUDE_M: f64 = 12_000.0;

/// Sector counts the deployment model supports.
pub const SUPPORTED_SECTOR_COUNTS: [usize; 3] = [1, 3, 4];

/// A point (or displacement) on the ground plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotated(self, angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

pub fn validate_sector_count(sectors: usize) -> Result<()> {
    if SUPPORTED_SECTOR_COUNTS.contains(&sectors) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "sector count must be one of {SUPPORTED_SECTOR_COUNTS:?}, got {sectors}"
        )))
    }
}

/// The 19-site cluster together with its wrap-around translations.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLayout {
    pub isd_m: f64,
    pub sectors: usize,
    pub bs_height_m: f64,
    pub site_positions: Vec<Point2>,
    /// Index 0 is the identity; 1..=6 are the neighbouring cluster copies.
    pub cluster_shift_vectors: [Point2; 7],
}

/// Orientation of one sector antenna.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorGeometry {
    pub site_index: usize,
    pub sector_index: usize,
    pub boresight_azimuth_deg: f64,
    /// Mechanical up-tilt above the horizon; 90° points at the zenith.
    pub uptilt_deg: f64,
}

/// One Monte Carlo realisation of aircraft positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftDrop {
    pub positions: Vec<Point2>,
    pub altitude_m: f64,
    pub seed: u64,
}

/// Elevation/azimuth of a receiver as seen from a transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkAngles {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub slant_range_m: f64,
}

/// Builds the 19-site cluster: center, first ring of 6, second ring of 12.
pub fn build_layout(isd_m: f64, sectors: usize) -> Result<SiteLayout> {
    if !(isd_m.is_finite() && isd_m > 0.0) {
        return Err(Error::Config(format!(
            "inter-site distance must be positive, got {isd_m}"
        )));
    }
    validate_sector_count(sectors)?;

    let a1 = Point2::new(isd_m, 0.0);
    let a2 = Point2::new(0.5 * isd_m, 0.5 * 3f64.sqrt() * isd_m);

    // Axial coordinates within hex distance 2, ordered by ring then angle.
    let mut cells: Vec<(i32, f64, Point2)> = Vec::with_capacity(SITE_COUNT);
    for q in -2i32..=2 {
        for r in -2i32..=2 {
            let ring = q.abs().max(r.abs()).max((q + r).abs());
            if ring > 2 {
                continue;
            }
            let p = a1 * f64::from(q) + a2 * f64::from(r);
            let mut angle = p.y.atan2(p.x).to_degrees();
            if angle < -1e-9 {
                angle += 360.0;
            }
            cells.push((ring, angle.max(0.0), p));
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let site_positions: Vec<Point2> = cells.into_iter().map(|c| c.2).collect();
    debug_assert_eq!(site_positions.len(), SITE_COUNT);

    let base_shift = a1 * 3.0 + a2 * 2.0;
    let mut cluster_shift_vectors = [Point2::ORIGIN; 7];
    for (k, shift) in cluster_shift_vectors.iter_mut().enumerate().skip(1) {
        *shift = base_shift.rotated((k - 1) as f64 * PI / 3.0);
    }

    Ok(SiteLayout {
        isd_m,
        sectors,
        bs_height_m: DEFAULT_BS_HEIGHT_M,
        site_positions,
        cluster_shift_vectors,
    })
}

impl SiteLayout {
    pub fn with_bs_height(mut self, bs_height_m: f64) -> Self {
        self.bs_height_m = bs_height_m;
        self
    }

    /// Circumradius of a single hexagonal cell.
    pub fn cell_radius_m(&self) -> f64 {
        self.isd_m / 3f64.sqrt()
    }

    /// Sector orientations for every site, in (site, sector) order.
    ///
    /// The same tilt vector applies at every site.
    pub fn sector_geometries(&self, uptilts_deg: &[f64]) -> Result<Vec<SectorGeometry>> {
        if uptilts_deg.len() != self.sectors {
            return Err(Error::Config(format!(
                "expected {} up-tilt angles, got {}",
                self.sectors,
                uptilts_deg.len()
            )));
        }
        for (i, &t) in uptilts_deg.iter().enumerate() {
            if !(0.0..=90.0).contains(&t) {
                return Err(Error::Config(format!(
                    "up-tilt theta_{i} = {t} outside [0, 90] degrees"
                )));
            }
        }
        let step = 360.0 / self.sectors as f64;
        let mut out = Vec::with_capacity(self.site_positions.len() * self.sectors);
        for site_index in 0..self.site_positions.len() {
            for (sector_index, &uptilt_deg) in uptilts_deg.iter().enumerate() {
                out.push(SectorGeometry {
                    site_index,
                    sector_index,
                    boresight_azimuth_deg: sector_index as f64 * step,
                    uptilt_deg,
                });
            }
        }
        Ok(out)
    }

    /// True when `p` lies in the hexagonal cell of site `site`.
    pub fn in_cell(&self, site: usize, p: Point2) -> bool {
        in_hexagon(p - self.site_positions[site], self.isd_m)
    }

    /// True when `p` lies in the union of the 19 cells.
    pub fn in_region(&self, p: Point2) -> bool {
        (0..self.site_positions.len()).any(|s| self.in_cell(s, p))
    }

    /// Restrict the layout to its center site (test scenarios only).
    pub fn single_site(mut self) -> Self {
        self.site_positions.truncate(1);
        self
    }
}

/// Pointy-top hexagon of apothem `isd/2` centered at the origin.
fn in_hexagon(d: Point2, isd_m: f64) -> bool {
    let half = 0.5 * isd_m * (1.0 + 1e-12);
    (0..3).all(|k| {
        let n = Point2::new(1.0, 0.0).rotated(k as f64 * PI / 3.0);
        d.dot(n).abs() <= half
    })
}

/// Planar distance from `rx` to the nearest translated copy of `tx`.
///
/// Returns the distance and the coordinate of the copy it was measured to.
/// For receivers inside the cluster this is the minimum over the seven
/// cluster copies; receivers outside are first folded back by whole cluster
/// periods, so the result only depends on `rx` modulo the cluster lattice.
pub fn wrap_distance(tx: Point2, rx: Point2, layout: &SiteLayout) -> (f64, Point2) {
    let shifts = &layout.cluster_shift_vectors[1..];
    let mut v = rx - tx;
    let mut best = v.norm_sq();
    loop {
        let mut improved = None;
        for &s in shifts {
            let cand = (v - s).norm_sq();
            if cand < best * (1.0 - 1e-12) {
                best = cand;
                improved = Some(s);
            }
        }
        match improved {
            Some(s) => v = v - s,
            None => break,
        }
    }
    (v.norm(), rx - v)
}

/// Geometry of the link from a transmitter at `tx_height_m` to an aircraft.
pub fn elevation_azimuth(tx: Point2, tx_height_m: f64, rx: Point2, rx_altitude_m: f64) -> LinkAngles {
    let d = rx - tx;
    let horizontal = d.norm();
    let vertical = rx_altitude_m - tx_height_m;
    let elevation_deg = vertical.atan2(horizontal).to_degrees();
    let mut azimuth_deg = d.y.atan2(d.x).to_degrees();
    if azimuth_deg < 0.0 {
        azimuth_deg += 360.0;
    }
    if azimuth_deg >= 360.0 {
        azimuth_deg -= 360.0;
    }
    LinkAngles {
        elevation_deg,
        azimuth_deg,
        slant_range_m: horizontal.hypot(vertical),
    }
}

/// Drops `count` aircraft uniformly over the cluster footprint.
///
/// Sampling picks a cell uniformly, then a point uniformly inside it by
/// rejection from the cell's bounding box. The generator is ChaCha8 seeded
/// from `seed`.
pub fn drop_aircraft(layout: &SiteLayout, count: usize, altitude_m: f64, seed: u64) -> Result<AircraftDrop> {
    if count == 0 {
        return Err(Error::Config("aircraft count must be positive".into()));
    }
    if !(altitude_m > layout.bs_height_m) {
        return Err(Error::Config(format!(
            "aircraft altitude {altitude_m} m must exceed base-station height {} m",
            layout.bs_height_m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_w = 0.5 * layout.isd_m;
    let half_h = layout.cell_radius_m();
    let n_sites = layout.site_positions.len();
    let positions = (0..count)
        .map(|_| {
            let site = rng.gen_range(0..n_sites);
            loop {
                let d = Point2::new(rng.gen_range(-half_w..half_w), rng.gen_range(-half_h..half_h));
                if in_hexagon(d, layout.isd_m) {
                    break layout.site_positions[site] + d;
                }
            }
        })
        .collect();
    Ok(AircraftDrop {
        positions,
        altitude_m,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn center_and_first_ring() {
        let layout = build_layout(20_000.0, 1).unwrap();
        assert_eq!(layout.site_positions.len(), 19);
        assert_eq!(layout.site_positions[0], Point2::ORIGIN);
        for p in &layout.site_positions[1..7] {
            assert_relative_eq!(p.norm(), 20_000.0, max_relative = 1e-12);
        }
        for p in &layout.site_positions[7..] {
            assert!(p.norm() > 20_000.0 * 1.5);
        }
    }

    #[test]
    fn nearest_neighbour_spacing_is_isd() {
        let layout = build_layout(37_000.0, 3).unwrap();
        for (i, a) in layout.site_positions.iter().enumerate() {
            let nn = layout
                .site_positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| a.distance(*b))
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(nn, 37_000.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn shift_vectors_are_a_hexagonal_star() {
        let layout = build_layout(10_000.0, 1).unwrap();
        let s = &layout.cluster_shift_vectors;
        assert_eq!(s[0], Point2::ORIGIN);
        let m = s[1].norm();
        assert_relative_eq!(m, 10_000.0 * 19f64.sqrt(), max_relative = 1e-12);
        for k in 1..7 {
            assert_relative_eq!(s[k].norm(), m, max_relative = 1e-12);
            let next = s[k % 6 + 1];
            let cos = s[k].dot(next) / (m * m);
            assert_relative_eq!(cos, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(build_layout(20_000.0, 2), Err(Error::Config(_))));
        assert!(matches!(build_layout(0.0, 1), Err(Error::Config(_))));
        let layout = build_layout(20_000.0, 1).unwrap();
        assert!(matches!(drop_aircraft(&layout, 0, 12_000.0, 1), Err(Error::Config(_))));
        assert!(layout.sector_geometries(&[95.0]).is_err());
        assert!(layout.sector_geometries(&[10.0, 20.0]).is_err());
    }

    #[test]
    fn sector_azimuths_partition_the_circle() {
        let layout = build_layout(20_000.0, 4).unwrap();
        let sectors = layout.sector_geometries(&[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(sectors.len(), 19 * 4);
        let az: Vec<f64> = sectors[..4].iter().map(|s| s.boresight_azimuth_deg).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
        assert_eq!(sectors[5].site_index, 1);
        assert_eq!(sectors[5].sector_index, 1);
        assert_eq!(sectors[5].uptilt_deg, 20.0);
    }

    #[test]
    fn coincident_points_have_zero_wrapped_distance() {
        let layout = build_layout(20_000.0, 1).unwrap();
        let p = layout.site_positions[11];
        let (d, eff) = wrap_distance(p, p, &layout);
        assert_eq!(d, 0.0);
        assert_eq!(eff, p);
    }

    #[test]
    fn opposite_edges_wrap_to_a_shorter_link() {
        let layout = build_layout(20_000.0, 1).unwrap();
        let east = layout
            .site_positions
            .iter()
            .copied()
            .max_by(|a, b| a.x.total_cmp(&b.x))
            .unwrap();
        let west = layout
            .site_positions
            .iter()
            .copied()
            .min_by(|a, b| a.x.total_cmp(&b.x))
            .unwrap();
        let rx = east + Point2::new(0.4 * layout.isd_m, 0.0);
        let (wrapped, eff) = wrap_distance(west, rx, &layout);
        assert!(wrapped < rx.distance(west));
        assert_relative_eq!(wrapped, rx.distance(eff), max_relative = 1e-12);
    }

    /// Brute-force tiling check: the seven translated clusters land on the
    /// site lattice without overlap and cover every lattice point within
    /// three rings of the origin.
    #[test]
    fn shifted_clusters_tile_the_site_lattice() {
        let isd = 80_000.0;
        let layout = build_layout(isd, 1).unwrap();
        let a1 = Point2::new(isd, 0.0);
        let a2 = Point2::new(0.5 * isd, 0.5 * 3f64.sqrt() * isd);
        let mut lattice = Vec::new();
        for q in -12i32..=12 {
            for r in -12i32..=12 {
                lattice.push((q, r, a1 * f64::from(q) + a2 * f64::from(r)));
            }
        }
        let snap = |p: Point2| -> (i32, i32) {
            let (q, r, best) = lattice
                .iter()
                .min_by(|a, b| a.2.distance(p).total_cmp(&b.2.distance(p)))
                .copied()
                .unwrap();
            assert!(best.distance(p) < 1e-6 * isd, "not on lattice: {p:?}");
            (q, r)
        };
        let mut covered = std::collections::HashSet::new();
        for &s in &layout.cluster_shift_vectors {
            for &site in &layout.site_positions {
                assert!(covered.insert(snap(site + s)), "overlap at {:?}", site + s);
            }
        }
        assert_eq!(covered.len(), 7 * 19);
        for &(q, r, _) in &lattice {
            let ring = q.abs().max(r.abs()).max((q + r).abs());
            if ring <= 3 {
                assert!(covered.contains(&(q, r)), "hole at ({q},{r})");
            }
        }
    }

    #[test]
    fn overhead_and_diagonal_angles() {
        let tx = Point2::new(1_000.0, -2_000.0);
        let a = elevation_azimuth(tx, 35.0, tx, 12_000.0);
        assert_eq!(a.elevation_deg, 90.0);
        assert_relative_eq!(a.slant_range_m, 11_965.0);

        let rx = tx + Point2::new(0.0, 11_965.0);
        let a = elevation_azimuth(tx, 35.0, rx, 12_000.0);
        assert_relative_eq!(a.elevation_deg, 45.0, epsilon = 1e-12);
        assert_relative_eq!(a.azimuth_deg, 90.0, epsilon = 1e-12);

        let rx = tx + Point2::new(11_965.0, 0.0);
        let a = elevation_azimuth(tx, 35.0, rx, 12_000.0);
        let expected = (2.0 * 11_965.0f64 * 11_965.0).sqrt();
        assert_relative_eq!(a.slant_range_m, expected, max_relative = 1e-12);
        assert!((a.slant_range_m - 16_921.07).abs() < 0.01);

        let a = elevation_azimuth(tx, 35.0, tx + Point2::new(0.0, -5.0), 12_000.0);
        assert_relative_eq!(a.azimuth_deg, 270.0, epsilon = 1e-9);
    }

    #[test]
    fn drops_are_deterministic_and_inside_region() {
        let layout = build_layout(20_000.0, 1).unwrap();
        let a = drop_aircraft(&layout, 1000, 12_000.0, 42).unwrap();
        let b = drop_aircraft(&layout, 1000, 12_000.0, 42).unwrap();
        assert_eq!(a, b);
        let c = drop_aircraft(&layout, 1000, 12_000.0, 43).unwrap();
        assert_ne!(a.positions, c.positions);
        let hull = 2.0 * layout.isd_m + layout.cell_radius_m();
        for &p in &a.positions {
            assert!(layout.in_region(p));
            assert!(p.norm() <= hull * (1.0 + 1e-12));
        }
    }

    /// Mean position against the analytic moments of a uniform law over the
    /// union of 19 regular hexagons (per-axis second moment of a hexagon with
    /// circumradius R about its center is 5R²/24).
    #[test]
    fn drop_mean_matches_uniform_moments() {
        let layout = build_layout(20_000.0, 1).unwrap();
        let n = 1000;
        let drop = drop_aircraft(&layout, n, 12_000.0, 9).unwrap();
        let r = layout.cell_radius_m();
        let hex_var = 5.0 * r * r / 24.0;
        let var_x = layout.site_positions.iter().map(|p| p.x * p.x + hex_var).sum::<f64>() / 19.0;
        let var_y = layout.site_positions.iter().map(|p| p.y * p.y + hex_var).sum::<f64>() / 19.0;
        let mean_x = drop.positions.iter().map(|p| p.x).sum::<f64>() / n as f64;
        let mean_y = drop.positions.iter().map(|p| p.y).sum::<f64>() / n as f64;
        assert!(mean_x.abs() <= 3.0 * (var_x / n as f64).sqrt());
        assert!(mean_y.abs() <= 3.0 * (var_y / n as f64).sqrt());
    }

    fn brute_force_min(tx: Point2, rx: Point2, layout: &SiteLayout) -> f64 {
        // Two rings of cluster translations.
        let s = &layout.cluster_shift_vectors;
        let mut best = f64::INFINITY;
        for a in s {
            for b in s {
                best = best.min((tx + *a + *b).distance(rx));
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn wrapped_never_exceeds_direct(seed in any::<u64>(), site in 0usize..19) {
            let layout = build_layout(20_000.0, 1).unwrap();
            let rx = drop_aircraft(&layout, 1, 12_000.0, seed).unwrap().positions[0];
            let tx = layout.site_positions[site];
            let (d, eff) = wrap_distance(tx, rx, &layout);
            prop_assert!(d <= tx.distance(rx) + 1e-9);
            let seven = layout
                .cluster_shift_vectors
                .iter()
                .map(|s| (tx + *s).distance(rx))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(d <= seven + 1e-9);
            prop_assert!((d - brute_force_min(tx, rx, &layout)).abs() <= 1e-9 * layout.isd_m);
            prop_assert!((eff.distance(rx) - d).abs() <= 1e-9 * layout.isd_m);
        }

        #[test]
        fn wrapped_distances_invariant_under_cluster_shift(seed in any::<u64>(), k in 1usize..7) {
            let layout = build_layout(40_000.0, 1).unwrap();
            let rx = drop_aircraft(&layout, 1, 12_000.0, seed).unwrap().positions[0];
            let moved = rx + layout.cluster_shift_vectors[k];
            let mut a: Vec<f64> = layout.site_positions.iter().map(|&t| wrap_distance(t, rx, &layout).0).collect();
            let mut b: Vec<f64> = layout.site_positions.iter().map(|&t| wrap_distance(t, moved, &layout).0).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-6 * x.max(1.0));
            }
        }

        #[test]
        fn wrapped_distance_has_sixfold_symmetry(seed in any::<u64>(), site in 0usize..19, k in 1i32..6) {
            let layout = build_layout(20_000.0, 1).unwrap();
            let rx = drop_aircraft(&layout, 1, 12_000.0, seed).unwrap().positions[0];
            let tx = layout.site_positions[site];
            let angle = f64::from(k) * PI / 3.0;
            let d0 = wrap_distance(tx, rx, &layout).0;
            let d1 = wrap_distance(tx.rotated(angle), rx.rotated(angle), &layout).0;
            prop_assert!((d0 - d1).abs() <= 1e-6 * d0.max(1.0));
        }

        #[test]
        fn elevation_in_open_upper_range(x in -2e5f64..2e5, y in -2e5f64..2e5) {
            let a = elevation_azimuth(Point2::ORIGIN, 35.0, Point2::new(x, y), 12_000.0);
            prop_assert!(a.elevation_deg > 0.0 && a.elevation_deg <= 90.0);
            prop_assert!((0.0..360.0).contains(&a.azimuth_deg));
        }

        #[test]
        fn layout_scales_linearly(isd in 1_000f64..200_000.0) {
            let a = build_layout(isd, 1).unwrap();
            let b = build_layout(2.0 * isd, 1).unwrap();
            for (p, q) in a.site_positions.iter().zip(&b.site_positions) {
                prop_assert!((*p * 2.0).distance(*q) <= 1e-9 * isd);
            }
        }
    }
}
