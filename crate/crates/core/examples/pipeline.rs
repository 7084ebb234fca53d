//! Sweep, train, optimise and verify for one sector with a fixed ISD.

use std::time::Instant;

use a2g_core::approximator::{self, TrainSettings};
use a2g_core::dataset::{self, SweepGrid};
use a2g_core::optimizer::{self, FixedParams, OptimizerSettings};
use a2g_core::simulator::NetworkScenario;

fn main() -> a2g_core::Result<()> {
    let scenario = NetworkScenario::new(1);
    let grid = SweepGrid {
        tilt_values_deg: (0..=9).map(|k| k as f64 * 10.0).collect(),
        ..SweepGrid::default_for(1)
    };
    let t0 = Instant::now();
    let data = dataset::generate(&scenario, &grid, 1)?;
    println!("{} rows in {:.1?}", data.rows.len(), t0.elapsed());

    let t0 = Instant::now();
    let fit = approximator::train(&data.rows, &scenario.bounds, 1, 50.0, &TrainSettings { seed: 2, ..Default::default() })?;
    let cdf = approximator::error_cdf(&fit.model, &fit.validation_rows)?;
    let range = {
        let t: Vec<f64> = data.rows.iter().map(|r| r.t_x_mbps).collect();
        t.iter().cloned().fold(f64::MIN, f64::max) - t.iter().cloned().fold(f64::MAX, f64::min)
    };
    println!(
        "trained in {:.1?}: held-out p95 error {:.2} Mbps, t50 range {range:.2} Mbps",
        t0.elapsed(),
        approximator::error_quantile(&cdf, 95.0)?
    );

    for isd in [20_000.0, 80_000.0] {
        let fixed = FixedParams::new().isd(isd).load(10.0, 1);
        let run = optimizer::train(&fit.model, &scenario.bounds, &fixed, &OptimizerSettings { seed: 3, ..Default::default() })?;
        let (best, score) = optimizer::select_best(&run.best, &fit.model)?;
        let verified = optimizer::verify(&best, &scenario, 1)?;
        let same_isd: Vec<_> = data.rows.iter().filter(|r| r.config.isd_m == isd).cloned().collect();
        let baseline = dataset::exhaustive_best(&same_isd)?;
        println!(
            "isd {} km: tilt {:.1} deg, surrogate {score:.2}, verified {:.2}, grid best {:.2} at tilt {}",
            isd / 1000.0,
            best.uptilts_deg[0],
            verified.t_x_mbps,
            baseline.t_x_mbps,
            baseline.config.uptilts_deg[0]
        );
    }
    Ok(())
}
