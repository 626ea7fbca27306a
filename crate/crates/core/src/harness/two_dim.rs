use serde::{Deserialize, Serialize};

use super::{Assertion, ExperimentReport, Scenario, ScenarioConfig};
use crate::analytic::{
    da_2d_solve, pretrain_2d_bounds, retrain_2d, AlphaRegionRow, AlphaRegionTable,
};
use crate::datasets::{Sizes, TwoDimSystem};
use crate::error::{Error, Result};
use crate::optimizers::{gauss_seidel_2d, SolverConfig, SolverStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoDimParams {
    pub retain: f64,
    pub forget: f64,
    pub r_ij: f64,
    pub lambda: f64,
    pub epsilons: Vec<f64>,
    /// `(|R|, |F|)` pairs compared for band width.
    pub compare_sizes: Vec<(f64, f64)>,
    pub chain_samples: usize,
    pub chain_tol: f64,
    pub gs_epsilons: Vec<f64>,
    pub gs_alphas: Vec<f64>,
    pub gs_tol: f64,
    pub solver_eta: f64,
}

/// `k / den` for each `k`; each value is the double nearest its decimal
/// form, so configs written out read back bit for bit.
fn steps(ks: std::ops::RangeInclusive<u32>, den: u32) -> Vec<f64> {
    ks.map(|k| f64::from(k) / f64::from(den)).collect()
}

impl Default for TwoDimParams {
    fn default() -> Self {
        TwoDimParams {
            retain: 70.0,
            forget: 30.0,
            r_ij: 1.0,
            lambda: 0.1,
            epsilons: steps(1..=19, 20),
            compare_sizes: vec![(80.0, 20.0), (70.0, 30.0), (50.0, 50.0)],
            chain_samples: 5,
            chain_tol: 1e-8,
            gs_epsilons: steps(1..=9, 10),
            gs_alphas: steps(1..=10, 10),
            gs_tol: 1e-8,
            solver_eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct WidthRow {
    retain: f64,
    forget: f64,
    forget_fraction: f64,
    max_band_width: f64,
    nonempty_count: usize,
}

#[derive(Debug, Clone, Serialize)]
struct ChainRow {
    epsilon: f64,
    alpha: f64,
    x_r: f64,
    x_d: f64,
    x_da: f64,
    y_r: f64,
    y_d: f64,
    y_da: f64,
    da_status: SolverStatus,
    holds: bool,
}

#[derive(Debug, Clone, Serialize)]
struct GaussSeidelRow {
    epsilon: f64,
    alpha: f64,
    iters: usize,
    residual: f64,
    x: f64,
    y: f64,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    inside_bounds: bool,
    y_le_x: bool,
    x_rising_y_falling: bool,
    x_falling_y_rising: bool,
}

fn band_width(table: &AlphaRegionTable) -> f64 {
    table
        .rows
        .iter()
        .map(|r| (r.alpha_r_gt_d - r.alpha_d_gt_da).max(0.0))
        .fold(0.0, f64::max)
}

/// Monotone directions of `(x_k, y_k)` from `k >= 1`.
fn directions(traj: &[(f64, f64)]) -> (bool, bool) {
    let tail = &traj[1.min(traj.len())..];
    let up = |a: f64, b: f64| b >= a - 1e-15;
    let rising = tail
        .windows(2)
        .all(|w| up(w[0].0, w[1].0) && up(w[1].1, w[0].1));
    let falling = tail
        .windows(2)
        .all(|w| up(w[1].0, w[0].0) && up(w[0].1, w[1].1));
    (rising, falling)
}

fn chain_row(row: &AlphaRegionRow, p: &TwoDimParams, solver: &SolverConfig) -> Result<ChainRow> {
    let alpha = 0.5 * (row.alpha_d_gt_da + row.alpha_r_gt_d.min(1.0));
    let sys = TwoDimSystem::new(row.epsilon, alpha, p.r_ij, p.retain, p.forget, p.lambda)?;
    let (x_r, y_r) = retrain_2d(&sys)?;
    let d = gauss_seidel_2d(&sys, &SolverConfig::default())?;
    let da = da_2d_solve(&sys, solver)?;
    let t = p.chain_tol;
    let holds = da.status == SolverStatus::Converged
        && x_r >= d.x - t
        && d.x >= da.x - t
        && y_r >= d.y - t
        && d.y >= da.y - t;
    Ok(ChainRow {
        epsilon: row.epsilon,
        alpha,
        x_r,
        x_d: d.x,
        x_da: da.x,
        y_r,
        y_d: d.y,
        y_da: da.y,
        da_status: da.status,
        holds,
    })
}

pub fn run_two_dim_region(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let p: TwoDimParams = cfg.resolve()?;
    let sizes = Sizes::new(p.retain, p.forget)?;
    if p.epsilons.is_empty() || p.compare_sizes.is_empty() {
        return Err(Error::Config(
            "epsilons and compare_sizes must be non-empty".into(),
        ));
    }
    let mut report = ExperimentReport::new(Scenario::TwoDimRegion, cfg.seed, &p)?;
    let solver = SolverConfig::default().with_eta(p.solver_eta);

    let region = AlphaRegionTable::sweep(&p.epsilons, sizes, p.r_ij, p.lambda)?;
    let mid_nonempty = region
        .rows
        .iter()
        .filter(|r| r.region_nonempty && (0.3..=0.7).contains(&r.epsilon))
        .count();
    report.check(Assertion::at_least(
        "region.nonempty_mid_correlation",
        mid_nonempty as f64,
        1.0,
    ));

    let mut compare = p.compare_sizes.clone();
    compare.sort_by(|a, b| (a.1 / (a.0 + a.1)).total_cmp(&(b.1 / (b.0 + b.1))));
    let mut widths = Vec::new();
    for &(r, f) in &compare {
        let t = AlphaRegionTable::sweep(&p.epsilons, Sizes::new(r, f)?, p.r_ij, p.lambda)?;
        widths.push(WidthRow {
            retain: r,
            forget: f,
            forget_fraction: f / (r + f),
            max_band_width: band_width(&t),
            nonempty_count: t.rows.iter().filter(|r| r.region_nonempty).count(),
        });
    }
    let not_wider = widths
        .windows(2)
        .filter(|w| !(w[1].max_band_width > w[0].max_band_width))
        .count();
    report.check(Assertion::equals(
        "region.broadens_with_forget_fraction",
        not_wider as f64,
        0.0,
    ));

    // Evenly spread in-band samples with alpha <= 1.
    let usable: Vec<&AlphaRegionRow> = region
        .rows
        .iter()
        .filter(|r| r.region_nonempty && r.alpha_d_gt_da < 1.0)
        .collect();
    let mut chain = Vec::new();
    if !usable.is_empty() && p.chain_samples > 0 {
        let n = p.chain_samples.min(usable.len());
        for k in 0..n {
            let i = if n == 1 {
                0
            } else {
                k * (usable.len() - 1) / (n - 1)
            };
            chain.push(chain_row(usable[i], &p, &solver)?);
        }
    }
    report.check(Assertion::at_least(
        "region.chain_samples",
        chain.len() as f64,
        p.chain_samples as f64,
    ));
    let broken = chain.iter().filter(|c| !c.holds).count();
    report.check(Assertion::equals(
        "region.ordering_chain",
        broken as f64,
        0.0,
    ));

    let mut gs_rows = Vec::new();
    for &eps in &p.gs_epsilons {
        for &alpha in &p.gs_alphas {
            let sys = TwoDimSystem::new(eps, alpha, p.r_ij, p.retain, p.forget, p.lambda)?;
            let gs = gauss_seidel_2d(&sys, &SolverConfig::default())?;
            let b = pretrain_2d_bounds(&sys)?;
            let (rising, falling) = directions(&gs.trajectory);
            gs_rows.push(GaussSeidelRow {
                epsilon: eps,
                alpha,
                iters: gs.iters,
                residual: gs.residual,
                x: gs.x,
                y: gs.y,
                x_lo: b.x_lo,
                x_hi: b.x_hi,
                y_lo: b.y_lo,
                y_hi: b.y_hi,
                inside_bounds: b.contains(gs.x, gs.y, 1e-12),
                y_le_x: gs.y <= gs.x,
                x_rising_y_falling: rising,
                x_falling_y_rising: falling,
            });
        }
    }
    let count =
        |f: &dyn Fn(&GaussSeidelRow) -> bool| gs_rows.iter().filter(|r| f(r)).count() as f64;
    let max_res = gs_rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    report.check(Assertion::at_most(
        "gauss_seidel.converged",
        max_res,
        p.gs_tol,
    ));
    report.check(Assertion::equals(
        "gauss_seidel.inside_bounds",
        count(&|r| !r.inside_bounds),
        0.0,
    ));
    report.check(Assertion::equals(
        "gauss_seidel.y_le_x",
        count(&|r| !r.y_le_x),
        0.0,
    ));
    // The construction claims x rises and y falls; the sweep shows the opposite.
    report.check(Assertion::equals(
        "gauss_seidel.monotone_claimed",
        count(&|r| !r.x_rising_y_falling),
        0.0,
    ));
    report.check(Assertion::equals(
        "gauss_seidel.monotone_observed",
        count(&|r| !r.x_falling_y_rising),
        0.0,
    ));

    report.table("alpha_region", &region.rows)?;
    report.table("band_widths", &widths)?;
    report.table("ordering_chain", &chain)?;
    report.table("gauss_seidel", &gs_rows)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_reports_expected_outcomes() {
        let rep = run_two_dim_region(&ScenarioConfig::default()).unwrap();
        let failed: Vec<&str> = rep.failures().map(|a| a.claim_id.as_str()).collect();
        assert_eq!(failed, vec!["gauss_seidel.monotone_claimed"]);
        assert!(rep.tables["alpha_region"].starts_with("epsilon,alpha_d_gt_da,alpha_rx,alpha_ry"));
    }

    #[test]
    fn direction_detection() {
        assert_eq!(
            directions(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)]),
            (true, false)
        );
        assert_eq!(
            directions(&[(5.0, 5.0), (1.0, 1.0), (0.5, 1.5)]),
            (false, true)
        );
        assert_eq!(directions(&[(1.0, 1.0), (1.0, 1.0)]), (true, true));
    }
}
