//! Fixed-step solvers: gradient descent, alternating descent-ascent and the
//! nonlinear Gauss-Seidel sweep for the correlated 2D pretraining system.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datasets::{dot, BlockDataset, TwoDimSystem};
use crate::error::{Error, Result};
use crate::lambertw::w0;
use crate::losses::{BlockObjective, Objective, ObjectiveKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Abort once `|w|_inf` exceeds this or the loss is non-finite.
    pub divergence_guard: f64,
    pub record_trajectory: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: 0.5,
            max_iters: 1_000_000,
            grad_tol: 1e-10,
            divergence_guard: 1e6,
            record_trajectory: false,
        }
    }
}

impl SolverConfig {
    pub fn with_eta(self, eta: f64) -> Self {
        SolverConfig { eta, ..self }
    }

    pub fn with_max_iters(self, max_iters: usize) -> Self {
        SolverConfig { max_iters, ..self }
    }

    pub fn with_grad_tol(self, grad_tol: f64) -> Self {
        SolverConfig { grad_tol, ..self }
    }

    pub fn recording(self) -> Self {
        SolverConfig {
            record_trajectory: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param("eta", "must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::param("grad_tol", "must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::param("divergence_guard", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub w: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub w_star: Vec<f64>,
    /// Final gradient norm (or fixed-point displacement per unit step).
    pub residual: f64,
    pub iters: usize,
    pub status: SolverStatus,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl StationaryReport {
    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }

    /// Writes the trajectory as CSV with columns `iter, w0.., loss, grad_norm`.
    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> Result<()> {
        let traj = self
            .trajectory
            .as_ref()
            .ok_or(Error::Empty("trajectory was not recorded"))?;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((0..self.w_star.len()).map(|j| format!("w{j}")));
        header.push("loss".into());
        header.push("grad_norm".into());
        wtr.write_record(&header)?;
        for p in traj {
            let mut row = vec![p.iter.to_string()];
            row.extend(p.w.iter().map(|v| v.to_string()));
            row.push(p.loss.to_string());
            row.push(p.grad_norm.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn tripped(w: &[f64], loss: f64, guard: f64) -> bool {
    !loss.is_finite() || !(inf_norm(w) <= guard)
}

/// Plain fixed-step gradient descent `w <- w - eta * grad L(w)`.
pub fn gradient_descent<O: Objective + ?Sized>(
    objective: &O,
    init: &[f64],
    cfg: &SolverConfig,
) -> Result<StationaryReport> {
    cfg.validate()?;
    if init.len() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: init.len(),
        });
    }
    let mut w = init.to_vec();
    let mut g = vec![0.0; w.len()];
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut k = 0;
    loop {
        let loss = objective.loss(&w);
        objective.grad_into(&w, &mut g);
        let gn = norm(&g);
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryPoint {
                iter: k,
                w: w.clone(),
                loss,
                grad_norm: gn,
            });
        }
        let status = if tripped(&w, loss, cfg.divergence_guard) || !gn.is_finite() {
            Some(SolverStatus::Diverged)
        } else if gn <= cfg.grad_tol {
            Some(SolverStatus::Converged)
        } else if k >= cfg.max_iters {
            Some(SolverStatus::MaxIters)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(StationaryReport {
                w_star: w,
                residual: gn,
                iters: k,
                status,
                trajectory,
            });
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= cfg.eta * gj;
        }
        k += 1;
    }
}

/// Alternates one descent step on `first` with one on `second`.
///
/// The residual is the composed displacement `|w_{t+2} - w_t| / eta`, which
/// vanishes exactly at fixed points of the two-step map.
pub fn alternating_descent<A, B>(
    first: &A,
    second: &B,
    init: &[f64],
    cfg: &SolverConfig,
    monitor: impl Fn(&[f64]) -> f64,
) -> Result<StationaryReport>
where
    A: Objective + ?Sized,
    B: Objective + ?Sized,
{
    cfg.validate()?;
    if init.len() != first.dim() || init.len() != second.dim() {
        return Err(Error::DimensionMismatch {
            expected: first.dim(),
            got: init.len(),
        });
    }
    let n = init.len();
    let mut w = init.to_vec();
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut k = 0;
    loop {
        first.grad_into(&w, &mut g);
        for j in 0..n {
            next[j] = w[j] - cfg.eta * g[j];
        }
        second.grad_into(&next, &mut g);
        for j in 0..n {
            next[j] -= cfg.eta * g[j];
        }
        let disp: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
        let residual = norm(&disp) / cfg.eta;
        let loss = monitor(&w);
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryPoint {
                iter: k,
                w: w.clone(),
                loss,
                grad_norm: residual,
            });
        }
        let status = if tripped(&w, loss, cfg.divergence_guard) || !residual.is_finite() {
            Some(SolverStatus::Diverged)
        } else if residual <= cfg.grad_tol {
            Some(SolverStatus::Converged)
        } else if k >= cfg.max_iters {
            Some(SolverStatus::MaxIters)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(StationaryReport {
                w_star: w,
                residual,
                iters: k,
                status,
                trajectory,
            });
        }
        std::mem::swap(&mut w, &mut next);
        k += 1;
    }
}

/// Iterative descent-ascent on a block dataset: a descent step on the retain
/// objective (with ridge) followed by an ascent step on the forget average
/// (with ridge), both with step `eta`. Per coordinate the pair reads
///
/// ```text
/// w' = w  + eta ( |R_j|/|R| e^{-w}  - lambda w  )
/// w''= w' - eta ( |F_j|/|F| e^{-w'} + lambda w' )
/// ```
///
/// Each composed pair counts as one iteration. The monitored loss is the
/// simultaneous objective with doubled ridge, whose stationary point the
/// composed map approaches as `eta -> 0`.
pub fn iterative_da(
    data: &BlockDataset,
    lambda: f64,
    init: &[f64],
    cfg: &SolverConfig,
) -> Result<StationaryReport> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", "must be positive"));
    }
    let dim = data.dimension();
    let retain = BlockObjective::from_coefficients(
        (0..dim).map(|j| data.retain_coefficient(j)).collect(),
        lambda,
    );
    // Ascent on +f e^{-w} is descent on -f e^{-w}.
    let forget = BlockObjective::from_coefficients(
        (0..dim).map(|j| -data.forget_coefficient(j)).collect(),
        lambda,
    );
    let monitor = BlockObjective::new(data, ObjectiveKind::SimultaneousDa, 2.0 * lambda);
    alternating_descent(&retain, &forget, init, cfg, |w| monitor.loss(w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussSeidelReport {
    pub x: f64,
    pub y: f64,
    /// Max-abs residual of the two pretraining stationarity equations.
    pub residual: f64,
    pub iters: usize,
    pub status: SolverStatus,
    /// `(x_k, y_k)` starting from the symmetric initialization.
    pub trajectory: Vec<(f64, f64)>,
}

/// Residuals of the pretraining stationarity system in rotated coordinates:
///
/// ```text
/// x = b ((1+eps^2) e^{-x} + 2 alpha eps e^{-y})
/// y = b (2 eps e^{-x} + alpha (1+eps^2) e^{-y})
/// ```
pub fn pretrain_2d_residual(sys: &TwoDimSystem, x: f64, y: f64) -> (f64, f64) {
    let b = sys.b_pretrain();
    let (d, c, a) = (sys.diag(), sys.cross(), sys.alpha);
    let ex = (-x).exp();
    let ey = (-y).exp();
    (x - b * (d * ex + a * c * ey), y - b * (c * ex + a * d * ey))
}

/// Nonlinear Gauss-Seidel for the pretraining system, started at the
/// symmetric `alpha = 1` solution and sweeping `y` first:
///
/// ```text
/// y <- 2 b eps e^{-x}       + W(b alpha (1+eps^2) e^{-2 b eps e^{-x}})
/// x <- 2 b alpha eps e^{-y} + W(b (1+eps^2) e^{-2 b alpha eps e^{-y}})
/// ```
///
/// Each half-step solves its equation exactly for one unknown.
pub fn gauss_seidel_2d(sys: &TwoDimSystem, cfg: &SolverConfig) -> Result<GaussSeidelReport> {
    sys.validate()?;
    cfg.validate()?;
    if sys.alpha > 1.0 {
        return Err(Error::Precondition(format!(
            "gauss-seidel construction requires alpha <= 1, got {}",
            sys.alpha
        )));
    }
    let b = sys.b_pretrain();
    let (d, c, a) = (sys.diag(), sys.cross(), sys.alpha);
    let eps1 = 1.0 + sys.epsilon;
    let start = w0(b * eps1 * eps1);
    let (mut x, mut y) = (start, start);
    let mut trajectory = vec![(x, y)];
    let max_res = |x: f64, y: f64| {
        let (rx, ry) = pretrain_2d_residual(sys, x, y);
        rx.abs().max(ry.abs())
    };
    let mut residual = max_res(x, y);
    let mut k = 0;
    while residual > cfg.grad_tol && k < cfg.max_iters {
        let shift_y = b * c * (-x).exp();
        let y_new = shift_y + w0(b * a * d * (-shift_y).exp());
        let shift_x = b * a * c * (-y_new).exp();
        let x_new = shift_x + w0(b * d * (-shift_x).exp());
        k += 1;
        let stalled = x_new == x && y_new == y;
        x = x_new;
        y = y_new;
        trajectory.push((x, y));
        residual = max_res(x, y);
        if stalled {
            break;
        }
    }
    let status = if residual <= cfg.grad_tol {
        SolverStatus::Converged
    } else if !residual.is_finite() {
        SolverStatus::Diverged
    } else {
        SolverStatus::MaxIters
    };
    Ok(GaussSeidelReport {
        x,
        y,
        residual,
        iters: k,
        status,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_block_dataset;
    use crate::lambertw::w0;
    use crate::losses::ScalarExpObjective;
    use proptest::prelude::*;

    struct Flat;

    impl Objective for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn loss(&self, _: &[f64]) -> f64 {
            1.0
        }
        fn grad_into(&self, _: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    #[test]
    fn retrain_matches_lambert() {
        let data = make_block_dataset([(10, 0)]).unwrap();
        let obj = BlockObjective::new(&data, ObjectiveKind::Retrain, 1.0);
        let rep = gradient_descent(&obj, &[0.0], &SolverConfig::default()).unwrap();
        assert!(rep.converged());
        assert!((rep.w_star[0] - w0(1.0)).abs() < 1e-6);
        assert!((rep.w_star[0] - 0.567_143_290_409).abs() < 1e-6);
    }

    #[test]
    fn flat_objective_converges_at_init() {
        let rep = gradient_descent(&Flat, &[3.0, -1.0], &SolverConfig::default()).unwrap();
        assert_eq!(rep.status, SolverStatus::Converged);
        assert!(rep.iters <= 1);
        assert_eq!(rep.w_star, vec![3.0, -1.0]);
    }

    #[test]
    fn da_past_case_three_diverges() {
        // alpha = 1 on the only forget block, |F|/|R| = 0.5: threshold is
        // 0.5 + lambda |F| / (e |R_j|) = 0.5 + 0.1*5/(e*10) < 1.
        let data = make_block_dataset([(10, 10), (10, 0)]).unwrap();
        let obj = BlockObjective::new(&data, ObjectiveKind::SimultaneousDa, 0.1);
        let rep = gradient_descent(&obj, &[0.0, 0.0], &SolverConfig::default()).unwrap();
        assert_eq!(rep.status, SolverStatus::Diverged);
    }

    #[test]
    fn dimension_and_config_errors() {
        let obj = ScalarExpObjective {
            coef: 1.0,
            lambda: 1.0,
        };
        assert!(gradient_descent(&obj, &[0.0, 0.0], &SolverConfig::default()).is_err());
        let bad = SolverConfig::default().with_eta(0.0);
        assert!(gradient_descent(&obj, &[0.0], &bad).is_err());
    }

    #[test]
    fn trajectory_csv() {
        let obj = ScalarExpObjective {
            coef: 1.0,
            lambda: 1.0,
        };
        let cfg = SolverConfig::default().with_grad_tol(1e-3).recording();
        let rep = gradient_descent(&obj, &[0.0], &cfg).unwrap();
        let mut buf = Vec::new();
        rep.write_trajectory_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,w0,loss,grad_norm\n0,0,1,1\n"));
        assert_eq!(text.lines().count(), rep.iters + 2);
    }

    #[test]
    fn descent_is_deterministic() {
        let data = make_block_dataset([(7, 2), (3, 1)]).unwrap();
        let obj = BlockObjective::new(&data, ObjectiveKind::Pretrain, 0.05);
        let cfg = SolverConfig::default().recording();
        let a = gradient_descent(&obj, &[0.0, 0.0], &cfg).unwrap();
        let b = gradient_descent(&obj, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// One composed iterative-DA step at alpha = 0 agrees with one retrain
    /// descent step with doubled ridge up to a term of order eta^2.
    #[test]
    fn iterative_da_at_zero_alpha_is_doubled_ridge_descent() {
        let data = make_block_dataset([(10, 0), (5, 0)]).unwrap();
        let lambda = 0.3;
        let w = [0.2, -0.4];
        let doubled = BlockObjective::new(&data, ObjectiveKind::Retrain, 2.0 * lambda);
        let mut last = None;
        for eta in [1e-2, 5e-3, 2.5e-3] {
            let cfg = SolverConfig::default()
                .with_eta(eta)
                .with_max_iters(1)
                .recording();
            let rep = iterative_da(&data, lambda, &w, &cfg).unwrap();
            let traj = rep.trajectory.unwrap();
            let composed = &traj[1].w;
            let g = doubled.grad(&w);
            let diff: f64 = (0..2)
                .map(|j| (composed[j] - (w[j] - eta * g[j])).abs())
                .fold(0.0, f64::max);
            if let Some(prev) = last {
                let ratio: f64 = prev / diff;
                assert!((ratio - 4.0).abs() < 0.1, "per-step mismatch ratio {ratio}");
            }
            last = Some(diff);
        }
    }

    /// The composed fixed point approaches the doubled-ridge simultaneous
    /// stationary point; the gap is first order in eta.
    #[test]
    fn iterative_da_fixed_point_gap_is_first_order() {
        let data = make_block_dataset([(10, 1), (90, 24)]).unwrap();
        let lambda = 1.0;
        let target: Vec<f64> = (0..2)
            .map(|j| w0(data.coefficient(j, ObjectiveKind::SimultaneousDa) / (2.0 * lambda)))
            .collect();
        let gap = |eta: f64| {
            let cfg = SolverConfig::default().with_eta(eta).with_grad_tol(1e-13);
            let rep = iterative_da(&data, lambda, &target, &cfg).unwrap();
            assert!(rep.converged());
            rep.w_star
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let g1 = gap(1e-2);
        let g2 = gap(5e-3);
        assert!(g1 < 1e-2);
        let ratio = g1 / g2;
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn gauss_seidel_symmetric_start() {
        let sys = TwoDimSystem::new(0.4, 1.0, 5.0, 50.0, 20.0, 0.1).unwrap();
        let rep = gauss_seidel_2d(&sys, &SolverConfig::default()).unwrap();
        assert!(rep.iters <= 1);
        assert!((rep.x - rep.y).abs() < 1e-12);
        assert_eq!(rep.status, SolverStatus::Converged);
    }

    #[test]
    fn gauss_seidel_plug_back() {
        let sys = TwoDimSystem::new(0.3, 0.5, 5.0, 50.0, 20.0, 0.1).unwrap();
        let rep = gauss_seidel_2d(&sys, &SolverConfig::default()).unwrap();
        assert!(rep.status == SolverStatus::Converged);
        let (rx, ry) = pretrain_2d_residual(&sys, rep.x, rep.y);
        assert!(rx.abs() <= 1e-8 && ry.abs() <= 1e-8);
        assert!(rep.y <= rep.x);
    }

    #[test]
    fn gauss_seidel_rejects_alpha_above_one() {
        let sys = TwoDimSystem::new(0.3, 1.5, 5.0, 50.0, 20.0, 0.1).unwrap();
        assert!(matches!(
            gauss_seidel_2d(&sys, &SolverConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    proptest! {
        #[test]
        fn gauss_seidel_x_falls_and_y_rises(
            eps in 0.05f64..0.95, alpha in 0.0f64..1.0, lambda in 0.01f64..1.0,
        ) {
            let sys = TwoDimSystem::new(eps, alpha, 2.0, 30.0, 10.0, lambda).unwrap();
            let rep = gauss_seidel_2d(&sys, &SolverConfig::default()).unwrap();
            prop_assert_eq!(rep.status, SolverStatus::Converged);
            // Starting from the alpha = 1 solution, x can only move down; the
            // alternating sweep then pushes y up and x further down.
            for pair in rep.trajectory.windows(2) {
                prop_assert!(pair[1].0 <= pair[0].0 + 1e-14);
            }
            for pair in rep.trajectory.windows(2).skip(1) {
                prop_assert!(pair[1].1 >= pair[0].1 - 1e-14);
            }
            prop_assert!(rep.y <= rep.x);
        }

        #[test]
        fn descent_loss_is_non_increasing(
            counts in prop::collection::vec((1u64..40, 0u64..40), 1..4),
            lambda in 0.01f64..1.0,
        ) {
            let data = make_block_dataset(counts).unwrap();
            for kind in [ObjectiveKind::Pretrain, ObjectiveKind::Retrain] {
                let obj = BlockObjective::new(&data, kind, lambda);
                // Smoothness along the path from 0 is bounded by max coef + lambda.
                let smooth = obj.coefficients().iter().cloned().fold(0.0, f64::max) + lambda;
                let cfg = SolverConfig::default().with_eta(0.9 / smooth).with_max_iters(200).recording();
                let rep = gradient_descent(&obj, &vec![0.0; data.dimension()], &cfg).unwrap();
                let traj = rep.trajectory.unwrap();
                for pair in traj.windows(2) {
                    prop_assert!(pair[1].loss <= pair[0].loss + 1e-15);
                }
            }
        }
    }
}
