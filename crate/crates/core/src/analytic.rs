//! Closed-form stationary points and the bounds built from them.
//!
//! One-dimensional results live on a single block coordinate `j`: `r_j`
//! retain samples, `alpha * r_j` forget samples, and set sizes `|R|`, `|F|`.
//! Two-dimensional results use the rotated coordinates of a
//! [`TwoDimSystem`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datasets::{Sizes, TwoDimSystem};
use crate::error::{Error, Result};
use crate::lambertw::{lambert_w, w0, WBranch, BRANCH_POINT};
use crate::losses::{ObjectiveKind, WeightedExpObjective};
use crate::optimizers::{gradient_descent, SolverConfig, SolverStatus};

const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaKind {
    UniqueMin,
    MinAndMax,
    NoMinimum,
}

/// Stationary structure of the one-coordinate descent-ascent objective.
///
/// With a negative data coefficient the objective is unbounded below, so
/// "min" here always means a local minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaCase {
    pub case: DaKind,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
}

impl DaCase {
    /// Classifies by the Lambert argument `z` of `w e^w = z`.
    ///
    /// The curvature at a stationary point is `lambda (1 + w)`, so the
    /// principal branch (`w >= -1`) is the local minimum and `W-1` the local
    /// maximum.
    fn from_argument(z: f64) -> Self {
        if z >= 0.0 {
            DaCase {
                case: DaKind::UniqueMin,
                w_min: Some(w0(z)),
                w_max: None,
            }
        } else if let (Ok(lo), Ok(hi)) = (
            lambert_w(z, WBranch::Principal),
            lambert_w(z, WBranch::Minus1),
        ) {
            DaCase {
                case: DaKind::MinAndMax,
                w_min: Some(lo),
                w_max: Some(hi),
            }
        } else {
            DaCase {
                case: DaKind::NoMinimum,
                w_min: None,
                w_max: None,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm1d {
    pub w_d: f64,
    pub w_r: f64,
    pub w_da: DaCase,
}

fn check_block(r_j: f64, alpha: f64, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda", "must be positive"));
    }
    if !(r_j >= 1.0) || !r_j.is_finite() {
        return Err(Error::param(
            "r_j",
            "block needs at least one retain sample",
        ));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::param("alpha", "must be non-negative"));
    }
    Ok(())
}

/// `1 - alpha |R| / |F|`, snapped to zero when `alpha` equals `|F|/|R|` up to
/// rounding. An empty forget set contributes nothing.
fn da_factor(alpha: f64, sizes: Sizes) -> f64 {
    if sizes.forget == 0.0 {
        return 1.0;
    }
    let lhs = alpha * sizes.retain;
    if (lhs - sizes.forget).abs() <= REL_TOL * lhs.max(sizes.forget) {
        0.0
    } else {
        1.0 - lhs / sizes.forget
    }
}

/// Stationary points of the pretrain, retrain and descent-ascent objectives
/// restricted to one block coordinate.
pub fn closed_form_1d(r_j: f64, alpha: f64, sizes: Sizes, lambda: f64) -> Result<ClosedForm1d> {
    check_block(r_j, alpha, lambda)?;
    let sizes = Sizes::new(sizes.retain, sizes.forget)?;
    let w_d = w0((1.0 + alpha) * r_j / (lambda * sizes.total()));
    let w_r = w0(r_j / (lambda * sizes.retain));
    let z = da_factor(alpha, sizes) * r_j / (lambda * sizes.retain);
    Ok(ClosedForm1d {
        w_d,
        w_r,
        w_da: DaCase::from_argument(z),
    })
}

/// `alpha` above which the descent-ascent coordinate loses its unique
/// minimum, and above which it loses every stationary point.
pub fn da_thresholds(r_j: f64, sizes: Sizes, lambda: f64) -> (f64, f64) {
    let unique = sizes.forget / sizes.retain;
    (unique, unique - lambda * sizes.forget * BRANCH_POINT / r_j)
}

/// Range of `alpha` on which `w_DA <= w_D <= w_R` is proven.
pub fn ordered_band(sizes: Sizes) -> (f64, f64) {
    let (r, f) = (sizes.retain, sizes.forget);
    (f * f / (r * (f + sizes.total())), f / r)
}

/// `(w_DA - w_D)(w_D - w_R) >= 0`: unlearning moves past pretraining in the
/// direction away from retraining, or not at all.
///
/// Both ends of the proven band make one factor exactly zero, so differences
/// within rounding of `w_D` count as zero.
pub fn divergence_holds(w_d: f64, w_r: f64, w_da: f64) -> bool {
    let tol = 1e-12 * (1.0 + w_d.abs());
    let (a, b) = (w_da - w_d, w_d - w_r);
    a.abs() <= tol || b.abs() <= tol || a * b >= 0.0
}

/// Upper bound `|ln((1+alpha)|R|/|D|)|` on `|w_D - w_R|`.
pub fn distance_growth_bound(alpha: f64, retain: f64, total: f64) -> f64 {
    ((1.0 + alpha) * retain / total).ln().abs()
}

/// Lower bound `W0(r_j/(lambda |R|))` on `|w_R - w_DA|`, valid once
/// `alpha >= |F|/|R|`.
pub fn distance_unlearn_lower(r_j: f64, alpha: f64, sizes: Sizes, lambda: f64) -> Result<f64> {
    check_block(r_j, alpha, lambda)?;
    if sizes.forget > 0.0 && da_factor(alpha, sizes) > 0.0 {
        return Err(Error::Precondition(format!(
            "unlearning distance bound needs alpha >= |F|/|R| = {}, got {alpha}",
            sizes.forget / sizes.retain
        )));
    }
    Ok(w0(r_j / (lambda * sizes.retain)))
}

/// Closed-form retrain point `(x_R, y_R)`.
pub fn retrain_2d(sys: &TwoDimSystem) -> Result<(f64, f64)> {
    sys.validate()?;
    let x = w0(sys.diag() * sys.b_retain());
    Ok((x, sys.cross() / sys.diag() * x))
}

/// Residuals of the retrain stationarity system
/// `x = b_R (1+eps^2) e^{-x}`, `y = b_R 2 eps e^{-x}`.
pub fn retrain_2d_residual(sys: &TwoDimSystem, x: f64, y: f64) -> (f64, f64) {
    let b = sys.b_retain();
    let ex = (-x).exp();
    (x - b * sys.diag() * ex, y - b * sys.cross() * ex)
}

/// Residuals of the descent-ascent stationarity system
/// `x = b_R (1+eps^2) e^{-x} - f 2 eps e^{-y}`,
/// `y = b_R 2 eps e^{-x} - f (1+eps^2) e^{-y}` with `f = alpha r/(lambda |F|)`.
pub fn da_2d_residual(sys: &TwoDimSystem, x: f64, y: f64) -> (f64, f64) {
    let (b, f) = (sys.b_retain(), sys.forget_weight());
    let (d, c) = (sys.diag(), sys.cross());
    let ex = (-x).exp();
    let ey = (-y).exp();
    (x - (b * d * ex - f * c * ey), y - (b * c * ex - f * d * ey))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainBounds {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl PretrainBounds {
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        x >= self.x_lo - tol && x <= self.x_hi + tol && y >= self.y_lo - tol && y <= self.y_hi + tol
    }
}

/// Box containing the pretraining stationary point; requires `alpha <= 1`.
pub fn pretrain_2d_bounds(sys: &TwoDimSystem) -> Result<PretrainBounds> {
    sys.validate()?;
    if sys.alpha > 1.0 {
        return Err(Error::Precondition(format!(
            "pretrain bounds need alpha <= 1, got {}",
            sys.alpha
        )));
    }
    let b = sys.b_pretrain();
    let (d, c, a) = (sys.diag(), sys.cross(), sys.alpha);
    Ok(PretrainBounds {
        x_lo: w0(b * (d + a * c)),
        x_hi: c / d * w0(a * b * d) + w0(b * d),
        y_lo: w0(a * b * d),
        y_hi: w0(b * (c + a * d)),
    })
}

/// Upper bounds on the descent-ascent stationary point. Fails with a Lambert
/// domain error when either argument drops below `-1/e`, in which case no
/// bound (and typically no stationary point) exists.
pub fn da_2d_upper(sys: &TwoDimSystem) -> Result<(f64, f64)> {
    sys.validate()?;
    let (b, f) = (sys.b_retain(), sys.forget_weight());
    let (d, c) = (sys.diag(), sys.cross());
    let x = lambert_w(b * d - f * c, WBranch::Principal)?;
    let y = lambert_w(b * c - f * d, WBranch::Principal)?;
    Ok((x, y))
}

/// `(x, y) = (w_i + eps w_j, eps w_i + w_j)`.
pub fn xy_from_w(epsilon: f64, w: [f64; 2]) -> (f64, f64) {
    (w[0] + epsilon * w[1], epsilon * w[0] + w[1])
}

pub fn w_from_xy(epsilon: f64, x: f64, y: f64) -> [f64; 2] {
    let det = 1.0 - epsilon * epsilon;
    [(x - epsilon * y) / det, (y - epsilon * x) / det]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaSolve2d {
    pub x: f64,
    pub y: f64,
    pub status: SolverStatus,
    pub iters: usize,
}

/// Descent on the two-coordinate descent-ascent objective from the retrain
/// point, reported in rotated coordinates.
pub fn da_2d_solve(sys: &TwoDimSystem, cfg: &SolverConfig) -> Result<DaSolve2d> {
    let (xr, yr) = retrain_2d(sys)?;
    let obj = WeightedExpObjective::two_dim(sys, ObjectiveKind::SimultaneousDa);
    let rep = gradient_descent(&obj, &w_from_xy(sys.epsilon, xr, yr), cfg)?;
    let (x, y) = xy_from_w(sys.epsilon, [rep.w_star[0], rep.w_star[1]]);
    Ok(DaSolve2d {
        x,
        y,
        status: rep.status,
        iters: rep.iters,
    })
}

/// One row of the `alpha`-`eps` region table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRegionRow {
    pub epsilon: f64,
    pub alpha_d_gt_da: f64,
    pub alpha_rx: f64,
    pub alpha_ry: f64,
    pub alpha_r_gt_d: f64,
    pub region_nonempty: bool,
}

impl AlphaRegionRow {
    pub fn contains(&self, alpha: f64) -> bool {
        self.region_nonempty && alpha >= self.alpha_d_gt_da && alpha <= self.alpha_r_gt_d
    }
}

/// Thresholds on `alpha` for `D >= DA` (from below) and `R >= D` (from
/// above) at one correlation `eps`.
///
/// The `R >= D` expressions are written for one retain sample per group;
/// set sizes enter as `|S| / r_ij`, which is the same system.
pub fn alpha_thresholds_2d(
    epsilon: f64,
    sizes: Sizes,
    r_ij: f64,
    lambda: f64,
) -> Result<AlphaRegionRow> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", "must lie in (0, 1)"));
    }
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", "must be positive"));
    }
    if !(r_ij > 0.0) {
        return Err(Error::param("r_ij", "must be positive"));
    }
    let sizes = Sizes::new(sizes.retain, sizes.forget)?;
    let (r, f, dd) = (sizes.retain, sizes.forget, sizes.total());
    let d2 = 1.0 + epsilon * epsilon;
    let c = 2.0 * epsilon;
    let alpha_d_gt_da = (d2 / c * f * f / (r * (dd + f))).max(c / d2 * f * dd / (r * (dd + f)));

    let (rn, dn) = (r / r_ij, dd / r_ij);
    let wr = w0(d2 / (lambda * rn));
    let wd = w0(d2 / (lambda * dn));
    let alpha_rx = dn * lambda * (wr - wd) * (d2 * (wr - wd) / c).exp() / c;
    let alpha_ry = c * (dn * lambda * (c * wr / d2).exp() * wr - d2) / (d2 * d2);
    let alpha_r_gt_d = alpha_rx.min(alpha_ry);
    Ok(AlphaRegionRow {
        epsilon,
        alpha_d_gt_da,
        alpha_rx,
        alpha_ry,
        alpha_r_gt_d,
        region_nonempty: alpha_d_gt_da <= alpha_r_gt_d,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaRegionTable {
    pub rows: Vec<AlphaRegionRow>,
}

impl AlphaRegionTable {
    pub fn sweep(epsilons: &[f64], sizes: Sizes, r_ij: f64, lambda: f64) -> Result<Self> {
        let rows = epsilons
            .iter()
            .map(|&e| alpha_thresholds_2d(e, sizes, r_ij, lambda))
            .collect::<Result<_>>()?;
        Ok(AlphaRegionTable { rows })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
