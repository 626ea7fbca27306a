//! Real-valued Lambert W on its two real branches.
//!
//! `W(z)` solves `w * exp(w) = z`. The principal branch `W0` is defined for
//! `z >= -1/e` and returns `w >= -1`; the lower branch `W-1` is defined for
//! `-1/e <= z < 0` and returns `w <= -1`.
//!
//! Evaluation uses an asymptotic or branch-point series for the initial
//! guess followed by Halley iteration, which converges cubically and keeps the
//! defining residual at the level of a few ulps.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `-1/e`, the shared branch point.
pub const BRANCH_POINT: f64 = -1.0 / E;

/// Inputs at most this far below `-1/e` are treated as the branch point.
const BRANCH_CLAMP: f64 = 1e-12;

const MAX_HALLEY_ITERS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WBranch {
    Principal,
    Minus1,
}

impl WBranch {
    pub fn name(self) -> &'static str {
        match self {
            WBranch::Principal => "principal",
            WBranch::Minus1 => "minus-one",
        }
    }
}

/// Evaluates the Lambert W function on the requested real branch.
///
/// Returns [`Error::LambertDomain`] for `z < -1/e` (either branch) or for
/// `z >= 0` on the lower branch.
pub fn lambert_w(z: f64, branch: WBranch) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::LambertDomain {
            z,
            branch: branch.name(),
        });
    }
    let z = if (BRANCH_POINT - BRANCH_CLAMP..BRANCH_POINT).contains(&z) {
        BRANCH_POINT
    } else {
        z
    };
    if z < BRANCH_POINT {
        return Err(Error::LambertDomain {
            z,
            branch: branch.name(),
        });
    }
    match branch {
        WBranch::Principal => Ok(principal(z)),
        WBranch::Minus1 => {
            if z >= 0.0 {
                Err(Error::LambertDomain {
                    z,
                    branch: branch.name(),
                })
            } else {
                Ok(minus_one(z))
            }
        }
    }
}

/// Principal branch `W0`; panics when `z < -1/e`.
pub fn w0(z: f64) -> f64 {
    lambert_w(z, WBranch::Principal).expect("w0 argument below -1/e")
}

/// Lower branch `W-1`; panics outside `[-1/e, 0)`.
pub fn wm1(z: f64) -> f64 {
    lambert_w(z, WBranch::Minus1).expect("w-1 argument outside [-1/e, 0)")
}

fn principal(z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    if z == BRANCH_POINT {
        return -1.0;
    }
    if z.is_infinite() {
        return f64::INFINITY;
    }
    let guess = if z < -0.25 {
        branch_point_series(z, 1.0)
    } else if z.abs() < 1e-3 {
        z * (1.0 - z * (1.0 - 1.5 * z))
    } else if z < 3.0 {
        // log1p is within ~30% on this range, enough for Halley.
        let w = z.ln_1p();
        w * (1.0 - w.ln_1p() / (2.0 + w))
    } else {
        asymptotic(z.ln())
    };
    halley(z, guess)
}

fn minus_one(z: f64) -> f64 {
    if z == BRANCH_POINT {
        return -1.0;
    }
    let guess = if z < -0.25 {
        branch_point_series(z, -1.0)
    } else {
        asymptotic((-z).ln())
    };
    halley(z, guess)
}

/// Series about the branch point in `p = ±sqrt(2(e z + 1))`.
fn branch_point_series(z: f64, sign: f64) -> f64 {
    let p = sign * (2.0 * (E * z + 1.0)).max(0.0).sqrt();
    -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0)))
}

/// `L1 - L2 + L2/L1` with `L1 = log|z|`, `L2 = log|L1|`.
fn asymptotic(l1: f64) -> f64 {
    let l2 = l1.abs().ln();
    l1 - l2 + l2 / l1
}

fn halley(z: f64, mut w: f64) -> f64 {
    for _ in 0..MAX_HALLEY_ITERS {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}
