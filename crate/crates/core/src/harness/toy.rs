use serde::{Deserialize, Serialize};

use super::{linspace, Assertion, ExperimentReport, Scenario, ScenarioConfig};
use crate::datasets::{make_toy_dataset, DenseDataset, Label, TOY_FORGET_INDEX, TOY_FORGET_UNITS};
use crate::error::{Error, Result};
use crate::losses::{Objective, SigmoidMse};
use crate::optimizers::{gradient_descent, SolverConfig, SolverStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyParams {
    pub lambda: f64,
    /// Descent starts along `a` and `b`; their product is the start count.
    pub starts_a: usize,
    pub starts_b: usize,
    /// Starts and the surface scan cover `[-range, range]^2`.
    pub range: f64,
    pub dedup_radius: f64,
    pub surface_points: usize,
    pub eta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            lambda: 0.1,
            starts_a: 8,
            starts_b: 4,
            range: 6.0,
            dedup_radius: 1e-3,
            surface_points: 61,
            eta: 0.05,
            max_iters: 2_000_000,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Pretrain,
    Retrain,
    Gda,
}

impl Weighting {
    const ALL: [Weighting; 3] = [Weighting::Pretrain, Weighting::Retrain, Weighting::Gda];

    /// Net multiplicity of the forgotten point under this objective. GDA's
    /// ascent on the forgotten units cancels the same mass of descent.
    fn forget_point_mass(self) -> f64 {
        let full = make_toy_dataset().samples()[TOY_FORGET_INDEX].multiplicity;
        match self {
            Weighting::Pretrain => full,
            Weighting::Retrain => full - TOY_FORGET_UNITS,
            Weighting::Gda => full - 2.0 * TOY_FORGET_UNITS,
        }
    }

    fn dataset(self) -> DenseDataset {
        make_toy_dataset()
            .with_multiplicity(TOY_FORGET_INDEX, self.forget_point_mass())
            .expect("toy index exists")
    }
}

#[derive(Debug, Clone, Serialize)]
struct MinimumRow {
    weighting: Weighting,
    a: f64,
    b: f64,
    loss: f64,
    grad_norm: f64,
    starts: usize,
    correct: f64,
    incorrect: f64,
    best: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SurfaceRow {
    weighting: Weighting,
    a: f64,
    b: f64,
    loss: f64,
}

/// Weighted counts of correctly and incorrectly classified mass; a point is
/// predicted positive when `sigma(z) > 1/2`, i.e. `z > -1`.
pub(crate) fn classify(theta: [f64; 2], data: &DenseDataset) -> (f64, f64) {
    let mut correct = 0.0;
    let mut wrong = 0.0;
    for s in data.samples() {
        let z = theta[0] * s.features[0] + theta[1] * s.features[1];
        let predicted = if z > -1.0 {
            Label::Positive
        } else {
            Label::Negative
        };
        if predicted == s.label {
            correct += s.multiplicity;
        } else {
            wrong += s.multiplicity;
        }
    }
    (correct, wrong)
}

/// Positive definiteness of the finite-difference Hessian.
fn is_local_min(obj: &impl Objective, w: &[f64]) -> bool {
    let h = 1e-5;
    let mut hess = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut up = w.to_vec();
        let mut dn = w.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (gu, gd) = (obj.grad(&up), obj.grad(&dn));
        for i in 0..2 {
            hess[i][j] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    let off = 0.5 * (hess[0][1] + hess[1][0]);
    hess[0][0] > 0.0 && hess[0][0] * hess[1][1] - off * off > 0.0
}

struct Minimum {
    theta: [f64; 2],
    loss: f64,
    grad_norm: f64,
    starts: usize,
}

fn find_minima(data: &DenseDataset, p: &ToyParams) -> Result<Vec<Minimum>> {
    let obj = SigmoidMse {
        data,
        lambda: p.lambda,
    };
    let cfg = SolverConfig::default()
        .with_eta(p.eta)
        .with_max_iters(p.max_iters)
        .with_grad_tol(p.grad_tol);
    let mut minima: Vec<Minimum> = Vec::new();
    for a in linspace(-p.range, p.range, p.starts_a) {
        for b in linspace(-p.range, p.range, p.starts_b) {
            let rep = gradient_descent(&obj, &[a, b], &cfg)?;
            if rep.status != SolverStatus::Converged || !is_local_min(&obj, &rep.w_star) {
                continue;
            }
            let theta = [rep.w_star[0], rep.w_star[1]];
            let near = minima
                .iter_mut()
                .find(|m| (m.theta[0] - theta[0]).hypot(m.theta[1] - theta[1]) <= p.dedup_radius);
            match near {
                Some(m) => m.starts += 1,
                None => minima.push(Minimum {
                    theta,
                    loss: obj.loss(&rep.w_star),
                    grad_norm: rep.residual,
                    starts: 1,
                }),
            }
        }
    }
    minima.sort_by(|x, y| x.loss.total_cmp(&y.loss));
    Ok(minima)
}

pub fn run_toy_landscape(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let p: ToyParams = cfg.resolve()?;
    if !(p.lambda > 0.0) || p.starts_a == 0 || p.starts_b == 0 || !(p.range > 0.0) {
        return Err(Error::Config(
            "lambda, range and start counts must be positive".into(),
        ));
    }
    let mut report = ExperimentReport::new(Scenario::ToyLandscape, cfg.seed, &p)?;
    let true_retain = Weighting::Retrain.dataset();

    let mut rows = Vec::new();
    let mut surface = Vec::new();
    let mut best = Vec::new();
    for w in Weighting::ALL {
        let data = w.dataset();
        let minima = find_minima(&data, &p)?;
        if minima.is_empty() {
            return Err(Error::Precondition(format!(
                "no local minimum found for {w:?}"
            )));
        }
        best.push(minima[0].theta);
        for (i, m) in minima.iter().enumerate() {
            let (correct, incorrect) = classify(m.theta, &data);
            rows.push(MinimumRow {
                weighting: w,
                a: m.theta[0],
                b: m.theta[1],
                loss: m.loss,
                grad_norm: m.grad_norm,
                starts: m.starts,
                correct,
                incorrect,
                best: i == 0,
            });
        }
        let obj = SigmoidMse {
            data: &data,
            lambda: p.lambda,
        };
        let grid = linspace(-p.range, p.range, p.surface_points);
        for &a in &grid {
            for &b in &grid {
                surface.push(SurfaceRow {
                    weighting: w,
                    a,
                    b,
                    loss: obj.loss(&[a, b]),
                });
            }
        }
    }

    let (pc, pi) = classify(best[0], &Weighting::Pretrain.dataset());
    let (rc, ri) = classify(best[1], &true_retain);
    let (gc, gi) = classify(best[2], &true_retain);
    report.check(Assertion::equals("toy.pretrain_correct", pc, 13.0));
    report.check(Assertion::equals("toy.pretrain_incorrect", pi, 1.0));
    report.check(Assertion::equals("toy.retrain_correct", rc, 11.0));
    report.check(Assertion::equals("toy.retrain_incorrect", ri, 1.0));
    report.check(Assertion::equals("toy.gda_correct_on_retain", gc, 10.0));
    report.check(Assertion::equals("toy.gda_incorrect_on_retain", gi, 2.0));
    let moved = (best[2][0] - best[1][0]).hypot(best[2][1] - best[1][1]);
    report.check(Assertion::above(
        "toy.gda_leaves_retrain_minimum",
        moved,
        p.dedup_radius,
    ));

    report.table("minima", &rows)?;
    report.table("surface", &surface)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weightings_set_forget_mass() {
        assert_eq!(Weighting::Pretrain.forget_point_mass(), 4.0);
        assert_eq!(Weighting::Retrain.forget_point_mass(), 2.0);
        assert_eq!(Weighting::Gda.forget_point_mass(), 0.0);
    }

    #[test]
    fn classification_threshold() {
        let data = make_toy_dataset();
        // theta = 0 predicts positive everywhere: 8 right, 6 wrong.
        assert_eq!(classify([0.0, 0.0], &data), (8.0, 6.0));
    }

    #[test]
    fn default_run_passes() {
        let rep = run_toy_landscape(&ScenarioConfig::default()).unwrap();
        let failed: Vec<_> = rep.failures().collect();
        assert!(failed.is_empty(), "{failed:?}\n{}", rep.tables["minima"]);
    }
}
