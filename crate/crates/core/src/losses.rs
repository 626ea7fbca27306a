//! Exponential-loss ridge objectives and the weighted sigmoidal MSE objective.
//!
//! The three exponential objectives share one form,
//! `sum_i c_i exp(-y_i <w, x_i>) + lambda/2 |w|^2`, and differ only in the
//! signed per-sample coefficients `c_i`:
//!
//! | kind             | retain sample | forget sample |
//! |------------------|---------------|---------------|
//! | `Pretrain`       | `1/|D|`       | `1/|D|`       |
//! | `Retrain`        | `1/|R|`       | `0`           |
//! | `SimultaneousDa` | `1/|R|`       | `-1/|F|`      |

use serde::{Deserialize, Serialize};

use crate::datasets::{dot, BlockDataset, DenseDataset, TwoDimSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Pretrain,
    Retrain,
    SimultaneousDa,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [
        ObjectiveKind::Pretrain,
        ObjectiveKind::Retrain,
        ObjectiveKind::SimultaneousDa,
    ];

    /// Signed weights applied to one retain and one forget sample.
    pub fn sample_weights(self, retain: f64, forget: f64) -> (f64, f64) {
        match self {
            ObjectiveKind::Pretrain => {
                let d = retain + forget;
                (1.0 / d, 1.0 / d)
            }
            ObjectiveKind::Retrain => (1.0 / retain, 0.0),
            ObjectiveKind::SimultaneousDa => {
                let f = if forget > 0.0 { -1.0 / forget } else { 0.0 };
                (1.0 / retain, f)
            }
        }
    }
}

/// A differentiable objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, w: &[f64]) -> f64;
    fn grad_into(&self, w: &[f64], out: &mut [f64]);

    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.grad_into(w, &mut g);
        g
    }
}

fn ridge(w: &[f64], lambda: f64) -> f64 {
    0.5 * lambda * dot(w, w)
}

fn check_dim(w: &[f64], expected: usize) -> Result<()> {
    if w.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: w.len(),
        });
    }
    Ok(())
}

impl BlockDataset {
    /// Coefficient of `exp(-w_j)` in the chosen objective.
    pub fn coefficient(&self, j: usize, kind: ObjectiveKind) -> f64 {
        let b = &self.blocks()[j];
        let (cr, cf) = kind.sample_weights(self.total_retain() as f64, self.total_forget() as f64);
        cr * b.retain as f64 + cf * b.forget as f64
    }

    /// `|R_j| / |R|`, the retain-only coefficient.
    pub fn retain_coefficient(&self, j: usize) -> f64 {
        self.blocks()[j].retain as f64 / self.total_retain() as f64
    }

    /// `|F_j| / |F|`, zero when there is no forget set.
    pub fn forget_coefficient(&self, j: usize) -> f64 {
        let f = self.total_forget();
        if f == 0 {
            0.0
        } else {
            self.blocks()[j].forget as f64 / f as f64
        }
    }
}

/// Exponential-loss objective on a block dataset. Separable by coordinate.
#[derive(Debug, Clone)]
pub struct BlockObjective {
    coefs: Vec<f64>,
    lambda: f64,
}

impl BlockObjective {
    pub fn new(data: &BlockDataset, kind: ObjectiveKind, lambda: f64) -> Self {
        BlockObjective {
            coefs: (0..data.dimension())
                .map(|j| data.coefficient(j, kind))
                .collect(),
            lambda,
        }
    }

    /// `sum_j coefs[j] exp(-w_j) + lambda/2 |w|^2` with arbitrary signed coefficients.
    pub fn from_coefficients(coefs: Vec<f64>, lambda: f64) -> Self {
        BlockObjective { coefs, lambda }
    }

    /// The restriction to coordinate `j`. Because the objective separates,
    /// its stationary points are exactly the `j`-th coordinates of the full
    /// objective's stationary points.
    pub fn coordinate(&self, j: usize) -> ScalarExpObjective {
        ScalarExpObjective {
            coef: self.coefs[j],
            lambda: self.lambda,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefs
    }
}

impl Objective for BlockObjective {
    fn dim(&self) -> usize {
        self.coefs.len()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let data: f64 = self
            .coefs
            .iter()
            .zip(w)
            .map(|(c, wj)| c * (-wj).exp())
            .sum();
        data + ridge(w, self.lambda)
    }

    fn grad_into(&self, w: &[f64], out: &mut [f64]) {
        for ((o, c), wj) in out.iter_mut().zip(&self.coefs).zip(w) {
            *o = -c * (-wj).exp() + self.lambda * wj;
        }
    }
}

/// `coef * exp(-w) + lambda/2 * w^2` on a scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarExpObjective {
    pub coef: f64,
    pub lambda: f64,
}

impl Objective for ScalarExpObjective {
    fn dim(&self) -> usize {
        1
    }

    fn loss(&self, w: &[f64]) -> f64 {
        self.coef * (-w[0]).exp() + 0.5 * self.lambda * w[0] * w[0]
    }

    fn grad_into(&self, w: &[f64], out: &mut [f64]) {
        out[0] = -self.coef * (-w[0]).exp() + self.lambda * w[0];
    }
}

/// Exact value of an exponential-loss objective on a block dataset.
pub fn loss_exp(w: &[f64], data: &BlockDataset, kind: ObjectiveKind, lambda: f64) -> Result<f64> {
    check_dim(w, data.dimension())?;
    Ok(BlockObjective::new(data, kind, lambda).loss(w))
}

/// Analytic gradient of [`loss_exp`].
pub fn grad_exp(
    w: &[f64],
    data: &BlockDataset,
    kind: ObjectiveKind,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_dim(w, data.dimension())?;
    Ok(BlockObjective::new(data, kind, lambda).grad(w))
}

/// One term `coef * exp(-<w, direction>)` with `direction = y x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTerm {
    pub coef: f64,
    pub direction: Vec<f64>,
}

/// Exponential-loss objective over explicit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedExpObjective {
    terms: Vec<ExpTerm>,
    dim: usize,
    lambda: f64,
}

impl WeightedExpObjective {
    pub fn new(terms: Vec<ExpTerm>, dim: usize, lambda: f64) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.direction.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: t.direction.len(),
            });
        }
        Ok(WeightedExpObjective { terms, dim, lambda })
    }

    /// Normalizes by the multiplicity sums of the retain and forget parts.
    pub fn from_dense(data: &DenseDataset, kind: ObjectiveKind, lambda: f64) -> Self {
        let retain: f64 = data.retain_samples().map(|s| s.multiplicity).sum();
        let forget: f64 = data.forget_samples().map(|s| s.multiplicity).sum();
        Self::from_dense_with_sizes(data, kind, retain, forget, lambda)
    }

    /// Like [`from_dense`](Self::from_dense) with explicit `|R|`, `|F|`; used
    /// when the samples are a sub-block of a larger orthogonal dataset.
    pub fn from_dense_with_sizes(
        data: &DenseDataset,
        kind: ObjectiveKind,
        retain: f64,
        forget: f64,
        lambda: f64,
    ) -> Self {
        let (cr, cf) = kind.sample_weights(retain, forget);
        let terms = data
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = if data.is_forget(i) { cf } else { cr };
                ExpTerm {
                    coef: c * s.multiplicity,
                    direction: s.features.iter().map(|x| s.label.sign() * x).collect(),
                }
            })
            .filter(|t| t.coef != 0.0)
            .collect();
        WeightedExpObjective {
            terms,
            dim: data.dimension(),
            lambda,
        }
    }

    /// The correlated pair `(w_i, w_j)` of a [`TwoDimSystem`].
    pub fn two_dim(sys: &TwoDimSystem, kind: ObjectiveKind) -> Self {
        Self::from_dense_with_sizes(
            &sys.to_dense(),
            kind,
            sys.total_retain,
            sys.total_forget,
            sys.lambda,
        )
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }
}

impl Objective for WeightedExpObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let data: f64 = self
            .terms
            .iter()
            .map(|t| t.coef * (-dot(w, &t.direction)).exp())
            .sum();
        data + ridge(w, self.lambda)
    }

    fn grad_into(&self, w: &[f64], out: &mut [f64]) {
        for (o, wj) in out.iter_mut().zip(w) {
            *o = self.lambda * wj;
        }
        for t in &self.terms {
            let s = t.coef * (-dot(w, &t.direction)).exp();
            for (o, d) in out.iter_mut().zip(&t.direction) {
                *o -= s * d;
            }
        }
    }
}

/// `1 / (1 + exp(-(1 + z)/2))`, which crosses 1/2 at `z = -1`.
pub fn shifted_sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-(1.0 + z) / 2.0).exp())
}

/// Weighted MSE of `sigma(a x + b x^2)` against `{0,1}` targets, normalized
/// by the number of listed samples, plus a ridge on `(a, b)`.
#[derive(Debug, Clone)]
pub struct SigmoidMse<'a> {
    pub data: &'a DenseDataset,
    pub lambda: f64,
}

impl SigmoidMse<'_> {
    fn per_sample(&self, theta: &[f64], mut f: impl FnMut(f64, f64, f64, &[f64])) {
        for s in self.data.samples() {
            let z = theta[0] * s.features[0] + theta[1] * s.features[1];
            let p = shifted_sigmoid(z);
            f(s.multiplicity, p, s.label.target(), &s.features);
        }
    }
}

impl Objective for SigmoidMse<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let mut total = 0.0;
        self.per_sample(theta, |m, p, t, _| total += m * (p - t) * (p - t));
        total / self.data.len() as f64 + ridge(theta, self.lambda)
    }

    fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.data.len() as f64;
        out[0] = self.lambda * theta[0];
        out[1] = self.lambda * theta[1];
        self.per_sample(theta, |m, p, t, x| {
            // d sigma / dz = sigma (1 - sigma) / 2
            let dz = m * (p - t) * p * (1.0 - p) / n;
            out[0] += dz * x[0];
            out[1] += dz * x[1];
        });
    }
}

fn check_mse_shape(theta: &[f64], data: &DenseDataset) -> Result<()> {
    check_dim(theta, 2)?;
    if data.is_empty() {
        return Err(Error::Empty("sigmoid-mse dataset"));
    }
    if data.dimension() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: data.dimension(),
        });
    }
    Ok(())
}

pub fn loss_mse_sigmoid(theta: &[f64], data: &DenseDataset, lambda: f64) -> Result<f64> {
    check_mse_shape(theta, data)?;
    Ok(SigmoidMse { data, lambda }.loss(theta))
}

pub fn grad_mse_sigmoid(theta: &[f64], data: &DenseDataset, lambda: f64) -> Result<(f64, f64)> {
    check_mse_shape(theta, data)?;
    let g = SigmoidMse { data, lambda }.grad(theta);
    Ok((g[0], g[1]))
}
