//! KL divergence of margins (KLoM): per-point KL between the margin
//! distribution of an unlearned ensemble and that of an oracle ensemble.
//!
//! Densities are equal-width histograms over the pooled range of both
//! samples with additive smoothing, which keeps every score finite and
//! reproducible bit for bit.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{dot, DenseDataset};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_SMOOTHING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetLabel {
    Forget,
    Retain,
    Validation,
}

impl SetLabel {
    pub const ALL: [SetLabel; 3] = [SetLabel::Forget, SetLabel::Retain, SetLabel::Validation];

    pub fn name(self) -> &'static str {
        match self {
            SetLabel::Forget => "forget",
            SetLabel::Retain => "retain",
            SetLabel::Validation => "validation",
        }
    }
}

/// Margins of every model (rows) on every point (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginMatrix {
    values: Vec<Vec<f64>>,
    model_tag: String,
}

impl MarginMatrix {
    pub fn new(values: Vec<Vec<f64>>, model_tag: impl Into<String>) -> Result<Self> {
        let n_points = values
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("margin matrix"))?;
        for row in &values {
            if row.len() != n_points {
                return Err(Error::DimensionMismatch {
                    expected: n_points,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "margins",
                    reason: "non-finite margin".into(),
                });
            }
        }
        Ok(MarginMatrix {
            values,
            model_tag: model_tag.into(),
        })
    }

    pub fn n_models(&self) -> usize {
        self.values.len()
    }

    pub fn n_points(&self) -> usize {
        self.values[0].len()
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[i]).collect()
    }

    /// Keeps only the listed point columns, in order.
    pub fn select_points(&self, points: &[usize]) -> MarginMatrix {
        MarginMatrix {
            values: self
                .values
                .iter()
                .map(|r| points.iter().map(|&i| r[i]).collect())
                .collect(),
            model_tag: self.model_tag.clone(),
        }
    }

    /// CSV with one row per model and point indices as the header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((0..self.n_points()).map(|i| i.to_string()))?;
        for row in &self.values {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, model_tag: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Io(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        MarginMatrix::new(values, model_tag)
    }
}

/// Signed margins `y_i <w_m, x_i>` of every model on every point.
pub fn compute_margins(
    models: &[Vec<f64>],
    points: &DenseDataset,
    model_tag: &str,
) -> Result<MarginMatrix> {
    let dim = points.dimension();
    if let Some(m) = models.iter().find(|m| m.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: m.len(),
        });
    }
    let values = models
        .iter()
        .map(|w| {
            points
                .samples()
                .iter()
                .map(|s| s.label.sign() * dot(w, &s.features))
                .collect()
        })
        .collect();
    MarginMatrix::new(values, model_tag)
}

fn smoothed_histogram(
    values: &[f64],
    lo: f64,
    width: f64,
    bins: usize,
    smoothing: f64,
) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1.0;
    }
    let norm = values.len() as f64 + bins as f64 * smoothing;
    counts.iter().map(|c| (c + smoothing) / norm).collect()
}

/// `KL(p || q)` between the smoothed histograms of two samples over their
/// pooled range. Zero when every value is identical.
pub fn histogram_kl(p_sample: &[f64], q_sample: &[f64], bins: usize, smoothing: f64) -> f64 {
    let (lo, hi) = p_sample
        .iter()
        .chain(q_sample)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return 0.0;
    }
    let width = (hi - lo) / bins as f64;
    let p = smoothed_histogram(p_sample, lo, width, bins, smoothing);
    let q = smoothed_histogram(q_sample, lo, width, bins, smoothing);
    p.iter()
        .zip(&q)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Per-point KLoM of `unlearned` against `oracle`.
pub fn klom_per_point(
    unlearned: &MarginMatrix,
    oracle: &MarginMatrix,
    bins: usize,
    smoothing: f64,
) -> Result<Vec<f64>> {
    if unlearned.n_points() != oracle.n_points() {
        return Err(Error::DimensionMismatch {
            expected: oracle.n_points(),
            got: unlearned.n_points(),
        });
    }
    if unlearned.n_models() < 2 || oracle.n_models() < 2 {
        return Err(Error::Precondition(
            "each ensemble needs at least two models".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::param("bins", "must be at least 1"));
    }
    if !(smoothing > 0.0) {
        return Err(Error::param("smoothing", "must be positive"));
    }
    Ok((0..unlearned.n_points())
        .into_par_iter()
        .map(|i| histogram_kl(&unlearned.column(i), &oracle.column(i), bins, smoothing))
        .collect())
}

/// Nearest-rank percentile: the `ceil(p n / 100)`-th smallest value.
pub fn klom_aggregate(per_point: &[f64], percentile: f64) -> Result<f64> {
    if per_point.is_empty() {
        return Err(Error::Empty("per-point scores"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::param("percentile", "must lie in [0, 100]"));
    }
    let mut sorted = per_point.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlomReport {
    pub set_label: SetLabel,
    pub percentile_95: f64,
    pub per_point: Vec<f64>,
}

impl KlomReport {
    pub fn new(set_label: SetLabel, per_point: Vec<f64>) -> Result<Self> {
        Ok(KlomReport {
            set_label,
            percentile_95: klom_aggregate(&per_point, 95.0)?,
            per_point,
        })
    }

    pub fn from_margins(
        set_label: SetLabel,
        unlearned: &MarginMatrix,
        oracle: &MarginMatrix,
        bins: usize,
        smoothing: f64,
    ) -> Result<Self> {
        Self::new(
            set_label,
            klom_per_point(unlearned, oracle, bins, smoothing)?,
        )
    }
}
