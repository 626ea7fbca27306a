//! Concentration of forget-set accuracy around test accuracy when the forget
//! set is a uniformly random draw.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Label;
use crate::error::{Error, Result};

/// Fewer trials than this make the 3-sigma comparison meaningless.
pub const MIN_TRIALS: usize = 1000;

/// `min(1, 2 exp(-2 |F| eps^2))`.
pub fn hoeffding_bound(forget_size: u64, eps: f64) -> f64 {
    (2.0 * (-2.0 * forget_size as f64 * eps * eps).exp()).min(1.0)
}

/// Binomial 3-sigma slack for a frequency estimated from `trials` draws.
pub fn three_sigma(p: f64, trials: usize) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGapTrial {
    pub acc_test: f64,
    pub acc_forget: f64,
    pub gap: f64,
}

impl AccuracyGapTrial {
    pub fn new(acc_test: f64, acc_forget: f64) -> Self {
        AccuracyGapTrial {
            acc_test,
            acc_forget,
            gap: (acc_test - acc_forget).abs(),
        }
    }
}

/// A labelled population with a known accuracy for a fixed predictor.
pub trait Population: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, Label);
    fn predict(&self, x: f64) -> Label;
    /// Exact population accuracy of [`Population::predict`].
    fn accuracy(&self) -> f64;
}

/// `x ~ U(-1, 1)`, true label `sign(x)` flipped with probability `1 - p`,
/// predictor `sign(x)`. The predictor's accuracy is exactly `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyThreshold {
    pub accuracy: f64,
}

impl NoisyThreshold {
    pub fn new(accuracy: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::param("accuracy", "must lie in [0, 1]"));
        }
        Ok(NoisyThreshold { accuracy })
    }
}

fn sign_label(x: f64) -> Label {
    if x >= 0.0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

impl Population for NoisyThreshold {
    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, Label) {
        let x: f64 = rng.random_range(-1.0..1.0);
        let clean = sign_label(x);
        let flip = rng.random::<f64>() >= self.accuracy;
        let label = match (clean, flip) {
            (l, false) => l,
            (Label::Positive, true) => Label::Negative,
            (Label::Negative, true) => Label::Positive,
        };
        (x, label)
    }

    fn predict(&self, x: f64) -> Label {
        sign_label(x)
    }

    fn accuracy(&self) -> f64 {
        self.accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub forget_size: u64,
    pub eps: f64,
    pub bound: f64,
    pub empirical_frequency: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub forget_size: u64,
    pub trials: usize,
    pub population_accuracy: f64,
    pub mean_acc_forget: f64,
    pub rows: Vec<GapRow>,
}

/// Forget-set accuracy for trial `trial`. The stream depends only on
/// `(seed, trial)`, so trials can run in any order.
fn forget_accuracy<P: Population>(pop: &P, forget_size: u64, seed: u64, trial: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let correct = (0..forget_size)
        .filter(|_| {
            let (x, label) = pop.draw(&mut rng);
            pop.predict(x) == label
        })
        .count();
    correct as f64 / forget_size as f64
}

/// Fraction of random forget sets whose accuracy misses the population
/// accuracy by at least each `eps`.
pub fn monte_carlo_gap<P: Population>(
    pop: &P,
    forget_size: u64,
    trials: usize,
    eps_grid: &[f64],
    seed: u64,
) -> Result<GapStudy> {
    if forget_size == 0 {
        return Err(Error::param("forget_size", "must be at least 1"));
    }
    if trials < MIN_TRIALS {
        return Err(Error::param(
            "trials",
            format!("need at least {MIN_TRIALS}"),
        ));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::param("eps_grid", "every eps must be positive"));
    }
    let acc_test = pop.accuracy();
    let gaps: Vec<AccuracyGapTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|t| AccuracyGapTrial::new(acc_test, forget_accuracy(pop, forget_size, seed, t)))
        .collect();
    let mean_acc_forget = gaps.iter().map(|g| g.acc_forget).sum::<f64>() / trials as f64;
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            // Tolerate rounding in count/|F| so exact hits count as violations.
            let hits = gaps.iter().filter(|g| g.gap >= eps - 1e-12).count();
            GapRow {
                forget_size,
                eps,
                bound: hoeffding_bound(forget_size, eps),
                empirical_frequency: hits as f64 / trials as f64,
                trials,
            }
        })
        .collect();
    Ok(GapStudy {
        forget_size,
        trials,
        population_accuracy: acc_test,
        mean_acc_forget,
        rows,
    })
}

pub fn write_gap_csv<'a, W: Write>(
    studies: impl IntoIterator<Item = &'a GapStudy>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for study in studies {
        for row in &study.rows {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bound_reference_values() {
        assert!((hoeffding_bound(100, 0.1) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((hoeffding_bound(100, 0.1) - 0.27067).abs() < 1e-5);
        assert_eq!(hoeffding_bound(5, 0.0), 1.0);
        assert_eq!(hoeffding_bound(1, 0.01), 1.0);
    }

    #[test]
    fn perfect_predictor_never_violates() {
        let pop = NoisyThreshold::new(1.0).unwrap();
        let study = monte_carlo_gap(&pop, 50, 1000, &[0.01, 0.5], 3).unwrap();
        assert_eq!(study.mean_acc_forget, 1.0);
        assert!(study.rows.iter().all(|r| r.empirical_frequency == 0.0));
    }

    #[test]
    fn gap_beyond_one_is_impossible() {
        let pop = NoisyThreshold::new(0.5).unwrap();
        let study = monte_carlo_gap(&pop, 3, 2000, &[1.01], 9).unwrap();
        assert_eq!(study.rows[0].empirical_frequency, 0.0);
    }

    #[test]
    fn reference_frequency_is_within_bound() {
        let pop = NoisyThreshold::new(0.9).unwrap();
        let trials = 4000;
        let study = monte_carlo_gap(&pop, 100, trials, &[0.1], 11).unwrap();
        let row = study.rows[0];
        assert!(row.empirical_frequency <= row.bound + three_sigma(row.bound, trials));
        // Forget accuracy is an unbiased estimate of test accuracy.
        let sd = (0.9 * 0.1 / (100.0 * trials as f64)).sqrt();
        assert!((study.mean_acc_forget - 0.9).abs() <= 3.0 * sd);
    }

    #[test]
    fn deterministic_per_seed() {
        let pop = NoisyThreshold::new(0.7).unwrap();
        let a = monte_carlo_gap(&pop, 20, 1000, &[0.05, 0.2], 5).unwrap();
        let b = monte_carlo_gap(&pop, 20, 1000, &[0.05, 0.2], 5).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo_gap(&pop, 20, 1000, &[0.05, 0.2], 6).unwrap();
        assert_ne!(a.mean_acc_forget, c.mean_acc_forget);
    }

    #[test]
    fn rejects_bad_arguments() {
        let pop = NoisyThreshold::new(0.7).unwrap();
        assert!(monte_carlo_gap(&pop, 0, 1000, &[0.1], 0).is_err());
        assert!(monte_carlo_gap(&pop, 10, 999, &[0.1], 0).is_err());
        assert!(monte_carlo_gap(&pop, 10, 1000, &[0.0], 0).is_err());
        assert!(NoisyThreshold::new(1.5).is_err());
    }

    #[test]
    fn csv_columns() {
        let pop = NoisyThreshold::new(0.8).unwrap();
        let study = monte_carlo_gap(&pop, 10, 1000, &[0.1], 0).unwrap();
        let mut buf = Vec::new();
        write_gap_csv([&study], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("forget_size,eps,bound,empirical_frequency,trials\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bound_decays_in_forget_size(n in 1u64..10_000, eps in 0.001f64..1.0) {
            prop_assert!(hoeffding_bound(n + 1, eps) <= hoeffding_bound(n, eps));
            let b = hoeffding_bound(n, eps);
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn frequency_within_bound(
            n in 1u64..200, p in 0.5f64..1.0, eps in 0.02f64..0.5, seed in any::<u64>(),
        ) {
            let pop = NoisyThreshold::new(p).unwrap();
            let trials = 1000;
            let study = monte_carlo_gap(&pop, n, trials, &[eps], seed).unwrap();
            let row = study.rows[0];
            prop_assert!(row.empirical_frequency <= row.bound + three_sigma(row.bound, trials));
            let sd = (p * (1.0 - p) / (n as f64 * trials as f64)).sqrt();
            prop_assert!((study.mean_acc_forget - p).abs() <= 4.0 * sd + 1e-12);
        }
    }
}
