use serde::{Deserialize, Serialize};

use super::{Assertion, ExperimentReport, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::random_sets::{monte_carlo_gap, three_sigma, GapRow, GapStudy, NoisyThreshold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSetsParams {
    pub accuracy: f64,
    pub forget_sizes: Vec<u64>,
    pub eps_grid: Vec<f64>,
    pub trials: usize,
}

impl Default for RandomSetsParams {
    fn default() -> Self {
        RandomSetsParams {
            accuracy: 0.9,
            forget_sizes: vec![10, 100, 1000],
            eps_grid: vec![0.05, 0.1, 0.2],
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct MeanRow {
    forget_size: u64,
    population_accuracy: f64,
    mean_acc_forget: f64,
    three_sigma: f64,
}

pub fn run_random_sets(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let p: RandomSetsParams = cfg.resolve()?;
    if p.forget_sizes.is_empty() || p.eps_grid.is_empty() {
        return Err(Error::Config(
            "forget_sizes and eps_grid must be non-empty".into(),
        ));
    }
    let mut report = ExperimentReport::new(Scenario::RandomSets, cfg.seed, &p)?;
    let pop = NoisyThreshold::new(p.accuracy)?;
    let mut sizes = p.forget_sizes.clone();
    sizes.sort_unstable();
    // Each forget size gets its own seed so cells are independent.
    let studies: Vec<GapStudy> = sizes
        .iter()
        .map(|&n| monte_carlo_gap(&pop, n, p.trials, &p.eps_grid, cfg.seed ^ n.rotate_left(17)))
        .collect::<Result<_>>()?;

    let rows: Vec<GapRow> = studies
        .iter()
        .flat_map(|s| s.rows.iter().copied())
        .collect();
    let over = rows
        .iter()
        .filter(|r| r.empirical_frequency > r.bound + three_sigma(r.bound, r.trials))
        .count();
    report.check(Assertion::equals(
        "random_sets.hoeffding_bound",
        over as f64,
        0.0,
    ));

    let means: Vec<MeanRow> = studies
        .iter()
        .map(|s| MeanRow {
            forget_size: s.forget_size,
            population_accuracy: s.population_accuracy,
            mean_acc_forget: s.mean_acc_forget,
            three_sigma: 3.0
                * (p.accuracy * (1.0 - p.accuracy) / (s.forget_size as f64 * s.trials as f64))
                    .sqrt(),
        })
        .collect();
    let biased = means
        .iter()
        .filter(|m| (m.mean_acc_forget - m.population_accuracy).abs() > m.three_sigma)
        .count();
    report.check(Assertion::equals(
        "random_sets.unbiased_forget_accuracy",
        biased as f64,
        0.0,
    ));

    // Larger forget sets concentrate more tightly.
    let mut rises = 0;
    for (k, &eps) in p.eps_grid.iter().enumerate() {
        for pair in studies.windows(2) {
            let (a, b) = (pair[0].rows[k], pair[1].rows[k]);
            let slack = three_sigma(a.empirical_frequency, a.trials)
                + three_sigma(b.empirical_frequency, b.trials);
            if b.empirical_frequency > a.empirical_frequency + slack {
                rises += 1;
            }
            debug_assert_eq!(a.eps, eps);
        }
    }
    report.check(Assertion::equals(
        "random_sets.concentrates_with_size",
        rises as f64,
        0.0,
    ));

    report.table("violation_frequency", &rows)?;
    report.table("forget_accuracy", &means)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_accuracy_has_no_violations() {
        let cfg =
            ScenarioConfig::from_json(r#"{"params": {"accuracy": 1.0, "trials": 1000}}"#).unwrap();
        let rep = run_random_sets(&cfg).unwrap();
        assert!(rep.passed());
        let body = &rep.tables["violation_frequency"];
        assert!(body.starts_with("forget_size,eps,bound,empirical_frequency,trials\n"));
        for line in body.lines().skip(1) {
            assert_eq!(line.split(',').nth(3), Some("0.0"));
        }
    }

    #[test]
    fn reference_cell_within_bound() {
        let cfg = ScenarioConfig::from_json(
            r#"{"params": {"forget_sizes": [100], "eps_grid": [0.1], "trials": 2000}}"#,
        )
        .unwrap();
        let rep = run_random_sets(&cfg).unwrap();
        assert!(rep.passed(), "{:?}", rep.assertions);
    }
}
