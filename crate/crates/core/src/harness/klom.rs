use serde::{Deserialize, Serialize};

use super::{Assertion, ExperimentReport, Scenario, ScenarioConfig};
use crate::ensemble::{
    make_correlated_dataset, train_ensemble, unlearned_ensemble, CorrelatedData, CorrelatedSpec,
    EnsembleRole, TrainConfig, UnlearnConfig, UnlearnMethod,
};
use crate::error::{Error, Result};
use crate::klom::{
    compute_margins, KlomReport, MarginMatrix, SetLabel, DEFAULT_BINS, DEFAULT_SMOOTHING,
};
use crate::losses::ObjectiveKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlomParams {
    pub dataset: CorrelatedSpec,
    pub train: TrainConfig,
    pub gda: UnlearnConfig,
    pub ga: UnlearnConfig,
    pub models: usize,
    pub bins: usize,
    pub smoothing: f64,
    /// `tau0` is this multiple of the worst identical-process score.
    pub tau_factor: f64,
    pub methods: Vec<UnlearnMethod>,
}

impl Default for KlomParams {
    fn default() -> Self {
        KlomParams {
            dataset: CorrelatedSpec::default(),
            train: TrainConfig::default(),
            gda: UnlearnConfig::default(),
            ga: UnlearnConfig {
                eta: 2.0,
                steps: 100,
                checkpoint_every: 5,
                ..UnlearnConfig::default()
            },
            models: 100,
            bins: DEFAULT_BINS,
            smoothing: DEFAULT_SMOOTHING,
            tau_factor: 1.5,
            methods: UnlearnMethod::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    method: UnlearnMethod,
    set: SetLabel,
    percentile_95: f64,
    tau0: f64,
    below_tau0: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SeriesRow {
    method: UnlearnMethod,
    step: usize,
    set: SetLabel,
    percentile_95: f64,
}

#[derive(Debug, Clone, Serialize)]
struct PointRow {
    method: UnlearnMethod,
    set: SetLabel,
    point: usize,
    klom: f64,
}

#[derive(Debug, Clone, Serialize)]
struct CalibrationRow {
    pair: &'static str,
    set: SetLabel,
    percentile_95: f64,
}

struct Scorer<'a> {
    data: &'a CorrelatedData,
    oracle: Vec<MarginMatrix>,
    bins: usize,
    smoothing: f64,
}

impl Scorer<'_> {
    fn margins(&self, models: &[Vec<f64>], set: SetLabel, tag: &str) -> Result<MarginMatrix> {
        compute_margins(models, &self.data.eval_points(set), tag)
    }

    /// One report per set, in [`SetLabel::ALL`] order.
    fn score(&self, models: &[Vec<f64>], tag: &str) -> Result<Vec<KlomReport>> {
        SetLabel::ALL
            .iter()
            .zip(&self.oracle)
            .map(|(&set, oracle)| {
                let m = self.margins(models, set, tag)?;
                KlomReport::from_margins(set, &m, oracle, self.bins, self.smoothing)
            })
            .collect()
    }
}

fn worst(reports: &[KlomReport]) -> f64 {
    reports.iter().map(|r| r.percentile_95).fold(0.0, f64::max)
}

/// Whether `series` ends in a nondecreasing run that starts no later than
/// its midpoint and ends higher than it starts.
fn grows_past_some_step(series: &[f64]) -> bool {
    let n = series.len();
    if n < 3 {
        return false;
    }
    let mut start = n - 1;
    while start > 0 && series[start - 1] <= series[start] {
        start -= 1;
    }
    start <= n / 2 && series[n - 1] > series[start]
}

pub fn run_klom_ensemble(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let p: KlomParams = cfg.resolve()?;
    if p.models < 2 {
        return Err(Error::Config("models must be at least 2".into()));
    }
    p.gda.validate()?;
    p.ga.validate()?;
    let mut report = ExperimentReport::new(Scenario::KlomEnsemble, cfg.seed, &p)?;
    let data = make_correlated_dataset(&p.dataset, cfg.seed)?;
    let train = &data.train;
    let ensemble = |role| {
        train_ensemble(
            train,
            ObjectiveKind::Retrain,
            &p.train,
            p.models,
            cfg.seed,
            role,
        )
    };

    let oracle_models = ensemble(EnsembleRole::Oracle)?;
    let mut scorer = Scorer {
        data: &data,
        oracle: Vec::new(),
        bins: p.bins,
        smoothing: p.smoothing,
    };
    scorer.oracle = SetLabel::ALL
        .iter()
        .map(|&s| scorer.margins(&oracle_models, s, "oracle"))
        .collect::<Result<_>>()?;

    let calibration = scorer.score(&ensemble(EnsembleRole::Calibration)?, "calibration")?;
    let tau0 = p.tau_factor * worst(&calibration);
    let holdout = scorer.score(&ensemble(EnsembleRole::Holdout)?, "holdout")?;
    let mut calib_rows = Vec::new();
    for (pair, reports) in [("calibration", &calibration), ("holdout", &holdout)] {
        for r in reports {
            calib_rows.push(CalibrationRow {
                pair,
                set: r.set_label,
                percentile_95: r.percentile_95,
            });
        }
    }
    report.check(Assertion::below(
        "klom.identical_process_below_tau",
        worst(&holdout),
        tau0,
    ));

    let mut summary = Vec::new();
    let mut series = Vec::new();
    let mut points = Vec::new();
    for &method in &p.methods {
        let ucfg = match method {
            UnlearnMethod::Ga => p.ga,
            UnlearnMethod::Gda => p.gda,
            UnlearnMethod::None | UnlearnMethod::Retrain => UnlearnConfig { steps: 0, ..p.gda },
        };
        let snaps = unlearned_ensemble(train, method, &p.train, &ucfg, p.models, cfg.seed)?;
        let steps = ucfg.checkpoints();
        let mut last = Vec::new();
        for (step, models) in steps.iter().zip(&snaps) {
            last = scorer.score(models, method.name())?;
            if matches!(method, UnlearnMethod::Ga | UnlearnMethod::Gda) {
                for r in &last {
                    series.push(SeriesRow {
                        method,
                        step: *step,
                        set: r.set_label,
                        percentile_95: r.percentile_95,
                    });
                }
            }
        }
        for r in &last {
            summary.push(SummaryRow {
                method,
                set: r.set_label,
                percentile_95: r.percentile_95,
                tau0,
                below_tau0: r.percentile_95 < tau0,
            });
            points.extend(r.per_point.iter().enumerate().map(|(i, &k)| PointRow {
                method,
                set: r.set_label,
                point: i,
                klom: k,
            }));
        }
        match method {
            UnlearnMethod::None => {
                let (f, v) = (last[0].percentile_95, last[2].percentile_95);
                report.check(Assertion::above(
                    "klom.pretrained_forget_exceeds_validation",
                    f,
                    v,
                ));
            }
            UnlearnMethod::Retrain => {
                report.check(Assertion::below(
                    "klom.retrain_below_tau",
                    worst(&last),
                    tau0,
                ));
            }
            UnlearnMethod::Ga => {
                let failing = [SetLabel::Retain, SetLabel::Validation]
                    .iter()
                    .filter(|&&set| {
                        let s: Vec<f64> = series
                            .iter()
                            .filter(|r| r.method == method && r.set == set)
                            .map(|r| r.percentile_95)
                            .collect();
                        !grows_past_some_step(&s)
                    })
                    .count();
                report.check(Assertion::equals(
                    "klom.ascent_degrades_retained_sets",
                    failing as f64,
                    0.0,
                ));
            }
            UnlearnMethod::Gda => {}
        }
    }

    report.table("klom_summary", &summary)?;
    report.table("klom_series", &series)?;
    report.table("klom_points", &points)?;
    report.table("calibration", &calib_rows)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_detection() {
        assert!(grows_past_some_step(&[0.5, 0.1, 0.2, 0.3, 0.9]));
        assert!(!grows_past_some_step(&[0.1, 0.9, 0.2, 0.3, 0.25]));
        assert!(!grows_past_some_step(&[0.3, 0.3, 0.3]));
        assert!(!grows_past_some_step(&[0.1, 0.2]));
    }

    #[test]
    fn default_run_passes() {
        let rep = run_klom_ensemble(&ScenarioConfig::default()).unwrap();
        assert!(rep.passed(), "{:?}", rep.assertions);
    }
}
