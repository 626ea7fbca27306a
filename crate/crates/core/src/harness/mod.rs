//! Named, seeded scenarios. Each run resolves its parameters, computes its
//! tables, checks its claims and returns an [`ExperimentReport`] whose JSON
//! encoding is identical for identical inputs.

mod klom;
mod one_dim;
mod random_sets;
mod toy;
mod two_dim;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::klom::{run_klom_ensemble, KlomParams};
pub use self::one_dim::{run_one_dim, OneDimParams};
pub use self::random_sets::{run_random_sets, RandomSetsParams};
pub use self::toy::{run_toy_landscape, ToyParams};
pub use self::two_dim::{run_two_dim_region, TwoDimParams};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "UNLEARN_LAB_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "out";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    OneDim,
    TwoDimRegion,
    ToyLandscape,
    RandomSets,
    KlomEnsemble,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::OneDim,
        Scenario::TwoDimRegion,
        Scenario::ToyLandscape,
        Scenario::RandomSets,
        Scenario::KlomEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::OneDim => "one-dim",
            Scenario::TwoDimRegion => "two-dim-region",
            Scenario::ToyLandscape => "toy-landscape",
            Scenario::RandomSets => "random-sets",
            Scenario::KlomEnsemble => "klom-ensemble",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Scenario::OneDim => "closed-form vs numeric stationary points on one block; ordering, distance bounds, ridge trend",
            Scenario::TwoDimRegion => "alpha-eps region of the correlated pair, ordering chain, Gauss-Seidel pretraining solve",
            Scenario::ToyLandscape => "sigmoidal MSE toy: minima of pretrain, retrain and GDA weightings and their counts",
            Scenario::RandomSets => "Monte Carlo accuracy gap of random forget sets against the Hoeffding bound",
            Scenario::KlomEnsemble => "KLoM of unlearned logistic ensembles against oracle ensembles",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!(
                    "unknown scenario `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Contents of a config file: a seed and scenario-specific parameters.
/// Missing parameters take their defaults; unknown ones are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
}

fn empty_params() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            params: empty_params(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ScenarioConfig { seed, ..self }
    }

    /// Parameters resolved against the scenario's defaults.
    pub fn resolve<P: DeserializeOwned>(&self) -> Result<P> {
        serde_json::from_value(self.params.clone()).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub claim_id: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
}

impl Assertion {
    pub fn at_most(claim_id: &str, measured: f64, bound: f64) -> Self {
        Assertion {
            claim_id: claim_id.to_owned(),
            passed: measured <= bound,
            measured,
            bound,
        }
    }

    pub fn at_least(claim_id: &str, measured: f64, bound: f64) -> Self {
        Assertion {
            claim_id: claim_id.to_owned(),
            passed: measured >= bound,
            measured,
            bound,
        }
    }

    /// Strict `measured > bound`.
    pub fn above(claim_id: &str, measured: f64, bound: f64) -> Self {
        Assertion {
            claim_id: claim_id.to_owned(),
            passed: measured > bound,
            measured,
            bound,
        }
    }

    /// Strict `measured < bound`.
    pub fn below(claim_id: &str, measured: f64, bound: f64) -> Self {
        Assertion {
            claim_id: claim_id.to_owned(),
            passed: measured < bound,
            measured,
            bound,
        }
    }

    pub fn equals(claim_id: &str, measured: f64, expected: f64) -> Self {
        Assertion {
            claim_id: claim_id.to_owned(),
            passed: measured == expected,
            measured,
            bound: expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_echo: serde_json::Value,
    /// CSV payloads by table name.
    pub tables: BTreeMap<String, String>,
    pub assertions: Vec<Assertion>,
}

impl ExperimentReport {
    fn new<P: Serialize>(scenario: Scenario, seed: u64, params: &P) -> Result<Self> {
        Ok(ExperimentReport {
            scenario,
            seed,
            config_echo: serde_json::to_value(params)?,
            tables: BTreeMap::new(),
            assertions: Vec::new(),
        })
    }

    fn table<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        self.tables.insert(name.to_owned(), csv_string(rows)?);
        Ok(())
    }

    fn check(&mut self, a: Assertion) {
        self.assertions.push(a);
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes one CSV per table into `dir/<scenario>/`, plus `report.json`
    /// in which each table is replaced by its file name.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let dir = dir.join(self.scenario.name());
        fs::create_dir_all(&dir)?;
        let mut on_disk = ExperimentReport {
            tables: BTreeMap::new(),
            ..self.clone()
        };
        for (name, body) in &self.tables {
            let file = format!("{name}.csv");
            fs::write(dir.join(&file), body)?;
            on_disk.tables.insert(name.clone(), file);
        }
        fs::write(dir.join(REPORT_FILE), on_disk.to_json()?)?;
        Ok(dir)
    }
}

fn csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn run(scenario: Scenario, cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    match scenario {
        Scenario::OneDim => run_one_dim(cfg),
        Scenario::TwoDimRegion => run_two_dim_region(cfg),
        Scenario::ToyLandscape => run_toy_landscape(cfg),
        Scenario::RandomSets => run_random_sets(cfg),
        Scenario::KlomEnsemble => run_klom_ensemble(cfg),
    }
}

/// Default parameters of a scenario as JSON, as written to `configs/`.
pub fn default_params(scenario: Scenario) -> serde_json::Value {
    let v = match scenario {
        Scenario::OneDim => serde_json::to_value(OneDimParams::default()),
        Scenario::TwoDimRegion => serde_json::to_value(TwoDimParams::default()),
        Scenario::ToyLandscape => serde_json::to_value(ToyParams::default()),
        Scenario::RandomSets => serde_json::to_value(RandomSetsParams::default()),
        Scenario::KlomEnsemble => serde_json::to_value(KlomParams::default()),
    };
    v.expect("parameter structs serialize")
}

/// Evenly spaced `n` points from `lo` to `hi` inclusive.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}
