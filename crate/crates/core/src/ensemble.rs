//! Small logistic ensembles on a synthetic correlated dataset, used to
//! exercise KLoM.
//!
//! The dataset mirrors the correlated 2D system: a retain group along
//! `(1, eps)` and a forget group along `(eps, 1)` share the first two
//! coordinates, and every other group sits on its own orthogonal axis.
//! Every model trains on a stratified bootstrap of its training set, so an
//! ensemble samples the randomness of the training process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{DenseDataset, Label, Sample};
use crate::error::{Error, Result};
use crate::klom::SetLabel;
use crate::losses::{ExpTerm, Objective, ObjectiveKind, WeightedExpObjective};
use crate::optimizers::{gradient_descent, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelatedSpec {
    pub epsilon: f64,
    /// Orthogonal retain groups besides the correlated pair.
    pub n_blocks: usize,
    pub per_block: usize,
    pub pair_retain: usize,
    pub forget: usize,
    /// Fresh draws per retain group.
    pub validation_per_group: usize,
    pub noise: f64,
}

impl Default for CorrelatedSpec {
    fn default() -> Self {
        CorrelatedSpec {
            epsilon: 0.5,
            n_blocks: 4,
            per_block: 20,
            pair_retain: 20,
            forget: 10,
            validation_per_group: 10,
            noise: 0.1,
        }
    }
}

impl CorrelatedSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::param("epsilon", "must lie in [0, 1)"));
        }
        if self.forget == 0 || self.pair_retain == 0 {
            return Err(Error::param(
                "forget",
                "both correlated groups need samples",
            ));
        }
        if self.n_blocks > 0 && self.per_block == 0 {
            return Err(Error::param(
                "per_block",
                "must be positive when blocks exist",
            ));
        }
        if self.validation_per_group == 0 {
            return Err(Error::param("validation_per_group", "must be positive"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::param("noise", "must be non-negative"));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        2 + self.n_blocks
    }

    /// `(center, label, count)` of every retain group.
    fn retain_groups(&self) -> Vec<(Vec<f64>, Label, usize)> {
        let d = self.dimension();
        let mut pair = vec![0.0; d];
        pair[0] = 1.0;
        pair[1] = self.epsilon;
        let mut groups = vec![(pair, Label::Positive, self.pair_retain)];
        for k in 0..self.n_blocks {
            let mut c = vec![0.0; d];
            c[2 + k] = 1.0;
            let label = if k % 2 == 0 {
                Label::Negative
            } else {
                Label::Positive
            };
            groups.push((c, label, self.per_block));
        }
        groups
    }

    fn forget_center(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dimension()];
        c[0] = self.epsilon;
        c[1] = 1.0;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedData {
    pub train: DenseDataset,
    pub validation: DenseDataset,
}

impl CorrelatedData {
    /// Points on which a set's margins are measured.
    pub fn eval_points(&self, set: SetLabel) -> DenseDataset {
        let idx: Vec<usize> = match set {
            SetLabel::Forget => self.train.forget_indices().iter().copied().collect(),
            SetLabel::Retain => (0..self.train.len())
                .filter(|&i| !self.train.is_forget(i))
                .collect(),
            SetLabel::Validation => return self.validation.clone(),
        };
        self.train.select(&idx)
    }
}

/// Sample `label * center + noise`, so that `y x` is the center plus noise.
fn draw(center: &[f64], label: Label, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Sample {
    let features = center
        .iter()
        .map(|c| label.sign() * c + noise.sample(rng))
        .collect();
    Sample::new(features, label, 1.0)
}

pub fn make_correlated_dataset(spec: &CorrelatedSpec, seed: u64) -> Result<CorrelatedData> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::param("noise", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = spec.retain_groups();
    let mut train = Vec::new();
    for (c, label, n) in &groups {
        for _ in 0..*n {
            train.push(draw(c, *label, &noise, &mut rng));
        }
    }
    let first_forget = train.len();
    let fc = spec.forget_center();
    for _ in 0..spec.forget {
        train.push(draw(&fc, Label::Positive, &noise, &mut rng));
    }
    let mut validation = Vec::new();
    for (c, label, _) in &groups {
        for _ in 0..spec.validation_per_group {
            validation.push(draw(c, *label, &noise, &mut rng));
        }
    }
    Ok(CorrelatedData {
        train: DenseDataset::new(train, first_forget..first_forget + spec.forget)?,
        validation: DenseDataset::new(validation, [])?,
    })
}

/// Independent random streams for the different ensembles of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRole {
    Oracle,
    Treatment,
    Calibration,
    Holdout,
}

impl EnsembleRole {
    fn stream(self, model: usize) -> u64 {
        let role = match self {
            EnsembleRole::Oracle => 1u64,
            EnsembleRole::Treatment => 2,
            EnsembleRole::Calibration => 3,
            EnsembleRole::Holdout => 4,
        };
        (role << 32) | model as u64
    }
}

fn model_rng(seed: u64, role: EnsembleRole, model: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role.stream(model));
    rng
}

/// Copy of `data` whose multiplicities are bootstrap counts, drawn
/// separately within the retain and the forget part so both sizes stay fixed.
pub fn stratified_bootstrap(data: &DenseDataset, rng: &mut ChaCha8Rng) -> DenseDataset {
    let mut counts = vec![0.0; data.len()];
    let (forget, retain): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| data.is_forget(i));
    for part in [&retain, &forget] {
        for _ in 0..part.len() {
            counts[part[rng.random_range(0..part.len())]] += 1.0;
        }
    }
    let samples = data
        .samples()
        .iter()
        .zip(counts)
        .map(|(s, m)| Sample::new(s.features.clone(), s.label, m))
        .collect();
    DenseDataset::new(samples, data.forget_indices().iter().copied()).expect("same layout as input")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            eta: 1.0,
            max_iters: 100_000,
            grad_tol: 1e-8,
        }
    }
}

impl TrainConfig {
    fn solver(&self) -> SolverConfig {
        SolverConfig::default()
            .with_eta(self.eta)
            .with_max_iters(self.max_iters)
            .with_grad_tol(self.grad_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnMethod {
    /// Leave the pretrained model untouched.
    None,
    Retrain,
    /// Gradient ascent on the forget loss alone.
    Ga,
    /// Alternating retain descent and forget ascent steps.
    Gda,
}

impl UnlearnMethod {
    pub const ALL: [UnlearnMethod; 4] = [
        UnlearnMethod::None,
        UnlearnMethod::Retrain,
        UnlearnMethod::Ga,
        UnlearnMethod::Gda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnlearnMethod::None => "none",
            UnlearnMethod::Retrain => "retrain",
            UnlearnMethod::Ga => "ga",
            UnlearnMethod::Gda => "gda",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub eta: f64,
    pub steps: usize,
    /// Snapshot every this many steps (and at the end).
    pub checkpoint_every: usize,
    /// A model whose weights reach the edge of `[-guard, guard]` is
    /// scaled back onto it and stops moving.
    pub guard: f64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            eta: 0.5,
            steps: 200,
            checkpoint_every: 10,
            guard: 1e3,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param("eta", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::param("checkpoint_every", "must be positive"));
        }
        if !(self.guard > 0.0) {
            return Err(Error::param("guard", "must be positive"));
        }
        Ok(())
    }

    /// Step indices at which snapshots are taken.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut c: Vec<usize> = (0..=self.steps).step_by(self.checkpoint_every).collect();
        if c.last() != Some(&self.steps) {
            c.push(self.steps);
        }
        c
    }
}

fn train(data: &DenseDataset, kind: ObjectiveKind, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let obj = WeightedExpObjective::from_dense(data, kind, cfg.lambda);
    let rep = gradient_descent(&obj, &vec![0.0; data.dimension()], &cfg.solver())?;
    if !rep.converged() {
        return Err(Error::Precondition(format!(
            "ensemble member did not converge ({:?} after {} steps)",
            rep.status, rep.iters
        )));
    }
    Ok(rep.w_star)
}

/// Ascent on the mean forget loss, written as descent on negated terms.
fn forget_ascent(data: &DenseDataset, lambda: f64) -> WeightedExpObjective {
    let mass: f64 = data.forget_samples().map(|s| s.multiplicity).sum();
    let terms = data
        .forget_samples()
        .filter(|s| s.multiplicity > 0.0)
        .map(|s| ExpTerm {
            coef: -s.multiplicity / mass,
            direction: s.features.iter().map(|x| s.label.sign() * x).collect(),
        })
        .collect();
    WeightedExpObjective::new(terms, data.dimension(), lambda).expect("dimensions come from data")
}

fn step(obj: &impl Objective, w: &mut [f64], g: &mut [f64], eta: f64) {
    obj.grad_into(w, g);
    for (wj, gj) in w.iter_mut().zip(g.iter()) {
        *wj -= eta * gj;
    }
}

/// Runs `method` from `start` and returns one snapshot per checkpoint.
fn unlearn_path(
    method: UnlearnMethod,
    boot: &DenseDataset,
    start: Vec<f64>,
    train_cfg: &TrainConfig,
    cfg: &UnlearnConfig,
) -> Result<Vec<Vec<f64>>> {
    let checkpoints = cfg.checkpoints();
    match method {
        UnlearnMethod::None => return Ok(vec![start; checkpoints.len()]),
        UnlearnMethod::Retrain => {
            let w = train(boot, ObjectiveKind::Retrain, train_cfg)?;
            return Ok(vec![w; checkpoints.len()]);
        }
        _ => {}
    }
    let retain = WeightedExpObjective::from_dense(boot, ObjectiveKind::Retrain, train_cfg.lambda);
    let ascent = forget_ascent(
        boot,
        if method == UnlearnMethod::Gda {
            train_cfg.lambda
        } else {
            0.0
        },
    );
    let mut w = start;
    let mut g = vec![0.0; w.len()];
    let mut snaps = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    let mut frozen = false;
    for k in 0..=cfg.steps {
        if next.peek() == Some(&&k) {
            snaps.push(w.clone());
            next.next();
        }
        if k == cfg.steps || frozen {
            continue;
        }
        let before = w.clone();
        if method == UnlearnMethod::Gda {
            step(&retain, &mut w, &mut g, cfg.eta);
        }
        step(&ascent, &mut w, &mut g, cfg.eta);
        if w.iter().any(|v| !v.is_finite()) {
            w = before;
            frozen = true;
        }
        // Runaway models stop on the guard box rather than wherever the
        // last step threw them, so one overshoot cannot dominate the
        // pooled margin range.
        let top = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if top >= cfg.guard {
            w.iter_mut().for_each(|v| *v *= cfg.guard / top);
            frozen = true;
        }
    }
    Ok(snaps)
}

/// Trains `models` members on bootstraps of `data` with the given objective.
pub fn train_ensemble(
    data: &DenseDataset,
    kind: ObjectiveKind,
    cfg: &TrainConfig,
    models: usize,
    seed: u64,
    role: EnsembleRole,
) -> Result<Vec<Vec<f64>>> {
    (0..models)
        .into_par_iter()
        .map(|m| {
            let boot = stratified_bootstrap(data, &mut model_rng(seed, role, m));
            train(&boot, kind, cfg)
        })
        .collect()
}

/// Pretrains each member on its own bootstrap, then unlearns it with
/// `method`. Returns `snapshots[checkpoint][model]`.
pub fn unlearned_ensemble(
    data: &DenseDataset,
    method: UnlearnMethod,
    train_cfg: &TrainConfig,
    cfg: &UnlearnConfig,
    models: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    cfg.validate()?;
    let paths: Vec<Vec<Vec<f64>>> = (0..models)
        .into_par_iter()
        .map(|m| {
            let boot = stratified_bootstrap(data, &mut model_rng(seed, EnsembleRole::Treatment, m));
            let pre = train(&boot, ObjectiveKind::Pretrain, train_cfg)?;
            unlearn_path(method, &boot, pre, train_cfg, cfg)
        })
        .collect::<Result<_>>()?;
    let n_checks = cfg.checkpoints().len();
    Ok((0..n_checks)
        .map(|c| paths.iter().map(|p| p[c].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::dot;

    #[test]
    fn dataset_layout() {
        let spec = CorrelatedSpec::default();
        let data = make_correlated_dataset(&spec, 1).unwrap();
        assert_eq!(data.train.len(), 20 + 4 * 20 + 10);
        assert_eq!(data.train.forget_indices().len(), 10);
        assert_eq!(data.validation.len(), 5 * 10);
        assert_eq!(data.train.dimension(), 6);
        assert!(data.validation.forget_indices().is_empty());
        assert_eq!(data.eval_points(SetLabel::Forget).len(), 10);
        assert_eq!(data.eval_points(SetLabel::Retain).len(), 100);
        // Forget points line up with (eps, 1).
        for s in data.train.forget_samples() {
            assert!((s.features[1] - 1.0).abs() < 1.0);
        }
    }

    #[test]
    fn noiseless_groups_sit_on_their_centers() {
        let spec = CorrelatedSpec {
            noise: 0.0,
            ..CorrelatedSpec::default()
        };
        let data = make_correlated_dataset(&spec, 0).unwrap();
        for s in data.train.samples() {
            let norm = dot(&s.features, &s.features).sqrt();
            assert!(norm == 1.0 || (norm - (1.0f64 + 0.25).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn dataset_is_seeded() {
        let spec = CorrelatedSpec::default();
        assert_eq!(
            make_correlated_dataset(&spec, 4).unwrap(),
            make_correlated_dataset(&spec, 4).unwrap()
        );
        assert_ne!(
            make_correlated_dataset(&spec, 4).unwrap(),
            make_correlated_dataset(&spec, 5).unwrap()
        );
    }

    #[test]
    fn bootstrap_keeps_part_sizes() {
        let data = make_correlated_dataset(&CorrelatedSpec::default(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let boot = stratified_bootstrap(&data.train, &mut rng);
        let f: f64 = boot.forget_samples().map(|s| s.multiplicity).sum();
        let r: f64 = boot.retain_samples().map(|s| s.multiplicity).sum();
        assert_eq!((r, f), (100.0, 10.0));
    }

    #[test]
    fn ensembles_are_reproducible_and_roles_differ() {
        let data = make_correlated_dataset(&CorrelatedSpec::default(), 2).unwrap();
        let cfg = TrainConfig::default();
        let a = train_ensemble(
            &data.train,
            ObjectiveKind::Retrain,
            &cfg,
            4,
            9,
            EnsembleRole::Oracle,
        )
        .unwrap();
        let b = train_ensemble(
            &data.train,
            ObjectiveKind::Retrain,
            &cfg,
            4,
            9,
            EnsembleRole::Oracle,
        )
        .unwrap();
        let c = train_ensemble(
            &data.train,
            ObjectiveKind::Retrain,
            &cfg,
            4,
            9,
            EnsembleRole::Calibration,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn checkpoints_cover_the_end() {
        let cfg = UnlearnConfig {
            steps: 25,
            checkpoint_every: 10,
            ..UnlearnConfig::default()
        };
        assert_eq!(cfg.checkpoints(), vec![0, 10, 20, 25]);
    }

    #[test]
    fn ascent_lowers_forget_margins() {
        let data = make_correlated_dataset(&CorrelatedSpec::default(), 3).unwrap();
        let cfg = UnlearnConfig {
            steps: 20,
            checkpoint_every: 20,
            ..UnlearnConfig::default()
        };
        let snaps = unlearned_ensemble(
            &data.train,
            UnlearnMethod::Ga,
            &TrainConfig::default(),
            &cfg,
            3,
            1,
        )
        .unwrap();
        let forget = data.eval_points(SetLabel::Forget);
        for (start, end) in snaps[0].iter().zip(&snaps[1]) {
            let before: f64 = forget.samples().iter().map(|s| s.margin(start)).sum();
            let after: f64 = forget.samples().iter().map(|s| s.margin(end)).sum();
            assert!(after < before);
        }
        let none = unlearned_ensemble(
            &data.train,
            UnlearnMethod::None,
            &TrainConfig::default(),
            &cfg,
            3,
            1,
        )
        .unwrap();
        assert_eq!(none[0], snaps[0]);
        assert_eq!(none[1], none[0]);
    }

    #[test]
    fn runaway_models_stop_on_the_guard_box() {
        let data = make_correlated_dataset(&CorrelatedSpec::default(), 3).unwrap();
        let cfg = UnlearnConfig {
            eta: 5.0,
            steps: 50,
            checkpoint_every: 1,
            guard: 10.0,
        };
        let snaps = unlearned_ensemble(
            &data.train,
            UnlearnMethod::Ga,
            &TrainConfig::default(),
            &cfg,
            4,
            2,
        )
        .unwrap();
        for m in 0..4 {
            let top = |w: &[f64]| w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let hit = snaps
                .iter()
                .position(|s| top(&s[m]) >= 10.0 * (1.0 - 1e-12))
                .expect("ascent runs away");
            assert!(snaps.iter().all(|s| top(&s[m]) <= 10.0 * (1.0 + 1e-12)));
            for later in &snaps[hit..] {
                assert_eq!(later[m], snaps[hit][m]);
            }
        }
    }
}
