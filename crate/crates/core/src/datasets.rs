//! Dataset families: semi-orthogonal block data, the correlated 2D pair, the
//! weighted four-point toy set, dense sample sets and random forget partitions.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One coordinate block of a semi-orthogonal dataset.
///
/// Every sample in the block is supported on `coordinate` alone and satisfies
/// `y * x = 1` there, so only the counts matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub coordinate: usize,
    pub retain: u64,
    pub forget: u64,
}

impl Block {
    /// Forget-to-retain ratio `|F_j| / |R_j|`; infinite for a pure-forget block.
    pub fn alpha(&self) -> f64 {
        if self.forget == 0 {
            0.0
        } else if self.retain == 0 {
            f64::INFINITY
        } else {
            self.forget as f64 / self.retain as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockSpec", into = "BlockSpec")]
pub struct BlockDataset {
    blocks: Vec<Block>,
    total_retain: u64,
    total_forget: u64,
}

/// Serialized form of a [`BlockDataset`]: a list of `{retain, forget}` counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub blocks: Vec<BlockCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub retain: u64,
    pub forget: u64,
}

impl TryFrom<BlockSpec> for BlockDataset {
    type Error = Error;

    fn try_from(spec: BlockSpec) -> Result<Self> {
        make_block_dataset(spec.blocks.iter().map(|b| (b.retain, b.forget)))
    }
}

impl From<BlockDataset> for BlockSpec {
    fn from(data: BlockDataset) -> Self {
        BlockSpec {
            blocks: data
                .blocks
                .iter()
                .map(|b| BlockCounts {
                    retain: b.retain,
                    forget: b.forget,
                })
                .collect(),
        }
    }
}

/// Builds a block dataset with one coordinate per `(retain, forget)` pair.
pub fn make_block_dataset<I>(spec: I) -> Result<BlockDataset>
where
    I: IntoIterator<Item = (u64, u64)>,
{
    let blocks: Vec<Block> = spec
        .into_iter()
        .enumerate()
        .map(|(coordinate, (retain, forget))| Block {
            coordinate,
            retain,
            forget,
        })
        .collect();
    if blocks.is_empty() {
        return Err(Error::InvalidDataset("no blocks".into()));
    }
    let total_retain: u64 = blocks.iter().map(|b| b.retain).sum();
    let total_forget: u64 = blocks.iter().map(|b| b.forget).sum();
    if total_retain == 0 {
        return Err(Error::InvalidDataset(
            "at least one retain sample is required".into(),
        ));
    }
    Ok(BlockDataset {
        blocks,
        total_retain,
        total_forget,
    })
}

impl BlockDataset {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> Option<&Block> {
        self.blocks.get(j)
    }

    pub fn dimension(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_retain(&self) -> u64 {
        self.total_retain
    }

    pub fn total_forget(&self) -> u64 {
        self.total_forget
    }

    pub fn total(&self) -> u64 {
        self.total_retain + self.total_forget
    }

    pub fn sizes(&self) -> Sizes {
        Sizes {
            retain: self.total_retain as f64,
            forget: self.total_forget as f64,
        }
    }
}

/// Aggregate set sizes `|R|` and `|F|`; `|D| = |R| + |F|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub retain: f64,
    pub forget: f64,
}

impl Sizes {
    pub fn new(retain: f64, forget: f64) -> Result<Self> {
        if !(retain >= 1.0) || !retain.is_finite() {
            return Err(Error::param("retain", "|R| must be at least 1"));
        }
        if !(forget >= 0.0) || !forget.is_finite() {
            return Err(Error::param("forget", "|F| must be non-negative"));
        }
        Ok(Sizes { retain, forget })
    }

    pub fn total(&self) -> f64 {
        self.retain + self.forget
    }
}

/// The two correlated sample groups `(1, eps)` (retain) and `(eps, 1)`
/// (forget) embedded in a larger semi-orthogonal dataset.
///
/// In the rotated coordinates `x = w_i + eps w_j`, `y = eps w_i + w_j` every
/// stationarity condition depends on the counts only through
/// `|R_ij| / (lambda |S|)` for the relevant set `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoDimSystem {
    pub epsilon: f64,
    pub alpha: f64,
    pub r_ij: f64,
    pub total_retain: f64,
    pub total_forget: f64,
    pub lambda: f64,
}

impl TwoDimSystem {
    pub fn new(
        epsilon: f64,
        alpha: f64,
        r_ij: f64,
        total_retain: f64,
        total_forget: f64,
        lambda: f64,
    ) -> Result<Self> {
        let sys = TwoDimSystem {
            epsilon,
            alpha,
            r_ij,
            total_retain,
            total_forget,
            lambda,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param("epsilon", "must lie strictly in (0, 1)"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::param("alpha", "must be finite and non-negative"));
        }
        if !(self.r_ij > 0.0) || !self.r_ij.is_finite() {
            return Err(Error::param("r_ij", "must be positive"));
        }
        if !(self.total_retain >= self.r_ij) {
            return Err(Error::param("total_retain", "|R| must be at least |R_ij|"));
        }
        if !(self.total_forget >= 0.0) || !self.total_forget.is_finite() {
            return Err(Error::param("total_forget", "must be non-negative"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", "must be positive"));
        }
        Ok(())
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        TwoDimSystem { alpha, ..*self }
    }

    pub fn total(&self) -> f64 {
        self.total_retain + self.total_forget
    }

    /// `|R_ij| / (lambda |D|)`.
    pub fn b_pretrain(&self) -> f64 {
        self.r_ij / (self.lambda * self.total())
    }

    /// `|R_ij| / (lambda |R|)`.
    pub fn b_retain(&self) -> f64 {
        self.r_ij / (self.lambda * self.total_retain)
    }

    /// `alpha |R_ij| / (lambda |F|)`, zero when `alpha = 0`.
    pub fn forget_weight(&self) -> f64 {
        if self.alpha == 0.0 {
            0.0
        } else {
            self.alpha * self.r_ij / (self.lambda * self.total_forget)
        }
    }

    /// `1 + eps^2`
    pub fn diag(&self) -> f64 {
        1.0 + self.epsilon * self.epsilon
    }

    /// `2 eps`
    pub fn cross(&self) -> f64 {
        2.0 * self.epsilon
    }

    /// Dense two-feature form: retain group at `(1, eps)` with multiplicity
    /// `|R_ij|`, forget group at `(eps, 1)` with multiplicity `alpha |R_ij|`.
    pub fn to_dense(&self) -> DenseDataset {
        let samples = vec![
            Sample::new(vec![1.0, self.epsilon], Label::Positive, self.r_ij),
            Sample::new(
                vec![self.epsilon, 1.0],
                Label::Positive,
                self.alpha * self.r_ij,
            ),
        ];
        DenseDataset::new(samples, [1usize]).expect("two valid samples")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    /// `{0, 1}` regression target.
    pub fn target(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.sign() as i8
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            _ => Err(format!("label must be +1 or -1, got {v}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
    pub multiplicity: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: Label, multiplicity: f64) -> Self {
        Sample {
            features,
            label,
            multiplicity,
        }
    }

    pub fn margin(&self, w: &[f64]) -> f64 {
        self.label.sign() * dot(w, &self.features)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Explicit samples with real multiplicities and a forget partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseDataset {
    samples: Vec<Sample>,
    forget: BTreeSet<usize>,
}

impl DenseDataset {
    pub fn new<I>(samples: Vec<Sample>, forget: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let forget: BTreeSet<usize> = forget.into_iter().collect();
        if let Some(&bad) = forget.iter().find(|&&i| i >= samples.len()) {
            return Err(Error::InvalidDataset(format!(
                "forget index {bad} out of range for {} samples",
                samples.len()
            )));
        }
        let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            if !s.multiplicity.is_finite() || s.multiplicity < 0.0 {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has invalid multiplicity {}",
                    s.multiplicity
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has non-finite features"
                )));
            }
        }
        Ok(DenseDataset { samples, forget })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn forget_indices(&self) -> &BTreeSet<usize> {
        &self.forget
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.samples.first().map(|s| s.features.len()).unwrap_or(0)
    }

    pub fn is_forget(&self, i: usize) -> bool {
        self.forget.contains(&i)
    }

    /// Sum of multiplicities.
    pub fn effective_count(&self) -> f64 {
        self.samples.iter().map(|s| s.multiplicity).sum()
    }

    pub fn retain_samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.forget.contains(i))
            .map(|(_, s)| s)
    }

    pub fn forget_samples(&self) -> impl Iterator<Item = &Sample> {
        self.forget.iter().map(|&i| &self.samples[i])
    }

    /// Copy with one sample's multiplicity replaced.
    pub fn with_multiplicity(&self, i: usize, multiplicity: f64) -> Result<Self> {
        let mut samples = self.samples.clone();
        samples
            .get_mut(i)
            .ok_or_else(|| Error::InvalidDataset(format!("no sample {i}")))?
            .multiplicity = multiplicity;
        DenseDataset::new(samples, self.forget.iter().copied())
    }

    /// Sub-dataset made of the given indices (duplicates allowed), with an
    /// empty forget set.
    pub fn select(&self, indices: &[usize]) -> DenseDataset {
        DenseDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            forget: BTreeSet::new(),
        }
    }
}

/// Index of the forgotten point in [`make_toy_dataset`].
pub const TOY_FORGET_INDEX: usize = 3;
/// Multiplicity units removed from the forgotten point.
pub const TOY_FORGET_UNITS: f64 = 2.0;

/// The weighted four-point set on features `(x, x^2)`:
/// points `-1, 1, 3, 4` with labels `-, +, -, +` and multiplicities `5, 4, 1, 4`.
/// Two of the four units at `x = 4` form the forget set.
pub fn make_toy_dataset() -> DenseDataset {
    let points = [
        (-1.0, Label::Negative, 5.0),
        (1.0, Label::Positive, 4.0),
        (3.0, Label::Negative, 1.0),
        (4.0, Label::Positive, 4.0),
    ];
    let samples = points
        .iter()
        .map(|&(x, label, m)| Sample::new(vec![x, x * x], label, m))
        .collect();
    DenseDataset::new(samples, [TOY_FORGET_INDEX]).expect("toy dataset is valid")
}

/// Uniformly random `n_forget`-subset of `0..n_total`, deterministic per seed.
pub fn random_forget_partition(
    n_total: usize,
    n_forget: usize,
    seed: u64,
) -> Result<BTreeSet<usize>> {
    if n_forget > n_total {
        return Err(Error::param(
            "n_forget",
            format!("{n_forget} exceeds dataset size {n_total}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n_total, n_forget)
        .into_iter()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_examples() {
        let d = make_block_dataset([(10, 0)]).unwrap();
        assert_eq!(d.dimension(), 1);
        assert_eq!(d.total_retain(), 10);
        assert_eq!(d.total_forget(), 0);
        assert_eq!(d.blocks()[0].alpha(), 0.0);

        let d = make_block_dataset([(4, 4)]).unwrap();
        assert_eq!(d.blocks()[0].alpha(), 1.0);
        assert_eq!(d.total(), 8);

        let d = make_block_dataset([(100, 25), (50, 0)]).unwrap();
        assert_eq!(d.total_retain(), 150);
        assert_eq!(d.total_forget(), 25);
        assert_eq!(d.blocks()[0].alpha(), 0.25);
        assert_eq!(d.blocks()[1].coordinate, 1);
    }

    #[test]
    fn rejects_all_zero_retain() {
        assert!(make_block_dataset([(0, 3), (0, 0)]).is_err());
        assert!(make_block_dataset(Vec::<(u64, u64)>::new()).is_err());
    }

    #[test]
    fn block_json_schema() {
        let d: BlockDataset = serde_json::from_str(
            r#"{"blocks":[{"retain":100,"forget":25},{"retain":50,"forget":0}]}"#,
        )
        .unwrap();
        assert_eq!(d.total(), 175);
        let bad = serde_json::from_str::<BlockDataset>(r#"{"blocks":[{"retain":0,"forget":2}]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn toy_dataset() {
        let d = make_toy_dataset();
        let s4 = &d.samples()[3];
        assert_eq!(s4.features, vec![4.0, 16.0]);
        assert_eq!(s4.label, Label::Positive);
        assert_eq!(s4.multiplicity, 4.0);
        let s1 = &d.samples()[0];
        assert_eq!(s1.features, vec![-1.0, 1.0]);
        assert_eq!(s1.label, Label::Negative);
        assert_eq!(s1.multiplicity, 5.0);
        assert_eq!(d.effective_count(), 14.0);
        let negatives: f64 = d
            .samples()
            .iter()
            .filter(|s| s.label == Label::Negative)
            .map(|s| s.multiplicity)
            .sum();
        assert_eq!(negatives, 6.0);
        assert!(d.is_forget(3));
    }

    #[test]
    fn dense_validation() {
        let s = |m: f64| Sample::new(vec![1.0], Label::Positive, m);
        assert!(DenseDataset::new(vec![s(1.0)], [1]).is_err());
        assert!(DenseDataset::new(vec![s(f64::NAN)], []).is_err());
        assert!(DenseDataset::new(
            vec![s(1.0), Sample::new(vec![1.0, 2.0], Label::Negative, 1.0)],
            []
        )
        .is_err());
    }

    #[test]
    fn partition_edges() {
        assert!(random_forget_partition(10, 0, 3).unwrap().is_empty());
        assert_eq!(
            random_forget_partition(10, 10, 3).unwrap(),
            (0..10).collect::<BTreeSet<_>>()
        );
        assert!(random_forget_partition(10, 11, 3).is_err());
        let a = random_forget_partition(50_000, 500, 17).unwrap();
        let b = random_forget_partition(50_000, 500, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
    }

    #[test]
    fn partition_inclusion_frequency() {
        let (n, k, seeds) = (20usize, 5usize, 4000u64);
        let mut hits = vec![0u32; n];
        for seed in 0..seeds {
            for i in random_forget_partition(n, k, seed).unwrap() {
                hits[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let mean = p * seeds as f64;
        let sigma = (seeds as f64 * p * (1.0 - p)).sqrt();
        for (i, &h) in hits.iter().enumerate() {
            assert!(
                (h as f64 - mean).abs() <= 3.0 * sigma + 1.0,
                "index {i}: {h}"
            );
        }
    }

    proptest! {
        #[test]
        fn block_dataset_serialization_round_trip(
            counts in prop::collection::vec((1u64..1000, 0u64..1000), 1..8)
        ) {
            let d = make_block_dataset(counts.clone()).unwrap();
            let text = serde_json::to_string(&d).unwrap();
            let back: BlockDataset = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
            prop_assert_eq!(d.total(), d.total_retain() + d.total_forget());
        }
    }
}
