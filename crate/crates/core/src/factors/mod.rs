//! The discrete ground-truth factor world.
//!
//! A [`FactorSpace`] is a grid of named discrete factors. One pair of factors
//! may be correlated through a Gaussian band over their normalized
//! coordinates ([`CorrelationSpec`]); every other factor is uniform and
//! independent. Observations are produced by the procedural sprite renderer
//! in [`render`], and observation pairs for weak supervision by [`weak`].

pub mod render;
pub mod weak;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use render::{pgm_strip, render, Observation, RenderConfig, VisualRole};
pub use weak::{sample_weak_pair, sample_weak_pair_with, Regime, WeakPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("invalid factor space: {0}")]
    InvalidSpace(String),
    #[error("value {value} out of range for factor {factor} (cardinality {cardinality})")]
    OutOfRange {
        factor: usize,
        value: usize,
        cardinality: usize,
    },
    #[error("config has {got} values, space has {expected} factors")]
    Arity { expected: usize, got: usize },
    #[error("invalid correlation: {0}")]
    InvalidCorrelation(String),
    #[error("render mismatch: {0}")]
    RenderMismatch(String),
    #[error("degenerate sampler: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, FactorError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FactorSpaceRepr", into = "FactorSpaceRepr")]
pub struct FactorSpace {
    factors: Vec<Factor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorSpaceRepr {
    factors: Vec<Factor>,
}

impl TryFrom<FactorSpaceRepr> for FactorSpace {
    type Error = FactorError;
    fn try_from(r: FactorSpaceRepr) -> Result<Self> {
        FactorSpace::new(r.factors)
    }
}

impl From<FactorSpace> for FactorSpaceRepr {
    fn from(s: FactorSpace) -> Self {
        FactorSpaceRepr { factors: s.factors }
    }
}

impl FactorSpace {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(FactorError::InvalidSpace("no factors".into()));
        }
        let mut total: u64 = 1;
        for (i, f) in factors.iter().enumerate() {
            if f.cardinality < 2 {
                return Err(FactorError::InvalidSpace(format!(
                    "factor {:?} has cardinality {} (< 2)",
                    f.name, f.cardinality
                )));
            }
            if factors[..i].iter().any(|g| g.name == f.name) {
                return Err(FactorError::InvalidSpace(format!("duplicate factor name {:?}", f.name)));
            }
            total = total.checked_mul(f.cardinality as u64).ok_or_else(|| {
                FactorError::InvalidSpace("configuration count overflows 64 bits".into())
            })?;
        }
        Ok(Self { factors })
    }

    /// Convenience constructor from `(name, cardinality)` pairs.
    pub fn from_pairs(pairs: &[(&str, usize)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(name, cardinality)| Factor { name: name.to_string(), cardinality })
                .collect(),
        )
    }

    /// The default sprite world: size, pos-x, pos-y (8 values each), fill and
    /// background shade (4 values each).
    pub fn default_world() -> Self {
        Self::from_pairs(&[("size", 8), ("pos_x", 8), ("pos_y", 8), ("fill", 4), ("background", 4)])
            .expect("default world is valid")
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn cardinality(&self, factor: usize) -> usize {
        self.factors[factor].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn config_count(&self) -> u64 {
        self.factors.iter().map(|f| f.cardinality as u64).product()
    }

    pub fn check(&self, config: &FactorConfig) -> Result<()> {
        if config.0.len() != self.len() {
            return Err(FactorError::Arity { expected: self.len(), got: config.0.len() });
        }
        for (i, (&v, f)) in config.0.iter().zip(&self.factors).enumerate() {
            if v >= f.cardinality {
                return Err(FactorError::OutOfRange { factor: i, value: v, cardinality: f.cardinality });
            }
        }
        Ok(())
    }

    /// Row-major index with the last factor varying fastest.
    pub fn flat_index(&self, config: &FactorConfig) -> u64 {
        config
            .0
            .iter()
            .zip(&self.factors)
            .fold(0u64, |acc, (&v, f)| acc * f.cardinality as u64 + v as u64)
    }

    pub fn config_at(&self, mut index: u64) -> FactorConfig {
        let mut values = vec![0; self.len()];
        for (slot, f) in values.iter_mut().zip(&self.factors).rev() {
            *slot = (index % f.cardinality as u64) as usize;
            index /= f.cardinality as u64;
        }
        FactorConfig(values)
    }

    /// Every configuration of the grid in flat-index order.
    pub fn configs(&self) -> impl Iterator<Item = FactorConfig> + '_ {
        (0..self.config_count()).map(move |i| self.config_at(i))
    }

    /// A configuration with every factor independent and uniform.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> FactorConfig {
        FactorConfig(self.factors.iter().map(|f| rng.random_range(0..f.cardinality)).collect())
    }
}

/// One point of the factor grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorConfig(pub Vec<usize>);

impl FactorConfig {
    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

/// Correlation strength in normalized units. `Infinite` is the uncorrelated
/// limit and is written as the string `"inf"` in JSON.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sigma {
    Finite(f64),
    Infinite,
}

impl Sigma {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Sigma::Infinite)
    }

    pub fn value(&self) -> f64 {
        match *self {
            Sigma::Finite(s) => s,
            Sigma::Infinite => f64::INFINITY,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Sigma::Finite(s) => format!("{s}"),
            Sigma::Infinite => "inf".to_string(),
        }
    }

    /// Total order with `Infinite` last.
    pub fn sort_key(&self) -> f64 {
        self.value()
    }
}

impl std::str::FromStr for Sigma {
    type Err = FactorError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "infinity" | "∞" => Ok(Sigma::Infinite),
            t => {
                let v: f64 = t
                    .parse()
                    .map_err(|_| FactorError::InvalidCorrelation(format!("cannot parse sigma {t:?}")))?;
                if v.is_infinite() && v > 0.0 {
                    Ok(Sigma::Infinite)
                } else if v > 0.0 {
                    Ok(Sigma::Finite(v))
                } else {
                    Err(FactorError::InvalidCorrelation(format!("sigma must be > 0, got {v}")))
                }
            }
        }
    }
}

impl std::fmt::Display for Sigma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for Sigma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Sigma::Finite(v) => s.serialize_f64(v),
            Sigma::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Sigma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v > 0.0 && v.is_finite() => Ok(Sigma::Finite(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("sigma must be > 0, got {v}"))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which factor pair is correlated and how strongly. For causal weak
/// supervision the pair is read as `index_a → index_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub pair: (usize, usize),
    pub sigma: Sigma,
}

impl CorrelationSpec {
    pub fn new(pair: (usize, usize), sigma: Sigma) -> Self {
        Self { pair, sigma }
    }

    pub fn validate(&self, space: &FactorSpace) -> Result<()> {
        let (a, b) = self.pair;
        if a == b {
            return Err(FactorError::InvalidCorrelation("pair indices must differ".into()));
        }
        if a >= space.len() || b >= space.len() {
            return Err(FactorError::InvalidCorrelation(format!(
                "pair ({a}, {b}) out of range for {} factors",
                space.len()
            )));
        }
        if let Sigma::Finite(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(FactorError::InvalidCorrelation(format!("sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn involves(&self, factor: usize) -> bool {
        self.pair.0 == factor || self.pair.1 == factor
    }

    /// The other member of the pair, if `factor` belongs to it.
    pub fn partner(&self, factor: usize) -> Option<usize> {
        if factor == self.pair.0 {
            Some(self.pair.1)
        } else if factor == self.pair.1 {
            Some(self.pair.0)
        } else {
            None
        }
    }
}

#[inline]
fn normalized(value: usize, cardinality: usize) -> f64 {
    value as f64 / (cardinality - 1) as f64
}

/// Squared normalized distance scaled by the band width, i.e. the negated
/// exponent of the joint weight. Zero for the uncorrelated limit.
fn band_exponent(space: &FactorSpace, corr: &CorrelationSpec, v_a: usize, v_b: usize) -> f64 {
    match corr.sigma {
        Sigma::Infinite => 0.0,
        Sigma::Finite(s) => {
            let d = normalized(v_a, space.cardinality(corr.pair.0)) - normalized(v_b, space.cardinality(corr.pair.1));
            d * d / (2.0 * s * s)
        }
    }
}

/// Unnormalized weight of the correlated pair taking values `(v_a, v_b)`.
pub fn joint_weight(space: &FactorSpace, corr: &CorrelationSpec, v_a: usize, v_b: usize) -> Result<f64> {
    corr.validate(space)?;
    let (a, b) = corr.pair;
    for (factor, v) in [(a, v_a), (b, v_b)] {
        if v >= space.cardinality(factor) {
            return Err(FactorError::OutOfRange { factor, value: v, cardinality: space.cardinality(factor) });
        }
    }
    Ok((-band_exponent(space, corr, v_a, v_b)).exp())
}

/// Normalized joint probability table of the correlated pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointTable {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows` = cardinality of `pair.0`.
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn get(&self, v_a: usize, v_b: usize) -> f64 {
        self.probs[v_a * self.cols + v_b]
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.probs[r * self.cols..(r + 1) * self.cols].iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        (0..self.cols).map(|c| (0..self.rows).map(|r| self.get(r, c)).sum()).collect()
    }

    /// Total mass away from the diagonal (`v_a != v_b`).
    pub fn off_diagonal_mass(&self) -> f64 {
        let mut m = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if r != c {
                    m += self.get(r, c);
                }
            }
        }
        m
    }
}

pub fn joint_table(space: &FactorSpace, corr: &CorrelationSpec) -> Result<JointTable> {
    corr.validate(space)?;
    let rows = space.cardinality(corr.pair.0);
    let cols = space.cardinality(corr.pair.1);
    let mut probs = Vec::with_capacity(rows * cols);
    for a in 0..rows {
        for b in 0..cols {
            probs.push((-band_exponent(space, corr, a, b)).exp());
        }
    }
    // (0, 0) always has weight 1, so the total cannot underflow.
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(JointTable { rows, cols, probs })
}

/// Distribution of correlated factor `factor` given the other correlated
/// factor's value. Computed in shifted log space so narrow bands never
/// produce an all-zero row.
pub fn conditional(space: &FactorSpace, corr: &CorrelationSpec, factor: usize, other_value: usize) -> Vec<f64> {
    let (a, _) = corr.pair;
    let partner = corr.partner(factor).expect("factor must belong to the correlated pair");
    debug_assert!(other_value < space.cardinality(partner));
    let exps: Vec<f64> = (0..space.cardinality(factor))
        .map(|v| if factor == a { band_exponent(space, corr, v, other_value) } else { band_exponent(space, corr, other_value, v) })
        .collect();
    let min = exps.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = exps.iter().map(|e| (-(e - min)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|p| *p /= total);
    w
}

/// Draws a configuration: the correlated pair from [`joint_table`], all other
/// factors uniform.
pub fn sample_config<R: Rng + ?Sized>(space: &FactorSpace, corr: &CorrelationSpec, rng: &mut R) -> Result<FactorConfig> {
    let table = joint_table(space, corr)?;
    let sampler = PairSampler::new(&table)?;
    Ok(sampler.sample(space, corr, rng))
}

/// Reusable sampler for many draws from one correlated distribution.
#[derive(Clone, Debug)]
pub struct PairSampler {
    cols: usize,
    index: WeightedIndex<f64>,
}

impl PairSampler {
    pub fn new(table: &JointTable) -> Result<Self> {
        let index = WeightedIndex::new(&table.probs).map_err(|e| FactorError::Degenerate(e.to_string()))?;
        Ok(Self { cols: table.cols, index })
    }

    pub fn for_spec(space: &FactorSpace, corr: &CorrelationSpec) -> Result<Self> {
        Self::new(&joint_table(space, corr)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, space: &FactorSpace, corr: &CorrelationSpec, rng: &mut R) -> FactorConfig {
        let mut config = space.sample_uniform(rng);
        let cell = self.index.sample(rng);
        config.0[corr.pair.0] = cell / self.cols;
        config.0[corr.pair.1] = cell % self.cols;
        config
    }
}

/// Values of the correlated pair whose joint probability is at most
/// `max_probability`; these combinations are out of distribution for a model
/// trained on the correlated data.
pub fn ood_pairs(space: &FactorSpace, corr: &CorrelationSpec, max_probability: f64) -> Result<Vec<(usize, usize)>> {
    let table = joint_table(space, corr)?;
    let mut out = Vec::new();
    for a in 0..table.rows {
        for b in 0..table.cols {
            if table.get(a, b) <= max_probability {
                out.push((a, b));
            }
        }
    }
    Ok(out)
}
