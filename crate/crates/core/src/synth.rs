//! Synthetic feature sets: independent standard normal columns whose
//! elements are reordered to induce cross-moment structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::matrix::DataMatrix;
use crate::moments::{pairwise_moments, PairTargets};

/// Where a column's reordering pushes particular values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleRule {
    SmallerToEnd,
    LargerToEnd,
    CentralToEnd,
    Unchanged,
}

impl ShuffleRule {
    /// Rule for the 1-based column index: `i mod 4` of 1, 2, 3, 0.
    pub fn for_column(index_one_based: usize) -> Self {
        match index_one_based % 4 {
            1 => ShuffleRule::SmallerToEnd,
            2 => ShuffleRule::LargerToEnd,
            3 => ShuffleRule::CentralToEnd,
            _ => ShuffleRule::Unchanged,
        }
    }

    fn score(self, rank: usize, n: usize) -> f64 {
        let r = rank as f64;
        match self {
            ShuffleRule::SmallerToEnd => -r,
            ShuffleRule::LargerToEnd => r,
            ShuffleRule::CentralToEnd => -(r - n as f64 / 2.0).abs(),
            ShuffleRule::Unchanged => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleScheme {
    pub rules: Vec<ShuffleRule>,
    /// Strength of the weighting; `None` means `3 / n`.
    pub beta: Option<f64>,
}

impl ShuffleScheme {
    /// The standard cyclic assignment for `p` columns.
    pub fn cyclic(p: usize) -> Self {
        Self { rules: (1..=p).map(ShuffleRule::for_column).collect(), beta: None }
    }

    pub fn with_beta(mut self, beta: Option<f64>) -> Self {
        self.beta = beta;
        self
    }

    pub fn beta_for(&self, n: usize) -> f64 {
        self.beta.unwrap_or(3.0 / n as f64)
    }
}

/// Per-column generator: stream `j` of a ChaCha20 generator keyed by `seed`.
fn column_rng(seed: u64, column: usize, purpose: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(column as u64);
    rng
}

/// `n` i.i.d. standard normal observations of `p` independent columns.
pub fn generate_normal(p: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    if p < 1 || n < 2 {
        return Err(KnockoffError::Config(format!("need p >= 1 and n >= 2, got p={p}, n={n}")));
    }
    let columns = (0..p)
        .map(|j| {
            let mut rng = column_rng(seed, j, 1);
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    DataMatrix::from_columns(columns)
}

/// Reorders one column: positions are filled from last to first by weighted
/// draws without replacement, weight `exp(beta * score(rank))`.
///
/// Implemented with Efraimidis-Spirakis keys `ln(u) / w`: sorting the keys in
/// decreasing order yields the same distribution as the sequential draws.
pub fn shuffle_column(column: &[f64], rule: ShuffleRule, beta: f64, rng: &mut impl Rng) -> Vec<f64> {
    if rule == ShuffleRule::Unchanged {
        return column.to_vec();
    }
    let n = column.len();
    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    // ranks 1..=n in ascending value order
    let mut keyed: Vec<(f64, usize)> = by_value
        .iter()
        .enumerate()
        .map(|(rank0, &idx)| {
            let log_w = beta * rule.score(rank0 + 1, n);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() * (-log_w).exp(), idx)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    // first draw lands in the last position
    keyed.iter().rev().map(|&(_, idx)| column[idx]).collect()
}

pub fn shuffle(matrix: &DataMatrix, scheme: &ShuffleScheme, seed: u64) -> Result<DataMatrix> {
    if scheme.rules.len() != matrix.ncols() {
        return Err(KnockoffError::Config(format!(
            "scheme has {} rules for {} columns",
            scheme.rules.len(),
            matrix.ncols()
        )));
    }
    let beta = scheme.beta_for(matrix.nrows());
    if !beta.is_finite() || beta < 0.0 {
        return Err(KnockoffError::Config(format!("shuffle strength must be finite and >= 0, got {beta}")));
    }
    let mut out = matrix.clone();
    for (j, &rule) in scheme.rules.iter().enumerate() {
        let mut rng = column_rng(seed, j, 2);
        let shuffled = shuffle_column(matrix.col(j), rule, beta, &mut rng);
        out.col_mut(j).copy_from_slice(&shuffled);
    }
    Ok(out)
}

/// Normal draws followed by the cyclic shuffle.
pub fn generate(p: usize, n: usize, seed: u64, beta: Option<f64>) -> Result<DataMatrix> {
    let raw = generate_normal(p, n, seed)?;
    shuffle(&raw, &ShuffleScheme::cyclic(p).with_beta(beta), seed)
}

/// Sidecar describing how a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub beta: f64,
    pub rules: Vec<ShuffleRule>,
}

impl SynthMetadata {
    pub fn new(p: usize, n: usize, seed: u64, beta: Option<f64>) -> Self {
        let scheme = ShuffleScheme::cyclic(p).with_beta(beta);
        Self { p, n, seed, beta: scheme.beta_for(n), rules: scheme.rules }
    }
}

/// All canonical feature-feature moments of a dataset.
pub fn induced_moments_report(matrix: &DataMatrix) -> Result<Vec<PairTargets>> {
    pairwise_moments(matrix)
}
