//! Standardized cross-moments between columns and the deduplicated
//! constraint system built from them.
//!
//! The `(m, k)` moment of `x` and `y` is the biased central cross-moment
//! `mean((x - x̄)^k (y - ȳ)^(m-k))` divided by `var(x)^(k/2) var(y)^((m-k)/2)`,
//! where both variances use divisor `n`. Order 2 is the correlation, order 3
//! the two coskewness splits and order 4 the three cokurtosis splits.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::matrix::DataMatrix;

/// Columns whose centered variance falls below this are treated as constant.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// The six `(order, split)` slots constrained for every pair of features.
pub const SLOTS: [(u8, u8); 6] = [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (4, 3)];

/// Mean and biased (divisor `n`) variance of a column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub variance: f64,
}

impl ColumnStats {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let variance = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Which of the three aggregate residuals a moment order feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentFamily {
    Correlation,
    Coskewness,
    Cokurtosis,
}

impl MomentFamily {
    pub const ALL: [MomentFamily; 3] = [MomentFamily::Correlation, MomentFamily::Coskewness, MomentFamily::Cokurtosis];

    pub fn from_order(order: u8) -> Option<Self> {
        match order {
            2 => Some(MomentFamily::Correlation),
            3 => Some(MomentFamily::Coskewness),
            4 => Some(MomentFamily::Cokurtosis),
            _ => None,
        }
    }

    pub fn order(self) -> u8 {
        self as u8 + 2
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MomentFamily::Correlation => "correlation",
            MomentFamily::Coskewness => "coskewness",
            MomentFamily::Cokurtosis => "cokurtosis",
        }
    }
}

/// Which sides of a canonical pair `(left < right)` are knockoff columns.
///
/// The declaration order is the canonical variant ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    KnockoffLeft,
    KnockoffRight,
    BothKnockoff,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::KnockoffLeft, Variant::KnockoffRight, Variant::BothKnockoff];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::KnockoffLeft => (true, false),
            Variant::KnockoffRight => (false, true),
            Variant::BothKnockoff => (true, true),
        }
    }

    pub fn from_flags(left_knockoff: bool, right_knockoff: bool) -> Option<Self> {
        match (left_knockoff, right_knockoff) {
            (true, false) => Some(Variant::KnockoffLeft),
            (false, true) => Some(Variant::KnockoffRight),
            (true, true) => Some(Variant::BothKnockoff),
            (false, false) => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::KnockoffLeft => "knockoff_left",
            Variant::KnockoffRight => "knockoff_right",
            Variant::BothKnockoff => "both_knockoff",
        }
    }
}

/// A single standardized moment between two (possibly knockoff) columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MomentKey {
    pub left: usize,
    pub right: usize,
    pub order: u8,
    pub split: u8,
    pub left_knockoff: bool,
    pub right_knockoff: bool,
}

impl MomentKey {
    pub fn new(left: usize, right: usize, order: u8, split: u8, left_knockoff: bool, right_knockoff: bool) -> Self {
        Self { left, right, order, split, left_knockoff, right_knockoff }
    }

    pub fn is_valid(&self) -> bool {
        (2..=4).contains(&self.order) && self.split >= 1 && self.split < self.order
    }

    pub fn family(&self) -> MomentFamily {
        MomentFamily::from_order(self.order).expect("moment order outside 2..=4")
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::from_flags(self.left_knockoff, self.right_knockoff)
    }

    /// Index of `(order, split)` in [`SLOTS`].
    pub fn slot(&self) -> usize {
        SLOTS.iter().position(|&(m, k)| m == self.order && k == self.split).expect("invalid moment slot")
    }

    fn swapped(&self) -> Self {
        Self {
            left: self.right,
            right: self.left,
            order: self.order,
            split: self.order - self.split,
            left_knockoff: self.right_knockoff,
            right_knockoff: self.left_knockoff,
        }
    }

    fn sort_tuple(&self) -> (usize, usize, u8, u8, u8) {
        let variant = match (self.left_knockoff, self.right_knockoff) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        };
        (self.left, self.right, self.order, self.split, variant)
    }
}

impl PartialOrd for MomentKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MomentKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_tuple().cmp(&other.sort_tuple())
    }
}

impl fmt::Display for MomentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |col: usize, ko: bool| if ko { format!("~x{}", col + 1) } else { format!("x{}", col + 1) };
        write!(
            f,
            "mu[{},{}]({}, {})",
            self.order,
            self.split,
            side(self.left, self.left_knockoff),
            side(self.right, self.right_knockoff)
        )
    }
}

/// Deterministic representative of a moment key.
///
/// `mu[m,k](a, b) = mu[m,m-k](b, a)`, so keys are oriented with the lower
/// column index on the left. For a column paired with itself the
/// feature side goes left, and for identical sides the smaller split is kept.
pub fn canonicalize(key: MomentKey) -> MomentKey {
    if key.left > key.right {
        return key.swapped();
    }
    if key.left == key.right {
        if key.left_knockoff && !key.right_knockoff {
            return key.swapped();
        }
        if key.left_knockoff == key.right_knockoff && key.split > key.order - key.split {
            return key.swapped();
        }
    }
    key
}

/// Standardized `(m, k)` cross-moment of `x` and `y` computed from the
/// centered sums directly.
pub fn comoment(x: &[f64], y: &[f64], order: u8, split: u8) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("{} observations", x.len()),
            actual: format!("{} observations", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(KnockoffError::InvalidInput("comoment needs at least 2 observations".into()));
    }
    if !(2..=4).contains(&order) || split == 0 || split >= order {
        return Err(KnockoffError::InvalidInput(format!("invalid moment slot ({order}, {split})")));
    }
    let sx = checked_stats(x, "left")?;
    let sy = checked_stats(y, "right")?;
    let k = split as i32;
    let r = (order - split) as i32;
    let n = x.len() as f64;
    let cross = x.iter().zip(y).map(|(a, b)| (a - sx.mean).powi(k) * (b - sy.mean).powi(r)).sum::<f64>() / n;
    Ok(cross / (sx.variance.powf(k as f64 / 2.0) * sy.variance.powf(r as f64 / 2.0)))
}

fn checked_stats(x: &[f64], name: &str) -> Result<ColumnStats> {
    let stats = ColumnStats::of(x);
    if stats.variance.is_nan() || stats.variance < DEGENERATE_VARIANCE {
        return Err(KnockoffError::DegenerateColumn { column: name.to_string(), variance: stats.variance });
    }
    Ok(stats)
}

/// A column reduced to z-scores, plus its standard deviation.
#[derive(Debug, Clone)]
pub(crate) struct Standardized {
    pub z: Vec<f64>,
    pub sigma: f64,
}

impl Standardized {
    pub fn new(x: &[f64], name: &str) -> Result<Self> {
        let stats = checked_stats(x, name)?;
        let sigma = stats.std_dev();
        Ok(Self { z: x.iter().map(|v| (v - stats.mean) / sigma).collect(), sigma })
    }
}

pub(crate) fn standardize_all(m: &DataMatrix, knockoff: bool) -> Result<Vec<Standardized>> {
    (0..m.ncols())
        .map(|j| {
            let name = if knockoff { format!("knockoff of {}", m.names()[j]) } else { m.names()[j].clone() };
            Standardized::new(m.col(j), &name)
        })
        .collect()
}

/// All six slot moments of a standardized pair in one pass.
pub(crate) fn slot_moments(zx: &[f64], zy: &[f64]) -> [f64; 6] {
    let mut acc = [0.0; 6];
    for (&a, &b) in zx.iter().zip(zy) {
        let (a2, b2) = (a * a, b * b);
        acc[0] += a * b;
        acc[1] += a * b2;
        acc[2] += a2 * b;
        acc[3] += a * b2 * b;
        acc[4] += a2 * b2;
        acc[5] += a2 * a * b;
    }
    let n = zx.len() as f64;
    acc.map(|s| s / n)
}

/// Adds `sum_slots coef[slot] * d mu_slot / d x` to `grad_x` and the
/// matching y-side derivative to `grad_y`.
///
/// For `mu = mean(zx^k zy^r)` the derivative with respect to `x_s` is
/// `k / (n sigma_x) * (g_s - mean(g) - mu zx_s)` with `g = zx^(k-1) zy^r`.
pub(crate) fn accumulate_slot_gradient(
    x: &Standardized,
    y: &Standardized,
    moments: &[f64; 6],
    coef: &[f64; 6],
    grad_x: Option<&mut [f64]>,
    grad_y: Option<&mut [f64]>,
) {
    let n = x.z.len();
    let nf = n as f64;
    if let Some(gx) = grad_x {
        let c: Vec<f64> = SLOTS.iter().zip(coef).map(|(&(_, k), c)| c * k as f64 / (nf * x.sigma)).collect();
        let drift: f64 = c.iter().zip(moments).map(|(c, mu)| c * mu).sum();
        let u: Vec<f64> =
            x.z.iter()
                .zip(&y.z)
                .map(|(&a, &b)| {
                    let b2 = b * b;
                    // g for each slot: zx^(k-1) zy^(m-k)
                    c[0] * b + c[1] * b2 + c[2] * a * b + c[3] * b2 * b + c[4] * a * b2 + c[5] * a * a * b
                })
                .collect();
        let mean_u = u.iter().sum::<f64>() / nf;
        for ((g, ui), zs) in gx.iter_mut().zip(&u).zip(&x.z) {
            *g += ui - mean_u - drift * zs;
        }
    }
    if let Some(gy) = grad_y {
        let c: Vec<f64> = SLOTS.iter().zip(coef).map(|(&(m, k), c)| c * (m - k) as f64 / (nf * y.sigma)).collect();
        let drift: f64 = c.iter().zip(moments).map(|(c, mu)| c * mu).sum();
        let u: Vec<f64> =
            x.z.iter()
                .zip(&y.z)
                .map(|(&a, &b)| {
                    let a2 = a * a;
                    // h for each slot: zx^k zy^(m-k-1)
                    c[0] * a + c[1] * a * b + c[2] * a2 + c[3] * a * b * b + c[4] * a2 * b + c[5] * a2 * a
                })
                .collect();
        let mean_u = u.iter().sum::<f64>() / nf;
        for ((g, ui), zs) in gy.iter_mut().zip(&u).zip(&y.z) {
            *g += ui - mean_u - drift * zs;
        }
    }
}

/// Feature-feature moment values for one canonical pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTargets {
    pub left: usize,
    pub right: usize,
    /// Indexed like [`SLOTS`].
    pub values: [f64; 6],
}

/// A canonical constraint: the knockoff-substituted moment must equal `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub key: MomentKey,
    pub target: f64,
}

/// The deduplicated moment-matching system for `p` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    p: usize,
    pairs: Vec<PairTargets>,
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn num_features(&self) -> usize {
        self.p
    }

    pub fn pairs(&self) -> &[PairTargets] {
        &self.pairs
    }

    /// Number of distinct feature-feature target values (pairs × 6 slots).
    pub fn num_targets(&self) -> usize {
        self.pairs.len() * SLOTS.len()
    }

    /// All canonical constraints, sorted by key.
    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn group(&self, family: MomentFamily) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter().filter(move |c| c.key.order == family.order())
    }

    /// Target for any key, canonical or not. `None` if it is not constrained.
    pub fn target(&self, key: MomentKey) -> Option<f64> {
        let key = canonicalize(key);
        self.constraints.binary_search_by(|c| c.key.cmp(&key)).ok().map(|idx| self.constraints[idx].target)
    }

    pub(crate) fn pair_index(&self, left: usize, right: usize) -> Option<usize> {
        self.pairs.binary_search_by(|t| (t.left, t.right).cmp(&(left, right))).ok()
    }
}

/// Every moment key the constraint rule produces before deduplication:
/// ordered pairs `i != j`, all six slots, and the three knockoff variants.
pub fn raw_constraint_keys(p: usize) -> Vec<MomentKey> {
    let mut keys = Vec::with_capacity(p * p.saturating_sub(1) * 18);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            for &(m, k) in &SLOTS {
                keys.push(MomentKey::new(i, j, m, k, true, false));
                keys.push(MomentKey::new(i, j, m, k, false, true));
                keys.push(MomentKey::new(i, j, m, k, true, true));
            }
        }
    }
    keys
}

/// Builds the deduplicated constraint system with feature-feature targets.
pub fn build_constraints(features: &DataMatrix) -> Result<ConstraintSet> {
    let p = features.ncols();
    if p < 2 {
        return Err(KnockoffError::InvalidInput(format!("need at least 2 features, got {p}")));
    }
    if features.nrows() < 2 {
        return Err(KnockoffError::InvalidInput("need at least 2 observations".into()));
    }
    let z = standardize_all(features, false)?;
    let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            pairs.push(PairTargets { left: i, right: j, values: slot_moments(&z[i].z, &z[j].z) });
        }
    }
    let canonical: BTreeSet<MomentKey> = raw_constraint_keys(p).into_iter().map(canonicalize).collect();
    let mut cs = ConstraintSet { p, pairs, constraints: Vec::with_capacity(canonical.len()) };
    for key in canonical {
        let pair = cs.pair_index(key.left, key.right).expect("canonical pair exists");
        let target = cs.pairs[pair].values[key.slot()];
        cs.constraints.push(Constraint { key, target });
    }
    Ok(cs)
}

/// The three aggregate residuals, indexed by [`MomentFamily::index`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateResiduals {
    pub correlation: f64,
    pub coskewness: f64,
    pub cokurtosis: f64,
}

impl AggregateResiduals {
    pub fn as_array(&self) -> [f64; 3] {
        [self.correlation, self.coskewness, self.cokurtosis]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { correlation: a[0], coskewness: a[1], cokurtosis: a[2] }
    }

    pub fn get(&self, family: MomentFamily) -> f64 {
        self.as_array()[family.index()]
    }
}

/// Achieved value of one constraint at a knockoff iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValue {
    pub key: MomentKey,
    pub achieved: f64,
    pub target: f64,
}

impl ConstraintValue {
    pub fn deviation(&self) -> f64 {
        self.achieved - self.target
    }
}

/// Standardized feature and knockoff columns for repeated evaluation.
pub(crate) struct Workspace {
    pub features: Vec<Standardized>,
    pub knockoffs: Vec<Standardized>,
}

impl Workspace {
    pub fn new(features: &DataMatrix, knockoffs: &DataMatrix) -> Result<Self> {
        features.check_same_shape(knockoffs)?;
        Ok(Self { features: standardize_all(features, false)?, knockoffs: standardize_all(knockoffs, true)? })
    }

    pub fn with_features(features: Vec<Standardized>, knockoffs: &DataMatrix) -> Result<Self> {
        Ok(Self { features, knockoffs: standardize_all(knockoffs, true)? })
    }

    fn column(&self, col: usize, knockoff: bool) -> &Standardized {
        if knockoff {
            &self.knockoffs[col]
        } else {
            &self.features[col]
        }
    }

    /// Achieved slot moments for every pair and variant, in pair order.
    pub fn achieved(&self, cs: &ConstraintSet) -> Vec<[[f64; 6]; 3]> {
        cs.pairs
            .iter()
            .map(|t| {
                Variant::ALL.map(|v| {
                    let (lk, rk) = v.flags();
                    slot_moments(&self.column(t.left, lk).z, &self.column(t.right, rk).z)
                })
            })
            .collect()
    }

    /// Aggregate residuals and, when `grad` is given, the gradient of
    /// `sum_f weights[f] * residual_f` with respect to the knockoff entries,
    /// added into `grad` (column-major, `n × p`).
    pub fn residuals_and_gradient(
        &self,
        cs: &ConstraintSet,
        weights: [f64; 3],
        mut grad: Option<&mut DataMatrix>,
    ) -> [f64; 3] {
        let mut residuals = [0.0; 3];
        for t in &cs.pairs {
            for v in Variant::ALL {
                let (lk, rk) = v.flags();
                let x = self.column(t.left, lk);
                let y = self.column(t.right, rk);
                let mu = slot_moments(&x.z, &y.z);
                let mut coef = [0.0; 6];
                for (s, &(m, _)) in SLOTS.iter().enumerate() {
                    let dev = mu[s] - t.values[s];
                    let f = (m - 2) as usize;
                    residuals[f] += dev * dev;
                    coef[s] = 2.0 * weights[f] * dev;
                }
                if let Some(g) = grad.as_deref_mut() {
                    // left < right, so the two columns never alias
                    let (gl, gr) = split_two_columns(g, t.left, t.right);
                    accumulate_slot_gradient(x, y, &mu, &coef, lk.then_some(gl), rk.then_some(gr));
                }
            }
        }
        residuals
    }
}

impl Workspace {
    /// Every weighted deviation `sqrt(w_f) (achieved - target)` with its
    /// gradient blocks over the knockoff columns it involves.
    pub fn residual_rows(&self, cs: &ConstraintSet, weights: [f64; 3], rows: &mut Vec<ResidualRow>) {
        let n = self.features.first().map_or(0, |s| s.z.len());
        for t in &cs.pairs {
            for v in Variant::ALL {
                let (lk, rk) = v.flags();
                let x = self.column(t.left, lk);
                let y = self.column(t.right, rk);
                let mu = slot_moments(&x.z, &y.z);
                for (s, &(m, _)) in SLOTS.iter().enumerate() {
                    let w = weights[(m - 2) as usize].sqrt();
                    let mut coef = [0.0; 6];
                    coef[s] = w;
                    let mut gl = vec![0.0; n];
                    let mut gr = vec![0.0; n];
                    accumulate_slot_gradient(x, y, &mu, &coef, lk.then_some(&mut gl[..]), rk.then_some(&mut gr[..]));
                    let mut blocks = Vec::with_capacity(2);
                    if lk {
                        blocks.push((t.left, gl));
                    }
                    if rk {
                        blocks.push((t.right, gr));
                    }
                    rows.push(ResidualRow { value: w * (mu[s] - t.values[s]), blocks });
                }
            }
        }
    }
}

/// One scalar residual and its nonzero gradient blocks, each a full
/// knockoff column.
#[derive(Debug, Clone)]
pub(crate) struct ResidualRow {
    pub value: f64,
    pub blocks: Vec<(usize, Vec<f64>)>,
}

pub(crate) fn split_two_columns(m: &mut DataMatrix, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let n = m.nrows();
    let (head, tail) = m.as_mut_slice().split_at_mut(b * n);
    (&mut head[a * n..(a + 1) * n], &mut tail[..n])
}

/// Sum of squared deviations from target per moment family.
pub fn aggregate_residuals(
    features: &DataMatrix,
    knockoffs: &DataMatrix,
    cs: &ConstraintSet,
) -> Result<AggregateResiduals> {
    check_constraint_shape(features, cs)?;
    let ws = Workspace::new(features, knockoffs)?;
    Ok(AggregateResiduals::from_array(ws.residuals_and_gradient(cs, [0.0; 3], None)))
}

/// Gradients of each aggregate residual with respect to every knockoff entry,
/// in the order correlation, coskewness, cokurtosis.
pub fn residual_gradient(features: &DataMatrix, knockoffs: &DataMatrix, cs: &ConstraintSet) -> Result<[DataMatrix; 3]> {
    check_constraint_shape(features, cs)?;
    let ws = Workspace::new(features, knockoffs)?;
    Ok([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].map(|w| {
        let mut g = knockoffs.zeros_like();
        ws.residuals_and_gradient(cs, w, Some(&mut g));
        g
    }))
}

/// Per-constraint achieved values, in canonical key order.
pub fn constraint_values(
    features: &DataMatrix,
    knockoffs: &DataMatrix,
    cs: &ConstraintSet,
) -> Result<Vec<ConstraintValue>> {
    check_constraint_shape(features, cs)?;
    let ws = Workspace::new(features, knockoffs)?;
    Ok(constraint_values_from(&ws, cs))
}

pub(crate) fn constraint_values_from(ws: &Workspace, cs: &ConstraintSet) -> Vec<ConstraintValue> {
    let achieved = ws.achieved(cs);
    cs.constraints
        .iter()
        .map(|c| {
            let pair = cs.pair_index(c.key.left, c.key.right).expect("pair of canonical key");
            let v = c.key.variant().expect("constraint keys involve a knockoff") as usize;
            ConstraintValue { key: c.key, achieved: achieved[pair][v][c.key.slot()], target: c.target }
        })
        .collect()
}

fn check_constraint_shape(features: &DataMatrix, cs: &ConstraintSet) -> Result<()> {
    if features.ncols() != cs.p {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("{} features", cs.p),
            actual: format!("{} features", features.ncols()),
        });
    }
    Ok(())
}

/// Feature-feature moments for every pair, used to report what structure a
/// dataset carries.
pub fn pairwise_moments(data: &DataMatrix) -> Result<Vec<PairTargets>> {
    Ok(build_constraints(data)?.pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], y: &[f64], m: u8, k: u8) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
        let mut s = 0.0;
        for i in 0..x.len() {
            let mut t = 1.0;
            for _ in 0..k {
                t *= x[i] - mx;
            }
            for _ in 0..(m - k) {
                t *= y[i] - my;
            }
            s += t;
        }
        s / n / (vx.sqrt().powi(k as i32) * vy.sqrt().powi((m - k) as i32))
    }

    #[test]
    fn self_correlation_is_one() {
        let x = [0.3, -1.2, 2.5, 0.0, 4.1];
        assert!((comoment(&x, &x, 2, 1).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hand_case_cancels_to_zero() {
        let v = comoment(&[-1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], 2, 1).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let err = comoment(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0], 3, 1).unwrap_err();
        match err {
            KnockoffError::DegenerateColumn { column, .. } => assert_eq!(column, "right"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slot_moments_agree_with_comoment() {
        let x = [0.1, 2.0, -1.5, 0.7, 3.3, -0.2];
        let y = [1.1, -0.4, 0.9, 2.2, -1.0, 0.5];
        let mu = slot_moments(&Standardized::new(&x, "x").unwrap().z, &Standardized::new(&y, "y").unwrap().z);
        for (s, &(m, k)) in SLOTS.iter().enumerate() {
            assert!((mu[s] - naive(&x, &y, m, k)).abs() < 1e-13);
        }
    }

    #[test]
    fn canonical_examples() {
        // mu[4,3](~x2, x1) is mu[4,1](x1, ~x2)
        let k = canonicalize(MomentKey::new(1, 0, 4, 3, true, false));
        assert_eq!(k, MomentKey::new(0, 1, 4, 1, false, true));
        let k = MomentKey::new(0, 1, 2, 1, false, false);
        assert_eq!(canonicalize(k), k);
    }

    #[test]
    fn three_features_give_54_keys() {
        let set: BTreeSet<_> = raw_constraint_keys(3).into_iter().map(canonicalize).collect();
        assert_eq!(set.len(), 54);
    }

    #[test]
    fn relationship_counts_for_small_p() {
        for (p, pairs) in [(4, 6), (8, 28)] {
            let data = crate::synth::generate_normal(p, 30, 5).unwrap();
            let cs = build_constraints(&data).unwrap();
            assert_eq!(cs.pairs().len(), pairs);
        }
    }

    #[test]
    fn targets_match_direct_recomputation() {
        let x = vec![0.2, 1.4, -0.3, 2.2, 0.9];
        let y = vec![1.0, -1.0, 0.5, 0.25, 3.0];
        let cs = build_constraints(&DataMatrix::from_columns(vec![x.clone(), y.clone()]).unwrap()).unwrap();
        for c in cs.constraints() {
            let direct = comoment(&x, &y, c.key.order, c.key.split).unwrap();
            assert!((c.target - direct).abs() < 1e-14);
        }
        assert_eq!(cs.len(), 18);
        assert_eq!(cs.num_targets(), 6);
    }

    #[test]
    fn copy_has_zero_residuals_and_gradient() {
        let f = DataMatrix::from_columns(vec![
            vec![0.2, 1.4, -0.3, 2.2, 0.9, -1.1],
            vec![1.0, -1.0, 0.5, 0.25, 3.0, 0.1],
            vec![0.0, 0.3, 0.6, -2.0, 1.0, 0.7],
        ])
        .unwrap();
        let cs = build_constraints(&f).unwrap();
        let r = aggregate_residuals(&f, &f, &cs).unwrap();
        assert_eq!(r.as_array(), [0.0; 3]);
        for g in residual_gradient(&f, &f, &cs).unwrap() {
            assert!(g.as_slice().iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn target_lookup_accepts_non_canonical_keys() {
        let f = DataMatrix::from_columns(vec![vec![0.2, 1.4, -0.3, 2.2], vec![1.0, -1.0, 0.5, 0.25]]).unwrap();
        let cs = build_constraints(&f).unwrap();
        let a = cs.target(MomentKey::new(1, 0, 3, 2, true, false)).unwrap();
        let b = cs.target(MomentKey::new(0, 1, 3, 1, false, true)).unwrap();
        assert_eq!(a, b);
        assert!(cs.target(MomentKey::new(0, 0, 2, 1, false, true)).is_none());
    }
}
