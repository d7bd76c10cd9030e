//! Finite metric spaces, covering and packing numbers, and the doubling /
//! packing dimensions of a space probed over a window of scales.
//!
//! Conventions used throughout the crate:
//!
//! * covering balls are closed: a center `c` covers `x` when `ρ(c, x) ≤ α`;
//! * packings are strict: distinct packing points satisfy `ρ > α`;
//! * "balls" `B(x, r)` used as the set to be covered or packed are closed.
//!
//! With these conventions `M_{2α}(K) ≤ N_α(K) ≤ M_α(K)` holds verbatim on
//! every finite space, including at tie distances.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper limit on the instance size accepted by exact search.
pub const DEFAULT_EXACT_CAP: usize = 16;

/// Hard limit on exact search; instances are encoded as `u128` bit masks.
const EXACT_HARD_LIMIT: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("distance matrix is empty")]
    Empty,
    #[error("row {row} has {len} entries, expected {expected}")]
    NotSquare {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("entry ({i},{j}) is not a finite number")]
    NonFinite { i: usize, j: usize },
    #[error("entry ({i},{j}) is negative")]
    NegativeEntry { i: usize, j: usize },
    #[error("diagonal entry ({i},{i}) is nonzero")]
    NonzeroDiagonal { i: usize },
    #[error("matrix is not symmetric at ({i},{j})")]
    AsymmetricMatrix { i: usize, j: usize },
    #[error("distinct points {i} and {j} are at distance zero")]
    IndistinctPoints { i: usize, j: usize },
    #[error("triangle inequality fails: d({i},{k}) > d({i},{via}) + d({via},{k})")]
    TriangleViolation { i: usize, k: usize, via: usize },
    #[error("point index {index} out of range for a space of {n} points")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("subset K is empty")]
    EmptySubset,
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("exact search over {size} points exceeds the cap of {cap}")]
    ExactModeTooLarge { size: usize, cap: usize },
    #[error("scale window [{lo}, {hi}] contains no probe scale")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("ball-count bounds need R >= 2α, got R = {radius}, α = {alpha}")]
    ScaleViolation { radius: f64, alpha: f64 },
    #[error("cannot read distance matrix: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// A metric on the index set `0..len()`.
pub trait Metric: Sync {
    fn len(&self) -> usize;

    fn dist(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn diameter(&self) -> f64 {
        let n = self.len();
        let mut diam = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                diam = diam.max(self.dist(i, j));
            }
        }
        diam
    }

    /// Indices of the closed ball `{ y : ρ(center, y) ≤ radius }`.
    fn ball(&self, center: usize, radius: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.dist(center, j) <= radius)
            .collect()
    }
}

impl<M: Metric + ?Sized> Metric for &M {
    fn len(&self) -> usize {
        (**self).len()
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        (**self).dist(i, j)
    }
}

/// An explicit point set with a validated distance matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMetricSpace {
    n: usize,
    dist: Vec<f64>,
}

impl FiniteMetricSpace {
    /// Validates a square matrix as a metric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(MetricError::Empty);
        }
        let mut dist = Vec::with_capacity(n * n);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(MetricError::NotSquare {
                    row,
                    len: r.len(),
                    expected: n,
                });
            }
            dist.extend_from_slice(r);
        }
        Self::from_flat(n, dist)
    }

    /// Validates a row-major `n × n` matrix as a metric.
    pub fn from_flat(n: usize, dist: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(MetricError::Empty);
        }
        if dist.len() != n * n {
            return Err(MetricError::NotSquare {
                row: dist.len() / n.max(1),
                len: dist.len() % n,
                expected: n,
            });
        }
        let at = |i: usize, j: usize| dist[i * n + j];
        for i in 0..n {
            for j in 0..n {
                let v = at(i, j);
                if !v.is_finite() {
                    return Err(MetricError::NonFinite { i, j });
                }
                if v < 0.0 {
                    return Err(MetricError::NegativeEntry { i, j });
                }
            }
        }
        for i in 0..n {
            if at(i, i) != 0.0 {
                return Err(MetricError::NonzeroDiagonal { i });
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if at(i, j) != at(j, i) {
                    return Err(MetricError::AsymmetricMatrix { i, j });
                }
                if at(i, j) == 0.0 {
                    return Err(MetricError::IndistinctPoints { i, j });
                }
            }
        }
        // Rounding slack for matrices computed from coordinates.
        let scale = dist.iter().cloned().fold(0.0f64, f64::max);
        let slack = 1e-12 * scale;
        for i in 0..n {
            for k in i + 1..n {
                let direct = at(i, k);
                for via in 0..n {
                    if via == i || via == k {
                        continue;
                    }
                    if direct > at(i, via) + at(via, k) + slack {
                        return Err(MetricError::TriangleViolation { i, k, via });
                    }
                }
            }
        }
        Ok(FiniteMetricSpace { n, dist })
    }

    /// Materializes any metric into an explicit matrix (no validation needed).
    pub fn from_metric<M: Metric + ?Sized>(metric: &M) -> Self {
        let n = metric.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = metric.dist(i, j);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        FiniteMetricSpace { n, dist }
    }

    /// Points on the real line with `|x - y|`.
    pub fn line(points: &[f64]) -> Result<Self> {
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (points[i] - points[j]).abs();
            }
        }
        Self::from_flat(n, dist)
    }

    /// `n` seeded uniform points on `[0, extent]`.
    pub fn uniform(n: usize, extent: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * extent).collect();
        Self::line(&pts)
    }

    /// The lattice `{0, …, side-1}^dim · spacing` with the Euclidean metric.
    pub fn lattice(side: usize, dim: usize, spacing: f64) -> Result<Self> {
        let cloud = PointCloud::lattice(side, dim, spacing);
        if cloud.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(Self::from_metric(&cloud))
    }

    /// Reads `n` rows of `n` comma-separated decimals.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| MetricError::Io(e.to_string()))?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| MetricError::Io(e.to_string()))?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| MetricError::Io(format!("{s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| format!("{}", self.dist[i * self.n + j]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Sorted distinct off-diagonal distances.
    pub fn distinct_distances(&self) -> Vec<f64> {
        distinct_distances(self)
    }
}

impl Metric for FiniteMetricSpace {
    fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }
}

/// Points in `R^dim` with the Euclidean metric, distances computed on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Self {
        assert!(
            dim > 0 && coords.len().is_multiple_of(dim),
            "coordinate count must be a multiple of dim"
        );
        PointCloud { dim, coords }
    }

    pub fn line(points: &[f64]) -> Self {
        PointCloud::new(1, points.to_vec())
    }

    pub fn lattice(side: usize, dim: usize, spacing: f64) -> Self {
        let count = side.pow(dim as u32);
        let mut coords = Vec::with_capacity(count * dim);
        for idx in 0..count {
            let mut rem = idx;
            for _ in 0..dim {
                coords.push((rem % side) as f64 * spacing);
                rem /= side;
            }
        }
        PointCloud { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

impl Metric for PointCloud {
    fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        if self.dim == 1 {
            return (self.coords[i] - self.coords[j]).abs();
        }
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn distinct_distances<M: Metric + ?Sized>(space: &M) -> Vec<f64> {
    let n = space.len();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(space.dist(i, j));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.dedup();
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exact,
    Greedy,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchMode::Exact => f.write_str("exact"),
            SearchMode::Greedy => f.write_str("greedy"),
        }
    }
}

/// A covering or packing count together with the points realizing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverPackResult {
    pub count: usize,
    pub witness: Vec<usize>,
    pub mode: SearchMode,
}

impl CoverPackResult {
    /// `alpha,count,mode,witness_indices` with `;`-separated witness.
    pub fn csv_row(&self, alpha: f64) -> String {
        let w: Vec<String> = self.witness.iter().map(|i| i.to_string()).collect();
        format!("{},{},{},{}", alpha, self.count, self.mode, w.join(";"))
    }
}

pub const COVER_PACK_CSV_HEADER: &str = "alpha,count,mode,witness_indices";

fn check_subset<M: Metric + ?Sized>(space: &M, subset: &[usize], alpha: f64) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MetricError::InvalidScale(alpha));
    }
    if subset.is_empty() {
        return Err(MetricError::EmptySubset);
    }
    let n = space.len();
    let mut k: Vec<usize> = subset.to_vec();
    for &i in &k {
        if i >= n {
            return Err(MetricError::IndexOutOfRange { index: i, n });
        }
    }
    k.sort_unstable();
    k.dedup();
    Ok(k)
}

/// `N_α(K|E)`: the fewest closed α-balls centered in `E` that cover `K`.
pub fn covering_number<M: Metric + ?Sized>(
    space: &M,
    subset: &[usize],
    alpha: f64,
    mode: SearchMode,
) -> Result<CoverPackResult> {
    covering_number_capped(space, subset, alpha, mode, DEFAULT_EXACT_CAP)
}

/// As [`covering_number`] with an explicit cap on `|K|` for exact search.
pub fn covering_number_capped<M: Metric + ?Sized>(
    space: &M,
    subset: &[usize],
    alpha: f64,
    mode: SearchMode,
    cap: usize,
) -> Result<CoverPackResult> {
    let k = check_subset(space, subset, alpha)?;
    match mode {
        SearchMode::Greedy => Ok(greedy_cover(space, &k, alpha)),
        SearchMode::Exact => {
            let cap = cap.min(EXACT_HARD_LIMIT);
            if k.len() > cap {
                return Err(MetricError::ExactModeTooLarge { size: k.len(), cap });
            }
            Ok(exact_cover(space, &k, alpha))
        }
    }
}

/// `M_α(K|E)`: the largest subset of `K` with pairwise distances `> α`.
pub fn packing_number<M: Metric + ?Sized>(
    space: &M,
    subset: &[usize],
    alpha: f64,
    mode: SearchMode,
) -> Result<CoverPackResult> {
    packing_number_capped(space, subset, alpha, mode, DEFAULT_EXACT_CAP)
}

pub fn packing_number_capped<M: Metric + ?Sized>(
    space: &M,
    subset: &[usize],
    alpha: f64,
    mode: SearchMode,
    cap: usize,
) -> Result<CoverPackResult> {
    let k = check_subset(space, subset, alpha)?;
    match mode {
        SearchMode::Greedy => Ok(greedy_packing(space, &k, alpha)),
        SearchMode::Exact => {
            let cap = cap.min(EXACT_HARD_LIMIT);
            if k.len() > cap {
                return Err(MetricError::ExactModeTooLarge { size: k.len(), cap });
            }
            Ok(exact_packing(space, &k, alpha))
        }
    }
}

/// Whether every point of `subset` lies within `alpha` of some center.
pub fn is_cover<M: Metric + ?Sized>(
    space: &M,
    subset: &[usize],
    centers: &[usize],
    alpha: f64,
) -> bool {
    subset
        .iter()
        .all(|&x| centers.iter().any(|&c| space.dist(c, x) <= alpha))
}

/// Whether the points are pairwise more than `alpha` apart.
pub fn is_packing<M: Metric + ?Sized>(space: &M, points: &[usize], alpha: f64) -> bool {
    for (a, &i) in points.iter().enumerate() {
        for &j in &points[a + 1..] {
            if i == j || space.dist(i, j) <= alpha {
                return false;
            }
        }
    }
    true
}

/// Set-cover greedy: repeatedly take the center covering the most uncovered
/// points of `K`; lowest index on ties.
pub(crate) fn greedy_cover<M: Metric + ?Sized>(
    space: &M,
    k: &[usize],
    alpha: f64,
) -> CoverPackResult {
    let n = space.len();
    // Only centers within α of some point of K can help.
    let candidates: Vec<(usize, Vec<usize>)> = (0..n)
        .filter_map(|c| {
            let covered: Vec<usize> = (0..k.len())
                .filter(|&t| space.dist(c, k[t]) <= alpha)
                .collect();
            (!covered.is_empty()).then_some((c, covered))
        })
        .collect();
    let mut uncovered = vec![true; k.len()];
    let mut remaining = k.len();
    let mut witness = Vec::new();
    while remaining > 0 {
        let mut best: Option<(usize, usize)> = None;
        for (idx, (_, covered)) in candidates.iter().enumerate() {
            let gain = covered.iter().filter(|&&t| uncovered[t]).count();
            if gain > 0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((idx, gain));
            }
        }
        // Every point covers itself, so a positive gain always exists.
        let (idx, gain) = best.expect("uncovered point without candidate center");
        for &t in &candidates[idx].1 {
            uncovered[t] = false;
        }
        remaining -= gain;
        witness.push(candidates[idx].0);
    }
    witness.sort_unstable();
    CoverPackResult {
        count: witness.len(),
        witness,
        mode: SearchMode::Greedy,
    }
}

/// Farthest-point insertion: start at the lowest index of `K`, then keep
/// adding the point farthest from the current set while that distance
/// exceeds `alpha`.
pub(crate) fn greedy_packing<M: Metric + ?Sized>(
    space: &M,
    k: &[usize],
    alpha: f64,
) -> CoverPackResult {
    let first = k[0];
    let mut witness = vec![first];
    let mut nearest: Vec<f64> = k.iter().map(|&x| space.dist(first, x)).collect();
    loop {
        let mut best: Option<usize> = None;
        for t in 0..k.len() {
            if nearest[t] > alpha && best.is_none_or(|b| nearest[t] > nearest[b]) {
                best = Some(t);
            }
        }
        let Some(t) = best else { break };
        let p = k[t];
        witness.push(p);
        for (s, &x) in k.iter().enumerate() {
            let d = space.dist(p, x);
            if d < nearest[s] {
                nearest[s] = d;
            }
        }
    }
    CoverPackResult {
        count: witness.len(),
        witness,
        mode: SearchMode::Greedy,
    }
}

fn exact_cover<M: Metric + ?Sized>(space: &M, k: &[usize], alpha: f64) -> CoverPackResult {
    let m = k.len();
    let full: u128 = if m == 128 {
        u128::MAX
    } else {
        (1u128 << m) - 1
    };
    let mut sets: Vec<(u128, usize)> = Vec::new();
    for c in 0..space.len() {
        let mut mask = 0u128;
        for (t, &x) in k.iter().enumerate() {
            if space.dist(c, x) <= alpha {
                mask |= 1u128 << t;
            }
        }
        if mask != 0 {
            sets.push((mask, c));
        }
    }
    // Drop dominated sets; the lower center index survives among equals.
    let mut kept: Vec<(u128, usize)> = Vec::new();
    for (a, &(ma, ca)) in sets.iter().enumerate() {
        let dominated = sets
            .iter()
            .enumerate()
            .any(|(b, &(mb, _))| b != a && (ma & !mb) == 0 && (ma != mb || b < a));
        if !dominated {
            kept.push((ma, ca));
        }
    }
    let max_size = kept.iter().map(|(s, _)| s.count_ones()).max().unwrap_or(1);

    let greedy = greedy_cover(space, k, alpha);
    let mut best: Vec<usize> = greedy.witness.clone();
    let mut chosen: Vec<usize> = Vec::new();

    fn search(
        kept: &[(u128, usize)],
        full: u128,
        covered: u128,
        max_size: u32,
        chosen: &mut Vec<usize>,
        best: &mut Vec<usize>,
    ) {
        if covered == full {
            if chosen.len() < best.len() {
                *best = chosen.clone();
            }
            return;
        }
        let missing = (full & !covered).count_ones();
        let lower = chosen.len() + missing.div_ceil(max_size) as usize;
        if lower >= best.len() {
            return;
        }
        // Branch on the uncovered element with the fewest covering sets.
        let mut pick = None;
        let mut fewest = usize::MAX;
        let mut rest = full & !covered;
        while rest != 0 {
            let bit = rest.trailing_zeros();
            rest &= rest - 1;
            let cnt = kept.iter().filter(|(s, _)| s >> bit & 1 == 1).count();
            if cnt < fewest {
                fewest = cnt;
                pick = Some(bit);
            }
        }
        let bit = pick.unwrap();
        for &(s, c) in kept.iter().filter(|(s, _)| s >> bit & 1 == 1) {
            chosen.push(c);
            search(kept, full, covered | s, max_size, chosen, best);
            chosen.pop();
        }
    }
    search(&kept, full, 0, max_size, &mut chosen, &mut best);
    best.sort_unstable();
    CoverPackResult {
        count: best.len(),
        witness: best,
        mode: SearchMode::Exact,
    }
}

fn exact_packing<M: Metric + ?Sized>(space: &M, k: &[usize], alpha: f64) -> CoverPackResult {
    let m = k.len();
    // conflict[t]: points of K within α of k[t] (including itself).
    let conflict: Vec<u128> = (0..m)
        .map(|t| {
            let mut mask = 0u128;
            for s in 0..m {
                if space.dist(k[t], k[s]) <= alpha {
                    mask |= 1u128 << s;
                }
            }
            mask
        })
        .collect();
    let full: u128 = if m == 128 {
        u128::MAX
    } else {
        (1u128 << m) - 1
    };
    let greedy = greedy_packing(space, k, alpha);
    let mut best: u128 = greedy.witness.iter().fold(0u128, |acc, p| {
        acc | 1u128 << k.iter().position(|x| x == p).unwrap()
    });

    fn search(conflict: &[u128], cand: u128, current: u128, best: &mut u128) {
        if cand == 0 {
            if current.count_ones() > best.count_ones() {
                *best = current;
            }
            return;
        }
        if current.count_ones() + cand.count_ones() <= best.count_ones() {
            return;
        }
        let v = cand.trailing_zeros();
        search(
            conflict,
            cand & !conflict[v as usize],
            current | 1u128 << v,
            best,
        );
        search(conflict, cand & !(1u128 << v), current, best);
    }
    search(&conflict, full, 0, &mut best);
    let mut witness = Vec::new();
    let mut rest = best;
    while rest != 0 {
        let t = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        witness.push(k[t]);
    }
    CoverPackResult {
        count: witness.len(),
        witness,
        mode: SearchMode::Exact,
    }
}

/// A closed range of scales `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleWindow {
    pub lo: f64,
    pub hi: f64,
}

impl ScaleWindow {
    pub fn new(lo: f64, hi: f64) -> Self {
        ScaleWindow { lo, hi }
    }

    pub fn contains(&self, alpha: f64) -> bool {
        alpha >= self.lo && alpha <= self.hi
    }

    /// Probe scales: the window's upper end plus every scale inside the
    /// window at which `α ↦ count(B(x, 2α), α)` can change (pairwise
    /// distances and their halves). Counts are constant between
    /// consecutive change points, so each probe stands for the stretch of
    /// the window above it.
    pub fn probes<M: Metric + ?Sized>(&self, space: &M) -> Vec<f64> {
        let mut scales: Vec<f64> = Vec::new();
        if !(self.lo > 0.0 && self.lo <= self.hi && self.hi.is_finite()) {
            return scales;
        }
        scales.push(self.hi);
        for d in distinct_distances(space) {
            for s in [d, d / 2.0] {
                if self.contains(s) {
                    scales.push(s);
                }
            }
        }
        scales.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scales.dedup();
        scales
    }
}

/// Doubling and packing dimension of a space over a window of scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    /// Doubling dimension: least `d` with `N_α(B(x, 2α)) ≤ 2^d` at every probe.
    pub d: u32,
    /// Packing dimension: largest `p` with `M_α(B(x, 2α)) ≥ 2^p` at every probe.
    pub p: u32,
    /// `log_7(2) · p`.
    pub p_tilde: f64,
    pub window: ScaleWindow,
    pub mode: SearchMode,
    pub probes: usize,
}

impl DimensionReport {
    /// `p ≤ d`. Not implied by the definitions on every window (for
    /// instance a single probe scale on a segment can give `p = 2 > d = 1`).
    pub fn is_ordered(&self) -> bool {
        self.p <= self.d
    }
}

pub fn p_tilde(p: u32) -> f64 {
    p as f64 * std::f64::consts::LN_2 / 7f64.ln()
}

fn ceil_log2(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        usize::BITS - (count - 1).leading_zeros()
    }
}

fn floor_log2(count: usize) -> u32 {
    debug_assert!(count >= 1);
    usize::BITS - 1 - count.leading_zeros()
}

/// Counting mode used for dimension estimation: exact when the space is
/// within the cap, greedy otherwise.
pub fn auto_mode<M: Metric + ?Sized>(space: &M) -> SearchMode {
    if space.len() <= DEFAULT_EXACT_CAP {
        SearchMode::Exact
    } else {
        SearchMode::Greedy
    }
}

/// Covering count of a ball under the given mode, with the cap lifted to the
/// hard limit for exact mode (the caller chose exact deliberately).
pub(crate) fn cover_in(
    space: &(impl Metric + ?Sized),
    k: &[usize],
    alpha: f64,
    mode: SearchMode,
) -> CoverPackResult {
    match mode {
        SearchMode::Exact if k.len() <= EXACT_HARD_LIMIT => exact_cover(space, k, alpha),
        _ => greedy_cover(space, k, alpha),
    }
}

pub(crate) fn pack_in(
    space: &(impl Metric + ?Sized),
    k: &[usize],
    alpha: f64,
    mode: SearchMode,
) -> CoverPackResult {
    match mode {
        SearchMode::Exact if k.len() <= EXACT_HARD_LIMIT => exact_packing(space, k, alpha),
        _ => greedy_packing(space, k, alpha),
    }
}

/// Both dimensions in one sweep over centers and probe scales.
pub fn dimensions<M: Metric + ?Sized>(
    space: &M,
    window: ScaleWindow,
    mode: SearchMode,
) -> Result<DimensionReport> {
    if space.is_empty() {
        return Err(MetricError::Empty);
    }
    let probes = window.probes(space);
    if probes.is_empty() {
        return Err(MetricError::EmptyWindow {
            lo: window.lo,
            hi: window.hi,
        });
    }
    let n = space.len();
    let (d, p) = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut d = 0u32;
            let mut p = u32::MAX;
            for &alpha in &probes {
                let ball = space.ball(x, 2.0 * alpha);
                let cover = cover_in(space, &ball, alpha, mode);
                let pack = pack_in(space, &ball, alpha, mode);
                d = d.max(ceil_log2(cover.count));
                p = p.min(floor_log2(pack.count));
            }
            (d, p)
        })
        .reduce(|| (0, u32::MAX), |a, b| (a.0.max(b.0), a.1.min(b.1)));
    Ok(DimensionReport {
        d,
        p,
        p_tilde: p_tilde(p),
        window,
        mode,
        probes: probes.len(),
    })
}

/// Doubling dimension over a window (the report also carries `p`).
pub fn doubling_dimension<M: Metric + ?Sized>(
    space: &M,
    window: ScaleWindow,
) -> Result<DimensionReport> {
    dimensions(space, window, auto_mode(space))
}

/// Packing dimension over a window (the report also carries `d`).
pub fn packing_dimension<M: Metric + ?Sized>(
    space: &M,
    window: ScaleWindow,
) -> Result<DimensionReport> {
    dimensions(space, window, auto_mode(space))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BallCount {
    Covering,
    Packing,
}

/// Closed-form bounds on ball counts: for coverings
/// `((R/4α)^{p̃}, (2R/α)^d)`, for packings `((R/2α)^{p̃}, (4R/α)^d)`.
pub fn ball_count_bounds(
    radius: f64,
    alpha: f64,
    d: u32,
    p: u32,
    kind: BallCount,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0) || !(radius >= 2.0 * alpha) {
        return Err(MetricError::ScaleViolation { radius, alpha });
    }
    let pt = p_tilde(p);
    let r = radius / alpha;
    Ok(match kind {
        BallCount::Covering => ((r / 4.0).powf(pt), (2.0 * r).powi(d as i32)),
        BallCount::Packing => ((r / 2.0).powf(pt), (4.0 * r).powi(d as i32)),
    })
}

/// Cover of `B(center, 2^levels · α)` by closed α-balls built level by level
/// from the doubling property: at most `2^{levels·d}` centers.
pub fn hierarchical_cover<M: Metric + ?Sized>(
    space: &M,
    center: usize,
    alpha: f64,
    levels: u32,
    mode: SearchMode,
) -> Vec<usize> {
    let mut out = Vec::new();
    fn go<M: Metric + ?Sized>(
        space: &M,
        z: usize,
        alpha: f64,
        level: u32,
        mode: SearchMode,
        out: &mut Vec<usize>,
    ) {
        if level == 0 {
            out.push(z);
            return;
        }
        let beta = alpha * 2f64.powi(level as i32 - 1);
        let ball = space.ball(z, 2.0 * beta);
        for c in cover_in(space, &ball, beta, mode).witness {
            go(space, c, alpha, level - 1, mode, out);
        }
    }
    go(space, center, alpha, levels, mode, &mut out);
    out.sort_unstable();
    out.dedup();
    out
}

/// Packing of `B(center, 2·7^levels·α)` at separation `α` built from the
/// packing property at scales `α, 6α, 6·7α, …`: at least `2^{(levels+1)p}`
/// points when the property holds at those scales.
pub fn hierarchical_packing<M: Metric + ?Sized>(
    space: &M,
    center: usize,
    alpha: f64,
    levels: u32,
    mode: SearchMode,
) -> Vec<usize> {
    let mut out = Vec::new();
    fn go<M: Metric + ?Sized>(
        space: &M,
        z: usize,
        alpha: f64,
        level: u32,
        mode: SearchMode,
        out: &mut Vec<usize>,
    ) {
        if level == 0 {
            let ball = space.ball(z, 2.0 * alpha);
            out.extend(pack_in(space, &ball, alpha, mode).witness);
            return;
        }
        let beta = 6.0 * 7f64.powi(level as i32 - 1) * alpha;
        let ball = space.ball(z, 2.0 * beta);
        for x in pack_in(space, &ball, beta, mode).witness {
            go(space, x, alpha, level - 1, mode, out);
        }
    }
    go(space, center, alpha, levels, mode, &mut out);
    out.sort_unstable();
    out.dedup();
    out
}

/// Outcome of checking the ball-count inequalities at one `(x, R = 2^k α)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallCountCheck {
    pub center: usize,
    pub radius: f64,
    pub alpha: f64,
    /// Size of a verified α-cover of `B(x, R)` (upper bound on `N_α`).
    pub cover_upper: usize,
    /// Size of a verified 2α-packing of `B(x, R)` (lower bound on `N_α`).
    pub cover_lower: usize,
    /// Size of a verified α-packing (lower bound on `M_α`).
    pub pack_lower: usize,
    /// Size of a verified α/2-cover (upper bound on `M_α`).
    pub pack_upper: usize,
    pub covering_bounds: (f64, f64),
    pub packing_bounds: (f64, f64),
}

impl BallCountCheck {
    pub fn holds(&self) -> bool {
        let tol = 1e-9;
        self.covering_bounds.0 <= self.cover_lower as f64 * (1.0 + tol)
            && self.cover_upper as f64 <= self.covering_bounds.1 * (1.0 + tol)
            && self.packing_bounds.0 <= self.pack_lower as f64 * (1.0 + tol)
            && self.pack_upper as f64 <= self.packing_bounds.1 * (1.0 + tol)
    }
}

/// Certifies both ball-count inequalities at `(center, R = 2^k α)` using
/// witnesses that are checked directly (covers cover, packings separate).
/// Greedy witnesses are tried first; the level-by-level constructions are
/// the fallback. Requires `α/2` and `R/2` inside the report's window.
pub fn check_ball_counts<M: Metric + ?Sized>(
    space: &M,
    report: &DimensionReport,
    center: usize,
    alpha: f64,
    k: u32,
) -> Result<BallCountCheck> {
    let radius = alpha * 2f64.powi(k as i32);
    let covering_bounds =
        ball_count_bounds(radius, alpha, report.d, report.p, BallCount::Covering)?;
    let packing_bounds = ball_count_bounds(radius, alpha, report.d, report.p, BallCount::Packing)?;
    let ball = space.ball(center, radius);
    let mode = report.mode;

    // Upper bound on N_α.
    let mut cover = greedy_cover(space, &ball, alpha).witness;
    if cover.len() as f64 > covering_bounds.1 {
        let h = hierarchical_cover(space, center, alpha, k, mode);
        if h.len() < cover.len() {
            cover = h;
        }
    }
    debug_assert!(is_cover(space, &ball, &cover, alpha));

    // Upper bound on M_α through an α/2-cover.
    let mut half_cover = greedy_cover(space, &ball, alpha / 2.0).witness;
    if half_cover.len() as f64 > packing_bounds.1 {
        let h = hierarchical_cover(space, center, alpha / 2.0, k + 1, mode);
        if h.len() < half_cover.len() {
            half_cover = h;
        }
    }

    // Lower bound on M_α.
    let mut pack = greedy_packing(space, &ball, alpha).witness;
    let levels = ((radius / (2.0 * alpha)).ln() / 7f64.ln()).floor().max(0.0) as u32;
    if (pack.len() as f64) < packing_bounds.0 {
        let h = hierarchical_packing(space, center, alpha, levels, mode);
        if h.len() > pack.len() {
            pack = h;
        }
    }

    // Lower bound on N_α through a 2α-packing.
    let mut pack2 = greedy_packing(space, &ball, 2.0 * alpha).witness;
    if (pack2.len() as f64) < covering_bounds.0 && k >= 2 {
        let levels2 = ((radius / (4.0 * alpha)).ln() / 7f64.ln()).floor().max(0.0) as u32;
        let h = hierarchical_packing(space, center, 2.0 * alpha, levels2, mode);
        if h.len() > pack2.len() {
            pack2 = h;
        }
    }

    let verified = is_cover(space, &ball, &cover, alpha)
        && is_cover(space, &ball, &half_cover, alpha / 2.0)
        && is_packing(space, &pack, alpha)
        && is_packing(space, &pack2, 2.0 * alpha)
        && pack
            .iter()
            .chain(&pack2)
            .all(|&i| space.dist(center, i) <= radius);
    assert!(verified, "ball-count witness failed verification");

    Ok(BallCountCheck {
        center,
        radius,
        alpha,
        cover_upper: cover.len(),
        cover_lower: pack2.len(),
        pack_lower: pack.len(),
        pack_upper: half_cover.len(),
        covering_bounds,
        packing_bounds,
    })
}

/// Every `(α, k)` the ball-count sweep probes inside the report's window:
/// probe scales `α` with `α/2 ≥ lo`, and `k ≥ 1` with `2^{k-1}α ≤ hi`.
pub fn ball_count_probes<M: Metric + ?Sized>(
    space: &M,
    report: &DimensionReport,
) -> Vec<(f64, u32)> {
    let w = report.window;
    let mut out = Vec::new();
    for alpha in w.probes(space) {
        if alpha / 2.0 < w.lo {
            continue;
        }
        let mut k = 1u32;
        while alpha * 2f64.powi(k as i32 - 1) <= w.hi {
            out.push((alpha, k));
            k += 1;
        }
    }
    out
}

/// Random metric used by tests and the acceptance suite: `n` points drawn
/// in `[0,1]^dim` with an `ℓ^q` norm picked by the seed.
pub fn random_space(n: usize, seed: u64) -> FiniteMetricSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=3);
    let coords: Vec<f64> = (0..n * dim)
        .map(|_| (rng.gen::<f64>() * 8.0).round() / 8.0 + rng.gen::<f64>() * 1e-3)
        .collect();
    let q = rng.gen_range(0..3);
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let diffs = (0..dim).map(|t| (coords[i * dim + t] - coords[j * dim + t]).abs());
            dist[i * n + j] = match q {
                0 => diffs.sum(),
                1 => diffs.fold(0.0, f64::max),
                _ => diffs.map(|v| v * v).sum::<f64>().sqrt(),
            };
        }
    }
    FiniteMetricSpace { n, dist }
}
