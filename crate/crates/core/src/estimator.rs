//! Empirical `ε`-entropy of finite function ensembles under the `L¹` metric,
//! exponent fitting, and side-by-side closed-form bounds.
//!
//! Counts computed here describe the sampled subset only, so they are lower
//! bounds on the entropy of the class the ensemble was drawn from. Reports
//! label the count columns `empirical_subset` accordingly.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::upper_bound_bits;
use crate::gauge::Gauge;
use crate::metric::{
    covering_number, greedy_cover, greedy_packing, is_cover, packing_number, Metric, MetricError,
    SearchMode, DEFAULT_EXACT_CAP,
};
use crate::variation::{StepFunction, ValueMetric, VariationError};
use crate::witness::{certified_packing_entropy, design_family, lower_bound_bits, WitnessError};

pub use crate::variation::l1_distance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("members do not share a common domain length")]
    DomainMismatch,
    #[error("epsilon grid must be strictly decreasing and positive")]
    UnsortedGrid,
    #[error("fit needs at least 3 rows with counts >= 2, found {0}")]
    InsufficientRows(usize),
    #[error("exact counts need at most {cap} members, got {size}")]
    TooLargeForExact { size: usize, cap: usize },
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Witness(#[from] WitnessError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// How an ensemble was produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    WitnessFamily,
    RandomSampler,
    Snapshots,
    Custom(String),
}

/// A finite set of step functions on a common `[0, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionEnsemble<T> {
    members: Vec<StepFunction<T>>,
    pub generator: Generator,
    pub seed: u64,
}

impl<T> FunctionEnsemble<T> {
    pub fn new(members: Vec<StepFunction<T>>, generator: Generator, seed: u64) -> Result<Self> {
        let first = members.first().ok_or(EstimatorError::EmptyEnsemble)?;
        let length = first.length();
        if members.iter().any(|m| m.length() != length) {
            return Err(EstimatorError::DomainMismatch);
        }
        Ok(FunctionEnsemble {
            members,
            generator,
            seed,
        })
    }

    pub fn members(&self) -> &[StepFunction<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.members[0].length()
    }
}

/// Pairwise `L¹` distances of an ensemble, as a [`Metric`] on member indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    dist: Vec<f64>,
}

impl DistanceMatrix {
    pub fn of<T: Sync>(ens: &FunctionEnsemble<T>, metric: &impl ValueMetric<T>) -> Result<Self> {
        let n = ens.len();
        let m = ens.members();
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            Ok(0.0)
                        } else {
                            l1_distance(&m[i], &m[j], metric)
                        }
                    })
                    .collect()
            })
            .collect::<std::result::Result<Vec<Vec<f64>>, _>>()?;
        // Symmetrize so that rounding in the merge order cannot break symmetry.
        let mut dist: Vec<f64> = rows.into_iter().flatten().collect();
        for i in 0..n {
            for j in i + 1..n {
                let v = dist[i * n + j].min(dist[j * n + i]);
                dist[i * n + j] = v;
                dist[j * n + i] = v;
            }
        }
        Ok(DistanceMatrix { n, dist })
    }
}

impl Metric for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }
}

/// Covering and packing counts of an ensemble at one scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub covering: usize,
    pub packing: usize,
}

/// Farthest-point (k-center) seeding: keep adding the member farthest from
/// the chosen centers until every member is within `eps`.
fn k_center_cover<M: Metric + ?Sized>(space: &M, eps: f64) -> Vec<usize> {
    let n = space.len();
    let mut centers = vec![0];
    let mut nearest: Vec<f64> = (0..n).map(|x| space.dist(0, x)).collect();
    loop {
        let mut far = 0;
        for t in 1..n {
            if nearest[t] > nearest[far] {
                far = t;
            }
        }
        if nearest[far] <= eps {
            return centers;
        }
        centers.push(far);
        for (x, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(space.dist(far, x));
        }
    }
}

fn counts_on(matrix: &DistanceMatrix, eps: f64) -> Counts {
    let all: Vec<usize> = (0..matrix.len()).collect();
    let seeded = k_center_cover(matrix, eps);
    let greedy = greedy_cover(matrix, &all, eps).witness;
    debug_assert!(is_cover(matrix, &all, &seeded, eps) && is_cover(matrix, &all, &greedy, eps));
    Counts {
        covering: seeded.len().min(greedy.len()),
        packing: greedy_packing(matrix, &all, eps).count,
    }
}

/// Greedy covering count (smaller of k-center seeding and set-cover greedy,
/// closed balls centered at members) and farthest-first packing count
/// (strict separation), ties broken by member index.
pub fn empirical_counts<T: Sync>(
    ens: &FunctionEnsemble<T>,
    metric: &impl ValueMetric<T>,
    eps: f64,
) -> Result<Counts> {
    Ok(counts_on(&DistanceMatrix::of(ens, metric)?, eps))
}

/// Exact `N_ε` and `M_ε` of a small ensemble (at most 16 members).
pub fn exact_counts(matrix: &DistanceMatrix, eps: f64) -> Result<Counts> {
    let n = matrix.len();
    if n > DEFAULT_EXACT_CAP {
        return Err(EstimatorError::TooLargeForExact {
            size: n,
            cap: DEFAULT_EXACT_CAP,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    Ok(Counts {
        covering: covering_number(matrix, &all, eps, SearchMode::Exact)?.count,
        packing: packing_number(matrix, &all, eps, SearchMode::Exact)?.count,
    })
}

/// Value space of a declared class, for the entropy terms of the bounds.
#[derive(Clone)]
pub enum ValueSpace {
    /// `[-M, M]` with the line metric.
    Interval(f64),
    /// A finite space; entropies are greedy estimates.
    Points(Arc<dyn Metric + Send>),
}

impl std::fmt::Debug for ValueSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValueSpace::Interval(m) => write!(f, "Interval({m})"),
            ValueSpace::Points(s) => write!(f, "Points(n = {})", s.len()),
        }
    }
}

impl ValueSpace {
    /// `log₂` of an upper bound on `N_α`.
    pub fn cover_log2(&self, alpha: f64) -> f64 {
        match self {
            ValueSpace::Interval(m) => ((m / alpha).ceil().max(1.0)).log2(),
            ValueSpace::Points(s) => {
                let all: Vec<usize> = (0..s.len()).collect();
                (greedy_cover(&**s, &all, alpha).count as f64).log2()
            }
        }
    }

    /// `log₂` of a lower bound on `M_α`.
    pub fn pack_log2(&self, alpha: f64) -> f64 {
        match self {
            ValueSpace::Interval(m) => ((2.0 * m / alpha).ceil().max(1.0)).log2(),
            ValueSpace::Points(s) => {
                let all: Vec<usize> = (0..s.len()).collect();
                (greedy_packing(&**s, &all, alpha).count as f64).log2()
            }
        }
    }
}

/// Parameters `(L, V, Ψ)`, dimensions and value space of the class an
/// ensemble is drawn from.
#[derive(Clone, Debug)]
pub struct ClassParams {
    pub length: f64,
    pub budget: f64,
    pub gauge: Gauge,
    pub d: u32,
    pub p: u32,
    pub values: ValueSpace,
}

impl ClassParams {
    /// Lower bound with `K_{258ε/L}`.
    pub fn lhs_bits(&self, eps: f64) -> f64 {
        let k = self.values.pack_log2(258.0 * eps / self.length);
        lower_bound_bits(eps, self.length, self.budget, &self.gauge, self.p, k)
    }

    /// Upper bound with `H_{ε/4L}`.
    pub fn rhs_bits(&self, eps: f64) -> f64 {
        let h = self.values.cover_log2(eps / (4.0 * self.length));
        upper_bound_bits(self.length, self.budget, eps, &self.gauge, self.d, h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub epsilon: f64,
    pub cover_count: Option<usize>,
    pub pack_count: Option<usize>,
    pub log2_cover: Option<f64>,
    pub log2_pack: f64,
    pub lhs_bound_bits: f64,
    pub rhs_bound_bits: f64,
}

/// Which quantity the packing column holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanSource {
    /// Greedy counts over the ensemble itself.
    EmpiricalSubset,
    /// Certified lower bound on `log₂ M_{2ε}` of a witness family.
    CertifiedWitness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the regression.
    pub residual: f64,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub source: ScanSource,
    pub fit: Option<ExponentFit>,
}

pub const SCAN_CSV_HEADER: &str =
    "epsilon,cover_count,pack_count,log2_cover,log2_pack,lhs_bound_bits,rhs_bound_bits";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ScanResult {
    /// CSV with a `# columns=...` tag line, the rows, and the fit summary
    /// when one has been attached.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let tag = match self.source {
            ScanSource::EmpiricalSubset => "empirical_subset",
            ScanSource::CertifiedWitness => "certified_witness",
        };
        let _ = writeln!(
            out,
            "# columns=cover_count,pack_count,log2_cover,log2_pack source={tag}"
        );
        let _ = writeln!(out, "{SCAN_CSV_HEADER}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epsilon,
                opt(r.cover_count),
                opt(r.pack_count),
                opt(r.log2_cover),
                r.log2_pack,
                r.lhs_bound_bits,
                r.rhs_bound_bits
            );
        }
        if let Some(fit) = &self.fit {
            let _ = writeln!(out, "# exponent={} residual={}", fit.exponent, fit.residual);
        }
        out
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    let positive = grid.iter().all(|&e| e > 0.0 && e.is_finite());
    if grid.is_empty() || !positive || grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(EstimatorError::UnsortedGrid);
    }
    Ok(())
}

/// Greedy counts of an ensemble on every scale of a strictly decreasing grid,
/// with the class bounds alongside.
pub fn entropy_scan<T: Sync>(
    ens: &FunctionEnsemble<T>,
    metric: &impl ValueMetric<T>,
    grid: &[f64],
    class: &ClassParams,
) -> Result<ScanResult> {
    check_grid(grid)?;
    let matrix = DistanceMatrix::of(ens, metric)?;
    let rows = grid
        .par_iter()
        .map(|&eps| {
            let c = counts_on(&matrix, eps);
            ScanRow {
                epsilon: eps,
                cover_count: Some(c.covering),
                pack_count: Some(c.packing),
                log2_cover: Some((c.covering as f64).log2()),
                log2_pack: (c.packing as f64).log2(),
                lhs_bound_bits: class.lhs_bits(eps),
                rhs_bound_bits: class.rhs_bits(eps),
            }
        })
        .collect();
    Ok(ScanResult {
        rows,
        source: ScanSource::EmpiricalSubset,
        fit: None,
    })
}

/// Witness families (one per scale) centered at `center`, scored by their
/// certified packing entropy at separation `2ε`.
pub fn witness_scan<M: Metric + ?Sized>(
    space: &M,
    center: usize,
    grid: &[f64],
    class: &ClassParams,
    alphabet_cap: Option<usize>,
) -> Result<ScanResult> {
    check_grid(grid)?;
    if class.p == 0 {
        return Err(WitnessError::NoPackingDimension.into());
    }
    let pt = crate::metric::p_tilde(class.p);
    let rows = grid
        .par_iter()
        .map(|&eps| {
            let design = design_family(
                class.length,
                class.budget,
                eps,
                &class.gauge,
                space,
                center,
                pt,
                alphabet_cap,
            )?;
            Ok(ScanRow {
                epsilon: eps,
                cover_count: None,
                pack_count: None,
                log2_cover: None,
                log2_pack: certified_packing_entropy(&design, space, 2.0 * eps),
                lhs_bound_bits: class.lhs_bits(eps),
                rhs_bound_bits: class.rhs_bits(eps),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult {
        rows,
        source: ScanSource::CertifiedWitness,
        fit: None,
    })
}

/// Regression target for [`fit_exponent`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitTarget {
    /// `log₂(packing count)` against `log₂(1/ε)`: the exponent of a count
    /// growing like `ε^{−γ}`.
    Count,
    /// `log₂(log₂ packing count)` against `log₂(1/ε)`: the exponent of an
    /// entropy growing like `ε^{−γ}`.
    Entropy,
}

/// Least-squares slope against `log₂(1/ε)` over rows whose packing count is
/// at least 2.
pub fn fit_exponent(scan: &ScanResult, target: FitTarget) -> Result<ExponentFit> {
    let points: Vec<(f64, f64)> = scan
        .rows
        .iter()
        .filter(|r| r.log2_pack >= 1.0)
        .map(|r| {
            let y = match target {
                FitTarget::Count => r.log2_pack,
                FitTarget::Entropy => r.log2_pack.log2(),
            };
            (-r.epsilon.log2(), y)
        })
        .collect();
    let n = points.len();
    if n < 3 {
        return Err(EstimatorError::InsufficientRows(n));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - exponent * p.0).powi(2))
        .sum();
    Ok(ExponentFit {
        exponent,
        intercept,
        residual: (sse / nf).sqrt(),
        rows: n,
    })
}

/// Log-spaced grid of `n` scales from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let ratio = (lo / hi).ln() / (n - 1) as f64;
    (0..n).map(|k| hi * (ratio * k as f64).exp()).collect()
}
