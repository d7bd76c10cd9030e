//! Packing families of step functions that certify lower bounds on the
//! `ε`-entropy of bounded `Ψ`-variation classes.
//!
//! A family picks a packing `A_h` inside a ball `B(x, h)` of the value space
//! and takes every step function that is constant on each of `N₁` equal
//! cells with values in `A_h`. Two members differing on `η` cells are at
//! `L¹` distance more than `2^{−(2+2/p̃)}·(Lh/N₁)·η`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gauge::Gauge;
use crate::metric::{greedy_packing, is_packing, Metric};
use crate::variation::{l1_distance, StepFunction, VariationError};

/// Default cap on the number of enumerated members.
pub const DEFAULT_MEMBER_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WitnessError {
    #[error("packing dimension is zero; the family needs p >= 1")]
    NoPackingDimension,
    #[error("ball of radius {h} around point {center} contains only its center")]
    DegenerateBall { center: usize, h: f64 },
    #[error("(N1 - 1)·Ψ(2h) = {load} exceeds the budget {budget}")]
    InfeasibleConstraint { load: f64, budget: f64 },
    #[error("index vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("members {i} and {j} are {distance} apart, not more than {floor}")]
    SeparationFailure {
        i: usize,
        j: usize,
        distance: f64,
        floor: f64,
    },
    #[error("family is empty")]
    EmptyFamily,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Variation(#[from] VariationError),
}

pub type Result<T> = std::result::Result<T, WitnessError>;

/// `2^{−(2+2/p̃)}`: packing separation inside `B(x, h)` relative to `h`.
pub fn separation_ratio(p_tilde: f64) -> f64 {
    2f64.powf(-(2.0 + 2.0 / p_tilde))
}

/// A packing of a closed ball, with the size the continuum bound predicts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallPacking {
    pub center: usize,
    pub h: f64,
    pub separation: f64,
    pub points: Vec<usize>,
    /// `2^{⌊p̃⌋+2}`.
    pub expected: usize,
    /// Set when the packing is smaller than `expected` (the finite space does
    /// not realize the continuum bound at this scale).
    pub scale_deficiency: bool,
}

/// Greedy farthest-point packing of `B(center, h)` at separation
/// `2^{−(2+2/p̃)}·h`.
pub fn ball_packing<M: Metric + ?Sized>(
    space: &M,
    center: usize,
    h: f64,
    p_tilde: f64,
) -> Result<BallPacking> {
    if !(p_tilde > 0.0) {
        return Err(WitnessError::NoPackingDimension);
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(WitnessError::InvalidParameter(format!("h = {h}")));
    }
    if center >= space.len() {
        return Err(WitnessError::InvalidParameter(format!(
            "center {center} out of range"
        )));
    }
    let ball = space.ball(center, h);
    if ball.len() < 2 {
        return Err(WitnessError::DegenerateBall { center, h });
    }
    let separation = separation_ratio(p_tilde) * h;
    let points = greedy_packing(space, &ball, separation).witness;
    let expected = 1usize << (p_tilde.floor() as u32 + 2);
    Ok(BallPacking {
        center,
        h,
        separation,
        scale_deficiency: points.len() < expected,
        points,
        expected,
    })
}

/// Number of positions where two index vectors differ.
pub fn eta(a: &[usize], b: &[usize]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(WitnessError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyMode {
    Enumerated,
    Sampled,
}

impl std::fmt::Display for FamilyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FamilyMode::Enumerated => "enumerated",
            FamilyMode::Sampled => "sampled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyOptions {
    /// Keep at most this many packing points (default `⌈2^{p̃+2}⌉`).
    pub alphabet_cap: Option<usize>,
    pub member_cap: usize,
    pub seed: u64,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            alphabet_cap: None,
            member_cap: DEFAULT_MEMBER_CAP,
            seed: 0,
        }
    }
}

/// Parameters of a family without its members.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessDesign {
    pub length: f64,
    pub budget: f64,
    pub epsilon: f64,
    pub p_tilde: f64,
    pub h: f64,
    pub n1: usize,
    pub packing: BallPacking,
    /// Point indices used as cell values.
    pub alphabet: Vec<usize>,
    /// `(N₁ − 1)·Ψ(2h)`.
    pub load: f64,
}

impl WitnessDesign {
    /// `log₂ |A|^{N₁}`.
    pub fn log2_cardinality(&self) -> f64 {
        self.n1 as f64 * (self.alphabet.len() as f64).log2()
    }

    /// `|A|^{N₁}` if it fits in a `u64`.
    pub fn cardinality(&self) -> Option<u64> {
        (self.alphabet.len() as u64).checked_pow(self.n1 as u32)
    }

    /// `2^{−(2+2/p̃)}·Lh/N₁`: the distance floor per differing cell.
    pub fn cell_floor(&self) -> f64 {
        separation_ratio(self.p_tilde) * self.length * self.h / self.n1 as f64
    }

    /// `p̃V / (2Ψ(2h))`, the log₂ of the packing floor.
    pub fn floor_log2(&self, gauge: &Gauge) -> f64 {
        self.p_tilde * self.budget / (2.0 * gauge.eval(2.0 * self.h))
    }
}

fn check_common(length: f64, budget: f64, epsilon: f64) -> Result<()> {
    let ok = length > 0.0
        && length.is_finite()
        && budget >= 0.0
        && budget.is_finite()
        && epsilon > 0.0
        && epsilon.is_finite();
    if !ok {
        return Err(WitnessError::InvalidParameter(format!(
            "L = {length}, V = {budget}, epsilon = {epsilon}"
        )));
    }
    Ok(())
}

/// Design at radius `h`, with `N₁ = ⌊V/Ψ(2h)⌋ + 1` cells.
pub fn design_at<M: Metric + ?Sized>(
    length: f64,
    budget: f64,
    epsilon: f64,
    h: f64,
    gauge: &Gauge,
    space: &M,
    center: usize,
    p_tilde: f64,
    alphabet_cap: Option<usize>,
) -> Result<WitnessDesign> {
    check_common(length, budget, epsilon)?;
    let packing = ball_packing(space, center, h, p_tilde)?;
    let psi = gauge.eval(2.0 * h);
    let n1 = (budget / psi).floor() as usize + 1;
    let load = (n1 - 1) as f64 * psi;
    if load > budget {
        return Err(WitnessError::InfeasibleConstraint { load, budget });
    }
    let cap = alphabet_cap
        .unwrap_or_else(|| 2f64.powf(p_tilde + 2.0).ceil() as usize)
        .max(2);
    let alphabet: Vec<usize> = packing.points.iter().copied().take(cap).collect();
    Ok(WitnessDesign {
        length,
        budget,
        epsilon,
        p_tilde,
        h,
        n1,
        packing,
        alphabet,
        load,
    })
}

/// Design for target accuracy `ε`: `h = 2^{4+2/p̃}·ε/L`.
pub fn design_family<M: Metric + ?Sized>(
    length: f64,
    budget: f64,
    epsilon: f64,
    gauge: &Gauge,
    space: &M,
    center: usize,
    p_tilde: f64,
    alphabet_cap: Option<usize>,
) -> Result<WitnessDesign> {
    if !(p_tilde > 0.0) {
        return Err(WitnessError::NoPackingDimension);
    }
    let h = 2f64.powf(4.0 + 2.0 / p_tilde) * epsilon / length;
    design_at(
        length,
        budget,
        epsilon,
        h,
        gauge,
        space,
        center,
        p_tilde,
        alphabet_cap,
    )
}

/// A design together with (all or a seeded sample of) its members.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessFamily {
    pub design: WitnessDesign,
    /// Alphabet indices, `N₁` per member, row-major.
    digits: Vec<u16>,
    pub mode: FamilyMode,
    pub seed: u64,
}

impl WitnessFamily {
    pub fn from_design(design: WitnessDesign, member_cap: usize, seed: u64) -> Result<Self> {
        let n1 = design.n1;
        let a = design.alphabet.len();
        if a > u16::MAX as usize {
            return Err(WitnessError::InvalidParameter(format!(
                "alphabet of {a} points"
            )));
        }
        let (digits, mode) = match design.cardinality() {
            Some(total) if total <= member_cap as u64 => {
                let mut digits = Vec::with_capacity(total as usize * n1);
                for mut code in 0..total {
                    let start = digits.len();
                    digits.resize(start + n1, 0);
                    for slot in digits[start..].iter_mut().rev() {
                        *slot = (code % a as u64) as u16;
                        code /= a as u64;
                    }
                }
                (digits, FamilyMode::Enumerated)
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let digits = (0..member_cap * n1)
                    .map(|_| rng.gen_range(0..a) as u16)
                    .collect();
                (digits, FamilyMode::Sampled)
            }
        };
        Ok(WitnessFamily {
            design,
            digits,
            mode,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.digits.len() / self.design.n1
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// The index vector `δ` of member `m` (point indices).
    pub fn delta(&self, m: usize) -> Vec<usize> {
        let n1 = self.design.n1;
        self.digits[m * n1..(m + 1) * n1]
            .iter()
            .map(|&d| self.design.alphabet[d as usize])
            .collect()
    }

    /// `g_δ = Σ δ_i·χ_{I_i}`.
    pub fn member(&self, m: usize) -> StepFunction<usize> {
        StepFunction::uniform(self.design.length, self.delta(m)).expect("valid uniform grid")
    }

    fn digits_of(&self, m: usize) -> &[u16] {
        let n1 = self.design.n1;
        &self.digits[m * n1..(m + 1) * n1]
    }
}

/// Builds the family for accuracy `ε` (see [`design_family`]), enumerating
/// every member when there are at most `member_cap`, sampling otherwise.
pub fn build_family<M: Metric + ?Sized>(
    length: f64,
    budget: f64,
    epsilon: f64,
    gauge: &Gauge,
    space: &M,
    center: usize,
    p_tilde: f64,
    options: &FamilyOptions,
) -> Result<WitnessFamily> {
    let design = design_family(
        length,
        budget,
        epsilon,
        gauge,
        space,
        center,
        p_tilde,
        options.alphabet_cap,
    )?;
    WitnessFamily::from_design(design, options.member_cap, options.seed)
}

/// `L¹` metric on the members of a family, evaluated cell by cell.
pub struct FamilyMetric<'a, M: ?Sized> {
    pub family: &'a WitnessFamily,
    pub space: &'a M,
}

impl<M: Metric + ?Sized> Metric for FamilyMetric<'_, M> {
    fn len(&self) -> usize {
        self.family.len()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let alpha = &self.family.design.alphabet;
        let width = self.family.design.length / self.family.design.n1 as f64;
        self.family
            .digits_of(i)
            .iter()
            .zip(self.family.digits_of(j))
            .map(|(&a, &b)| self.space.dist(alpha[a as usize], alpha[b as usize]))
            .sum::<f64>()
            * width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub epsilon: f64,
    pub h: f64,
    pub n1: usize,
    pub family_size: usize,
    pub pairs_checked: u64,
    pub min_distance: f64,
    pub extracted_size: usize,
    /// `2^{p̃V/(2Ψ(2h))}`.
    pub theoretical_floor: f64,
    pub floor_log2: f64,
    /// Family cardinality (before extraction) meets the floor.
    pub cardinality_meets_floor: bool,
    pub mode: FamilyMode,
    pub seed: u64,
}

pub const SEPARATION_CSV_HEADER: &str =
    "epsilon,h,N1,family_size,min_pair_distance,extracted_size,theoretical_floor,mode,seed";

impl SeparationReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epsilon,
            self.h,
            self.n1,
            self.family_size,
            self.min_distance,
            self.extracted_size,
            self.theoretical_floor,
            self.mode,
            self.seed
        )
    }
}

/// Checks `ρ_{L¹}(g_δ, g_δ̃) > 2^{−(2+2/p̃)}·(Lh/N₁)·η(δ, δ̃)` on every
/// pair (distances integrated exactly on the step functions), then
/// extracts a greedy packing at separation `2ε` and verifies it.
pub fn verify_packing<M: Metric + ?Sized>(
    family: &WitnessFamily,
    space: &M,
    gauge: &Gauge,
) -> Result<SeparationReport> {
    let n = family.len();
    if n == 0 {
        return Err(WitnessError::EmptyFamily);
    }
    let design = &family.design;
    let cell_floor = design.cell_floor();
    let members: Vec<StepFunction<usize>> = (0..n).map(|m| family.member(m)).collect();
    let deltas: Vec<Vec<usize>> = (0..n).map(|m| family.delta(m)).collect();
    let outcome = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut min = f64::INFINITY;
            for j in i + 1..n {
                let d = l1_distance(&members[i], &members[j], &space)?;
                let e = eta(&deltas[i], &deltas[j])?;
                if e == 0 {
                    // Sampled families may repeat a member.
                    continue;
                }
                let floor = cell_floor * e as f64;
                if !(d > floor) {
                    return Err(WitnessError::SeparationFailure {
                        i,
                        j,
                        distance: d,
                        floor,
                    });
                }
                min = min.min(d);
            }
            Ok(min)
        })
        .collect::<Result<Vec<f64>>>()?;
    let min_distance = outcome.into_iter().fold(f64::INFINITY, f64::min);

    let metric = FamilyMetric { family, space };
    let all: Vec<usize> = (0..n).collect();
    let target = 2.0 * design.epsilon;
    let extracted = greedy_packing(&metric, &all, target).witness;
    if !is_packing(&metric, &extracted, target) {
        return Err(WitnessError::SeparationFailure {
            i: 0,
            j: 0,
            distance: 0.0,
            floor: target,
        });
    }
    let floor_log2 = design.floor_log2(gauge);
    Ok(SeparationReport {
        epsilon: design.epsilon,
        h: design.h,
        n1: design.n1,
        family_size: n,
        pairs_checked: n as u64 * (n as u64 - 1) / 2,
        min_distance,
        extracted_size: extracted.len(),
        theoretical_floor: 2f64.powf(floor_log2),
        floor_log2,
        cardinality_meets_floor: design.log2_cardinality() >= floor_log2,
        mode: family.mode,
        seed: family.seed,
    })
}

/// Certified lower bound on `log₂ M_s(G)` for the full family `G` of a
/// design, where `s` is the separation.
///
/// Any maximal `s`-packing `P` of `G` has `|P|·max_δ̃ |I_δ̃(s)| ≥ |G|`,
/// with `I_δ̃(s)` the members within `s` of `g_δ̃`. For every `λ ≥ 0`,
/// `|I_δ̃(s)| ≤ e^{λB}·Π_i Σ_b e^{−λρ(δ̃_i, b)}` with `B = sN₁/L`, so
/// `log₂|I| ≤ λB·log₂e + N₁·log₂ max_a Σ_b e^{−λρ(a,b)}`. The bound is
/// minimized over `λ` numerically; every `λ` gives a valid certificate.
pub fn certified_packing_entropy<M: Metric + ?Sized>(
    design: &WitnessDesign,
    space: &M,
    separation: f64,
) -> f64 {
    let a = &design.alphabet;
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|&x| a.iter().map(|&y| space.dist(x, y)).collect())
        .collect();
    let n1 = design.n1 as f64;
    let budget = separation * n1 / design.length;
    let log2_ball = |lambda: f64| -> f64 {
        let worst = dist
            .iter()
            .map(|row| row.iter().map(|&d| (-lambda * d).exp()).sum::<f64>())
            .fold(0.0, f64::max);
        lambda * budget * std::f64::consts::LOG2_E + n1 * worst.log2()
    };
    // The exponent is convex in λ; search on a log scale relative to the
    // smallest nonzero distance, then refine by golden section.
    let dmin = dist
        .iter()
        .flatten()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let total = design.log2_cardinality();
    if !dmin.is_finite() {
        return 0.0;
    }
    let mut best = (0.0, log2_ball(0.0));
    for k in -40..=80 {
        let lambda = 2f64.powf(k as f64 / 4.0) / dmin;
        let v = log2_ball(lambda);
        if v < best.1 {
            best = (lambda, v);
        }
    }
    let (mut lo, mut hi) = (best.0 / 2f64.powf(0.25), best.0 * 2f64.powf(0.25));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if log2_ball(m1) < log2_ball(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let refined = log2_ball(0.5 * (lo + hi));
    let log2_i = best.1.min(refined).max(0.0);
    (total - log2_i).max(0.0)
}

/// Exact `log₂(|G| / max_δ̃ |I_δ̃(s)|)` by enumeration (small families).
pub fn exact_packing_entropy<M: Metric + ?Sized>(
    family: &WitnessFamily,
    space: &M,
    separation: f64,
) -> f64 {
    let metric = FamilyMetric { family, space };
    let n = family.len();
    let worst = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| metric.dist(i, j) <= separation).count())
        .max()
        .unwrap_or(1);
    (n as f64).log2() - (worst as f64).log2()
}

/// Union of per-center families over a packing of the value space.
#[derive(Clone, Debug)]
pub struct GlobalFamily {
    pub epsilon: f64,
    pub h: f64,
    pub h2: f64,
    /// Centers of the `h₂`-packing.
    pub centers: Vec<usize>,
    /// One family per center (`p ≥ 1`), or constants at the centers (`p = 0`).
    pub families: Vec<WitnessFamily>,
    pub constants: Vec<StepFunction<usize>>,
}

impl GlobalFamily {
    pub fn size(&self) -> usize {
        self.families.iter().map(|f| f.len()).sum::<usize>() + self.constants.len()
    }

    /// `L(h₂ − 2h)`, the guaranteed distance between members built on
    /// different centers.
    pub fn cross_floor(&self, length: f64) -> f64 {
        length * (self.h2 - 2.0 * self.h)
    }

    pub fn members(&self) -> Vec<(usize, StepFunction<usize>)> {
        let mut out: Vec<(usize, StepFunction<usize>)> = self
            .constants
            .iter()
            .enumerate()
            .map(|(c, f)| (c, f.clone()))
            .collect();
        for (c, fam) in self.families.iter().enumerate() {
            out.extend((0..fam.len()).map(|m| (c, fam.member(m))));
        }
        out
    }
}

/// Global lower-bound family. With `p̃ > 0`: `h = 2^{5+2/p̃}·ε/L`,
/// `h₂ = (2 + 2^{6+2/p̃})·ε/L`, one family per point of a greedy
/// `h₂`-packing of the space. With `p̃ = 0`: constants on a
/// `4ε/L`-packing (`h = ε/L`).
pub fn global_family<M: Metric + ?Sized>(
    length: f64,
    budget: f64,
    epsilon: f64,
    gauge: &Gauge,
    space: &M,
    p_tilde: f64,
    options: &FamilyOptions,
) -> Result<GlobalFamily> {
    check_common(length, budget, epsilon)?;
    let all: Vec<usize> = (0..space.len()).collect();
    if all.is_empty() {
        return Err(WitnessError::InvalidParameter("empty value space".into()));
    }
    if !(p_tilde > 0.0) {
        let h = epsilon / length;
        let h2 = 4.0 * epsilon / length;
        let centers = greedy_packing(space, &all, h2).witness;
        let constants = centers
            .iter()
            .map(|&c| StepFunction::constant(length, c))
            .collect::<std::result::Result<_, _>>()?;
        return Ok(GlobalFamily {
            epsilon,
            h,
            h2,
            centers,
            families: Vec::new(),
            constants,
        });
    }
    let h = 2f64.powf(5.0 + 2.0 / p_tilde) * epsilon / length;
    let h2 = (2.0 + 2f64.powf(6.0 + 2.0 / p_tilde)) * epsilon / length;
    let centers = greedy_packing(space, &all, h2).witness;
    let families = centers
        .iter()
        .map(|&c| {
            let design = design_at(
                length,
                budget,
                epsilon,
                h,
                gauge,
                space,
                c,
                p_tilde,
                options.alphabet_cap,
            )?;
            WitnessFamily::from_design(design, options.member_cap, options.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalFamily {
        epsilon,
        h,
        h2,
        centers,
        families,
        constants: Vec::new(),
    })
}

/// `pV / (2·log₂7·Ψ(256ε/L)) + K_{258ε/L}`.
pub fn lower_bound_bits(
    epsilon: f64,
    length: f64,
    budget: f64,
    gauge: &Gauge,
    p: u32,
    k_term: f64,
) -> f64 {
    if p == 0 {
        return k_term;
    }
    p as f64 * budget / (2.0 * 7f64.log2() * gauge.eval(256.0 * epsilon / length)) + k_term
}

/// The global bound before its constants are rounded:
/// `p̃V / (2Ψ(2^{6+2/p̃}·ε/L)) + K_{h₂}` with `h₂ = (2 + 2^{6+2/p̃})·ε/L`.
/// Unlike [`lower_bound_bits`] it needs no assumption on the size of `p̃`.
pub fn unrounded_lower_bound_bits(
    epsilon: f64,
    length: f64,
    budget: f64,
    gauge: &Gauge,
    p: u32,
    k_h2: f64,
) -> f64 {
    if p == 0 {
        return k_h2;
    }
    let pt = crate::metric::p_tilde(p);
    pt * budget / (2.0 * gauge.eval(2f64.powf(6.0 + 2.0 / pt) * epsilon / length)) + k_h2
}

/// Power-gauge form: `p/(2^{8γ+1}·log₂7)·L^γV/ε^γ + p·log₇(diam·L/(516ε))`.
pub fn power_lower_bound_bits(
    gamma: f64,
    p: u32,
    length: f64,
    budget: f64,
    epsilon: f64,
    diameter: f64,
) -> f64 {
    let p = p as f64;
    p / (2f64.powf(8.0 * gamma + 1.0) * 7f64.log2()) * (length / epsilon).powf(gamma) * budget
        + p * (diameter * length / (516.0 * epsilon)).ln() / 7f64.ln()
}

/// Values in a ball of radius `M` in `R^dim`:
/// `V·dim/(2·log₂7·Ψ(256ε/L)) + dim·log₇(LM/(258ε))`.
pub fn euclidean_lower_bound_bits(
    gauge: &Gauge,
    length: f64,
    budget: f64,
    epsilon: f64,
    dim: u32,
    radius: f64,
) -> f64 {
    let d = dim as f64;
    budget * d / (2.0 * 7f64.log2() * gauge.eval(256.0 * epsilon / length))
        + d * (length * radius / (258.0 * epsilon)).ln() / 7f64.ln()
}
