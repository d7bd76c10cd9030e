//! Lossy coder for functions of bounded (`Ψ`-)variation with a certified
//! `L¹` error.
//!
//! A function on `[0, L]` is sampled at the midpoints of `N₁` equal cells,
//! each sample is snapped to a center of an `h₂`-net of the codomain, and the
//! resulting sequence of centers is written as a start index followed, per
//! cell boundary, by the discrete jump radius `ρ♯` (Elias gamma) and the rank
//! of the next center among the net points at exactly that radius.

use std::fmt::Debug;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bitstream::{gamma_len, index_width, BitReader, BitWriter};
use crate::gauge::Gauge;
use crate::metric::{greedy_cover, FiniteMetricSpace, Metric};
use crate::variation::{
    l1_distance, tv, tv_psi, RealLine, StepFunction, ValueMetric, VariationError,
};

/// `log₂(5e)`.
pub fn log2_5e() -> f64 {
    5f64.log2() + std::f64::consts::LOG2_E
}

/// Relative slack allowed when a sample sits on the edge of a net ball.
const NET_EDGE_TOL: f64 = 1e-9;

const MAGIC: &[u8; 4] = b"BVC1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("epsilon {epsilon} exceeds the admissible maximum {cap}")]
    EpsilonTooLarge { epsilon: f64, cap: f64 },
    #[error("measured variation {measured} exceeds the budget {budget}")]
    BudgetViolation { measured: f64, budget: f64 },
    #[error("sample on cell {cell} is {distance} from the nearest center, beyond h2 = {h2}")]
    NetIncomplete { cell: usize, distance: f64, h2: f64 },
    #[error("corrupt codeword: {0}")]
    CorruptStream(String),
    #[error("codeword expects a net of {expected} centers, codomain provides {found}")]
    NetMismatch { expected: usize, found: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Variation(#[from] VariationError),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// `ρ♯`: `0` for equal points, otherwise `q + 1` where `dist/h₂ ∈ (q, q+1]`.
pub fn rho_sharp(dist: f64, h2: f64) -> u64 {
    if dist == 0.0 {
        0
    } else {
        (dist / h2).ceil().max(1.0) as u64
    }
}

/// A finite `h₂`-net of a codomain, addressed by center index.
pub trait Net<V>: Sync {
    fn h2(&self) -> f64;

    fn size(&self) -> usize;

    fn center(&self, i: usize) -> V;

    /// Distance between centers `i` and `j`.
    fn center_dist(&self, i: usize, j: usize) -> f64;

    /// Index of the nearest center (lowest index on ties) and its distance.
    fn nearest(&self, v: &V) -> (usize, f64);

    fn rho_sharp(&self, i: usize, j: usize) -> u64 {
        if i == j {
            0
        } else {
            rho_sharp(self.center_dist(i, j), self.h2())
        }
    }

    /// Centers at `ρ♯`-distance exactly `k` from center `i`, ascending.
    fn shell(&self, i: usize, k: u64) -> Vec<usize> {
        (0..self.size())
            .filter(|&j| self.rho_sharp(i, j) == k)
            .collect()
    }
}

/// A value space the coder can target.
pub trait Codomain: Sync {
    type Value: Clone + PartialEq + Debug + Send + Sync;
    type Metric: ValueMetric<Self::Value>;
    type Net: Net<Self::Value>;

    fn metric(&self) -> &Self::Metric;

    fn net(&self, h2: f64) -> Self::Net;

    /// `log₂` of (an upper bound on) the `α`-covering number of the codomain.
    fn covering_entropy(&self, alpha: f64) -> f64;

    fn doubling_dimension(&self) -> u32;

    fn diameter(&self) -> f64;
}

/// The interval `[-M, M]` of the real line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub half_width: f64,
}

impl Interval {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(CodecError::InvalidParameter(format!(
                "interval half-width {half_width}"
            )));
        }
        Ok(Interval { half_width })
    }

    /// Closed balls of radius `α` have length `2α`, so `⌈M/α⌉` of them
    /// cover `[-M, M]` and no fewer do.
    pub fn covering_number(&self, alpha: f64) -> usize {
        tolerant_ceil(self.half_width / alpha).max(1)
    }
}

fn tolerant_ceil(x: f64) -> usize {
    (x * (1.0 - 1e-12)).ceil() as usize
}

/// Centers `(2i + 1 - n)·h₂`, `i < n = ⌈M/h₂⌉`, spaced `2h₂` apart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalNet {
    h2: f64,
    n: usize,
}

impl Net<f64> for IntervalNet {
    fn h2(&self) -> f64 {
        self.h2
    }

    fn size(&self) -> usize {
        self.n
    }

    fn center(&self, i: usize) -> f64 {
        (2.0 * i as f64 + 1.0 - self.n as f64) * self.h2
    }

    fn center_dist(&self, i: usize, j: usize) -> f64 {
        2.0 * i.abs_diff(j) as f64 * self.h2
    }

    fn nearest(&self, v: &f64) -> (usize, f64) {
        let x = (v / self.h2 + self.n as f64 - 1.0) / 2.0;
        let i = (x - 0.5).ceil().clamp(0.0, (self.n - 1) as f64) as usize;
        (i, (v - self.center(i)).abs())
    }

    fn rho_sharp(&self, i: usize, j: usize) -> u64 {
        2 * i.abs_diff(j) as u64
    }

    fn shell(&self, i: usize, k: u64) -> Vec<usize> {
        if k == 0 {
            return vec![i];
        }
        if k % 2 == 1 {
            return Vec::new();
        }
        let m = (k / 2) as usize;
        let mut out = Vec::with_capacity(2);
        if m <= i {
            out.push(i - m);
        }
        if i + m < self.n {
            out.push(i + m);
        }
        out
    }
}

impl Codomain for Interval {
    type Value = f64;
    type Metric = RealLine;
    type Net = IntervalNet;

    fn metric(&self) -> &RealLine {
        &RealLine
    }

    fn net(&self, h2: f64) -> IntervalNet {
        IntervalNet {
            h2,
            n: self.covering_number(h2),
        }
    }

    fn covering_entropy(&self, alpha: f64) -> f64 {
        (self.covering_number(alpha) as f64).log2()
    }

    fn doubling_dimension(&self) -> u32 {
        1
    }

    fn diameter(&self) -> f64 {
        2.0 * self.half_width
    }
}

/// A finite metric space as codomain; values are point indices.
#[derive(Clone, Debug)]
pub struct FiniteCodomain {
    space: Arc<FiniteMetricSpace>,
    dimension: u32,
}

impl FiniteCodomain {
    /// `dimension` is the doubling dimension used in the bit budgets.
    pub fn new(space: Arc<FiniteMetricSpace>, dimension: u32) -> Self {
        FiniteCodomain { space, dimension }
    }

    pub fn space(&self) -> &FiniteMetricSpace {
        &self.space
    }
}

/// Greedy net of a finite space; centers are sorted point indices.
#[derive(Clone, Debug)]
pub struct FiniteNet {
    space: Arc<FiniteMetricSpace>,
    h2: f64,
    centers: Vec<usize>,
}

impl FiniteNet {
    pub fn centers(&self) -> &[usize] {
        &self.centers
    }
}

impl Net<usize> for FiniteNet {
    fn h2(&self) -> f64 {
        self.h2
    }

    fn size(&self) -> usize {
        self.centers.len()
    }

    fn center(&self, i: usize) -> usize {
        self.centers[i]
    }

    fn center_dist(&self, i: usize, j: usize) -> f64 {
        self.space.dist(self.centers[i], self.centers[j])
    }

    fn nearest(&self, v: &usize) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, &c) in self.centers.iter().enumerate() {
            let d = self.space.dist(c, *v);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

impl Codomain for FiniteCodomain {
    type Value = usize;
    type Metric = FiniteMetricSpace;
    type Net = FiniteNet;

    fn metric(&self) -> &FiniteMetricSpace {
        &self.space
    }

    fn net(&self, h2: f64) -> FiniteNet {
        let all: Vec<usize> = (0..self.space.len()).collect();
        let centers = greedy_cover(self.space.as_ref(), &all, h2).witness;
        FiniteNet {
            space: Arc::clone(&self.space),
            h2,
            centers,
        }
    }

    fn covering_entropy(&self, alpha: f64) -> f64 {
        let all: Vec<usize> = (0..self.space.len()).collect();
        (greedy_cover(self.space.as_ref(), &all, alpha).count as f64).log2()
    }

    fn doubling_dimension(&self) -> u32 {
        self.dimension
    }

    fn diameter(&self) -> f64 {
        self.space.diameter()
    }
}

/// `N₁` equal cells of `[0, L]` sampled at their midpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuantizerGrid {
    pub length: f64,
    pub n1: usize,
}

impl QuantizerGrid {
    pub fn h1(&self) -> f64 {
        self.length / self.n1 as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (2 * i + 1) as f64 * self.h1() / 2.0
    }
}

/// `N₁ = ⌊3LV/(2ε)⌋ + 2` and `h₂ = V/(N₁ - 1)`, which give
/// `LV/(2N₁) + L·h₂ < ε` and `h₂ ≥ ε/(2L)`.
///
/// A zero budget means a constant function: one cell, `h₂ = ε/(2L)`.
pub fn choose_params(length: f64, budget: f64, epsilon: f64) -> Result<(usize, f64)> {
    if !(length > 0.0 && length.is_finite()) || !(budget >= 0.0 && budget.is_finite()) {
        return Err(CodecError::InvalidParameter(format!(
            "L = {length}, V = {budget}"
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CodecError::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    if budget == 0.0 {
        return Ok((1, epsilon / (2.0 * length)));
    }
    let cap = length * budget / 2.0;
    if epsilon > cap {
        return Err(CodecError::EpsilonTooLarge { epsilon, cap });
    }
    let n1 = (3.0 * length * budget / (2.0 * epsilon)).floor() as usize + 2;
    Ok((n1, budget / (n1 - 1) as f64))
}

/// Net indices of the snapped midpoint samples.
pub fn quantize_indices<V, N: Net<V>>(
    f: &StepFunction<V>,
    grid: QuantizerGrid,
    net: &N,
) -> Result<Vec<usize>> {
    (0..grid.n1)
        .map(|i| {
            let (c, d) = net.nearest(f.eval(grid.midpoint(i)));
            if d > net.h2() * (1.0 + NET_EDGE_TOL) {
                Err(CodecError::NetIncomplete {
                    cell: i,
                    distance: d,
                    h2: net.h2(),
                })
            } else {
                Ok(c)
            }
        })
        .collect()
}

/// `f♯`: on each cell, the net center nearest to the midpoint sample.
pub fn quantize<V, N: Net<V>>(
    f: &StepFunction<V>,
    grid: QuantizerGrid,
    net: &N,
) -> Result<StepFunction<V>> {
    let idx = quantize_indices(f, grid, net)?;
    Ok(StepFunction::uniform(
        grid.length,
        idx.iter().map(|&i| net.center(i)).collect(),
    )?)
}

/// `φ(I₀) = 0`, `φ(I_i) = Σ_{ℓ<i} ρ♯(a_ℓ, a_{ℓ+1}) + i − 1`.
pub fn jump_profile<V, N: Net<V>>(indices: &[usize], net: &N) -> Vec<u64> {
    let mut out = Vec::with_capacity(indices.len());
    let mut acc = 0u64;
    for i in 0..indices.len() {
        if i == 0 {
            out.push(0);
            continue;
        }
        acc += net.rho_sharp(indices[i - 1], indices[i]);
        out.push(acc + i as u64 - 1);
    }
    out
}

/// `Γ = 4N₁ − 4 + ⌊V/h₂⌋`, the number of values a jump profile may take.
pub fn profile_range(n1: usize, budget: f64, h2: f64) -> u64 {
    4 * n1 as u64 - 4 + (budget / h2).floor() as u64
}

/// Self-describing compressed function.
#[derive(Clone, Debug, PartialEq)]
pub struct Codeword {
    pub length: f64,
    pub n1: u32,
    pub net_size: u32,
    pub h2: f64,
    pub gauge: String,
    pub payload: Vec<u8>,
    /// Exact number of payload bits (the rest of the last byte is padding).
    pub bit_length: u64,
}

impl Codeword {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.gauge.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.length.to_le_bytes());
        out.extend_from_slice(&self.n1.to_le_bytes());
        out.extend_from_slice(&self.net_size.to_le_bytes());
        out.extend_from_slice(&self.h2.to_le_bytes());
        out.extend_from_slice(&(self.gauge.len() as u32).to_le_bytes());
        out.extend_from_slice(self.gauge.as_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a codeword file. The payload's exact bit length is not stored;
    /// it is taken as the padded length here and made exact by [`decode`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| CodecError::CorruptStream(what.to_string());
        let mut rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| corrupt("bad magic"))?;
        let mut take = |n: usize| -> Result<&[u8]> {
            if rest.len() < n {
                return Err(corrupt("truncated header"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        let length = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let n1 = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let net_size = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let h2 = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let glen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let gauge = String::from_utf8(take(glen)?.to_vec())
            .map_err(|_| corrupt("gauge token is not UTF-8"))?;
        let payload = rest.to_vec();
        if n1 == 0 || net_size == 0 || !(length > 0.0) || !(h2 > 0.0) {
            return Err(corrupt("invalid header values"));
        }
        let bit_length = payload.len() as u64 * 8;
        Ok(Codeword {
            length,
            n1,
            net_size,
            h2,
            gauge,
            payload,
            bit_length,
        })
    }
}

/// Payload size split by field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BitBreakdown {
    pub start: u64,
    pub radius: u64,
    pub rank: u64,
}

impl BitBreakdown {
    pub fn total(&self) -> u64 {
        self.start + self.radius + self.rank
    }
}

/// Result of an encode, with everything needed to audit it.
#[derive(Clone, Debug)]
pub struct Encoded<V> {
    pub codeword: Codeword,
    pub reconstruction: StepFunction<V>,
    pub indices: Vec<usize>,
    pub grid: QuantizerGrid,
    pub h2: f64,
    /// `ρ_{L¹}(f, f̂)` against the input that was passed in.
    pub l1_error: f64,
    pub tv_quantized: f64,
    /// `2(N₁ − 1)·h₂ + V`.
    pub tv_quantized_bound: f64,
    pub bits: BitBreakdown,
    /// Closed-form bit budget the payload is compared against.
    pub budget_bits: f64,
    pub coarsening: Option<CoarseningCertificate>,
}

impl<V> Encoded<V> {
    pub fn bit_length(&self) -> u64 {
        self.codeword.bit_length
    }
}

fn write_payload<V, N: Net<V>>(indices: &[usize], net: &N) -> (BitWriter, BitBreakdown) {
    let mut w = BitWriter::new();
    let mut bits = BitBreakdown::default();
    let width = index_width(net.size());
    w.write_bits(indices[0] as u64, width);
    bits.start = width as u64;
    for pair in indices.windows(2) {
        let k = net.rho_sharp(pair[0], pair[1]);
        w.write_gamma(k + 1);
        bits.radius += gamma_len(k + 1);
        let shell = net.shell(pair[0], k);
        let rank = shell
            .binary_search(&pair[1])
            .expect("next center lies in its own shell");
        let rw = index_width(shell.len());
        w.write_bits(rank as u64, rw);
        bits.rank += rw as u64;
    }
    (w, bits)
}

/// Codeword, cell indices, reconstruction, bit split and grid.
type Quantized<V> = (
    Codeword,
    Vec<usize>,
    StepFunction<V>,
    BitBreakdown,
    QuantizerGrid,
);

fn encode_indices<C: Codomain>(
    f: &StepFunction<C::Value>,
    codomain: &C,
    n1: usize,
    h2: f64,
    gauge_token: String,
) -> Result<Quantized<C::Value>> {
    let net = codomain.net(h2);
    let grid = QuantizerGrid {
        length: f.length(),
        n1,
    };
    let indices = quantize_indices(f, grid, &net)?;
    let (w, bits) = write_payload(&indices, &net);
    let bit_length = w.bit_len();
    let n1_u32 = u32::try_from(n1)
        .map_err(|_| CodecError::InvalidParameter(format!("N1 = {n1} exceeds u32")))?;
    let net_u32 = u32::try_from(net.size())
        .map_err(|_| CodecError::InvalidParameter(format!("net of {} centers", net.size())))?;
    let codeword = Codeword {
        length: f.length(),
        n1: n1_u32,
        net_size: net_u32,
        h2,
        gauge: gauge_token,
        payload: w.into_bytes(),
        bit_length,
    };
    let recon =
        StepFunction::uniform(f.length(), indices.iter().map(|&i| net.center(i)).collect())?;
    Ok((codeword, indices, recon, bits, grid))
}

/// `[3d + log₂(5e)]·2LV/ε + H_{ε/2L}`.
pub fn bv_bound_bits(length: f64, budget: f64, epsilon: f64, d: u32, h_half: f64) -> f64 {
    (3.0 * d as f64 + log2_5e()) * 2.0 * length * budget / epsilon + h_half
}

fn encode_bv_inner<C: Codomain>(
    f: &StepFunction<C::Value>,
    codomain: &C,
    budget: f64,
    epsilon: f64,
    gauge_token: String,
) -> Result<Encoded<C::Value>> {
    let length = f.length();
    let metric = codomain.metric();
    let measured = tv(f, metric);
    if measured > budget * (1.0 + 1e-12) {
        return Err(CodecError::BudgetViolation { measured, budget });
    }
    let (n1, h2) = choose_params(length, budget, epsilon)?;
    let (codeword, indices, recon, bits, grid) = encode_indices(f, codomain, n1, h2, gauge_token)?;
    let tv_quantized = tv(&recon, metric);
    let tv_quantized_bound = 2.0 * (n1 - 1) as f64 * h2 + budget;
    if tv_quantized > tv_quantized_bound * (1.0 + NET_EDGE_TOL) {
        return Err(CodecError::InvariantViolation(format!(
            "quantized variation {tv_quantized} exceeds 2(N1-1)h2 + V = {tv_quantized_bound}"
        )));
    }
    let l1_error = l1_distance(f, &recon, metric)?;
    let h_half = codomain.covering_entropy(epsilon / (2.0 * length));
    let budget_bits = bv_bound_bits(
        length,
        budget,
        epsilon,
        codomain.doubling_dimension(),
        h_half,
    );
    Ok(Encoded {
        codeword,
        reconstruction: recon,
        indices,
        grid,
        h2,
        l1_error,
        tv_quantized,
        tv_quantized_bound,
        bits,
        budget_bits,
        coarsening: None,
    })
}

/// Encodes `f` with `TV(f) ≤ V` to `L¹` accuracy `ε`.
pub fn encode_bv<C: Codomain>(
    f: &StepFunction<C::Value>,
    codomain: &C,
    budget: f64,
    epsilon: f64,
) -> Result<Encoded<C::Value>> {
    encode_bv_inner(f, codomain, budget, epsilon, Gauge::Identity.token())
}

/// Reads a codeword back into the quantized function and the exact number
/// of payload bits consumed.
pub fn decode_with_length<C: Codomain>(
    cw: &Codeword,
    codomain: &C,
) -> Result<(StepFunction<C::Value>, u64)> {
    let net = codomain.net(cw.h2);
    if net.size() != cw.net_size as usize {
        return Err(CodecError::NetMismatch {
            expected: cw.net_size as usize,
            found: net.size(),
        });
    }
    let truncated = |_| CodecError::CorruptStream("truncated payload".into());
    let mut r = BitReader::new(&cw.payload, cw.payload.len() as u64 * 8);
    let mut indices = Vec::with_capacity(cw.n1 as usize);
    let start = r.read_bits(index_width(net.size())).map_err(truncated)? as usize;
    if start >= net.size() {
        return Err(CodecError::CorruptStream(format!(
            "start index {start} outside a net of {}",
            net.size()
        )));
    }
    indices.push(start);
    for step in 1..cw.n1 as usize {
        let k = r.read_gamma().map_err(truncated)? - 1;
        let prev = indices[step - 1];
        let shell = net.shell(prev, k);
        if shell.is_empty() {
            return Err(CodecError::CorruptStream(format!(
                "no center at radius {k} from center {prev}"
            )));
        }
        let rank = r.read_bits(index_width(shell.len())).map_err(truncated)? as usize;
        if rank >= shell.len() {
            return Err(CodecError::CorruptStream(format!(
                "rank {rank} outside a shell of {}",
                shell.len()
            )));
        }
        indices.push(shell[rank]);
    }
    if r.remaining() >= 8 {
        return Err(CodecError::CorruptStream(
            "trailing bytes after payload".into(),
        ));
    }
    let used = r.position();
    let f = StepFunction::uniform(cw.length, indices.iter().map(|&i| net.center(i)).collect())?;
    Ok((f, used))
}

pub fn decode<C: Codomain>(cw: &Codeword, codomain: &C) -> Result<StepFunction<C::Value>> {
    decode_with_length(cw, codomain).map(|(f, _)| f)
}

/// Output of [`adaptive_coarsen`] with the checks it certifies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoarseningCertificate {
    pub h: f64,
    pub points: Vec<f64>,
    /// `h·V/Ψ(h)`.
    pub v_h: f64,
    pub tv_coarse: f64,
    pub l1_error: f64,
    pub count_bound: f64,
    pub count_ok: bool,
    pub tv_ok: bool,
    pub l1_ok: bool,
}

impl CoarseningCertificate {
    pub fn cells(&self) -> usize {
        self.points.len()
    }

    pub fn holds(&self) -> bool {
        self.count_ok && self.tv_ok && self.l1_ok
    }
}

/// Greedy partition `x₀ = 0`, `x_{i+1}` = first point where `f` leaves the
/// closed `h`-ball around `f(x_i)` (or `L`), and `f_h = f(x_i)` on
/// `[x_i, x_{i+1})`. On step functions the exit happens at a breakpoint.
pub fn adaptive_coarsen<T: Clone>(
    f: &StepFunction<T>,
    metric: &impl ValueMetric<T>,
    h: f64,
    gauge: &Gauge,
    budget: f64,
) -> Result<(StepFunction<T>, CoarseningCertificate)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(CodecError::InvalidParameter(format!("h = {h}")));
    }
    let values = f.values();
    let bps = f.breakpoints();
    let mut starts = vec![0usize];
    let mut anchor = 0usize;
    for j in 1..values.len() {
        if metric.value_dist(&values[j], &values[anchor]) > h {
            starts.push(j);
            anchor = j;
        }
    }
    let mut breakpoints: Vec<f64> = starts.iter().map(|&j| bps[j]).collect();
    breakpoints.push(f.length());
    let coarse_values: Vec<T> = starts.iter().map(|&j| values[j].clone()).collect();
    let fh = StepFunction::new(f.length(), breakpoints.clone(), coarse_values)?;

    let psi_h = gauge.eval(h);
    let v_h = h * budget / psi_h;
    let count_bound = budget / psi_h;
    let tv_coarse = tv(&fh, metric);
    let l1_error = l1_distance(&fh, f, metric)?;
    let rel = |x: f64| x * (1.0 + 1e-12) + 1e-300;
    let cert = CoarseningCertificate {
        h,
        points: breakpoints[..starts.len()].to_vec(),
        v_h,
        tv_coarse,
        l1_error,
        count_bound,
        count_ok: (starts.len() - 1) as f64 <= rel(count_bound),
        tv_ok: tv_coarse <= rel(v_h),
        l1_ok: l1_error <= rel(f.length() * h),
    };
    Ok((fh, cert))
}

/// `2L·Ψ⁻¹(V/4)`, the largest `ε` the `Ψ`-variation coder accepts.
pub fn bvpsi_epsilon_cap(length: f64, budget: f64, gauge: &Gauge) -> f64 {
    2.0 * length * gauge.inverse(budget / 4.0)
}

/// Encodes `f` with `TV^Ψ(f) ≤ V` to `L¹` accuracy `ε`: coarsen at
/// `h = ε/(2L)`, then run the variation coder at `ε/2` on `f_h`, whose
/// variation is at most `V_h = εV/(2L·Ψ(ε/(2L)))`.
pub fn encode_bvpsi<C: Codomain>(
    f: &StepFunction<C::Value>,
    codomain: &C,
    gauge: &Gauge,
    budget: f64,
    epsilon: f64,
) -> Result<Encoded<C::Value>> {
    let length = f.length();
    let metric = codomain.metric();
    let measured = tv_psi(f, metric, gauge);
    if measured > budget * (1.0 + 1e-12) {
        return Err(CodecError::BudgetViolation { measured, budget });
    }
    if budget == 0.0 {
        let mut enc = encode_bv_inner(f, codomain, 0.0, epsilon, gauge.token())?;
        enc.budget_bits = codomain.covering_entropy(epsilon / (4.0 * length));
        return Ok(enc);
    }
    if !(epsilon > 0.0) {
        return Err(CodecError::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    let cap = bvpsi_epsilon_cap(length, budget, gauge);
    if epsilon > cap {
        return Err(CodecError::EpsilonTooLarge { epsilon, cap });
    }
    let h = epsilon / (2.0 * length);
    let (fh, cert) = adaptive_coarsen(f, metric, h, gauge, budget)?;
    if !cert.holds() {
        return Err(CodecError::InvariantViolation(format!(
            "coarsening certificate failed: {cert:?}"
        )));
    }
    // TV(f_h) ≤ V_h is certified above; coding against the measured value
    // (floored at ε/L, the smallest budget the coder accepts at ε/2) keeps
    // N₁ proportional to the actual variation.
    let inner_budget = cert.tv_coarse.max(epsilon / length).min(cert.v_h);
    let mut enc = encode_bv_inner(&fh, codomain, inner_budget, epsilon / 2.0, gauge.token())?;
    enc.l1_error = l1_distance(f, &enc.reconstruction, metric)?;
    enc.budget_bits = upper_bound_bits(
        length,
        budget,
        epsilon,
        gauge,
        codomain.doubling_dimension(),
        codomain.covering_entropy(epsilon / (4.0 * length)),
    );
    enc.coarsening = Some(cert);
    Ok(enc)
}

/// `[3d + log₂(5e)]·2V/Ψ(ε/(2L)) + H_{ε/4L}`.
pub fn upper_bound_bits(
    length: f64,
    budget: f64,
    epsilon: f64,
    gauge: &Gauge,
    d: u32,
    h_quarter: f64,
) -> f64 {
    (3.0 * d as f64 + log2_5e()) * 2.0 * budget / gauge.eval(epsilon / (2.0 * length)) + h_quarter
}

/// Power-gauge form: `2^{γ+1}[3d + log₂(5e)]·L^γV/ε^γ + d·log₂(diam·8L/ε)`.
pub fn power_upper_bound_bits(
    gamma: f64,
    length: f64,
    budget: f64,
    epsilon: f64,
    d: u32,
    diameter: f64,
) -> f64 {
    2f64.powf(gamma + 1.0) * (3.0 * d as f64 + log2_5e()) * (length / epsilon).powf(gamma) * budget
        + d as f64 * (diameter * 8.0 * length / epsilon).log2()
}

/// Largest `ε` for the power-gauge form: `2^{(γ−2)/γ}·L·V^{1/γ}`.
pub fn power_epsilon_cap(gamma: f64, length: f64, budget: f64) -> f64 {
    2f64.powf((gamma - 2.0) / gamma) * length * budget.powf(1.0 / gamma)
}

/// Values in a ball of radius `M` in `R^dim`:
/// `[3·dim·log₂5 + log₂(5e)]·2V/Ψ(ε/(2L)) + dim·log₂(8LM/ε + 1)`.
pub fn euclidean_upper_bound_bits(
    gauge: &Gauge,
    length: f64,
    budget: f64,
    epsilon: f64,
    dim: u32,
    radius: f64,
) -> f64 {
    let dim = dim as f64;
    (3.0 * dim * 5f64.log2() + log2_5e()) * 2.0 * budget / gauge.eval(epsilon / (2.0 * length))
        + dim * (8.0 * length * radius / epsilon + 1.0).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FiniteMetricSpace;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn params_examples() {
        let (n1, h2) = choose_params(1.0, 1.0, 0.5).unwrap();
        assert_eq!((n1, h2), (5, 0.25));
        let (n1, h2) = choose_params(2.0, 1.0, 1.0).unwrap();
        assert_eq!((n1, h2), (5, 0.25));
        assert!(h2 >= 1.0 / 4.0);
        assert!(matches!(
            choose_params(1.0, 1.0, 0.6),
            Err(CodecError::EpsilonTooLarge { .. })
        ));
        assert_eq!(choose_params(1.0, 0.0, 0.3).unwrap(), (1, 0.15));
    }

    #[test]
    fn rho_sharp_examples() {
        assert_eq!(rho_sharp(0.0, 1.0), 0);
        assert_eq!(rho_sharp(2.5, 1.0), 3);
        assert_eq!(rho_sharp(3.0, 1.0), 3);
        assert_eq!(rho_sharp(0.01, 1.0), 1);
    }

    #[test]
    fn jump_profile_examples() {
        let net = Interval::new(1.0).unwrap().net(0.5);
        assert_eq!(jump_profile(&[1, 1, 1], &net), vec![0, 0, 1]);
        // Neighbouring interval centers are 2h₂ apart, so ρ♯ = 2.
        assert_eq!(jump_profile(&[0, 1, 1], &net), vec![0, 2, 3]);
        assert_eq!(jump_profile(&[0], &net), vec![0]);
    }

    #[test]
    fn profile_oracle_examples() {
        // Unit jumps in ρ♯ come from a net whose centers are h₂ apart.
        let space = Arc::new(FiniteMetricSpace::line(&[0.0, 1.0, 2.0]).unwrap());
        let net = FiniteNet {
            space,
            h2: 1.0,
            centers: vec![0, 1, 2],
        };
        assert_eq!(jump_profile(&[0, 0, 0], &net), vec![0, 0, 1]);
        assert_eq!(jump_profile(&[0, 1, 1], &net), vec![0, 1, 2]);
    }

    #[test]
    fn interval_net_quantizes_to_nearest() {
        let net = Interval::new(1.0).unwrap().net(0.25);
        assert_eq!(net.size(), 4);
        assert_eq!(
            (0..4).map(|i| net.center(i)).collect::<Vec<_>>(),
            vec![-0.75, -0.25, 0.25, 0.75]
        );
        assert_eq!(net.nearest(&0.0).0, 1);
        assert_eq!(net.nearest(&0.3).0, 2);
        assert_eq!(net.nearest(&1.0), (3, 0.25));
        assert_eq!(net.shell(1, 2), vec![0, 2]);
        assert_eq!(net.shell(0, 4), vec![2]);
        assert!(net.shell(0, 3).is_empty());
    }

    #[test]
    fn quantize_examples() {
        let codomain = Interval::new(1.0).unwrap();
        let net = codomain.net(0.25);
        let grid = QuantizerGrid { length: 1.0, n1: 4 };
        let f = StepFunction::constant(1.0, 0.25).unwrap();
        assert_eq!(
            quantize(&f, grid, &net).unwrap(),
            StepFunction::uniform(1.0, vec![0.25; 4]).unwrap()
        );
        // Jump at 0.3 lies in cell [0.25, 0.5) before its midpoint 0.375.
        let g = StepFunction::new(1.0, vec![0.0, 0.3, 1.0], vec![-0.75, 0.75]).unwrap();
        let q = quantize(&g, grid, &net).unwrap();
        assert_eq!(q.values(), &[-0.75, 0.75, 0.75, 0.75]);
        let err = l1_distance(&g, &q, &RealLine).unwrap();
        assert!(close(err, 0.05 * 1.5));
        assert!(err <= grid.h1() * 1.5);
        let far = StepFunction::constant(1.0, 3.0).unwrap();
        assert!(matches!(
            quantize(&far, grid, &net),
            Err(CodecError::NetIncomplete { .. })
        ));
    }

    #[test]
    fn tie_picks_lower_center() {
        let net = Interval::new(1.0).unwrap().net(0.25);
        assert_eq!(net.nearest(&0.0).0, 1);
        let space = Arc::new(FiniteMetricSpace::line(&[0.0, 1.0, 2.0]).unwrap());
        let fnet = FiniteNet {
            space,
            h2: 1.0,
            centers: vec![0, 2],
        };
        assert_eq!(fnet.nearest(&1), (0, 1.0));
    }

    #[test]
    fn constant_function_round_trip() {
        let codomain = Interval::new(1.0).unwrap();
        let (_, h2) = choose_params(1.0, 1.0, 0.5).unwrap();
        let c = codomain.net(h2).center(1);
        let f = StepFunction::constant(1.0, c).unwrap();
        let enc = encode_bv(&f, &codomain, 1.0, 0.5).unwrap();
        assert_eq!(enc.l1_error, 0.0);
        let n1 = enc.grid.n1 as u64;
        assert_eq!(enc.bits.radius, n1 - 1);
        assert_eq!(enc.bits.rank, 0);
        assert_eq!(enc.bit_length(), enc.bits.start + n1 - 1);
        assert_eq!(
            decode(&enc.codeword, &codomain).unwrap(),
            enc.reconstruction
        );

        let zero = encode_bv(
            &StepFunction::constant(1.0, 0.3).unwrap(),
            &codomain,
            0.0,
            0.5,
        )
        .unwrap();
        assert_eq!(zero.grid.n1, 1);
        assert_eq!(zero.bit_length(), zero.bits.start);
        assert!(zero.l1_error <= 0.5);
    }

    #[test]
    fn budget_violation_reported() {
        let codomain = Interval::new(1.0).unwrap();
        let f = StepFunction::uniform(1.0, vec![0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            encode_bv(&f, &codomain, 1.0, 0.1),
            Err(CodecError::BudgetViolation { .. })
        ));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let codomain = Interval::new(1.0).unwrap();
        let f = StepFunction::new(1.0, vec![0.0, 0.4, 1.0], vec![-0.5, 0.5]).unwrap();
        let enc = encode_bv(&f, &codomain, 1.0, 0.1).unwrap();
        let bytes = enc.codeword.to_bytes();
        assert_eq!(&bytes[..4], b"BVC1");
        let cw = Codeword::from_bytes(&bytes).unwrap();
        let (g, used) = decode_with_length(&cw, &codomain).unwrap();
        assert_eq!(g, enc.reconstruction);
        assert_eq!(used, enc.bit_length());

        let mut short = cw.clone();
        short.payload.truncate(short.payload.len() / 2);
        assert!(matches!(
            decode(&short, &codomain),
            Err(CodecError::CorruptStream(_))
        ));
        assert!(Codeword::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn adversarial_rank_rejected() {
        // Three neighbours at distance 1 from the origin: with h₂ = 0.4 the
        // shell of the origin at ρ♯ = 3 has three centers, so a 2-bit rank
        // of 3 points past its end.
        let cloud =
            crate::metric::PointCloud::new(2, vec![0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0]);
        let codomain = FiniteCodomain::new(Arc::new(FiniteMetricSpace::from_metric(&cloud)), 2);
        let net = codomain.net(0.4);
        assert_eq!(net.size(), 4);
        assert_eq!(net.shell(0, 3), vec![1, 2, 3]);
        let mut w = BitWriter::new();
        w.write_bits(0, 2);
        w.write_gamma(4);
        w.write_bits(3, 2);
        let cw = Codeword {
            length: 1.0,
            n1: 2,
            net_size: 4,
            h2: 0.4,
            gauge: "id".into(),
            bit_length: w.bit_len(),
            payload: w.into_bytes(),
        };
        assert!(
            matches!(decode(&cw, &codomain), Err(CodecError::CorruptStream(m)) if m.contains("rank"))
        );
    }

    #[test]
    fn coarsening_examples() {
        let f = StepFunction::new(1.0, vec![0.0, 0.5, 1.0], vec![0.0, 1.0]).unwrap();
        let (fh, cert) = adaptive_coarsen(&f, &RealLine, 0.5, &Gauge::Identity, 1.0).unwrap();
        assert_eq!(fh, f);
        assert_eq!(cert.l1_error, 0.0);
        assert!(cert.holds());
        let (fh, cert) = adaptive_coarsen(&f, &RealLine, 2.0, &Gauge::Identity, 1.0).unwrap();
        assert_eq!(fh, StepFunction::constant(1.0, 0.0).unwrap());
        assert_eq!(cert.l1_error, 0.5);
        assert!(cert.holds());
        let c = StepFunction::constant(1.0, 4.0).unwrap();
        let (ch, cert) = adaptive_coarsen(&c, &RealLine, 0.1, &Gauge::Identity, 1.0).unwrap();
        assert_eq!(ch, c);
        assert_eq!(cert.cells(), 1);
    }

    #[test]
    fn bvpsi_examples() {
        let sq = Gauge::power(2.0).unwrap();
        assert!(close(bvpsi_epsilon_cap(1.0, 1.0, &sq), 1.0));
        let codomain = Interval::new(1.0).unwrap();
        let f = StepFunction::constant(1.0, 0.0).unwrap();
        let enc = encode_bvpsi(&f, &codomain, &sq, 1.0, 0.25).unwrap();
        assert!(enc.l1_error <= 0.25);
        assert_eq!(
            decode(&enc.codeword, &codomain).unwrap(),
            enc.reconstruction
        );
        assert_eq!(enc.codeword.gauge, "pow:2");
        assert!(matches!(
            encode_bvpsi(&f, &codomain, &sq, 1.0, 1.5),
            Err(CodecError::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn bound_formulas() {
        let c = 3.0 + log2_5e();
        assert!(close(bv_bound_bits(1.0, 1.0, 0.5, 1, 1.0), c * 4.0 + 1.0));
        assert!(close(
            upper_bound_bits(1.0, 1.0, 0.5, &Gauge::Identity, 1, 1.0),
            c * 8.0 + 1.0
        ));
        assert!((c * 4.0 + 1.0 - 28.06).abs() < 0.01);
        // Power form with γ = 1 on [-1, 1] (diameter 2).
        assert!(close(
            power_upper_bound_bits(1.0, 1.0, 1.0, 0.5, 1, 2.0),
            4.0 * c * 2.0 + 5.0
        ));
        assert!(close(
            euclidean_upper_bound_bits(&Gauge::Identity, 1.0, 1.0, 0.5, 1, 1.0),
            (3.0 * 5f64.log2() + log2_5e()) * 8.0 + 17f64.log2()
        ));
        // Vanishing budget leaves only the net term.
        assert_eq!(bv_bound_bits(1.0, 0.0, 0.5, 1, 3.0), 3.0);
        assert!(close(power_epsilon_cap(2.0, 1.0, 1.0), 1.0));
    }

    fn random_bv(rng: &mut ChaCha8Rng, budget: f64) -> StepFunction<f64> {
        let k = rng.gen_range(1..40);
        let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.gen::<f64>()).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut bps = vec![0.0];
        bps.extend(cuts.into_iter().filter(|&c| c > 0.0));
        bps.push(1.0);
        let pieces = bps.len() - 1;
        let mut jumps: Vec<f64> = (0..pieces.saturating_sub(1))
            .map(|_| rng.gen::<f64>() - 0.5)
            .collect();
        let total: f64 = jumps.iter().map(|j| j.abs()).sum();
        if total > 0.0 {
            let scale = budget * rng.gen::<f64>() / total;
            jumps.iter_mut().for_each(|j| *j *= scale);
        }
        let mut v = rng.gen::<f64>() - 0.5;
        let mut values = vec![v];
        for j in jumps {
            v = (v + j).clamp(-1.0, 1.0);
            values.push(v);
        }
        StepFunction::new(1.0, bps, values).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_within_epsilon(seed in any::<u64>(), eps in 0.02f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_bv(&mut rng, 1.0);
            let codomain = Interval::new(1.0).unwrap();
            let enc = encode_bv(&f, &codomain, 1.0, eps).unwrap();
            prop_assert!(enc.l1_error <= eps);
            prop_assert!((enc.bit_length() as f64) <= enc.budget_bits);
            let (g, used) = decode_with_length(&Codeword::from_bytes(&enc.codeword.to_bytes()).unwrap(), &codomain).unwrap();
            prop_assert_eq!(&g, &enc.reconstruction);
            prop_assert_eq!(used, enc.bit_length());
            let net = codomain.net(enc.h2);
            let phi = jump_profile(&enc.indices, &net);
            let gamma = profile_range(enc.grid.n1, 1.0, enc.h2);
            prop_assert!(phi.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(phi.iter().all(|&p| p < gamma));
        }

        #[test]
        fn psi_round_trip_within_epsilon(seed in any::<u64>(), eps in 0.05f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sq = Gauge::power(2.0).unwrap();
            let f = random_bv(&mut rng, 1.0);
            let v = tv_psi(&f, &RealLine, &sq).max(1e-3);
            prop_assume!(eps <= bvpsi_epsilon_cap(1.0, v, &sq));
            let codomain = Interval::new(1.0).unwrap();
            let enc = encode_bvpsi(&f, &codomain, &sq, v, eps).unwrap();
            prop_assert!(enc.l1_error <= eps);
            prop_assert!((enc.bit_length() as f64) <= enc.budget_bits);
            prop_assert_eq!(decode(&enc.codeword, &codomain).unwrap(), enc.reconstruction);
        }

        #[test]
        fn finite_codomain_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let space = Arc::new(FiniteMetricSpace::uniform(30, 1.0, seed).unwrap());
            let codomain = FiniteCodomain::new(space.clone(), 1);
            let values: Vec<usize> = (0..8).map(|_| rng.gen_range(0..30)).collect();
            let f = StepFunction::uniform(1.0, values).unwrap();
            let v = tv(&f, space.as_ref()).max(1e-3);
            let enc = encode_bv(&f, &codomain, v, 0.2 * v).unwrap();
            prop_assert!(enc.l1_error <= 0.2 * v);
            prop_assert_eq!(decode(&enc.codeword, &codomain).unwrap(), enc.reconstruction);
        }
    }
}
