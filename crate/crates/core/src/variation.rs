//! Step functions on `[0, L]` with values in a metric space, their total
//! variation and `Ψ`-variation, right-continuous representatives, and the
//! `L¹` distance between two step functions.

use std::fmt::Display;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauge::Gauge;
use crate::metric::Metric;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationError {
    #[error("domain length must be positive and finite, got {0}")]
    InvalidLength(f64),
    #[error("breakpoints must increase strictly from 0 to L")]
    InvalidBreakpoints,
    #[error("{values} values for {breakpoints} breakpoints (expected one fewer value)")]
    CountMismatch { breakpoints: usize, values: usize },
    #[error("step functions live on different domains ({0} vs {1})")]
    DomainMismatch(f64, f64),
    #[error("malformed step-function file: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, VariationError>;

/// Distance between values of a step function.
pub trait ValueMetric<T>: Sync {
    fn value_dist(&self, a: &T, b: &T) -> f64;
}

/// The real line with `|a - b|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RealLine;

impl ValueMetric<f64> for RealLine {
    fn value_dist(&self, a: &f64, b: &f64) -> f64 {
        (a - b).abs()
    }
}

/// Point indices of a finite metric space.
impl<M: Metric> ValueMetric<usize> for M {
    fn value_dist(&self, a: &usize, b: &usize) -> f64 {
        self.dist(*a, *b)
    }
}

/// Piecewise-constant function on `[0, L]`: `values[j]` holds on
/// `[breakpoints[j], breakpoints[j+1])`, the last piece being closed at `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction<T> {
    length: f64,
    breakpoints: Vec<f64>,
    values: Vec<T>,
}

impl<T> StepFunction<T> {
    pub fn new(length: f64, breakpoints: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(VariationError::InvalidLength(length));
        }
        if breakpoints.len() != values.len() + 1 {
            return Err(VariationError::CountMismatch {
                breakpoints: breakpoints.len(),
                values: values.len(),
            });
        }
        let ok = breakpoints[0] == 0.0
            && *breakpoints.last().unwrap() == length
            && breakpoints.windows(2).all(|w| w[0] < w[1]);
        if !ok || values.is_empty() {
            return Err(VariationError::InvalidBreakpoints);
        }
        Ok(StepFunction {
            length,
            breakpoints,
            values,
        })
    }

    pub fn constant(length: f64, value: T) -> Result<Self> {
        Self::new(length, vec![0.0, length], vec![value])
    }

    /// `k` pieces of equal width.
    pub fn uniform(length: f64, values: Vec<T>) -> Result<Self> {
        let k = values.len();
        let mut breakpoints: Vec<f64> = (0..k).map(|j| length * j as f64 / k as f64).collect();
        breakpoints.push(length);
        Self::new(length, breakpoints, values)
    }

    /// Samples `f` at the left end of `k` equal cells.
    pub fn sample(length: f64, k: usize, mut f: impl FnMut(f64) -> T) -> Result<Self> {
        let values = (0..k).map(|j| f(length * j as f64 / k as f64)).collect();
        Self::uniform(length, values)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    /// Index of the piece containing `x` (clamped to `[0, L]`).
    pub fn piece_at(&self, x: f64) -> usize {
        let j = self.breakpoints.partition_point(|&b| b <= x);
        j.saturating_sub(1).min(self.values.len() - 1)
    }

    pub fn eval(&self, x: f64) -> &T {
        &self.values[self.piece_at(x)]
    }

    /// The restriction to `[0, breakpoints[j]]`, `1 ≤ j ≤ k`.
    pub fn restrict(&self, j: usize) -> Result<Self>
    where
        T: Clone,
    {
        if j == 0 || j > self.values.len() {
            return Err(VariationError::InvalidBreakpoints);
        }
        Self::new(
            self.breakpoints[j],
            self.breakpoints[..=j].to_vec(),
            self.values[..j].to_vec(),
        )
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> StepFunction<U> {
        StepFunction {
            length: self.length,
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Merges adjacent pieces with equal values.
    pub fn simplify(&self) -> Self
    where
        T: Clone + PartialEq,
    {
        let mut breakpoints = vec![0.0];
        let mut values: Vec<T> = Vec::new();
        for (j, v) in self.values.iter().enumerate() {
            if values.last() != Some(v) {
                if j > 0 {
                    breakpoints.push(self.breakpoints[j]);
                }
                values.push(v.clone());
            }
        }
        breakpoints.push(self.length);
        StepFunction {
            length: self.length,
            breakpoints,
            values,
        }
    }

    /// `L,k` header then `breakpoint,value` per piece.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()>
    where
        T: Display,
    {
        writeln!(out, "{},{}", self.length, self.values.len())?;
        for (b, v) in self.breakpoints.iter().zip(&self.values) {
            writeln!(out, "{b},{v}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String
    where
        T: Display,
    {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from(input: impl Read) -> Result<Self>
    where
        T: FromStr,
    {
        let reader = BufReader::new(input);
        let mut lines = reader
            .lines()
            .map(|l| l.map_err(|e| VariationError::Io(e.to_string())))
            .filter(|l| {
                l.as_ref().map_or(true, |s| {
                    !s.trim().is_empty() && !s.trim_start().starts_with('#')
                })
            });
        let header = lines
            .next()
            .ok_or_else(|| VariationError::Parse("missing header".into()))??;
        let (l, k) = split_pair(&header)?;
        let length: f64 = parse_field(l)?;
        let k: usize = parse_field(k)?;
        let mut breakpoints = Vec::with_capacity(k + 1);
        let mut values = Vec::with_capacity(k);
        for _ in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| VariationError::Parse(format!("expected {k} pieces")))??;
            let (b, v) = split_pair(&line)?;
            breakpoints.push(parse_field(b)?);
            values.push(parse_field(v)?);
        }
        if lines.next().is_some() {
            return Err(VariationError::Parse(format!("more than {k} pieces")));
        }
        breakpoints.push(length);
        Self::new(length, breakpoints, values)
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self>
    where
        T: FromStr,
    {
        let file = std::fs::File::open(path)
            .map_err(|e| VariationError::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(file)
    }
}

fn split_pair(line: &str) -> Result<(&str, &str)> {
    let mut parts = line.split(',');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => Ok((a.trim(), b.trim())),
        _ => Err(VariationError::Parse(format!(
            "expected two fields in {line:?}"
        ))),
    }
}

fn parse_field<T: FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| VariationError::Parse(format!("cannot parse {s:?}")))
}

/// Sum of jumps between consecutive values.
pub fn tv<T>(f: &StepFunction<T>, metric: &impl ValueMetric<T>) -> f64 {
    f.values
        .windows(2)
        .map(|w| metric.value_dist(&w[0], &w[1]))
        .sum()
}

/// `Ψ`-variation of a step function together with a maximizing chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiVariation {
    pub value: f64,
    /// Lexicographically smallest optimal chain of value indices.
    pub witness: Vec<usize>,
}

/// `TV^Ψ(f)`: the largest `Σ Ψ(ρ(v_{i_j}, v_{i_{j+1}}))` over increasing
/// chains of value indices.
pub fn tv_psi<T>(f: &StepFunction<T>, metric: &impl ValueMetric<T>, gauge: &Gauge) -> f64 {
    tv_psi_sequence(&f.values, metric, gauge).value
}

pub fn tv_psi_witness<T>(
    f: &StepFunction<T>,
    metric: &impl ValueMetric<T>,
    gauge: &Gauge,
) -> PsiVariation {
    tv_psi_sequence(&f.values, metric, gauge)
}

/// `Ψ`-variation of an ordered sequence of values, by an `O(k²)` DP.
///
/// A chain that does not start at index 0 can always be prefixed with 0
/// without decreasing its sum, so chains are anchored there.
pub fn tv_psi_sequence<T>(
    values: &[T],
    metric: &impl ValueMetric<T>,
    gauge: &Gauge,
) -> PsiVariation {
    let k = values.len();
    if k == 0 {
        return PsiVariation {
            value: 0.0,
            witness: Vec::new(),
        };
    }
    let w = |i: usize, j: usize| gauge.eval(metric.value_dist(&values[i], &values[j]));
    // best[j]: largest chain sum over chains ending at j, accumulated left to
    // right so the result matches a direct left-to-right evaluation bit for bit.
    let mut best = vec![0.0f64; k];
    for j in 1..k {
        best[j] = (0..j)
            .map(|i| best[i] + w(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let value = best.iter().copied().fold(0.0, f64::max);

    // tail[i]: largest chain sum over chains starting at i; used to pick the
    // lexicographically smallest optimal chain greedily from the left.
    let mut tail = vec![0.0f64; k];
    for i in (0..k).rev() {
        tail[i] = (i + 1..k).map(|j| w(i, j) + tail[j]).fold(0.0, f64::max);
    }
    let mut witness = vec![0];
    let mut i = 0;
    while tail[i] > 0.0 {
        let next = (i + 1..k)
            .find(|&j| w(i, j) + tail[j] == tail[i])
            .expect("tail value is attained");
        witness.push(next);
        i = next;
    }
    PsiVariation { value, witness }
}

/// A piecewise-constant function that may take separate values at its
/// breakpoints: `pieces[j]` on the open interval `(b_j, b_{j+1})` and
/// `points[j]`, when present, at `b_j` itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RegulatedStep<T> {
    pub length: f64,
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<T>,
    pub points: Vec<Option<T>>,
}

impl<T: Clone> RegulatedStep<T> {
    /// Values in domain order: point value (if any) before each piece, and
    /// the point value at `L` last.
    pub fn sample_sequence(&self) -> Vec<T> {
        let mut seq = Vec::with_capacity(2 * self.pieces.len() + 1);
        for (j, piece) in self.pieces.iter().enumerate() {
            if let Some(p) = &self.points[j] {
                seq.push(p.clone());
            }
            seq.push(piece.clone());
        }
        if let Some(p) = self.points.last().and_then(|p| p.as_ref()) {
            seq.push(p.clone());
        }
        seq
    }

    /// `Ψ`-variation over all sample points of the input.
    pub fn tv_psi(&self, metric: &impl ValueMetric<T>, gauge: &Gauge) -> f64 {
        tv_psi_sequence(&self.sample_sequence(), metric, gauge).value
    }
}

/// The right-continuous representative `x ↦ g(x+)`.
///
/// Isolated values at interior breakpoints are dropped (a null set) and
/// the value at `L` is not stored, since a [`StepFunction`] is determined by
/// its pieces. Its `Ψ`-variation never exceeds that of the input because
/// its value sequence is a subsequence of the input's samples.
pub fn right_continuous<T: Clone>(g: &RegulatedStep<T>) -> Result<StepFunction<T>> {
    if g.points.len() != g.breakpoints.len() {
        return Err(VariationError::CountMismatch {
            breakpoints: g.breakpoints.len(),
            values: g.points.len(),
        });
    }
    StepFunction::new(g.length, g.breakpoints.clone(), g.pieces.clone())
}

/// `∫₀ᴸ ρ(f(x), g(x)) dx`, exact over the merged breakpoints.
pub fn l1_distance<T>(
    f: &StepFunction<T>,
    g: &StepFunction<T>,
    metric: &impl ValueMetric<T>,
) -> Result<f64> {
    if f.length != g.length {
        return Err(VariationError::DomainMismatch(f.length, g.length));
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut x = 0.0;
    let mut total = 0.0;
    while i < f.values.len() && j < g.values.len() {
        let end = f.breakpoints[i + 1].min(g.breakpoints[j + 1]);
        total += (end - x) * metric.value_dist(&f.values[i], &g.values[j]);
        x = end;
        if f.breakpoints[i + 1] == end {
            i += 1;
        }
        if g.breakpoints[j + 1] == end {
            j += 1;
        }
    }
    Ok(total)
}
