//! Convex gauges `Ψ` with `Ψ(0) = 0`, their inverses, and an admissibility
//! check on a probe grid.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for `Ψ(Ψ⁻¹(v)) = v`.
pub const ROUND_TRIP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("power exponent must be >= 1, got {0}")]
    InvalidExponent(f64),
    #[error("gauge table needs at least two rows with strictly increasing, nonnegative, finite abscissae")]
    InvalidTable,
    #[error("gauge check needs at least 3 probe points, got {0}")]
    TooFewProbes(usize),
    #[error("Ψ(0) = {0}, expected 0")]
    NotVanishingAtZero(f64),
    #[error("Ψ({s}) = {value} is not positive")]
    NotPositive { s: f64, value: f64 },
    #[error("Ψ is not strictly increasing between {s} and {t}")]
    NotIncreasing { s: f64, t: f64 },
    #[error("Ψ fails convexity between {s} and {t}")]
    NotConvex { s: f64, t: f64 },
    #[error("Ψ(Ψ⁻¹({value})) = {round_trip}")]
    InverseMismatch { value: f64, round_trip: f64 },
    #[error("unknown gauge token {0:?} (expected id, pow:<γ> or table:<path>)")]
    UnknownToken(String),
    #[error("cannot read gauge table: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GaugeError>;

/// Sampled gauge, linear between knots and extended linearly past both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    #[serde(skip)]
    source: Option<PathBuf>,
}

impl GaugeTable {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let ok = xs.len() >= 2
            && xs.len() == ys.len()
            && xs.iter().chain(&ys).all(|v| v.is_finite())
            && xs[0] >= 0.0
            && xs.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(GaugeError::InvalidTable);
        }
        Ok(GaugeTable {
            xs,
            ys,
            source: None,
        })
    }

    /// Reads `x,y` rows.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| GaugeError::Io(e.to_string()))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| GaugeError::Io(e.to_string()))?;
            if record.len() != 2 {
                return Err(GaugeError::Io(format!(
                    "expected 2 columns, found {}",
                    record.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| GaugeError::Io(format!("{s:?}: {e}")))
            };
            xs.push(parse(&record[0])?);
            ys.push(parse(&record[1])?);
        }
        let mut table = GaugeTable::new(xs, ys)?;
        table.source = Some(path.to_path_buf());
        Ok(table)
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.xs.len();
        let seg = match self.xs.partition_point(|&x| x <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (x0, x1) = (self.xs[seg], self.xs[seg + 1]);
        let (y0, y1) = (self.ys[seg], self.ys[seg + 1]);
        y0 + (y1 - y0) * (s - x0) / (x1 - x0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Gauge {
    Identity,
    Power(f64),
    Tabulated(GaugeTable),
}

impl Gauge {
    pub fn power(gamma: f64) -> Result<Self> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(GaugeError::InvalidExponent(gamma));
        }
        Ok(if gamma == 1.0 {
            Gauge::Identity
        } else {
            Gauge::Power(gamma)
        })
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Ok(Gauge::Tabulated(GaugeTable::new(xs, ys)?))
    }

    /// Parses `id`, `pow:<γ>` or `table:<path>`.
    pub fn parse_token(token: &str) -> Result<Self> {
        if token == "id" {
            return Ok(Gauge::Identity);
        }
        if let Some(g) = token.strip_prefix("pow:") {
            let gamma: f64 = g
                .parse()
                .map_err(|_| GaugeError::UnknownToken(token.to_string()))?;
            return Gauge::power(gamma);
        }
        if let Some(path) = token.strip_prefix("table:") {
            return Ok(Gauge::Tabulated(GaugeTable::read_csv(Path::new(path))?));
        }
        Err(GaugeError::UnknownToken(token.to_string()))
    }

    /// The token this gauge was (or could have been) parsed from.
    pub fn token(&self) -> String {
        match self {
            Gauge::Identity => "id".into(),
            Gauge::Power(g) => format!("pow:{g}"),
            Gauge::Tabulated(t) => match &t.source {
                Some(p) => format!("table:{}", p.display()),
                None => "table:<inline>".into(),
            },
        }
    }

    /// The exponent `γ` of a power gauge (`1` for the identity).
    pub fn gamma(&self) -> Option<f64> {
        match self {
            Gauge::Identity => Some(1.0),
            Gauge::Power(g) => Some(*g),
            Gauge::Tabulated(_) => None,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Gauge::Identity => s,
            Gauge::Power(g) => s.powf(*g),
            Gauge::Tabulated(t) => t.eval(s),
        }
    }

    /// `Ψ⁻¹(v)` for `v ≥ 0`.
    pub fn inverse(&self, v: f64) -> f64 {
        match self {
            Gauge::Identity => v,
            Gauge::Power(g) => v.powf(1.0 / g),
            Gauge::Tabulated(_) => self.bisect_inverse(v),
        }
    }

    fn bisect_inverse(&self, v: f64) -> f64 {
        if v <= self.eval(0.0) {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.eval(hi) < v {
            hi *= 2.0;
            if !hi.is_finite() {
                return f64::INFINITY;
            }
        }
        // Bisect until the bracket stops shrinking (far below 1e-12).
        let mut lo = 0.0;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// A default probe grid on `[0, max]`, including table knots in range.
    pub fn default_probes(&self, max: f64) -> Vec<f64> {
        let mut grid: Vec<f64> = (0..=32).map(|i| max * i as f64 / 32.0).collect();
        if let Gauge::Tabulated(t) = self {
            grid.extend(t.xs.iter().copied().filter(|&x| x <= max));
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        grid
    }
}

impl fmt::Display for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

/// Outcome of a successful [`gauge_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugeReport {
    pub probes: usize,
    pub max_probe: f64,
}

fn slack(a: f64, b: f64) -> f64 {
    1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks `Ψ(0) = 0`, positivity, strict increase, midpoint convexity,
/// `Ψ(s) ≤ (s/t)·Ψ(t)` and the inverse round trip on the probe grid.
/// Reports the first violation found.
pub fn gauge_check(g: &Gauge, probes: &[f64]) -> Result<GaugeReport> {
    let mut grid: Vec<f64> = probes
        .iter()
        .copied()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    if grid.len() < 3 {
        return Err(GaugeError::TooFewProbes(grid.len()));
    }
    let zero = g.eval(0.0);
    if zero.abs() > 1e-12 * g.eval(grid[grid.len() - 1]).abs().max(1.0) {
        return Err(GaugeError::NotVanishingAtZero(zero));
    }
    let vals: Vec<f64> = grid.iter().map(|&s| g.eval(s)).collect();
    for (&s, &v) in grid.iter().zip(&vals) {
        if s > 0.0 && !(v > 0.0) {
            return Err(GaugeError::NotPositive { s, value: v });
        }
    }
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let (s, t) = (grid[i], grid[j]);
            let (ps, pt) = (vals[i], vals[j]);
            if !(ps < pt) {
                return Err(GaugeError::NotIncreasing { s, t });
            }
            let mid = g.eval(0.5 * (s + t));
            let chord = 0.5 * (ps + pt);
            if mid > chord + slack(mid, chord) {
                return Err(GaugeError::NotConvex { s, t });
            }
            let ratio = s / t * pt;
            if ps > ratio + slack(ps, ratio) {
                return Err(GaugeError::NotConvex { s, t });
            }
        }
    }
    for &v in vals.iter().filter(|&&v| v > 0.0) {
        let round_trip = g.eval(g.inverse(v));
        if (round_trip - v).abs() > ROUND_TRIP_TOL * v {
            return Err(GaugeError::InverseMismatch {
                value: v,
                round_trip,
            });
        }
    }
    Ok(GaugeReport {
        probes: grid.len(),
        max_probe: grid[grid.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_gauges_pass() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        assert!(gauge_check(&Gauge::Identity, &grid).is_ok());
        assert!(gauge_check(&Gauge::power(2.0).unwrap(), &grid).is_ok());
        assert!(gauge_check(&Gauge::power(3.5).unwrap(), &grid).is_ok());
    }

    #[test]
    fn concave_table_rejected() {
        let g = Gauge::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.5]).unwrap();
        assert!(matches!(
            gauge_check(&g, &[0.0, 1.0, 2.0]),
            Err(GaugeError::NotConvex { .. })
        ));
        // The ratio inequality alone also fails at (1, 2).
        assert!(g.eval(1.0) > 0.5 * g.eval(2.0));
    }

    #[test]
    fn other_rejections() {
        let shifted = Gauge::tabulated(vec![0.0, 1.0], vec![0.5, 1.5]).unwrap();
        assert!(matches!(
            gauge_check(&shifted, &[0.0, 0.5, 1.0]),
            Err(GaugeError::NotVanishingAtZero(_))
        ));
        let flat = Gauge::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            gauge_check(&flat, &[0.0, 1.0, 2.0]),
            Err(GaugeError::NotPositive { .. })
        ));
        assert_eq!(
            gauge_check(&Gauge::Identity, &[0.0, 1.0]),
            Err(GaugeError::TooFewProbes(2))
        );
        assert_eq!(Gauge::power(0.5), Err(GaugeError::InvalidExponent(0.5)));
    }

    #[test]
    fn tokens_round_trip() {
        assert_eq!(Gauge::parse_token("id").unwrap(), Gauge::Identity);
        assert_eq!(Gauge::parse_token("pow:2").unwrap(), Gauge::Power(2.0));
        assert_eq!(Gauge::parse_token("pow:2").unwrap().token(), "pow:2");
        assert!(Gauge::parse_token("log").is_err());
    }

    #[test]
    fn table_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "0,0\n1,1\n2,4\n").unwrap();
        let g = Gauge::parse_token(&format!("table:{}", path.display())).unwrap();
        assert_eq!(g.eval(1.5), 2.5);
        assert_eq!(g.eval(3.0), 7.0);
        assert!(gauge_check(&g, &g.default_probes(3.0)).is_ok());
    }

    proptest! {
        #[test]
        fn inverse_round_trip(gamma in 1.0f64..4.0, v in 1e-6f64..1e3) {
            let g = Gauge::power(gamma).unwrap();
            let back = g.eval(g.inverse(v));
            prop_assert!((back - v).abs() <= ROUND_TRIP_TOL * v);
        }

        #[test]
        fn table_inverse_round_trip(v in 1e-3f64..50.0) {
            let g = Gauge::tabulated(vec![0.0, 1.0, 2.0, 4.0], vec![0.0, 0.5, 2.0, 8.0]).unwrap();
            let back = g.eval(g.inverse(v));
            prop_assert!((back - v).abs() <= ROUND_TRIP_TOL * v);
        }
    }
}
