use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use bventropy::claw::{self, CalibrationConfig, CellData, Flux};
use bventropy::codec::{self, Codeword, FiniteCodomain, Interval};
use bventropy::estimator::{self, ClassParams, FitTarget, FunctionEnsemble, Generator, ValueSpace};
use bventropy::gauge::Gauge;
use bventropy::metric::{self, FiniteMetricSpace, Metric, PointCloud, ScaleWindow, SearchMode};
use bventropy::variation::{self, RealLine, StepFunction};
use bventropy::witness::{self, FamilyOptions};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Metric(#[from] metric::MetricError),
    #[error(transparent)]
    Gauge(#[from] bventropy::gauge::GaugeError),
    #[error(transparent)]
    Variation(#[from] variation::VariationError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Witness(#[from] witness::WitnessError),
    #[error(transparent)]
    Estimator(#[from] estimator::EstimatorError),
    #[error(transparent)]
    Claw(#[from] claw::ClawError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => 2,
            CliError::Witness(witness::WitnessError::SeparationFailure { .. }) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "bventropy",
    version,
    about = "Metric entropy of BV-type function classes"
)]
struct Cli {
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Dimensions and covering/packing tables of a finite metric space.
    Metric(MetricArgs),
    /// TV and Ψ-variation of a step-function file.
    Variation(VariationArgs),
    /// Encode a step-function file with certified L1 error.
    Encode(EncodeArgs),
    /// Decode a codeword file back to a step function.
    Decode(DecodeArgs),
    /// Build a witness family and verify its separation.
    Witness(WitnessArgs),
    /// Entropy scan over a scale grid with an exponent fit.
    Scan(ScanArgs),
    /// Solve a scalar conservation law and evaluate the flux gauge and bounds.
    Claw(ClawArgs),
}

#[derive(Args, Debug, Serialize, Clone)]
struct SpaceArgs {
    /// Distance matrix CSV (n rows of n entries).
    #[arg(long)]
    space_file: Option<PathBuf>,
    /// Regular lattice side length (points per axis).
    #[arg(long)]
    lattice_side: Option<usize>,
    #[arg(long, default_value_t = 1)]
    lattice_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Number of uniform random points in a square.
    #[arg(long)]
    uniform: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
}

enum Space {
    Matrix(FiniteMetricSpace),
    Cloud(PointCloud),
}

impl Space {
    fn as_metric(&self) -> &(dyn Metric + Send + Sync) {
        match self {
            Space::Matrix(m) => m,
            Space::Cloud(c) => c,
        }
    }
}

impl SpaceArgs {
    fn load(&self, seed: u64) -> Result<Space> {
        match (&self.space_file, self.lattice_side, self.uniform) {
            (Some(path), None, None) => {
                ensure_nonempty(path)?;
                Ok(Space::Matrix(FiniteMetricSpace::read_csv(path)?))
            }
            (None, Some(side), None) => {
                if side == 0 {
                    return Err(CliError::Config("--lattice-side must be positive".into()));
                }
                Ok(Space::Cloud(PointCloud::lattice(
                    side,
                    self.lattice_dim,
                    self.spacing,
                )))
            }
            (None, None, Some(n)) => Ok(Space::Matrix(FiniteMetricSpace::uniform(
                n,
                self.extent,
                seed,
            )?)),
            _ => Err(CliError::Config(
                "give exactly one of --space-file, --lattice-side, --uniform".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Auto,
    Exact,
    Greedy,
}

impl ModeArg {
    fn resolve(self, space: &(impl Metric + ?Sized)) -> SearchMode {
        match self {
            ModeArg::Auto => metric::auto_mode(space),
            ModeArg::Exact => SearchMode::Exact,
            ModeArg::Greedy => SearchMode::Greedy,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct MetricArgs {
    #[command(flatten)]
    #[serde(flatten)]
    space: SpaceArgs,
    /// Lower end of the scale window.
    #[arg(long)]
    window_lo: f64,
    /// Upper end of the scale window.
    #[arg(long)]
    window_hi: f64,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    /// Also check the ball-count bounds at every center.
    #[arg(long)]
    ball_counts: bool,
}

#[derive(Args, Debug, Serialize)]
struct VariationArgs {
    /// Step-function file (`L,k` header, then `breakpoint,value`).
    #[arg(long)]
    input: PathBuf,
    /// Gauge token: `id`, `pow:γ` or `table:<path>`.
    #[arg(long, default_value = "id")]
    gauge: String,
}

#[derive(Args, Debug, Serialize, Clone)]
struct CodomainArgs {
    /// Values lie in [-M, M] (real-valued functions).
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    /// Distance matrix CSV: values are point indices of this space.
    #[arg(long)]
    net_file: Option<PathBuf>,
    /// Doubling dimension used in the bit budget for `--net-file`; measured
    /// when omitted.
    #[arg(long)]
    net_dimension: Option<u32>,
}

enum AnyCodomain {
    Interval(Interval),
    Finite(FiniteCodomain),
}

impl CodomainArgs {
    fn load(&self) -> Result<AnyCodomain> {
        match &self.net_file {
            None => Ok(AnyCodomain::Interval(Interval::new(self.half_width)?)),
            Some(path) => {
                ensure_nonempty(path)?;
                let space = FiniteMetricSpace::read_csv(path)?;
                let d = match self.net_dimension {
                    Some(d) => d,
                    None => {
                        let dists = space.distinct_distances();
                        let (lo, hi) = match (dists.first(), dists.last()) {
                            (Some(&lo), Some(&hi)) => (lo, hi),
                            _ => (1.0, 1.0),
                        };
                        let window = ScaleWindow::new(lo, hi.max(lo));
                        metric::dimensions(&space, window, metric::auto_mode(&space))?
                            .d
                            .max(1)
                    }
                };
                Ok(AnyCodomain::Finite(FiniteCodomain::new(Arc::new(space), d)))
            }
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Variation budget V; defaults to the measured variation.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, default_value = "id")]
    gauge: String,
    #[command(flatten)]
    #[serde(flatten)]
    codomain: CodomainArgs,
}

#[derive(Args, Debug, Serialize)]
struct DecodeArgs {
    /// Codeword file.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    codomain: CodomainArgs,
    /// Original step function, to report the L1 error.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct WitnessArgs {
    #[command(flatten)]
    #[serde(flatten)]
    space: SpaceArgs,
    #[arg(long, default_value_t = 0)]
    center: usize,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long)]
    budget: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value = "id")]
    gauge: String,
    /// Packing dimension; measured on the space when omitted.
    #[arg(long)]
    p: Option<u32>,
    #[arg(long)]
    window_lo: Option<f64>,
    #[arg(long)]
    window_hi: Option<f64>,
    #[arg(long)]
    alphabet_cap: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    member_cap: usize,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ScanSourceArg {
    /// Certified witness-family entropy on a point lattice.
    Witness,
    /// Greedy counts over a seeded ensemble of random BV functions.
    Random,
}

#[derive(Args, Debug, Serialize)]
struct ScanArgs {
    #[arg(long, value_enum, default_value = "witness")]
    source: ScanSourceArg,
    #[command(flatten)]
    #[serde(flatten)]
    space: SpaceArgs,
    #[arg(long)]
    center: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value = "id")]
    gauge: String,
    #[arg(long, default_value_t = 1)]
    d: u32,
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Largest scale of the grid.
    #[arg(long)]
    epsilon_hi: f64,
    /// Smallest scale of the grid.
    #[arg(long)]
    epsilon_lo: f64,
    #[arg(long, default_value_t = 5)]
    points: usize,
    /// Half width M of the value interval used in the bound columns.
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    /// Ensemble size for `--source random`.
    #[arg(long, default_value_t = 200)]
    members: usize,
    /// Pieces per random function.
    #[arg(long, default_value_t = 16)]
    pieces: usize,
    #[arg(long)]
    alphabet_cap: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct ClawArgs {
    /// `burgers`, `cubic`, `quartic` or `poly:c0,c1,...`.
    #[arg(long, default_value = "burgers")]
    flux: String,
    /// Bound M on |u|.
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    /// Half length L of the initial support.
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 0.01)]
    dx: f64,
    #[arg(long, default_value_t = 0.9)]
    cfl: f64,
    /// Initial data `x,u` CSV; random seeded data when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Pieces of random initial data.
    #[arg(long, default_value_t = 8)]
    pieces: usize,
    /// Constant in the variation bound of the solution.
    #[arg(long)]
    gamma_lm: Option<f64>,
    /// Measure the variation constant over a seeded ensemble of this size.
    #[arg(long)]
    calibrate: Option<usize>,
    /// Accuracy for the entropy bound and the solution codec.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of h values in the flux-gauge grid.
    #[arg(long, default_value_t = 40)]
    gauge_points: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    out: &'a Path,
    seed: u64,
    #[serde(flatten)]
    command: &'a Command,
    outputs: Vec<String>,
}

/// Collects output files; every write goes through a temp file and a rename.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

fn ensure_nonempty(path: &Path) -> Result<()> {
    let meta =
        fs::metadata(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if meta.len() == 0 {
        return Err(CliError::Config(format!("{} is empty", path.display())));
    }
    Ok(())
}

fn read_step(path: &Path) -> Result<StepFunction<f64>> {
    ensure_nonempty(path)?;
    Ok(StepFunction::read_file(path)?)
}

fn read_index_step(path: &Path) -> Result<StepFunction<usize>> {
    ensure_nonempty(path)?;
    Ok(StepFunction::read_file(path)?)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!(
            "--{name} must be positive, got {v}"
        )))
    }
}

fn run_metric(args: &MetricArgs, seed: u64, out: &mut Outputs) -> Result<()> {
    let space = args.space.load(seed)?;
    let space = space.as_metric();
    let window = ScaleWindow::new(args.window_lo, args.window_hi);
    let mode = args.mode.resolve(space);
    let report = metric::dimensions(space, window, mode)?;
    let mut dims = String::from("n,d,p,p_tilde,window_lo,window_hi,mode,probes\n");
    writeln!(
        dims,
        "{},{},{},{},{},{},{},{}",
        space.len(),
        report.d,
        report.p,
        report.p_tilde,
        window.lo,
        window.hi,
        report.mode,
        report.probes
    )
    .unwrap();
    out.write("dimensions.csv", dims.as_bytes())?;

    let all: Vec<usize> = (0..space.len()).collect();
    let mut table = format!("kind,{}\n", metric::COVER_PACK_CSV_HEADER);
    for alpha in window.probes(space) {
        let cover = metric::covering_number(space, &all, alpha, mode)?;
        let pack = metric::packing_number(space, &all, alpha, mode)?;
        if !metric::is_cover(space, &all, &cover.witness, alpha) {
            return Err(CliError::Invariant(format!(
                "cover witness at alpha={alpha} does not cover"
            )));
        }
        if !metric::is_packing(space, &pack.witness, alpha) {
            return Err(CliError::Invariant(format!(
                "packing witness at alpha={alpha} is not a packing"
            )));
        }
        writeln!(table, "cover,{}", cover.csv_row(alpha)).unwrap();
        writeln!(table, "pack,{}", pack.csv_row(alpha)).unwrap();
    }
    out.write("cover_pack.csv", table.as_bytes())?;

    if args.ball_counts {
        let mut csv = String::from(
            "center,radius,alpha,cover_upper,cover_lower,pack_lower,pack_upper,bound_lo,bound_hi,holds\n",
        );
        let mut violations = 0;
        for (alpha, k) in metric::ball_count_probes(space, &report) {
            for x in 0..space.len() {
                let c = metric::check_ball_counts(space, &report, x, alpha, k)?;
                if !c.holds() {
                    violations += 1;
                }
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{}",
                    c.center,
                    c.radius,
                    c.alpha,
                    c.cover_upper,
                    c.cover_lower,
                    c.pack_lower,
                    c.pack_upper,
                    c.covering_bounds.0,
                    c.covering_bounds.1,
                    c.holds()
                )
                .unwrap();
            }
        }
        out.write("ball_counts.csv", csv.as_bytes())?;
        if violations > 0 {
            return Err(CliError::Invariant(format!(
                "{violations} ball-count checks failed"
            )));
        }
    }
    Ok(())
}

fn run_variation(args: &VariationArgs, out: &mut Outputs) -> Result<()> {
    let f = read_step(&args.input)?;
    let gauge = Gauge::parse_token(&args.gauge)?;
    let tv = variation::tv(&f, &RealLine);
    let w = variation::tv_psi_witness(&f, &RealLine, &gauge);
    let witness: Vec<String> = w.witness.iter().map(|i| i.to_string()).collect();
    let csv = format!(
        "pieces,tv,gauge,tv_psi,witness\n{},{},{},{},{}\n",
        f.pieces(),
        tv,
        gauge.token(),
        w.value,
        witness.join(";")
    );
    out.write("variation.csv", csv.as_bytes())?;
    Ok(())
}

const ENCODE_HEADER: &str = "epsilon,budget,gauge,l1_error,bits,budget_bits,cells,coarsened";

fn encode_report<V>(
    enc: &codec::Encoded<V>,
    args: &EncodeArgs,
    budget: f64,
    gauge: &Gauge,
) -> String {
    format!(
        "{ENCODE_HEADER}\n{},{},{},{},{},{},{},{}\n",
        args.epsilon,
        budget,
        gauge.token(),
        enc.l1_error,
        enc.bit_length(),
        enc.budget_bits,
        enc.indices.len(),
        enc.coarsening.is_some()
    )
}

fn run_encode(args: &EncodeArgs, out: &mut Outputs) -> Result<()> {
    let gauge = Gauge::parse_token(&args.gauge)?;
    let epsilon = positive("epsilon", args.epsilon)?;
    match args.codomain.load()? {
        AnyCodomain::Interval(iv) => {
            let f = read_step(&args.input)?;
            let budget = args
                .budget
                .unwrap_or_else(|| variation::tv_psi(&f, &RealLine, &gauge));
            let enc = match gauge {
                Gauge::Identity => codec::encode_bv(&f, &iv, budget, epsilon)?,
                _ => codec::encode_bvpsi(&f, &iv, &gauge, budget, epsilon)?,
            };
            finish_encode(
                &enc,
                args,
                budget,
                &gauge,
                out,
                |g| variation::l1_distance(&f, g, &RealLine),
                &iv,
            )
        }
        AnyCodomain::Finite(fc) => {
            let f = read_index_step(&args.input)?;
            let budget = args
                .budget
                .unwrap_or_else(|| variation::tv_psi(&f, fc.space(), &gauge));
            let enc = match gauge {
                Gauge::Identity => codec::encode_bv(&f, &fc, budget, epsilon)?,
                _ => codec::encode_bvpsi(&f, &fc, &gauge, budget, epsilon)?,
            };
            finish_encode(
                &enc,
                args,
                budget,
                &gauge,
                out,
                |g| variation::l1_distance(&f, g, fc.space()),
                &fc,
            )
        }
    }
}

fn finish_encode<C: codec::Codomain>(
    enc: &codec::Encoded<C::Value>,
    args: &EncodeArgs,
    budget: f64,
    gauge: &Gauge,
    out: &mut Outputs,
    l1: impl Fn(&StepFunction<C::Value>) -> variation::Result<f64>,
    codomain: &C,
) -> Result<()> {
    let bytes = enc.codeword.to_bytes();
    out.write("codeword.bvc", &bytes)?;
    out.write(
        "report.csv",
        encode_report(enc, args, budget, gauge).as_bytes(),
    )?;
    let (decoded, used) = codec::decode_with_length(&Codeword::from_bytes(&bytes)?, codomain)?;
    let err = l1(&decoded)?;
    if err > args.epsilon {
        return Err(CliError::Invariant(format!(
            "L1 error {err} exceeds epsilon {}",
            args.epsilon
        )));
    }
    if used != enc.bit_length() || enc.bit_length() as f64 > enc.budget_bits {
        return Err(CliError::Invariant(format!(
            "codeword uses {} bits against a budget of {}",
            enc.bit_length(),
            enc.budget_bits
        )));
    }
    Ok(())
}

fn run_decode(args: &DecodeArgs, out: &mut Outputs) -> Result<()> {
    ensure_nonempty(&args.input)?;
    let bytes = fs::read(&args.input).map_err(|source| CliError::Io {
        path: args.input.clone(),
        source,
    })?;
    let cw = Codeword::from_bytes(&bytes)?;
    let (text, used, err) = match args.codomain.load()? {
        AnyCodomain::Interval(iv) => {
            let (g, used) = codec::decode_with_length(&cw, &iv)?;
            let err = match &args.reference {
                Some(p) => Some(variation::l1_distance(&read_step(p)?, &g, &RealLine)?),
                None => None,
            };
            (g.to_text(), used, err)
        }
        AnyCodomain::Finite(fc) => {
            let (g, used) = codec::decode_with_length(&cw, &fc)?;
            let err = match &args.reference {
                Some(p) => Some(variation::l1_distance(
                    &read_index_step(p)?,
                    &g,
                    fc.space(),
                )?),
                None => None,
            };
            (g.to_text(), used, err)
        }
    };
    out.write("decoded.txt", text.as_bytes())?;
    let err = err.map_or(String::new(), |e| e.to_string());
    out.write(
        "decode.csv",
        format!("bits,gauge,l1_error\n{used},{},{err}\n", cw.gauge).as_bytes(),
    )?;
    Ok(())
}

fn run_witness(args: &WitnessArgs, seed: u64, out: &mut Outputs) -> Result<()> {
    let space = args.space.load(seed)?;
    let space = space.as_metric();
    let gauge = Gauge::parse_token(&args.gauge)?;
    let p = match (args.p, args.window_lo, args.window_hi) {
        (Some(p), _, _) => p,
        (None, Some(lo), Some(hi)) => {
            metric::dimensions(space, ScaleWindow::new(lo, hi), metric::auto_mode(space))?.p
        }
        _ => {
            return Err(CliError::Config(
                "give --p or both --window-lo and --window-hi".into(),
            ))
        }
    };
    let options = FamilyOptions {
        alphabet_cap: args.alphabet_cap,
        member_cap: args.member_cap,
        seed,
    };
    let family = witness::build_family(
        args.length,
        args.budget,
        positive("epsilon", args.epsilon)?,
        &gauge,
        space,
        args.center,
        metric::p_tilde(p),
        &options,
    )?;
    let report = witness::verify_packing(&family, space, &gauge)?;
    let csv = format!("{}\n{}\n", witness::SEPARATION_CSV_HEADER, report.csv_row());
    out.write("separation.csv", csv.as_bytes())?;
    let mut members = String::from("member,digits\n");
    for m in 0..family.len() {
        let digits: Vec<String> = family.delta(m).iter().map(|d| d.to_string()).collect();
        writeln!(members, "{m},{}", digits.join(";")).unwrap();
    }
    out.write("family.csv", members.as_bytes())?;
    if !report.cardinality_meets_floor {
        return Err(CliError::Invariant(format!(
            "family of {} members is below the floor 2^{}",
            report.family_size, report.floor_log2
        )));
    }
    Ok(())
}

fn random_bv(
    rng: &mut ChaCha8Rng,
    length: f64,
    pieces: usize,
    half_width: f64,
    budget: f64,
) -> StepFunction<f64> {
    let mut breaks: Vec<f64> = (0..pieces.saturating_sub(1))
        .map(|_| rng.gen_range(0.0..length))
        .collect();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.retain(|&b| b < length);
    let n = breaks.len();
    breaks.push(length);
    let jumps: Vec<f64> = (1..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let total: f64 = jumps.iter().map(|j| j.abs()).sum();
    let scale = if total > 0.0 {
        budget.min(half_width) / total
    } else {
        0.0
    };
    let mut v = 0.0f64;
    let mut values = vec![v];
    for j in jumps {
        v = (v + j * scale).clamp(-half_width, half_width);
        values.push(v);
    }
    StepFunction::new(length, breaks, values).expect("sorted breakpoints")
}

fn run_scan(args: &ScanArgs, seed: u64, out: &mut Outputs) -> Result<()> {
    let gauge = Gauge::parse_token(&args.gauge)?;
    let grid = estimator::log_grid(
        positive("epsilon-hi", args.epsilon_hi)?,
        positive("epsilon-lo", args.epsilon_lo)?,
        args.points,
    );
    let class = ClassParams {
        length: args.length,
        budget: args.budget,
        gauge: gauge.clone(),
        d: args.d,
        p: args.p,
        values: ValueSpace::Interval(args.half_width),
    };
    let (mut scan, target) = match args.source {
        ScanSourceArg::Witness => {
            let space = args.space.load(seed)?;
            let space = space.as_metric();
            let center = args.center.unwrap_or(space.len() / 2);
            (
                estimator::witness_scan(space, center, &grid, &class, args.alphabet_cap)?,
                FitTarget::Entropy,
            )
        }
        ScanSourceArg::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let members = (0..args.members)
                .map(|_| {
                    random_bv(
                        &mut rng,
                        args.length,
                        args.pieces,
                        args.half_width,
                        args.budget,
                    )
                })
                .collect();
            let ens = FunctionEnsemble::new(members, Generator::RandomSampler, seed)?;
            (
                estimator::entropy_scan(&ens, &RealLine, &grid, &class)?,
                FitTarget::Count,
            )
        }
    };
    scan.fit = estimator::fit_exponent(&scan, target).ok();
    out.write("scan.csv", scan.to_csv().as_bytes())?;
    Ok(())
}

fn run_claw(args: &ClawArgs, seed: u64, out: &mut Outputs) -> Result<()> {
    let flux = Flux::parse(&args.flux, positive("m", args.m)?)?;
    let (l, t) = (positive("l", args.l)?, positive("T", args.t)?);
    let mut u0 = CellData::padded(l, t, &flux, positive("dx", args.dx)?)?;
    match &args.input {
        Some(path) => {
            ensure_nonempty(path)?;
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            u0.fill_csv(&text)?;
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (b, v) = claw::random_initial_data(l, flux.m, args.pieces, &mut rng);
            u0.fill_step(&b, &v)?;
        }
    }
    if u0.sup() > flux.m * (1.0 + 1e-12) {
        return Err(CliError::Config(format!(
            "initial data exceeds M = {}",
            flux.m
        )));
    }
    let sol = claw::evolve(&u0, &flux, t, args.cfl)?;
    out.write("solution.csv", sol.cells.to_csv().as_bytes())?;

    let supported = claw::support_check(&sol, l, t, &flux);
    let checks = [
        ("max_principle", sol.max_principle_holds()),
        ("mass_conserved", sol.mass_conserved()),
        ("tv_diminishing", sol.tv_diminishing()),
        ("support", supported),
    ];
    let mut inv = String::from("check,holds\n");
    for (name, ok) in checks {
        writeln!(inv, "{name},{ok}").unwrap();
    }
    out.write("invariants.csv", inv.as_bytes())?;

    let fg = claw::flux_gauge(&flux, &claw::default_h_grid(flux.m, args.gauge_points))?;
    out.write("gauge.csv", fg.to_csv().as_bytes())?;
    let psi = fg.gauge();

    let calibration = match args.calibrate {
        Some(samples) => {
            let cfg = CalibrationConfig {
                l,
                t,
                dx: args.dx,
                cfl: args.cfl,
                samples,
                pieces: args.pieces,
                seed,
            };
            let cal = claw::calibrate(&flux, &psi, &cfg)?;
            let mut csv = String::from("sample,tv_psi\n");
            for (i, v) in cal.tv_values.iter().enumerate() {
                writeln!(csv, "{i},{v}").unwrap();
            }
            writeln!(
                csv,
                "# max_tv={} gamma_lm={} stride={} seed={}",
                cal.max_tv, cal.gamma_lm, cal.stride, cal.seed
            )
            .unwrap();
            out.write("calibration.csv", csv.as_bytes())?;
            Some(cal.gamma_lm)
        }
        None => None,
    };

    let gamma = args.gamma_lm.or(calibration);
    let degeneracy = claw::degeneracy(&flux).ok();
    let mut bounds = String::from("epsilon,gamma_lm,gamma_source,epsilon_cap,entropy_bound_bits,p_f,degeneracy_bound_bits,codec_bits,codec_error\n");
    if let (Some(eps), Some(gamma)) = (args.epsilon, gamma) {
        let eps = positive("epsilon", eps)?;
        let source = if args.gamma_lm.is_some() {
            "given"
        } else {
            "calibrated"
        };
        let cap = claw::solution_epsilon_cap(l, t, flux.speed, &psi, gamma);
        let bound = claw::solution_entropy_bound(eps, l, flux.m, t, flux.speed, &psi, gamma);
        let p_f = degeneracy.as_ref().and_then(|d| d.p_f);
        let deg =
            p_f.map(|p| claw::degeneracy_entropy_bound(eps, l, flux.m, t, flux.speed, p, gamma));
        let ell = claw::ell(l, t, &flux);
        let snapped = sol.cells.window(-ell, ell)?;
        let budget = variation::tv_psi(&snapped, &RealLine, &psi);
        let iv = Interval::new(flux.m)?;
        let enc = codec::encode_bvpsi(&snapped, &iv, &psi, budget, eps)?;
        let decoded = codec::decode(&enc.codeword, &iv)?;
        let err = variation::l1_distance(&snapped, &decoded, &RealLine)?;
        writeln!(
            bounds,
            "{eps},{gamma},{source},{cap},{bound},{},{},{},{err}",
            p_f.map_or(String::new(), |p| p.to_string()),
            deg.map_or(String::new(), |d| d.to_string()),
            enc.bit_length()
        )
        .unwrap();
        out.write("bounds.csv", bounds.as_bytes())?;
        if err > eps {
            return Err(CliError::Invariant(format!(
                "solution codec error {err} exceeds epsilon {eps}"
            )));
        }
    } else if args.epsilon.is_some() {
        return Err(CliError::Config(
            "bounds need --gamma-lm or --calibrate".into(),
        ));
    }

    if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(CliError::Invariant(format!("solver check {name} failed")));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut out = Outputs::new(&cli.out)?;
    let result = match &cli.command {
        Command::Metric(a) => run_metric(a, cli.seed, &mut out),
        Command::Variation(a) => run_variation(a, &mut out),
        Command::Encode(a) => run_encode(a, &mut out),
        Command::Decode(a) => run_decode(a, &mut out),
        Command::Witness(a) => run_witness(a, cli.seed, &mut out),
        Command::Scan(a) => run_scan(a, cli.seed, &mut out),
        Command::Claw(a) => run_claw(a, cli.seed, &mut out),
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        out: &cli.out,
        seed: cli.seed,
        command: &cli.command,
        outputs: out.written.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write("manifest.json", format!("{json}\n").as_bytes())?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
