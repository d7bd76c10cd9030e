//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Oracles used here are written independently of the library.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bventropy::claw::{
    self, calibrate, cell_tv_psi, evolve, flux_gauge, random_initial_data, solution_entropy_bound,
    support_check, CalibrationConfig, CellData, Flux,
};
use bventropy::codec::{decode_with_length, encode_bv, encode_bvpsi, Codeword, Interval};
use bventropy::estimator::{
    fit_exponent, log_grid, witness_scan, ClassParams, FitTarget, ValueSpace,
};
use bventropy::gauge::{gauge_check, Gauge};
use bventropy::metric::{
    ball_count_probes, check_ball_counts, covering_number, dimensions, packing_number,
    random_space, FiniteMetricSpace, Metric, PointCloud, ScaleWindow, SearchMode,
};
use bventropy::variation::{l1_distance, tv_psi, RealLine, StepFunction};
use bventropy::witness::{build_family, verify_packing, FamilyMode, FamilyOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// 1. Variation oracle

fn exhaustive_tv_psi<M: Metric>(values: &[usize], space: &M, gauge: &Gauge) -> f64 {
    let k = values.len();
    let mut best = 0.0f64;
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let mut sum = 0.0;
        for w in idx.windows(2) {
            sum += gauge.eval(space.dist(values[w[0]], values[w[1]]));
        }
        best = best.max(sum);
    }
    best
}

fn criterion_variation() -> Outcome {
    let start = Instant::now();
    let table =
        Gauge::tabulated(vec![0.0, 0.5, 1.0, 2.0, 4.0], vec![0.0, 0.1, 0.4, 1.5, 5.0]).unwrap();
    let gauges = [
        Gauge::Identity,
        Gauge::power(2.0).unwrap(),
        Gauge::power(3.0).unwrap(),
        table,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut exact_cases, mut mismatches, mut worst_rel) = (0usize, 0usize, 0.0f64);
    for case in 0..1000u64 {
        let n = rng.gen_range(2..=8);
        let integer = case % 2 == 0;
        let space = if integer {
            let mut pts: Vec<f64> = (0..20).map(f64::from).collect();
            for i in (1..pts.len()).rev() {
                pts.swap(i, rng.gen_range(0..=i));
            }
            FiniteMetricSpace::line(&pts[..n]).unwrap()
        } else {
            random_space(n, case)
        };
        let gauge = &gauges[case as usize % 4];
        let k = rng.gen_range(1..=12);
        let values: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
        let f = StepFunction::uniform(1.0, values.clone()).unwrap();
        let got = tv_psi(&f, &space, gauge);
        let want = exhaustive_tv_psi(&values, &space, gauge);
        let rational = integer && !matches!(gauge, Gauge::Tabulated(_));
        if rational {
            exact_cases += 1;
            if got != want {
                mismatches += 1;
            }
        } else {
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            worst_rel = worst_rel.max(rel);
            if rel > 1e-12 {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!(
            "1000 functions, {exact_cases} bit-exact, worst float rel err {worst_rel:.1e}, {mismatches} mismatches, {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Sandwich

fn criterion_sandwich() -> Outcome {
    let mut checks = 0usize;
    let mut violations = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..100u64 {
        let n = 2 + (seed as usize % 9);
        let space = random_space(n, 1000 + seed);
        let all: Vec<usize> = (0..n).collect();
        let mut sub: Vec<usize> = all.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
        if sub.is_empty() {
            sub.push(0);
        }
        for k in [&all, &sub] {
            for alpha in space.distinct_distances() {
                let m2 = packing_number(&space, k, 2.0 * alpha, SearchMode::Exact)
                    .unwrap()
                    .count;
                let nc = covering_number(&space, k, alpha, SearchMode::Exact)
                    .unwrap()
                    .count;
                let m1 = packing_number(&space, k, alpha, SearchMode::Exact)
                    .unwrap()
                    .count;
                checks += 1;
                if !(m2 <= nc && nc <= m1) {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("100 spaces (n <= 10), {checks} (K, alpha) checks, {violations} violations"),
    )
}

// ---------------------------------------------------------------------------
// 3. Ball counts

fn ball_count_sweep<M: Metric>(
    name: &str,
    space: &M,
    window: ScaleWindow,
) -> (String, usize, usize) {
    let report = dimensions(space, window, SearchMode::Greedy).unwrap();
    let mut checks = 0;
    let mut violations = 0;
    for (alpha, k) in ball_count_probes(space, &report) {
        for x in 0..space.len() {
            let c = check_ball_counts(space, &report, x, alpha, k).unwrap();
            checks += 1;
            if !c.holds() {
                violations += 1;
            }
        }
    }
    (
        format!("{name}(d={}, p={})", report.d, report.p),
        checks,
        violations,
    )
}

fn criterion_ball_counts() -> Outcome {
    let mut parts = Vec::new();
    let (mut checks, mut violations) = (0, 0);
    let runs: Vec<(String, usize, usize)> = vec![
        ball_count_sweep(
            "line-lattice",
            &PointCloud::lattice(48, 1, 1.0),
            ScaleWindow::new(1.0, 12.0),
        ),
        ball_count_sweep(
            "grid-lattice",
            &PointCloud::lattice(9, 2, 1.0),
            ScaleWindow::new(1.0, 4.0),
        ),
        ball_count_sweep(
            "uniform-a",
            &FiniteMetricSpace::uniform(40, 10.0, 3).unwrap(),
            ScaleWindow::new(1.0, 3.0),
        ),
        ball_count_sweep(
            "uniform-b",
            &FiniteMetricSpace::uniform(60, 20.0, 4).unwrap(),
            ScaleWindow::new(1.5, 5.0),
        ),
    ];
    for (name, c, v) in runs {
        parts.push(name);
        checks += c;
        violations += v;
    }
    outcome(
        violations == 0,
        format!(
            "{}: {checks} (x, R, alpha) checks, {violations} violations",
            parts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Codec soundness

fn random_bv(rng: &mut impl Rng) -> StepFunction<f64> {
    let k = rng.gen_range(1..=30);
    let jumps: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let total: f64 = jumps.iter().map(|j: &f64| j.abs()).sum();
    let scale = if total > 0.0 {
        rng.gen_range(0.0..0.6) / total
    } else {
        0.0
    };
    let mut v = rng.gen_range(-0.4..0.4);
    let mut values = vec![v];
    for j in jumps {
        v += j * scale;
        values.push(v);
    }
    let mut bps: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bps.dedup();
    values.truncate(bps.len() + 1);
    let mut breakpoints = vec![0.0];
    breakpoints.extend(bps.into_iter().filter(|&b| b > 0.0));
    values.truncate(breakpoints.len());
    breakpoints.push(1.0);
    StepFunction::new(1.0, breakpoints, values).unwrap()
}

fn random_bvpsi(rng: &mut impl Rng, gauge: &Gauge) -> StepFunction<f64> {
    let f = random_bv(rng);
    let v = tv_psi(&f, &RealLine, gauge);
    // Ψ = s² is 2-homogeneous: scaling jumps by c scales the variation by c².
    let target = rng.gen_range(0.0..1.0);
    let c = if v > 0.0 {
        (target / v).sqrt().min(4.0)
    } else {
        1.0
    };
    let base = f.values()[0];
    let g = f.map(|&x| base + (x - base) * c);
    let w = tv_psi(&g, &RealLine, gauge);
    if w <= 1.0 && g.values().iter().all(|v| v.abs() <= 1.0) {
        g
    } else {
        f
    }
}

fn criterion_codec() -> Outcome {
    let start = Instant::now();
    let interval = Interval::new(1.0).unwrap();
    let square = Gauge::power(2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bv: Vec<StepFunction<f64>> = (0..200).map(|_| random_bv(&mut rng)).collect();
    let bvpsi: Vec<StepFunction<f64>> = (0..200).map(|_| random_bvpsi(&mut rng, &square)).collect();
    let (mut runs, mut err_fail, mut bit_fail, mut errors) = (0, 0, 0, 0);
    for eps in [0.05, 0.1, 0.2] {
        for (family, funcs) in [("bv", &bv), ("bvpsi", &bvpsi)] {
            for f in funcs.iter() {
                runs += 1;
                let enc = if family == "bv" {
                    encode_bv(f, &interval, 1.0, eps)
                } else {
                    encode_bvpsi(f, &interval, &square, 1.0, eps)
                };
                let Ok(enc) = enc else {
                    errors += 1;
                    continue;
                };
                let cw = Codeword::from_bytes(&enc.codeword.to_bytes()).unwrap();
                let (g, used) = decode_with_length(&cw, &interval).unwrap();
                if l1_distance(f, &g, &RealLine).unwrap() > eps {
                    err_fail += 1;
                }
                if used != enc.bit_length() || enc.bit_length() as f64 > enc.budget_bits {
                    bit_fail += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        err_fail + bit_fail + errors == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{runs} round trips: {err_fail} over epsilon, {bit_fail} over bit bound, {errors} encoder errors, {:.2}s (limit 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Witness separation

/// Packing dimension of a lattice of the given dimension, measured on a
/// small copy with the same geometry.
fn lattice_p(dim: usize) -> u32 {
    let side = if dim == 1 { 33 } else { 7 };
    let proxy = PointCloud::lattice(side, dim, 1.0);
    dimensions(&proxy, ScaleWindow::new(1.0, 2.0), SearchMode::Greedy)
        .unwrap()
        .p
}

fn criterion_witness() -> Outcome {
    let line = PointCloud::lattice(2049, 1, 1.0 / 2048.0);
    let grid = PointCloud::lattice(65, 2, 1.0 / 64.0);
    let p1 = bventropy::metric::p_tilde(lattice_p(1));
    let p2 = bventropy::metric::p_tilde(lattice_p(2));
    let square = Gauge::power(2.0).unwrap();
    struct Case<'a> {
        name: &'a str,
        space: &'a PointCloud,
        center: usize,
        p_tilde: f64,
        gauge: Gauge,
        budget: f64,
        eps: f64,
    }
    let cases = [
        Case {
            name: "line/id",
            space: &line,
            center: 1024,
            p_tilde: p1,
            gauge: Gauge::Identity,
            budget: 0.4,
            eps: 1e-4,
        },
        Case {
            name: "line/s^2",
            space: &line,
            center: 1024,
            p_tilde: p1,
            gauge: square.clone(),
            budget: 0.05,
            eps: 1e-4,
        },
        Case {
            name: "line/p~=1",
            space: &line,
            center: 1024,
            p_tilde: 1.0,
            gauge: Gauge::Identity,
            budget: 1.0,
            eps: 1.0 / 256.0,
        },
        Case {
            name: "grid/id",
            space: &grid,
            center: 32 * 65 + 32,
            p_tilde: p2,
            gauge: Gauge::Identity,
            budget: 0.5,
            eps: 1e-3,
        },
    ];
    let mut lines = Vec::new();
    let mut pass = true;
    for c in &cases {
        let fam = build_family(
            1.0,
            c.budget,
            c.eps,
            &c.gauge,
            c.space,
            c.center,
            c.p_tilde,
            &FamilyOptions::default(),
        )
        .unwrap();
        let enumerated = fam.mode == FamilyMode::Enumerated;
        match verify_packing(&fam, c.space, &c.gauge) {
            Ok(r) => {
                let ok = enumerated && r.cardinality_meets_floor;
                pass &= ok;
                lines.push(format!(
                    "{}: {} members, {} pairs, floor 2^{:.2}, extracted {}{}",
                    c.name,
                    r.family_size,
                    r.pairs_checked,
                    r.floor_log2,
                    r.extracted_size,
                    if ok { "" } else { " FAILED" }
                ));
            }
            Err(e) => {
                pass = false;
                lines.push(format!("{}: {e}", c.name));
            }
        }
    }
    outcome(pass, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 6. Exponent recovery

fn criterion_exponent() -> Outcome {
    let start = Instant::now();
    let spacing = 0.02;
    let n = 8001;
    let space = PointCloud::lattice(n, 1, spacing);
    let half = (n - 1) as f64 * spacing / 2.0;
    let p = lattice_p(1);
    let grid = log_grid(0.1, 0.01, 5);
    let mut parts = Vec::new();
    let mut pass = true;
    for (gamma, budget) in [(1.0, 3000.0), (2.0, 470_000.0)] {
        let class = ClassParams {
            length: 1.0,
            budget,
            gauge: Gauge::power(gamma).unwrap(),
            d: 1,
            p,
            values: ValueSpace::Interval(half),
        };
        let scan = witness_scan(&space, n / 2, &grid, &class, None).unwrap();
        let fit = fit_exponent(&scan, FitTarget::Entropy).unwrap();
        let ok = (fit.exponent - gamma).abs() <= 0.25 * gamma;
        pass &= ok;
        parts.push(format!(
            "gamma={gamma}: fitted {:.3} (residual {:.3})",
            fit.exponent, fit.residual
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    parts.push(format!("{:.1}s (limit 300s)", elapsed.as_secs_f64()));
    outcome(pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// 7. Conservation laws

/// Exact Burgers solution for `u0 = χ_[a, a+1)` at `t < 2`: a fan at the
/// left edge and a shock at the right one.
fn block_exact(a: f64, t: f64, x: f64) -> f64 {
    let shock = a + 1.0 + t / 2.0;
    if x < a || x >= shock {
        0.0
    } else if x < a + t {
        (x - a) / t
    } else {
        1.0
    }
}

fn l1_error_vs(sol: &claw::GridSolution, exact: impl Fn(f64) -> f64) -> f64 {
    let c = &sol.cells;
    let sub = 64;
    (0..c.len())
        .map(|i| {
            let a = c.x_left + i as f64 * c.dx;
            (0..sub)
                .map(|s| {
                    let x = a + (s as f64 + 0.5) * c.dx / sub as f64;
                    (c.values[i] - exact(x)).abs()
                })
                .sum::<f64>()
                * c.dx
                / sub as f64
        })
        .sum()
}

fn criterion_claw() -> Outcome {
    let burgers = Flux::burgers(1.0).unwrap();
    let t = 1.0;
    let mut parts = Vec::new();
    let mut pass = true;
    let mut invariant_fail = 0;
    let mut runs = 0;
    let mut check = |sol: &claw::GridSolution, l: f64, t: f64, flux: &Flux| {
        runs += 1;
        if !(sol.max_principle_holds()
            && sol.mass_conserved()
            && sol.tv_diminishing()
            && support_check(sol, l, t, flux))
        {
            invariant_fail += 1;
        }
    };
    // Shock at x = 0 (data on [-1, 0)), rarefaction at x = 0 (data on [0, 1)).
    for (name, a) in [("shock", -1.0), ("rarefaction", 0.0)] {
        let mut errs = Vec::new();
        for dx in [0.02, 0.01, 0.005, 0.0025] {
            let mut u0 = CellData::padded(1.0, t, &burgers, dx).unwrap();
            u0.fill_step(&[a, a + 1.0], &[1.0]).unwrap();
            let sol = evolve(&u0, &burgers, t, 0.9).unwrap();
            check(&sol, 1.0, t, &burgers);
            errs.push(l1_error_vs(&sol, |x| block_exact(a, t, x)));
        }
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
        let ok = ratios.iter().all(|&r| r >= 1.7);
        pass &= ok;
        parts.push(format!(
            "{name} ratios [{}]",
            ratios
                .iter()
                .map(|r| format!("{r:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for flux in [
        Flux::burgers(1.0).unwrap(),
        Flux::cubic(1.0).unwrap(),
        Flux::quartic(1.0).unwrap(),
    ] {
        for _ in 0..10 {
            let (b, v) = random_initial_data(1.0, 1.0, 8, &mut rng);
            let mut u0 = CellData::padded(1.0, t, &flux, 0.01).unwrap();
            u0.fill_step(&b, &v).unwrap();
            let sol = evolve(&u0, &flux, t, 0.9).unwrap();
            check(&sol, 1.0, t, &flux);
        }
    }
    pass &= invariant_fail == 0;
    parts.push(format!("{runs} runs, {invariant_fail} invariant failures"));
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 8. Flux-gauge pipeline

/// Dense-grid minimax: affine error of `f` on `[a, a+h]` minimized over a
/// slope grid, then over a grid of window positions.
fn dense_gap(f: impl Fn(f64) -> f64, m: f64, h: f64) -> f64 {
    let pts = 201;
    let positions = 41;
    let slopes = 801;
    let mut best = f64::INFINITY;
    for ia in 0..positions {
        let a = if h >= 2.0 * m {
            -m
        } else {
            -m + (2.0 * m - h) * ia as f64 / (positions - 1) as f64
        };
        let xs: Vec<f64> = (0..pts)
            .map(|k| a + h * k as f64 / (pts - 1) as f64)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let chord = (ys[pts - 1] - ys[0]) / h;
        let mut local = f64::INFINITY;
        for is in 0..slopes {
            let s = chord + (is as f64 / (slopes - 1) as f64 - 0.5) * 2.0 * m;
            let r: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - s * x).collect();
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            local = local.min(0.5 * (hi - lo));
        }
        best = best.min(local);
    }
    best
}

fn criterion_flux_gauge() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    let burgers = Flux::burgers(1.0).unwrap();
    let h_grid: Vec<f64> = (1..=20).map(|k| 0.05 * k as f64).collect();
    let fg = flux_gauge(&burgers, &h_grid).unwrap();
    let (mut worst_gap, mut worst_oracle, mut worst_psi) = (0.0f64, 0.0f64, 0.0f64);
    for (k, &h) in fg.h.iter().enumerate() {
        let closed = h * h / 16.0;
        let oracle = dense_gap(|u| u * u / 2.0, 1.0, h);
        worst_gap = worst_gap.max((fg.gap[k] - closed).abs() / closed);
        worst_oracle = worst_oracle.max((fg.gap[k] - oracle).abs() / oracle);
        let x = fg.psi_x[k + 1];
        worst_psi = worst_psi.max((fg.psi[k + 1] - x.powi(3) / 64.0).abs() / (x.powi(3) / 64.0));
    }
    let ok = worst_gap <= 0.02 && worst_oracle <= 0.02 && worst_psi <= 0.05;
    pass &= ok;
    parts.push(format!(
        "burgers gap err {:.1e} (vs dense oracle {:.1e}), psi err {:.1e}",
        worst_gap, worst_oracle, worst_psi
    ));

    let cubic = Flux::cubic(1.0).unwrap();
    let cg = flux_gauge(&cubic, &claw::default_h_grid(1.0, 40)).unwrap();
    let psi = cg.gauge();
    let checked = gauge_check(&psi, &cg.psi_x).is_ok();
    pass &= checked;
    let (l, t, dx) = (1.0, 1.0, 0.01);
    let cfg = CalibrationConfig {
        l,
        t,
        dx,
        cfl: 0.9,
        samples: 6,
        pieces: 6,
        seed: 11,
    };
    let cal = calibrate(&cubic, &psi, &cfg).unwrap();
    // Re-create the first calibration sample.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (b, v) = random_initial_data(l, cubic.m, cfg.pieces, &mut rng);
    let mut u0 = CellData::padded(l, t, &cubic, dx).unwrap();
    u0.fill_step(&b, &v).unwrap();
    let sol = evolve(&u0, &cubic, t, 0.9).unwrap();
    let ell = claw::ell(l, t, &cubic);
    let snapped = sol.cells.window(-ell, ell).unwrap();
    let budget = tv_psi(&snapped, &RealLine, &psi);
    let interval = Interval::new(cubic.m).unwrap();
    for eps in [0.05, 0.1] {
        let bound = solution_entropy_bound(eps, l, cubic.m, t, cubic.speed, &psi, cal.gamma_lm);
        match encode_bvpsi(&snapped, &interval, &psi, budget, eps) {
            Ok(enc) => {
                let g = decode_with_length(&enc.codeword, &interval).unwrap().0;
                let err = l1_distance(&snapped, &g, &RealLine).unwrap();
                let ok = err <= eps && (enc.bit_length() as f64) <= bound;
                pass &= ok;
                parts.push(format!(
                    "cubic eps={eps}: err {err:.4}, {} bits <= {bound:.3e}{}",
                    enc.bit_length(),
                    if ok { "" } else { " FAILED" }
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("cubic eps={eps}: {e}"));
            }
        }
    }
    parts.push(format!(
        "cubic gauge_check {}, gamma_LM {:.3e} (tv stride {})",
        if checked { "ok" } else { "FAILED" },
        cal.gamma_lm,
        cell_tv_psi(&sol.cells, &psi).1
    ));
    outcome(pass, parts.join("; "))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("variation oracle", criterion_variation),
        ("cover-pack sandwich", criterion_sandwich),
        ("ball-count bounds", criterion_ball_counts),
        ("codec soundness", criterion_codec),
        ("witness separation", criterion_witness),
        ("exponent recovery", criterion_exponent),
        ("conservation-law checks", criterion_claw),
        ("flux-gauge pipeline", criterion_flux_gauge),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {}. {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
