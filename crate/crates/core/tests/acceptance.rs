//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The NSW criteria read `data/nsw_psid.csv` from the workspace root, or the
//! file named by `NSW_CSV`; without it they are reported as SKIP.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use honest_ate::alt_estimators::{difference_in_means, matching_weights, worst_case_bias_lp, TiePolicy};
use honest_ate::cli::{run, Cli};
use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind, TargetWeights, VarianceSpec};
use honest_ate::estimator::{
    efficiency_bounds, one_sided_efficiency, tune, weights_at, Criterion, Levels, PathModulus, PathPoint,
};
use honest_ate::geometry::{cross_distances, DistanceMatrices, ScaledCovariates};
use honest_ate::normal::critical_value;
use honest_ate::path::{trace_path, PathOptions, SolutionPath};
use honest_ate::pipeline::{prepare, PipelineConfig, Provenance};
use honest_ate::qp::solve_modulus_qp_at_mu;
use honest_ate::variance::VarianceMetric;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, out: Outcome) {
        let (tag, detail) = match out {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                self.failed.push(id);
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {id:>2}. {name}: {detail}");
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn uniform_sample(rng: &mut ChaCha8Rng, n: usize, dim: usize, balanced: bool) -> Sample {
    loop {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let d: Vec<bool> = if balanced {
            (0..n).map(|i| i % 2 == 1).collect()
        } else {
            (0..n).map(|_| rng.gen_bool(0.5)).collect()
        };
        if let Ok(s) = Sample::new(x, d, None) {
            return s;
        }
    }
}

fn trace(sample: &Sample, spec: &LipschitzSpec, var: &VarianceSpec, kind: TargetKind) -> (SolutionPath, DistanceMatrices, TargetWeights) {
    let dist = cross_distances(sample, spec).unwrap();
    let target = TargetWeights::new(sample, kind);
    let path = trace_path(sample, &dist, var, &target, &PathOptions::default()).unwrap();
    (path, dist, target)
}

// 1
fn two_point() -> Outcome {
    let t = Instant::now();
    let s = Sample::new(vec![vec![0.0], vec![1.0]], vec![false, true], None).unwrap();
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(1, Exponent::Two)).unwrap();
    let (path, _, _) = trace(&s, &spec, &VarianceSpec::homoskedastic(1.0).unwrap(), TargetKind::Cate);
    let mut err: f64 = 0.0;
    for mu in [1e-6, 0.01, 0.5, 1.0, 2.0, 10.0, 1e3, 1e6] {
        let w = weights_at(&path, mu).unwrap();
        let sum = path.summary(PathPoint::Mu(mu), 1.0).unwrap();
        err = err
            .max((w[0] + 1.0).abs())
            .max((w[1] - 1.0).abs())
            .max((sum.maxbias - 1.0).abs())
            .max((sum.sd - 2f64.sqrt()).abs());
    }
    let elapsed = t.elapsed();
    verdict(
        err <= 1e-9 && elapsed < Duration::from_millis(1),
        format!("max abs error {err:.2e} (limit 1e-9), {elapsed:?} (limit 1 ms)"),
    )
}

/// Largest violation of stationarity, dual feasibility, complementary
/// slackness and primal feasibility at `mu`, from the unit-level state.
fn kkt_residual(sample: &Sample, spec: &LipschitzSpec, path: &SolutionPath, dist: &DistanceMatrices, target: &TargetWeights, mu: f64) -> f64 {
    let st = path.state_at(mu).unwrap();
    let sig = path.unit_sigma2();
    let n = sample.len();
    let w = &target.weights;
    let mut lam_m = vec![0.0; n];
    let mut lam_r = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for l in &st.lambda0 {
        let (a, b) = (dist.treated[l.treated], dist.controls[l.control]);
        lam_r[a] += l.value;
        lam_m[b] += l.value;
        if l.value < -1e-10 {
            worst = f64::INFINITY;
        }
        worst = worst.max((l.value * (st.r[a] - st.m[b] - dist.d0(l.treated, l.control))).abs());
    }
    for l in &st.lambda1 {
        let (a, b) = (dist.treated[l.treated], dist.controls[l.control]);
        lam_m[a] += l.value;
        lam_r[b] += l.value;
        if l.value < -1e-10 {
            worst = f64::INFINITY;
        }
        worst = worst.max((l.value * (st.r[b] - st.m[a] - dist.d1(l.treated, l.control))).abs());
    }
    let scale = 1.0 + mu;
    for i in 0..n {
        worst = worst.max((st.m[i] / sig[i] - mu * w[i] - lam_m[i]).abs() / scale);
        worst = worst.max((mu * w[i] - lam_r[i]).abs() / scale);
    }
    // implied f must be Lipschitz on both arms
    let z = ScaledCovariates::new(sample, spec).unwrap();
    let f1: Vec<f64> = (0..n).map(|i| if sample.is_treated(i) { st.m[i] } else { st.r[i] }).collect();
    let f0: Vec<f64> = (0..n).map(|i| if sample.is_treated(i) { -st.r[i] } else { -st.m[i] }).collect();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                let rho = z.rho(a, b);
                worst = worst.max(f1[a] - f1[b] - rho).max(f0[a] - f0[b] - rho);
            }
        }
    }
    worst
}

// 2
fn path_vs_qp() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rel: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    let mut solves = 0;
    for n in [4, 6, 8] {
        for design in 0..50 {
            let s = uniform_sample(&mut rng, n, 2, true);
            let spec = LipschitzSpec::new(1.0, NormSpec::identity(2, Exponent::Two)).unwrap();
            let var = VarianceSpec::per_arm(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)).unwrap();
            let kind = if design % 2 == 0 { TargetKind::Cate } else { TargetKind::Catt };
            let (path, dist, target) = trace(&s, &spec, &var, kind);
            let top = 2.0 * path.last_mu().max(1.0);
            for _ in 0..20 {
                let mu = rng.gen_range(1e-3..top);
                let qp = solve_modulus_qp_at_mu(&s, &spec, &var, &target, mu).unwrap();
                let om = path.summary(PathPoint::Mu(mu), 1.0).unwrap().omega;
                worst_rel = worst_rel.max((qp.omega() - om).abs() / qp.omega().abs().max(1e-300));
                worst_kkt = worst_kkt.max(kkt_residual(&s, &spec, &path, &dist, &target, mu));
                solves += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        worst_rel <= 1e-6 && worst_kkt <= 1e-8 && elapsed < Duration::from_secs(60),
        format!(
            "{solves} QP solves; max relative omega gap {worst_rel:.2e} (limit 1e-6), max KKT residual {worst_kkt:.2e} (limit 1e-8), {:.1?} (limit 60 s)",
            elapsed
        ),
    )
}

// 3
fn critical_values() -> Outcome {
    let cv0 = critical_value(0.0, 0.05);
    let mut ok = (cv0 - 1.959964).abs() <= 1e-6;
    let mut worst: f64 = 0.0;
    for b in [1.5, 2.0, 3.0] {
        let gap = (critical_value(b, 0.05) - (b + 1.644854)).abs();
        worst = worst.max(gap);
        ok &= gap < 5e-4;
    }
    let cv = critical_value(1.577, 0.05);
    ok &= (cv - 3.22).abs() <= 0.005;
    verdict(
        ok,
        format!("cv(0) = {cv0:.7}, max |cv(b) - b - z| = {worst:.2e} (limit 5e-4), cv(1.577) = {cv:.4} (target 3.22 +- 0.005)"),
    )
}

// 4
fn matching_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for design in 0..20 {
        let n = rng.gen_range(4..12);
        let s = uniform_sample(&mut rng, n, 2, false);
        let spec = LipschitzSpec::new(1.0, NormSpec::identity(2, Exponent::Two)).unwrap();
        let kind = if design % 2 == 0 { TargetKind::Cate } else { TargetKind::Catt };
        let (path, dist, target) = trace(&s, &spec, &VarianceSpec::homoskedastic(1.0).unwrap(), kind);
        let mu = if path.num_knots() > 1 { 0.5 * path.knots[1].mu } else { 1.0 };
        let w = weights_at(&path, mu).unwrap();
        let m = matching_weights(&s, &dist, 1, &target, TiePolicy::Lowest).unwrap();
        for (a, b) in w.iter().zip(&m) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-10, format!("20 designs, max |k_path - k_match| = {worst:.2e} (limit 1e-10)"))
}

// 5
fn dim_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for design in 0..20 {
        let n = rng.gen_range(6..16);
        let s = uniform_sample(&mut rng, n, 2, true);
        let spec = LipschitzSpec::new(1.0, NormSpec::identity(2, Exponent::Two)).unwrap();
        let kind = if design % 2 == 0 { TargetKind::Cate } else { TargetKind::Catt };
        let (path, _, _) = trace(&s, &spec, &VarianceSpec::homoskedastic(1.0).unwrap(), kind);
        let mu = path.last_mu().max(1.0) * 1e6;
        let w = weights_at(&path, mu).unwrap();
        for (a, b) in w.iter().zip(difference_in_means(&s)) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-6, format!("20 designs, max |k - k_dim| = {worst:.2e} (limit 1e-6)"))
}

/// Grid search over Lipschitz `f` on one arm with `f(x_0) = 0`.
fn grid_arm(c: &[f64], z: &ScaledCovariates, steps: usize) -> (f64, f64) {
    let n = c.len();
    let diam = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| z.rho(a, b)).fold(0.0, f64::max);
    let h = 2.0 * diam / steps as f64;
    let mut best = f64::NEG_INFINITY;
    let mut f = vec![0.0; n];
    let total = (steps + 1).pow((n - 1) as u32);
    for code in 0..total {
        let mut k = code;
        for v in f.iter_mut().skip(1) {
            *v = -diam + h * (k % (steps + 1)) as f64;
            k /= steps + 1;
        }
        let feasible = (0..n).all(|a| (0..n).all(|b| a == b || f[a] - f[b] <= z.rho(a, b) + 1e-12));
        if feasible {
            best = best.max(c.iter().zip(&f).map(|(a, b)| a * b).sum());
        }
    }
    (best, h)
}

// 6
fn bias_lp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let levels = Levels::default();
    let mut worst_rel: f64 = 0.0;
    for design in 0..20 {
        let n = rng.gen_range(4..14);
        let s = uniform_sample(&mut rng, n, 2, false);
        let c = rng.gen_range(0.3..3.0);
        let spec = LipschitzSpec::new(c, NormSpec::identity(2, [Exponent::One, Exponent::Two][design % 2])).unwrap();
        let kind = if design % 2 == 0 { TargetKind::Cate } else { TargetKind::Catt };
        let (path, _, target) = trace(&s, &LipschitzSpec::new(1.0, spec.norm.clone()).unwrap(), &VarianceSpec::homoskedastic(1.0).unwrap(), kind);
        for crit in [Criterion::Rmse, Criterion::Flci, Criterion::Oci] {
            let t = tune(&path, c, crit, levels).unwrap();
            let mu = match t.point {
                PathPoint::Mu(mu) => mu,
                _ => continue,
            };
            let w = weights_at(&path, mu).unwrap();
            let lp = worst_case_bias_lp(&w, &s, &spec, &target).unwrap();
            worst_rel = worst_rel.max((lp - t.summary.maxbias).abs() / t.summary.maxbias.max(1e-300));
        }
    }
    // grid oracle on three-point designs
    let mut grid_ok = true;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..10 {
        let s = loop {
            let x: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
            let d = vec![true, false, rng.gen_bool(0.5)];
            if let Ok(s) = Sample::new(x, d, None) {
                break s;
            }
        };
        let spec = LipschitzSpec::new(1.0, NormSpec::identity(1, Exponent::Two)).unwrap();
        let target = TargetWeights::new(&s, TargetKind::Cate);
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
        let (st, sc): (f64, f64) = (0..3).fold((0.0, 0.0), |(a, b), i| if s.is_treated(i) { (a + raw[i], b) } else { (a, b + raw[i]) });
        let k: Vec<f64> = (0..3).map(|i| if s.is_treated(i) { raw[i] / st } else { -raw[i] / sc }).collect();
        let lp = worst_case_bias_lp(&k, &s, &spec, &target).unwrap();
        let z = ScaledCovariates::new(&s, &spec).unwrap();
        let c1: Vec<f64> = (0..3).map(|i| if s.is_treated(i) { k[i] } else { 0.0 } - target.weights[i]).collect();
        let c0: Vec<f64> = (0..3).map(|i| if s.is_treated(i) { 0.0 } else { k[i] } + target.weights[i]).collect();
        let steps = 400;
        let (g1, h) = grid_arm(&c1, &z, steps);
        let (g0, _) = grid_arm(&c0, &z, steps);
        let grid = g1 + g0;
        let resolution = h * (c1.iter().chain(&c0).map(|v| v.abs()).sum::<f64>());
        worst_gap = worst_gap.max(lp - grid);
        grid_ok &= lp >= grid - 1e-12 && lp <= grid + resolution;
    }
    verdict(
        worst_rel <= 1e-6 && grid_ok,
        format!("max relative LP vs path bias gap {worst_rel:.2e} (limit 1e-6); grid oracle bracket held: {grid_ok} (max LP - grid {worst_gap:.2e})"),
    )
}

// 7
fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let levels = Levels::default();
    let mut bad = Vec::new();
    let mut min_flci: f64 = 1.0;
    let mut min_one: f64 = 1.0;
    for inst in 0..100 {
        let n = rng.gen_range(3..12);
        let dim = rng.gen_range(1..4);
        let s = uniform_sample(&mut rng, n, dim, false);
        let exp = [Exponent::One, Exponent::Two, Exponent::Infinity][inst % 3];
        let spec = LipschitzSpec::new(1.0, NormSpec::identity(s.dim(), exp)).unwrap();
        let var = VarianceSpec::per_arm(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)).unwrap();
        let kind = if inst % 2 == 0 { TargetKind::Cate } else { TargetKind::Catt };
        let (path, _, _) = trace(&s, &spec, &var, kind);
        let c = rng.gen_range(0.2..5.0);
        let top = 3.0 * path.last_mu().max(1.0);
        let mus: Vec<f64> = (1..=200).map(|k| top * (k as f64 / 200.0).powi(2)).collect();
        let pts: Vec<_> = mus.iter().map(|&mu| path.summary(PathPoint::Mu(mu), c).unwrap()).collect();
        let tol = 1e-9;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.delta < a.delta - tol * (1.0 + a.delta) {
                bad.push(format!("instance {inst}: delta decreased"));
            }
            if b.omega < a.omega - tol * (1.0 + a.omega) {
                bad.push(format!("instance {inst}: omega decreased"));
            }
            if b.delta > a.delta + 1e-12 {
                if b.maxbias < a.maxbias - tol * (1.0 + a.maxbias) {
                    bad.push(format!("instance {inst}: maxbias decreased"));
                }
                if b.sd > a.sd + tol * (1.0 + a.sd) {
                    bad.push(format!("instance {inst}: sd increased"));
                }
            }
        }
        // concavity: chords lie below the curve
        for w in pts.windows(3) {
            let (a, m, b) = (w[0], w[1], w[2]);
            if b.delta - a.delta > 1e-9 {
                let t = (m.delta - a.delta) / (b.delta - a.delta);
                let chord = a.omega + t * (b.omega - a.omega);
                if m.omega < chord - 1e-8 * (1.0 + m.omega) {
                    bad.push(format!("instance {inst}: omega not concave"));
                }
            }
        }
        let eff = efficiency_bounds(&path, c, levels).unwrap();
        let one = one_sided_efficiency(&PathModulus { path: &path, c }, levels).unwrap();
        min_flci = min_flci.min(eff.flci);
        min_one = min_one.min(one);
    }
    bad.dedup();
    let ok = bad.is_empty() && min_flci >= 0.717 && min_one >= 0.5;
    let mut detail = format!("100 instances; min FLCI efficiency {min_flci:.4} (limit 0.717), min one-sided efficiency {min_one:.4} (limit 0.5)");
    if !bad.is_empty() {
        detail.push_str(&format!("; violations: {}", bad.iter().take(5).cloned().collect::<Vec<_>>().join(", ")));
    }
    verdict(ok, detail)
}

fn nsw_path() -> Option<PathBuf> {
    let p = std::env::var_os("NSW_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/nsw_psid.csv"));
    p.exists().then_some(p)
}

fn load_nsw(path: &PathBuf) -> Sample {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let covs = ["age", "educ", "black", "hisp", "married", "re74", "re75", "emp74", "emp75"].map(col);
    let (dc, yc) = (col("treat"), col("re78"));
    let (mut x, mut d, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let r = rec.unwrap();
        let v = |c: usize| r[c].parse::<f64>().unwrap();
        x.push(covs.iter().map(|&c| v(c)).collect());
        d.push(v(dc) == 1.0);
        y.push(v(yc));
    }
    Sample::new(x, d, Some(y)).unwrap()
}

struct Check {
    lines: Vec<String>,
    ok: bool,
}

impl Check {
    fn col(&mut self, row: &str, what: &str, got: f64, want: f64, tol: f64) {
        let pass = (got - want).abs() <= tol;
        self.ok &= pass;
        self.lines.push(format!(
            "      {row:<22} {what:<10} {got:>8.3} vs {want:>5.2}  {}",
            if pass { "ok" } else { "off" }
        ));
    }
}

// 8 and 9
fn nsw(report: &mut Report) {
    let name8 = "NSW reproduction";
    let name9 = "NSW FLCI efficiency";
    let Some(file) = nsw_path() else {
        report.record(8, name8, Outcome::Skip("data/nsw_psid.csv not found (see scripts/fetch_nsw.py)".into()));
        report.record(9, name9, Outcome::Skip("data/nsw_psid.csv not found".into()));
        return;
    };
    let s = load_nsw(&file);
    let a = vec![0.15, 0.6, 2.5, 2.5, 2.5, 0.5, 0.5, 0.1, 0.1];
    let spec = LipschitzSpec::new(1.0, NormSpec::diagonal(a, Exponent::One).unwrap()).unwrap();
    let cfg = PipelineConfig {
        target: TargetKind::Catt,
        metric: VarianceMetric::Mahalanobis,
        ..PipelineConfig::default()
    };
    let levels = cfg.levels;
    let t = Instant::now();
    let prep = prepare(&s, &spec, &cfg).unwrap();
    let mut chk = Check { lines: Vec::new(), ok: true };
    let tol = 0.02;
    let rows = [
        (Criterion::Rmse, "optimal rmse", [1.86, 0.94, 1.64, 1.53, 1.04, 3.22]),
        (Criterion::Flci, "optimal flci", [3.30, 0.94, 1.81, 1.40, 0.96, 3.52]),
        (Criterion::Oci, "optimal one-sided", [2.49, 0.98, 1.71, 1.47, 1.00, 3.36]),
    ];
    for (crit, label, want) in rows {
        let e = prep.optimal(&s, 1.0, crit, levels).unwrap();
        let delta = match e.provenance {
            Provenance::Optimal { delta, .. } => delta,
            _ => f64::NAN,
        };
        let got = [delta, e.estimate, e.maxbias, e.sd_homoskedastic, e.se_robust, e.cv];
        for ((what, g), w) in ["delta", "estimate", "maxbias", "sd homosk", "se robust", "cv"].iter().zip(got).zip(want) {
            chk.col(label, what, g, w, tol);
        }
    }
    let runtime = t.elapsed();
    let matching = [
        (1, "matching M=1", [1.39, 1.48, 2.01, 1.11, 2.98]),
        (18, "matching M=18", [1.26, 2.21, 1.39, 0.89, 4.12]),
        (17, "matching M=17", [1.32, 2.16, 1.42, 0.89, 4.09]),
    ];
    for (m, label, want) in matching {
        let e = prep.matching(&s, 1.0, m, TiePolicy::Lowest, levels.alpha).unwrap();
        let got = [e.estimate, e.maxbias, e.sd_homoskedastic, e.se_robust, e.cv];
        for ((what, g), w) in ["estimate", "maxbias", "sd homosk", "se robust", "cv"].iter().zip(got).zip(want) {
            chk.col(label, what, g, w, tol);
        }
    }
    for (crit, want) in [(Criterion::Flci, 18), (Criterion::Oci, 17)] {
        let (best, _) = prep.tune_matching(&s, 1.0, 1..=40, crit, TiePolicy::Lowest, levels).unwrap();
        let got = match best.provenance {
            Provenance::Matching { m } => m,
            _ => 0,
        };
        chk.ok &= got == want;
        chk.lines.push(format!(
            "      tuned M ({})         {got} vs {want}  {}",
            crit.name(),
            if got == want { "ok" } else { "off" }
        ));
    }
    let zero = prep.at_point(&s, 1.0, PathPoint::Zero, None, levels.alpha).unwrap();
    chk.col("small-mu limit", "estimate", zero.estimate, 1.41, tol);
    // the reference range is given to two decimals
    let grid: Vec<f64> = (2..=20).map(|k| k as f64 / 10.0).collect();
    let sens: Vec<f64> = grid
        .iter()
        .map(|&c| prep.optimal(&s, c, Criterion::Rmse, levels).unwrap().estimate)
        .collect();
    let (lo, hi) = sens.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let sens_ok = (lo * 100.0).round() / 100.0 >= 0.94 && (hi * 100.0).round() / 100.0 <= 1.15;
    chk.ok &= sens_ok;
    chk.lines.push(format!(
        "      sensitivity C in [0.2, 2]  estimates in [{lo:.3}, {hi:.3}] vs [0.94, 1.15]  {}",
        if sens_ok { "ok" } else { "off" }
    ));
    let runtime_ok = runtime <= Duration::from_secs(300);
    chk.ok &= runtime_ok;
    let total = t.elapsed();
    let offs = chk.lines.iter().filter(|l| l.ends_with("off")).count();
    let detail = format!(
        "Mahalanobis NN(3) variance, sigma2 = {:.3}, {} knots; path + criteria {:.1?} (limit 300 s), whole check {:.1?}; {} of {} comparisons outside +-0.02\n{}",
        prep.variance.sigma2,
        prep.path().unwrap().num_knots(),
        runtime,
        total,
        offs,
        chk.lines.len(),
        chk.lines.join("\n")
    );
    report.record(8, name8, verdict(chk.ok, detail));

    let eff = efficiency_bounds(prep.path().unwrap(), 1.0, levels).unwrap();
    report.record(
        9,
        name9,
        verdict(eff.flci > 0.97, format!("FLCI efficiency {:.4} (limit > 0.97), one-sided {:.4}", eff.flci, eff.one_sided)),
    );
}

// 10
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut text = String::from("y,d,x1,x2\n");
    for i in 0..60 {
        let d = i % 3 == 0;
        let (x1, x2): (f64, f64) = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..2.0));
        let y = x1 + 0.5 * x2 + if d { 1.0 } else { 0.0 } + rng.gen_range(-1.0..1.0);
        text.push_str(&format!("{y},{},{x1},{x2}\n", d as u8));
    }
    std::fs::write(&csv, text).unwrap();
    let cache = dir.path().join("cache");
    let base = |cmd: &str, extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = ["honest-ate", cmd, "--csv", csv.to_str().unwrap(), "--outcome", "y", "--treatment", "d"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let exec = |args: Vec<String>| run(&Cli::try_parse_from(args).unwrap()).unwrap();
    let mut ok = true;
    let mut compared = 0;
    for (cmd, extra) in [
        ("estimate", vec!["--C", "1.5"]),
        ("sensitivity", vec!["--C-grid", "0.5,1,2,4"]),
        ("matching", vec!["--M-range", "1:4"]),
        ("diagnostics", vec![]),
    ] {
        let fresh1 = exec(base(cmd, &extra));
        let fresh2 = exec(base(cmd, &extra));
        let mut cached_args = extra.clone();
        cached_args.extend(["--cache-dir", cache.to_str().unwrap()]);
        let writing = exec(base(cmd, &cached_args));
        cached_args.push("--from-cache");
        let reading = exec(base(cmd, &cached_args));
        ok &= fresh1 == fresh2 && fresh1 == writing && fresh1 == reading;
        compared += 4;
    }
    verdict(ok, format!("{compared} JSON reports across fresh, cache-writing and --from-cache runs compared byte for byte"))
}

fn main() {
    // `cargo test` passes harness flags; only a name filter is honoured
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f) && !f.contains("acceptance")) {
        return;
    }
    let mut report = Report { failed: Vec::new() };
    println!("acceptance criteria");
    report.record(1, "two-point instance", two_point());
    report.record(2, "path vs QP oracle", path_vs_qp());
    report.record(3, "critical values", critical_values());
    report.record(4, "matching limit", matching_limit());
    report.record(5, "difference-in-means limit", dim_limit());
    report.record(6, "bias LP cross-check", bias_lp());
    report.record(7, "property suite", properties());
    nsw(&mut report);
    report.record(10, "determinism", determinism());
    if report.failed.is_empty() {
        println!("all criteria passed");
    } else {
        println!("failed criteria: {:?}", report.failed);
        std::process::exit(1);
    }
}
