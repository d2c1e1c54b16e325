//! The feasible procedure on simulated data: working variance, path, the three
//! tuned estimators and both limits of the path.

use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind};
use honest_ate::estimator::{Criterion, PathPoint};
use honest_ate::pipeline::{prepare, LinearEstimate, PipelineConfig, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn print_row(label: &str, e: &LinearEstimate) {
    let delta = match e.provenance {
        Provenance::Optimal { delta, .. } => format!("{delta:.3}"),
        _ => "-".into(),
    };
    let (lo, hi) = (e.flci.lower.unwrap_or(f64::NAN), e.flci.upper.unwrap_or(f64::NAN));
    println!(
        "{label:<14} {delta:>7} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>6.3}  [{lo:.3}, {hi:.3}]",
        e.estimate, e.maxbias, e.sd_homoskedastic, e.se_robust, e.cv
    );
}

fn main() -> honest_ate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 400;
    let mut x = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let treated = rng.gen_bool(0.2 + 0.5 * a);
        let noise: f64 = rng.gen_range(-1.0..1.0);
        x.push(vec![a, b]);
        d.push(treated);
        y.push((3.0 * a).sin() + b + if treated { 0.5 } else { 0.0 } + noise);
    }
    let sample = Sample::new(x, d, Some(y))?;
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(2, Exponent::Two))?;
    let config = PipelineConfig {
        target: TargetKind::Cate,
        ..PipelineConfig::default()
    };
    let prep = prepare(&sample, &spec, &config)?;
    println!(
        "n = {n}, sigma2 = {:.3}, {} knots (true effect 0.5)",
        prep.variance.sigma2,
        prep.path()?.num_knots()
    );
    println!(
        "{:<14} {:>7} {:>8} {:>8} {:>8} {:>8} {:>6}  95% FLCI",
        "estimator", "delta", "est", "bias", "sd", "se", "cv"
    );
    let c = 2.0;
    for (crit, label) in [(Criterion::Rmse, "rmse"), (Criterion::Flci, "flci"), (Criterion::Oci, "one-sided")] {
        print_row(label, &prep.optimal(&sample, c, crit, config.levels)?);
    }
    print_row("limit zero", &prep.at_point(&sample, c, PathPoint::Zero, None, 0.05)?);
    print_row("limit inf", &prep.at_point(&sample, c, PathPoint::Infinity, None, 0.05)?);
    Ok(())
}
