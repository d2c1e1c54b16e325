//! The NSW experimental treated units against PSID controls.
//!
//! Reads the CSV written by `scripts/fetch_nsw.py` (default
//! `data/nsw_psid.csv`, or the first argument). Pass `--mahalanobis` to pick
//! nearest-neighbour variance neighbours by Mahalanobis distance. Takes about
//! a minute and a half in release mode.

use std::time::Instant;

use honest_ate::alt_estimators::TiePolicy;
use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind};
use honest_ate::estimator::{efficiency_bounds, Criterion, PathPoint};
use honest_ate::pipeline::{prepare, LinearEstimate, PipelineConfig, Provenance};
use honest_ate::variance::VarianceMetric;

const COVARIATES: [&str; 9] = ["age", "educ", "black", "hisp", "married", "re74", "re75", "emp74", "emp75"];

fn load(path: &str) -> Result<Sample, Box<dyn std::error::Error>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("missing column {name}"));
    let covs = COVARIATES.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let (dc, yc) = (col("treat")?, col("re78")?);
    let (mut x, mut d, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let r = rec?;
        let v = |c: usize| r[c].parse::<f64>();
        x.push(covs.iter().map(|&c| v(c)).collect::<Result<Vec<_>, _>>()?);
        d.push(v(dc)? == 1.0);
        y.push(v(yc)?);
    }
    Ok(Sample::new(x, d, Some(y))?)
}

fn row(label: &str, e: &LinearEstimate) {
    let delta = match e.provenance {
        Provenance::Optimal { delta, .. } => format!("{delta:.2}"),
        _ => "".into(),
    };
    println!(
        "{label:<20} {delta:>6} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}",
        e.estimate, e.maxbias, e.sd_homoskedastic, e.se_robust, e.cv
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mahalanobis = args.iter().any(|a| a == "--mahalanobis");
    let path = args.iter().find(|a| !a.starts_with("--")).map_or("data/nsw_psid.csv", String::as_str);
    let sample = load(path)?;

    let scale = vec![0.15, 0.6, 2.5, 2.5, 2.5, 0.5, 0.5, 0.1, 0.1];
    let spec = LipschitzSpec::new(1.0, NormSpec::diagonal(scale, Exponent::One)?)?;
    let config = PipelineConfig {
        target: TargetKind::Catt,
        metric: if mahalanobis { VarianceMetric::Mahalanobis } else { VarianceMetric::Analysis },
        ..PipelineConfig::default()
    };
    let levels = config.levels;
    let t = Instant::now();
    let prep = prepare(&sample, &spec, &config)?;
    println!(
        "n1 = {}, n0 = {}, sigma2 = {:.2}, {} knots in {:.1?}",
        sample.n1(),
        sample.n0(),
        prep.variance.sigma2,
        prep.path()?.num_knots(),
        t.elapsed()
    );

    println!("{:<20} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "", "delta", "est", "bias", "sd", "se", "cv");
    for (crit, label) in [(Criterion::Rmse, "optimal rmse"), (Criterion::Flci, "optimal flci"), (Criterion::Oci, "optimal one-sided")] {
        row(label, &prep.optimal(&sample, 1.0, crit, levels)?);
    }
    row("limit mu -> 0", &prep.at_point(&sample, 1.0, PathPoint::Zero, None, levels.alpha)?);
    for m in [1, 17, 18] {
        row(&format!("matching M = {m}"), &prep.matching(&sample, 1.0, m, TiePolicy::Lowest, levels.alpha)?);
    }
    let eff = efficiency_bounds(prep.path()?, 1.0, levels)?;
    println!("efficiency: one-sided {:.4}, FLCI {:.4}", eff.one_sided, eff.flci);
    Ok(())
}
