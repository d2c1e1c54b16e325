//! Matching estimators and the worst-case bias of arbitrary weights.
//!
//! The bias of any linear estimator comes from a transportation LP per arm;
//! on a small design it is checked against the dense simplex on the full LP.

use honest_ate::alt_estimators::{
    difference_in_means, matching_weights, worst_case_bias_dense, worst_case_bias_lp, TiePolicy,
};
use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind, TargetWeights};
use honest_ate::estimator::Criterion;
use honest_ate::geometry::cross_distances;
use honest_ate::pipeline::{prepare_data, PipelineConfig, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> honest_ate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let small = Sample::new(
        (0..10).map(|_| vec![rng.gen_range(0.0..1.0)]).collect(),
        (0..10).map(|i| i % 2 == 0).collect(),
        None,
    )?;
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(1, Exponent::One))?;
    let dist = cross_distances(&small, &spec)?;
    let target = TargetWeights::new(&small, TargetKind::Cate);
    for m in 1..=3 {
        let k = matching_weights(&small, &dist, m, &target, TiePolicy::Lowest)?;
        let lp = worst_case_bias_lp(&k, &small, &spec, &target)?;
        let dense = worst_case_bias_dense(&k, &small, &spec, &target)?;
        println!("M = {m}: transportation LP {lp:.6}, dense simplex {dense:.6}");
    }

    let n = 300;
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let d: Vec<bool> = x.iter().map(|v| rng.gen_bool(0.2 + 0.6 * v[0])).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&d)
        .map(|(v, &t)| 2.0 * v[0] + v[1] + if t { 1.0 } else { 0.0 } + rng.gen_range(-1.0..1.0))
        .collect();
    let sample = Sample::new(x, d, Some(y))?;
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(2, Exponent::Two))?;
    let config = PipelineConfig::default();
    let prep = prepare_data(&sample, &spec, &config)?;
    let c = 1.0;

    println!("\n{:>3} {:>8} {:>8} {:>8} {:>6}", "M", "est", "bias", "se", "cv");
    for m in [1, 2, 4, 8, 16] {
        let e = prep.matching(&sample, c, m, TiePolicy::Lowest, 0.05)?;
        println!("{m:>3} {:>8.3} {:>8.3} {:>8.3} {:>6.3}", e.estimate, e.maxbias, e.se_robust, e.cv);
    }
    let (best, _) = prep.tune_matching(&sample, c, 1..=30, Criterion::Flci, TiePolicy::Lowest, config.levels)?;
    if let Provenance::Matching { m } = best.provenance {
        println!("FLCI-optimal number of matches: {m}");
    }

    let dim = difference_in_means(&sample);
    let e = prep.audit(&sample, c, dim, 0.05)?;
    println!(
        "\ndifference in means: est {:.3}, worst-case bias {:.3}, bias/se {:.2}",
        e.estimate,
        e.maxbias,
        e.maxbias / e.se_robust
    );
    Ok(())
}
