//! Traces the exact solution path on a random design and checks it against
//! the modulus QP solved from scratch at a few values of `mu`.
//!
//! Run with `cargo run --release --example solution_path -- 40` to pick `n`.

use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind, TargetWeights, VarianceSpec};
use honest_ate::estimator::PathPoint;
use honest_ate::geometry::cross_distances;
use honest_ate::path::{trace_path, PathOptions};
use honest_ate::qp::solve_modulus_qp_at_mu;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> honest_ate::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let d: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let sample = Sample::new(x, d, None)?;

    let spec = LipschitzSpec::new(1.0, NormSpec::identity(2, Exponent::Two))?;
    let dist = cross_distances(&sample, &spec)?;
    let target = TargetWeights::new(&sample, TargetKind::Catt);
    let var = VarianceSpec::homoskedastic(1.0)?;
    let path = trace_path(&sample, &dist, &var, &target, &PathOptions::default())?;
    println!("n = {n}, {} knots, last knot at mu = {:.4}", path.num_knots(), path.last_mu());

    println!("{:>10} {:>10} {:>10} {:>12}", "mu", "delta", "omega", "|m - m_qp|");
    let last = path.last_mu();
    for frac in [0.05, 0.25, 0.5, 1.0, 2.0] {
        let mu = last * frac;
        let s = path.summary(PathPoint::Mu(mu), 1.0)?;
        let m = path.m_at(mu)?;
        let qp = solve_modulus_qp_at_mu(&sample, &spec, &var, &target, mu)?;
        let gap = m.iter().zip(&qp.m).fold(0.0_f64, |g, (a, b)| g.max((a - b).abs()));
        println!("{mu:>10.4} {:>10.4} {:>10.4} {gap:>12.2e}", s.delta, s.omega);
    }
    Ok(())
}
