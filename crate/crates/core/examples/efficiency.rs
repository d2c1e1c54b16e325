//! Efficiency of the optimal intervals relative to adaptive procedures, as a
//! function of the Lipschitz constant.

use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind, TargetWeights, VarianceSpec};
use honest_ate::estimator::{efficiency_bounds, flci_efficiency_lower_bound, Levels};
use honest_ate::geometry::cross_distances;
use honest_ate::path::{trace_path, PathOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> honest_ate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200;
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    let sample = Sample::new(x, d, None)?;
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(3, Exponent::One))?;
    let dist = cross_distances(&sample, &spec)?;
    let target = TargetWeights::new(&sample, TargetKind::Cate);
    let path = trace_path(&sample, &dist, &VarianceSpec::homoskedastic(1.0)?, &target, &PathOptions::default())?;

    let levels = Levels::default();
    println!("worst-case lower bound for the FLCI: {:.4}", flci_efficiency_lower_bound(levels.alpha));
    println!("{:>6} {:>10} {:>10}", "C", "one-sided", "FLCI");
    for c in [0.1, 0.3, 1.0, 3.0, 10.0] {
        let e = efficiency_bounds(&path, c, levels)?;
        println!("{c:>6} {:>10.4} {:>10.4}", e.one_sided, e.flci);
    }
    Ok(())
}
