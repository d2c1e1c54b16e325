//! The smallest instance: one control at 0 and one treated unit at 1.
//!
//! Every point of the path gives the difference `y_1 - y_0`, with worst-case
//! bias `C * |x_1 - x_0|` and standard deviation `sqrt(2)` under unit variance.

use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind, TargetWeights, VarianceSpec};
use honest_ate::estimator::{weights_at, PathPoint};
use honest_ate::geometry::cross_distances;
use honest_ate::path::{trace_path, PathOptions};

fn main() -> honest_ate::Result<()> {
    let sample = Sample::new(vec![vec![0.0], vec![1.0]], vec![false, true], None)?;
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(1, Exponent::Two))?;
    let dist = cross_distances(&sample, &spec)?;
    let target = TargetWeights::new(&sample, TargetKind::Cate);
    let var = VarianceSpec::homoskedastic(1.0)?;
    let path = trace_path(&sample, &dist, &var, &target, &PathOptions::default())?;

    println!("knots: {}", path.num_knots());
    println!("{:>10} {:>8} {:>8} {:>8} {:>8}", "mu", "k_0", "k_1", "maxbias", "sd");
    for mu in [1e-3, 0.1, 1.0, 10.0, 1e3] {
        let k = weights_at(&path, mu)?;
        let s = path.summary(PathPoint::Mu(mu), 1.0)?;
        println!("{mu:>10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", k[0], k[1], s.maxbias, s.sd);
    }
    Ok(())
}
