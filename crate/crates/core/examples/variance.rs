//! Residual variance estimators and what they feed: the homoskedastic working
//! variance, robust standard errors and the Lindeberg ratio.

use honest_ate::alt_estimators::{difference_in_means, weights_sd};
use honest_ate::data::{Exponent, NormSpec, Sample};
use honest_ate::variance::{estimate_variance, lindeberg_ratio, mahalanobis_norm, robust_se, VarianceMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> honest_ate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 500;
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), 10.0 * rng.gen_range(0.0..1.0)]).collect();
    let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    // noise sd grows with the first covariate: sigma^2(x) = (0.5 + x_1)^2
    let y: Vec<f64> = x
        .iter()
        .map(|v| v[0] + 0.1 * v[1] + (0.5 + v[0]) * rng.gen_range(-1.0f64..1.0) * 3f64.sqrt())
        .collect();
    let true_sigma2 = x.iter().map(|v| (0.5 + v[0]).powi(2)).sum::<f64>() / n as f64;
    let sample = Sample::new(x, d, Some(y))?;

    let euclid = NormSpec::identity(2, Exponent::Two);
    let mahal = mahalanobis_norm(&sample)?;
    let methods = [
        ("nn:1", VarianceMethod::NearestNeighbor { j: 1 }),
        ("nn:3", VarianceMethod::NearestNeighbor { j: 3 }),
        ("nn:10", VarianceMethod::NearestNeighbor { j: 10 }),
        ("nw:0.5", VarianceMethod::NadarayaWatson { bandwidth: 0.5 }),
    ];
    let k = difference_in_means(&sample);
    println!("average true variance {true_sigma2:.3}");
    println!("{:<8} {:<12} {:>8} {:>10} {:>10}", "method", "metric", "sigma2", "sd homosk", "se robust");
    for (label, method) in methods {
        for (metric, norm) in [("euclidean", &euclid), ("mahalanobis", &mahal)] {
            let v = estimate_variance(&sample, method, norm)?;
            let sd = weights_sd(&k, &vec![v.sigma2; n]);
            let se = robust_se(&k, &v.u2)?;
            println!("{label:<8} {metric:<12} {:>8.3} {sd:>10.4} {se:>10.4}", v.sigma2);
        }
    }
    println!("Lindeberg ratio of the difference in means: {:.4}", lindeberg_ratio(&k));
    Ok(())
}
