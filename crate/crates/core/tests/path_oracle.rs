use honest_ate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind, TargetWeights, VarianceSpec};
use honest_ate::geometry::cross_distances;
use honest_ate::path::{trace_path, PathOptions};
use honest_ate::qp::solve_modulus_qp_at_mu;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut ChaCha8Rng, n: usize, p: usize, discrete: bool) -> Sample {
    loop {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        if discrete {
                            rng.gen_range(0..3) as f64
                        } else {
                            rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.45)).collect();
        if let Ok(s) = Sample::new(x, d, None) {
            return s;
        }
    }
}

fn compare(sample: &Sample, exp: Exponent, kind: TargetKind, var: VarianceSpec) {
    let spec = LipschitzSpec::new(1.0, NormSpec::identity(sample.dim(), exp)).unwrap();
    let dist = cross_distances(sample, &spec).unwrap();
    let target = TargetWeights::new(sample, kind);
    let path = trace_path(sample, &dist, &var, &target, &PathOptions::default()).unwrap();
    path.validate().unwrap();
    let last = path.last_mu();
    let mut mus: Vec<f64> = path.knot_mus();
    for k in 1..path.num_knots() {
        let a = path.knots[k - 1].mu;
        let b = path.knots[k].mu;
        mus.push(0.5 * (a + b));
    }
    mus.push(last * 1.5 + 0.3);
    mus.push(last * 4.0 + 2.0);
    for &mu in &mus {
        if mu == 0.0 {
            continue;
        }
        let st = path.state_at(mu).unwrap();
        let qp = solve_modulus_qp_at_mu(sample, &spec, &var, &target, mu).unwrap();
        let scale = 1.0 + qp.m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..sample.len() {
            assert!(
                (st.m[i] - qp.m[i]).abs() < 1e-6 * scale,
                "mu={mu} i={i} path m={} qp m={} knots={}",
                st.m[i],
                qp.m[i],
                path.num_knots()
            );
        }
        let seg = path.segment_at(mu);
        assert!((seg.p_at(mu) - qp.lf).abs() < 1e-6 * scale, "mu={mu} P {} vs {}", seg.p_at(mu), qp.lf);
        assert!((seg.q_at(mu) - qp.q).abs() < 1e-6 * scale * scale);
    }
}

#[test]
fn path_matches_qp_on_random_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..40 {
        let n = rng.gen_range(3..9);
        let p = rng.gen_range(1..3);
        let s = random_sample(&mut rng, n, p, trial % 3 == 0);
        let exp = [Exponent::One, Exponent::Two, Exponent::Infinity][trial % 3];
        let kind = if trial % 2 == 0 { TargetKind::Cate } else { TargetKind::Catt };
        let var = if trial % 4 < 2 {
            VarianceSpec::homoskedastic(1.0).unwrap()
        } else {
            VarianceSpec::per_arm(0.5, 2.0).unwrap()
        };
        compare(&s, exp, kind, var);
    }
}
