//! Weighted norms and treated-by-control distance matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Exponent, LipschitzSpec, NormSpec, Sample};
use crate::error::Result;

fn q_norm(v: &[f64], exponent: Exponent) -> f64 {
    match exponent {
        Exponent::One => v.iter().map(|x| x.abs()).sum(),
        Exponent::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Exponent::Infinity => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// `||A^{1/2} v||_q`.
pub fn norm_eval(v: &[f64], norm: &NormSpec) -> f64 {
    let mut z = vec![0.0; v.len()];
    norm.scale_into(v, &mut z);
    q_norm(&z, norm.exponent)
}

/// `||(v)_{S+}||`: the norm after clipping the monotone coordinates of `v` at zero.
pub fn monotone_deviation(v: &[f64], norm: &NormSpec, monotone: &[usize]) -> f64 {
    let mut c = v.to_vec();
    for &k in monotone {
        c[k] = c[k].max(0.0);
    }
    norm_eval(&c, norm)
}

/// Covariates mapped through `A^{1/2}` so that distances reduce to plain q-norms.
#[derive(Debug, Clone)]
pub struct ScaledCovariates {
    dim: usize,
    z: Vec<f64>,
    exponent: Exponent,
    monotone: Vec<usize>,
}

impl ScaledCovariates {
    pub fn new(sample: &Sample, spec: &LipschitzSpec) -> Result<Self> {
        spec.check_sample(sample)?;
        Ok(Self::with_norm(sample, &spec.norm, &spec.monotone))
    }

    pub fn with_norm(sample: &Sample, norm: &NormSpec, monotone: &[usize]) -> Self {
        let dim = sample.dim();
        let mut z = vec![0.0; sample.len() * dim];
        for (i, out) in z.chunks_mut(dim).enumerate() {
            norm.scale_into(sample.x(i), out);
        }
        Self {
            dim,
            z,
            exponent: norm.exponent,
            monotone: monotone.to_vec(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    /// `rho(x_a - x_b)`: the (possibly monotone) deviation from `b` to `a`.
    pub fn rho(&self, a: usize, b: usize) -> f64 {
        let za = self.row(a);
        let zb = self.row(b);
        let mut mono = self.monotone.iter().peekable();
        let mut acc = 0.0_f64;
        for k in 0..self.dim {
            let mut d = za[k] - zb[k];
            if mono.peek() == Some(&&k) {
                mono.next();
                d = d.max(0.0);
            }
            match self.exponent {
                Exponent::One => acc += d.abs(),
                Exponent::Two => acc += d * d,
                Exponent::Infinity => acc = acc.max(d.abs()),
            }
        }
        if self.exponent == Exponent::Two {
            acc.sqrt()
        } else {
            acc
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.monotone.is_empty()
    }
}

/// Treated-by-control distances.
///
/// `d0[i][j] = rho(x_i - x_j)` bounds `f(x_i,0) - f(x_j,0)` and
/// `d1[i][j] = rho(x_j - x_i)` bounds `f(x_j,1) - f(x_i,1)`, for treated `i`
/// and control `j` (local indices). Without monotone coordinates they coincide.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceMatrices {
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
    d0: Vec<f64>,
    d1: Option<Vec<f64>>,
}

impl DistanceMatrices {
    pub fn n1(&self) -> usize {
        self.treated.len()
    }

    pub fn n0(&self) -> usize {
        self.controls.len()
    }

    #[inline]
    pub fn d0(&self, i: usize, j: usize) -> f64 {
        self.d0[i * self.controls.len() + j]
    }

    #[inline]
    pub fn d1(&self, i: usize, j: usize) -> f64 {
        match &self.d1 {
            Some(d) => d[i * self.controls.len() + j],
            None => self.d0(i, j),
        }
    }

    /// Row `i` of `d0` (distances from treated `i` to every control).
    pub fn d0_row(&self, i: usize) -> &[f64] {
        let n0 = self.controls.len();
        &self.d0[i * n0..(i + 1) * n0]
    }

    pub fn d1_row(&self, i: usize) -> &[f64] {
        let n0 = self.controls.len();
        match &self.d1 {
            Some(d) => &d[i * n0..(i + 1) * n0],
            None => self.d0_row(i),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.d1.is_none()
    }
}

/// Computes all treated-by-control distances under the Lipschitz norm.
pub fn cross_distances(sample: &Sample, spec: &LipschitzSpec) -> Result<DistanceMatrices> {
    let z = ScaledCovariates::new(sample, spec)?;
    let treated = sample.treated_indices();
    let controls = sample.control_indices();
    let fill = |forward: bool| -> Vec<f64> {
        let rows: Vec<Vec<f64>> = treated
            .par_iter()
            .map(|&i| {
                controls
                    .iter()
                    .map(|&j| if forward { z.rho(i, j) } else { z.rho(j, i) })
                    .collect()
            })
            .collect();
        rows.concat()
    };
    let d0 = fill(true);
    let d1 = if z.is_symmetric() { None } else { Some(fill(false)) };
    Ok(DistanceMatrices {
        treated,
        controls,
        d0,
        d1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_match_hand_values() {
        let v = [3.0, -4.0];
        let id1 = NormSpec::identity(2, Exponent::One);
        let id2 = NormSpec::identity(2, Exponent::Two);
        let idi = NormSpec::identity(2, Exponent::Infinity);
        assert_eq!(norm_eval(&v, &id1), 7.0);
        assert_eq!(norm_eval(&v, &id2), 5.0);
        assert_eq!(norm_eval(&v, &idi), 4.0);
        let w = NormSpec::diagonal(vec![2.0, 0.5], Exponent::One).unwrap();
        assert_eq!(norm_eval(&v, &w), 8.0);
    }

    #[test]
    fn full_scaling_applies_matrix() {
        let n = NormSpec::full(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        // A^{1/2} (1, 0) = (2, 1)
        assert!((norm_eval(&[1.0, 0.0], &n) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn monotone_clips_selected_coordinates() {
        let n = NormSpec::identity(2, Exponent::One);
        assert_eq!(monotone_deviation(&[-3.0, -1.0], &n, &[0]), 1.0);
        assert_eq!(monotone_deviation(&[3.0, -1.0], &n, &[0]), 4.0);
    }

    #[test]
    fn distances_against_direct_evaluation() {
        let s = Sample::new(
            vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5], vec![-1.0, 3.0]],
            vec![true, false, true, false],
            None,
        )
        .unwrap();
        let norm = NormSpec::diagonal(vec![1.0, 2.0], Exponent::Two).unwrap();
        let spec = LipschitzSpec::with_monotone(1.0, norm.clone(), vec![1]).unwrap();
        let d = cross_distances(&s, &spec).unwrap();
        for (a, &i) in d.treated.iter().enumerate() {
            for (b, &j) in d.controls.iter().enumerate() {
                let v: Vec<f64> = s.x(i).iter().zip(s.x(j)).map(|(p, q)| p - q).collect();
                let w: Vec<f64> = v.iter().map(|x| -x).collect();
                assert!((d.d0(a, b) - monotone_deviation(&v, &norm, &[1])).abs() < 1e-14);
                assert!((d.d1(a, b) - monotone_deviation(&w, &norm, &[1])).abs() < 1e-14);
                assert!(d.d0(a, b) <= norm_eval(&v, &norm) + 1e-14);
            }
        }
    }
}
