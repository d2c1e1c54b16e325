//! Conditional variance estimates, robust standard errors and the Lindeberg
//! weight diagnostic.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Exponent, NormSpec, Sample};
use crate::error::{Error, Result};
use crate::geometry::ScaledCovariates;

/// How residual variances are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum VarianceMethod {
    /// `J/(J+1) (y_i - mean of the J nearest same-arm outcomes)^2`.
    NearestNeighbor { j: usize },
    /// Squared residual from a uniform-kernel same-arm mean.
    NadarayaWatson { bandwidth: f64 },
}

impl std::str::FromStr for VarianceMethod {
    type Err = Error;

    /// Parses `nn:J` or `nw:h`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("variance method {s:?} must look like nn:3 or nw:0.5")))?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "nn" => {
                let j = arg
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("bad neighbour count {arg:?}")))?;
                if j == 0 {
                    return Err(Error::InvalidParameter("J must be at least 1".into()));
                }
                Ok(VarianceMethod::NearestNeighbor { j })
            }
            "nw" => {
                let bandwidth = arg
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("bad bandwidth {arg:?}")))?;
                Ok(VarianceMethod::NadarayaWatson { bandwidth })
            }
            other => Err(Error::InvalidParameter(format!("unknown variance method {other:?}"))),
        }
    }
}

impl std::fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarianceMethod::NearestNeighbor { j } => write!(f, "nn:{j}"),
            VarianceMethod::NadarayaWatson { bandwidth } => write!(f, "nw:{bandwidth}"),
        }
    }
}

/// Which metric defines neighbours for variance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMetric {
    /// The norm of the Lipschitz class.
    #[default]
    Analysis,
    /// `sqrt(v' S^{-1} v)` with `S` the sample covariance of the covariates.
    Mahalanobis,
}

impl std::str::FromStr for VarianceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "analysis" => Ok(VarianceMetric::Analysis),
            "mahalanobis" => Ok(VarianceMetric::Mahalanobis),
            other => Err(Error::InvalidParameter(format!("unknown variance metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// Per-observation estimates `u_i^2`.
    pub u2: Vec<f64>,
    /// Pooled `mean(u_i^2)`.
    pub sigma2: f64,
    pub method: VarianceMethod,
    pub norm: NormSpec,
    /// Units whose smoothing window held only themselves (`u_i^2 = 0`).
    pub degenerate: Vec<usize>,
}

/// `S^{-1/2}` for the pooled sample covariance, as a `p = 2` norm. Directions
/// without variation are dropped.
pub fn mahalanobis_norm(sample: &Sample) -> Result<NormSpec> {
    let n = sample.len();
    let p = sample.dim();
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(sample.x(i)) {
            *m += x / n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let x = sample.x(i);
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n as f64 - 1.0).max(1.0);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
    let inv_sqrt = eig.eigenvalues.map(|l| if l > 1e-12 * top { 1.0 / l.sqrt() } else { 0.0 });
    let half = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    // symmetrize against rounding
    let sym = (&half + half.transpose()) * 0.5;
    let data: Vec<f64> = (0..p).flat_map(|r| (0..p).map(move |c| (r, c))).map(|(r, c)| sym[(r, c)]).collect();
    if p == 1 {
        return NormSpec::diagonal(vec![data[0]], Exponent::Two);
    }
    NormSpec::full(p, data)
}

fn same_arm(sample: &Sample) -> (Vec<usize>, Vec<usize>) {
    (sample.control_indices(), sample.treated_indices())
}

/// Nearest-neighbour variance estimates with `J` same-arm neighbours,
/// excluding the unit itself; ties go to the lower sample index.
pub fn nn_variance(sample: &Sample, j: usize, norm: &NormSpec) -> Result<VarianceEstimate> {
    let y = sample.outcomes_required()?;
    if j == 0 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    let (c, t) = same_arm(sample);
    for (arm, idx) in [("control", &c), ("treated", &t)] {
        if idx.len() <= j {
            return Err(Error::ArmTooSmall {
                arm,
                size: idx.len(),
                needed: j + 1,
            });
        }
    }
    let cov = ScaledCovariates::with_norm(sample, norm, &[]);
    let factor = j as f64 / (j as f64 + 1.0);
    let u2: Vec<f64> = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let arm = if sample.is_treated(i) { &t } else { &c };
            let mut cand: Vec<(f64, usize)> =
                arm.iter().filter(|&&k| k != i).map(|&k| (cov.rho(i, k), k)).collect();
            cand.select_nth_unstable_by(j - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let fhat = cand[..j].iter().map(|&(_, k)| y[k]).sum::<f64>() / j as f64;
            factor * (y[i] - fhat).powi(2)
        })
        .collect();
    let sigma2 = u2.iter().sum::<f64>() / u2.len() as f64;
    Ok(VarianceEstimate {
        u2,
        sigma2,
        method: VarianceMethod::NearestNeighbor { j },
        norm: norm.clone(),
        degenerate: Vec::new(),
    })
}

/// Uniform-kernel variance estimates: `(y_i - fhat_i)^2` with `fhat_i` the mean
/// of same-arm outcomes within `bandwidth` of `x_i`. Unit `i` is left out of
/// its own window whenever the window holds at least two units.
pub fn nw_variance(sample: &Sample, bandwidth: f64, norm: &NormSpec) -> Result<VarianceEstimate> {
    let y = sample.outcomes_required()?;
    let (c, t) = same_arm(sample);
    let cov = ScaledCovariates::with_norm(sample, norm, &[]);
    let rows: Vec<std::result::Result<(f64, bool), usize>> = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let arm = if sample.is_treated(i) { &t } else { &c };
            let window: Vec<usize> = arm.iter().copied().filter(|&k| cov.rho(i, k) <= bandwidth).collect();
            if window.is_empty() {
                return Err(i);
            }
            let others: Vec<usize> = window.iter().copied().filter(|&k| k != i).collect();
            let (used, degenerate) = if window.len() >= 2 && !others.is_empty() {
                (others, false)
            } else {
                (window, true)
            };
            let fhat = used.iter().map(|&k| y[k]).sum::<f64>() / used.len() as f64;
            Ok(((y[i] - fhat).powi(2), degenerate))
        })
        .collect();
    let mut u2 = Vec::with_capacity(rows.len());
    let mut degenerate = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        let (v, deg) = r.map_err(|index| Error::EmptyWindow { index })?;
        if deg {
            degenerate.push(i);
        }
        u2.push(v);
    }
    let sigma2 = u2.iter().sum::<f64>() / u2.len() as f64;
    Ok(VarianceEstimate {
        u2,
        sigma2,
        method: VarianceMethod::NadarayaWatson { bandwidth },
        norm: norm.clone(),
        degenerate,
    })
}

pub fn estimate_variance(sample: &Sample, method: VarianceMethod, norm: &NormSpec) -> Result<VarianceEstimate> {
    match method {
        VarianceMethod::NearestNeighbor { j } => nn_variance(sample, j, norm),
        VarianceMethod::NadarayaWatson { bandwidth } => nw_variance(sample, bandwidth, norm),
    }
}

/// `sqrt(sum k_i^2 u_i^2)`.
pub fn robust_se(weights: &[f64], u2: &[f64]) -> Result<f64> {
    if weights.len() != u2.len() {
        return Err(Error::LengthMismatch {
            what: "variance estimates",
            expected: weights.len(),
            found: u2.len(),
        });
    }
    Ok(weights.iter().zip(u2).map(|(k, u)| k * k * u).sum::<f64>().sqrt())
}

/// `max_i k_i^2 / sum_j k_j^2`.
pub fn lindeberg_ratio(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().map(|k| k * k).sum();
    let max = weights.iter().fold(0.0_f64, |m, k| m.max(k * k));
    if sum > 0.0 {
        max / sum
    } else {
        f64::NAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(xs: &[f64], d: &[bool], y: &[f64]) -> Sample {
        Sample::new(xs.iter().map(|&x| vec![x]).collect(), d.to_vec(), Some(y.to_vec())).unwrap()
    }

    fn id() -> NormSpec {
        NormSpec::identity(1, Exponent::One)
    }

    #[test]
    fn nn_single_neighbour() {
        let s = sample(&[0.0, 1.0, 0.0, 5.0], &[false, false, true, true], &[1.0, 0.0, 2.0, 2.0]);
        let v = nn_variance(&s, 1, &id()).unwrap();
        assert_eq!(v.u2, vec![0.5, 0.5, 0.0, 0.0]);
        assert!((v.sigma2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn nn_three_equidistant() {
        let s = sample(
            &[0.0, -1.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0],
            &[false, false, false, false, true, true, true, true],
            &[4.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0],
        );
        let v = nn_variance(&s, 3, &id()).unwrap();
        assert!((v.u2[0] - 0.75 * (4.0f64 - 2.0).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn nn_arm_too_small() {
        let s = sample(&[0.0, 1.0], &[false, true], &[0.0, 1.0]);
        assert!(matches!(nn_variance(&s, 1, &id()), Err(Error::ArmTooSmall { .. })));
    }

    #[test]
    fn nw_windows() {
        let s = sample(&[0.0, 1.0, 0.0, 5.0], &[false, false, true, true], &[1.0, 3.0, 2.0, 4.0]);
        // h = 2: controls see each other, treated are alone
        let v = nw_variance(&s, 2.0, &id()).unwrap();
        assert_eq!(v.u2[0], 4.0);
        assert_eq!(v.u2[1], 4.0);
        assert_eq!(v.u2[2], 0.0);
        assert_eq!(v.degenerate, vec![2, 3]);
        // window covering the arm leaves the unit out: fhat is the other mean
        let v = nw_variance(&s, 100.0, &id()).unwrap();
        assert_eq!(v.u2[2], 4.0);
        assert!(matches!(nw_variance(&s, -1.0, &id()), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn se_and_lindeberg() {
        assert!((robust_se(&[-1.0, 1.0], &[1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(lindeberg_ratio(&[-1.0, 1.0]), 0.5);
        assert_eq!(lindeberg_ratio(&[0.0, 3.0]), 1.0);
    }

    #[test]
    fn mahalanobis_whitens() {
        let s = Sample::new(
            vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![1.0, 3.0], vec![4.0, 1.0]],
            vec![false, true, false, true],
            None,
        )
        .unwrap();
        let norm = mahalanobis_norm(&s).unwrap();
        // whitened sample covariance is the identity
        let mut z = vec![[0.0; 2]; 4];
        for (i, zi) in z.iter_mut().enumerate() {
            norm.scale_into(s.x(i), zi);
        }
        let m: Vec<f64> = (0..2).map(|a| z.iter().map(|r| r[a]).sum::<f64>() / 4.0).collect();
        for a in 0..2 {
            for b in 0..2 {
                let c: f64 = z.iter().map(|r| (r[a] - m[a]) * (r[b] - m[b])).sum::<f64>() / 3.0;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 1e-10, "{a}{b} {c}");
            }
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("nn:3".parse::<VarianceMethod>().unwrap(), VarianceMethod::NearestNeighbor { j: 3 });
        assert_eq!(
            "nw:0.5".parse::<VarianceMethod>().unwrap(),
            VarianceMethod::NadarayaWatson { bandwidth: 0.5 }
        );
        assert!("nn:0".parse::<VarianceMethod>().is_err());
        assert!("kernel".parse::<VarianceMethod>().is_err());
    }
}
