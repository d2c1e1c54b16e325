//! Matching and difference-in-means estimators, and the worst-case bias of
//! arbitrary linear estimators.

pub mod lp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LipschitzSpec, Sample, TargetWeights, VarianceSpec};
use crate::error::{Error, Result};
use crate::estimator::{criterion, Criterion, Levels};
use crate::geometry::{DistanceMatrices, ScaledCovariates};
use lp::{dense_simplex_max, transport};

/// How equidistant candidates at the `M`-th match are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Keep the lowest-indexed candidates.
    #[default]
    Lowest,
    /// Share the remaining match slots evenly across all tied candidates.
    Average,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lowest" => Ok(TiePolicy::Lowest),
            "average" => Ok(TiePolicy::Average),
            other => Err(Error::InvalidParameter(format!("unknown tie policy {other:?}"))),
        }
    }
}

/// Match lists and usage counts for `M`-nearest-neighbour matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub m: usize,
    /// `K_M(i)`: how often unit `i` serves as a match (fractional under
    /// averaged ties), by sample position.
    pub k: Vec<f64>,
    /// Matches of each unit that needed them, as `(sample position, share)`
    /// with shares summing to one. Empty for units that were not matched.
    pub matches: Vec<Vec<(usize, f64)>>,
}

/// `M` nearest opposite-arm units of every unit with a positive target weight.
pub fn match_counts(
    sample: &Sample,
    distances: &DistanceMatrices,
    m: usize,
    target: &TargetWeights,
    ties: TiePolicy,
) -> Result<MatchCounts> {
    target.validate(sample)?;
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let n = sample.len();
    let mut local = vec![0usize; n];
    for (k, &i) in distances.treated.iter().enumerate() {
        local[i] = k;
    }
    for (k, &j) in distances.controls.iter().enumerate() {
        local[j] = k;
    }
    for i in 0..n {
        let avail = if sample.is_treated(i) { sample.n0() } else { sample.n1() };
        if target.weights[i] > 0.0 && m > avail {
            return Err(Error::TooFewOpposite { requested: m, available: avail });
        }
    }
    let matches: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if target.weights[i] <= 0.0 {
                return Vec::new();
            }
            let (opp, dist): (&[usize], Vec<f64>) = if sample.is_treated(i) {
                (&distances.controls, distances.d0_row(local[i]).to_vec())
            } else {
                let j = local[i];
                (&distances.treated, (0..distances.n1()).map(|t| distances.d0(t, j)).collect())
            };
            let mut idx: Vec<usize> = (0..opp.len()).collect();
            idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(opp[a].cmp(&opp[b])));
            let share = 1.0 / m as f64;
            match ties {
                TiePolicy::Lowest => idx[..m].iter().map(|&a| (opp[a], share)).collect(),
                TiePolicy::Average => {
                    let cut = dist[idx[m - 1]];
                    let tie = |d: f64| (d - cut).abs() <= 1e-12 * (1.0 + cut);
                    let closer = idx.iter().take_while(|&&a| dist[a] < cut && !tie(dist[a])).count();
                    let tied: Vec<usize> = idx[closer..].iter().copied().take_while(|&a| tie(dist[a])).collect();
                    let each = (m - closer) as f64 / (tied.len() as f64 * m as f64);
                    idx[..closer]
                        .iter()
                        .map(|&a| (opp[a], share))
                        .chain(tied.iter().map(|&a| (opp[a], each)))
                        .collect()
                }
            }
        })
        .collect();
    let mut k = vec![0.0; n];
    for list in &matches {
        for &(j, s) in list {
            k[j] += s * m as f64;
        }
    }
    Ok(MatchCounts { m, k, matches })
}

/// Matching estimator weights
/// `k_i = (2 d_i - 1) (w_i + sum_{j matched to i} w_j / M)`.
///
/// For the CATE this is `(2d_i - 1)(1 + K_M(i)/M)/n`; for the CATT treated
/// units keep `1/n_1` and control `j` gets `-K_M(j)/(M n_1)`.
pub fn matching_weights(
    sample: &Sample,
    distances: &DistanceMatrices,
    m: usize,
    target: &TargetWeights,
    ties: TiePolicy,
) -> Result<Vec<f64>> {
    let counts = match_counts(sample, distances, m, target, ties)?;
    let mut k = target.weights.clone();
    for (i, list) in counts.matches.iter().enumerate() {
        for &(j, s) in list {
            k[j] += target.weights[i] * s;
        }
    }
    for (i, v) in k.iter_mut().enumerate() {
        if !sample.is_treated(i) {
            *v = -*v;
        }
    }
    Ok(k)
}

/// `k_i = d_i / n_1 - (1 - d_i) / n_0`.
pub fn difference_in_means(sample: &Sample) -> Vec<f64> {
    let n1 = sample.n1() as f64;
    let n0 = sample.n0() as f64;
    sample
        .treated()
        .iter()
        .map(|&d| if d { 1.0 / n1 } else { -1.0 / n0 })
        .collect()
}

/// Standard deviation `sqrt(sum k_i^2 sigma_i^2)`.
pub fn weights_sd(weights: &[f64], sigma2: &[f64]) -> f64 {
    weights.iter().zip(sigma2).map(|(k, s)| k * k * s).sum::<f64>().sqrt()
}

/// Objective coefficients of the bias LP per arm:
/// `c1_i = d_i k_i - w_i` on `f(x_i, 1)` and `c0_i = (1 - d_i) k_i + w_i` on
/// `f(x_i, 0)`.
fn bias_coefficients(weights: &[f64], sample: &Sample, target: &TargetWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sample.len();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "estimator weights",
            expected: n,
            found: weights.len(),
        });
    }
    if let Some(i) = weights.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "estimator weights",
            index: i,
        });
    }
    target.validate(sample)?;
    let mut c1 = vec![0.0; n];
    let mut c0 = vec![0.0; n];
    let mut ts = 0.0;
    let mut cs = 0.0;
    for i in 0..n {
        let w = target.weights[i];
        if sample.is_treated(i) {
            c1[i] = weights[i] - w;
            ts += weights[i];
        } else {
            c1[i] = -w;
            cs += weights[i];
        }
        c0[i] = if sample.is_treated(i) { w } else { weights[i] + w };
    }
    let scale = weights.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    if (ts - 1.0).abs() > 1e-8 * scale || (cs + 1.0).abs() > 1e-8 * scale {
        return Err(Error::UnboundedBias {
            treated_sum: ts,
            control_sum: cs,
        });
    }
    Ok((c1, c0))
}

/// `max sum c_i f_i` over unit-Lipschitz `f` on the sample, as a
/// transportation problem. The optimum is checked against its dual.
fn arm_bias(c: &[f64], cov: &ScaledCovariates) -> Result<f64> {
    let scale = c.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let cut = 1e-14 * scale;
    let src: Vec<usize> = (0..c.len()).filter(|&i| c[i] > cut).collect();
    let snk: Vec<usize> = (0..c.len()).filter(|&i| c[i] < -cut).collect();
    let supply: Vec<f64> = src.iter().map(|&i| c[i]).collect();
    let demand: Vec<f64> = snk.iter().map(|&i| -c[i]).collect();
    if supply.is_empty() || demand.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<Vec<f64>> = src
        .par_iter()
        .map(|&i| snk.iter().map(|&j| cov.rho(i, j)).collect())
        .collect();
    let out = transport(&supply, &demand, |s, t| rows[s][t])?;
    let ns = src.len();
    let dual: f64 = supply
        .iter()
        .zip(&out.potentials[..ns])
        .map(|(a, u)| a * u)
        .sum::<f64>()
        - demand
            .iter()
            .zip(&out.potentials[ns..])
            .map(|(b, v)| b * v)
            .sum::<f64>();
    let total: f64 = supply.iter().sum();
    let dmax = rows.iter().flatten().fold(0.0_f64, |m, v| m.max(*v));
    let gap = (dual - out.cost).abs();
    if gap > 1e-9 * total * (1.0 + dmax) {
        return Err(Error::SolverStall {
            detail: "transportation duality gap".into(),
            gap,
        });
    }
    Ok(out.cost)
}

/// Worst-case bias of `sum k_i y_i` for the target over the Lipschitz class:
/// `C` times the sum over arms of
/// `max sum_i c_i f(x_i, d)` subject to `f(x_i, d) - f(x_j, d) <= rho(x_i - x_j)`.
pub fn worst_case_bias_lp(
    weights: &[f64],
    sample: &Sample,
    lipschitz: &LipschitzSpec,
    target: &TargetWeights,
) -> Result<f64> {
    let (c1, c0) = bias_coefficients(weights, sample, target)?;
    let cov = ScaledCovariates::new(sample, lipschitz)?;
    Ok(lipschitz.c * (arm_bias(&c1, &cov)? + arm_bias(&c0, &cov)?))
}

/// The same quantity from the primal LP over all `2n(n-1)` constraints, by the
/// dense simplex method. Meant for small `n` as a cross-check.
pub fn worst_case_bias_dense(
    weights: &[f64],
    sample: &Sample,
    lipschitz: &LipschitzSpec,
    target: &TargetWeights,
) -> Result<f64> {
    let n = sample.len();
    if n > 14 {
        return Err(Error::InvalidParameter("dense bias LP is limited to n <= 14".into()));
    }
    let cov = ScaledCovariates::new(sample, lipschitz)?;
    let (c1, c0) = bias_coefficients(weights, sample, target)?;
    // variables: f1+ f1- f0+ f0-, each length n
    let nv = 4 * n;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for arm in 0..2 {
        let base = 2 * n * arm;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut row = vec![0.0; nv];
                row[base + i] = 1.0;
                row[base + n + i] = -1.0;
                row[base + j] = -1.0;
                row[base + n + j] = 1.0;
                a.extend(row);
                b.push(cov.rho(i, j));
            }
        }
    }
    let mut obj = vec![0.0; nv];
    for i in 0..n {
        obj[i] = c1[i];
        obj[n + i] = -c1[i];
        obj[2 * n + i] = c0[i];
        obj[3 * n + i] = -c0[i];
    }
    match dense_simplex_max(&a, &b, &obj, b.len(), nv)? {
        Some((v, _)) => Ok(lipschitz.c * v),
        None => Err(Error::UnboundedBias {
            treated_sum: f64::NAN,
            control_sum: f64::NAN,
        }),
    }
}

/// One candidate in [`tune_matching`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingFit {
    pub m: usize,
    pub maxbias: f64,
    pub sd: f64,
    pub value: f64,
}

/// Picks the number of matches minimizing `kind`; ties go to the smallest `M`.
#[allow(clippy::too_many_arguments)]
pub fn tune_matching(
    sample: &Sample,
    distances: &DistanceMatrices,
    m_range: std::ops::RangeInclusive<usize>,
    kind: Criterion,
    variances: &VarianceSpec,
    lipschitz: &LipschitzSpec,
    target: &TargetWeights,
    levels: Levels,
    ties: TiePolicy,
) -> Result<(MatchingFit, Vec<MatchingFit>)> {
    levels.validate()?;
    let sigma2 = variances.expand(sample);
    let ms: Vec<usize> = m_range.collect();
    if ms.is_empty() {
        return Err(Error::InvalidParameter("empty range of M".into()));
    }
    let fits: Vec<MatchingFit> = ms
        .par_iter()
        .map(|&m| {
            let k = matching_weights(sample, distances, m, target, ties)?;
            let maxbias = worst_case_bias_lp(&k, sample, lipschitz, target)?;
            let sd = weights_sd(&k, &sigma2);
            Ok(MatchingFit {
                m,
                maxbias,
                sd,
                value: criterion(kind, maxbias, sd, levels),
            })
        })
        .collect::<Result<_>>()?;
    let best = fits
        .iter()
        .fold(None::<&MatchingFit>, |b, f| match b {
            Some(b) if b.value <= f.value => Some(b),
            _ => Some(f),
        })
        .cloned()
        .unwrap();
    Ok((best, fits))
}
