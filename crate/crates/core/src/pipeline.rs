//! The feasible procedure: a working homoskedastic variance from
//! nearest-neighbour or kernel residuals, one path traced under it, estimators
//! tuned along the path, and heteroskedasticity-robust intervals.

use serde::{Deserialize, Serialize};

use crate::alt_estimators::{difference_in_means, matching_weights, worst_case_bias_lp, TiePolicy};
use crate::data::{LipschitzSpec, Sample, TargetKind, TargetWeights, VarianceSpec};
use crate::error::{Error, Result};
use crate::estimator::{build_ci, tune, weights_at_point, CiKind, Criterion, HonestCi, Levels, PathPoint};
use crate::geometry::{cross_distances, DistanceMatrices};
use crate::path::{trace_path, PathOptions, SolutionPath};
use crate::variance::{
    estimate_variance, lindeberg_ratio, mahalanobis_norm, robust_se, VarianceEstimate, VarianceMethod,
    VarianceMetric,
};

/// Where a set of weights came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// A point of the optimal path, possibly picked by a criterion.
    Optimal {
        criterion: Option<Criterion>,
        point: PathPoint,
        delta: f64,
    },
    Matching {
        m: usize,
    },
    DifferenceInMeans,
    /// Weights given by the caller.
    Supplied,
}

/// A linear estimator `sum k_i y_i` with its worst-case bias, both standard
/// errors and bias-aware intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimate {
    pub provenance: Provenance,
    pub c: f64,
    pub estimate: f64,
    pub maxbias: f64,
    /// `sqrt(sigma2 sum k^2)` under the working variance.
    pub sd_homoskedastic: f64,
    /// `sqrt(sum k^2 u^2)`.
    pub se_robust: f64,
    /// `cv_alpha(maxbias / se_robust)`.
    pub cv: f64,
    pub flci: HonestCi,
    pub lower: HonestCi,
    pub upper: HonestCi,
    pub lindeberg: f64,
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl LinearEstimate {
    /// Assembles the inference quantities for fixed weights and bias.
    pub fn assemble(
        provenance: Provenance,
        c: f64,
        weights: Vec<f64>,
        y: &[f64],
        maxbias: f64,
        variance: &VarianceEstimate,
        alpha: f64,
    ) -> Result<Self> {
        if weights.len() != y.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: y.len(),
                found: weights.len(),
            });
        }
        let estimate: f64 = weights.iter().zip(y).map(|(k, v)| k * v).sum();
        let ssq: f64 = weights.iter().map(|k| k * k).sum();
        let sd_homoskedastic = (variance.sigma2 * ssq).sqrt();
        let se_robust = robust_se(&weights, &variance.u2)?;
        let maxbias = maxbias.max(0.0);
        let flci = build_ci(estimate, se_robust, maxbias, alpha, CiKind::FixedLength)?;
        let lower = build_ci(estimate, se_robust, maxbias, alpha, CiKind::Lower)?;
        let upper = build_ci(estimate, se_robust, maxbias, alpha, CiKind::Upper)?;
        Ok(Self {
            provenance,
            c,
            estimate,
            maxbias,
            sd_homoskedastic,
            se_robust,
            cv: flci.cv,
            flci,
            lower,
            upper,
            lindeberg: lindeberg_ratio(&weights),
            weights,
        })
    }
}

/// Settings shared by every step of the procedure.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub target: TargetKind,
    pub variance: VarianceMethod,
    pub metric: VarianceMetric,
    pub levels: Levels,
    pub path: PathOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target: TargetKind::Catt,
            variance: VarianceMethod::NearestNeighbor { j: 3 },
            metric: VarianceMetric::Analysis,
            levels: Levels::default(),
            path: PathOptions::default(),
        }
    }
}

/// Residual variances under the chosen metric.
pub fn working_variance(
    sample: &Sample,
    lipschitz: &LipschitzSpec,
    method: VarianceMethod,
    metric: VarianceMetric,
) -> Result<VarianceEstimate> {
    let norm = match metric {
        VarianceMetric::Analysis => lipschitz.norm.clone(),
        VarianceMetric::Mahalanobis => mahalanobis_norm(sample)?,
    };
    estimate_variance(sample, method, &norm)
}

/// Everything that does not depend on `C`: distances, the variance estimate
/// and the path under the homoskedastic working variance.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub lipschitz: LipschitzSpec,
    pub target: TargetWeights,
    pub distances: DistanceMatrices,
    pub variance: VarianceEstimate,
    pub path: Option<SolutionPath>,
}

/// Runs the `C`-free part of the procedure. `lipschitz.c` is ignored here.
pub fn prepare(sample: &Sample, lipschitz: &LipschitzSpec, config: &PipelineConfig) -> Result<Prepared> {
    let mut p = prepare_data(sample, lipschitz, config)?;
    p.trace(sample, &config.path)?;
    Ok(p)
}

/// Like [`prepare`] without tracing the path.
pub fn prepare_data(sample: &Sample, lipschitz: &LipschitzSpec, config: &PipelineConfig) -> Result<Prepared> {
    sample.outcomes_required()?;
    let variance = working_variance(sample, lipschitz, config.variance, config.metric)?;
    Prepared::from_parts(sample, lipschitz, config.target, variance, None)
}

impl Prepared {
    /// Reassembles a prepared state from a stored variance estimate and path.
    pub fn from_parts(
        sample: &Sample,
        lipschitz: &LipschitzSpec,
        target: TargetKind,
        variance: VarianceEstimate,
        path: Option<SolutionPath>,
    ) -> Result<Self> {
        lipschitz.check_sample(sample)?;
        if variance.u2.len() != sample.len() {
            return Err(Error::LengthMismatch {
                what: "variance estimates",
                expected: sample.len(),
                found: variance.u2.len(),
            });
        }
        if !(variance.sigma2 > 0.0) {
            return Err(Error::InvalidParameter("the working variance is zero".into()));
        }
        let distances = cross_distances(sample, lipschitz)?;
        let path = match path {
            Some(mut p) => {
                p.attach_distances(&distances)?;
                Some(p)
            }
            None => None,
        };
        Ok(Self {
            lipschitz: lipschitz.clone(),
            target: TargetWeights::new(sample, target),
            distances,
            variance,
            path,
        })
    }

    /// Traces the path under the pooled working variance.
    pub fn trace(&mut self, sample: &Sample, opts: &PathOptions) -> Result<&SolutionPath> {
        let path = trace_path(
            sample,
            &self.distances,
            &VarianceSpec::homoskedastic(self.variance.sigma2)?,
            &self.target,
            opts,
        )?;
        Ok(self.path.insert(path))
    }

    pub fn path(&self) -> Result<&SolutionPath> {
        self.path
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("the solution path has not been traced".into()))
    }
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("C must be positive and finite, got {c}")));
    }
    Ok(())
}

impl Prepared {
    /// The path estimator at `point` for Lipschitz constant `c`.
    pub fn at_point(
        &self,
        sample: &Sample,
        c: f64,
        point: PathPoint,
        criterion: Option<Criterion>,
        alpha: f64,
    ) -> Result<LinearEstimate> {
        check_c(c)?;
        let path = self.path()?;
        let s = path.summary(point, c)?;
        let weights = weights_at_point(path, point)?;
        LinearEstimate::assemble(
            Provenance::Optimal {
                criterion,
                point,
                delta: s.delta,
            },
            c,
            weights,
            sample.outcomes_required()?,
            s.maxbias,
            &self.variance,
            alpha,
        )
    }

    /// The path estimator minimizing `criterion` under the working variance.
    pub fn optimal(&self, sample: &Sample, c: f64, criterion: Criterion, levels: Levels) -> Result<LinearEstimate> {
        check_c(c)?;
        let t = tune(self.path()?, c, criterion, levels)?;
        self.at_point(sample, c, t.point, Some(criterion), levels.alpha)
    }

    /// The matching estimator with `m` matches, its bias from the exact LP.
    pub fn matching(&self, sample: &Sample, c: f64, m: usize, ties: TiePolicy, alpha: f64) -> Result<LinearEstimate> {
        check_c(c)?;
        let weights = matching_weights(sample, &self.distances, m, &self.target, ties)?;
        let spec = LipschitzSpec {
            c,
            ..self.lipschitz.clone()
        };
        let maxbias = worst_case_bias_lp(&weights, sample, &spec, &self.target)?;
        LinearEstimate::assemble(
            Provenance::Matching { m },
            c,
            weights,
            sample.outcomes_required()?,
            maxbias,
            &self.variance,
            alpha,
        )
    }

    /// Difference in means, with its bias from the exact LP.
    pub fn difference_in_means(&self, sample: &Sample, c: f64, alpha: f64) -> Result<LinearEstimate> {
        check_c(c)?;
        let weights = difference_in_means(sample);
        let spec = LipschitzSpec {
            c,
            ..self.lipschitz.clone()
        };
        let maxbias = worst_case_bias_lp(&weights, sample, &spec, &self.target)?;
        LinearEstimate::assemble(
            Provenance::DifferenceInMeans,
            c,
            weights,
            sample.outcomes_required()?,
            maxbias,
            &self.variance,
            alpha,
        )
    }

    /// Bias-aware inference for caller-supplied weights.
    pub fn audit(&self, sample: &Sample, c: f64, weights: Vec<f64>, alpha: f64) -> Result<LinearEstimate> {
        check_c(c)?;
        if weights.len() != sample.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: sample.len(),
                found: weights.len(),
            });
        }
        let spec = LipschitzSpec {
            c,
            ..self.lipschitz.clone()
        };
        let maxbias = worst_case_bias_lp(&weights, sample, &spec, &self.target)?;
        LinearEstimate::assemble(
            Provenance::Supplied,
            c,
            weights,
            sample.outcomes_required()?,
            maxbias,
            &self.variance,
            alpha,
        )
    }

    /// Matching fits for every `m` in range, with the best one under
    /// `criterion` (homoskedastic working sd); ties go to the smallest `m`.
    pub fn tune_matching(
        &self,
        sample: &Sample,
        c: f64,
        m_range: std::ops::RangeInclusive<usize>,
        criterion: Criterion,
        ties: TiePolicy,
        levels: Levels,
    ) -> Result<(LinearEstimate, Vec<LinearEstimate>)> {
        let mut fits = Vec::new();
        for m in m_range {
            match self.matching(sample, c, m, ties, levels.alpha) {
                Ok(f) => fits.push(f),
                Err(Error::TooFewOpposite { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        let value = |f: &LinearEstimate| crate::estimator::criterion(criterion, f.maxbias, f.sd_homoskedastic, levels);
        let best = fits
            .iter()
            .fold(None::<&LinearEstimate>, |b, f| match b {
                Some(b) if value(b) <= value(f) => Some(b),
                _ => Some(f),
            })
            .cloned()
            .ok_or_else(|| Error::InvalidParameter("empty range of match counts".into()))?;
        Ok((best, fits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Exponent, NormSpec};

    #[test]
    fn two_point_rows() {
        let sample = Sample::new(vec![vec![0.0], vec![1.0]], vec![false, true], Some(vec![1.0, 4.0])).unwrap();
        let spec = LipschitzSpec::new(1.0, NormSpec::identity(1, Exponent::One)).unwrap();
        let mut var = VarianceEstimate {
            u2: vec![1.0, 1.0],
            sigma2: 1.0,
            method: VarianceMethod::NearestNeighbor { j: 1 },
            norm: spec.norm.clone(),
            degenerate: Vec::new(),
        };
        let est = LinearEstimate::assemble(
            Provenance::DifferenceInMeans,
            1.0,
            difference_in_means(&sample),
            sample.outcomes().unwrap(),
            1.0,
            &var,
            0.05,
        )
        .unwrap();
        assert_eq!(est.estimate, 3.0);
        assert!((est.se_robust - 2f64.sqrt()).abs() < 1e-15);
        assert!((est.sd_homoskedastic - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(est.lindeberg, 0.5);
        var.u2 = vec![0.0, 2.0];
        let est = LinearEstimate::assemble(
            Provenance::DifferenceInMeans,
            1.0,
            difference_in_means(&sample),
            sample.outcomes().unwrap(),
            1.0,
            &var,
            0.05,
        )
        .unwrap();
        assert!((est.se_robust - 2f64.sqrt()).abs() < 1e-15);
        assert!(est.flci.lower.unwrap() < 3.0 - 1.0);
    }
}
