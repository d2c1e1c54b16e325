//! Samples, norms, smoothness classes, target weights and variance specs.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed design: covariates, treatment indicators and (optionally) outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    dim: usize,
    covariates: Vec<f64>,
    treated: Vec<bool>,
    outcomes: Option<Vec<f64>>,
}

impl Sample {
    /// Builds a validated sample from covariate rows.
    pub fn new(
        covariates: Vec<Vec<f64>>,
        treated: Vec<bool>,
        outcomes: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dim = covariates.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(covariates.len() * dim);
        for row in &covariates {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(dim, flat, treated, outcomes)
    }

    /// Builds a validated sample from row-major covariates with `dim` columns.
    pub fn from_flat(
        dim: usize,
        covariates: Vec<f64>,
        treated: Vec<bool>,
        outcomes: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = treated.len();
        if covariates.len() != n * dim {
            return Err(Error::LengthMismatch {
                what: "covariates",
                expected: n * dim,
                found: covariates.len(),
            });
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("covariate dimension must be positive".into()));
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "covariates",
                index: i / dim,
            });
        }
        if let Some(y) = &outcomes {
            if y.len() != n {
                return Err(Error::LengthMismatch {
                    what: "outcomes",
                    expected: n,
                    found: y.len(),
                });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "outcomes",
                    index: i,
                });
            }
        }
        let s = Self {
            dim,
            covariates,
            treated,
            outcomes,
        };
        if s.n1() == 0 {
            return Err(Error::EmptyArm { arm: "treated" });
        }
        if s.n0() == 0 {
            return Err(Error::EmptyArm { arm: "control" });
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.treated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treated.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treated[i]
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn outcomes(&self) -> Option<&[f64]> {
        self.outcomes.as_deref()
    }

    pub fn outcomes_required(&self) -> Result<&[f64]> {
        self.outcomes().ok_or(Error::MissingOutcomes)
    }

    pub fn with_outcomes(mut self, y: Vec<f64>) -> Result<Self> {
        self.outcomes = Some(y);
        Self::from_flat(self.dim, self.covariates, self.treated, self.outcomes)
    }

    pub fn n1(&self) -> usize {
        self.treated.iter().filter(|&&d| d).count()
    }

    pub fn n0(&self) -> usize {
        self.len() - self.n1()
    }

    /// Global indices of the treated units, in sample order.
    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treated[i]).collect()
    }

    /// Global indices of the control units, in sample order.
    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.treated[i]).collect()
    }
}

/// The exponent of the weighted norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exponent {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Infinity,
}

impl std::str::FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Exponent::One),
            "2" => Ok(Exponent::Two),
            "inf" | "infinity" | "Inf" => Ok(Exponent::Infinity),
            other => Err(Error::InvalidNorm(format!("unsupported exponent {other:?}"))),
        }
    }
}

/// The scaling matrix `A^{1/2}` applied before taking the p-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    Diagonal { diag: Vec<f64> },
    Full { dim: usize, data: Vec<f64> },
}

/// `||v||_{A,q} = ||A^{1/2} v||_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub scaling: Scaling,
    pub exponent: Exponent,
}

impl NormSpec {
    pub fn diagonal(diag: Vec<f64>, exponent: Exponent) -> Result<Self> {
        let n = Self {
            scaling: Scaling::Diagonal { diag },
            exponent,
        };
        n.validate()?;
        Ok(n)
    }

    /// A full symmetric PSD scaling matrix, given row-major. Only `q = 2`.
    pub fn full(dim: usize, data: Vec<f64>) -> Result<Self> {
        let n = Self {
            scaling: Scaling::Full { dim, data },
            exponent: Exponent::Two,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn identity(dim: usize, exponent: Exponent) -> Self {
        Self {
            scaling: Scaling::Diagonal {
                diag: vec![1.0; dim],
            },
            exponent,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.scaling {
            Scaling::Diagonal { diag } => diag.len(),
            Scaling::Full { dim, .. } => *dim,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.scaling, Scaling::Diagonal { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.scaling {
            Scaling::Diagonal { diag } => {
                if diag.is_empty() {
                    return Err(Error::InvalidNorm("empty scaling".into()));
                }
                if let Some(v) = diag.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(Error::InvalidNorm(format!("diagonal entry {v} is not a finite non-negative number")));
                }
            }
            Scaling::Full { dim, data } => {
                if self.exponent != Exponent::Two {
                    return Err(Error::InvalidNorm("a non-diagonal scaling requires q = 2".into()));
                }
                if *dim == 0 || data.len() != dim * dim {
                    return Err(Error::InvalidNorm("scaling matrix has the wrong size".into()));
                }
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidNorm("scaling matrix has non-finite entries".into()));
                }
                let m = DMatrix::from_row_slice(*dim, *dim, data);
                let scale = m.amax().max(1.0);
                if (&m - m.transpose()).amax() > 1e-10 * scale {
                    return Err(Error::InvalidNorm("scaling matrix is not symmetric".into()));
                }
                let eig = SymmetricEigen::new(m);
                if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
                    return Err(Error::InvalidNorm("scaling matrix is not positive semidefinite".into()));
                }
            }
        }
        Ok(())
    }

    /// `A^{1/2} v`, written into `out`.
    pub fn scale_into(&self, v: &[f64], out: &mut [f64]) {
        match &self.scaling {
            Scaling::Diagonal { diag } => {
                for ((o, a), x) in out.iter_mut().zip(diag).zip(v) {
                    *o = a * x;
                }
            }
            Scaling::Full { dim, data } => {
                for (r, o) in out.iter_mut().enumerate().take(*dim) {
                    *o = data[r * dim..(r + 1) * dim]
                        .iter()
                        .zip(v)
                        .map(|(a, x)| a * x)
                        .sum();
                }
            }
        }
    }
}

/// The Lipschitz class: constant `C`, the norm, and the monotone coordinates
/// (zero-based) along which the regression function is non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSpec {
    pub c: f64,
    pub norm: NormSpec,
    #[serde(default)]
    pub monotone: Vec<usize>,
}

impl LipschitzSpec {
    pub fn new(c: f64, norm: NormSpec) -> Result<Self> {
        Self::with_monotone(c, norm, Vec::new())
    }

    pub fn with_monotone(c: f64, norm: NormSpec, mut monotone: Vec<usize>) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be positive, got {c}")));
        }
        norm.validate()?;
        monotone.sort_unstable();
        monotone.dedup();
        if let Some(&k) = monotone.iter().find(|&&k| k >= norm.dim()) {
            return Err(Error::InvalidParameter(format!("monotone coordinate {k} out of range")));
        }
        if !monotone.is_empty() && !norm.is_diagonal() {
            return Err(Error::InvalidNorm("monotone restrictions need a diagonal scaling".into()));
        }
        Ok(Self { c, norm, monotone })
    }

    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        if self.norm.dim() != sample.dim() {
            return Err(Error::DimensionMismatch {
                expected: sample.dim(),
                found: self.norm.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Cate,
    Catt,
    Custom,
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cate" => Ok(TargetKind::Cate),
            "catt" => Ok(TargetKind::Catt),
            other => Err(Error::InvalidParameter(format!("unknown target {other:?}"))),
        }
    }
}

/// Weights `w_i` of the target `sum_i w_i (f(x_i,1) - f(x_i,0))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub kind: TargetKind,
    pub weights: Vec<f64>,
}

/// Per-arm weight levels for arm-constant targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmLevels {
    pub control: f64,
    pub treated: f64,
}

impl TargetWeights {
    pub fn new(sample: &Sample, kind: TargetKind) -> Self {
        let n = sample.len();
        let weights = match kind {
            TargetKind::Cate | TargetKind::Custom => vec![1.0 / n as f64; n],
            TargetKind::Catt => {
                let n1 = sample.n1() as f64;
                sample
                    .treated()
                    .iter()
                    .map(|&d| if d { 1.0 / n1 } else { 0.0 })
                    .collect()
            }
        };
        Self { kind, weights }
    }

    pub fn custom(sample: &Sample, weights: Vec<f64>) -> Result<Self> {
        let t = Self {
            kind: TargetKind::Custom,
            weights,
        };
        t.validate(sample)?;
        Ok(t)
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        if self.weights.len() != sample.len() {
            return Err(Error::LengthMismatch {
                what: "target weights",
                expected: sample.len(),
                found: self.weights.len(),
            });
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                what: "target weights",
                index: i,
            });
        }
        if let Some(i) = self.weights.iter().position(|&w| w < 0.0) {
            return Err(Error::NegativeWeight { index: i });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::WeightsSum { sum });
        }
        Ok(())
    }

    /// The common weight within each arm, if the weights are arm-constant.
    pub fn arm_levels(&self, sample: &Sample) -> Option<ArmLevels> {
        let mut c = None;
        let mut t = None;
        for (&w, &d) in self.weights.iter().zip(sample.treated()) {
            let slot = if d { &mut t } else { &mut c };
            match *slot {
                None => *slot = Some(w),
                Some(v) if (v - w).abs() <= 1e-12 * v.abs().max(1.0) => {}
                Some(_) => return None,
            }
        }
        Some(ArmLevels {
            control: c?,
            treated: t?,
        })
    }
}

/// Conditional variances `sigma^2(x_i, d_i)` used to build the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceSpec {
    Homoskedastic { sigma2: f64 },
    PerArm { control: f64, treated: f64 },
    PerObservation { sigma2: Vec<f64> },
}

impl VarianceSpec {
    pub fn homoskedastic(sigma2: f64) -> Result<Self> {
        let v = VarianceSpec::Homoskedastic { sigma2 };
        v.check_positive()?;
        Ok(v)
    }

    pub fn per_arm(control: f64, treated: f64) -> Result<Self> {
        let v = VarianceSpec::PerArm { control, treated };
        v.check_positive()?;
        Ok(v)
    }

    fn check_positive(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match self {
            VarianceSpec::Homoskedastic { sigma2 } => ok(*sigma2),
            VarianceSpec::PerArm { control, treated } => ok(*control) && ok(*treated),
            VarianceSpec::PerObservation { sigma2 } => sigma2.iter().all(|&v| ok(v)),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidParameter("variances must be finite and positive".into()))
        }
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        self.check_positive()?;
        if let VarianceSpec::PerObservation { sigma2 } = self {
            if sigma2.len() != sample.len() {
                return Err(Error::LengthMismatch {
                    what: "variances",
                    expected: sample.len(),
                    found: sigma2.len(),
                });
            }
        }
        Ok(())
    }

    /// `(control, treated)` variances when they are constant within arms.
    pub fn arm_variances(&self) -> Option<(f64, f64)> {
        match *self {
            VarianceSpec::Homoskedastic { sigma2 } => Some((sigma2, sigma2)),
            VarianceSpec::PerArm { control, treated } => Some((control, treated)),
            VarianceSpec::PerObservation { .. } => None,
        }
    }

    pub fn at(&self, i: usize, treated: bool) -> f64 {
        match self {
            VarianceSpec::Homoskedastic { sigma2 } => *sigma2,
            VarianceSpec::PerArm { control, treated: t } => {
                if treated {
                    *t
                } else {
                    *control
                }
            }
            VarianceSpec::PerObservation { sigma2 } => sigma2[i],
        }
    }

    /// Variances for every unit of `sample`.
    pub fn expand(&self, sample: &Sample) -> Vec<f64> {
        (0..sample.len())
            .map(|i| self.at(i, sample.is_treated(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Sample {
        Sample::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![false, true, false],
            Some(vec![1.0, 2.0, 3.0]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_arm() {
        let err = Sample::new(vec![vec![0.0], vec![1.0]], vec![true, true], None).unwrap_err();
        assert!(matches!(err, Error::EmptyArm { arm: "control" }));
    }

    #[test]
    fn rejects_nan_covariate() {
        let err = Sample::new(vec![vec![0.0], vec![f64::NAN]], vec![true, false], None).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = Sample::new(vec![vec![0.0, 1.0], vec![1.0]], vec![true, false], None).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn target_weights_sum_to_one() {
        let s = toy();
        for kind in [TargetKind::Cate, TargetKind::Catt] {
            let t = TargetWeights::new(&s, kind);
            t.validate(&s).unwrap();
            assert!(t.arm_levels(&s).is_some());
        }
        let catt = TargetWeights::new(&s, TargetKind::Catt);
        let lv = catt.arm_levels(&s).unwrap();
        assert_eq!(lv.control, 0.0);
        assert_eq!(lv.treated, 1.0);
    }

    #[test]
    fn custom_weights_can_be_heterogeneous() {
        let s = toy();
        let t = TargetWeights::custom(&s, vec![0.5, 0.25, 0.25]).unwrap();
        assert!(t.arm_levels(&s).is_none());
        assert!(TargetWeights::custom(&s, vec![0.5, 0.25, 0.5]).is_err());
    }

    #[test]
    fn full_scaling_must_be_psd() {
        assert!(NormSpec::full(2, vec![1.0, 0.5, 0.5, 1.0]).is_ok());
        assert!(NormSpec::full(2, vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(NormSpec::full(2, vec![1.0, 0.1, 0.0, 1.0]).is_err());
    }

    #[test]
    fn sample_roundtrips_through_json() {
        let s = toy();
        let js = serde_json::to_string(&s).unwrap();
        let back: Sample = serde_json::from_str(&js).unwrap();
        assert_eq!(s, back);
    }
}
