//! Estimators along the path: weights, worst-case bias, tuning, confidence
//! intervals and efficiency bounds.
//!
//! Path quantities live in the unit-Lipschitz scale. For a Lipschitz constant
//! `C` the estimator indexed by `mu` has `delta = 2 C sqrt(Q)`, standard
//! deviation `sqrt(Q) / mu` and worst-case bias `C (P - Q / mu)`, where
//! `Q = sum m^2 / sigma^2` and `P = sum w (m + r)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{cdf, critical_value, pdf, quantile};
use crate::path::{Segment, SolutionPath};

/// Where along the path an estimator sits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", content = "mu", rename_all = "snake_case")]
pub enum PathPoint {
    /// The `mu -> 0` limit (nearest-neighbour-like weights).
    Zero,
    Mu(f64),
    /// The `mu -> infinity` limit (difference in means).
    Infinity,
}

/// Scalars describing the estimator at one point of the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSummary {
    pub delta: f64,
    pub omega: f64,
    /// Standard deviation under the working variances.
    pub sd: f64,
    pub maxbias: f64,
}

impl SolutionPath {
    fn require_complete(&self) -> Result<()> {
        if self.complete {
            Ok(())
        } else {
            Err(Error::InvalidParameter("the path was truncated; trace it without mu_max".into()))
        }
    }

    /// `Q(mu) = sum m^2/sigma^2` in the unit scale.
    pub fn q_at(&self, mu: f64) -> f64 {
        self.segment_at(mu).q_at(mu)
    }

    /// `P(mu) = sum w (m + r)` in the unit scale.
    pub fn p_at(&self, mu: f64) -> f64 {
        self.segment_at(mu).p_at(mu)
    }

    /// `delta(mu)` for Lipschitz constant `c`.
    pub fn delta_at(&self, mu: f64, c: f64) -> f64 {
        2.0 * c * self.q_at(mu).sqrt()
    }

    /// The smallest `mu` with `delta(mu) = delta`.
    pub fn mu_for_delta(&self, delta: f64, c: f64) -> Result<f64> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be finite and non-negative, got {delta}")));
        }
        let target = (delta / (2.0 * c)).powi(2);
        let k = self
            .segments
            .partition_point(|s| s.q < target)
            .saturating_sub(1);
        let seg = &self.segments[k];
        let tau = solve_segment(seg, target);
        let mu = seg.mu + tau;
        if mu > self.valid_until {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta} lies beyond the traced part of the path"
            )));
        }
        Ok(mu)
    }

    /// Summary of the estimator at `point` for Lipschitz constant `c`.
    pub fn summary(&self, point: PathPoint, c: f64) -> Result<PointSummary> {
        match point {
            PathPoint::Zero => {
                let s = &self.segments[0];
                let sd = s.a.max(0.0).sqrt();
                Ok(PointSummary {
                    delta: 2.0 * c * s.q.max(0.0).sqrt(),
                    omega: 2.0 * c * s.p,
                    sd,
                    maxbias: c * s.p,
                })
            }
            PathPoint::Mu(mu) if mu > 0.0 => {
                if mu > self.valid_until {
                    return Err(Error::InvalidParameter(format!("mu = {mu} is beyond the traced path")));
                }
                let s = self.segment_at(mu);
                let q = s.q_at(mu);
                let p = s.p_at(mu);
                Ok(PointSummary {
                    delta: 2.0 * c * q.sqrt(),
                    omega: 2.0 * c * p,
                    sd: q.sqrt() / mu,
                    maxbias: c * (p - q / mu),
                })
            }
            PathPoint::Mu(_) => self.summary(PathPoint::Zero, c),
            PathPoint::Infinity => {
                self.require_complete()?;
                let s = self.segments.last().unwrap();
                Ok(PointSummary {
                    delta: f64::INFINITY,
                    omega: f64::INFINITY,
                    sd: s.a.max(0.0).sqrt(),
                    maxbias: c * (s.p - 2.0 * s.b + s.a * s.mu),
                })
            }
        }
    }

    /// Sample positions of treated units as a mask.
    pub fn treated_mask(&self) -> Vec<bool> {
        let mut d = vec![false; self.n];
        for &i in &self.treated {
            d[i] = true;
        }
        d
    }

    /// Working variances by sample position.
    pub fn unit_sigma2(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for g in &self.control_groups {
            for &j in &g.members {
                v[self.controls[j]] = g.sigma2;
            }
        }
        for g in &self.treated_groups {
            for &i in &g.members {
                v[self.treated[i]] = g.sigma2;
            }
        }
        v
    }

    /// Target weights by sample position.
    pub fn unit_weights(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for g in &self.control_groups {
            for &j in &g.members {
                v[self.controls[j]] = g.weight;
            }
        }
        for g in &self.treated_groups {
            for &i in &g.members {
                v[self.treated[i]] = g.weight;
            }
        }
        v
    }
}

/// `tau >= 0` with `q + 2 b tau + a tau^2 = target`, for `target >= q`.
fn solve_segment(seg: &Segment, target: f64) -> f64 {
    let need = (target - seg.q).max(0.0);
    if need == 0.0 {
        return 0.0;
    }
    let disc = (seg.b * seg.b + seg.a * need).max(0.0).sqrt();
    let den = seg.b + disc;
    if den > 0.0 {
        need / den
    } else {
        0.0
    }
}

/// `k_i = (2d_i - 1) g_i / sum_{treated} g_j` with `g_i = m_i / sigma_i^2`.
fn normalized_weights(m: &[f64], sigma2: &[f64], treated: &[bool]) -> Result<Vec<f64>> {
    let norm: f64 = (0..m.len())
        .filter(|&i| treated[i])
        .map(|i| m[i] / sigma2[i])
        .sum();
    if !(norm.abs() > 1e-300) {
        return Err(Error::DegenerateNormalizer);
    }
    Ok((0..m.len())
        .map(|i| {
            let s = if treated[i] { 1.0 } else { -1.0 };
            s * m[i] / sigma2[i] / norm
        })
        .collect())
}

/// Estimator weights at `mu > 0`. `mu = 0` has a zero normalizer; use
/// [`weights_at_point`] with [`PathPoint::Zero`] for the limit.
pub fn weights_at(path: &SolutionPath, mu: f64) -> Result<Vec<f64>> {
    if mu <= 0.0 {
        return Err(Error::DegenerateNormalizer);
    }
    let m = path.m_at(mu)?;
    normalized_weights(&m, &path.unit_sigma2(), &path.treated_mask())
}

/// Weights from the multipliers: treated `w + sum Lambda1 / mu`, controls
/// `-(w + sum Lambda0 / mu)`. Agrees with [`weights_at`] on the path.
pub fn weights_from_multipliers(path: &SolutionPath, mu: f64) -> Result<Vec<f64>> {
    if mu <= 0.0 {
        return Err(Error::DegenerateNormalizer);
    }
    let st = path.state_at(mu)?;
    let w = path.unit_weights();
    let mut k: Vec<f64> = (0..path.n).map(|i| w[i]).collect();
    for l in &st.lambda1 {
        k[path.treated[l.treated]] += l.value / mu;
    }
    for l in &st.lambda0 {
        k[path.controls[l.control]] += l.value / mu;
    }
    let d = path.treated_mask();
    for (i, v) in k.iter_mut().enumerate() {
        if !d[i] {
            *v = -*v;
        }
    }
    Ok(k)
}

/// Weights at a point of the path, including both limits.
pub fn weights_at_point(path: &SolutionPath, point: PathPoint) -> Result<Vec<f64>> {
    let sig = path.unit_sigma2();
    let d = path.treated_mask();
    match point {
        PathPoint::Mu(mu) if mu > 0.0 => weights_at(path, mu),
        PathPoint::Zero | PathPoint::Mu(_) => normalized_weights(&path.dm_at(0.0)?, &sig, &d),
        PathPoint::Infinity => {
            path.require_complete()?;
            normalized_weights(&path.terminal_dm()?, &sig, &d)
        }
    }
}

/// The criterion used to pick `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Worst-case root mean squared error.
    Rmse,
    /// Length of the fixed-length confidence interval.
    Flci,
    /// beta-quantile of excess length of the one-sided interval.
    Oci,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmse" => Ok(Criterion::Rmse),
            "flci" => Ok(Criterion::Flci),
            "oci" | "one-sided" | "onesided" => Ok(Criterion::Oci),
            other => Err(Error::InvalidParameter(format!("unknown criterion {other:?}"))),
        }
    }
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Rmse => "rmse",
            Criterion::Flci => "flci",
            Criterion::Oci => "oci",
        }
    }
}

/// Coverage and power levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Levels {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.8,
        }
    }
}

impl Levels {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// The criterion value of an estimator with worst-case bias `bias` and
/// standard deviation `sd`.
pub fn criterion(kind: Criterion, bias: f64, sd: f64, levels: Levels) -> f64 {
    match kind {
        Criterion::Rmse => bias.hypot(sd),
        Criterion::Flci => {
            if sd > 0.0 {
                2.0 * critical_value(bias / sd, levels.alpha) * sd
            } else {
                2.0 * bias
            }
        }
        Criterion::Oci => 2.0 * bias + sd * (quantile(1.0 - levels.alpha) + quantile(levels.beta)),
    }
}

/// Result of tuning along the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuned {
    pub point: PathPoint,
    pub summary: PointSummary,
    pub value: f64,
}

fn eval_point(path: &SolutionPath, point: PathPoint, c: f64, kind: Criterion, levels: Levels) -> Result<f64> {
    let s = path.summary(point, c)?;
    Ok(criterion(kind, s.maxbias, s.sd, levels))
}

/// Picks the estimator along the path that minimizes `kind`.
///
/// RMSE and FLCI length are minimized over every segment (sampling, then a
/// golden-section refinement around the best sample); the one-sided
/// criterion is optimized in closed form at `delta = z_beta + z_{1-alpha}`.
/// Ties go to the smallest `mu`.
pub fn tune(path: &SolutionPath, c: f64, kind: Criterion, levels: Levels) -> Result<Tuned> {
    levels.validate()?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("C must be positive, got {c}")));
    }
    path.require_complete()?;
    if kind == Criterion::Oci {
        let delta = quantile(levels.beta) + quantile(1.0 - levels.alpha);
        let mu = path.mu_for_delta(delta, c)?;
        let point = PathPoint::Mu(mu);
        let summary = path.summary(point, c)?;
        return Ok(Tuned {
            point,
            summary,
            value: criterion(kind, summary.maxbias, summary.sd, levels),
        });
    }

    // parametrize the whole half-line by x in [0, K + 1]: segment k maps
    // x in [k, k+1] linearly onto [mu_k, mu_{k+1}], and the terminal segment
    // uses mu = mu_K + scale * t / (1 - t)
    let mus = path.knot_mus();
    let kk = mus.len() - 1;
    let scale = mus.iter().copied().filter(|&m| m > 0.0).fold(f64::INFINITY, f64::min);
    let scale = if scale.is_finite() { scale.max(mus[kk] * 0.25) } else { 1.0 };
    let to_point = |x: f64| -> PathPoint {
        if x <= 0.0 {
            return PathPoint::Zero;
        }
        let k = (x.floor() as usize).min(kk);
        let t = x - k as f64;
        if k < kk {
            PathPoint::Mu(mus[k] + t * (mus[k + 1] - mus[k]))
        } else if t >= 1.0 {
            PathPoint::Infinity
        } else {
            PathPoint::Mu(mus[kk] + scale * t / (1.0 - t))
        }
    };
    let f = |x: f64| eval_point(path, to_point(x), c, kind, levels);

    let per_seg = 8usize;
    let total = (kk + 1) * per_seg;
    let mut best_x = 0.0;
    let mut best_v = f(0.0)?;
    for i in 1..=total {
        let x = i as f64 / per_seg as f64;
        let v = f(x)?;
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    let h = 1.0 / per_seg as f64;
    let (mut a, mut b) = ((best_x - h).max(0.0), (best_x + h).min((kk + 1) as f64));
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - gr * (b - a);
    let mut x2 = a + gr * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..200 {
        if (b - a) < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = f(x2)?;
        }
    }
    let (gx, gv) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let (x, value) = if gv < best_v { (gx, gv) } else { (best_x, best_v) };
    let point = to_point(x);
    Ok(Tuned {
        point,
        summary: path.summary(point, c)?,
        value,
    })
}

/// Confidence interval shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    /// `estimate +- cv_alpha(bias/se) se`.
    FixedLength,
    /// `[estimate - bias - z_{1-alpha} se, inf)`.
    Lower,
    /// `(-inf, estimate + bias + z_{1-alpha} se]`.
    Upper,
}

/// A bias-aware confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HonestCi {
    pub kind: CiKind,
    pub estimate: f64,
    pub maxbias: f64,
    pub se: f64,
    /// The critical value multiplying `se` (`cv_alpha(bias/se)` or `z_{1-alpha}`).
    pub cv: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl HonestCi {
    pub fn half_length(&self) -> Option<f64> {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => Some(0.5 * (u - l)),
            _ => None,
        }
    }
}

pub fn build_ci(estimate: f64, se: f64, maxbias: f64, alpha: f64, kind: CiKind) -> Result<HonestCi> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(se >= 0.0) || !(maxbias >= 0.0) {
        return Err(Error::InvalidParameter("se and maxbias must be non-negative".into()));
    }
    let (cv, lower, upper) = match kind {
        CiKind::FixedLength => {
            let cv = if se > 0.0 {
                critical_value(maxbias / se, alpha)
            } else {
                0.0
            };
            let hl = if se > 0.0 { cv * se } else { maxbias };
            (cv, Some(estimate - hl), Some(estimate + hl))
        }
        CiKind::Lower => {
            let z = quantile(1.0 - alpha);
            (z, Some(estimate - maxbias - z * se), None)
        }
        CiKind::Upper => {
            let z = quantile(1.0 - alpha);
            (z, None, Some(estimate + maxbias + z * se))
        }
    };
    Ok(HonestCi {
        kind,
        estimate,
        maxbias,
        se,
        cv,
        lower,
        upper,
    })
}

/// A modulus of continuity `omega(delta)` with derivative.
pub trait Modulus {
    fn omega(&self, delta: f64) -> Result<f64>;
    fn omega_prime(&self, delta: f64) -> Result<f64>;
}

/// The modulus traced by a path for Lipschitz constant `c`.
#[derive(Debug, Clone, Copy)]
pub struct PathModulus<'a> {
    pub path: &'a SolutionPath,
    pub c: f64,
}

impl Modulus for PathModulus<'_> {
    fn omega(&self, delta: f64) -> Result<f64> {
        let mu = self.path.mu_for_delta(delta, self.c)?;
        Ok(2.0 * self.c * self.path.p_at(mu))
    }

    fn omega_prime(&self, delta: f64) -> Result<f64> {
        if delta == 0.0 {
            return Ok(self.path.summary(PathPoint::Zero, self.c)?.sd);
        }
        let mu = self.path.mu_for_delta(delta, self.c)?;
        Ok(self.path.summary(PathPoint::Mu(mu), self.c)?.sd)
    }
}

/// `omega(delta) = slope * delta + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct AffineModulus {
    pub slope: f64,
    pub intercept: f64,
}

impl Modulus for AffineModulus {
    fn omega(&self, delta: f64) -> Result<f64> {
        Ok(self.intercept + self.slope * delta)
    }

    fn omega_prime(&self, _delta: f64) -> Result<f64> {
        Ok(self.slope)
    }
}

/// One-sided efficiency: `omega(2 delta) / (omega(delta) + delta omega'(delta))`
/// at `delta = z_beta + z_{1-alpha}`.
pub fn one_sided_efficiency(m: &impl Modulus, levels: Levels) -> Result<f64> {
    let delta = quantile(levels.beta) + quantile(1.0 - levels.alpha);
    Ok(m.omega(2.0 * delta)? / (m.omega(delta)? + delta * m.omega_prime(delta)?))
}

/// Lower bound on expected length at `f = 0` of any interval with coverage
/// `1 - alpha`: `int_{-inf}^{z_{1-alpha}} omega(2 (z_{1-alpha} - t)) phi(t) dt`,
/// truncated below at `-8`.
pub fn expected_length_bound(m: &impl Modulus, alpha: f64) -> Result<f64> {
    let z = quantile(1.0 - alpha);
    let mut err = None;
    let mut g = |t: f64| match m.omega(2.0 * (z - t)) {
        Ok(w) => w * pdf(t),
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let v = adaptive_simpson(&mut g, -8.0, z, 1e-11, 50);
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

fn adaptive_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// FLCI efficiency given the length of the shortest fixed-length interval.
pub fn flci_efficiency(m: &impl Modulus, alpha: f64, min_flci_length: f64) -> Result<f64> {
    Ok(expected_length_bound(m, alpha)? / min_flci_length)
}

/// Efficiency bounds of the optimal one-sided and fixed-length intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBounds {
    pub one_sided: f64,
    pub flci: f64,
}

pub fn efficiency_bounds(path: &SolutionPath, c: f64, levels: Levels) -> Result<EfficiencyBounds> {
    let m = PathModulus { path, c };
    let flci_len = tune(path, c, Criterion::Flci, levels)?.value;
    Ok(EfficiencyBounds {
        one_sided: one_sided_efficiency(&m, levels)?,
        flci: flci_efficiency(&m, levels.alpha, flci_len)?,
    })
}

/// The FLCI efficiency when the modulus is linear:
/// `((1 - alpha) z_{1-alpha} + phi(z_{1-alpha})) / z_{1-alpha/2}`.
pub fn linear_modulus_flci_efficiency(alpha: f64) -> f64 {
    let z = quantile(1.0 - alpha);
    ((1.0 - alpha) * z + pdf(z)) / quantile(1.0 - alpha / 2.0)
}

/// Universal lower bound on FLCI efficiency over centrosymmetric classes:
/// `(z (1 - alpha) - zt Phi(zt) + phi(z) - phi(zt)) / z_{1-alpha/2}` with
/// `z = z_{1-alpha}` and `zt = z - z_{1-alpha/2}`.
pub fn flci_efficiency_lower_bound(alpha: f64) -> f64 {
    let z = quantile(1.0 - alpha);
    let za2 = quantile(1.0 - alpha / 2.0);
    let zt = z - za2;
    (z * (1.0 - alpha) - zt * cdf(zt) + pdf(z) - pdf(zt)) / za2
}
