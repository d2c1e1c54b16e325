//! Dense reference solver for the modulus problem on the full constraint set.
//!
//! Every pairwise Lipschitz constraint is imposed on both regression
//! functions, own-arm and counterfactual values alike. Meant for small
//! samples: it checks the path and the reduced formulation independently.

use nalgebra::{DMatrix, DVector};

use crate::data::{LipschitzSpec, Sample, TargetWeights, VarianceSpec};
use crate::error::{Error, Result};
use crate::geometry::ScaledCovariates;

/// `min 0.5 z'Hz + c'z  s.t.  Gz <= h`, with diagonal PSD `H`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h_diag: Vec<f64>,
    pub c: Vec<f64>,
    pub g: DMatrix<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl DenseQp {
    fn objective(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.h_diag)
            .zip(&self.c)
            .map(|((z, h), c)| 0.5 * h * z * z + c * z)
            .sum()
    }

    fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let gz = &self.g * z;
        gz.iter()
            .zip(&self.h)
            .fold(0.0_f64, |m, (a, b)| m.max(a - b))
    }

    /// Mehrotra predictor-corrector, then an equality-constrained polish on
    /// the detected active set.
    pub fn solve(&self) -> Result<QpSolution> {
        let nv = self.c.len();
        let nc = self.h.len();
        let g = &self.g;
        let gt = g.transpose();
        let hvec = DVector::from_column_slice(&self.h);
        let cvec = DVector::from_column_slice(&self.c);
        let hd = DVector::from_column_slice(&self.h_diag);

        let mut z = DVector::<f64>::zeros(nv);
        let mut s = DVector::from_iterator(nc, self.h.iter().map(|v| v.max(1.0)));
        let mut lam = DVector::<f64>::from_element(nc, 1.0);
        let scale = 1.0
            + self.h.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            + self.c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

        let mut iterations = 0;
        for it in 0..200 {
            iterations = it + 1;
            let rd = hd.component_mul(&z) + &cvec + &gt * &lam;
            let rp = g * &z + &s - &hvec;
            let gap = s.dot(&lam) / nc as f64;
            if rd.amax() < 1e-11 * scale && rp.amax() < 1e-11 * scale && gap < 1e-15 * scale {
                break;
            }
            let d = lam.component_div(&s);
            let mut m = &gt * DMatrix::from_diagonal(&d) * g;
            for i in 0..nv {
                m[(i, i)] += hd[i];
            }
            // symmetric Jacobi scaling keeps the factorization accurate when the
            // barrier weights span many orders of magnitude
            let sc: DVector<f64> = m.diagonal().map(|v| 1.0 / v.max(1e-300).sqrt());
            let mut ms = m.clone();
            for i in 0..nv {
                for j in 0..nv {
                    ms[(i, j)] *= sc[i] * sc[j];
                }
                ms[(i, i)] += 1e-15;
            }
            let Some(chol_s) = ms.cholesky() else {
                if gap < 1e-9 * scale {
                    break;
                }
                return Err(Error::SolverStall {
                    detail: "interior-point normal equations are singular".into(),
                    gap,
                });
            };
            let chol = ScaledCholesky { chol: chol_s, sc };
            let solve_dir = |rc: &DVector<f64>| {
                // dlam = S^{-1}(-rc + Lam(rp + G dz)), ds = -rp - G dz
                let t = (-rc + lam.component_mul(&rp)).component_div(&s);
                let rhs = -&rd - &gt * &t;
                let dz = chol.solve(&rhs);
                let gdz = g * &dz;
                let ds = -&rp - &gdz;
                let dl = (-rc + lam.component_mul(&(&rp + &gdz))).component_div(&s);
                (dz, ds, dl)
            };
            let max_step = |v: &DVector<f64>, dv: &DVector<f64>| {
                let mut a = 1.0_f64;
                for (x, dx) in v.iter().zip(dv.iter()) {
                    if *dx < 0.0 {
                        a = a.min(-x / dx);
                    }
                }
                a
            };
            let rc_aff = s.component_mul(&lam);
            let (_, ds_a, dl_a) = solve_dir(&rc_aff);
            let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
            let mu_aff = (&s + a_aff * &ds_a).dot(&(&lam + a_aff * &dl_a)) / nc as f64;
            let sigma = (mu_aff / gap).powi(3).clamp(0.0, 1.0);
            let rc = &rc_aff + ds_a.component_mul(&dl_a) - DVector::from_element(nc, sigma * gap);
            let (dz, ds, dl) = solve_dir(&rc);
            let a = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
            if !(a > 0.0) || dz.iter().any(|v| !v.is_finite()) {
                break;
            }
            z += a * dz;
            s += a * ds;
            lam += a * dl;
        }

        let mut best = z.clone();
        if let Some(p) = self.polish(&s, &lam, &z) {
            if self.max_violation(&p) <= 1e-12 * scale
                && self.objective(p.as_slice()) <= self.objective(z.as_slice()) + 1e-12 * scale
            {
                best = p;
            }
        }
        Ok(QpSolution {
            objective: self.objective(best.as_slice()),
            z: best.iter().copied().collect(),
            duals: lam.iter().copied().collect(),
            iterations,
        })
    }

    /// Minimum-norm correction of `z` that solves the KKT system with the
    /// detected active constraints held as equalities.
    fn polish(&self, s: &DVector<f64>, lam: &DVector<f64>, z: &DVector<f64>) -> Option<DVector<f64>> {
        let nv = self.c.len();
        let active: Vec<usize> = (0..self.h.len()).filter(|&i| lam[i] > s[i]).collect();
        let na = active.len();
        let mut k = DMatrix::<f64>::zeros(nv + na, nv + na);
        let mut rhs = DVector::<f64>::zeros(nv + na);
        for i in 0..nv {
            k[(i, i)] = self.h_diag[i];
            rhs[i] = -self.c[i] - self.h_diag[i] * z[i];
        }
        for (a, &row) in active.iter().enumerate() {
            let mut gz = 0.0;
            for j in 0..nv {
                let v = self.g[(row, j)];
                k[(nv + a, j)] = v;
                k[(j, nv + a)] = v;
                gz += v * z[j];
            }
            rhs[nv + a] = self.h[row] - gz;
        }
        // the multiplier part of the right-hand side is relative to zero duals
        let svd = k.svd(true, true);
        let sol = svd.solve(&rhs, 1e-11).ok()?;
        let dz = sol.rows(0, nv).into_owned();
        if dz.iter().any(|v| !v.is_finite()) || dz.amax() > 1e-3 * (1.0 + z.amax()) {
            return None;
        }
        Some(z + dz)
    }
}

struct ScaledCholesky {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    sc: DVector<f64>,
}

impl ScaledCholesky {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let y = self.chol.solve(&rhs.component_mul(&self.sc));
        y.component_mul(&self.sc)
    }
}

/// Solution of the modulus problem in Lagrangian form at `mu`.
#[derive(Debug, Clone)]
pub struct ModulusSolution {
    pub mu: f64,
    /// `f(x_i, 1)` and `f(x_i, 0)` for every unit.
    pub f1: Vec<f64>,
    pub f0: Vec<f64>,
    /// `(2d_i - 1) f(x_i, d_i)`.
    pub m: Vec<f64>,
    /// `(1 - 2d_i) f(x_i, 1 - d_i)`.
    pub r: Vec<f64>,
    /// `sum m_i^2 / sigma_i^2`.
    pub q: f64,
    /// `sum w_i (f(x_i,1) - f(x_i,0))`.
    pub lf: f64,
}

impl ModulusSolution {
    pub fn delta(&self) -> f64 {
        2.0 * self.q.sqrt()
    }

    pub fn omega(&self) -> f64 {
        2.0 * self.lf
    }
}

/// `min 0.5 sum m^2/sigma^2 - mu L f` over the Lipschitz class, all
/// `2 n (n - 1)` constraints imposed.
pub fn solve_modulus_qp_at_mu(
    sample: &Sample,
    spec: &LipschitzSpec,
    variances: &VarianceSpec,
    target: &TargetWeights,
    mu: f64,
) -> Result<ModulusSolution> {
    target.validate(sample)?;
    variances.validate(sample)?;
    let z = ScaledCovariates::new(sample, spec)?;
    let n = sample.len();
    let nv = 2 * n;
    // z[i] = f(x_i, 1), z[n + i] = f(x_i, 0)
    let mut h_diag = vec![0.0; nv];
    let mut c = vec![0.0; nv];
    for i in 0..n {
        let own = if sample.is_treated(i) { i } else { n + i };
        h_diag[own] = 1.0 / variances.at(i, sample.is_treated(i));
        c[i] = -mu * target.weights[i];
        c[n + i] = mu * target.weights[i];
    }
    let nc = 2 * n * (n - 1);
    let mut g = DMatrix::<f64>::zeros(nc, nv);
    let mut h = vec![0.0; nc];
    let mut row = 0;
    for arm in 0..2 {
        let off = if arm == 0 { 0 } else { n };
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                g[(row, off + a)] = 1.0;
                g[(row, off + b)] = -1.0;
                h[row] = spec.c * z.rho(a, b);
                row += 1;
            }
        }
    }
    let qp = DenseQp { h_diag, c, g, h };
    let sol = qp.solve()?;
    let f1 = sol.z[..n].to_vec();
    let f0 = sol.z[n..].to_vec();
    let mut m = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut q = 0.0;
    let mut lf = 0.0;
    for i in 0..n {
        if sample.is_treated(i) {
            m[i] = f1[i];
            r[i] = -f0[i];
        } else {
            m[i] = -f0[i];
            r[i] = f1[i];
        }
        q += m[i] * m[i] / variances.at(i, sample.is_treated(i));
        lf += target.weights[i] * (f1[i] - f0[i]);
    }
    Ok(ModulusSolution {
        mu,
        f1,
        f0,
        m,
        r,
        q,
        lf,
    })
}

/// Brent's method on a bracketing interval.
pub fn brent_root(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NotBracketed);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1 * xm.signum() };
        fb = f(b);
    }
    Ok(b)
}

/// The modulus problem at a given `delta`: finds `mu` with
/// `2 sqrt(sum m^2/sigma^2) = delta` by root-finding.
pub fn solve_modulus_qp(
    sample: &Sample,
    spec: &LipschitzSpec,
    variances: &VarianceSpec,
    target: &TargetWeights,
    delta: f64,
) -> Result<ModulusSolution> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let at = |mu: f64| solve_modulus_qp_at_mu(sample, spec, variances, target, mu);
    let mut hi = 1.0;
    let mut tries = 0;
    while at(hi)?.delta() < delta {
        hi *= 2.0;
        tries += 1;
        if tries > 80 {
            return Err(Error::NotBracketed);
        }
    }
    let mut err = None;
    let mu = brent_root(
        |mu| match at(mu) {
            Ok(s) => s.delta() - delta,
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        0.0,
        hi,
        1e-13 * hi,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    at(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Exponent, NormSpec, TargetKind};

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn two_point_design_has_closed_form() {
        // one treated, one control at distance 1, sigma^2 = 1, CATE:
        // m = mu w = mu/2 for both units while mu/2 <= ... and the
        // counterfactuals sit one unit away
        let s = Sample::new(vec![vec![0.0], vec![1.0]], vec![true, false], None).unwrap();
        let spec = LipschitzSpec::new(1.0, NormSpec::identity(1, Exponent::One)).unwrap();
        let v = VarianceSpec::homoskedastic(1.0).unwrap();
        let t = TargetWeights::new(&s, TargetKind::Cate);
        let sol = solve_modulus_qp_at_mu(&s, &spec, &v, &t, 1.0).unwrap();
        // each unit: m = mu (w_i + w_j) = 1 and r = m + 1
        for i in 0..2 {
            assert!((sol.m[i] - 1.0).abs() < 1e-9, "{:?}", sol.m);
            assert!((sol.r[i] - 2.0).abs() < 1e-9, "{:?}", sol.r);
        }
        assert!((sol.lf - 3.0).abs() < 1e-9);
    }
}
