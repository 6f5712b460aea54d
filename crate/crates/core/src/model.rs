//! Observed data and the joint density of responses and reduced random effects.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::glm::{Family, PsiParams, Theta};
use crate::linalg::{psd_pseudo_inverse, symmetrize};

/// Responses, design, offset and family of one fit.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub z: Vec<f64>,
    pub x: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub family: Family,
    log_norm: f64,
}

impl ModelData {
    pub fn new(z: Vec<f64>, x: DMatrix<f64>, offset: Option<DVector<f64>>, family: Family) -> Result<Self> {
        let n = z.len();
        if n == 0 {
            return invalid("no observations");
        }
        if x.nrows() != n {
            return invalid(format!("design has {} rows but there are {n} responses", x.nrows()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("design matrix has non-finite entries");
        }
        let offset = offset.unwrap_or_else(|| DVector::zeros(n));
        if offset.len() != n {
            return invalid("offset length differs from response length");
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return invalid("offset has non-finite entries");
        }
        family.validate_response(&z)?;
        crate::linalg::check_full_column_rank(&x)?;
        let log_norm = family.normalizing_constant(&z);
        Ok(Self { z, x, offset, family, log_norm })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Terms of the log-likelihood free of η.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// `Xβ + offset`.
    pub fn fixed_predictor(&self, beta: &[f64]) -> DVector<f64> {
        &self.x * DVector::from_column_slice(beta) + &self.offset
    }

    /// `Σ log f(zᵢ | ηᵢ)` where `ηᵢ = fixed[i] + w[i]`.
    #[inline]
    pub fn loglik(&self, fixed: &DVector<f64>, w: &[f64]) -> f64 {
        let fam = self.family;
        let mut acc = 0.0;
        for i in 0..self.z.len() {
            acc += fam.kernel_term(self.z[i], fixed[i] + w[i]);
        }
        acc + self.log_norm
    }
}

/// Prior structure of the reduced random effect `δ`.
#[derive(Debug, Clone)]
pub enum Prior {
    /// `δ ~ N(0, σ² I)`.
    Iid { m: usize },
    /// Density proportional to `τ^{m/2} exp(−τ δ'Sδ / 2)`.
    Gmrf { s: DMatrix<f64>, log_pdet: f64, rank: usize },
}

impl Prior {
    pub fn gmrf(mut s: DMatrix<f64>) -> Self {
        symmetrize(&mut s);
        let (_, log_pdet, rank) = psd_pseudo_inverse(&s);
        Prior::Gmrf { s, log_pdet, rank }
    }

    /// Lattice prior for basis `m`: `S = M'QM`.
    pub fn lattice(basis: &DMatrix<f64>, q: &DMatrix<f64>) -> Self {
        Self::gmrf(basis.transpose() * q * basis)
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Iid { m } => *m,
            Prior::Gmrf { s, .. } => s.nrows(),
        }
    }

    /// The quadratic form `δ'δ` or `δ'Sδ`.
    pub fn quad(&self, delta: &[f64]) -> f64 {
        match self {
            Prior::Iid { .. } => delta.iter().map(|v| v * v).sum(),
            Prior::Gmrf { s, .. } => {
                let m = s.nrows();
                let mut acc = 0.0;
                for j in 0..m {
                    let col = s.column(j);
                    let mut t = 0.0;
                    for i in 0..m {
                        t += col[i] * delta[i];
                    }
                    acc += t * delta[j];
                }
                acc
            }
        }
    }

    /// Full log-density from the quadratic form, with normalizing terms.
    pub fn log_density_from_quad(&self, quad: f64, scale: f64) -> f64 {
        let m = self.dim() as f64;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        match self {
            Prior::Iid { .. } => -0.5 * m * (ln2pi + scale.ln()) - quad / (2.0 * scale),
            Prior::Gmrf { log_pdet, rank, .. } => 0.5 * m * scale.ln() - 0.5 * scale * quad + 0.5 * log_pdet - 0.5 * *rank as f64 * ln2pi,
        }
    }

    pub fn log_density(&self, delta: &[f64], scale: f64) -> f64 {
        self.log_density_from_quad(self.quad(delta), scale)
    }

    /// Score of the log prior in its scale parameter.
    pub fn scale_score(&self, quad: f64, scale: f64) -> f64 {
        let m = self.dim() as f64;
        match self {
            Prior::Iid { .. } => -m / (2.0 * scale) + quad / (2.0 * scale * scale),
            Prior::Gmrf { .. } => m / (2.0 * scale) - quad / 2.0,
        }
    }

    /// Second derivative of the log prior in its scale parameter.
    pub fn scale_curvature(&self, quad: f64, scale: f64) -> f64 {
        let m = self.dim() as f64;
        match self {
            Prior::Iid { .. } => m / (2.0 * scale.powi(2)) - quad / scale.powi(3),
            Prior::Gmrf { .. } => -m / (2.0 * scale * scale),
        }
    }

    /// Prior precision matrix at `scale`: `I/σ²` or `τS`.
    pub fn precision(&self, scale: f64) -> DMatrix<f64> {
        match self {
            Prior::Iid { m } => DMatrix::identity(*m, *m) / scale,
            Prior::Gmrf { s, .. } => s * scale,
        }
    }

    pub(crate) fn check_theta(&self, theta: &Theta) -> Result<()> {
        match (self, theta) {
            (Prior::Iid { .. }, Theta::Continuous { .. }) | (Prior::Gmrf { .. }, Theta::Discrete { .. }) => Ok(()),
            _ => invalid("parameter domain does not match the prior structure"),
        }
    }
}

/// `log f(Z, δ | ψ)` for basis `m`: conditional log-likelihood plus the full
/// prior log-density.
pub fn log_joint(data: &ModelData, basis: &DMatrix<f64>, prior: &Prior, psi: &PsiParams, delta: &DVector<f64>) -> Result<f64> {
    psi.validate()?;
    prior.check_theta(&psi.theta)?;
    if psi.p() != data.p() {
        return invalid("coefficient count differs from design columns");
    }
    if basis.nrows() != data.n() || basis.ncols() != delta.len() || prior.dim() != delta.len() {
        return invalid("basis, prior and random effect dimensions disagree");
    }
    let w = basis * delta;
    let fixed = data.fixed_predictor(&psi.beta);
    Ok(data.loglik(&fixed, w.as_slice()) + prior.log_density(delta.as_slice(), psi.scale()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::conditional_loglik;

    fn toy() -> ModelData {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 0.5, -0.2]);
        ModelData::new(vec![0.0, 2.0, 1.0], x, None, Family::Poisson).unwrap()
    }

    #[test]
    fn prior_at_zero_is_normalizer() {
        let prior = Prior::Iid { m: 4 };
        let want = -2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((prior.log_density(&[0.0; 4], 1.0) - want).abs() < 1e-14);
        let e1 = [1.0, 0.0, 0.0, 0.0];
        assert!((prior.log_density(&e1, 1.0) - prior.log_density(&[0.0; 4], 1.0) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn log_joint_decomposes() {
        let data = toy();
        let basis = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.3, 0.7, -0.2, 0.4]);
        let psi = PsiParams::continuous(vec![0.4], 0.8, 0.2).unwrap();
        let delta = DVector::from_vec(vec![0.3, -0.5]);
        let eta = data.fixed_predictor(&psi.beta) + &basis * &delta;
        let want =
            conditional_loglik(&data.z, &eta, data.family).unwrap() - (2.0 * std::f64::consts::PI * 0.8).ln() - delta.norm_squared() / 1.6;
        let got = log_joint(&data, &basis, &Prior::Iid { m: 2 }, &psi, &delta).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gmrf_quad_and_mismatch() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let prior = Prior::gmrf(s);
        assert!((prior.quad(&[1.0, 1.0]) - 2.0).abs() < 1e-14);
        let data = toy();
        let basis = DMatrix::zeros(3, 2);
        let cont = PsiParams::continuous(vec![0.0], 1.0, 1.0).unwrap();
        assert!(log_joint(&data, &basis, &prior, &cont, &DVector::zeros(2)).is_err());
        let disc = PsiParams::discrete(vec![0.0], 2.0).unwrap();
        // tau^{m/2} term plus half the log pseudo-determinant of S (det = 3)
        let got = prior.log_density(&[0.0, 0.0], 2.0);
        let want = 2f64.ln() + 0.5 * 3f64.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-12);
        assert!(log_joint(&data, &basis, &prior, &disc, &DVector::zeros(2)).is_ok());
    }

    #[test]
    fn scale_derivatives_match_finite_differences() {
        let q = 3.7;
        let h = 1e-5;
        for prior in [Prior::Iid { m: 5 }, Prior::gmrf(DMatrix::identity(5, 5))] {
            let f = |s: f64| prior.log_density_from_quad(q, s);
            let s0 = 1.3;
            let d1 = (f(s0 + h) - f(s0 - h)) / (2.0 * h);
            let d2 = (f(s0 + h) - 2.0 * f(s0) + f(s0 - h)) / (h * h);
            assert!((d1 - prior.scale_score(q, s0)).abs() < 1e-7);
            assert!((d2 - prior.scale_curvature(q, s0)).abs() < 1e-4);
        }
    }

    #[test]
    fn data_validation() {
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(ModelData::new(vec![0.5, 1.0], x.clone(), None, Family::Poisson).is_err());
        assert!(ModelData::new(vec![1.0], x.clone(), None, Family::Poisson).is_err());
        assert!(ModelData::new(vec![1.0, 2.0], x, Some(DVector::zeros(3)), Family::Poisson).is_err());
    }
}
