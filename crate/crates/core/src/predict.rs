//! Reduced-rank conditional prediction of the latent field at new sites.
//!
//! With `U D U'` the retained eigenpairs of the correlation at the observed
//! sites and `W = M δ̄` the chain-mean field, the predictor is
//!
//! ```text
//! E[W*]   = R*s U D⁻¹ U' W
//! Var[W*] = σ² (1 − diag(R*s U D⁻¹ U' Rs*)) + jitter
//! ```
//!
//! For `m < n`, `U D⁻¹ U'` is the pseudo-inverse of the low-rank correlation;
//! variance along the discarded eigenvectors is not represented.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result, SglmmError};
use crate::glm::quantile;
use crate::kernels::{correlation_from_distances, cross_distance, Coordinates, Smoothness, COVARIANCE_JITTER};
use crate::linalg::{sorted_symmetric_eigen, EIG_DROP_TOL};
use crate::mcml::McmlFit;
use crate::projection::ProjectionBasis;

/// New sites with their design rows and offsets.
#[derive(Debug, Clone)]
pub struct PredictionSites {
    pub coords: Coordinates,
    /// Design at the new sites; the coordinates when absent.
    pub x: Option<DMatrix<f64>>,
    pub offset: Option<DVector<f64>>,
}

impl PredictionSites {
    pub fn at(coords: Coordinates) -> Self {
        Self { coords, x: None, offset: None }
    }
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    pub coords: Coordinates,
    pub w_star_mean: DVector<f64>,
    pub w_star_var: DVector<f64>,
    /// Inverse link at `x*β̂ + offset* + E[W*]`.
    pub response_scale_mean: DVector<f64>,
    /// 2.5% and 97.5% points of the per-draw predictions `R*s U D⁻¹ U' M δ_k`.
    pub mc_lower: DVector<f64>,
    pub mc_upper: DVector<f64>,
}

impl PredictionResult {
    /// CSV with columns `x,y,w_mean,w_var,response_mean,mc_lower,mc_upper`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "w_mean", "w_var", "response_mean", "mc_lower", "mc_upper"]).map_err(std::io::Error::other)?;
        for (i, p) in self.coords.points().iter().enumerate() {
            out.write_record([
                p[0].to_string(),
                p[1].to_string(),
                self.w_star_mean[i].to_string(),
                self.w_star_var[i].to_string(),
                self.response_scale_mean[i].to_string(),
                self.mc_lower[i].to_string(),
                self.mc_upper[i].to_string(),
            ])
            .map_err(std::io::Error::other)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Orthonormal factor and eigenvalues of `M M'` / `σ²`. Spectral bases carry
/// them; otherwise they come from the eigenpairs of `M'M`.
fn spectral_factors(basis: &ProjectionBasis) -> (DMatrix<f64>, DVector<f64>) {
    if let (Some(u), Some(d)) = (&basis.u, &basis.d) {
        return (u.clone(), d.clone());
    }
    let m = &basis.matrix;
    let (lam, v) = sorted_symmetric_eigen(&(m.transpose() * m));
    let mut u = m * v;
    for j in 0..u.ncols() {
        let s = lam[j].max(0.0).sqrt();
        u.column_mut(j).scale_mut(if s > 0.0 { 1.0 / s } else { 0.0 });
    }
    (u, lam)
}

/// Conditional moments of the field at new sites.
#[derive(Debug, Clone)]
pub struct ConditionalField {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    /// Maps a draw of `δ` to its predicted field: `R*s U D⁻¹ U' M`.
    pub draw_map: DMatrix<f64>,
}

/// Reduced-rank conditional mean and variance at `coords_new` given the field
/// `w` at `coords_obs`, for correlation range `phi` and variance `sigma2`.
pub fn reduced_conditional(
    basis: &ProjectionBasis,
    w: &DVector<f64>,
    coords_obs: &Coordinates,
    coords_new: &Coordinates,
    phi: f64,
    sigma2: f64,
    nu: Smoothness,
) -> Result<ConditionalField> {
    if basis.nrows() != coords_obs.len() || w.len() != coords_obs.len() {
        return invalid("basis, field and observed sites disagree in size");
    }
    if !(sigma2 > 0.0) {
        return invalid("sigma2 must be positive");
    }
    let n_new = coords_new.len();
    let r_new = correlation_from_distances(&cross_distance(coords_new, coords_obs), phi, nu)?;
    let (u, d) = spectral_factors(basis);
    let cutoff = EIG_DROP_TOL * d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let d_inv = d.map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    let a = &r_new * &u;
    let mut a_scaled = a.clone();
    for (j, &di) in d_inv.iter().enumerate() {
        a_scaled.column_mut(j).scale_mut(di);
    }
    let mean = &a_scaled * (u.transpose() * w);
    let prior_var = sigma2 * (1.0 + COVARIANCE_JITTER);
    let var = DVector::from_iterator(
        n_new,
        (0..n_new).map(|i| {
            let explained: f64 = (0..a.ncols()).map(|j| a[(i, j)] * a_scaled[(i, j)]).sum();
            (prior_var - sigma2 * explained).clamp(0.0, prior_var)
        }),
    );
    let draw_map = &a_scaled * (u.transpose() * &basis.matrix);
    Ok(ConditionalField { mean, var, draw_map })
}

/// Conditional mean and variance of the field at new sites given the
/// observed sites `coords_obs` of a continuous fit.
pub fn predict_w_star(fit: &McmlFit, coords_obs: &Coordinates, sites: &PredictionSites) -> Result<PredictionResult> {
    let Some(phi) = fit.psi_hat.phi() else {
        return invalid("prediction at new sites needs a continuous-domain fit");
    };
    let sigma2 = fit.psi_hat.scale();
    let nu = Smoothness::from_nu(fit.metadata.nu)?;
    let n = coords_obs.len();
    if fit.basis.nrows() != n {
        return invalid(format!("fit has {} sites but {n} observed coordinates were given", fit.basis.nrows()));
    }
    let n_new = sites.coords.len();
    let x_new = match &sites.x {
        Some(x) => x.clone(),
        None => sites.coords.to_matrix(),
    };
    if x_new.nrows() != n_new || x_new.ncols() != fit.psi_hat.p() {
        return invalid("prediction design does not match the fitted coefficients");
    }
    if let Some(o) = &sites.offset {
        if o.len() != n_new {
            return invalid("prediction offset has the wrong length");
        }
    }
    let field = reduced_conditional(&fit.basis, &fit.w_hat, coords_obs, &sites.coords, phi, sigma2, nu)?;
    let mean = field.mean;
    let eta = &x_new * fit.psi_hat.beta_vector() + &mean + sites.offset.clone().unwrap_or_else(|| DVector::zeros(n_new));
    let response = eta.map(|e| fit.family.link_inverse(e));

    let per_draw = field.draw_map * &fit.final_chain.draws;
    let mut lower = DVector::zeros(n_new);
    let mut upper = DVector::zeros(n_new);
    for i in 0..n_new {
        let mut row: Vec<f64> = per_draw.row(i).iter().copied().collect();
        if row.is_empty() {
            return Err(SglmmError::InvalidInput("fit has no retained draws".into()));
        }
        lower[i] = quantile(&mut row, 0.025);
        upper[i] = quantile(&mut row, 0.975);
    }
    Ok(PredictionResult {
        coords: sites.coords.clone(),
        w_star_mean: mean,
        w_star_var: field.var,
        response_scale_mean: response,
        mc_lower: lower,
        mc_upper: upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_correlation;
    use crate::projection::exact_basis_continuous;
    use crate::rng::rng_from_seed;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::Rng;

    fn sites(n: usize, seed: u64) -> Coordinates {
        let mut rng = rng_from_seed(seed);
        Coordinates::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()).unwrap()
    }

    fn field(coords: &Coordinates, phi: f64, m: usize, seed: u64) -> (ProjectionBasis, DVector<f64>) {
        let r = build_correlation(coords, phi, Smoothness::FiveHalves).unwrap();
        let basis = exact_basis_continuous(&r, m).unwrap();
        let mut rng = rng_from_seed(seed);
        let delta = DVector::from_iterator(m, (0..m).map(|_| rng.random::<f64>() - 0.5));
        let w = &basis.matrix * delta;
        (basis, w)
    }

    #[test]
    fn full_rank_interpolates_observed_sites() {
        let obs = sites(20, 1);
        let (basis, w) = field(&obs, 0.2, 20, 2);
        let at = obs.subset(&[3, 11]);
        let f = reduced_conditional(&basis, &w, &obs, &at, 0.2, 1.3, Smoothness::FiveHalves).unwrap();
        assert!((f.mean[0] - w[3]).abs() < 1e-6 && (f.mean[1] - w[11]).abs() < 1e-6);
        assert!(f.var.iter().all(|v| *v <= 1e-6));
    }

    #[test]
    fn full_rank_matches_dense_conditional() {
        let obs = sites(20, 3);
        let new = sites(7, 4);
        let (phi, sigma2) = (0.15, 0.7);
        let (basis, w) = field(&obs, phi, 20, 5);
        let f = reduced_conditional(&basis, &w, &obs, &new, phi, sigma2, Smoothness::FiveHalves).unwrap();
        let c_ss = build_correlation(&obs, phi, Smoothness::FiveHalves).unwrap() * sigma2;
        let c_ns = correlation_from_distances(&cross_distance(&new, &obs), phi, Smoothness::FiveHalves).unwrap() * sigma2;
        let inv = c_ss.clone().try_inverse().unwrap();
        let mean = &c_ns * &inv * &w;
        let var = (&c_ns * &inv * c_ns.transpose()).diagonal().map(|v| sigma2 - v);
        assert!((f.mean - mean).amax() < 1e-6);
        assert!((f.var - var).amax() < 1e-6);
    }

    #[test]
    fn distant_site_reverts_to_prior() {
        let obs = sites(15, 6);
        let (basis, w) = field(&obs, 0.2, 8, 7);
        let far = Coordinates::new(vec![[1e3, 1e3]]).unwrap();
        let f = reduced_conditional(&basis, &w, &obs, &far, 0.2, 2.0, Smoothness::FiveHalves).unwrap();
        assert!(f.mean[0].abs() < 1e-12);
        assert!((f.var[0] - 2.0 * (1.0 + COVARIANCE_JITTER)).abs() < 1e-12);
    }

    #[test]
    fn generic_basis_factors_agree_with_spectral_ones() {
        let obs = sites(12, 8);
        let (mut basis, w) = field(&obs, 0.3, 5, 9);
        let new = sites(4, 10);
        let a = reduced_conditional(&basis, &w, &obs, &new, 0.3, 1.0, Smoothness::FiveHalves).unwrap();
        basis.u = None;
        basis.d = None;
        let b = reduced_conditional(&basis, &w, &obs, &new, 0.3, 1.0, Smoothness::FiveHalves).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-9);
        assert!((a.var - b.var).amax() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn variance_bounded_and_permutation_invariant(seed in 0u64..1000, m in 2usize..12) {
            let obs = sites(14, seed);
            let (basis, w) = field(&obs, 0.25, m, seed + 1);
            let new = sites(5, seed + 2);
            let f = reduced_conditional(&basis, &w, &obs, &new, 0.25, 1.7, Smoothness::FiveHalves).unwrap();
            prop_assert!(f.var.iter().all(|v| *v >= 0.0 && *v <= 1.7 + 1e-8));
            let perm: Vec<usize> = (0..14).rev().collect();
            let obs_p = obs.subset(&perm);
            let r = build_correlation(&obs_p, 0.25, Smoothness::FiveHalves).unwrap();
            let basis_p = exact_basis_continuous(&r, m).unwrap();
            let w_p = DVector::from_iterator(14, perm.iter().map(|&i| w[i]));
            let g = reduced_conditional(&basis_p, &w_p, &obs_p, &new, 0.25, 1.7, Smoothness::FiveHalves).unwrap();
            prop_assert!((f.mean - g.mean).amax() < 1e-8);
            prop_assert!((f.var - g.var).amax() < 1e-8);
        }
    }
}
