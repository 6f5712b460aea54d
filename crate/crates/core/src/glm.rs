//! Response families, the parameter vector, and non-spatial GLM starting values.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result, SglmmError};
use crate::kernels::{distance_matrix, Coordinates};

/// Response distribution with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Poisson counts, log link.
    Poisson,
    /// Binary responses, logit link.
    Bernoulli,
}

impl FromStr for Family {
    type Err = SglmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "bernoulli" | "binary" | "logit" => Ok(Family::Bernoulli),
            other => invalid(format!("unknown family '{other}' (expected poisson or bernoulli)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
        })
    }
}

/// Logistic function without overflow for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Family {
    pub fn validate_response(self, z: &[f64]) -> Result<()> {
        for (i, &v) in z.iter().enumerate() {
            let ok = match self {
                Family::Poisson => v >= 0.0 && v.fract() == 0.0 && v.is_finite(),
                Family::Bernoulli => v == 0.0 || v == 1.0,
            };
            if !ok {
                return invalid(format!("response {i} = {v} is not valid for the {self} family"));
            }
        }
        Ok(())
    }

    /// `log f(z | η)` for one observation.
    pub fn loglik_obs(self, z: f64, eta: f64) -> f64 {
        match self {
            Family::Poisson => z * eta - eta.exp() - ln_gamma(z + 1.0),
            Family::Bernoulli => z * eta - softplus(eta),
        }
    }

    /// Log-likelihood terms that do not depend on η (`-Σ log z!` for Poisson).
    pub fn normalizing_constant(self, z: &[f64]) -> f64 {
        match self {
            Family::Poisson => -z.iter().map(|&v| ln_gamma(v + 1.0)).sum::<f64>(),
            Family::Bernoulli => 0.0,
        }
    }

    /// `Σ z η − b(η)`: the log-likelihood without [`Family::normalizing_constant`].
    #[inline]
    pub fn kernel_term(self, z: f64, eta: f64) -> f64 {
        match self {
            Family::Poisson => z * eta - eta.exp(),
            Family::Bernoulli => z * eta - softplus(eta),
        }
    }

    /// Conditional mean and variance at `eta`.
    #[inline]
    pub fn mean_var(self, eta: f64) -> (f64, f64) {
        match self {
            Family::Poisson => {
                let mu = eta.exp();
                (mu, mu)
            }
            Family::Bernoulli => {
                let p = logistic(eta);
                (p, p * logistic(-eta))
            }
        }
    }

    pub fn link_inverse(self, eta: f64) -> f64 {
        self.mean_var(eta).0
    }

    /// Empirical link transform used for working residuals.
    fn empirical_link(self, z: f64) -> f64 {
        match self {
            Family::Poisson => (z + 0.5).ln(),
            Family::Bernoulli => ((z + 0.5) / (1.5 - z)).ln(),
        }
    }
}

fn check_lengths(z: &[f64], eta: &DVector<f64>) -> Result<()> {
    if z.len() != eta.len() {
        return invalid(format!("response length {} differs from predictor length {}", z.len(), eta.len()));
    }
    Ok(())
}

/// `Σ log f(zᵢ | ηᵢ)` with response validation.
pub fn conditional_loglik(z: &[f64], eta: &DVector<f64>, family: Family) -> Result<f64> {
    check_lengths(z, eta)?;
    family.validate_response(z)?;
    Ok(z.iter().zip(eta.iter()).map(|(&zi, &ei)| family.loglik_obs(zi, ei)).sum())
}

/// Elementwise conditional mean and variance.
pub fn conditional_mean_variance(eta: &DVector<f64>, family: Family) -> (DVector<f64>, DVector<f64>) {
    let n = eta.len();
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    for i in 0..n {
        let (m, v) = family.mean_var(eta[i]);
        mean[i] = m;
        var[i] = v;
    }
    (mean, var)
}

/// Range parameters of the random effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum Theta {
    Continuous { sigma2: f64, phi: f64 },
    Discrete { tau: f64 },
}

/// Full parameter vector `ψ = (β, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiParams {
    pub beta: Vec<f64>,
    pub theta: Theta,
}

impl PsiParams {
    pub fn continuous(beta: Vec<f64>, sigma2: f64, phi: f64) -> Result<Self> {
        let p = Self { beta, theta: Theta::Continuous { sigma2, phi } };
        p.validate()?;
        Ok(p)
    }

    pub fn discrete(beta: Vec<f64>, tau: f64) -> Result<Self> {
        let p = Self { beta, theta: Theta::Discrete { tau } };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !b.is_finite()) {
            return invalid("regression coefficients must be finite");
        }
        match self.theta {
            Theta::Continuous { sigma2, phi } => {
                if !(sigma2 > 0.0 && sigma2.is_finite()) {
                    return invalid(format!("sigma2 must be positive, got {sigma2}"));
                }
                if !(phi > 0.0 && phi.is_finite()) {
                    return invalid(format!("phi must be positive, got {phi}"));
                }
            }
            Theta::Discrete { tau } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return invalid(format!("tau must be positive, got {tau}"));
                }
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    /// The precision-type parameter optimized by Newton: `σ²` or `τ`.
    pub fn scale(&self) -> f64 {
        match self.theta {
            Theta::Continuous { sigma2, .. } => sigma2,
            Theta::Discrete { tau } => tau,
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match self.theta {
            Theta::Continuous { phi, .. } => Some(phi),
            Theta::Discrete { .. } => None,
        }
    }

    pub fn with_phi(&self, phi: f64) -> Self {
        let mut out = self.clone();
        if let Theta::Continuous { phi: ref mut f, .. } = out.theta {
            *f = phi;
        }
        out
    }

    /// `(β, σ²)` or `(β, τ)` stacked into one vector.
    pub fn newton_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.p() + 1);
        v.rows_mut(0, self.p()).copy_from_slice(&self.beta);
        v[self.p()] = self.scale();
        v
    }

    /// Inverse of [`PsiParams::newton_vector`], keeping `φ` from `self`.
    pub fn from_newton_vector(&self, v: &DVector<f64>) -> Self {
        let p = self.p();
        let beta = v.rows(0, p).iter().copied().collect();
        let theta = match self.theta {
            Theta::Continuous { phi, .. } => Theta::Continuous { sigma2: v[p], phi },
            Theta::Discrete { .. } => Theta::Discrete { tau: v[p] },
        };
        Self { beta, theta }
    }

    /// Names in reporting order: betas, then `sigma2, phi` or `tau`.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.p()).map(|i| format!("beta{i}")).collect();
        match self.theta {
            Theta::Continuous { .. } => {
                names.push("sigma2".into());
                names.push("phi".into());
            }
            Theta::Discrete { .. } => names.push("tau".into()),
        }
        names
    }

    /// Values in the order of [`PsiParams::names`].
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        match self.theta {
            Theta::Continuous { sigma2, phi } => {
                v.push(sigma2);
                v.push(phi);
            }
            Theta::Discrete { tau } => v.push(tau),
        }
        v
    }
}

/// Outcome of the non-spatial IRLS fit.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsResult {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub warning: Option<String>,
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 50;

fn glm_loglik(z: &[f64], eta: &DVector<f64>, family: Family) -> f64 {
    z.iter().zip(eta.iter()).map(|(&zi, &ei)| family.kernel_term(zi, ei)).sum()
}

/// Iteratively reweighted least squares for the GLM without random effects.
///
/// Starts from `β = 0`, with any constant column set to match the mean
/// response. Non-convergence or divergence (e.g. separation) returns the best
/// iterate with a warning rather than an error.
pub fn irls_initial_estimates(z: &[f64], x: &DMatrix<f64>, offset: Option<&DVector<f64>>, family: Family) -> Result<IrlsResult> {
    let n = z.len();
    if x.nrows() != n {
        return invalid("design matrix rows differ from response length");
    }
    if let Some(o) = offset {
        if o.len() != n {
            return invalid("offset length differs from response length");
        }
    }
    family.validate_response(z)?;
    crate::linalg::check_full_column_rank(x)?;
    let zero = DVector::zeros(n);
    let off = offset.unwrap_or(&zero);
    let zv = DVector::from_column_slice(z);

    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let zbar = zv.mean();
    if let Some(j) = (0..p).find(|&j| {
        let c = x.column(j);
        c.max() == c.min() && c[0] != 0.0
    }) {
        let target = match family {
            Family::Poisson => (zbar.max(1e-8)).ln(),
            Family::Bernoulli => (zbar.clamp(1e-8, 1.0 - 1e-8) / (1.0 - zbar.clamp(1e-8, 1.0 - 1e-8))).ln(),
        };
        beta[j] = (target - off.mean()) / x[(0, j)];
    }

    let mut eta = x * &beta + off;
    let mut ll = glm_loglik(z, &eta, family);
    let mut warning = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        let (mu, var) = conditional_mean_variance(&eta, family);
        let score = x.transpose() * (&zv - mu);
        let mut info = x.transpose() * DMatrix::from_diagonal(&var) * x;
        crate::linalg::symmetrize(&mut info);
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                warning = Some(format!("weighted information singular at iteration {it}"));
                break;
            }
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * scale;
            let cand_eta = x * &cand + off;
            let cand_ll = glm_loglik(z, &cand_eta, family);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                let delta = (&cand - &beta).amax();
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                if delta < IRLS_TOL {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            warning = Some(format!("no ascent step found at iteration {it}"));
            break;
        }
        if converged {
            break;
        }
        if beta.amax() > 1e6 {
            warning = Some("coefficients diverging (possible separation)".into());
            break;
        }
    }
    if !converged && warning.is_none() {
        warning = Some(format!("IRLS did not converge in {IRLS_MAX_ITER} iterations"));
    }
    Ok(IrlsResult { beta, converged, iterations, warning })
}

/// Type-7 sample quantile of unsorted data.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

/// First quartile of the pairwise distances.
pub fn initial_phi(coords: &Coordinates) -> Result<f64> {
    let n = coords.len();
    if n < 2 {
        return invalid("at least two sites are needed for an initial range");
    }
    let d = distance_matrix(coords);
    let mut lower = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..n {
        for i in (j + 1)..n {
            lower.push(d[(i, j)]);
        }
    }
    let phi = quantile(&mut lower, 0.25);
    if phi <= 0.0 {
        return invalid("first quartile of distances is zero (too many duplicate sites)");
    }
    Ok(phi)
}

/// Variance of the working residuals `g̃(z) − offset − Xβ₀`, floored at 0.1.
pub fn initial_sigma2(z: &[f64], x: &DMatrix<f64>, offset: Option<&DVector<f64>>, beta0: &DVector<f64>, family: Family) -> f64 {
    let fitted = x * beta0;
    let n = z.len();
    let r: Vec<f64> = (0..n).map(|i| family.empirical_link(z[i]) - offset.map_or(0.0, |o| o[i]) - fitted[i]).collect();
    let mean = r.iter().sum::<f64>() / n as f64;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    var.max(0.1)
}

/// Precision `τ` giving the lattice field an average marginal variance of
/// `sigma2`: `tr((M'QM)⁺) / (n σ²)`.
pub fn initial_tau(mqm: &DMatrix<f64>, n: usize, sigma2: f64) -> f64 {
    let (pinv, _, _) = crate::linalg::psd_pseudo_inverse(mqm);
    let tau = pinv.trace() / (n as f64 * sigma2);
    if tau.is_finite() && tau > 0.0 {
        tau
    } else {
        1.0
    }
}
