//! Monte Carlo log-likelihood ratio `l̂(ψ)` over a fixed set of draws.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Result, SglmmError};
use crate::glm::PsiParams;
use crate::model::{ModelData, Prior};
use crate::sampler::DeltaChain;

/// Value, gradient and Hessian of `l̂` over `(β, σ²)` or `(β, τ)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Largest log importance ratio; a weight-overlap diagnostic.
    pub max_log_weight: f64,
}

/// Importance-sampling objective built from draws of `δ` taken at `ψ̃`.
///
/// Per draw, `W_k = M δ_k` and the prior quadratic form are cached, so each
/// evaluation at a new `ψ` costs one pass over the responses per draw.
#[derive(Debug, Clone)]
pub struct McObjective {
    data: ModelData,
    prior: Prior,
    psi_tilde: PsiParams,
    draws: DMatrix<f64>,
    w: DMatrix<f64>,
    quads: Vec<f64>,
    base: Vec<f64>,
}

struct Sample {
    log_joint: f64,
    score: DVector<f64>,
    hessian: DMatrix<f64>,
}

impl McObjective {
    /// Builds the objective for basis `basis` from the draws of `chain`.
    pub fn new(data: &ModelData, basis: &DMatrix<f64>, prior: &Prior, chain: &DeltaChain, psi_tilde: &PsiParams) -> Result<Self> {
        Self::from_draws(data, basis, prior, chain.draws.clone(), psi_tilde)
    }

    /// As [`McObjective::new`] from an m x K matrix of draws.
    pub fn from_draws(data: &ModelData, basis: &DMatrix<f64>, prior: &Prior, draws: DMatrix<f64>, psi_tilde: &PsiParams) -> Result<Self> {
        psi_tilde.validate()?;
        prior.check_theta(&psi_tilde.theta)?;
        if draws.ncols() == 0 {
            return invalid("no draws");
        }
        if basis.nrows() != data.n() || basis.ncols() != draws.nrows() || prior.dim() != draws.nrows() {
            return invalid("basis, prior and draw dimensions disagree");
        }
        if psi_tilde.p() != data.p() {
            return invalid("coefficient count differs from design columns");
        }
        let quads = (0..draws.ncols()).into_par_iter().map(|k| prior.quad(draws.column(k).as_slice())).collect();
        let mut obj = Self {
            data: data.clone(),
            prior: prior.clone(),
            psi_tilde: psi_tilde.clone(),
            w: basis * &draws,
            draws,
            quads,
            base: Vec::new(),
        };
        obj.base = obj.log_joints(psi_tilde);
        if let Some(k) = obj.base.iter().position(|v| !v.is_finite()) {
            return Err(SglmmError::Numerical(format!("log-joint of draw {k} is not finite at the importance parameter")));
        }
        Ok(obj)
    }

    /// Same draws and importance parameter, with `W_k` recomputed for a new
    /// basis. The cached log-joints at `ψ̃` are kept, so the ratios compare the
    /// new model against the one the draws came from.
    pub fn with_basis(&self, basis: &DMatrix<f64>) -> Result<Self> {
        self.check_basis(basis)?;
        Ok(Self {
            data: self.data.clone(),
            prior: self.prior.clone(),
            psi_tilde: self.psi_tilde.clone(),
            draws: self.draws.clone(),
            w: basis * &self.draws,
            quads: self.quads.clone(),
            base: self.base.clone(),
        })
    }

    fn check_basis(&self, basis: &DMatrix<f64>) -> Result<()> {
        if basis.nrows() != self.data.n() || basis.ncols() != self.draws.nrows() {
            return invalid("replacement basis has the wrong shape");
        }
        Ok(())
    }

    /// `l̂(ψ)` with `W_k` computed from `basis` instead of the cached one,
    /// in column blocks so no n x K matrix is formed.
    pub fn value_with_basis(&self, basis: &DMatrix<f64>, psi: &PsiParams) -> Result<f64> {
        self.check_basis(basis)?;
        self.check_psi(psi)?;
        const BLOCK: usize = 512;
        let fixed = self.data.fixed_predictor(&psi.beta);
        let scale = psi.scale();
        let k = self.k();
        let mut lw = Vec::with_capacity(k);
        let mut start = 0;
        while start < k {
            let len = BLOCK.min(k - start);
            let w = basis * self.draws.columns(start, len);
            let block: Vec<f64> = (0..len)
                .into_par_iter()
                .map(|j| {
                    self.data.loglik(&fixed, w.column(j).as_slice()) + self.prior.log_density_from_quad(self.quads[start + j], scale)
                        - self.base[start + j]
                })
                .collect();
            lw.extend(block);
            start += len;
        }
        let (lse, _) = log_sum_exp(&lw)?;
        Ok(lse - (k as f64).ln())
    }

    /// Adds `c` to every cached log-joint at `ψ̃`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.base.iter_mut().for_each(|b| *b += c);
        out
    }

    pub fn k(&self) -> usize {
        self.draws.ncols()
    }

    pub fn m(&self) -> usize {
        self.draws.nrows()
    }

    pub fn psi_tilde(&self) -> &PsiParams {
        &self.psi_tilde
    }

    pub fn data(&self) -> &ModelData {
        &self.data
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    fn check_psi(&self, psi: &PsiParams) -> Result<()> {
        psi.validate()?;
        self.prior.check_theta(&psi.theta)?;
        if psi.p() != self.data.p() {
            return invalid("coefficient count differs from design columns");
        }
        Ok(())
    }

    fn log_joints(&self, psi: &PsiParams) -> Vec<f64> {
        let fixed = self.data.fixed_predictor(&psi.beta);
        let scale = psi.scale();
        (0..self.k())
            .into_par_iter()
            .map(|k| self.data.loglik(&fixed, self.w.column(k).as_slice()) + self.prior.log_density_from_quad(self.quads[k], scale))
            .collect()
    }

    fn sample_terms(&self, psi: &PsiParams) -> Vec<Sample> {
        let fixed = self.data.fixed_predictor(&psi.beta);
        let scale = psi.scale();
        let (n, p) = (self.data.n(), self.data.p());
        let x = &self.data.x;
        let fam = self.data.family;
        (0..self.k())
            .into_par_iter()
            .map(|k| {
                let w = self.w.column(k);
                let mut score = DVector::zeros(p + 1);
                let mut hessian = DMatrix::zeros(p + 1, p + 1);
                let mut ll = 0.0;
                for i in 0..n {
                    let eta = fixed[i] + w[i];
                    let z = self.data.z[i];
                    ll += fam.kernel_term(z, eta);
                    let (mu, var) = fam.mean_var(eta);
                    let r = z - mu;
                    for a in 0..p {
                        let xa = x[(i, a)];
                        score[a] += xa * r;
                        for b in 0..=a {
                            hessian[(a, b)] -= var * xa * x[(i, b)];
                        }
                    }
                }
                for a in 0..p {
                    for b in 0..a {
                        hessian[(b, a)] = hessian[(a, b)];
                    }
                }
                let q = self.quads[k];
                score[p] = self.prior.scale_score(q, scale);
                hessian[(p, p)] = self.prior.scale_curvature(q, scale);
                let log_joint = ll + self.data.log_norm() + self.prior.log_density_from_quad(q, scale);
                Sample { log_joint, score, hessian }
            })
            .collect()
    }

    /// Log importance ratios `log f(Z, δ_k | ψ) − log f(Z, δ_k | ψ̃)`.
    pub fn log_ratios(&self, psi: &PsiParams) -> Result<Vec<f64>> {
        self.check_psi(psi)?;
        Ok(self.log_joints(psi).iter().zip(&self.base).map(|(a, b)| a - b).collect())
    }

    /// `l̂(ψ) = log( K⁻¹ Σ exp(log-ratio_k) )` via log-sum-exp.
    pub fn value(&self, psi: &PsiParams) -> Result<f64> {
        let lw = self.log_ratios(psi)?;
        let (lse, _) = log_sum_exp(&lw)?;
        Ok(lse - (lw.len() as f64).ln())
    }

    /// Value, self-normalized gradient and Hessian at `ψ`.
    pub fn evaluate(&self, psi: &PsiParams) -> Result<Evaluation> {
        self.check_psi(psi)?;
        let samples = self.sample_terms(psi);
        let lw: Vec<f64> = samples.iter().zip(&self.base).map(|(s, b)| s.log_joint - b).collect();
        let (lse, max) = log_sum_exp(&lw)?;
        let d = self.data.p() + 1;
        let mut gradient = DVector::zeros(d);
        let mut mean_hess = DMatrix::zeros(d, d);
        let mut second = DMatrix::zeros(d, d);
        for (s, &l) in samples.iter().zip(&lw) {
            let wk = (l - lse).exp();
            if wk == 0.0 {
                continue;
            }
            gradient.axpy(wk, &s.score, 1.0);
            mean_hess += &s.hessian * wk;
            second.ger(wk, &s.score, &s.score, 1.0);
        }
        let mut hessian = mean_hess + second - &gradient * gradient.transpose();
        crate::linalg::symmetrize(&mut hessian);
        Ok(Evaluation { value: lse - (lw.len() as f64).ln(), gradient, hessian, max_log_weight: max })
    }

    /// `B̂ = [K⁻¹ Σ s_k s_k' w_k²] / [K⁻¹ Σ w_k]²` at `ψ`.
    pub fn score_outer_product(&self, psi: &PsiParams) -> Result<DMatrix<f64>> {
        self.check_psi(psi)?;
        let samples = self.sample_terms(psi);
        let lw: Vec<f64> = samples.iter().zip(&self.base).map(|(s, b)| s.log_joint - b).collect();
        let (_, max) = log_sum_exp(&lw)?;
        let d = self.data.p() + 1;
        let k = lw.len() as f64;
        let mut num = DMatrix::zeros(d, d);
        let mut den = 0.0;
        for (s, &l) in samples.iter().zip(&lw) {
            let w = (l - max).exp();
            den += w;
            num.ger(w * w, &s.score, &s.score, 1.0);
        }
        let mut b = (num / k) / (den / k).powi(2);
        crate::linalg::symmetrize(&mut b);
        Ok(b)
    }

    /// Relative standard error of `K⁻¹ Σ exp(log-ratio_k)`, which by the delta
    /// method is the standard error of `l̂(ψ)`. Uses batch means when `K ≥ 100`.
    pub fn loglik_standard_error(&self, psi: &PsiParams) -> Result<f64> {
        let lw = self.log_ratios(psi)?;
        let (_, max) = log_sum_exp(&lw)?;
        let r: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let se = if r.len() >= 100 {
            crate::sampler::batch_means_ase(&r)?
        } else {
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len().max(2) - 1) as f64;
            (var / r.len() as f64).sqrt()
        };
        Ok(se / mean)
    }

    /// Kish effective sample size of the importance weights at `ψ`, as a
    /// fraction of `K`.
    pub fn weight_ess_fraction(&self, psi: &PsiParams) -> Result<f64> {
        let lw = self.log_ratios(psi)?;
        let (_, max) = log_sum_exp(&lw)?;
        let (s1, s2) = lw.iter().fold((0.0, 0.0), |(a, b), l| {
            let w = (l - max).exp();
            (a + w, b + w * w)
        });
        Ok(s1 * s1 / (s2 * lw.len() as f64))
    }

    /// Plain average of per-draw `(β, θ)` scores at `ψ`, unweighted.
    pub fn mean_score(&self, psi: &PsiParams) -> Result<DVector<f64>> {
        self.check_psi(psi)?;
        let samples = self.sample_terms(psi);
        let mut g = DVector::zeros(self.data.p() + 1);
        for s in &samples {
            g += &s.score;
        }
        Ok(g / samples.len() as f64)
    }
}

/// `log Σ exp(xᵢ)` and `max xᵢ`; fails when every term underflows.
pub fn log_sum_exp(x: &[f64]) -> Result<(f64, f64)> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SglmmError::WeightUnderflow { max_log_weight: max });
    }
    let s: f64 = x.iter().map(|v| (v - max).exp()).sum();
    Ok((max + s.ln(), max))
}
