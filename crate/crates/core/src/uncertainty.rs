//! Standard errors and intervals: observed information, Monte Carlo error and
//! the parametric bootstrap.
//!
//! Sampling error and Monte Carlo error are reported side by side and never
//! combined.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SpatialDataset;
use crate::error::{invalid, Result, SglmmError};
use crate::glm::{quantile, PsiParams, Theta};
use crate::linalg::{neg_inverse, symmetrize};
use crate::mcml::{fit_domain, FitConfig, McObjective, McmlFit};
use crate::rng::{derive_seed, Stream};
use crate::simulate::simulate_from_fit;

/// Two-sided 95% standard normal quantile.
pub const Z_025: f64 = 1.959964;

/// Replicates whose `σ̂²` exceeds this multiple of the point estimate are
/// flagged in bootstrap reports.
pub const SIGMA2_FLAG_FACTOR: f64 = 100.0;

/// Largest share of bootstrap replicates that may fail.
pub const MAX_DROPPED_FRACTION: f64 = 0.2;

/// Two-sided standard normal quantile for confidence `level`.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level must lie in (0, 1), got {level}"));
    }
    if (level - 0.95).abs() < 1e-12 {
        return Ok(Z_025);
    }
    if (level - 0.90).abs() < 1e-12 {
        return Ok(crate::mcml::Z_05);
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Estimate and interval of one parameter; bounds are `None` where no
/// interval is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Wald intervals from `(−A)⁻¹` over `(β, σ²)` or `(β, τ)`. The range has no
/// information-based interval and is listed with empty bounds.
pub fn fisher_intervals(fit: &McmlFit, level: f64) -> Result<Vec<Interval>> {
    let z = z_for_level(level)?;
    let cov = neg_inverse(&fit.hessian).map_err(|eigenvalue| SglmmError::Indefinite { eigenvalue })?;
    Ok(wald_intervals(&fit.psi_hat, &cov, z))
}

/// `estimate ± z·√cov_ii` for the Newton coordinates of `psi`.
pub fn wald_intervals(psi: &PsiParams, cov: &DMatrix<f64>, z: f64) -> Vec<Interval> {
    let names = psi.names();
    let values = psi.values();
    names
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(i, (name, estimate))| {
            if name == "phi" || i >= cov.nrows() {
                return Interval { name, estimate, lower: None, upper: None };
            }
            let half = z * cov[(i, i)].max(0.0).sqrt();
            Interval { name, estimate, lower: Some(estimate - half), upper: Some(estimate + half) }
        })
        .collect()
}

/// Monte Carlo error covariance and the ridge, if any, it needed.
#[derive(Debug, Clone)]
pub struct McCovariance {
    pub cov: DMatrix<f64>,
    pub ridge: Option<f64>,
}

/// `Â⁻¹ B̂ Â⁻¹ / K` at `psi`. A ridge is added to `−Â` when it is not
/// positive definite.
pub fn mc_error_cov(obj: &McObjective, psi: &PsiParams) -> Result<McCovariance> {
    let a = obj.evaluate(psi)?.hessian;
    let b = obj.score_outer_product(psi)?;
    let mut neg = -a;
    symmetrize(&mut neg);
    let scale = neg.diagonal().amax().max(1e-300);
    let mut ridge = None;
    let mut reg = neg.clone();
    let mut r = 1e-8 * scale;
    let chol = loop {
        if let Some(ch) = reg.clone().cholesky() {
            break ch;
        }
        if r > 1e8 * scale {
            return Err(SglmmError::Numerical("information matrix could not be regularized".into()));
        }
        reg = neg.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += r;
        }
        ridge = Some(r);
        r *= 10.0;
    };
    let inv = chol.inverse();
    let mut cov = &inv * b * &inv / obj.k() as f64;
    symmetrize(&mut cov);
    Ok(McCovariance { cov, ridge })
}

/// Covariance summaries gathered from a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub names: Vec<String>,
    pub fisher_cov: Option<DMatrix<f64>>,
    pub mc_cov: Option<DMatrix<f64>>,
    /// Over every parameter including the range.
    pub bootstrap_cov: Option<DMatrix<f64>>,
    pub ci_level: f64,
}

impl CovarianceReport {
    pub fn from_fit(fit: &McmlFit, bootstrap: Option<&BootstrapReport>, ci_level: f64) -> Self {
        Self {
            names: fit.psi_hat.names(),
            fisher_cov: fit.fisher_cov.clone(),
            mc_cov: fit.mc_error_cov.clone(),
            bootstrap_cov: bootstrap.map(|b| b.cov.clone()),
            ci_level,
        }
    }
}

/// Outcome of one bootstrap refit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub converged: bool,
    /// Parameter values in `PsiParams::names` order; empty when the fit failed.
    pub values: Vec<f64>,
    pub error: Option<String>,
}

impl ReplicateOutcome {
    fn usable(&self) -> bool {
        self.converged && self.error.is_none()
    }
}

/// Simulates from `fit` with `seed` and refits with `cfg`, whose own seed is
/// replaced by `seed` so each replicate has independent chains.
pub fn bootstrap_replicate(fit: &McmlFit, template: &SpatialDataset, cfg: &FitConfig, index: usize, seed: u64) -> ReplicateOutcome {
    let run = || -> Result<McmlFit> {
        let ds = simulate_from_fit(fit, template, seed)?;
        let data = ds.model_data(fit.family)?;
        let cfg = FitConfig { seed, ..cfg.clone() };
        fit_domain(&data, &ds.domain(), &cfg)
    };
    match run() {
        Ok(refit) => ReplicateOutcome { index, seed, converged: refit.converged, values: refit.psi_hat.values(), error: None },
        Err(e) => ReplicateOutcome { index, seed, converged: false, values: Vec::new(), error: Some(e.to_string()) },
    }
}

/// Per-replicate outcomes of a parametric bootstrap, in replicate order.
/// Replicate `b` uses seed `derive_seed(master_seed, Bootstrap, b)`.
pub fn bootstrap_replicates(
    fit: &McmlFit,
    template: &SpatialDataset,
    cfg: &FitConfig,
    replicates: usize,
    master_seed: u64,
) -> Vec<ReplicateOutcome> {
    (0..replicates)
        .into_par_iter()
        .map(|b| bootstrap_replicate(fit, template, cfg, b, derive_seed(master_seed, Stream::Bootstrap, b as u64)))
        .collect()
}

/// Bootstrap summary over the usable replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub sd: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Percentile intervals, range included.
    pub intervals: Vec<Interval>,
    pub level: f64,
    pub used: usize,
    pub dropped: usize,
    /// Replicates with `σ̂²` above `SIGMA2_FLAG_FACTOR` times the estimate.
    pub flagged: Vec<usize>,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Summarizes replicate outcomes. Fails when more than a fifth of them are
/// unusable or fewer than two remain.
pub fn summarize_bootstrap(psi_hat: &PsiParams, replicates: Vec<ReplicateOutcome>, level: f64) -> Result<BootstrapReport> {
    z_for_level(level)?;
    let total = replicates.len();
    let kept: Vec<&ReplicateOutcome> = replicates.iter().filter(|r| r.usable()).collect();
    let dropped = total - kept.len();
    if dropped as f64 > MAX_DROPPED_FRACTION * total as f64 || kept.len() < 2 {
        return Err(SglmmError::Bootstrap { dropped, total });
    }
    let names = psi_hat.names();
    let estimates = psi_hat.values();
    let d = names.len();
    let b = kept.len();
    let samples = DMatrix::from_fn(b, d, |i, j| kept[i].values[j]);
    let means = DVector::from_iterator(d, (0..d).map(|j| samples.column(j).mean()));
    let centered = DMatrix::from_fn(b, d, |i, j| samples[(i, j)] - means[j]);
    let mut cov = centered.transpose() * &centered / (b - 1) as f64;
    symmetrize(&mut cov);
    let sd = (0..d).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let alpha = (1.0 - level) / 2.0;
    let intervals = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = samples.column(j).iter().copied().collect();
            let lower = quantile(&mut col, alpha);
            let upper = quantile(&mut col, 1.0 - alpha);
            Interval { name: names[j].clone(), estimate: estimates[j], lower: Some(lower), upper: Some(upper) }
        })
        .collect();
    let flagged = match psi_hat.theta {
        Theta::Continuous { sigma2, .. } => {
            let j = psi_hat.p();
            kept.iter().filter(|r| r.values[j] > SIGMA2_FLAG_FACTOR * sigma2).map(|r| r.index).collect()
        }
        Theta::Discrete { .. } => Vec::new(),
    };
    Ok(BootstrapReport { names, estimates, sd, cov, intervals, level, used: b, dropped, flagged, replicates })
}

/// Simulates `replicates` datasets at `ψ̂`, refits each, and summarizes.
pub fn parametric_bootstrap(
    fit: &McmlFit,
    template: &SpatialDataset,
    cfg: &FitConfig,
    replicates: usize,
    master_seed: u64,
    level: f64,
) -> Result<BootstrapReport> {
    if replicates < 2 {
        return invalid("the bootstrap needs at least two replicates");
    }
    summarize_bootstrap(&fit.psi_hat, bootstrap_replicates(fit, template, cfg, replicates, master_seed), level)
}

/// Writes one row per replicate: index, seed, parameters, converged flag and
/// error message.
pub fn write_replicates_csv(names: &[String], replicates: &[ReplicateOutcome], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["replicate".to_string(), "seed".into()];
    header.extend(names.iter().cloned());
    header.extend(["converged".to_string(), "error".into()]);
    out.write_record(&header).map_err(std::io::Error::other)?;
    for r in replicates {
        let mut row = vec![r.index.to_string(), r.seed.to_string()];
        if r.values.len() == names.len() {
            row.extend(r.values.iter().map(|v| v.to_string()));
        } else {
            row.extend(names.iter().map(|_| "NA".to_string()));
        }
        row.push(r.converged.to_string());
        row.push(r.error.clone().unwrap_or_default());
        out.write_record(&row).map_err(std::io::Error::other)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::Family;
    use crate::model::{ModelData, Prior};

    #[test]
    fn z_constants() {
        assert_eq!(z_for_level(0.95).unwrap(), 1.959964);
        assert_eq!(z_for_level(0.90).unwrap(), 1.644854);
        assert!((z_for_level(0.99).unwrap() - 2.575829).abs() < 1e-6);
        assert!(z_for_level(1.0).is_err());
    }

    #[test]
    fn wald_identity_and_two_by_two() {
        let psi = PsiParams::continuous(vec![0.5], 2.0, 0.3).unwrap();
        let iv = wald_intervals(&psi, &DMatrix::identity(2, 2), Z_025);
        assert!((iv[0].upper.unwrap() - 0.5 - 1.959964).abs() < 1e-12);
        assert_eq!(iv[2].name, "phi");
        assert!(iv[2].lower.is_none() && iv[2].upper.is_none());
        // −A = [[4, 1], [1, 2]], inverse = [[2, −1], [−1, 4]] / 7
        let a = -DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let cov = neg_inverse(&a).unwrap();
        assert!((cov[(0, 0)] - 2.0 / 7.0).abs() < 1e-14);
        assert!((cov[(1, 1)] - 4.0 / 7.0).abs() < 1e-14);
        assert!((cov[(0, 1)] + 1.0 / 7.0).abs() < 1e-14);
        let iv90 = wald_intervals(&psi, &cov, 1.644854);
        let iv95 = wald_intervals(&psi, &cov, 1.959964);
        let ratio = (iv95[1].upper.unwrap() - 2.0) / (iv90[1].upper.unwrap() - 2.0);
        assert!((ratio - 1.959964 / 1.644854).abs() < 1e-12);
    }

    fn toy_objective(draws: DMatrix<f64>) -> (McObjective, PsiParams) {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let data = ModelData::new(vec![0.0, 1.0, 3.0, 2.0], x, None, Family::Poisson).unwrap();
        let basis = DMatrix::from_row_slice(4, 1, &[0.5, -0.5, 1.0, 0.2]);
        let psi = PsiParams::continuous(vec![0.3], 0.8, 0.2).unwrap();
        (McObjective::from_draws(&data, &basis, &Prior::Iid { m: 1 }, draws, &psi).unwrap(), psi)
    }

    #[test]
    fn sandwich_at_importance_point_uses_plain_scores() {
        let draws = DMatrix::from_fn(1, 200, |_, k| ((k as f64) * 0.37).sin());
        let (obj, psi) = toy_objective(draws.clone());
        let b = obj.score_outer_product(&psi).unwrap();
        // all weights are one: B̂ is the plain mean outer product of scores
        let data_fixed = 0.3;
        let mut want = DMatrix::zeros(2, 2);
        let basis = [0.5, -0.5, 1.0, 0.2];
        let z = [0.0, 1.0, 3.0, 2.0];
        for k in 0..200 {
            let d = draws[(0, k)];
            let sb: f64 = (0..4).map(|i| z[i] - (data_fixed + basis[i] * d).exp()).sum();
            let ss = -0.5 / 0.8 + d * d / (2.0 * 0.64);
            let s = DVector::from_vec(vec![sb, ss]);
            want += &s * s.transpose();
        }
        want /= 200.0;
        assert!((b - want).amax() < 1e-10);
        let mc = mc_error_cov(&obj, &psi).unwrap();
        assert!(mc.ridge.is_none());
        assert!((mc.cov.clone() - mc.cov.transpose()).amax() < 1e-12);
        assert!(mc.cov.diagonal().iter().all(|v| *v >= 0.0));
    }

    fn outcome(index: usize, values: Vec<f64>, converged: bool) -> ReplicateOutcome {
        ReplicateOutcome { index, seed: index as u64, converged, values, error: None }
    }

    #[test]
    fn bootstrap_summary() {
        let psi = PsiParams::continuous(vec![1.0], 1.0, 0.2).unwrap();
        let reps: Vec<_> = (0..10).map(|i| outcome(i, vec![1.0 + 0.1 * i as f64, 1.0, 0.2], true)).collect();
        let r = summarize_bootstrap(&psi, reps, 0.9).unwrap();
        assert_eq!(r.used, 10);
        assert!(r.sd[1] == 0.0 && r.sd[0] > 0.0);
        assert!((r.intervals[0].lower.unwrap() - 1.045).abs() < 1e-12);
        assert!(r.intervals[2].lower.is_some());
        // identical replicates: zero spread
        let same: Vec<_> = (0..2).map(|i| outcome(i, vec![1.3, 0.9, 0.25], true)).collect();
        let r = summarize_bootstrap(&psi, same, 0.95).unwrap();
        assert!(r.sd.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn bootstrap_drops_and_flags() {
        let psi = PsiParams::continuous(vec![1.0], 1.0, 0.2).unwrap();
        let mut reps: Vec<_> = (0..10).map(|i| outcome(i, vec![1.0, 1.0 + i as f64, 0.2], true)).collect();
        reps[3].values[1] = 500.0;
        reps[4].converged = false;
        reps[5].error = Some("boom".into());
        let r = summarize_bootstrap(&psi, reps.clone(), 0.95).unwrap();
        assert_eq!((r.used, r.dropped), (8, 2));
        assert_eq!(r.flagged, vec![3]);
        reps[6].converged = false;
        assert!(matches!(summarize_bootstrap(&psi, reps.clone(), 0.95), Err(SglmmError::Bootstrap { dropped: 3, total: 10 })));
        let mut buf = Vec::new();
        write_replicates_csv(&psi.names(), &reps, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replicate,seed,beta1,sigma2,phi,converged,error\n"));
        assert_eq!(text.lines().count(), 11);
    }
}
