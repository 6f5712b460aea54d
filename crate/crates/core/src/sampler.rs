//! Random-walk Metropolis–Hastings for the reduced random effects, and chain
//! diagnostics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Result, SglmmError};
use crate::glm::PsiParams;
use crate::model::{ModelData, Prior};
use crate::rng::rng_from_seed;

/// Unnormalized log-density the sampler draws from.
pub trait LogTarget {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// `log f(Z | β, M, δ) + log f(δ | θ)` at fixed `ψ̃`.
pub struct SpatialTarget<'a> {
    data: &'a ModelData,
    basis: &'a DMatrix<f64>,
    prior: &'a Prior,
    fixed: DVector<f64>,
    scale: f64,
}

impl<'a> SpatialTarget<'a> {
    pub fn new(data: &'a ModelData, basis: &'a DMatrix<f64>, prior: &'a Prior, psi: &PsiParams) -> Result<Self> {
        psi.validate()?;
        prior.check_theta(&psi.theta)?;
        if basis.nrows() != data.n() {
            return invalid("basis rows differ from the number of observations");
        }
        if basis.ncols() != prior.dim() {
            return invalid("basis rank differs from the prior dimension");
        }
        if psi.p() != data.p() {
            return invalid("coefficient count differs from design columns");
        }
        Ok(Self { data, basis, prior, fixed: data.fixed_predictor(&psi.beta), scale: psi.scale() })
    }

    /// Log-target with a dimension check.
    pub fn log_target(&self, delta: &DVector<f64>) -> Result<f64> {
        if delta.len() != self.dim() {
            return invalid(format!("random effect has length {}, expected {}", delta.len(), self.dim()));
        }
        Ok(self.log_density(delta.as_slice()))
    }

    fn gradient_and_neg_hessian(&self, delta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let eta = &self.fixed + self.basis * delta;
        let n = eta.len();
        let mut resid = DVector::zeros(n);
        let mut weighted = self.basis.clone();
        for i in 0..n {
            let (mu, var) = self.data.family.mean_var(eta[i]);
            resid[i] = self.data.z[i] - mu;
            weighted.row_mut(i).scale_mut(var);
        }
        let precision = self.prior.precision(self.scale);
        let grad = self.basis.transpose() * resid - &precision * delta;
        let mut info = self.basis.transpose() * weighted + precision;
        crate::linalg::symmetrize(&mut info);
        (grad, info)
    }

    /// Mode of the target and the negative Hessian there, by damped Newton.
    pub fn laplace(&self, start: Option<&DVector<f64>>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.dim();
        let mut x = start.cloned().unwrap_or_else(|| DVector::zeros(m));
        let mut f = self.log_density(x.as_slice());
        if !f.is_finite() {
            x = DVector::zeros(m);
            f = self.log_density(x.as_slice());
        }
        for _ in 0..100 {
            let (g, info) = self.gradient_and_neg_hessian(&x);
            if g.amax() < 1e-8 {
                return Ok((x, info));
            }
            let step =
                info.clone().cholesky().ok_or_else(|| SglmmError::Numerical("target curvature not positive definite".into()))?.solve(&g);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let cand = &x + &step * t;
                let fc = self.log_density(cand.as_slice());
                if fc.is_finite() && fc >= f {
                    x = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let (_, info) = self.gradient_and_neg_hessian(&x);
        Ok((x, info))
    }

    /// Random-walk factor `c · chol(H⁻¹)` with `c = 2.38/√m`, from the
    /// curvature at the mode.
    pub fn laplace_proposal(&self, neg_hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.dim();
        let inv = crate::linalg::neg_inverse(&(-neg_hessian)).map_err(|e| SglmmError::Indefinite { eigenvalue: e })?;
        let l = inv.cholesky().ok_or_else(|| SglmmError::Numerical("proposal covariance not positive definite".into()))?.l();
        Ok(l * (2.38 / (m as f64).sqrt()))
    }
}

impl LogTarget for SpatialTarget<'_> {
    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let delta = nalgebra::DVectorView::from_slice(x, x.len());
        let w = self.basis * delta;
        self.data.loglik(&self.fixed, w.as_slice()) + self.prior.log_density(x, self.scale)
    }
}

/// Settings of one Metropolis–Hastings run.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    /// Per-coordinate standard deviation of the isotropic proposal.
    pub proposal_sd: f64,
    pub seed: u64,
    pub burn_in: usize,
    /// Cap on post-burn-in iterations.
    pub max_iterations: usize,
    pub ess_target: f64,
    /// ESS of the first coordinate is re-checked this often.
    pub check_every: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Starting state; zero when absent.
    pub initial: Option<DVector<f64>>,
    /// Lower-triangular factor `L` for correlated steps `δ + Lε`; replaces
    /// the isotropic proposal when present.
    pub proposal_factor: Option<DMatrix<f64>>,
}

impl ChainConfig {
    pub fn new(ess_target: f64, seed: u64) -> Self {
        Self {
            proposal_sd: 0.1,
            seed,
            burn_in: 1000,
            max_iterations: 1_000_000,
            ess_target,
            check_every: 500,
            thin: 1,
            initial: None,
            proposal_factor: None,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if !(self.proposal_sd > 0.0) || self.max_iterations == 0 || self.check_every == 0 || self.thin == 0 {
            return invalid("chain settings must be positive");
        }
        if !(self.ess_target > 0.0) {
            return invalid("ESS target must be positive");
        }
        if let Some(init) = &self.initial {
            if init.len() != m {
                return invalid("initial state has the wrong dimension");
            }
        }
        if let Some(l) = &self.proposal_factor {
            if l.nrows() != m || l.ncols() != m {
                return invalid("proposal factor has the wrong shape");
            }
        }
        Ok(())
    }
}

/// Retained draws and diagnostics of one chain.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeltaChain {
    /// m x K matrix; column k is the k-th retained draw.
    pub draws: DMatrix<f64>,
    pub log_targets: Vec<f64>,
    pub acceptance_rate: f64,
    pub ess_first_coord: f64,
    /// Post-burn-in iterations run.
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
}

impl DeltaChain {
    pub fn k(&self) -> usize {
        self.draws.ncols()
    }

    pub fn m(&self) -> usize {
        self.draws.nrows()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.draws.column_mean()
    }

    /// Dumps `iteration, d0..d{m-1}, log_target`, one row per retained draw.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut header = vec!["iteration".to_string()];
        header.extend((0..self.m()).map(|j| format!("d{j}")));
        header.push("log_target".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.k() {
            let mut row = vec![(self.burn_in + (k + 1) * self.thin).to_string()];
            row.extend(self.draws.column(k).iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", self.log_targets[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Metropolis acceptance for a symmetric proposal, given `u ~ U(0,1)`.
#[inline]
pub fn metropolis_accept(current: f64, proposed: f64, u: f64) -> bool {
    proposed.is_finite() && u.ln() < proposed - current
}

/// Runs a random-walk Metropolis chain until the first coordinate reaches the
/// ESS target or the iteration cap is hit.
pub fn run_chain(cfg: &ChainConfig, target: &impl LogTarget) -> Result<DeltaChain> {
    let m = target.dim();
    if m == 0 {
        return invalid("target has dimension zero");
    }
    cfg.validate(m)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut x = cfg.initial.clone().unwrap_or_else(|| DVector::zeros(m));
    let mut lp = target.log_density(x.as_slice());
    if !lp.is_finite() {
        return Err(SglmmError::Numerical("log-target is not finite at the starting state".into()));
    }
    let mut eps = DVector::zeros(m);
    let mut prop = DVector::zeros(m);
    let mut accepted = 0usize;
    let mut total = 0usize;

    let mut step = |x: &mut DVector<f64>, lp: &mut f64, rng: &mut crate::rng::StreamRng| {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        match &cfg.proposal_factor {
            Some(l) => prop.gemv(1.0, l, &eps, 0.0),
            None => prop.copy_from(&(&eps * cfg.proposal_sd)),
        }
        prop += &*x;
        let lq = target.log_density(prop.as_slice());
        let u: f64 = rng.random();
        total += 1;
        if metropolis_accept(*lp, lq, u) {
            x.copy_from(&prop);
            *lp = lq;
            accepted += 1;
        }
    };

    for _ in 0..cfg.burn_in {
        step(&mut x, &mut lp, &mut rng);
    }

    let mut trace = Vec::new();
    let mut kept: Vec<f64> = Vec::new();
    let mut kept_lp = Vec::new();
    let mut ess = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        step(&mut x, &mut lp, &mut rng);
        iterations += 1;
        trace.push(x[0]);
        if iterations % cfg.thin == 0 {
            kept.extend_from_slice(x.as_slice());
            kept_lp.push(lp);
        }
        if iterations % cfg.check_every == 0 && trace.len() >= 10 {
            ess = effective_sample_size(&trace).unwrap_or(0.0);
            if ess >= cfg.ess_target {
                converged = true;
                break;
            }
        }
    }
    if !converged && trace.len() >= 10 {
        ess = effective_sample_size(&trace).unwrap_or(0.0);
        converged = ess >= cfg.ess_target;
    }
    if kept_lp.is_empty() {
        kept.extend_from_slice(x.as_slice());
        kept_lp.push(lp);
    }
    let k = kept_lp.len();
    Ok(DeltaChain {
        draws: DMatrix::from_vec(m, k, kept),
        log_targets: kept_lp,
        acceptance_rate: accepted as f64 / total.max(1) as f64,
        ess_first_coord: ess,
        iterations,
        converged,
        seed: cfg.seed,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
    })
}

/// Biased sample autocovariances at lags `0..n`, via FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = 1.0 / (size as f64 * n as f64);
    buf.iter().take(n).map(|c| c.re * scale).collect()
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Effective sample size `K / (1 + 2Σρ̂ᵢ)` with Geyer's initial positive
/// sequence truncation, clamped to `(0, K]`.
pub fn effective_sample_size(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 10 {
        return invalid(format!("ESS needs at least 10 draws, got {n}"));
    }
    if is_constant(x) {
        return Err(SglmmError::DegenerateChain("chain is constant".into()));
    }
    let acov = autocovariance(x);
    if !(acov[0] > 0.0) {
        return Err(SglmmError::DegenerateChain("chain has zero variance".into()));
    }
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = (acov[k] + acov[k + 1]) / acov[0];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    let ess = n as f64 / tau;
    Ok(ess.clamp(f64::MIN_POSITIVE, n as f64))
}

/// Batch-means standard error of the chain mean with `⌊√K⌋` batches.
pub fn batch_means_ase(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 100 {
        return invalid(format!("batch means need at least 100 draws, got {n}"));
    }
    let b = (n as f64).sqrt().floor() as usize;
    let len = n / b;
    let means: Vec<f64> = (0..b).map(|j| x[j * len..(j + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var_batch = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok((len as f64 * var_batch / (b * len) as f64).sqrt())
}

/// Gelman–Rubin statistic implied by an ESS over `chains` chains:
/// `√(1 + chains/ess)`.
pub fn gelman_rubin_from_ess(ess: f64, chains: usize) -> Result<f64> {
    if chains == 0 {
        return Ok(1.0);
    }
    if !(ess > 0.0) {
        return invalid("ESS must be positive");
    }
    Ok((1.0 + chains as f64 / ess).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::Family;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand_distr::Distribution;
    use statrs::function::gamma::ln_gamma;

    struct Normal1;

    impl LogTarget for Normal1 {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
    }

    fn iid_normal(k: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..k).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn standard_normal_moments() {
        let mut cfg = ChainConfig::new(1000.0, 11);
        cfg.proposal_sd = 2.4;
        let chain = run_chain(&cfg, &Normal1).unwrap();
        assert!(chain.converged && chain.ess_first_coord >= 1000.0);
        let xs: Vec<f64> = chain.draws.row(0).iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let ase = batch_means_ase(&xs).unwrap();
        assert!(mean.abs() < 3.0 * ase, "mean {mean} ase {ase}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        assert!(chain.acceptance_rate > 0.0 && chain.acceptance_rate < 1.0);
        assert!(chain.log_targets.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chains_are_reproducible() {
        let cfg = ChainConfig::new(50.0, 5);
        let a = run_chain(&cfg, &Normal1).unwrap();
        let b = run_chain(&cfg, &Normal1).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = run_chain(&ChainConfig::new(50.0, 6), &Normal1).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn cap_reached_flags_non_convergence() {
        let mut cfg = ChainConfig::new(1e9, 1);
        cfg.max_iterations = 1000;
        let chain = run_chain(&cfg, &Normal1).unwrap();
        assert!(!chain.converged);
        assert_eq!(chain.iterations, 1000);
        assert_eq!(chain.k(), 1000);
    }

    fn single_poisson() -> (ModelData, DMatrix<f64>, Prior, PsiParams) {
        let data = ModelData::new(vec![4.0], DMatrix::from_element(1, 1, 1.0), None, Family::Poisson).unwrap();
        (data, DMatrix::from_element(1, 1, 1.0), Prior::Iid { m: 1 }, PsiParams::continuous(vec![0.3], 0.7, 1.0).unwrap())
    }

    #[test]
    fn single_datum_posterior_mean_matches_quadrature() {
        let (data, basis, prior, psi) = single_poisson();
        let target = SpatialTarget::new(&data, &basis, &prior, &psi).unwrap();
        // oracle: fine trapezoid rule on the unnormalized posterior
        let dens = |d: f64| (4.0 * (0.3 + d) - (0.3 + d).exp() - d * d / 1.4).exp();
        let (lo, hi, steps) = (-8.0, 8.0, 40_000);
        let h = (hi - lo) / steps as f64;
        let (mut z0, mut z1) = (0.0, 0.0);
        for i in 0..=steps {
            let d = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            z0 += w * dens(d);
            z1 += w * d * dens(d);
        }
        let exact = z1 / z0;
        let mut cfg = ChainConfig::new(2000.0, 21);
        cfg.proposal_sd = 1.0;
        let chain = run_chain(&cfg, &target).unwrap();
        let xs: Vec<f64> = chain.draws.row(0).iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let ase = batch_means_ase(&xs).unwrap();
        assert!((mean - exact).abs() < 3.0 * ase, "mean {mean} exact {exact} ase {ase}");
    }

    #[test]
    fn log_target_proportional_to_brute_force_density() {
        let z = vec![1.0, 0.0, 3.0];
        let x = DMatrix::from_row_slice(3, 1, &[0.2, -0.4, 0.9]);
        let data = ModelData::new(z.clone(), x.clone(), None, Family::Poisson).unwrap();
        let basis = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, -0.3, 0.8, 0.6, 0.2]);
        let prior = Prior::Iid { m: 2 };
        let psi = PsiParams::continuous(vec![0.7], 0.5, 1.0).unwrap();
        let target = SpatialTarget::new(&data, &basis, &prior, &psi).unwrap();
        let brute = |d: [f64; 2]| {
            let mut p = 1.0;
            for i in 0..3 {
                let eta = 0.7 * x[(i, 0)] + basis[(i, 0)] * d[0] + basis[(i, 1)] * d[1];
                let mu: f64 = eta.exp();
                p *= mu.powf(z[i]) * (-mu).exp() / ln_gamma(z[i] + 1.0).exp();
            }
            p * (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * 0.5)).exp() / (2.0 * std::f64::consts::PI * 0.5)
        };
        let mut ratios = Vec::new();
        for a in -4..=4 {
            for b in -4..=4 {
                let d = [a as f64 * 0.5, b as f64 * 0.5];
                ratios.push(target.log_density(&d).exp() / brute(d));
            }
        }
        let r0 = ratios[0];
        assert!(ratios.iter().all(|r| (r / r0 - 1.0).abs() < 1e-10));
        assert!(target.log_target(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn prior_part_at_zero_and_unit_vector() {
        let prior = Prior::Iid { m: 2 };
        let base = prior.log_density(&[0.0, 0.0], 1.0);
        assert!((prior.log_density(&[1.0, 0.0], 1.0) - base + 0.5).abs() < 1e-14);
    }

    #[test]
    fn two_state_detailed_balance() {
        // states {-a, a} with forced proposals to the other state
        let a = 0.8;
        let lp = |s: f64| -0.5 * (s - 0.3).powi(2);
        let mut rng = rng_from_seed(99);
        let trials = 20_000;
        for (from, to) in [(a, -a), (-a, a)] {
            let p = (lp(to) - lp(from)).exp().min(1.0);
            let hits = (0..trials).filter(|_| metropolis_accept(lp(from), lp(to), rng.random())).count();
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((hits as f64 / trials as f64 - p).abs() <= 3.0 * sd + 1e-12);
        }
    }

    #[test]
    fn laplace_mode_zeroes_gradient() {
        let (data, basis, prior, psi) = single_poisson();
        let target = SpatialTarget::new(&data, &basis, &prior, &psi).unwrap();
        let (mode, info) = target.laplace(None).unwrap();
        let h = 1e-5;
        let f = |d: f64| target.log_density(&[d]);
        assert!(((f(mode[0] + h) - f(mode[0] - h)) / (2.0 * h)).abs() < 1e-6);
        let d2 = (f(mode[0] + h) - 2.0 * f(mode[0]) + f(mode[0] - h)) / (h * h);
        assert!((d2 + info[(0, 0)]).abs() < 1e-3);
    }

    #[test]
    fn ess_iid_and_ar1() {
        let k = 10_000;
        let xs = iid_normal(k, 1);
        let ess = effective_sample_size(&xs).unwrap();
        assert!((ess / k as f64 - 1.0).abs() < 0.15, "{ess}");

        let k = 20_000;
        let e = iid_normal(k, 2);
        let mut ar = vec![0.0; k];
        for i in 1..k {
            ar[i] = 0.5 * ar[i - 1] + e[i];
        }
        let ess = effective_sample_size(&ar).unwrap();
        let want = k as f64 / 3.0;
        assert!((ess / want - 1.0).abs() < 0.15, "{ess} vs {want}");

        assert!(effective_sample_size(&xs[..9]).is_err());
        assert!(matches!(effective_sample_size(&[2.0; 50]), Err(SglmmError::DegenerateChain(_))));
    }

    #[test]
    fn batch_means_examples() {
        let k = 10_000;
        let xs = iid_normal(k, 3);
        let ase = batch_means_ase(&xs).unwrap();
        assert!((ase * (k as f64).sqrt() - 1.0).abs() < 0.25, "{ase}");
        let scaled: Vec<f64> = xs.iter().map(|v| 3.0 * v).collect();
        assert!((batch_means_ase(&scaled).unwrap() - 3.0 * ase).abs() < 1e-12);
        assert_eq!(batch_means_ase(&[1.5; 200]).unwrap(), 0.0);
        assert!(batch_means_ase(&xs[..99]).is_err());
    }

    #[test]
    fn gelman_rubin_values() {
        assert!((gelman_rubin_from_ess(1000.0, 10).unwrap() - 1.004988).abs() < 5e-7);
        assert!((gelman_rubin_from_ess(150.0, 10).unwrap() - 1.032796).abs() < 5e-7);
        assert_eq!(gelman_rubin_from_ess(10.0, 0).unwrap(), 1.0);
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let xs = iid_normal(64, 4);
        let fast = autocovariance(&xs);
        let mean = xs.iter().sum::<f64>() / 64.0;
        for lag in [0, 1, 5, 63] {
            let direct: f64 = (0..64 - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum::<f64>() / 64.0;
            assert!((fast[lag] - direct).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ess_is_affine_invariant(seed in 0u64..1000, shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
            let mut rng = rng_from_seed(seed);
            let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
            let mut xs = vec![0.0; 500];
            for i in 1..500 {
                xs[i] = 0.6 * xs[i - 1] + normal.sample(&mut rng);
            }
            let ys: Vec<f64> = xs.iter().map(|v| shift + scale * v).collect();
            let a = effective_sample_size(&xs).unwrap();
            let b = effective_sample_size(&ys).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }
    }
}
