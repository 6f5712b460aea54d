//! The iterative importance search followed by the final approximation run.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::newton::{newton_raphson, NewtonConfig, NewtonObjective, NewtonResult};
use super::objective::McObjective;
use super::profile::{bounded_maximize, grid_neighbors, PHI_GRID_FACTORS};
use crate::error::{invalid, Result, SglmmError};
use crate::glm::{initial_phi, initial_sigma2, initial_tau, irls_initial_estimates, Family, PsiParams};
use crate::kernels::{build_precision, AdjacencyGraph, Coordinates, Smoothness};
use crate::model::{ModelData, Prior};
use crate::projection::{moran_basis, BasisKind, BasisMethod, ContinuousBasisBuilder, ProjectionBasis, DEFAULT_RANK};
use crate::rng::{derive_seed, Stream};
use crate::sampler::{run_chain, ChainConfig, DeltaChain, SpatialTarget};

/// Upper-tail 5% standard normal quantile used by the stopping rule.
pub const Z_05: f64 = 1.644854;

/// Largest problem accepted by the full-rank reference mode.
pub const REFERENCE_MAX_N: usize = 200;

const MAX_STEP_HALVINGS: usize = 8;

/// Diagonal added to the lattice precision in the full-rank reference mode.
pub const REFERENCE_GMRF_JITTER: f64 = 1e-6;

/// How random-walk steps are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    /// `N(0, proposal_sd² I)` steps from `δ = 0`.
    Isotropic,
    /// Steps shaped by the curvature at the mode of the target, started at
    /// the mode.
    Laplace,
}

/// Settings shared by the continuous and lattice fits.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub rank: usize,
    pub nu: Smoothness,
    pub basis_method: BasisMethod,
    /// Multiply the continuous basis by `P⊥`.
    pub restricted: bool,
    pub epsilon: f64,
    pub z_stop: f64,
    pub ess_search_multiplier: f64,
    pub ess_final_multiplier: f64,
    pub max_outer: usize,
    pub phi_factors: Vec<f64>,
    pub phi_max: f64,
    /// Outer steps are halved toward the importance parameter until the
    /// importance weights keep this fraction of `K` as effective draws; the
    /// stopping rule then waits for an undamped step. Zero disables it.
    pub min_weight_ess: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub proposal: ProposalKind,
    pub proposal_sd: f64,
    pub burn_in: usize,
    pub check_every: usize,
    pub max_chain_iterations: usize,
    pub thin: usize,
    pub seed: u64,
    /// Starting parameter; GLM-based values when absent.
    pub initial: Option<PsiParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            nu: Smoothness::FiveHalves,
            basis_method: BasisMethod::Auto,
            restricted: false,
            epsilon: 0.5,
            z_stop: Z_05,
            ess_search_multiplier: 3.0,
            ess_final_multiplier: 20.0,
            max_outer: 50,
            phi_factors: PHI_GRID_FACTORS.to_vec(),
            phi_max: f64::INFINITY,
            min_weight_ess: 0.0,
            newton_tol: 1e-6,
            newton_max_iter: 100,
            proposal: ProposalKind::Laplace,
            proposal_sd: 0.1,
            burn_in: 1000,
            check_every: 500,
            max_chain_iterations: 2_000_000,
            thin: 10,
            seed: 1,
            initial: None,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return invalid("rank must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.z_stop >= 0.0) {
            return invalid("stopping threshold must be positive");
        }
        if !(self.ess_search_multiplier > 0.0 && self.ess_final_multiplier > 0.0) {
            return invalid("ESS multipliers must be positive");
        }
        if self.max_outer == 0 || self.thin == 0 || self.check_every == 0 || self.max_chain_iterations == 0 {
            return invalid("iteration caps must be positive");
        }
        if self.phi_factors.is_empty() || self.phi_factors.iter().any(|&f| !(f > 0.0)) {
            return invalid("range grid factors must be positive");
        }
        if !(0.0..1.0).contains(&self.min_weight_ess) {
            return invalid("min_weight_ess must be in [0, 1)");
        }
        if !(self.phi_max > 0.0) {
            return invalid("phi_max must be positive");
        }
        if !(self.proposal_sd > 0.0) {
            return invalid("proposal_sd must be positive");
        }
        Ok(())
    }
}

/// One outer iteration of the importance search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Importance parameter the draws were taken at.
    pub psi: PsiParams,
    /// Update found from those draws.
    pub psi_next: PsiParams,
    /// `l̂_t` at the undamped update.
    pub loglik_gain: f64,
    /// Fraction of the undamped step taken to reach `psi_next`.
    pub step_fraction: f64,
    pub ase: f64,
    pub k: usize,
    pub ess: f64,
    pub acceptance_rate: f64,
    pub wall_seconds: f64,
}

/// Run settings and diagnostics recorded with every fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    /// Matérn smoothness of the continuous basis.
    pub nu: f64,
    pub sketch_seed: u64,
    pub rank: usize,
    pub basis_kind: String,
    pub restricted: bool,
    pub proposal: ProposalKind,
    pub proposal_sd: f64,
    pub start_state: String,
    pub burn_in: usize,
    pub thin: usize,
    pub final_newton_reuses_samples: bool,
    pub outer_iterations: usize,
    pub search_converged: bool,
    pub final_k: usize,
    pub final_ess: f64,
    pub final_acceptance_rate: f64,
    pub final_chain_converged: bool,
    pub final_max_log_weight: f64,
    pub search_seconds: f64,
    pub final_seconds: f64,
    pub warnings: Vec<String>,
}

/// Result of a projection-based MCML fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmlFit {
    pub family: Family,
    pub psi_hat: PsiParams,
    pub psi_initial: PsiParams,
    /// Importance parameter of the final run.
    pub psi_tilde: PsiParams,
    /// Hessian `A` of `l̂` at `ψ̂` over `(β, σ²)` or `(β, τ)`.
    pub hessian: DMatrix<f64>,
    /// `(−A)⁻¹`, absent when `−A` is not positive definite.
    pub fisher_cov: Option<DMatrix<f64>>,
    /// `A⁻¹B̂A⁻¹/K`.
    pub mc_error_cov: Option<DMatrix<f64>>,
    /// `l̂(ψ̂)` relative to `ψ̃` for the final draws.
    pub loglik_gain: f64,
    pub final_chain: DeltaChain,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Basis at `ψ̂`; the final draws are in its coordinates.
    pub basis: ProjectionBasis,
    pub delta_mean: DVector<f64>,
    /// `M δ̄` at the observed sites.
    pub w_hat: DVector<f64>,
    pub metadata: FitMetadata,
}

enum BasisSource {
    Continuous(ContinuousBasisBuilder),
    Fixed(ProjectionBasis),
}

impl BasisSource {
    fn at(&self, phi: Option<f64>, reference: Option<&ProjectionBasis>) -> Result<ProjectionBasis> {
        match self {
            BasisSource::Continuous(b) => {
                let phi = phi.ok_or_else(|| SglmmError::InvalidInput("continuous fit needs a range".into()))?;
                let mut basis = b.build(phi)?;
                if let Some(r) = reference {
                    if matches!(basis.kind, BasisKind::ExactPca | BasisKind::Nystrom) {
                        basis.align_signs(r);
                    }
                }
                Ok(basis)
            }
            BasisSource::Fixed(b) => Ok(b.clone()),
        }
    }

    fn continuous(&self) -> bool {
        matches!(self, BasisSource::Continuous(_))
    }
}

struct PsiObjective<'a> {
    obj: &'a McObjective,
    template: PsiParams,
}

impl PsiObjective<'_> {
    fn psi(&self, x: &DVector<f64>) -> PsiParams {
        self.template.from_newton_vector(x)
    }
}

impl NewtonObjective for PsiObjective<'_> {
    fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let e = self.obj.evaluate(&self.psi(x))?;
        Ok((e.value, e.gradient, e.hessian))
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.obj.value(&self.psi(x))
    }
}

/// Newton over `(β, σ²)` or `(β, τ)` with `φ` held at `start`'s value.
pub fn newton_psi(obj: &McObjective, start: &PsiParams, tol: f64, max_iter: usize) -> Result<(PsiParams, NewtonResult)> {
    let cfg = NewtonConfig { grad_tol: tol, max_iter, positive: vec![start.p()], ..Default::default() };
    let wrapped = PsiObjective { obj, template: start.clone() };
    let res = newton_raphson(&wrapped, &start.newton_vector(), &cfg)?;
    Ok((wrapped.psi(&res.x), res))
}

struct Engine<'a> {
    data: &'a ModelData,
    cfg: &'a FitConfig,
    source: BasisSource,
    prior: Prior,
    warnings: Vec<String>,
    mode: Option<DVector<f64>>,
}

impl Engine<'_> {
    fn m(&self) -> usize {
        self.prior.dim()
    }

    fn sample(&mut self, psi: &PsiParams, basis: &ProjectionBasis, ess: f64, index: u64, phase: &str) -> Result<DeltaChain> {
        let target = SpatialTarget::new(self.data, &basis.matrix, &self.prior, psi)?;
        let mut cc = ChainConfig::new(ess, derive_seed(self.cfg.seed, Stream::Chain, index));
        cc.proposal_sd = self.cfg.proposal_sd;
        cc.burn_in = self.cfg.burn_in;
        cc.check_every = self.cfg.check_every;
        cc.max_iterations = self.cfg.max_chain_iterations;
        cc.thin = self.cfg.thin;
        if self.cfg.proposal == ProposalKind::Laplace {
            let (mode, info) = target.laplace(self.mode.as_ref())?;
            cc.proposal_factor = Some(target.laplace_proposal(&info)?);
            cc.initial = Some(mode.clone());
            self.mode = Some(mode);
        }
        let chain = run_chain(&cc, &target)?;
        if !chain.converged {
            self.warnings.push(format!(
                "{phase}: chain stopped at {} iterations with ESS {:.1} below target {ess:.1}",
                chain.iterations, chain.ess_first_coord
            ));
        }
        Ok(chain)
    }

    fn newton(&mut self, obj: &McObjective, start: &PsiParams, phase: &str) -> Result<(PsiParams, bool)> {
        let (psi, res) = newton_psi(obj, start, self.cfg.newton_tol, self.cfg.newton_max_iter)?;
        if !res.converged {
            self.warnings.push(format!(
                "{phase}: Newton stopped after {} iterations with |g| = {:.3e}",
                res.iterations,
                res.gradient.amax()
            ));
        }
        if res.ridge_used {
            self.warnings.push(format!("{phase}: Hessian needed a ridge"));
        }
        Ok((psi, res.converged))
    }

    /// Basis for `φ` and its columns rotated onto `basis`, the form in which
    /// draws taken under `basis` are evaluated.
    fn candidate(&self, basis: &ProjectionBasis, phi: f64) -> Result<(ProjectionBasis, DMatrix<f64>)> {
        let cand = self.source.at(Some(phi), Some(basis))?;
        let q = cand.rotation_to(basis)?;
        Ok((cand, q))
    }

    fn phi_value(&self, obj: &McObjective, basis: &ProjectionBasis, psi: &PsiParams, phi: f64) -> Result<f64> {
        if Some(phi) == basis.phi {
            return obj.value(&psi.with_phi(phi));
        }
        let (cand, q) = self.candidate(basis, phi)?;
        obj.value_with_basis(&(&cand.matrix * q), &psi.with_phi(phi))
    }

    /// `l̂` at `φ` with `(β, σ²)` re-maximized under the basis for `φ`.
    fn profiled_phi_value(&self, obj: &McObjective, basis: &ProjectionBasis, psi: &PsiParams, phi: f64) -> Result<(f64, PsiParams)> {
        let start = psi.with_phi(phi);
        let swapped;
        let target = if Some(phi) == basis.phi {
            obj
        } else {
            let (cand, q) = self.candidate(basis, phi)?;
            swapped = obj.with_basis(&(&cand.matrix * q))?;
            &swapped
        };
        let (best, _) = newton_psi(target, &start, self.cfg.newton_tol, self.cfg.newton_max_iter)?;
        Ok((target.value(&best)?, best))
    }

    /// Halves the step from `psi` toward `next` until the importance weights
    /// keep `min_weight_ess` of the draws. Returns the adopted parameter, its
    /// basis and the step fraction.
    fn damp(
        &self,
        obj: &McObjective,
        basis: &ProjectionBasis,
        psi: &PsiParams,
        next: PsiParams,
        next_basis: ProjectionBasis,
    ) -> Result<(PsiParams, ProjectionBasis, f64)> {
        if self.cfg.min_weight_ess == 0.0 {
            return Ok((next, next_basis, 1.0));
        }
        let (from, to) = (psi.newton_vector(), next.newton_vector());
        let point = |s: f64| -> Result<(PsiParams, ProjectionBasis, f64)> {
            let cand = next.from_newton_vector(&(&from + (&to - &from) * s));
            match (psi.phi(), next.phi()) {
                (Some(a), Some(b)) if a != b => {
                    let phi = if s == 1.0 { b } else { a * (b / a).powf(s) };
                    let cand = cand.with_phi(phi);
                    let (cb, q) = self.candidate(basis, phi)?;
                    let fraction = obj.with_basis(&(&cb.matrix * q))?.weight_ess_fraction(&cand)?;
                    Ok((cand, cb, fraction))
                }
                _ => Ok((cand.clone(), basis.clone(), obj.weight_ess_fraction(&cand)?)),
            }
        };
        let (_, _, fraction) = point(1.0)?;
        if fraction >= self.cfg.min_weight_ess {
            return Ok((next, next_basis, 1.0));
        }
        let mut s = 1.0;
        for i in 0..MAX_STEP_HALVINGS {
            s *= 0.5;
            let (cand, cb, fraction) = point(s)?;
            if fraction >= self.cfg.min_weight_ess || i + 1 == MAX_STEP_HALVINGS {
                return Ok((cand, cb, s));
            }
        }
        unreachable!("the last halving returns")
    }

    fn note_skipped(&mut self, phase: &str, skipped: &[(f64, String)]) {
        for (phi, why) in skipped {
            self.warnings.push(format!("{phase}: range {phi:.6} skipped ({why})"));
        }
    }

    fn run(mut self, psi0: PsiParams) -> Result<McmlFit> {
        let cfg = self.cfg;
        let m = self.m() as f64;
        let search_start = Instant::now();
        let mut psi = psi0.clone();
        let mut basis = self.source.at(psi.phi(), None)?;
        let mut trace = Vec::new();
        let mut search_converged = false;

        for t in 0..cfg.max_outer {
            let started = Instant::now();
            let chain = self.sample(&psi, &basis, cfg.ess_search_multiplier * m, t as u64, &format!("search {t}"))?;
            let obj = McObjective::new(self.data, &basis.matrix, &self.prior, &chain, &psi)?;
            let (mut next, _) = self.newton(&obj, &psi, &format!("search {t}"))?;
            let mut next_basis = basis.clone();
            let gain;
            let ase;
            if self.source.continuous() {
                let phi_t = psi.phi().expect("continuous");
                let mut profiled: Vec<(f64, PsiParams)> = Vec::new();
                let search = grid_neighbors(phi_t, &cfg.phi_factors, cfg.phi_max, |phi| {
                    if phi == phi_t {
                        return obj.value(&next);
                    }
                    let (v, p) = self.profiled_phi_value(&obj, &basis, &next, phi)?;
                    profiled.push((phi, p));
                    Ok(v)
                })?;
                self.note_skipped(&format!("search {t}"), &search.skipped);
                next = match profiled.into_iter().find(|(phi, _)| *phi == search.phi) {
                    Some((_, p)) => p,
                    None => next.with_phi(search.phi),
                };
                gain = search.value;
                if search.phi != phi_t {
                    let (cand, q) = self.candidate(&basis, search.phi)?;
                    ase = obj.with_basis(&(&cand.matrix * q))?.loglik_standard_error(&next)?;
                    next_basis = cand;
                } else {
                    ase = obj.loglik_standard_error(&next)?;
                }
            } else {
                gain = obj.value(&next)?;
                ase = obj.loglik_standard_error(&next)?;
            }
            let (next, next_basis, step_fraction) = self.damp(&obj, &basis, &psi, next, next_basis)?;
            trace.push(TraceEntry {
                iteration: t,
                psi: psi.clone(),
                psi_next: next.clone(),
                loglik_gain: gain,
                step_fraction,
                ase,
                k: chain.k(),
                ess: chain.ess_first_coord,
                acceptance_rate: chain.acceptance_rate,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            psi = next;
            basis = next_basis;
            if step_fraction == 1.0 && gain + cfg.z_stop * ase < cfg.epsilon {
                search_converged = true;
                break;
            }
        }
        if !search_converged {
            self.warnings.push(format!("importance search hit the cap of {} outer iterations", cfg.max_outer));
        }
        let search_seconds = search_start.elapsed().as_secs_f64();

        let final_start = Instant::now();
        let psi_tilde = psi.clone();
        let mut chain = self.sample(&psi_tilde, &basis, cfg.ess_final_multiplier * m, 1 << 32, "final")?;
        let obj = McObjective::new(self.data, &basis.matrix, &self.prior, &chain, &psi_tilde)?;
        let (mut psi_hat, mut final_converged) = self.newton(&obj, &psi_tilde, "final")?;
        let (final_obj, final_basis) = if self.source.continuous() {
            let phi0 = psi_hat.phi().expect("continuous");
            let search = bounded_maximize(phi0, cfg.phi_max, |phi| self.phi_value(&obj, &basis, &psi_hat, phi))?;
            self.note_skipped("final", &search.skipped);
            let (fb, q) = self.candidate(&basis, search.phi)?;
            let fo = obj.with_basis(&(&fb.matrix * &q))?;
            (psi_hat, final_converged) = self.newton(&fo, &psi_hat.with_phi(search.phi), "final refit")?;
            // Express the draws in the coordinates of the reported basis.
            chain.draws = &q * &chain.draws;
            (fo, fb)
        } else {
            (obj, basis.clone())
        };
        let eval = final_obj.evaluate(&psi_hat)?;
        let fisher_cov = match crate::linalg::neg_inverse(&eval.hessian) {
            Ok(c) => Some(c),
            Err(eig) => {
                self.warnings.push(format!("observed information not positive definite (eigenvalue {eig:e})"));
                None
            }
        };
        let mc_error_cov = match crate::uncertainty::mc_error_cov(&final_obj, &psi_hat) {
            Ok(c) => {
                if let Some(r) = c.ridge {
                    self.warnings.push(format!("Monte Carlo error covariance needed a ridge of {r:e}"));
                }
                Some(c.cov)
            }
            Err(e) => {
                self.warnings.push(format!("Monte Carlo error covariance unavailable: {e}"));
                None
            }
        };
        let delta_mean = chain.mean();
        let w_hat = &final_basis.matrix * &delta_mean;
        let metadata = FitMetadata {
            seed: cfg.seed,
            nu: cfg.nu.nu(),
            sketch_seed: derive_seed(cfg.seed, Stream::Sketch, 0),
            rank: self.m(),
            basis_kind: format!("{:?}", final_basis.kind),
            restricted: final_basis.restricted,
            proposal: cfg.proposal,
            proposal_sd: cfg.proposal_sd,
            start_state: match cfg.proposal {
                ProposalKind::Laplace => "mode of the importance target".into(),
                ProposalKind::Isotropic => "zero".into(),
            },
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            final_newton_reuses_samples: true,
            outer_iterations: trace.len(),
            search_converged,
            final_k: chain.k(),
            final_ess: chain.ess_first_coord,
            final_acceptance_rate: chain.acceptance_rate,
            final_chain_converged: chain.converged,
            final_max_log_weight: eval.max_log_weight,
            search_seconds,
            final_seconds: final_start.elapsed().as_secs_f64(),
            warnings: self.warnings,
        };
        Ok(McmlFit {
            family: self.data.family,
            converged: search_converged && final_converged && fisher_cov.is_some(),
            psi_hat,
            psi_initial: psi0,
            psi_tilde,
            hessian: eval.hessian,
            fisher_cov,
            mc_error_cov,
            loglik_gain: eval.value,
            final_chain: chain,
            trace,
            basis: final_basis,
            delta_mean,
            w_hat,
            metadata,
        })
    }
}

fn glm_start(data: &ModelData, warnings: &mut Vec<String>) -> Result<(Vec<f64>, f64)> {
    let irls = irls_initial_estimates(&data.z, &data.x, Some(&data.offset), data.family)?;
    if let Some(w) = &irls.warning {
        warnings.push(format!("initial GLM: {w}"));
    }
    let s2 = initial_sigma2(&data.z, &data.x, Some(&data.offset), &irls.beta, data.family);
    Ok((irls.beta.iter().copied().collect(), s2))
}

fn check_initial(initial: &PsiParams, data: &ModelData, continuous: bool) -> Result<()> {
    initial.validate()?;
    if initial.p() != data.p() {
        return invalid("initial coefficients do not match the design");
    }
    if initial.phi().is_some() != continuous {
        return invalid("initial parameter has the wrong domain");
    }
    Ok(())
}

fn continuous_fit(data: &ModelData, coords: &Coordinates, cfg: &FitConfig, method: BasisMethod, rank: usize) -> Result<McmlFit> {
    cfg.validate()?;
    if coords.len() != data.n() {
        return invalid("coordinate count differs from the number of observations");
    }
    let mut warnings = Vec::new();
    let psi0 = match &cfg.initial {
        Some(p) => {
            check_initial(p, data, true)?;
            p.clone()
        }
        None => {
            let (beta, s2) = glm_start(data, &mut warnings)?;
            PsiParams::continuous(beta, s2, initial_phi(coords)?.min(cfg.phi_max))?
        }
    };
    let restrict = cfg.restricted.then(|| data.x.clone());
    let builder = ContinuousBasisBuilder::new(coords, cfg.nu, rank, method, derive_seed(cfg.seed, Stream::Sketch, 0), restrict)?;
    let m = builder.rank();
    Engine { data, cfg, source: BasisSource::Continuous(builder), prior: Prior::Iid { m }, warnings, mode: None }.run(psi0)
}

/// Projection-based MCML on a continuous domain.
pub fn fit_continuous(data: &ModelData, coords: &Coordinates, cfg: &FitConfig) -> Result<McmlFit> {
    if cfg.basis_method == BasisMethod::Cholesky {
        return invalid("the Cholesky basis is only available through the reference mode");
    }
    continuous_fit(data, coords, cfg, cfg.basis_method, cfg.rank)
}

fn lattice_fit(data: &ModelData, graph: &AdjacencyGraph, cfg: &FitConfig, basis: ProjectionBasis, prior: Prior) -> Result<McmlFit> {
    let mut warnings = Vec::new();
    let psi0 = match &cfg.initial {
        Some(p) => {
            check_initial(p, data, false)?;
            p.clone()
        }
        None => {
            let (beta, s2) = glm_start(data, &mut warnings)?;
            let s = match &prior {
                Prior::Gmrf { s, .. } => s,
                Prior::Iid { .. } => unreachable!("lattice prior"),
            };
            PsiParams::discrete(beta, initial_tau(s, graph.node_count(), s2))?
        }
    };
    Engine { data, cfg, source: BasisSource::Fixed(basis), prior, warnings, mode: None }.run(psi0)
}

/// Projection-based MCML on a lattice with the Moran basis.
pub fn fit_discrete(data: &ModelData, graph: &AdjacencyGraph, cfg: &FitConfig) -> Result<McmlFit> {
    cfg.validate()?;
    if graph.node_count() != data.n() {
        return invalid("graph size differs from the number of observations");
    }
    let basis = moran_basis(graph, &data.x, cfg.rank)?;
    let prior = Prior::lattice(&basis.matrix, &build_precision(graph));
    lattice_fit(data, graph, cfg, basis, prior)
}

/// Spatial support of a dataset.
#[derive(Debug, Clone)]
pub enum SpatialDomain {
    Continuous(Coordinates),
    Lattice(AdjacencyGraph),
}

/// Full-rank MCML with the unreduced random effect, for small problems.
///
/// Continuous: `W = Lδ` with `L` the Cholesky factor of the correlation
/// matrix. Lattice: `W = δ` with precision `τ(Q + jitter·I)`.
pub fn standard_mcml_reference(data: &ModelData, domain: &SpatialDomain, cfg: &FitConfig) -> Result<McmlFit> {
    cfg.validate()?;
    let n = data.n();
    if n > REFERENCE_MAX_N {
        return invalid(format!("reference mode is limited to n <= {REFERENCE_MAX_N}, got {n}"));
    }
    match domain {
        SpatialDomain::Continuous(coords) => continuous_fit(data, coords, cfg, BasisMethod::Cholesky, n),
        SpatialDomain::Lattice(graph) => {
            if graph.node_count() != n {
                return invalid("graph size differs from the number of observations");
            }
            let mut q = build_precision(graph);
            for i in 0..n {
                q[(i, i)] += REFERENCE_GMRF_JITTER;
            }
            let basis = ProjectionBasis {
                matrix: DMatrix::identity(n, n),
                u: None,
                d: None,
                phi: None,
                restricted: false,
                kind: BasisKind::Identity,
            };
            lattice_fit(data, graph, cfg, basis, Prior::gmrf(q))
        }
    }
}

/// [`fit_continuous`] or [`fit_discrete`] according to `domain`.
pub fn fit_domain(data: &ModelData, domain: &SpatialDomain, cfg: &FitConfig) -> Result<McmlFit> {
    match domain {
        SpatialDomain::Continuous(coords) => fit_continuous(data, coords, cfg),
        SpatialDomain::Lattice(graph) => fit_discrete(data, graph, cfg),
    }
}
