//! Synthetic datasets for the simulation studies and the parametric bootstrap.
//!
//! Each simulator is a pure function of its inputs and a seed. The seed feeds
//! separate simulation sub-streams for sites, covariates, the latent field and
//! the responses, so changing one ingredient leaves the others' draws intact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SpatialDataset;
use crate::error::{invalid, Result, SglmmError};
use crate::glm::{logistic, Family, PsiParams, Theta};
use crate::kernels::{build_covariance, build_precision, AdjacencyGraph, Coordinates, MaternConfig, Smoothness};
use crate::linalg::{sorted_symmetric_eigen, symmetrize, EIG_DROP_TOL};
use crate::mcml::McmlFit;
use crate::projection::moran_basis;
use crate::rng::{derive_seed, rng_from_seed, Stream, StreamRng};

const SITES: u64 = 0;
const COVARIATES: u64 = 1;
const FIELD: u64 = 2;
const RESPONSE: u64 = 3;
const OFFSET: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioDomain {
    Continuous,
    Lattice { rows: usize, cols: usize },
}

/// A simulation scenario.
///
/// The design is the two coordinate columns followed by `extra_covariates`
/// standard normal columns, so `truth.beta` has `2 + extra_covariates`
/// entries. With `offset` set, each site gets a log exposure drawn uniformly
/// from `[ln 0.5, ln 2]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub domain: ScenarioDomain,
    pub family: Family,
    pub n_fit: usize,
    pub n_predict: usize,
    pub truth: PsiParams,
    pub nu: f64,
    /// Moran basis rank used to draw the lattice field.
    pub basis_rank_for_truth: usize,
    pub extra_covariates: usize,
    pub offset: bool,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Continuous Poisson scenario: 1000 fitting and 400 prediction sites,
    /// `(β, σ², φ) = (1, 1, 1, 0.2)`, ν = 2.5.
    pub fn continuous_default() -> Self {
        Self {
            domain: ScenarioDomain::Continuous,
            family: Family::Poisson,
            n_fit: 1000,
            n_predict: 400,
            truth: PsiParams { beta: vec![1.0, 1.0], theta: Theta::Continuous { sigma2: 1.0, phi: 0.2 } },
            nu: 2.5,
            basis_rank_for_truth: 400,
            extra_covariates: 0,
            offset: false,
            seed: 1,
        }
    }

    /// 30 x 30 lattice Poisson scenario with `(β, τ) = (1, 1, 6)`.
    pub fn lattice_default() -> Self {
        Self {
            domain: ScenarioDomain::Lattice { rows: 30, cols: 30 },
            family: Family::Poisson,
            n_fit: 900,
            n_predict: 0,
            truth: PsiParams { beta: vec![1.0, 1.0], theta: Theta::Discrete { tau: 6.0 } },
            nu: 2.5,
            basis_rank_for_truth: 400,
            extra_covariates: 0,
            offset: false,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.truth.p() != 2 + self.extra_covariates {
            return invalid(format!("truth has {} coefficients but the design has {} columns", self.truth.p(), 2 + self.extra_covariates));
        }
        if self.n_fit == 0 {
            return invalid("n_fit must be positive");
        }
        match (self.domain, &self.truth.theta) {
            (ScenarioDomain::Continuous, Theta::Continuous { .. }) => {
                Smoothness::from_nu(self.nu)?;
            }
            (ScenarioDomain::Lattice { rows, cols }, Theta::Discrete { .. }) => {
                if rows == 0 || cols == 0 {
                    return invalid("lattice dimensions must be positive");
                }
                if self.n_fit != rows * cols || self.n_predict != 0 {
                    return invalid("a lattice scenario fits every node and predicts none");
                }
                if self.basis_rank_for_truth == 0 {
                    return invalid("basis rank must be positive");
                }
            }
            _ => return invalid("truth parameters do not match the scenario domain"),
        }
        Ok(())
    }
}

/// Fitting data plus the held-out sites of a continuous scenario.
#[derive(Debug, Clone)]
pub struct SimulatedScenario {
    pub fit: SpatialDataset,
    pub predict: Option<SpatialDataset>,
}

fn sub_rng(seed: u64, part: u64) -> StreamRng {
    rng_from_seed(derive_seed(seed, Stream::Simulation, part))
}

fn normals(rng: &mut StreamRng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws responses given the full linear predictor.
pub fn draw_responses(eta: &DVector<f64>, family: Family, rng: &mut StreamRng) -> Result<Vec<f64>> {
    eta.iter()
        .map(|&e| match family {
            Family::Poisson => {
                let lambda = e.exp();
                if lambda == 0.0 {
                    return Ok(0.0);
                }
                let d = Poisson::new(lambda).map_err(|err| SglmmError::Numerical(format!("Poisson rate {lambda}: {err}")))?;
                Ok(d.sample(rng))
            }
            Family::Bernoulli => Ok(if rng.random::<f64>() < logistic(e) { 1.0 } else { 0.0 }),
        })
        .collect()
}

fn design(coords: &Coordinates, extra: usize, seed: u64) -> (DMatrix<f64>, Vec<String>) {
    let n = coords.len();
    let mut rng = sub_rng(seed, COVARIATES);
    let extra_cols = normals(&mut rng, n * extra);
    let x = DMatrix::from_fn(n, 2 + extra, |i, j| match j {
        0 | 1 => coords.points()[i][j],
        _ => extra_cols[(j - 2) * n + i],
    });
    let mut names = vec!["x1".to_string(), "x2".to_string()];
    names.extend((1..=extra).map(|k| format!("cov{k}")));
    (x, names)
}

fn offsets(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = sub_rng(seed, OFFSET);
    let (lo, hi) = (0.5f64.ln(), 2f64.ln());
    DVector::from_iterator(n, (0..n).map(|_| rng.random_range(lo..hi)))
}

/// `L ε` with `L` the Cholesky factor of the Matérn covariance.
pub fn matern_field(coords: &Coordinates, sigma2: f64, phi: f64, nu: Smoothness, rng: &mut StreamRng) -> Result<DVector<f64>> {
    let c = build_covariance(coords, &MaternConfig::new(sigma2, phi, nu)?)?;
    let l = c.cholesky().ok_or_else(|| SglmmError::Numerical("covariance not factorizable".into()))?.l();
    Ok(l * normals(rng, coords.len()))
}

/// Draw from the Gaussian with precision `tau · s`, using the pseudo-inverse
/// when `s` is singular.
pub fn gmrf_draw(s: &DMatrix<f64>, tau: f64, rng: &mut StreamRng) -> DVector<f64> {
    let mut s = s.clone();
    symmetrize(&mut s);
    let (values, vectors) = sorted_symmetric_eigen(&s);
    let cutoff = EIG_DROP_TOL * values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let e = normals(rng, values.len());
    let mut out = DVector::zeros(s.nrows());
    for (k, &lam) in values.iter().enumerate() {
        if lam > cutoff {
            out.axpy(e[k] / (tau * lam).sqrt(), &vectors.column(k), 1.0);
        }
    }
    out
}

/// Lattice site coordinates scaled to the unit square; node `r·cols + c` sits
/// at `(c/(cols−1), r/(rows−1))`.
pub fn lattice_coordinates(rows: usize, cols: usize) -> Result<Coordinates> {
    let scale = |k: usize, len: usize| if len > 1 { k as f64 / (len - 1) as f64 } else { 0.0 };
    Coordinates::new((0..rows * cols).map(|k| [scale(k % cols, cols), scale(k / cols, rows)]).collect())
}

fn eta(x: &DMatrix<f64>, beta: &[f64], offset: Option<&DVector<f64>>, w: &DVector<f64>) -> DVector<f64> {
    let mut e = x * DVector::from_column_slice(beta) + w;
    if let Some(o) = offset {
        e += o;
    }
    e
}

/// Uniform sites on `[0, 1]²` with a Matérn field; the first `n_fit` rows are
/// for fitting and the rest are held out.
pub fn simulate_continuous(spec: &ScenarioSpec) -> Result<SimulatedScenario> {
    spec.validate()?;
    let Theta::Continuous { sigma2, phi } = spec.truth.theta else {
        return invalid("continuous scenario needs continuous parameters");
    };
    let n = spec.n_fit + spec.n_predict;
    let mut rng = sub_rng(spec.seed, SITES);
    let coords = Coordinates::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect())?;
    let (x, names) = design(&coords, spec.extra_covariates, spec.seed);
    let offset = spec.offset.then(|| offsets(n, spec.seed));
    let w = matern_field(&coords, sigma2, phi, Smoothness::from_nu(spec.nu)?, &mut sub_rng(spec.seed, FIELD))?;
    let z = draw_responses(&eta(&x, &spec.truth.beta, offset.as_ref(), &w), spec.family, &mut sub_rng(spec.seed, RESPONSE))?;
    let all = SpatialDataset { coords, graph: None, z, x, covariate_names: names, offset, w: Some(w) };
    let fit = all.subset(&(0..spec.n_fit).collect::<Vec<_>>())?;
    let predict = (spec.n_predict > 0).then(|| all.subset(&(spec.n_fit..n).collect::<Vec<_>>())).transpose()?;
    Ok(SimulatedScenario { fit, predict })
}

/// Rook lattice with `W = Mδ`, `M` the leading Moran eigenvectors and `δ`
/// drawn with precision `τ M'QM`.
pub fn simulate_lattice(spec: &ScenarioSpec) -> Result<SpatialDataset> {
    spec.validate()?;
    let (ScenarioDomain::Lattice { rows, cols }, Theta::Discrete { tau }) = (spec.domain, spec.truth.theta) else {
        return invalid("lattice scenario needs a lattice domain and a precision");
    };
    let graph = AdjacencyGraph::lattice(rows, cols)?;
    let coords = lattice_coordinates(rows, cols)?;
    let (x, names) = design(&coords, spec.extra_covariates, spec.seed);
    let n = rows * cols;
    if spec.basis_rank_for_truth + x.ncols() > n {
        return invalid(format!("basis rank {} exceeds the {} usable Moran eigenvectors", spec.basis_rank_for_truth, n - x.ncols()));
    }
    let basis = moran_basis(&graph, &x, spec.basis_rank_for_truth)?;
    let s = basis.matrix.transpose() * build_precision(&graph) * &basis.matrix;
    let delta = gmrf_draw(&s, tau, &mut sub_rng(spec.seed, FIELD));
    let w = &basis.matrix * delta;
    let offset = spec.offset.then(|| offsets(n, spec.seed));
    let z = draw_responses(&eta(&x, &spec.truth.beta, offset.as_ref(), &w), spec.family, &mut sub_rng(spec.seed, RESPONSE))?;
    Ok(SpatialDataset { coords, graph: Some(graph), z, x, covariate_names: names, offset, w: Some(w) })
}

/// Runs whichever simulator matches the scenario domain.
pub fn simulate_scenario(spec: &ScenarioSpec) -> Result<SimulatedScenario> {
    match spec.domain {
        ScenarioDomain::Continuous => simulate_continuous(spec),
        ScenarioDomain::Lattice { .. } => Ok(SimulatedScenario { fit: simulate_lattice(spec)?, predict: None }),
    }
}

/// New field and responses at `psi`, keeping the template's sites, graph,
/// design and offset. Continuous fields are full-rank Matérn draws; lattice
/// fields use `basis` with precision `τ M'QM`.
pub fn simulate_at(
    psi: &PsiParams,
    family: Family,
    nu: Smoothness,
    lattice_basis: Option<&DMatrix<f64>>,
    template: &SpatialDataset,
    seed: u64,
) -> Result<SpatialDataset> {
    psi.validate()?;
    if psi.p() != template.x.ncols() {
        return invalid("coefficient count differs from template design");
    }
    let mut rng = sub_rng(seed, FIELD);
    let w = match (psi.theta, &template.graph) {
        (Theta::Continuous { sigma2, phi }, None) => matern_field(&template.coords, sigma2, phi, nu, &mut rng)?,
        (Theta::Discrete { tau }, Some(graph)) => {
            let m = lattice_basis.ok_or_else(|| SglmmError::InvalidInput("lattice simulation needs a basis".into()))?;
            if m.nrows() != template.n() {
                return invalid("basis rows differ from the template size");
            }
            let s = m.transpose() * build_precision(graph) * m;
            m * gmrf_draw(&s, tau, &mut rng)
        }
        _ => return invalid("parameter domain does not match the template"),
    };
    let z = draw_responses(&eta(&template.x, &psi.beta, template.offset.as_ref(), &w), family, &mut sub_rng(seed, RESPONSE))?;
    Ok(SpatialDataset { z, w: Some(w), ..template.clone() })
}

/// [`simulate_at`] the fitted parameters of `fit`.
pub fn simulate_from_fit(fit: &McmlFit, template: &SpatialDataset, seed: u64) -> Result<SpatialDataset> {
    simulate_at(&fit.psi_hat, fit.family, Smoothness::from_nu(fit.metadata.nu)?, Some(&fit.basis.matrix), template, seed)
}
