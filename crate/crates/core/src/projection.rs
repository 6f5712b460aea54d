//! Reduced-rank bases for the spatial random effect.
//!
//! Continuous domain: `M = U D^{1/2}` from the leading eigenpairs of the
//! correlation matrix `R_φ`, either exactly or through a randomized Nyström
//! sketch. Lattice domain: leading eigenvectors of the Moran operator.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SglmmError};
use crate::kernels::{
    correlation_from_distances, distance_matrix, moran_operator, AdjacencyGraph, Coordinates, Smoothness, COVARIANCE_JITTER,
};
use crate::linalg::{project_out, sorted_symmetric_eigen, EIG_DROP_TOL};
use crate::rng::rng_from_seed;

/// Rank used when none is configured.
pub const DEFAULT_RANK: usize = 50;

/// Largest `n` for which the automatic method picks the exact eigendecomposition.
pub const EXACT_EIGEN_MAX_N: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    ExactPca,
    Nystrom,
    Moran,
    /// Full-rank Cholesky factor of the covariance (reference mode).
    Cholesky,
    /// Identity basis, random effect equals W (reference mode, lattice).
    Identity,
}

/// An n x m basis `M` with its spectral factors where they exist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionBasis {
    pub matrix: DMatrix<f64>,
    /// Orthonormal factor (continuous PCA/Nyström and Moran bases).
    pub u: Option<DMatrix<f64>>,
    /// Eigenvalues paired with `u` (correlation eigenvalues, or Moran
    /// eigenvalues for the lattice basis).
    pub d: Option<DVector<f64>>,
    pub phi: Option<f64>,
    pub restricted: bool,
    pub kind: BasisKind,
}

impl ProjectionBasis {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// Flips columns so that each has a nonnegative inner product with the
    /// matching column of `reference`. Sample vectors drawn under the
    /// reference basis keep their meaning under this one.
    pub fn align_signs(&mut self, reference: &ProjectionBasis) {
        let k = self.rank().min(reference.rank());
        for j in 0..k {
            let dot = self.matrix.column(j).dot(&reference.matrix.column(j));
            if dot < 0.0 {
                self.flip(j);
            }
        }
    }

    /// Orthogonal `Q` minimizing `‖M Q − M_ref‖_F`. `MQ` has the same `MM'`,
    /// so under an iid prior on `δ` it describes the same model, while draws
    /// made under `reference` keep their meaning even when near-tied
    /// eigenvectors have rotated.
    pub fn rotation_to(&self, reference: &ProjectionBasis) -> Result<DMatrix<f64>> {
        if reference.matrix.shape() != self.matrix.shape() {
            return invalid("reference basis has a different shape");
        }
        let svd = (self.matrix.transpose() * &reference.matrix).svd(true, true);
        match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => Ok(u * v_t),
            _ => Err(SglmmError::Numerical("SVD failed during basis alignment".into())),
        }
    }

    fn flip(&mut self, j: usize) {
        self.matrix.column_mut(j).neg_mut();
        if let Some(u) = self.u.as_mut() {
            u.column_mut(j).neg_mut();
        }
    }

    /// Canonical sign: the largest-magnitude entry of every column is positive.
    fn canonicalize_signs(&mut self) {
        for j in 0..self.rank() {
            let col = self.matrix.column(j);
            let imax = col.iamax();
            if col[imax] < 0.0 {
                self.flip(j);
            }
        }
    }

    /// Writes the basis as CSV: a header `m0,m1,...` and one row per site.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.rank()).map(|j| format!("m{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn spectral_basis(u: DMatrix<f64>, d: DVector<f64>, phi: Option<f64>, kind: BasisKind) -> ProjectionBasis {
    let mut matrix = u.clone();
    for (j, &lam) in d.iter().enumerate() {
        matrix.column_mut(j).scale_mut(lam.sqrt());
    }
    let mut basis = ProjectionBasis { matrix, u: Some(u), d: Some(d), phi, restricted: false, kind };
    basis.canonicalize_signs();
    basis
}

fn check_rank(m: usize, n: usize) -> Result<()> {
    if m == 0 {
        return invalid("rank must be at least 1");
    }
    if m > n {
        return invalid(format!("rank {m} exceeds matrix dimension {n}"));
    }
    Ok(())
}

/// Exact PCA basis: leading `m` eigenpairs of `r`.
pub fn exact_basis_continuous(r: &DMatrix<f64>, m: usize) -> Result<ProjectionBasis> {
    check_rank(m, r.nrows())?;
    let (values, vectors) = sorted_symmetric_eigen(r);
    let cutoff = EIG_DROP_TOL * values[0].max(0.0);
    let usable = values.iter().take_while(|&&v| v > cutoff).count();
    if usable < m {
        return Err(SglmmError::RankDeficient { wanted: m, available: usable });
    }
    let u = vectors.columns(0, m).into_owned();
    let d = values.rows(0, m).into_owned();
    Ok(spectral_basis(u, d, None, BasisKind::ExactPca))
}

/// Randomized Nyström sketch parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NystromConfig {
    pub m: usize,
    /// Oversampling count `l`; the sketch has `m + l` columns.
    pub oversample: usize,
    pub seed: u64,
}

impl NystromConfig {
    /// `l = m`.
    pub fn new(m: usize, seed: u64) -> Self {
        Self { m, oversample: m, seed }
    }
}

/// Randomized Nyström eigen-approximation of a PSD matrix.
///
/// `Φ = R Ω` with Gaussian `Ω` (variance `1/√(m+l)`), `R₁₁ = Φ' R Φ`,
/// `C = R Φ V₁₁ Λ₁₁^{-1/2}`, and the leading `m` left singular vectors of `C`
/// with squared singular values as eigenvalues.
pub fn nystrom_basis(r: &DMatrix<f64>, cfg: &NystromConfig) -> Result<ProjectionBasis> {
    let n = r.nrows();
    check_rank(cfg.m, n)?;
    let k = cfg.m + cfg.oversample;
    if k > n {
        return invalid(format!("sketch size m + l = {k} exceeds n = {n}"));
    }
    let sd = (k as f64).powf(-0.25);
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let mut rng = rng_from_seed(cfg.seed);
    let omega = DMatrix::from_fn(n, k, |_, _| normal.sample(&mut rng));

    let phi = r * omega;
    let r_phi = r * &phi;
    let mut r11 = phi.transpose() * &r_phi;
    crate::linalg::symmetrize(&mut r11);
    let (lam, v11) = sorted_symmetric_eigen(&r11);
    let cutoff = EIG_DROP_TOL * lam[0].max(0.0);
    let kept = lam.iter().take_while(|&&l| l > cutoff).count();
    if kept < cfg.m {
        return Err(SglmmError::RankDeficient { wanted: cfg.m, available: kept });
    }
    let mut scaled = v11.columns(0, kept).into_owned();
    for j in 0..kept {
        scaled.column_mut(j).scale_mut(1.0 / lam[j].sqrt());
    }
    let c = r_phi * scaled;
    let svd = c.svd(true, false);
    let u_all = svd.u.ok_or_else(|| SglmmError::Numerical("SVD did not return U".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u = DMatrix::zeros(n, cfg.m);
    let mut d = DVector::zeros(cfg.m);
    for (dst, &src) in order.iter().take(cfg.m).enumerate() {
        u.set_column(dst, &u_all.column(src));
        d[dst] = svd.singular_values[src].powi(2);
    }
    let dmax = d[0];
    if let Some(bad) = d.iter().position(|&v| v <= EIG_DROP_TOL * dmax) {
        return Err(SglmmError::RankDeficient { wanted: cfg.m, available: bad });
    }
    Ok(spectral_basis(u, d, None, BasisKind::Nystrom))
}

/// Leading `m` eigenvectors of the Moran operator `P⊥ A P⊥`.
pub fn moran_basis(graph: &AdjacencyGraph, x: &DMatrix<f64>, m: usize) -> Result<ProjectionBasis> {
    let n = graph.node_count();
    if m == 0 || m + x.ncols() > n {
        return invalid(format!("Moran rank {m} must be in [1, n - p] = [1, {}]", n.saturating_sub(x.ncols())));
    }
    let op = moran_operator(graph, x)?;
    // Push the column space of X below the rest of the spectrum so ties at
    // zero cannot pull design directions into the basis.
    let a = graph.adjacency_matrix();
    let bound = a.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max) + 1.0;
    let p_x = DMatrix::identity(n, n) - crate::linalg::residual_projector(x)?;
    let (values, vectors) = sorted_symmetric_eigen(&(op - p_x * bound));
    let u = vectors.columns(0, m).into_owned();
    let mut basis = ProjectionBasis {
        matrix: u.clone(),
        u: Some(u),
        d: Some(values.rows(0, m).into_owned()),
        phi: None,
        restricted: true,
        kind: BasisKind::Moran,
    };
    basis.canonicalize_signs();
    Ok(basis)
}

/// Restricted basis `P⊥ M`, orthogonal to the columns of `x`.
pub fn restrict_basis(basis: &ProjectionBasis, x: &DMatrix<f64>) -> Result<ProjectionBasis> {
    if x.nrows() != basis.nrows() {
        return invalid("design and basis have different row counts");
    }
    let mut out = basis.clone();
    out.matrix = project_out(x, &basis.matrix)?;
    out.restricted = true;
    Ok(out)
}

/// Smallest rank whose leading eigenvalues explain `target_fraction` of the total.
pub fn select_rank(eigenvalues: &[f64], target_fraction: f64) -> Result<usize> {
    if eigenvalues.is_empty() {
        return invalid("empty spectrum");
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return invalid(format!("target fraction must be in (0, 1], got {target_fraction}"));
    }
    if eigenvalues.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return invalid("eigenvalues must be finite and nonnegative");
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return invalid("eigenvalues must be sorted in descending order");
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return invalid("spectrum is identically zero");
    }
    if target_fraction >= 1.0 {
        return Ok(eigenvalues.len());
    }
    let mut acc = 0.0;
    for (i, &v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc / total >= target_fraction - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// How the continuous-domain basis is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisMethod {
    /// Exact when `n <= 1000`, Nyström otherwise.
    Auto,
    Exact,
    Nystrom {
        oversample: usize,
    },
    /// Full-rank Cholesky factor of `R_φ + jitter·I` (reference mode only).
    Cholesky,
}

/// Rebuilds the continuous basis for any range value with fixed settings.
///
/// The Nyström sketch reuses one Gaussian test matrix for every range value,
/// so bases at nearby ranges vary smoothly.
#[derive(Debug, Clone)]
pub struct ContinuousBasisBuilder {
    distances: DMatrix<f64>,
    nu: Smoothness,
    rank: usize,
    method: BasisMethod,
    sketch_seed: u64,
    restrict_design: Option<DMatrix<f64>>,
}

impl ContinuousBasisBuilder {
    pub fn new(
        coords: &Coordinates,
        nu: Smoothness,
        rank: usize,
        method: BasisMethod,
        sketch_seed: u64,
        restrict_design: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = coords.len();
        let method = match method {
            BasisMethod::Auto if n <= EXACT_EIGEN_MAX_N => BasisMethod::Exact,
            BasisMethod::Auto => BasisMethod::Nystrom { oversample: rank },
            other => other,
        };
        let rank = if method == BasisMethod::Cholesky { n } else { rank };
        check_rank(rank, n)?;
        if let Some(x) = &restrict_design {
            if x.nrows() != n {
                return invalid("restriction design has the wrong row count");
            }
        }
        Ok(Self { distances: distance_matrix(coords), nu, rank, method, sketch_seed, restrict_design })
    }

    pub fn method(&self) -> BasisMethod {
        self.method
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn smoothness(&self) -> Smoothness {
        self.nu
    }

    pub fn correlation(&self, phi: f64) -> Result<DMatrix<f64>> {
        let mut r = correlation_from_distances(&self.distances, phi, self.nu)?;
        for i in 0..r.nrows() {
            r[(i, i)] = 1.0;
        }
        Ok(r)
    }

    pub fn build(&self, phi: f64) -> Result<ProjectionBasis> {
        let r = self.correlation(phi)?;
        let mut basis = match self.method {
            BasisMethod::Exact | BasisMethod::Auto => exact_basis_continuous(&r, self.rank)?,
            BasisMethod::Nystrom { oversample } => nystrom_basis(&r, &NystromConfig { m: self.rank, oversample, seed: self.sketch_seed })?,
            BasisMethod::Cholesky => {
                let mut c = r;
                for i in 0..c.nrows() {
                    c[(i, i)] += COVARIANCE_JITTER;
                }
                let l = c.cholesky().ok_or_else(|| SglmmError::Numerical("correlation matrix not positive definite".into()))?.l();
                ProjectionBasis { matrix: l, u: None, d: None, phi: None, restricted: false, kind: BasisKind::Cholesky }
            }
        };
        basis.phi = Some(phi);
        if let Some(x) = &self.restrict_design {
            basis = restrict_basis(&basis, x)?;
        }
        Ok(basis)
    }
}
