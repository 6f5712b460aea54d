//! Covariance matrices for the continuous domain and graph operators for the
//! lattice domain.
//!
//! The Matérn correlation uses the half-integer closed forms
//!
//! * ν = 1/2: `exp(-h/φ)`
//! * ν = 3/2: `(1 + √3 h/φ) exp(-√3 h/φ)`
//! * ν = 5/2: `(1 + √5 h/φ + 5h²/(3φ²)) exp(-√5 h/φ)`
//!
//! Distances are Euclidean in whatever units the coordinates are given in.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{invalid, Result, SglmmError};
use crate::linalg::{residual_projector, symmetrize};

/// Relative diagonal jitter added to every covariance matrix.
pub const COVARIANCE_JITTER: f64 = 1e-10;

/// Planar site coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    points: Vec<[f64; 2]>,
}

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return invalid("coordinate set is empty");
        }
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return invalid(format!("coordinate {i} is not finite"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Two-column matrix of the coordinates, one row per site.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 2, |i, j| self.points[i][j])
    }

    pub fn subset(&self, idx: &[usize]) -> Coordinates {
        Coordinates { points: idx.iter().map(|&i| self.points[i]).collect() }
    }
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Symmetric matrix of pairwise Euclidean distances.
pub fn distance_matrix(coords: &Coordinates) -> DMatrix<f64> {
    let p = coords.points();
    let n = p.len();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = dist(&p[i], &p[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Distances between every site of `a` (rows) and every site of `b` (columns).
pub fn cross_distance(a: &Coordinates, b: &Coordinates) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| dist(&a.points()[i], &b.points()[j]))
}

/// Matérn smoothness values with closed-form correlation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothness {
    Half,
    ThreeHalves,
    #[default]
    FiveHalves,
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(Smoothness::Half)
        } else if nu == 1.5 {
            Ok(Smoothness::ThreeHalves)
        } else if nu == 2.5 {
            Ok(Smoothness::FiveHalves)
        } else {
            Err(SglmmError::Unsupported(format!("Matérn smoothness {nu} (supported: 0.5, 1.5, 2.5)")))
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }

    fn correlation(self, h: f64, phi: f64) -> f64 {
        let r = h / phi;
        match self {
            Smoothness::Half => (-r).exp(),
            Smoothness::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            Smoothness::FiveHalves => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

/// Matérn covariance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternConfig {
    pub sigma2: f64,
    pub phi: f64,
    pub nu: Smoothness,
}

impl MaternConfig {
    pub fn new(sigma2: f64, phi: f64, nu: Smoothness) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return invalid(format!("variance must be positive, got {sigma2}"));
        }
        check_range(phi)?;
        Ok(Self { sigma2, phi, nu })
    }
}

fn check_range(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi.is_finite()) {
        return invalid(format!("range must be positive, got {phi}"));
    }
    Ok(())
}

/// Matérn correlation at distance `h` for range `phi` and smoothness `nu`.
pub fn matern_correlation(h: f64, phi: f64, nu: f64) -> Result<f64> {
    let s = Smoothness::from_nu(nu)?;
    if !(h >= 0.0) {
        return invalid(format!("distance must be nonnegative, got {h}"));
    }
    check_range(phi)?;
    Ok(s.correlation(h, phi))
}

/// Elementwise Matérn correlation of a distance matrix.
pub fn correlation_from_distances(d: &DMatrix<f64>, phi: f64, nu: Smoothness) -> Result<DMatrix<f64>> {
    check_range(phi)?;
    Ok(d.map(|h| nu.correlation(h, phi)))
}

/// Correlation matrix `R_φ` of a coordinate set.
pub fn build_correlation(coords: &Coordinates, phi: f64, nu: Smoothness) -> Result<DMatrix<f64>> {
    let mut r = correlation_from_distances(&distance_matrix(coords), phi, nu)?;
    for i in 0..r.nrows() {
        r[(i, i)] = 1.0;
    }
    Ok(r)
}

/// Covariance `σ² R_φ + jitter·I`, checked to be Cholesky-factorizable.
pub fn build_covariance(coords: &Coordinates, cfg: &MaternConfig) -> Result<DMatrix<f64>> {
    let mut c = build_correlation(coords, cfg.phi, cfg.nu)? * cfg.sigma2;
    let jitter = COVARIANCE_JITTER * cfg.sigma2;
    for i in 0..c.nrows() {
        c[(i, i)] += jitter;
    }
    if c.clone().cholesky().is_none() {
        return Err(SglmmError::Numerical("covariance matrix is not positive definite after jitter".into()));
    }
    Ok(c)
}

/// Undirected neighbourhood graph on `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl AdjacencyGraph {
    /// Builds a graph from undirected pairs. A pair may be listed in one or
    /// both orientations; repeats collapse to one edge.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i}, {j}) references a node outside [0, {n})"));
            }
            if i == j {
                return invalid(format!("self-loop at node {i}"));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set.into_iter().collect() })
    }

    /// Builds a graph from a dense 0/1 adjacency matrix, rejecting asymmetry
    /// and nonzero diagonals.
    pub fn from_adjacency_matrix(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return invalid("adjacency matrix is not square");
        }
        let n = a.nrows();
        let mut edges = Vec::new();
        for i in 0..n {
            if a[(i, i)] != 0.0 {
                return invalid(format!("self-loop at node {i}"));
            }
            for j in (i + 1)..n {
                if a[(i, j)] != a[(j, i)] {
                    return invalid(format!("adjacency is asymmetric at ({i}, {j})"));
                }
                if a[(i, j)] != 0.0 {
                    edges.push((i, j));
                }
            }
        }
        Self::new(n, &edges)
    }

    /// Rook-neighbour lattice; node `r * cols + c` sits at row `r`, column `c`.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid("lattice dimensions must be positive");
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                if c + 1 < cols {
                    edges.push((k, k + 1));
                }
                if r + 1 < rows {
                    edges.push((k, k + cols));
                }
            }
        }
        Self::new(rows * cols, &edges)
    }

    /// Reads the edge-list format: one whitespace-separated `i j` pair per
    /// line with 0-based indices; `#` starts a comment line.
    pub fn read_edge_list(reader: impl BufRead, n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| SglmmError::Parse { line: lineno + 1, message: format!("'{s}' is not a node index") })
            };
            if fields.len() != 2 {
                return Err(SglmmError::Parse { line: lineno + 1, message: format!("expected two indices, found {}", fields.len()) });
            }
            edges.push((parse(fields[0])?, parse(fields[1])?));
        }
        Self::new(n, &edges)
    }

    pub fn read_edge_list_file(path: &Path, n: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_edge_list(std::io::BufReader::new(file), n)
    }

    pub fn write_edge_list(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "# {} nodes, {} undirected edges", self.n, self.edges.len())?;
        for &(i, j) in &self.edges {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }
}

/// Intrinsic CAR precision `Q = diag(A·1) − A`.
pub fn build_precision(graph: &AdjacencyGraph) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(graph.n, graph.n);
    for &(i, j) in &graph.edges {
        q[(i, j)] -= 1.0;
        q[(j, i)] -= 1.0;
        q[(i, i)] += 1.0;
        q[(j, j)] += 1.0;
    }
    q
}

/// Moran operator `P⊥ A P⊥` for design matrix `x`.
pub fn moran_operator(graph: &AdjacencyGraph, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != graph.n {
        return invalid(format!("design has {} rows but the graph has {} nodes", x.nrows(), graph.n));
    }
    let p = residual_projector(x)?;
    let mut out = &p * graph.adjacency_matrix() * &p;
    symmetrize(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sorted_symmetric_eigen;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_coords(n: usize, seed: u64) -> Coordinates {
        let mut rng = crate::rng::rng_from_seed(seed);
        Coordinates::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let c = Coordinates::new(vec![[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let d = distance_matrix(&c);
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]));
        let one = Coordinates::new(vec![[1.0, 2.0]]).unwrap();
        assert_eq!(distance_matrix(&one), DMatrix::zeros(1, 1));
        assert!(Coordinates::new(vec![[f64::NAN, 0.0]]).is_err());
        assert!(Coordinates::new(vec![]).is_err());
    }

    #[test]
    fn distance_matches_double_loop() {
        let c = random_coords(10, 11);
        let d = distance_matrix(&c);
        let p = c.points();
        for i in 0..10 {
            for j in 0..10 {
                let expect = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
                assert!((d[(i, j)] - expect).abs() < 1e-15);
                for k in 0..10 {
                    assert!(d[(i, j)] <= d[(i, k)] + d[(k, j)] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn matern_examples() {
        for nu in [0.5, 1.5, 2.5] {
            assert_eq!(matern_correlation(0.0, 0.3, nu).unwrap(), 1.0);
        }
        // (1 + √5 + 5/3) e^{-√5}, evaluated independently
        let s5 = 5f64.sqrt();
        let expect = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        let got = matern_correlation(0.2, 0.2, 2.5).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.52399).abs() < 5e-6);
        assert!(matern_correlation(100.0, 0.2, 2.5).unwrap() < 1e-12);
        assert!(matches!(matern_correlation(1.0, 0.2, 1.0), Err(SglmmError::Unsupported(_))));
    }

    #[test]
    fn matern_strictly_decreasing() {
        for nu in [0.5, 1.5, 2.5] {
            let mut prev = 1.0;
            for k in 1..200 {
                let v = matern_correlation(k as f64 * 0.01, 0.2, nu).unwrap();
                assert!(v < prev && v > 0.0);
                prev = v;
            }
        }
    }

    #[test]
    fn covariance_matches_definition() {
        let one = Coordinates::new(vec![[0.5, 0.5]]).unwrap();
        let cfg = MaternConfig::new(2.0, 0.2, Smoothness::FiveHalves).unwrap();
        let c1 = build_covariance(&one, &cfg).unwrap();
        assert_eq!(c1[(0, 0)], 2.0 + 2.0 * COVARIANCE_JITTER);

        let coords = random_coords(20, 3);
        let c = build_covariance(&coords, &cfg).unwrap();
        let d = distance_matrix(&coords);
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                let jit = if i == j { cfg.sigma2 * COVARIANCE_JITTER } else { 0.0 };
                let rho = matern_correlation(d[(i, j)], cfg.phi, 2.5).unwrap();
                worst = worst.max((c[(i, j)] - jit - cfg.sigma2 * rho).abs());
            }
        }
        assert!(worst < 1e-12);
        let (vals, _) = sorted_symmetric_eigen(&c);
        assert!(vals[19] > 0.0);
    }

    #[test]
    fn precision_examples() {
        let path = AdjacencyGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let q = build_precision(&path);
        assert_eq!(q, DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]));
        let empty = AdjacencyGraph::new(4, &[]).unwrap();
        assert_eq!(build_precision(&empty), DMatrix::zeros(4, 4));
        assert!(AdjacencyGraph::new(3, &[(1, 1)]).is_err());
        assert!(AdjacencyGraph::new(3, &[(0, 3)]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(AdjacencyGraph::from_adjacency_matrix(&asym).is_err());
    }

    #[test]
    fn lattice_precision_rank() {
        let g = AdjacencyGraph::lattice(30, 30).unwrap();
        let q = build_precision(&g);
        for i in 0..q.nrows() {
            assert_eq!(q.row(i).sum(), 0.0);
        }
        let (vals, _) = sorted_symmetric_eigen(&q);
        let rank = vals.iter().filter(|&&v| v > 1e-9 * vals[0]).count();
        assert_eq!(rank, 899);
    }

    #[test]
    fn precision_quadratic_form_nonnegative() {
        let g = AdjacencyGraph::lattice(5, 6).unwrap();
        let q = build_precision(&g);
        let ones = nalgebra::DVector::from_element(30, 1.0);
        assert_eq!((ones.transpose() * &q * &ones)[0], 0.0);
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..100 {
            let x = nalgebra::DVector::from_fn(30, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            assert!((x.transpose() * &q * &x)[0] >= -1e-12);
        }
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let text = "# header\n0 1\n1 2\n\n2 0\n";
        let g = AdjacencyGraph::read_edge_list(text.as_bytes(), 3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(AdjacencyGraph::read_edge_list(buf.as_slice(), 3).unwrap(), g);
        let err = AdjacencyGraph::read_edge_list("0 1\n1 x\n".as_bytes(), 3).unwrap_err();
        assert!(matches!(err, SglmmError::Parse { line: 2, .. }));
    }

    #[test]
    fn moran_examples() {
        let g = AdjacencyGraph::new(2, &[(0, 1)]).unwrap();
        let ones = DMatrix::from_element(2, 1, 1.0);
        let m = moran_operator(&g, &ones).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert!((m - expect).norm() < 1e-14);

        let g3 = AdjacencyGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let full = DMatrix::<f64>::identity(3, 3);
        assert!(moran_operator(&g3, &full).unwrap().norm() < 1e-12);

        let rank_def = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(moran_operator(&g3, &rank_def).is_err());
    }

    #[test]
    fn moran_annihilates_design() {
        let g = AdjacencyGraph::lattice(6, 7).unwrap();
        let coords = DMatrix::from_fn(42, 2, |i, j| if j == 0 { (i % 7) as f64 } else { (i / 7) as f64 });
        let m = moran_operator(&g, &coords).unwrap();
        let a_norm = g.adjacency_matrix().norm();
        for j in 0..2 {
            assert!((&m * coords.column(j)).norm() < 1e-8 * a_norm);
        }
        assert!((&m - m.transpose()).norm() == 0.0);
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric(seed in 0u64..1000, phi in 0.05f64..1.0) {
            let coords = random_coords(8, seed);
            let cfg = MaternConfig::new(1.3, phi, Smoothness::FiveHalves).unwrap();
            let c = build_covariance(&coords, &cfg).unwrap();
            prop_assert!((&c - c.transpose()).norm() == 0.0);
        }
    }
}
