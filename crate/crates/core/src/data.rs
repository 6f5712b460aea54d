//! Spatial datasets and their CSV representation.
//!
//! A dataset file has a header row with `x`, `y` and `z` columns, an optional
//! `offset` column, and any number of further covariate columns. When no
//! covariate columns are present the design matrix is the coordinates.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result, SglmmError};
use crate::glm::Family;
use crate::kernels::{AdjacencyGraph, Coordinates};
use crate::mcml::SpatialDomain;
use crate::model::ModelData;

/// Responses, sites, design and optional lattice structure.
#[derive(Debug, Clone)]
pub struct SpatialDataset {
    pub coords: Coordinates,
    /// Lattice neighbourhood; absent for continuous data.
    pub graph: Option<AdjacencyGraph>,
    pub z: Vec<f64>,
    pub x: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    pub offset: Option<DVector<f64>>,
    /// Latent field, known only for simulated data.
    pub w: Option<DVector<f64>>,
}

impl SpatialDataset {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn is_lattice(&self) -> bool {
        self.graph.is_some()
    }

    pub fn model_data(&self, family: Family) -> Result<ModelData> {
        ModelData::new(self.z.clone(), self.x.clone(), self.offset.clone(), family)
    }

    pub fn domain(&self) -> SpatialDomain {
        match &self.graph {
            Some(g) => SpatialDomain::Lattice(g.clone()),
            None => SpatialDomain::Continuous(self.coords.clone()),
        }
    }

    /// Rows `idx` of a continuous dataset.
    pub fn subset(&self, idx: &[usize]) -> Result<SpatialDataset> {
        if self.graph.is_some() {
            return invalid("cannot subset a lattice dataset");
        }
        Ok(SpatialDataset {
            coords: self.coords.subset(idx),
            graph: None,
            z: idx.iter().map(|&i| self.z[i]).collect(),
            x: self.x.select_rows(idx),
            covariate_names: self.covariate_names.clone(),
            offset: self.offset.as_ref().map(|o| DVector::from_iterator(idx.len(), idx.iter().map(|&i| o[i]))),
            w: self.w.as_ref().map(|w| DVector::from_iterator(idx.len(), idx.iter().map(|&i| w[i]))),
        })
    }

    /// Writes `x,y,z[,offset],<covariates>`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["x".to_string(), "y".into(), "z".into()];
        if self.offset.is_some() {
            header.push("offset".into());
        }
        header.extend(self.covariate_names.iter().cloned());
        out.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n() {
            let p = self.coords.points()[i];
            let mut row = vec![fmt(p[0]), fmt(p[1]), fmt(self.z[i])];
            if let Some(o) = &self.offset {
                row.push(fmt(o[i]));
            }
            row.extend(self.x.row(i).iter().map(|&v| fmt(v)));
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a dataset; `graph` turns it into a lattice dataset.
    pub fn read_csv(r: impl Read, graph: Option<AdjacencyGraph>) -> Result<Self> {
        let table = read_table(r, &["x", "y", "z"])?;
        let n = table.rows.len();
        if n == 0 {
            return invalid("dataset has no rows");
        }
        let col = |name: &str| table.column(name);
        let xs = col("x").expect("required");
        let ys = col("y").expect("required");
        let coords = Coordinates::new((0..n).map(|i| [xs[i], ys[i]]).collect())?;
        let offset = col("offset").map(DVector::from_vec);
        let cov_names: Vec<String> = table.header.iter().filter(|h| !matches!(h.as_str(), "x" | "y" | "z" | "offset")).cloned().collect();
        let (x, covariate_names) = if cov_names.is_empty() {
            (coords.to_matrix(), vec!["x".to_string(), "y".to_string()])
        } else {
            let cols: Vec<Vec<f64>> = cov_names.iter().map(|c| col(c).expect("present")).collect();
            (DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]), cov_names)
        };
        if let Some(g) = &graph {
            if g.node_count() != n {
                return invalid(format!("graph has {} nodes but the dataset has {n} rows", g.node_count()));
            }
        }
        Ok(SpatialDataset { coords, graph, z: col("z").expect("required"), x, covariate_names, offset, w: None })
    }

    pub fn read_csv_file(path: &Path, graph: Option<AdjacencyGraph>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, graph)
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn csv_io(e: csv::Error) -> SglmmError {
    SglmmError::Io(std::io::Error::other(e))
}

/// A numeric CSV table with named columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads a numeric CSV with a header, requiring the listed columns.
pub fn read_table(r: impl Read, required: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> =
        rdr.headers().map_err(|e| SglmmError::Parse { line: 1, message: e.to_string() })?.iter().map(|h| h.to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(SglmmError::Parse { line: 1, message: "missing header row".into() });
    }
    for req in required {
        if !header.iter().any(|h| h == req) {
            return Err(SglmmError::Parse { line: 1, message: format!("missing required column '{req}'") });
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(SglmmError::Parse { line: 1, message: format!("duplicate column '{dup}'") });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SglmmError::Parse { line: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(SglmmError::Parse { line, message: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        let mut row = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| SglmmError::Parse { line, message: format!("column '{}': '{field}' is not a number", header[j]) })?;
            if !v.is_finite() {
                return Err(SglmmError::Parse { line, message: format!("column '{}' is not finite", header[j]) });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}
