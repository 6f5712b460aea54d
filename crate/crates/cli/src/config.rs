//! Flat `key = value` run configuration with `--key value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sglmm_core::glm::{Family, PsiParams};
use sglmm_core::kernels::Smoothness;
use sglmm_core::mcml::{FitConfig, ProposalKind};
use sglmm_core::projection::BasisMethod;
use sglmm_core::simulate::{ScenarioDomain, ScenarioSpec};

use crate::error::CliError;

/// Every accepted key with its default.
pub const KEYS: &[(&str, &str)] = &[
    ("out", "."),
    ("seed", "1"),
    ("family", "poisson"),
    // scenario
    ("domain", "continuous"),
    ("n_fit", "1000"),
    ("n_predict", "400"),
    ("rows", "30"),
    ("cols", "30"),
    ("beta", "1,1"),
    ("sigma2", "1"),
    ("phi", "0.2"),
    ("tau", "6"),
    ("nu", "2.5"),
    ("truth_rank", "400"),
    ("extra_covariates", "0"),
    ("offset", "false"),
    // fitting
    ("data", ""),
    ("edges", ""),
    ("m", "50"),
    ("restricted", "false"),
    ("basis_method", "auto"),
    ("epsilon", "0.5"),
    ("ess_search", "3"),
    ("ess_final", "20"),
    ("max_outer", "50"),
    ("min_weight_ess", "0"),
    ("proposal", "laplace"),
    ("proposal_sd", "0.1"),
    ("burn_in", "1000"),
    ("thin", "10"),
    ("phi_max", "inf"),
    ("reference", "false"),
    ("level", "0.95"),
    // prediction
    ("fit", "fit.json"),
    ("sites", ""),
    // bootstrap and study
    ("replicates", "50"),
    ("runs", "10"),
    ("bootstrap", "0"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim().to_string();
        if !known(&k) {
            return Err(CliError::Input(format!("config line {}: unknown key '{k}'", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `--key value` and `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let body = arg.strip_prefix("--").ok_or_else(|| CliError::Input(format!("expected --key, found '{arg}'")))?;
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Input(format!("--{body} needs a value")))?;
                (body.to_string(), v.clone())
            }
        };
        let k = k.replace('-', "_");
        if !known(&k) {
            return Err(CliError::Input(format!("unknown option '--{k}'")));
        }
        out.push((k, v));
    }
    Ok(out)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    /// Defaults, then the file, then the overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply(parse_text(&text)?);
        }
        cfg.apply(parse_overrides(overrides)?);
        Ok(cfg)
    }

    pub fn apply(&mut self, pairs: Vec<(String, String)>) {
        for (k, v) in pairs {
            self.values.insert(k, v);
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::Input(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.get(key);
        raw.trim().parse().map_err(|_| CliError::Input(format!("{key}: cannot parse '{raw}'")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parsed(key)?;
        if v.is_nan() {
            return Err(CliError::Input(format!("{key} is NaN")));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key).trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(CliError::Input(format!("{key}: expected true or false, found '{other}'"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.get(key)
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Input(format!("{key}: cannot parse '{s}'"))))
            .collect()
    }

    /// Path value; `None` when empty.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key).trim();
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| CliError::Input(format!("missing required key '{key}'")))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn family(&self) -> Result<Family, CliError> {
        Ok(self.get("family").parse::<Family>()?)
    }

    pub fn level(&self) -> Result<f64, CliError> {
        let level = self.f64("level")?;
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Input(format!("level must be in (0, 1), found {level}")));
        }
        Ok(level)
    }

    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        let rank = self.usize("m")?;
        let basis_method = match self.get("basis_method").trim() {
            "auto" => BasisMethod::Auto,
            "exact" => BasisMethod::Exact,
            "nystrom" => BasisMethod::Nystrom { oversample: rank },
            "cholesky" => BasisMethod::Cholesky,
            other => return Err(CliError::Input(format!("basis_method: unknown method '{other}'"))),
        };
        let proposal = match self.get("proposal").trim() {
            "laplace" => ProposalKind::Laplace,
            "isotropic" => ProposalKind::Isotropic,
            other => return Err(CliError::Input(format!("proposal: unknown kind '{other}'"))),
        };
        Ok(FitConfig {
            rank,
            nu: Smoothness::from_nu(self.f64("nu")?)?,
            basis_method,
            restricted: self.bool("restricted")?,
            epsilon: self.f64("epsilon")?,
            ess_search_multiplier: self.f64("ess_search")?,
            ess_final_multiplier: self.f64("ess_final")?,
            max_outer: self.usize("max_outer")?,
            min_weight_ess: self.f64("min_weight_ess")?,
            proposal,
            proposal_sd: self.f64("proposal_sd")?,
            burn_in: self.usize("burn_in")?,
            thin: self.usize("thin")?,
            phi_max: self.f64("phi_max")?,
            seed: self.u64("seed")?,
            ..FitConfig::default()
        })
    }

    pub fn scenario(&self) -> Result<ScenarioSpec, CliError> {
        let beta = self.f64_list("beta")?;
        let (domain, n_fit, n_predict, truth) = match self.get("domain").trim() {
            "continuous" => (
                ScenarioDomain::Continuous,
                self.usize("n_fit")?,
                self.usize("n_predict")?,
                PsiParams::continuous(beta, self.f64("sigma2")?, self.f64("phi")?)?,
            ),
            "lattice" => {
                let (rows, cols) = (self.usize("rows")?, self.usize("cols")?);
                (ScenarioDomain::Lattice { rows, cols }, rows * cols, 0, PsiParams::discrete(beta, self.f64("tau")?)?)
            }
            other => return Err(CliError::Input(format!("domain: expected continuous or lattice, found '{other}'"))),
        };
        let spec = ScenarioSpec {
            domain,
            family: self.family()?,
            n_fit,
            n_predict,
            truth,
            nu: self.f64("nu")?,
            basis_rank_for_truth: self.usize("truth_rank")?,
            extra_covariates: self.usize("extra_covariates")?,
            offset: self.bool("offset")?,
            seed: self.u64("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
