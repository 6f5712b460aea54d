//! The `simulate`, `fit`, `predict` and `bootstrap` commands.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use sglmm_core::data::{read_table, SpatialDataset};
use sglmm_core::kernels::{AdjacencyGraph, Coordinates};
use sglmm_core::mcml::{fit_domain, standard_mcml_reference, McmlFit, TraceEntry};
use sglmm_core::predict::{predict_w_star, PredictionSites};
use sglmm_core::rng::{derive_seed, Stream};
use sglmm_core::simulate::simulate_scenario;
use sglmm_core::uncertainty::{bootstrap_replicates, fisher_intervals, summarize_bootstrap, write_replicates_csv, Interval};

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_STATISTICAL};
use crate::manifest::Run;

pub const FIT_FORMAT: &str = "sglmm-fit/1";

/// What `fit` writes and `predict` / `bootstrap` read back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub format: String,
    pub covariate_names: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub lattice: bool,
    pub fit: McmlFit,
}

impl FitFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read fit {}: {e}", path.display())))?;
        let file: FitFile = serde_json::from_str(&text)?;
        if file.format != FIT_FORMAT {
            return Err(CliError::Input(format!("{}: unsupported fit format '{}'", path.display(), file.format)));
        }
        Ok(file)
    }

    pub fn coordinates(&self) -> Result<Coordinates, CliError> {
        Ok(Coordinates::new(self.coords.clone())?)
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

/// Reads the dataset named by `data`, with the lattice from `edges` if set.
pub fn load_dataset(cfg: &RunConfig, run: &mut Run) -> Result<SpatialDataset, CliError> {
    let path = cfg.require_path("data")?;
    run.input(&path);
    let mut ds = SpatialDataset::read_csv_file(&path, None).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(edges) = cfg.path("edges") {
        run.input(&edges);
        let graph =
            AdjacencyGraph::read_edge_list_file(&edges, ds.n()).map_err(|e| CliError::Input(format!("{}: {e}", edges.display())))?;
        ds.graph = Some(graph);
    }
    Ok(ds)
}

pub fn fit_dataset(cfg: &RunConfig, ds: &SpatialDataset) -> Result<McmlFit, CliError> {
    let data = ds.model_data(cfg.family()?)?;
    let fit_cfg = cfg.fit_config()?;
    let fit = if cfg.bool("reference")? {
        standard_mcml_reference(&data, &ds.domain(), &fit_cfg)?
    } else {
        fit_domain(&data, &ds.domain(), &fit_cfg)?
    };
    Ok(fit)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<u8, CliError> {
    let spec = cfg.scenario()?;
    let mut run = Run::start("simulate", cfg)?;
    run.seed("master", spec.seed);
    run.seed("simulation", derive_seed(spec.seed, Stream::Simulation, 0));
    let sim = simulate_scenario(&spec)?;
    sim.fit.write_csv(create(&run.output("data.csv"))?)?;
    if let Some(pred) = &sim.predict {
        pred.write_csv(create(&run.output("predict.csv"))?)?;
    }
    if let Some(g) = &sim.fit.graph {
        g.write_edge_list(create(&run.output("edges.txt"))?)?;
    }
    let mut truth = csv::Writer::from_writer(create(&run.output("truth.csv"))?);
    truth.write_record(["set", "x", "y", "w"])?;
    for (set, ds) in [("fit", Some(&sim.fit)), ("predict", sim.predict.as_ref())] {
        let Some(ds) = ds else { continue };
        let w = ds.w.as_ref().expect("simulated data carry the field");
        for (i, p) in ds.coords.points().iter().enumerate() {
            truth.write_record([set.to_string(), p[0].to_string(), p[1].to_string(), w[i].to_string()])?;
        }
    }
    truth.flush()?;
    drop(truth);
    println!(
        "simulated {} fitting sites{}",
        sim.fit.n(),
        sim.predict.as_ref().map_or(String::new(), |p| format!(" and {} prediction sites", p.n()))
    );
    run.finish(0)?;
    Ok(0)
}

/// One row of the parameter table.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub fisher_lower: Option<f64>,
    pub fisher_upper: Option<f64>,
    pub mc_se: Option<f64>,
}

pub fn parameter_table(fit: &McmlFit, level: f64) -> Vec<ParameterRow> {
    let intervals: Option<Vec<Interval>> = fisher_intervals(fit, level).ok();
    let names = fit.psi_hat.names();
    let values = fit.psi_hat.values();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let iv = intervals.as_ref().and_then(|v| v.iter().find(|i| &i.name == name));
            let mc_se = fit.mc_error_cov.as_ref().filter(|c| j < c.nrows()).map(|c| c[(j, j)].max(0.0).sqrt());
            ParameterRow {
                name: name.clone(),
                estimate: values[j],
                fisher_lower: iv.and_then(|i| i.lower),
                fisher_upper: iv.and_then(|i| i.upper),
                mc_se,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_parameter_table(rows: &[ParameterRow], w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parameter", "estimate", "fisher_lower", "fisher_upper", "mc_se"])?;
    for r in rows {
        out.write_record([r.name.clone(), r.estimate.to_string(), opt(r.fisher_lower), opt(r.fisher_upper), opt(r.mc_se)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace(trace: &[TraceEntry], w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = trace.first() else {
        out.write_record(["iteration"])?;
        out.flush()?;
        return Ok(());
    };
    let names = first.psi.names();
    let mut header = vec!["iteration".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("next_{n}")));
    header.extend(["loglik_gain", "step_fraction", "ase", "k", "ess", "acceptance_rate", "wall_seconds"].map(String::from));
    out.write_record(&header)?;
    for t in trace {
        let mut row = vec![t.iteration.to_string()];
        row.extend(t.psi.values().iter().map(|v| v.to_string()));
        row.extend(t.psi_next.values().iter().map(|v| v.to_string()));
        row.extend([
            t.loglik_gain.to_string(),
            t.step_fraction.to_string(),
            t.ase.to_string(),
            t.k.to_string(),
            t.ess.to_string(),
            t.acceptance_rate.to_string(),
            t.wall_seconds.to_string(),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn print_table(rows: &[ParameterRow], level: f64) {
    println!("{:<10} {:>12} {:>26} {:>10}", "parameter", "estimate", format!("Fisher {:.0}% CI", level * 100.0), "MC SE");
    for r in rows {
        let ci = match (r.fisher_lower, r.fisher_upper) {
            (Some(l), Some(u)) => format!("({l:.4}, {u:.4})"),
            _ => "-".to_string(),
        };
        let se = r.mc_se.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
        println!("{:<10} {:>12.4} {:>26} {:>10}", r.name, r.estimate, ci, se);
    }
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<u8, CliError> {
    let level = cfg.level()?;
    let mut run = Run::start("fit", cfg)?;
    let ds = load_dataset(cfg, &mut run)?;
    let seed = cfg.u64("seed")?;
    run.seed("master", seed);
    run.seed("sketch", derive_seed(seed, Stream::Sketch, 0));
    let fit = fit_dataset(cfg, &ds)?;
    let rows = parameter_table(&fit, level);
    let file = FitFile {
        format: FIT_FORMAT.to_string(),
        covariate_names: ds.covariate_names.clone(),
        coords: ds.coords.points().to_vec(),
        lattice: ds.is_lattice(),
        fit,
    };
    serde_json::to_writer(create(&run.output("fit.json"))?, &file)?;
    write_parameter_table(&rows, create(&run.output("parameters.csv"))?)?;
    write_trace(&file.fit.trace, create(&run.output("trace.csv"))?)?;
    print_table(&rows, level);
    run.warnings = file.fit.metadata.warnings.clone();
    let code = if file.fit.converged {
        0
    } else {
        eprintln!("warning: fit did not converge; results written anyway");
        EXIT_STATISTICAL
    };
    run.finish(code)?;
    Ok(code)
}

/// Reads prediction sites: `x,y`, optional `offset`, and the fit's
/// covariate columns when the design is not the coordinates.
pub fn read_sites(path: &Path, covariate_names: &[String]) -> Result<PredictionSites, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let table = read_table(file, &["x", "y"]).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let n = table.rows.len();
    if n == 0 {
        return Err(CliError::Input(format!("{}: no prediction sites", path.display())));
    }
    let (xs, ys) = (table.column("x").expect("required"), table.column("y").expect("required"));
    let coords = Coordinates::new((0..n).map(|i| [xs[i], ys[i]]).collect())?;
    let coordinate_design = covariate_names == ["x", "y"];
    let x = if coordinate_design {
        None
    } else {
        let cols: Option<Vec<Vec<f64>>> = covariate_names.iter().map(|c| table.column(c)).collect();
        cols.map(|cols| DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
    };
    let offset = table.column("offset").map(DVector::from_vec);
    Ok(PredictionSites { coords, x, offset })
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<u8, CliError> {
    let mut run = Run::start("predict", cfg)?;
    let fit_path = cfg.require_path("fit")?;
    let sites_path = cfg.require_path("sites")?;
    run.input(&fit_path);
    run.input(&sites_path);
    let file = FitFile::read(&fit_path)?;
    if file.lattice {
        return Err(CliError::Input("prediction at new coordinates needs a continuous-domain fit".into()));
    }
    let sites = read_sites(&sites_path, &file.covariate_names)?;
    let result = predict_w_star(&file.fit, &file.coordinates()?, &sites)?;
    result.write_csv(create(&run.output("predictions.csv"))?)?;
    println!("predicted {} sites", result.coords.len());
    run.finish(0)?;
    Ok(0)
}

pub fn write_intervals(intervals: &[Interval], sd: Option<&[f64]>, w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parameter", "estimate", "lower", "upper", "sd"])?;
    for (j, iv) in intervals.iter().enumerate() {
        out.write_record([iv.name.clone(), iv.estimate.to_string(), opt(iv.lower), opt(iv.upper), opt(sd.map(|s| s[j]))])?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_bootstrap(cfg: &RunConfig) -> Result<u8, CliError> {
    let level = cfg.level()?;
    let b = cfg.usize("replicates")?;
    if b < 2 {
        return Err(CliError::Input("replicates must be at least 2".into()));
    }
    let mut run = Run::start("bootstrap", cfg)?;
    let fit_path = cfg.require_path("fit")?;
    run.input(&fit_path);
    let file = FitFile::read(&fit_path)?;
    let template = load_dataset(cfg, &mut run)?;
    if template.n() != file.coords.len() || template.is_lattice() != file.lattice {
        return Err(CliError::Input("dataset does not match the fit".into()));
    }
    let master = cfg.u64("seed")?;
    run.seed("master", master);
    let fit_cfg = cfg.fit_config()?;
    let reps = bootstrap_replicates(&file.fit, &template, &fit_cfg, b, master);
    let names = file.fit.psi_hat.names();
    write_replicates_csv(&names, &reps, create(&run.output("bootstrap_replicates.csv"))?)?;
    match summarize_bootstrap(&file.fit.psi_hat, reps, level) {
        Ok(report) => {
            write_intervals(&report.intervals, Some(&report.sd), create(&run.output("bootstrap_intervals.csv"))?)?;
            println!("{} of {} replicates used", report.used, b);
            for iv in &report.intervals {
                println!(
                    "{:<10} {:>10.4} ({:.4}, {:.4})",
                    iv.name,
                    iv.estimate,
                    iv.lower.unwrap_or(f64::NAN),
                    iv.upper.unwrap_or(f64::NAN)
                );
            }
            if !report.flagged.is_empty() {
                run.warnings.push(format!("replicates with extreme sigma2: {:?}", report.flagged));
            }
            run.finish(0)?;
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            run.warnings.push(e.to_string());
            run.finish(EXIT_STATISTICAL)?;
            Ok(EXIT_STATISTICAL)
        }
    }
}

/// Whether `truth` lies inside an interval; `None` when it has no bounds.
pub fn covers(iv: &Interval, truth: f64) -> Option<bool> {
    Some(iv.lower? <= truth && truth <= iv.upper?)
}
