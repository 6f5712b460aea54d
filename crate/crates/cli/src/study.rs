//! Replicated simulation studies: simulate, fit and optionally bootstrap.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use sglmm_core::data::SpatialDataset;
use sglmm_core::mcml::{fit_domain, FitConfig, McmlFit};
use sglmm_core::rng::{derive_seed, Stream};
use sglmm_core::simulate::{simulate_scenario, ScenarioSpec};
use sglmm_core::uncertainty::{fisher_intervals, parametric_bootstrap, Interval};

use crate::commands::covers;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Run;

/// Settings shared by every run of a study.
#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub scenario: ScenarioSpec,
    pub fit: FitConfig,
    pub runs: usize,
    /// Bootstrap replicates per run; zero skips the bootstrap.
    pub bootstrap: usize,
    pub level: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub run: usize,
    pub seed: u64,
    pub converged: bool,
    /// Estimates in parameter-name order; empty on failure.
    pub values: Vec<f64>,
    pub fisher: Vec<Interval>,
    pub bootstrap: Option<Vec<Interval>>,
    pub seconds: f64,
    /// Simulation or fit failure; the run has no estimates.
    pub error: Option<String>,
    pub bootstrap_error: Option<String>,
}

/// Seed of run `r`; it drives the simulation, the fit and the bootstrap.
pub fn run_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, Stream::Study, r as u64)
}

pub fn study_run(plan: &StudyPlan, r: usize) -> StudyRow {
    let seed = run_seed(plan.master_seed, r);
    let started = Instant::now();
    let mut row = StudyRow {
        run: r,
        seed,
        converged: false,
        values: Vec::new(),
        fisher: Vec::new(),
        bootstrap: None,
        seconds: 0.0,
        error: None,
        bootstrap_error: None,
    };
    let spec = ScenarioSpec { seed, ..plan.scenario.clone() };
    let cfg = FitConfig { seed, ..plan.fit.clone() };
    let attempt = || -> sglmm_core::Result<(McmlFit, SpatialDataset)> {
        let sim = simulate_scenario(&spec)?;
        let data = sim.fit.model_data(spec.family)?;
        let fit = fit_domain(&data, &sim.fit.domain(), &cfg)?;
        Ok((fit, sim.fit))
    };
    match attempt() {
        Ok((fit, template)) => {
            row.converged = fit.converged;
            row.values = fit.psi_hat.values();
            row.fisher = fisher_intervals(&fit, plan.level).unwrap_or_default();
            if plan.bootstrap > 0 {
                match parametric_bootstrap(&fit, &template, &cfg, plan.bootstrap, seed, plan.level) {
                    Ok(report) => row.bootstrap = Some(report.intervals),
                    Err(e) => row.bootstrap_error = Some(e.to_string()),
                }
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row.seconds = started.elapsed().as_secs_f64();
    row
}

/// All runs, in run order.
pub fn run_study(plan: &StudyPlan) -> Vec<StudyRow> {
    (0..plan.runs).into_par_iter().map(|r| study_run(plan, r)).collect()
}

type Pick = Box<dyn Fn(&StudyRow) -> Option<&Vec<Interval>>>;

/// Coverage of the truth per method and parameter: (covered, counted).
pub fn coverage(rows: &[StudyRow], names: &[String], truth: &[f64]) -> Vec<(String, Vec<(usize, usize)>)> {
    let mut out = Vec::new();
    let methods: [(&str, Pick); 2] = [("fisher", Box::new(|r| Some(&r.fisher))), ("bootstrap", Box::new(|r| r.bootstrap.as_ref()))];
    for (method, pick) in methods {
        if !rows.iter().any(|r| pick(r).is_some_and(|v| !v.is_empty())) {
            continue;
        }
        let counts = names
            .iter()
            .zip(truth)
            .map(|(name, &t)| {
                let hits: Vec<bool> =
                    rows.iter().filter_map(|r| pick(r)?.iter().find(|iv| &iv.name == name).and_then(|iv| covers(iv, t))).collect();
                (hits.iter().filter(|&&h| h).count(), hits.len())
            })
            .collect();
        out.push((method.to_string(), counts));
    }
    out
}

pub fn write_estimates(rows: &[StudyRow], names: &[String], w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["run".to_string(), "seed".into(), "converged".into()];
    header.extend(names.iter().cloned());
    header.extend(["seconds".to_string(), "error".into(), "bootstrap_error".into()]);
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.run.to_string(), r.seed.to_string(), r.converged.to_string()];
        if r.values.len() == names.len() {
            rec.extend(r.values.iter().map(|v| v.to_string()));
        } else {
            rec.extend(names.iter().map(|_| "NA".to_string()));
        }
        rec.push(format!("{:.3}", r.seconds));
        rec.push(r.error.clone().unwrap_or_default());
        rec.push(r.bootstrap_error.clone().unwrap_or_default());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn write_intervals(rows: &[StudyRow], names: &[String], truth: &[f64], w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "method", "parameter", "lower", "upper", "covers"])?;
    for r in rows {
        let sets = [("fisher", Some(&r.fisher)), ("bootstrap", r.bootstrap.as_ref())];
        for (method, set) in sets {
            for iv in set.into_iter().flatten() {
                let (Some(lo), Some(hi)) = (iv.lower, iv.upper) else { continue };
                let t = names.iter().position(|n| n == &iv.name).map(|j| truth[j]);
                let hit = t.map_or_else(|| "NA".to_string(), |t| (lo <= t && t <= hi).to_string());
                out.write_record([r.run.to_string(), method.to_string(), iv.name.clone(), lo.to_string(), hi.to_string(), hit])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn write_coverage(table: &[(String, Vec<(usize, usize)>)], names: &[String], w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["method".to_string()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    for (method, counts) in table {
        let mut rec = vec![method.clone()];
        rec.extend(counts.iter().map(|&(hit, n)| if n == 0 { "NA".to_string() } else { format!("{:.4}", hit as f64 / n as f64) }));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &std::path::Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn plan_from_config(cfg: &RunConfig) -> Result<StudyPlan, CliError> {
    let plan = StudyPlan {
        scenario: cfg.scenario()?,
        fit: cfg.fit_config()?,
        runs: cfg.usize("runs")?,
        bootstrap: cfg.usize("bootstrap")?,
        level: cfg.level()?,
        master_seed: cfg.u64("seed")?,
    };
    if plan.runs == 0 {
        return Err(CliError::Input("runs must be positive".into()));
    }
    if plan.bootstrap == 1 {
        return Err(CliError::Input("bootstrap needs at least 2 replicates (or 0 to skip)".into()));
    }
    Ok(plan)
}

pub fn cmd_study(cfg: &RunConfig) -> Result<u8, CliError> {
    let plan = plan_from_config(cfg)?;
    let mut run = Run::start("study", cfg)?;
    run.seed("master", plan.master_seed);
    for r in 0..plan.runs {
        run.seed(&format!("run{r}"), run_seed(plan.master_seed, r));
    }
    let rows = run_study(&plan);
    let names = plan.scenario.truth.names();
    let truth = plan.scenario.truth.values();
    write_estimates(&rows, &names, create(&run.output("estimates.csv"))?)?;
    write_intervals(&rows, &names, &truth, create(&run.output("intervals.csv"))?)?;
    let table = coverage(&rows, &names, &truth);
    write_coverage(&table, &names, create(&run.output("coverage.csv"))?)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for r in &rows {
        if let Some(e) = r.error.as_ref().or(r.bootstrap_error.as_ref()) {
            run.warnings.push(format!("run {}: {e}", r.run));
        }
    }
    println!("{} runs, {} failed, {} converged", rows.len(), failed, rows.iter().filter(|r| r.converged).count());
    for (method, counts) in &table {
        let cells: Vec<String> = names.iter().zip(counts).map(|(n, &(hit, total))| format!("{n} {hit}/{total}")).collect();
        println!("{method} coverage: {}", cells.join(", "));
    }
    run.finish(0)?;
    Ok(0)
}
