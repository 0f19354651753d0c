//! Executes an experiment sweep and writes its output directory.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use fedstream::algorithms::{self, Algorithm, TrajectoryRow};
use fedstream::experiment;
use fedstream::ingest::{self, Dataset, TRAINING_MONTHS};
use fedstream::objectives::{REGRESSION_DIM, SYNTH_DIM};
use fedstream::rng::{Domain, RngKey};
use rayon::prelude::*;

use crate::config::{Cell, EtaSpec, ExperimentConfig, ExperimentKind};
use crate::report::{self, CellMeta, FailureRow, Finals, GroupSummary, Manifest};

pub struct Outcome {
    pub summaries: Vec<GroupSummary>,
    pub failures: usize,
    pub runs: usize,
}

/// Loads and preprocesses every station in `dir`.
pub fn load_stations(dir: &Path) -> Result<Vec<Dataset>> {
    let series = ingest::load_dir(dir).with_context(|| format!("loading stations from {}", dir.display()))?;
    series
        .iter()
        .map(|s| {
            ingest::prepare_station(s, TRAINING_MONTHS)
                .map(|(d, _)| d)
                .with_context(|| format!("preparing station {}", s.station))
        })
        .collect()
}

struct Job<'a> {
    cell: &'a Cell,
    algorithm: Algorithm,
    seed: u64,
}

fn run_job(cfg: &ExperimentConfig, stations: &[Dataset], job: &Job) -> Result<Vec<TrajectoryRow>, String> {
    let cell = job.cell;
    match cfg.experiment {
        ExperimentKind::Synth => {
            let fed = cell.fed_config(cfg, job.algorithm, job.seed, SYNTH_DIM);
            let p = cell.chain.expect("synthetic cells carry a chain").p;
            let result = experiment::run_synthetic(&fed, p, cfg.lambda).map_err(|e| e.to_string())?;
            Ok(algorithms::trajectory_rows(&fed, &result))
        }
        ExperimentKind::Air => {
            let fed = cell.fed_config(cfg, job.algorithm, job.seed, REGRESSION_DIM);
            let names: Vec<String> = stations.iter().map(|d| d.station.clone()).collect();
            let n_months = cfg.n_months.expect("validated");
            let windows = ingest::partition_clients(&names, n_months, cell.clients, RngKey::new(job.seed, Domain::Partition, 0))
                .map_err(|e| e.to_string())?;
            let problem = ingest::build_regression(stations, &windows, cfg.lambda).map_err(|e| e.to_string())?;
            let mut streams: Vec<_> = (0..cell.clients).map(|m| problem.stream(m)).collect();
            let result = algorithms::run(&fed, &problem, &mut streams).map_err(|e| e.to_string())?;
            Ok(algorithms::trajectory_rows(&fed, &result))
        }
    }
}

fn meta(cell: &Cell) -> CellMeta {
    CellMeta {
        file: cell.file_name(),
        clients: cell.clients,
        local_steps: cell.local_steps,
        tau: cell.chain.map(|c| c.tau),
        p: cell.chain.map(|c| c.p),
        eta: Some(cell.eta()),
        eta_per_k: match cell.eta {
            EtaSpec::PerK(b) => Some(b),
            EtaSpec::Fixed(_) => None,
        },
    }
}

/// Validates `cfg`, runs every `(cell, algorithm, seed)` concurrently and
/// writes the output files in sweep order. Nothing is written when the
/// configuration or the data are rejected.
pub fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let cells = cfg.cells()?;
    let stations = match cfg.experiment {
        ExperimentKind::Synth => Vec::new(),
        ExperimentKind::Air => load_stations(cfg.data.as_deref().context("air experiments need a data directory")?)?,
    };
    let jobs: Vec<Job> = cells
        .iter()
        .flat_map(|cell| {
            cfg.algorithms
                .iter()
                .flat_map(move |&algorithm| cfg.seeds.iter().map(move |&seed| Job { cell, algorithm, seed }))
        })
        .collect();
    let start = Instant::now();
    eprintln!("{} runs over {} cells on {} threads", jobs.len(), cells.len(), rayon::current_num_threads());
    let results: Vec<Result<Vec<TrajectoryRow>, String>> = jobs.par_iter().map(|job| run_job(cfg, &stations, job)).collect();
    eprintln!("finished in {:.1}s", start.elapsed().as_secs_f64());

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut failures = Vec::new();
    let mut finals = Finals::default();
    let mut metas = Vec::with_capacity(cells.len());
    let per_cell = cfg.algorithms.len() * cfg.seeds.len();
    for (ci, cell) in cells.iter().enumerate() {
        let mut rows = Vec::new();
        for (job, result) in jobs[ci * per_cell..(ci + 1) * per_cell].iter().zip(&results[ci * per_cell..]) {
            match result {
                Ok(r) => rows.extend_from_slice(r),
                Err(error) => failures.push(FailureRow {
                    seed: job.seed,
                    algorithm: job.algorithm,
                    clients: cell.clients,
                    local_steps: cell.local_steps,
                    tau: cell.chain.map(|c| c.tau),
                    eta: cell.eta(),
                    error: error.clone(),
                }),
            }
        }
        let m = meta(cell);
        let path = out.join(&m.file);
        let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        report::write_trajectories(std::io::BufWriter::new(file), &rows)?;
        finals.add(&m, &rows)?;
        metas.push(m);
    }
    let summaries = finals.summaries();
    report::write_summary(std::fs::File::create(out.join(report::SUMMARY))?, &summaries)?;
    let failures_path = out.join(report::FAILURES);
    if failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path)?;
        }
    } else {
        report::write_failures(std::fs::File::create(&failures_path)?, &failures)?;
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        cells: metas,
        runs: jobs.len(),
        failures: failures.len(),
    };
    std::fs::write(out.join(report::MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(Outcome { summaries, failures: failures.len(), runs: jobs.len() })
}
