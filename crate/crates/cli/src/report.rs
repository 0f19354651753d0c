//! Trajectory files, run manifests and seed summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fedstream::algorithms::{Algorithm, TrajectoryRow};
use fedstream::experiment::{summarize, SeedSummary};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const TRAJECTORY_COLUMNS: [&str; 7] = ["seed", "algorithm", "M", "K", "t", "grad_norm_sq", "train_loss"];
pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.csv";
pub const FAILURES: &str = "failures.csv";

/// Sweep parameters of one trajectory file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub file: String,
    #[serde(rename = "M")]
    pub clients: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_per_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellMeta>,
    pub runs: usize,
    pub failures: usize,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub clients: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    pub tau: Option<u64>,
    pub eta: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub clients: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    pub tau: Option<u64>,
    pub eta: Option<f64>,
    pub statistic: String,
    pub n: usize,
    pub mean: f64,
    pub ci_halfwidth: f64,
}

pub fn write_trajectories<W: std::io::Write>(writer: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(TRAJECTORY_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    ensure!(
        header == TRAJECTORY_COLUMNS,
        "{}: columns {:?} do not match the trajectory schema {:?}",
        path.display(),
        header,
        TRAJECTORY_COLUMNS
    );
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: row {}", path.display(), i + 2)))
        .collect()
}

/// Trajectory files named on the command line, each with its sweep
/// parameters when a manifest sits next to it.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<(PathBuf, CellMeta)>> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            match Manifest::load(path)? {
                Some(m) => out.extend(m.cells.into_iter().map(|c| (path.join(&c.file), c))),
                None => {
                    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                        .map(|e| e.map(|e| e.path()))
                        .collect::<std::io::Result<_>>()?;
                    files.retain(|f| {
                        f.extension().is_some_and(|e| e == "csv")
                            && f.file_name().is_some_and(|n| n.to_string_lossy().starts_with("traj_"))
                    });
                    files.sort();
                    ensure!(!files.is_empty(), "no trajectory files in {}", path.display());
                    out.extend(files.into_iter().map(|f| (f, CellMeta::default())));
                }
            }
        } else {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let meta = Manifest::load(dir)?
                .and_then(|m| m.cells.into_iter().find(|c| c.file == name))
                .unwrap_or_default();
            out.push((path.clone(), meta));
        }
    }
    Ok(out)
}

type GroupKey = (Algorithm, usize, usize, Option<u64>, Option<u64>);

/// Final-round metric of every seed, grouped by algorithm and sweep point.
#[derive(Debug, Default)]
pub struct Finals {
    order: Vec<(GroupKey, Option<f64>, Option<f64>)>,
    values: BTreeMap<GroupKey, BTreeMap<u64, (usize, f64)>>,
}

impl Finals {
    pub fn add(&mut self, meta: &CellMeta, rows: &[TrajectoryRow]) -> Result<()> {
        for r in rows {
            // without a manifest the keys come from the rows alone
            if !meta.file.is_empty() {
                ensure!(
                    r.clients == meta.clients && r.local_steps == meta.local_steps,
                    "{}: row for M={}, K={} in a file for M={}, K={}",
                    meta.file,
                    r.clients,
                    r.local_steps,
                    meta.clients,
                    meta.local_steps
                );
            }
            let key = (r.algorithm, r.clients, r.local_steps, meta.tau, meta.eta.map(f64::to_bits));
            let seeds = self.values.entry(key).or_insert_with(|| {
                self.order.push((key, meta.eta, meta.eta_per_k));
                BTreeMap::new()
            });
            let slot = seeds.entry(r.seed).or_insert((r.t, r.grad_norm_sq));
            if r.t >= slot.0 {
                *slot = (r.t, r.grad_norm_sq);
            }
        }
        Ok(())
    }

    pub fn summaries(&self) -> Vec<GroupSummary> {
        self.order
            .iter()
            .map(|&(key, eta, eta_per_k)| {
                let finals: Vec<f64> = self.values[&key].values().map(|v| v.1).collect();
                let norms: Vec<f64> = finals.iter().map(|v| v.sqrt()).collect();
                GroupSummary {
                    algorithm: key.0,
                    clients: key.1,
                    local_steps: key.2,
                    tau: key.3,
                    eta,
                    eta_per_k,
                    grad_norm_sq: summarize(&finals).expect("groups are non-empty"),
                    grad_norm: summarize(&norms).expect("groups are non-empty"),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub local_steps: usize,
    pub tau: Option<u64>,
    pub eta: Option<f64>,
    pub eta_per_k: Option<f64>,
    pub grad_norm_sq: SeedSummary,
    pub grad_norm: SeedSummary,
}

impl GroupSummary {
    pub fn rows(&self) -> [SummaryRow; 2] {
        let row = |statistic: &str, s: SeedSummary| SummaryRow {
            algorithm: self.algorithm,
            clients: self.clients,
            local_steps: self.local_steps,
            tau: self.tau,
            eta: self.eta,
            statistic: statistic.into(),
            n: s.n,
            mean: s.mean,
            ci_halfwidth: s.ci_halfwidth,
        };
        [row("final_grad_norm_sq", self.grad_norm_sq), row("final_grad_norm", self.grad_norm)]
    }
}

pub fn summarize_inputs(inputs: &[(PathBuf, CellMeta)]) -> Result<Vec<GroupSummary>> {
    let mut finals = Finals::default();
    for (path, meta) in inputs {
        finals.add(meta, &read_trajectories(path)?)?;
    }
    let out = finals.summaries();
    if out.is_empty() {
        bail!("trajectory files hold no rows");
    }
    Ok(out)
}

pub fn write_summary<W: std::io::Write>(writer: W, groups: &[GroupSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for g in groups {
        for row in g.rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

/// Column-aligned view of the summaries.
pub fn text_table(groups: &[GroupSummary]) -> String {
    let header = ["algorithm", "M", "K", "tau", "eta", "n", "|grad|^2", "+-", "|grad|", "+-"];
    let rows: Vec<Vec<String>> = std::iter::once(header.iter().map(|h| h.to_string()).collect())
        .chain(groups.iter().map(|g| {
            vec![
                g.algorithm.to_string(),
                g.clients.to_string(),
                g.local_steps.to_string(),
                opt(g.tau),
                opt(g.eta),
                g.grad_norm.n.to_string(),
                format!("{:.4e}", g.grad_norm_sq.mean),
                format!("{:.2e}", g.grad_norm_sq.ci_halfwidth),
                format!("{:.4e}", g.grad_norm.mean),
                format!("{:.2e}", g.grad_norm.ci_halfwidth),
            ]
        }))
        .collect();
    aligned(&rows)
}

/// Right-aligns every column; the first row is the header.
pub fn aligned(rows: &[Vec<String>]) -> String {
    let mut width = vec![0; rows.first().map_or(0, Vec::len)];
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Final gradient norm with rows `η = b/K` and one column per `K`, for every
/// algorithm and `M` swept with per-K step sizes.
pub fn step_size_tables(groups: &[GroupSummary]) -> String {
    let mut panels: Vec<(Algorithm, usize)> = Vec::new();
    for g in groups.iter().filter(|g| g.eta_per_k.is_some()) {
        if !panels.contains(&(g.algorithm, g.clients)) {
            panels.push((g.algorithm, g.clients));
        }
    }
    let mut out = String::new();
    for (alg, m) in panels {
        let panel: Vec<&GroupSummary> =
            groups.iter().filter(|g| g.algorithm == alg && g.clients == m && g.eta_per_k.is_some()).collect();
        let mut ks: Vec<usize> = panel.iter().map(|g| g.local_steps).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut bs: Vec<f64> = Vec::new();
        for g in &panel {
            let b = g.eta_per_k.expect("filtered");
            if !bs.contains(&b) {
                bs.push(b);
            }
        }
        let header: Vec<String> = std::iter::once("eta".to_string()).chain(ks.iter().map(|k| format!("K={k}"))).collect();
        let rows: Vec<Vec<String>> = std::iter::once(header)
            .chain(bs
            .iter()
            .map(|&b| {
                std::iter::once(format!("{b}/K"))
                    .chain(ks.iter().map(|&k| {
                        panel
                            .iter()
                            .find(|g| g.local_steps == k && g.eta_per_k == Some(b))
                            .map_or_else(|| "-".into(), |g| format!("{:.4} +- {:.4}", g.grad_norm.mean, g.grad_norm.ci_halfwidth))
                    }))
                    .collect()
            }))
            .collect();
        let _ = writeln!(out, "{alg}, M={m}: final |grad f|");
        out.push_str(&aligned(&rows));
    }
    out
}

pub fn write_failures<W: std::io::Write>(writer: W, rows: &[FailureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
