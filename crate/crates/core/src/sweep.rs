//! Parameter sweeps over mode, density, penetration and seed, executed in
//! parallel with one run per worker.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::cps::CpsMode;
use crate::metrics::{cell_tag, pool_cells, write_run, write_summary, CellKey, CellSamples, CellSummary};
use crate::sim::Simulation;

/// Cross product of sweep axes applied on top of a base configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub modes: Vec<CpsMode>,
    pub densities: Vec<f64>,
    pub penetrations: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// The paper grid: every mode, 30 and 60 veh/km, four penetration rates,
    /// seeds `1..=10`.
    pub fn paper_grid(base: ScenarioConfig) -> Self {
        Self {
            base,
            modes: CpsMode::ALL.to_vec(),
            densities: vec![30.0, 60.0],
            penetrations: vec![0.05, 0.10, 0.25, 0.50],
            seeds: (1..=10).collect(),
        }
    }

    /// Configurations in a fixed order: mode, density, penetration, seed.
    pub fn configs(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &density in &self.densities {
                for &penetration in &self.penetrations {
                    for &seed in &self.seeds {
                        let mut c = self.base.clone();
                        c.cps.mode = mode;
                        c.scenario.density = density;
                        c.scenario.penetration = penetration;
                        c.scenario.seed = seed;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mode: CpsMode,
    pub density: f64,
    pub penetration: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub dir: PathBuf,
    pub config: PathBuf,
    pub files: Vec<PathBuf>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<ManifestEntry>,
    pub summary: Vec<PathBuf>,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }
}

/// Directory name of one run below the sweep root.
pub fn run_dir_name(cfg: &ScenarioConfig) -> String {
    let key = CellKey::new(cfg.cps.mode, cfg.scenario.density, cfg.scenario.penetration);
    format!("{}_seed{}", cell_tag(&key), cfg.scenario.seed)
}

/// Runs one configuration and writes its files into `dir`.
pub fn execute(cfg: &ScenarioConfig, dir: &Path) -> Result<(Vec<PathBuf>, CellSamples)> {
    cfg.validate()?;
    let sim = Simulation::new(cfg.clone())?;
    let result = catch_unwind(AssertUnwindSafe(|| sim.run())).map_err(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "run panicked".to_string());
        anyhow::anyhow!(msg)
    })?;
    let files = write_run(&result, dir)?;
    Ok((files.files, result.samples()))
}

/// Executes every run of `spec` on `jobs` worker threads, writes per-run
/// outputs below `out/runs`, the pooled summary into `out`, and
/// `out/manifest.json`.
pub fn run_sweep(spec: &SweepSpec, out: &Path, jobs: usize) -> Result<Manifest> {
    let configs = spec.configs();
    anyhow::ensure!(!configs.is_empty(), "sweep has an empty axis");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("building worker pool")?;
    let runs_root = out.join("runs");
    let outcomes: Vec<(ManifestEntry, Option<CellSamples>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let dir = runs_root.join(run_dir_name(cfg));
                let mut entry = ManifestEntry {
                    mode: cfg.cps.mode,
                    density: cfg.scenario.density,
                    penetration: cfg.scenario.penetration,
                    seed: cfg.scenario.seed,
                    status: RunStatus::Ok,
                    config: dir.join("config.toml"),
                    dir: dir.clone(),
                    files: Vec::new(),
                    error: None,
                };
                match execute(cfg, &dir) {
                    Ok((files, samples)) => {
                        entry.files = files;
                        (entry, Some(samples))
                    }
                    Err(e) => {
                        entry.status = RunStatus::Failed;
                        entry.error = Some(format!("{e:#}"));
                        (entry, None)
                    }
                }
            })
            .collect()
    });

    let threshold = spec.base.metrics.aoi_threshold_ms as f64;
    let mut cells: Vec<(CellKey, CellSamples)> = Vec::new();
    let mut runs = Vec::new();
    for (entry, samples) in outcomes {
        if let Some(s) = samples {
            cells.push((CellKey::new(entry.mode, entry.density, entry.penetration), s));
        }
        runs.push(entry);
    }
    let summary = summarize(cells, threshold, out)?;
    let manifest = Manifest { runs, summary };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Pools per-run samples by cell and writes the summary files into `out`.
pub fn summarize(cells: Vec<(CellKey, CellSamples)>, aoi_threshold_ms: f64, out: &Path) -> Result<Vec<PathBuf>> {
    let pooled = pool_cells(cells);
    let summaries: Vec<CellSummary> =
        pooled.iter().map(|(k, s)| CellSummary::compute(*k, s, aoi_threshold_ms)).collect();
    write_summary(&summaries, &pooled, out)
}
