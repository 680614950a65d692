use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cpsim::config::{ConfigLoader, ScenarioConfig};
use cpsim::cps::CpsMode;
use cpsim::metrics::load_cell_samples;
use cpsim::sweep::{execute, run_dir_name, run_sweep, summarize, SweepSpec};

#[derive(Parser)]
#[command(name = "cpsim", version, about = "Collective perception multi-hop simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long, env = "CPSIM_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run the cross product of modes, densities, penetrations and seeds.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "baseline,app-forwarding,gbc-forwarding")]
        modes: Vec<CpsMode>,
        /// Comma-separated densities in veh/km.
        #[arg(long, value_delimiter = ',', default_value = "30,60")]
        densities: Vec<f64>,
        /// Comma-separated penetration fractions.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.25,0.5")]
        penetrations: Vec<f64>,
        /// Seeds as a list (`1,2,3`) or an inclusive range (`1..10`).
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[arg(long, env = "CPSIM_JOBS", default_value_t = default_jobs())]
        jobs: usize,
        #[arg(long, env = "CPSIM_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Re-aggregate the metric CSVs found below a directory.
    Summarize {
        dir: PathBuf,
        /// Where to write the summary; defaults to `dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        aoi_threshold_ms: u64,
    },
    /// Write the map geometry as JSON.
    MapDump {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set radio.tx_power_dbm=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    mode: Option<CpsMode>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    penetration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Keep position and reception traces (run only).
    #[arg(long)]
    trace: bool,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut loader = ConfigLoader::new();
        if let Some(path) = &self.config {
            loader = loader.file(path)?;
        }
        loader = loader.env(std::env::vars())?;
        for spec in &self.set {
            loader = loader.assignment(spec)?;
        }
        if let Some(m) = self.mode {
            loader = loader.set("cps.mode", &format!("\"{m}\""))?;
        }
        if let Some(d) = self.density {
            loader = loader.set("scenario.density", &format!("{d:?}"))?;
        }
        if let Some(p) = self.penetration {
            loader = loader.set("scenario.penetration", &format!("{p:?}"))?;
        }
        if let Some(s) = self.seed {
            loader = loader.set("scenario.seed", &s.to_string())?;
        }
        if let Some(d) = self.duration {
            loader = loader.set("scenario.duration_s", &format!("{d:?}"))?;
        }
        if self.trace {
            loader = loader.set("metrics.trace", "true")?;
        }
        Ok(loader.build()?)
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().trim_start_matches('=').parse().context("seed range end")?;
        if a > b {
            bail!("empty seed range {spec}");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`"))).collect()
}

fn run_one(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let dir = out.join(run_dir_name(cfg));
    let (files, samples) = execute(cfg, &dir)?;
    let key = cpsim::metrics::CellKey::new(cfg.cps.mode, cfg.scenario.density, cfg.scenario.penetration);
    let summary = summarize(vec![(key, samples)], cfg.metrics.aoi_threshold_ms as f64, &dir)?;
    for f in files.iter().chain(&summary) {
        println!("{}", f.display());
    }
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out } => run_one(&scenario.resolve()?, &out),
        Command::Sweep { scenario, modes, densities, penetrations, seeds, jobs, out } => {
            let base = scenario.resolve()?;
            let spec = SweepSpec { base, modes, densities, penetrations, seeds: parse_seeds(&seeds)? };
            for c in spec.configs() {
                c.validate().with_context(|| format!("sweep point {}", run_dir_name(&c)))?;
            }
            let manifest = run_sweep(&spec, &out, jobs)?;
            let failed = manifest.failures();
            eprintln!("{} runs, {} failed; manifest at {}", manifest.runs.len(), failed, out.join("manifest.json").display());
            if failed > 0 {
                bail!("{failed} runs failed");
            }
            Ok(())
        }
        Command::Summarize { dir, out, aoi_threshold_ms } => {
            let cells = load_cell_samples(&dir)?;
            if cells.is_empty() {
                bail!("no metric CSVs found below {}", dir.display());
            }
            let target = out.unwrap_or(dir);
            for f in summarize(cells, aoi_threshold_ms as f64, &target)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::MapDump { scenario, out } => {
            let cfg = scenario.resolve()?;
            let map = cpsim::mobility::GridMap::build(&cfg.map)?;
            let json = serde_json::to_string_pretty(&map)? + "\n";
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{json}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
