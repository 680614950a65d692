use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use super::summary::{AoiStats, CellKey, CellSamples, CellSummary, Stat};
use super::RunResult;
use crate::cps::CpsMode;
use crate::SimTime;

/// Cell tag used in file names: `<mode>_<density>_<penetration>`.
pub fn cell_tag(key: &CellKey) -> String {
    format!("{}_{}_{}", key.mode, key.density, key.penetration)
}

fn secs(t: SimTime) -> String {
    t.to_string()
}

fn ms(t: SimTime) -> String {
    format!("{}", t.as_micros() as f64 / 1000.0)
}

/// Paths written for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
    prefix: [String; 4],
}

impl Table {
    fn create(dir: &Path, metric: &str, result: &RunResult, header: &[&str]) -> Result<Self> {
        let key = result.cell();
        let path = dir.join(format!("{metric}_{}.csv", cell_tag(&key)));
        let mut writer = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut full = vec!["mode", "density", "penetration", "seed"];
        full.extend_from_slice(header);
        writer.write_record(&full)?;
        let prefix = [key.mode.to_string(), key.density.to_string(), key.penetration.to_string(), result.seed.to_string()];
        Ok(Self { path, writer, prefix })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        let record = self.prefix.iter().map(String::as_str).chain(fields.iter().map(String::as_str));
        self.writer.write_record(record)?;
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Writes the resolved configuration and one CSV per metric into `dir`.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<RunFiles> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();

    let config_path = dir.join("config.toml");
    fs::write(&config_path, result.config.to_toml())?;
    files.push(config_path);

    let mut t = Table::create(dir, "ear", result, &["station", "t", "perceived", "in_range", "ear"])?;
    for s in &result.ear {
        let ear = s.ear().map_or_else(|| "undefined".to_string(), |v| v.to_string());
        t.row(&[s.station.to_string(), secs(s.at), s.perceived.to_string(), s.in_range.to_string(), ear])?;
    }
    files.push(t.finish()?);

    let mut t = Table::create(dir, "aoi", result, &["aoi_ms", "hop", "net_hops", "count"])?;
    for b in &result.aoi_bins {
        t.row(&[ms(b.aoi), b.hop.to_string(), b.net_hops.to_string(), b.count.to_string()])?;
    }
    files.push(t.finish()?);

    if result.config.metrics.aoi_samples {
        let mut t = Table::create(
            dir,
            "aoi-samples",
            result,
            &["station", "t", "sender", "object", "measured_at", "aoi_ms", "hop", "net_hops"],
        )?;
        for s in &result.aoi {
            t.row(&[
                s.receiver.to_string(),
                secs(s.at),
                s.sender.to_string(),
                s.object.to_string(),
                secs(s.measured_at),
                ms(s.aoi()),
                s.hop.to_string(),
                s.net_hops.to_string(),
            ])?;
        }
        files.push(t.finish()?);
    }

    let mut t = Table::create(dir, "cbr", result, &["station", "t", "cbr", "dcc_state"])?;
    for s in &result.cbr {
        t.row(&[s.station.to_string(), secs(s.at), s.cbr.to_string(), s.state.name().to_string()])?;
    }
    files.push(t.finish()?);

    let mut t = Table::create(dir, "objects", result, &["station", "t", "potential", "carried"])?;
    for s in &result.objects {
        t.row(&[s.station.to_string(), secs(s.at), s.potential.to_string(), s.carried.to_string()])?;
    }
    files.push(t.finish()?);

    let mut t = Table::create(
        dir,
        "tx",
        result,
        &[
            "station",
            "t",
            "kind",
            "dcc_state",
            "cbr",
            "min_gap_ms",
            "gap_ms",
            "objects",
            "max_object_hop",
            "net_hops",
            "bytes",
            "gated",
            "in_region",
        ],
    )?;
    for r in &result.transmissions {
        t.row(&[
            r.station.to_string(),
            secs(r.at),
            format!("{:?}", r.kind).to_lowercase(),
            r.state.name().to_string(),
            r.cbr.to_string(),
            ms(r.min_gap),
            r.gap.map_or_else(String::new, ms),
            r.objects.to_string(),
            r.max_object_hop.to_string(),
            r.net_hops.to_string(),
            r.bytes.to_string(),
            r.gated.to_string(),
            r.in_region.to_string(),
        ])?;
    }
    files.push(t.finish()?);

    let mut t = Table::create(
        dir,
        "stations",
        result,
        &[
            "station",
            "joined",
            "left",
            "cycles",
            "cpms_generated",
            "cpms_sent",
            "dcc_denials",
            "forwards_sent",
            "forwards_expired",
            "cpms_received",
            "mac_drops",
            "occ_relaxed",
            "occ_active1",
            "occ_active2",
            "occ_active3",
            "occ_restrictive",
            "gn_sent",
            "gn_forwarded",
            "gn_dropped",
            "gn_duplicates",
            "gn_delivered",
            "gn_timers_cancelled",
            "peak_duplicate_entries",
        ],
    )?;
    for c in &result.stations {
        let mut row = vec![
            c.station.to_string(),
            secs(c.joined_at),
            c.left_at.map_or_else(String::new, secs),
            c.cycles.to_string(),
            c.cpms_generated.to_string(),
            c.cpms_sent.to_string(),
            c.dcc_denials.to_string(),
            c.forwards_sent.to_string(),
            c.forwards_expired.to_string(),
            c.cpms_received.to_string(),
            c.mac_drops.to_string(),
        ];
        row.extend(c.dcc_occupancy.iter().map(u64::to_string));
        let g = c.geonet;
        row.extend(
            [g.sent, g.forwarded, g.dropped, g.duplicates, g.delivered, g.timers_cancelled, c.peak_duplicate_entries]
                .iter()
                .map(u64::to_string),
        );
        t.row(&row)?;
    }
    files.push(t.finish()?);

    Ok(RunFiles { dir: dir.to_path_buf(), files })
}

fn fmt_stat<T>(s: &Stat<T>, f: impl Fn(&T) -> Vec<f64>, width: usize) -> Vec<String> {
    match s.data() {
        Some(t) => f(t).into_iter().map(|v| v.to_string()).collect(),
        None => vec!["no_data".to_string(); width],
    }
}

/// Writes `summary.json`, `summary.csv` and `aoi_cdf.csv` into `dir`.
pub fn write_summary(summaries: &[CellSummary], pooled: &[(CellKey, CellSamples)], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join("summary.json");
    fs::write(&json_path, serde_json::to_string_pretty(summaries)? + "\n")?;

    let csv_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header: Vec<String> = ["mode", "density", "penetration", "seeds"].iter().map(|s| s.to_string()).collect();
    for prefix in ["ear", "potential_objects", "carried_objects"] {
        for f in ["n", "mean", "min", "whisker_low", "q1", "median", "q3", "whisker_high", "max"] {
            header.push(format!("{prefix}_{f}"));
        }
    }
    for f in ["n", "mean_ms", "p50_ms", "p85_ms", "p99_ms", "share_below_threshold"] {
        header.push(format!("aoi_{f}"));
    }
    for f in ["n", "mean", "p50", "p90", "max"] {
        header.push(format!("cbr_{f}"));
    }
    w.write_record(&header)?;
    let boxed = |b: &super::summary::BoxStats| {
        vec![b.n as f64, b.mean, b.min, b.whisker_low, b.q1, b.median, b.q3, b.whisker_high, b.max]
    };
    for s in summaries {
        let mut row = vec![
            s.key.mode.to_string(),
            s.key.density.to_string(),
            s.key.penetration.to_string(),
            s.seeds.len().to_string(),
        ];
        row.extend(fmt_stat(&s.ear, boxed, 9));
        row.extend(fmt_stat(&s.potential_objects, boxed, 9));
        row.extend(fmt_stat(&s.carried_objects, boxed, 9));
        row.extend(fmt_stat(
            &s.aoi,
            |a| vec![a.n as f64, a.mean_ms, a.p50_ms, a.p85_ms, a.p99_ms, a.share_below_threshold],
            6,
        ));
        row.extend(fmt_stat(&s.cbr, |c| vec![c.n as f64, c.mean, c.p50, c.p90, c.max], 5));
        w.write_record(&row)?;
    }
    w.flush()?;

    let cdf_path = dir.join("aoi_cdf.csv");
    let mut w = csv::Writer::from_path(&cdf_path)?;
    w.write_record(["mode", "density", "penetration", "aoi_ms", "fraction"])?;
    for (key, cell) in pooled {
        let prefix = [key.mode.to_string(), key.density.to_string(), key.penetration.to_string()];
        let Some((last, _)) = cell.aoi.last_key_value() else {
            w.write_record(prefix.iter().map(String::as_str).chain(["no_data", "no_data"]))?;
            continue;
        };
        // Step function sampled on a 1 ms grid.
        let last_ms = last.as_micros().div_ceil(1000);
        for t in 0..=last_ms {
            let frac = AoiStats::cdf_at(&cell.aoi, t as f64);
            w.write_record(prefix.iter().cloned().chain([t.to_string(), frac.to_string()]))?;
        }
    }
    w.flush()?;
    Ok(vec![json_path, csv_path, cdf_path])
}

/// Columns read back from per-run metric files; each file carries a subset.
#[derive(Deserialize)]
struct SampleRow {
    mode: String,
    density: f64,
    penetration: f64,
    seed: u64,
    #[serde(default)]
    ear: Option<String>,
    #[serde(default)]
    aoi_ms: Option<f64>,
    #[serde(default)]
    count: Option<u64>,
    #[serde(default)]
    cbr: Option<f64>,
    #[serde(default)]
    potential: Option<f64>,
    #[serde(default)]
    carried: Option<f64>,
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_csvs(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

fn key_of(row: &SampleRow, path: &Path) -> Result<CellKey> {
    let mode: CpsMode = row.mode.parse().map_err(|e: String| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(CellKey::new(mode, row.density, row.penetration))
}

/// Reads every per-run metric CSV below `root` and groups the raw samples by
/// cell.
pub fn load_cell_samples(root: &Path) -> Result<Vec<(CellKey, CellSamples)>> {
    let mut paths = Vec::new();
    collect_csvs(root, &mut paths)?;
    let mut cells: BTreeMap<String, (CellKey, CellSamples)> = BTreeMap::new();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let metric = name.split('_').next().unwrap_or_default();
        if !matches!(metric, "ear" | "aoi" | "cbr" | "objects") {
            continue;
        }
        let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
        // Summary outputs share name prefixes but have no seed column.
        if !rdr.headers()?.iter().any(|h| h == "seed") {
            continue;
        }
        for row in rdr.deserialize::<SampleRow>() {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            let key = key_of(&row, &path)?;
            let (_, s) = cells.entry(cell_tag(&key)).or_insert_with(|| (key, CellSamples::default()));
            if !s.seeds.contains(&row.seed) {
                s.seeds.push(row.seed);
            }
            match metric {
                "ear" => s.ear.extend(row.ear.as_deref().and_then(|v| v.parse::<f64>().ok())),
                "aoi" => {
                    if let (Some(v), Some(c)) = (row.aoi_ms, row.count) {
                        let t = SimTime::from_micros((v * 1000.0).round() as u64);
                        *s.aoi.entry(t).or_insert(0) += c;
                    }
                }
                "cbr" => s.cbr.extend(row.cbr),
                _ => {
                    s.potential.extend(row.potential);
                    s.carried.extend(row.carried);
                }
            }
        }
    }
    Ok(cells.into_values().collect())
}
