//! Scenario configuration: defaults, TOML files, environment and command-line
//! overrides, and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cps::{CpsConfig, CpsMode};
use crate::dcc::DccConfig;
use crate::geonet::GbcConfig;
use crate::mobility::{DensityBasis, MapParams, MobilityParams};
use crate::radio::RadioConfig;
use crate::SimTime;

/// Prefix of environment variables that override configuration keys, e.g.
/// `CPSIM_SCENARIO__PENETRATION=0.25`.
pub const ENV_PREFIX: &str = "CPSIM_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
    #[error("{field}: {constraint} (got {value})")]
    Invalid { field: &'static str, constraint: &'static str, value: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub seed: u64,
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Vehicles per km.
    pub density: f64,
    pub density_basis: DensityBasis,
    /// Fraction of vehicles carrying the CPS stack.
    pub penetration: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { seed: 1, duration_s: 15.0, warmup_s: 0.0, density: 30.0, density_basis: DensityBasis::RoadKm, penetration: 0.10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Logging region `[min_x, min_y, max_x, max_y]`.
    pub region: [f64; 4],
    pub range_of_interest_m: f64,
    pub max_aoi_ms: u64,
    pub ear_interval_ms: u64,
    pub aoi_threshold_ms: u64,
    /// Keep one record per AOI sample besides the histogram.
    pub aoi_samples: bool,
    /// Keep position, cycle and reception logs in the run result.
    pub trace: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            region: [50.0, 50.0, 950.0, 950.0],
            range_of_interest_m: 200.0,
            max_aoi_ms: 1000,
            ear_interval_ms: 100,
            aoi_threshold_ms: 200,
            aoi_samples: false,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioParams,
    pub map: MapParams,
    pub mobility: MobilityParams,
    pub radio: RadioConfig,
    pub dcc: DccConfig,
    pub cps: CpsConfig,
    pub gbc: GbcConfig,
    pub metrics: MetricsConfig,
}

fn invalid(field: &'static str, constraint: &'static str, value: impl ToString) -> ConfigError {
    ConfigError::Invalid { field, constraint, value: value.to_string() }
}

fn check_fraction(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, "must lie in [0, 1]", v))
    }
}

fn check_positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be finite and > 0", v))
    }
}

fn check_finite(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be finite", v))
    }
}

impl ScenarioConfig {
    pub fn mode(&self) -> CpsMode {
        self.cps.mode
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.scenario.duration_s)
    }

    pub fn warmup(&self) -> SimTime {
        SimTime::from_secs_f64(self.scenario.warmup_s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if s.seed > i64::MAX as u64 {
            return Err(invalid("scenario.seed", "must fit in a signed 64-bit integer", s.seed));
        }
        check_positive("scenario.duration_s", s.duration_s)?;
        if !(s.warmup_s.is_finite() && s.warmup_s >= 0.0 && s.warmup_s < s.duration_s) {
            return Err(invalid("scenario.warmup_s", "must be >= 0 and below duration_s", s.warmup_s));
        }
        check_positive("scenario.density", s.density)?;
        check_fraction("scenario.penetration", s.penetration)?;

        crate::mobility::GridMap::build(&self.map).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let m = &self.mobility;
        check_finite("mobility.desired_speed_mps", m.desired_speed_mps)?;
        if m.desired_speed_mps < 0.0 {
            return Err(invalid("mobility.desired_speed_mps", "must be >= 0", m.desired_speed_mps));
        }
        check_fraction("mobility.speed_spread", m.speed_spread)?;
        if m.step_ms == 0 || m.step_ms > 200 {
            return Err(invalid("mobility.step_ms", "must lie in [1, 200]", m.step_ms));
        }
        check_positive("mobility.min_gap_m", m.min_gap_m)?;
        check_positive("mobility.insert_clearance_m", m.insert_clearance_m)?;
        check_positive("mobility.stop_offset_m", m.stop_offset_m)?;

        let r = &self.radio;
        for (field, v) in [
            ("radio.tx_power_dbm", r.tx_power_dbm),
            ("radio.sense_threshold_dbm", r.sense_threshold_dbm),
            ("radio.decode_floor_dbm", r.decode_floor_dbm),
            ("radio.noise_floor_dbm", r.noise_floor_dbm),
            ("radio.thermal_noise_dbm", r.thermal_noise_dbm),
            ("radio.capture_margin_db", r.capture_margin_db),
            ("radio.per_wall_loss_db", r.per_wall_loss_db),
        ] {
            check_finite(field, v)?;
        }
        check_positive("radio.carrier_hz", r.carrier_hz)?;
        check_positive("radio.pathloss_exponent", r.pathloss_exponent)?;
        if r.bitrate_bps == 0 {
            return Err(invalid("radio.bitrate_bps", "must be > 0", r.bitrate_bps));
        }
        if r.slot_us == 0 || r.cw == 0 || r.queue_capacity == 0 {
            return Err(invalid("radio", "slot_us, cw and queue_capacity must be > 0", ""));
        }

        self.dcc.validate().map_err(|e| invalid("dcc", "threshold table", e))?;

        let c = &self.cps;
        if c.max_hop == 0 {
            return Err(invalid("cps.max_hop", "must be >= 1", c.max_hop));
        }
        check_positive("cps.sensor_radius_m", c.sensor_radius_m)?;
        if c.cycle_ms == 0 {
            return Err(invalid("cps.cycle_ms", "must be > 0", c.cycle_ms));
        }
        if c.max_objects == 0 {
            return Err(invalid("cps.max_objects", "must be > 0", c.max_objects));
        }
        check_positive("cps.triggers.position_m", c.triggers.position_m)?;
        check_positive("cps.triggers.speed_mps", c.triggers.speed_mps)?;
        check_positive("cps.triggers.heading_deg", c.triggers.heading_deg)?;

        let g = &self.gbc;
        check_positive("gbc.radius_m", g.radius_m)?;
        if g.lifetime_ms == 0 {
            return Err(invalid("gbc.lifetime_ms", "must be > 0", g.lifetime_ms));
        }
        if !(g.cbf_d_max_m.is_finite() && g.cbf_d_max_m >= 0.0) {
            return Err(invalid("gbc.cbf_d_max_m", "must be >= 0 (0 derives it from the radio range)", g.cbf_d_max_m));
        }

        let mt = &self.metrics;
        let [x0, y0, x1, y1] = mt.region;
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite() && x0 < x1 && y0 < y1) {
            return Err(invalid("metrics.region", "must be [min_x, min_y, max_x, max_y] with min < max", format!("{:?}", mt.region)));
        }
        check_positive("metrics.range_of_interest_m", mt.range_of_interest_m)?;
        if mt.ear_interval_ms == 0 || mt.ear_interval_ms % c.cycle_ms != 0 {
            return Err(invalid("metrics.ear_interval_ms", "must be a positive multiple of cps.cycle_ms", mt.ear_interval_ms));
        }
        Ok(())
    }

    /// Effective CBF reference distance.
    pub fn cbf_d_max(&self) -> f64 {
        if self.gbc.cbf_d_max_m > 0.0 {
            self.gbc.cbf_d_max_m
        } else {
            self.radio.los_range_m()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

/// Layered configuration builder: defaults, then an optional file, then
/// environment variables, then explicit overrides.
#[derive(Debug, Default, Clone)]
pub struct ConfigLoader {
    table: toml::Table,
}

impl ConfigLoader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        self = self.text(&text)?;
        Ok(self)
    }

    pub fn text(mut self, text: &str) -> Result<Self, ConfigError> {
        let t: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        merge(&mut self.table, t);
        Ok(self)
    }

    /// Applies `CPSIM_SECTION__KEY=value` variables from `vars`.
    pub fn env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                rest.contains("__").then(|| (rest.to_ascii_lowercase().replace("__", "."), v))
            })
            .collect();
        pairs.sort();
        for (key, value) in pairs {
            self = self.set(&key, &value)?;
        }
        Ok(self)
    }

    /// Sets a dotted key such as `cps.mode`. The value is read as a TOML
    /// value, falling back to a plain string.
    pub fn set(mut self, key: &str, raw: &str) -> Result<Self, ConfigError> {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::Override(format!("{key}={raw}")));
        }
        let value = parse_value(raw);
        let mut node = &mut self.table;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = match entry {
                toml::Value::Table(t) => t,
                _ => return Err(ConfigError::Override(format!("{key}={raw}"))),
            };
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
        Ok(self)
    }

    /// Parses a `key=value` override.
    pub fn assignment(self, spec: &str) -> Result<Self, ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
        self.set(k.trim(), v.trim())
    }

    pub fn build(self) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig =
            toml::Value::Table(self.table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ConfigLoader::new().text("").unwrap().build().unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.radio.tx_power_dbm, 23.0);
        assert_eq!(cfg.radio.bitrate_bps, 6_000_000);
        assert_eq!(cfg.cps.sensor_radius_m, 85.0);
        assert!(cfg.dcc.enabled);
        assert_eq!(cfg.scenario.duration_s, 15.0);
    }

    #[test]
    fn precedence_file_env_flags() {
        let cfg = ConfigLoader::new()
            .text("[scenario]\npenetration = 0.5\ndensity = 60\n[cps]\nmode = \"baseline\"\n")
            .unwrap()
            .env([("CPSIM_SCENARIO__DENSITY".to_string(), "45".to_string()), ("CPSIM_JOBS".to_string(), "4".to_string())])
            .unwrap()
            .set("scenario.penetration", "0.1")
            .unwrap()
            .set("cps.mode", "app-forwarding")
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(cfg.scenario.penetration, 0.1);
        assert_eq!(cfg.scenario.density, 45.0);
        assert_eq!(cfg.cps.mode, CpsMode::AppForwarding);
    }

    #[test]
    fn out_of_range_penetration() {
        let err = ConfigLoader::new().set("scenario.penetration", "1.5").unwrap().build().unwrap_err();
        assert!(err.to_string().contains("scenario.penetration"), "{err}");
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = ConfigLoader::new().text("[scenario]\npenetraton = 0.2\n").unwrap().build().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("penetraton") && msg.contains("penetration"), "{msg}");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ConfigLoader::new()
            .set("scenario.seed", "42")
            .unwrap()
            .set("gbc.algorithm", "flood")
            .unwrap()
            .set("map.spacing_m", "250")
            .unwrap()
            .build()
            .unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn cbf_reference_distance_follows_radio() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.cbf_d_max() - cfg.radio.los_range_m()).abs() < 1e-9);
    }
}
