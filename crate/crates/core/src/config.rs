//! Scenario configuration.
//!
//! A configuration is built in three layers: a profile (`paper` or `desk`),
//! an optional JSON file and dotted-path overrides such as
//! `run.n_mc=20` or `sweeps.rcs_db=[-20]`. Unknown keys are rejected and
//! schema errors carry the offending key path.
//!
//! ```json
//! {
//!   "users": 5,
//!   "ofdm": { "subcarriers": 8 },
//!   "run": { "seeds": 5, "n_mc": 50 }
//! }
//! ```

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::Position3;
use crate::precoding::Strategy;
use crate::{db_to_linear, dbm_to_watt, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper or desk)"))),
        }
    }
}

/// Positions in meters. The transmit AP is the coordinate origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// RIS phase center `e`.
    pub ris: [f64; 3],
    /// Receive array phase center.
    pub rx: [f64; 3],
    /// Nominal target position `q`, also the center of the uncertainty box.
    pub target: [f64; 3],
    pub ue_corner: [f64; 3],
    pub ue_size: [f64; 3],
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            ris: [100.0, 13.0, 10.0],
            rx: [100.3, 13.0, 10.0],
            target: [50.0, 50.0, 5.0],
            ue_corner: [60.0, 30.0, -9.0],
            ue_size: [40.0, 20.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub tx_y: usize,
    pub tx_z: usize,
    pub ris_y: usize,
    pub ris_z: usize,
    /// Antennas behind the RIS.
    pub rx: usize,
    /// Antenna counts of the no-RIS baselines.
    pub rx_no_ris: Vec<usize>,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            tx_y: 7,
            tx_z: 7,
            ris_y: 7,
            ris_z: 7,
            rx: 4,
            rx_no_ris: vec![4, 25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        OfdmConfig {
            carrier_hz: 30e9,
            bandwidth_hz: 40e6,
            subcarriers: 32,
        }
    }
}

/// Coherence block split in symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_s: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            tau_c: 15,
            tau_p: 5,
            tau_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub tx_dbm: f64,
    pub pilot_dbm: f64,
    pub noise_psd_dbw_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            tx_dbm: 35.0,
            pilot_dbm: 20.0,
            noise_psd_dbw_hz: -204.0,
            noise_figure_db: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Paths per UE including the LoS path.
    pub clusters_per_ue: usize,
    pub nlos_penalty_db: f64,
    /// When set, the UMi-LOS power at the UE is split between the LoS path
    /// (this share) and the NLoS clusters, and `nlos_penalty_db` is unused.
    pub los_share: Option<f64>,
    /// Box of the UE scatterers; the UE region when unset.
    pub scatter_corner: Option<[f64; 3]>,
    pub scatter_size: Option<[f64; 3]>,
    /// Sub-rays per NLoS cluster and their angular spread (std. dev., deg).
    pub rays_per_cluster: usize,
    pub angular_spread_deg: f64,
    /// Paths between RIS and receive antennas including LoS (at most 5).
    pub ris_paths: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            clusters_per_ue: 8,
            nlos_penalty_db: 10.0,
            los_share: Some(0.25),
            scatter_corner: Some([20.0, -80.0, -10.0]),
            scatter_size: Some([100.0, 100.0, 20.0]),
            rays_per_cluster: 10,
            angular_spread_deg: 10.0,
            ris_paths: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    /// Extent of the uncertainty box around the nominal target.
    pub region_size: [f64; 3],
    pub grid_points: usize,
    /// Azimuth grid size `N_A` of the sensing beams.
    pub n_a: usize,
    pub strategy: Strategy,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            region_size: [20.0, 20.0, 10.0],
            grid_points: 10,
            n_a: 3,
            strategy: Strategy::Sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rcs_db: Vec<f64>,
    /// RCS at which the optimizer runs; other sweep points are evaluated
    /// with the resulting precoder powers and phases.
    pub reference_rcs_db: f64,
    pub pilot_dbm: Vec<f64>,
    pub n_rf: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rcs_db: vec![-40.0, -30.0, -20.0, -10.0, 0.0],
            reference_rcs_db: -20.0,
            pilot_dbm: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            n_rf: vec![5, 10, 15, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// First seed; seed `i` of a sweep is `seed + i`.
    pub seed: u64,
    pub seeds: usize,
    pub n_mc: usize,
    pub draws: usize,
    pub max_iter: usize,
    pub tolerance_m: f64,
    /// Average figure metrics over seeds; otherwise one row per seed.
    pub averaged: bool,
    pub perfect_csi: bool,
    /// Record wall-clock time in the CSV (breaks byte-identical output).
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            seeds: 20,
            n_mc: 200,
            draws: 100,
            max_iter: 20,
            tolerance_m: 1e-3,
            averaged: true,
            perfect_csi: false,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub profile: Profile,
    pub users: usize,
    /// Per-UE SE target in b/s/Hz.
    pub se_target: f64,
    pub n_rf: usize,
    pub geometry: GeometryConfig,
    pub arrays: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub frame: FrameConfig,
    pub power: PowerConfig,
    pub channel: ChannelConfig,
    pub sensing: SensingConfig,
    pub sweeps: SweepConfig,
    pub run: RunConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            profile: Profile::Paper,
            users: 5,
            se_target: 0.8,
            n_rf: 20,
            geometry: GeometryConfig::default(),
            arrays: ArrayConfig::default(),
            ofdm: OfdmConfig::default(),
            frame: FrameConfig::default(),
            power: PowerConfig::default(),
            channel: ChannelConfig::default(),
            sensing: SensingConfig::default(),
            sweeps: SweepConfig::default(),
            run: RunConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = ScenarioConfig {
            profile,
            ..Default::default()
        };
        if profile == Profile::Desk {
            cfg.ofdm.subcarriers = 8;
            cfg.sensing.grid_points = 5;
            cfg.run.n_mc = 50;
            cfg.run.seeds = 5;
        }
        cfg
    }

    /// Noise variance in W: `-204 + 10 log10(B) + NF` dBW.
    pub fn noise_var(&self) -> f64 {
        db_to_linear(self.power.noise_psd_dbw_hz + 10.0 * self.ofdm.bandwidth_hz.log10() + self.power.noise_figure_db)
    }

    pub fn tx_power(&self) -> f64 {
        dbm_to_watt(self.power.tx_dbm)
    }

    pub fn pilot_power(&self) -> f64 {
        dbm_to_watt(self.power.pilot_dbm)
    }

    pub fn sensing_streams(&self, strategy: Strategy) -> usize {
        strategy.streams(self.sensing.n_a)
    }

    pub fn position(p: [f64; 3]) -> Position3 {
        Position3::new(p[0], p[1], p[2])
    }

    /// Seeds of a sweep, `seed .. seed + seeds`.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.run.seeds as u64).map(|i| self.run.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let counts = [
            ("users", self.users),
            ("n_rf", self.n_rf),
            ("arrays.rx", self.arrays.rx),
            ("ofdm.subcarriers", self.ofdm.subcarriers),
            ("frame.tau_c", self.frame.tau_c),
            ("frame.tau_p", self.frame.tau_p),
            ("frame.tau_s", self.frame.tau_s),
            ("channel.clusters_per_ue", self.channel.clusters_per_ue),
            ("channel.ris_paths", self.channel.ris_paths),
            ("channel.rays_per_cluster", self.channel.rays_per_cluster),
            ("sensing.grid_points", self.sensing.grid_points),
            ("sensing.n_a", self.sensing.n_a),
            ("run.seeds", self.run.seeds),
            ("run.n_mc", self.run.n_mc),
            ("run.draws", self.run.draws),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let odd = [
            ("arrays.tx_y", self.arrays.tx_y),
            ("arrays.tx_z", self.arrays.tx_z),
            ("arrays.ris_y", self.arrays.ris_y),
            ("arrays.ris_z", self.arrays.ris_z),
        ];
        for (name, v) in odd {
            if v % 2 == 0 {
                return bad(format!("{name} = {v} must be odd"));
            }
        }
        let f = &self.frame;
        if f.tau_p >= f.tau_c {
            return bad(format!("frame.tau_p = {} must be below tau_c = {}", f.tau_p, f.tau_c));
        }
        if f.tau_p + f.tau_s != f.tau_c {
            return bad(format!("tau_p + tau_s = {} differs from tau_c = {}", f.tau_p + f.tau_s, f.tau_c));
        }
        if f.tau_p < self.users {
            return bad(format!("tau_p = {} leaves {} UEs without an orthogonal pilot", f.tau_p, self.users));
        }
        let tx = self.arrays.tx_y * self.arrays.tx_z;
        for (name, n_rf) in std::iter::once(("n_rf", self.n_rf)).chain(self.sweeps.n_rf.iter().map(|&n| ("sweeps.n_rf", n))) {
            if n_rf == 0 || n_rf % self.users != 0 {
                return bad(format!("{name} = {n_rf} is not a positive multiple of users = {}", self.users));
            }
            if n_rf / self.users > tx {
                return bad(format!("{name} = {n_rf} needs more eigenvectors per UE than {tx} antennas"));
            }
        }
        let q = self.sensing_streams(self.sensing.strategy);
        if self.users + q > self.n_rf {
            return bad(format!(
                "users + sensing streams = {} exceed n_rf = {}",
                self.users + q,
                self.n_rf
            ));
        }
        if let Some(share) = self.channel.los_share {
            if !(0.0..=1.0).contains(&share) {
                return bad(format!("channel.los_share = {share} outside [0, 1]"));
            }
        }
        if !(self.channel.angular_spread_deg >= 0.0) {
            return bad(format!("channel.angular_spread_deg = {} is negative", self.channel.angular_spread_deg));
        }
        if self.channel.scatter_size.is_some_and(|s| s.iter().any(|&x| x < 0.0)) {
            return bad("channel.scatter_size has a negative extent".into());
        }
        if self.channel.ris_paths > 5 {
            return bad(format!("channel.ris_paths = {} exceeds 5", self.channel.ris_paths));
        }
        if self.arrays.rx_no_ris.iter().any(|&m| m == 0) {
            return bad("arrays.rx_no_ris entries must be positive".into());
        }
        let positive = [
            ("ofdm.carrier_hz", self.ofdm.carrier_hz),
            ("ofdm.bandwidth_hz", self.ofdm.bandwidth_hz),
            ("run.tolerance_m", self.run.tolerance_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        if !(self.se_target >= 0.0) {
            return bad("se_target must be nonnegative".into());
        }
        if self.sensing.region_size.iter().chain(&self.geometry.ue_size).any(|&s| !(s >= 0.0)) {
            return bad("region sizes must be nonnegative".into());
        }
        Ok(())
    }
}

/// Builds a validated configuration from a profile, an optional JSON file
/// and `key.path=value` overrides (values parse as JSON, else as strings).
pub fn load_config(path: Option<&Path>, profile: Profile, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let patch = parse_object(&text).map_err(|e| match (path, e) {
        (Some(p), Error::Config(m)) => Error::Config(format!("{}: {m}", p.display())),
        (_, e) => e,
    })?;
    build(profile, patch, overrides)
}

/// Parses a configuration from JSON text on top of `profile`.
pub fn parse_config(text: &str, profile: Profile) -> Result<ScenarioConfig> {
    build(profile, parse_object(text)?, &[])
}

fn parse_object(text: &str) -> Result<Value> {
    if text.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if v.is_object() {
        Ok(v)
    } else {
        Err(Error::Config("top level must be an object".into()))
    }
}

fn build(profile: Profile, patch: Value, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut value = serde_json::to_value(ScenarioConfig::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut value, patch);
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(value)
        .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn apply_override(value: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        slot = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("", Profile::Paper).unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.geometry.ris, [100.0, 13.0, 10.0]);
        assert_eq!(cfg.n_rf, 20);
        assert_eq!(cfg.ofdm.subcarriers, 32);
        assert_eq!(cfg.sensing.grid_points, 10);
        assert_eq!(parse_config("{}", Profile::Paper).unwrap(), cfg);
    }

    #[test]
    fn noise_and_powers() {
        let cfg = ScenarioConfig::default();
        let dbw = 10.0 * cfg.noise_var().log10();
        assert!((dbw - (-204.0 + 10.0 * 40e6f64.log10() + 4.0)).abs() < 1e-9);
        assert!((cfg.tx_power() - 10f64.powf(0.5)).abs() < 1e-12);
        assert!((cfg.pilot_power() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn desk_profile() {
        let cfg = ScenarioConfig::for_profile(Profile::Desk);
        assert_eq!(cfg.ofdm.subcarriers, 8);
        assert_eq!(cfg.sensing.grid_points, 5);
        assert_eq!(cfg.run.n_mc, 50);
        assert_eq!(cfg.run.seeds, 5);
        cfg.validate().unwrap();
        assert_eq!(cfg.seed_list(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn validation_errors() {
        let err = |text: &str| parse_config(text, Profile::Paper).unwrap_err().to_string();
        assert!(err(r#"{"frame": {"tau_p": 15}}"#).contains("tau_p"));
        assert!(err(r#"{"arrays": {"tx_y": 6}}"#).contains("odd"));
        assert!(err(r#"{"n_rf": 12}"#).contains("multiple"));
        assert!(err(r#"{"frame": {"tau_s": 9}}"#).contains("tau_c"));
        assert!(err(r#"{"n_rf": 10, "sensing": {"n_a": 3}}"#).contains("exceed"));
        assert!(err(r#"{"run": {"seeds": 0}}"#).contains("positive"));
    }

    #[test]
    fn unknown_keys_report_paths() {
        let e = parse_config(r#"{"arrays": {"tx_q": 3}}"#, Profile::Paper).unwrap_err().to_string();
        assert!(e.contains("arrays"), "{e}");
        assert!(e.contains("tx_q"), "{e}");
        let e = parse_config(r#"{"ofdm": {"subcarriers": "many"}}"#, Profile::Paper).unwrap_err().to_string();
        assert!(e.contains("ofdm.subcarriers"), "{e}");
    }

    #[test]
    fn file_and_overrides_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"run": {"n_mc": 7}, "users": 5}"#).unwrap();
        let cfg = load_config(
            Some(&path),
            Profile::Desk,
            &["run.seeds=2".into(), "sensing.strategy=se".into(), "sweeps.rcs_db=[-20]".into()],
        )
        .unwrap();
        assert_eq!(cfg.run.n_mc, 7);
        assert_eq!(cfg.run.seeds, 2);
        assert_eq!(cfg.ofdm.subcarriers, 8);
        assert_eq!(cfg.sensing.strategy, Strategy::Se);
        assert_eq!(cfg.sweeps.rcs_db, vec![-20.0]);
        std::fs::write(&path, "").unwrap();
        assert_eq!(load_config(Some(&path), Profile::Paper, &[]).unwrap(), ScenarioConfig::default());
        assert!(load_config(None, Profile::Paper, &["nope".into()]).is_err());
        assert!(load_config(None, Profile::Paper, &["users.x=1".into()]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ScenarioConfig::for_profile(Profile::Desk);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(parse_config(&text, Profile::Paper).unwrap(), cfg);
    }
}
