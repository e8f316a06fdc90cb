//! Run configuration: a flat key = value file with command-line overrides.
//!
//! Keys (defaults in parentheses): `mode` (required, `ppg` or `public`),
//! `data` (required path), `out` (required path), `seed` (required, no
//! wall-clock fallback), `n_folds` (5), `noise_ratio` (0.3), `noise_mode`
//! (`flip` or `shuffle`, flip), `dm`/`t`/`h1`/`h2`/`filters` (derived from
//! the data), `lr` (0.001), `max_epochs` (100), `repetitions` (1), `jobs`
//! (1), `disable_self_supervised` (false), `self_supervised_un_only`
//! (false), `skip_cl` (false), `dbn_sigmoid` (false). Lines starting with
//! `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::pipeline::{NoiseMode, SelfSupervision};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Ppg,
    Public,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Ppg => write!(f, "ppg"),
            RunMode::Public => write!(f, "public"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: RunMode,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub n_folds: usize,
    pub noise_ratio: f64,
    pub noise_mode: NoiseMode,
    pub dm: Option<usize>,
    pub t: Option<usize>,
    pub h1: Option<usize>,
    pub h2: Option<usize>,
    pub filters: Option<usize>,
    pub lr: f64,
    pub max_epochs: usize,
    pub repetitions: usize,
    pub jobs: usize,
    pub disable_self_supervised: bool,
    pub self_supervised_un_only: bool,
    pub skip_cl: bool,
    pub dbn_sigmoid: bool,
}

/// Raw key-value view of a config file (used before overrides land).
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_field<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    problems: &mut Vec<String>,
) -> Option<T> {
    map.get(key).and_then(|raw| match raw.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            problems.push(format!("{key}: cannot parse {raw:?}"));
            None
        }
    })
}

fn parse_bool(
    map: &BTreeMap<String, String>,
    key: &str,
    problems: &mut Vec<String>,
) -> Option<bool> {
    map.get(key).and_then(|raw| match raw.as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        other => {
            problems.push(format!("{key}: expected a boolean, got {other:?}"));
            None
        }
    })
}

impl RunConfig {
    /// Builds a config from parsed key-values, collecting every problem
    /// instead of stopping at the first.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut problems: Vec<String> = Vec::new();
        const KNOWN: &[&str] = &[
            "mode",
            "data",
            "out",
            "seed",
            "n_folds",
            "noise_ratio",
            "noise_mode",
            "dm",
            "t",
            "h1",
            "h2",
            "filters",
            "lr",
            "max_epochs",
            "repetitions",
            "jobs",
            "disable_self_supervised",
            "self_supervised_un_only",
            "skip_cl",
            "dbn_sigmoid",
        ];
        for key in map.keys() {
            if !KNOWN.contains(&key.as_str()) {
                problems.push(format!("unknown key {key:?}"));
            }
        }
        let mode = match map.get("mode").map(String::as_str) {
            Some("ppg") => Some(RunMode::Ppg),
            Some("public") => Some(RunMode::Public),
            Some(other) => {
                problems.push(format!("mode: expected ppg or public, got {other:?}"));
                None
            }
            None => {
                problems.push("mode: missing".into());
                None
            }
        };
        let data = map.get("data").map(PathBuf::from);
        if data.is_none() {
            problems.push("data: missing".into());
        }
        let out = map.get("out").map(PathBuf::from);
        if out.is_none() {
            problems.push("out: missing".into());
        }
        let seed: Option<u64> = parse_field(map, "seed", &mut problems);
        if seed.is_none() && !map.contains_key("seed") {
            problems.push("seed: missing (runs require an explicit seed)".into());
        }
        let noise_mode = match map.get("noise_mode").map(String::as_str) {
            None => NoiseMode::Flip,
            Some("flip") => NoiseMode::Flip,
            Some("shuffle") => NoiseMode::Shuffle,
            Some(other) => {
                problems.push(format!(
                    "noise_mode: expected flip or shuffle, got {other:?}"
                ));
                NoiseMode::Flip
            }
        };
        let config = Self {
            mode: mode.unwrap_or(RunMode::Ppg),
            data: data.unwrap_or_default(),
            out: out.unwrap_or_default(),
            seed: seed.unwrap_or(0),
            n_folds: parse_field(map, "n_folds", &mut problems).unwrap_or(5),
            noise_ratio: parse_field(map, "noise_ratio", &mut problems).unwrap_or(0.3),
            noise_mode,
            dm: parse_field(map, "dm", &mut problems),
            t: parse_field(map, "t", &mut problems),
            h1: parse_field(map, "h1", &mut problems),
            h2: parse_field(map, "h2", &mut problems),
            filters: parse_field(map, "filters", &mut problems),
            lr: parse_field(map, "lr", &mut problems).unwrap_or(0.001),
            max_epochs: parse_field(map, "max_epochs", &mut problems).unwrap_or(100),
            repetitions: parse_field(map, "repetitions", &mut problems).unwrap_or(1),
            jobs: parse_field(map, "jobs", &mut problems).unwrap_or(1),
            disable_self_supervised: parse_bool(map, "disable_self_supervised", &mut problems)
                .unwrap_or(false),
            self_supervised_un_only: parse_bool(map, "self_supervised_un_only", &mut problems)
                .unwrap_or(false),
            skip_cl: parse_bool(map, "skip_cl", &mut problems).unwrap_or(false),
            dbn_sigmoid: parse_bool(map, "dbn_sigmoid", &mut problems).unwrap_or(false),
        };
        config.collect_problems(&mut problems);
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn collect_problems(&self, problems: &mut Vec<String>) {
        if !self.data.as_os_str().is_empty() && !self.data.exists() {
            problems.push(format!("data: path {:?} does not exist", self.data));
        }
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            problems.push(format!("noise_ratio: {} outside [0, 1]", self.noise_ratio));
        }
        if self.n_folds == 0 {
            problems.push("n_folds: must be >= 1".into());
        }
        if self.repetitions == 0 {
            problems.push("repetitions: must be >= 1".into());
        }
        if self.jobs == 0 {
            problems.push("jobs: must be >= 1".into());
        }
        if self.lr <= 0.0 {
            problems.push(format!("lr: {} must be positive", self.lr));
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs: must be >= 1".into());
        }
        if self.disable_self_supervised && self.self_supervised_un_only {
            problems.push(
                "disable_self_supervised and self_supervised_un_only are mutually exclusive".into(),
            );
        }
    }

    pub fn self_supervision(&self) -> SelfSupervision {
        if self.disable_self_supervised {
            SelfSupervision::Disabled
        } else if self.self_supervised_un_only {
            SelfSupervision::UnOnly
        } else {
            SelfSupervision::Full
        }
    }

    /// Human-readable name of the self-supervision condition.
    pub fn condition_name(&self) -> &'static str {
        match self.self_supervision() {
            SelfSupervision::Full => "With Entire Training Set",
            SelfSupervision::UnOnly => "With UN Samples",
            SelfSupervision::Disabled => "Without the Phase",
        }
    }

    /// Echo of every effective value, written into the run manifest.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "data = {}", self.data.display());
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n_folds = {}", self.n_folds);
        let _ = writeln!(s, "noise_ratio = {}", self.noise_ratio);
        let _ = writeln!(
            s,
            "noise_mode = {}",
            match self.noise_mode {
                NoiseMode::Flip => "flip",
                NoiseMode::Shuffle => "shuffle",
            }
        );
        for (key, v) in [
            ("dm", self.dm),
            ("t", self.t),
            ("h1", self.h1),
            ("h2", self.h2),
            ("filters", self.filters),
        ] {
            match v {
                Some(v) => {
                    let _ = writeln!(s, "{key} = {v}");
                }
                None => {
                    let _ = writeln!(s, "{key} = auto");
                }
            }
        }
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "repetitions = {}", self.repetitions);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        let _ = writeln!(
            s,
            "disable_self_supervised = {}",
            self.disable_self_supervised
        );
        let _ = writeln!(
            s,
            "self_supervised_un_only = {}",
            self.self_supervised_un_only
        );
        let _ = writeln!(s, "skip_cl = {}", self.skip_cl);
        let _ = writeln!(s, "dbn_sigmoid = {}", self.dbn_sigmoid);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_map(dir: &std::path::Path) -> BTreeMap<String, String> {
        let data = dir.join("data.txt");
        std::fs::write(&data, "0;1,2;3,4\n1;5,6;7,8\n").unwrap();
        let mut m = BTreeMap::new();
        m.insert("mode".into(), "public".into());
        m.insert("data".into(), data.display().to_string());
        m.insert("out".into(), dir.join("out").display().to_string());
        m.insert("seed".into(), "7".into());
        m
    }

    #[test]
    fn minimal_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_map(&base_map(dir.path())).unwrap();
        assert_eq!(cfg.mode, RunMode::Public);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_folds, 5);
        assert!((cfg.noise_ratio - 0.3).abs() < 1e-12);
    }

    #[test]
    fn all_problems_reported_at_once() {
        let mut m = BTreeMap::new();
        m.insert("mode".into(), "bogus".into());
        m.insert("n_folds".into(), "0".into());
        m.insert("noise_ratio".into(), "1.5".into());
        let err = RunConfig::from_map(&m).unwrap_err().to_string();
        for needle in ["mode", "n_folds", "noise_ratio", "seed", "data", "out"] {
            assert!(err.contains(needle), "missing {needle} in: {err}");
        }
    }

    #[test]
    fn seed_is_mandatory() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = base_map(dir.path());
        m.remove("seed");
        let err = RunConfig::from_map(&m).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn ablation_flags_map_to_conditions() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = base_map(dir.path());
        m.insert("disable_self_supervised".into(), "true".into());
        let cfg = RunConfig::from_map(&m).unwrap();
        assert_eq!(cfg.self_supervision(), SelfSupervision::Disabled);
        assert_eq!(cfg.condition_name(), "Without the Phase");
    }

    #[test]
    fn conflicting_ablations_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = base_map(dir.path());
        m.insert("disable_self_supervised".into(), "true".into());
        m.insert("self_supervised_un_only".into(), "true".into());
        assert!(RunConfig::from_map(&m).is_err());
    }

    #[test]
    fn key_value_parsing() {
        let map = parse_key_values("# comment\nmode = ppg\n\nseed=3\n").unwrap();
        assert_eq!(map["mode"], "ppg");
        assert_eq!(map["seed"], "3");
        assert!(parse_key_values("just words\n").is_err());
    }

    #[test]
    fn echo_contains_every_key() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_map(&base_map(dir.path())).unwrap();
        let echo = cfg.echo();
        for key in ["mode", "seed", "n_folds", "noise_ratio", "skip_cl", "jobs"] {
            assert!(echo.contains(key));
        }
    }
}
