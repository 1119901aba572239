//! Run configuration: a sectioned `key = value` text file.
//!
//! See `config/SCHEMA.md` for the full key reference.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cpon_core::harness::{Architecture, FilterChoice, SeedSet, StudyConfig, DEFAULT_GRID_GHZ};
use cpon_core::plant::MeasuredProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        ConfigError { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub architectures: Vec<Architecture>,
    pub filters: Vec<FilterChoice>,
    pub f_acc_ghz: Vec<f64>,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub plots: bool,
    pub debug_dumps: bool,
    pub calibration_cache: Option<PathBuf>,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architectures: Architecture::ALL.to_vec(),
            filters: FilterChoice::STANDARD.to_vec(),
            f_acc_ghz: DEFAULT_GRID_GHZ.to_vec(),
            workers: 1,
            output_dir: PathBuf::from("results"),
            plots: false,
            debug_dumps: false,
            calibration_cache: Some(PathBuf::from("results/calibration.txt")),
            study: StudyConfig::default(),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["seed_set", "workers", "output_dir", "plots", "debug_dumps", "calibration_cache"]),
    ("sweep", &["architectures", "filters", "f_acc_ghz", "bracket_db", "stop_width_db"]),
    ("filters", &["smooth_order", "sharp_order"]),
    ("dsp", &["symbols", "preamble", "pilot_period", "eq_taps", "training", "min_bits"]),
    ("receiver", &["clip_factor", "adc_bits", "sensitivity_dbm", "linewidth_mhz"]),
];

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn number<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::at(line, format!("{key}: cannot parse {v:?}")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::at(line, format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn filter(line: usize, name: &str, base: &Path) -> Result<FilterChoice, ConfigError> {
    match name.strip_prefix("measured:") {
        Some(path) if !path.is_empty() => {
            let profile = MeasuredProfile::load(base.join(path))
                .map_err(|e| ConfigError::at(line, format!("filter {name}: {e}")))?;
            Ok(FilterChoice::Measured { label: path.to_string(), profile: Arc::new(profile) })
        }
        _ => FilterChoice::parse(name).map_err(|e| ConfigError::at(line, e.to_string())),
    }
}

/// Parses config text. Relative paths (output, cache, measured profiles)
/// resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    cfg.output_dir = base.join(&cfg.output_dir);
    cfg.calibration_cache = cfg.calibration_cache.map(|p| base.join(p));
    let mut section: Option<&str> = None;
    let mut seen = HashSet::new();
    let mut training: Option<Option<usize>> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find(" #") {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if content.is_empty() || content.starts_with('#') || content.starts_with(';') {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            section = Some(
                KEYS.iter()
                    .find(|(s, _)| *s == name)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| ConfigError::at(line, format!("unknown section [{name}]")))?,
            );
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ConfigError::at(line, format!("expected key = value, got {content:?}")))?;
        let sec = section.ok_or_else(|| ConfigError::at(line, format!("key {key:?} outside any section")))?;
        let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(ConfigError::at(line, format!("unknown key {key:?} in [{sec}]")));
        }
        if !seen.insert((sec, key)) {
            return Err(ConfigError::at(line, format!("duplicate key {key:?} in [{sec}]")));
        }
        let s = &mut cfg.study;
        match (sec, key) {
            ("run", "seed_set") => s.seeds = SeedSet::new(number(line, key, value)?),
            ("run", "workers") => cfg.workers = number(line, key, value)?,
            ("run", "output_dir") => cfg.output_dir = base.join(value),
            ("run", "plots") => cfg.plots = boolean(line, key, value)?,
            ("run", "debug_dumps") => cfg.debug_dumps = boolean(line, key, value)?,
            ("run", "calibration_cache") => {
                cfg.calibration_cache = if value == "none" { None } else { Some(base.join(value)) }
            }
            ("sweep", "architectures") => {
                cfg.architectures = list(value)
                    .map(|a| a.parse().map_err(|e: cpon_core::Error| ConfigError::at(line, e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            ("sweep", "filters") => cfg.filters = list(value).map(|f| filter(line, f, base)).collect::<Result<_, _>>()?,
            ("sweep", "f_acc_ghz") => {
                let v = value.strip_suffix("GHz").unwrap_or(value);
                cfg.f_acc_ghz = list(v).map(|x| number(line, key, x)).collect::<Result<_, _>>()?
            }
            ("sweep", "bracket_db") => {
                let b: Vec<f64> = list(value).map(|x| number(line, key, x)).collect::<Result<_, _>>()?;
                match b[..] {
                    [lo, hi] => s.bracket = (lo, hi),
                    _ => return Err(ConfigError::at(line, "bracket_db needs two values: low, high")),
                }
            }
            ("sweep", "stop_width_db") => s.stop_width_db = number(line, key, value)?,
            ("filters", "smooth_order") => s.orders.smooth = number(line, key, value)?,
            ("filters", "sharp_order") => s.orders.sharp = number(line, key, value)?,
            ("dsp", "symbols") => s.symbols = number(line, key, value)?,
            ("dsp", "preamble") => s.preamble_len = number(line, key, value)?,
            ("dsp", "pilot_period") => s.pilot_period = number(line, key, value)?,
            ("dsp", "eq_taps") => s.eq_taps = number(line, key, value)?,
            ("dsp", "training") => training = Some(if value == "preamble" { None } else { Some(number(line, key, value)?) }),
            ("dsp", "min_bits") => s.min_bits = number(line, key, value)?,
            ("receiver", "clip_factor") => s.agc_clip_factor = number(line, key, value)?,
            ("receiver", "adc_bits") => s.adc_bits = if value == "none" { None } else { Some(number(line, key, value)?) },
            ("receiver", "sensitivity_dbm") => s.sensitivity_dbm = number(line, key, value)?,
            ("receiver", "linewidth_mhz") => s.linewidth = number::<f64>(line, key, value)? * 1e6,
            _ => unreachable!("key table and match arms disagree"),
        }
    }
    if let Some(t) = training {
        cfg.study.eq_training_len = t;
    }
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    if cfg.architectures.is_empty() || cfg.filters.is_empty() || cfg.f_acc_ghz.is_empty() {
        return Err(ConfigError::general("at least one architecture, filter and f_acc value is required"));
    }
    if cfg.f_acc_ghz.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) || cfg.f_acc_ghz.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ConfigError::general("f_acc_ghz must be non-negative and strictly ascending"));
    }
    if cfg.workers == 0 {
        return Err(ConfigError::general("workers must be at least 1"));
    }
    cfg.study.validate().map_err(|e| ConfigError::general(e.to_string()))
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpon_core::harness::FilterOrders;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new("/tmp/base"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("[sweep]\narchitectures = dual-channel\n").unwrap();
        assert_eq!(c.architectures, vec![Architecture::DualChannel]);
        assert_eq!(c.filters.len(), 3);
        assert_eq!(c.f_acc_ghz, DEFAULT_GRID_GHZ.to_vec());
        assert_eq!(c.study, StudyConfig::default());
        assert_eq!(c.output_dir, Path::new("/tmp/base/results"));
    }

    #[test]
    fn misspelled_key_names_key_and_line() {
        let e = parse("[sweep]\n# comment\nfilterr = flat\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("filterr"), "{e}");
    }

    #[test]
    fn grid_with_unit() {
        let c = parse("[sweep]\nf_acc_ghz = 0,2,4,6,8,10,12,15 GHz\n").unwrap();
        assert_eq!(c.f_acc_ghz.len(), 8);
        assert_eq!(c.f_acc_ghz[7], 15.0);
    }

    #[test]
    fn bad_values() {
        assert_eq!(parse("[sweep]\narchitectures = triple\n").unwrap_err().line, Some(2));
        assert_eq!(parse("[sweep]\nfilters = boxcar\n").unwrap_err().line, Some(2));
        assert_eq!(parse("[receiver]\nclip_factor = x\n").unwrap_err().line, Some(2));
        assert_eq!(parse("[bogus]\n").unwrap_err().line, Some(1));
        assert_eq!(parse("seed_set = 3\n").unwrap_err().line, Some(1));
        assert_eq!(parse("[run]\nworkers = 1\nworkers = 2\n").unwrap_err().line, Some(3));
        assert!(parse("[sweep]\nf_acc_ghz = 4, 2\n").is_err());
        assert!(parse("[dsp]\neq_taps = 16\n").is_err());
        assert!(parse("[run]\nworkers = 0\n").is_err());
        assert!(parse("[sweep]\nfilters = measured:/nonexistent/profile.txt\n").is_err());
    }

    #[test]
    fn all_sections() {
        let c = parse(
            "[run]\nseed_set = 9\nworkers = 3\nplots = yes\ncalibration_cache = none\n\
             [sweep]\nfilters = sharp80, flat\nbracket_db = 25, 40\nstop_width_db = 0.1\n\
             [filters]\nsharp_order = 4.5\n\
             [dsp]\neq_taps = 23\npreamble = 15000\ntraining = 12000\n\
             [receiver]\nadc_bits = none\nclip_factor = 3 # inline\nlinewidth_mhz = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.study.seeds.id, 9);
        assert_eq!((c.workers, c.plots, c.calibration_cache.clone()), (3, true, None));
        assert_eq!(c.filters, vec![FilterChoice::Sharp80, FilterChoice::Flat]);
        assert_eq!(c.study.bracket, (25.0, 40.0));
        assert_eq!(c.study.orders, FilterOrders { smooth: 2.0, sharp: 4.5 });
        assert_eq!((c.study.eq_taps, c.study.preamble_len, c.study.eq_training_len), (23, 15000, Some(12000)));
        assert_eq!((c.study.adc_bits, c.study.agc_clip_factor, c.study.linewidth), (None, 3.0, 0.5e6));
    }

    #[test]
    fn measured_profile_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p.txt"), "-50 -40\n0 -3.5\n50 -40\n").unwrap();
        let c = parse_config_str("[sweep]\nfilters = measured:p.txt\n", dir.path()).unwrap();
        assert_eq!(c.filters[0].name(), "measured:p.txt");
    }
}
