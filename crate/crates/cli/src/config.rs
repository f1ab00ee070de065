//! Flat `key = value` experiment configuration: one pair per line, `#`
//! comments, no nesting. Unknown and duplicate keys are rejected with the
//! offending line number, and `serialize` renders a normal form such that
//! `serialize(parse(x))` is a fixed point.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Typed experiment configuration; every field is optional and defaults are
/// filled per experiment kind by the caller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub k_modes: Option<usize>,
    pub tolerance: Option<f64>,
    pub case: Option<String>,
    pub ladder: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub dump_path: Option<PathBuf>,
    pub workers: Option<usize>,
    pub verbosity: Option<u8>,
}

/// Keys in normal-form order.
const KEYS: [&str; 12] = [
    "n_paths", "seed", "dt", "t_final", "k_modes", "tolerance", "case", "ladder", "out",
    "dump_path", "workers", "verbosity",
];

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError {
        line,
        message: format!("expected {what}, got `{value}`: {e}"),
    })
}

fn parse_positive_f64(value: &str, line: usize, key: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse_num(value, line, "a positive real")?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(ConfigError { line, message: format!("{key} must be positive, got `{value}`") });
    }
    Ok(x)
}

/// Parses a configuration text. Errors carry the 1-based line number.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let mut cfg = Config::default();
    let mut seen: Vec<&str> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let canonical = KEYS.iter().find(|k| **k == key).ok_or(ConfigError {
            line,
            message: format!("unknown key `{key}`"),
        })?;
        if seen.contains(canonical) {
            return Err(ConfigError { line, message: format!("duplicate key `{key}`") });
        }
        seen.push(canonical);
        if value.is_empty() {
            return Err(ConfigError { line, message: format!("empty value for `{key}`") });
        }
        match key {
            "n_paths" => cfg.n_paths = Some(parse_num(value, line, "a nonnegative integer")?),
            "seed" => cfg.seed = Some(parse_num(value, line, "an unsigned 64-bit integer")?),
            "dt" => cfg.dt = Some(parse_positive_f64(value, line, "dt")?),
            "t_final" => cfg.t_final = Some(parse_positive_f64(value, line, "t_final")?),
            "k_modes" => cfg.k_modes = Some(parse_num(value, line, "a positive integer")?),
            "tolerance" => cfg.tolerance = Some(parse_positive_f64(value, line, "tolerance")?),
            "case" => cfg.case = Some(value.to_string()),
            "ladder" => {
                let rungs: Result<Vec<f64>, ConfigError> = value
                    .split(',')
                    .map(|v| parse_positive_f64(v.trim(), line, "ladder rung"))
                    .collect();
                cfg.ladder = Some(rungs?);
            }
            "out" => cfg.out = Some(PathBuf::from(value)),
            "dump_path" => cfg.dump_path = Some(PathBuf::from(value)),
            "workers" => {
                let w: usize = parse_num(value, line, "a positive integer")?;
                if w == 0 {
                    return Err(ConfigError { line, message: "workers must be at least 1".into() });
                }
                cfg.workers = Some(w);
            }
            "verbosity" => cfg.verbosity = Some(parse_num(value, line, "a small integer")?),
            _ => unreachable!("key membership checked above"),
        }
    }
    Ok(cfg)
}

/// Normal form: keys in declaration order, one per line, shortest
/// round-trip float formatting.
pub fn serialize(cfg: &Config) -> String {
    let mut out = String::new();
    let mut push = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    if let Some(v) = cfg.n_paths {
        push("n_paths", v.to_string());
    }
    if let Some(v) = cfg.seed {
        push("seed", v.to_string());
    }
    if let Some(v) = cfg.dt {
        push("dt", format!("{v}"));
    }
    if let Some(v) = cfg.t_final {
        push("t_final", format!("{v}"));
    }
    if let Some(v) = cfg.k_modes {
        push("k_modes", v.to_string());
    }
    if let Some(v) = cfg.tolerance {
        push("tolerance", format!("{v}"));
    }
    if let Some(v) = &cfg.case {
        push("case", v.clone());
    }
    if let Some(v) = &cfg.ladder {
        push("ladder", v.iter().map(|r| format!("{r}")).collect::<Vec<_>>().join(","));
    }
    if let Some(v) = &cfg.out {
        push("out", v.display().to_string());
    }
    if let Some(v) = &cfg.dump_path {
        push("dump_path", v.display().to_string());
    }
    if let Some(v) = cfg.workers {
        push("workers", v.to_string());
    }
    if let Some(v) = cfg.verbosity {
        push("verbosity", v.to_string());
    }
    out
}

impl Config {
    /// Overlays `other` on `self`: fields set in `other` win.
    pub fn overridden_by(mut self, other: &Config) -> Config {
        macro_rules! take {
            ($field:ident) => {
                if other.$field.is_some() {
                    self.$field = other.$field.clone();
                }
            };
        }
        take!(n_paths);
        take!(seed);
        take!(dt);
        take!(t_final);
        take!(k_modes);
        take!(tolerance);
        take!(case);
        take!(ladder);
        take!(out);
        take!(dump_path);
        take!(workers);
        take!(verbosity);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_all_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, Config::default());
        let cfg = parse_config("# just a comment\n\n").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn full_record_parses_and_round_trips() {
        let text = "\
# isometry fixture
n_paths = 100000
seed = 42
dt = 0.001
t_final = 1.0
k_modes = 2
tolerance = 0.05
case = brownian
ladder = 0.01, 0.005, 0.0025
workers = 4
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.n_paths, Some(100_000));
        assert_eq!(cfg.seed, Some(42));
        assert_eq!(cfg.dt, Some(0.001));
        assert_eq!(cfg.case.as_deref(), Some("brownian"));
        assert_eq!(cfg.ladder, Some(vec![0.01, 0.005, 0.0025]));
        // serialize ∘ parse is a fixed point: the oracle is the serializer.
        let normal = serialize(&cfg);
        assert_eq!(serialize(&parse_config(&normal).unwrap()), normal);
    }

    #[test]
    fn negative_path_count_cites_the_line() {
        let err = parse_config("seed = 1\nn_paths = -5\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("-5"), "{}", err.message);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let err = parse_config("paths = 7\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.message.contains("unknown key"));
        let err = parse_config("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("duplicate"));
    }

    #[test]
    fn type_mismatches_rejected() {
        assert!(parse_config("dt = fast\n").is_err());
        assert!(parse_config("dt = -0.5\n").is_err());
        assert!(parse_config("workers = 0\n").is_err());
        assert!(parse_config("n_paths\n").is_err());
    }

    #[test]
    fn overlay_prefers_the_override() {
        let base = parse_config("seed = 1\ndt = 0.01\n").unwrap();
        let over = parse_config("seed = 9\n").unwrap();
        let merged = base.overridden_by(&over);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.dt, Some(0.01));
    }
}
