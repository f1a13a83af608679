//! Run configuration: flat `key = value` text with `[section]` headers, or
//! JSON with the same sections as objects.
//!
//! ```text
//! # comment
//! [run]
//! case = square-bubble
//! out = results/square
//! snapshot_every = 10
//! seed = 7
//! jobs = 2
//!
//! [time]
//! tau = 0.01
//! T = 1
//! steps = 100          # overrides T as steps * tau
//!
//! [mesh]
//! h = 1/64             # or nx = 64 and ny = 64
//!
//! [physics]
//! lambda = 0.1
//! eps = 0.01
//! mobility = 0.1
//! eta = 1, 1           # one value sets both fluids
//! sigma = 1, 1
//! b = 1
//! gravity = 0, 10
//! coupling_index = n   # or n+1
//! ```
//!
//! Keys before the first header are looked up by name in every section.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chimhd_core::experiments::case_by_name;
use chimhd_core::{CouplingIndex, Equation, MagneticField, ProblemCase};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}` expects {expected}, got `{value}`")]
    Value { key: String, value: String, expected: &'static str },
    #[error("invalid JSON config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Everything a command needs, with `None` meaning "case default".
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: String,
    pub out: PathBuf,
    pub snapshot_every: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub tau: Option<f64>,
    pub t_final: Option<f64>,
    pub steps: Option<usize>,
    pub h: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub lambda: Option<f64>,
    pub eps: Option<f64>,
    pub mobility: Option<f64>,
    pub eta: Option<(f64, f64)>,
    pub sigma: Option<(f64, f64)>,
    pub b: Option<f64>,
    pub gravity: Option<[f64; 2]>,
    pub coupling: Option<CouplingIndex>,
    pub corrupt: Option<Equation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: "square-bubble".into(),
            out: PathBuf::from("chimhd-out"),
            snapshot_every: None,
            seed: 0,
            jobs: 1,
            tau: None,
            t_final: None,
            steps: None,
            h: None,
            nx: None,
            ny: None,
            lambda: None,
            eps: None,
            mobility: None,
            eta: None,
            sigma: None,
            b: None,
            gravity: None,
            coupling: None,
            corrupt: None,
        }
    }
}

const KEYS: &[(&str, &str)] = &[
    ("run", "case"),
    ("run", "out"),
    ("run", "snapshot_every"),
    ("run", "seed"),
    ("run", "jobs"),
    ("time", "tau"),
    ("time", "T"),
    ("time", "steps"),
    ("mesh", "h"),
    ("mesh", "nx"),
    ("mesh", "ny"),
    ("physics", "lambda"),
    ("physics", "eps"),
    ("physics", "mobility"),
    ("physics", "eta"),
    ("physics", "sigma"),
    ("physics", "b"),
    ("physics", "gravity"),
    ("physics", "coupling_index"),
];

/// Accepts decimals and fractions such as `1/64`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn reals(key: &str, value: &str, n: usize) -> Result<Vec<f64>, ConfigError> {
    let bad = || ConfigError::Value { key: key.into(), value: value.into(), expected: "comma-separated numbers" };
    let v: Vec<f64> = value.split(',').map(parse_real).collect::<Result<_, _>>().map_err(|_| bad())?;
    match v.len() {
        1 if n == 2 => Ok(vec![v[0], v[0]]),
        k if k == n => Ok(v),
        _ => Err(bad()),
    }
}

impl RunConfig {
    /// Sets one key. `section` may be empty for a bare key.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let known = KEYS.iter().any(|&(s, k)| k == key && (section.is_empty() || s == section));
        if !known {
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            return Err(ConfigError::UnknownKey(full));
        }
        let value = value.trim();
        let real = || {
            parse_real(value).map_err(|_| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                expected: "a number",
            })
        };
        let count = || {
            value.parse::<usize>().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                expected: "a non-negative integer",
            })
        };
        match key {
            "case" => self.case = value.into(),
            "out" => self.out = value.into(),
            "snapshot_every" => self.snapshot_every = Some(count()?),
            "seed" => {
                self.seed = value.parse().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                    expected: "an unsigned integer",
                })?
            }
            "jobs" => self.jobs = count()?,
            "tau" => self.tau = Some(real()?),
            "T" => self.t_final = Some(real()?),
            "steps" => self.steps = Some(count()?),
            "h" => self.h = Some(real()?),
            "nx" => self.nx = Some(count()?),
            "ny" => self.ny = Some(count()?),
            "lambda" => self.lambda = Some(real()?),
            "eps" => self.eps = Some(real()?),
            "mobility" => self.mobility = Some(real()?),
            "b" => self.b = Some(real()?),
            "eta" | "sigma" => {
                let v = reals(key, value, 2)?;
                let pair = Some((v[0], v[1]));
                if key == "eta" {
                    self.eta = pair;
                } else {
                    self.sigma = pair;
                }
            }
            "gravity" => {
                let v = reals(key, value, 2)?;
                self.gravity = Some([v[0], v[1]]);
            }
            "coupling_index" => {
                self.coupling = Some(value.parse().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                    expected: "`n` or `n+1`",
                })?)
            }
            _ => unreachable!("key table and match disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: "unterminated section header".into() })?;
                let name = name.trim();
                if !KEYS.iter().any(|&(s, _)| s == name) {
                    return Err(ConfigError::Syntax { line: i + 1, msg: format!("unknown section `{name}`") });
                }
                section = name.into();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(&section, k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_json(&mut self, text: &str) -> Result<(), ConfigError> {
        let root: serde_json::Value = serde_json::from_str(text)?;
        let obj = root.as_object().ok_or_else(|| ConfigError::Invalid("JSON config must be an object".into()))?;
        for (k, v) in obj {
            match v {
                serde_json::Value::Object(inner) => {
                    for (ik, iv) in inner {
                        self.set(k, ik, &json_scalar(ik, iv)?)?;
                    }
                }
                other => self.set("", k, &json_scalar(k, other)?)?,
            }
        }
        Ok(())
    }

    /// Reads a config file; `.json` files use the JSON front end.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            self.apply_json(&text)
        } else {
            self.apply_text(&text)
        }
    }

    /// The base case with every override applied.
    pub fn problem_case(&self) -> Result<ProblemCase, ConfigError> {
        let mut case = case_by_name(&self.case).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if let Some(h) = self.h {
            case = case.with_h(h).map_err(|e| invalid(&e))?;
        }
        match (self.nx, self.ny) {
            (Some(nx), Some(ny)) if nx > 0 && ny > 0 => case.subdivisions = (nx, ny),
            (None, None) => {}
            _ => return Err(ConfigError::Invalid("nx and ny must be given together and be positive".into())),
        }
        let p = &mut case.params;
        if let Some(v) = self.lambda {
            p.lambda = v;
        }
        if let Some(v) = self.eps {
            p.eps = v;
        }
        if let Some(v) = self.mobility {
            p.mobility = v;
        }
        if let Some(v) = self.eta {
            p.eta = v;
        }
        if let Some(v) = self.sigma {
            p.sigma = v;
        }
        if let Some(v) = self.b {
            p.b = MagneticField::Constant(v);
        }
        if let Some(g) = self.gravity {
            p.gravity = Some(g);
        }
        if let Some(c) = self.coupling {
            p.coupling = c;
        }
        let tau = self.tau.unwrap_or(p.tau);
        let t_final = match self.steps {
            Some(n) => n as f64 * tau,
            None => self.t_final.unwrap_or(p.t_final),
        };
        if self.tau.is_some() || self.t_final.is_some() || self.steps.is_some() {
            case = case.with_time(tau, t_final).map_err(|e| invalid(&e))?;
        }
        case.params.validate().map_err(|e| invalid(&e))?;
        if let Some(eq) = self.corrupt {
            if !eq.has_source() {
                return Err(ConfigError::Invalid(format!("the {eq} equation has no source term to corrupt")));
            }
            if case.exact.is_none() {
                return Err(ConfigError::Invalid(format!("{} has no forcing to corrupt", case.name)));
            }
            case.corrupt = self.corrupt;
        }
        Ok(case)
    }

    /// The resolved configuration in the text format, for run records.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pair = |v: (f64, f64)| format!("{}, {}", v.0, v.1);
        let _ = writeln!(s, "[run]\ncase = {}\nout = {}", self.case, self.out.display());
        if let Some(k) = self.snapshot_every {
            let _ = writeln!(s, "snapshot_every = {k}");
        }
        let _ = writeln!(s, "seed = {}\njobs = {}", self.seed, self.jobs);
        let mut section = |name: &str, entries: Vec<(&str, Option<String>)>| {
            let set: Vec<_> = entries.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
            if !set.is_empty() {
                let _ = writeln!(s, "\n[{name}]");
                for (k, v) in set {
                    let _ = writeln!(s, "{k} = {v}");
                }
            }
        };
        section(
            "time",
            vec![
                ("tau", self.tau.map(|v| v.to_string())),
                ("T", self.t_final.map(|v| v.to_string())),
                ("steps", self.steps.map(|v| v.to_string())),
            ],
        );
        section(
            "mesh",
            vec![
                ("h", self.h.map(|v| v.to_string())),
                ("nx", self.nx.map(|v| v.to_string())),
                ("ny", self.ny.map(|v| v.to_string())),
            ],
        );
        section(
            "physics",
            vec![
                ("lambda", self.lambda.map(|v| v.to_string())),
                ("eps", self.eps.map(|v| v.to_string())),
                ("mobility", self.mobility.map(|v| v.to_string())),
                ("eta", self.eta.map(pair)),
                ("sigma", self.sigma.map(pair)),
                ("b", self.b.map(|v| v.to_string())),
                ("gravity", self.gravity.map(|g| format!("{}, {}", g[0], g[1]))),
                ("coupling_index", self.coupling.map(|c| c.to_string())),
            ],
        );
        s
    }
}

fn json_scalar(key: &str, v: &serde_json::Value) -> Result<String, ConfigError> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Array(items) => {
            let parts: Result<Vec<String>, _> = items.iter().map(|i| json_scalar(key, i)).collect();
            Ok(parts?.join(","))
        }
        _ => Err(ConfigError::Value { key: key.into(), value: v.to_string(), expected: "a string, number or array" }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_real("1/64").unwrap(), 1.0 / 64.0);
        assert_eq!(parse_real(" 0.25 ").unwrap(), 0.25);
        assert!(parse_real("1/0").is_err());
        assert!(parse_real("abc").is_err());
    }

    #[test]
    fn text_and_json_agree() {
        let text = "case = gravity\n[time]\ntau = 0.01\nT = 1.25\n[mesh]\nh = 1/64\n[physics]\neta = 0.5\ngravity = 0, 10\ncoupling_index = n+1\n";
        let json = r#"{"case": "gravity", "time": {"tau": 0.01, "T": 1.25}, "mesh": {"h": "1/64"},
            "physics": {"eta": 0.5, "gravity": [0, 10], "coupling_index": "n+1"}}"#;
        let (mut a, mut b) = (RunConfig::default(), RunConfig::default());
        a.apply_text(text).unwrap();
        b.apply_json(json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.eta, Some((0.5, 0.5)));
        assert_eq!(a.coupling, Some(CouplingIndex::Next));
    }

    #[test]
    fn round_trip_through_text() {
        let mut a = RunConfig::default();
        a.apply_text("[run]\ncase = kissing-bubbles\nsnapshot_every = 5\n[time]\nsteps = 3\n[physics]\nsigma = 1, 2\n")
            .unwrap();
        let mut b = RunConfig::default();
        b.apply_text(&a.to_text()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_name_the_problem() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("[time]\nh = 1"), Err(ConfigError::UnknownKey(k)) if k == "time.h"));
        assert!(matches!(c.apply_text("[bogus]"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(c.apply_text("tau 0.1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(c.apply_text("steps = -1"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.apply_text("coupling_index = n+2"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn overrides_reach_the_case() {
        let mut c = RunConfig { case: "zero-smoke".into(), ..Default::default() };
        c.apply_text("[time]\nsteps = 3\n[mesh]\nnx = 2\nny = 3\n[physics]\nb = 2\n").unwrap();
        let case = c.problem_case().unwrap();
        assert_eq!(case.params.steps, 3);
        assert_eq!(case.subdivisions, (2, 3));
        assert_eq!(case.params.b.at([0.0, 0.0]), 2.0);
        c.eps = Some(-1.0);
        assert!(c.problem_case().is_err());
        c.eps = None;
        c.corrupt = Some(Equation::Ohm);
        assert!(c.problem_case().is_err());
    }
}
