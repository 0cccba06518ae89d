//! Run configuration: a key=value file with `[section]` headers (parsed as
//! TOML), overridden by command-line flags, then validated as a whole.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use clap::ValueEnum;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Stationary,
    Fixpoint,
    SweepRho,
    SweepLambda,
    Simulate,
    Couple,
    Cycles,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Stationary => "stationary",
            Command::Fixpoint => "fixpoint",
            Command::SweepRho => "sweep-rho",
            Command::SweepLambda => "sweep-lambda",
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Cycles => "cycles",
            Command::Verify => "verify",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Command::from_str(s, true).ok()
    }

    /// Model keys that must be given for this command.
    fn required(self) -> &'static [&'static str] {
        match self {
            Command::Stationary | Command::Fixpoint | Command::Simulate | Command::Couple | Command::Cycles => {
                &["lambda1", "lambda2", "mu", "theta"]
            }
            Command::SweepRho => &["theta"],
            Command::SweepLambda => &["lambda1", "mu", "theta"],
            Command::Verify => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Which chain `stationary` and `simulate` work on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Free,
    Ytilde,
    Yprime,
    Z,
}

/// Values as read from the file or flags, before defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda_net: Option<f64>,
    pub mu: Option<f64>,
    pub theta: Option<f64>,
    pub beta: Option<f64>,
    pub model: Option<ModelKind>,
    pub k: Option<u64>,
    pub tol: Option<f64>,
    pub rho_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
    pub mix: Option<f64>,
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub warmup: Option<u64>,
    pub batches: Option<u64>,
    pub seeds: Option<u64>,
    pub epsilon: Option<f64>,
    pub cycles: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub trace: Option<PathBuf>,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_net: f64,
    pub mu: f64,
    pub theta: f64,
    pub beta: f64,
    pub model: ModelKind,
    pub k: Option<u64>,
    pub tol: f64,
    pub rho_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub mix: f64,
    pub seed: u64,
    pub horizon: u64,
    pub warmup: Option<u64>,
    pub batches: u64,
    pub seeds: u64,
    pub epsilon: f64,
    pub cycles: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "config error: {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const SECTIONS: &[(&str, &[&str])] = &[
    ("", &["command"]),
    ("model", &["lambda1", "lambda2", "lambda_net", "mu", "theta", "beta", "kind", "k"]),
    ("solver", &["tol"]),
    ("sweep", &["rho_grid", "lambda_grid", "mix"]),
    ("sim", &["seed", "horizon", "warmup", "batches", "seeds", "epsilon", "cycles"]),
    ("output", &["path", "format", "trace"]),
];

/// 1-based line of `key` inside `[section]` of `text`, if it can be found.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct FileReader<'a> {
    text: &'a str,
    origin: &'a str,
    errors: Vec<String>,
}

impl FileReader<'_> {
    fn at(&self, section: &str, key: &str) -> String {
        let name = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        match locate(self.text, section, key) {
            Some(line) => format!("{}:{line}: `{name}`", self.origin),
            None => format!("{}: `{name}`", self.origin),
        }
    }

    fn mismatch(&mut self, section: &str, key: &str, expected: &str, got: &Value) {
        let at = self.at(section, key);
        self.errors
            .push(format!("{at}: expected {expected}, found {}", got.type_str()));
    }

    fn float(&mut self, section: &str, key: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.mismatch(section, key, "a number", v);
                None
            }
        }
    }

    fn count(&mut self, section: &str, key: &str, v: &Value) -> Option<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.mismatch(section, key, "a nonnegative integer", v);
                None
            }
        }
    }

    fn string<'v>(&mut self, section: &str, key: &str, v: &'v Value) -> Option<&'v str> {
        match v {
            Value::String(s) => Some(s),
            _ => {
                self.mismatch(section, key, "a string", v);
                None
            }
        }
    }

    fn grid(&mut self, section: &str, key: &str, v: &Value) -> Option<Vec<f64>> {
        let Value::Array(items) = v else {
            self.mismatch(section, key, "an array of numbers", v);
            return None;
        };
        items.iter().map(|x| self.float(section, key, x)).collect()
    }

    fn choice<T: ValueEnum>(&mut self, section: &str, key: &str, v: &Value) -> Option<T> {
        let s = self.string(section, key, v)?;
        let parsed = T::from_str(s, true).ok();
        if parsed.is_none() {
            let at = self.at(section, key);
            self.errors.push(format!("{at}: unknown value `{s}`"));
        }
        parsed
    }
}

/// Read a config file's text into [`Overrides`]. Every problem found is
/// reported, each with the file, line and key it comes from.
pub fn parse_file(text: &str, origin: &str) -> Result<Overrides, ConfigErrors> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![format!("{origin}: {}", e.to_string().trim())]))?;
    let mut r = FileReader {
        text,
        origin,
        errors: Vec::new(),
    };
    let mut o = Overrides::default();

    for (name, value) in &table {
        if let Value::Table(inner) = value {
            let Some((_, keys)) = SECTIONS.iter().find(|s| s.0 == name && !s.0.is_empty()) else {
                let line = r
                    .text
                    .lines()
                    .position(|l| l.trim() == format!("[{name}]"))
                    .map_or(String::new(), |l| format!(":{}", l + 1));
                r.errors.push(format!("{origin}{line}: unknown section `[{name}]`"));
                continue;
            };
            for (key, v) in inner {
                if !keys.contains(&key.as_str()) {
                    let at = r.at(name, key);
                    r.errors.push(format!("{at}: unknown key"));
                    continue;
                }
                read_key(&mut r, &mut o, name, key, v);
            }
        } else if name == "command" {
            if let Some(s) = r.string("", name, value) {
                o.command = Command::parse(s);
                if o.command.is_none() {
                    let at = r.at("", name);
                    r.errors.push(format!("{at}: unknown command `{s}`"));
                }
            }
        } else {
            let at = r.at("", name);
            r.errors.push(format!("{at}: unknown key"));
        }
    }

    if r.errors.is_empty() {
        Ok(o)
    } else {
        Err(ConfigErrors(r.errors))
    }
}

fn read_key(r: &mut FileReader<'_>, o: &mut Overrides, section: &str, key: &str, v: &Value) {
    match (section, key) {
        ("model", "lambda1") => o.lambda1 = r.float(section, key, v),
        ("model", "lambda2") => o.lambda2 = r.float(section, key, v),
        ("model", "lambda_net") => o.lambda_net = r.float(section, key, v),
        ("model", "mu") => o.mu = r.float(section, key, v),
        ("model", "theta") => o.theta = r.float(section, key, v),
        ("model", "beta") => o.beta = r.float(section, key, v),
        ("model", "kind") => o.model = r.choice(section, key, v),
        ("model", "k") => o.k = r.count(section, key, v),
        ("solver", "tol") => o.tol = r.float(section, key, v),
        ("sweep", "rho_grid") => o.rho_grid = r.grid(section, key, v),
        ("sweep", "lambda_grid") => o.lambda_grid = r.grid(section, key, v),
        ("sweep", "mix") => o.mix = r.float(section, key, v),
        ("sim", "seed") => o.seed = r.count(section, key, v),
        ("sim", "horizon") => o.horizon = r.count(section, key, v),
        ("sim", "warmup") => o.warmup = r.count(section, key, v),
        ("sim", "batches") => o.batches = r.count(section, key, v),
        ("sim", "seeds") => o.seeds = r.count(section, key, v),
        ("sim", "epsilon") => o.epsilon = r.float(section, key, v),
        ("sim", "cycles") => o.cycles = r.count(section, key, v),
        ("output", "path") => o.out = r.string(section, key, v).map(PathBuf::from),
        ("output", "format") => o.format = r.choice(section, key, v),
        ("output", "trace") => o.trace = r.string(section, key, v).map(PathBuf::from),
        _ => unreachable!("key list and reader disagree on {section}.{key}"),
    }
}

impl Overrides {
    /// `other` wins wherever it is set.
    pub fn merge(self, other: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            command, lambda1, lambda2, lambda_net, mu, theta, beta, model, k, tol, rho_grid,
            lambda_grid, mix, seed, horizon, warmup, batches, seeds, epsilon, cycles, out, format,
            trace
        )
    }

    fn given(&self, key: &str) -> bool {
        match key {
            "lambda1" => self.lambda1.is_some(),
            "lambda2" => self.lambda2.is_some(),
            "mu" => self.mu.is_some(),
            "theta" => self.theta.is_some(),
            _ => true,
        }
    }

    /// Fill defaults and check everything that can be checked without
    /// solving anything. Loads at or above 1 are accepted here.
    pub fn resolve(self) -> Result<RunConfig, ConfigErrors> {
        let mut errors = Vec::new();
        let Some(command) = self.command else {
            return Err(ConfigErrors(vec![
                "missing required key `command` (positional argument or top-level key)".into(),
            ]));
        };
        for key in command.required() {
            if !self.given(key) {
                errors.push(format!(
                    "missing required key `model.{key}` (flag --{}) for `{}`",
                    key.replace('_', "-"),
                    command.name()
                ));
            }
        }

        let cfg = RunConfig {
            command,
            lambda1: self.lambda1.unwrap_or(0.0),
            lambda2: self.lambda2.unwrap_or(0.0),
            lambda_net: self.lambda_net.unwrap_or(0.0),
            mu: self.mu.unwrap_or(1.0),
            theta: self.theta.unwrap_or(1.0),
            beta: self.beta.unwrap_or(1.0),
            model: self.model.unwrap_or(ModelKind::Free),
            k: self.k,
            tol: self.tol.unwrap_or(1e-8),
            rho_grid: self
                .rho_grid
                .unwrap_or_else(|| mobps_core::htlab::DEFAULT_RHO_GRID.to_vec()),
            lambda_grid: self
                .lambda_grid
                .unwrap_or_else(|| mobps_core::htlab::DEFAULT_LAMBDA_GRID.to_vec()),
            mix: self.mix.unwrap_or(0.5),
            seed: self.seed.unwrap_or(0),
            horizon: self.horizon.unwrap_or(match command {
                Command::Couple => 10_000,
                Command::Cycles => 100_000_000,
                _ => 1_000_000,
            }),
            warmup: self.warmup,
            batches: self.batches.unwrap_or(32),
            seeds: self.seeds.unwrap_or(1),
            epsilon: self.epsilon.unwrap_or(mobps_core::models::DEFAULT_EPSILON),
            cycles: self.cycles.unwrap_or(2000),
            out: self.out,
            format: self.format.unwrap_or(Format::Csv),
            trace: self.trace,
        };

        let mut check = |ok: bool, msg: String| {
            if !ok {
                errors.push(msg);
            }
        };
        for (name, v) in [
            ("lambda1", cfg.lambda1),
            ("lambda2", cfg.lambda2),
            ("lambda_net", cfg.lambda_net),
            ("theta", cfg.theta),
        ] {
            check(
                v.is_finite() && v >= 0.0,
                format!("`model.{name}` must be finite and nonnegative, got {v}"),
            );
        }
        check(cfg.mu.is_finite() && cfg.mu > 0.0, format!("`model.mu` must be positive, got {}", cfg.mu));
        check(
            cfg.beta.is_finite() && cfg.beta > 0.0,
            format!("`model.beta` must be positive, got {}", cfg.beta),
        );
        check(cfg.tol.is_finite() && cfg.tol > 0.0, format!("`solver.tol` must be positive, got {}", cfg.tol));
        check(
            cfg.epsilon.is_finite() && cfg.epsilon > 0.0,
            format!("`sim.epsilon` must be positive, got {}", cfg.epsilon),
        );
        check(
            (0.0..=1.0).contains(&cfg.mix),
            format!("`sweep.mix` must lie in [0, 1], got {}", cfg.mix),
        );
        check(
            !cfg.rho_grid.is_empty() && cfg.rho_grid.iter().all(|r| *r > 0.0 && *r < 1.0),
            format!("`sweep.rho_grid` needs values in (0, 1), got {:?}", cfg.rho_grid),
        );
        check(
            !cfg.lambda_grid.is_empty()
                && cfg.lambda_grid.iter().all(|l| l.is_finite() && *l > 0.0)
                && cfg.lambda_grid.windows(2).all(|w| w[1] > w[0]),
            format!(
                "`sweep.lambda_grid` needs increasing positive values, got {:?}",
                cfg.lambda_grid
            ),
        );
        check(cfg.horizon > 0, "`sim.horizon` must be positive".into());
        check(cfg.seeds > 0, "`sim.seeds` must be positive".into());
        check(cfg.cycles > 0, "`sim.cycles` must be positive".into());
        check(cfg.batches >= 10, format!("`sim.batches` must be at least 10, got {}", cfg.batches));
        if let Some(w) = cfg.warmup {
            check(w < cfg.horizon, format!("`sim.warmup` ({w}) must be below `sim.horizon`"));
        }

        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

impl RunConfig {
    /// Every resolved setting as `key = value` lines, in a fixed order.
    pub fn canonical(&self) -> String {
        let grid = |g: &[f64]| {
            g.iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command.name());
        let _ = writeln!(s, "model.lambda1 = {:?}", self.lambda1);
        let _ = writeln!(s, "model.lambda2 = {:?}", self.lambda2);
        let _ = writeln!(s, "model.lambda_net = {:?}", self.lambda_net);
        let _ = writeln!(s, "model.mu = {:?}", self.mu);
        let _ = writeln!(s, "model.theta = {:?}", self.theta);
        let _ = writeln!(s, "model.beta = {:?}", self.beta);
        let _ = writeln!(s, "model.kind = {:?}", self.model);
        let _ = writeln!(s, "model.k = {}", self.k.map_or("auto".into(), |k| k.to_string()));
        let _ = writeln!(s, "solver.tol = {:?}", self.tol);
        let _ = writeln!(s, "sweep.rho_grid = [{}]", grid(&self.rho_grid));
        let _ = writeln!(s, "sweep.lambda_grid = [{}]", grid(&self.lambda_grid));
        let _ = writeln!(s, "sweep.mix = {:?}", self.mix);
        let _ = writeln!(s, "sim.seed = {}", self.seed);
        let _ = writeln!(s, "sim.horizon = {}", self.horizon);
        let _ = writeln!(
            s,
            "sim.warmup = {}",
            self.warmup.map_or("auto".into(), |w| w.to_string())
        );
        let _ = writeln!(s, "sim.batches = {}", self.batches);
        let _ = writeln!(s, "sim.seeds = {}", self.seeds);
        let _ = writeln!(s, "sim.epsilon = {:?}", self.epsilon);
        let _ = writeln!(s, "sim.cycles = {}", self.cycles);
        let _ = writeln!(s, "output.format = {:?}", self.format);
        s
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
