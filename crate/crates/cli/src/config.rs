//! Flat `key = value` configuration.
//!
//! Files hold one pair per line. `#` starts a comment, and `include = path`
//! splices another file in place, resolved relative to the including file.
//! Later assignments win, so `--set` flags override file values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    Partition,
    Verify,
    Concentration,
    Jitter,
    Train,
    Stats,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Partition => "partition",
            Command::Verify => "verify",
            Command::Concentration => "concentration",
            Command::Jitter => "jitter",
            Command::Train => "train",
            Command::Stats => "stats",
        }
    }
}

/// Every key any command understands.
const KNOWN: &[&str] = &[
    "seed",
    "box",
    "svg.size",
    "network.file",
    "network.depth",
    "network.width",
    "network.activation",
    "dataset.file",
    "dataset.kind",
    "dataset.n",
    "dataset.noise",
    "dataset.arms",
    "dataset.mean",
    "dataset.var",
    "init.mode",
    "partition.plain_init",
    "concentration.modes",
    "concentration.resolution",
    "concentration.epsilon",
    "concentration.layers",
    "concentration.eps_min",
    "concentration.eps_max",
    "concentration.eps_count",
    "jitter.batch_sizes",
    "jitter.draws",
    "jitter.virtual",
    "train.learning_rate",
    "train.epochs",
    "train.batch_size",
    "train.loss",
    "train.frozen",
    "train.snapshot_every",
    "train.holdout_n",
    "stats.batch_size",
    "stats.draws",
    "stats.virtual",
    "verify.only",
    "verify.mu_offset",
];

fn defaults(cmd: Command) -> Vec<(&'static str, &'static str)> {
    use Command::*;
    let mut d = vec![("seed", "0")];
    if cmd == Verify {
        d.extend([("verify.only", "all"), ("verify.mu_offset", "0")]);
        return d;
    }
    let (depth, width) = match cmd {
        Partition => ("4", "6"),
        Concentration => ("11", "64"),
        Jitter => ("2", "8"),
        Train => ("2", "16"),
        _ => ("1", "3"),
    };
    d.extend([
        ("network.file", ""),
        ("network.depth", depth),
        ("network.width", width),
        ("network.activation", "leaky_relu:0.1"),
        ("dataset.file", ""),
    ]);
    let (kind, n, noise, mean, var) = match cmd {
        Partition | Concentration => ("star", "50", "0", "0,0", "1,1"),
        Jitter => ("rings", "1024", "0.1", "0,0", "1,1"),
        Train => ("rings", "512", "0.1", "0,0", "1,1"),
        _ => ("gaussian", "1000", "0", "1,0,-1", "1,3,0.1"),
    };
    d.extend([
        ("dataset.kind", kind),
        ("dataset.n", n),
        ("dataset.noise", noise),
        ("dataset.arms", "5"),
        ("dataset.mean", mean),
        ("dataset.var", var),
    ]);
    if matches!(cmd, Partition | Concentration | Jitter) {
        d.extend([("box", "-3,3,-3,3"), ("svg.size", "512")]);
    }
    match cmd {
        Partition => d.push(("partition.plain_init", "random_bias")),
        Concentration => d.extend([
            ("concentration.modes", "bn_warmup,random_bias,zero_bias"),
            ("concentration.resolution", "512"),
            ("concentration.epsilon", "0.1"),
            ("concentration.layers", "all"),
            ("concentration.eps_min", "0.001"),
            ("concentration.eps_max", "1"),
            ("concentration.eps_count", "13"),
        ]),
        Jitter => d.extend([("init.mode", "bn_warmup"), ("jitter.batch_sizes", "16,256"), ("jitter.draws", "20"), ("jitter.virtual", "0")]),
        Train => d.extend([
            ("init.mode", "bn_warmup"),
            ("train.learning_rate", "0.03"),
            ("train.epochs", "20"),
            ("train.batch_size", "32"),
            ("train.loss", "softmax_cross_entropy"),
            ("train.frozen", "auto"),
            ("train.snapshot_every", "0"),
            ("train.holdout_n", "0"),
        ]),
        _ => d.extend([("init.mode", "bn_warmup"), ("stats.batch_size", "64"), ("stats.draws", "10000"), ("stats.virtual", "0")]),
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new(command: Command) -> Self {
        let values = defaults(command).into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Config { command, values }
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        self.load_at(path, 0)
    }

    fn load_at(&mut self, path: &Path, depth: usize) -> Result<(), CliError> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(CliError::Input(format!("include nesting deeper than {MAX_INCLUDE_DEPTH} at {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).map_err(|m| CliError::Input(format!("{}:{}: {m}", path.display(), i + 1)))?;
            if k == "include" {
                let target = resolve(&base, v);
                self.load_at(&target, depth + 1)?;
            } else {
                self.assign(k, v).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
            }
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = split_pair(pair).map_err(CliError::Input)?;
        self.assign(k, v)
    }

    fn assign(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KNOWN.contains(&key) {
            return Err(CliError::Input(format!("unknown key {key:?}")));
        }
        if self.values.contains_key(key) {
            self.values.insert(key.to_string(), value.to_string());
        } else {
            log::warn!("key {key} is ignored by the {} command", self.command.name());
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no default for {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| CliError::Input(format!("{key} = {v:?}: {e}")))
    }

    /// Comma-separated list; empty text is an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        if v.trim().is_empty() {
            return Ok(vec![]);
        }
        v.split(',').map(|s| s.trim().parse().map_err(|e| CliError::Input(format!("{key} = {v:?}: {e}")))).collect()
    }

    /// Empty text reads as `None`.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key).trim();
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Sorted `key = value` lines, loadable with `--config`.
    pub fn resolved(&self) -> String {
        let mut out = format!("# splinelens {}\n", self.command.name());
        for (k, v) in &self.values {
            if v.is_empty() {
                writeln!(out, "{k} =").unwrap();
            } else {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
        out
    }
}

fn split_pair(line: &str) -> Result<(&str, &str), String> {
    let (k, v) = line.split_once('=').ok_or_else(|| format!("expected key = value, found {line:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {line:?}"));
    }
    Ok((k, v.trim()))
}

fn resolve(base: &Path, target: &str) -> PathBuf {
    let p = Path::new(target);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_only_known_keys() {
        for cmd in [Command::Partition, Command::Verify, Command::Concentration, Command::Jitter, Command::Train, Command::Stats] {
            for (k, _) in defaults(cmd) {
                assert!(KNOWN.contains(&k), "{k}");
            }
        }
    }

    #[test]
    fn flags_override_and_unknown_keys_fail() {
        let mut c = Config::new(Command::Train);
        c.set("train.epochs = 3").unwrap();
        assert_eq!(c.get::<usize>("train.epochs").unwrap(), 3);
        assert!(c.set("train.epoch=3").is_err());
        assert!(c.set("no equals sign").is_err());
        // known but irrelevant keys are accepted and dropped
        c.set("jitter.draws=4").unwrap();
        assert!(!c.resolved().contains("jitter.draws"));
    }

    #[test]
    fn includes_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "network.width = 5 # narrow\ntrain.epochs = 7\n").unwrap();
        std::fs::write(dir.path().join("top.cfg"), "# top\ninclude = base.cfg\ntrain.epochs = 9\n").unwrap();
        let mut c = Config::new(Command::Train);
        c.load_file(&dir.path().join("top.cfg")).unwrap();
        assert_eq!(c.raw("network.width"), "5");
        assert_eq!(c.raw("train.epochs"), "9");
    }

    #[test]
    fn include_cycles_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.cfg"), "include = a.cfg\n").unwrap();
        let mut c = Config::new(Command::Stats);
        assert!(matches!(c.load_file(&dir.path().join("a.cfg")), Err(CliError::Input(_))));
    }

    #[test]
    fn resolved_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Config::new(Command::Concentration);
        c.set("concentration.epsilon=0.25").unwrap();
        let path = dir.path().join("config.resolved");
        std::fs::write(&path, c.resolved()).unwrap();
        let mut d = Config::new(Command::Concentration);
        d.load_file(&path).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn lists_parse() {
        let c = Config::new(Command::Jitter);
        assert_eq!(c.list::<usize>("jitter.batch_sizes").unwrap(), vec![16, 256]);
        assert_eq!(c.list::<f64>("box").unwrap(), vec![-3.0, 3.0, -3.0, 3.0]);
    }
}
