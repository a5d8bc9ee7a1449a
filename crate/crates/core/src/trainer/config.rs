use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::OptimizerConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::netmodel::ModelArchitecture;
use crate::refdata::ClassScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Plain,
    Wdis,
    Unified,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Wdis => "wdis",
            Mode::Unified => "unified",
        }
    }

    pub fn adversarial(self) -> bool {
        self != Mode::Plain
    }

    pub fn default_scope(self) -> ClassScope {
        match self {
            Mode::Unified => ClassScope::AllClasses,
            _ => ClassScope::SameClass,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "wdis" => Ok(Mode::Wdis),
            "unified" => Ok(Mode::Unified),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected plain, wdis or unified)"))),
        }
    }
}

fn scope_name(s: ClassScope) -> &'static str {
    match s {
        ClassScope::SameClass => "same-class",
        ClassScope::AllClasses => "all",
    }
}

/// Every training knob. Defaults are the desk-scale presets; the full-scale
/// values are listed in [`TrainConfig::KEYS`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub arch_name: String,
    pub arch: ModelArchitecture,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many steps; 0 runs every epoch.
    pub max_steps: u64,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub top_n_refs: usize,
    pub degrade_k_ref: usize,
    pub degrade_k_train: usize,
    pub min_cd: f64,
    /// `None` follows the mode: same-class for plain and wdis, all classes for unified.
    pub class_scope: Option<ClassScope>,
    pub partial_size: usize,
    pub complete_size: usize,
    pub seed: u64,
    pub fixed_ref: bool,
    pub only_gan: bool,
    pub no_share: bool,
    /// Reference manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Plain,
            arch_name: "desk".into(),
            arch: ModelArchitecture::desk(),
            epochs: 30,
            batch_size: 8,
            max_steps: 0,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            top_n_refs: 3,
            degrade_k_ref: 15,
            degrade_k_train: 5,
            min_cd: 1e-4,
            class_scope: None,
            partial_size: 1024,
            complete_size: 2048,
            seed: 0,
            fixed_ref: false,
            only_gan: false,
            no_share: false,
            manifest: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for key {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for key {key}"))),
    }
}

impl TrainConfig {
    /// `(key, desk default, full-scale default)` for every accepted key.
    pub const KEYS: &'static [(&'static str, &'static str, &'static str)] = &[
        ("mode", "plain", "plain"),
        ("arch", "desk", "full"),
        ("epochs", "30", "600"),
        ("batch_size", "8", "50"),
        ("max_steps", "0", "0"),
        ("learning_rate", "5e-4", "5e-4"),
        ("weight_decay", "5e-4", "5e-4"),
        ("beta1", "0.9", "0.9"),
        ("beta2", "0.999", "0.999"),
        ("epsilon", "1e-8", "1e-8"),
        ("alpha", "0.35", "0.35"),
        ("beta", "0.65", "0.65"),
        ("gamma", "0.001", "0.001"),
        ("lambda_adv", "0.1", "0.1"),
        ("top_n_refs", "3", "3"),
        ("degrade_k_ref", "15", "15"),
        ("degrade_k_train", "5", "5"),
        ("min_cd", "1e-4", "1e-4"),
        ("class_scope", "auto", "auto"),
        ("partial_size", "1024", "1024"),
        ("complete_size", "2048", "2048"),
        ("seed", "0", "0"),
        ("fixed_ref", "false", "false"),
        ("only_gan", "false", "false"),
        ("no_share", "false", "false"),
        ("manifest", "", ""),
    ];

    pub fn full() -> Self {
        TrainConfig {
            arch_name: "full".into(),
            arch: ModelArchitecture::full(),
            epochs: 600,
            batch_size: 50,
            ..TrainConfig::default()
        }
    }

    pub fn scope(&self) -> ClassScope {
        self.class_scope.unwrap_or_else(|| self.mode.default_scope())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => self.mode = v.parse()?,
            "arch" => {
                self.arch = ModelArchitecture::preset(v)?;
                self.arch_name = v.to_string();
            }
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "learning_rate" => self.optimizer.learning_rate = parse(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = parse(key, v)?,
            "beta1" => self.optimizer.beta1 = parse(key, v)?,
            "beta2" => self.optimizer.beta2 = parse(key, v)?,
            "epsilon" => self.optimizer.epsilon = parse(key, v)?,
            "alpha" => self.weights.alpha = parse(key, v)?,
            "beta" => self.weights.beta = parse(key, v)?,
            "gamma" => self.weights.gamma = parse(key, v)?,
            "lambda_adv" => self.weights.lambda_adv = parse(key, v)?,
            "top_n_refs" => self.top_n_refs = parse(key, v)?,
            "degrade_k_ref" => self.degrade_k_ref = parse(key, v)?,
            "degrade_k_train" => self.degrade_k_train = parse(key, v)?,
            "min_cd" => self.min_cd = parse(key, v)?,
            "class_scope" => {
                self.class_scope = match v {
                    "auto" => None,
                    other => Some(other.parse()?),
                }
            }
            "partial_size" => self.partial_size = parse(key, v)?,
            "complete_size" => self.complete_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "fixed_ref" => self.fixed_ref = parse_bool(key, v)?,
            "only_gan" => self.only_gan = parse_bool(key, v)?,
            "no_share" => self.no_share = parse_bool(key, v)?,
            "manifest" => self.manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. All unknown keys are
    /// reported together.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut unknown = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !Self::KEYS.iter().any(|(name, ..)| *name == k) {
                unknown.push(k.to_string());
                continue;
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `manifest` resolves against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_text(&text)?;
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(path.parent().unwrap_or(Path::new("")).join(m));
            }
        }
        Ok(cfg)
    }

    /// Canonical text holding every key; `parse_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let w = &self.weights;
        let scope = self.class_scope.map_or("auto", scope_name);
        let manifest = self
            .manifest
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let values: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("arch", self.arch_name.clone()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("learning_rate", format!("{:e}", o.learning_rate)),
            ("weight_decay", format!("{:e}", o.weight_decay)),
            ("beta1", format!("{:e}", o.beta1)),
            ("beta2", format!("{:e}", o.beta2)),
            ("epsilon", format!("{:e}", o.epsilon)),
            ("alpha", format!("{:e}", w.alpha)),
            ("beta", format!("{:e}", w.beta)),
            ("gamma", format!("{:e}", w.gamma)),
            ("lambda_adv", format!("{:e}", w.lambda_adv)),
            ("top_n_refs", self.top_n_refs.to_string()),
            ("degrade_k_ref", self.degrade_k_ref.to_string()),
            ("degrade_k_train", self.degrade_k_train.to_string()),
            ("min_cd", format!("{:e}", self.min_cd)),
            ("class_scope", scope.to_string()),
            ("partial_size", self.partial_size.to_string()),
            ("complete_size", self.complete_size.to_string()),
            ("seed", self.seed.to_string()),
            ("fixed_ref", self.fixed_ref.to_string()),
            ("only_gan", self.only_gan.to_string()),
            ("no_share", self.no_share.to_string()),
            ("manifest", manifest),
        ];
        let mut out = String::new();
        for (k, v) in values {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.top_n_refs == 0 || self.degrade_k_ref == 0 || self.degrade_k_train == 0 {
            return bad("top_n_refs and the degradation k values must be positive".into());
        }
        if self.partial_size != self.arch.partial_points || self.complete_size != self.arch.complete_points {
            return bad(format!(
                "partial_size/complete_size ({}/{}) must match the {} architecture ({}/{})",
                self.partial_size,
                self.complete_size,
                self.arch_name,
                self.arch.partial_points,
                self.arch.complete_points
            ));
        }
        if self.only_gan && !self.mode.adversarial() {
            return bad("only_gan needs a discriminator mode (wdis or unified)".into());
        }
        if !(self.min_cd >= 0.0) {
            return bad("min_cd must be non-negative".into());
        }
        let mut o = self.optimizer.clone();
        o.total_steps = 1;
        o.validate()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
