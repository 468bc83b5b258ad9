//! Experiment configuration: a flat `key = value` file with dotted keys such
//! as `federation.m = 100`, plus `key=value` overrides from the command line.
//!
//! The file syntax is TOML restricted to scalars and arrays, so
//! `[federation]` section headers work too.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use pmtl_core::objectives::{ModelFamily, DEFAULT_MLP_WIDTH};
use pmtl_core::privacy::SensitivityConvention;
use pmtl_core::solvers::FinetuneMethod;
use pmtl_core::{BatchSize, FederationConfig};
use toml::Value;

use crate::error::{HarnessError, Result};
use crate::experiment::SolverKind;
use crate::synthetic::SyntheticSpec;

/// Where the task datasets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    /// A directory of `task_<k>.csv` files.
    Directory(PathBuf),
}

/// Grids of the hyperparameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rounds: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            gamma: vec![0.2, 0.5, 1.0],
            sigma: vec![0.02, 0.05, 0.1],
            rounds: vec![2, 5, 10, 20],
            epsilon: vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 2.0, 4.0],
            seeds: (0..5).collect(),
        }
    }
}

/// Local adaptation applied to the released models after training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneSettings {
    pub method: FinetuneMethod,
    pub steps: usize,
    pub eta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub federation: FederationConfig,
    pub family: ModelFamily,
    pub data: DataSource,
    pub synthetic: SyntheticSpec,
    pub solvers: Vec<SolverKind>,
    /// FedProx proximal weight; defaults to `lambda`.
    pub fedprox_mu: Option<f64>,
    pub sweep: SweepGrid,
    pub finetune_method: Option<FinetuneMethod>,
    pub finetune_steps: usize,
    /// Defaults to the federation's `eta`.
    pub finetune_eta: Option<f64>,
    /// Defaults to the federation's `lambda`.
    pub finetune_lambda: Option<f64>,
    pub output_dir: Option<PathBuf>,
    explicit: HashSet<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synthetic = SyntheticSpec::default();
        let mut federation = FederationConfig::new(synthetic.tasks);
        federation.rounds = 10;
        federation.lambda = 1.0;
        federation.eta = 0.01;
        Self {
            federation,
            family: ModelFamily::LogisticRegression,
            data: DataSource::Synthetic,
            synthetic,
            solvers: vec![SolverKind::Pmtl, SolverKind::FedAvg, SolverKind::FedProx, SolverKind::LocalOnly],
            fedprox_mu: None,
            sweep: SweepGrid::default(),
            finetune_method: None,
            finetune_steps: 20,
            finetune_eta: None,
            finetune_lambda: None,
            output_dir: None,
            explicit: HashSet::new(),
        }
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::String(s) => format!("\"{s}\""),
        other => other.to_string(),
    }
}

fn expect_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        _ => Err(HarnessError::Config(format!("{key}: expected a number, got {}", describe(v)))),
    }
}

fn expect_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(HarnessError::Config(format!(
            "{key}: expected a non-negative integer, got {}",
            describe(v)
        ))),
    }
}

fn expect_usize(key: &str, v: &Value) -> Result<usize> {
    expect_u64(key, v).map(|u| u as usize)
}

fn expect_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| HarnessError::Config(format!("{key}: expected true or false, got {}", describe(v))))
}

fn expect_str<'v>(key: &str, v: &'v Value) -> Result<&'v str> {
    v.as_str()
        .ok_or_else(|| HarnessError::Config(format!("{key}: expected a string, got {}", describe(v))))
}

/// A scalar counts as a one-element list.
fn expect_list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    let out: Vec<T> = match v {
        Value::Array(items) => items.iter().map(|i| item(key, i)).collect::<Result<_>>()?,
        scalar => vec![item(key, scalar)?],
    };
    if out.is_empty() {
        return Err(HarnessError::Config(format!("{key}: list must not be empty")));
    }
    Ok(out)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(inner) => flatten(&key, inner, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses a configuration file's contents; `source` names it in errors.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Parse {
            file: source.to_string(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut config = Self::default();
        for (key, value) in &entries {
            config.apply(key, value).map_err(|e| HarnessError::Parse {
                file: source.to_string(),
                line: text
                    .lines()
                    .position(|l| {
                        let l = l.trim_start();
                        l.starts_with(key.as_str()) || l.starts_with(key.rsplit('.').next().unwrap_or(key))
                    })
                    .map_or(0, |i| i + 1),
                message: e.to_string(),
            })?;
        }
        config.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override. Values use the file syntax; bare words
    /// are read as strings and bare comma lists as arrays.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        self.set_all([assignment])
    }

    /// Applies several overrides, validating only once all are in.
    pub fn set_all<'s>(&mut self, assignments: impl IntoIterator<Item = &'s str>) -> Result<()> {
        for assignment in assignments {
            self.apply_override(assignment)?;
        }
        *self = std::mem::take(self).finish()?;
        Ok(())
    }

    fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let parse = |s: &str| -> Option<Value> {
            format!("v = {s}").parse::<toml::Table>().ok()?.remove("v")
        };
        let scalar = |s: &str| parse(s).unwrap_or_else(|| Value::String(s.to_string()));
        let value = match parse(raw) {
            Some(v) => v,
            None if raw.contains(',') => Value::Array(raw.split(',').map(|s| scalar(s.trim())).collect()),
            None => Value::String(raw.to_string()),
        };
        self.apply(key, &value)
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        let f = &mut self.federation;
        match key {
            "federation.m" => f.tasks = expect_usize(key, v)?,
            "federation.q" => f.sampled = expect_usize(key, v)?,
            "federation.rounds" => f.rounds = expect_usize(key, v)?,
            "federation.local_steps" => f.local_steps = expect_usize(key, v)?,
            "federation.lambda" => f.lambda = expect_f64(key, v)?,
            "federation.eta" => f.eta = expect_f64(key, v)?,
            "federation.gamma" => f.gamma = expect_f64(key, v)?,
            "federation.sigma" => f.sigma = expect_f64(key, v)?,
            "federation.delta" => f.delta = expect_f64(key, v)?,
            "federation.epsilon" => {
                f.epsilon_target = match v {
                    Value::String(s) if s == "none" => None,
                    other => Some(expect_f64(key, other)?),
                }
            }
            "federation.seed" => f.seed = expect_u64(key, v)?,
            "federation.batch_size" => {
                f.batch_size = match v {
                    Value::String(s) if s == "full" => BatchSize::Full,
                    other => BatchSize::Fixed(expect_usize(key, other)?),
                }
            }
            "federation.sensitivity" => {
                f.sensitivity = match expect_str(key, v)? {
                    "standard" => SensitivityConvention::Standard,
                    "conservative" => SensitivityConvention::Conservative,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "{key}: expected standard or conservative, got {other}"
                        )))
                    }
                }
            }
            "federation.identical_init" => f.identical_init = expect_bool(key, v)?,
            "model.family" => {
                let hidden = match self.family {
                    ModelFamily::Mlp { hidden } => hidden,
                    _ => DEFAULT_MLP_WIDTH,
                };
                self.family = match expect_str(key, v)? {
                    "logistic" => ModelFamily::LogisticRegression,
                    "linear" => ModelFamily::LinearRegression,
                    "mean" => ModelFamily::SquaredErrorMean,
                    "mlp" => ModelFamily::Mlp { hidden },
                    other => {
                        return Err(HarnessError::Config(format!(
                            "{key}: unknown family {other} (logistic, linear, mean, mlp)"
                        )))
                    }
                }
            }
            "model.hidden" => {
                let hidden = expect_usize(key, v)?;
                if hidden == 0 {
                    return Err(HarnessError::Config(format!("{key} must be at least 1")));
                }
                if let ModelFamily::Mlp { .. } = self.family {
                    self.family = ModelFamily::Mlp { hidden };
                } else if self.explicit.contains("model.family") {
                    return Err(HarnessError::Config(format!("{key} only applies to model.family = \"mlp\"")));
                } else {
                    self.family = ModelFamily::Mlp { hidden };
                }
            }
            "data.source" => {
                self.data = match expect_str(key, v)? {
                    "synthetic" => DataSource::Synthetic,
                    "directory" => match &self.data {
                        DataSource::Directory(p) => DataSource::Directory(p.clone()),
                        DataSource::Synthetic => DataSource::Directory(PathBuf::new()),
                    },
                    other => {
                        return Err(HarnessError::Config(format!(
                            "{key}: expected synthetic or directory, got {other}"
                        )))
                    }
                }
            }
            "data.path" => self.data = DataSource::Directory(PathBuf::from(expect_str(key, v)?)),
            "synthetic.examples_per_task" => self.synthetic.examples_per_task = expect_usize(key, v)?,
            "synthetic.feature_dim" => self.synthetic.feature_dim = expect_usize(key, v)?,
            "synthetic.heterogeneity" => self.synthetic.heterogeneity = expect_f64(key, v)?,
            "synthetic.label_noise" => self.synthetic.label_noise = expect_f64(key, v)?,
            "solvers.list" => {
                self.solvers = expect_list(key, v, |k, i| SolverKind::parse(expect_str(k, i)?))?;
            }
            "solvers.fedprox_mu" => self.fedprox_mu = Some(expect_f64(key, v)?),
            "sweep.gamma" => self.sweep.gamma = expect_list(key, v, expect_f64)?,
            "sweep.sigma" => self.sweep.sigma = expect_list(key, v, expect_f64)?,
            "sweep.rounds" => self.sweep.rounds = expect_list(key, v, expect_usize)?,
            "sweep.epsilon" => self.sweep.epsilon = expect_list(key, v, expect_f64)?,
            "sweep.seeds" => self.sweep.seeds = expect_list(key, v, expect_u64)?,
            "finetune.method" => {
                self.finetune_method = match expect_str(key, v)? {
                    "none" => None,
                    "vanilla" => Some(FinetuneMethod::Vanilla),
                    "mean_reg" => Some(FinetuneMethod::MeanRegularized),
                    other => {
                        return Err(HarnessError::Config(format!(
                            "{key}: expected none, vanilla or mean_reg, got {other}"
                        )))
                    }
                }
            }
            "finetune.steps" => self.finetune_steps = expect_usize(key, v)?,
            "finetune.eta" => self.finetune_eta = Some(expect_f64(key, v)?),
            "finetune.lambda" => self.finetune_lambda = Some(expect_f64(key, v)?),
            "output.dir" => self.output_dir = Some(PathBuf::from(expect_str(key, v)?)),
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Fills in values that default from others (`q = m`, `delta = 1/m`) and validates.
    fn finish(mut self) -> Result<Self> {
        let m = self.federation.tasks;
        if !self.explicit.contains("federation.q") {
            self.federation.sampled = m;
        }
        if !self.explicit.contains("federation.delta") {
            self.federation.delta = FederationConfig::new(m).delta;
        }
        self.synthetic.tasks = m;
        if let DataSource::Directory(p) = &self.data {
            if p.as_os_str().is_empty() {
                return Err(HarnessError::Config("data.source = \"directory\" needs data.path".into()));
            }
        }
        self.federation.validate()?;
        if self.data == DataSource::Synthetic {
            self.synthetic.validate()?;
        }
        if self.sweep.epsilon.iter().any(|e| !(*e > 0.0)) {
            return Err(HarnessError::Config("sweep.epsilon values must be positive".into()));
        }
        if self.sweep.gamma.iter().any(|g| !(*g > 0.0)) || self.sweep.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(HarnessError::Config("sweep.gamma must be > 0 and sweep.sigma >= 0".into()));
        }
        if self.sweep.rounds.contains(&0) {
            return Err(HarnessError::Config("sweep.rounds values must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn fedprox_mu(&self) -> f64 {
        self.fedprox_mu.unwrap_or(self.federation.lambda)
    }

    pub fn finetune(&self) -> Option<FinetuneSettings> {
        self.finetune_method.map(|method| FinetuneSettings {
            method,
            steps: self.finetune_steps,
            eta: self.finetune_eta.unwrap_or(self.federation.eta),
            lambda: self.finetune_lambda.unwrap_or(self.federation.lambda),
        })
    }

    pub fn was_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }
}
