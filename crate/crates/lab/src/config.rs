//! Experiment configuration: a TOML document whose keys flatten to dotted
//! paths (`ppo.gamma`, `crawler.friction`). Nested tables and quoted dotted
//! keys are equivalent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use selfmodel_core::env::{CrawlerConfig, TaskKind};
use selfmodel_core::harness::{HarnessConfig, SweepSpec};
use selfmodel_core::nn::Activation;
use toml::Value;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub sweep: SweepSpec,
    pub harness: HarnessConfig,
    /// Fill the `wall_time_s` column. Off by default: timings break byte
    /// determinism of the sweep CSV.
    pub record_wall_time: bool,
    pub output_dir: Option<PathBuf>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => bail!("`{key}` must be a non-negative integer, got {v}"),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    Ok(usize::try_from(as_u64(key, v)?)?)
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) if f.is_finite() => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => bail!("`{key}` must be a finite number, got {v}"),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| anyhow!("`{key}` must be a boolean, got {v}"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| anyhow!("`{key}` must be a string, got {v}"))
}

fn as_list<'a, T>(key: &str, v: &'a Value, item: impl Fn(&str, &'a Value) -> Result<T>) -> Result<Vec<T>> {
    let arr = v
        .as_array()
        .ok_or_else(|| anyhow!("`{key}` must be an array, got {v}"))?;
    arr.iter().map(|x| item(key, x)).collect()
}

fn parse_task(key: &str, v: &Value) -> Result<TaskKind> {
    let name = as_str(key, v)?;
    TaskKind::from_name(name).ok_or_else(|| anyhow!("`{key}`: unknown task `{name}`"))
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Identity => "identity",
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
    }
}

fn parse_activation(key: &str, v: &Value) -> Result<Activation> {
    match as_str(key, v)? {
        "identity" => Ok(Activation::Identity),
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => bail!("`{key}`: unknown activation `{other}`"),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = Self::default();
        for (key, value) in &flat {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        self.harness.validate()?;
        let fit = &self.harness.fit;
        if fit.hidden.contains(&0)
            || fit.batch_size == 0
            || fit.max_epochs == 0
            || !(fit.lr > 0.0)
            || !(fit.validation_fraction > 0.0 && fit.validation_fraction < 1.0)
        {
            bail!("self_model settings out of range");
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        let s = &mut self.sweep;
        let h = &mut self.harness;
        match key {
            "master_seed" => s.master_seed = as_u64(key, v)?,
            "presets" => s.presets = as_list(key, v, |k, x| as_str(k, x).map(str::to_string))?,
            "budgets" => s.budgets = as_list(key, v, as_usize)?,
            "seeds_per_cell" => s.seeds_per_cell = as_usize(key, v)?,
            "tasks" => s.tasks = as_list(key, v, parse_task)?,
            "record_wall_time" => self.record_wall_time = as_bool(key, v)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(as_str(key, v)?)),

            "ppo.gamma" => h.ppo.gamma = as_f64(key, v)?,
            "ppo.lambda" => h.ppo.lambda = as_f64(key, v)?,
            "ppo.clip_eps" => h.ppo.clip_eps = as_f64(key, v)?,
            "ppo.epochs_per_update" => h.ppo.epochs_per_update = as_usize(key, v)?,
            "ppo.minibatch_size" => h.ppo.minibatch_size = as_usize(key, v)?,
            "ppo.lr_policy" => h.ppo.lr_policy = as_f64(key, v)?,
            "ppo.lr_value" => h.ppo.lr_value = as_f64(key, v)?,
            "ppo.entropy_coef" => h.ppo.entropy_coef = as_f64(key, v)?,
            "ppo.rollout_batch" => h.ppo.rollout_batch = as_usize(key, v)?,
            // 0 disables clipping.
            "ppo.max_grad_norm" => {
                let n = as_f64(key, v)?;
                h.ppo.max_grad_norm = (n != 0.0).then_some(n);
            }

            "self_model.hidden" => h.fit.hidden = as_list(key, v, as_usize)?,
            "self_model.activation" => h.fit.activation = parse_activation(key, v)?,
            "self_model.lr" => h.fit.lr = as_f64(key, v)?,
            "self_model.batch_size" => h.fit.batch_size = as_usize(key, v)?,
            "self_model.max_epochs" => h.fit.max_epochs = as_usize(key, v)?,
            "self_model.patience" => h.fit.patience = as_usize(key, v)?,
            "self_model.validation_fraction" => h.fit.validation_fraction = as_f64(key, v)?,

            "harness.ppo_budget_model" => h.ppo_budget_model = as_u64(key, v)?,
            "harness.eval_episodes" => h.eval_episodes = as_usize(key, v)?,
            "harness.collect_episode_len" => h.collect_episode_len = as_usize(key, v)?,

            _ => match key.strip_prefix("crawler.") {
                Some(param) if CrawlerConfig::PARAM_NAMES.contains(&param) => {
                    let value = as_f64(key, v)?;
                    h.crawler_overrides.retain(|(k, _)| k != param);
                    h.crawler_overrides.push((param.to_string(), value));
                }
                _ => bail!("unknown config key `{key}`"),
            },
        }
        Ok(())
    }

    /// Every setting, defaults included, as flat dotted keys. Parsing the
    /// result gives back an equal config.
    pub fn to_toml_string(&self) -> String {
        fn list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
            let parts: Vec<String> = items.iter().map(f).collect();
            format!("[{}]", parts.join(", "))
        }
        let q = |s: &str| Value::String(s.to_string()).to_string();
        let s = &self.sweep;
        let h = &self.harness;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let key = if k.contains('.') { q(k) } else { k.to_string() };
            writeln!(out, "{key} = {v}").unwrap();
        };
        line("master_seed", s.master_seed.to_string());
        line("presets", list(&s.presets, |p| q(p)));
        line("budgets", list(&s.budgets, |b| b.to_string()));
        line("seeds_per_cell", s.seeds_per_cell.to_string());
        line("tasks", list(&s.tasks, |t| q(t.name())));
        line("record_wall_time", self.record_wall_time.to_string());
        if let Some(dir) = &self.output_dir {
            line("output_dir", q(&dir.to_string_lossy()));
        }
        line("ppo.gamma", format!("{:?}", h.ppo.gamma));
        line("ppo.lambda", format!("{:?}", h.ppo.lambda));
        line("ppo.clip_eps", format!("{:?}", h.ppo.clip_eps));
        line("ppo.epochs_per_update", h.ppo.epochs_per_update.to_string());
        line("ppo.minibatch_size", h.ppo.minibatch_size.to_string());
        line("ppo.lr_policy", format!("{:?}", h.ppo.lr_policy));
        line("ppo.lr_value", format!("{:?}", h.ppo.lr_value));
        line("ppo.entropy_coef", format!("{:?}", h.ppo.entropy_coef));
        line("ppo.rollout_batch", h.ppo.rollout_batch.to_string());
        line("ppo.max_grad_norm", format!("{:?}", h.ppo.max_grad_norm.unwrap_or(0.0)));
        line("self_model.hidden", list(&h.fit.hidden, |x| x.to_string()));
        line("self_model.activation", q(activation_name(h.fit.activation)));
        line("self_model.lr", format!("{:?}", h.fit.lr));
        line("self_model.batch_size", h.fit.batch_size.to_string());
        line("self_model.max_epochs", h.fit.max_epochs.to_string());
        line("self_model.patience", h.fit.patience.to_string());
        line("self_model.validation_fraction", format!("{:?}", h.fit.validation_fraction));
        line("harness.ppo_budget_model", h.ppo_budget_model.to_string());
        line("harness.eval_episodes", h.eval_episodes.to_string());
        line("harness.collect_episode_len", h.collect_episode_len.to_string());
        for (k, v) in &h.crawler_overrides {
            line(&format!("crawler.{k}"), format!("{v:?}"));
        }
        out
    }
}
