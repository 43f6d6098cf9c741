//! Run configuration: a plain `key = value` file with every default built in.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::{ModelConfig, Variant};
use crate::env::{LoggingPolicy, UserConfig};
use crate::error::{Error, Result};
use crate::training::{Optimizer, TrainerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    pub trainer: TrainerConfig,
    pub users: UserConfig,
    pub n_items: usize,
    /// Model and training randomness.
    pub seed: u64,
    /// Catalog, users and logs.
    pub data_seed: u64,
    /// Users met during online evaluation.
    pub eval_seed: u64,
    pub log_sessions: usize,
    pub log_pages: usize,
    pub log_policy: LoggingPolicy,
    pub train_fraction: f64,
    pub epochs: usize,
    pub train_sessions: usize,
    pub eval_sessions: usize,
    /// Output of `generate-data`, read by the offline commands.
    pub data_dir: PathBuf,
    /// Checkpoint read by the evaluation commands.
    pub checkpoint: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            variant: Variant::Full,
            trainer: TrainerConfig::default(),
            users: UserConfig::default(),
            n_items: 1000,
            seed: 0,
            data_seed: 1,
            eval_seed: 2,
            log_sessions: 1000,
            log_pages: 10,
            log_policy: LoggingPolicy::Greedy,
            train_fraction: 0.7,
            epochs: 10,
            train_sessions: 2000,
            eval_sessions: 200,
            data_dir: PathBuf::from("data"),
            checkpoint: PathBuf::from("run/checkpoint.bin"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn page_size(&self) -> usize {
        self.model.rows * self.model.cols
    }

    /// Model dimensions with the variant's ablation switches applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { ablations: self.variant.ablations(), ..self.model.clone() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, u) = (&mut self.model, &mut self.trainer, &mut self.users);
        match key {
            "item_dim" => m.item_dim = parse(key, value)?,
            "n_categories" => m.n_categories = parse(key, value)?,
            "item_emb" => m.item_emb = parse(key, value)?,
            "cat_emb" => m.cat_emb = parse(key, value)?,
            "fb_emb" => m.fb_emb = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "page_vec" => m.page_vec = parse(key, value)?,
            "action_vec" => m.action_vec = parse(key, value)?,
            "critic_hidden" => m.critic_hidden = parse(key, value)?,
            "rows" => {
                m.rows = parse(key, value)?;
                u.rows = m.rows;
            }
            "cols" => {
                m.cols = parse(key, value)?;
                u.cols = m.cols;
            }
            "page_size" => {
                let want: usize = parse(key, value)?;
                if want != m.rows * m.cols {
                    return Err(Error::Config(format!("page_size {want} differs from rows x cols = {}", m.rows * m.cols)));
                }
            }
            "history_len" => u.history_len = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "critic_lr" => t.critic_lr = parse(key, value)?,
            "actor_lr" => t.actor_lr = parse(key, value)?,
            "align_lr" => t.align_lr = parse(key, value)?,
            "noise_start" => t.noise_start = parse(key, value)?,
            "noise_end" => t.noise_end = parse(key, value)?,
            "capacity" => t.capacity = parse(key, value)?,
            "session_len" => t.session_len = parse(key, value)?,
            "recall_k" => t.recall_k = parse(key, value)?,
            "warmup" => t.warmup = parse(key, value)?,
            "reward_scale" => t.reward_scale = parse(key, value)?,
            "max_grad_norm" => t.max_grad_norm = if value == "none" { None } else { Some(parse(key, value)?) },
            "optimizer" => t.optimizer = parse::<Optimizer>(key, value)?,
            "align_online" => t.align_online = parse_bool(key, value)?,
            "map_targets" => t.map_targets = parse_bool(key, value)?,
            "n_items" => self.n_items = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "eval_seed" => self.eval_seed = parse(key, value)?,
            "log_sessions" => self.log_sessions = parse(key, value)?,
            "log_pages" => self.log_pages = parse(key, value)?,
            "log_policy" => self.log_policy = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "train_sessions" => self.train_sessions = parse(key, value)?,
            "eval_sessions" => self.eval_sessions = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, t) = (&self.model, &self.trainer);
        vec![
            ("item_dim", m.item_dim.to_string()),
            ("n_categories", m.n_categories.to_string()),
            ("item_emb", m.item_emb.to_string()),
            ("cat_emb", m.cat_emb.to_string()),
            ("fb_emb", m.fb_emb.to_string()),
            ("hidden", m.hidden.to_string()),
            ("page_vec", m.page_vec.to_string()),
            ("action_vec", m.action_vec.to_string()),
            ("critic_hidden", m.critic_hidden.to_string()),
            ("rows", m.rows.to_string()),
            ("cols", m.cols.to_string()),
            ("history_len", self.users.history_len.to_string()),
            ("variant", self.variant.to_string()),
            ("gamma", t.gamma.to_string()),
            ("tau", t.tau.to_string()),
            ("batch", t.batch.to_string()),
            ("critic_lr", t.critic_lr.to_string()),
            ("actor_lr", t.actor_lr.to_string()),
            ("align_lr", t.align_lr.to_string()),
            ("noise_start", t.noise_start.to_string()),
            ("noise_end", t.noise_end.to_string()),
            ("capacity", t.capacity.to_string()),
            ("session_len", t.session_len.to_string()),
            ("recall_k", t.recall_k.to_string()),
            ("warmup", t.warmup.to_string()),
            ("reward_scale", t.reward_scale.to_string()),
            ("max_grad_norm", t.max_grad_norm.map_or("none".into(), |v| v.to_string())),
            ("optimizer", t.optimizer.to_string()),
            ("align_online", t.align_online.to_string()),
            ("map_targets", t.map_targets.to_string()),
            ("n_items", self.n_items.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("log_sessions", self.log_sessions.to_string()),
            ("log_pages", self.log_pages.to_string()),
            ("log_policy", self.log_policy.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("epochs", self.epochs.to_string()),
            ("train_sessions", self.train_sessions.to_string()),
            ("eval_sessions", self.eval_sessions.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("checkpoint", self.checkpoint.display().to_string()),
        ]
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::Format { path: origin.to_string(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| fail(format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v.trim()).map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.trainer.validate()?;
        self.users.validate()?;
        if self.users.rows != self.model.rows || self.users.cols != self.model.cols {
            return Err(Error::Config("simulator and model page shapes differ".into()));
        }
        if self.n_items < self.page_size() {
            return Err(Error::Config(format!("n_items {} is smaller than a page ({})", self.n_items, self.page_size())));
        }
        if self.model.n_categories == 0 || self.model.n_categories > self.n_items {
            return Err(Error::Config(format!("n_categories must lie in 1..={}", self.n_items)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.users.history_len == 0 {
            return Err(Error::Config("history_len must be positive".into()));
        }
        Ok(())
    }
}
