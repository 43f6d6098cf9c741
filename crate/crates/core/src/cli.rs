//! Command-line front end: argument definitions and one function per command.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;

use crate::config::RunConfig;
use crate::encoder::Variant;
use crate::env::{
    generate_catalog, generate_logs, read_catalog, read_logs, split_train_test, write_catalog, write_logs, Catalog,
    SessionRecord, Simulator, CATALOG_FORMAT_VERSION, LOG_FORMAT_VERSION, LONG_SESSION, SHORT_SESSION,
};
use crate::error::{Error, Result};
use crate::eval::{offline_evaluate, online_test, report_row, report_table, AgentActor, AgentPolicy, GreedyPolicy, MetricReport, RandomPolicy, REPORT_COLUMNS};
use crate::tensor::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
use crate::training::{curve_csv, train_offline, train_online, Agent, EpochStats};

pub const METRIC_K: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "pagewise", version, about = "Page-wise recommendation with an actor-critic agent")]
pub struct Cli {
    /// key = value configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Logged, training or evaluation sessions, depending on the command.
    #[arg(long, global = true)]
    pub sessions: Option<usize>,
    /// Pages per session: short (10), long (50) or a number.
    #[arg(long, global = true, value_parser = parse_session_length)]
    pub session_length: Option<usize>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a catalog and logged sessions.
    GenerateData,
    /// Train on the logged training split.
    TrainOffline,
    /// Train against simulated users.
    TrainOnline,
    /// Rerank the logged test split and report ranking metrics.
    EvalOffline,
    /// Session rewards on simulated users for the agent and both baselines.
    EvalOnline,
    /// Train and evaluate the full model and all seven ablations offline.
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenerateData => "generate-data",
            Command::TrainOffline => "train-offline",
            Command::TrainOnline => "train-online",
            Command::EvalOffline => "eval-offline",
            Command::EvalOnline => "eval-online",
            Command::Ablate => "ablate",
        }
    }
}

pub fn parse_session_length(s: &str) -> std::result::Result<usize, String> {
    match s {
        "short" => Ok(SHORT_SESSION),
        "long" => Ok(LONG_SESSION),
        _ => s.parse().map_err(|_| format!("expected short, long or a page count, got `{s}`")),
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        let cmd = self.command.name();
        if let Some(n) = self.sessions {
            match self.command {
                Command::GenerateData => cfg.log_sessions = n,
                Command::TrainOnline => cfg.train_sessions = n,
                Command::EvalOnline => cfg.eval_sessions = n,
                _ => return Err(Error::Config(format!("--sessions does not apply to {cmd}"))),
            }
        }
        if let Some(n) = self.session_length {
            match self.command {
                Command::GenerateData => cfg.log_pages = n,
                Command::TrainOnline => cfg.trainer.session_len = n,
                Command::EvalOnline => {}
                _ => return Err(Error::Config(format!("--session-length does not apply to {cmd}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Config snapshot plus format versions. The file is itself a valid config:
/// the header lines are comments.
pub fn manifest(cmd: Command, cfg: &RunConfig, extra: &[(&str, String)]) -> String {
    let mut s = String::from("# pagewise run manifest\n");
    let _ = writeln!(s, "# command = {}", cmd.name());
    let _ = writeln!(s, "# version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# checkpoint_format = {CHECKPOINT_VERSION}");
    let _ = writeln!(s, "# catalog_format = {CATALOG_FORMAT_VERSION}");
    let _ = writeln!(s, "# log_format = {LOG_FORMAT_VERSION}");
    for (k, v) in extra {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s.push_str(&cfg.to_text());
    s
}

fn simulator(cfg: &RunConfig, catalog: Arc<Catalog>, seed: u64) -> Result<Simulator> {
    Simulator::new(catalog, cfg.users.clone(), seed)
}

fn online_catalog(cfg: &RunConfig) -> Result<Arc<Catalog>> {
    Ok(Arc::new(generate_catalog(cfg.n_items, cfg.model.n_categories, cfg.data_seed)?))
}

fn load_data(cfg: &RunConfig) -> Result<(Catalog, Vec<SessionRecord>)> {
    let catalog = read_catalog(&cfg.data_dir.join("catalog.jsonl"))?;
    let logs = read_logs(&cfg.data_dir.join("logs.jsonl"), &catalog)?;
    Ok((catalog, logs))
}

fn load_agent(cfg: &RunConfig) -> Result<Agent> {
    Agent::from_checkpoint(cfg.model_config(), &read_checkpoint(&cfg.checkpoint)?)
}

fn epoch_csv(stats: &[EpochStats]) -> String {
    let mut s = String::from("epoch,align_loss,critic_loss,mean_q\n");
    for e in stats {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.align_loss, e.critic_loss, e.mean_q);
    }
    s
}

/// Offline training of `cfg.variant` on the training split, returning the
/// agent and the per-epoch statistics.
pub fn fit_offline(cfg: &RunConfig, logs: &[SessionRecord]) -> Result<(Agent, Vec<EpochStats>)> {
    let (train, _) = split_train_test(logs, cfg.train_fraction);
    let mut agent = Agent::new(cfg.model_config(), cfg.seed)?;
    let label = cfg.variant.label();
    let stats = train_offline(&mut agent, train, &cfg.trainer, cfg.epochs, cfg.seed, |e| {
        info!("{label} epoch {}: align {:.4} critic {:.4} q {:.4}", e.epoch, e.align_loss, e.critic_loss, e.mean_q);
    })?;
    Ok((agent, stats))
}

pub fn evaluate_offline(cfg: &RunConfig, agent: &Agent, logs: &[SessionRecord]) -> Result<MetricReport> {
    let (_, test) = split_train_test(logs, cfg.train_fraction);
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    offline_evaluate(test, &mut AgentActor::new(agent), cfg.page_size(), METRIC_K)
}

/// Execute `cmd`, writing every artifact into `out`.
pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path, eval_length: Option<usize>) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut extra = Vec::new();
    match cmd {
        Command::GenerateData => {
            let catalog = online_catalog(cfg)?;
            let sim = simulator(cfg, catalog.clone(), cfg.data_seed)?;
            let logs = generate_logs(&sim, cfg.log_sessions, cfg.log_pages, cfg.log_policy)?;
            write_catalog(&out.join("catalog.jsonl"), &catalog)?;
            write_logs(&out.join("logs.jsonl"), &logs, cfg.model.rows, cfg.model.cols)?;
            info!("wrote {} items and {} sessions", catalog.items.len(), logs.len());
        }
        Command::TrainOffline => {
            let (_, logs) = load_data(cfg)?;
            let (agent, stats) = fit_offline(cfg, &logs)?;
            write_checkpoint(&out.join("checkpoint.bin"), &agent.checkpoint(cfg.seed))?;
            write(&out.join("curve.csv"), &epoch_csv(&stats))?;
        }
        Command::TrainOnline => {
            let sim = simulator(cfg, online_catalog(cfg)?, cfg.data_seed)?;
            let mut agent = Agent::new(cfg.model_config(), cfg.seed)?;
            let curve = train_online(&mut agent, &sim, &cfg.trainer, cfg.train_sessions, cfg.seed, |s| {
                if (s.session + 1) % 100 == 0 {
                    info!("session {}: reward {:.1} critic {:.4} q {:.3}", s.session + 1, s.reward, s.critic_loss, s.mean_q);
                }
            })?;
            write_checkpoint(&out.join("checkpoint.bin"), &agent.checkpoint(cfg.seed))?;
            write(&out.join("curve.csv"), &curve_csv(&curve))?;
        }
        Command::EvalOffline => {
            let (_, logs) = load_data(cfg)?;
            let agent = load_agent(cfg)?;
            let report = evaluate_offline(cfg, &agent, &logs)?;
            let label = cfg.variant.label();
            write(&out.join("report.csv"), &format!("{REPORT_COLUMNS}\n{}\n", report_row(&label, &report)))?;
            let table = report_table(&[(label, report)]);
            print!("{table}");
            write(&out.join("report.txt"), &table)?;
        }
        Command::EvalOnline => {
            let agent = load_agent(cfg)?;
            let catalog = online_catalog(cfg)?;
            let sim = simulator(cfg, catalog.clone(), cfg.eval_seed)?;
            let lengths = match eval_length {
                Some(n) => vec![n],
                None => vec![SHORT_SESSION, LONG_SESSION],
            };
            let mut csv = String::from("policy,session_length,sessions,mean_reward\n");
            let m = cfg.page_size();
            for &len in &lengths {
                let mut policies: Vec<(String, Box<dyn crate::policy::PagePolicy + '_>)> = vec![
                    (cfg.variant.label(), Box::new(AgentPolicy::new(&agent, &catalog.items, cfg.trainer.recall_k)?)),
                    ("greedy".into(), Box::new(GreedyPolicy::new(catalog.items.clone(), m, false))),
                    ("random".into(), Box::new(RandomPolicy::new(catalog.items.clone(), m, false))),
                ];
                for (name, p) in policies.iter_mut() {
                    let r = online_test(p.as_mut(), &sim, 0, cfg.eval_sessions, len)?;
                    let _ = writeln!(csv, "{name},{len},{},{}", cfg.eval_sessions, r.mean());
                }
            }
            print!("{csv}");
            write(&out.join("online.csv"), &csv)?;
            extra.push(("session_lengths", lengths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")));
        }
        Command::Ablate => {
            let (_, logs) = load_data(cfg)?;
            let mut variants: Vec<Variant> = (1..=7).map(Variant::Ablated).collect();
            variants.push(Variant::Full);
            let mut rows = Vec::new();
            for v in variants {
                let vcfg = RunConfig { variant: v, ..cfg.clone() };
                let (agent, _) = fit_offline(&vcfg, &logs)?;
                let report = evaluate_offline(&vcfg, &agent, &logs)?;
                info!("{}: ndcg@{METRIC_K} {:.4}", v.label(), report.ndcg);
                rows.push((v.label(), report));
            }
            let mut csv = format!("{REPORT_COLUMNS}\n");
            for (label, r) in &rows {
                csv.push_str(&report_row(label, r));
                csv.push('\n');
            }
            write(&out.join("ablation.csv"), &csv)?;
            let table = report_table(&rows);
            print!("{table}");
            write(&out.join("ablation.txt"), &table)?;
        }
    }
    write(&out.join("manifest.txt"), &manifest(cmd, cfg, &extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("pagewise").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_and_route_by_command() {
        let cli = parse(&["train-online", "--sessions", "7", "--session-length", "long", "--seed", "9", "--variant", "3"]).unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!((cfg.train_sessions, cfg.trainer.session_len, cfg.seed), (7, 50, 9));
        assert_eq!(cfg.variant, Variant::Ablated(3));
        let cli = parse(&["generate-data", "--sessions", "12", "--session-length", "4"]).unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!((cfg.log_sessions, cfg.log_pages), (12, 4));
        assert!(parse(&["eval-offline", "--sessions", "3"]).unwrap().run_config().is_err());
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert!(parse(&["train-online", "--bogus"]).is_err());
        assert!(parse(&["train-online", "--variant", "8"]).is_err());
        assert!(parse(&["train-online", "--session-length", "medium"]).is_err());
        assert!(parse(&[]).is_err());
    }

    #[test]
    fn manifest_reads_back_as_the_same_config() {
        let mut cfg = RunConfig { seed: 77, ..RunConfig::default() };
        cfg.trainer.actor_lr = 3e-5;
        let text = manifest(Command::Ablate, &cfg, &[("note", "x".into())]);
        let mut back = RunConfig::default();
        back.apply_text(&text, "manifest").unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("# command = ablate"));
    }
}
