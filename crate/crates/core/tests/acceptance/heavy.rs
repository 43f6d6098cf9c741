//! Criteria that train models or drive the binary.

use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};

use pagewise::cli::{evaluate_offline, fit_offline};
use pagewise::config::RunConfig;
use pagewise::encoder::{ModelConfig, Variant};
use pagewise::env::{generate_catalog, generate_logs, Catalog, LoggingPolicy, Simulator, UserConfig, LONG_SESSION, SHORT_SESSION};
use pagewise::eval::{online_test, AgentPolicy};
use pagewise::policy::{GreedyPolicy, PagePolicy, RandomPolicy};
use pagewise::training::{train_offline, Agent, TrainerConfig};

use super::Outcome;

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

pub fn offline_alignment() -> Outcome {
    let catalog = Arc::new(generate_catalog(100, 10, 1).unwrap());
    let sim = Simulator::new(catalog, UserConfig::default(), 5).unwrap();
    let logs = generate_logs(&sim, 20, 10, LoggingPolicy::Greedy).unwrap();
    let transitions: usize = logs.iter().map(|s| s.steps.len()).sum();
    let mut agent = Agent::new(ModelConfig { n_categories: 10, ..ModelConfig::default() }, 1).unwrap();
    let stats = train_offline(&mut agent, &logs, &TrainerConfig::default(), 50, 3, |_| {}).unwrap();
    let losses: Vec<f64> = stats.iter().map(|e| e.align_loss).collect();
    let ma = moving_average(&losses, 10);
    let rises = ma.windows(2).filter(|w| w[1] > w[0]).count();
    let ratio = losses[49] / losses[0];
    Outcome::check(
        transitions == 200 && rises == 0 && ratio < 0.1,
        format!(
            "{transitions} transitions, loss {:.2} -> {:.2} (ratio {ratio:.3}, need < 0.1), {rises} rises in the 10-epoch moving average",
            losses[0], losses[49]
        ),
    )
}

const CATALOG_SEED: u64 = 1;
const TRAIN_SEED: u64 = 11;
const EVAL_SEED: u64 = 12;

struct Trained {
    catalog: Arc<Catalog>,
    agent: Agent,
    recall_k: usize,
}

/// The online agent shared by the horizon criteria, trained on first use.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let catalog = Arc::new(generate_catalog(100, 10, CATALOG_SEED).unwrap());
        let sim = Simulator::new(catalog.clone(), UserConfig::default(), TRAIN_SEED).unwrap();
        let cfg = TrainerConfig::default();
        let mut agent = Agent::new(ModelConfig { n_categories: 10, ..ModelConfig::default() }, 1).unwrap();
        pagewise::training::train_online(&mut agent, &sim, &cfg, 2000, 5, |_| {}).unwrap();
        Trained { catalog, agent, recall_k: cfg.recall_k }
    })
}

/// Mean session reward of the agent, greedy and random policies over the
/// same users.
fn compare(t: &Trained, sim: &Simulator, sessions: usize, len: usize) -> [f64; 3] {
    let items = &t.catalog.items;
    let mut policies: [Box<dyn PagePolicy + '_>; 3] = [
        Box::new(AgentPolicy::new(&t.agent, items, t.recall_k).unwrap()),
        Box::new(GreedyPolicy::new(items.clone(), 10, false)),
        Box::new(RandomPolicy::new(items.clone(), 10, false)),
    ];
    policies.each_mut().map(|p| online_test(p.as_mut(), sim, 0, sessions, len).unwrap().mean())
}

pub fn online_learning() -> Outcome {
    let t0 = std::time::Instant::now();
    let t = trained();
    let train_secs = t0.elapsed().as_secs_f64();
    let sim = Simulator::new(t.catalog.clone(), UserConfig::default(), EVAL_SEED).unwrap();
    let [agent, greedy, random] = compare(t, &sim, 200, LONG_SESSION);
    Outcome::check(
        agent >= 1.5 * random && agent >= 1.1 * greedy,
        format!(
            "long sessions: agent {agent:.1}, random {random:.1} ({:.2}x, need 1.5x), greedy {greedy:.1} ({:.2}x, need 1.1x); training {train_secs:.0}s",
            agent / random,
            agent / greedy
        ),
    )
}

/// One-sided sign test: probability of at least `wins` successes in `n` fair trials.
fn sign_test(wins: usize, n: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

pub fn horizon_effect() -> Outcome {
    let t = trained();
    let (mut wins, mut ties) = (0, 0);
    let (mut short_sum, mut long_sum) = (0.0, 0.0);
    for s in 0..20 {
        let sim = Simulator::new(t.catalog.clone(), UserConfig::default(), 100 + s).unwrap();
        let [a_s, g_s, _] = compare(t, &sim, 20, SHORT_SESSION);
        let [a_l, g_l, _] = compare(t, &sim, 20, LONG_SESSION);
        let (short, long) = (a_s / g_s, a_l / g_l);
        short_sum += short;
        long_sum += long;
        if long > short {
            wins += 1;
        } else if long == short {
            ties += 1;
        }
    }
    let n = 20 - ties;
    let p = sign_test(wins, n);
    Outcome::check(
        p < 0.05,
        format!(
            "long advantage larger in {wins}/{n} seeds, p = {p:.4}; mean agent/greedy short {:.3}, long {:.3}",
            short_sum / 20.0,
            long_sum / 20.0
        ),
    )
}

/// Offline NDCG@20 of the full model and the seven ablations, each averaged
/// over the same three training seeds on one shared log.
pub fn ablation_ordering() -> Outcome {
    const SEEDS: [u64; 3] = [0, 1, 2];
    let cfg = RunConfig::default();
    let catalog = Arc::new(generate_catalog(cfg.n_items, cfg.model.n_categories, cfg.data_seed).unwrap());
    let sim = Simulator::new(catalog, cfg.users.clone(), cfg.data_seed).unwrap();
    let logs = generate_logs(&sim, cfg.log_sessions, cfg.log_pages, cfg.log_policy).unwrap();
    let ndcg = |variant: Variant| {
        let total: f64 = SEEDS
            .iter()
            .map(|&seed| {
                let vcfg = RunConfig { variant, seed, ..cfg.clone() };
                let (agent, _) = fit_offline(&vcfg, &logs).unwrap();
                evaluate_offline(&vcfg, &agent, &logs).unwrap().ndcg
            })
            .sum();
        total / SEEDS.len() as f64
    };
    let full = ndcg(Variant::Full);
    let variants: Vec<f64> = (1..=7).map(|k| ndcg(Variant::Ablated(k))).collect();
    let beaten = variants.iter().filter(|&&v| full >= v).count();
    let listed: Vec<String> = variants.iter().enumerate().map(|(k, v)| format!("{}:{v:.4}", k + 1)).collect();
    Outcome::check(beaten >= 6, format!("mean ndcg@20 over seeds {SEEDS:?}: full {full:.4} >= {beaten}/7 variants ({})", listed.join(" ")))
}

fn run(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pagewise")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

const SMALL: &str = "n_items = 60
n_categories = 6
log_sessions = 30
log_pages = 4
epochs = 2
train_sessions = 6
eval_sessions = 4
data_dir = generate-data-a
checkpoint = train-offline-a/checkpoint.bin
";

const COMMANDS: [(&str, &[&str]); 6] = [
    ("generate-data", &[]),
    ("train-offline", &[]),
    ("train-online", &[]),
    ("eval-offline", &[]),
    ("eval-online", &["--session-length", "short"]),
    ("ablate", &[]),
];

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

pub fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    std::fs::write(root.join("small.txt"), SMALL).unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for (cmd, extra) in COMMANDS {
        let first = format!("{cmd}-a");
        let second = format!("{cmd}-b");
        let mut args = vec![cmd, "--config", "small.txt", "--out", &first];
        args.extend_from_slice(extra);
        if let Err(e) = run(root, &args) {
            return Outcome::check(false, e);
        }
        let manifest = format!("{first}/manifest.txt");
        let mut args = vec![cmd, "--config", &manifest, "--out", &second];
        args.extend_from_slice(extra);
        if let Err(e) = run(root, &args) {
            return Outcome::check(false, e);
        }
        let (a, b) = (files(&root.join(&first)), files(&root.join(&second)));
        compared += a.len();
        if a != b {
            differing.push(cmd);
        }
    }
    Outcome::check(
        differing.is_empty(),
        format!("{} commands, {compared} files compared byte for byte, differing: {differing:?}", COMMANDS.len()),
    )
}
