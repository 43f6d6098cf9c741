//! Synthetic world: item catalog, simulated users, logged sessions and their
//! file formats.
//!
//! Click model per slot `m` holding item `i`:
//! `p_click = bias[m] · σ(scale · cos(u, e_i) + affinity[c_i] − fatigue[c_i] − satiation[i] + offset)`,
//! purchase given click with `σ(buy_scale · cos(u, e_i) + buy_offset)`.
//! After each page, item satiation and category fatigue decay and grow with
//! every exposure just made, and the latent `u` drifts toward every clicked
//! item.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::actor::ValidPage;
use crate::encoder::{Feedback, Item, PageObservation};
use crate::error::{Error, Result};
use crate::policy::{GreedyPolicy, PagePolicy, RandomPolicy};

pub const LOG_FORMAT_VERSION: u32 = 1;
pub const CATALOG_FORMAT_VERSION: u32 = 1;

/// Session lengths used by the online protocol.
pub const SHORT_SESSION: usize = 10;
pub const LONG_SESSION: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub items: Vec<Item>,
    pub n_categories: usize,
    pub seed: u64,
}

impl Catalog {
    pub fn get(&self, id: u32) -> Option<&Item> {
        // Ids are dense 0..n for generated catalogs; fall back to a scan.
        match self.items.get(id as usize) {
            Some(it) if it.id == id => Some(it),
            _ => self.items.iter().find(|it| it.id == id),
        }
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, |it| it.embedding.len())
    }

    /// Mean raw embedding per category (in the squashed item space).
    pub fn category_means(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut sums = vec![vec![0.0; d]; self.n_categories];
        let mut counts = vec![0usize; self.n_categories];
        for it in &self.items {
            counts[it.category] += 1;
            for (s, e) in sums[it.category].iter_mut().zip(it.embedding.iter()) {
                *s += e;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        sums
    }
}

/// Catalog geometry: category centres `N(0, center_std²)` per dimension,
/// items `tanh(centre + N(0, item_std²))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CatalogConfig {
    pub n_items: usize,
    pub n_categories: usize,
    pub dim: usize,
    pub center_std: f64,
    pub item_std: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self { n_items: 1000, n_categories: 20, dim: 50, center_std: 0.6, item_std: 0.35 }
    }
}

pub fn generate_catalog(n_items: usize, n_categories: usize, seed: u64) -> Result<Catalog> {
    generate_catalog_with(&CatalogConfig { n_items, n_categories, ..CatalogConfig::default() }, seed)
}

pub fn generate_catalog_with(cfg: &CatalogConfig, seed: u64) -> Result<Catalog> {
    if cfg.n_items < 10 {
        return Err(Error::Config(format!("catalog needs at least one page of items, got {}", cfg.n_items)));
    }
    if cfg.n_categories == 0 || cfg.dim == 0 {
        return Err(Error::Config("catalog needs at least one category and dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Normal::new(0.0, cfg.center_std).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.item_std).map_err(|e| Error::Config(e.to_string()))?;
    let centres: Vec<Vec<f64>> = (0..cfg.n_categories).map(|_| (0..cfg.dim).map(|_| center.sample(&mut rng)).collect()).collect();
    let mut items = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let cat = i % cfg.n_categories;
        let e: Vec<f64> = centres[cat].iter().map(|c| (c + noise.sample(&mut rng)).tanh().clamp(-0.999_999, 0.999_999)).collect();
        let e = if e.iter().all(|&v| v == 0.0) { vec![1e-3; cfg.dim] } else { e };
        items.push(Item::new(i as u32, e, cat)?);
    }
    Ok(Catalog { items, n_categories: cfg.n_categories, seed })
}

/// Simulated-user behaviour parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UserConfig {
    pub rows: usize,
    pub cols: usize,
    pub history_len: usize,
    /// Favourite categories per user.
    pub favourites: usize,
    pub favourite_affinity: f64,
    pub other_affinity_std: f64,
    pub latent_noise: f64,
    pub click_scale: f64,
    pub click_offset: f64,
    pub buy_scale: f64,
    pub buy_offset: f64,
    pub fatigue_rate: f64,
    pub fatigue_decay: f64,
    pub satiation_rate: f64,
    pub satiation_decay: f64,
    pub drift: f64,
    pub row_decay: f64,
    pub col_decay: f64,
    /// Sharpness of history sampling around the user's preferences.
    pub history_temperature: f64,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 2,
            history_len: 10,
            favourites: 3,
            favourite_affinity: 1.0,
            other_affinity_std: 0.5,
            latent_noise: 0.3,
            click_scale: 3.0,
            click_offset: -2.5,
            buy_scale: 3.0,
            buy_offset: -2.5,
            fatigue_rate: 0.0,
            fatigue_decay: 0.92,
            satiation_rate: 0.3,
            satiation_decay: 0.9,
            drift: 0.02,
            row_decay: 0.85,
            col_decay: 0.95,
            history_temperature: 4.0,
        }
    }
}

impl UserConfig {
    pub fn page_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn position_bias(&self) -> Vec<f64> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.row_decay.powi(r as i32) * self.col_decay.powi(c as i32))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.history_len == 0 {
            return Err(Error::Config("user model needs a non-empty page and history".into()));
        }
        if ![self.fatigue_decay, self.satiation_decay, self.drift].iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Config("fatigue_decay, satiation_decay and drift must lie in [0, 1]".into()));
        }
        if !(self.row_decay > 0.0 && self.row_decay <= 1.0 && self.col_decay > 0.0 && self.col_decay <= 1.0) {
            return Err(Error::Config("position-bias decays must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct SimUser {
    pub latent: Vec<f64>,
    pub affinity: Vec<f64>,
    pub fatigue: Vec<f64>,
    pub satiation: std::collections::HashMap<u32, f64>,
    pub position_bias: Vec<f64>,
    latent_bound: f64,
    cfg: UserConfig,
    rng: ChaCha8Rng,
}

impl SimUser {
    pub fn new(latent: Vec<f64>, affinity: Vec<f64>, cfg: UserConfig, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let latent_bound = latent.iter().map(|v| v * v).sum::<f64>().sqrt().max((latent.len() as f64).sqrt());
        Ok(Self {
            fatigue: vec![0.0; affinity.len()],
            satiation: std::collections::HashMap::new(),
            position_bias: cfg.position_bias(),
            latent,
            affinity,
            latent_bound,
            cfg,
            rng,
        })
    }

    pub fn config(&self) -> &UserConfig {
        &self.cfg
    }

    /// Norm the latent can never exceed.
    pub fn latent_bound(&self) -> f64 {
        self.latent_bound
    }

    pub fn click_probability(&self, slot: usize, item: &Item) -> f64 {
        let c = &self.cfg;
        let logit = c.click_scale * cosine(&self.latent, &item.embedding) + self.affinity[item.category]
            - self.fatigue[item.category]
            - self.satiation.get(&item.id).copied().unwrap_or(0.0)
            + c.click_offset;
        self.position_bias[slot] * sigmoid(logit)
    }

    pub fn purchase_probability(&self, item: &Item) -> f64 {
        sigmoid(self.cfg.buy_scale * cosine(&self.latent, &item.embedding) + self.cfg.buy_offset)
    }

    /// Sample the response to a full page, then update fatigue and drift.
    pub fn user_feedback(&mut self, page: &ValidPage) -> Result<Vec<Feedback>> {
        if page.len() != self.position_bias.len() {
            return Err(Error::InvalidPage(format!("page of {} items for a {}-slot layout", page.len(), self.position_bias.len())));
        }
        if let Some(it) = page.items().iter().find(|it| it.category >= self.affinity.len()) {
            return Err(Error::InvalidPage(format!("item {} category {} out of range", it.id, it.category)));
        }
        let mut out = Vec::with_capacity(page.len());
        for (m, it) in page.items().iter().enumerate() {
            let p_click = self.click_probability(m, it);
            let fb = if self.rng.gen::<f64>() < p_click {
                if self.rng.gen::<f64>() < self.purchase_probability(it) {
                    Feedback::Purchase
                } else {
                    Feedback::Click
                }
            } else {
                Feedback::Skip
            };
            out.push(fb);
        }
        for f in &mut self.fatigue {
            *f *= self.cfg.fatigue_decay;
        }
        for v in self.satiation.values_mut() {
            *v *= self.cfg.satiation_decay;
        }
        for it in page.items() {
            self.fatigue[it.category] += self.cfg.fatigue_rate;
            *self.satiation.entry(it.id).or_insert(0.0) += self.cfg.satiation_rate;
        }
        for (it, fb) in page.items().iter().zip(&out) {
            if fb.is_positive() {
                for (u, e) in self.latent.iter_mut().zip(it.embedding.iter()) {
                    *u += self.cfg.drift * (e - *u);
                }
            }
        }
        let norm = self.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.latent_bound {
            let f = self.latent_bound / norm;
            self.latent.iter_mut().for_each(|v| *v *= f);
        }
        Ok(out)
    }
}

/// Population of simulated users over a catalog. User `i` of a simulator is
/// fully determined by `(seed, i)`.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub catalog: Arc<Catalog>,
    pub users: UserConfig,
    pub seed: u64,
}

impl Simulator {
    pub fn new(catalog: Arc<Catalog>, users: UserConfig, seed: u64) -> Result<Self> {
        users.validate()?;
        if catalog.items.len() < users.page_size() {
            return Err(Error::Config("catalog smaller than one page".into()));
        }
        Ok(Self { catalog, users, seed })
    }

    fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Draw user `index` together with its pre-session history.
    pub fn user(&self, index: u64) -> Result<(SimUser, Vec<Item>)> {
        let c = &self.users;
        let cat = &self.catalog;
        let mut rng = self.rng_for(index);
        let k = cat.n_categories;
        let favs: Vec<usize> = sample(&mut rng, k, c.favourites.min(k)).into_vec();
        let means = cat.category_means();
        let noise = Normal::new(0.0, c.latent_noise.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;
        let d = cat.dim();
        let mut latent = vec![0.0; d];
        for &f in &favs {
            let w: f64 = rng.gen_range(0.5..1.5);
            for (u, m) in latent.iter_mut().zip(&means[f]) {
                *u += w * m;
            }
        }
        for u in &mut latent {
            *u += noise.sample(&mut rng);
        }
        let other = Normal::new(0.0, c.other_affinity_std.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;
        let affinity: Vec<f64> =
            (0..k).map(|j| if favs.contains(&j) { c.favourite_affinity } else { other.sample(&mut rng) - c.favourite_affinity }).collect();

        let weights: Vec<f64> = cat
            .items
            .iter()
            .map(|it| (c.history_temperature * cosine(&latent, &it.embedding) + affinity[it.category]).exp())
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        let mut history = Vec::with_capacity(c.history_len);
        let mut seen = std::collections::HashSet::new();
        let mut guard = 0;
        while history.len() < c.history_len && guard < 100 * c.history_len {
            guard += 1;
            let it = &cat.items[dist.sample(&mut rng)];
            if seen.insert(it.id) {
                history.push(it.clone());
            }
        }
        let user_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        Ok((SimUser::new(latent, affinity, c.clone(), user_rng)?, history))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoggedStep {
    pub page: ValidPage,
    pub feedback: Vec<Feedback>,
    pub reward: f64,
}

impl LoggedStep {
    pub fn observation(&self) -> Result<PageObservation> {
        self.page.observe(self.feedback.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    pub history: Vec<Item>,
    pub steps: Vec<LoggedStep>,
}

impl SessionRecord {
    pub fn observations(&self) -> Result<Vec<PageObservation>> {
        self.steps.iter().map(LoggedStep::observation).collect()
    }

    /// Every distinct item shown in the session, first appearance order.
    pub fn item_set(&self) -> Vec<(Item, Feedback)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for s in &self.steps {
            for (it, fb) in s.page.items().iter().zip(&s.feedback) {
                if seen.insert(it.id) {
                    out.push((it.clone(), *fb));
                }
            }
        }
        out
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

pub fn page_reward(feedback: &[Feedback]) -> f64 {
    feedback.iter().map(|f| f.reward()).sum()
}

/// Play one session of `n_pages` pages between `policy` and `user`.
pub fn rollout(policy: &mut dyn PagePolicy, user: &mut SimUser, history: &[Item], n_pages: usize, session_seed: u64) -> Result<SessionRecord> {
    policy.begin(history, session_seed)?;
    let mut steps = Vec::with_capacity(n_pages);
    for _ in 0..n_pages {
        let page = policy.next_page()?;
        let feedback = user.user_feedback(&page)?;
        let obs = page.observe(feedback.clone())?;
        policy.observe(&obs)?;
        steps.push(LoggedStep { reward: page_reward(&feedback), page, feedback });
    }
    Ok(SessionRecord { history: history.to_vec(), steps })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoggingPolicy {
    Random,
    Greedy,
}

impl std::str::FromStr for LoggingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "greedy" | "greedy-similarity" => Ok(Self::Greedy),
            _ => Err(Error::Config(format!("logging policy must be `random` or `greedy`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for LoggingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Greedy => "greedy",
        })
    }
}

/// Roll out `n_sessions` logged sessions. Logging policies never repeat an
/// item within a session, so every session's item set is well defined.
pub fn generate_logs(sim: &Simulator, n_sessions: usize, pages: usize, policy: LoggingPolicy) -> Result<Vec<SessionRecord>> {
    let m = sim.users.page_size();
    if pages * m > sim.catalog.items.len() {
        return Err(Error::Config(format!("{pages} distinct pages need {} items, catalog has {}", pages * m, sim.catalog.items.len())));
    }
    let items = sim.catalog.items.clone();
    let mut pol: Box<dyn PagePolicy> = match policy {
        LoggingPolicy::Random => Box::new(RandomPolicy::new(items, m, true)),
        LoggingPolicy::Greedy => Box::new(GreedyPolicy::new(items, m, true)),
    };
    let mut out = Vec::with_capacity(n_sessions);
    for i in 0..n_sessions {
        let (mut user, history) = sim.user(i as u64)?;
        let seed = sim.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let rec = rollout(pol.as_mut(), &mut user, &history, pages, seed).map_err(|e| Error::Env { session: i, source: Box::new(e) })?;
        out.push(rec);
    }
    Ok(out)
}

/// Temporal split: the first `fraction` of sessions train, the rest test.
pub fn split_train_test(sessions: &[SessionRecord], fraction: f64) -> (&[SessionRecord], &[SessionRecord]) {
    let cut = ((sessions.len() as f64) * fraction).floor() as usize;
    sessions.split_at(cut.min(sessions.len()))
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    format: String,
    version: u32,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct LogStepLine {
    page: Vec<u32>,
    feedback: Vec<u8>,
    reward: f64,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    history: Vec<u32>,
    steps: Vec<LogStepLine>,
}

#[derive(Serialize, Deserialize)]
struct CatalogHeader {
    format: String,
    version: u32,
    n_categories: usize,
    dim: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CatalogLine {
    id: u32,
    category: usize,
    embedding: Vec<f64>,
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serialises")
}

pub fn write_catalog(path: &Path, cat: &Catalog) -> Result<()> {
    let mut w = create(path)?;
    let header = CatalogHeader { format: "pagewise-catalog".into(), version: CATALOG_FORMAT_VERSION, n_categories: cat.n_categories, dim: cat.dim(), seed: cat.seed };
    let mut text = json(&header);
    text.push('\n');
    for it in &cat.items {
        text.push_str(&json(&CatalogLine { id: it.id, category: it.category, embedding: it.embedding.to_vec() }));
        text.push('\n');
    }
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f).lines().collect::<std::io::Result<Vec<_>>>().map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), line, msg: msg.into() }
}

pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let lines = lines(path)?;
    let first = lines.first().ok_or_else(|| format_err(path, 1, "missing header"))?;
    let header: CatalogHeader = serde_json::from_str(first).map_err(|e| format_err(path, 1, e.to_string()))?;
    if header.format != "pagewise-catalog" || header.version != CATALOG_FORMAT_VERSION {
        return Err(format_err(path, 1, format!("unsupported catalog format `{}` v{}", header.format, header.version)));
    }
    let mut items = Vec::with_capacity(lines.len() - 1);
    let mut ids = std::collections::HashSet::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let l: CatalogLine = serde_json::from_str(line).map_err(|e| format_err(path, n, e.to_string()))?;
        if l.category >= header.n_categories || l.embedding.len() != header.dim {
            return Err(format_err(path, n, "category or embedding dimension out of range"));
        }
        if !ids.insert(l.id) {
            return Err(format_err(path, n, format!("duplicate item id {}", l.id)));
        }
        items.push(Item::new(l.id, l.embedding, l.category).map_err(|e| format_err(path, n, e.to_string()))?);
    }
    Ok(Catalog { items, n_categories: header.n_categories, seed: header.seed })
}

pub fn write_logs(path: &Path, sessions: &[SessionRecord], rows: usize, cols: usize) -> Result<()> {
    let mut w = create(path)?;
    let mut text = json(&LogHeader { format: "pagewise-sessions".into(), version: LOG_FORMAT_VERSION, rows, cols });
    text.push('\n');
    for s in sessions {
        let line = LogLine {
            history: s.history.iter().map(|it| it.id).collect(),
            steps: s
                .steps
                .iter()
                .map(|st| LogStepLine {
                    page: st.page.items().iter().map(|it| it.id).collect(),
                    feedback: st.feedback.iter().map(|f| f.code()).collect(),
                    reward: st.reward,
                })
                .collect(),
        };
        text.push_str(&json(&line));
        text.push('\n');
    }
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Read a session log, resolving item ids against `catalog`. Any malformed
/// line is rejected with its 1-based line number.
pub fn read_logs(path: &Path, catalog: &Catalog) -> Result<Vec<SessionRecord>> {
    let lines = lines(path)?;
    let first = lines.first().ok_or_else(|| format_err(path, 1, "missing header"))?;
    let header: LogHeader = serde_json::from_str(first).map_err(|e| format_err(path, 1, e.to_string()))?;
    if header.format != "pagewise-sessions" || header.version != LOG_FORMAT_VERSION {
        return Err(format_err(path, 1, format!("unsupported log format `{}` v{}", header.format, header.version)));
    }
    let m = header.rows * header.cols;
    let resolve = |id: u32, n: usize| catalog.get(id).cloned().ok_or_else(|| format_err(path, n, format!("unknown item id {id}")));
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let l: LogLine = serde_json::from_str(line).map_err(|e| format_err(path, n, e.to_string()))?;
        let history = l.history.iter().map(|&id| resolve(id, n)).collect::<Result<Vec<_>>>()?;
        let mut steps = Vec::with_capacity(l.steps.len());
        for st in l.steps {
            if st.page.len() != m || st.feedback.len() != m {
                return Err(format_err(path, n, format!("page must have {m} items and feedback codes")));
            }
            let items = st.page.iter().map(|&id| resolve(id, n)).collect::<Result<Vec<_>>>()?;
            let feedback = st
                .feedback
                .iter()
                .map(|&c| Feedback::from_code(c).ok_or_else(|| format_err(path, n, format!("feedback code {c} not in 0..=2"))))
                .collect::<Result<Vec<_>>>()?;
            if page_reward(&feedback) != st.reward {
                return Err(format_err(path, n, format!("reward {} disagrees with feedback", st.reward)));
            }
            let page = ValidPage::new(items).map_err(|e| format_err(path, n, e.to_string()))?;
            steps.push(LoggedStep { page, feedback, reward: st.reward });
        }
        out.push(SessionRecord { history, steps });
    }
    Ok(out)
}
