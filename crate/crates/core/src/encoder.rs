//! User state: an initial-preference GRU over the pre-session history and a
//! session GRU with attention over encoded recommendation pages.

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Attention, Dense, Embedding, Gru, PageConv, PageConvConfig};
use crate::tensor::{Bound, Graph, ParameterSet, Tensor, Var};

/// A catalog item. Raw embedding components lie strictly inside (−1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: u32,
    pub embedding: Arc<[f64]>,
    pub category: usize,
}

impl Item {
    pub fn new(id: u32, embedding: Vec<f64>, category: usize) -> Result<Self> {
        if let Some(bad) = embedding.iter().find(|v| v.is_nan() || v.abs() >= 1.0) {
            return Err(Error::InvalidPage(format!("item {id}: embedding component {bad} outside (-1, 1)")));
        }
        if embedding.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidPage(format!("item {id}: zero embedding")));
        }
        Ok(Self { id, embedding: embedding.into(), category })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Feedback {
    Skip,
    Click,
    Purchase,
}

impl Feedback {
    pub const ALL: [Feedback; 3] = [Feedback::Skip, Feedback::Click, Feedback::Purchase];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }

    /// Per-item reward: skip 0, click 1, purchase 5.
    pub fn reward(self) -> f64 {
        match self {
            Feedback::Skip => 0.0,
            Feedback::Click => 1.0,
            Feedback::Purchase => 5.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self != Feedback::Skip
    }
}

/// A displayed page (row-major slots) with the user's response per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct PageObservation {
    items: Vec<Item>,
    feedback: Vec<Feedback>,
}

impl PageObservation {
    pub fn new(items: Vec<Item>, feedback: Vec<Feedback>) -> Result<Self> {
        if items.len() != feedback.len() {
            return Err(Error::InvalidPage(format!("{} items but {} feedback entries", items.len(), feedback.len())));
        }
        if items.is_empty() {
            return Err(Error::InvalidPage("empty page".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|it| !seen.insert(it.id)) {
            return Err(Error::InvalidPage(format!("duplicate item {} on page", dup.id)));
        }
        Ok(Self { items, feedback })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn feedback(&self) -> &[Feedback] {
        &self.feedback
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Architecture switches for the component ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablations {
    /// Raw item embedding plus one-hot category and feedback, no embedding layers.
    pub no_embeddings: bool,
    /// Slots carry only the item embedding.
    pub no_category_feedback: bool,
    /// Initial state is zero instead of the history GRU output.
    pub no_initial_gru: bool,
    /// Pages are flattened instead of convolved.
    pub no_cnn: bool,
    /// Current state is the last session hidden state.
    pub no_attention: bool,
    /// Pages are averaged and mixed with the initial state by one dense layer.
    pub no_session_gru: bool,
    /// Decoder is a single dense layer instead of the deconvolution stack.
    pub dense_decoder: bool,
}

/// Full model or one of the seven single-component ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    Ablated(u8),
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![Variant::Full];
        v.extend((1..=7).map(Variant::Ablated));
        v
    }

    pub fn ablations(self) -> Ablations {
        let mut a = Ablations::default();
        match self {
            Variant::Full => {}
            Variant::Ablated(1) => a.no_embeddings = true,
            Variant::Ablated(2) => a.no_category_feedback = true,
            Variant::Ablated(3) => a.no_initial_gru = true,
            Variant::Ablated(4) => a.no_cnn = true,
            Variant::Ablated(5) => a.no_attention = true,
            Variant::Ablated(6) => a.no_session_gru = true,
            Variant::Ablated(7) => a.dense_decoder = true,
            Variant::Ablated(_) => unreachable!("validated on construction"),
        }
        a
    }

    pub fn label(self) -> String {
        match self {
            Variant::Full => "DeepPage".into(),
            Variant::Ablated(i) => format!("DeepPage-{i}"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            _ => match s.parse::<u8>() {
                Ok(i @ 1..=7) => Ok(Variant::Ablated(i)),
                _ => Err(Error::Config(format!("variant must be `full` or 1..7, got `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::Ablated(i) => write!(f, "{i}"),
        }
    }
}

/// Dimensions shared by the encoder, decoder and critic.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub item_dim: usize,
    pub n_categories: usize,
    pub item_emb: usize,
    pub cat_emb: usize,
    pub fb_emb: usize,
    pub hidden: usize,
    pub page_vec: usize,
    pub action_vec: usize,
    pub critic_hidden: usize,
    pub rows: usize,
    pub cols: usize,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            item_dim: 50,
            n_categories: 20,
            item_emb: 50,
            cat_emb: 35,
            fb_emb: 15,
            hidden: 64,
            page_vec: 64,
            action_vec: 64,
            critic_hidden: 128,
            rows: 5,
            cols: 2,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn page_size(&self) -> usize {
        self.rows * self.cols
    }

    /// Width of one slot vector fed to the page encoder.
    pub fn slot_dim(&self) -> usize {
        let a = &self.ablations;
        if a.no_embeddings {
            self.item_dim + self.n_categories + 3
        } else if a.no_category_feedback {
            self.item_emb
        } else {
            self.item_emb + self.cat_emb + self.fb_emb
        }
    }

    /// Width of the per-page vector fed to the session model.
    pub fn page_dim(&self) -> usize {
        if self.ablations.no_cnn {
            self.page_size() * self.slot_dim()
        } else {
            self.page_vec
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("item_dim", self.item_dim),
            ("n_categories", self.n_categories),
            ("item_emb", self.item_emb),
            ("cat_emb", self.cat_emb),
            ("fb_emb", self.fb_emb),
            ("hidden", self.hidden),
            ("page_vec", self.page_vec),
            ("action_vec", self.action_vec),
            ("critic_hidden", self.critic_hidden),
            ("rows", self.rows),
            ("cols", self.cols),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        PageConvConfig::standard(self.rows, self.cols, 1, 1).grid_shapes()?;
        Ok(())
    }
}

/// A session as seen by the encoder: pre-session history plus pages so far.
#[derive(Clone, Copy, Debug)]
pub struct SessionView<'a> {
    pub history: &'a [Item],
    pub pages: &'a [PageObservation],
}

/// Incremental encoder state for acting in a live session.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub s_ini: Tensor,
    /// One entry per observed page. Without a session GRU this records the
    /// state after each page instead.
    pub hiddens: Vec<Tensor>,
    pub s_cur: Tensor,
    page_sum: Option<Tensor>,
}

impl EncoderState {
    pub fn pages_seen(&self) -> usize {
        self.hiddens.len()
    }
}

fn mask_tensor(rows: usize, cols: usize, on: impl Fn(usize, usize) -> bool) -> Tensor {
    let data = (0..rows * cols).map(|i| if on(i / cols, i % cols) { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![rows, cols], data).expect("rows × cols entries")
}

/// `m ⊙ new + (1 − m) ⊙ old` with a `[B, 1]` 0/1 mask; exact for 0/1 entries.
fn blend(g: &mut Graph, old: Var, new: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(new);
    }
    if mask.iter().all(|&m| !m) {
        return Ok(old);
    }
    let m = Tensor::new(vec![mask.len(), 1], mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    let inv = Tensor::new(vec![mask.len(), 1], mask.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect())?;
    let (m, inv) = (g.constant(m), g.constant(inv));
    let a = g.mul(m, new)?;
    let b = g.mul(inv, old)?;
    g.add(a, b)
}

/// Encoder layers; weights live in the caller's [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct StateEncoder {
    cfg: ModelConfig,
    item_emb: Option<Embedding>,
    cat_emb: Option<Embedding>,
    fb_emb: Option<Embedding>,
    init_gru: Option<Gru>,
    page_conv: Option<PageConv>,
    session_gru: Option<Gru>,
    attention: Option<Attention>,
    summary: Option<Dense>,
}

impl StateEncoder {
    pub fn new(cfg: ModelConfig, set: &mut ParameterSet, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let a = cfg.ablations;
        let item_emb = if a.no_embeddings {
            None
        } else {
            Some(Embedding::new(set, "item_emb", cfg.item_dim, cfg.item_emb, rng)?)
        };
        let (cat_emb, fb_emb) = if a.no_embeddings || a.no_category_feedback {
            (None, None)
        } else {
            (
                Some(Embedding::new(set, "cat_emb", cfg.n_categories, cfg.cat_emb, rng)?),
                Some(Embedding::new(set, "fb_emb", 3, cfg.fb_emb, rng)?),
            )
        };
        let history_dim = if a.no_embeddings { cfg.item_dim } else { cfg.item_emb };
        let init_gru = if a.no_initial_gru {
            None
        } else {
            Some(Gru::new(set, "init_gru", history_dim, cfg.hidden, rng)?)
        };
        let page_conv = if a.no_cnn {
            None
        } else {
            let conv = PageConvConfig::standard(cfg.rows, cfg.cols, cfg.slot_dim(), cfg.page_vec);
            Some(PageConv::new(set, "page_conv", conv, rng)?)
        };
        let (session_gru, attention, summary) = if a.no_session_gru {
            (None, None, Some(Dense::new(set, "summary", cfg.hidden + cfg.page_dim(), cfg.hidden, rng)?))
        } else {
            let gru = Gru::new(set, "session_gru", cfg.page_dim(), cfg.hidden, rng)?;
            let att = if a.no_attention { None } else { Some(Attention::new(set, "attention", cfg.hidden, rng)?) };
            (Some(gru), att, None)
        };
        Ok(Self { cfg, item_emb, cat_emb, fb_emb, init_gru, page_conv, session_gru, attention, summary })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn item_embedding(&self) -> Option<&Embedding> {
        self.item_emb.as_ref()
    }

    pub fn attention(&self) -> Option<&Attention> {
        self.attention.as_ref()
    }

    fn raw_items(&self, items: &[&Item]) -> Result<Tensor> {
        let d = self.cfg.item_dim;
        let mut data = Vec::with_capacity(items.len() * d);
        for it in items {
            if it.embedding.len() != d {
                return Err(Error::shape("encode", format!("item {} has embedding dim {}, want {d}", it.id, it.embedding.len())));
            }
            data.extend_from_slice(&it.embedding);
        }
        Tensor::new(vec![items.len(), d], data)
    }

    fn embed_items(&self, g: &mut Graph, p: &Bound, items: &[&Item]) -> Result<Var> {
        let raw = g.constant(self.raw_items(items)?);
        match &self.item_emb {
            Some(e) => e.forward(g, p, raw),
            None => Ok(raw),
        }
    }

    /// Initial states `[B, hidden]`, one per history.
    pub fn initial_states(&self, g: &mut Graph, p: &Bound, histories: &[&[Item]]) -> Result<Var> {
        let b = histories.len();
        let h = self.cfg.hidden;
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        if histories.iter().any(|hist| hist.is_empty()) {
            return Err(Error::Empty("history"));
        }
        let zeros = g.constant(Tensor::zeros(vec![b, h]));
        let Some(gru) = &self.init_gru else { return Ok(zeros) };
        let flat: Vec<&Item> = histories.iter().flat_map(|hist| hist.iter()).collect();
        let emb = self.embed_items(g, p, &flat)?;
        let mut offsets = Vec::with_capacity(b);
        let mut acc = 0;
        for hist in histories {
            offsets.push(acc);
            acc += hist.len();
        }
        let max_len = histories.iter().map(|hist| hist.len()).max().unwrap_or(0);
        let mut state = zeros;
        for t in 0..max_len {
            let idx: Vec<usize> = (0..b).map(|i| offsets[i] + t.min(histories[i].len() - 1)).collect();
            let x = g.gather(emb, &idx)?;
            let next = gru.step(g, p, x, state)?;
            let mask: Vec<bool> = histories.iter().map(|hist| t < hist.len()).collect();
            state = blend(g, state, next, &mask)?;
        }
        Ok(state)
    }

    /// Slot vectors `[P·M, slot_dim]` for pages in order, slots row-major.
    pub fn slot_features(&self, g: &mut Graph, p: &Bound, pages: &[&PageObservation]) -> Result<Var> {
        let m = self.cfg.page_size();
        let k = self.cfg.n_categories;
        for page in pages {
            if page.len() != m {
                return Err(Error::InvalidPage(format!("page has {} slots, want {m}", page.len())));
            }
            if let Some(it) = page.items().iter().find(|it| it.category >= k) {
                return Err(Error::InvalidPage(format!("item {} has category {} >= {k}", it.id, it.category)));
            }
        }
        let items: Vec<&Item> = pages.iter().flat_map(|pg| pg.items()).collect();
        let cats: Vec<usize> = items.iter().map(|it| it.category).collect();
        let fbs: Vec<usize> = pages.iter().flat_map(|pg| pg.feedback()).map(|f| f.code() as usize).collect();
        if self.cfg.ablations.no_embeddings {
            let d = self.cfg.item_dim;
            let width = d + k + 3;
            let mut data = vec![0.0; items.len() * width];
            for (r, it) in items.iter().enumerate() {
                let row = &mut data[r * width..(r + 1) * width];
                row[..d].copy_from_slice(&it.embedding);
                row[d + cats[r]] = 1.0;
                row[d + k + fbs[r]] = 1.0;
            }
            return Ok(g.constant(Tensor::new(vec![items.len(), width], data)?));
        }
        let e = self.embed_items(g, p, &items)?;
        match (&self.cat_emb, &self.fb_emb) {
            (Some(ce), Some(fe)) => {
                let c = ce.lookup(g, p, &cats)?;
                let f = fe.lookup(g, p, &fbs)?;
                g.concat(&[e, c, f], 1)
            }
            _ => Ok(e),
        }
    }

    /// Page vectors `[P, page_dim]`.
    pub fn page_vectors(&self, g: &mut Graph, p: &Bound, pages: &[&PageObservation]) -> Result<Var> {
        if pages.is_empty() {
            return Err(Error::Empty("pages"));
        }
        let x = self.slot_features(g, p, pages)?;
        let n = pages.len();
        match &self.page_conv {
            Some(conv) => {
                let grid = g.reshape(x, vec![n, self.cfg.rows, self.cfg.cols, self.cfg.slot_dim()])?;
                conv.forward(g, p, grid)
            }
            None => g.reshape(x, vec![n, self.cfg.page_dim()]),
        }
    }

    /// Current-preference states `[B, hidden]` for a batch of sessions.
    pub fn encode_batch(&self, g: &mut Graph, p: &Bound, views: &[SessionView<'_>]) -> Result<Var> {
        let histories: Vec<&[Item]> = views.iter().map(|v| v.history).collect();
        let s_ini = self.initial_states(g, p, &histories)?;
        let b = views.len();
        let lens: Vec<usize> = views.iter().map(|v| v.pages.len()).collect();
        let max_t = lens.iter().copied().max().unwrap_or(0);
        if max_t == 0 {
            return Ok(s_ini);
        }
        let pages: Vec<&PageObservation> = views.iter().flat_map(|v| v.pages.iter()).collect();
        let pv = self.page_vectors(g, p, &pages)?;
        let mut offsets = Vec::with_capacity(b);
        let mut acc = 0;
        for &l in &lens {
            offsets.push(acc);
            acc += l;
        }
        let has_pages: Vec<bool> = lens.iter().map(|&l| l > 0).collect();

        if let Some(summary) = &self.summary {
            let n = pages.len();
            let mut avg = vec![0.0; b * n];
            for i in 0..b {
                for t in 0..lens[i] {
                    avg[i * n + offsets[i] + t] = 1.0 / lens[i] as f64;
                }
            }
            let avg = g.constant(Tensor::new(vec![b, n], avg)?);
            let mean = g.matmul(avg, pv)?;
            let joined = g.concat(&[s_ini, mean], 1)?;
            let z = summary.forward(g, p, joined)?;
            let s = g.tanh(z);
            return blend(g, s_ini, s, &has_pages);
        }

        let gru = self.session_gru.as_ref().expect("session GRU present unless ablated");
        let mut state = s_ini;
        let mut hiddens = Vec::with_capacity(max_t);
        for t in 0..max_t {
            let idx: Vec<usize> = (0..b).map(|i| if lens[i] == 0 { 0 } else { offsets[i] + t.min(lens[i] - 1) }).collect();
            let x = g.gather(pv, &idx)?;
            let next = gru.step(g, p, x, state)?;
            let mask: Vec<bool> = lens.iter().map(|&l| t < l).collect();
            state = blend(g, state, next, &mask)?;
            hiddens.push(state);
        }
        let pooled = match &self.attention {
            None => state,
            Some(att) => {
                let mask = if lens.iter().all(|&l| l == max_t) {
                    None
                } else {
                    Some(mask_tensor(b, max_t, |i, t| t < lens[i] || (lens[i] == 0 && t == 0)))
                };
                att.pool(g, p, &hiddens, mask.as_ref())?
            }
        };
        blend(g, s_ini, pooled, &has_pages)
    }

    /// Start a live session from its history.
    pub fn encode_initial(&self, params: &ParameterSet, history: &[Item]) -> Result<EncoderState> {
        let mut g = Graph::new();
        let p = g.bind_frozen(params);
        let s = self.initial_states(&mut g, &p, &[history])?;
        let s_ini = g.value(s).clone().reshape(vec![self.cfg.hidden])?;
        let page_sum = self.summary.as_ref().map(|_| Tensor::zeros(vec![self.cfg.page_dim()]));
        Ok(EncoderState { s_cur: s_ini.clone(), s_ini, hiddens: Vec::new(), page_sum })
    }

    /// Append one observed page.
    pub fn advance(&self, params: &ParameterSet, state: &EncoderState, page: &PageObservation) -> Result<EncoderState> {
        let h = self.cfg.hidden;
        let mut g = Graph::new();
        let p = g.bind_frozen(params);
        let pv = self.page_vectors(&mut g, &p, &[page])?;
        let s_ini = g.constant(state.s_ini.clone().reshape(vec![1, h])?);
        let mut next = state.clone();

        if let Some(summary) = &self.summary {
            let sum = state.page_sum.as_ref().expect("summary state");
            let mut sum = sum.clone();
            sum.add_assign(&g.value(pv).clone().reshape(vec![self.cfg.page_dim()])?);
            let n = state.hiddens.len() + 1;
            let mean = Tensor::new(vec![1, self.cfg.page_dim()], sum.data().iter().map(|v| v / n as f64).collect())?;
            let mean = g.constant(mean);
            let joined = g.concat(&[s_ini, mean], 1)?;
            let z = summary.forward(&mut g, &p, joined)?;
            let s = g.tanh(z);
            next.s_cur = g.value(s).clone().reshape(vec![h])?;
            // Averaging keeps no recurrent state; the current state doubles as
            // the per-page record so the page count stays observable.
            next.hiddens.push(next.s_cur.clone());
            next.page_sum = Some(sum);
            return Ok(next);
        }

        let gru = self.session_gru.as_ref().expect("session GRU present unless ablated");
        let prev = match state.hiddens.last() {
            Some(last) => g.constant(last.clone().reshape(vec![1, h])?),
            None => s_ini,
        };
        let hv = gru.step(&mut g, &p, pv, prev)?;
        next.hiddens.push(g.value(hv).clone().reshape(vec![h])?);
        next.s_cur = match &self.attention {
            None => next.hiddens.last().expect("just pushed").clone(),
            Some(att) => {
                let hs = next
                    .hiddens
                    .iter()
                    .map(|t| t.clone().reshape(vec![1, h]).map(|t| g.constant(t)))
                    .collect::<Result<Vec<_>>>()?;
                let pooled = att.pool(&mut g, &p, &hs, None)?;
                g.value(pooled).clone().reshape(vec![h])?
            }
        };
        Ok(next)
    }
}
