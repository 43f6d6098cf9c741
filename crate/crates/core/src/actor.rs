//! Policy side: decode a state into a proto page and map it onto real items.

use std::collections::BTreeMap;

use rand::Rng;

use crate::encoder::{EncoderState, Feedback, Item, ModelConfig, PageObservation};
use crate::error::{Error, Result};
use crate::nn::{Dense, PageConvConfig, PageDeconv};
use crate::tensor::{Bound, Graph, ParameterSet, Tensor, Var};

/// Continuous page of proto item embeddings, `[rows, cols, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtoPage {
    grid: Tensor,
}

impl ProtoPage {
    pub fn new(grid: Tensor) -> Result<Self> {
        if grid.shape().len() != 3 {
            return Err(Error::shape("proto_page", format!("expected [rows, cols, dim], got {:?}", grid.shape())));
        }
        if grid.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPage("proto page has non-finite entries".into()));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn into_grid(self) -> Tensor {
        self.grid
    }

    pub fn slots(&self) -> usize {
        self.grid.shape()[0] * self.grid.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.grid.shape()[2]
    }

    /// Proto embedding of slot `m` (row-major).
    pub fn slot(&self, m: usize) -> &[f64] {
        let d = self.dim();
        &self.grid.data()[m * d..(m + 1) * d]
    }
}

/// Real items in row-major slot order. A final rerank page may hold fewer
/// than `rows × cols` items.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidPage {
    items: Vec<Item>,
}

impl ValidPage {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let mut ids: Vec<u32> = items.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPage("duplicate item on page".into()));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Raw item embeddings as a `[rows, cols, dim]` grid.
    pub fn grid(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if self.items.len() != rows * cols {
            return Err(Error::InvalidPage(format!("{} items do not fill a {rows}x{cols} page", self.items.len())));
        }
        let d = self.items.first().map_or(0, |i| i.embedding.len());
        let data = self.items.iter().flat_map(|i| i.embedding.iter().copied()).collect();
        Tensor::new(vec![rows, cols, d], data)
    }

    pub fn observe(&self, feedback: Vec<Feedback>) -> Result<PageObservation> {
        PageObservation::new(self.items.clone(), feedback)
    }
}

/// Items eligible for recommendation, ordered by id, with unit embeddings.
#[derive(Clone, Debug, Default)]
pub struct CandidatePool {
    items: BTreeMap<u32, (Item, Vec<f64>)>,
}

fn unit(e: &[f64]) -> Option<Vec<f64>> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| e.iter().map(|v| v / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CandidatePool {
    pub fn new(items: impl IntoIterator<Item = Item>) -> Result<Self> {
        let mut pool = Self::default();
        pool.extend(items)?;
        Ok(pool)
    }

    /// Add items not already present.
    pub fn extend(&mut self, items: impl IntoIterator<Item = Item>) -> Result<()> {
        for it in items {
            if self.items.contains_key(&it.id) {
                continue;
            }
            let u = unit(&it.embedding).ok_or_else(|| Error::InvalidPage(format!("item {} has zero norm", it.id)))?;
            self.items.insert(it.id, (it, u));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.items.contains_key(&id)
    }

    pub fn remove(&mut self, id: u32) -> Option<Item> {
        self.items.remove(&id).map(|(it, _)| it)
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.items.values().map(|(it, _)| it)
    }

    pub fn unit_embedding(&self, id: u32) -> Option<&[f64]> {
        self.items.get(&id).map(|(_, u)| u.as_slice())
    }
}

/// Pool item with the highest `proto · e/‖e‖`; ties go to the smallest id.
pub fn nearest_item<'p>(proto: &[f64], pool: &'p CandidatePool) -> Result<&'p Item> {
    let mut best: Option<(&Item, f64)> = None;
    for (it, u) in pool.items.values() {
        let s = dot(proto, u);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((it, s));
        }
    }
    best.map(|(it, _)| it).ok_or(Error::Empty("candidate pool"))
}

/// Map the first `count` slots of `proto`, row-major, each to its nearest
/// still-unused pool item.
pub fn map_slots(proto: &ProtoPage, pool: &CandidatePool, count: usize) -> Result<ValidPage> {
    if count > proto.slots() {
        return Err(Error::InvalidPage(format!("{count} slots requested from a {}-slot page", proto.slots())));
    }
    if pool.len() < count {
        return Err(Error::PoolTooSmall { have: pool.len(), need: count });
    }
    if let Some((it, _)) = pool.items.values().find(|(it, _)| it.embedding.len() != proto.dim()) {
        return Err(Error::shape("map_to_valid", format!("item {} dim {} vs proto dim {}", it.id, it.embedding.len(), proto.dim())));
    }
    let entries: Vec<(&Item, &[f64])> = pool.items.values().map(|(it, u)| (it, u.as_slice())).collect();
    let mut used = vec![false; entries.len()];
    let mut out = Vec::with_capacity(count);
    for m in 0..count {
        let slot = proto.slot(m);
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, u)) in entries.iter().enumerate() {
            if used[i] {
                continue;
            }
            let s = dot(slot, u);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.expect("pool larger than slot count");
        used[i] = true;
        out.push(entries[i].0.clone());
    }
    Ok(ValidPage { items: out })
}

/// Full-page mapping; the pool must hold at least one item per slot.
pub fn map_to_valid(proto: &ProtoPage, pool: &CandidatePool) -> Result<ValidPage> {
    map_slots(proto, pool, proto.slots())
}

/// Union of the `k` most cosine-similar items of `full_space` around every
/// anchor in `history` and `clicked`.
pub fn recall_pool(history: &[Item], clicked: &[Item], full_space: &[Item], k: usize) -> Result<CandidatePool> {
    if full_space.is_empty() {
        return Err(Error::Empty("item space"));
    }
    if k == 0 {
        return Err(Error::Config("recall size k must be at least 1".into()));
    }
    let space = CandidatePool::new(full_space.iter().cloned())?;
    let mut pool = CandidatePool::default();
    for anchor in history.iter().chain(clicked) {
        pool.extend(neighbours(anchor, &space, k)?)?;
    }
    Ok(pool)
}

/// The `k` items of `space` most cosine-similar to `anchor`, ties by id.
pub fn neighbours(anchor: &Item, space: &CandidatePool, k: usize) -> Result<Vec<Item>> {
    let a = unit(&anchor.embedding).ok_or_else(|| Error::InvalidPage(format!("item {} has zero norm", anchor.id)))?;
    let mut scored: Vec<(f64, &Item)> = space.items.values().map(|(it, u)| (dot(&a, u), it)).collect();
    // Stable sort keeps id order among equal scores.
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(scored.into_iter().take(k).map(|(_, it)| it.clone()).collect())
}

/// Decoder from state to proto page: deconvolution stack, or one dense layer
/// in the dense-decoder ablation.
#[derive(Clone, Debug)]
pub struct Decoder {
    rows: usize,
    cols: usize,
    dim: usize,
    deconv: Option<PageDeconv>,
    dense: Option<Dense>,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, set: &mut ParameterSet, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (rows, cols, dim) = (cfg.rows, cfg.cols, cfg.item_dim);
        if cfg.ablations.dense_decoder {
            let dense = Dense::new(set, "decoder.fc", cfg.hidden, rows * cols * dim, rng)?;
            return Ok(Self { rows, cols, dim, deconv: None, dense: Some(dense) });
        }
        let mirror = PageConvConfig::standard(rows, cols, dim, cfg.hidden);
        let deconv = PageDeconv::new(set, "decoder", &mirror, cfg.hidden, dim, rng)?;
        Ok(Self { rows, cols, dim, deconv: Some(deconv), dense: None })
    }

    /// `[B, hidden]` states to `[B, rows, cols, dim]` proto grids.
    pub fn forward(&self, g: &mut Graph, p: &Bound, s: Var) -> Result<Var> {
        match (&self.deconv, &self.dense) {
            (Some(d), _) => d.forward(g, p, s),
            (None, Some(fc)) => {
                let b = match *g.shape(s) {
                    [b, _] => b,
                    ref sh => return Err(Error::shape("decode", format!("expected [batch, {}], got {sh:?}", fc.in_dim))),
                };
                let z = fc.forward(g, p, s)?;
                let z = g.tanh(z);
                g.reshape(z, vec![b, self.rows, self.cols, self.dim])
            }
            (None, None) => unreachable!("one decoder head is always built"),
        }
    }

    pub fn decode(&self, params: &ParameterSet, s_cur: &Tensor) -> Result<ProtoPage> {
        let mut g = Graph::new();
        let p = g.bind_frozen(params);
        let n = s_cur.len();
        let s = g.constant(s_cur.clone().reshape(vec![1, n])?);
        let out = self.forward(&mut g, &p, s)?;
        ProtoPage::new(g.value(out).clone().reshape(vec![self.rows, self.cols, self.dim])?)
    }

    pub fn act(&self, params: &ParameterSet, state: &EncoderState, pool: &CandidatePool) -> Result<(ProtoPage, ValidPage)> {
        let proto = self.decode(params, &state.s_cur)?;
        let valid = map_to_valid(&proto, pool)?;
        Ok((proto, valid))
    }
}
