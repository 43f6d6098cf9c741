//! Independent re-implementations used as test oracles.
#![allow(dead_code)]

pub mod gradsuite;

use pagewise::actor::ProtoPage;
use pagewise::encoder::{Feedback, Item, PageObservation};
use pagewise::eval::ProtoActor;
use pagewise::tensor::Tensor;
use pagewise::Result;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(row-major matrix, rows, cols)`.
pub type Mat<'a> = (&'a [f64], usize, usize);

fn vec_mat(x: &[f64], (m, rows, cols): Mat<'_>) -> Vec<f64> {
    assert_eq!(x.len(), rows);
    (0..cols).map(|j| (0..rows).map(|i| x[i] * m[i * cols + j]).sum()).collect()
}

/// One GRU step for a single example, written out element by element:
/// `z = σ(xW_z + hU_z)`, `r = σ(xW_r + hU_r)`, `ĥ = tanh(xW + (r⊙h)U)`,
/// `h' = (1−z)⊙h + z⊙ĥ`. Weights in the order `w_z, u_z, w_r, u_r, w, u`.
pub fn gru_scalar(x: &[f64], h: &[f64], w: [Mat<'_>; 6]) -> Vec<f64> {
    let xz = vec_mat(x, w[0]);
    let hz = vec_mat(h, w[1]);
    let xr = vec_mat(x, w[2]);
    let hr = vec_mat(h, w[3]);
    let z: Vec<f64> = xz.iter().zip(&hz).map(|(a, b)| sigmoid(a + b)).collect();
    let r: Vec<f64> = xr.iter().zip(&hr).map(|(a, b)| sigmoid(a + b)).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let xw = vec_mat(x, w[4]);
    let rhu = vec_mat(&rh, w[5]);
    (0..h.len()).map(|j| (1.0 - z[j]) * h[j] + z[j] * (xw[j] + rhu[j]).tanh()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Exhaustive mapping: for each slot in order, scan every remaining item,
/// keep the highest cosine (smallest id on ties) and remove it.
pub fn brute_force_map(slots: &[Vec<f64>], pool: &[Item]) -> Vec<u32> {
    let mut remaining: Vec<&Item> = pool.iter().collect();
    let mut out = Vec::new();
    for s in slots {
        let mut best: Option<(usize, f64)> = None;
        for (i, it) in remaining.iter().enumerate() {
            let c = cosine(s, &it.embedding);
            best = match best {
                None => Some((i, c)),
                Some((j, bc)) if c > bc || (c == bc && it.id < remaining[j].id) => Some((i, c)),
                keep => keep,
            };
        }
        let (i, _) = best.expect("pool larger than page");
        out.push(remaining.remove(i).id);
    }
    out
}

pub fn precision_at(rel: &[bool], k: usize) -> f64 {
    let mut hits = 0;
    for i in 0..k {
        if i < rel.len() && rel[i] {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

pub fn recall_at(rel: &[bool], k: usize) -> Option<f64> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let hits = rel.iter().take(k).filter(|&&r| r).count();
    Some(hits as f64 / total as f64)
}

pub fn f1_at(rel: &[bool], k: usize) -> Option<f64> {
    let p = precision_at(rel, k);
    let r = recall_at(rel, k)?;
    Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Graded DCG over the first `k` gains divided by the DCG of the best
/// possible arrangement, found by trying every gain in every position greedily
/// from the largest down.
pub fn ndcg_at(gains: &[f64], k: usize) -> Option<f64> {
    if !gains.iter().any(|&g| g > 0.0) {
        return None;
    }
    let dcg = |gs: &[f64]| -> f64 {
        let mut s = 0.0;
        for (i, g) in gs.iter().take(k).enumerate() {
            s += g / (2.0 + i as f64).log2();
        }
        s
    };
    let mut pool = gains.to_vec();
    let mut ideal = Vec::new();
    while !pool.is_empty() {
        let (i, _) = pool.iter().enumerate().fold((0, f64::MIN), |b, (i, &g)| if g > b.1 { (i, g) } else { b });
        ideal.push(pool.remove(i));
    }
    Some(dcg(gains) / dcg(&ideal))
}

/// Average precision straight from the definition: mean over the relevant
/// positions `p` of precision@p.
pub fn average_precision(rel: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = (0..rel.len()).filter(|&i| rel[i]).collect();
    if positions.is_empty() {
        return None;
    }
    let s: f64 = positions.iter().map(|&p| precision_at(rel, p + 1)).sum();
    Some(s / positions.len() as f64)
}

/// Proposes, slot by slot, the embeddings of the session's still-unshown
/// relevant items (highest reward first); remaining slots are zero.
pub struct OracleActor {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub pending: Vec<Item>,
}

impl OracleActor {
    pub fn new(rows: usize, cols: usize, items: &[(Item, Feedback)]) -> Self {
        let mut rel: Vec<&(Item, Feedback)> = items.iter().filter(|(_, f)| f.is_positive()).collect();
        rel.sort_by(|a, b| b.1.reward().total_cmp(&a.1.reward()).then(a.0.id.cmp(&b.0.id)));
        let dim = items[0].0.embedding.len();
        Self { rows, cols, dim, pending: rel.into_iter().map(|(it, _)| it.clone()).collect() }
    }
}

impl ProtoActor for OracleActor {
    fn start(&mut self, _history: &[Item]) -> Result<()> {
        Ok(())
    }

    fn propose(&mut self) -> Result<ProtoPage> {
        let m = self.rows * self.cols;
        let mut data = vec![0.0; m * self.dim];
        for (slot, it) in self.pending.iter().take(m).enumerate() {
            data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(&it.embedding);
        }
        ProtoPage::new(Tensor::new(vec![self.rows, self.cols, self.dim], data)?)
    }

    fn observe(&mut self, page: &PageObservation) -> Result<()> {
        let shown: Vec<u32> = page.items().iter().map(|i| i.id).collect();
        self.pending.retain(|it| !shown.contains(&it.id));
        Ok(())
    }
}
