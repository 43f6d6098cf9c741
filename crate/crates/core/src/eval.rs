//! Online test against the simulator, offline rerank of logged sessions and
//! ranking metrics.

use crate::actor::{map_slots, neighbours, recall_pool, CandidatePool, ProtoPage, ValidPage};
use crate::encoder::{EncoderState, Item, PageObservation};
use crate::env::{rollout, SessionRecord, Simulator};
use crate::error::{Error, Result};
use crate::policy::PagePolicy;
use crate::training::Agent;

pub use crate::policy::{GreedyPolicy, RandomPolicy};

/// A trained agent acting greedily (no exploration) over a recall pool.
pub struct AgentPolicy<'a> {
    agent: &'a Agent,
    space: CandidatePool,
    recall_k: usize,
    state: Option<EncoderState>,
    pool: CandidatePool,
}

impl<'a> AgentPolicy<'a> {
    pub fn new(agent: &'a Agent, catalog: &[Item], recall_k: usize) -> Result<Self> {
        Ok(Self { agent, space: CandidatePool::new(catalog.iter().cloned())?, recall_k, state: None, pool: CandidatePool::default() })
    }
}

impl PagePolicy for AgentPolicy<'_> {
    fn begin(&mut self, history: &[Item], _session_seed: u64) -> Result<()> {
        self.state = Some(self.agent.encode_initial(history)?);
        let items: Vec<Item> = self.space.items().cloned().collect();
        self.pool = recall_pool(history, &[], &items, self.recall_k)?;
        Ok(())
    }

    fn next_page(&mut self) -> Result<ValidPage> {
        let state = self.state.as_ref().ok_or(Error::Empty("session not started"))?;
        Ok(self.agent.act(state, &self.pool)?.1)
    }

    fn observe(&mut self, obs: &PageObservation) -> Result<()> {
        let state = self.state.as_ref().ok_or(Error::Empty("session not started"))?;
        self.state = Some(self.agent.advance(state, obs)?);
        for (it, f) in obs.items().iter().zip(obs.feedback()) {
            if f.is_positive() {
                self.pool.extend(neighbours(it, &self.space, self.recall_k)?)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineReport {
    pub session_rewards: Vec<f64>,
}

impl OnlineReport {
    pub fn mean(&self) -> f64 {
        if self.session_rewards.is_empty() {
            0.0
        } else {
            self.session_rewards.iter().sum::<f64>() / self.session_rewards.len() as f64
        }
    }
}

/// Play users `first..first + n_sessions` of `sim` for `session_len` pages
/// each; no learning happens.
pub fn online_test(policy: &mut dyn PagePolicy, sim: &Simulator, first: u64, n_sessions: usize, session_len: usize) -> Result<OnlineReport> {
    let mut session_rewards = Vec::with_capacity(n_sessions);
    for i in 0..n_sessions as u64 {
        let idx = first + i;
        let (mut user, history) = sim.user(idx)?;
        let rec = rollout(policy, &mut user, &history, session_len, sim.seed.wrapping_add(idx))
            .map_err(|e| Error::Env { session: idx as usize, source: Box::new(e) })?;
        session_rewards.push(rec.total_reward());
    }
    Ok(OnlineReport { session_rewards })
}

/// Anything that turns observed session state into proto pages. It sees the
/// history and the per-page feedback but never the logged rewards.
pub trait ProtoActor {
    fn start(&mut self, history: &[Item]) -> Result<()>;
    fn propose(&mut self) -> Result<ProtoPage>;
    fn observe(&mut self, page: &PageObservation) -> Result<()>;
}

pub struct AgentActor<'a> {
    agent: &'a Agent,
    state: Option<EncoderState>,
}

impl<'a> AgentActor<'a> {
    pub fn new(agent: &'a Agent) -> Self {
        Self { agent, state: None }
    }
}

impl ProtoActor for AgentActor<'_> {
    fn start(&mut self, history: &[Item]) -> Result<()> {
        self.state = Some(self.agent.encode_initial(history)?);
        Ok(())
    }

    fn propose(&mut self) -> Result<ProtoPage> {
        self.agent.decode(self.state.as_ref().ok_or(Error::Empty("session not started"))?)
    }

    fn observe(&mut self, page: &PageObservation) -> Result<()> {
        let state = self.state.as_ref().ok_or(Error::Empty("session not started"))?;
        self.state = Some(self.agent.advance(state, page)?);
        Ok(())
    }
}

/// Reordered session items with their logged rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub ids: Vec<u32>,
    pub rewards: Vec<f64>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Rerank a logged session's own items page by page. The state advances
/// with each new page and the logged feedback of the items on it.
pub fn offline_rerank(session: &SessionRecord, actor: &mut dyn ProtoActor, page_size: usize) -> Result<RankedList> {
    let items = session.item_set();
    if items.is_empty() {
        return Err(Error::Empty("session items"));
    }
    let feedback: std::collections::HashMap<u32, crate::encoder::Feedback> = items.iter().map(|(it, f)| (it.id, *f)).collect();
    let mut remaining = CandidatePool::new(items.iter().map(|(it, _)| it.clone()))?;
    actor.start(&session.history)?;
    let mut out = RankedList { ids: Vec::with_capacity(items.len()), rewards: Vec::with_capacity(items.len()) };
    while !remaining.is_empty() {
        let proto = actor.propose()?;
        let count = remaining.len().min(page_size);
        let page = map_slots(&proto, &remaining, count)?;
        let fb: Vec<_> = page.items().iter().map(|it| feedback[&it.id]).collect();
        for (it, f) in page.items().iter().zip(&fb) {
            out.ids.push(it.id);
            out.rewards.push(f.reward());
            remaining.remove(it.id);
        }
        if count == page_size && !remaining.is_empty() {
            actor.observe(&page.observe(fb)?)?;
        }
    }
    Ok(out)
}

/// Per-list metrics; `None` where the list has no relevant item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ListMetrics {
    pub precision: f64,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub ndcg: Option<f64>,
    pub ap: Option<f64>,
}

/// Relevance is `reward > 0`; NDCG uses the reward as graded gain with a
/// `log2(rank + 1)` discount.
pub fn compute_metrics(ranked: &RankedList, k: usize) -> ListMetrics {
    let rel: Vec<bool> = ranked.rewards.iter().map(|&r| r > 0.0).collect();
    let total_rel = rel.iter().filter(|&&r| r).count();
    let k_eff = k.min(rel.len());
    let hits = rel[..k_eff].iter().filter(|&&r| r).count();
    let precision = if k == 0 { 0.0 } else { hits as f64 / k as f64 };
    if total_rel == 0 {
        return ListMetrics { precision, recall: None, f1: None, ndcg: None, ap: None };
    }
    let recall = hits as f64 / total_rel as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked.rewards[..k_eff].iter().enumerate().map(|(i, &g)| g * discount(i)).sum();
    let mut ideal = ranked.rewards.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal[..k_eff].iter().enumerate().map(|(i, &g)| g * discount(i)).sum();
    let mut seen = 0;
    let mut ap = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            seen += 1;
            ap += seen as f64 / (i + 1) as f64;
        }
    }
    ListMetrics { precision, recall: Some(recall), f1: Some(f1), ndcg: Some(dcg / idcg), ap: Some(ap / total_rel as f64) }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub map: f64,
    pub mean_reward: f64,
    pub sessions: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Average metrics over lists, skipping undefined entries.
pub fn aggregate(lists: &[ListMetrics], session_rewards: &[f64]) -> MetricReport {
    let n = lists.len().max(1) as f64;
    MetricReport {
        precision: lists.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: mean_defined(lists.iter().map(|m| m.recall)),
        f1: mean_defined(lists.iter().map(|m| m.f1)),
        ndcg: mean_defined(lists.iter().map(|m| m.ndcg)),
        map: mean_defined(lists.iter().map(|m| m.ap)),
        mean_reward: if session_rewards.is_empty() { 0.0 } else { session_rewards.iter().sum::<f64>() / session_rewards.len() as f64 },
        sessions: lists.len(),
    }
}

/// Rerank every session and report metrics at `k`.
pub fn offline_evaluate(sessions: &[SessionRecord], actor: &mut dyn ProtoActor, page_size: usize, k: usize) -> Result<MetricReport> {
    let mut lists = Vec::with_capacity(sessions.len());
    for s in sessions {
        lists.push(compute_metrics(&offline_rerank(s, actor, page_size)?, k));
    }
    let rewards: Vec<f64> = sessions.iter().map(SessionRecord::total_reward).collect();
    Ok(aggregate(&lists, &rewards))
}

pub const REPORT_COLUMNS: &str = "model,precision@20,recall@20,f1@20,ndcg@20,map";

pub fn report_row(label: &str, r: &MetricReport) -> String {
    format!("{label},{:.6},{:.6},{:.6},{:.6},{:.6}", r.precision, r.recall, r.f1, r.ndcg, r.map)
}

/// Fixed-width table in the same column order as the CSV.
pub fn report_table(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!("{:<12} {:>12} {:>10} {:>9} {:>9} {:>9}\n", "model", "precision@20", "recall@20", "f1@20", "ndcg@20", "map");
    for (label, r) in rows {
        s.push_str(&format!(
            "{:<12} {:>12.4} {:>10.4} {:>9.4} {:>9.4} {:>9.4}\n",
            label, r.precision, r.recall, r.f1, r.ndcg, r.map
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(rewards: &[f64]) -> RankedList {
        RankedList { ids: (0..rewards.len() as u32).collect(), rewards: rewards.to_vec() }
    }

    #[test]
    fn perfect_ranking() {
        let m = compute_metrics(&list(&[5.0, 1.0, 1.0, 0.0, 0.0]), 20);
        assert_eq!(m.ndcg, Some(1.0));
        assert_eq!(m.ap, Some(1.0));
        assert_eq!(m.recall, Some(1.0));
    }

    #[test]
    fn two_relevant_of_twenty() {
        let mut r = vec![0.0; 20];
        r[0] = 1.0;
        r[1] = 5.0;
        let m = compute_metrics(&list(&r), 20);
        assert!((m.precision - 0.1).abs() < 1e-15);
        assert_eq!(m.recall, Some(1.0));
    }

    #[test]
    fn no_relevant_items_are_skipped() {
        let m = compute_metrics(&list(&[0.0; 8]), 20);
        assert_eq!(m.precision, 0.0);
        assert_eq!((m.recall, m.ap, m.ndcg), (None, None, None));
        let rep = aggregate(&[m, compute_metrics(&list(&[1.0, 0.0]), 20)], &[]);
        assert_eq!(rep.map, 1.0);
        assert!((rep.precision - 0.025).abs() < 1e-15);
    }

    #[test]
    fn swapping_relevant_upward_never_lowers_ndcg() {
        let base = [0.0, 1.0, 0.0, 5.0, 0.0, 1.0];
        let before = compute_metrics(&list(&base), 4).ndcg.unwrap();
        let mut swapped = base;
        swapped.swap(2, 3);
        assert!(compute_metrics(&list(&swapped), 4).ndcg.unwrap() >= before);
    }
}
