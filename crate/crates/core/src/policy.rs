//! Session-level recommendation policies and the two non-learned baselines.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::actor::ValidPage;
use crate::encoder::{Item, PageObservation};
use crate::error::{Error, Result};

/// A policy that fills one page at a time within a session.
pub trait PagePolicy {
    fn begin(&mut self, history: &[Item], session_seed: u64) -> Result<()>;
    fn next_page(&mut self) -> Result<ValidPage>;
    fn observe(&mut self, obs: &PageObservation) -> Result<()>;
}

/// Uniform sample of `page_size` distinct items from the whole catalog.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    items: Vec<Item>,
    page_size: usize,
    exclude_shown: bool,
    shown: HashSet<u32>,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    /// With `exclude_shown`, items already displayed in the session are not
    /// offered again (used for logging, where every logged item is distinct).
    pub fn new(items: Vec<Item>, page_size: usize, exclude_shown: bool) -> Self {
        Self { items, page_size, exclude_shown, shown: HashSet::new(), rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl PagePolicy for RandomPolicy {
    fn begin(&mut self, _history: &[Item], session_seed: u64) -> Result<()> {
        self.shown.clear();
        self.rng = ChaCha8Rng::seed_from_u64(session_seed);
        Ok(())
    }

    fn next_page(&mut self) -> Result<ValidPage> {
        let avail: Vec<&Item> = self.items.iter().filter(|it| !self.shown.contains(&it.id)).collect();
        if avail.len() < self.page_size {
            return Err(Error::PoolTooSmall { have: avail.len(), need: self.page_size });
        }
        let picked: Vec<Item> = sample(&mut self.rng, avail.len(), self.page_size).into_iter().map(|i| avail[i].clone()).collect();
        if self.exclude_shown {
            self.shown.extend(picked.iter().map(|it| it.id));
        }
        ValidPage::new(picked)
    }

    fn observe(&mut self, _obs: &PageObservation) -> Result<()> {
        Ok(())
    }
}

/// Items most cosine-similar to the mean of the history and every item
/// clicked or purchased so far, best first in row-major order.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    items: Vec<Item>,
    units: Vec<Vec<f64>>,
    page_size: usize,
    exclude_shown: bool,
    shown: HashSet<u32>,
    profile: Vec<f64>,
}

fn normalise(e: &[f64]) -> Vec<f64> {
    let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    e.iter().map(|v| v / n).collect()
}

impl GreedyPolicy {
    pub fn new(items: Vec<Item>, page_size: usize, exclude_shown: bool) -> Self {
        let units = items.iter().map(|it| normalise(&it.embedding)).collect();
        Self { items, units, page_size, exclude_shown, shown: HashSet::new(), profile: Vec::new() }
    }

    fn absorb(&mut self, it: &Item) {
        if self.profile.is_empty() {
            self.profile = vec![0.0; it.embedding.len()];
        }
        for (p, e) in self.profile.iter_mut().zip(it.embedding.iter()) {
            *p += e;
        }
    }
}

impl PagePolicy for GreedyPolicy {
    fn begin(&mut self, history: &[Item], _session_seed: u64) -> Result<()> {
        self.shown.clear();
        self.profile.clear();
        for it in history {
            self.absorb(it);
        }
        Ok(())
    }

    fn next_page(&mut self) -> Result<ValidPage> {
        // Scaling the summed profile does not change the cosine ranking.
        let mut scored: Vec<(f64, usize)> = self
            .units
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.shown.contains(&self.items[*i].id))
            .map(|(i, u)| (u.iter().zip(&self.profile).map(|(a, b)| a * b).sum(), i))
            .collect();
        if scored.len() < self.page_size {
            return Err(Error::PoolTooSmall { have: scored.len(), need: self.page_size });
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(self.items[a.1].id.cmp(&self.items[b.1].id)));
        let picked: Vec<Item> = scored[..self.page_size].iter().map(|&(_, i)| self.items[i].clone()).collect();
        if self.exclude_shown {
            self.shown.extend(picked.iter().map(|it| it.id));
        }
        ValidPage::new(picked)
    }

    fn observe(&mut self, obs: &PageObservation) -> Result<()> {
        for (it, fb) in obs.items().iter().zip(obs.feedback()) {
            if fb.is_positive() {
                self.absorb(it);
            }
        }
        Ok(())
    }
}
