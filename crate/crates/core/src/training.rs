//! DDPG training: replay buffer, target networks and the online and offline
//! loops.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::actor::{map_to_valid, neighbours, recall_pool, CandidatePool, Decoder, ProtoPage, ValidPage};
use crate::critic::Critic;
use crate::encoder::{EncoderState, Feedback, Item, ModelConfig, PageObservation, SessionView, StateEncoder};
use crate::env::{SessionRecord, Simulator};
use crate::error::{Error, Result};
use crate::tensor::{soft_update, AdamState, Checkpoint, Graph, ParameterSet, Tensor};

/// Page reward: skip 0, click 1, purchase 5 per item.
pub fn compute_reward(page: &ValidPage, feedback: &[Feedback]) -> Result<f64> {
    if page.len() != feedback.len() {
        return Err(Error::InvalidPage(format!("{} items but {} feedback entries", page.len(), feedback.len())));
    }
    Ok(feedback.iter().map(|f| f.reward()).sum())
}

/// `(s, a, r, s')` where `s` is the session before page `t` and `s'` the
/// session including it; the action is the items of page `t`.
#[derive(Clone, Debug)]
pub struct Transition {
    pub history: Arc<Vec<Item>>,
    pub pages: Arc<Vec<PageObservation>>,
    pub t: usize,
    pub reward: f64,
}

impl Transition {
    pub fn new(history: Arc<Vec<Item>>, pages: Arc<Vec<PageObservation>>, t: usize, reward: f64) -> Result<Self> {
        if t >= pages.len() {
            return Err(Error::InvalidPage(format!("step {t} of a {}-page snapshot", pages.len())));
        }
        Ok(Self { history, pages, t, reward })
    }

    pub fn state(&self) -> SessionView<'_> {
        SessionView { history: &self.history, pages: &self.pages[..self.t] }
    }

    pub fn next_state(&self) -> SessionView<'_> {
        SessionView { history: &self.history, pages: &self.pages[..=self.t] }
    }

    pub fn action(&self) -> &PageObservation {
        &self.pages[self.t]
    }
}

/// Bounded FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, rng: &mut impl Rng, n: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<&Transition> {
        self.sample_indices(rng, n).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (sgd or adam)"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub align_lr: f64,
    pub noise_start: f64,
    pub noise_end: f64,
    pub capacity: usize,
    pub session_len: usize,
    pub recall_k: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Rewards are multiplied by this before entering the critic targets.
    pub reward_scale: f64,
    pub max_grad_norm: Option<f64>,
    pub optimizer: Optimizer,
    /// Also take the alignment step during online training.
    pub align_online: bool,
    /// Evaluate target Q at the mapped page instead of the proto page.
    pub map_targets: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.01,
            batch: 32,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            align_lr: 1e-4,
            noise_start: 0.2,
            noise_end: 0.0,
            capacity: 10_000,
            session_len: 10,
            recall_k: 25,
            warmup: 32,
            reward_scale: 1.0,
            max_grad_norm: None,
            optimizer: Optimizer::Sgd,
            align_online: false,
            map_targets: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch == 0 || self.capacity == 0 || self.recall_k == 0 {
            return Err(Error::Config("batch, capacity and recall_k must be positive".into()));
        }
        for (name, v) in [("critic_lr", self.critic_lr), ("actor_lr", self.actor_lr), ("align_lr", self.align_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return Err(Error::Config("exploration noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Linearly decaying exploration scale for session `g` of `total`.
    pub fn noise_at(&self, g: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.noise_start;
        }
        let f = g as f64 / (total - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * f
    }
}

/// Encoder, decoder and critic with their target copies.
#[derive(Clone, Debug)]
pub struct Agent {
    pub model: ModelConfig,
    pub encoder: StateEncoder,
    pub decoder: Decoder,
    pub critic: Critic,
    pub enc: ParameterSet,
    pub dec: ParameterSet,
    pub crit: ParameterSet,
    pub enc_target: ParameterSet,
    pub dec_target: ParameterSet,
    pub crit_target: ParameterSet,
    moments: Moments,
}

/// Adam moments, one per kind of update.
#[derive(Clone, Debug, Default)]
struct Moments {
    enc: AdamState,
    crit: AdamState,
    actor: AdamState,
    align: AdamState,
}

const SECTIONS: [&str; 6] = ["encoder", "decoder", "critic", "encoder_target", "decoder_target", "critic_target"];

impl Agent {
    pub fn new(model: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut enc, mut dec, mut crit) = (ParameterSet::new(), ParameterSet::new(), ParameterSet::new());
        let encoder = StateEncoder::new(model.clone(), &mut enc, &mut rng)?;
        let decoder = Decoder::new(&model, &mut dec, &mut rng)?;
        let critic = Critic::new(&model, &mut crit, &mut rng)?;
        Ok(Self {
            model,
            encoder,
            decoder,
            critic,
            enc_target: enc.clone(),
            dec_target: dec.clone(),
            crit_target: crit.clone(),
            enc,
            dec,
            crit,
            moments: Moments::default(),
        })
    }

    fn sets(&self) -> [&ParameterSet; 6] {
        [&self.enc, &self.dec, &self.crit, &self.enc_target, &self.dec_target, &self.crit_target]
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(seed);
        for (name, set) in SECTIONS.iter().zip(self.sets()) {
            ck.add_section(name, set);
        }
        ck
    }

    /// Rebuild an agent for `model` and overwrite its weights from `ck`.
    pub fn from_checkpoint(model: ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let mut agent = Self::new(model, ck.seed)?;
        let [a, b, c, d, e, f] = SECTIONS.map(|s| ck.section(s));
        agent.enc.copy_from(&a?)?;
        agent.dec.copy_from(&b?)?;
        agent.crit.copy_from(&c?)?;
        agent.enc_target.copy_from(&d?)?;
        agent.dec_target.copy_from(&e?)?;
        agent.crit_target.copy_from(&f?)?;
        let expected: usize = agent.sets().iter().map(|s| s.len()).sum();
        if expected != ck.params.len() {
            return Err(Error::Checkpoint(format!("checkpoint has {} tensors, model has {expected}", ck.params.len())));
        }
        Ok(agent)
    }

    pub fn encode_initial(&self, history: &[Item]) -> Result<EncoderState> {
        self.encoder.encode_initial(&self.enc, history)
    }

    pub fn advance(&self, state: &EncoderState, page: &PageObservation) -> Result<EncoderState> {
        self.encoder.advance(&self.enc, state, page)
    }

    pub fn decode(&self, state: &EncoderState) -> Result<ProtoPage> {
        self.decoder.decode(&self.dec, &state.s_cur)
    }

    pub fn act(&self, state: &EncoderState, pool: &CandidatePool) -> Result<(ProtoPage, ValidPage)> {
        self.decoder.act(&self.dec, state, pool)
    }
}

fn action_grids(model: &ModelConfig, batch: &[&Transition]) -> Result<Tensor> {
    let (r, c, d) = (model.rows, model.cols, model.item_dim);
    let mut data = Vec::with_capacity(batch.len() * r * c * d);
    for t in batch {
        let items = t.action().items();
        if items.len() != r * c {
            return Err(Error::InvalidPage(format!("action page has {} items, want {}", items.len(), r * c)));
        }
        for it in items {
            data.extend_from_slice(&it.embedding);
        }
    }
    Tensor::new(vec![batch.len(), r, c, d], data)
}

/// `y = scale · r + γ · Q'(s', f'(s'))` from the target networks, as plain
/// numbers: nothing downstream can differentiate through them. With a pool,
/// `f'(s')` is replaced by its mapping onto that pool.
pub fn td_targets(agent: &Agent, batch: &[&Transition], cfg: &TrainerConfig, pool: Option<&CandidatePool>) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut g = Graph::new();
    let pe = g.bind_frozen(&agent.enc_target);
    let pd = g.bind_frozen(&agent.dec_target);
    let pc = g.bind_frozen(&agent.crit_target);
    let views: Vec<SessionView> = batch.iter().map(|t| t.next_state()).collect();
    let s2 = agent.encoder.encode_batch(&mut g, &pe, &views)?;
    let mut a2 = agent.decoder.forward(&mut g, &pd, s2)?;
    if let Some(pool) = pool {
        let mapped = mapped_grids(&agent.model, g.value(a2), pool)?;
        a2 = g.constant(mapped);
    }
    let q2 = agent.critic.q_of_grid(&mut g, &pc, s2, a2)?;
    Ok(batch.iter().zip(g.value(q2).data()).map(|(t, q)| cfg.reward_scale * t.reward + cfg.gamma * q).collect())
}

/// Mean squared TD error of the online critic against fixed targets `y`.
/// Returns the graph so the caller can backpropagate.
struct CriticPass {
    graph: Graph,
    enc: crate::tensor::Bound,
    crit: crate::tensor::Bound,
    loss: crate::tensor::Var,
    states: Tensor,
}

fn critic_pass(agent: &Agent, batch: &[&Transition], y: &[f64]) -> Result<CriticPass> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let b = batch.len();
    let mut g = Graph::new();
    let pe = g.bind(&agent.enc);
    let pc = g.bind(&agent.crit);
    let views: Vec<SessionView> = batch.iter().map(|t| t.state()).collect();
    let s = agent.encoder.encode_batch(&mut g, &pe, &views)?;
    let grid = g.constant(action_grids(&agent.model, batch)?);
    let q = agent.critic.q_of_grid(&mut g, &pc, s, grid)?;
    let y = g.constant(Tensor::new(vec![b, 1], y.to_vec())?);
    let diff = g.sub(y, q)?;
    let sq = g.frobenius_sq(diff);
    let loss = g.scale(sq, 1.0 / b as f64);
    let states = g.value(s).clone();
    Ok(CriticPass { graph: g, enc: pe, crit: pc, loss, states })
}

/// Critic loss value on `batch` without updating anything.
pub fn critic_loss(agent: &Agent, batch: &[&Transition], cfg: &TrainerConfig) -> Result<f64> {
    let y = td_targets(agent, batch, cfg, None)?;
    let pass = critic_pass(agent, batch, &y)?;
    pass.graph.value(pass.loss).item()
}

/// Squared Frobenius distance between proto and valid grids, summed over the batch.
pub fn alignment_loss(g: &mut Graph, proto: crate::tensor::Var, valid: crate::tensor::Var) -> Result<crate::tensor::Var> {
    if g.shape(proto) != g.shape(valid) {
        return Err(Error::shape("alignment_loss", format!("{:?} vs {:?}", g.shape(proto), g.shape(valid))));
    }
    let d = g.sub(proto, valid)?;
    Ok(g.frobenius_sq(d))
}

fn step(set: &mut ParameterSet, moments: &mut AdamState, lr: f64, cfg: &TrainerConfig) -> Result<()> {
    if let Some(c) = cfg.max_grad_norm {
        set.clip_grad_norm(c);
    }
    match cfg.optimizer {
        Optimizer::Sgd => set.sgd_step(lr),
        Optimizer::Adam => set.adam_step(moments, lr),
    }
}

/// One decoder step on `−mean Q(s, compress(decode(s)))` with states held
/// fixed. Returns the mean Q before the step.
pub fn actor_update(agent: &mut Agent, states: &Tensor, cfg: &TrainerConfig) -> Result<f64> {
    let b = states.shape()[0];
    let mut g = Graph::new();
    let pd = g.bind(&agent.dec);
    let pc = g.bind_frozen(&agent.crit);
    let s = g.constant(states.clone());
    let proto = agent.decoder.forward(&mut g, &pd, s)?;
    let q = agent.critic.q_of_grid(&mut g, &pc, s, proto)?;
    let total = g.sum(q);
    let loss = g.scale(total, -1.0 / b as f64);
    let mean_q = g.value(total).item()? / b as f64;
    g.backward(loss)?;
    agent.dec.accumulate_grads(&g, &pd)?;
    step(&mut agent.dec, &mut agent.moments.actor, cfg.actor_lr, cfg)?;
    Ok(mean_q)
}

/// Where the alignment step pulls the proto pages.
#[derive(Clone, Copy, Debug)]
pub enum Alignment<'a> {
    Off,
    /// Toward the pages stored in the transitions (offline logs).
    Logged,
    /// Toward each proto page's own mapping onto this pool.
    Mapped(&'a CandidatePool),
}

fn mapped_grids(model: &ModelConfig, proto: &Tensor, pool: &CandidatePool) -> Result<Tensor> {
    let (r, c, d) = (model.rows, model.cols, model.item_dim);
    let slot = r * c * d;
    let mut data = Vec::with_capacity(proto.len());
    for row in proto.data().chunks(slot) {
        let page = ProtoPage::new(Tensor::new(vec![r, c, d], row.to_vec())?)?;
        data.extend(map_to_valid(&page, pool)?.grid(r, c)?.into_data());
    }
    Tensor::new(proto.shape().to_vec(), data)
}

/// One decoder step on the alignment loss. Returns the loss before the step,
/// or `None` when alignment is off.
pub fn alignment_update(
    agent: &mut Agent,
    states: &Tensor,
    batch: &[&Transition],
    target: Alignment<'_>,
    cfg: &TrainerConfig,
) -> Result<Option<f64>> {
    if let Alignment::Off = target {
        return Ok(None);
    }
    let mut g = Graph::new();
    let pd = g.bind(&agent.dec);
    let s = g.constant(states.clone());
    let proto = agent.decoder.forward(&mut g, &pd, s)?;
    let valid = match target {
        Alignment::Off => unreachable!(),
        Alignment::Logged => action_grids(&agent.model, batch)?,
        Alignment::Mapped(pool) => mapped_grids(&agent.model, g.value(proto), pool)?,
    };
    let valid = g.constant(valid);
    let loss = alignment_loss(&mut g, proto, valid)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    agent.dec.accumulate_grads(&g, &pd)?;
    step(&mut agent.dec, &mut agent.moments.align, cfg.align_lr, cfg)?;
    Ok(Some(value))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub align_loss: Option<f64>,
}

/// One training iteration on `batch`: optional alignment step, critic step,
/// actor step, then soft updates of all three target sets.
pub fn ddpg_update(
    agent: &mut Agent,
    batch: &[&Transition],
    cfg: &TrainerConfig,
    align: Alignment<'_>,
    target_pool: Option<&CandidatePool>,
) -> Result<UpdateStats> {
    let y = td_targets(agent, batch, cfg, target_pool)?;
    let mut pass = critic_pass(agent, batch, &y)?;
    // The actor-side steps touch only the decoder, so the encoder output
    // computed here stays valid for them.
    let align_loss = alignment_update(agent, &pass.states, batch, align, cfg)?;
    let critic_loss = pass.graph.value(pass.loss).item()?;
    pass.graph.backward(pass.loss)?;
    agent.enc.accumulate_grads(&pass.graph, &pass.enc)?;
    agent.crit.accumulate_grads(&pass.graph, &pass.crit)?;
    step(&mut agent.enc, &mut agent.moments.enc, cfg.critic_lr, cfg)?;
    step(&mut agent.crit, &mut agent.moments.crit, cfg.critic_lr, cfg)?;
    let mean_q = actor_update(agent, &pass.states, cfg)?;
    soft_update(&mut agent.enc_target, &agent.enc, cfg.tau)?;
    soft_update(&mut agent.dec_target, &agent.dec, cfg.tau)?;
    soft_update(&mut agent.crit_target, &agent.crit, cfg.tau)?;
    Ok(UpdateStats { critic_loss, mean_q, align_loss })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub session: usize,
    pub reward: f64,
    pub moving_average: f64,
}

/// `session,cumulative_reward,moving_average` lines with a header.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("session,cumulative_reward,moving_average\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.session, p.reward, p.moving_average));
    }
    s
}

const CURVE_WINDOW: usize = 50;

fn push_curve(curve: &mut Vec<CurvePoint>, reward: f64) {
    let session = curve.len();
    let lo = (session + 1).saturating_sub(CURVE_WINDOW);
    let sum: f64 = curve[lo..].iter().map(|p| p.reward).sum::<f64>() + reward;
    curve.push(CurvePoint { session, reward, moving_average: sum / (session + 1 - lo) as f64 });
}

fn add_noise(proto: ProtoPage, sigma: f64, rng: &mut impl Rng) -> Result<ProtoPage> {
    if sigma <= 0.0 {
        return Ok(proto);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut grid = proto.into_grid();
    grid.data_mut().iter_mut().for_each(|v| *v += normal.sample(rng));
    ProtoPage::new(grid)
}

/// Progress of one online training session.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SessionSummary {
    pub session: usize,
    pub reward: f64,
    pub updates: usize,
    /// Means over the session's updates (zero when there were none).
    pub critic_loss: f64,
    pub mean_q: f64,
}

/// Online training against simulated users `0..n_sessions` of `sim`.
pub fn train_online(
    agent: &mut Agent,
    sim: &Simulator,
    cfg: &TrainerConfig,
    n_sessions: usize,
    seed: u64,
    mut on_session: impl FnMut(&SessionSummary),
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(cfg.capacity)?;
    let space = CandidatePool::new(sim.catalog.items.iter().cloned())?;
    let mut curve = Vec::with_capacity(n_sessions);
    for g in 0..n_sessions {
        let sigma = cfg.noise_at(g, n_sessions);
        let env_err = |e: Error| Error::Env { session: g, source: Box::new(e) };
        let (mut user, history) = sim.user(g as u64).map_err(env_err)?;
        let history = Arc::new(history);
        let mut state = agent.encode_initial(&history)?;
        let mut pool = recall_pool(&history, &[], &sim.catalog.items, cfg.recall_k)?;
        let mut pages: Vec<PageObservation> = Vec::with_capacity(cfg.session_len);
        let mut summary = SessionSummary { session: g, ..SessionSummary::default() };
        for t in 0..cfg.session_len {
            let proto = add_noise(agent.decode(&state)?, sigma, &mut rng)?;
            let valid = map_to_valid(&proto, &pool)?;
            let fb = user.user_feedback(&valid).map_err(env_err)?;
            let reward = compute_reward(&valid, &fb)?;
            let obs = valid.observe(fb)?;
            for (it, f) in obs.items().iter().zip(obs.feedback()) {
                if f.is_positive() {
                    pool.extend(neighbours(it, &space, cfg.recall_k)?)?;
                }
            }
            state = agent.advance(&state, &obs)?;
            pages.push(obs);
            buffer.push(Transition::new(history.clone(), Arc::new(pages.clone()), t, reward)?);
            summary.reward += reward;
            if buffer.len() >= cfg.warmup.max(cfg.batch) {
                let batch = buffer.sample(&mut rng, cfg.batch);
                let align = if cfg.align_online { Alignment::Mapped(&space) } else { Alignment::Off };
                let u = ddpg_update(agent, &batch, cfg, align, cfg.map_targets.then_some(&space))?;
                summary.updates += 1;
                summary.critic_loss += u.critic_loss;
                summary.mean_q += u.mean_q;
            }
        }
        if summary.updates > 0 {
            summary.critic_loss /= summary.updates as f64;
            summary.mean_q /= summary.updates as f64;
        }
        push_curve(&mut curve, summary.reward);
        on_session(&summary);
    }
    Ok(curve)
}

/// Transitions replaying every logged step.
pub fn log_transitions(sessions: &[SessionRecord]) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for s in sessions {
        let history = Arc::new(s.history.clone());
        let pages = Arc::new(s.observations()?);
        for (t, st) in s.steps.iter().enumerate() {
            out.push(Transition::new(history.clone(), pages.clone(), t, st.reward)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub align_loss: f64,
    pub critic_loss: f64,
    pub mean_q: f64,
}

/// Offline training over logged sessions: each epoch visits every logged
/// transition once in shuffled minibatches.
pub fn train_offline(
    agent: &mut Agent,
    sessions: &[SessionRecord],
    cfg: &TrainerConfig,
    epochs: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let data = log_transitions(sessions)?;
    if data.is_empty() {
        return Err(Error::Empty("session log"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut acc = EpochStats { epoch, ..EpochStats::default() };
        let mut n = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &data[i]).collect();
            let u = ddpg_update(agent, &batch, cfg, Alignment::Logged, None)?;
            acc.align_loss += u.align_loss.unwrap_or(0.0) / batch.len() as f64;
            acc.critic_loss += u.critic_loss;
            acc.mean_q += u.mean_q;
            n += 1.0;
        }
        acc.align_loss /= n;
        acc.critic_loss /= n;
        acc.mean_q /= n;
        on_epoch(&acc);
        stats.push(acc);
    }
    Ok(stats)
}
