//! Q-network re-ranking of each attribute's candidate list.
//!
//! The state for attribute `a` is the candidates' embeddings minus the query's
//! (all in `a`'s space), zero-padded to a fixed number of slots, followed by a
//! one-hot of `a`. One network serves every attribute; the action is the slot
//! of the candidate to show.

mod net;
mod replay;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

pub use net::{huber, huber_grad, huber_td_loss, Dense, ForwardCache, QNetwork, Transition};
pub use replay::ReplayBuffer;

use crate::gallery::Gallery;
use crate::optim::Momentum;
use crate::session::{Engine, Session, Status, Strategy};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Time constant of the exponential ε decay, in environment steps.
    pub eps_decay_steps: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Hard target-network sync interval in optimisation steps; 0 disables the
    /// target network (bootstrapping from the online network).
    pub target_sync_every: usize,
    pub episodes: usize,
    pub max_steps: usize,
    pub hidden: [usize; 2],
    pub candidates_per_attribute: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.999,
            batch_size: 2048,
            replay_capacity: 20_000,
            eps_start: 0.9,
            eps_end: 0.05,
            eps_decay_steps: 2000.0,
            learning_rate: 0.1,
            momentum: 0.9,
            target_sync_every: 500,
            episodes: 400,
            max_steps: 50,
            hidden: [256, 128],
            candidates_per_attribute: 4,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return bad("need 0 <= eps_end <= eps_start <= 1");
        }
        if self.eps_decay_steps <= 0.0 || !self.eps_decay_steps.is_finite() {
            return bad("eps_decay_steps must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch_size and replay_capacity must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_steps == 0 || self.candidates_per_attribute == 0 || self.hidden.contains(&0) {
            return bad("max_steps, candidates_per_attribute and hidden widths must be positive");
        }
        Ok(())
    }

    /// `eps_end + (eps_start − eps_end)·exp(−k/τ)`.
    pub fn epsilon(&self, env_steps: usize) -> f64 {
        self.eps_end
            + (self.eps_start - self.eps_end) * (-(env_steps as f64) / self.eps_decay_steps).exp()
    }
}

/// Network input for one attribute's candidate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub values: Vec<f64>,
    /// `true` for slots holding a real candidate.
    pub mask: Vec<bool>,
}

pub fn state_dim(slots: usize, embedding_dim: usize, n_attributes: usize) -> usize {
    slots * embedding_dim + n_attributes
}

pub fn build_state(
    gallery: &Gallery,
    attribute: usize,
    candidates: &[usize],
    query: usize,
    slots: usize,
) -> StateVector {
    let dim = gallery.embedding_dim();
    let mut values = vec![0.0; state_dim(slots, dim, gallery.n_attributes())];
    let q = gallery.embedding(attribute, query);
    for (slot, &c) in candidates.iter().take(slots).enumerate() {
        let e = gallery.embedding(attribute, c);
        for k in 0..dim {
            values[slot * dim + k] = e[k] - q[k];
        }
    }
    values[slots * dim + attribute] = 1.0;
    StateVector {
        values,
        mask: (0..slots).map(|s| s < candidates.len()).collect(),
    }
}

/// Highest-Q unmasked action; ties go to the lowest index.
pub fn greedy_action(net: &QNetwork, state: &StateVector) -> Result<usize> {
    let q = net.q_values(&state.values);
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(&state.mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoAction)
}

/// ε-greedy: with probability ε a uniformly random unmasked action, otherwise
/// [`greedy_action`]. Always consumes exactly one draw for the ε test.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let open: Vec<usize> = (0..state.mask.len()).filter(|&i| state.mask[i]).collect();
    if open.is_empty() {
        return Err(Error::NoAction);
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(open[rng.gen_range(0..open.len())]);
    }
    greedy_action(net, state)
}

/// `1 − (rank − 1)/(N − 1)`; a one-item database is always at percentile 1.
pub fn percentile(rank: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        1.0 - (rank as f64 - 1.0) / (n as f64 - 1.0)
    }
}

/// Change in the target's percentile rank over one feedback round.
pub fn compute_reward(rank_before: usize, rank_after: usize, n: usize) -> f64 {
    percentile(rank_after, n) - percentile(rank_before, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub status: Status,
    pub epsilon: f64,
    /// Mean TD loss of the optimisation steps taken during the episode.
    pub loss: Option<f64>,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DqnLog {
    pub episodes: Vec<EpisodeRecord>,
    pub env_steps: usize,
    pub optimisation_steps: usize,
}

impl DqnLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.episodes {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Trains a Q-network on simulated sessions over `pairs` (gallery positions of
/// query and target), drawing one pair uniformly per episode. Each session iteration
/// yields one transition per attribute, all sharing that iteration's reward.
pub fn train_dqn(
    gallery: std::sync::Arc<Gallery>,
    pairs: &[(usize, usize)],
    config: &DqnConfig,
) -> Result<(QNetwork, DqnLog)> {
    config.validate()?;
    let slots = config.candidates_per_attribute;
    let n_attr = gallery.n_attributes();
    let input = state_dim(slots, gallery.embedding_dim(), n_attr);
    let mut net = QNetwork::init(input, config.hidden, slots, config.seed);
    let mut log = DqnLog::default();
    if config.episodes == 0 {
        return Ok((net, log));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("DQN training pairs"));
    }

    let engine = Engine {
        candidates_per_attribute: slots,
        ..Engine::new(gallery.clone())
    };
    let n = gallery.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd0_0d1e);
    let mut target_net = net.clone();
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut opt = Momentum::new(config.momentum);

    for episode in 0..config.episodes {
        let (query, target) = pairs[rng.gen_range(0..pairs.len())];
        // Candidate lists come from FCS; the network only picks among them.
        let mut session = Session::new(
            &engine,
            query,
            Some(target),
            Strategy::Fcs,
            config.max_steps,
        )?;
        let epsilon_at_start = config.epsilon(log.env_steps);
        let mut rank = session.target_rank(&engine).expect("target known");
        let mut pool = session.pool(&engine);
        let (mut loss_sum, mut loss_count, mut reward_sum) = (0.0, 0usize, 0.0);

        while session.is_active() {
            if pool.iter().all(Vec::is_empty) {
                break;
            }
            let eps = config.epsilon(log.env_steps);
            let query_now = session.state().query;
            let mut states = Vec::with_capacity(n_attr);
            let mut picks = Vec::with_capacity(n_attr);
            for (a, list) in pool.iter().enumerate() {
                if list.is_empty() {
                    states.push(None);
                    picks.push(None);
                    continue;
                }
                let state = build_state(&gallery, a, list, query_now, slots);
                let action = select_action(&net, &state, eps, &mut rng)?;
                picks.push(Some(list[action]));
                states.push(Some((state, action)));
            }
            session.present(pool, picks)?;
            let feedback = session.simulate_feedback(&engine)?;
            session.apply_feedback(&engine, &feedback)?;
            log.env_steps += 1;

            let after = session.target_rank(&engine).expect("target known");
            let reward = compute_reward(rank, after, n);
            reward_sum += reward;
            rank = after;
            // A capped session is treated as terminal like a found one.
            let terminal = !session.is_active();
            pool = if terminal {
                vec![Vec::new(); n_attr]
            } else {
                session.pool(&engine)
            };
            for (a, entry) in states.into_iter().enumerate() {
                let Some((state, action)) = entry else {
                    continue;
                };
                let next = (!terminal)
                    .then(|| build_state(&gallery, a, &pool[a], session.state().query, slots));
                replay.push(Transition {
                    state: state.values,
                    action,
                    reward,
                    next_action_mask: next.as_ref().map_or_else(Vec::new, |s| s.mask.clone()),
                    next_state: next.map(|s| s.values),
                });
            }

            if replay.len() >= config.batch_size {
                let batch = replay.sample(config.batch_size, &mut rng);
                let bootstrap = if config.target_sync_every > 0 {
                    &target_net
                } else {
                    &net
                };
                let (loss, grads) = huber_td_loss(&net, bootstrap, &batch, config.gamma);
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite TD loss at episode {episode}, optimisation step {}",
                        log.optimisation_steps
                    )));
                }
                opt.step(&mut net.params_with(&grads), config.learning_rate);
                log.optimisation_steps += 1;
                loss_sum += loss;
                loss_count += 1;
                if config.target_sync_every > 0
                    && log.optimisation_steps % config.target_sync_every == 0
                {
                    target_net = net.clone();
                }
            }
        }
        if !net.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite Q-network after episode {episode}"
            )));
        }
        let steps = session.state().step;
        let record = EpisodeRecord {
            episode,
            steps,
            status: session.state().status,
            epsilon: epsilon_at_start,
            loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            mean_reward: if steps > 0 {
                reward_sum / steps as f64
            } else {
                0.0
            },
        };
        if episode % 50 == 0 || episode + 1 == config.episodes {
            info!(episode, steps, eps = record.epsilon, loss = ?record.loss, "dqn episode");
        }
        log.episodes.push(record);
    }
    Ok((net, log))
}
