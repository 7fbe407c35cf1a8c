//! Deep Q-learning with experience replay.
//!
//! The agent trains once per move on a uniform sample of its most recent
//! experiences. There is no target network and no separate evaluation
//! phase: a replication plays episodes until the first win.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_env::{encode_observation, Action, GameConfig, Status};
use crate::neural::{adam_step, batch_backprop, AdamConfig, AdamState, Mlp, Sample, DEFAULT_SLOPE};
use crate::tabular_q::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub game_over: bool,
}

/// Bounded FIFO of experiences; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, exp: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(exp);
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

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Positions of `min(n, len)` entries drawn uniformly without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let k = n.min(self.items.len());
        index::sample(rng, self.items.len(), k).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Experience> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnParams {
    pub epochs: usize,
    pub max_memory: usize,
    pub data_size: usize,
    pub exploration: f64,
    pub discount: f64,
    pub slope: f64,
    pub adam: AdamConfig,
}

impl Default for DqnParams {
    fn default() -> Self {
        DqnParams {
            epochs: 1000,
            max_memory: 500,
            data_size: 100,
            exploration: 0.2,
            discount: 0.97,
            slope: DEFAULT_SLOPE,
            adam: AdamConfig::default(),
        }
    }
}

impl DqnParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if !(0.0..=1.0).contains(&self.exploration) {
            return bad("exploration must lie in [0, 1]");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        if self.epochs == 0 || self.max_memory == 0 || self.data_size == 0 {
            return bad("epochs, max_memory and data_size must be positive");
        }
        if self.data_size > self.max_memory {
            return bad("data_size must not exceed max_memory");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Regression examples for a batch: the taken action's target is the
/// Bellman backup, every other output is masked out.
pub fn build_targets(net: &Mlp, batch: &[&Experience], discount: f64) -> Result<Vec<Sample>> {
    batch
        .iter()
        .map(|exp| {
            let mut target = net.forward(&exp.state)?;
            let backup = if exp.game_over {
                exp.reward
            } else {
                let next = net.forward(&exp.next_state)?;
                exp.reward + discount * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            target[exp.action.index()] = backup;
            let mut mask = vec![false; target.len()];
            mask[exp.action.index()] = true;
            Ok(Sample {
                input: exp.state.clone(),
                target,
                mask,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: Mlp,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub params: DqnParams,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(config: &GameConfig, params: DqnParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let net = Mlp::for_grid(config.n_cells(), params.slope, rng);
        Ok(DqnAgent::with_net(net, params))
    }

    pub fn with_net(net: Mlp, params: DqnParams) -> Self {
        let adam = AdamState::new(&net, params.adam);
        DqnAgent {
            net,
            adam,
            buffer: ReplayBuffer::new(params.max_memory),
            params,
        }
    }

    /// Uniform random action with probability `exploration`, else the network's argmax.
    pub fn choose_action<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> Result<Action> {
        if rng.gen::<f64>() < self.params.exploration {
            return Ok(Action::ALL[rng.gen_range(0..4)]);
        }
        self.greedy(observation)
    }

    pub fn greedy(&self, observation: &[f64]) -> Result<Action> {
        let q = self.net.forward(observation)?;
        let row: [f64; 4] = q.try_into().map_err(|q: Vec<f64>| Error::Shape {
            expected: 4,
            got: q.len(),
        })?;
        Ok(argmax(&row))
    }

    /// Stores the experience, then takes one Adam step on a replay sample.
    /// Returns the batch loss before the step.
    pub fn record_and_train<R: Rng + ?Sized>(&mut self, exp: Experience, rng: &mut R) -> Result<f64> {
        self.buffer.push(exp);
        let batch = self.buffer.sample(self.params.data_size, rng);
        let samples = build_targets(&self.net, &batch, self.params.discount)?;
        let (loss, grads) = batch_backprop(&self.net, &samples)?;
        adam_step(&mut self.net, &grads, &mut self.adam)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpisodeResult {
    pub status: Status,
    pub score: i64,
    pub steps: usize,
}

pub fn dqn_episode<R: Rng, A: Rng>(
    agent: &mut DqnAgent,
    config: &GameConfig,
    agent_rng: &mut R,
    adversary_rng: &mut A,
) -> Result<EpisodeResult> {
    let mut state = config.new_game()?;
    let mut obs = encode_observation(config, &state);
    while !state.status.is_terminal() {
        let action = agent.choose_action(&obs, agent_rng)?;
        let out = config.play_turn(&state, action, adversary_rng)?;
        let next_obs = encode_observation(config, &out.state);
        let game_over = matches!(out.state.status, Status::Won | Status::Captured);
        agent.record_and_train(
            Experience {
                state: obs,
                action,
                reward: out.reward as f64,
                next_state: next_obs.clone(),
                game_over,
            },
            agent_rng,
        )?;
        state = out.state;
        obs = next_obs;
    }
    Ok(EpisodeResult {
        status: state.status,
        score: state.score,
        steps: state.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub success: bool,
    pub winning_score: Option<i64>,
    pub winning_steps: Option<usize>,
    pub regret: Option<i64>,
    pub epochs_used: usize,
    pub captures: usize,
    pub limits: usize,
    pub last_status: Status,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Fresh network, episodes until the first win or `params.epochs` episodes.
/// When `checkpoint` is given the final network is written there.
pub fn run_dqn_replication<R: Rng, A: Rng>(
    config: &GameConfig,
    params: &DqnParams,
    agent_rng: &mut R,
    adversary_rng: &mut A,
    checkpoint: Option<PathBuf>,
) -> Result<ReplicationResult> {
    config.validate()?;
    let started = Instant::now();
    let optimal = config.optimal_score()?;
    let mut agent = DqnAgent::new(config, *params, agent_rng)?;
    let mut result = ReplicationResult {
        success: false,
        winning_score: None,
        winning_steps: None,
        regret: None,
        epochs_used: 0,
        captures: 0,
        limits: 0,
        last_status: Status::Running,
        wall_time: Duration::ZERO,
    };
    for _ in 0..params.epochs {
        let ep = dqn_episode(&mut agent, config, agent_rng, adversary_rng)?;
        result.epochs_used += 1;
        result.last_status = ep.status;
        match ep.status {
            Status::Won => {
                result.success = true;
                result.winning_score = Some(ep.score);
                result.winning_steps = Some(ep.steps);
                result.regret = Some(optimal - ep.score);
                break;
            }
            Status::Captured => result.captures += 1,
            Status::EpochLimit => result.limits += 1,
            Status::Running => unreachable!("episodes run to a terminal status"),
        }
    }
    if let Some(path) = checkpoint {
        agent.net.save(&path)?;
    }
    result.wall_time = started.elapsed();
    Ok(result)
}
