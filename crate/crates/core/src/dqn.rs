//! Deep Q-learning with optional Hilbert-guided exploration.
//!
//! One Q-network and one replay buffer are shared by every agent. With
//! probability ε an agent explores; guided exploration takes the action that
//! advances it along the Hilbert curve, plain exploration a uniform action.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::Action;
use crate::error::{Error, Result};
use crate::grid_env::{GridWorld, Observation};
use crate::nn::{adam_step, argmax, AdamConfig, AdamState, Head, MlpNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    /// Hard target copy period, in environment steps.
    pub target_sync_every: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which ε decays (the training length).
    pub total_steps: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Explore along the curve instead of uniformly.
    pub guided_exploration: bool,
    /// Feed the normalized index to the network.
    pub augment_state: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch: 64,
            buffer_capacity: 100_000,
            target_sync_every: 1000,
            eps_start: 0.3,
            eps_end: 0.05,
            total_steps: 300_000,
            lr: 3e-4,
            hidden: vec![128, 128],
            guided_exploration: true,
            augment_state: true,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("dqn gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("dqn epsilon bounds must lie in [0, 1]");
        }
        if self.batch == 0 || self.batch > self.buffer_capacity {
            return bad("dqn batch must be positive and no larger than the buffer");
        }
        if self.target_sync_every == 0 {
            return bad("dqn target_sync_every must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// Linear ε decay from `eps_start` to `eps_end` over `total_steps`, clamped.
    pub fn epsilon(&self, step: usize) -> f64 {
        let frac = if self.total_steps == 0 {
            1.0
        } else {
            (step as f64 / self.total_steps as f64).min(1.0)
        };
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Fixed-capacity ring of transitions with flat observation storage.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_len: usize,
    len: usize,
    head: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// One stored transition, borrowed from the buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRef<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub next_obs: &'a [f64],
    pub done: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_len: usize) -> Self {
        Self {
            capacity,
            obs_len,
            len: 0,
            head: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], done: bool) {
        debug_assert_eq!(obs.len(), self.obs_len);
        debug_assert_eq!(next_obs.len(), self.obs_len);
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.next_obs.extend_from_slice(next_obs);
            self.actions.push(action);
            self.rewards.push(reward);
            self.dones.push(done);
            self.len += 1;
        } else {
            let i = self.head;
            let span = i * self.obs_len..(i + 1) * self.obs_len;
            self.obs[span.clone()].copy_from_slice(obs);
            self.next_obs[span].copy_from_slice(next_obs);
            self.actions[i] = action;
            self.rewards[i] = reward;
            self.dones[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> TransitionRef<'_> {
        let span = i * self.obs_len..(i + 1) * self.obs_len;
        TransitionRef {
            obs: &self.obs[span.clone()],
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: &self.next_obs[span],
            done: self.dones[i],
        }
    }

    /// Uniform sample with replacement. `None` until `batch` items are stored.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        (self.len >= batch && batch > 0)
            .then(|| (0..batch).map(|_| rng.gen_range(0..self.len)).collect())
    }
}

/// ε-exploration around the greedy action. `explore` supplies the exploratory action.
pub fn select_action<R: Rng + ?Sized>(
    q_values: &[f64],
    epsilon: f64,
    rng: &mut R,
    explore: impl FnOnce(&mut R) -> Action,
) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        explore(rng)
    } else {
        Action::from_index(argmax(q_values)).expect("Q head has one output per action")
    }
}

/// `y = r` on terminal transitions, otherwise `r + γ·max_a Q'(s', a)`.
pub fn td_target(reward: f64, next_q_max: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_q_max
    }
}

/// Q-network, target network, optimizer and replay memory.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub q: MlpNet,
    pub target: MlpNet,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub gamma: f64,
    pub batch: usize,
}

impl DqnLearner {
    pub fn new<R: Rng + ?Sized>(cfg: &DqnConfig, obs_len: usize, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_len];
        sizes.extend(&cfg.hidden);
        sizes.push(Action::COUNT);
        let q = MlpNet::new(&sizes, Head::Linear, rng)?;
        let mut target = q.clone();
        target.copy_from(&q)?;
        let adam = AdamState::new(
            &q,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            q,
            target,
            adam,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, obs_len),
            gamma: cfg.gamma,
            batch: cfg.batch,
        })
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.q)
    }

    /// One Adam step on the mean squared TD error of a uniform minibatch.
    ///
    /// Returns the loss before the update, or `None` when the buffer holds
    /// fewer than `batch` transitions.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let Some(idx) = self.buffer.sample_indices(self.batch, rng) else {
            return Ok(None);
        };
        self.train_on(&idx).map(Some)
    }

    /// TD update on the given buffer indices.
    pub fn train_on(&mut self, idx: &[usize]) -> Result<f64> {
        let n = idx.len();
        let width = self.q.input_len();
        let mut obs = Array2::zeros((n, width));
        let mut next = Array2::zeros((n, width));
        for (row, &i) in idx.iter().enumerate() {
            let t = self.buffer.get(i);
            obs.row_mut(row)
                .assign(&ArrayView2::from_shape((1, width), t.obs).unwrap().row(0));
            next.row_mut(row).assign(
                &ArrayView2::from_shape((1, width), t.next_obs)
                    .unwrap()
                    .row(0),
            );
        }
        let next_q = self.target.predict(next.view())?;
        let (q, cache) = self.q.forward(obs.view())?;
        let mut grad = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (row, &i) in idx.iter().enumerate() {
            let t = self.buffer.get(i);
            let max_next = next_q.row(row).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let y = td_target(t.reward, max_next, t.done, self.gamma);
            let err = q[[row, t.action]] - y;
            loss += err * err;
            grad[[row, t.action]] = 2.0 * err / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite TD loss {loss}")));
        }
        let grads = self.q.backward(&cache, grad.view())?;
        adam_step(&mut self.q, &grads, &mut self.adam)?;
        Ok(loss)
    }

    pub fn q_values(&self, inputs: &[f64]) -> Result<Array2<f64>> {
        let width = self.q.input_len();
        let view = ArrayView2::from_shape((inputs.len() / width, width), inputs)
            .map_err(|e| Error::Domain(e.to_string()))?;
        self.q.predict(view)
    }
}

/// Greedy DQN policy: argmax Q with lowest-index ties.
#[derive(Debug, Clone)]
pub struct DqnGreedy<'a> {
    pub q: &'a MlpNet,
    pub augment_state: bool,
}

impl crate::metrics::GreedyPolicy for DqnGreedy<'_> {
    fn greedy_actions(&self, obs: &[Observation]) -> Result<Vec<Action>> {
        let q = self
            .q
            .predict(stack_inputs(obs, self.augment_state, self.q.input_len())?.view())?;
        Ok(q.rows()
            .into_iter()
            .map(|r| Action::from_index(argmax(r.as_slice().expect("contiguous rows"))).unwrap())
            .collect())
    }
}

pub(crate) fn stack_inputs(
    obs: &[Observation],
    augment: bool,
    width: usize,
) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(obs.len() * width);
    for o in obs {
        o.write_input(augment, &mut flat);
    }
    Array2::from_shape_vec((obs.len(), width), flat).map_err(|e| Error::Domain(e.to_string()))
}

/// Training statistics of the most recent call to [`DqnTrainer::advance`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DqnProgress {
    pub env_steps: usize,
    pub updates: usize,
    pub last_loss: Option<f64>,
}

/// Acting and learning loop with a periodic hard target sync.
#[derive(Debug, Clone)]
pub struct DqnTrainer {
    pub cfg: DqnConfig,
    pub learner: DqnLearner,
    env: GridWorld,
    obs: Vec<Observation>,
    rng: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    env_steps: usize,
    updates: usize,
    episode_return: f64,
    /// Mean per-agent task reward of every finished training episode.
    pub episode_returns: Vec<f64>,
}

impl DqnTrainer {
    pub fn new(cfg: DqnConfig, mut env: GridWorld, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episode_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        let learner = DqnLearner::new(&cfg, env.obs_len(), &mut rng)?;
        let obs = env.reset(episode_rng.gen());
        Ok(Self {
            cfg,
            learner,
            env,
            obs,
            rng,
            episode_rng,
            env_steps: 0,
            updates: 0,
            episode_return: 0.0,
            episode_returns: Vec::new(),
        })
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn env(&self) -> &GridWorld {
        &self.env
    }

    pub fn greedy(&self) -> DqnGreedy<'_> {
        DqnGreedy {
            q: &self.learner.q,
            augment_state: self.cfg.augment_state,
        }
    }

    /// Runs `steps` environment steps of interleaved acting and learning.
    pub fn advance(&mut self, steps: usize) -> Result<DqnProgress> {
        let augment = self.cfg.augment_state;
        let width = self.learner.q.input_len();
        let n = self.env.n_agents();
        let mut progress = DqnProgress::default();
        for _ in 0..steps {
            let eps = self.cfg.epsilon(self.env_steps);
            let inputs = stack_inputs(&self.obs, augment, width)?;
            let q = self.learner.q.predict(inputs.view())?;
            let mut actions = Vec::with_capacity(n);
            for agent in 0..n {
                let row = q.row(agent);
                let env = &self.env;
                let guided = self.cfg.guided_exploration;
                let a = select_action(row.as_slice().unwrap(), eps, &mut self.rng, |rng| {
                    if guided {
                        env.guided_action(agent, rng)
                    } else {
                        Action::ALL[rng.gen_range(0..Action::COUNT)]
                    }
                });
                actions.push(a);
            }
            let result = self.env.step(&actions)?;
            let mut next_input = Vec::with_capacity(width);
            for agent in 0..n {
                next_input.clear();
                result.observations[agent].write_input(augment, &mut next_input);
                self.learner.buffer.push(
                    inputs.row(agent).as_slice().unwrap(),
                    actions[agent].index(),
                    result.rewards[agent],
                    &next_input,
                    result.done,
                );
            }
            self.episode_return += result.task_rewards.iter().sum::<f64>() / n as f64;
            self.env_steps += 1;

            if let Some(loss) = self.learner.train_step(&mut self.rng)? {
                self.updates += 1;
                progress.updates += 1;
                progress.last_loss = Some(loss);
            }
            if self.env_steps % self.cfg.target_sync_every == 0 {
                self.learner.sync_target()?;
            }

            if result.done {
                self.episode_returns.push(self.episode_return);
                self.episode_return = 0.0;
                self.obs = self.env.reset(self.episode_rng.gen());
            } else {
                self.obs = result.observations;
            }
        }
        progress.env_steps = self.env_steps;
        Ok(progress)
    }
}
