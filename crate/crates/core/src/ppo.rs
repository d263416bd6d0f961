//! PPO with Hilbert-biased rollout sampling.
//!
//! During collection an agent takes the curve-guided action with probability
//! `ε_bias` and otherwise samples the softmax policy. The stored behavior
//! log-probability is that of the mixture, `ε·q(a) + (1−ε)·π(a)`, so the
//! importance ratio `π_θ(a)/behavior(a)` is well defined for both branches.
//! Setting `mixture_correction = false` stores `π_old(a)` instead.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::Action;
use crate::dqn::stack_inputs;
use crate::error::{domain, Error, Result};
use crate::grid_env::{sample_categorical, GridWorld, Observation};
use crate::metrics::GreedyPolicy;
use crate::nn::{
    adam_step, argmax, log_softmax_rows, softmax_rows, AdamConfig, AdamState, Head, MlpNet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub eps_start: f64,
    pub eps_min: f64,
    /// Per-iteration anneal factor; `None` picks the factor that reaches
    /// `eps_min` after the configured number of iterations.
    pub kappa: Option<f64>,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// Environment steps per rollout.
    pub horizon: usize,
    pub total_steps: usize,
    pub hidden: Vec<usize>,
    pub guided_exploration: bool,
    pub augment_state: bool,
    pub mixture_correction: bool,
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            eps_start: 0.3,
            eps_min: 0.05,
            kappa: None,
            epochs: 4,
            minibatch: 64,
            lr_policy: 3e-4,
            lr_value: 3e-4,
            horizon: 128,
            total_steps: 300_000,
            hidden: vec![128, 128],
            guided_exploration: true,
            augment_state: true,
            mixture_correction: true,
            entropy_coef: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("ppo gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("ppo clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_min) {
            return bad("exploration bias bounds must lie in [0, 1]");
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k <= 1.0) {
                return bad("kappa must lie in (0, 1]");
            }
        }
        if self.epochs == 0 || self.minibatch == 0 || self.horizon == 0 {
            return bad("epochs, minibatch and horizon must be positive");
        }
        if !(self.lr_policy > 0.0 && self.lr_value > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy coefficient must be non-negative");
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.total_steps.div_ceil(self.horizon).max(1)
    }

    pub fn resolved_kappa(&self) -> f64 {
        match self.kappa {
            Some(k) => k,
            None if self.eps_start <= self.eps_min || self.eps_start == 0.0 => 1.0,
            None => (self.eps_min / self.eps_start).powf(1.0 / self.iterations() as f64),
        }
    }
}

/// `max(ε_min, κ·ε)`.
pub fn anneal(eps: f64, kappa: f64, eps_min: f64) -> f64 {
    eps_min.max(kappa * eps)
}

/// Draws from the behavior mixture and returns the action with its
/// behavior log-probability.
///
/// `policy` holds the softmax probabilities, `guided` the distribution of the
/// curve-guided action.
pub fn sample_action<R: Rng + ?Sized>(
    policy: &[f64; Action::COUNT],
    guided: &[f64; Action::COUNT],
    eps_bias: f64,
    mixture_correction: bool,
    rng: &mut R,
) -> (Action, f64) {
    let use_guided = eps_bias > 0.0 && (eps_bias >= 1.0 || rng.gen::<f64>() < eps_bias);
    let action = if use_guided {
        sample_categorical(guided, rng)
    } else {
        sample_categorical(policy, rng)
    };
    (
        action,
        behavior_log_prob(policy, guided, eps_bias, action, mixture_correction),
    )
}

pub fn behavior_log_prob(
    policy: &[f64; Action::COUNT],
    guided: &[f64; Action::COUNT],
    eps_bias: f64,
    action: Action,
    mixture_correction: bool,
) -> f64 {
    let a = action.index();
    if mixture_correction {
        (eps_bias * guided[a] + (1.0 - eps_bias) * policy[a]).ln()
    } else {
        policy[a].ln()
    }
}

/// Generalized advantage estimation for one agent's trajectory.
///
/// `last_value` bootstraps the state after the final step and is ignored when
/// that step is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return domain(format!(
            "gae inputs differ in length: {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        ));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}

/// `min(ρ·Â, clip(ρ, 1−ε, 1+ε)·Â)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// On-policy storage for one rollout of `steps × n_agents` samples.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    n_agents: usize,
    width: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub behavior_logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    ready: bool,
}

impl RolloutBuffer {
    pub fn new(n_agents: usize, width: usize) -> Self {
        Self {
            n_agents,
            width,
            obs: Vec::new(),
            actions: Vec::new(),
            behavior_logp: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            advantages: Vec::new(),
            targets: Vec::new(),
            ready: false,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    /// Appends one sample; samples are laid out step-major, agent-minor.
    pub fn push(
        &mut self,
        obs: &[f64],
        action: usize,
        logp: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        self.obs.extend_from_slice(obs);
        self.actions.push(action);
        self.behavior_logp.push(logp);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.ready = false;
    }

    /// Computes advantages and value targets per agent stream.
    pub fn finish(&mut self, last_values: &[f64], gamma: f64, lambda: f64) -> Result<()> {
        if last_values.len() != self.n_agents || self.len() % self.n_agents != 0 {
            return domain("rollout is not a whole number of steps for every agent");
        }
        let steps = self.len() / self.n_agents;
        self.advantages = vec![0.0; self.len()];
        self.targets = vec![0.0; self.len()];
        for agent in 0..self.n_agents {
            let idx: Vec<usize> = (0..steps).map(|t| t * self.n_agents + agent).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, tgt) = compute_gae(&r, &v, &d, last_values[agent], gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.targets[i] = tgt[k];
            }
        }
        self.ready = true;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.behavior_logp.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
        self.advantages.clear();
        self.targets.clear();
        self.ready = false;
    }

    fn obs_rows(&self, idx: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((idx.len(), self.width));
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.obs[i * self.width..(i + 1) * self.width]);
        }
        x
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Sample estimate of KL(behavior ‖ updated policy) over the rollout.
    pub approx_kl: f64,
    /// Mean importance ratio over the rollout before any update.
    pub initial_mean_ratio: f64,
    /// Samples skipped because their ratio was not finite.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub policy: MlpNet,
    pub value: MlpNet,
    pub policy_adam: AdamState,
    pub value_adam: AdamState,
}

impl PpoLearner {
    pub fn new<R: Rng + ?Sized>(cfg: &PpoConfig, obs_len: usize, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_len];
        sizes.extend(&cfg.hidden);
        let mut policy_sizes = sizes.clone();
        policy_sizes.push(Action::COUNT);
        sizes.push(1);
        let policy = MlpNet::new(&policy_sizes, Head::Softmax, rng)?;
        let value = MlpNet::new(&sizes, Head::Linear, rng)?;
        let adam = |net: &MlpNet, lr| {
            AdamState::new(
                net,
                AdamConfig {
                    lr,
                    ..AdamConfig::default()
                },
            )
        };
        Ok(Self {
            policy_adam: adam(&policy, cfg.lr_policy),
            value_adam: adam(&value, cfg.lr_value),
            policy,
            value,
        })
    }

    fn log_probs(&self, buf: &RolloutBuffer, idx: &[usize]) -> Result<Vec<f64>> {
        let logits = self.policy.predict(buf.obs_rows(idx).view())?;
        let lp = log_softmax_rows(&logits);
        Ok(idx
            .iter()
            .enumerate()
            .map(|(row, &i)| lp[[row, buf.actions[i]]])
            .collect())
    }

    /// Clipped-surrogate policy update and value regression over the rollout.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buf: &RolloutBuffer,
        cfg: &PpoConfig,
        rng: &mut R,
    ) -> Result<PpoStats> {
        if !buf.is_ready() {
            return Err(Error::Contract(
                "rollout advantages have not been computed".into(),
            ));
        }
        let n = buf.len();
        let all: Vec<usize> = (0..n).collect();
        let mut adv = buf.advantages.clone();
        normalize_advantages(&mut adv);

        let start_lp = self.log_probs(buf, &all)?;
        let initial_mean_ratio = start_lp
            .iter()
            .zip(&buf.behavior_logp)
            .map(|(lp, b)| (lp - b).exp())
            .sum::<f64>()
            / n as f64;

        let mut stats = PpoStats {
            initial_mean_ratio,
            ..PpoStats::default()
        };
        let mut batches = 0usize;
        let mut clipped = 0usize;
        let mut seen = 0usize;
        let mut order = all.clone();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch) {
                let x = buf.obs_rows(chunk);
                let (pl, c, s, sk) = self.policy_step(buf, chunk, &x, &adv, cfg)?;
                let vl = self.value_step(buf, chunk, &x)?;
                stats.policy_loss += pl;
                stats.value_loss += vl;
                clipped += c;
                seen += s;
                stats.skipped += sk;
                batches += 1;
            }
        }
        stats.policy_loss /= batches as f64;
        stats.value_loss /= batches as f64;
        stats.clip_fraction = if seen == 0 {
            0.0
        } else {
            clipped as f64 / seen as f64
        };
        let end_lp = self.log_probs(buf, &all)?;
        stats.approx_kl = buf
            .behavior_logp
            .iter()
            .zip(&end_lp)
            .map(|(b, lp)| b - lp)
            .sum::<f64>()
            / n as f64;
        Ok(stats)
    }

    fn policy_step(
        &mut self,
        buf: &RolloutBuffer,
        idx: &[usize],
        x: &Array2<f64>,
        adv: &[f64],
        cfg: &PpoConfig,
    ) -> Result<(f64, usize, usize, usize)> {
        let (logits, cache) = self.policy.forward(x.view())?;
        let probs = softmax_rows(&logits);
        let logp = log_softmax_rows(&logits);
        let b = idx.len() as f64;
        let mut grad = Array2::zeros(logits.raw_dim());
        let (mut loss, mut clipped, mut used, mut skipped) = (0.0, 0, 0, 0);
        for (row, &i) in idx.iter().enumerate() {
            let a = buf.actions[i];
            let ratio = (logp[[row, a]] - buf.behavior_logp[i]).exp();
            if !ratio.is_finite() {
                skipped += 1;
                continue;
            }
            used += 1;
            let adv_i = adv[i];
            if (ratio - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
            let objective = clipped_objective(ratio, adv_i, cfg.clip);
            loss -= objective / b;
            // The unclipped branch is the active minimum: gradient flows through ρ.
            if ratio * adv_i <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv_i {
                let scale = -adv_i * ratio / b;
                for k in 0..Action::COUNT {
                    let onehot = if k == a { 1.0 } else { 0.0 };
                    grad[[row, k]] += scale * (onehot - probs[[row, k]]);
                }
            }
            if cfg.entropy_coef > 0.0 {
                let p = probs.row(row);
                let lp = logp.row(row);
                let entropy: f64 = -p.iter().zip(lp.iter()).map(|(p, l)| p * l).sum::<f64>();
                loss -= cfg.entropy_coef * entropy / b;
                for k in 0..Action::COUNT {
                    grad[[row, k]] += cfg.entropy_coef / b * p[k] * (lp[k] + entropy);
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite policy loss {loss}")));
        }
        let grads = self.policy.backward(&cache, grad.view())?;
        adam_step(&mut self.policy, &grads, &mut self.policy_adam)?;
        Ok((loss, clipped, used, skipped))
    }

    fn value_step(&mut self, buf: &RolloutBuffer, idx: &[usize], x: &Array2<f64>) -> Result<f64> {
        let (v, cache) = self.value.forward(x.view())?;
        let b = idx.len() as f64;
        let mut grad = Array2::zeros(v.raw_dim());
        let mut loss = 0.0;
        for (row, &i) in idx.iter().enumerate() {
            let err = v[[row, 0]] - buf.targets[i];
            loss += err * err / b;
            grad[[row, 0]] = 2.0 * err / b;
        }
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite value loss {loss}")));
        }
        let grads = self.value.backward(&cache, grad.view())?;
        adam_step(&mut self.value, &grads, &mut self.value_adam)?;
        Ok(loss)
    }
}

/// Mode of the policy: argmax logit, lowest index on ties.
#[derive(Debug, Clone)]
pub struct PpoGreedy<'a> {
    pub policy: &'a MlpNet,
    pub augment_state: bool,
}

impl GreedyPolicy for PpoGreedy<'_> {
    fn greedy_actions(&self, obs: &[Observation]) -> Result<Vec<Action>> {
        let x = stack_inputs(obs, self.augment_state, self.policy.input_len())?;
        let logits = self.policy.predict(x.view())?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| Action::from_index(argmax(r.as_slice().unwrap())).unwrap())
            .collect())
    }
}

fn row_array(view: ArrayView2<f64>, row: usize) -> [f64; Action::COUNT] {
    let mut out = [0.0; Action::COUNT];
    for (o, v) in out.iter_mut().zip(view.row(row).iter()) {
        *o = *v;
    }
    out
}

#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub cfg: PpoConfig,
    pub learner: PpoLearner,
    pub eps_bias: f64,
    kappa: f64,
    env: GridWorld,
    obs: Vec<Observation>,
    buffer: RolloutBuffer,
    rng: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    env_steps: usize,
    iterations: usize,
    episode_return: f64,
    pub episode_returns: Vec<f64>,
    pub last_stats: Option<PpoStats>,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, mut env: GridWorld, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episode_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        let learner = PpoLearner::new(&cfg, env.obs_len(), &mut rng)?;
        let obs = env.reset(episode_rng.gen());
        let buffer = RolloutBuffer::new(env.n_agents(), env.obs_len());
        Ok(Self {
            eps_bias: if cfg.guided_exploration {
                cfg.eps_start
            } else {
                0.0
            },
            kappa: cfg.resolved_kappa(),
            cfg,
            learner,
            env,
            obs,
            buffer,
            rng,
            episode_rng,
            env_steps: 0,
            iterations: 0,
            episode_return: 0.0,
            episode_returns: Vec::new(),
            last_stats: None,
        })
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn env(&self) -> &GridWorld {
        &self.env
    }

    pub fn greedy(&self) -> PpoGreedy<'_> {
        PpoGreedy {
            policy: &self.learner.policy,
            augment_state: self.cfg.augment_state,
        }
    }

    /// Collects one rollout, updates both networks and anneals the bias.
    pub fn iterate(&mut self) -> Result<PpoStats> {
        let augment = self.cfg.augment_state;
        let width = self.env.obs_len();
        let n = self.env.n_agents();
        self.buffer.clear();
        for _ in 0..self.cfg.horizon {
            let x = stack_inputs(&self.obs, augment, width)?;
            let probs = softmax_rows(&self.learner.policy.predict(x.view())?);
            let values = self.learner.value.predict(x.view())?;
            let mut actions = Vec::with_capacity(n);
            let mut logps = Vec::with_capacity(n);
            for agent in 0..n {
                let policy = row_array(probs.view(), agent);
                let guided = if self.eps_bias > 0.0 {
                    self.env.guided_distribution(agent)
                } else {
                    [0.0; Action::COUNT]
                };
                let (a, lp) = sample_action(
                    &policy,
                    &guided,
                    self.eps_bias,
                    self.cfg.mixture_correction,
                    &mut self.rng,
                );
                actions.push(a);
                logps.push(lp);
            }
            let result = self.env.step(&actions)?;
            for agent in 0..n {
                self.buffer.push(
                    x.row(agent).as_slice().unwrap(),
                    actions[agent].index(),
                    logps[agent],
                    result.rewards[agent],
                    values[[agent, 0]],
                    result.done,
                );
            }
            self.episode_return += result.task_rewards.iter().sum::<f64>() / n as f64;
            self.env_steps += 1;
            if result.done {
                self.episode_returns.push(self.episode_return);
                self.episode_return = 0.0;
                self.obs = self.env.reset(self.episode_rng.gen());
            } else {
                self.obs = result.observations;
            }
        }
        let x = stack_inputs(&self.obs, augment, width)?;
        let last: Vec<f64> = self.learner.value.predict(x.view())?.column(0).to_vec();
        self.buffer
            .finish(&last, self.cfg.gamma, self.cfg.gae_lambda)?;
        let stats = self
            .learner
            .update(&self.buffer, &self.cfg, &mut self.rng)?;
        self.buffer.clear();
        if self.cfg.guided_exploration {
            self.eps_bias = anneal(self.eps_bias, self.kappa, self.cfg.eps_min);
        }
        self.iterations += 1;
        self.last_stats = Some(stats.clone());
        Ok(stats)
    }

    /// Iterates until at least `steps` more environment steps have run.
    pub fn advance(&mut self, steps: usize) -> Result<()> {
        let goal = self.env_steps + steps;
        while self.env_steps < goal {
            self.iterate()?;
        }
        Ok(())
    }
}
