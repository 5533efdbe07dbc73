//! The deep Q-learner: n-step double-Q targets over the dueling network,
//! weighted Huber loss, Adam updates, and periodic target-network syncs.

use super::nn::{Adam, NnError, QNetwork, ACTION_COUNT};
use super::replay::{PrioritizedReplay, ReplayEntry, ReplayError, SampledBatch};
use crate::mdp::{Action, Observation, OBS_DIM};
use crate::seeding::{rng_for, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("n-step return needs at least one reward")]
    EmptyRewards,
    #[error("non-finite loss; batch dump:\n{dump}")]
    NonFiniteLoss { dump: String },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub n_step: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient steps between target-network copies.
    pub target_sync_interval: u64,
    pub per_priority_exponent: f64,
    pub per_is_exponent_start: f64,
    pub per_is_exponent_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training over which epsilon anneals.
    pub epsilon_anneal_fraction: f64,
    pub noisy_layers: bool,
    /// Transitions collected before gradient steps begin.
    pub warmup_transitions: usize,
    /// Environment decisions between gradient steps.
    pub gradient_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden_sizes: vec![512, 512, 512],
            learning_rate: 0.0005,
            gamma: 0.99,
            n_step: 3,
            batch_size: 64,
            buffer_capacity: 100_000,
            target_sync_interval: 1_000,
            per_priority_exponent: 0.5,
            per_is_exponent_start: 0.4,
            per_is_exponent_end: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.3,
            noisy_layers: false,
            warmup_transitions: 5_000,
            gradient_every: 4,
        }
    }
}

/// Epsilon for the given training progress in `[0, 1]`: linear from start
/// to end over the first `epsilon_anneal_fraction`, flat afterwards.
pub fn epsilon_at(cfg: &AgentConfig, progress: f64) -> f64 {
    if cfg.noisy_layers {
        return 0.0; // exploration comes from the noisy layers
    }
    let f = cfg.epsilon_anneal_fraction.max(f64::MIN_POSITIVE);
    let x = (progress / f).clamp(0.0, 1.0);
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * x
}

/// Importance-sampling exponent annealed linearly over all of training.
pub fn beta_at(cfg: &AgentConfig, progress: f64) -> f64 {
    let x = progress.clamp(0.0, 1.0);
    cfg.per_is_exponent_start + (cfg.per_is_exponent_end - cfg.per_is_exponent_start) * x
}

/// Discounted n-step return: `sum_k gamma^k r_k + gamma^len * bootstrap`.
pub fn n_step_return(rewards: &[f64], gamma: f64, bootstrap: f64) -> Result<f64, AgentError> {
    if rewards.is_empty() {
        return Err(AgentError::EmptyRewards);
    }
    let mut acc = 0.0;
    let mut g = 1.0;
    for r in rewards {
        acc += g * r;
        g *= gamma;
    }
    Ok(acc + g * bootstrap)
}

/// Per-entry targets: the stored return plus a double-Q bootstrap
/// `gamma^steps * Q_target(s', argmax_a Q_online(s', a))`; terminal entries
/// use the stored return alone. Both networks evaluate with zeroed noise.
pub fn td_target(
    entries: &[ReplayEntry],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let t = match &e.bootstrap {
            None => e.return_sum,
            Some(obs) => {
                let q_online = online.q_values(obs.as_slice())?;
                let best = if q_online[1] > q_online[0] { 1 } else { 0 };
                let q_target = target.q_values(obs.as_slice())?;
                e.return_sum + gamma.powi(e.steps as i32) * q_target[best]
            }
        };
        out.push(t);
    }
    Ok(out)
}

fn huber(delta: f64) -> f64 {
    if delta.abs() <= 1.0 {
        0.5 * delta * delta
    } else {
        delta.abs() - 0.5
    }
}

fn huber_grad(delta: f64) -> f64 {
    delta.clamp(-1.0, 1.0)
}

/// Shared-policy deep Q-learner. One instance serves every RV: rollouts
/// query the online network, transitions land in the replay buffer, and a
/// single consumer performs gradient steps.
pub struct DqnAgent {
    cfg: AgentConfig,
    online: QNetwork,
    target: QNetwork,
    replay: PrioritizedReplay,
    opt: Adam,
    grad_steps: u64,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    beta: f64,
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Self {
        let mut init_rng = rng_for(seed, Stream::PolicyInit, 0);
        let online = QNetwork::new(OBS_DIM, &cfg.hidden_sizes, cfg.noisy_layers, &mut init_rng);
        let mut target = online.clone();
        target.zero_noise();
        let replay = PrioritizedReplay::new(cfg.buffer_capacity, cfg.per_priority_exponent);
        let opt = Adam::new(cfg.learning_rate, online.param_count());
        let beta = cfg.per_is_exponent_start;
        DqnAgent {
            cfg,
            online,
            target,
            replay,
            opt,
            grad_steps: 0,
            explore_rng: rng_for(seed, Stream::Exploration, 0),
            replay_rng: rng_for(seed, Stream::Replay, 0),
            beta,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Greedy action with exploration off (noise zeroed).
    pub fn act_greedy(&mut self, obs: &Observation) -> Result<Action, AgentError> {
        self.online.zero_noise();
        let q = self.online.q_values(obs.as_slice())?;
        Ok(if q[1] > q[0] { Action::Go } else { Action::Stop })
    }

    /// Epsilon-greedy action; with noisy layers the noise is resampled and
    /// epsilon ignored.
    pub fn act_explore(&mut self, obs: &Observation, epsilon: f64) -> Result<Action, AgentError> {
        if self.cfg.noisy_layers {
            self.online.resample_noise(&mut self.explore_rng);
            let q = self.online.q_values(obs.as_slice())?;
            return Ok(if q[1] > q[0] { Action::Go } else { Action::Stop });
        }
        if self.explore_rng.random::<f64>() < epsilon {
            return Ok(if self.explore_rng.random::<f64>() < 0.5 {
                Action::Go
            } else {
                Action::Stop
            });
        }
        self.act_greedy(obs)
    }

    pub fn push_transition(&mut self, entry: ReplayEntry) {
        self.replay.push(entry);
    }

    pub fn ready_to_train(&self) -> bool {
        self.replay.len() >= self.cfg.warmup_transitions.max(self.cfg.batch_size)
    }

    pub fn sample_batch(&mut self) -> Result<SampledBatch, AgentError> {
        Ok(self
            .replay
            .sample(self.cfg.batch_size, self.beta, &mut self.replay_rng)?)
    }

    /// One gradient step on a sampled batch. Returns the weighted Huber
    /// loss. Priorities become `|TD error| + 1e-6`; the target network is
    /// copied every `target_sync_interval` gradient steps.
    pub fn train_step(&mut self, batch: &SampledBatch) -> Result<f64, AgentError> {
        let targets = td_target(&batch.entries, &self.online, &self.target, self.cfg.gamma)?;

        if self.cfg.noisy_layers {
            self.online.resample_noise(&mut self.explore_rng);
        }
        let mut grad = vec![0.0; self.online.param_count()];
        let mut loss = 0.0;
        let mut new_priorities = Vec::with_capacity(batch.entries.len());
        let scale = 1.0 / batch.entries.len() as f64;
        for ((entry, &target), &w) in batch
            .entries
            .iter()
            .zip(&targets)
            .zip(&batch.weights)
        {
            let trace = self.online.forward_trace(entry.observation.as_slice())?;
            let a = entry.action.index();
            let delta = trace.q[a] - target;
            loss += w * huber(delta) * scale;
            let mut dq = [0.0; ACTION_COUNT];
            dq[a] = w * huber_grad(delta) * scale;
            self.online.backward(&trace, &dq, &mut grad);
            new_priorities.push(delta.abs() + 1e-6);
        }

        if !loss.is_finite() {
            let dump = serde_json::to_string_pretty(&batch.entries).unwrap_or_default();
            return Err(AgentError::NonFiniteLoss { dump });
        }

        if loss != 0.0 {
            self.opt.step(self.online.params_mut(), &grad);
        }
        for (&ix, p) in batch.indices.iter().zip(new_priorities) {
            self.replay.update_priority(ix, p);
        }
        self.grad_steps += 1;
        if self.grad_steps % self.cfg.target_sync_interval == 0 {
            self.target.copy_params_from(&self.online);
            self.target.zero_noise();
        }
        Ok(loss)
    }

    /// Loss of a batch against fixed targets without touching any state;
    /// used by the finite-difference checks.
    pub fn loss_only(&self, batch: &SampledBatch, targets: &[f64]) -> Result<f64, AgentError> {
        let mut loss = 0.0;
        let scale = 1.0 / batch.entries.len() as f64;
        for ((entry, &target), &w) in batch.entries.iter().zip(targets).zip(&batch.weights) {
            let q = self.online.q_values(entry.observation.as_slice())?;
            let delta = q[entry.action.index()] - target;
            loss += w * huber(delta) * scale;
        }
        Ok(loss)
    }

    /// Analytic parameter gradient of [`Self::loss_only`].
    pub fn loss_grad(&self, batch: &SampledBatch, targets: &[f64]) -> Result<Vec<f64>, AgentError> {
        let mut grad = vec![0.0; self.online.param_count()];
        let scale = 1.0 / batch.entries.len() as f64;
        for ((entry, &target), &w) in batch.entries.iter().zip(targets).zip(&batch.weights) {
            let trace = self.online.forward_trace(entry.observation.as_slice())?;
            let a = entry.action.index();
            let delta = trace.q[a] - target;
            let mut dq = [0.0; ACTION_COUNT];
            dq[a] = w * huber_grad(delta) * scale;
            self.online.backward(&trace, &dq, &mut grad);
        }
        Ok(grad)
    }

    pub fn perturb_param(&mut self, index: usize, delta: f64) {
        self.online.params_mut()[index] += delta;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            obs_dim: OBS_DIM,
            agent: self.cfg.clone(),
            params: self.online.params().to_vec(),
            grad_steps: self.grad_steps,
        }
    }

    /// Rebuild an agent for evaluation from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint, seed: u64) -> Result<Self, AgentError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(AgentError::CheckpointMismatch(format!(
                "version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.obs_dim != OBS_DIM {
            return Err(AgentError::CheckpointMismatch(format!(
                "observation dimension {} (expected {OBS_DIM})",
                ck.obs_dim
            )));
        }
        let mut agent = DqnAgent::new(ck.agent.clone(), seed);
        agent
            .online
            .set_params(ck.params.clone())
            .map_err(|e| AgentError::CheckpointMismatch(e.to_string()))?;
        agent.target.copy_params_from(&agent.online);
        agent.online.zero_noise();
        agent.target.zero_noise();
        agent.grad_steps = ck.grad_steps;
        Ok(agent)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Structured-text parameter dump with a config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub obs_dim: usize,
    pub agent: AgentConfig,
    pub params: Vec<f64>,
    pub grad_steps: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), AgentError> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
