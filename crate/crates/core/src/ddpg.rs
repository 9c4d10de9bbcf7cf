//! Deep deterministic policy gradient agent.
//!
//! Four networks: actor μ(s), critic Q(s, a), and slowly tracking copies of
//! both used for the Bellman targets. Observations are normalised with
//! [`ObsScale`] before entering either network; the critic sees the action
//! divided by the acceleration scale as its last input.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Env, ObsScale, Observation, ScenarioConfig, OBS_DIM};
use crate::nn::{Adam, Dense, DenseNet, OutputHead};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "platoon-guard-policy";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_GAMMA: f64 = 0.99999;
/// Seeds the held-out validation episodes; shared by every run so scores compare across seeds.
pub const VALIDATION_SEED: u64 = 0x5AFE_6A95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    /// Exploration noise standard deviation at the first environment step (m/s²).
    pub noise_std0: f64,
    /// Multiplicative decay of the noise std per [`NoiseDecayUnit`].
    pub noise_decay: f64,
    pub noise_decay_unit: NoiseDecayUnit,
    /// The decayed std never drops below this.
    pub noise_std_min: f64,
    /// Rewards are multiplied by this before entering the Bellman targets.
    pub reward_scale: f64,
    /// Clamp Bellman targets to this return range (unscaled reward units).
    pub target_bounds: Option<[f64; 2]>,
    pub action_min: f64,
    pub action_max: f64,
    /// Environment steps each chosen action is held for. One transition
    /// covers the whole hold and carries the summed reward.
    pub action_repeat: usize,
    /// Weight of the `mean(u²)` penalty on the actor's pre-tanh output.
    pub actor_preact_penalty: f64,
    /// Extra scale on the actor's last layer at initialisation.
    pub actor_final_scale: f64,
    /// No parameter updates until the buffer holds this many transitions.
    pub warmup: usize,
    pub obs_scale: ObsScale,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            tau: 0.005,
            lr_actor: 0.001,
            lr_critic: 0.002,
            batch_size: 512,
            buffer_capacity: 10_000,
            hidden: vec![256, 256, 256],
            noise_std0: 1.0,
            noise_decay: 0.9995,
            noise_decay_unit: NoiseDecayUnit::Step,
            noise_std_min: 0.0,
            reward_scale: 0.001,
            target_bounds: Some([-3000.0, 22_500.0]),
            action_min: -7.5,
            action_max: 3.0,
            action_repeat: 10,
            actor_preact_penalty: 0.1,
            actor_final_scale: 0.01,
            warmup: 512,
            obs_scale: ObsScale::default(),
        }
    }
}

/// What one tick of the exploration-noise decay counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDecayUnit {
    Step,
    Episode,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.action_repeat == 0 {
            return bad("batch size, buffer capacity and action repeat must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.noise_std0 >= 0.0
            && self.noise_std_min >= 0.0
            && self.noise_decay > 0.0
            && self.noise_decay <= 1.0)
        {
            return bad("noise std must be non-negative and decay in (0, 1]");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        if let Some([lo, hi]) = self.target_bounds {
            if lo.partial_cmp(&hi) != Some(Ordering::Less) {
                return bad("target_bounds must be an increasing pair");
            }
        }
        if self.action_min.partial_cmp(&self.action_max) != Some(Ordering::Less) {
            return bad("action_min must be below action_max");
        }
        Ok(())
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM + 1];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    pub fn actor_head(&self) -> OutputHead {
        OutputHead::ScaledTanh {
            min: self.action_min,
            max: self.action_max,
        }
    }

    /// `σ₀ · decay^ticks`.
    pub fn noise_std(&self, ticks: u64) -> f64 {
        (self.noise_std0 * self.noise_decay.powf(ticks as f64)).max(self.noise_std_min)
    }
}

/// One `(s, a, r, s', done)` record. States are raw (unnormalised) observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; OBS_DIM],
    pub done: bool,
}

/// Fixed-capacity FIFO transition store with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            data: Vec::with_capacity(capacity),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends, overwriting the oldest record once full.
    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    /// Storage indices of a uniform sample without replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.data.is_empty() || batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let k = batch.min(self.data.len());
        Ok(index::sample(rng, self.data.len(), k).into_vec())
    }

    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| self.data[i])
            .collect())
    }
}

/// Adds decayed Gaussian noise to an actor output and clips to the action range.
/// `ticks` counts steps or episodes according to [`AgentConfig::noise_decay_unit`].
pub fn explore_action(actor_out: f64, ticks: u64, config: &AgentConfig, rng: &mut ChaCha8Rng) -> f64 {
    let std = config.noise_std(ticks);
    let noise = if std > 0.0 {
        Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    };
    (actor_out + noise).clamp(config.action_min, config.action_max)
}

/// A deployable actor: network plus the constants needed to feed it.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actor: DenseNet,
    pub obs_scale: ObsScale,
    pub action_min: f64,
    pub action_max: f64,
    /// Steps each action is held for.
    pub action_repeat: usize,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    head: OutputHead,
    obs_scale: ObsScale,
    action_range: [f64; 2],
    #[serde(default = "one")]
    action_repeat: usize,
    layers: Vec<Dense>,
}

impl Policy {
    pub fn act(&self, obs: &Observation) -> Result<f64> {
        let x = self.obs_scale.normalize(obs);
        Ok(self.actor.forward_one(&x)?[0])
    }

    /// Actions for several observations in one batched pass.
    pub fn act_batch(&self, obs: &[Observation]) -> Result<Vec<f64>> {
        let x: Vec<f64> = obs.iter().flat_map(|o| self.obs_scale.normalize(o)).collect();
        self.actor.forward(&x, obs.len())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.actor.layer_sizes(),
            head: self.actor.head(),
            obs_scale: self.obs_scale,
            action_range: [self.action_min, self.action_max],
            action_repeat: self.action_repeat,
            layers: self.actor.layers().to_vec(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let file: CheckpointFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let actor = DenseNet::from_layers(file.layers, file.head)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if actor.layer_sizes() != file.layer_sizes {
            return Err(Error::Checkpoint("layer sizes do not match parameters".into()));
        }
        if actor.input_dim() != OBS_DIM || actor.output_dim() != 1 {
            return Err(Error::Checkpoint("actor must map 8 inputs to 1 output".into()));
        }
        if !actor.all_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        if file.action_repeat == 0 {
            return Err(Error::Checkpoint("action_repeat must be positive".into()));
        }
        Ok(Self {
            actor,
            obs_scale: file.obs_scale,
            action_min: file.action_range[0],
            action_max: file.action_range[1],
            action_repeat: file.action_repeat,
        })
    }
}

/// Actor, critic, their targets and optimisers.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub actor_target: DenseNet,
    pub critic_target: DenseNet,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        let actor = DenseNet::random(
            &config.actor_sizes(),
            config.actor_head(),
            config.actor_final_scale,
            &mut rng,
        )?;
        let critic = DenseNet::random(&config.critic_sizes(), OutputHead::Linear, 1.0, &mut rng)?;
        Ok(Self::from_networks(config, actor, critic))
    }

    /// Builds an agent around given networks; targets start as exact copies.
    pub fn from_networks(config: AgentConfig, actor: DenseNet, critic: DenseNet) -> Self {
        let actor_opt = Adam::new(&actor, config.lr_actor);
        let critic_opt = Adam::new(&critic, config.lr_critic);
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            config,
        }
    }

    pub fn policy(&self) -> Policy {
        Policy {
            actor: self.actor.clone(),
            obs_scale: self.config.obs_scale,
            action_min: self.config.action_min,
            action_max: self.config.action_max,
            action_repeat: self.config.action_repeat,
        }
    }

    /// Deterministic action.
    pub fn act(&self, obs: &Observation) -> Result<f64> {
        let x = self.config.obs_scale.normalize(obs);
        Ok(self.actor.forward_one(&x)?[0])
    }

    fn states(&self, batch: &[Transition], next: bool) -> Vec<f64> {
        let scale = &self.config.obs_scale;
        batch
            .iter()
            .flat_map(|t| {
                let s = if next { t.next_state } else { t.state };
                scale.normalize(&Observation::from_array(s))
            })
            .collect()
    }

    /// Interleaves normalised states with (scaled) actions into critic inputs.
    fn critic_inputs(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let a_scale = self.config.obs_scale.accel;
        let mut out = Vec::with_capacity(actions.len() * (OBS_DIM + 1));
        for (s, a) in states.chunks_exact(OBS_DIM).zip(actions) {
            out.extend_from_slice(s);
            out.push(a / a_scale);
        }
        out
    }

    /// Critic value `Q(s, a)` on raw observations.
    pub fn q_value(&self, obs: &Observation, action: f64) -> Result<f64> {
        let s = self.config.obs_scale.normalize(obs);
        let x = self.critic_inputs(&s, &[action]);
        Ok(self.critic.forward_one(&x)?[0])
    }

    /// `y = r + γ·(1 − done)·Q'(s', μ'(s'))`.
    pub fn bellman_targets(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = batch.len();
        let next = self.states(batch, true);
        let next_actions = self.actor_target.forward(&next, n)?;
        let q_next = self
            .critic_target
            .forward(&self.critic_inputs(&next, &next_actions), n)?;
        Ok(batch
            .iter()
            .zip(q_next)
            .map(|(t, q)| {
                let y = bellman_target(t.reward * self.config.reward_scale, t.done, q, self.config.gamma);
                match self.config.target_bounds {
                    Some([lo, hi]) => y.clamp(lo * self.config.reward_scale, hi * self.config.reward_scale),
                    None => y,
                }
            })
            .collect())
    }

    /// One Adam step on the mean squared Bellman error. Returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let targets = self.bellman_targets(batch)?;
        let (grads, loss) = self.critic_gradient(batch, &targets)?;
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// Gradient of `mean (Q(s, a) − y)²` with respect to the critic parameters,
    /// for fixed targets `y`, plus the loss value.
    pub fn critic_gradient(&self, batch: &[Transition], targets: &[f64]) -> Result<(crate::nn::Gradients, f64)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if targets.len() != batch.len() {
            return Err(Error::Dimension {
                expected: batch.len(),
                got: targets.len(),
            });
        }
        let n = batch.len();
        let states = self.states(batch, false);
        let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
        let tape = self
            .critic
            .forward_tape(&self.critic_inputs(&states, &actions), n)?;
        let mut loss = 0.0;
        let upstream: Vec<f64> = tape
            .output()
            .iter()
            .zip(targets)
            .map(|(q, y)| {
                let d = q - y;
                loss += d * d;
                2.0 * d / n as f64
            })
            .collect();
        let (grads, _) = self.critic.backward(&tape, &upstream)?;
        Ok((grads, loss / n as f64))
    }

    /// Gradient of the actor loss `−mean Q(s, μ(s)) + λ·mean(u²)` with respect
    /// to the actor parameters, where `u` is the pre-tanh output and λ is
    /// [`AgentConfig::actor_preact_penalty`]. Also returns `mean Q(s, μ(s))`.
    /// The critic is left untouched.
    pub fn actor_gradient(&self, batch: &[Transition]) -> Result<(crate::nn::Gradients, f64)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = batch.len();
        let states = self.states(batch, false);
        let actor_tape = self.actor.forward_tape(&states, n)?;
        let critic_tape = self
            .critic
            .forward_tape(&self.critic_inputs(&states, actor_tape.output()), n)?;
        let objective = critic_tape.output().iter().sum::<f64>() / n as f64;
        let upstream = vec![1.0 / n as f64; n];
        let (_, dq_dinput) = self.critic.backward(&critic_tape, &upstream)?;
        let a_scale = self.config.obs_scale.accel;
        let head = self.actor.head();
        let penalty = self.config.actor_preact_penalty;
        // Ascent on Q is descent on -Q.
        let d_pre: Vec<f64> = dq_dinput
            .chunks_exact(OBS_DIM + 1)
            .zip(actor_tape.pre_head())
            .map(|(row, &u)| -row[OBS_DIM] / a_scale * head.derivative(u) + 2.0 * penalty * u / n as f64)
            .collect();
        let (grads, _) = self.actor.backward_pre_head(&actor_tape, d_pre)?;
        Ok((grads, objective))
    }

    /// One Adam step ascending the critic's value of the actor's actions.
    /// Returns the objective before the step.
    pub fn actor_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let (grads, objective) = self.actor_gradient(batch)?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(objective)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.actor_target.soft_update(&self.actor, tau)?;
        self.critic_target.soft_update(&self.critic, tau)
    }

    pub fn all_finite(&self) -> bool {
        self.actor.all_finite()
            && self.critic.all_finite()
            && self.actor_target.all_finite()
            && self.critic_target.all_finite()
    }
}

pub fn bellman_target(reward: f64, done: bool, q_next: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_next
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub episodes: usize,
    /// Leading episodes that use the exploration-stage follower.
    pub exploration_episodes: usize,
    /// Perform one critic/actor/target update every this many decisions.
    pub update_every: usize,
    /// When false the agent only acts; no parameters change.
    pub learn: bool,
    /// Stop early once the moving-average return over `moving_window`
    /// episodes reaches this value.
    pub stop_at_average: Option<f64>,
    pub moving_window: usize,
    /// Score the greedy policy on held-out exploitation episodes every this
    /// many episodes (0 disables). The best-scoring snapshot is kept.
    pub validation_every: usize,
    pub validation_episodes: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            exploration_episodes: 50,
            update_every: 1,
            learn: true,
            stop_at_average: Some(22_000.0),
            moving_window: 30,
            validation_every: 10,
            validation_episodes: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    /// Undiscounted return per episode.
    pub returns: Vec<f64>,
    /// Per-step discounted return with the agent's `gamma`.
    #[serde(default)]
    pub discounted_returns: Vec<f64>,
    pub collided: Vec<bool>,
    pub steps: Vec<usize>,
    /// Mean critic loss over the episode's updates (0 when none ran).
    pub critic_loss: Vec<f64>,
    /// Mean actor objective over the episode's updates (0 when none ran).
    pub actor_objective: Vec<f64>,
    /// Exploration noise std at the end of each episode.
    pub noise_std: Vec<f64>,
    pub total_updates: u64,
    #[serde(default)]
    pub validation: Vec<Validation>,
    /// Episode after which the kept snapshot was taken.
    #[serde(default)]
    pub best_episode: Option<usize>,
}

/// Greedy score of one policy snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub episode: usize,
    pub collisions: usize,
    pub mean_return: f64,
    /// Mean over episodes of the smallest gap around the controlled vehicle.
    #[serde(default)]
    pub mean_min_gap: f64,
}

impl Validation {
    /// Fewer collisions first, then higher return, then wider margins. Ties go to `self`.
    pub fn at_least_as_good(&self, other: &Validation) -> bool {
        let key = |v: &Validation| (v.collisions, -v.mean_return, -v.mean_min_gap);
        key(self) <= key(other)
    }
}

impl TrainingLog {
    /// Score of the kept snapshot.
    pub fn best_validation(&self) -> Option<Validation> {
        let ep = self.best_episode?;
        self.validation.iter().copied().find(|v| v.episode == ep)
    }

    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        moving_average(&self.returns, window)
    }

    /// First episode index at which the moving average reaches `threshold`.
    pub fn first_reaching(&self, window: usize, threshold: f64) -> Option<usize> {
        self.moving_average(window)
            .iter()
            .position(|&m| m >= threshold)
            .map(|i| i + window - 1)
    }
}

/// Trailing means over complete windows: element `i` averages `values[i..i + window]`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Everything [`train`] mutates, so a run can be inspected afterwards.
pub struct Trainer {
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub env_steps: u64,
    pub decisions: u64,
    pub episodes: u64,
    /// Best validated snapshot so far.
    pub best: Option<(Validation, Policy)>,
    noise_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(agent: Agent, seed: u64) -> Self {
        let buffer = ReplayBuffer::new(agent.config.buffer_capacity);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(21);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
        sample_rng.set_stream(31);
        Self {
            agent,
            buffer,
            env_steps: 0,
            decisions: 0,
            episodes: 0,
            best: None,
            noise_rng,
            sample_rng,
        }
    }

    fn noise_ticks(&self) -> u64 {
        match self.agent.config.noise_decay_unit {
            NoiseDecayUnit::Step => self.decisions,
            NoiseDecayUnit::Episode => self.episodes,
        }
    }

    /// Kept snapshot if validation ran, otherwise the current policy.
    pub fn best_policy(&self) -> Policy {
        self.best.as_ref().map_or_else(|| self.agent.policy(), |(_, p)| p.clone())
    }

    /// Greedy rollouts of the current actor on fixed episode seeds.
    pub fn validate(&self, scenario: &ScenarioConfig, seeds: &[u64], episode: usize) -> Result<Validation> {
        let mut env = Env::new(scenario.clone())?;
        let repeat = self.agent.config.action_repeat.max(1);
        let (mut collisions, mut total, mut gaps) = (0, 0.0, 0.0);
        for &s in seeds {
            let mut obs = env.reset(s)?;
            let mut hit = false;
            let mut min_gap = obs.d_fm.min(obs.d_mr);
            while !env.is_done() {
                let a = self.agent.act(&obs)?;
                for _ in 0..repeat {
                    let res = env.step(a)?;
                    obs = res.observation;
                    let chain = env.chain()?;
                    min_gap = min_gap.min(chain.gap(0)?).min(chain.gap(1)?);
                    hit |= !res.info.collisions.is_empty();
                    if res.done {
                        break;
                    }
                }
            }
            collisions += hit as usize;
            total += env.episode_return();
            gaps += min_gap;
        }
        let n = seeds.len().max(1) as f64;
        Ok(Validation {
            episode,
            collisions,
            mean_return: total / n,
            mean_min_gap: gaps / n,
        })
    }

    /// Runs `config.episodes` episodes: the first `exploration_episodes` in
    /// `exploration`, the rest in `exploitation`.
    pub fn run(
        &mut self,
        exploration: &ScenarioConfig,
        exploitation: &ScenarioConfig,
        config: &TrainingConfig,
        seed: u64,
        mut on_episode: impl FnMut(usize, &TrainingLog),
    ) -> Result<TrainingLog> {
        if exploration.controlled_count() != 1 || exploitation.controlled_count() != 1 {
            return Err(Error::InvalidConfig(
                "training scenarios must have exactly one controlled vehicle".into(),
            ));
        }
        let mut explore_env = Env::new(exploration.clone())?;
        let mut exploit_env = Env::new(exploitation.clone())?;
        let mut episode_rng = ChaCha8Rng::seed_from_u64(seed);
        episode_rng.set_stream(1);
        let mut validation_rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
        let validation_seeds: Vec<u64> = (0..config.validation_episodes)
            .map(|_| rand::Rng::random::<u64>(&mut validation_rng))
            .collect();
        let update_every = config.update_every.max(1) as u64;
        let repeat = self.agent.config.action_repeat.max(1);

        let mut log = TrainingLog {
            seed,
            ..TrainingLog::default()
        };
        for ep in 0..config.episodes {
            let env = if ep < config.exploration_episodes {
                &mut explore_env
            } else {
                &mut exploit_env
            };
            let ep_seed = rand::Rng::random::<u64>(&mut episode_rng);
            let mut obs = env.reset(ep_seed)?;
            let (mut loss_sum, mut obj_sum, mut updates) = (0.0, 0.0, 0u64);
            let mut steps = 0;
            let (mut discounted, mut weight) = (0.0, 1.0);
            let mut collided = false;
            let mut done = false;
            while !done {
                let a_det = self.agent.act(&obs)?;
                let a = explore_action(a_det, self.noise_ticks(), &self.agent.config, &mut self.noise_rng);
                let mut reward = 0.0;
                let mut next = obs;
                for _ in 0..repeat {
                    let res = env.step(a)?;
                    reward += res.reward;
                    discounted += weight * res.reward;
                    weight *= self.agent.config.gamma;
                    next = res.observation;
                    done = res.done;
                    self.env_steps += 1;
                    steps += 1;
                    collided |= !res.info.collisions.is_empty();
                    if done {
                        break;
                    }
                }
                self.buffer.push(Transition {
                    state: obs.to_array(),
                    action: a,
                    reward,
                    next_state: next.to_array(),
                    done,
                });
                self.decisions += 1;

                if config.learn
                    && self.buffer.len() >= self.agent.config.warmup.max(1)
                    && self.decisions.is_multiple_of(update_every)
                {
                    let batch = self
                        .buffer
                        .sample(self.agent.config.batch_size, &mut self.sample_rng)?;
                    loss_sum += self.agent.critic_update(&batch)?;
                    obj_sum += self.agent.actor_update(&batch)?;
                    self.agent.soft_update_targets()?;
                    updates += 1;
                }
                obs = next;
            }
            if !self.agent.all_finite() {
                return Err(Error::InvalidConfig(format!(
                    "non-finite network parameters after episode {ep}"
                )));
            }
            let denom = updates.max(1) as f64;
            log.returns.push(env.episode_return());
            log.discounted_returns.push(discounted);
            log.collided.push(collided);
            log.steps.push(steps);
            log.critic_loss.push(loss_sum / denom);
            log.actor_objective.push(obj_sum / denom);
            self.episodes += 1;
            log.noise_std.push(self.agent.config.noise_std(self.noise_ticks()));
            log.total_updates += updates;
            if config.validation_every > 0
                && !validation_seeds.is_empty()
                && ep >= config.exploration_episodes
                && (ep + 1) % config.validation_every == 0
            {
                let v = self.validate(exploitation, &validation_seeds, ep)?;
                log.validation.push(v);
                if self.best.as_ref().is_none_or(|(b, _)| v.at_least_as_good(b)) {
                    self.best = Some((v, self.agent.policy()));
                    log.best_episode = Some(ep);
                }
            }
            on_episode(ep, &log);

            if let Some(target) = config.stop_at_average {
                let w = config.moving_window;
                if w > 0 && log.returns.len() >= w {
                    let tail = &log.returns[log.returns.len() - w..];
                    if tail.iter().sum::<f64>() / w as f64 >= target {
                        break;
                    }
                }
            }
        }
        Ok(log)
    }
}

/// Trains a fresh agent from `seed`.
pub fn train(
    agent_config: &AgentConfig,
    exploration: &ScenarioConfig,
    exploitation: &ScenarioConfig,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(Agent, TrainingLog)> {
    let agent = Agent::new(agent_config.clone(), seed)?;
    let mut trainer = Trainer::new(agent, seed);
    let log = trainer.run(exploration, exploitation, config, seed, |_, _| {})?;
    Ok((trainer.agent, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_scenario, ScenarioId, ScenarioOverrides};

    fn small_config() -> AgentConfig {
        AgentConfig {
            hidden: vec![16, 16],
            batch_size: 32,
            warmup: 32,
            buffer_capacity: 500,
            reward_scale: 1.0,
            target_bounds: None,
            actor_preact_penalty: 0.0,
            action_repeat: 1,
            ..AgentConfig::default()
        }
    }

    fn transition(reward: f64, done: bool, seed: f64) -> Transition {
        Transition {
            state: [16.0 + seed, 16.0, 25.0, 25.0, 25.0, -seed, 0.0, 0.0],
            action: -1.0 - seed,
            reward,
            next_state: [15.9 + seed, 16.0, 24.9, 25.0, 25.0, -seed, 0.0, 0.0],
            done,
        }
    }

    #[test]
    fn default_hyperparameters() {
        let c = AgentConfig::default();
        assert_eq!(c.actor_sizes(), vec![8, 256, 256, 256, 1]);
        assert_eq!(c.critic_sizes(), vec![9, 256, 256, 256, 1]);
        assert_eq!((c.gamma, c.tau, c.lr_actor, c.lr_critic), (0.99999, 0.005, 0.001, 0.002));
        assert_eq!((c.batch_size, c.buffer_capacity), (512, 10_000));
        assert_eq!(c.noise_decay, 0.9995);
        assert_eq!(c.noise_decay_unit, NoiseDecayUnit::Step);
        assert_eq!((c.action_repeat, c.reward_scale), (10, 0.001));
        let t = TrainingConfig::default();
        assert_eq!((t.episodes, t.stop_at_average, t.moving_window), (2000, Some(22_000.0), 30));
    }

    #[test]
    fn bellman_target_examples() {
        assert_close!(bellman_target(15.0, false, 1000.0, 0.99999), 1014.99, 1e-9);
        assert_eq!(bellman_target(-3000.0, true, 1234.0, 0.99999), -3000.0);
    }

    #[test]
    fn targets_use_target_networks() {
        let mut agent = Agent::new(small_config(), 1).unwrap();
        let batch = [transition(15.0, false, 0.3)];
        let y0 = agent.bellman_targets(&batch).unwrap()[0];
        // Perturbing the online critic must not move the target.
        for l in agent.critic.layers_mut() {
            l.biases.iter_mut().for_each(|b| *b += 5.0);
        }
        assert_eq!(agent.bellman_targets(&batch).unwrap()[0], y0);
        let next = Observation::from_array(batch[0].next_state);
        let mu = agent.actor_target.forward_one(&agent.config.obs_scale.normalize(&next)).unwrap()[0];
        let mut probe = agent.clone();
        probe.critic = probe.critic_target.clone();
        let q = probe.q_value(&next, mu).unwrap();
        assert_close!(y0, 15.0 + 0.99999 * q, 1e-9);
    }

    #[test]
    fn identical_batch_loss_is_squared_error() {
        let mut agent = Agent::new(small_config(), 2).unwrap();
        let t = transition(15.0, false, 0.1);
        let y = agent.bellman_targets(&[t]).unwrap()[0];
        let q = agent
            .q_value(&Observation::from_array(t.state), t.action)
            .unwrap();
        let loss = agent.critic_update(&[t; 16]).unwrap();
        assert_close!(loss, (q - y) * (q - y), 1e-9 * (q - y).powi(2).max(1.0));
    }

    #[test]
    fn empty_batches_rejected() {
        let mut agent = Agent::new(small_config(), 3).unwrap();
        assert!(matches!(agent.critic_update(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(agent.actor_update(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn constant_critic_gives_zero_actor_gradient() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = DenseNet::random(&cfg.actor_sizes(), cfg.actor_head(), 1.0, &mut rng).unwrap();
        let mut critic = DenseNet::zeros(&cfg.critic_sizes(), OutputHead::Linear).unwrap();
        critic.layers_mut().last_mut().unwrap().biases[0] = 42.0;
        let agent = Agent::from_networks(cfg, actor, critic);
        let batch: Vec<_> = (0..8).map(|i| transition(15.0, false, i as f64 * 0.1)).collect();
        let (g, obj) = agent.actor_gradient(&batch).unwrap();
        assert_eq!(obj, 42.0);
        assert!(g.iter().all(|v| v == 0.0));
    }

    #[test]
    fn single_sample_batch_equals_per_sample_gradient() {
        let agent = Agent::new(small_config(), 5).unwrap();
        let batch: Vec<_> = (0..4).map(|i| transition(15.0, false, i as f64 * 0.2)).collect();
        let (g_all, _) = agent.actor_gradient(&batch).unwrap();
        let per: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| agent.actor_gradient(std::slice::from_ref(t)).unwrap().0.iter().collect())
            .collect();
        for (k, g) in g_all.iter().enumerate() {
            let mean = per.iter().map(|p| p[k]).sum::<f64>() / 4.0;
            assert_close!(g, mean, 1e-12);
        }
    }

    #[test]
    fn actor_update_leaves_critic_alone() {
        let mut agent = Agent::new(small_config(), 6).unwrap();
        let critic = agent.critic.clone();
        let actor = agent.actor.clone();
        let batch: Vec<_> = (0..8).map(|i| transition(15.0, false, i as f64 * 0.1)).collect();
        agent.actor_update(&batch).unwrap();
        assert_eq!(agent.critic, critic);
        assert_ne!(agent.actor, actor);
    }

    #[test]
    fn noise_schedule() {
        let c = AgentConfig::default();
        assert_eq!(c.noise_std(0), 1.0);
        assert_close!(c.noise_std(4605), 0.1, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..2000 {
            let a = explore_action(2.9, step, &c, &mut rng);
            assert!((-7.5..=3.0).contains(&a));
            let a = explore_action(-7.4, step, &c, &mut rng);
            assert!((-7.5..=3.0).contains(&a));
        }
    }

    #[test]
    fn replay_buffer_is_fifo_and_capped() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(transition(i as f64, false, 0.0));
        }
        assert_eq!(buf.len(), 3);
        let mut rewards: Vec<f64> = (0..3).map(|i| buf.get(i).unwrap().reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = buf.sample_indices(3, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(ReplayBuffer::new(4).sample_indices(2, &mut rng).is_err());
    }

    #[test]
    fn replay_sampling_covers_every_index() {
        let mut buf = ReplayBuffer::new(1000);
        for i in 0..1000 {
            buf.push(transition(i as f64, false, 0.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0u32; 1000];
        let mut draws = 0;
        while draws < 100_000 {
            for i in buf.sample_indices(500, &mut rng).unwrap() {
                counts[i] += 1;
            }
            draws += 500;
        }
        assert!(counts.iter().all(|&c| c > 0));
        let expected = draws as f64 / 1000.0;
        // Each index appears in a batch with probability 1/2, so its count is
        // Binomial(200, 1/2) and the variance is expected·(1 − 1/2).
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / (expected * 0.5))
            .sum();
        // 999 degrees of freedom.
        assert!(chi2 > 850.0 && chi2 < 1150.0, "chi2 = {chi2}");
    }

    #[test]
    fn no_learning_no_noise_is_deterministic() {
        let cfg = AgentConfig {
            noise_std0: 0.0,
            ..small_config()
        };
        let train_cfg = TrainingConfig {
            episodes: 3,
            exploration_episodes: 1,
            learn: false,
            ..TrainingConfig::default()
        };
        let mut scen = make_scenario(ScenarioId::TrainRandom, &ScenarioOverrides::default()).unwrap();
        scen.horizon_steps = 200;
        let explore = ScenarioConfig {
            follower_policy: crate::env::exploration_follower_policy(),
            ..scen.clone()
        };
        let (a1, l1) = train(&cfg, &explore, &scen, &train_cfg, 17).unwrap();
        let (a2, l2) = train(&cfg, &explore, &scen, &train_cfg, 17).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(a1.actor, a2.actor);
        assert_eq!(l1.total_updates, 0);
        assert_eq!(a1.actor, Agent::new(cfg, 17).unwrap().actor);
    }

    #[test]
    fn validation_keeps_best_snapshot() {
        let scen = make_scenario(
            ScenarioId::TrainRandom,
            &ScenarioOverrides {
                horizon_steps: Some(150),
                ..ScenarioOverrides::default()
            },
        )
        .unwrap();
        let train_cfg = TrainingConfig {
            episodes: 6,
            exploration_episodes: 2,
            validation_every: 1,
            validation_episodes: 3,
            stop_at_average: None,
            ..TrainingConfig::default()
        };
        let mut trainer = Trainer::new(Agent::new(small_config(), 6).unwrap(), 6);
        let log = trainer.run(&scen, &scen, &train_cfg, 6, |_, _| {}).unwrap();
        assert_eq!(log.validation.iter().map(|v| v.episode).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        let best = log.best_validation().unwrap();
        assert!(log.validation.iter().all(|v| best.at_least_as_good(v)));
        let (kept, policy) = trainer.best.clone().unwrap();
        assert_eq!(kept, best);
        assert_eq!(trainer.best_policy(), policy);
        assert_eq!(log.discounted_returns.len(), 6);
        assert!(log.returns.iter().zip(&log.discounted_returns).all(|(r, d)| d.abs() <= r.abs() + 1e-9));
    }

    #[test]
    fn buffer_caps_after_many_episodes() {
        let cfg = AgentConfig {
            hidden: vec![4],
            action_repeat: 1,
            ..AgentConfig::default()
        };
        let train_cfg = TrainingConfig {
            episodes: 20,
            exploration_episodes: 0,
            learn: false,
            stop_at_average: None,
            ..TrainingConfig::default()
        };
        let scen = make_scenario(ScenarioId::Brake2, &ScenarioOverrides::default())
            .unwrap()
            .deterministic();
        let mut trainer = Trainer::new(Agent::new(cfg, 0).unwrap(), 0);
        let log = trainer.run(&scen, &scen, &train_cfg, 0, |_, _| {}).unwrap();
        assert_eq!(log.returns.len(), 20);
        assert!(trainer.env_steps >= 10_000);
        assert_eq!(trainer.buffer.len(), 10_000);
    }

    #[test]
    fn checkpoint_round_trip() {
        let agent = Agent::new(small_config(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/policy.json");
        agent.policy().save(&path).unwrap();
        let loaded = Policy::load(&path).unwrap();
        assert_eq!(loaded, agent.policy());
        std::fs::write(&path, b"{\"format\": 3}").unwrap();
        assert!(matches!(Policy::load(&path), Err(Error::Checkpoint(_))));
        assert!(Policy::load(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
        let log = TrainingLog {
            returns: vec![0.0, 0.0, 10.0, 10.0],
            ..TrainingLog::default()
        };
        assert_eq!(log.first_reaching(2, 10.0), Some(3));
        assert_eq!(log.first_reaching(2, 11.0), None);
    }
}
