//! The car-following decision process around [`Chain`].
//!
//! Vehicle 0 is the scripted leader, the last vehicle is a non-learning
//! follower, and every vehicle in between is controlled externally through
//! [`Env::step`] / [`Env::step_all`]. Each controlled vehicle observes only its
//! two bumper gaps, its own motion, and Kalman estimates of its neighbours.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baseline::{scripted_leader_action, BaselineController, DEFAULT_TTC_THRESHOLD};
use crate::estimation::{KalmanParams, KalmanTrack};
use crate::sim::{Chain, Vehicle, VehicleClass, VehicleSpec, VehicleState};
use crate::{Error, Result};

pub const OBS_DIM: usize = 8;
pub const REWARD_SAFE: f64 = 15.0;
pub const REWARD_COLLISION: f64 = -3000.0;
pub const DEFAULT_HORIZON: usize = 1500;
pub const DEFAULT_DT: f64 = 0.01;
/// 90 km/h.
pub const NOMINAL_SPEED: f64 = 25.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// What a controlled vehicle knows about its surroundings at one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub d_fm: f64,
    pub d_mr: f64,
    pub v_f: f64,
    pub v_m: f64,
    pub v_r: f64,
    pub a_f: f64,
    pub a_m: f64,
    pub a_r: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.d_fm, self.d_mr, self.v_f, self.v_m, self.v_r, self.a_f, self.a_m, self.a_r,
        ]
    }

    pub fn from_array(a: [f64; OBS_DIM]) -> Self {
        let [d_fm, d_mr, v_f, v_m, v_r, a_f, a_m, a_r] = a;
        Self {
            d_fm,
            d_mr,
            v_f,
            v_m,
            v_r,
            a_f,
            a_m,
            a_r,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Fixed affine scaling applied before observations reach a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsScale {
    pub distance: f64,
    pub speed: f64,
    pub accel: f64,
}

impl Default for ObsScale {
    fn default() -> Self {
        Self {
            distance: 50.0,
            speed: 25.0,
            accel: 7.5,
        }
    }
}

impl ObsScale {
    fn factors(&self) -> [f64; OBS_DIM] {
        let (d, v, a) = (self.distance, self.speed, self.accel);
        [d, d, v, v, v, a, a, a]
    }

    pub fn normalize(&self, obs: &Observation) -> [f64; OBS_DIM] {
        let mut out = obs.to_array();
        for (x, f) in out.iter_mut().zip(self.factors()) {
            *x /= f;
        }
        out
    }

    pub fn denormalize(&self, v: &[f64; OBS_DIM]) -> Observation {
        let mut out = *v;
        for (x, f) in out.iter_mut().zip(self.factors()) {
            *x *= f;
        }
        Observation::from_array(out)
    }
}

/// Scales an observation with the default constants.
pub fn normalize_obs(obs: &Observation) -> [f64; OBS_DIM] {
    ObsScale::default().normalize(obs)
}

/// `Σ γᵗ rₜ`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&gamma), "gamma {gamma} outside [0, 1]");
    let mut acc = 0.0;
    let mut w = 1.0;
    for &r in rewards {
        acc += w * r;
        w *= gamma;
    }
    acc
}

/// Normal distribution parameters; a zero `std` yields the mean exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    pub const fn fixed(mean: f64) -> Self {
        Self { mean, std: 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.std)
            .map(|n| n.sample(rng))
            .unwrap_or(self.mean)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.mean.is_finite() && self.std.is_finite() && self.std >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{what}: invalid normal {self:?}")))
        }
    }
}

/// When a scripted deceleration begins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrakeOnset {
    /// A fixed step index.
    Step(usize),
    /// Uniform in `[lo, hi]` seconds, rounded to the nearest step.
    UniformSeconds { lo: f64, hi: f64 },
}

impl BrakeOnset {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> usize {
        match *self {
            BrakeOnset::Step(s) => s,
            BrakeOnset::UniformSeconds { lo, hi } => {
                let t = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                (t / dt).round() as usize
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BrakeOnset::Step(_) => Ok(()),
            BrakeOnset::UniformSeconds { lo, hi } if lo.is_finite() && hi >= lo && lo >= 0.0 => {
                Ok(())
            }
            other => Err(Error::InvalidConfig(format!("invalid brake onset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderBrake {
    pub onset: BrakeOnset,
    /// Signed deceleration (negative), clipped to the leader's envelope.
    pub decel: Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerPolicy {
    /// TTC-triggered emergency braking on Kalman-estimated front speed.
    BaselineAdas,
    /// Brakes at a random onset with a random deceleration, regardless of traffic.
    RandomDecel { onset: BrakeOnset, decel: Gaussian },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSlot {
    pub spec: VehicleSpec,
    /// Initial front-bumper position (m).
    pub position: Gaussian,
    /// Per-vehicle initial speed; falls back to [`ScenarioConfig::init_speed`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<Gaussian>,
}

/// Everything needed to run one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Front to rear: scripted leader, controlled vehicles, follower.
    pub vehicles: Vec<VehicleSlot>,
    pub init_speed: Gaussian,
    pub leader_brake: LeaderBrake,
    pub follower_policy: FollowerPolicy,
    /// Probability that the follower is swapped for a heavy vehicle at reset.
    #[serde(default)]
    pub heavy_follower_prob: f64,
    /// Per-step acceleration noise of the leader and follower while cruising.
    pub cruise_accel_noise: Gaussian,
    pub horizon_steps: usize,
    pub dt: f64,
    /// Feed true neighbour speed/acceleration instead of Kalman estimates.
    #[serde(default)]
    pub oracle_sensing: bool,
    #[serde(default)]
    pub kalman: KalmanParams,
    #[serde(default = "default_ttc_threshold")]
    pub ttc_threshold: f64,
    /// End the episode at the first collision. When false the simulation runs
    /// to the horizon so that secondary collisions are recorded.
    #[serde(default = "default_true")]
    pub terminate_on_collision: bool,
}

fn default_ttc_threshold() -> f64 {
    DEFAULT_TTC_THRESHOLD
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    /// Light leader, controlled light vehicle, heavy follower.
    Brake1,
    /// All light.
    Brake2,
    /// Light leader, several controlled light vehicles, heavy follower.
    MultiRl,
    /// Randomised three-vehicle training distribution.
    TrainRandom,
}

impl ScenarioId {
    pub const EVALUATION: [ScenarioId; 3] = [ScenarioId::Brake1, ScenarioId::Brake2, ScenarioId::MultiRl];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::Brake1 => "brake1",
            ScenarioId::Brake2 => "brake2",
            ScenarioId::MultiRl => "multirl",
            ScenarioId::TrainRandom => "train",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "brake1" | "scenario1" => Ok(ScenarioId::Brake1),
            "brake2" | "scenario2" => Ok(ScenarioId::Brake2),
            "multirl" | "scenario3" => Ok(ScenarioId::MultiRl),
            "train" | "trainrandom" => Ok(ScenarioId::TrainRandom),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

/// Optional adjustments applied on top of a named scenario.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOverrides {
    pub horizon_steps: Option<usize>,
    pub dt: Option<f64>,
    /// Number of controlled vehicles in `multirl`.
    pub controlled_count: Option<usize>,
    pub init_speed: Option<Gaussian>,
    pub position_std: Option<f64>,
    pub leader_brake: Option<LeaderBrake>,
    pub follower_policy: Option<FollowerPolicy>,
    pub heavy_follower_prob: Option<f64>,
    pub cruise_accel_noise: Option<Gaussian>,
    pub oracle_sensing: Option<bool>,
    pub kalman: Option<KalmanParams>,
    pub ttc_threshold: Option<f64>,
    pub terminate_on_collision: Option<bool>,
}

/// Follower deceleration used by the exploration-stage scenarios.
pub fn exploration_follower_policy() -> FollowerPolicy {
    FollowerPolicy::RandomDecel {
        onset: BrakeOnset::UniformSeconds { lo: 1.0, hi: 1.5 },
        decel: Gaussian::new(-4.0, 1.5),
    }
}

const SPACING: f64 = 16.0;

fn evenly_spaced(specs: &[VehicleSpec], position_std: f64) -> Vec<VehicleSlot> {
    // Rearmost front bumper sits at 0; each vehicle ahead is one length plus
    // one spacing further on.
    let mut x = 0.0;
    let mut slots: Vec<VehicleSlot> = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate().rev() {
        if i + 1 < specs.len() {
            x += SPACING + spec.length;
        }
        slots.push(VehicleSlot {
            spec: *spec,
            position: Gaussian::new(x, position_std),
            speed: None,
        });
    }
    slots.reverse();
    slots
}

/// Builds one of the named scenarios, then applies `overrides`.
pub fn make_scenario(id: ScenarioId, overrides: &ScenarioOverrides) -> Result<ScenarioConfig> {
    let light = VehicleSpec::light();
    let heavy = VehicleSpec::heavy();
    let specs: Vec<VehicleSpec> = match id {
        ScenarioId::Brake1 => vec![light, light, heavy],
        ScenarioId::Brake2 | ScenarioId::TrainRandom => vec![light, light, light],
        ScenarioId::MultiRl => {
            let n = overrides.controlled_count.unwrap_or(3);
            if n == 0 {
                return Err(Error::InvalidConfig("multirl needs at least one controlled vehicle".into()));
            }
            let mut v = vec![light; n + 1];
            v.push(heavy);
            v
        }
    };
    let (position_std, init_speed, leader_brake, heavy_prob) = match id {
        ScenarioId::TrainRandom => (
            0.5,
            Gaussian::new(NOMINAL_SPEED, 1.0),
            LeaderBrake {
                onset: BrakeOnset::UniformSeconds { lo: 1.0, hi: 1.5 },
                decel: Gaussian::new(-3.0, 0.2),
            },
            0.5,
        ),
        _ => (
            0.5,
            Gaussian::fixed(NOMINAL_SPEED),
            LeaderBrake {
                onset: BrakeOnset::Step(100),
                decel: Gaussian::new(-3.0, 0.2),
            },
            0.0,
        ),
    };
    let mut cfg = ScenarioConfig {
        name: id.as_str().to_string(),
        vehicles: evenly_spaced(&specs, overrides.position_std.unwrap_or(position_std)),
        init_speed,
        leader_brake,
        follower_policy: FollowerPolicy::BaselineAdas,
        heavy_follower_prob: heavy_prob,
        cruise_accel_noise: Gaussian::new(0.0, 0.01),
        horizon_steps: DEFAULT_HORIZON,
        dt: DEFAULT_DT,
        oracle_sensing: false,
        kalman: KalmanParams::default(),
        ttc_threshold: DEFAULT_TTC_THRESHOLD,
        terminate_on_collision: true,
    };
    let o = overrides;
    if let Some(v) = o.horizon_steps {
        cfg.horizon_steps = v;
    }
    if let Some(v) = o.dt {
        cfg.dt = v;
    }
    if let Some(v) = o.init_speed {
        cfg.init_speed = v;
    }
    if let Some(v) = o.leader_brake {
        cfg.leader_brake = v;
    }
    if let Some(v) = o.follower_policy {
        cfg.follower_policy = v;
    }
    if let Some(v) = o.heavy_follower_prob {
        cfg.heavy_follower_prob = v;
    }
    if let Some(v) = o.cruise_accel_noise {
        cfg.cruise_accel_noise = v;
    }
    if let Some(v) = o.oracle_sensing {
        cfg.oracle_sensing = v;
    }
    if let Some(v) = o.kalman {
        cfg.kalman = v;
    }
    if let Some(v) = o.ttc_threshold {
        cfg.ttc_threshold = v;
    }
    if let Some(v) = o.terminate_on_collision {
        cfg.terminate_on_collision = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vehicles.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 vehicles, got {}",
                self.vehicles.len()
            )));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidTimeStep(self.dt));
        }
        if self.horizon_steps == 0 {
            return Err(Error::InvalidConfig("horizon_steps must be positive".into()));
        }
        if !(self.ttc_threshold > 0.0 && self.ttc_threshold.is_finite()) {
            return Err(Error::InvalidConfig("ttc_threshold must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.heavy_follower_prob) {
            return Err(Error::InvalidConfig("heavy_follower_prob outside [0, 1]".into()));
        }
        for slot in &self.vehicles {
            slot.spec.validate()?;
            slot.position.validate("position")?;
            if let Some(s) = slot.speed {
                s.validate("speed")?;
            }
        }
        self.init_speed.validate("init_speed")?;
        self.leader_brake.onset.validate()?;
        self.leader_brake.decel.validate("leader decel")?;
        self.cruise_accel_noise.validate("cruise noise")?;
        if let FollowerPolicy::RandomDecel { onset, decel } = &self.follower_policy {
            onset.validate()?;
            decel.validate("follower decel")?;
        }
        Ok(())
    }

    /// Same scenario with every random draw pinned to its mean.
    pub fn deterministic(&self) -> Self {
        let mut c = self.clone();
        for slot in &mut c.vehicles {
            slot.position.std = 0.0;
            if let Some(s) = &mut slot.speed {
                s.std = 0.0;
            }
        }
        c.init_speed.std = 0.0;
        c.leader_brake.decel.std = 0.0;
        if let BrakeOnset::UniformSeconds { lo, hi } = &mut c.leader_brake.onset {
            *hi = *lo;
        }
        if let FollowerPolicy::RandomDecel { onset, decel } = &mut c.follower_policy {
            decel.std = 0.0;
            if let BrakeOnset::UniformSeconds { lo, hi } = onset {
                *hi = *lo;
            }
        }
        c.cruise_accel_noise.std = 0.0;
        c.heavy_follower_prob = if c.heavy_follower_prob >= 1.0 { 1.0 } else { 0.0 };
        c
    }

    pub fn controlled_count(&self) -> usize {
        self.vehicles.len() - 2
    }

    /// Controlled vehicle spec (the first controlled slot).
    pub fn ego_spec(&self) -> VehicleSpec {
        self.vehicles[1].spec
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    /// Pairs overlapping after this step.
    pub collisions: Vec<(usize, usize)>,
    pub states: Vec<VehicleState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Observation of the first controlled vehicle.
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Copy, Debug)]
enum FollowerState {
    Baseline(BaselineController),
    Random { onset_step: usize, decel: f64 },
}

#[derive(Clone, Debug)]
struct Episode {
    chain: Chain,
    step: usize,
    done: bool,
    collided: bool,
    leader_onset: usize,
    leader_decel: f64,
    follower: FollowerState,
    /// Track of the vehicle ahead, for every non-leader vehicle.
    front_tracks: Vec<Option<KalmanTrack>>,
    /// Track of the vehicle behind, for every controlled vehicle.
    rear_tracks: Vec<Option<KalmanTrack>>,
    collision_pairs: Vec<(usize, usize)>,
    total_reward: f64,
}

/// One simulation instance. Not shared between threads; create one per worker.
#[derive(Clone, Debug)]
pub struct Env {
    config: ScenarioConfig,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            episode: None,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or(Error::NotReset)
    }

    /// Samples a fresh episode and returns the first controlled vehicle's observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.config;
        let dt = cfg.dt;
        let n = cfg.vehicles.len();
        let rng = &mut self.rng;

        let mut specs: Vec<VehicleSpec> = cfg.vehicles.iter().map(|s| s.spec).collect();
        if cfg.heavy_follower_prob > 0.0 && rng.random_bool(cfg.heavy_follower_prob) {
            specs[n - 1] = VehicleSpec::of(VehicleClass::Heavy);
        }

        let mut positions = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let xs: Vec<f64> = cfg.vehicles.iter().map(|s| s.position.sample(rng)).collect();
            let ok = (0..n - 1).all(|i| xs[i] - specs[i].length - xs[i + 1] > 0.0);
            if ok {
                positions = Some(xs);
                break;
            }
        }
        let xs = positions.ok_or(Error::Placement(MAX_PLACEMENT_ATTEMPTS))?;
        let vehicles: Vec<Vehicle> = cfg
            .vehicles
            .iter()
            .zip(&specs)
            .zip(&xs)
            .map(|((slot, spec), &x)| {
                let v = slot.speed.unwrap_or(cfg.init_speed).sample(rng).max(0.0);
                Vehicle::new(*spec, x, v)
            })
            .collect();
        let chain = Chain::new(vehicles, dt)?;

        let leader_onset = cfg.leader_brake.onset.sample(rng, dt);
        let leader_spec = specs[0];
        let leader_decel = cfg
            .leader_brake
            .decel
            .sample(rng)
            .clamp(-leader_spec.max_decel, 0.0);
        let follower = match cfg.follower_policy {
            FollowerPolicy::BaselineAdas => {
                FollowerState::Baseline(BaselineController::new(cfg.ttc_threshold))
            }
            FollowerPolicy::RandomDecel { onset, decel } => FollowerState::Random {
                onset_step: onset.sample(rng, dt),
                decel: decel.sample(rng).clamp(-specs[n - 1].max_decel, 0.0),
            },
        };

        let nominal = cfg.init_speed.mean;
        let gaps = chain.gaps();
        let veh = chain.vehicles();
        let front_tracks = (0..n)
            .map(|i| {
                (i > 0).then(|| {
                    KalmanTrack::new(veh[i].state.x + gaps[i - 1], nominal, 0.0, &cfg.kalman)
                })
            })
            .collect();
        let rear_tracks = (0..n)
            .map(|i| {
                (i > 0 && i + 1 < n).then(|| {
                    KalmanTrack::new(veh[i].rear() - gaps[i], nominal, 0.0, &cfg.kalman)
                })
            })
            .collect();

        self.episode = Some(Episode {
            chain,
            step: 0,
            done: false,
            collided: false,
            leader_onset,
            leader_decel,
            follower,
            front_tracks,
            rear_tracks,
            collision_pairs: Vec::new(),
            total_reward: 0.0,
        });
        self.observation(0)
    }

    /// Observation of the `k`-th controlled vehicle (chain index `k + 1`).
    pub fn observation(&self, k: usize) -> Result<Observation> {
        let ep = self.episode()?;
        let n = ep.chain.len();
        let i = k + 1;
        if i + 1 >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n - 2 });
        }
        let veh = ep.chain.vehicles();
        let (v_f, a_f, v_r, a_r) = if self.config.oracle_sensing {
            (veh[i - 1].state.v, veh[i - 1].state.a, veh[i + 1].state.v, veh[i + 1].state.a)
        } else {
            let f = ep.front_tracks[i].as_ref().expect("front track");
            let r = ep.rear_tracks[i].as_ref().expect("rear track");
            (f.velocity(), f.acceleration(), r.velocity(), r.acceleration())
        };
        Ok(Observation {
            d_fm: ep.chain.gap(i - 1)?,
            d_mr: ep.chain.gap(i)?,
            v_f,
            v_m: veh[i].state.v,
            v_r,
            a_f,
            a_m: veh[i].state.a,
            a_r,
        })
    }

    pub fn observations(&self) -> Result<Vec<Observation>> {
        (0..self.config.controlled_count())
            .map(|k| self.observation(k))
            .collect()
    }

    /// Steps with a single controlled vehicle.
    pub fn step(&mut self, a_cmd: f64) -> Result<StepResult> {
        let expected = self.config.controlled_count();
        if expected != 1 {
            return Err(Error::Dimension { expected, got: 1 });
        }
        self.step_all(&[a_cmd])
    }

    /// Steps with one acceleration command per controlled vehicle, front to rear.
    pub fn step_all(&mut self, actions: &[f64]) -> Result<StepResult> {
        let cfg = &self.config;
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        if ep.done {
            return Err(Error::EpisodeDone);
        }
        let n = ep.chain.len();
        if actions.len() != n - 2 {
            return Err(Error::Dimension {
                expected: n - 2,
                got: actions.len(),
            });
        }
        if actions.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }

        let rng = &mut self.rng;
        let mut commands = Vec::with_capacity(n);
        let leader_cmd = scripted_leader_action(ep.step, ep.leader_onset, ep.leader_decel);
        commands.push(if ep.step < ep.leader_onset {
            leader_cmd + cfg.cruise_accel_noise.sample(rng)
        } else {
            leader_cmd
        });
        commands.extend_from_slice(actions);

        let follower_idx = n - 1;
        let follower_spec = ep.chain.vehicle(follower_idx).spec;
        let follower_cmd = match &mut ep.follower {
            FollowerState::Baseline(ctrl) => {
                let gap = ep.chain.gap(follower_idx - 1)?;
                let v_self = ep.chain.vehicle(follower_idx).state.v;
                let v_front = if cfg.oracle_sensing {
                    ep.chain.vehicle(follower_idx - 1).state.v
                } else {
                    ep.front_tracks[follower_idx]
                        .as_ref()
                        .expect("front track")
                        .velocity()
                };
                let a = ctrl.action(gap, v_self, v_front, &follower_spec);
                if ctrl.aeb_latched {
                    a
                } else {
                    a + cfg.cruise_accel_noise.sample(rng)
                }
            }
            FollowerState::Random { onset_step, decel } => {
                if ep.step >= *onset_step {
                    *decel
                } else {
                    cfg.cruise_accel_noise.sample(rng)
                }
            }
        };
        commands.push(follower_cmd);

        ep.chain.advance(&commands)?;
        ep.step += 1;

        let dt = cfg.dt;
        let gaps = ep.chain.gaps();
        let veh = ep.chain.vehicles();
        for i in 1..n {
            if let Some(t) = ep.front_tracks[i].as_mut() {
                *t = t.predict(dt).update(veh[i].state.x + gaps[i - 1]);
            }
            if let Some(t) = ep.rear_tracks[i].as_mut() {
                *t = t.predict(dt).update(veh[i].rear() - gaps[i]);
            }
        }

        let collisions = ep.chain.detect_collision();
        for p in &collisions {
            if !ep.collision_pairs.contains(p) {
                ep.collision_pairs.push(*p);
            }
        }
        let reward = if ep.collided {
            0.0
        } else if collisions.is_empty() {
            REWARD_SAFE
        } else {
            ep.collided = true;
            REWARD_COLLISION
        };
        ep.total_reward += reward;
        ep.done = (ep.collided && cfg.terminate_on_collision) || ep.step >= cfg.horizon_steps;

        let info = StepInfo {
            collisions,
            states: veh.iter().map(|v| v.state).collect(),
        };
        let done = ep.done;
        Ok(StepResult {
            observation: self.observation(0)?,
            reward,
            done,
            info,
        })
    }

    pub fn chain(&self) -> Result<&Chain> {
        Ok(&self.episode()?.chain)
    }

    pub fn step_index(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.step)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    /// Undiscounted return accumulated so far.
    pub fn episode_return(&self) -> f64 {
        self.episode.as_ref().map_or(0.0, |e| e.total_reward)
    }

    /// Every pair that has overlapped at some point in the episode, in order of first contact.
    pub fn collision_pairs(&self) -> &[(usize, usize)] {
        self.episode.as_ref().map_or(&[], |e| &e.collision_pairs)
    }

    /// Leader brake onset step and deceleration drawn at reset.
    pub fn leader_plan(&self) -> Option<(usize, f64)> {
        self.episode.as_ref().map(|e| (e.leader_onset, e.leader_decel))
    }
}
