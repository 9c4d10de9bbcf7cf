//! Longitudinal car-following simulation and collision-avoidance control.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: vehicle kinematics, chain geometry, collision checks and TTC.
//! - [`estimation`]: constant-acceleration Kalman tracking of neighbours from gap readings.
//! - [`baseline`]: the TTC-triggered emergency-braking controller and the scripted leader.
//! - [`env`]: the car-following MDP (observation, reward, episode lifecycle, scenarios).
//! - [`nn`]: dense networks with exact reverse-mode gradients and an Adam optimiser.
//! - [`ddpg`]: replay buffer, actor/critic updates, exploration noise and the training loop.
//! - [`eval`]: scenario rollouts, trajectory logs, reports, the feasibility grid and the
//!   multi-seed training suite.
//! - [`plot`]: CSV and SVG export of trajectory logs.
//! - [`config`]: the JSON run configuration consumed by the command-line tool.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod baseline;
pub mod config;
pub mod ddpg;
pub mod env;
mod error;
pub mod estimation;
pub mod eval;
pub mod nn;
pub mod plot;
pub mod sim;

pub use error::{Error, Result};

pub use baseline::{scripted_leader_action, BaselineController};
pub use config::RunConfig;
pub use ddpg::{
    Agent, AgentConfig, NoiseDecayUnit, Policy, ReplayBuffer, Trainer, TrainingConfig, TrainingLog,
    Transition,
};
pub use env::{Env, Observation, ScenarioConfig, ScenarioId, StepResult};
pub use estimation::{KalmanParams, KalmanTrack, Side};
pub use eval::{evaluate, feasibility_oracle, run_training_suite, Controller, RunReport, TrajectoryLog};
pub use plot::ChartKind;
pub use nn::DenseNet;
pub use sim::{Chain, Vehicle, VehicleClass, VehicleSpec, VehicleState};
