//! Scenario rollouts, trajectory logs, run reports, the open-loop feasibility
//! grid and the multi-seed training suite.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineController;
use crate::config::RunConfig;
use crate::ddpg::{moving_average, Agent, Policy, Trainer, TrainingLog, Validation, DEFAULT_GAMMA};
use crate::env::{discounted_return, Env, ScenarioConfig, ScenarioId};
use crate::sim::VehicleState;
use crate::{Error, Result};

/// What drives the middle vehicles during an evaluation.
#[derive(Clone, Debug)]
pub enum Controller {
    Baseline,
    /// Noise-free actor shared by every controlled vehicle.
    Policy(Policy),
}

impl Controller {
    pub fn id(&self) -> &'static str {
        match self {
            Controller::Baseline => "baseline",
            Controller::Policy(_) => "rl",
        }
    }
}

/// One vehicle at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub vehicle_id: usize,
    pub x: f64,
    pub v: f64,
    pub a: f64,
    /// Gap to the vehicle ahead; `None` for the leader.
    pub gap_ahead: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub collision_pairs: Vec<(usize, usize)>,
    pub collision_step: Option<usize>,
    pub episode_return: f64,
}

/// Rows ordered by step, then by vehicle front to rear.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
    /// Vehicle lengths front to rear, for rear-bumper traces.
    pub lengths: Vec<f64>,
    pub outcome: Outcome,
}

impl TrajectoryLog {
    pub fn vehicle_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.vehicle_id + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows of one vehicle in step order.
    pub fn series(&self, vehicle_id: usize) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().filter(move |r| r.vehicle_id == vehicle_id)
    }

    /// First step at which any gap is non-positive.
    pub fn first_overlap_step(&self) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.gap_ahead.is_some_and(|g| g <= 0.0))
            .map(|r| r.step)
    }

    fn push_step(&mut self, step: usize, dt: f64, states: &[VehicleState], gaps: &[f64]) {
        for (i, s) in states.iter().enumerate() {
            self.rows.push(TrajectoryRow {
                step,
                t: step as f64 * dt,
                vehicle_id: i,
                x: s.x,
                v: s.v,
                a: s.a,
                gap_ahead: (i > 0).then(|| gaps[i - 1]),
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub collided: bool,
    pub collision_pairs: Vec<(usize, usize)>,
    pub collision_step: Option<usize>,
    /// Smallest gap seen for each adjacent pair, front to rear.
    pub min_gaps: Vec<f64>,
    /// First time each vehicle is at rest, if it stops.
    pub stop_times: Vec<Option<f64>>,
    pub episode_return: f64,
    /// Same rewards discounted per step at [`DEFAULT_GAMMA`].
    pub discounted_return: f64,
}

/// Runs one full-horizon episode. Collisions do not end the run, so
/// secondary impacts are recorded.
pub fn evaluate(
    scenario: &ScenarioConfig,
    controller: &Controller,
    seed: u64,
    deterministic: bool,
) -> Result<(TrajectoryLog, RunReport)> {
    let mut cfg = if deterministic {
        scenario.deterministic()
    } else {
        scenario.clone()
    };
    cfg.terminate_on_collision = false;
    let dt = cfg.dt;
    let controlled = cfg.controlled_count();
    let mut env = Env::new(cfg)?;
    env.reset(seed)?;

    let specs: Vec<_> = env.chain()?.vehicles().iter().map(|v| v.spec).collect();
    let mut baselines = vec![BaselineController::new(env.config().ttc_threshold); controlled];
    let repeat = match controller {
        Controller::Baseline => 1,
        Controller::Policy(p) => p.action_repeat.max(1),
    };

    let mut log = TrajectoryLog {
        lengths: specs.iter().map(|s| s.length).collect(),
        ..TrajectoryLog::default()
    };
    let n = specs.len();
    let mut min_gaps = vec![f64::INFINITY; n - 1];
    let mut stop_times = vec![None; n];
    let mut collision_step = None;
    let mut record = |log: &mut TrajectoryLog, env: &Env, step: usize| -> Result<()> {
        let chain = env.chain()?;
        let states: Vec<VehicleState> = chain.vehicles().iter().map(|v| v.state).collect();
        let gaps = chain.gaps();
        for (m, g) in min_gaps.iter_mut().zip(&gaps) {
            *m = m.min(*g);
        }
        for (t, s) in stop_times.iter_mut().zip(&states) {
            if t.is_none() && s.v == 0.0 {
                *t = Some(step as f64 * dt);
            }
        }
        if collision_step.is_none() && gaps.iter().any(|&g| g <= 0.0) {
            collision_step = Some(step);
        }
        log.push_step(step, dt, &states, &gaps);
        Ok(())
    };
    record(&mut log, &env, 0)?;

    let mut actions = vec![0.0; controlled];
    let mut rewards = Vec::with_capacity(env.config().horizon_steps);
    while !env.is_done() {
        let step = env.step_index();
        if step % repeat == 0 {
            let obs = env.observations()?;
            actions = match controller {
                Controller::Baseline => obs
                    .iter()
                    .zip(&mut baselines)
                    .enumerate()
                    .map(|(k, (o, b))| b.action(o.d_fm, o.v_m, o.v_f, &specs[k + 1]))
                    .collect(),
                Controller::Policy(p) => p.act_batch(&obs)?,
            };
        }
        rewards.push(env.step_all(&actions)?.reward);
        record(&mut log, &env, env.step_index())?;
    }

    let collision_pairs = env.collision_pairs().to_vec();
    log.outcome = Outcome {
        collision_pairs: collision_pairs.clone(),
        collision_step,
        episode_return: env.episode_return(),
    };
    let report = RunReport {
        scenario: env.config().name.clone(),
        controller: controller.id().to_string(),
        seed,
        collided: min_gaps.iter().any(|&g| g <= 0.0),
        collision_pairs,
        collision_step,
        min_gaps,
        stop_times,
        episode_return: env.episode_return(),
        discounted_return: discounted_return(&rewards, DEFAULT_GAMMA),
    };
    Ok((log, report))
}

/// Open-loop acceleration schedule applied to every controlled vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopPlan {
    pub onset_step: usize,
    /// Constant acceleration from `onset_step` (≤ 0).
    pub decel: f64,
    /// Optional `(step, accel)` segment that replaces the braking phase.
    pub release: Option<(usize, f64)>,
}

impl OpenLoopPlan {
    pub const IDLE: OpenLoopPlan = OpenLoopPlan {
        onset_step: 0,
        decel: 0.0,
        release: None,
    };

    pub fn action(&self, step: usize) -> f64 {
        match self.release {
            Some((s, a)) if step >= s => a,
            _ if step >= self.onset_step => self.decel,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub witness: Option<OpenLoopPlan>,
    /// Smallest gap over the witness replay.
    pub witness_min_gap: Option<f64>,
    pub plans_tried: usize,
}

pub const ORACLE_MAX_ONSET: usize = 300;
pub const ORACLE_DECEL_STEP: f64 = 0.5;
pub const ORACLE_RELEASE_STEPS: [usize; 3] = [500, 800, 1100];
pub const ORACLE_RELEASE_ACCEL: f64 = 1.0;

/// Smallest gap over a full-horizon replay of `plan`, stopping early at the
/// first overlap. The scenario is used as given.
pub fn replay_plan(scenario: &ScenarioConfig, plan: &OpenLoopPlan, seed: u64) -> Result<f64> {
    let mut cfg = scenario.clone();
    cfg.terminate_on_collision = true;
    let controlled = cfg.controlled_count();
    let mut env = Env::new(cfg)?;
    env.reset(seed)?;
    let mut min_gap = env
        .chain()?
        .gaps()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    while !env.is_done() {
        let a = plan.action(env.step_index());
        env.step_all(&vec![a; controlled])?;
        let g = env.chain()?.gaps().into_iter().fold(f64::INFINITY, f64::min);
        min_gap = min_gap.min(g);
        if min_gap <= 0.0 {
            break;
        }
    }
    Ok(min_gap)
}

/// Every plan the oracle may try, in search order: idle first, then braking
/// plans by onset and deceleration, then the same plans with a release segment.
pub fn oracle_plans(max_decel: f64) -> Vec<OpenLoopPlan> {
    let levels = (max_decel / ORACLE_DECEL_STEP).round() as usize;
    let decels: Vec<f64> = (1..=levels).map(|k| -(k as f64) * ORACLE_DECEL_STEP).collect();
    let mut plans = vec![OpenLoopPlan::IDLE];
    let braking: Vec<OpenLoopPlan> = (0..=ORACLE_MAX_ONSET)
        .flat_map(|onset| {
            decels.iter().map(move |&d| OpenLoopPlan {
                onset_step: onset,
                decel: d,
                release: None,
            })
        })
        .collect();
    plans.extend(&braking);
    for &s in &ORACLE_RELEASE_STEPS {
        plans.extend(braking.iter().filter(|p| p.onset_step < s).map(|p| OpenLoopPlan {
            release: Some((s, ORACLE_RELEASE_ACCEL)),
            ..*p
        }));
    }
    plans
}

/// Grid search for an open-loop plan that keeps every gap positive with the
/// follower on its emergency-braking controller. The scenario is made
/// deterministic first. Returns the first witness in [`oracle_plans`] order.
pub fn feasibility_oracle(scenario: &ScenarioConfig) -> Result<Feasibility> {
    let cfg = scenario.deterministic();
    cfg.validate()?;
    let mut tried = 0;
    for plan in oracle_plans(cfg.ego_spec().max_decel) {
        tried += 1;
        let g = replay_plan(&cfg, &plan, 0)?;
        if g > 0.0 {
            return Ok(Feasibility {
                feasible: true,
                witness: Some(plan),
                witness_min_gap: Some(g),
                plans_tried: tried,
            });
        }
    }
    Ok(Feasibility {
        feasible: false,
        witness: None,
        witness_min_gap: None,
        plans_tried: tried,
    })
}

/// Per-episode statistics across seeds. Seeds that stopped early contribute
/// only to the episodes they ran.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: Vec<usize>,
}

/// Mean and population standard deviation of the return at each episode index.
pub fn aggregate_returns(logs: &[TrainingLog]) -> Result<SuiteCurve> {
    if logs.is_empty() {
        return Err(Error::InvalidConfig("no training logs to aggregate".into()));
    }
    let len = logs.iter().map(|l| l.returns.len()).max().unwrap_or(0);
    let mut curve = SuiteCurve::default();
    for i in 0..len {
        let xs: Vec<f64> = logs.iter().filter_map(|l| l.returns.get(i).copied()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        curve.mean.push(mean);
        curve.std.push(var.sqrt());
        curve.count.push(xs.len());
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    /// First episode index at which the moving average reached the target.
    pub reached_at: Option<usize>,
    pub best_moving_average: f64,
    pub seconds: f64,
    /// Held-out score of the seed's kept snapshot.
    #[serde(default)]
    pub validation: Option<Validation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub target: f64,
    pub window: usize,
    pub seeds: Vec<SeedSummary>,
    pub curve: SuiteCurve,
    /// Seed whose snapshot scored best on validation; copied to `policy.json`.
    #[serde(default)]
    pub selected_seed: Option<u64>,
}

impl SuiteSummary {
    pub fn seeds_reaching(&self) -> usize {
        self.seeds.iter().filter(|s| s.reached_at.is_some()).count()
    }
}

/// Moving-average level the suite reports against.
pub const CONVERGENCE_TARGET: f64 = 22_000.0;

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains one agent and writes `training_log.json`, `returns.csv` and
/// `policy.json` into `dir`.
pub fn train_to_dir(
    run: &RunConfig,
    seed: u64,
    dir: &Path,
    mut on_episode: impl FnMut(usize, &TrainingLog),
) -> Result<(TrainingLog, Policy)> {
    let (explore, exploit) = run.training_scenarios()?;
    let mut trainer = Trainer::new(Agent::new(run.agent.clone(), seed)?, seed);
    let log = trainer.run(&explore, &exploit, &run.training, seed, &mut on_episode)?;
    let policy = trainer.best_policy();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("training_log.json"), serde_json::to_vec(&log)?)?;
    write_returns_csv(&log, run.training.moving_window, &dir.join("returns.csv"))?;
    policy.save(&dir.join("policy.json"))?;
    Ok((log, policy))
}

pub fn write_returns_csv(log: &TrainingLog, window: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "return", "moving_average", "steps", "collided", "noise_std"])?;
    let ma = moving_average(&log.returns, window);
    for i in 0..log.returns.len() {
        let avg = (i + 1).checked_sub(window).map_or(String::new(), |j| ma[j].to_string());
        w.write_record([
            i.to_string(),
            log.returns[i].to_string(),
            avg,
            log.steps[i].to_string(),
            log.collided[i].to_string(),
            log.noise_std[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Seed with the best validated snapshot; the earliest wins ties.
pub fn select_seed(seeds: &[SeedSummary]) -> Option<u64> {
    let mut best: Option<(u64, Validation)> = None;
    for s in seeds {
        if let Some(v) = s.validation {
            if best.as_ref().is_none_or(|(_, b)| !b.at_least_as_good(&v)) {
                best = Some((s.seed, v));
            }
        }
    }
    best.map(|(seed, _)| seed)
}

/// Trains one agent per seed in its own directory under `out`, running up to
/// `jobs` seeds concurrently, then writes `suite.json`, `suite.csv` and the
/// selected seed's `policy.json`.
pub fn run_training_suite(
    run: &RunConfig,
    seeds: &[u64],
    out: &Path,
    jobs: usize,
    on_episode: impl Fn(u64, usize, &TrainingLog) + Sync,
) -> Result<SuiteSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("training suite needs at least one seed".into()));
    }
    run.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), run.to_json()?)?;
    let window = run.training.moving_window;
    let jobs = jobs.clamp(1, seeds.len());

    let mut results: Vec<Option<Result<(TrainingLog, f64)>>> = (0..seeds.len()).map(|_| None).collect();
    for chunk_start in (0..seeds.len()).step_by(jobs) {
        let chunk = &seeds[chunk_start..(chunk_start + jobs).min(seeds.len())];
        let outs: Vec<Result<(TrainingLog, f64)>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let on_episode = &on_episode;
                    s.spawn(move || {
                        let t0 = std::time::Instant::now();
                        let (log, _) =
                            train_to_dir(run, seed, &seed_dir(out, seed), |ep, log| on_episode(seed, ep, log))?;
                        Ok((log, t0.elapsed().as_secs_f64()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidConfig("training job panicked".into()))))
                .collect()
        });
        for (k, r) in outs.into_iter().enumerate() {
            results[chunk_start + k] = Some(r);
        }
    }

    let mut logs = Vec::with_capacity(seeds.len());
    let mut summaries = Vec::with_capacity(seeds.len());
    for (&seed, r) in seeds.iter().zip(results) {
        let (log, seconds) = r.expect("every seed ran")?;
        let ma = log.moving_average(window);
        summaries.push(SeedSummary {
            seed,
            episodes: log.returns.len(),
            reached_at: log.first_reaching(window, CONVERGENCE_TARGET),
            best_moving_average: ma.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            seconds,
            validation: log.best_validation(),
        });
        logs.push(log);
    }
    let selected_seed = select_seed(&summaries);
    if let Some(seed) = selected_seed {
        fs::copy(seed_dir(out, seed).join("policy.json"), out.join("policy.json"))?;
    }
    let summary = SuiteSummary {
        target: CONVERGENCE_TARGET,
        window,
        seeds: summaries,
        curve: aggregate_returns(&logs)?,
        selected_seed,
    };
    fs::write(out.join("suite.json"), serde_json::to_vec_pretty(&summary)?)?;
    let mut w = csv::Writer::from_path(out.join("suite.csv"))?;
    w.write_record(["episode", "mean", "std", "count"])?;
    for i in 0..summary.curve.mean.len() {
        w.write_record([
            i.to_string(),
            summary.curve.mean[i].to_string(),
            summary.curve.std[i].to_string(),
            summary.curve.count[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}

/// Evaluates the baseline on every named evaluation scenario.
pub fn baseline_reports(run: &RunConfig) -> Result<Vec<RunReport>> {
    ScenarioId::EVALUATION
        .iter()
        .map(|&id| Ok(evaluate(&run.scenario(id)?, &Controller::Baseline, 0, true)?.1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_scenario, BrakeOnset, Gaussian, LeaderBrake, ScenarioOverrides, VehicleSlot};
    use crate::sim::VehicleSpec;

    fn named(id: ScenarioId) -> ScenarioConfig {
        make_scenario(id, &ScenarioOverrides::default()).unwrap()
    }

    #[test]
    fn baseline_brake1_rear_end_only() {
        let (log, rep) = evaluate(&named(ScenarioId::Brake1), &Controller::Baseline, 0, true).unwrap();
        assert!(rep.collided);
        assert!(rep.collision_pairs.contains(&(1, 2)));
        assert!(!rep.collision_pairs.contains(&(0, 1)));
        assert!(rep.min_gaps[0] > 0.0);
        assert_eq!(log.first_overlap_step(), rep.collision_step);
    }

    #[test]
    fn baseline_multirl_pile_up() {
        let (_, rep) = evaluate(&named(ScenarioId::MultiRl), &Controller::Baseline, 0, true).unwrap();
        assert!(rep.collision_pairs.len() >= 2, "{:?}", rep.collision_pairs);
    }

    #[test]
    fn seed_selection_prefers_safety_then_return_then_margin() {
        let summary = |seed, collisions, mean_return, mean_min_gap| SeedSummary {
            seed,
            episodes: 1,
            reached_at: None,
            best_moving_average: 0.0,
            seconds: 0.0,
            validation: Some(Validation {
                episode: 0,
                collisions,
                mean_return,
                mean_min_gap,
            }),
        };
        let mut seeds = vec![
            summary(1, 2, 22_500.0, 9.0),
            summary(2, 0, 22_000.0, 9.0),
            summary(3, 0, 22_500.0, 3.0),
            summary(4, 0, 22_500.0, 4.0),
            summary(5, 0, 22_500.0, 4.0),
        ];
        assert_eq!(select_seed(&seeds), Some(4));
        seeds[3].validation = None;
        assert_eq!(select_seed(&seeds), Some(5));
        assert_eq!(select_seed(&seeds[..0]), None);
    }

    #[test]
    fn log_rows_ordered() {
        let mut cfg = named(ScenarioId::Brake2);
        cfg.horizon_steps = 20;
        let (log, rep) = evaluate(&cfg, &Controller::Baseline, 0, true).unwrap();
        assert_eq!(log.rows.len(), 21 * 3);
        assert_eq!(log.vehicle_count(), 3);
        let keys: Vec<(usize, usize)> = log.rows.iter().map(|r| (r.step, r.vehicle_id)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(log.rows.iter().all(|r| (r.vehicle_id == 0) == r.gap_ahead.is_none()));
        assert!(!rep.collided);
        assert_eq!(rep.episode_return, 20.0 * 15.0);
        let geometric = 15.0 * (1.0 - DEFAULT_GAMMA.powi(20)) / (1.0 - DEFAULT_GAMMA);
        assert!((rep.discounted_return - geometric).abs() < 1e-9);
        assert_eq!(log.lengths, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn report_consistent_with_log() {
        for id in ScenarioId::EVALUATION {
            let (log, rep) = evaluate(&named(id), &Controller::Baseline, 3, false).unwrap();
            assert_eq!(rep.collided, log.first_overlap_step().is_some());
            let min_from_rows = log
                .rows
                .iter()
                .filter_map(|r| r.gap_ahead)
                .fold(f64::INFINITY, f64::min);
            let min_report = rep.min_gaps.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(min_from_rows, min_report);
        }
    }

    #[test]
    fn plan_schedule() {
        let p = OpenLoopPlan {
            onset_step: 10,
            decel: -2.0,
            release: Some((50, 1.0)),
        };
        assert_eq!(p.action(9), 0.0);
        assert_eq!(p.action(10), -2.0);
        assert_eq!(p.action(49), -2.0);
        assert_eq!(p.action(50), 1.0);
        assert_eq!(OpenLoopPlan::IDLE.action(5), 0.0);
    }

    #[test]
    fn plan_grid_shape() {
        let plans = oracle_plans(7.5);
        assert_eq!(plans[0], OpenLoopPlan::IDLE);
        let braking = 301 * 15;
        assert_eq!(plans.iter().filter(|p| p.release.is_none()).count(), 1 + braking);
        assert!(plans.iter().all(|p| p.decel >= -7.5 && p.decel <= 0.0));
    }

    #[test]
    fn oracle_idle_plan_without_leader_brake() {
        let mut cfg = named(ScenarioId::Brake2);
        cfg.leader_brake = LeaderBrake {
            onset: BrakeOnset::Step(100),
            decel: Gaussian::fixed(0.0),
        };
        let f = feasibility_oracle(&cfg).unwrap();
        assert!(f.feasible);
        assert_eq!(f.witness, Some(OpenLoopPlan::IDLE));
        assert_eq!(f.plans_tried, 1);
    }

    #[test]
    fn oracle_rejects_hopeless_start() {
        let light = VehicleSpec::light();
        let mut cfg = named(ScenarioId::Brake2);
        cfg.horizon_steps = 300;
        cfg.vehicles = vec![
            VehicleSlot { spec: light, position: Gaussian::fixed(40.1), speed: Some(Gaussian::fixed(15.0)) },
            VehicleSlot { spec: light, position: Gaussian::fixed(38.0), speed: Some(Gaussian::fixed(25.0)) },
            VehicleSlot { spec: light, position: Gaussian::fixed(0.0), speed: Some(Gaussian::fixed(25.0)) },
        ];
        let f = feasibility_oracle(&cfg).unwrap();
        assert!(!f.feasible);
        assert_eq!(f.plans_tried, oracle_plans(7.5).len());
    }

    #[test]
    fn aggregate_identical_seeds_has_zero_std() {
        let log = TrainingLog {
            returns: vec![1.0, 5.0, 22500.0],
            ..TrainingLog::default()
        };
        let c = aggregate_returns(&[log.clone(), log]).unwrap();
        assert_eq!(c.mean, vec![1.0, 5.0, 22500.0]);
        assert_eq!(c.std, vec![0.0; 3]);
        assert_eq!(c.count, vec![2; 3]);
        assert!(aggregate_returns(&[]).is_err());
    }

    #[test]
    fn aggregate_ragged() {
        let a = TrainingLog {
            returns: vec![0.0, 2.0],
            ..TrainingLog::default()
        };
        let b = TrainingLog {
            returns: vec![4.0],
            ..TrainingLog::default()
        };
        let c = aggregate_returns(&[a, b]).unwrap();
        assert_eq!(c.mean, vec![2.0, 2.0]);
        assert_eq!(c.std, vec![2.0, 0.0]);
        assert_eq!(c.count, vec![2, 1]);
    }

    #[test]
    fn empty_suite_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_training_suite(&RunConfig::default(), &[], dir.path(), 1, |_, _, _| {}).is_err());
    }
}
