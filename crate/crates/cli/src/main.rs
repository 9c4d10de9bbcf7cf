use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use platoon_guard::eval::{self, Controller};
use platoon_guard::plot::{self, ChartKind};
use platoon_guard::{Policy, RunConfig, ScenarioId, TrajectoryLog};

#[derive(Parser)]
#[command(name = "platoon-guard", version, about = "Car-following collision avoidance: simulate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its log and policy checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Falls back to the config file, then PLATOON_GUARD_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Run a controller on a named scenario. Exits with 2 if any vehicles collide.
    #[command(alias = "baseline")]
    Eval(EvalArgs),
    /// Search open-loop braking plans for one that avoids every collision.
    Feasibility {
        #[arg(long)]
        scenario: ScenarioArg,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train several seeds and aggregate their return curves.
    Suite {
        /// Inclusive range `a..b` or a comma-separated list.
        #[arg(long, default_value = "1..5")]
        seeds: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/suite")]
        out: PathBuf,
        /// Concurrent seeds; defaults to the number of available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Draw a trajectory log (`.csv` or `.json`) as an SVG chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: KindArg,
        /// Defaults to the input path with the chart kind as extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value_t = ControllerArg::Baseline)]
    controller: ControllerArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the scenario's random draws instead of pinning them to their means.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Brake1,
    Brake2,
    Multirl,
}

impl From<ScenarioArg> for ScenarioId {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Brake1 => ScenarioId::Brake1,
            ScenarioArg::Brake2 => ScenarioId::Brake2,
            ScenarioArg::Multirl => ScenarioId::MultiRl,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Baseline,
    Rl,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Timespace,
    Timespeed,
    Spacing,
}

impl From<KindArg> for ChartKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Timespace => ChartKind::TimeSpace,
            KindArg::Timespeed => ChartKind::TimeSpeed,
            KindArg::Spacing => ChartKind::Spacing,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if spec.is_empty() {
        bail!("empty seed list");
    }
    if let Some((a, b)) = spec.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("seed range {a}..{b} is empty");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

fn train(config: Option<PathBuf>, seed: Option<u64>, episodes: Option<usize>, out: PathBuf) -> Result<ExitCode> {
    let mut run = load_config(config.as_deref())?;
    if let Some(k) = episodes {
        run.training.episodes = k;
    }
    let seed = run.resolve_seed(seed)?;
    let window = run.training.moving_window;
    let t0 = std::time::Instant::now();
    let (log, _) = eval::train_to_dir(&run, seed, &out, |ep, log| {
        if (ep + 1) % 10 == 0 {
            let recent = &log.returns[(ep + 1).saturating_sub(window)..];
            eprintln!(
                "episode {:>5}  return {:>8.0}  avg{window} {:>8.0}  {:.0}s",
                ep + 1,
                log.returns[ep],
                recent.iter().sum::<f64>() / recent.len() as f64,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    fs_write_json(&out.join("config.json"), &run)?;
    let reached = log.first_reaching(window, eval::CONVERGENCE_TARGET);
    println!(
        "seed {seed}: {} episodes, moving average reached {} at {}",
        log.returns.len(),
        eval::CONVERGENCE_TARGET,
        reached.map_or("never".to_string(), |e| format!("episode {}", e + 1))
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn fs_write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn run_eval(args: EvalArgs) -> Result<ExitCode> {
    let run = load_config(args.config.as_deref())?;
    let controller = match args.controller {
        ControllerArg::Baseline => Controller::Baseline,
        ControllerArg::Rl => {
            let path = args.checkpoint.context("--checkpoint is required with --controller rl")?;
            Controller::Policy(Policy::load(&path).with_context(|| format!("loading {}", path.display()))?)
        }
    };
    let scenario = run.scenario(args.scenario.into())?;
    let (log, report) = eval::evaluate(&scenario, &controller, args.seed, !args.stochastic)?;
    std::fs::create_dir_all(&args.out)?;
    plot::export_csv(&log, &args.out.join("trajectory.csv"))?;
    fs_write_json(&args.out.join("trajectory.json"), &log)?;
    fs_write_json(&args.out.join("report.json"), &report)?;
    for kind in ChartKind::ALL {
        plot::export_svg(&log, kind, &args.out.join(format!("{}.svg", kind.as_str())))?;
    }
    let gaps: Vec<String> = report.min_gaps.iter().map(|g| format!("{g:.2}")).collect();
    println!(
        "{} / {}: collided={} pairs={:?} min_gaps=[{}] return={}",
        report.scenario,
        report.controller,
        report.collided,
        report.collision_pairs,
        gaps.join(", "),
        report.episode_return
    );
    Ok(if report.collided { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn feasibility(scenario: ScenarioArg, config: Option<PathBuf>) -> Result<ExitCode> {
    let run = load_config(config.as_deref())?;
    let cfg = run.scenario(scenario.into())?;
    let f = eval::feasibility_oracle(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&f)?);
    Ok(ExitCode::SUCCESS)
}

fn suite(
    seeds: String,
    episodes: Option<usize>,
    config: Option<PathBuf>,
    out: PathBuf,
    jobs: Option<usize>,
) -> Result<ExitCode> {
    let mut run = load_config(config.as_deref())?;
    if let Some(k) = episodes {
        run.training.episodes = k;
    }
    let seeds = parse_seeds(&seeds)?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let window = run.training.moving_window;
    let t0 = std::time::Instant::now();
    let summary = eval::run_training_suite(&run, &seeds, &out, jobs, |seed, ep, log| {
        if (ep + 1) % 10 == 0 {
            let recent = &log.returns[(ep + 1).saturating_sub(window)..];
            eprintln!(
                "seed {seed}  episode {:>5}  avg{window} {:>8.0}  {:.0}s",
                ep + 1,
                recent.iter().sum::<f64>() / recent.len() as f64,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    for s in &summary.seeds {
        println!(
            "seed {}: {} episodes, best avg{} {:.0}, reached {} at {}, {:.0}s",
            s.seed,
            s.episodes,
            summary.window,
            s.best_moving_average,
            summary.target,
            s.reached_at.map_or("never".to_string(), |e| format!("episode {}", e + 1)),
            s.seconds
        );
    }
    println!("{} of {} seeds reached {}", summary.seeds_reaching(), summary.seeds.len(), summary.target);
    if let Some(seed) = summary.selected_seed {
        println!("selected seed {seed}: {}", out.join("policy.json").display());
    }
    Ok(ExitCode::SUCCESS)
}

fn read_log(path: &Path) -> Result<TrajectoryLog> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(plot::read_csv(path).with_context(|| format!("reading {}", path.display()))?)
    }
}

fn run_plot(input: PathBuf, kind: KindArg, out: Option<PathBuf>) -> Result<ExitCode> {
    let log = read_log(&input)?;
    let kind: ChartKind = kind.into();
    let out = out.unwrap_or_else(|| input.with_extension(format!("{}.svg", kind.as_str())));
    plot::export_svg(&log, kind, &out)?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, episodes, out } => train(config, seed, episodes, out),
        Command::Eval(args) => run_eval(args),
        Command::Feasibility { scenario, config } => feasibility(scenario, config),
        Command::Suite { seeds, episodes, config, out, jobs } => suite(seeds, episodes, config, out, jobs),
        Command::Plot { input, kind, out } => run_plot(input, kind, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
