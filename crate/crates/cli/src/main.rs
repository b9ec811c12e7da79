use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ilvs::demo::{collect_suite, default_demo_poses, DemoSuite};
use ilvs::experiment::{compare_gains, compare_table, emit_outputs, train_model, ComponentChoice};
use ilvs::gmm::{load_model, save_model};
use ilvs::metrics::{rmse_vs_demo, tracking_phase_metrics};
use ilvs::sim::run_episode;
use ilvs::{
    ControllerKind, Error, Perturbation, Pose, PoseRecord, RunConfig, Scenario, Strategy, Trace,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ilvs",
    version,
    about = "Visual servoing of a conveyor target with a learned feedforward term"
)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record oracle demonstrations.
    Demo(DemoArgs),
    /// Fit the mixture model on a demonstration suite.
    Train(TrainArgs),
    /// Run one closed-loop episode.
    Run(RunArgs),
    /// Plain VS at several gains against the learned controller.
    Compare(CompareArgs),
    /// Compute metrics for a recorded trace.
    Eval(EvalArgs),
}

#[derive(Args)]
struct DemoArgs {
    /// Scenario JSON; the built-in default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON list of initial camera poses `{translation, quaternion}`.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value_t = 11)]
    k: usize,
    /// Candidate component counts, `a..b` (inclusive) or `a,b,c`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "vs")]
    controller: String,
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target displacement `t,dx,dy,dz`; repeatable.
    #[arg(long, value_parser = parse_perturbation)]
    perturb: Vec<Perturbation>,
    /// Initial camera pose JSON `{translation, quaternion}`.
    #[arg(long)]
    camera_pose: Option<PathBuf>,
    /// Abort when a corner leaves the image.
    #[arg(long)]
    strict_fov: bool,
    #[arg(long, default_value_t = 5.0)]
    t_cut: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    /// Pixel-noise seed; the scenario seed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    gains: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    demo: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    threshold_px: f64,
    /// Scenario the trace was recorded under (intrinsics and depth).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_perturbation(s: &str) -> Result<Perturbation, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [t, dx, dy, dz] if v.iter().all(|x| x.is_finite()) && *t >= 0.0 => Ok(Perturbation {
            time: *t,
            offset: [*dx, *dy, *dz],
        }),
        _ => Err("expected t,dx,dy,dz with t >= 0".into()),
    }
}

fn parse_grid(s: &str) -> anyhow::Result<Vec<usize>> {
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().context("grid start")?;
        let b: usize = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .context("grid end")?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse())
            .collect::<Result<_, _>>()
            .context("grid list")?
    };
    if ks.is_empty() || ks.contains(&0) {
        bail!(Error::Config(format!("bad component grid '{s}'")));
    }
    Ok(ks)
}

fn load_scenario(path: Option<&Path>) -> ilvs::Result<Scenario> {
    path.map_or_else(|| Ok(Scenario::default()), Scenario::load)
}

fn read_pose(path: &Path) -> anyhow::Result<Pose> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let rec: PoseRecord = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    rec.to_pose()
        .ok_or_else(|| Error::Config(format!("{}: invalid pose", path.display())).into())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn demo(args: DemoArgs, strategy: Strategy) -> anyhow::Result<()> {
    let scenario = load_scenario(args.scenario.as_deref())?;
    let poses = match &args.poses {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            let recs: Vec<PoseRecord> = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            recs.iter()
                .map(|r| {
                    r.to_pose()
                        .ok_or_else(|| Error::Config(format!("{}: invalid pose", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => default_demo_poses(&scenario),
    };
    let suite = collect_suite(&scenario, &poses, args.lambda, strategy)?;
    suite.save(&args.out)?;
    println!(
        "recorded {} demonstrations into {}",
        suite.demos.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs, strategy: Strategy) -> anyhow::Result<()> {
    let suite = DemoSuite::load(&args.suite)?;
    let choice = match &args.grid {
        Some(g) => ComponentChoice::Grid {
            candidates: parse_grid(g)?,
            folds: args.folds,
        },
        None => ComponentChoice::Fixed(args.k),
    };
    let trained = train_model(&suite, &choice, args.seed, strategy)?;
    if let Some(grid) = &trained.grid {
        for (k, score) in &grid.scores {
            println!("k = {k}\tmean held-out log-likelihood = {score:.6}");
        }
    }
    save_model(&trained.model, &args.out)?;
    println!(
        "trained k = {} in {} EM iterations -> {}",
        trained.model.k(),
        trained.iterations,
        args.out.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(args.scenario.as_deref())?;
    let controller: ControllerKind = args.controller.parse()?;
    let model = match (&args.model, controller.needs_model()) {
        (Some(p), _) => Some(load_model(p)?),
        (None, true) => bail!(Error::Config(format!(
            "controller '{}' needs --model",
            controller.name()
        ))),
        (None, false) => None,
    };
    let mut cfg = RunConfig::new(controller, args.lambda);
    cfg.perturbations = args.perturb;
    cfg.seed = args.seed;
    cfg.strict_fov = args.strict_fov;
    cfg.t_cut = args.t_cut;
    cfg.tau = args.tau;
    if let Some(p) = &args.camera_pose {
        cfg.initial_camera = Some(read_pose(p)?);
    }
    let (trace, failure) = match run_episode(&scenario, &cfg, model.as_ref()) {
        Ok(t) => (t, None),
        Err(a) => (a.trace, Some(a.error)),
    };
    let metrics = tracking_phase_metrics(&trace, &scenario, ilvs::metrics::TRACKING_THRESHOLD_PX);
    emit_outputs(&args.out, &trace, &metrics, &scenario, &[], !args.no_plots)?;
    if let Some(e) = failure {
        return Err(e).context(format!(
            "episode aborted; partial trace in {}",
            args.out.display()
        ));
    }
    println!("{}", metrics.to_json().trim_end());
    Ok(())
}

fn compare(args: CompareArgs, strategy: Strategy) -> anyhow::Result<()> {
    let scenario = load_scenario(args.scenario.as_deref())?;
    let model = load_model(&args.model)?;
    if args.gains.is_empty() {
        bail!(Error::Config("no gains given".into()));
    }
    let rows = compare_gains(&scenario, &args.gains, &model, strategy)?;
    for r in &rows {
        emit_outputs(
            &args.out.join(r.key()),
            &r.trace,
            &r.metrics,
            &scenario,
            &[],
            !args.no_plots,
        )?;
    }
    let table = compare_table(&rows);
    write(&args.out.join("summary.tsv"), &table)?;
    write(
        &args.out.join("summary.json"),
        &(serde_json::to_string_pretty(&rows)? + "\n"),
    )?;
    print!("{table}");
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(args.scenario.as_deref())?;
    if args.threshold_px.is_nan() || args.threshold_px <= 0.0 {
        bail!(Error::Config("--threshold-px must be positive".into()));
    }
    let trace = Trace::load(&args.trace)?;
    let mut metrics = tracking_phase_metrics(&trace, &scenario, args.threshold_px);
    if let Some(d) = &args.demo {
        let demo = Trace::load(d)?;
        metrics = metrics.merge(rmse_vs_demo(&trace, &demo)?);
    }
    write(&args.out, &metrics.to_json())?;
    println!("{}", metrics.to_json().trim_end());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_CONFIG;
    };
    match e {
        Error::OutOfView { .. } | Error::BehindCamera { .. } => EXIT_ABORT,
        Error::SingularFit(_)
        | Error::Invariant(_)
        | Error::TooFewPoints { .. }
        | Error::NonPositiveDepth(_) => EXIT_NUMERIC,
        Error::Domain(_) | Error::Config(_) | Error::Malformed { .. } | Error::Io { .. } => {
            EXIT_CONFIG
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let strategy = if cli.sequential {
        Strategy::Sequential
    } else {
        Strategy::default()
    };
    let result = match cli.command {
        Command::Demo(a) => demo(a, strategy),
        Command::Train(a) => train(a, strategy),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a, strategy),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn perturbation_parsing() {
        let p = parse_perturbation("5,0.05,0,0").unwrap();
        assert_eq!(p.time, 5.0);
        assert_eq!(p.offset, [0.05, 0.0, 0.0]);
        assert!(parse_perturbation("5,0.05,0").is_err());
        assert!(parse_perturbation("-1,0,0,0").is_err());
        assert!(parse_perturbation("a,0,0,0").is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_grid("3,5").unwrap(), vec![3, 5]);
        assert!(parse_grid("0..2").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let abort = anyhow::Error::from(Error::OutOfView { step: 1, t: 0.01 }).context("run");
        assert_eq!(exit_code(&abort), EXIT_ABORT);
        assert_eq!(
            exit_code(&Error::SingularFit("x".into()).into()),
            EXIT_NUMERIC
        );
        assert_eq!(exit_code(&Error::Config("x".into()).into()), EXIT_CONFIG);
        assert_eq!(exit_code(&anyhow!("other")), EXIT_CONFIG);
    }
}
