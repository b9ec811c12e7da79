//! Experiment suite: training from demonstrations, gain comparison,
//! initial-condition levels and artifact output.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;

use crate::camera::Scenario;
use crate::demo::{build_training_set, DemoSuite};
use crate::error::{Error, Result};
use crate::exec::{self, Strategy};
use crate::gmm::{em_fit, model_select_gridsearch, EmOptions, GmmModel, GridSearch};
use crate::metrics::{rmse_vs_demo, tracking_phase_metrics, Metrics, TRACKING_THRESHOLD_PX};
use crate::plot;
use crate::se3::Pose;
use crate::sim::{run_episode, Aborted, ControllerKind, RunConfig};
use crate::trace::Trace;

/// Component-count selection for [`train_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentChoice {
    Fixed(usize),
    Grid {
        candidates: Vec<usize>,
        folds: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: GmmModel,
    pub grid: Option<GridSearch>,
    pub iterations: usize,
    pub converged: bool,
}

/// Builds the training set of `suite` and fits the mixture.
pub fn train_model(
    suite: &DemoSuite,
    choice: &ComponentChoice,
    seed: u64,
    strategy: Strategy,
) -> Result<Trained> {
    let data = build_training_set(suite);
    let base = EmOptions {
        seed,
        strategy,
        ..EmOptions::default()
    };
    let (k, grid) = match choice {
        ComponentChoice::Fixed(k) => (*k, None),
        ComponentChoice::Grid { candidates, folds } => {
            let g = model_select_gridsearch(&data, candidates, *folds, &base)?;
            log::info!("grid search picked k = {}", g.best_k);
            (g.best_k, Some(g))
        }
    };
    let fit = em_fit(
        &data,
        &EmOptions { k, ..base },
        suite.lambda,
        suite.lhat_pinv,
    )?;
    if !fit.converged {
        log::warn!(
            "EM stopped after {} iterations without converging",
            fit.iterations
        );
    }
    Ok(Trained {
        model: fit.model,
        grid,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Named initial camera pose for generalization tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub name: &'static str,
    pub pose: Pose,
}

/// Starts at increasing distance from the first demonstrated start:
/// `near` a centimeter away, `far` up to 0.10 m away and `far+rotated` the
/// same with a 10° tilt.
pub fn level_poses(demo_start: &Pose) -> Vec<Level> {
    let near = demo_start.translated(&Vector3::new(0.01, 0.01, 0.01));
    let far = demo_start.translated(&Vector3::new(0.06, 0.02, 0.10));
    let tilt = Pose::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0).normalize(), 10f64.to_radians());
    let far_rotated = Pose::new(far.rotation * tilt.rotation, far.translation);
    vec![
        Level {
            name: "near",
            pose: near,
        },
        Level {
            name: "far",
            pose: far,
        },
        Level {
            name: "far+rotated",
            pose: far_rotated,
        },
    ]
}

/// One row of a controller comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub controller: String,
    pub lambda: f64,
    /// Mean pixel error over the last 30% of the episode.
    pub steady_state_err: Option<f64>,
    pub metrics: Metrics,
    #[serde(skip)]
    pub trace: Trace,
}

impl CompareRow {
    pub fn key(&self) -> String {
        format!("{}_{}", self.controller, self.lambda)
    }
}

fn episode(scenario: &Scenario, cfg: &RunConfig, model: Option<&GmmModel>) -> Result<Trace> {
    run_episode(scenario, cfg, model).map_err(|Aborted { error, trace }| {
        log::error!(
            "{} episode aborted after {} steps",
            cfg.controller.name(),
            trace.len()
        );
        error
    })
}

/// One plain-VS episode per gain plus one ILVS episode at the model's gain.
/// Rows come back sorted by controller name, then gain.
pub fn compare_gains(
    scenario: &Scenario,
    gains: &[f64],
    model: &GmmModel,
    strategy: Strategy,
) -> Result<Vec<CompareRow>> {
    let mut configs: Vec<RunConfig> = gains
        .iter()
        .map(|g| RunConfig::new(ControllerKind::Vs, *g))
        .collect();
    configs.push(RunConfig::new(ControllerKind::Ilvs, model.lambda));
    let rows = exec::map(strategy, &configs, |cfg| -> Result<CompareRow> {
        let trace = episode(scenario, cfg, Some(model))?;
        let metrics = tracking_phase_metrics(&trace, scenario, TRACKING_THRESHOLD_PX);
        Ok(CompareRow {
            controller: cfg.controller.name().to_string(),
            lambda: cfg.lambda,
            steady_state_err: metrics.final_window_mean_err,
            metrics,
            trace,
        })
    });
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.controller
            .cmp(&b.controller)
            .then(a.lambda.total_cmp(&b.lambda))
    });
    Ok(rows)
}

/// Tab-separated summary of a comparison.
pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("controller\tlambda\tsteady_state_err_px\ttracking_mean_px\n");
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.controller,
            r.lambda,
            f(r.steady_state_err),
            f(r.metrics.steady_state_mean_err)
        ));
    }
    s
}

/// Replays the learned controller from each demonstrated start and compares
/// with the matching demonstration.
pub fn replay_demos(
    suite: &DemoSuite,
    model: &GmmModel,
    strategy: Strategy,
) -> Result<Vec<(Trace, Metrics)>> {
    exec::map(strategy, &suite.demos, |demo| {
        let start = demo
            .samples
            .first()
            .and_then(|s| s.camera.to_pose())
            .ok_or_else(|| Error::Config("empty demonstration".into()))?;
        let mut cfg = RunConfig::new(ControllerKind::Ilvs, suite.lambda);
        cfg.initial_camera = Some(start);
        let trace = episode(&suite.scenario, &cfg, Some(model))?;
        let m = rmse_vs_demo(&trace, demo)?;
        Ok((trace, m))
    })
    .into_iter()
    .collect()
}

/// Learned-controller episodes from each level start.
pub fn run_levels(
    scenario: &Scenario,
    levels: &[Level],
    model: &GmmModel,
    strategy: Strategy,
) -> Result<Vec<(Trace, Metrics)>> {
    exec::map(strategy, levels, |level| {
        let mut cfg = RunConfig::new(ControllerKind::Ilvs, model.lambda);
        cfg.initial_camera = Some(level.pose);
        let trace = episode(scenario, &cfg, Some(model))?;
        let m = tracking_phase_metrics(&trace, scenario, TRACKING_THRESHOLD_PX);
        Ok((trace, m))
    })
    .into_iter()
    .collect()
}

/// Files written by [`emit_outputs`].
#[derive(Debug, Clone)]
pub struct Outputs {
    pub trace: PathBuf,
    pub metrics: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Writes `trace.csv` (plus its aux file), `metrics.json` and, with
/// `plots`, `features.svg` and `error.svg` into `dir`.
pub fn emit_outputs(
    dir: &Path,
    trace: &Trace,
    metrics: &Metrics,
    scenario: &Scenario,
    overlays: &[&Trace],
    plots: bool,
) -> Result<Outputs> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trace_path = dir.join("trace.csv");
    trace.save(&trace_path)?;
    let metrics_path = dir.join("metrics.json");
    write(&metrics_path, &metrics.to_json())?;
    let mut written = Vec::new();
    if plots {
        let p = dir.join("features.svg");
        write(&p, &plot::feature_svg(trace, scenario, overlays))?;
        written.push(p);
        let p = dir.join("error.svg");
        write(&p, &plot::error_svg(trace, scenario, TRACKING_THRESHOLD_PX))?;
        written.push(p);
    }
    Ok(Outputs {
        trace: trace_path,
        metrics: metrics_path,
        plots: written,
    })
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
