//! Oracle demonstrations and the `(ε, ρ)` training set built from them.

use std::path::Path;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{FeatureVector, Scenario, ScenarioConfig, Vector8};
use crate::control::{
    constant_lhat_pinv, target_feature_rate, tracking_control, ControlGain, PseudoInverse,
    VisualError,
};
use crate::error::{Error, Result};
use crate::exec::{self, Strategy};
use crate::gmm::{TrainingPair, TrainingSet};
use crate::se3::{Pose, Twist};
use crate::sim::{run_episode, ControllerKind, RunConfig};
use crate::trace::Trace;

/// A recorded oracle episode: `e_n`, `v_n`, pixels and camera pose per step.
pub type Demonstration = Trace;

/// Start offsets (world frame, m) of the default demonstrations relative to
/// the desired camera pose. Lateral offsets are limited by the 42° vertical
/// field of view at these heights.
pub const DEFAULT_DEMO_OFFSETS: [[f64; 3]; 3] = [
    [-0.05, -0.03, 0.04],
    [0.04, -0.03, 0.05],
    [0.0, 0.035, 0.06],
];

/// Initial camera poses of the default demonstrations, all with the
/// desired orientation.
pub fn default_demo_poses(scenario: &Scenario) -> Vec<Pose> {
    let goal = scenario.desired_camera_pose(&scenario.target_pose0);
    DEFAULT_DEMO_OFFSETS
        .iter()
        .map(|o| goal.translated(&Vector3::from(*o)))
        .collect()
}

/// Tracking-law twist from the true belt velocity.
pub fn oracle_controller(
    camera: &Pose,
    target: &Pose,
    target_twist: &Twist,
    scenario: &Scenario,
    gain: ControlGain,
    lp: &PseudoInverse,
) -> Result<Twist> {
    let features = scenario.observe(camera, target)?;
    let rate = oracle_feature_rate(camera, &features, target_twist)?;
    let e = VisualError::between(&features, &scenario.desired_features());
    Ok(tracking_control(&e, gain, lp, &rate))
}

fn oracle_feature_rate(
    camera: &Pose,
    features: &FeatureVector,
    target_twist: &Twist,
) -> Result<Vector8> {
    let v_cam = Twist::linear(camera.rotation.transpose() * target_twist.linear);
    target_feature_rate(features, &v_cam)
}

/// Runs the oracle from `initial` for the scenario duration.
/// Leaving the image aborts the recording.
pub fn record_demonstration(
    scenario: &Scenario,
    initial: &Pose,
    lambda: f64,
) -> Result<Demonstration> {
    let mut cfg = RunConfig::new(ControllerKind::Oracle, lambda);
    cfg.initial_camera = Some(*initial);
    cfg.strict_fov = true;
    run_episode(scenario, &cfg, None).map_err(|a| {
        log::error!("demonstration aborted: {a}");
        a.error
    })
}

/// Demonstrations recorded under one scenario with a shared gain and `L̂⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSuite {
    pub scenario: Scenario,
    pub lambda: f64,
    pub lhat_pinv: PseudoInverse,
    pub demos: Vec<Demonstration>,
}

pub fn collect_suite(
    scenario: &Scenario,
    poses: &[Pose],
    lambda: f64,
    strategy: Strategy,
) -> Result<DemoSuite> {
    if poses.is_empty() {
        return Err(Error::Config("need at least one initial pose".into()));
    }
    for (i, a) in poses.iter().enumerate() {
        if poses[..i].contains(a) {
            log::warn!("initial pose {i} duplicates an earlier one");
        }
    }
    let demos = exec::map(strategy, poses, |p| {
        record_demonstration(scenario, p, lambda)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(DemoSuite {
        scenario: scenario.clone(),
        lambda,
        lhat_pinv: constant_lhat_pinv(scenario),
        demos,
    })
}

/// `ε = L̂⁺·e`, `ρ = v + λ·ε` for every sample of every demonstration.
pub fn build_training_set(suite: &DemoSuite) -> TrainingSet {
    let mut pairs = Vec::with_capacity(suite.demos.iter().map(Trace::len).sum());
    for (d, demo) in suite.demos.iter().enumerate() {
        for (n, s) in demo.samples.iter().enumerate() {
            let eps = suite.lhat_pinv.apply(&Vector8::from(s.error));
            let rho = Vector6::from(s.twist) + eps * suite.lambda;
            pairs.push(TrainingPair {
                eps,
                rho,
                demo: d,
                index: n,
            });
        }
    }
    TrainingSet::new(pairs)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    demos: Vec<String>,
    lambda: f64,
    lhat_pinv: Vec<Vec<f64>>,
    scenario_hash: String,
    scenario: ScenarioConfig,
}

pub const MANIFEST: &str = "suite.json";

impl DemoSuite {
    /// Writes `demo_<d>.csv` files plus the `suite.json` manifest into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        for (d, demo) in self.demos.iter().enumerate() {
            let name = format!("demo_{d}.csv");
            demo.save(dir.join(&name))?;
            names.push(name);
        }
        let manifest = Manifest {
            demos: names,
            lambda: self.lambda,
            lhat_pinv: self.lhat_pinv.to_rows(),
            scenario_hash: self.scenario.fingerprint(),
            scenario: self.scenario.config().clone(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<DemoSuite> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e))?;
        let scenario = Scenario::from_config(m.scenario)?;
        if scenario.fingerprint() != m.scenario_hash {
            return Err(Error::malformed(
                &path,
                "scenario hash does not match the embedded scenario",
            ));
        }
        let lhat_pinv =
            PseudoInverse::from_rows(&m.lhat_pinv).map_err(|e| Error::malformed(&path, e))?;
        let demos = m
            .demos
            .iter()
            .map(|name| Trace::load(dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DemoSuite {
            scenario,
            lambda: m.lambda,
            lhat_pinv,
            demos,
        })
    }
}
