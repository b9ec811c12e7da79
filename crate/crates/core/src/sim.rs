//! Closed-loop episodes: observe, compute the error, run the controller,
//! move the camera, advance the belt.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{FeatureVector, Scenario};
use crate::control::{
    constant_lhat_pinv, ilvs_control, reshaped_control, target_feature_rate, tracking_control,
    vanishing_gain, vs_control, ControlGain, PseudoInverse, VisualError,
};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::se3::{Pose, PoseRecord, Twist};
use crate::trace::{Sample, StepAux, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// `−λ·L̂⁺·e`
    Vs,
    /// Tracking law fed with the true target velocity.
    Oracle,
    /// `−λ·L̂⁺·e + ρ̂(ε)` with a learned compensation.
    Ilvs,
    /// Learned compensation gated by a vanishing term.
    Reshaped,
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vs" => Ok(ControllerKind::Vs),
            "oracle" => Ok(ControllerKind::Oracle),
            "ilvs" => Ok(ControllerKind::Ilvs),
            "reshaped" => Ok(ControllerKind::Reshaped),
            other => Err(Error::Config(format!("unknown controller '{other}'"))),
        }
    }
}

impl ControllerKind {
    pub fn needs_model(self) -> bool {
        matches!(self, ControllerKind::Ilvs | ControllerKind::Reshaped)
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Vs => "vs",
            ControllerKind::Oracle => "oracle",
            ControllerKind::Ilvs => "ilvs",
            ControllerKind::Reshaped => "reshaped",
        }
    }
}

/// Sudden target displacement at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub time: f64,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub controller: ControllerKind,
    pub lambda: f64,
    pub initial_camera: Option<Pose>,
    pub perturbations: Vec<Perturbation>,
    /// Overrides the scenario's noise seed.
    pub seed: Option<u64>,
    /// Abort as soon as a corner leaves the image. Otherwise leaving the image
    /// is only flagged in the trace.
    pub strict_fov: bool,
    /// Vanishing-term cut time and decay constant for [`ControllerKind::Reshaped`].
    pub t_cut: f64,
    pub tau: f64,
}

impl RunConfig {
    pub fn new(controller: ControllerKind, lambda: f64) -> Self {
        RunConfig {
            controller,
            lambda,
            initial_camera: None,
            perturbations: Vec::new(),
            seed: None,
            strict_fov: false,
            t_cut: 5.0,
            tau: 1.0,
        }
    }
}

/// An episode stopped early; `trace` holds every completed step.
#[derive(Debug)]
pub struct Aborted {
    pub trace: Trace,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "episode aborted after {} steps: {}",
            self.trace.len(),
            self.error
        )
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Mutable state of one running episode.
pub struct Episode<'a> {
    scenario: &'a Scenario,
    controller: ControllerKind,
    gain: ControlGain,
    model: Option<&'a GmmModel>,
    lp: PseudoInverse,
    desired: FeatureVector,
    t_cut: f64,
    tau: f64,
    strict_fov: bool,
    step: usize,
    camera: Pose,
    target_offset: Vector3<f64>,
    rng: ChaCha8Rng,
    trace: Trace,
}

impl<'a> Episode<'a> {
    pub fn new(
        scenario: &'a Scenario,
        config: &RunConfig,
        model: Option<&'a GmmModel>,
    ) -> Result<Self> {
        let gain = ControlGain::new(config.lambda).map_err(|e| Error::Config(e.to_string()))?;
        if config.controller.needs_model() && model.is_none() {
            return Err(Error::Config(format!(
                "controller '{}' needs a model",
                config.controller.name()
            )));
        }
        if config.controller == ControllerKind::Reshaped && !(config.tau > 0.0) {
            return Err(Error::Config("reshaped controller needs tau > 0".into()));
        }
        let lp = constant_lhat_pinv(scenario);
        if let (true, Some(m)) = (config.controller.needs_model(), model) {
            if m.lambda != config.lambda {
                log::warn!(
                    "model was trained with lambda = {}, running with {}",
                    m.lambda,
                    config.lambda
                );
            }
            if m.lhat_pinv.fingerprint() != lp.fingerprint() {
                log::warn!("model was trained with a different interaction-matrix approximation");
            }
        }
        Ok(Episode {
            scenario,
            controller: config.controller,
            gain,
            model,
            lp,
            desired: scenario.desired_features(),
            t_cut: config.t_cut,
            tau: config.tau,
            strict_fov: config.strict_fov,
            step: 0,
            camera: config.initial_camera.unwrap_or(scenario.camera_pose0),
            target_offset: Vector3::zeros(),
            rng: ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(scenario.seed)),
            trace: Trace::new(scenario.dt),
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.dt
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn camera(&self) -> &Pose {
        &self.camera
    }

    pub fn lhat_pinv(&self) -> &PseudoInverse {
        &self.lp
    }

    /// Target pose and world-frame velocity at the current instant.
    pub fn target(&self) -> (Pose, Twist) {
        let (pose, twist) = self.scenario.step_target(self.time());
        (pose.translated(&self.target_offset), twist)
    }

    /// Moves the target by `offset` (world frame); the belt keeps running.
    pub fn displace_target(&mut self, offset: &Vector3<f64>) {
        self.target_offset += offset;
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Runs one control step.
    pub fn step(&mut self) -> Result<()> {
        let t = self.time();
        let (target, target_twist) = self.target();
        let features = self
            .scenario
            .observe_noisy(&self.camera, &target, &mut self.rng)?;
        if self.strict_fov && !features.in_view {
            return Err(Error::OutOfView { step: self.step, t });
        }
        let e = VisualError::between(&features, &self.desired);

        let mut rho = None;
        let mut feature_rate = None;
        let twist = match self.controller {
            ControllerKind::Vs => vs_control(&e, self.gain, &self.lp),
            ControllerKind::Oracle => {
                let rate = self.true_feature_rate(&target, &target_twist)?;
                feature_rate = Some(rate.into());
                tracking_control(&e, self.gain, &self.lp, &rate)
            }
            ControllerKind::Ilvs => {
                let model = self.model.expect("checked at construction");
                let (v, r) = ilvs_control(&e, self.gain, &self.lp, model)?;
                rho = Some(r.to_array());
                v
            }
            ControllerKind::Reshaped => {
                let model = self.model.expect("checked at construction");
                let r = model.gmr_predict(&self.lp.apply(&e.0))?;
                let r = Twist::from_vector(&r);
                let h = vanishing_gain(t, self.t_cut, self.tau)?;
                rho = Some(r.scale(h).to_array());
                reshaped_control(&e, self.gain, &self.lp, &r, h)
            }
        };
        if !twist.is_finite() {
            return Err(Error::SingularFit(format!(
                "non-finite camera twist at t = {t}"
            )));
        }

        self.trace.samples.push(Sample {
            t,
            error: e.0.into(),
            twist: twist.to_array(),
            pixels: features.pixels.into(),
            camera: PoseRecord::from(&self.camera),
        });
        self.trace.aux.push(StepAux {
            target: PoseRecord::from(&target),
            in_view: features.in_view,
            rho,
            feature_rate,
        });

        self.camera = self.camera.integrate_twist(&twist, self.scenario.dt);
        self.step += 1;
        Ok(())
    }

    /// `∂e/∂t` from noise-free features and the true belt velocity.
    fn true_feature_rate(
        &self,
        target: &Pose,
        target_twist: &Twist,
    ) -> Result<crate::camera::Vector8> {
        let clean = self.scenario.observe(&self.camera, target)?;
        let v_cam = Twist::linear(self.camera.rotation.transpose() * target_twist.linear);
        target_feature_rate(&clean, &v_cam)
    }

    /// Steps until the clock reaches `t` (or the scenario duration).
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        let end = self.scenario.steps();
        while self.step < end && self.time() < t - 1e-9 {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}

/// Runs a whole episode under `config`.
pub fn run_episode(
    scenario: &Scenario,
    config: &RunConfig,
    model: Option<&GmmModel>,
) -> std::result::Result<Trace, Aborted> {
    let mut ep = match Episode::new(scenario, config, model) {
        Ok(ep) => ep,
        Err(error) => {
            return Err(Aborted {
                trace: Trace::new(scenario.dt),
                error,
            })
        }
    };
    let mut events = config.perturbations.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next = 0;
    let end = scenario.steps();
    while ep.steps_done() < end {
        while next < events.len() && events[next].time <= ep.time() + 1e-9 {
            ep.displace_target(&Vector3::from(events[next].offset));
            next += 1;
        }
        if let Err(error) = ep.step() {
            return Err(Aborted {
                trace: ep.into_trace(),
                error,
            });
        }
    }
    Ok(ep.into_trace())
}
