//! Visual servoing of a marker on a moving conveyor with an eye-in-hand
//! camera. The feedforward term that cancels the target motion is learned
//! from oracle demonstrations with a Gaussian mixture and queried by
//! Gaussian mixture regression.

// negated comparisons are deliberate: NaN must fail the domain checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod control;
pub mod demo;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod gmm;
pub mod metrics;
pub mod plot;
pub mod se3;
pub mod sim;
pub mod trace;

pub use camera::{CameraIntrinsics, FeatureVector, Scenario, ScenarioConfig};
pub use control::{ControlGain, InteractionMatrix, PseudoInverse, VisualError};
pub use demo::{DemoSuite, Demonstration};
pub use error::{Error, Result};
pub use exec::Strategy;
pub use gmm::{EmOptions, GmmModel, TrainingSet};
pub use metrics::Metrics;
pub use se3::{Pose, PoseRecord, Twist};
pub use sim::{ControllerKind, Perturbation, RunConfig};
pub use trace::Trace;
