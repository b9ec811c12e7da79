//! Tracking-quality metrics computed from traces.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Scenario, CORNERS};
use crate::error::{Error, Result};
use crate::trace::{Sample, Trace};

/// Threshold (px) below which an episode counts as tracking.
pub const TRACKING_THRESHOLD_PX: f64 = 5.0;

/// All fields are optional so that a metric that cannot be computed for a
/// trace is reported as `null` rather than as a made-up number.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    /// Mean over the 8 pixel coordinates of their per-coordinate RMSE (px).
    pub rmse_features: Option<f64>,
    pub rmse_features_std: Option<f64>,
    pub rmse_features_per_coord: Option<Vec<f64>>,
    /// Camera position RMSE, mean over axes (mm).
    pub rmse_position: Option<f64>,
    pub rmse_position_std: Option<f64>,
    /// Linear camera velocity RMSE, mean over axes (mm/s).
    pub rmse_velocity: Option<f64>,
    pub rmse_velocity_std: Option<f64>,
    /// Pixel error statistics over the tracking phase.
    pub steady_state_mean_err: Option<f64>,
    pub steady_state_std_err: Option<f64>,
    /// Camera position error over the tracking phase (mm).
    pub steady_state_position_mean: Option<f64>,
    pub steady_state_position_std: Option<f64>,
    /// Time from the first sample to the first error below the threshold (s).
    pub convergence_time_to_5px: Option<f64>,
    pub tracking_phase_entered: Option<bool>,
    pub threshold_px: Option<f64>,
    /// Mean pixel error over the last 30% of the trace.
    pub final_window_mean_err: Option<f64>,
    pub final_pixel_err: Option<f64>,
    pub out_of_view_steps: Option<usize>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Mean over corners of the Euclidean pixel distance to the desired corner.
pub fn pixel_error(sample: &Sample, intr: &CameraIntrinsics) -> f64 {
    (0..CORNERS)
        .map(|i| (intr.fx * sample.error[2 * i]).hypot(intr.fy * sample.error[2 * i + 1]))
        .sum::<f64>()
        / CORNERS as f64
}

/// Per-corner pixel distance to the desired corner.
pub fn corner_errors(sample: &Sample, intr: &CameraIntrinsics) -> [f64; CORNERS] {
    std::array::from_fn(|i| {
        (intr.fx * sample.error[2 * i]).hypot(intr.fy * sample.error[2 * i + 1])
    })
}

pub fn pixel_errors(trace: &Trace, intr: &CameraIntrinsics) -> Vec<f64> {
    trace.samples.iter().map(|s| pixel_error(s, intr)).collect()
}

/// Distance (mm) between the camera and the pose centered over the target,
/// per sample. `None` without target data.
pub fn position_errors(trace: &Trace, scenario: &Scenario) -> Option<Vec<f64>> {
    if !trace.has_aux() {
        return None;
    }
    trace
        .samples
        .iter()
        .zip(&trace.aux)
        .map(|(s, a)| {
            let target = a.target.to_pose()?;
            let goal = scenario.desired_camera_pose(&target);
            Some((s.camera.position() - goal.translation).norm() * 1e3)
        })
        .collect()
}

/// Basic per-trace statistics shared by every report.
pub fn summary(trace: &Trace, scenario: &Scenario) -> Metrics {
    let mut m = Metrics {
        samples: trace.len(),
        ..Default::default()
    };
    if trace.is_empty() {
        return m;
    }
    let errs = pixel_errors(trace, &scenario.intrinsics);
    let start = ((errs.len() as f64) * 0.7).floor() as usize;
    m.final_window_mean_err = Some(mean_std(&errs[start.min(errs.len() - 1)..]).0);
    m.final_pixel_err = errs.last().copied();
    if trace.has_aux() {
        m.out_of_view_steps = Some(trace.aux.iter().filter(|a| !a.in_view).count());
    }
    m
}

/// Per-coordinate RMSE of pixels, camera position and linear velocity between
/// a trace and a demonstration, over their common length.
pub fn rmse_vs_demo(trace: &Trace, demo: &Trace) -> Result<Metrics> {
    if trace.len() > 1 && demo.len() > 1 && (trace.dt - demo.dt).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "time step mismatch: {} vs {}",
            trace.dt, demo.dt
        )));
    }
    let n = trace.len().min(demo.len());
    let mut m = Metrics {
        samples: n,
        ..Default::default()
    };
    if n == 0 {
        return Ok(m);
    }
    let rmse = |f: &dyn Fn(&Sample) -> f64| {
        let ss: f64 = (0..n)
            .map(|i| {
                let d = f(&trace.samples[i]) - f(&demo.samples[i]);
                d * d
            })
            .sum();
        (ss / n as f64).sqrt()
    };
    let feat: Vec<f64> = (0..8).map(|c| rmse(&|s: &Sample| s.pixels[c])).collect();
    let pos: Vec<f64> = (0..3)
        .map(|c| rmse(&|s: &Sample| s.camera.translation[c] * 1e3))
        .collect();
    let vel: Vec<f64> = (0..3)
        .map(|c| rmse(&|s: &Sample| s.twist[c] * 1e3))
        .collect();
    let (fm, fs) = mean_std(&feat);
    let (pm, ps) = mean_std(&pos);
    let (vm, vs) = mean_std(&vel);
    m.rmse_features = Some(fm);
    m.rmse_features_std = Some(fs);
    m.rmse_features_per_coord = Some(feat);
    m.rmse_position = Some(pm);
    m.rmse_position_std = Some(ps);
    m.rmse_velocity = Some(vm);
    m.rmse_velocity_std = Some(vs);
    Ok(m)
}

/// Statistics over the part of the trace after the pixel error first drops
/// below `threshold_px`. When that never happens only
/// `tracking_phase_entered = false` is reported.
pub fn tracking_phase_metrics(trace: &Trace, scenario: &Scenario, threshold_px: f64) -> Metrics {
    let mut m = summary(trace, scenario);
    m.threshold_px = Some(threshold_px);
    let errs = pixel_errors(trace, &scenario.intrinsics);
    let Some(first) = errs.iter().position(|e| *e < threshold_px) else {
        m.tracking_phase_entered = Some(false);
        return m;
    };
    m.tracking_phase_entered = Some(true);
    m.convergence_time_to_5px = Some(trace.samples[first].t - trace.samples[0].t);
    let (mean, std) = mean_std(&errs[first..]);
    m.steady_state_mean_err = Some(mean);
    m.steady_state_std_err = Some(std);
    if let Some(pos) = position_errors(trace, scenario) {
        let (pm, ps) = mean_std(&pos[first..]);
        m.steady_state_position_mean = Some(pm);
        m.steady_state_position_std = Some(ps);
    }
    m
}

/// Time (s) from `from` until the pixel error first drops below `threshold_px`.
pub fn time_to_reenter(
    trace: &Trace,
    intr: &CameraIntrinsics,
    from: f64,
    threshold_px: f64,
) -> Option<f64> {
    trace
        .samples
        .iter()
        .find(|s| s.t >= from - 1e-9 && pixel_error(s, intr) < threshold_px)
        .map(|s| s.t - from)
}

impl Metrics {
    /// Fields set in `other` replace those of `self`.
    pub fn merge(mut self, other: Metrics) -> Metrics {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            rmse_features,
            rmse_features_std,
            rmse_features_per_coord,
            rmse_position,
            rmse_position_std,
            rmse_velocity,
            rmse_velocity_std,
            steady_state_mean_err,
            steady_state_std_err,
            steady_state_position_mean,
            steady_state_position_std,
            convergence_time_to_5px,
            tracking_phase_entered,
            threshold_px,
            final_window_mean_err,
            final_pixel_err,
            out_of_view_steps
        );
        self.samples = self.samples.max(other.samples);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}
