//! Pinhole camera, conveyor-belt marker target and geometric feature observation.

use std::path::Path;

use nalgebra::{SVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::se3::{Pose, PoseRecord, Twist};

/// Number of scalar visual features: four corners, two coordinates each.
pub const K: usize = 8;
pub const CORNERS: usize = 4;

pub type Vector8 = SVector<f64, K>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    /// Focal lengths and principal point from resolution and field of view (radians).
    pub fn from_fov(width: f64, height: f64, hfov: f64, vfov: f64) -> Result<Self> {
        let fov_ok = |a: f64| a > 0.0 && a < std::f64::consts::PI;
        if !fov_ok(hfov) || !fov_ok(vfov) {
            return Err(Error::Domain(format!(
                "field of view must lie in (0, π), got {hfov} x {vfov} rad"
            )));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Domain(format!("bad resolution {width} x {height}")));
        }
        Ok(CameraIntrinsics {
            fx: (width / 2.0) / (hfov / 2.0).tan(),
            fy: (height / 2.0) / (vfov / 2.0).tan(),
            cu: width / 2.0,
            cv: height / 2.0,
            width,
            height,
        })
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (self.cu + self.fx * x, self.cv + self.fy * y)
    }

    pub fn to_normalized(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cu) / self.fx, (v - self.cv) / self.fy)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width).contains(&u) && (0.0..=self.height).contains(&v)
    }

    /// Pinhole projection of a camera-frame point: normalized and pixel coordinates.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Result<((f64, f64), (f64, f64))> {
        if !(p_cam.z > 0.0) {
            return Err(Error::BehindCamera { depth: p_cam.z });
        }
        let x = p_cam.x / p_cam.z;
        let y = p_cam.y / p_cam.z;
        Ok(((x, y), self.to_pixel(x, y)))
    }
}

/// Marker corners in the marker frame, counter-clockwise from `(−s/2, −s/2)`.
pub fn marker_corners(side: f64) -> Result<[Vector3<f64>; CORNERS]> {
    if !(side > 0.0) {
        return Err(Error::Domain(format!(
            "marker side must be positive, got {side}"
        )));
    }
    let h = side / 2.0;
    Ok([
        Vector3::new(-h, -h, 0.0),
        Vector3::new(h, -h, 0.0),
        Vector3::new(h, h, 0.0),
        Vector3::new(-h, h, 0.0),
    ])
}

/// Normalized image coordinates `(x0, y0, …, x3, y3)` of the marker corners with
/// their depths and pixel positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub coords: Vector8,
    pub depths: [f64; CORNERS],
    pub pixels: Vector8,
    /// False when some corner projects outside the image bounds.
    pub in_view: bool,
}

impl FeatureVector {
    pub fn point(&self, i: usize) -> (f64, f64, f64) {
        (self.coords[2 * i], self.coords[2 * i + 1], self.depths[i])
    }
}

/// On-disk scenario description. Field names are the config file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub width_px: f64,
    pub height_px: f64,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub marker_side_m: f64,
    pub belt_speed_mps: f64,
    pub belt_ramp_s: f64,
    pub belt_dir: [f64; 3],
    pub target_pose0: PoseRecord,
    pub camera_pose0: PoseRecord,
    pub desired_depth_m: f64,
    pub dt_s: f64,
    pub duration_s: f64,
    pub pixel_noise_sigma: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let target = Pose::identity();
        let side = 0.04;
        let depth = 0.09116;
        // centered over the marker before the belt starts
        let camera0 = desired_camera_pose(&target, depth);
        ScenarioConfig {
            width_px: 1920.0,
            height_px: 1080.0,
            hfov_deg: 69.0,
            vfov_deg: 42.0,
            marker_side_m: side,
            belt_speed_mps: 0.1,
            belt_ramp_s: 0.5,
            belt_dir: [1.0, 0.0, 0.0],
            target_pose0: PoseRecord::from(&target),
            camera_pose0: PoseRecord::from(&camera0),
            desired_depth_m: depth,
            dt_s: 0.01,
            duration_s: 10.0,
            pixel_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Validated, immutable scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub intrinsics: CameraIntrinsics,
    pub marker_side: f64,
    pub belt_speed: f64,
    pub belt_ramp_time: f64,
    pub belt_direction: Vector3<f64>,
    pub target_pose0: Pose,
    pub camera_pose0: Pose,
    pub desired_depth: f64,
    pub dt: f64,
    pub duration: f64,
    pub pixel_noise_sigma: f64,
    pub seed: u64,
    config: ScenarioConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::from_config(ScenarioConfig::default()).expect("default scenario is valid")
    }
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        let c = &config;
        let intrinsics = CameraIntrinsics::from_fov(
            c.width_px,
            c.height_px,
            c.hfov_deg.to_radians(),
            c.vfov_deg.to_radians(),
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(c.marker_side_m > 0.0) {
            return bad("marker_side_m must be > 0");
        }
        if !(c.belt_speed_mps >= 0.0) || !(c.belt_ramp_s >= 0.0) {
            return bad("belt_speed_mps and belt_ramp_s must be >= 0");
        }
        if !(c.dt_s > 0.0) || !(c.duration_s >= 0.0) {
            return bad("dt_s must be > 0 and duration_s >= 0");
        }
        if !(c.desired_depth_m > 0.0) {
            return bad("desired_depth_m must be > 0");
        }
        if !(c.pixel_noise_sigma >= 0.0) {
            return bad("pixel_noise_sigma must be >= 0");
        }
        let dir = Vector3::from(c.belt_dir);
        if !(dir.norm() > 1e-12) || dir.iter().any(|x| !x.is_finite()) {
            return bad("belt_dir must be a non-zero finite vector");
        }
        let target_pose0 = c
            .target_pose0
            .to_pose()
            .ok_or_else(|| Error::Config("target_pose0 is not a valid pose".into()))?;
        let camera_pose0 = c
            .camera_pose0
            .to_pose()
            .ok_or_else(|| Error::Config("camera_pose0 is not a valid pose".into()))?;
        Ok(Scenario {
            intrinsics,
            marker_side: c.marker_side_m,
            belt_speed: c.belt_speed_mps,
            belt_ramp_time: c.belt_ramp_s,
            belt_direction: dir.normalize(),
            target_pose0,
            camera_pose0,
            desired_depth: c.desired_depth_m,
            dt: c.dt_s,
            duration: c.duration_s,
            pixel_noise_sigma: c.pixel_noise_sigma,
            seed: c.seed,
            config,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Scenario::from_config(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("scenario config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(&self.config).expect("serializable"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same scenario with a different initial camera pose.
    pub fn with_camera_pose0(&self, pose: Pose) -> Scenario {
        let mut config = self.config.clone();
        config.camera_pose0 = PoseRecord::from(&pose);
        let mut out = self.clone();
        out.camera_pose0 = pose;
        out.config = config;
        out
    }

    pub fn with_duration(&self, duration: f64) -> Scenario {
        let mut config = self.config.clone();
        config.duration_s = duration;
        Scenario::from_config(config).expect("duration change keeps scenario valid")
    }

    pub fn with_config(&self, f: impl FnOnce(&mut ScenarioConfig)) -> Result<Scenario> {
        let mut config = self.config.clone();
        f(&mut config);
        Scenario::from_config(config)
    }

    /// Number of control steps in one episode.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Camera pose centered fronto-parallel over `target` at the desired depth.
    pub fn desired_camera_pose(&self, target: &Pose) -> Pose {
        desired_camera_pose(target, self.desired_depth)
    }

    /// Distance traveled by the belt after `t` seconds.
    pub fn belt_displacement(&self, t: f64) -> f64 {
        let v = self.belt_speed;
        let ramp = self.belt_ramp_time;
        if t <= 0.0 {
            0.0
        } else if t < ramp {
            0.5 * v * t * t / ramp
        } else {
            0.5 * v * ramp + v * (t - ramp)
        }
    }

    pub fn belt_speed_at(&self, t: f64) -> f64 {
        if self.belt_ramp_time <= 0.0 {
            if t >= 0.0 {
                self.belt_speed
            } else {
                0.0
            }
        } else {
            self.belt_speed * (t / self.belt_ramp_time).clamp(0.0, 1.0)
        }
    }

    /// Target pose and world-frame twist at time `t` (belt motion only).
    pub fn step_target(&self, t: f64) -> (Pose, Twist) {
        let pose = self
            .target_pose0
            .translated(&(self.belt_direction * self.belt_displacement(t)));
        (
            pose,
            Twist::linear(self.belt_direction * self.belt_speed_at(t)),
        )
    }

    /// Noise-free observation of the marker from `camera`.
    pub fn observe(&self, camera: &Pose, target: &Pose) -> Result<FeatureVector> {
        let corners = marker_corners(self.marker_side)?;
        let to_cam = camera.inverse().compose(target);
        let mut coords = Vector8::zeros();
        let mut pixels = Vector8::zeros();
        let mut depths = [0.0; CORNERS];
        let mut in_view = true;
        for (i, c) in corners.iter().enumerate() {
            let p = to_cam.transform_point(c);
            let ((x, y), (u, v)) = self.intrinsics.project(&p)?;
            coords[2 * i] = x;
            coords[2 * i + 1] = y;
            pixels[2 * i] = u;
            pixels[2 * i + 1] = v;
            depths[i] = p.z;
            in_view &= self.intrinsics.contains(u, v);
        }
        Ok(FeatureVector {
            coords,
            depths,
            pixels,
            in_view,
        })
    }

    /// Observation with zero-mean Gaussian pixel noise of the configured sigma.
    /// Depths stay exact.
    pub fn observe_noisy<R: Rng + ?Sized>(
        &self,
        camera: &Pose,
        target: &Pose,
        rng: &mut R,
    ) -> Result<FeatureVector> {
        let mut f = self.observe(camera, target)?;
        if self.pixel_noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.pixel_noise_sigma).expect("sigma checked at load");
            let intr = &self.intrinsics;
            f.in_view = true;
            for i in 0..CORNERS {
                let u = f.pixels[2 * i] + noise.sample(rng);
                let v = f.pixels[2 * i + 1] + noise.sample(rng);
                let (x, y) = intr.to_normalized(u, v);
                f.pixels[2 * i] = u;
                f.pixels[2 * i + 1] = v;
                f.coords[2 * i] = x;
                f.coords[2 * i + 1] = y;
                f.in_view &= intr.contains(u, v);
            }
        }
        Ok(f)
    }

    /// Features seen from the desired pose; every depth equals the desired depth.
    pub fn desired_features(&self) -> FeatureVector {
        let h = self.marker_side / 2.0 / self.desired_depth;
        // camera x follows marker x, camera y is flipped
        let pts = [(-h, h), (h, h), (h, -h), (-h, -h)];
        let mut coords = Vector8::zeros();
        let mut pixels = Vector8::zeros();
        for (i, (x, y)) in pts.iter().enumerate() {
            coords[2 * i] = *x;
            coords[2 * i + 1] = *y;
            let (u, v) = self.intrinsics.to_pixel(*x, *y);
            pixels[2 * i] = u;
            pixels[2 * i + 1] = v;
        }
        FeatureVector {
            coords,
            depths: [self.desired_depth; CORNERS],
            pixels,
            in_view: true,
        }
    }
}

/// Camera looking down the marker normal from `depth`, image x along marker x.
pub fn desired_camera_pose(target: &Pose, depth: f64) -> Pose {
    target.compose(&Pose::rot_x(std::f64::consts::PI).translated(&Vector3::new(0.0, 0.0, depth)))
}
