//! Rigid-body poses and body-frame twists.
//!
//! A [`Pose`] maps points from its child frame into its parent frame,
//! `x_parent = R · x_child + t`. Twists are integrated with the closed-form
//! SE(3) exponential map, so a constant twist held for `dt` lands exactly
//! where the continuous-time motion would.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Below this rotation angle (rad) the exponential map switches to its series form.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Six-dimensional velocity. Linear part in m/s, angular part in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn linear(linear: Vector3<f64>) -> Self {
        Twist {
            linear,
            angular: Vector3::zeros(),
        }
    }

    /// Stacked `(vx, vy, vz, wx, wy, wz)`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        self.to_vector().into()
    }

    pub fn is_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(self.angular.iter())
            .all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Twist {
            linear: self.linear * s,
            angular: self.angular * s,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Pose {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// Rotation of `angle` rad about the unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Pose::from_rotation(exp_so3(&(axis.normalize() * angle)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Pose::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Pose::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Pose::from_axis_angle(&Vector3::z(), angle)
    }

    /// `self` followed by `other`: `compose(a, b) · x = a · (b · x)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Pose after holding the body-frame twist `v` for `dt` seconds.
    pub fn integrate_twist(&self, v: &Twist, dt: f64) -> Pose {
        debug_assert!(dt >= 0.0);
        let step = exp_se3(&v.linear.scale(dt), &v.angular.scale(dt));
        let mut out = self.compose(&step);
        out.rotation = orthonormalize(&out.rotation);
        out
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation + offset,
        }
    }

    /// `‖RᵀR − I‖` (Frobenius).
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation
            .iter()
            .chain(self.translation.iter())
            .all(|x| x.is_finite())
            && self.orthonormality_error() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Unit quaternion `(w, x, y, z)` for this rotation.
    pub fn quaternion(&self) -> [f64; 4] {
        let q =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        [q.w, q.i, q.j, q.k]
    }

    /// Builds a pose from a translation and a `(w, x, y, z)` quaternion,
    /// normalizing the quaternion first.
    pub fn from_translation_quaternion(t: [f64; 3], q: [f64; 4]) -> Option<Pose> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !n.is_finite() || n < 1e-12 || t.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Some(Pose {
            rotation: unit.to_rotation_matrix().into_inner(),
            translation: Vector3::from(t),
        })
    }

    /// Distance between two poses: translation gap and rotation angle.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let d = self.inverse().compose(other);
        let cos = ((d.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        ((self.translation - other.translation).norm(), cos.acos())
    }
}

/// Skew-symmetric cross-product matrix.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Exponential of the twist `(rho, phi)` (translation part first).
pub fn exp_se3(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Pose {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    let v = if theta < SMALL_ANGLE {
        Matrix3::identity() + k * 0.5 + k2 * (1.0 / 6.0)
    } else {
        let t2 = theta * theta;
        Matrix3::identity()
            + k * ((1.0 - theta.cos()) / t2)
            + k2 * ((theta - theta.sin()) / (t2 * theta))
    };
    Pose {
        rotation: exp_so3(phi),
        translation: v * rho,
    }
}

/// One Newton step towards the nearest rotation, `R (3I − RᵀR) / 2`.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    r * (Matrix3::identity() * 3.0 - r.transpose() * r) * 0.5
}

/// Serialized pose: translation in meters and a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        PoseRecord {
            translation: p.translation.into(),
            quaternion: p.quaternion(),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Option<Pose> {
        Pose::from_translation_quaternion(self.translation, self.quaternion)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }
}
