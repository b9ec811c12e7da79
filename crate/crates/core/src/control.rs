//! Image-based visual servoing laws.
//!
//! All controllers share the same structure: a proportional term
//! `−λ·L̂⁺·e` driving the visual error to zero, optionally augmented by a
//! compensation twist that cancels the feature drift caused by target motion.
//! The compensation is either computed from the true target velocity
//! ([`tracking_control`]), supplied and gated ([`reshaped_control`]) or
//! regressed from demonstrations ([`ilvs_control`]).

use nalgebra::{DMatrix, SMatrix, Vector6};

use crate::camera::{FeatureVector, Scenario, Vector8, CORNERS, K};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::se3::Twist;

/// Relative singular-value cutoff used by [`pseudoinverse`].
pub const PINV_RCOND: f64 = 1e-10;

/// Current features minus desired features, in normalized image units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualError(pub Vector8);

impl VisualError {
    pub fn between(current: &FeatureVector, desired: &FeatureVector) -> Self {
        VisualError(current.coords - desired.coords)
    }

    pub fn zero() -> Self {
        VisualError(Vector8::zeros())
    }
}

/// Maps a camera twist to the feature rate: `ė = L·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionMatrix(pub SMatrix<f64, K, 6>);

/// `L̂⁺`, a 6×8 approximation of the interaction-matrix pseudoinverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoInverse(pub SMatrix<f64, 6, K>);

impl PseudoInverse {
    pub fn apply(&self, v: &Vector8) -> Vector6<f64> {
        self.0 * v
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..6)
            .map(|r| self.0.row(r).iter().copied().collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != 6 || rows.iter().any(|r| r.len() != K) {
            return Err(Error::Invariant("pseudoinverse must be 6x8".into()));
        }
        Ok(PseudoInverse(SMatrix::from_fn(|r, c| rows[r][c])))
    }

    /// Short hex digest identifying the matrix bit pattern.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for x in self.0.iter() {
            h.update(x.to_le_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Proportional gain λ (1/s).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ControlGain(f64);

impl ControlGain {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda > 0.0 && lambda.is_finite() {
            Ok(ControlGain(lambda))
        } else {
            Err(Error::Domain(format!(
                "gain must be positive, got {lambda}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Point-feature interaction matrix; two rows per corner.
pub fn interaction_matrix(features: &FeatureVector) -> Result<InteractionMatrix> {
    let mut l = SMatrix::<f64, K, 6>::zeros();
    for i in 0..CORNERS {
        let (x, y, z) = features.point(i);
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth(z));
        }
        let iz = 1.0 / z;
        let rx = [-iz, 0.0, x * iz, x * y, -(1.0 + x * x), y];
        let ry = [0.0, -iz, y * iz, 1.0 + y * y, -x * y, -x];
        for c in 0..6 {
            l[(2 * i, c)] = rx[c];
            l[(2 * i + 1, c)] = ry[c];
        }
    }
    Ok(InteractionMatrix(l))
}

/// Moore–Penrose pseudoinverse by SVD. Singular values below
/// `PINV_RCOND · σ_max` are treated as zero.
pub fn pseudoinverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s_max = svd.singular_values.max();
    let cutoff = PINV_RCOND * s_max;
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += v_t.row(k).transpose() * u.column(k).transpose() * (1.0 / s);
        }
    }
    out
}

pub fn pinv_interaction(l: &InteractionMatrix) -> PseudoInverse {
    let d = DMatrix::from_iterator(K, 6, l.0.iter().copied());
    let p = pseudoinverse(&d);
    PseudoInverse(SMatrix::from_iterator(p.iter().copied()))
}

/// `L̂⁺` frozen at the convergence features of `scenario`.
pub fn constant_lhat_pinv(scenario: &Scenario) -> PseudoInverse {
    let l = interaction_matrix(&scenario.desired_features()).expect("desired depth is positive");
    pinv_interaction(&l)
}

/// Plain law `v = −λ·L̂⁺·e`.
pub fn vs_control(e: &VisualError, gain: ControlGain, lp: &PseudoInverse) -> Twist {
    Twist::from_vector(&(lp.apply(&e.0) * -gain.value()))
}

/// Feature rate caused by a translating target with the camera held still.
/// `target_velocity` is the target's linear velocity in the camera frame.
pub fn target_feature_rate(features: &FeatureVector, target_velocity: &Twist) -> Result<Vector8> {
    let v = &target_velocity.linear;
    let mut rate = Vector8::zeros();
    for i in 0..CORNERS {
        let (x, y, z) = features.point(i);
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth(z));
        }
        rate[2 * i] = (v.x - x * v.z) / z;
        rate[2 * i + 1] = (v.y - y * v.z) / z;
    }
    Ok(rate)
}

/// Tracking law with known feature drift: `v = −λ·L̂⁺·e − L̂⁺·∂e/∂t`.
pub fn tracking_control(
    e: &VisualError,
    gain: ControlGain,
    lp: &PseudoInverse,
    de_dt: &Vector8,
) -> Twist {
    let v = lp.apply(&e.0) * -gain.value() - lp.apply(de_dt);
    Twist::from_vector(&v)
}

/// Gate for the corrective term: 1 up to `t_cut`, then `exp(−(t − t_cut)/τ)`.
pub fn vanishing_gain(t: f64, t_cut: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!(
            "decay constant must be positive, got {tau}"
        )));
    }
    Ok(if t <= t_cut {
        1.0
    } else {
        (-(t - t_cut) / tau).exp()
    })
}

/// `v = −λ·L̂⁺·e + h·ρ`.
pub fn reshaped_control(
    e: &VisualError,
    gain: ControlGain,
    lp: &PseudoInverse,
    rho: &Twist,
    h: f64,
) -> Twist {
    let v = lp.apply(&e.0) * -gain.value() + rho.to_vector() * h;
    Twist::from_vector(&v)
}

/// Learned tracking law: `v = −λ·ε + ρ̂(ε)` with `ε = L̂⁺·e`.
/// Returns the twist and the regressed compensation.
pub fn ilvs_control(
    e: &VisualError,
    gain: ControlGain,
    lp: &PseudoInverse,
    model: &GmmModel,
) -> Result<(Twist, Twist)> {
    let eps = lp.apply(&e.0);
    let rho = model.gmr_predict(&eps)?;
    let v = eps * -gain.value() + rho;
    Ok((Twist::from_vector(&v), Twist::from_vector(&rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Pose;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn features_at(points: &[(f64, f64, f64); 4]) -> FeatureVector {
        let mut f = Scenario::default().desired_features();
        for (i, (x, y, z)) in points.iter().enumerate() {
            f.coords[2 * i] = *x;
            f.coords[2 * i + 1] = *y;
            f.depths[i] = *z;
        }
        f
    }

    #[test]
    fn centered_point_rows() {
        let z = 0.09116;
        let l = interaction_matrix(&features_at(&[(0.0, 0.0, z); 4]))
            .unwrap()
            .0;
        let iz = 1.0 / z;
        assert!((iz - 10.9697).abs() < 1e-4);
        let r1 = [-iz, 0.0, 0.0, 0.0, -1.0, 0.0];
        let r2 = [0.0, -iz, 0.0, 1.0, 0.0, 0.0];
        for c in 0..6 {
            assert_eq!(l[(0, c)], r1[c]);
            assert_eq!(l[(1, c)], r2[c]);
        }
    }

    #[test]
    fn structural_zeros_and_bad_depth() {
        let f = features_at(&[
            (0.3, -0.2, 0.5),
            (0.1, 0.4, 0.2),
            (-0.7, 0.1, 1.0),
            (0.0, -0.3, 0.3),
        ]);
        let l = interaction_matrix(&f).unwrap().0;
        for i in 0..4 {
            assert_eq!(l[(2 * i, 1)], 0.0);
            assert_eq!(l[(2 * i + 1, 0)], 0.0);
        }
        let bad = features_at(&[
            (0.0, 0.0, 0.0),
            (0.0, 0.0, 1.0),
            (0.0, 0.0, 1.0),
            (0.0, 0.0, 1.0),
        ]);
        assert!(matches!(
            interaction_matrix(&bad),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    fn penrose_residual(m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        let a = (m * p * m - m).abs().max();
        let b = (p * m * p - p).abs().max();
        let c = ((m * p).transpose() - m * p).abs().max();
        let d = ((p * m).transpose() - p * m).abs().max();
        a.max(b).max(c).max(d)
    }

    #[test]
    fn pinv_trivial_cases() {
        let id = DMatrix::<f64>::identity(6, 6);
        assert_relative_eq!(pseudoinverse(&id), id, epsilon = 1e-15);
        let z = DMatrix::<f64>::zeros(8, 6);
        assert_eq!(pseudoinverse(&z), DMatrix::<f64>::zeros(6, 8));
    }

    #[test]
    fn pinv_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = DMatrix::from_fn(8, 6, |_, _| rng.random_range(-1.0..1.0));
            let p = pseudoinverse(&m);
            let oracle = (m.transpose() * &m).try_inverse().unwrap() * m.transpose();
            assert!((&p - oracle).abs().max() < 1e-8);
            assert!((&p * &m - DMatrix::identity(6, 6)).abs().max() < 1e-8);
            assert!(penrose_residual(&m, &p) < 1e-8);
        }
    }

    #[test]
    fn pinv_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let m = a * b;
        let p = pseudoinverse(&m);
        assert!(penrose_residual(&m, &p) < 1e-8);
    }

    #[test]
    fn constant_pinv_inverts_convergence_matrix() {
        let s = Scenario::default();
        let lp = constant_lhat_pinv(&s);
        let l = interaction_matrix(&s.desired_features()).unwrap();
        assert!((lp.0 * l.0 - SMatrix::<f64, 6, 6>::identity()).abs().max() < 1e-6);
        assert_eq!(lp.0.shape(), (6, 8));

        let deep = s.with_config(|c| c.desired_depth_m *= 2.0).unwrap();
        let mut f = s.desired_features();
        f.depths = [2.0 * s.desired_depth; 4];
        let l2 = interaction_matrix(&f).unwrap();
        for r in 0..8 {
            for c in 0..3 {
                assert_relative_eq!(l2.0[(r, c)], l.0[(r, c)] / 2.0, epsilon = 1e-12);
            }
        }
        let _ = constant_lhat_pinv(&deep);
    }

    #[test]
    fn vs_law_properties() {
        let s = Scenario::default();
        let lp = constant_lhat_pinv(&s);
        let g = ControlGain::new(2.0).unwrap();
        assert_eq!(
            vs_control(&VisualError::zero(), g, &lp).to_vector(),
            Vector6::zeros()
        );
        let e = VisualError(Vector8::from_fn(|i, _| 0.01 * (i as f64 - 3.5)));
        let v = vs_control(&e, g, &lp).to_vector();
        assert_eq!(v, (lp.0 * e.0) * -2.0);
        let v2 = vs_control(&VisualError(e.0 * 2.0), g, &lp).to_vector();
        assert_relative_eq!(v2, v * 2.0, epsilon = 1e-15);
        assert!(ControlGain::new(0.0).is_err());
        assert!(ControlGain::new(-1.0).is_err());
    }

    #[test]
    fn feature_rate_values() {
        let z = 0.09116;
        let f = features_at(&[(0.0, 0.0, z); 4]);
        assert_eq!(
            target_feature_rate(&f, &Twist::zero()).unwrap(),
            Vector8::zeros()
        );
        let r = target_feature_rate(&f, &Twist::linear(Vector3::new(0.1, 0.0, 0.0))).unwrap();
        assert!((r[0] - 1.0970).abs() < 1e-4);
        assert_relative_eq!(r[0], 0.1 / z, epsilon = 1e-15);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn feature_rate_matches_finite_difference() {
        // camera frozen, target stepped along the belt
        let s = Scenario::default();
        let cam = s.camera_pose0.compose(&Pose::rot_y(0.1));
        let h = 1e-6;
        for &t in &[0.2, 0.7, 3.0] {
            let (target, twist) = s.step_target(t);
            let f = s.observe(&cam, &target).unwrap();
            let v_cam = Twist::linear(cam.rotation.transpose() * twist.linear);
            let rate = target_feature_rate(&f, &v_cam).unwrap();
            let (tp, _) = s.step_target(t + h);
            let (tm, _) = s.step_target(t - h);
            let fd = (s.observe(&cam, &tp).unwrap().coords - s.observe(&cam, &tm).unwrap().coords)
                / (2.0 * h);
            assert!(
                (rate - fd).abs().max() < 1e-6,
                "t={t}: {}",
                (rate - fd).abs().max()
            );
        }
    }

    #[test]
    fn tracking_law_reductions() {
        let s = Scenario::default();
        let lp = constant_lhat_pinv(&s);
        let g = ControlGain::new(2.0).unwrap();
        let e = VisualError(Vector8::from_fn(|i, _| 0.02 * (i as f64).sin()));
        assert_eq!(
            tracking_control(&e, g, &lp, &Vector8::zeros()).to_vector(),
            vs_control(&e, g, &lp).to_vector()
        );
        let c = Vector8::from_fn(|i, _| (i as f64) - 2.0);
        assert_eq!(
            tracking_control(&VisualError::zero(), g, &lp, &c).to_vector(),
            -(lp.0 * c)
        );
    }

    #[test]
    fn vanishing_gain_shape() {
        assert_eq!(vanishing_gain(0.0, 1.0, 0.5).unwrap(), 1.0);
        assert!(vanishing_gain(1e6, 1.0, 0.5).unwrap() < 1e-300);
        assert_relative_eq!(
            vanishing_gain(1.5, 1.0, 0.5).unwrap(),
            (-1f64).exp(),
            epsilon = 1e-15
        );
        assert!((vanishing_gain(1.5, 1.0, 0.5).unwrap() - 0.3679).abs() < 1e-4);
        assert!(vanishing_gain(0.0, 1.0, 0.0).is_err());
        let mut prev = 1.0;
        for i in 0..200 {
            let h = vanishing_gain(i as f64 * 0.05, 2.0, 1.3).unwrap();
            assert!(h <= prev && (0.0..=1.0).contains(&h));
            prev = h;
        }
    }

    #[test]
    fn reshaped_law_interpolates() {
        let s = Scenario::default();
        let lp = constant_lhat_pinv(&s);
        let g = ControlGain::new(2.0).unwrap();
        let e = VisualError(Vector8::from_fn(|i, _| 0.01 * (i as f64).cos()));
        let de = Vector8::from_fn(|i, _| 0.3 * (i as f64 - 4.0));
        let rho = Twist::from_vector(&-(lp.0 * de));
        let plain = vs_control(&e, g, &lp).to_vector();
        let track = tracking_control(&e, g, &lp, &de).to_vector();
        assert_eq!(reshaped_control(&e, g, &lp, &rho, 0.0).to_vector(), plain);
        assert_relative_eq!(
            reshaped_control(&e, g, &lp, &rho, 1.0).to_vector(),
            track,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            reshaped_control(&e, g, &lp, &rho, 0.5).to_vector(),
            (plain + track) * 0.5,
            epsilon = 1e-15
        );
    }
}
