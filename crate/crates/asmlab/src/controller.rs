//! Model-based controller modules: exact inverses of the plant's frame
//! couplings, the proportional compliance law, its gain-revised adaptive
//! variant, and insertion-depth estimation.
//!
//! The decoupling transforms are the algebraic inverses of the plant's
//! output/state couplings, so `decouple(couple(x)) == x` up to rounding for
//! any valid frame offset. That identity is the premise under which the
//! per-component compliance law is tuned and reconfigured.

use crate::plant::{Frame, FrameOffset, MotionIncrement, PlantError, Wrench};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    #[error("compliance gains must all be positive")]
    NonPositiveGains,
    #[error("revision factor {value} outside [-1, 1] at component {index}")]
    RevisionOutOfBounds { index: usize, value: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Per-component compliance gains: metres per newton for the translational
/// channels and radians per newton-metre for the rotational ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceGains {
    pub k_x: f64,
    pub k_y: f64,
    pub k_z: f64,
    pub k_alpha: f64,
    pub k_beta: f64,
    pub k_gamma: f64,
}

impl ComplianceGains {
    pub fn new(k: [f64; 6]) -> Result<Self, ControllerError> {
        if k.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(ControllerError::NonPositiveGains);
        }
        Ok(ComplianceGains {
            k_x: k[0],
            k_y: k[1],
            k_z: k[2],
            k_alpha: k[3],
            k_beta: k[4],
            k_gamma: k[5],
        })
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.k_x,
            self.k_y,
            self.k_z,
            self.k_alpha,
            self.k_beta,
            self.k_gamma,
        ]
    }

    /// Gains revised by bounded factors: `(1 + a_i) * K_i` componentwise.
    pub fn revised(&self, a: &RevisionFactors) -> [f64; 6] {
        let k = self.as_array();
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = k[i] * (1.0 + a.0[i]);
        }
        out
    }
}

/// Reference wrench for the compliance law. Only the axial force slot can be
/// nonzero; with clearance-fit assembly it usually stays zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceWrench {
    pub f_z: f64,
}

impl ReferenceWrench {
    pub fn as_array(&self) -> [f64; 6] {
        [0.0, 0.0, self.f_z, 0.0, 0.0, 0.0]
    }
}

/// Bounded multiplicative gain revisions, one per state component, each in
/// [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisionFactors(pub [f64; 6]);

impl RevisionFactors {
    pub const ZERO: RevisionFactors = RevisionFactors([0.0; 6]);

    /// Validating constructor: rejects components outside the bounds.
    pub fn new(a: [f64; 6]) -> Result<Self, ControllerError> {
        for (i, v) in a.iter().enumerate() {
            if !(-1.0..=1.0).contains(v) {
                return Err(ControllerError::RevisionOutOfBounds {
                    index: i,
                    value: *v,
                });
            }
        }
        Ok(RevisionFactors(a))
    }

    /// Clamp raw values into the bounds; applied at the environment boundary
    /// regardless of what produced the action.
    pub fn clamped(a: [f64; 6]) -> Self {
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = a[i].clamp(-1.0, 1.0);
        }
        RevisionFactors(out)
    }
}

/// Output decoupling: recover the {A}-frame wrench from the sensor reading.
/// Exact inverse of the plant's sensor coupling.
pub fn decouple_output(w: &Wrench, offset_sa: &FrameOffset) -> Result<Wrench, ControllerError> {
    if w.frame != Frame::Sensor {
        return Err(PlantError::WrongFrame {
            expected: Frame::Sensor,
            found: w.frame,
        }
        .into());
    }
    let rt = offset_sa.rotation().transpose();
    let f = rt * w.force;
    let m = rt * (w.moment - offset_sa.translation().cross(&w.force));
    Ok(Wrench {
        force: f,
        moment: m,
        frame: Frame::Assembly,
    })
}

/// Per-step motion caps (safety): componentwise bounds on the commanded
/// increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCaps {
    /// Translation cap per component (m).
    pub translation: f64,
    /// Rotation cap per component (rad).
    pub rotation: f64,
}

impl Default for MotionCaps {
    fn default() -> Self {
        MotionCaps {
            translation: 0.5e-3,
            rotation: 0.5e-3,
        }
    }
}

/// State decoupling: turn a desired {A}-frame pose correction into a robot
/// TCP increment. Exact inverse of the plant's state coupling, then clipped
/// to the per-step caps; the flag reports whether clipping occurred.
pub fn decouple_state(
    dp: &MotionIncrement,
    offset_ra: &FrameOffset,
    caps: &MotionCaps,
) -> (MotionIncrement, bool) {
    let r = offset_ra.rotation();
    let w = r * dp.rotation;
    let v = r * dp.translation - w.cross(&offset_ra.translation());
    let mut out = MotionIncrement {
        translation: v,
        rotation: w,
    };
    let mut clipped = false;
    for i in 0..3 {
        let t = out.translation[i].clamp(-caps.translation, caps.translation);
        if t != out.translation[i] {
            clipped = true;
            out.translation[i] = t;
        }
        let rr = out.rotation[i].clamp(-caps.rotation, caps.rotation);
        if rr != out.rotation[i] {
            clipped = true;
            out.rotation[i] = rr;
        }
    }
    (out, clipped)
}

/// Proportional compliance law: pose correction `diag(K) * (F_dec - F_ref)`
/// in {A}. Couplings between wrench components are deliberately left to the
/// learning agent.
pub fn compliance_correction(
    f_dec: &Wrench,
    f_ref: &ReferenceWrench,
    gains: &ComplianceGains,
) -> MotionIncrement {
    correction_with_gains(f_dec, f_ref, &gains.as_array())
}

/// Adaptive compliance law: the constant law with gains revised by the
/// agent's bounded factors, `(a o K + K)` componentwise. At `a = 0` it
/// coincides with the constant law exactly.
pub fn adaptive_compliance_correction(
    f_dec: &Wrench,
    f_ref: &ReferenceWrench,
    gains: &ComplianceGains,
    a: &RevisionFactors,
) -> MotionIncrement {
    correction_with_gains(f_dec, f_ref, &gains.revised(a))
}

fn correction_with_gains(f_dec: &Wrench, f_ref: &ReferenceWrench, k: &[f64; 6]) -> MotionIncrement {
    let err_f = f_dec.force - Vec3::new(0.0, 0.0, f_ref.f_z);
    let err_m = f_dec.moment;
    MotionIncrement {
        translation: Vec3::new(k[0] * err_f.x, k[1] * err_f.y, k[2] * err_f.z),
        rotation: Vec3::new(k[3] * err_m.x, k[4] * err_m.y, k[5] * err_m.z),
    }
}

/// Insertion-depth estimator. Records the vertical TCP position at first
/// contact and reads depth as descent below it; before contact (or after
/// retraction above the contact height) the estimate is zero. The estimate
/// drives the frame-offset updates as the assembly frame migrates with
/// insertion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DepthEstimator {
    contact_z: Option<f64>,
}

impl DepthEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one controller cycle: the current TCP height and whether the
    /// sensor indicates contact.
    pub fn observe(&mut self, z: f64, in_contact: bool) {
        if self.contact_z.is_none() && in_contact {
            self.contact_z = Some(z);
        }
    }

    /// Estimated inserted length (m) at TCP height `z`.
    pub fn estimate(&self, z: f64) -> f64 {
        match self.contact_z {
            Some(z0) => (z0 - z).max(0.0),
            None => 0.0,
        }
    }

    pub fn contact_seen(&self) -> bool {
        self.contact_z.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{wrench_to_sensor, FrameOffset, MotionIncrement, Wrench};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Rotation3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_offset(rng: &mut ChaCha12Rng) -> FrameOffset {
        let axis = nalgebra::Unit::new_normalize(Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let t = Vec3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        FrameOffset::from_rotation(Rotation3::from_axis_angle(&axis, angle), t)
    }

    fn random_wrench(rng: &mut ChaCha12Rng, frame: Frame) -> Wrench {
        Wrench {
            force: Vec3::new(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
            ),
            moment: Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ),
            frame,
        }
    }

    #[test]
    fn decouple_output_identity_offset() {
        let w = Wrench {
            force: Vec3::new(1.0, 2.0, 3.0),
            moment: Vec3::new(-0.1, 0.2, 0.3),
            frame: Frame::Sensor,
        };
        let out = decouple_output(&w, &FrameOffset::identity()).unwrap();
        assert_eq!(out.force, w.force);
        assert_eq!(out.moment, w.moment);
        assert_eq!(out.frame, Frame::Assembly);
    }

    #[test]
    fn decouple_output_inverts_sensor_coupling() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let off = random_offset(&mut rng);
            let w = random_wrench(&mut rng, Frame::Assembly);
            let sensed = wrench_to_sensor(&w, &off).unwrap();
            let back = decouple_output(&sensed, &off).unwrap();
            let err = (back.force - w.force).norm() + (back.moment - w.moment).norm();
            assert!(err <= 1e-10, "round-trip residual {err}");
        }
    }

    #[test]
    fn decouple_output_translation_only_corrects_moment() {
        let t = Vec3::new(0.1, -0.2, 0.05);
        let off = FrameOffset::new(Matrix3::identity(), t).unwrap();
        let w = Wrench {
            force: Vec3::new(2.0, 0.5, -1.0),
            moment: Vec3::new(0.3, 0.1, 0.0),
            frame: Frame::Sensor,
        };
        let out = decouple_output(&w, &off).unwrap();
        assert_eq!(out.force, w.force);
        assert!((out.moment - (w.moment - t.cross(&w.force))).norm() < 1e-15);
    }

    #[test]
    fn decouple_state_identity_offset_passthrough() {
        let dp = MotionIncrement::from_array([1e-4, -2e-4, 3e-4, 1e-4, -2e-4, 3e-4]);
        let (dr, clipped) = decouple_state(&dp, &FrameOffset::identity(), &MotionCaps::default());
        assert_eq!(dr, dp);
        assert!(!clipped);
    }

    #[test]
    fn decouple_state_inverts_state_coupling() {
        use crate::plant::motion_to_assembly;
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let caps = MotionCaps {
            translation: 1.0,
            rotation: 1.0,
        }; // wide caps so the identity is exact
        for _ in 0..1000 {
            let off = random_offset(&mut rng);
            let dp = MotionIncrement {
                translation: Vec3::new(
                    rng.gen_range(-1e-3..1e-3),
                    rng.gen_range(-1e-3..1e-3),
                    rng.gen_range(-1e-3..1e-3),
                ),
                rotation: Vec3::new(
                    rng.gen_range(-1e-3..1e-3),
                    rng.gen_range(-1e-3..1e-3),
                    rng.gen_range(-1e-3..1e-3),
                ),
            };
            let (dr, _) = decouple_state(&dp, &off, &caps);
            let back = motion_to_assembly(&dr, &off);
            let err = (back.translation - dp.translation).norm()
                + (back.rotation - dp.rotation).norm();
            assert!(err <= 1e-10, "round-trip residual {err}");
        }
    }

    #[test]
    fn decouple_state_quarter_turn_swaps_axes() {
        // {A} yawed by pi/2 in {R}: an x-correction in {A} must be commanded
        // as a y-motion of the TCP.
        let off = FrameOffset::from_rotation(
            Rotation3::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            Vec3::zeros(),
        );
        let dp = MotionIncrement::from_array([2e-4, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (dr, _) = decouple_state(&dp, &off, &MotionCaps::default());
        assert!(dr.translation.x.abs() < 1e-18);
        assert_relative_eq!(dr.translation.y, 2e-4, max_relative = 1e-12);
    }

    #[test]
    fn decouple_state_clips_to_caps() {
        let dp = MotionIncrement::from_array([5e-3, 0.0, 0.0, 0.0, 0.0, 2e-3]);
        let caps = MotionCaps::default();
        let (dr, clipped) = decouple_state(&dp, &FrameOffset::identity(), &caps);
        assert!(clipped);
        assert_eq!(dr.translation.x, caps.translation);
        assert_eq!(dr.rotation.z, caps.rotation);
    }

    #[test]
    fn compliance_law_zero_error_zero_correction() {
        let gains = ComplianceGains::new([1e-5; 6]).unwrap();
        let f_ref = ReferenceWrench { f_z: 2.0 };
        let f_dec = Wrench {
            force: Vec3::new(0.0, 0.0, 2.0),
            moment: Vec3::zeros(),
            frame: Frame::Assembly,
        };
        let dp = compliance_correction(&f_dec, &f_ref, &gains);
        assert_eq!(dp, MotionIncrement::zero());
    }

    #[test]
    fn compliance_law_reference_table_gain() {
        // Tuned lateral gain of the 15 mm cuboid task: 3.39e-5 m/N.
        let gains =
            ComplianceGains::new([3.39e-5, 3.39e-5, 2.16e-7, 3.33e-2, 3.33e-2, 5.55e-2]).unwrap();
        let f_dec = Wrench {
            force: Vec3::new(1.0, 0.0, 0.0),
            moment: Vec3::zeros(),
            frame: Frame::Assembly,
        };
        let dp = compliance_correction(&f_dec, &ReferenceWrench::default(), &gains);
        assert_relative_eq!(dp.translation.x, 3.39e-5, max_relative = 1e-12);
    }

    #[test]
    fn compliance_law_linear_in_gains() {
        let gains = ComplianceGains::new([1e-5, 2e-5, 3e-7, 1e-2, 2e-2, 3e-2]).unwrap();
        let double = ComplianceGains::new([2e-5, 4e-5, 6e-7, 2e-2, 4e-2, 6e-2]).unwrap();
        let f_dec = Wrench {
            force: Vec3::new(3.0, -1.0, 0.5),
            moment: Vec3::new(0.2, 0.1, -0.3),
            frame: Frame::Assembly,
        };
        let a = compliance_correction(&f_dec, &ReferenceWrench::default(), &gains);
        let b = compliance_correction(&f_dec, &ReferenceWrench::default(), &double);
        for i in 0..6 {
            assert_relative_eq!(b.as_array()[i], 2.0 * a.as_array()[i], max_relative = 1e-15);
        }
    }

    #[test]
    fn adaptive_law_reductions() {
        let gains = ComplianceGains::new([1e-5, 2e-5, 3e-7, 1e-2, 2e-2, 3e-2]).unwrap();
        let f_dec = Wrench {
            force: Vec3::new(3.0, -1.0, 0.5),
            moment: Vec3::new(0.2, 0.1, -0.3),
            frame: Frame::Assembly,
        };
        let f_ref = ReferenceWrench::default();
        // a = 0: bit-identical to the constant law.
        let base = compliance_correction(&f_dec, &f_ref, &gains);
        let zero = adaptive_compliance_correction(&f_dec, &f_ref, &gains, &RevisionFactors::ZERO);
        assert_eq!(base, zero);
        // a = +1: doubled gains.
        let plus =
            adaptive_compliance_correction(&f_dec, &f_ref, &gains, &RevisionFactors([1.0; 6]));
        for i in 0..6 {
            assert_relative_eq!(
                plus.as_array()[i],
                2.0 * base.as_array()[i],
                max_relative = 1e-15
            );
        }
        // a = -1: zero correction.
        let minus =
            adaptive_compliance_correction(&f_dec, &f_ref, &gains, &RevisionFactors([-1.0; 6]));
        assert_eq!(minus, MotionIncrement::zero());
    }

    #[test]
    fn adaptive_law_piecewise_linear_in_a() {
        let gains = ComplianceGains::new([1e-5; 6]).unwrap();
        let f_dec = Wrench {
            force: Vec3::new(1.0, 1.0, 1.0),
            moment: Vec3::new(1.0, 1.0, 1.0),
            frame: Frame::Assembly,
        };
        let f_ref = ReferenceWrench::default();
        let at = |a: f64| {
            adaptive_compliance_correction(&f_dec, &f_ref, &gains, &RevisionFactors([a; 6]))
                .translation
                .x
        };
        let (a0, a1, amid) = (at(-0.6), at(0.8), at(0.1));
        assert_relative_eq!(amid, a0 + (a1 - a0) * 0.5, max_relative = 1e-12);
    }

    #[test]
    fn revision_factors_validate_and_clamp() {
        assert!(RevisionFactors::new([0.0, 1.0, -1.0, 0.5, -0.5, 0.0]).is_ok());
        assert!(matches!(
            RevisionFactors::new([1.2, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(ControllerError::RevisionOutOfBounds { index: 0, .. })
        ));
        let c = RevisionFactors::clamped([5.0, -5.0, 0.25, 0.0, 0.0, 0.0]);
        assert_eq!(c.0[0], 1.0);
        assert_eq!(c.0[1], -1.0);
        assert_eq!(c.0[2], 0.25);
    }

    #[test]
    fn gains_reject_non_positive() {
        assert!(ComplianceGains::new([1e-5, 1e-5, 0.0, 1e-2, 1e-2, 1e-2]).is_err());
        assert!(ComplianceGains::new([1e-5, -1e-5, 1e-7, 1e-2, 1e-2, 1e-2]).is_err());
    }

    #[test]
    fn depth_estimator_behaviour() {
        let mut est = DepthEstimator::new();
        assert_eq!(est.estimate(0.5), 0.0);
        est.observe(0.5, false);
        assert!(!est.contact_seen());
        est.observe(0.45, true);
        assert_eq!(est.estimate(0.45), 0.0);
        // Descent of 10 mm after contact.
        assert_relative_eq!(est.estimate(0.44), 0.010, max_relative = 1e-12);
        // Retraction above the contact height clamps to zero.
        assert_eq!(est.estimate(0.46), 0.0);
        // First contact height is latched.
        est.observe(0.40, true);
        assert_relative_eq!(est.estimate(0.44), 0.010, max_relative = 1e-12);
    }
}
