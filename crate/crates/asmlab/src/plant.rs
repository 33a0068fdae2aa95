//! Simulated assembly plant.
//!
//! The peg is a rigid column with the [`CrossSection`] swept along its axis;
//! the hole is the same section offset outward along the boundary normal by
//! a uniform clearance. Contact is a quasi-static penalty law: each surface
//! element that interferes with the hole wall carries a pressure
//! proportional to the normal interference, plus an axial friction
//! component and an optional bounded-random tangential term.
//!
//! Frames: {A} sits on the hole axis at the midpoint of the inserted band,
//! z up (out of the hole), so inserting is motion along -z and the inserted
//! length grows by the negated z translation. {S} is the force sensor frame
//! and {R} the robot TCP frame; both are rigid with the peg and generally
//! misaligned with {A}.
//!
//! Sign convention: the wrench is the reaction the hole exerts on the peg.
//! Normal pressure acts along the inward boundary normal, friction along +z
//! (resisting insertion). Moments are lever-cross-force accumulations about
//! the {A} origin, which fixes the relative signs of the moment components.

use crate::geometry::{CrossSection, GeometryError, QuadratureNode};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Millimetres (geometry units) to metres (plant units).
pub const MM: f64 = 1e-3;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid plant parameter: {0}")]
    InvalidParameter(String),
    #[error("frame offset rotation is not orthonormal (residual {residual:.3e})")]
    BadRotation { residual: f64 },
    #[error("wrench expressed in {found:?}, expected {expected:?}")]
    WrongFrame { expected: Frame, found: Frame },
    #[error("jamming fault: penetration {penetration_mm:.3} mm exceeds the {cap_mm:.3} mm cap at theta={theta:.3}, s={s:.4} m")]
    Jammed {
        penetration_mm: f64,
        cap_mm: f64,
        theta: f64,
        s: f64,
    },
}

/// Reference frame tags for wrenches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Assembly frame on the hole axis at the inserted-band midpoint.
    Assembly,
    /// Force/moment sensor frame.
    Sensor,
    /// World frame at the hole mouth.
    World,
}

/// Relative peg-hole pose. Lateral biases are measured at the midpoint of
/// the inserted band; angles are roll-pitch-yaw of the peg in {A}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    /// Lateral bias along x (m).
    pub d_x: f64,
    /// Lateral bias along y (m).
    pub d_y: f64,
    /// Inserted length (m), in `[0, hole_depth]`.
    pub l: f64,
    /// Roll about x (rad).
    pub alpha: f64,
    /// Pitch about y (rad).
    pub beta: f64,
    /// Yaw about z (rad).
    pub gamma: f64,
}

impl PoseState {
    pub fn centered(l: f64) -> Self {
        PoseState {
            d_x: 0.0,
            d_y: 0.0,
            l,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    /// Peg body orientation in {A}: Rz(gamma) * Ry(beta) * Rx(alpha).
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.alpha, self.beta, self.gamma)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.d_x, self.d_y, self.l, self.alpha, self.beta, self.gamma]
    }
}

/// Force/moment pair tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub moment: Vec3,
    pub frame: Frame,
}

impl Wrench {
    pub fn zero(frame: Frame) -> Self {
        Wrench {
            force: Vec3::zeros(),
            moment: Vec3::zeros(),
            frame,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.moment.iter()).all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.moment.x,
            self.moment.y,
            self.moment.z,
        ]
    }
}

/// Cartesian pose of the robot TCP in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl RobotPose {
    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.theta_x, self.theta_y, self.theta_z]
    }

    /// Apply an incremental motion expressed in TCP axes that are rotated by
    /// `yaw` relative to the world frame, wrapping angles to (-pi, pi].
    pub fn integrate(&mut self, delta: &MotionIncrement, yaw: f64) {
        let rot = Rotation3::from_euler_angles(0.0, 0.0, yaw);
        let t = rot * delta.translation;
        let r = rot * delta.rotation;
        self.x += t.x;
        self.y += t.y;
        self.z += t.z;
        self.theta_x = wrap_angle(self.theta_x + r.x);
        self.theta_y = wrap_angle(self.theta_y + r.y);
        self.theta_z = wrap_angle(self.theta_z + r.z);
    }
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

/// Incremental rigid motion: translation (m) and small rotation (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionIncrement {
    pub translation: Vec3,
    pub rotation: Vec3,
}

impl MotionIncrement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        MotionIncrement {
            translation: Vec3::new(v[0], v[1], v[2]),
            rotation: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
        ]
    }
}

/// Rigid offset of one frame in another: the rotation matrix and translation
/// of {A} expressed in the carrier frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOffset {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl FrameOffset {
    /// Validates that `rotation` is a proper rotation (orthonormal,
    /// determinant +1, residual below 1e-10).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, PlantError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm()
            + (rotation.determinant() - 1.0).abs();
        if residual > 1e-10 {
            return Err(PlantError::BadRotation { residual });
        }
        Ok(FrameOffset {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        FrameOffset {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_rotation(rot: Rotation3<f64>, translation: Vec3) -> Self {
        FrameOffset {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }
}

/// Tangential-friction model for the torsional channel. The torsional
/// traction cannot be derived from the quasi-static pose, so it is either
/// ignored or drawn as a frozen random field bounded by a fraction of the
/// local normal pressure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TangentialFriction {
    Zero,
    BoundedRandom { seed: u64, scale: f64 },
}

/// Contact and geometry parameters of one assembly task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantParams {
    pub section: CrossSection,
    /// Radial gap hole - peg along the boundary normal (mm).
    pub clearance_mm: f64,
    /// Hole depth (m).
    pub hole_depth: f64,
    /// Contact stiffness: pressure per unit penetration (N/m^2 per m).
    pub contact_stiffness: f64,
    /// Kinetic friction coefficient.
    pub friction: f64,
    pub tangential: TangentialFriction,
    /// Penetration depth (m) beyond which the plant reports jamming.
    pub penetration_cap: f64,
}

impl PlantParams {
    pub fn new(
        section: CrossSection,
        clearance_mm: f64,
        hole_depth: f64,
        contact_stiffness: f64,
        friction: f64,
    ) -> Result<Self, PlantError> {
        if clearance_mm <= 0.0 {
            return Err(PlantError::InvalidParameter("clearance must be > 0".into()));
        }
        if hole_depth <= 0.0 {
            return Err(PlantError::InvalidParameter("hole depth must be > 0".into()));
        }
        if contact_stiffness <= 0.0 {
            return Err(PlantError::InvalidParameter(
                "contact stiffness must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&friction) {
            return Err(PlantError::InvalidParameter(
                "friction must be in [0, 1)".into(),
            ));
        }
        section.check_star_shaped(256)?;
        Ok(PlantParams {
            section,
            clearance_mm,
            hole_depth,
            contact_stiffness,
            friction,
            tangential: TangentialFriction::Zero,
            penetration_cap: 1e-3,
        })
    }

    pub fn with_tangential(mut self, tangential: TangentialFriction) -> Self {
        self.tangential = tangential;
        self
    }

    pub fn with_penetration_cap(mut self, cap: f64) -> Self {
        self.penetration_cap = cap;
        self
    }
}

/// Quadrature grid for the contact integrals: angular nodes around the
/// boundary and axial slices over the inserted band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactGrid {
    pub n_theta: usize,
    pub n_s: usize,
}

impl ContactGrid {
    pub const PRODUCTION: ContactGrid = ContactGrid { n_theta: 64, n_s: 16 };
}

/// Normal interference (m) of one peg boundary node at axial coordinate `s`
/// (m, measured from the inserted-band midpoint), for the peg posed at `p`.
///
/// The peg surface point is transformed into the hole frame and compared
/// against the hole wall (the peg boundary offset outward by the clearance)
/// along the wall's outward normal. Separation yields zero.
pub fn penetration(
    params: &PlantParams,
    p: &PoseState,
    node: &QuadratureNode,
    s: f64,
) -> Result<f64, PlantError> {
    let rot = p.rotation();
    Ok(penetration_at(params, p, &rot, node, s)?.max(0.0))
}

/// Signed interference before clamping; shared by `penetration` and the
/// wrench integrator (which needs the jamming check before clamping).
fn penetration_at(
    params: &PlantParams,
    p: &PoseState,
    rot: &Rotation3<f64>,
    node: &QuadratureNode,
    s: f64,
) -> Result<f64, PlantError> {
    let bp = &node.point;
    let body = Vec3::new(
        bp.radius * MM * bp.theta.cos(),
        bp.radius * MM * bp.theta.sin(),
        s,
    );
    let world = rot * body + Vec3::new(p.d_x, p.d_y, 0.0);
    let lateral = nalgebra::Vector2::new(world.x, world.y);
    let phi = lateral.y.atan2(lateral.x);
    let wall = params.section.boundary_sample(phi)?;
    let n = wall.normal();
    let wall_point = wall.position() * MM + n * (params.clearance_mm * MM);
    Ok((lateral - wall_point).dot(&n))
}

/// Contact wrench in {A} from the pose, by midpoint quadrature of the
/// pressure field over the inserted band (the force-pose mapping).
///
/// Per element at (theta, s): pressure `delta = E_c * penetration` along the
/// inward normal, axial friction `mu * delta` along +z, and, under the
/// bounded-random tangential model, a torsion-only traction in
/// `[-scale, scale] * delta`. Surface measure is `R(theta) dtheta ds`.
/// Moments are lever-cross-force sums about the {A} origin with body-frame
/// levers; the tangential term contributes to the torsional moment only.
pub fn contact_wrench(
    params: &PlantParams,
    p: &PoseState,
    grid: ContactGrid,
) -> Result<Wrench, PlantError> {
    if p.l <= 0.0 {
        return Ok(Wrench::zero(Frame::Assembly));
    }
    let nodes = params.section.discretize(grid.n_theta)?;
    let rot = p.rotation();
    let ds = p.l / grid.n_s as f64;
    let mut force = Vec3::zeros();
    let mut moment = Vec3::zeros();
    let mut tau_rng = match &params.tangential {
        TangentialFriction::Zero => None,
        TangentialFriction::BoundedRandom { seed, scale } => {
            Some((ChaCha12Rng::seed_from_u64(*seed), *scale))
        }
    };
    for node in &nodes {
        let bp = &node.point;
        let radius_m = bp.radius * MM;
        let (sin_chi, cos_chi) = bp.normal_angle.sin_cos();
        let lever_xy = (radius_m * bp.theta.cos(), radius_m * bp.theta.sin());
        for m in 0..grid.n_s {
            let s = -p.l / 2.0 + (m as f64 + 0.5) * ds;
            // Frozen tangential field: one draw per element, consumed in a
            // fixed order so the field is identical across poses.
            let tau_frac = tau_rng
                .as_mut()
                .map(|(rng, scale)| rng.gen_range(-*scale..=*scale))
                .unwrap_or(0.0);
            let pen = penetration_at(params, p, &rot, node, s)?;
            if pen <= 0.0 {
                continue;
            }
            if pen > params.penetration_cap {
                return Err(PlantError::Jammed {
                    penetration_mm: pen / MM,
                    cap_mm: params.penetration_cap / MM,
                    theta: bp.theta,
                    s,
                });
            }
            let pressure = params.contact_stiffness * pen;
            let d_area = radius_m * node.weight * ds;
            let f_mag = pressure * d_area;
            let elem_force = Vec3::new(
                -f_mag * cos_chi,
                -f_mag * sin_chi,
                params.friction * f_mag,
            );
            let lever = Vec3::new(lever_xy.0, lever_xy.1, s);
            force += elem_force;
            moment += lever.cross(&elem_force);
            if tau_frac != 0.0 {
                // Torsion-only tangential traction.
                moment.z += radius_m * (bp.normal_angle - bp.theta).cos() * tau_frac * f_mag;
            }
        }
    }
    Ok(Wrench {
        force,
        moment,
        frame: Frame::Assembly,
    })
}

/// Output coupling: express a wrench measured about the {A} origin in the
/// sensor frame {S}. `offset_sa` holds the rotation/translation of {A} in
/// {S}; the force rotates, the moment rotates and picks up the
/// translation-cross-force term.
pub fn wrench_to_sensor(w: &Wrench, offset_sa: &FrameOffset) -> Result<Wrench, PlantError> {
    if w.frame != Frame::Assembly {
        return Err(PlantError::WrongFrame {
            expected: Frame::Assembly,
            found: w.frame,
        });
    }
    let f = offset_sa.rotation() * w.force;
    let m = offset_sa.rotation() * w.moment + offset_sa.translation().cross(&f);
    Ok(Wrench {
        force: f,
        moment: m,
        frame: Frame::Sensor,
    })
}

/// Full output equation: contact wrench of pose `p` expressed in {S}.
pub fn output_equation(
    params: &PlantParams,
    p: &PoseState,
    grid: ContactGrid,
    offset_sa: &FrameOffset,
) -> Result<Wrench, PlantError> {
    wrench_to_sensor(&contact_wrench(params, p, grid)?, offset_sa)
}

/// State coupling: express a robot TCP motion increment in {A}. For a rigid
/// body, the {A}-origin translation is `R^T (v + w x t)` and the rotation
/// `R^T w`, with (R, t) the pose of {A} in {R}.
pub fn motion_to_assembly(delta_r: &MotionIncrement, offset_ra: &FrameOffset) -> MotionIncrement {
    let rt = offset_ra.rotation().transpose();
    let v = rt * (delta_r.translation + delta_r.rotation.cross(&offset_ra.translation()));
    let w = rt * delta_r.rotation;
    MotionIncrement {
        translation: v,
        rotation: w,
    }
}

/// Quasi-static state update: map the robot increment into {A} and compose
/// it with the pose. Insertion deepens by the negated z translation; the
/// midpoint of the inserted band migrates along the (tilted) peg axis, which
/// couples tilt into the lateral biases. Angle increments compose
/// additively, valid for the milliradian magnitudes the caps allow.
///
/// Returns the new pose and whether the inserted length was clamped to
/// `[0, hole_depth]`.
pub fn state_equation(
    p: &PoseState,
    delta_r: &MotionIncrement,
    offset_ra: &FrameOffset,
    hole_depth: f64,
) -> (PoseState, bool) {
    let dp = motion_to_assembly(delta_r, offset_ra);
    let l_raw = p.l - dp.translation.z;
    let l_new = l_raw.clamp(0.0, hole_depth);
    let clamped = (l_raw - l_new).abs() > 1e-15;
    let dl = l_new - p.l;
    let axis = p.rotation() * Vec3::z();
    let drift = dl / 2.0 / axis.z;
    let pose = PoseState {
        d_x: p.d_x + dp.translation.x - drift * axis.x,
        d_y: p.d_y + dp.translation.y - drift * axis.y,
        l: l_new,
        alpha: p.alpha + dp.rotation.x,
        beta: p.beta + dp.rotation.y,
        gamma: p.gamma + dp.rotation.z,
    };
    (pose, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cylinder_params() -> PlantParams {
        let section = CrossSection::circle("peg", 9.9).unwrap();
        PlantParams::new(section, 0.1, 0.03, 2e9, 0.2).unwrap()
    }

    fn square_params() -> PlantParams {
        let section = CrossSection::rectangle("sq", 15.0, 15.0).unwrap();
        PlantParams::new(section, 0.1, 0.03, 2e9, 0.2).unwrap()
    }

    fn first_node(params: &PlantParams, n: usize) -> QuadratureNode {
        params.section.discretize(n).unwrap()[0]
    }

    #[test]
    fn penetration_zero_when_centered() {
        let params = cylinder_params();
        let p = PoseState::centered(0.02);
        for node in params.section.discretize(64).unwrap() {
            let pen = penetration(&params, &p, &node, 0.0).unwrap();
            assert_eq!(pen, 0.0);
        }
    }

    #[test]
    fn penetration_matches_one_dimensional_geometry() {
        // Cylinder r = 9.9 mm in a 10 mm hole displaced 0.2 mm: interference
        // is displacement minus clearance at the contact side.
        let params = cylinder_params();
        let p = PoseState {
            d_x: 0.2 * MM,
            ..PoseState::centered(0.02)
        };
        // Node at theta ~ 0.
        let node = params
            .section
            .discretize(256)
            .unwrap()
            .into_iter()
            .min_by(|a, b| {
                (a.point.theta - 0.0)
                    .abs()
                    .partial_cmp(&(b.point.theta).abs())
                    .unwrap()
            })
            .unwrap();
        let pen = penetration(&params, &p, &node, 0.0).unwrap();
        // Exact circle-in-circle interference at the node angle.
        let (r, d, c) = (9.9, 0.2, 0.1);
        let exact =
            ((r * r + 2.0 * r * d * node.point.theta.cos() + d * d).sqrt() - (r + c)) * MM;
        assert_relative_eq!(pen, exact, max_relative = 1e-9);
        assert!((pen - (d - c) * MM).abs() < 1e-3 * MM, "~0.1 mm interference");
    }

    #[test]
    fn penetration_zero_for_small_tilt_with_large_clearance() {
        let section = CrossSection::circle("peg", 9.0).unwrap();
        let params = PlantParams::new(section, 1.0, 0.03, 2e9, 0.2).unwrap();
        let p = PoseState {
            alpha: 5e-3,
            ..PoseState::centered(0.02)
        };
        for node in params.section.discretize(64).unwrap() {
            for s in [-0.01, 0.0, 0.01] {
                assert_eq!(penetration(&params, &p, &node, s).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn centered_pose_gives_zero_wrench() {
        let params = cylinder_params();
        let w = contact_wrench(&params, &PoseState::centered(0.02), ContactGrid::PRODUCTION)
            .unwrap();
        for v in w.as_array() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn lateral_bias_respects_mirror_symmetry() {
        let params = cylinder_params();
        let p = PoseState {
            d_x: 0.15 * MM,
            ..PoseState::centered(0.02)
        };
        let w = contact_wrench(&params, &p, ContactGrid::PRODUCTION).unwrap();
        assert!(w.force.x < 0.0, "reaction opposes the bias");
        assert!(w.force.y.abs() < 1e-9 * w.force.x.abs());
        assert!(w.moment.x.abs() < 1e-9 * w.force.x.abs());
    }

    #[test]
    fn mirror_symmetry_flips_odd_components() {
        // Section symmetric about the x-axis: negating (d_y, alpha, gamma)
        // negates (F_y, M_x, M_z) and preserves (F_x, F_z, M_y).
        for params in [cylinder_params(), square_params()] {
            let base = PoseState {
                d_x: 0.12 * MM,
                d_y: 0.08 * MM,
                l: 0.018,
                alpha: 3e-3,
                beta: 1.5e-3,
                gamma: 1e-3,
            };
            let flipped = PoseState {
                d_y: -base.d_y,
                alpha: -base.alpha,
                gamma: -base.gamma,
                ..base
            };
            let wa = contact_wrench(&params, &base, ContactGrid::PRODUCTION).unwrap();
            let wb = contact_wrench(&params, &flipped, ContactGrid::PRODUCTION).unwrap();
            let scale = wa.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(scale > 0.0, "pose must be in contact");
            let a = wa.as_array();
            let b = wb.as_array();
            // even: F_x, F_z, M_y; odd: F_y, M_x, M_z
            for idx in [0, 2, 4] {
                assert!((a[idx] - b[idx]).abs() <= 1e-9 * scale, "component {idx}");
            }
            for idx in [1, 3, 5] {
                assert!((a[idx] + b[idx]).abs() <= 1e-9 * scale, "component {idx}");
            }
        }
    }

    #[test]
    fn moments_match_explicit_trig_accumulation() {
        // Independent oracle: accumulate the six integrals with the explicit
        // trigonometric lever formulas instead of vector cross products.
        let params = square_params();
        let p = PoseState {
            d_x: 0.13 * MM,
            d_y: -0.05 * MM,
            l: 0.02,
            alpha: 2e-3,
            beta: -1e-3,
            gamma: 0.5e-3,
        };
        let grid = ContactGrid { n_theta: 96, n_s: 24 };
        let got = contact_wrench(&params, &p, grid).unwrap();

        let nodes = params.section.discretize(grid.n_theta).unwrap();
        let rot = p.rotation();
        let ds = p.l / grid.n_s as f64;
        let (mut fx, mut fy, mut fz) = (0.0, 0.0, 0.0);
        let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
        for node in &nodes {
            let bp = node.point;
            let r_m = bp.radius * MM;
            for m in 0..grid.n_s {
                let s = -p.l / 2.0 + (m as f64 + 0.5) * ds;
                let pen = {
                    let body = Vec3::new(r_m * bp.theta.cos(), r_m * bp.theta.sin(), s);
                    let world = rot * body + Vec3::new(p.d_x, p.d_y, 0.0);
                    let lat = nalgebra::Vector2::new(world.x, world.y);
                    let wall = params.section.boundary_sample(lat.y.atan2(lat.x)).unwrap();
                    let n = wall.normal();
                    ((lat - (wall.position() * MM + n * params.clearance_mm * MM)).dot(&n))
                        .max(0.0)
                };
                if pen <= 0.0 {
                    continue;
                }
                let f = params.contact_stiffness * pen * r_m * node.weight * ds;
                let mu = params.friction;
                let (sin_chi, cos_chi) = bp.normal_angle.sin_cos();
                let (sin_th, cos_th) = bp.theta.sin_cos();
                fx += -f * cos_chi;
                fy += -f * sin_chi;
                fz += mu * f;
                mx += f * (s * sin_chi + mu * r_m * sin_th);
                my += -f * (s * cos_chi + mu * r_m * cos_th);
                mz += -f * r_m * (bp.normal_angle - bp.theta).sin();
            }
        }
        let got_arr = got.as_array();
        let want = [fx, fy, fz, mx, my, mz];
        let scale = want.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for i in 0..6 {
            assert!(
                (got_arr[i] - want[i]).abs() <= 1e-10 * scale,
                "component {i}: {} vs {}",
                got_arr[i],
                want[i]
            );
        }
    }

    #[test]
    fn wrench_is_continuous_in_pose() {
        let params = cylinder_params();
        let grid = ContactGrid::PRODUCTION;
        let mut prev: Option<[f64; 6]> = None;
        let mut max_jump = 0.0f64;
        let mut max_mag = 0.0f64;
        for k in 0..200 {
            let d = (0.05 + 0.15 * k as f64 / 199.0) * MM;
            let p = PoseState {
                d_x: d,
                ..PoseState::centered(0.02)
            };
            let w = contact_wrench(&params, &p, grid).unwrap().as_array();
            max_mag = max_mag.max(w.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            if let Some(prev) = prev {
                for i in 0..6 {
                    max_jump = max_jump.max((w[i] - prev[i]).abs());
                }
            }
            prev = Some(w);
        }
        // Steps of 0.75 um should not produce jumps beyond a small fraction
        // of the force scale.
        assert!(max_jump <= 0.05 * max_mag, "jump {max_jump} vs scale {max_mag}");
    }

    #[test]
    fn jamming_fault_on_deep_interference() {
        let params = cylinder_params().with_penetration_cap(0.2 * MM);
        let p = PoseState {
            d_x: 0.5 * MM,
            ..PoseState::centered(0.02)
        };
        let err = contact_wrench(&params, &p, ContactGrid::PRODUCTION);
        assert!(matches!(err, Err(PlantError::Jammed { .. })));
    }

    #[test]
    fn tangential_field_only_affects_torsion() {
        let params = cylinder_params();
        let noisy = params.clone().with_tangential(TangentialFriction::BoundedRandom {
            seed: 7,
            scale: 0.05,
        });
        let p = PoseState {
            d_x: 0.15 * MM,
            ..PoseState::centered(0.02)
        };
        let a = contact_wrench(&params, &p, ContactGrid::PRODUCTION).unwrap();
        let b = contact_wrench(&noisy, &p, ContactGrid::PRODUCTION).unwrap();
        assert_eq!(a.force, b.force);
        assert_eq!(a.moment.x, b.moment.x);
        assert_eq!(a.moment.y, b.moment.y);
        assert_ne!(a.moment.z, b.moment.z);
        // Deterministic: same seed, same field.
        let b2 = contact_wrench(&noisy, &p, ContactGrid::PRODUCTION).unwrap();
        assert_eq!(b.moment.z, b2.moment.z);
    }

    #[test]
    fn sensor_transform_identity_offset() {
        let w = Wrench {
            force: Vec3::new(1.0, -2.0, 3.0),
            moment: Vec3::new(0.5, 0.25, -1.0),
            frame: Frame::Assembly,
        };
        let out = wrench_to_sensor(&w, &FrameOffset::identity()).unwrap();
        assert_eq!(out.force, w.force);
        assert_eq!(out.moment, w.moment);
        assert_eq!(out.frame, Frame::Sensor);
    }

    #[test]
    fn sensor_transform_pure_translation_cross_product() {
        let t = Vec3::new(0.02, -0.01, 0.3);
        let f = Vec3::new(4.0, 1.0, -2.0);
        let w = Wrench {
            force: f,
            moment: Vec3::zeros(),
            frame: Frame::Assembly,
        };
        let off = FrameOffset::new(Matrix3::identity(), t).unwrap();
        let out = wrench_to_sensor(&w, &off).unwrap();
        assert_eq!(out.force, f);
        assert!((out.moment - t.cross(&f)).norm() < 1e-15);
    }

    #[test]
    fn sensor_transform_rejects_wrong_frame() {
        let w = Wrench::zero(Frame::Sensor);
        assert!(matches!(
            wrench_to_sensor(&w, &FrameOffset::identity()),
            Err(PlantError::WrongFrame { .. })
        ));
    }

    #[test]
    fn frame_offset_rejects_non_orthonormal() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            FrameOffset::new(bad, Vec3::zeros()),
            Err(PlantError::BadRotation { .. })
        ));
    }

    #[test]
    fn state_equation_zero_increment_is_identity() {
        let p = PoseState {
            d_x: 1e-4,
            d_y: -2e-4,
            l: 0.01,
            alpha: 1e-3,
            beta: -5e-4,
            gamma: 2e-4,
        };
        let (p2, clamped) = state_equation(
            &p,
            &MotionIncrement::zero(),
            &FrameOffset::identity(),
            0.03,
        );
        assert_eq!(p2, p);
        assert!(!clamped);
    }

    #[test]
    fn state_equation_pure_descent_inserts() {
        let p = PoseState::centered(0.005);
        let dz = 2e-4;
        let delta = MotionIncrement {
            translation: Vec3::new(0.0, 0.0, -dz),
            rotation: Vec3::zeros(),
        };
        let (p2, clamped) = state_equation(&p, &delta, &FrameOffset::identity(), 0.03);
        assert!(!clamped);
        assert_relative_eq!(p2.l, 0.005 + dz, max_relative = 1e-12);
        assert_eq!(p2.d_x, 0.0);
        assert_eq!(p2.d_y, 0.0);
    }

    #[test]
    fn state_equation_rotated_offset_rotates_lateral_increments() {
        // {A} rotated by phi about z in {R}: a TCP x-step appears as a
        // rotated lateral step in {A}.
        let phi = 0.7f64;
        let off = FrameOffset::from_rotation(
            Rotation3::from_euler_angles(0.0, 0.0, phi),
            Vec3::zeros(),
        );
        let delta = MotionIncrement {
            translation: Vec3::new(1e-4, 0.0, 0.0),
            rotation: Vec3::zeros(),
        };
        let (p2, _) = state_equation(&PoseState::centered(0.01), &delta, &off, 0.03);
        assert_relative_eq!(p2.d_x, 1e-4 * phi.cos(), max_relative = 1e-12);
        assert_relative_eq!(p2.d_y, -1e-4 * phi.sin(), max_relative = 1e-12);
    }

    #[test]
    fn state_equation_translation_additive_without_rotation() {
        let a = MotionIncrement {
            translation: Vec3::new(3e-5, -2e-5, -1e-4),
            rotation: Vec3::zeros(),
        };
        let b = MotionIncrement {
            translation: Vec3::new(-1e-5, 4e-5, -2e-4),
            rotation: Vec3::zeros(),
        };
        let combined = MotionIncrement {
            translation: a.translation + b.translation,
            rotation: Vec3::zeros(),
        };
        let start = PoseState::centered(0.01);
        let (p_ab, _) = state_equation(
            &state_equation(&start, &a, &FrameOffset::identity(), 0.03).0,
            &b,
            &FrameOffset::identity(),
            0.03,
        );
        let (p_c, _) = state_equation(&start, &combined, &FrameOffset::identity(), 0.03);
        for (u, v) in p_ab.as_array().iter().zip(p_c.as_array()) {
            assert_relative_eq!(*u, v, max_relative = 1e-12, epsilon = 1e-18);
        }
    }

    #[test]
    fn state_equation_clamps_depth() {
        let p = PoseState::centered(0.029);
        let delta = MotionIncrement {
            translation: Vec3::new(0.0, 0.0, -5e-3),
            rotation: Vec3::zeros(),
        };
        let (p2, clamped) = state_equation(&p, &delta, &FrameOffset::identity(), 0.03);
        assert!(clamped);
        assert_eq!(p2.l, 0.03);
    }

    #[test]
    fn grid_refinement_agrees_on_a_contact_pose() {
        let params = cylinder_params();
        let p = PoseState {
            d_x: 0.18 * MM,
            d_y: 0.05 * MM,
            l: 0.015,
            alpha: 1e-3,
            beta: 0.0,
            gamma: 0.0,
        };
        let coarse = contact_wrench(&params, &p, ContactGrid { n_theta: 64, n_s: 16 })
            .unwrap()
            .as_array();
        let fine = contact_wrench(&params, &p, ContactGrid { n_theta: 640, n_s: 160 })
            .unwrap()
            .as_array();
        let floor = 1e-6 * fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..6 {
            if fine[i].abs() > floor {
                assert!(
                    ((coarse[i] - fine[i]) / fine[i]).abs() < 0.01,
                    "component {i}: {} vs {}",
                    coarse[i],
                    fine[i]
                );
            }
        }
    }

    #[test]
    fn node_count_is_ignored_when_not_inserted() {
        let params = cylinder_params();
        let p = PoseState::centered(0.0);
        let w = contact_wrench(&params, &p, ContactGrid::PRODUCTION).unwrap();
        assert_eq!(w.as_array(), [0.0; 6]);
    }
}
