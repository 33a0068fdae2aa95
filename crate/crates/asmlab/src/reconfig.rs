//! Gain reconfiguration across geometries.
//!
//! The critically stable proportional gain of each compliance channel is
//! inversely proportional to the plant's contact stiffness on that channel,
//! so the product `stiffness_i * K_i` is a task-independent constant. The
//! stiffness factors into size terms and a dimensionless shape scale, which
//! lets a tuned gain set be carried to a new object from its geometry
//! alone: `R_hat * L * s_i * K_i = const` per channel.
//!
//! Shape scales are measured numerically: central finite differences of the
//! contact wrench at probe poses just inside the contact regime, averaged
//! over both probe signs (the stiffness of an asymmetric section differs by
//! displacement direction, so the expectation over paired probes is used).
//! Each channel is normalised by the size factors its stiffness actually
//! carries under the penalty-contact law -- lateral channels scale with
//! `E_c * R_hat * L`, the axial channel with `E_c * R_hat` at fixed probe
//! depth, and the tilt channels with `E_c * R_hat * L^3` -- which is what
//! makes the resulting scale a pure shape property, invariant to section
//! size and hole depth.

use crate::controller::ComplianceGains;
use crate::geometry::CrossSection;
use crate::plant::{contact_wrench, ContactGrid, PlantError, PlantParams, PoseState, MM};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReconfigError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("probe pose makes no contact for component {component:?}; probe magnitude must exceed the clearance")]
    NoContact { component: StateComponent },
    #[error("invalid probe parameter: {0}")]
    InvalidProbe(String),
}

/// Reconfigurable state components. The torsional channel is excluded: its
/// wrench response is dominated by tangential friction that the quasi-static
/// model cannot predict, so its gain is carried over unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateComponent {
    X,
    Y,
    Z,
    Alpha,
    Beta,
}

impl StateComponent {
    pub const ALL: [StateComponent; 5] = [
        StateComponent::X,
        StateComponent::Y,
        StateComponent::Z,
        StateComponent::Alpha,
        StateComponent::Beta,
    ];
}

/// Dimensionless per-channel stiffness factors determined by the section
/// shape alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeScales {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ShapeScales {
    pub const UNIT: ShapeScales = ShapeScales {
        x: 1.0,
        y: 1.0,
        z: 1.0,
        alpha: 1.0,
        beta: 1.0,
    };

    pub fn from_array(v: [f64; 5]) -> Self {
        ShapeScales {
            x: v[0],
            y: v[1],
            z: v[2],
            alpha: v[3],
            beta: v[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.alpha, self.beta]
    }

    /// Scales expressed relative to a reference section's scales, the form
    /// used in reconfiguration reports.
    pub fn relative_to(&self, reference: &ShapeScales) -> ShapeScales {
        let a = self.as_array();
        let r = reference.as_array();
        ShapeScales::from_array([a[0] / r[0], a[1] / r[1], a[2] / r[2], a[3] / r[3], a[4] / r[4]])
    }
}

/// Size-and-scale summary of one assembly task, sufficient for gain
/// reconfiguration without the section itself (for example from published
/// task tables).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledTask {
    /// Largest boundary-to-centroid distance (mm).
    pub r_hat_mm: f64,
    /// Hole depth (m).
    pub hole_depth: f64,
    pub scales: ShapeScales,
}

/// Geometry of one task: the section plus the derived size factors.
#[derive(Debug, Clone)]
pub struct TaskGeometry {
    pub section: CrossSection,
    /// Largest boundary-to-centroid distance (mm); always equals
    /// `section.max_radius()`.
    pub r_hat_mm: f64,
    /// Hole depth (m).
    pub hole_depth: f64,
}

impl TaskGeometry {
    pub fn from_section(section: CrossSection, hole_depth: f64) -> Self {
        let r_hat_mm = section.max_radius();
        TaskGeometry {
            section,
            r_hat_mm,
            hole_depth,
        }
    }

    pub fn scaled(&self, scales: ShapeScales) -> ScaledTask {
        ScaledTask {
            r_hat_mm: self.r_hat_mm,
            hole_depth: self.hole_depth,
            scales,
        }
    }
}

/// Probe layout for the numerical stiffness expectations.
///
/// The probe interference is expressed as a fraction of the task clearance
/// so that geometrically similar tasks are probed under similar contact
/// conditions; that is what makes the measured scales invariant to uniform
/// size changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessProbe {
    /// Target normal interference at the probe pose, as a fraction of the
    /// clearance.
    pub penetration_frac: f64,
    /// Central-difference step as a fraction of the probe penetration.
    pub fd_step_frac: f64,
    /// Center of the axial-stiffness difference as a fraction of full depth.
    pub depth_center_frac: f64,
    /// Half-width of the axial difference as a fraction of full depth.
    pub depth_step_frac: f64,
    /// Quadrature grid for the probe evaluations.
    pub grid: ContactGrid,
    /// Probe magnitudes (fractions of `penetration`); probes are taken at
    /// +/- each magnitude and averaged, which matters for asymmetric
    /// sections.
    pub magnitudes: Vec<f64>,
}

impl Default for StiffnessProbe {
    fn default() -> Self {
        StiffnessProbe {
            penetration_frac: 0.5,
            fd_step_frac: 0.1,
            depth_center_frac: 0.95,
            depth_step_frac: 0.04,
            grid: ContactGrid {
                n_theta: 256,
                n_s: 64,
            },
            magnitudes: vec![1.0],
        }
    }
}

impl StiffnessProbe {
    fn validate(&self) -> Result<(), ReconfigError> {
        if self.penetration_frac <= 0.0 {
            return Err(ReconfigError::InvalidProbe(
                "penetration_frac must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.fd_step_frac) || self.fd_step_frac == 0.0 {
            return Err(ReconfigError::InvalidProbe(
                "fd_step_frac must be in (0, 1)".into(),
            ));
        }
        if self.magnitudes.is_empty() || self.magnitudes.iter().any(|m| *m <= 0.0) {
            return Err(ReconfigError::InvalidProbe(
                "magnitudes must be positive".into(),
            ));
        }
        if self.depth_center_frac - self.depth_step_frac <= 0.0
            || self.depth_center_frac + self.depth_step_frac > 1.0
        {
            return Err(ReconfigError::InvalidProbe(
                "depth difference must stay inside (0, L]".into(),
            ));
        }
        Ok(())
    }
}

fn component_value(
    params: &PlantParams,
    p: &PoseState,
    grid: ContactGrid,
    c: StateComponent,
) -> Result<f64, ReconfigError> {
    let w = contact_wrench(params, p, grid)?;
    Ok(match c {
        StateComponent::X => w.force.x,
        StateComponent::Y => w.force.y,
        StateComponent::Z => w.force.z,
        StateComponent::Alpha => w.moment.x,
        StateComponent::Beta => w.moment.y,
    })
}

/// Expected diagonal contact stiffness of one channel at full insertion:
/// the magnitude of `dF_i/dp_i` at probe poses on both signs of the state
/// component, averaged.
///
/// Lateral probes sit at `clearance + penetration`; tilt probes at the
/// angle that produces the same interference at the band ends; the axial
/// stiffness differentiates the friction force against inserted length at
/// the lateral probe pose. Probes that produce no contact are rejected.
pub fn contact_stiffness(
    params: &PlantParams,
    component: StateComponent,
    probe: &StiffnessProbe,
) -> Result<f64, ReconfigError> {
    probe.validate()?;
    let depth = params.hole_depth;
    let clearance = params.clearance_mm * MM;
    let mut acc = 0.0;
    let mut count = 0;
    for mag in &probe.magnitudes {
        let pen = probe.penetration_frac * clearance * mag;
        let h = probe.fd_step_frac * pen;
        for sign in [1.0, -1.0] {
            let derivative = match component {
                StateComponent::X | StateComponent::Y => {
                    let q = sign * (clearance + pen);
                    let pose = |d: f64| match component {
                        StateComponent::X => PoseState {
                            d_x: d,
                            ..PoseState::centered(depth)
                        },
                        _ => PoseState {
                            d_y: d,
                            ..PoseState::centered(depth)
                        },
                    };
                    check_contact(params, &pose(q), probe.grid, component)?;
                    let f1 = component_value(params, &pose(q + sign * h), probe.grid, component)?;
                    let f0 = component_value(params, &pose(q - sign * h), probe.grid, component)?;
                    (f1 - f0) / (2.0 * sign * h)
                }
                StateComponent::Z => {
                    // Friction force against inserted length, at a laterally
                    // displaced contact pose. The force is linear in the
                    // inserted length, so the difference just inside full
                    // depth equals the derivative at full depth.
                    let q = sign * (clearance + pen);
                    let l0 = probe.depth_center_frac * depth;
                    let hl = probe.depth_step_frac * depth;
                    let pose = |l: f64| PoseState {
                        d_x: q,
                        ..PoseState::centered(l)
                    };
                    check_contact(params, &pose(l0), probe.grid, component)?;
                    let f1 = component_value(params, &pose(l0 + hl), probe.grid, component)?;
                    let f0 = component_value(params, &pose(l0 - hl), probe.grid, component)?;
                    (f1 - f0) / (2.0 * hl)
                }
                StateComponent::Alpha | StateComponent::Beta => {
                    // Tilt stiffness at the laterally displaced contact
                    // pose, differenced around zero tilt. The displacement
                    // runs along the channel's conjugate lateral direction
                    // (y for roll, x for pitch) so the tilt actually loads
                    // and unloads the contacted face.
                    let q = sign * (clearance + pen);
                    let ha = probe.fd_step_frac * pen / (depth / 2.0);
                    let pose = |a: f64| match component {
                        StateComponent::Alpha => PoseState {
                            d_y: q,
                            alpha: a,
                            ..PoseState::centered(depth)
                        },
                        _ => PoseState {
                            d_x: q,
                            beta: a,
                            ..PoseState::centered(depth)
                        },
                    };
                    check_contact(params, &pose(0.0), probe.grid, component)?;
                    let f1 = component_value(params, &pose(ha), probe.grid, component)?;
                    let f0 = component_value(params, &pose(-ha), probe.grid, component)?;
                    (f1 - f0) / (2.0 * ha)
                }
            };
            acc += derivative;
            count += 1;
        }
    }
    Ok((acc / count as f64).abs())
}

fn check_contact(
    params: &PlantParams,
    pose: &PoseState,
    grid: ContactGrid,
    component: StateComponent,
) -> Result<(), ReconfigError> {
    let w = contact_wrench(params, pose, grid)?;
    if w.force.norm() == 0.0 && w.moment.norm() == 0.0 {
        return Err(ReconfigError::NoContact { component });
    }
    Ok(())
}

/// Shape scales of the task's section: the five stiffness expectations with
/// their size factors divided out (see the module docs for the per-channel
/// normalisers).
pub fn shape_scales(
    params: &PlantParams,
    probe: &StiffnessProbe,
) -> Result<ShapeScales, ReconfigError> {
    let r_hat = params.section.max_radius() * MM;
    let depth = params.hole_depth;
    let e_c = params.contact_stiffness;
    let probe_pen = probe.penetration_frac * params.clearance_mm * MM;
    let lateral_norm = e_c * r_hat * depth;
    let axial_norm = e_c * r_hat * probe_pen;
    let tilt_norm = e_c * r_hat * depth.powi(3);
    Ok(ShapeScales {
        x: contact_stiffness(params, StateComponent::X, probe)? / lateral_norm,
        y: contact_stiffness(params, StateComponent::Y, probe)? / lateral_norm,
        z: contact_stiffness(params, StateComponent::Z, probe)? / axial_norm,
        alpha: contact_stiffness(params, StateComponent::Alpha, probe)? / tilt_norm,
        beta: contact_stiffness(params, StateComponent::Beta, probe)? / tilt_norm,
    })
}

/// Carry a tuned gain set from one task to another by the stiffness-product
/// rule: `K_tgt = K_src * (R_src * L_src * s_src) / (R_tgt * L_tgt * s_tgt)`
/// per channel. The torsional gain is copied unchanged.
pub fn reconfigure_scaled(
    k_src: &ComplianceGains,
    src: &ScaledTask,
    tgt: &ScaledTask,
) -> ComplianceGains {
    let ks = k_src.as_array();
    let ss = src.scales.as_array();
    let st = tgt.scales.as_array();
    let mut out = ks;
    for i in 0..5 {
        let num = src.r_hat_mm * src.hole_depth * ss[i];
        let den = tgt.r_hat_mm * tgt.hole_depth * st[i];
        out[i] = ks[i] * num / den;
    }
    ComplianceGains::new(out).expect("positive inputs stay positive")
}

/// [`reconfigure_scaled`] for tasks described by their geometry objects.
pub fn reconfigure_gains(
    k_src: &ComplianceGains,
    g_src: &TaskGeometry,
    s_src: &ShapeScales,
    g_tgt: &TaskGeometry,
    s_tgt: &ShapeScales,
) -> ComplianceGains {
    reconfigure_scaled(k_src, &g_src.scaled(*s_src), &g_tgt.scaled(*s_tgt))
}

/// Stability-margin targets for deriving a tuned gain set on a reference
/// task. With the one-cycle sensing latency of the control loop, the
/// compliance recursion `e_next = e - K_i * k_i * e_prev` loses stability at
/// a loop gain of one, so gains are set to `margin / k_i` with the
/// stiffness measured at full insertion (where the loop gain peaks) and the
/// default margin just inside the boundary: the largest gains that keep the
/// whole insertion stable.
/// The axial gain is referenced to the feed instead: axial force is
/// friction, not a restoring force, so its gain only limits how much of the
/// feed a given force may cancel. The torsional gain has no analytic
/// stiffness and is set directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainTuning {
    /// Loop-gain margin for the lateral channels (critical at 2).
    pub lateral_margin: f64,
    /// Loop-gain margin for the tilt channels.
    pub tilt_margin: f64,
    /// Fraction of the per-step feed the axial correction may cancel at the
    /// reference axial force.
    pub axial_feed_fraction: f64,
    /// Feed per step the axial gain is referenced to (m).
    pub feed_per_step: f64,
    /// Torsional gain, carried over unchanged between tasks (rad/(N*m)).
    pub k_gamma: f64,
}

impl Default for GainTuning {
    fn default() -> Self {
        GainTuning {
            lateral_margin: 0.9,
            tilt_margin: 0.9,
            axial_feed_fraction: 0.25,
            feed_per_step: 0.4e-3,
            k_gamma: 1e-3,
        }
    }
}

/// Derive a tuned gain set for a task from its measured contact
/// stiffnesses.
pub fn tuned_gains(
    params: &PlantParams,
    probe: &StiffnessProbe,
    tuning: &GainTuning,
) -> Result<ComplianceGains, ReconfigError> {
    let k_x = contact_stiffness(params, StateComponent::X, probe)?;
    let k_y = contact_stiffness(params, StateComponent::Y, probe)?;
    let k_a = contact_stiffness(params, StateComponent::Alpha, probe)?;
    let k_b = contact_stiffness(params, StateComponent::Beta, probe)?;
    // Reference axial force: friction at the lateral probe pose, fully
    // inserted.
    let clearance = params.clearance_mm * MM;
    let q = clearance + probe.penetration_frac * clearance;
    let probe_pose = PoseState {
        d_x: q,
        ..PoseState::centered(params.hole_depth)
    };
    let f_z_ref = contact_wrench(params, &probe_pose, probe.grid)?.force.z;
    let k_z = tuning.axial_feed_fraction * tuning.feed_per_step / f_z_ref.max(1e-9);
    ComplianceGains::new([
        tuning.lateral_margin / k_x,
        tuning.lateral_margin / k_y,
        k_z,
        tuning.tilt_margin / k_a,
        tuning.tilt_margin / k_b,
        tuning.k_gamma,
    ])
    .map_err(|_| ReconfigError::InvalidProbe("derived gains must be positive".into()))
}
