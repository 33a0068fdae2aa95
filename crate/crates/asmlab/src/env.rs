//! MDP wrapper over the plant and controller: episode semantics, the
//! observed state (robot pose + sensed wrench, never the true relative
//! pose), the reward, termination, and safety handling.
//!
//! One `step` runs a full control cycle: the agent's gain revisions enter
//! the adaptive compliance law, the correction plus a constant insertion
//! feed is decoupled into a TCP increment, the plant updates the true pose
//! and returns the sensed wrench through the sensor coupling. The
//! controller side works with frame offsets rebuilt from the *estimated*
//! depth while the plant uses the true depth, so model/plant mismatch is
//! part of the environment.

use crate::controller::{
    adaptive_compliance_correction, decouple_output, decouple_state, ComplianceGains,
    DepthEstimator, MotionCaps, ReferenceWrench, RevisionFactors,
};
use crate::plant::{
    contact_wrench, state_equation, wrench_to_sensor, ContactGrid, Frame, FrameOffset,
    PlantError, PlantParams, PoseState, RobotPose, Vec3, Wrench,
};
use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const STATE_DIM: usize = 12;
pub const ACTION_DIM: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] crate::controller::ControllerError),
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("could not sample a start inside the capture region after {attempts} attempts")]
    CaptureRegion { attempts: usize },
    #[error("step called on a finished episode")]
    EpisodeOver,
}

/// Reward weights: insertion progress, contact force norm, contact moment
/// norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCoeffs {
    /// Weight on the remaining insertion distance (1/m).
    pub h_z: f64,
    /// Weight on the force norm (1/N).
    pub h_f: f64,
    /// Weight on the moment norm (1/(N*m)).
    pub h_m: f64,
}

impl Default for RewardCoeffs {
    fn default() -> Self {
        RewardCoeffs {
            h_z: 100.0,
            h_f: 0.1,
            h_m: 1.0,
        }
    }
}

impl RewardCoeffs {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.h_z < 0.0 || self.h_f < 0.0 || self.h_m < 0.0 {
            return Err(EnvError::InvalidConfig("reward weights must be >= 0".into()));
        }
        if self.h_z == 0.0 && self.h_f == 0.0 && self.h_m == 0.0 {
            return Err(EnvError::InvalidConfig(
                "at least one reward weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Step reward: negated weighted sum of remaining insertion distance and the
/// sensed force/moment norms. Deeper insertion and lighter contact are both
/// rewarded.
pub fn reward_from(remaining: f64, force: &Vec3, moment: &Vec3, coeffs: &RewardCoeffs) -> f64 {
    -coeffs.h_z * remaining - coeffs.h_f * force.norm() - coeffs.h_m * moment.norm()
}

/// Episode layout: start distribution, length, feed, safety bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Uniform half-range of the initial lateral bias (m) per axis.
    pub lateral_error: f64,
    /// Uniform half-range of the initial tilt (rad) per axis.
    pub angular_error: f64,
    /// Starts with lateral radius beyond this are resampled (m).
    pub capture_radius: f64,
    /// Constant downward feed commanded each step (m), on top of the
    /// compliance correction.
    pub feed_per_step: f64,
    /// Safety limit on the sensed force norm (N).
    pub force_limit: f64,
    /// Safety limit on the sensed moment norm (N*m).
    pub moment_limit: f64,
    /// Extra negative reward applied on a jam or safety stop.
    pub fault_penalty: f64,
    /// Gaussian noise applied to each sensed force component (N); zero
    /// disables it.
    pub wrench_noise_force: f64,
    /// Gaussian noise applied to each sensed moment component (N*m).
    pub wrench_noise_moment: f64,
    /// Force norm above which the depth estimator latches first contact (N).
    pub contact_threshold: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 120,
            lateral_error: 0.3e-3,
            angular_error: 3e-3,
            capture_radius: 0.6e-3,
            feed_per_step: 0.4e-3,
            force_limit: 80.0,
            moment_limit: 8.0,
            fault_penalty: 50.0,
            wrench_noise_force: 0.0,
            wrench_noise_moment: 0.0,
            contact_threshold: 0.2,
        }
    }
}

/// Fixed rig geometry: where the sensor and TCP frames sit relative to the
/// hole, all rigid with the peg. Yaw misalignments and lateral offsets are
/// constant; the vertical offsets follow the insertion depth because the
/// assembly frame rides the inserted-band midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    /// Height of the sensor origin above the hole mouth before insertion (m).
    pub sensor_height: f64,
    /// Height of the TCP above the hole mouth before insertion (m).
    pub tcp_height: f64,
    /// Yaw of the sensor frame relative to the hole frame (rad).
    pub sensor_yaw: f64,
    /// Yaw of the TCP frame relative to the hole frame (rad).
    pub tcp_yaw: f64,
    /// Lateral offset of the sensor origin from the peg axis (m).
    pub sensor_offset: [f64; 2],
    /// Lateral offset of the TCP from the peg axis (m).
    pub tcp_offset: [f64; 2],
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            sensor_height: 0.08,
            tcp_height: 0.12,
            sensor_yaw: 0.0,
            tcp_yaw: 0.0,
            sensor_offset: [0.0, 0.0],
            tcp_offset: [0.0, 0.0],
        }
    }
}

impl RigConfig {
    /// Offset of the assembly frame in the sensor frame at inserted depth
    /// `l`: the assembly origin sits at `-l/2`, the sensor has descended by
    /// `l` from its initial height.
    pub fn offset_sa(&self, l: f64) -> FrameOffset {
        let rot = Rotation3::from_euler_angles(0.0, 0.0, -self.sensor_yaw);
        let rel = Vec3::new(
            -self.sensor_offset[0],
            -self.sensor_offset[1],
            l / 2.0 - self.sensor_height,
        );
        FrameOffset::from_rotation(rot, rot * rel)
    }

    /// Offset of the assembly frame in the TCP frame at inserted depth `l`.
    pub fn offset_ra(&self, l: f64) -> FrameOffset {
        let rot = Rotation3::from_euler_angles(0.0, 0.0, -self.tcp_yaw);
        let rel = Vec3::new(
            -self.tcp_offset[0],
            -self.tcp_offset[1],
            l / 2.0 - self.tcp_height,
        );
        FrameOffset::from_rotation(rot, rot * rel)
    }
}

/// Componentwise scaling that brings the observed state to order one.
/// Recorded in checkpoints so trained policies carry their normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateScaling {
    pub position: f64,
    pub angle: f64,
    pub force: f64,
    pub moment: f64,
}

impl Default for StateScaling {
    fn default() -> Self {
        StateScaling {
            position: 100.0,
            angle: 100.0,
            force: 0.1,
            moment: 1.0,
        }
    }
}

/// Observed MDP state: normalized robot pose (6) and sensed wrench (6). The
/// true relative pose never enters it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpState(pub [f64; STATE_DIM]);

impl MdpState {
    pub fn from_observation(robot: &RobotPose, wrench: &Wrench, scaling: &StateScaling) -> Self {
        let r = robot.as_array();
        let w = wrench.as_array();
        let mut s = [0.0; STATE_DIM];
        for i in 0..3 {
            s[i] = r[i] * scaling.position;
            s[i + 3] = r[i + 3] * scaling.angle;
            s[i + 6] = w[i] * scaling.force;
            s[i + 9] = w[i + 3] * scaling.moment;
        }
        MdpState(s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Diagnostic channel of a step; never fed to the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// True relative pose after the step.
    pub pose: PoseState,
    /// True inserted length (m).
    pub insertion: f64,
    /// Effective gains used this step.
    pub effective_gains: [f64; 6],
    pub success: bool,
    pub jammed: bool,
    pub safety_stop: bool,
    pub truncated: bool,
    /// Commanded increment was clipped by the per-step caps.
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: MdpState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One trajectory step record for logs.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub step: usize,
    pub robot: [f64; 6],
    pub wrench: [f64; 6],
    pub action: [f64; 6],
    pub effective_gains: [f64; 6],
    pub reward: f64,
    pub done: bool,
}

/// Render trajectory rows as CSV with a stable header.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from(
        "step,x,y,z,theta_x,theta_y,theta_z,f_x,f_y,f_z,m_x,m_y,m_z,\
         a_x,a_y,a_z,a_alpha,a_beta,a_gamma,k_x,k_y,k_z,k_alpha,k_beta,k_gamma,reward,done\n",
    );
    for r in rows {
        let _ = write!(out, "{}", r.step);
        for v in r
            .robot
            .iter()
            .chain(&r.wrench)
            .chain(&r.action)
            .chain(&r.effective_gains)
        {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", r.reward, r.done);
    }
    out
}

/// The assembly environment. Owns one episode's mutable state; cloning
/// yields an independent branch with identical future behaviour, which the
/// similarity machinery uses for paired zero-action baselines.
#[derive(Debug, Clone)]
pub struct AssemblyEnv {
    params: PlantParams,
    grid: ContactGrid,
    gains: ComplianceGains,
    reference: ReferenceWrench,
    caps: MotionCaps,
    rig: RigConfig,
    scaling: StateScaling,
    reward: RewardCoeffs,
    episode: EpisodeConfig,
    // per-episode state
    pose: PoseState,
    robot: RobotPose,
    estimator: DepthEstimator,
    sensed: Wrench,
    steps: usize,
    done: bool,
    rng: ChaCha12Rng,
}

impl AssemblyEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: PlantParams,
        grid: ContactGrid,
        gains: ComplianceGains,
        reference: ReferenceWrench,
        caps: MotionCaps,
        rig: RigConfig,
        scaling: StateScaling,
        reward: RewardCoeffs,
        episode: EpisodeConfig,
    ) -> Result<Self, EnvError> {
        reward.validate()?;
        if episode.max_steps == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if episode.force_limit <= 0.0 || episode.moment_limit <= 0.0 {
            return Err(EnvError::InvalidConfig(
                "safety limits must be positive".into(),
            ));
        }
        if episode.feed_per_step < 0.0 || episode.feed_per_step > caps.translation {
            return Err(EnvError::InvalidConfig(
                "feed_per_step must be within [0, translation cap]".into(),
            ));
        }
        Ok(AssemblyEnv {
            params,
            grid,
            gains,
            reference,
            caps,
            rig,
            scaling,
            reward,
            episode,
            pose: PoseState::centered(0.0),
            robot: RobotPose {
                x: 0.0,
                y: 0.0,
                z: 0.0,
                theta_x: 0.0,
                theta_y: 0.0,
                theta_z: 0.0,
            },
            estimator: DepthEstimator::new(),
            sensed: Wrench::zero(Frame::Sensor),
            steps: 0,
            done: true,
            rng: ChaCha12Rng::seed_from_u64(0),
        })
    }

    pub fn gains(&self) -> &ComplianceGains {
        &self.gains
    }

    pub fn set_gains(&mut self, gains: ComplianceGains) {
        self.gains = gains;
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn scaling(&self) -> &StateScaling {
        &self.scaling
    }

    pub fn episode_config(&self) -> &EpisodeConfig {
        &self.episode
    }

    pub fn episode_config_mut(&mut self) -> &mut EpisodeConfig {
        &mut self.episode
    }

    pub fn hole_depth(&self) -> f64 {
        self.params.hole_depth
    }

    /// True pose, for diagnostics and tests only.
    pub fn true_pose(&self) -> PoseState {
        self.pose
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Start a new episode. The initial lateral bias and tilt are sampled
    /// uniformly from the configured ranges; lateral starts outside the
    /// capture radius are resampled. Deterministic for a fixed seed.
    pub fn reset(&mut self, seed: u64) -> Result<MdpState, EnvError> {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        let le = self.episode.lateral_error;
        let ae = self.episode.angular_error;
        let mut chosen = None;
        for _ in 0..64 {
            let d_x = if le > 0.0 {
                self.rng.gen_range(-le..=le)
            } else {
                0.0
            };
            let d_y = if le > 0.0 {
                self.rng.gen_range(-le..=le)
            } else {
                0.0
            };
            if (d_x * d_x + d_y * d_y).sqrt() <= self.episode.capture_radius {
                chosen = Some((d_x, d_y));
                break;
            }
        }
        let (d_x, d_y) = chosen.ok_or(EnvError::CaptureRegion { attempts: 64 })?;
        let sample_angle = |rng: &mut ChaCha12Rng| if ae > 0.0 { rng.gen_range(-ae..=ae) } else { 0.0 };
        let alpha = sample_angle(&mut self.rng);
        let beta = sample_angle(&mut self.rng);
        let gamma = sample_angle(&mut self.rng);
        self.pose = PoseState {
            d_x,
            d_y,
            l: 0.0,
            alpha,
            beta,
            gamma,
        };
        self.robot = RobotPose {
            x: d_x,
            y: d_y,
            z: self.rig.tcp_height,
            theta_x: alpha,
            theta_y: beta,
            theta_z: gamma,
        };
        self.estimator = DepthEstimator::new();
        self.sensed = Wrench::zero(Frame::Sensor);
        self.steps = 0;
        self.done = false;
        Ok(self.observed_state())
    }

    fn observed_state(&self) -> MdpState {
        MdpState::from_observation(&self.robot, &self.sensed, &self.scaling)
    }

    /// Run one control cycle with the agent's gain revisions.
    pub fn step(&mut self, action: &RevisionFactors) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.steps += 1;
        let depth = self.params.hole_depth;

        // Controller side: estimated depth drives the frame offsets.
        let l_est = self
            .estimator
            .estimate(self.robot.z - self.rig.tcp_height)
            .min(depth);
        let offset_sa_est = self.rig.offset_sa(l_est);
        let offset_ra_est = self.rig.offset_ra(l_est);

        let effective_gains = self.gains.revised(action);
        let f_dec = decouple_output(&self.sensed, &offset_sa_est)?;
        let mut command =
            adaptive_compliance_correction(&f_dec, &self.reference, &self.gains, action);
        command.translation.z -= self.episode.feed_per_step;
        let (delta_r, clipped) = decouple_state(&command, &offset_ra_est, &self.caps);

        // Plant side: true depth.
        let offset_ra_true = self.rig.offset_ra(self.pose.l);
        let (new_pose, _depth_clamped) =
            state_equation(&self.pose, &delta_r, &offset_ra_true, depth);
        self.pose = new_pose;
        self.robot.integrate(&delta_r, self.rig.tcp_yaw);

        let mut jammed = false;
        let wrench_a = match contact_wrench(&self.params, &self.pose, self.grid) {
            Ok(w) => w,
            Err(PlantError::Jammed { .. }) => {
                jammed = true;
                Wrench::zero(Frame::Assembly)
            }
            Err(e) => return Err(e.into()),
        };
        let offset_sa_true = self.rig.offset_sa(self.pose.l);
        let mut sensed = wrench_to_sensor(&wrench_a, &offset_sa_true)?;
        if self.episode.wrench_noise_force > 0.0 {
            let nf = Normal::new(0.0, self.episode.wrench_noise_force).unwrap();
            for i in 0..3 {
                sensed.force[i] += nf.sample(&mut self.rng);
            }
        }
        if self.episode.wrench_noise_moment > 0.0 {
            let nm = Normal::new(0.0, self.episode.wrench_noise_moment).unwrap();
            for i in 0..3 {
                sensed.moment[i] += nm.sample(&mut self.rng);
            }
        }
        self.sensed = sensed;
        self.estimator.observe(
            self.robot.z - self.rig.tcp_height,
            self.sensed.force.norm() > self.episode.contact_threshold,
        );

        let remaining = (depth - self.pose.l).max(0.0);
        let mut reward = reward_from(remaining, &sensed.force, &sensed.moment, &self.reward);

        let success = self.pose.l >= depth - 1e-12 && !jammed;
        let safety_stop = sensed.force.norm() > self.episode.force_limit
            || sensed.moment.norm() > self.episode.moment_limit;
        if jammed || safety_stop {
            reward -= self.episode.fault_penalty;
        }
        let truncated = self.steps >= self.episode.max_steps;
        let done = success || jammed || safety_stop || truncated;
        self.done = done;

        Ok(StepResult {
            state: self.observed_state(),
            reward,
            done,
            info: StepInfo {
                pose: self.pose,
                insertion: self.pose.l,
                effective_gains,
                success,
                jammed,
                safety_stop,
                truncated,
                clipped,
            },
        })
    }

    /// Baseline rollout with the all-zero action (pure constant-gain
    /// control) from the current state. Returns at most `horizon` steps,
    /// stopping early if the episode ends.
    pub fn rollout_zero_action(&mut self, horizon: usize) -> Result<Vec<StepResult>, EnvError> {
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            if self.done {
                break;
            }
            let r = self.step(&RevisionFactors::ZERO)?;
            let done = r.done;
            out.push(r);
            if done {
                break;
            }
        }
        Ok(out)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

/// Convenience bundle for building environments task by task.
#[derive(Debug, Clone)]
pub struct EnvBuilder {
    pub params: PlantParams,
    pub grid: ContactGrid,
    pub gains: ComplianceGains,
    pub reference: ReferenceWrench,
    pub caps: MotionCaps,
    pub rig: RigConfig,
    pub scaling: StateScaling,
    pub reward: RewardCoeffs,
    pub episode: EpisodeConfig,
}

impl EnvBuilder {
    pub fn new(params: PlantParams, gains: ComplianceGains) -> Self {
        EnvBuilder {
            params,
            grid: ContactGrid::PRODUCTION,
            gains,
            reference: ReferenceWrench::default(),
            caps: MotionCaps::default(),
            rig: RigConfig::default(),
            scaling: StateScaling::default(),
            reward: RewardCoeffs::default(),
            episode: EpisodeConfig::default(),
        }
    }

    pub fn build(self) -> Result<AssemblyEnv, EnvError> {
        AssemblyEnv::new(
            self.params,
            self.grid,
            self.gains,
            self.reference,
            self.caps,
            self.rig,
            self.scaling,
            self.reward,
            self.episode,
        )
    }
}
