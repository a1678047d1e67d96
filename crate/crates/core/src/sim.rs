//! Planar (sagittal) legged walker simulation.
//!
//! The walker is a rigid base with two three-joint legs (hip, knee, ankle).
//! Legs are treated as massless for base translation — their mass is lumped
//! into the base — while each joint integrates its own reflected-inertia
//! dynamics. Contacts are penalty springs at the heel and toe of each foot
//! (plus knee and base collision points for termination), with viscous
//! Coulomb friction clamped by mu*N. Normal forces act vertically and
//! friction horizontally, a desk-scale simplification that is exact on flat
//! ground and adequate below the 23-degree slope cap. Integration is
//! semi-implicit Euler at `control_dt / substeps`.
//!
//! Everything randomized lives in `EnvParams`, drawn once per episode by
//! `randomize_env` in a fixed order from configured ranges. Actuation and
//! sensing delays are ring buffers indexed in physics substeps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::terrain::Heightfield;

/// Number of actuated joints of the planar walker.
pub const NUM_JOINTS: usize = 6;
const JOINTS_PER_LEG: usize = 3;

/// Contact forces on non-foot bodies above this threshold count as
/// collisions and terminate the episode.
pub const COLLISION_FORCE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    /// 90-degree counterclockwise rotation: the velocity direction of a point
    /// at offset `self` from a pivot spinning at unit rate.
    pub fn rot90(self) -> Self {
        Vec2::new(-self.z, self.x)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.z * other.z
    }

    /// 2D cross product `self x other` (torque of force `other` at arm `self`).
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.z - self.z * other.x
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.z, s * self.x + c * self.z)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.z + o.z)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.z - o.z)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.z * s)
    }
}

/// Unit vector of a link hanging at absolute angle `phi` (0 = straight down).
fn link_dir(phi: f64) -> Vec2 {
    Vec2::new(phi.sin(), -phi.cos())
}

/// Geometry, masses, and limits of the walker.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkerModel {
    pub base_mass: f64,
    pub base_inertia: f64,
    /// Thigh, shank, foot masses per leg (lumped into the base for
    /// translation; they set joint reflected inertias and total weight).
    pub link_masses: [f64; 3],
    pub thigh_length: f64,
    pub shank_length: f64,
    /// Heel/toe x-offsets from the ankle in the foot frame.
    pub heel_offset: f64,
    pub toe_offset: f64,
    /// Ankle height above the sole.
    pub sole_height: f64,
    /// Reflected inertia about hip/knee/ankle from the leg links.
    pub joint_inertia: [f64; 3],
    /// (min, max) joint angle per joint type, radians.
    pub joint_limits: [(f64, f64); 3],
    /// Torque limit per joint type, N·m.
    pub torque_limit: [f64; 3],
    /// Nominal configuration theta_0 per joint type; both legs share it.
    pub nominal_pose: [f64; 3],
    /// Base collision point offset below the base center.
    pub base_contact_drop: f64,
    /// Transmission ratio per joint type: the PD gains are multiplied by
    /// this, reflecting stiffer gearing at distal joints. The knee must hold
    /// roughly m*g*l/2 per radian of fold and the ankles together m*g*h per
    /// radian of tip, so distal ratios above 1 are required for the walker
    /// to stand at all at this mass and height.
    pub gain_ratio: [f64; 3],
}

impl Default for WalkerModel {
    fn default() -> Self {
        Self {
            base_mass: 20.0,
            // Torso inertia about the hip pivot: a ~20 kg trunk with its
            // center of mass ~0.3 m above the hip carries m*k^2 + m*d^2 of
            // roughly 2 + 20*0.09 ~ 4 kg*m^2. Too small a value here makes
            // the base whip around under every hip reaction torque and no
            // gait can balance it.
            base_inertia: 4.0,
            link_masses: [2.8, 1.5, 0.7],
            thigh_length: 0.43,
            shank_length: 0.43,
            // Symmetric sole: the center of pressure of a flat foot sits at
            // the ankle, so gravity exerts no net ankle torque when standing.
            heel_offset: -0.14,
            toe_offset: 0.14,
            sole_height: 0.045,
            // Reflected inertia grows with the square of the transmission
            // ratio, so the geared ankle is far from negligible.
            joint_inertia: [1.4, 0.35, 0.25],
            joint_limits: [(-1.3, 1.3), (0.0, 2.4), (-1.0, 1.0)],
            torque_limit: [120.0, 120.0, 60.0],
            nominal_pose: [-0.1, 0.2, -0.1],
            base_contact_drop: 0.2,
            gain_ratio: [1.0, 5.0, 10.0],
        }
    }
}

impl WalkerModel {
    /// Total mass with nominal link masses, kg.
    pub fn total_mass(&self) -> f64 {
        self.base_mass + 2.0 * self.link_masses.iter().sum::<f64>()
    }

    /// Nominal pose for all six joints, [left hip, knee, ankle, right ...].
    pub fn nominal_joints(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(NUM_JOINTS);
        for _ in 0..2 {
            q.extend_from_slice(&self.nominal_pose);
        }
        q
    }

    /// Base height above the ground when standing at the nominal pose with
    /// feet flat.
    pub fn standing_height(&self) -> f64 {
        let phi1 = self.nominal_pose[0];
        let phi2 = phi1 + self.nominal_pose[1];
        self.thigh_length * phi1.cos() + self.shank_length * phi2.cos() + self.sole_height
    }
}

/// Fixed simulation constants (not randomized).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control (policy) timestep, seconds.
    pub control_dt: f64,
    /// Physics substeps per control step.
    pub substeps: usize,
    pub gravity: f64,
    /// Penalty contact normal stiffness (N/m) and damping (N·s/m).
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Gauss-Seidel sweeps of the friction impulse solver per substep.
    pub friction_iterations: usize,
    /// Episode length, seconds.
    pub episode_length: f64,
    /// Fallen when base height above terrain drops below this.
    pub fall_height: f64,
    /// Fallen when |pitch| exceeds this, radians.
    pub fall_pitch: f64,
    /// Ground friction coefficient before randomization.
    pub base_friction: f64,
    pub base_restitution: f64,
    /// Actuator friction bases (scaled by Table-style multipliers).
    pub base_coulomb_friction: f64,
    pub base_viscous_friction: f64,
    /// Joint bearing bases.
    pub base_joint_friction: f64,
    pub base_joint_damping: f64,
    pub base_joint_armature: f64,
    /// PD gain defaults before the stiffness/damping multipliers.
    pub kp: f64,
    pub kd: f64,
    /// Joint-angle noise applied at reset, radians.
    pub reset_noise: f64,
    /// Initial foot penetration preload at reset, meters.
    pub reset_penetration: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.01,
            substeps: 4,
            gravity: 9.81,
            // ~300 N of body weight penetrates 6 mm; damping near half of
            // critical (2*sqrt(k*m) ~ 2500) so footfalls settle instead of
            // bouncing off the penalty spring.
            contact_stiffness: 5e4,
            contact_damping: 1e3,
            friction_iterations: 3,
            episode_length: 20.0,
            fall_height: 0.4,
            fall_pitch: 1.0,
            base_friction: 1.0,
            base_restitution: 0.0,
            base_coulomb_friction: 0.5,
            base_viscous_friction: 0.1,
            base_joint_friction: 0.1,
            base_joint_damping: 0.1,
            base_joint_armature: 0.02,
            // The hip drives ~1.4 kg*m^2 of reflected leg inertia, so the
            // loop needs kp near 120 to track a ~1.4 Hz gait and kd a few
            // N*m*s/rad to damp the PD ringing (critical damping would be
            // ~2*sqrt(kp*I) ~ 26).
            kp: 120.0,
            kd: 6.0,
            reset_noise: 0.02,
            reset_penetration: 0.005,
        }
    }
}

/// Uniform sampling range. `hi` may be infinite (push interval); samplers
/// cap it before drawing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RandRange {
    pub lo: f64,
    pub hi: f64,
}

impl RandRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        rng.gen_range(self.lo..=self.hi)
    }

    fn sample_int(&self, rng: &mut ChaCha8Rng) -> usize {
        let lo = self.lo.round() as usize;
        let hi = self.hi.round() as usize;
        if lo == hi {
            return lo;
        }
        rng.gen_range(lo..=hi)
    }
}

/// Domain randomization ranges, one row per randomized variable.
/// Scaling rows multiply the corresponding base value; additive rows add to
/// it. Lags count physics substeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationConfig {
    pub enabled: bool,
    pub friction: RandRange,
    pub restitution: RandRange,
    pub push_interval: RandRange,
    pub push_velocity: RandRange,
    pub push_angular_velocity: RandRange,
    pub base_mass: RandRange,
    pub com_displacement: RandRange,
    pub stiffness_multiplier: RandRange,
    pub damping_multiplier: RandRange,
    pub torque_multiplier: RandRange,
    pub link_mass_multiplier: RandRange,
    pub motor_offset: RandRange,
    pub joint_friction: RandRange,
    pub joint_damping: RandRange,
    pub joint_armature: RandRange,
    pub actuation_lag: RandRange,
    pub motor_obs_lag: RandRange,
    pub action_obs_lag: RandRange,
    pub imu_obs_lag: RandRange,
    pub coulomb_friction: RandRange,
    pub viscous_friction: RandRange,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        let r = |lo, hi| RandRange { lo, hi };
        Self {
            enabled: true,
            friction: r(0.2, 1.3),
            restitution: r(0.0, 0.4),
            push_interval: r(8.0, f64::INFINITY),
            push_velocity: r(0.0, 0.4),
            push_angular_velocity: r(0.0, 0.6),
            base_mass: r(-4.0, 4.0),
            com_displacement: r(-0.06, 0.06),
            stiffness_multiplier: r(0.8, 1.2),
            damping_multiplier: r(0.8, 1.2),
            torque_multiplier: r(0.8, 1.2),
            link_mass_multiplier: r(0.8, 1.2),
            motor_offset: r(-0.035, 0.035),
            joint_friction: r(0.01, 1.15),
            joint_damping: r(0.3, 1.5),
            joint_armature: r(0.008, 0.06),
            actuation_lag: r(5.0, 20.0),
            motor_obs_lag: r(5.0, 20.0),
            action_obs_lag: r(2.0, 5.0),
            imu_obs_lag: r(1.0, 10.0),
            coulomb_friction: r(0.1, 0.9),
            viscous_friction: r(0.05, 0.1),
        }
    }
}

/// Episode-level physical parameters after randomization.
#[derive(Debug, Clone)]
pub struct EnvParams {
    pub friction: f64,
    pub restitution: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_scale: f64,
    pub base_mass: f64,
    pub link_mass_scale: f64,
    pub com_offset_x: f64,
    pub motor_offset: Vec<f64>,
    pub joint_friction: f64,
    pub joint_damping: f64,
    pub joint_armature: f64,
    /// Delays in physics substeps.
    pub actuation_lag: usize,
    pub motor_obs_lag: usize,
    pub action_obs_lag: usize,
    pub imu_obs_lag: usize,
    pub coulomb_friction: f64,
    pub viscous_friction: f64,
    pub pushes_enabled: bool,
    pub push_interval: RandRange,
    pub push_velocity_max: f64,
    pub push_angular_max: f64,
}

impl EnvParams {
    /// Unrandomized parameters: identity multipliers, zero offsets and lags,
    /// no pushes.
    pub fn nominal(model: &WalkerModel, sim: &SimConfig) -> Self {
        Self {
            friction: sim.base_friction,
            restitution: sim.base_restitution,
            kp: sim.kp,
            kd: sim.kd,
            torque_scale: 1.0,
            base_mass: model.base_mass,
            link_mass_scale: 1.0,
            com_offset_x: 0.0,
            motor_offset: vec![0.0; NUM_JOINTS],
            joint_friction: sim.base_joint_friction,
            joint_damping: sim.base_joint_damping,
            joint_armature: sim.base_joint_armature,
            actuation_lag: 0,
            motor_obs_lag: 0,
            action_obs_lag: 0,
            imu_obs_lag: 0,
            coulomb_friction: sim.base_coulomb_friction,
            viscous_friction: sim.base_viscous_friction,
            pushes_enabled: false,
            push_interval: RandRange {
                lo: f64::INFINITY,
                hi: f64::INFINITY,
            },
            push_velocity_max: 0.0,
            push_angular_max: 0.0,
        }
    }

    /// Total translating mass: base plus scaled leg links.
    pub fn dynamic_mass(&self, model: &WalkerModel) -> f64 {
        self.base_mass + 2.0 * self.link_mass_scale * model.link_masses.iter().sum::<f64>()
    }
}

/// Draws one episode's parameters. Rows are sampled in declaration order so
/// a fixed seed reproduces the exact same parameter set.
pub fn randomize_env(
    model: &WalkerModel,
    sim: &SimConfig,
    ranges: &RandomizationConfig,
    rng: &mut ChaCha8Rng,
) -> EnvParams {
    if !ranges.enabled {
        return EnvParams::nominal(model, sim);
    }
    let friction = sim.base_friction * ranges.friction.sample(rng);
    let restitution = sim.base_restitution + ranges.restitution.sample(rng);
    // The interval range itself is kept for per-push sampling; pushes draw
    // magnitudes per event, so only the per-episode caps are drawn here.
    let push_velocity_max = ranges.push_velocity.hi;
    let push_angular_max = ranges.push_angular_velocity.hi;
    let base_mass = model.base_mass + ranges.base_mass.sample(rng);
    let com_offset_x = ranges.com_displacement.sample(rng);
    let kp = sim.kp * ranges.stiffness_multiplier.sample(rng);
    let kd = sim.kd * ranges.damping_multiplier.sample(rng);
    let torque_scale = ranges.torque_multiplier.sample(rng);
    let link_mass_scale = ranges.link_mass_multiplier.sample(rng);
    let motor_offset: Vec<f64> = (0..NUM_JOINTS)
        .map(|_| ranges.motor_offset.sample(rng))
        .collect();
    let joint_friction = sim.base_joint_friction * ranges.joint_friction.sample(rng);
    let joint_damping = sim.base_joint_damping * ranges.joint_damping.sample(rng);
    let joint_armature = sim.base_joint_armature * ranges.joint_armature.sample(rng);
    let actuation_lag = ranges.actuation_lag.sample_int(rng);
    let motor_obs_lag = ranges.motor_obs_lag.sample_int(rng);
    let action_obs_lag = ranges.action_obs_lag.sample_int(rng);
    let imu_obs_lag = ranges.imu_obs_lag.sample_int(rng);
    let coulomb_friction = sim.base_coulomb_friction * ranges.coulomb_friction.sample(rng);
    let viscous_friction = sim.base_viscous_friction * ranges.viscous_friction.sample(rng);
    EnvParams {
        friction,
        restitution,
        kp,
        kd,
        torque_scale,
        base_mass,
        link_mass_scale,
        com_offset_x,
        motor_offset,
        joint_friction,
        joint_damping,
        joint_armature,
        actuation_lag,
        motor_obs_lag,
        action_obs_lag,
        imu_obs_lag,
        coulomb_friction,
        viscous_friction,
        pushes_enabled: true,
        push_interval: ranges.push_interval,
        push_velocity_max,
        push_angular_max,
    }
}

/// PD torque law: `tau = Kp (target + motor_offset - q) - Kd qdot`, scaled by
/// the torque multiplier, minus Coulomb/viscous actuator friction, clamped to
/// the per-joint torque limits.
pub fn pd_torque(
    params: &EnvParams,
    model: &WalkerModel,
    target: &[f64],
    q: &[f64],
    qdot: &[f64],
) -> Result<Vec<f64>> {
    if target.len() != NUM_JOINTS || q.len() != NUM_JOINTS || qdot.len() != NUM_JOINTS {
        return Err(Error::DimensionMismatch {
            context: "pd_torque",
            expected: NUM_JOINTS,
            actual: target.len().min(q.len()).min(qdot.len()),
        });
    }
    let mut tau = Vec::with_capacity(NUM_JOINTS);
    for i in 0..NUM_JOINTS {
        let ratio = model.gain_ratio[i % JOINTS_PER_LEG];
        let raw = ratio
            * (params.kp * (target[i] + params.motor_offset[i] - q[i]) - params.kd * qdot[i]);
        let scaled = raw * params.torque_scale
            - params.coulomb_friction * sign_deadband(qdot[i])
            - params.viscous_friction * qdot[i];
        let limit = model.torque_limit[i % JOINTS_PER_LEG];
        tau.push(scaled.clamp(-limit, limit));
    }
    Ok(tau)
}

fn sign_deadband(v: f64) -> f64 {
    if v > 1e-6 {
        1.0
    } else if v < -1e-6 {
        -1.0
    } else {
        0.0
    }
}

/// Episode phase reported by `check_termination`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Running,
    Fallen,
    Timeout,
}

/// Dynamic state of one walker.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub base_pos: Vec2,
    pub base_pitch: f64,
    pub base_vel: Vec2,
    pub pitch_rate: f64,
    /// Joint angles [left hip, left knee, left ankle, right hip, ...].
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Joint accelerations over the last control step.
    pub qdd: Vec<f64>,
    /// Torques applied during the last substep.
    pub applied_torque: Vec<f64>,
    pub foot_contact: [bool; 2],
    /// Summed normal force per foot, N.
    pub foot_force: [f64; 2],
    /// Largest contact force on a non-foot body this step, N.
    pub nonfoot_force: f64,
    pub time: f64,
    /// Most recent push as velocity deltas (dvx, dvz, dpitch_rate).
    pub last_push: [f64; 3],
    pub next_push_time: f64,
    /// Set when integration produced a non-finite value.
    pub fault: bool,
}

/// Forward-kinematics snapshot of one leg.
#[derive(Debug, Clone, Copy)]
pub struct LegPose {
    pub hip: Vec2,
    pub knee: Vec2,
    pub ankle: Vec2,
    pub heel: Vec2,
    pub toe: Vec2,
}

/// Which body a contact point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactBody {
    Base,
    /// Knee of leg 0/1 (a collision body, not a support).
    Knee(usize),
    /// Foot of leg 0/1.
    Foot(usize),
}

impl ContactBody {
    pub fn is_foot(self) -> bool {
        matches!(self, ContactBody::Foot(_))
    }
}

/// A contact point's kinematics: position, velocity, and the per-joint
/// torque arms (d position / d q) for the joints it depends on.
struct ContactKinematics {
    pos: Vec2,
    vel: Vec2,
    /// (joint index, jacobian column) pairs.
    arms: Vec<(usize, Vec2)>,
    body: ContactBody,
}

/// Penalty normal force at one contact point of the current state. Friction
/// is resolved separately at the velocity level during stepping.
#[derive(Debug, Clone)]
pub struct ContactForce {
    pub pos: Vec2,
    /// Depth below the terrain surface; positive means penetrating.
    pub penetration: f64,
    /// Upward normal force, N. Positive exactly when penetrating.
    pub normal: f64,
    pub body: ContactBody,
    /// (joint index, jacobian column) pairs for torque mapping.
    arms: Vec<(usize, Vec2)>,
}

/// One walker plus its terrain binding, parameters, delay lines, and RNG.
pub struct Simulator {
    pub model: WalkerModel,
    pub sim: SimConfig,
    pub params: EnvParams,
    pub terrain: Heightfield,
    /// Y-plane the planar walker lives in (terrain center line).
    pub plane_y: f64,
    pub state: EnvState,
    /// Per-substep sensor snapshots, newest last: (q, qd, pitch_rate, pitch).
    sensor_history: Vec<(Vec<f64>, Vec<f64>, f64, f64)>,
    /// Per-substep commanded targets, newest last.
    action_history: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

const HISTORY_LEN: usize = 24;

impl Simulator {
    pub fn new(
        model: WalkerModel,
        sim: SimConfig,
        params: EnvParams,
        terrain: Heightfield,
        rng: ChaCha8Rng,
    ) -> Self {
        let plane_y = terrain.center_y();
        let state = EnvState {
            base_pos: Vec2::ZERO,
            base_pitch: 0.0,
            base_vel: Vec2::ZERO,
            pitch_rate: 0.0,
            q: vec![0.0; NUM_JOINTS],
            qd: vec![0.0; NUM_JOINTS],
            qdd: vec![0.0; NUM_JOINTS],
            applied_torque: vec![0.0; NUM_JOINTS],
            foot_contact: [false; 2],
            foot_force: [0.0; 2],
            nonfoot_force: 0.0,
            time: 0.0,
            last_push: [0.0; 3],
            next_push_time: f64::INFINITY,
            fault: false,
        };
        let mut this = Self {
            model,
            sim,
            params,
            terrain,
            plane_y,
            state,
            sensor_history: Vec::new(),
            action_history: Vec::new(),
            rng,
        };
        this.reset();
        this
    }

    /// Swaps the bound terrain (and the walking plane that follows it).
    /// Takes effect at the next `reset`.
    pub fn set_terrain(&mut self, terrain: Heightfield) {
        self.plane_y = terrain.center_y();
        self.terrain = terrain;
    }

    /// Re-spawns the walker on the terrain's flat strip at the nominal pose
    /// (plus small joint noise), resets time, delay lines, and the push
    /// schedule. Parameters are not re-drawn here; the caller owns that.
    pub fn reset(&mut self) {
        let cx = self.terrain.center_x();
        let ground = self.terrain.height_at(cx, self.plane_y);
        let mut q = self.model.nominal_joints();
        for v in q.iter_mut() {
            if self.sim.reset_noise > 0.0 {
                *v += self.rng.gen_range(-self.sim.reset_noise..=self.sim.reset_noise);
            }
        }
        let base_z = ground + self.model.standing_height() - self.sim.reset_penetration;
        self.state = EnvState {
            base_pos: Vec2::new(cx, base_z),
            base_pitch: 0.0,
            base_vel: Vec2::ZERO,
            pitch_rate: 0.0,
            q,
            qd: vec![0.0; NUM_JOINTS],
            qdd: vec![0.0; NUM_JOINTS],
            applied_torque: vec![0.0; NUM_JOINTS],
            foot_contact: [false; 2],
            foot_force: [0.0; 2],
            nonfoot_force: 0.0,
            time: 0.0,
            last_push: [0.0; 3],
            next_push_time: if self.params.pushes_enabled {
                self.sample_push_interval()
            } else {
                f64::INFINITY
            },
            fault: false,
        };
        self.sensor_history.clear();
        self.action_history.clear();
        let snapshot = (
            self.state.q.clone(),
            self.state.qd.clone(),
            0.0,
            self.state.base_pitch,
        );
        // Pre-fill the delay lines with "hold the nominal pose" so a lagged
        // episode start does not actuate toward a stale zero target.
        let hold = self.model.nominal_joints();
        for _ in 0..HISTORY_LEN {
            self.sensor_history.push(snapshot.clone());
            self.action_history.push(hold.clone());
        }
    }

    fn sample_push_interval(&mut self) -> f64 {
        let range = self.params.push_interval;
        // An unbounded interval row means "at least lo"; cap the draw at
        // three times the minimum so pushes still happen.
        let hi = if range.hi.is_finite() {
            range.hi
        } else {
            3.0 * range.lo
        };
        let interval = if hi > range.lo {
            self.rng.gen_range(range.lo..=hi)
        } else {
            range.lo
        };
        self.state.time + interval
    }

    /// Forward kinematics of leg 0 (left) or 1 (right).
    pub fn leg_pose(&self, leg: usize) -> LegPose {
        let s = &self.state;
        let jb = leg * JOINTS_PER_LEG;
        let hip_local = Vec2::new(-self.params.com_offset_x, 0.0);
        let hip = s.base_pos + hip_local.rotate(s.base_pitch);
        let phi1 = s.base_pitch + s.q[jb];
        let knee = hip + link_dir(phi1) * self.model.thigh_length;
        let phi2 = phi1 + s.q[jb + 1];
        let ankle = knee + link_dir(phi2) * self.model.shank_length;
        let phi_foot = phi2 + s.q[jb + 2];
        let heel = ankle + Vec2::new(self.model.heel_offset, -self.model.sole_height).rotate(phi_foot);
        let toe = ankle + Vec2::new(self.model.toe_offset, -self.model.sole_height).rotate(phi_foot);
        LegPose {
            hip,
            knee,
            ankle,
            heel,
            toe,
        }
    }

    /// Sole midpoint height above the terrain per foot.
    pub fn foot_clearance(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for leg in 0..2 {
            let pose = self.leg_pose(leg);
            let mid = (pose.heel + pose.toe) * 0.5;
            out[leg] = mid.z - self.terrain.height_at(mid.x, self.plane_y);
        }
        out
    }

    /// Base height above the terrain directly below.
    pub fn base_height(&self) -> f64 {
        self.state.base_pos.z - self.terrain.height_at(self.state.base_pos.x, self.plane_y)
    }

    fn contact_points(&self) -> Vec<ContactKinematics> {
        let s = &self.state;
        let mut points = Vec::with_capacity(7);
        let base_point = s.base_pos + Vec2::new(0.0, -self.model.base_contact_drop).rotate(s.base_pitch);
        points.push(self.point_kinematics(base_point, &[], ContactBody::Base));
        for leg in 0..2 {
            let jb = leg * JOINTS_PER_LEG;
            let pose = self.leg_pose(leg);
            // Knee point: depends on the hip joint only.
            points.push(self.point_kinematics(pose.knee, &[(jb, pose.hip)], ContactBody::Knee(leg)));
            let foot_arms = [(jb, pose.hip), (jb + 1, pose.knee), (jb + 2, pose.ankle)];
            points.push(self.point_kinematics(pose.heel, &foot_arms, ContactBody::Foot(leg)));
            points.push(self.point_kinematics(pose.toe, &foot_arms, ContactBody::Foot(leg)));
        }
        points
    }

    fn point_kinematics(
        &self,
        pos: Vec2,
        joint_pivots: &[(usize, Vec2)],
        body: ContactBody,
    ) -> ContactKinematics {
        let s = &self.state;
        let mut vel = s.base_vel + (pos - s.base_pos).rot90() * s.pitch_rate;
        let mut arms = Vec::with_capacity(joint_pivots.len());
        for &(joint, pivot) in joint_pivots {
            let arm = (pos - pivot).rot90();
            vel = vel + arm * s.qd[joint];
            arms.push((joint, arm));
        }
        ContactKinematics {
            pos,
            vel,
            arms,
            body,
        }
    }

    /// One control step: the action is a joint-position offset from the
    /// nominal pose, delayed by the actuation lag, PD-tracked through
    /// `substeps` physics updates. Returns the termination status after the
    /// step.
    pub fn step(&mut self, action: &[f64]) -> Result<Termination> {
        if action.len() != NUM_JOINTS {
            return Err(Error::DimensionMismatch {
                context: "Simulator::step",
                expected: NUM_JOINTS,
                actual: action.len(),
            });
        }
        if self.state.fault {
            return Ok(Termination::Fallen);
        }
        let target: Vec<f64> = action
            .iter()
            .zip(self.model.nominal_joints())
            .map(|(a, n)| a + n)
            .collect();
        let h = self.sim.control_dt / self.sim.substeps as f64;
        let qd_before = self.state.qd.clone();
        for _ in 0..self.sim.substeps {
            // Record the commanded target, then actuate the lagged one.
            self.action_history.remove(0);
            self.action_history.push(target.clone());
            let lag = self.params.actuation_lag.min(HISTORY_LEN - 1);
            let effective = self.action_history[HISTORY_LEN - 1 - lag].clone();
            self.substep(&effective, h)?;
            let snap = (
                self.state.q.clone(),
                self.state.qd.clone(),
                self.state.pitch_rate,
                self.state.base_pitch,
            );
            self.sensor_history.remove(0);
            self.sensor_history.push(snap);
        }
        self.state.time += self.sim.control_dt;
        for i in 0..NUM_JOINTS {
            self.state.qdd[i] = (self.state.qd[i] - qd_before[i]) / self.sim.control_dt;
        }
        if self.params.pushes_enabled && self.state.time >= self.state.next_push_time {
            self.apply_push();
        }
        if !self.state_is_finite() {
            self.state.fault = true;
            return Ok(Termination::Fallen);
        }
        Ok(self.check_termination())
    }

    /// Penalty normal forces at every currently-penetrating contact point.
    /// Normal force is positive exactly when penetration is positive.
    pub fn contact_forces(&self) -> Vec<ContactForce> {
        let mut out = Vec::new();
        for c in self.contact_points() {
            let ground = self.terrain.height_at(c.pos.x, self.plane_y);
            let pen = ground - c.pos.z;
            if pen <= 0.0 {
                continue;
            }
            let normal = self.sim.contact_stiffness * pen
                + self.sim.contact_damping * (-c.vel.z).max(0.0);
            out.push(ContactForce {
                pos: c.pos,
                penetration: pen,
                normal,
                body: c.body,
                arms: c.arms,
            });
        }
        out
    }

    /// Joint inertia including the link-mass multiplier and armature.
    fn joint_inertia(&self, joint: usize) -> f64 {
        self.model.joint_inertia[joint % JOINTS_PER_LEG] * self.params.link_mass_scale
            + self.params.joint_armature
    }

    fn substep(&mut self, target: &[f64], h: f64) -> Result<()> {
        let tau = pd_torque(&self.params, &self.model, target, &self.state.q, &self.state.qd)?;
        let mass = self.params.dynamic_mass(&self.model);
        let contacts = self.contact_forces();

        let mut force = Vec2::new(0.0, -self.sim.gravity * mass);
        let mut base_torque = 0.0;
        let mut joint_torque = tau.clone();
        let mut foot_force = [0.0; 2];
        let mut nonfoot: f64 = 0.0;

        // Momentum balance for the lumped body: every external contact force
        // enters the base translation directly and the base rotation with
        // its arm about the center of mass.
        for c in &contacts {
            let f = Vec2::new(0.0, c.normal);
            force = force + f;
            base_torque += (c.pos - self.state.base_pos).cross(f);
            for &(joint, jac) in &c.arms {
                joint_torque[joint] += jac.dot(f);
            }
            match c.body {
                ContactBody::Foot(leg) => foot_force[leg] += c.normal,
                _ => nonfoot = nonfoot.max(c.normal),
            }
        }
        // Hip actuators react on the base body.
        base_torque -= tau[0] + tau[JOINTS_PER_LEG];

        let accel = force * (1.0 / mass);
        let pitch_accel = base_torque / self.model.base_inertia;

        // Semi-implicit Euler: velocities first, then friction impulses on
        // the updated velocities, then positions.
        self.state.base_vel = self.state.base_vel + accel * h;
        self.state.pitch_rate += pitch_accel * h;
        for i in 0..NUM_JOINTS {
            let net = joint_torque[i]
                - self.params.joint_damping * self.state.qd[i]
                - self.params.joint_friction * sign_deadband(self.state.qd[i]);
            self.state.qd[i] += net / self.joint_inertia(i) * h;
        }

        self.solve_friction(&contacts, mass, h);

        self.state.base_pos = self.state.base_pos + self.state.base_vel * h;
        self.state.base_pitch += self.state.pitch_rate * h;
        for i in 0..NUM_JOINTS {
            self.state.q[i] += self.state.qd[i] * h;
            let (lo, hi) = self.model.joint_limits[i % JOINTS_PER_LEG];
            if self.state.q[i] < lo {
                self.state.q[i] = lo;
                self.state.qd[i] = self.state.qd[i].max(0.0);
            } else if self.state.q[i] > hi {
                self.state.q[i] = hi;
                self.state.qd[i] = self.state.qd[i].min(0.0);
            }
        }

        self.state.applied_torque = tau;
        self.state.foot_force = foot_force;
        self.state.foot_contact = [foot_force[0] > 0.0, foot_force[1] > 0.0];
        self.state.nonfoot_force = nonfoot;
        Ok(())
    }

    /// Coulomb friction at the velocity level: Gauss-Seidel impulse sweeps
    /// that drive each contact point's horizontal velocity to zero, with the
    /// accumulated impulse clamped to the friction cone mu*N*h. Projection
    /// is unconditionally stable where a viscous tangential gain stiff
    /// enough to prevent sliding would not be.
    fn solve_friction(&mut self, contacts: &[ContactForce], mass: f64, h: f64) {
        if contacts.is_empty() {
            return;
        }
        let inv_base_inertia = 1.0 / self.model.base_inertia;
        let mut accumulated = vec![0.0; contacts.len()];
        for _ in 0..self.sim.friction_iterations {
            for (idx, c) in contacts.iter().enumerate() {
                // Current horizontal velocity of the point.
                let r = c.pos - self.state.base_pos;
                let pitch_sens = -r.z;
                let mut vt = self.state.base_vel.x + pitch_sens * self.state.pitch_rate;
                for &(joint, jac) in &c.arms {
                    vt += jac.x * self.state.qd[joint];
                }
                // Effective mass along x through every coupled degree of
                // freedom this point touches.
                let mut inv_mass = 1.0 / mass + pitch_sens * pitch_sens * inv_base_inertia;
                for &(joint, jac) in &c.arms {
                    inv_mass += jac.x * jac.x / self.joint_inertia(joint);
                }
                let impulse = -vt / inv_mass;
                let budget = self.params.friction * c.normal * h;
                let clamped = (accumulated[idx] + impulse).max(-budget).min(budget);
                let delta = clamped - accumulated[idx];
                accumulated[idx] = clamped;
                self.state.base_vel.x += delta / mass;
                self.state.pitch_rate += delta * pitch_sens * inv_base_inertia;
                for &(joint, jac) in &c.arms {
                    self.state.qd[joint] += delta * jac.x / self.joint_inertia(joint);
                }
            }
        }
    }

    /// Kicks the base with uniform-magnitude, random-sign velocity deltas and
    /// schedules the next push.
    pub fn apply_push(&mut self) {
        let mag_v = self.rng.gen_range(0.0..=self.params.push_velocity_max);
        let sign_v = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mag_w = self.rng.gen_range(0.0..=self.params.push_angular_max);
        let sign_w = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
        let dvx = sign_v * mag_v;
        let dw = sign_w * mag_w;
        self.state.base_vel.x += dvx;
        self.state.pitch_rate += dw;
        self.state.last_push = [dvx, 0.0, dw];
        self.state.next_push_time = self.sample_push_interval();
    }

    /// Fallen / timeout classification per the episode rules.
    pub fn check_termination(&self) -> Termination {
        if self.state.fault {
            return Termination::Fallen;
        }
        if self.base_height() < self.sim.fall_height
            || self.state.base_pitch.abs() > self.sim.fall_pitch
            || self.state.nonfoot_force > COLLISION_FORCE_THRESHOLD
        {
            return Termination::Fallen;
        }
        if self.state.time >= self.sim.episode_length {
            return Termination::Timeout;
        }
        Termination::Running
    }

    fn state_is_finite(&self) -> bool {
        let s = &self.state;
        s.base_pos.x.is_finite()
            && s.base_pos.z.is_finite()
            && s.base_pitch.is_finite()
            && s.base_vel.x.is_finite()
            && s.base_vel.z.is_finite()
            && s.pitch_rate.is_finite()
            && s.q.iter().all(|v| v.is_finite())
            && s.qd.iter().all(|v| v.is_finite())
    }

    /// Sensor snapshot `lag` substeps in the past: (q, qd, pitch_rate, pitch).
    pub fn lagged_sensors(&self, lag: usize) -> (&[f64], &[f64], f64, f64) {
        let idx = HISTORY_LEN - 1 - lag.min(HISTORY_LEN - 1);
        let (q, qd, rate, pitch) = &self.sensor_history[idx];
        (q, qd, *rate, *pitch)
    }

    /// Commanded target `lag` substeps in the past, as an offset from the
    /// nominal pose (the action convention).
    pub fn lagged_action(&self, lag: usize) -> Vec<f64> {
        let idx = HISTORY_LEN - 1 - lag.min(HISTORY_LEN - 1);
        self.action_history[idx]
            .iter()
            .zip(self.model.nominal_joints())
            .map(|(t, n)| t - n)
            .collect()
    }

    /// Total mechanical energy under the massless-leg model: base kinetic +
    /// rotational + joint kinetic + gravitational potential.
    pub fn mechanical_energy(&self) -> f64 {
        let s = &self.state;
        let mass = self.params.dynamic_mass(&self.model);
        let mut e = 0.5 * mass * s.base_vel.dot(s.base_vel)
            + 0.5 * self.model.base_inertia * s.pitch_rate * s.pitch_rate
            + mass * self.sim.gravity * s.base_pos.z;
        for i in 0..NUM_JOINTS {
            let inertia = self.model.joint_inertia[i % JOINTS_PER_LEG] * self.params.link_mass_scale
                + self.params.joint_armature;
            e += 0.5 * inertia * s.qd[i] * s.qd[i];
        }
        e
    }
}

/// CSV export of a state trace: header plus one row per step.
pub fn trace_csv(states: &[EnvState]) -> String {
    let mut out = String::from(
        "time,base_x,base_z,pitch,vel_x,vel_z,pitch_rate,\
         q0,q1,q2,q3,q4,q5,qd0,qd1,qd2,qd3,qd4,qd5,\
         contact_left,contact_right,force_left,force_right\n",
    );
    for s in states {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            s.time, s.base_pos.x, s.base_pos.z, s.base_pitch, s.base_vel.x, s.base_vel.z,
            s.pitch_rate
        ));
        for v in &s.q {
            out.push_str(&format!(",{v}"));
        }
        for v in &s.qd {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{},{}\n",
            s.foot_contact[0] as u8, s.foot_contact[1] as u8, s.foot_force[0], s.foot_force[1]
        ));
    }
    out
}
