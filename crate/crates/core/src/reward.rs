//! Reward shaping for the walker: exponential tracking kernels, the periodic
//! contact-pattern term, a quintic swing-height profile, regularization
//! penalties, and the discriminator bonus used during student training.
//!
//! Every term is a pure function of the inputs collected after a control
//! step; [`total_reward`] evaluates all of them and returns an itemized
//! breakdown whose entries sum exactly to the total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential tracking kernel `exp(-w ||e||^2)`: 1 at zero error, decaying
/// with squared distance.
pub fn phi(e: &[f64], w: f64) -> f64 {
    let sq: f64 = e.iter().map(|v| v * v).sum();
    (-w * sq).exp()
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Discriminator bonus: large when the discriminator scores the student's
/// action as teacher-like (negative logit = "teacher").
pub fn disc_reward(disc_logit: f64) -> f64 {
    softplus(-disc_logit)
}

/// Swing-foot height target: the unique quintic through h(0)=h(1)=0,
/// h'(0)=h'(1)=0, h(1/2)=apex, h'(1/2)=0, which collapses to the symmetric
/// quartic `16 apex p^2 (1-p)^2`.
pub fn swing_height_target(phase_in_swing: f64, apex: f64) -> f64 {
    let p = phase_in_swing.clamp(0.0, 1.0);
    let q = p * (1.0 - p);
    16.0 * apex * q * q
}

/// Sum over swing feet of the absolute gap between measured foot clearance
/// and the profile height at the foot's swing phase. Stance feet contribute
/// nothing.
pub fn foot_clearance_term(
    swing_phase: &[Option<f64>; 2],
    clearance: &[f64; 2],
    apex: f64,
) -> f64 {
    swing_phase
        .iter()
        .zip(clearance)
        .filter_map(|(phase, h)| phase.map(|p| (h - swing_height_target(p, apex)).abs()))
        .sum()
}

/// Number of non-foot bodies whose contact force exceeds the threshold.
pub fn collision_count(forces: &[f64], threshold: f64) -> usize {
    forces.iter().filter(|f| **f > threshold).count()
}

/// Per-foot excess ground reaction force above the threshold, clipped at the
/// cap, summed over both feet.
pub fn contact_force_penalty(foot_force: &[f64; 2], threshold: f64, cap: f64) -> f64 {
    foot_force
        .iter()
        .map(|f| (f - threshold).clamp(0.0, cap))
        .sum()
}

/// Fraction of feet whose measured contact matches the commanded mask: the
/// infinitely narrow kernel with partial credit, so one matching foot out of
/// two scores 0.5 instead of the all-or-nothing 0.
pub fn contact_pattern_reward(commanded: &[f64; 2], measured: &[f64; 2]) -> f64 {
    commanded
        .iter()
        .zip(measured)
        .map(|(p, d)| if (p - d).abs() < 0.5 { 1.0 } else { 0.0 })
        .sum::<f64>()
        / 2.0
}

/// Weights, kernel widths, and targets for every reward term. Weights carry
/// their sign: kernel terms are positive rewards, penalty terms negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_orientation: f64,
    pub width_orientation: f64,
    pub w_joint_pos: f64,
    pub width_joint_pos: f64,
    pub w_base_height: f64,
    pub width_base_height: f64,
    /// Standing base height target above local ground, m.
    pub height_target: f64,
    pub w_vel_mismatch: f64,
    pub width_vel_mismatch: f64,
    pub w_lin_tracking: f64,
    pub width_lin_tracking: f64,
    pub w_ang_tracking: f64,
    pub width_ang_tracking: f64,
    pub w_contact_force: f64,
    /// Ground-reaction force above this is penalized, N.
    pub force_threshold: f64,
    /// Per-foot penalty clip, N.
    pub force_cap: f64,
    pub w_contact_pattern: f64,
    pub w_clearance: f64,
    /// Peak swing-foot height target, m.
    pub swing_apex: f64,
    pub w_collision: f64,
    /// A non-foot body contact above this force counts as a collision, N.
    pub collision_force_threshold: f64,
    pub w_smoothness: f64,
    pub w_joint_acc: f64,
    pub w_joint_torque: f64,
    pub w_joint_power: f64,
    pub w_disc: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_orientation: 0.5,
            width_orientation: 5.0,
            w_joint_pos: 0.8,
            width_joint_pos: 2.0,
            w_base_height: 0.2,
            width_base_height: 100.0,
            height_target: 0.85,
            w_vel_mismatch: 0.5,
            width_vel_mismatch: 5.0,
            w_lin_tracking: 1.4,
            width_lin_tracking: 5.0,
            w_ang_tracking: 1.1,
            width_ang_tracking: 5.0,
            w_contact_force: -0.05,
            // ~1.5x the walker's 298 N weight: single support carries the
            // full weight on one foot, so the threshold must clear it with
            // margin or steady walking gets penalized and two-footed
            // standing becomes the local optimum. Only landing transients
            // above it count.
            force_threshold: 450.0,
            force_cap: 100.0,
            w_contact_pattern: 1.4,
            // The clearance formula measures deviation from the swing
            // profile, so it enters with penalty sign.
            w_clearance: -1.6,
            swing_apex: 0.08,
            w_collision: -0.5,
            collision_force_threshold: 0.1,
            w_smoothness: -0.003,
            w_joint_acc: -1e-9,
            w_joint_torque: -1e-9,
            // Mechanical work is costly, matching the adjacent penalties.
            w_joint_power: -2e-5,
            w_disc: 2e-4,
        }
    }
}

impl RewardConfig {
    /// Full-size robot targets: 1.1 m base height, 400 N force threshold.
    pub fn full_scale() -> Self {
        Self {
            height_target: 1.1,
            force_threshold: 400.0,
            ..Self::default()
        }
    }
}

/// Which training stage the reward serves; the discriminator bonus exists
/// only while training the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Teacher,
    Student,
}

/// Post-step measurements feeding the reward. Everything is expressed in the
/// walker's (roll, pitch, yaw) / (x, y, z) conventions even where the planar
/// model pins a component to zero.
#[derive(Debug, Clone)]
pub struct RewardInputs<'a> {
    pub euler: [f64; 3],
    pub joint_pos: &'a [f64],
    pub nominal_pos: &'a [f64],
    /// Base height above the terrain directly below, m.
    pub base_height: f64,
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    /// Velocity command (forward, lateral, turn rate).
    pub command: [f64; 3],
    /// Ground reaction force per foot, N.
    pub foot_force: [f64; 2],
    /// Commanded contact mask I_p.
    pub commanded_mask: [f64; 2],
    /// Measured contact indicator I_d.
    pub measured_contact: [f64; 2],
    /// Swing progress per foot, `None` in commanded stance.
    pub swing_phase: [Option<f64>; 2],
    /// Foot sole height above local terrain, m.
    pub foot_clearance: [f64; 2],
    /// Contact force per non-foot body, N.
    pub body_forces: &'a [f64],
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    pub prev_prev_action: &'a [f64],
    pub joint_acc: &'a [f64],
    pub joint_torque: &'a [f64],
    pub joint_vel: &'a [f64],
    /// Discriminator logit for the student's action, student phase only.
    pub disc_logit: Option<f64>,
}

/// One evaluated reward term.
#[derive(Debug, Clone)]
pub struct RewardTerm {
    pub name: &'static str,
    /// Term value before weighting.
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

/// Itemized reward: `total` is exactly the sum of the weighted entries.
#[derive(Debug, Clone)]
pub struct RewardBreakdown {
    pub terms: Vec<RewardTerm>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn term(&self, name: &str) -> Option<&RewardTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Names of the reward terms in evaluation order for one training phase.
/// Metrics columns and per-term accumulators key off this list.
pub fn term_names(phase: TrainPhase) -> Vec<&'static str> {
    let mut names = vec![
        "orientation",
        "joint_position",
        "base_height",
        "velocity_mismatch",
        "linear_tracking",
        "angular_tracking",
        "contact_force",
        "contact_pattern",
        "feet_clearance",
        "collision",
        "action_smoothness",
        "joint_acceleration",
        "joint_torque",
        "joint_power",
    ];
    if phase == TrainPhase::Student {
        names.push("disc_reward");
    }
    names
}

/// Evaluates every reward term for one control step.
pub fn total_reward(
    inputs: &RewardInputs,
    cfg: &RewardConfig,
    phase: TrainPhase,
) -> Result<RewardBreakdown> {
    match (phase, inputs.disc_logit) {
        (TrainPhase::Student, None) => {
            return Err(Error::InvalidArgument(
                "student-phase reward requires a discriminator logit".into(),
            ))
        }
        (TrainPhase::Teacher, Some(_)) => {
            return Err(Error::InvalidArgument(
                "teacher-phase reward must not receive a discriminator logit".into(),
            ))
        }
        _ => {}
    }

    let mut terms = Vec::with_capacity(15);
    let mut push = |name: &'static str, raw: f64, weight: f64| {
        terms.push(RewardTerm {
            name,
            raw,
            weight,
            weighted: weight * raw,
        });
    };

    // Roll/pitch uprightness.
    push(
        "orientation",
        phi(&inputs.euler[..2], cfg.width_orientation),
        cfg.w_orientation,
    );

    let joint_err: Vec<f64> = inputs
        .joint_pos
        .iter()
        .zip(inputs.nominal_pos)
        .map(|(q, n)| q - n)
        .collect();
    push(
        "joint_position",
        phi(&joint_err, cfg.width_joint_pos),
        cfg.w_joint_pos,
    );

    push(
        "base_height",
        phi(&[inputs.base_height - cfg.height_target], cfg.width_base_height),
        cfg.w_base_height,
    );

    // Motion the command never asks for: vertical velocity, turn-rate error,
    // pitch rate.
    let mismatch = [
        inputs.linear_velocity[2],
        inputs.angular_velocity[2] - inputs.command[2],
        inputs.angular_velocity[1],
    ];
    push(
        "velocity_mismatch",
        phi(&mismatch, cfg.width_vel_mismatch),
        cfg.w_vel_mismatch,
    );

    let lin_err = [
        inputs.linear_velocity[0] - inputs.command[0],
        inputs.linear_velocity[1] - inputs.command[1],
        inputs.linear_velocity[2],
    ];
    push(
        "linear_tracking",
        phi(&lin_err, cfg.width_lin_tracking),
        cfg.w_lin_tracking,
    );

    let ang_err = [
        inputs.angular_velocity[0],
        inputs.angular_velocity[1],
        inputs.angular_velocity[2] - inputs.command[2],
    ];
    push(
        "angular_tracking",
        phi(&ang_err, cfg.width_ang_tracking),
        cfg.w_ang_tracking,
    );

    push(
        "contact_force",
        contact_force_penalty(&inputs.foot_force, cfg.force_threshold, cfg.force_cap),
        cfg.w_contact_force,
    );

    push(
        "contact_pattern",
        contact_pattern_reward(&inputs.commanded_mask, &inputs.measured_contact),
        cfg.w_contact_pattern,
    );

    push(
        "feet_clearance",
        foot_clearance_term(&inputs.swing_phase, &inputs.foot_clearance, cfg.swing_apex),
        cfg.w_clearance,
    );

    push(
        "collision",
        collision_count(inputs.body_forces, cfg.collision_force_threshold) as f64,
        cfg.w_collision,
    );

    let jerk: Vec<f64> = inputs
        .action
        .iter()
        .zip(inputs.prev_action)
        .zip(inputs.prev_prev_action)
        .map(|((a, a1), a2)| a - 2.0 * a1 + a2)
        .collect();
    push("action_smoothness", norm(&jerk), cfg.w_smoothness);

    push("joint_acceleration", sq_norm(inputs.joint_acc), cfg.w_joint_acc);
    push("joint_torque", sq_norm(inputs.joint_torque), cfg.w_joint_torque);

    let power: f64 = inputs
        .joint_torque
        .iter()
        .zip(inputs.joint_vel)
        .map(|(t, v)| t.abs() * v.abs())
        .sum();
    push("joint_power", power, cfg.w_joint_power);

    if let Some(logit) = inputs.disc_logit {
        push("disc_reward", disc_reward(logit), cfg.w_disc);
    }

    let total = terms.iter().map(|t| t.weighted).sum();
    Ok(RewardBreakdown { terms, total })
}
