//! Vectorized walker environments.
//!
//! Each environment owns a simulator bound to a curriculum terrain block,
//! observation frame stacks, reward evaluation, command sampling, and
//! auto-reset bookkeeping. All randomness flows through per-environment
//! streams derived from the master seed, so a pool reproduces bit-identical
//! trajectories run to run as long as environments are stepped in a fixed
//! order.

use std::mem;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::{
    add_proprio_noise, assemble_frame, FrameInputs, FrameStack, GaitSchedule, NoiseScales,
    ObsLayout, ObservationFrame,
};
use crate::reward::{total_reward, RewardBreakdown, RewardConfig, RewardInputs, TrainPhase};
use crate::rng::derive_stream;
use crate::sim::{
    randomize_env, ContactBody, RandomizationConfig, SimConfig, Simulator, Termination,
    WalkerModel, NUM_JOINTS,
};
use crate::terrain::{
    curriculum_update, generate_terrain, scan_height_map, terrain_level_layout, CurriculumConfig,
    CurriculumState, Heightfield, ScanGrid, TerrainConfig,
};

/// Terrain assignment policy for a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainMode {
    /// Flat ground everywhere: smoke training and fixtures.
    Flat,
    /// Generated blocks: environment i draws its family from the fixed
    /// 20-column layout and climbs the difficulty ladder between episodes.
    Curriculum,
}

/// Frame counts of the stacked observation views.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct StackSizes {
    /// Noisy proprioceptive frames fed to the actors.
    pub actor_frames: usize,
    /// Privileged frames fed to the teacher actor; also the state frames
    /// fed to the critic.
    pub state_frames: usize,
    /// State frames fed to the discriminator.
    pub disc_frames: usize,
}

impl Default for StackSizes {
    fn default() -> Self {
        Self {
            actor_frames: 15,
            state_frames: 3,
            disc_frames: 10,
        }
    }
}

/// Everything a pool needs: physics, terrain, observations, rewards, and
/// the sampling ranges gluing them together.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub num_envs: usize,
    pub model: WalkerModel,
    pub sim: SimConfig,
    pub randomization: RandomizationConfig,
    pub terrain: TerrainConfig,
    pub terrain_mode: TerrainMode,
    pub curriculum: CurriculumConfig,
    /// Fresh environments draw their starting level uniformly from
    /// [0, initial_max_level] (curriculum mode only).
    pub initial_max_level: u32,
    pub layout: ObsLayout,
    pub noise: NoiseScales,
    pub gait: GaitSchedule,
    pub rewards: RewardConfig,
    pub scan: ScanGrid,
    pub stacks: StackSizes,
    /// Half-range of the forward-velocity command draw, m/s. The trainer
    /// may widen it later through [`EnvPool::set_command_bound`].
    pub command_bound: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            num_envs: 64,
            model: WalkerModel::default(),
            sim: SimConfig::default(),
            randomization: RandomizationConfig::default(),
            terrain: TerrainConfig::default(),
            terrain_mode: TerrainMode::Curriculum,
            curriculum: CurriculumConfig::default(),
            initial_max_level: 0,
            layout: ObsLayout::default(),
            noise: NoiseScales::default(),
            gait: GaitSchedule::default(),
            rewards: RewardConfig::default(),
            scan: ScanGrid::default(),
            stacks: StackSizes::default(),
            command_bound: 1.0,
        }
    }
}

impl PoolConfig {
    /// Teacher actor input: N noisy proprio frames plus M privileged frames.
    pub fn teacher_actor_input_dim(&self) -> usize {
        self.stacks.actor_frames * self.layout.proprio_dim()
            + self.stacks.state_frames * self.layout.privileged_dim()
    }

    /// Student actor input: N noisy proprio frames only.
    pub fn student_actor_input_dim(&self) -> usize {
        self.stacks.actor_frames * self.layout.proprio_dim()
    }

    /// Critic input: M noise-free state frames.
    pub fn critic_input_dim(&self) -> usize {
        self.stacks.state_frames * self.layout.state_dim()
    }

    /// Discriminator input: S state frames plus the action.
    pub fn disc_input_dim(&self) -> usize {
        self.stacks.disc_frames * self.layout.state_dim() + self.layout.num_joints
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 {
            return Err(Error::Config("num_envs must be at least 1".into()));
        }
        if self.layout.num_joints != NUM_JOINTS {
            return Err(Error::Config(format!(
                "layout.num_joints {} does not match the {}-joint walker",
                self.layout.num_joints, NUM_JOINTS
            )));
        }
        if self.scan.len() != self.layout.scan_points {
            return Err(Error::Config(format!(
                "scan grid supplies {} points but the layout expects {}",
                self.scan.len(),
                self.layout.scan_points
            )));
        }
        let s = &self.stacks;
        if s.actor_frames == 0 || s.state_frames == 0 || s.disc_frames == 0 {
            return Err(Error::Config("stack sizes must be at least 1".into()));
        }
        if s.state_frames > s.disc_frames {
            return Err(Error::Config(format!(
                "state_frames {} exceeds disc_frames {}; the critic reads the \
                 tail of the discriminator's state buffer",
                s.state_frames, s.disc_frames
            )));
        }
        if !(self.command_bound >= 0.0) {
            return Err(Error::Config("command_bound must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of stepping one environment.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub done: bool,
    pub termination: Termination,
    /// The simulation produced a non-finite state; the reward is zero and
    /// the environment was reset.
    pub fault: bool,
    /// Critic observation at the truncated state, present only on timeout.
    /// The value bootstrap target for the final reward.
    pub timeout_critic_obs: Option<Vec<f64>>,
    /// Planar command tracking error this step, ||cmd_xy - v_xy||, m/s.
    pub tracking_error: f64,
    /// Positive mechanical power this step, sum_j max(tau_j * qd_j, 0), W.
    pub positive_power: f64,
}

struct WalkerEnv {
    sim: Simulator,
    stack: FrameStack,
    /// Latest noise-free frame; its aux block is the auxiliary-head target.
    frame: ObservationFrame,
    curriculum: CurriculumState,
    command: [f64; 3],
    /// Policy actions in effect: current, previous, and the one before.
    action: Vec<f64>,
    prev_action: Vec<f64>,
    prev_prev_action: Vec<f64>,
    /// Forward position at spawn, for distance bookkeeping.
    spawn_x: f64,
    obs_rng: ChaCha8Rng,
    command_rng: ChaCha8Rng,
    param_rng: ChaCha8Rng,
    curriculum_rng: ChaCha8Rng,
    terrain_rng: ChaCha8Rng,
}

/// A fixed-size set of walker environments stepped by index.
pub struct EnvPool {
    cfg: PoolConfig,
    phase: TrainPhase,
    envs: Vec<WalkerEnv>,
    nominal: Vec<f64>,
    command_bound: f64,
    pub total_episodes: u64,
    pub total_faults: u64,
}

impl EnvPool {
    pub fn new(cfg: PoolConfig, master_seed: u64, phase: TrainPhase) -> Result<Self> {
        cfg.validate()?;
        let families = terrain_level_layout(0);
        let nominal = cfg.model.nominal_joints();
        let mut envs = Vec::with_capacity(cfg.num_envs);
        for i in 0..cfg.num_envs {
            let idx = i as u64;
            let mut curriculum_rng = derive_stream(master_seed, "curriculum", idx);
            let mut terrain_rng = derive_stream(master_seed, "terrain", idx);
            let mut param_rng = derive_stream(master_seed, "env-params", idx);
            let mut command_rng = derive_stream(master_seed, "command", idx);
            let mut obs_rng = derive_stream(master_seed, "obs-noise", idx);
            let sim_rng = derive_stream(master_seed, "sim", idx);

            let family = families[i % families.len()];
            let top = cfg.initial_max_level.min(cfg.terrain.max_level);
            let level = if cfg.terrain_mode == TerrainMode::Curriculum && top > 0 {
                curriculum_rng.gen_range(0..=top)
            } else {
                0
            };
            let field = match cfg.terrain_mode {
                TerrainMode::Flat => Heightfield::flat(&cfg.terrain, 0.0),
                TerrainMode::Curriculum => {
                    generate_terrain(&cfg.terrain, family, level, terrain_rng.gen())?
                }
            };
            let params = randomize_env(&cfg.model, &cfg.sim, &cfg.randomization, &mut param_rng);
            let sim = Simulator::new(cfg.model.clone(), cfg.sim.clone(), params, field, sim_rng);

            let command = sample_command(&mut command_rng, cfg.command_bound);
            let zero = vec![0.0; NUM_JOINTS];
            let (frame, sensed) = build_frames(&sim, &cfg, command, &zero, &zero)?;
            let noisy = add_proprio_noise(&sensed, &cfg.layout, &cfg.noise, &mut obs_rng);
            let mut stack = FrameStack::new(
                cfg.stacks.actor_frames,
                cfg.stacks.state_frames,
                cfg.stacks.disc_frames,
            );
            stack.reset(&noisy, &frame);

            envs.push(WalkerEnv {
                spawn_x: sim.state.base_pos.x,
                sim,
                stack,
                frame,
                curriculum: CurriculumState {
                    family,
                    level,
                    distance_traveled: 0.0,
                    commanded_distance: 0.0,
                },
                command,
                action: zero.clone(),
                prev_action: zero.clone(),
                prev_prev_action: zero,
                obs_rng,
                command_rng,
                param_rng,
                curriculum_rng,
                terrain_rng,
            });
        }
        Ok(Self {
            command_bound: cfg.command_bound,
            cfg,
            phase,
            envs,
            nominal,
            total_episodes: 0,
            total_faults: 0,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn config(&self) -> &PoolConfig {
        &self.cfg
    }

    pub fn phase(&self) -> TrainPhase {
        self.phase
    }

    /// Applies `action` to environment `i` and advances one control step.
    /// In the student phase the caller supplies the discriminator logit for
    /// (state history, action); the teacher phase passes `None`. The episode
    /// auto-resets on termination, so the next observation read always
    /// belongs to a live episode.
    pub fn step(&mut self, i: usize, action: &[f64], disc_logit: Option<f64>) -> Result<StepOutcome> {
        let env = &mut self.envs[i];
        let a_t = action.to_vec();
        let term = env.sim.step(&a_t)?;

        if env.sim.state.fault {
            // The state is not finite: skip reward and observation assembly
            // entirely and hand back a fresh episode.
            self.total_faults += 1;
            self.finish_episode(i)?;
            return Ok(StepOutcome {
                reward: RewardBreakdown {
                    terms: Vec::new(),
                    total: 0.0,
                },
                done: true,
                termination: Termination::Fallen,
                fault: true,
                timeout_critic_obs: None,
                tracking_error: 0.0,
                positive_power: 0.0,
            });
        }

        // Reward of the state the step produced.
        let mut body_forces = [0.0; 3];
        for c in env.sim.contact_forces() {
            match c.body {
                ContactBody::Base => body_forces[0] += c.normal,
                ContactBody::Knee(k) => body_forces[1 + k] += c.normal,
                ContactBody::Foot(_) => {}
            }
        }
        let t_now = env.sim.state.time;
        let swing = [
            self.cfg.gait.swing_phase(t_now, 0),
            self.cfg.gait.swing_phase(t_now, 1),
        ];
        let mask = self.cfg.gait.mask(t_now);
        let base_height = env.sim.base_height();
        let clearance = env.sim.foot_clearance();
        let s = &env.sim.state;
        let measured = [
            f64::from(u8::from(s.foot_contact[0])),
            f64::from(u8::from(s.foot_contact[1])),
        ];
        let inputs = RewardInputs {
            euler: [0.0, s.base_pitch, 0.0],
            joint_pos: &s.q,
            nominal_pos: &self.nominal,
            base_height,
            linear_velocity: [s.base_vel.x, 0.0, s.base_vel.z],
            angular_velocity: [0.0, s.pitch_rate, 0.0],
            command: env.command,
            foot_force: s.foot_force,
            commanded_mask: mask,
            measured_contact: measured,
            swing_phase: swing,
            foot_clearance: clearance,
            body_forces: &body_forces,
            action: &a_t,
            prev_action: &env.action,
            prev_prev_action: &env.prev_action,
            joint_acc: &s.qdd,
            joint_torque: &s.applied_torque,
            joint_vel: &s.qd,
            disc_logit,
        };
        let reward = total_reward(&inputs, &self.cfg.rewards, self.phase)?;
        let tracking_error = f64::hypot(env.command[0] - s.base_vel.x, env.command[1]);
        let positive_power: f64 = s
            .applied_torque
            .iter()
            .zip(&s.qd)
            .map(|(t, v)| (t * v).max(0.0))
            .sum();

        // Post-step observation frame.
        let (frame, sensed) = build_frames(&env.sim, &self.cfg, env.command, &a_t, &env.action)?;
        let noisy = add_proprio_noise(&sensed, &self.cfg.layout, &self.cfg.noise, &mut env.obs_rng);
        env.stack.push(&noisy, &frame);
        env.frame = frame;
        env.prev_prev_action = mem::replace(&mut env.prev_action, mem::replace(&mut env.action, a_t));

        let (done, timeout_critic_obs) = match term {
            Termination::Running => (false, None),
            Termination::Fallen => (true, None),
            Termination::Timeout => (
                true,
                Some(env.stack.stacked_state(self.cfg.stacks.state_frames)),
            ),
        };
        if done {
            self.finish_episode(i)?;
        }
        Ok(StepOutcome {
            reward,
            done,
            termination: term,
            fault: false,
            timeout_critic_obs,
            tracking_error,
            positive_power,
        })
    }

    /// Episode rollover: curriculum update, fresh terrain/parameters/command,
    /// respawn, and stack refill.
    fn finish_episode(&mut self, i: usize) -> Result<()> {
        let cfg = &self.cfg;
        let env = &mut self.envs[i];
        let traveled = (env.sim.state.base_pos.x - env.spawn_x) * env.command[0].signum();
        let commanded = env.command[0].abs() * cfg.sim.episode_length;
        if cfg.terrain_mode == TerrainMode::Curriculum {
            env.curriculum.distance_traveled = traveled;
            env.curriculum.commanded_distance = commanded;
            let level = curriculum_update(&env.curriculum, &cfg.curriculum, &mut env.curriculum_rng);
            env.curriculum.level = level;
            let field =
                generate_terrain(&cfg.terrain, env.curriculum.family, level, env.terrain_rng.gen())?;
            env.sim.set_terrain(field);
        }
        env.sim.params = randomize_env(&cfg.model, &cfg.sim, &cfg.randomization, &mut env.param_rng);
        env.command = sample_command(&mut env.command_rng, self.command_bound);
        env.sim.reset();
        env.spawn_x = env.sim.state.base_pos.x;
        env.action = vec![0.0; NUM_JOINTS];
        env.prev_action = vec![0.0; NUM_JOINTS];
        env.prev_prev_action = vec![0.0; NUM_JOINTS];
        let (frame, sensed) = build_frames(&env.sim, cfg, env.command, &env.action, &env.prev_action)?;
        let noisy = add_proprio_noise(&sensed, &cfg.layout, &cfg.noise, &mut env.obs_rng);
        env.stack.reset(&noisy, &frame);
        env.frame = frame;
        self.total_episodes += 1;
        Ok(())
    }

    /// Teacher actor input: stacked noisy proprio plus stacked privileged.
    pub fn teacher_actor_obs(&self, i: usize) -> Vec<f64> {
        let env = &self.envs[i];
        let mut v = env.stack.stacked_proprio();
        v.extend(env.stack.stacked_privileged());
        v
    }

    /// Student actor input: stacked noisy proprio only.
    pub fn student_actor_obs(&self, i: usize) -> Vec<f64> {
        self.envs[i].stack.stacked_proprio()
    }

    /// Frozen-teacher query input: stacked noise-free proprio plus stacked
    /// privileged, for distillation at student-visited states.
    pub fn teacher_query_obs(&self, i: usize) -> Vec<f64> {
        let env = &self.envs[i];
        let mut v = env.stack.stacked_clean_proprio();
        v.extend(env.stack.stacked_privileged());
        v
    }

    /// Critic input: the last M state frames.
    pub fn critic_obs(&self, i: usize) -> Vec<f64> {
        self.envs[i].stack.stacked_state(self.cfg.stacks.state_frames)
    }

    /// Discriminator state history: the last S state frames (the action is
    /// appended by the caller).
    pub fn disc_state_obs(&self, i: usize) -> Vec<f64> {
        self.envs[i].stack.stacked_state(self.cfg.stacks.disc_frames)
    }

    /// Auxiliary regression target at the newest frame.
    pub fn aux_target(&self, i: usize) -> &[f64] {
        &self.envs[i].frame.aux
    }

    /// Newest noise-free observation frame.
    pub fn latest_frame(&self, i: usize) -> &ObservationFrame {
        &self.envs[i].frame
    }

    pub fn command(&self, i: usize) -> [f64; 3] {
        self.envs[i].command
    }

    pub fn level(&self, i: usize) -> u32 {
        self.envs[i].curriculum.level
    }

    pub fn mean_level(&self) -> f64 {
        let sum: f64 = self.envs.iter().map(|e| f64::from(e.curriculum.level)).sum();
        sum / self.envs.len() as f64
    }

    pub fn sim(&self, i: usize) -> &Simulator {
        &self.envs[i].sim
    }

    pub(crate) fn sim_mut(&mut self, i: usize) -> &mut Simulator {
        &mut self.envs[i].sim
    }

    pub fn command_bound(&self) -> f64 {
        self.command_bound
    }

    /// Widens (or narrows) the command draw for future episodes.
    pub fn set_command_bound(&mut self, bound: f64) {
        self.command_bound = bound.max(0.0);
    }
}

fn sample_command(rng: &mut ChaCha8Rng, bound: f64) -> [f64; 3] {
    let vx = if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    };
    // The planar walker has no lateral or yaw freedom; those channels stay
    // zero and the policy learns they carry no signal.
    [vx, 0.0, 0.0]
}

/// Assembles the noise-free frame and the sensed (lag-applied) proprio view
/// of the simulator's current state. Sensor noise is added by the caller.
fn build_frames(
    sim: &Simulator,
    cfg: &PoolConfig,
    command: [f64; 3],
    action: &[f64],
    prev_action: &[f64],
) -> Result<(ObservationFrame, Vec<f64>)> {
    let s = &sim.state;
    let scan = scan_height_map(
        &sim.terrain,
        s.base_pos.x,
        sim.plane_y,
        s.base_pos.z,
        0.0,
        &cfg.scan,
    );
    let push_linear = [s.last_push[0], 0.0];
    let push_angular = [0.0, s.last_push[2], 0.0];
    let body_mass = sim.params.dynamic_mass(&sim.model);
    let clean = assemble_frame(
        &FrameInputs {
            time: s.time,
            command,
            action,
            prev_action,
            joint_pos: &s.q,
            joint_vel: &s.qd,
            angular_velocity: [0.0, s.pitch_rate, 0.0],
            euler: [0.0, s.base_pitch, 0.0],
            linear_velocity: [s.base_vel.x, 0.0, s.base_vel.z],
            friction: sim.params.friction,
            foot_contact: s.foot_contact,
            push_linear,
            push_angular,
            body_mass,
            scan: &scan,
        },
        &cfg.layout,
        &cfg.gait,
    )?;
    // The sensed view reads every sensor through its own delay line; only
    // its proprio block is used (noise is layered on top by the caller).
    let (q_m, qd_m, _, _) = sim.lagged_sensors(sim.params.motor_obs_lag);
    let (_, _, imu_rate, imu_pitch) = sim.lagged_sensors(sim.params.imu_obs_lag);
    let lagged_action = sim.lagged_action(sim.params.action_obs_lag);
    let sensed = assemble_frame(
        &FrameInputs {
            time: s.time,
            command,
            action: &lagged_action,
            prev_action,
            joint_pos: q_m,
            joint_vel: qd_m,
            angular_velocity: [0.0, imu_rate, 0.0],
            euler: [0.0, imu_pitch, 0.0],
            linear_velocity: [s.base_vel.x, 0.0, s.base_vel.z],
            friction: sim.params.friction,
            foot_contact: s.foot_contact,
            push_linear,
            push_angular,
            body_mass,
            scan: &scan,
        },
        &cfg.layout,
        &cfg.gait,
    )?;
    Ok((clean, sensed.proprio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::VectorKind;

    fn tiny_cfg() -> PoolConfig {
        let mut cfg = PoolConfig::default();
        cfg.num_envs = 2;
        cfg.terrain_mode = TerrainMode::Flat;
        // Small blocks keep terrain generation cheap in tests.
        cfg.terrain.block_size_x = 4.0;
        cfg.terrain.block_size_y = 4.0;
        cfg
    }

    #[test]
    fn observation_views_have_documented_lengths() {
        let cfg = tiny_cfg();
        let pool = EnvPool::new(cfg.clone(), 7, TrainPhase::Teacher).unwrap();
        assert_eq!(cfg.layout.proprio_dim(), 29);
        assert_eq!(cfg.layout.privileged_dim(), 75);
        assert_eq!(cfg.layout.state_dim(), 104);
        assert_eq!(pool.teacher_actor_obs(0).len(), 15 * 29 + 3 * 75);
        assert_eq!(pool.teacher_actor_obs(0).len(), cfg.teacher_actor_input_dim());
        assert_eq!(pool.student_actor_obs(0).len(), 15 * 29);
        assert_eq!(pool.critic_obs(0).len(), 3 * 104);
        assert_eq!(pool.disc_state_obs(0).len(), 10 * 104);
        assert_eq!(cfg.disc_input_dim(), 10 * 104 + 6);
        assert_eq!(pool.teacher_query_obs(0).len(), cfg.teacher_actor_input_dim());
        assert_eq!(pool.aux_target(0).len(), 30);
    }

    #[test]
    fn identical_seeds_reproduce_identical_trajectories() {
        let mut cfg = tiny_cfg();
        // Short episodes force auto-resets inside the window under test.
        cfg.sim.episode_length = 0.05;
        cfg.randomization.enabled = true;
        let mut a = EnvPool::new(cfg.clone(), 99, TrainPhase::Teacher).unwrap();
        let mut b = EnvPool::new(cfg, 99, TrainPhase::Teacher).unwrap();
        for t in 0..12 {
            for i in 0..a.num_envs() {
                let action: Vec<f64> = (0..NUM_JOINTS)
                    .map(|j| 0.05 * ((t as f64) * 0.3 + j as f64).sin())
                    .collect();
                let oa = a.step(i, &action, None).unwrap();
                let ob = b.step(i, &action, None).unwrap();
                assert_eq!(oa.reward.total.to_bits(), ob.reward.total.to_bits());
                assert_eq!(oa.done, ob.done);
                let va = a.teacher_actor_obs(i);
                let vb = b.teacher_actor_obs(i);
                assert_eq!(va.len(), vb.len());
                for (x, y) in va.iter().zip(&vb) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
        assert_eq!(a.total_episodes, b.total_episodes);
        assert!(a.total_episodes >= 4, "short episodes should have rolled over");
    }

    #[test]
    fn timeout_reports_bootstrap_observation() {
        let mut cfg = tiny_cfg();
        cfg.sim.episode_length = 0.03;
        let mut pool = EnvPool::new(cfg.clone(), 3, TrainPhase::Teacher).unwrap();
        let zero = vec![0.0; NUM_JOINTS];
        let mut saw_timeout = false;
        for _ in 0..3 {
            let out = pool.step(0, &zero, None).unwrap();
            if out.done {
                assert_eq!(out.termination, Termination::Timeout);
                let obs = out.timeout_critic_obs.expect("timeout carries critic obs");
                assert_eq!(obs.len(), cfg.critic_input_dim());
                assert!(obs.iter().all(|v| v.is_finite()));
                saw_timeout = true;
            }
        }
        assert!(saw_timeout);
        assert_eq!(pool.total_episodes, 1);
    }

    #[test]
    fn fall_reports_done_without_bootstrap() {
        let mut cfg = tiny_cfg();
        // A fall threshold above standing height trips immediately.
        cfg.sim.fall_height = 10.0;
        let mut pool = EnvPool::new(cfg, 3, TrainPhase::Teacher).unwrap();
        let out = pool.step(0, &vec![0.0; NUM_JOINTS], None).unwrap();
        assert!(out.done);
        assert_eq!(out.termination, Termination::Fallen);
        assert!(out.timeout_critic_obs.is_none());
        assert!(!out.fault);
    }

    #[test]
    fn fault_is_counted_and_resets_the_environment() {
        let mut pool = EnvPool::new(tiny_cfg(), 11, TrainPhase::Teacher).unwrap();
        pool.sim_mut(0).state.q[0] = f64::NAN;
        let out = pool.step(0, &vec![0.0; NUM_JOINTS], None).unwrap();
        assert!(out.fault);
        assert!(out.done);
        assert_eq!(out.reward.total, 0.0);
        assert_eq!(pool.total_faults, 1);
        // The replacement episode is live and finite.
        assert!(pool.teacher_actor_obs(0).iter().all(|v| v.is_finite()));
        let next = pool.step(0, &vec![0.0; NUM_JOINTS], None).unwrap();
        assert!(!next.fault);
        assert!(next.reward.total.is_finite());
    }

    #[test]
    fn episode_end_advances_curriculum_and_resamples_command() {
        let mut cfg = tiny_cfg();
        cfg.terrain_mode = TerrainMode::Curriculum;
        cfg.sim.episode_length = 0.02;
        // Promote on any outcome: a standing walker's progress ratio is a
        // hair either side of zero, so put the thresholds far below it.
        cfg.curriculum.promote_fraction = -10.0;
        cfg.curriculum.demote_fraction = -20.0;
        let mut pool = EnvPool::new(cfg, 5, TrainPhase::Teacher).unwrap();
        assert_eq!(pool.level(0), 0);
        let zero = vec![0.0; NUM_JOINTS];
        for _ in 0..4 {
            pool.step(0, &zero, None).unwrap();
        }
        // Two episodes ended: level climbed twice.
        assert_eq!(pool.level(0), 2);
        let cmd = pool.command(0);
        assert!(cmd[0].abs() <= pool.command_bound());
        assert_eq!(cmd[1], 0.0);
        assert_eq!(cmd[2], 0.0);
    }

    #[test]
    fn observation_frame_tracks_simulator_state() {
        let cfg = tiny_cfg();
        let mut pool = EnvPool::new(cfg.clone(), 21, TrainPhase::Teacher).unwrap();
        let action: Vec<f64> = (0..NUM_JOINTS).map(|j| 0.01 * (j as f64 + 1.0)).collect();
        pool.step(0, &action, None).unwrap();
        let frame = pool.latest_frame(0).clone();
        let manifest = cfg.layout.manifest(&cfg.noise);
        let row = |kind: VectorKind, name: &str| {
            manifest
                .iter()
                .find(|r| r.kind == kind && r.name == name)
                .unwrap()
                .clone()
        };
        let act = row(VectorKind::Proprio, "last_action");
        assert_eq!(
            &frame.proprio[act.offset..act.offset + act.width],
            action.as_slice()
        );
        let jp = row(VectorKind::Proprio, "joint_position");
        assert_eq!(
            &frame.proprio[jp.offset..jp.offset + jp.width],
            pool.sim(0).state.q.as_slice()
        );
        let cmd = row(VectorKind::Proprio, "command");
        assert_eq!(
            &frame.proprio[cmd.offset..cmd.offset + cmd.width],
            pool.command(0).as_slice()
        );
        // Flat ground: every scan entry equals the base's absolute height.
        let scan = row(VectorKind::Privileged, "height_map");
        let base_z = pool.sim(0).state.base_pos.z;
        for v in &frame.privileged[scan.offset..scan.offset + scan.width] {
            assert!((v - base_z).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_and_discriminator_logit_must_agree() {
        let mut teacher = EnvPool::new(tiny_cfg(), 2, TrainPhase::Teacher).unwrap();
        let zero = vec![0.0; NUM_JOINTS];
        assert!(teacher.step(0, &zero, Some(0.3)).is_err());
        let mut student = EnvPool::new(tiny_cfg(), 2, TrainPhase::Student).unwrap();
        assert!(student.step(0, &zero, None).is_err());
        assert!(student.step(0, &zero, Some(0.0)).is_ok());
    }

    #[test]
    fn tracking_error_and_power_match_direct_formulas() {
        let mut pool = EnvPool::new(tiny_cfg(), 17, TrainPhase::Teacher).unwrap();
        let out = pool.step(0, &vec![0.0; NUM_JOINTS], None).unwrap();
        let s = &pool.sim(0).state;
        let cmd = pool.command(0);
        let expect = ((cmd[0] - s.base_vel.x).powi(2)).sqrt();
        assert!((out.tracking_error - expect).abs() < 1e-12);
        let power: f64 = s
            .applied_torque
            .iter()
            .zip(&s.qd)
            .map(|(t, v)| (t * v).max(0.0))
            .sum();
        assert!((out.positive_power - power).abs() < 1e-12);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let mut cfg = tiny_cfg();
        cfg.scan.nx = 3;
        assert!(EnvPool::new(cfg, 1, TrainPhase::Teacher).is_err());
        let mut cfg = tiny_cfg();
        cfg.stacks.state_frames = 11;
        assert!(EnvPool::new(cfg, 1, TrainPhase::Teacher).is_err());
        let mut cfg = tiny_cfg();
        cfg.num_envs = 0;
        assert!(EnvPool::new(cfg, 1, TrainPhase::Teacher).is_err());
    }
}
