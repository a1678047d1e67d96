//! Observation assembly: the gait clock and its per-foot contact mask, frame
//! construction in a fixed row layout, Gaussian sensor noise on the
//! proprioceptive channel, and ring-buffer frame stacking.
//!
//! Three vectors are produced each control step:
//!
//! * **proprioceptive** — what a deployed robot can measure (clock, command,
//!   last actions, joint encoders, IMU);
//! * **privileged** — simulator-only signals for the teacher and critic
//!   (true velocities, friction, disturbances, terrain height samples);
//! * **auxiliary target** — the subset of rows the student's auxiliary head
//!   must reconstruct, always noise-free.
//!
//! All layouts are driven by [`ObsLayout`] so the same code serves the
//! six-joint desk walker and the full twelve-joint configuration.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::rng::normal;

/// Cyclic gait timing: one cycle holds two double-support (DS) windows and
/// two single-support (SS) windows, one per leg.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSchedule {
    /// Full cycle duration, seconds.
    pub cycle_time: f64,
    /// Fraction of each half-cycle spent in double support.
    pub ds_fraction: f64,
    /// Per-leg phase offset (cycle units); a leg swings when its local phase
    /// falls inside the swing window.
    pub phase_offset: [f64; 2],
}

impl Default for GaitSchedule {
    fn default() -> Self {
        Self {
            cycle_time: 0.7,
            ds_fraction: 0.1,
            // Leg 1 (right) swings first so the initial SS window reads [1, 0].
            phase_offset: [0.5, 0.0],
        }
    }
}

impl GaitSchedule {
    /// Cycle phase in [0, 1).
    pub fn phase(&self, t: f64) -> f64 {
        (t / self.cycle_time).rem_euclid(1.0)
    }

    /// Clock signal (sin, cos) of the cycle angle.
    pub fn clock(&self, t: f64) -> (f64, f64) {
        let angle = 2.0 * std::f64::consts::PI * self.phase(t);
        (angle.sin(), angle.cos())
    }

    /// Swing window for one leg in leg-local phase units: starts after the
    /// leading DS window and ends at the half-cycle boundary.
    fn swing_window(&self) -> (f64, f64) {
        (0.5 * self.ds_fraction, 0.5)
    }

    fn leg_phase(&self, t: f64, leg: usize) -> f64 {
        (self.phase(t) - self.phase_offset[leg]).rem_euclid(1.0)
    }

    /// Commanded contact mask: 1 = foot should be on the ground. [1,1] in
    /// double support, [1,0] / [0,1] in single support.
    pub fn mask(&self, t: f64) -> [f64; 2] {
        let mut mask = [1.0; 2];
        for (leg, entry) in mask.iter_mut().enumerate() {
            if self.swing_phase(t, leg).is_some() {
                *entry = 0.0;
            }
        }
        mask
    }

    /// Progress through the swing window in [0, 1], or `None` when the leg is
    /// in commanded stance.
    pub fn swing_phase(&self, t: f64, leg: usize) -> Option<f64> {
        let (start, end) = self.swing_window();
        let p = self.leg_phase(t, leg);
        if p >= start && p < end {
            Some((p - start) / (end - start))
        } else {
            None
        }
    }
}

/// Gait clock plus contact mask in one call.
pub fn gait_clock(t: f64, sched: &GaitSchedule) -> (f64, f64, [f64; 2]) {
    let (s, c) = sched.clock(t);
    let mask = sched.mask(t);
    (s, c, mask)
}

/// Dimension parameters for the observation layout. Joint-indexed rows carry
/// `num_joints` entries; the terrain scan carries `scan_points`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsLayout {
    pub num_joints: usize,
    pub scan_points: usize,
}

impl Default for ObsLayout {
    fn default() -> Self {
        // Desk walker: 6 joints, 11x5 terrain scan.
        Self {
            num_joints: 6,
            scan_points: 55,
        }
    }
}

impl ObsLayout {
    /// Twelve-joint configuration with the 187-point scan grid.
    pub fn full_scale() -> Self {
        Self {
            num_joints: 12,
            scan_points: 187,
        }
    }

    /// clock 2 + command 3 + last action J + joint pos J + joint vel J
    /// + angular velocity 3 + Euler angles 3.
    pub fn proprio_dim(&self) -> usize {
        2 + 3 + 3 * self.num_joints + 3 + 3
    }

    /// action difference J + linear velocity 3 + friction 1 + contact phase 2
    /// + disturbance force 2 + disturbance torque 3 + gait phase 2
    /// + body weight 1 + height map.
    pub fn privileged_dim(&self) -> usize {
        self.num_joints + 3 + 1 + 2 + 2 + 3 + 2 + 1 + self.scan_points
    }

    /// joint pos J + joint vel J + angular velocity 3 + Euler angles 3
    /// + action difference J + linear velocity 3 + friction 1 + contact phase 2.
    pub fn aux_dim(&self) -> usize {
        3 * self.num_joints + 12
    }

    /// Full state = proprioceptive ++ privileged.
    pub fn state_dim(&self) -> usize {
        self.proprio_dim() + self.privileged_dim()
    }

    /// Machine-readable layout rows for every vector.
    pub fn manifest(&self, scales: &NoiseScales) -> Vec<LayoutRow> {
        let j = self.num_joints;
        let mut rows = Vec::new();
        let mut push = |kind: VectorKind, name: &'static str, width: usize, noise: f64| {
            let offset = rows
                .iter()
                .filter(|r: &&LayoutRow| r.kind == kind)
                .map(|r| r.width)
                .sum();
            rows.push(LayoutRow {
                kind,
                name,
                offset,
                width,
                noise,
            });
        };
        use VectorKind::*;
        push(Proprio, "clock", 2, 0.0);
        push(Proprio, "command", 3, 0.0);
        push(Proprio, "last_action", j, scales.last_action);
        push(Proprio, "joint_position", j, scales.joint_pos);
        push(Proprio, "joint_velocity", j, scales.joint_vel);
        push(Proprio, "angular_velocity", 3, scales.ang_vel);
        push(Proprio, "euler_angles", 3, scales.euler);
        push(Privileged, "action_difference", j, 0.0);
        push(Privileged, "linear_velocity", 3, 0.0);
        push(Privileged, "friction", 1, 0.0);
        push(Privileged, "contact_phase", 2, 0.0);
        push(Privileged, "disturbance_force", 2, 0.0);
        push(Privileged, "disturbance_torque", 3, 0.0);
        push(Privileged, "gait_phase", 2, 0.0);
        push(Privileged, "body_weight", 1, 0.0);
        push(Privileged, "height_map", self.scan_points, 0.0);
        push(Aux, "joint_position", j, 0.0);
        push(Aux, "joint_velocity", j, 0.0);
        push(Aux, "angular_velocity", 3, 0.0);
        push(Aux, "euler_angles", 3, 0.0);
        push(Aux, "action_difference", j, 0.0);
        push(Aux, "linear_velocity", 3, 0.0);
        push(Aux, "friction", 1, 0.0);
        push(Aux, "contact_phase", 2, 0.0);
        rows
    }

    /// Tab-separated manifest (kind, name, offset, width, noise scale), one
    /// row per line, for harness consumption.
    pub fn manifest_text(&self, scales: &NoiseScales) -> String {
        let mut out = String::from("kind\tname\toffset\twidth\tnoise\n");
        for row in self.manifest(scales) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                row.kind.label(),
                row.name,
                row.offset,
                row.width,
                row.noise
            ));
        }
        out
    }
}

/// Which vector a layout row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    Proprio,
    Privileged,
    Aux,
}

impl VectorKind {
    pub fn label(&self) -> &'static str {
        match self {
            VectorKind::Proprio => "proprio",
            VectorKind::Privileged => "privileged",
            VectorKind::Aux => "aux",
        }
    }
}

/// One named block in an observation vector.
#[derive(Debug, Clone)]
pub struct LayoutRow {
    pub kind: VectorKind,
    pub name: &'static str,
    pub offset: usize,
    pub width: usize,
    /// Gaussian noise standard deviation applied to this block (proprio only).
    pub noise: f64,
}

/// Per-block Gaussian noise standard deviations for the proprioceptive
/// vector. Clock and command entries are never perturbed: they are generated
/// by the controller itself, not measured.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScales {
    pub last_action: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub ang_vel: f64,
    pub euler: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            // The action memory is the controller's own output, replayed
            // exactly; encoders and the IMU carry measurement noise.
            last_action: 0.0,
            joint_pos: 0.01,
            joint_vel: 0.1,
            ang_vel: 0.05,
            euler: 0.02,
        }
    }
}

impl NoiseScales {
    pub fn zero() -> Self {
        Self {
            last_action: 0.0,
            joint_pos: 0.0,
            joint_vel: 0.0,
            ang_vel: 0.0,
            euler: 0.0,
        }
    }
}

/// Everything a frame is assembled from. Sensor lags are the caller's
/// concern: pass lagged joint/IMU/action views here and the assembly stays a
/// pure function.
#[derive(Debug, Clone)]
pub struct FrameInputs<'a> {
    /// Gait time driving the clock, seconds.
    pub time: f64,
    /// Velocity command (forward, lateral, turn rate).
    pub command: [f64; 3],
    /// Action currently in effect, a_t.
    pub action: &'a [f64],
    /// Previous action a_{t-1}, for the action-difference row.
    pub prev_action: &'a [f64],
    pub joint_pos: &'a [f64],
    pub joint_vel: &'a [f64],
    /// Angular velocity about (roll, pitch, yaw).
    pub angular_velocity: [f64; 3],
    /// Orientation as (roll, pitch, yaw).
    pub euler: [f64; 3],
    /// True base linear velocity (x, y, z).
    pub linear_velocity: [f64; 3],
    /// Ground friction coefficient in effect.
    pub friction: f64,
    /// Measured per-foot contact indicator.
    pub foot_contact: [bool; 2],
    /// Most recent push, velocity units: (dvx, dvy) and (droll, dpitch, dyaw).
    pub push_linear: [f64; 2],
    pub push_angular: [f64; 3],
    /// Total mass in effect, kg.
    pub body_mass: f64,
    /// Terrain scan: base height minus ground height per grid point.
    pub scan: &'a [f64],
}

/// One control step's observation vectors. All entries are noise-free; the
/// noisy actor view is produced separately by [`add_proprio_noise`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub proprio: Vec<f64>,
    pub privileged: Vec<f64>,
    pub aux: Vec<f64>,
}

impl ObservationFrame {
    /// Full state vector: proprio ++ privileged.
    pub fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.proprio.len() + self.privileged.len());
        s.extend_from_slice(&self.proprio);
        s.extend_from_slice(&self.privileged);
        s
    }
}

/// Builds the three observation vectors in the fixed row layout.
pub fn assemble_frame(
    inputs: &FrameInputs,
    layout: &ObsLayout,
    sched: &GaitSchedule,
) -> Result<ObservationFrame> {
    let j = layout.num_joints;
    for (name, len) in [
        ("action", inputs.action.len()),
        ("prev_action", inputs.prev_action.len()),
        ("joint_pos", inputs.joint_pos.len()),
        ("joint_vel", inputs.joint_vel.len()),
    ] {
        if len != j {
            return Err(Error::DimensionMismatch {
                context: name,
                expected: j,
                actual: len,
            });
        }
    }
    if inputs.scan.len() != layout.scan_points {
        return Err(Error::DimensionMismatch {
            context: "terrain scan",
            expected: layout.scan_points,
            actual: inputs.scan.len(),
        });
    }

    let (sin, cos, commanded_mask) = gait_clock(inputs.time, sched);
    let action_diff: Vec<f64> = inputs
        .action
        .iter()
        .zip(inputs.prev_action)
        .map(|(a, p)| a - p)
        .collect();
    let measured_contact = [
        f64::from(u8::from(inputs.foot_contact[0])),
        f64::from(u8::from(inputs.foot_contact[1])),
    ];

    let mut proprio = Vec::with_capacity(layout.proprio_dim());
    proprio.extend_from_slice(&[sin, cos]);
    proprio.extend_from_slice(&inputs.command);
    proprio.extend_from_slice(inputs.action);
    proprio.extend_from_slice(inputs.joint_pos);
    proprio.extend_from_slice(inputs.joint_vel);
    proprio.extend_from_slice(&inputs.angular_velocity);
    proprio.extend_from_slice(&inputs.euler);

    let mut privileged = Vec::with_capacity(layout.privileged_dim());
    privileged.extend_from_slice(&action_diff);
    privileged.extend_from_slice(&inputs.linear_velocity);
    privileged.push(inputs.friction);
    privileged.extend_from_slice(&measured_contact);
    privileged.extend_from_slice(&inputs.push_linear);
    privileged.extend_from_slice(&inputs.push_angular);
    privileged.extend_from_slice(&commanded_mask);
    privileged.push(inputs.body_mass);
    privileged.extend_from_slice(inputs.scan);

    let mut aux = Vec::with_capacity(layout.aux_dim());
    aux.extend_from_slice(inputs.joint_pos);
    aux.extend_from_slice(inputs.joint_vel);
    aux.extend_from_slice(&inputs.angular_velocity);
    aux.extend_from_slice(&inputs.euler);
    aux.extend_from_slice(&action_diff);
    aux.extend_from_slice(&inputs.linear_velocity);
    aux.push(inputs.friction);
    aux.extend_from_slice(&measured_contact);

    debug_assert_eq!(proprio.len(), layout.proprio_dim());
    debug_assert_eq!(privileged.len(), layout.privileged_dim());
    debug_assert_eq!(aux.len(), layout.aux_dim());
    Ok(ObservationFrame {
        proprio,
        privileged,
        aux,
    })
}

/// Actor-side proprioception: adds zero-mean Gaussian noise per block. Clock
/// and command entries pass through untouched.
pub fn add_proprio_noise(
    proprio: &[f64],
    layout: &ObsLayout,
    scales: &NoiseScales,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = proprio.to_vec();
    for row in layout.manifest(scales) {
        if row.kind != VectorKind::Proprio || row.noise == 0.0 {
            continue;
        }
        for v in &mut out[row.offset..row.offset + row.width] {
            *v += row.noise * normal(rng);
        }
    }
    out
}

/// Ring buffers holding the recent observation history: N noisy
/// proprioceptive frames for the actors, M privileged frames for the teacher
/// actor, and S full-state frames serving both the critic (last M) and the
/// discriminator (last S).
#[derive(Debug, Clone)]
pub struct FrameStack {
    n_proprio: usize,
    m_privileged: usize,
    s_state: usize,
    proprio: VecDeque<Vec<f64>>,
    clean_proprio: VecDeque<Vec<f64>>,
    privileged: VecDeque<Vec<f64>>,
    state: VecDeque<Vec<f64>>,
}

impl FrameStack {
    pub fn new(n_proprio: usize, m_privileged: usize, s_state: usize) -> Self {
        Self {
            n_proprio,
            m_privileged,
            s_state,
            proprio: VecDeque::with_capacity(n_proprio),
            clean_proprio: VecDeque::with_capacity(n_proprio),
            privileged: VecDeque::with_capacity(m_privileged),
            state: VecDeque::with_capacity(s_state),
        }
    }

    /// Episode start: every buffer is filled with copies of the first frame.
    pub fn reset(&mut self, noisy_proprio: &[f64], frame: &ObservationFrame) {
        self.proprio.clear();
        self.clean_proprio.clear();
        self.privileged.clear();
        self.state.clear();
        for _ in 0..self.n_proprio {
            self.proprio.push_back(noisy_proprio.to_vec());
            self.clean_proprio.push_back(frame.proprio.clone());
        }
        for _ in 0..self.m_privileged {
            self.privileged.push_back(frame.privileged.clone());
        }
        let state = frame.state();
        for _ in 0..self.s_state {
            self.state.push_back(state.clone());
        }
    }

    /// Appends the newest frame, evicting the oldest.
    pub fn push(&mut self, noisy_proprio: &[f64], frame: &ObservationFrame) {
        Self::rotate(&mut self.proprio, noisy_proprio.to_vec(), self.n_proprio);
        Self::rotate(
            &mut self.clean_proprio,
            frame.proprio.clone(),
            self.n_proprio,
        );
        Self::rotate(
            &mut self.privileged,
            frame.privileged.clone(),
            self.m_privileged,
        );
        Self::rotate(&mut self.state, frame.state(), self.s_state);
    }

    fn rotate(buf: &mut VecDeque<Vec<f64>>, frame: Vec<f64>, cap: usize) {
        if buf.len() == cap {
            buf.pop_front();
        }
        buf.push_back(frame);
    }

    /// N noisy proprioceptive frames, oldest first, newest last.
    pub fn stacked_proprio(&self) -> Vec<f64> {
        Self::concat(&self.proprio)
    }

    /// N noise-free proprioceptive frames, oldest first. Used when the
    /// frozen teacher is queried without a sensor-noise draw.
    pub fn stacked_clean_proprio(&self) -> Vec<f64> {
        Self::concat(&self.clean_proprio)
    }

    /// M privileged frames, oldest first, newest last.
    pub fn stacked_privileged(&self) -> Vec<f64> {
        Self::concat(&self.privileged)
    }

    /// The last `frames` state frames (`frames` <= S), oldest first. The
    /// critic reads M frames, the discriminator all S.
    pub fn stacked_state(&self, frames: usize) -> Vec<f64> {
        let skip = self.state.len().saturating_sub(frames);
        self.state
            .iter()
            .skip(skip)
            .flat_map(|f| f.iter().copied())
            .collect()
    }

    fn concat(buf: &VecDeque<Vec<f64>>) -> Vec<f64> {
        buf.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn default_sched() -> GaitSchedule {
        GaitSchedule::default()
    }

    fn sample_inputs<'a>(
        action: &'a [f64],
        prev: &'a [f64],
        q: &'a [f64],
        qd: &'a [f64],
        scan: &'a [f64],
    ) -> FrameInputs<'a> {
        FrameInputs {
            time: 0.0,
            command: [0.5, 0.0, 0.0],
            action,
            prev_action: prev,
            joint_pos: q,
            joint_vel: qd,
            angular_velocity: [0.0, 0.25, 0.0],
            euler: [0.0, -0.05, 0.0],
            linear_velocity: [0.45, 0.0, -0.01],
            friction: 0.9,
            foot_contact: [true, false],
            push_linear: [0.3, 0.0],
            push_angular: [0.0, -0.2, 0.0],
            body_mass: 30.0,
            scan,
        }
    }

    #[test]
    fn clock_starts_in_double_support() {
        let sched = default_sched();
        let (s, c, mask) = gait_clock(0.0, &sched);
        assert_eq!(s, 0.0);
        assert_eq!(c, 1.0);
        assert_eq!(mask, [1.0, 1.0]);
    }

    #[test]
    fn clock_is_periodic_over_one_cycle() {
        let sched = default_sched();
        let (s0, c0, m0) = gait_clock(0.0, &sched);
        let (s1, c1, m1) = gait_clock(sched.cycle_time, &sched);
        assert!((s0 - s1).abs() < 1e-12);
        assert!((c0 - c1).abs() < 1e-12);
        assert_eq!(m0, m1);
    }

    #[test]
    fn first_single_support_window_keeps_left_foot_down() {
        let sched = default_sched();
        // Midpoint of the first SS window: between the end of the leading DS
        // window (0.035 s) and the half cycle (0.35 s).
        let t = 0.5 * (0.035 + 0.35);
        assert_eq!(sched.mask(t), [1.0, 0.0]);
        // Second SS window mirrors it.
        assert_eq!(sched.mask(t + 0.35), [0.0, 1.0]);
    }

    #[test]
    fn mask_duty_cycle_matches_ds_fraction() {
        let sched = default_sched();
        let steps = 70_000;
        let ds_steps = (0..steps)
            .filter(|i| sched.mask(*i as f64 / steps as f64 * sched.cycle_time) == [1.0, 1.0])
            .count();
        let measured = ds_steps as f64 / steps as f64;
        // Within one 10 ms control step of the configured fraction.
        assert!(
            (measured - sched.ds_fraction).abs() < 0.01 / sched.cycle_time,
            "duty cycle {measured}"
        );
    }

    #[test]
    fn swing_phase_agrees_with_mask_and_spans_unit_interval() {
        let sched = default_sched();
        let mut seen_low = [false; 2];
        let mut seen_high = [false; 2];
        for i in 0..7000 {
            let t = i as f64 * 1e-4;
            let mask = sched.mask(t);
            for leg in 0..2 {
                match sched.swing_phase(t, leg) {
                    Some(p) => {
                        assert_eq!(mask[leg], 0.0);
                        assert!((0.0..=1.0).contains(&p));
                        if p < 0.01 {
                            seen_low[leg] = true;
                        }
                        if p > 0.99 {
                            seen_high[leg] = true;
                        }
                    }
                    None => assert_eq!(mask[leg], 1.0),
                }
            }
        }
        assert_eq!(seen_low, [true; 2]);
        assert_eq!(seen_high, [true; 2]);
    }

    #[test]
    fn desk_layout_dimensions() {
        let layout = ObsLayout::default();
        assert_eq!(layout.proprio_dim(), 29);
        assert_eq!(layout.privileged_dim(), 75);
        assert_eq!(layout.aux_dim(), 30);
        assert_eq!(layout.state_dim(), 104);
    }

    #[test]
    fn full_scale_layout_dimensions() {
        let layout = ObsLayout::full_scale();
        assert_eq!(layout.proprio_dim(), 47);
        assert_eq!(layout.privileged_dim(), 213);
        assert_eq!(layout.aux_dim(), 48);
        assert_eq!(layout.state_dim(), 260);
    }

    #[test]
    fn manifest_rows_tile_each_vector_exactly() {
        for layout in [ObsLayout::default(), ObsLayout::full_scale()] {
            let rows = layout.manifest(&NoiseScales::default());
            for (kind, dim) in [
                (VectorKind::Proprio, layout.proprio_dim()),
                (VectorKind::Privileged, layout.privileged_dim()),
                (VectorKind::Aux, layout.aux_dim()),
            ] {
                let mut cursor = 0;
                for row in rows.iter().filter(|r| r.kind == kind) {
                    assert_eq!(row.offset, cursor, "{} {}", kind.label(), row.name);
                    cursor += row.width;
                }
                assert_eq!(cursor, dim, "{}", kind.label());
            }
        }
    }

    #[test]
    fn manifest_text_lists_every_row() {
        let layout = ObsLayout::default();
        let scales = NoiseScales::default();
        let text = layout.manifest_text(&scales);
        assert_eq!(text.lines().count(), 1 + layout.manifest(&scales).len());
        assert!(text.contains("proprio\tjoint_position\t11\t6\t0.01"));
        assert!(text.contains("privileged\theight_map\t20\t55\t0"));
    }

    #[test]
    fn frame_rows_land_at_manifest_offsets() {
        let layout = ObsLayout::default();
        let sched = default_sched();
        let action = [0.11; 6];
        let prev = [0.01; 6];
        let q = [0.2; 6];
        let qd = [-0.3; 6];
        let scan: Vec<f64> = (0..55).map(|i| 0.8 + i as f64 * 1e-3).collect();
        let inputs = sample_inputs(&action, &prev, &q, &qd, &scan);
        let frame = assemble_frame(&inputs, &layout, &sched).unwrap();

        let find = |kind: VectorKind, name: &str| {
            layout
                .manifest(&NoiseScales::default())
                .into_iter()
                .find(|r| r.kind == kind && r.name == name)
                .unwrap()
        };

        let cmd = find(VectorKind::Proprio, "command");
        assert_eq!(&frame.proprio[cmd.offset..cmd.offset + cmd.width], &inputs.command);
        let jp = find(VectorKind::Proprio, "joint_position");
        assert_eq!(&frame.proprio[jp.offset..jp.offset + jp.width], &q);
        let eul = find(VectorKind::Proprio, "euler_angles");
        assert_eq!(&frame.proprio[eul.offset..eul.offset + eul.width], &inputs.euler);

        let diff = find(VectorKind::Privileged, "action_difference");
        assert!(frame.privileged[diff.offset..diff.offset + diff.width]
            .iter()
            .all(|v| (v - 0.10).abs() < 1e-12));
        let fric = find(VectorKind::Privileged, "friction");
        assert_eq!(frame.privileged[fric.offset], 0.9);
        let contact = find(VectorKind::Privileged, "contact_phase");
        assert_eq!(
            &frame.privileged[contact.offset..contact.offset + contact.width],
            &[1.0, 0.0]
        );
        let gait = find(VectorKind::Privileged, "gait_phase");
        assert_eq!(
            &frame.privileged[gait.offset..gait.offset + gait.width],
            &sched.mask(inputs.time)
        );
        let weight = find(VectorKind::Privileged, "body_weight");
        assert_eq!(frame.privileged[weight.offset], 30.0);
        let map = find(VectorKind::Privileged, "height_map");
        assert_eq!(&frame.privileged[map.offset..map.offset + map.width], &scan[..]);

        let aux_jp = find(VectorKind::Aux, "joint_position");
        assert_eq!(&frame.aux[aux_jp.offset..aux_jp.offset + aux_jp.width], &q);
        let aux_contact = find(VectorKind::Aux, "contact_phase");
        assert_eq!(
            &frame.aux[aux_contact.offset..aux_contact.offset + aux_contact.width],
            &[1.0, 0.0]
        );
    }

    #[test]
    fn state_concatenates_proprio_then_privileged() {
        let layout = ObsLayout::default();
        let action = [0.0; 6];
        let q = [0.1; 6];
        let qd = [0.0; 6];
        let scan = [0.85; 55];
        let inputs = sample_inputs(&action, &action, &q, &qd, &scan);
        let frame = assemble_frame(&inputs, &layout, &default_sched()).unwrap();
        let state = frame.state();
        assert_eq!(state.len(), layout.state_dim());
        assert_eq!(&state[..29], &frame.proprio[..]);
        assert_eq!(&state[29..], &frame.privileged[..]);
    }

    #[test]
    fn wrong_scan_length_is_rejected() {
        let layout = ObsLayout::default();
        let action = [0.0; 6];
        let q = [0.0; 6];
        let scan = [0.85; 54];
        let inputs = sample_inputs(&action, &action, &q, &q, &scan);
        let err = assemble_frame(&inputs, &layout, &default_sched()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 55, .. }));
    }

    #[test]
    fn zero_scales_leave_proprio_unchanged() {
        let layout = ObsLayout::default();
        let proprio: Vec<f64> = (0..29).map(|i| i as f64 * 0.1).collect();
        let mut rng = seeded_rng(7);
        let noisy = add_proprio_noise(&proprio, &layout, &NoiseScales::zero(), &mut rng);
        assert_eq!(noisy, proprio);
    }

    #[test]
    fn clock_and_command_are_never_perturbed() {
        let layout = ObsLayout::default();
        let proprio: Vec<f64> = (0..29).map(|i| i as f64).collect();
        let mut rng = seeded_rng(11);
        for _ in 0..100 {
            let noisy = add_proprio_noise(&proprio, &layout, &NoiseScales::default(), &mut rng);
            assert_eq!(&noisy[..5], &proprio[..5]);
        }
    }

    #[test]
    fn noise_std_matches_configured_scale() {
        let layout = ObsLayout::default();
        let proprio = vec![0.0; 29];
        let scales = NoiseScales::default();
        let mut rng = seeded_rng(23);
        // Joint-position block lives at offsets 11..17 with scale 0.01.
        let mut samples = Vec::new();
        for _ in 0..20_000 {
            let noisy = add_proprio_noise(&proprio, &layout, &scales, &mut rng);
            samples.extend_from_slice(&noisy[11..17]);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var =
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / samples.len() as f64;
        let std = var.sqrt();
        assert!((std - 0.01).abs() < 0.0002, "std {std}");
    }

    #[test]
    fn noise_never_touches_privileged_or_aux() {
        let layout = ObsLayout::default();
        let action = [0.3; 6];
        let q = [0.1; 6];
        let qd = [0.9; 6];
        let scan = [0.85; 55];
        let inputs = sample_inputs(&action, &action, &q, &qd, &scan);
        let frame = assemble_frame(&inputs, &layout, &default_sched()).unwrap();
        let before = frame.clone();
        let mut rng = seeded_rng(3);
        let _ = add_proprio_noise(&frame.proprio, &layout, &NoiseScales::default(), &mut rng);
        assert_eq!(frame.privileged, before.privileged);
        assert_eq!(frame.aux, before.aux);
    }

    fn frame_with_marker(marker: f64) -> ObservationFrame {
        let layout = ObsLayout::default();
        ObservationFrame {
            proprio: vec![marker; layout.proprio_dim()],
            privileged: vec![marker + 100.0; layout.privileged_dim()],
            aux: vec![marker + 200.0; layout.aux_dim()],
        }
    }

    #[test]
    fn reset_fills_buffers_with_first_frame() {
        let layout = ObsLayout::default();
        let mut stack = FrameStack::new(15, 3, 10);
        let frame = frame_with_marker(1.0);
        stack.reset(&frame.proprio, &frame);
        let stacked = stack.stacked_proprio();
        assert_eq!(stacked.len(), 15 * layout.proprio_dim());
        assert!(stacked.iter().all(|v| *v == 1.0));
        assert_eq!(stack.stacked_privileged().len(), 3 * layout.privileged_dim());
        assert_eq!(stack.stacked_state(3).len(), 3 * layout.state_dim());
        assert_eq!(stack.stacked_state(10).len(), 10 * layout.state_dim());
    }

    #[test]
    fn push_evicts_oldest_and_keeps_newest_last() {
        let layout = ObsLayout::default();
        let mut stack = FrameStack::new(15, 3, 10);
        stack.reset(&frame_with_marker(0.0).proprio, &frame_with_marker(0.0));
        for i in 1..=16 {
            let frame = frame_with_marker(i as f64);
            stack.push(&frame.proprio, &frame);
        }
        let stacked = stack.stacked_proprio();
        // Frame 1 was evicted by the 16th push; oldest surviving frame is 2.
        assert_eq!(stacked[0], 2.0);
        assert_eq!(stacked[stacked.len() - 1], 16.0);
        // Chronological: marker increases frame by frame.
        let dim = layout.proprio_dim();
        for w in 0..15 {
            assert!(stacked[w * dim..(w + 1) * dim].iter().all(|v| *v == (w + 2) as f64));
        }
    }

    #[test]
    fn clean_proprio_stack_ignores_the_noisy_view() {
        let layout = ObsLayout::default();
        let mut stack = FrameStack::new(15, 3, 10);
        let first = frame_with_marker(0.0);
        stack.reset(&vec![99.0; layout.proprio_dim()], &first);
        for i in 1..=3 {
            let frame = frame_with_marker(i as f64);
            let noisy = vec![99.0 + i as f64; layout.proprio_dim()];
            stack.push(&noisy, &frame);
        }
        let clean = stack.stacked_clean_proprio();
        let noisy = stack.stacked_proprio();
        assert_eq!(clean.len(), noisy.len());
        // The clean stack carries frame markers, never the 99.x noise values.
        assert!(clean.iter().all(|v| *v < 10.0));
        assert_eq!(clean[clean.len() - 1], 3.0);
        assert!(noisy.iter().all(|v| *v >= 99.0));
    }

    #[test]
    fn stacked_state_returns_most_recent_frames() {
        let mut stack = FrameStack::new(15, 3, 10);
        stack.reset(&frame_with_marker(0.0).proprio, &frame_with_marker(0.0));
        for i in 1..=4 {
            let frame = frame_with_marker(i as f64);
            stack.push(&frame.proprio, &frame);
        }
        let layout = ObsLayout::default();
        let dim = layout.state_dim();
        let critic = stack.stacked_state(3);
        assert_eq!(critic.len(), 3 * dim);
        // Last three pushes were markers 2, 3, 4 (proprio part).
        assert_eq!(critic[0], 2.0);
        assert_eq!(critic[dim], 3.0);
        assert_eq!(critic[2 * dim], 4.0);
    }

    #[test]
    fn noiseless_student_path_equals_teacher_proprio() {
        let layout = ObsLayout::default();
        let action = [0.05; 6];
        let q = [0.15; 6];
        let qd = [0.5; 6];
        let scan = [0.85; 55];
        let inputs = sample_inputs(&action, &action, &q, &qd, &scan);
        let frame = assemble_frame(&inputs, &layout, &default_sched()).unwrap();
        let mut rng = seeded_rng(5);
        let noisy = add_proprio_noise(&frame.proprio, &layout, &NoiseScales::zero(), &mut rng);
        assert_eq!(noisy, frame.proprio);
    }
}
