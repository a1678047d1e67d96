//! Scratch pilot for the smoke-training fixture. Not part of the deliverable.

use std::time::Instant;

use tmp_core::envpool::{PoolConfig, TerrainMode};
use tmp_core::metrics::parse_metrics_csv;
use tmp_core::ppo::{train_teacher, PpoConfig, TrainerConfig};

fn main() {
    if std::env::args().nth(1).as_deref() == Some("gait") {
        return scripted_gait();
    }
    let mut pool_cfg = PoolConfig::default();
    pool_cfg.num_envs = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(64);
    pool_cfg.terrain_mode = TerrainMode::Flat;
    pool_cfg.command_bound = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let ppo_cfg = PpoConfig::default();
    let mut trainer = TrainerConfig::default();
    trainer.iterations = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    trainer.steps_per_env = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(24);
    trainer.checkpoint_every = 0;
    let seed = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42u64);

    let out_dir = std::env::temp_dir().join(format!("pilot-{seed}"));
    let t0 = Instant::now();
    let out = train_teacher(&pool_cfg, &ppo_cfg, &trainer, seed, "pilot", &out_dir).expect("train");
    let wall = t0.elapsed().as_secs_f64();

    let text = std::fs::read_to_string(&out.metrics_path).expect("csv");
    let table = parse_metrics_csv(&text).expect("parse");
    let err = table.series("command/tracking_error").expect("col");
    let rew = table.series("reward/total").expect("col");
    let kl = table.series("ppo/kl").expect("col");
    let lr = table.series("ppo/lr").expect("col");
    let lin = table.series("reward/linear_tracking").expect("col");
    let std_col = table.series("ppo/action_std").expect("col");
    println!("iters={} wall={wall:.1}s  ({:.2} s/iter)", err.len(), wall / err.len() as f64);
    for i in (0..err.len()).step_by(10).chain([err.len() - 1]) {
        println!(
            "it {i:4}  track_err {:7.4}  reward {:8.4}  lin_track {:7.4}  kl {:008.5}  lr {:.2e}  std {:.3}",
            err[i], rew[i], lin[i], kl[i], lr[i], std_col[i]
        );
    }
    let at10 = err[10.min(err.len() - 1)];
    let fin = *err.last().unwrap();
    println!("iter10 {at10:.4} -> final {fin:.4}  improvement {:.1}%", 100.0 * (1.0 - fin / at10));

    let episodes = table.series("episodes/total").expect("col");
    let faults = table.series("faults/total").expect("col");
    println!(
        "episodes total {}  faults total {}  (64 envs x 24 steps = 1536 samples/iter)",
        episodes.last().unwrap(),
        faults.last().unwrap()
    );
    for i in [0usize, 10, err.len() - 1] {
        print!("terms it {i:3}: ");
        for c in table.columns.iter().filter(|c| c.starts_with("reward/")) {
            let v = table.series(c).unwrap()[i];
            print!("{}={:.3} ", c.trim_start_matches("reward/"), v);
        }
        println!();
    }
}

/// Hand-scripted CPG gait on the nominal flat simulator: proves the model
/// can physically walk before any learning is attempted.
fn scripted_gait() {
    use tmp_core::obs::GaitSchedule;
    use tmp_core::rng::derive_stream;
    use tmp_core::sim::{EnvParams, SimConfig, Simulator, Termination, WalkerModel};
    use tmp_core::terrain::{Heightfield, TerrainConfig};

    let model = WalkerModel::default();
    let sim_cfg = SimConfig::default();
    let params = EnvParams::nominal(&model, &sim_cfg);
    let mut terrain_cfg = TerrainConfig::default();
    terrain_cfg.block_size_x = 12.0;
    terrain_cfg.block_size_y = 4.0;
    let terrain = Heightfield::flat(&terrain_cfg, 0.0);
    let sched = GaitSchedule::default();
    let nominal = model.nominal_joints();

    let hip_amp: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let knee_amp: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let lean: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let c_torso: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let c_ankle: f64 = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let mut sim = Simulator::new(model, sim_cfg.clone(), params, terrain, derive_stream(1, "gait", 0));
    let start_x = sim.state.base_pos.x;
    let mut steps = 0usize;
    let total = (10.0 / sim_cfg.control_dt) as usize;
    for k in 0..total {
        let t = k as f64 * sim_cfg.control_dt;
        let pitch = sim.state.base_pitch;
        let pitch_rate = sim.state.pitch_rate;
        let vx = sim.state.base_vel.x;
        let v_des = hip_amp; // reuse arg 2 as commanded speed
        let balance = c_torso * (pitch + 0.2 * pitch_rate);
        // Raibert foot placement: land ahead of the hip proportionally to
        // current speed, plus a correction steering toward the commanded one.
        let leg_len = 0.86;
        let half = 0.35; // half cycle = stance duration
        let x_land = (0.5 * vx * half + lean * (vx - v_des)).clamp(-0.4, 0.4);
        let hip_land = (x_land / leg_len).asin();
        let mut action = vec![0.0; 6];
        for leg in 0..2 {
            let swing = sched.swing_phase(t, leg);
            let knee = match swing {
                Some(p) => knee_amp * (std::f64::consts::PI * p).sin(),
                None => 0.0,
            };
            let q0 = match swing {
                // Swing: drive toward the landing target, expressed in the
                // world frame (subtract pitch so lean cannot drag the foot
                // backward exactly when it must reach forward).
                Some(p) => nominal[0] + -0.12 + (hip_land - pitch + 0.12) * p.min(1.0),
                // Stance: torso-righting correction, bounded so the support
                // leg is never yanked off the ground.
                None => nominal[0] + balance.clamp(-0.4, 0.4),
            };
            let q1 = nominal[1] + knee;
            // Ankle keeps the sole level, with pitch feedback and a toe-off
            // ramp (plantarflex) over the last quarter of stance.
            let mut q2 = -(q0 + q1);
            if swing.is_none() {
                let p_leg = (sched.phase(t) - sched.phase_offset[leg]).rem_euclid(1.0);
                let s = (p_leg - 0.5).rem_euclid(1.0) / 0.55;
                if s > 0.75 {
                    q2 -= c_ankle * (s - 0.75) / 0.25;
                } else {
                    q2 += 0.3 * (pitch + 0.2 * pitch_rate);
                }
            }
            action[3 * leg] = q0 - nominal[0];
            action[3 * leg + 1] = q1 - nominal[1];
            action[3 * leg + 2] = q2 - nominal[2];
        }
        match sim.step(&action).expect("step") {
            Termination::Running => steps += 1,
            Termination::Fallen => {
                println!(
                    "FELL at t={t:.2}s  x={:.2}  h={:.3}  pitch={:.2}",
                    sim.state.base_pos.x,
                    sim.base_height(),
                    sim.state.base_pitch
                );
                return;
            }
            Termination::Timeout => break,
        }
        if k % 5 == 0 {
            let sw0 = sched.swing_phase(t, 0).map(|p| format!("{p:.2}")).unwrap_or("st".into());
            let sw1 = sched.swing_phase(t, 1).map(|p| format!("{p:.2}")).unwrap_or("st".into());
            println!(
                "t={t:5.2}  x={:6.3}  vx={:6.3}  h={:.3}  pitch={:6.3}  rate={:6.2}  c={}{}  sw=[{sw0},{sw1}]  q0=[{:5.2},{:5.2}]  clr=[{:5.2},{:5.2}]",
                sim.state.base_pos.x,
                sim.state.base_vel.x,
                sim.base_height(),
                sim.state.base_pitch,
                sim.state.pitch_rate,
                sim.state.foot_contact[0] as u8,
                sim.state.foot_contact[1] as u8,
                sim.state.q[0],
                sim.state.q[3],
                sim.foot_clearance()[0],
                sim.foot_clearance()[1],
            );
        }
    }
    let dist = sim.state.base_pos.x - start_x;
    println!(
        "survived {steps} steps ({:.1}s), traveled {dist:.2} m, mean speed {:.2} m/s",
        steps as f64 * sim_cfg.control_dt,
        dist / (steps as f64 * sim_cfg.control_dt)
    );
}
