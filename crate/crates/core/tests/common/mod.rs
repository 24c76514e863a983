#![allow(dead_code)]

use drawstring_core::bus::{BusConfig, MotorBus};
use drawstring_core::controller::{Command, Controller, ControllerEvent, EventKind, GraspConfig, GraspPhase, Recorder};
use drawstring_core::sim::{PlantConfig, SimHandle, SimWorld, VirtualBus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bit-at-a-time CRC-16, poly 0x8005, init 0, no reflection.
pub fn crc_oracle(data: &[u8]) -> u16 {
    let mut crc: u16 = 0;
    for &b in data {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x8005 } else { crc << 1 };
        }
    }
    crc
}

/// Insert 0xFD after every FF FF FD run, scanning the output as written.
pub fn stuff_oracle(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for &b in data {
        out.push(b);
        let n = out.len();
        if n >= 3 && out[n - 3..] == [0xFF, 0xFF, 0xFD] {
            out.push(0xFD);
        }
    }
    out
}

/// Frame assembled by hand: header, id, length, instruction, stuffed
/// payload, CRC low byte first.
pub fn frame_oracle(id: u8, instruction: u8, payload: &[u8]) -> Vec<u8> {
    let body = stuff_oracle(payload);
    let len = (body.len() + 3) as u16;
    let mut out = vec![0xFF, 0xFF, 0xFD, 0x00, id, len as u8, (len >> 8) as u8, instruction];
    out.extend_from_slice(&body);
    let crc = crc_oracle(&out);
    out.push(crc as u8);
    out.push((crc >> 8) as u8);
    out
}

pub struct Rig {
    pub world: SimHandle,
    pub ctl: Controller<VirtualBus>,
    pub recorder: Recorder,
}

pub fn rig(plant: PlantConfig, grasp: GraspConfig) -> Rig {
    rig_with_bus(plant, grasp, BusConfig::default())
}

pub fn rig_with_bus(plant: PlantConfig, grasp: GraspConfig, bus: BusConfig) -> Rig {
    let world = SimHandle::new(SimWorld::new(plant, bus.ids).unwrap());
    world.lock().set_antagonism_limit(grasp.antagonism_limit_ma);
    let motor_bus = MotorBus::new(world.virtual_bus(), bus).unwrap();
    let mut ctl = Controller::new(motor_bus, Box::new(world.clock()), grasp)
        .unwrap()
        .with_probe(Box::new(world.probe()));
    ctl.initialize().unwrap();
    let recorder = Recorder::new();
    ctl.add_observer(Box::new(recorder.clone()));
    Rig { world, ctl, recorder }
}

/// Calibrated rig with the gripper open.
pub fn open_rig(plant: PlantConfig) -> Rig {
    let mut r = rig(plant, GraspConfig::default());
    r.ctl.calibrate().unwrap();
    r
}

pub fn phase_changes(events: &[ControllerEvent]) -> Vec<(GraspPhase, GraspPhase)> {
    events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::PhaseChanged { from, to } => Some((from, to)),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct StormReport {
    pub commands: usize,
    pub ticks: usize,
    pub illegal_transitions: Vec<(GraspPhase, GraspPhase)>,
    pub broken_chain: usize,
    pub antagonism_violations: u64,
    pub tick_goal_violations: usize,
    pub unanswered: Vec<u64>,
    /// Ticks in Idle or Fault with either goal nonzero.
    pub resting_not_zeroed: usize,
    /// Aborts that did not leave the machine resting after one tick.
    pub abort_missed: usize,
}

fn random_command(rng: &mut ChaCha8Rng) -> Command {
    match rng.random_range(0..12) {
        0..=1 => Command::Open,
        2..=3 => Command::AlignConfirm,
        4..=6 => Command::Grasp,
        7..=8 => Command::Release,
        9 => Command::Abort,
        10 => Command::SetCurrent(rng.random_range(20.0..150.0)),
        _ => Command::SetCurrent(rng.random_range(-50.0..400.0)),
    }
}

/// One random command sequence against a fresh sim. Fruit presence, pulls,
/// jams and tick gaps are drawn from `seed` as well.
pub fn storm(seed: u64, threshold_rev: f64) -> StormReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plant = PlantConfig::default();
    plant.seed = seed;
    let mut grasp = GraspConfig::default();
    grasp.empty_closure_position_rev = Some(threshold_rev);
    grasp.enclose_timeout_ms = 1500;
    grasp.open_timeout_ms = 1500;
    let mut r = rig(plant, grasp);
    let mut report = StormReport::default();
    let mut ids = Vec::new();
    let n = rng.random_range(5..25);
    for _ in 0..n {
        if rng.random_bool(0.25) {
            let _ = r.world.lock().insert_fruit();
        }
        if rng.random_bool(0.1) {
            let target = rng.random_range(1.0..30.0);
            let _ = r.world.lock().apply_pull(target, 10.0);
        }
        if rng.random_bool(0.03) {
            r.world.lock().set_jammed(true);
        }
        let cmd = random_command(&mut rng);
        ids.push(r.ctl.submit(cmd));
        report.commands += 1;
        let gap = rng.random_range(1..40);
        for t in 0..gap {
            let _ = r.ctl.tick();
            report.ticks += 1;
            let (c, o) = r.world.lock().effective_goals_ma();
            if c.abs() > 10.0 && o.abs() > 10.0 {
                report.tick_goal_violations += 1;
            }
            let resting = matches!(r.ctl.phase(), GraspPhase::Idle | GraspPhase::Fault(_));
            if resting && (c, o) != (0.0, 0.0) {
                report.resting_not_zeroed += 1;
            }
            if t == 0 && cmd == Command::Abort && !resting {
                report.abort_missed += 1;
            }
        }
    }
    let rec = r.recorder.snapshot();
    let changes = phase_changes(&rec.events);
    let mut current = GraspPhase::Idle;
    for (from, to) in changes {
        if !from.can_transition(to) {
            report.illegal_transitions.push((from, to));
        }
        if from != current {
            report.broken_chain += 1;
        }
        current = to;
    }
    if current != r.ctl.phase() {
        report.broken_chain += 1;
    }
    for id in ids {
        if !rec.events.iter().any(|e| e.request_id == Some(id)) {
            report.unanswered.push(id);
        }
    }
    report.antagonism_violations = r.world.lock().antagonism().violations;
    report
}

impl StormReport {
    pub fn clean(&self) -> bool {
        self.illegal_transitions.is_empty()
            && self.broken_chain == 0
            && self.antagonism_violations == 0
            && self.tick_goal_violations == 0
            && self.unanswered.is_empty()
            && self.resting_not_zeroed == 0
            && self.abort_missed == 0
    }
}
