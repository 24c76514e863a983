use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::config::{GraspConfig, CALIBRATION_MARGIN};
use super::io::{Clock, CommandSource, PlantProbe, ProbeReading};
use super::phase::{Command, CommandEnvelope, FaultReason, GraspPhase};
use super::ControlError;
use crate::bus::{BusConfig, MotorBus, MotorRole, MotorState, OperatingMode, Transport};
use crate::telemetry::{FruitTag, HarvestRecord, TelemetrySample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraspResult {
    Secured,
    EmptyClosure,
    Oversize,
    Timeout,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub result: GraspResult,
    /// Closer current at the final sample, mA.
    pub steady_current_ma: f64,
    /// Closer travel since enclose start, rev.
    pub closure_position_rev: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorEvent {
    Holding,
    SlipWarning,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum EventKind {
    PhaseChanged { from: GraspPhase, to: GraspPhase },
    CommandApplied { command: Command },
    CommandRejected { command: Command, phase: GraspPhase, reason: String },
    Monitor { status: MonitorEvent },
    Outcome { outcome: GraspOutcome },
    Record { record: HarvestRecord },
    Warning { message: String },
    BusError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub time: f64,
    pub request_id: Option<u64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Receives everything the loop publishes. Must not block.
pub trait Observer: Send {
    fn sample(&mut self, _sample: &TelemetrySample) {}
    fn event(&mut self, _event: &ControllerEvent) {}
}

#[derive(Debug, Default, Clone)]
pub struct Recording {
    pub samples: Vec<TelemetrySample>,
    pub events: Vec<ControllerEvent>,
}

/// Keeps every sample and event in memory.
#[derive(Clone, Default)]
pub struct Recorder(Arc<Mutex<Recording>>);

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> Recording {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn take(&self) -> Recording {
        std::mem::take(&mut *self.0.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

impl Observer for Recorder {
    fn sample(&mut self, sample: &TelemetrySample) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).samples.push(sample.clone());
    }

    fn event(&mut self, event: &ControllerEvent) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).events.push(event.clone());
    }
}

/// Bookkeeping reset on every phase change.
#[derive(Debug, Clone, Default)]
struct PhaseCtx {
    entered_at: f64,
    start_closer: f64,
    start_opener: f64,
    still: u32,
    settle: u32,
    settled: bool,
}

/// Bookkeeping that spans one grasp, from enclose start to release.
#[derive(Debug, Clone, Default)]
struct GraspCtx {
    enclose_start: f64,
    secured_position: f64,
    slip_warned: bool,
    peak_deviation: f64,
    outcome: Option<GraspOutcome>,
}

#[derive(Debug, Clone)]
pub struct TickReport {
    pub time: f64,
    pub phase: GraspPhase,
    pub sample: Option<TelemetrySample>,
    pub monitor: Option<MonitorEvent>,
}

/// The grasp state machine and its control loop.
///
/// Call [`tick`](Self::tick) from a loop, or use the blocking routines,
/// which tick internally until their phase completes. Commands from sources
/// are applied at tick boundaries either way.
pub struct Controller<T: Transport> {
    bus: MotorBus<T>,
    clock: Box<dyn Clock>,
    probe: Option<Box<dyn PlantProbe>>,
    sources: Vec<Box<dyn CommandSource>>,
    observers: Vec<Box<dyn Observer>>,
    config: GraspConfig,
    phase: GraspPhase,
    inbox: VecDeque<CommandEnvelope>,
    written: [Option<f64>; 2],
    latest: Option<(MotorState, MotorState)>,
    ctx: PhaseCtx,
    grasp: GraspCtx,
    fruit: FruitTag,
    records: Vec<HarvestRecord>,
    next_request: u64,
}

const CLOSER: usize = 0;
const OPENER: usize = 1;

impl<T: Transport> Controller<T> {
    pub fn new(bus: MotorBus<T>, clock: Box<dyn Clock>, config: GraspConfig) -> Result<Self, ControlError> {
        config.validate(bus.config().current_cap_ma)?;
        Ok(Self {
            bus,
            clock,
            probe: None,
            sources: Vec::new(),
            observers: Vec::new(),
            config,
            phase: GraspPhase::Idle,
            inbox: VecDeque::new(),
            written: [None, None],
            latest: None,
            ctx: PhaseCtx::default(),
            grasp: GraspCtx::default(),
            fruit: FruitTag::default(),
            records: Vec::new(),
            next_request: 1 << 48,
        })
    }

    pub fn with_probe(mut self, probe: Box<dyn PlantProbe>) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn add_source(&mut self, source: Box<dyn CommandSource>) {
        self.sources.push(source);
    }

    pub fn add_observer(&mut self, observer: Box<dyn Observer>) {
        self.observers.push(observer);
    }

    pub fn phase(&self) -> GraspPhase {
        self.phase
    }

    pub fn config(&self) -> &GraspConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn bus_config(&self) -> &BusConfig {
        self.bus.config()
    }

    pub fn bus(&mut self) -> &mut MotorBus<T> {
        &mut self.bus
    }

    pub fn latest_state(&self) -> Option<(MotorState, MotorState)> {
        self.latest
    }

    pub fn records(&self) -> &[HarvestRecord] {
        &self.records
    }

    pub fn last_outcome(&self) -> Option<GraspOutcome> {
        self.grasp.outcome
    }

    pub fn set_fruit(&mut self, fruit: FruitTag) {
        self.fruit = fruit;
    }

    /// True once the opener has come to rest in the Open phase.
    pub fn open_settled(&self) -> bool {
        self.phase == GraspPhase::Open && self.ctx.settled
    }

    pub fn set_empty_closure_position(&mut self, rev: Option<f64>) {
        self.config.empty_closure_position_rev = rev;
    }

    /// Queue a command for the next tick. Returns its request id.
    pub fn submit(&mut self, command: Command) -> u64 {
        let id = self.next_request;
        self.next_request += 1;
        self.inbox.push_back(CommandEnvelope {
            command,
            request_id: id,
            issued_at: self.clock.now(),
        });
        id
    }

    pub fn submit_envelope(&mut self, envelope: CommandEnvelope) {
        self.inbox.push_back(envelope);
    }

    /// Put both servos in current control with torque on and zero goals.
    pub fn initialize(&mut self) -> Result<(), ControlError> {
        for role in MotorRole::BOTH {
            let id = self.bus.config().ids.id(role);
            self.bus.ping(id)?;
            self.bus.torque(role, false)?;
            self.bus.set_operating_mode(role, OperatingMode::CurrentControl)?;
            self.bus.set_goal_current(role, 0.0)?;
            self.bus.torque(role, true)?;
        }
        self.written = [Some(0.0), Some(0.0)];
        Ok(())
    }

    pub fn set_torque(&mut self, role: MotorRole, on: bool) -> Result<(), ControlError> {
        if !on && matches!(self.phase, GraspPhase::Secured | GraspPhase::Detaching) {
            self.emit(None, EventKind::Warning {
                message: format!("torque off on {role:?} while holding a fruit"),
            });
        }
        self.bus.torque(role, on)?;
        Ok(())
    }

    /// Zero both goals now and fault. Never fails: bus errors are logged.
    pub fn abort(&mut self) {
        self.apply_abort(None);
        self.write_goals();
    }

    /// One control period: apply commands, sample, decide, actuate, wait.
    pub fn tick(&mut self) -> Result<TickReport, ControlError> {
        let now = self.clock.now();
        for source in &mut self.sources {
            self.inbox.extend(source.poll(now));
        }

        let read = self
            .bus
            .read_state(MotorRole::Closer)
            .and_then(|c| self.bus.read_state(MotorRole::Opener).map(|o| (c, o)));
        let state = match read {
            Ok(s) => {
                self.latest = Some(s);
                Some(s)
            }
            Err(e) => {
                self.emit(None, EventKind::BusError { message: e.to_string() });
                None
            }
        };
        let probe = self.probe.as_ref().map(|p| p.read());

        while let Some(env) = self.inbox.pop_front() {
            self.apply_command(env, state, probe);
        }

        let mut monitor = None;
        match state {
            Some((closer, opener)) => monitor = self.step_phase(now, closer, opener, probe),
            None if !self.phase.is_fault() => self.transition(GraspPhase::Fault(FaultReason::Bus), None, None),
            None => {}
        }

        self.write_goals();

        let sample = state.map(|(closer, opener)| TelemetrySample {
            time: now,
            phase: self.phase,
            closer,
            opener,
            contact_force: probe.map(|p| p.contact_force),
            pull_force: probe.map(|p| p.pull_force),
        });
        if let Some(s) = &sample {
            for o in &mut self.observers {
                o.sample(s);
            }
        }

        self.clock.wait(self.config.period()).map_err(ControlError::Clock)?;
        Ok(TickReport {
            time: now,
            phase: self.phase,
            sample,
            monitor,
        })
    }

    fn goals(&self) -> (f64, f64) {
        use GraspPhase::*;
        match self.phase {
            Idle | Fault(_) => (0.0, 0.0),
            Open | AlignPending | Releasing => (0.0, self.config.opener_open_current_ma),
            Enclosing | Secured | Detaching => (self.config.reference_current_ma, 0.0),
        }
    }

    /// Write changed goals, lowering one before raising the other so the
    /// two motors never pull against each other.
    fn write_goals(&mut self) {
        let (closer, opener) = self.goals();
        let order = if closer <= opener {
            [(CLOSER, MotorRole::Closer, closer), (OPENER, MotorRole::Opener, opener)]
        } else {
            [(OPENER, MotorRole::Opener, opener), (CLOSER, MotorRole::Closer, closer)]
        };
        for (slot, role, goal) in order {
            if self.written[slot] == Some(goal) {
                continue;
            }
            match self.bus.set_goal_current(role, goal) {
                Ok(_) => self.written[slot] = Some(goal),
                Err(e) => {
                    self.written[slot] = None;
                    self.emit(None, EventKind::BusError { message: e.to_string() });
                    if !self.phase.is_fault() {
                        self.transition(GraspPhase::Fault(FaultReason::Bus), None, None);
                    }
                    if goal > 0.0 {
                        // Never leave one motor driven after failing to set the other.
                        return self.write_zero_best_effort();
                    }
                }
            }
        }
    }

    fn write_zero_best_effort(&mut self) {
        for (slot, role) in [(CLOSER, MotorRole::Closer), (OPENER, MotorRole::Opener)] {
            self.written[slot] = self.bus.set_goal_current(role, 0.0).ok().map(|_| 0.0);
        }
    }

    fn emit(&mut self, request_id: Option<u64>, kind: EventKind) {
        let event = ControllerEvent {
            time: self.clock.now(),
            request_id,
            kind,
        };
        for o in &mut self.observers {
            o.event(&event);
        }
    }

    fn transition(&mut self, to: GraspPhase, request_id: Option<u64>, state: Option<(MotorState, MotorState)>) {
        let from = self.phase;
        debug_assert!(from.can_transition(to), "{from} -> {to}");
        if !from.can_transition(to) {
            return;
        }
        self.phase = to;
        let (closer, opener) = state.or(self.latest).map_or((0.0, 0.0), |(c, o)| (c.position_rev, o.position_rev));
        self.ctx = PhaseCtx {
            entered_at: self.clock.now(),
            start_closer: closer,
            start_opener: opener,
            ..PhaseCtx::default()
        };
        self.emit(request_id, EventKind::PhaseChanged { from, to });
    }

    fn reject(&mut self, env: CommandEnvelope, reason: impl Into<String>) {
        let phase = self.phase;
        self.emit(Some(env.request_id), EventKind::CommandRejected {
            command: env.command,
            phase,
            reason: reason.into(),
        });
    }

    fn apply_abort(&mut self, request_id: Option<u64>) {
        use GraspPhase::*;
        match self.phase {
            Idle | Fault(_) => {
                if let Some(id) = request_id {
                    self.emit(Some(id), EventKind::CommandApplied { command: Command::Abort });
                }
            }
            phase => {
                if phase == Enclosing {
                    self.finish_enclose(GraspResult::Aborted, None);
                }
                if matches!(phase, Secured | Detaching) {
                    self.complete_record(Some(GraspResult::Aborted), false);
                }
                self.transition(Fault(FaultReason::Aborted), request_id, None);
            }
        }
    }

    fn apply_command(&mut self, env: CommandEnvelope, state: Option<(MotorState, MotorState)>, probe: Option<ProbeReading>) {
        use GraspPhase::*;
        let command = env.command;
        if !command.allowed_in(self.phase) {
            let reason = format!("{command:?} not allowed in {}", self.phase);
            return self.reject(env, reason);
        }
        let id = Some(env.request_id);
        match command {
            Command::Abort => self.apply_abort(id),
            Command::SetCurrent(ma) => {
                let cap = self.bus.config().current_cap_ma;
                if !(ma.is_finite() && ma > 0.0 && ma <= cap) {
                    return self.reject(env, format!("{ma} mA outside (0, {cap}]"));
                }
                self.config.reference_current_ma = ma;
                self.emit(id, EventKind::CommandApplied { command });
            }
            Command::Open => match self.phase {
                Idle => self.transition(Open, id, state),
                Open => {
                    // Restart the settle check from here.
                    self.ctx.still = 0;
                    self.ctx.settled = false;
                    self.ctx.entered_at = self.clock.now();
                    if let Some((c, o)) = state {
                        self.ctx.start_closer = c.position_rev;
                        self.ctx.start_opener = o.position_rev;
                    }
                    self.emit(id, EventKind::CommandApplied { command });
                }
                _ => self.emit(id, EventKind::CommandApplied { command }),
            },
            Command::AlignConfirm => self.transition(AlignPending, id, state),
            Command::Grasp => {
                self.grasp = GraspCtx {
                    enclose_start: state.or(self.latest).map_or(0.0, |(c, _)| c.position_rev),
                    ..GraspCtx::default()
                };
                self.transition(Enclosing, id, state);
            }
            Command::Release => match self.phase {
                Fault(_) => self.transition(Idle, id, state),
                Secured | Detaching => {
                    let harvested = probe.is_none_or(|p| p.detached);
                    self.complete_record(None, harvested);
                    self.transition(Releasing, id, state);
                }
                _ => unreachable!("guarded by allowed_in"),
            },
        }
    }

    fn finish_enclose(&mut self, result: GraspResult, closer: Option<MotorState>) {
        let closer = closer.or(self.latest.map(|(c, _)| c)).unwrap_or_default();
        let outcome = GraspOutcome {
            result,
            steady_current_ma: closer.current_ma,
            closure_position_rev: closer.position_rev - self.grasp.enclose_start,
            elapsed_ms: (self.clock.now() - self.ctx.entered_at) * 1000.0,
        };
        self.grasp.outcome = Some(outcome);
        self.emit(None, EventKind::Outcome { outcome });
    }

    fn complete_record(&mut self, result: Option<GraspResult>, harvested: bool) {
        let probe = self.probe.as_ref().map(|p| p.read());
        let outcome = result
            .or(self.grasp.outcome.map(|o| o.result))
            .unwrap_or(GraspResult::Secured);
        let record = HarvestRecord {
            fruit_class: self.fruit.class,
            fruit_diameter_mm: self.fruit.diameter_mm,
            outcome,
            harvested,
            peak_pull_force: probe.map(|p| p.peak_pull_force),
            peak_current_deviation_ma: self.grasp.peak_deviation,
            damaged_on_harvest: probe.is_some_and(|p| p.damaged),
            bruised_day5: None,
        };
        self.records.push(record.clone());
        self.emit(None, EventKind::Record { record });
    }

    fn step_phase(
        &mut self,
        now: f64,
        closer: MotorState,
        opener: MotorState,
        probe: Option<ProbeReading>,
    ) -> Option<MonitorEvent> {
        use GraspPhase::*;
        let cfg = &self.config;
        let eps = cfg.velocity_epsilon_rpm;
        let hold = cfg.hold_samples();
        let elapsed_ms = (now - self.ctx.entered_at) * 1000.0;
        match self.phase {
            Idle | AlignPending | Fault(_) => None,
            Open | Releasing => {
                if self.ctx.settled {
                    return None;
                }
                self.ctx.still = if opener.velocity_rpm.abs() < eps { self.ctx.still + 1 } else { 0 };
                if self.ctx.still >= hold {
                    let travel = opener.position_rev - self.ctx.start_opener;
                    if travel < cfg.open_min_travel_rev {
                        let message = format!("opener settled after only {travel:.3} rev");
                        self.emit(None, EventKind::Warning { message });
                    }
                    if self.phase == Releasing {
                        let payout = self.ctx.start_closer - closer.position_rev;
                        if payout < self.config.release_backoff_rev {
                            let message = format!("closer paid out only {payout:.3} rev on release");
                            self.emit(None, EventKind::Warning { message });
                        }
                        self.transition(Open, None, Some((closer, opener)));
                    }
                    self.ctx.settled = true;
                } else if elapsed_ms >= cfg.open_timeout_ms as f64 {
                    self.transition(Fault(FaultReason::OpenTimeout), None, None);
                }
                None
            }
            Enclosing => {
                let reference = cfg.reference_current_ma;
                let travel = closer.position_rev - self.grasp.enclose_start;
                let slow = closer.velocity_rpm.abs() < eps;
                let in_band = (closer.current_ma - reference).abs() <= cfg.current_band_ma;
                self.ctx.still = if slow { self.ctx.still + 1 } else { 0 };
                self.ctx.settle = if slow && in_band { self.ctx.settle + 1 } else { 0 };
                let empty = cfg.empty_closure_position_rev.is_some_and(|t| travel >= t);
                if self.ctx.still >= hold && empty {
                    self.finish_enclose(GraspResult::EmptyClosure, Some(closer));
                    self.transition(Fault(FaultReason::EmptyClosure), None, None);
                } else if self.ctx.settle >= hold {
                    self.finish_enclose(GraspResult::Secured, Some(closer));
                    self.grasp.secured_position = closer.position_rev;
                    self.transition(Secured, None, Some((closer, opener)));
                    self.emit(None, EventKind::Monitor { status: MonitorEvent::Holding });
                    return Some(MonitorEvent::Holding);
                } else if elapsed_ms >= cfg.enclose_timeout_ms as f64 {
                    let (result, reason) = if slow {
                        (GraspResult::Timeout, FaultReason::Timeout)
                    } else {
                        (GraspResult::Oversize, FaultReason::Oversize)
                    };
                    self.finish_enclose(result, Some(closer));
                    self.transition(Fault(reason), None, None);
                }
                None
            }
            Secured | Detaching => {
                let detaching = self.phase == Detaching;
                if detaching {
                    let dev = (closer.current_ma - cfg.reference_current_ma).abs();
                    self.grasp.peak_deviation = self.grasp.peak_deviation.max(dev);
                }
                let travel = closer.position_rev - self.grasp.enclose_start;
                let slip = closer.position_rev - self.grasp.secured_position;
                let lost = cfg.empty_closure_position_rev.is_some_and(|t| travel >= t);
                let mut status = MonitorEvent::Holding;
                if slip > cfg.slip_delta_rev {
                    status = MonitorEvent::SlipWarning;
                    if !self.grasp.slip_warned {
                        self.grasp.slip_warned = true;
                        self.emit(None, EventKind::Monitor { status });
                    }
                }
                if lost {
                    status = MonitorEvent::Lost;
                    self.emit(None, EventKind::Monitor { status });
                    if detaching {
                        self.complete_record(None, false);
                        self.transition(Fault(FaultReason::LostDuringDetach), None, None);
                    } else {
                        self.transition(Fault(FaultReason::GraspLost), None, None);
                    }
                    return Some(status);
                }
                if let Some(p) = probe {
                    if !detaching && p.pull_active {
                        self.transition(Detaching, None, Some((closer, opener)));
                    } else if detaching && p.detached {
                        self.complete_record(None, true);
                        self.transition(Releasing, None, Some((closer, opener)));
                    }
                }
                Some(status)
            }
        }
    }

    fn run_while(&mut self, mut keep_going: impl FnMut(&Self) -> bool, max_ticks: u64) -> Result<(), ControlError> {
        let mut n = 0;
        while keep_going(self) {
            if n >= max_ticks {
                return Err(ControlError::Stalled { phase: self.phase });
            }
            self.tick()?;
            n += 1;
        }
        Ok(())
    }

    fn ticks_for(&self, ms: u64) -> u64 {
        // Timeouts fire inside the phase logic; this is only a backstop.
        2 * (ms as f64 * self.config.loop_rate_hz / 1000.0).ceil() as u64 + 10
    }

    fn require(&self, op: &'static str, allowed: &[GraspPhase]) -> Result<(), ControlError> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(ControlError::Phase { op, phase: self.phase })
        }
    }

    /// Pay out the closer and drive the opener until the pockets are apart.
    pub fn open_gripper(&mut self) -> Result<(), ControlError> {
        use GraspPhase::*;
        self.require("open", &[Idle, Releasing, Open])?;
        if self.phase != Releasing {
            self.submit(Command::Open);
        }
        let limit = self.ticks_for(self.config.open_timeout_ms);
        self.tick()?;
        self.run_while(|c| matches!(c.phase, Open | Releasing) && !c.open_settled(), limit)?;
        match self.phase {
            Open => Ok(()),
            Fault(FaultReason::OpenTimeout) => Err(ControlError::OpenTimeout),
            phase => Err(ControlError::Interrupted { phase }),
        }
    }

    pub fn confirm_align(&mut self) -> Result<(), ControlError> {
        self.require("align", &[GraspPhase::Open])?;
        self.submit(Command::AlignConfirm);
        self.tick()?;
        Ok(())
    }

    /// Close on whatever is between the pockets at the reference current.
    pub fn close_grasp(&mut self) -> Result<GraspOutcome, ControlError> {
        use GraspPhase::*;
        self.require("grasp", &[Open, AlignPending])?;
        self.submit(Command::Grasp);
        let limit = self.ticks_for(self.config.enclose_timeout_ms);
        self.tick()?;
        self.run_while(|c| c.phase == Enclosing, limit)?;
        self.grasp.outcome.ok_or(ControlError::Interrupted { phase: self.phase })
    }

    /// Hold for `seconds`, returning the monitor status of every tick.
    pub fn monitor_secured(&mut self, seconds: f64) -> Result<Vec<MonitorEvent>, ControlError> {
        use GraspPhase::*;
        self.require("monitor", &[Secured, Detaching])?;
        let ticks = (seconds * self.config.loop_rate_hz).round() as u64;
        let mut out = Vec::new();
        for _ in 0..ticks {
            let report = self.tick()?;
            out.extend(report.monitor);
            if !matches!(self.phase, Secured | Detaching) {
                break;
            }
        }
        Ok(out)
    }

    /// Hold while something pulls the fruit off its stem, then release and
    /// reopen. The pull itself is applied by the caller (operator or sim).
    pub fn detach_and_release(&mut self) -> Result<HarvestRecord, ControlError> {
        use GraspPhase::*;
        self.require("detach", &[Secured])?;
        self.transition(Detaching, None, None);
        let before = self.records.len();
        let limit = self.ticks_for(self.config.detach_timeout_ms);
        let deadline = self.clock.now() + self.config.detach_timeout_ms as f64 / 1000.0;
        self.run_while(|c| c.phase == Detaching && c.clock.now() < deadline, limit)?;
        if self.phase == Detaching {
            return Err(ControlError::DetachTimeout);
        }
        if self.phase == Releasing {
            self.open_gripper()?;
        }
        let record = self.records.get(before).cloned();
        match (self.phase, record) {
            (Fault(FaultReason::LostDuringDetach), _) => Err(ControlError::LostDuringDetach),
            (_, Some(record)) => Ok(record),
            (phase, None) => Err(ControlError::Interrupted { phase }),
        }
    }

    /// Close on empty air and store the settle travel, less a margin, as the
    /// empty-closure threshold. Leaves the gripper open.
    pub fn calibrate(&mut self) -> Result<f64, ControlError> {
        use GraspPhase::*;
        self.require("calibrate", &[Idle, Open, AlignPending])?;
        if self.phase == Idle {
            self.open_gripper()?;
        }
        let saved = self.config.empty_closure_position_rev.take();
        let outcome = self.close_grasp();
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                self.config.empty_closure_position_rev = saved;
                return Err(e);
            }
        };
        if outcome.result != GraspResult::Secured {
            self.config.empty_closure_position_rev = saved;
            return Err(ControlError::NotSettled(outcome.result));
        }
        let threshold = outcome.closure_position_rev * CALIBRATION_MARGIN;
        self.config.empty_closure_position_rev = Some(threshold);
        // The calibration close is not a harvest.
        self.transition(Releasing, None, None);
        self.open_gripper()?;
        Ok(threshold)
    }
}
