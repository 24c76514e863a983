//! What the controller needs from its surroundings besides the bus.

use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, TryRecvError};
use std::time::{Duration, Instant};

use super::phase::CommandEnvelope;

/// Paces the control loop. In simulation, waiting is what advances the plant.
pub trait Clock: Send {
    /// s since start.
    fn now(&self) -> f64;
    /// Block until `period` s after the previous tick.
    fn wait(&mut self, period: f64) -> Result<(), String>;
}

/// Real time; keeps a fixed schedule and does not accumulate drift.
pub struct WallClock {
    start: Instant,
    next: Option<Instant>,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            next: None,
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn wait(&mut self, period: f64) -> Result<(), String> {
        let period = Duration::from_secs_f64(period);
        let now = Instant::now();
        let mut next = self.next.unwrap_or(now) + period;
        if next < now {
            // Overran: resynchronise rather than burst.
            next = now + period;
        }
        crate::bus::sleep_until(next);
        self.next = Some(next);
        Ok(())
    }
}

/// Ground truth only a simulator can provide.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeReading {
    /// N.
    pub contact_force: f64,
    /// N.
    pub pull_force: f64,
    pub pull_active: bool,
    /// Stem separated with the fruit in the gripper.
    pub detached: bool,
    pub peak_pull_force: f64,
    pub damaged: bool,
}

pub trait PlantProbe: Send {
    fn read(&self) -> ProbeReading;
}

/// Commands arriving from outside, drained at tick boundaries.
pub trait CommandSource: Send {
    fn poll(&mut self, now: f64) -> Vec<CommandEnvelope>;
}

impl CommandSource for Receiver<CommandEnvelope> {
    fn poll(&mut self, _now: f64) -> Vec<CommandEnvelope> {
        let mut out = Vec::new();
        loop {
            match self.try_recv() {
                Ok(c) => out.push(c),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => return out,
            }
        }
    }
}

/// Commands released once the clock reaches their `issued_at`.
#[derive(Debug, Default, Clone)]
pub struct ScheduledCommands {
    pending: VecDeque<CommandEnvelope>,
}

impl ScheduledCommands {
    pub fn new(mut commands: Vec<CommandEnvelope>) -> Self {
        commands.sort_by(|a, b| a.issued_at.total_cmp(&b.issued_at));
        Self {
            pending: commands.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

impl CommandSource for ScheduledCommands {
    fn poll(&mut self, now: f64) -> Vec<CommandEnvelope> {
        let mut out = Vec::new();
        while self.pending.front().is_some_and(|c| c.issued_at <= now + 1e-9) {
            out.extend(self.pending.pop_front());
        }
        out
    }
}
