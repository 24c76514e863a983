use serde::{Deserialize, Serialize};

use super::ControlError;

/// Tunables of the grasp routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspConfig {
    /// Closer goal current while enclosing and holding, mA.
    pub reference_current_ma: f64,
    /// Allowed |present - reference| for a secured grip, mA.
    pub current_band_ma: f64,
    /// rev/min.
    pub velocity_epsilon_rpm: f64,
    /// How long velocity must stay under epsilon to count as settled.
    pub hold_window_ms: u64,
    pub enclose_timeout_ms: u64,
    pub open_timeout_ms: u64,
    /// How long a detach may take before giving up, when no release arrives.
    pub detach_timeout_ms: u64,
    /// Closer spool travel from enclose start at which the pockets have met
    /// with nothing between them. `None` until calibrated.
    pub empty_closure_position_rev: Option<f64>,
    /// Closer pay-out required before a release counts as done, rev.
    pub release_backoff_rev: f64,
    /// Closer travel past the secured position that raises a slip warning, rev.
    pub slip_delta_rev: f64,
    /// Opener travel below which an open is reported as suspicious, rev.
    pub open_min_travel_rev: f64,
    pub opener_open_current_ma: f64,
    /// Both goals above this at once would fight each other, mA.
    pub antagonism_limit_ma: f64,
    pub loop_rate_hz: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            reference_current_ma: 100.0,
            current_band_ma: 10.0,
            velocity_epsilon_rpm: 0.5,
            hold_window_ms: 200,
            enclose_timeout_ms: 5000,
            open_timeout_ms: 5000,
            detach_timeout_ms: 10000,
            empty_closure_position_rev: None,
            release_backoff_rev: 0.1,
            slip_delta_rev: 0.05,
            open_min_travel_rev: 0.05,
            opener_open_current_ma: 60.0,
            antagonism_limit_ma: 10.0,
            loop_rate_hz: 50.0,
        }
    }
}

/// Fraction of the empty-close settle position kept as the threshold.
pub const CALIBRATION_MARGIN: f64 = 0.95;

impl GraspConfig {
    pub fn validate(&self, cap_ma: f64) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::Config(m));
        if !(self.reference_current_ma > 0.0 && self.reference_current_ma <= cap_ma) {
            return bad(format!(
                "reference_current_ma {} must be in (0, {cap_ma}]",
                self.reference_current_ma
            ));
        }
        if !(self.opener_open_current_ma > 0.0 && self.opener_open_current_ma <= cap_ma) {
            return bad(format!("opener_open_current_ma must be in (0, {cap_ma}]"));
        }
        for (name, v) in [
            ("current_band_ma", self.current_band_ma),
            ("velocity_epsilon_rpm", self.velocity_epsilon_rpm),
            ("slip_delta_rev", self.slip_delta_rev),
            ("loop_rate_hz", self.loop_rate_hz),
            ("antagonism_limit_ma", self.antagonism_limit_ma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("release_backoff_rev", self.release_backoff_rev),
            ("open_min_travel_rev", self.open_min_travel_rev),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if let Some(p) = self.empty_closure_position_rev {
            if !(p.is_finite() && p > 0.0) {
                return bad("empty_closure_position_rev must be positive".into());
            }
        }
        if self.hold_window_ms < 2 * self.period_ms() {
            return bad(format!(
                "hold_window_ms {} shorter than two loop periods",
                self.hold_window_ms
            ));
        }
        if self.enclose_timeout_ms == 0 || self.open_timeout_ms == 0 || self.detach_timeout_ms == 0 {
            return bad("timeouts must be non-zero".into());
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.loop_rate_hz
    }

    pub fn period_ms(&self) -> u64 {
        (1000.0 / self.loop_rate_hz).round() as u64
    }

    /// Consecutive samples that make up the hold window.
    pub fn hold_samples(&self) -> u32 {
        ((self.hold_window_ms as f64 * self.loop_rate_hz / 1000.0).round() as u32).max(2)
    }
}
