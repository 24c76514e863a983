use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultReason {
    Aborted,
    EmptyClosure,
    Oversize,
    Timeout,
    OpenTimeout,
    GraspLost,
    LostDuringDetach,
    Bus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraspPhase {
    Idle,
    Open,
    AlignPending,
    Enclosing,
    Secured,
    Detaching,
    Releasing,
    Fault(FaultReason),
}

impl fmt::Display for GraspPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraspPhase::Fault(r) => write!(f, "Fault({r:?})"),
            p => write!(f, "{p:?}"),
        }
    }
}

impl GraspPhase {
    /// Whether the state machine may move from `self` to `to`.
    pub fn can_transition(self, to: GraspPhase) -> bool {
        use FaultReason as R;
        use GraspPhase::*;
        if self == to {
            return false;
        }
        match (self, to) {
            (Fault(_), Idle) => true,
            (Fault(_), _) => false,
            (_, Fault(R::Aborted)) => true,
            (_, Fault(R::Bus)) => true,
            (Idle, Open) => true,
            (Open, AlignPending) => true,
            (Open | AlignPending, Enclosing) => true,
            (Open | Releasing, Fault(R::OpenTimeout)) => true,
            (Enclosing, Secured) => true,
            (Enclosing, Fault(R::EmptyClosure | R::Oversize | R::Timeout)) => true,
            (Secured, Detaching | Releasing | Fault(R::GraspLost)) => true,
            (Detaching, Releasing | Fault(R::LostDuringDetach)) => true,
            (Releasing, Open) => true,
            _ => false,
        }
    }

    pub fn is_fault(self) -> bool {
        matches!(self, GraspPhase::Fault(_))
    }
}

/// Operator command vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Command {
    Open,
    AlignConfirm,
    Grasp,
    Release,
    Abort,
    /// New reference current, mA.
    SetCurrent(f64),
}

impl Command {
    /// Whether `self` is meaningful in `phase`. Abort always is; SetCurrent
    /// is accepted anywhere and checked against the cap separately.
    pub fn allowed_in(self, phase: GraspPhase) -> bool {
        use GraspPhase::*;
        match self {
            Command::Abort | Command::SetCurrent(_) => true,
            Command::Open => matches!(phase, Idle | Open | Releasing),
            Command::AlignConfirm => phase == Open,
            Command::Grasp => matches!(phase, Open | AlignPending),
            Command::Release => matches!(phase, Secured | Detaching | Fault(_)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    pub command: Command,
    pub request_id: u64,
    /// s on the controller clock, or 0 when unknown.
    #[serde(default)]
    pub issued_at: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use GraspPhase::*;

    #[test]
    fn harvest_path_is_allowed() {
        let path = [Idle, Open, AlignPending, Enclosing, Secured, Detaching, Releasing, Open];
        for w in path.windows(2) {
            assert!(w[0].can_transition(w[1]), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn shortcuts_are_not() {
        assert!(!Idle.can_transition(Enclosing));
        assert!(!Idle.can_transition(Secured));
        assert!(!Open.can_transition(Secured));
        assert!(!Secured.can_transition(Enclosing));
        assert!(!Fault(FaultReason::Aborted).can_transition(Open));
        assert!(!Enclosing.can_transition(Fault(FaultReason::GraspLost)));
    }

    #[test]
    fn abort_reaches_fault_from_anywhere() {
        for p in [Idle, Open, AlignPending, Enclosing, Secured, Detaching, Releasing] {
            assert!(p.can_transition(Fault(FaultReason::Aborted)));
        }
    }

    #[test]
    fn command_guard() {
        assert!(Command::Grasp.allowed_in(Open));
        assert!(!Command::Grasp.allowed_in(Idle));
        assert!(!Command::Open.allowed_in(Enclosing));
        for p in [Idle, Open, Enclosing, Fault(FaultReason::Bus)] {
            assert!(Command::Abort.allowed_in(p));
        }
    }

    #[test]
    fn command_json_shape() {
        let j = serde_json::to_string(&Command::SetCurrent(80.0)).unwrap();
        assert_eq!(j, r#"{"kind":"SetCurrent","value":80.0}"#);
        let c: Command = serde_json::from_str(r#"{"kind":"Grasp"}"#).unwrap();
        assert_eq!(c, Command::Grasp);
    }
}
