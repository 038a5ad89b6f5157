use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LifecycleState {
    Created,
    Configured,
    Running,
    Failed,
    /// Terminal.
    Stopped,
}

/// One recorded state change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub round: u64,
    pub node: String,
    pub from: LifecycleState,
    pub to: LifecycleState,
    /// Restart count after the transition.
    pub restart_count: u32,
}

/// The transition table. `Failed -> Running` needs a restart budget:
/// `restart_count` is the count before the restart.
pub fn is_legal_transition(
    from: LifecycleState,
    to: LifecycleState,
    restart_count: u32,
    limit: u32,
) -> bool {
    use LifecycleState::*;
    match (from, to) {
        (Created, Configured) | (Configured, Running) => true,
        (Running, Failed) | (Running, Stopped) | (Failed, Stopped) => true,
        (Failed, Running) => restart_count < limit,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::LifecycleState::*;
    use super::*;

    #[test]
    fn table() {
        assert!(is_legal_transition(Created, Configured, 0, 0));
        assert!(!is_legal_transition(Created, Running, 0, 0));
        assert!(is_legal_transition(Failed, Running, 0, 1));
        assert!(!is_legal_transition(Failed, Running, 1, 1));
        assert!(!is_legal_transition(Stopped, Running, 0, 9));
        assert!(!is_legal_transition(Configured, Failed, 0, 9));
    }
}
