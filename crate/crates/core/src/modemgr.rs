//! Mode management: a coordinator of interacting finite state machines.
//!
//! Each dispatch runs a FIFO cascade. The initial event is processed first.
//! Events queued by `EmitEvent` actions follow in order, until the queue
//! empties. Every step reads the states as left by the previous step. Among
//! the transitions leaving the current state on the event, the first one
//! whose guard holds fires; events with no such transition are ignored and
//! traced.
//!
//! A cascade that would take more than [`MAX_CASCADE`] steps is aborted with
//! [`ModeError::CascadeOverflow`] and leaves the coordinator unchanged. Group
//! actions are handed to the [`GroupHook`] only once a cascade completes, in
//! the order they were emitted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of dispatch steps in one cascade.
pub const MAX_CASCADE: usize = 1000;

/// Current state of every loaded FSM.
pub type SystemMode = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardLiteral {
    pub fsm: String,
    pub state: String,
}

/// Conjunction of `fsm is in state` literals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Guard(pub Vec<GuardLiteral>);

impl Guard {
    pub fn all<S: AsRef<str>>(lits: &[(S, S)]) -> Self {
        Guard(
            lits.iter()
                .map(|(f, s)| GuardLiteral {
                    fsm: f.as_ref().to_string(),
                    state: s.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn holds(&self, mode: &SystemMode) -> bool {
        self.0
            .iter()
            .all(|l| mode.get(&l.fsm).is_some_and(|s| *s == l.state))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    StartGroup(String),
    StopGroup(String),
    EmitEvent { target: String, event: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDef {
    pub from: String,
    pub event: String,
    #[serde(default)]
    pub guard: Option<Guard>,
    pub to: String,
    #[serde(default)]
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsmDefinition {
    pub fsm_id: String,
    pub states: Vec<String>,
    pub initial: String,
    pub transitions: Vec<TransitionDef>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModeError {
    #[error("no FSM definitions given")]
    NoDefinitions,
    #[error("FSM {0:?} has no states")]
    NoStates(String),
    #[error("FSM {fsm:?}: unknown state {state:?} in {context}")]
    UnknownStateRef {
        fsm: String,
        state: String,
        context: String,
    },
    #[error("FSM {fsm:?} references FSM {reference:?}, which is not loaded")]
    UnknownFsmRef { fsm: String, reference: String },
    #[error("FSM {fsm:?} references unknown group {group:?}")]
    UnknownGroupRef { fsm: String, group: String },
    #[error("FSM id {0:?} defined twice")]
    DuplicateFsmId(String),
    #[error("no FSM named {0:?}")]
    UnknownFsm(String),
    #[error("event cascade exceeded {depth} steps")]
    CascadeOverflow { depth: usize },
}

/// Receives group actions; implemented over the function-software graph by
/// the platform.
pub trait GroupHook: Send {
    /// Group ids actions may name.
    fn groups(&self) -> BTreeSet<String>;
    fn start_group(&mut self, group: &str) -> Result<(), String>;
    fn stop_group(&mut self, group: &str) -> Result<(), String>;
}

/// Hook over a fixed group set that only records what it was asked to do.
#[derive(Debug, Clone, Default)]
pub struct RecordingHook {
    pub known: BTreeSet<String>,
    pub log: Arc<Mutex<Vec<Action>>>,
}

impl RecordingHook {
    pub fn new<S: AsRef<str>>(groups: &[S]) -> Self {
        Self {
            known: groups.iter().map(|g| g.as_ref().to_string()).collect(),
            log: Arc::default(),
        }
    }
}

impl GroupHook for RecordingHook {
    fn groups(&self) -> BTreeSet<String> {
        self.known.clone()
    }

    fn start_group(&mut self, group: &str) -> Result<(), String> {
        self.log
            .lock()
            .unwrap()
            .push(Action::StartGroup(group.into()));
        Ok(())
    }

    fn stop_group(&mut self, group: &str) -> Result<(), String> {
        self.log
            .lock()
            .unwrap()
            .push(Action::StopGroup(group.into()));
        Ok(())
    }
}

/// One processed cascade step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub dispatch: u64,
    pub step: usize,
    pub fsm: String,
    pub event: String,
    pub from: String,
    pub to: String,
    /// Index of the fired transition; `None` when the event was ignored.
    pub transition: Option<usize>,
    pub actions: Vec<Action>,
}

impl TraceEntry {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace entry serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchOutcome {
    pub mode: SystemMode,
    /// All actions of all fired transitions, in execution order.
    pub actions: Vec<Action>,
    pub steps: usize,
    /// Group actions the hook rejected, as `(action, reason)`.
    pub group_errors: Vec<(Action, String)>,
}

#[derive(Default)]
struct Inner {
    defs: BTreeMap<String, FsmDefinition>,
    mode: SystemMode,
    hook: Option<Box<dyn GroupHook>>,
    trace: Vec<TraceEntry>,
    dispatches: u64,
}

/// Serializes dispatches; snapshots are published only after a cascade
/// completes, so readers never observe intermediate states.
#[derive(Default)]
pub struct Coordinator {
    inner: Mutex<Inner>,
    published: RwLock<Arc<SystemMode>>,
}

impl std::fmt::Debug for Coordinator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coordinator")
            .field("mode", &*self.snapshot())
            .finish()
    }
}

/// Checks all cross-references of `defs` against each other and `groups`.
pub fn validate(defs: &[FsmDefinition], groups: &BTreeSet<String>) -> Result<(), ModeError> {
    if defs.is_empty() {
        return Err(ModeError::NoDefinitions);
    }
    let mut by_id: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for d in defs {
        if d.states.is_empty() {
            return Err(ModeError::NoStates(d.fsm_id.clone()));
        }
        let states = d.states.iter().map(String::as_str).collect();
        if by_id.insert(&d.fsm_id, states).is_some() {
            return Err(ModeError::DuplicateFsmId(d.fsm_id.clone()));
        }
    }
    let state_err = |fsm: &str, state: &str, context: String| ModeError::UnknownStateRef {
        fsm: fsm.into(),
        state: state.into(),
        context,
    };
    for d in defs {
        let own = &by_id[d.fsm_id.as_str()];
        if !own.contains(d.initial.as_str()) {
            return Err(state_err(&d.fsm_id, &d.initial, "initial".into()));
        }
        for (i, t) in d.transitions.iter().enumerate() {
            for s in [&t.from, &t.to] {
                if !own.contains(s.as_str()) {
                    return Err(state_err(&d.fsm_id, s, format!("transition {i}")));
                }
            }
            for lit in t.guard.iter().flat_map(|g| &g.0) {
                let Some(other) = by_id.get(lit.fsm.as_str()) else {
                    return Err(ModeError::UnknownFsmRef {
                        fsm: d.fsm_id.clone(),
                        reference: lit.fsm.clone(),
                    });
                };
                if !other.contains(lit.state.as_str()) {
                    return Err(state_err(
                        &lit.fsm,
                        &lit.state,
                        format!("guard of {}[{i}]", d.fsm_id),
                    ));
                }
            }
            for a in &t.actions {
                match a {
                    Action::StartGroup(g) | Action::StopGroup(g) if !groups.contains(g) => {
                        return Err(ModeError::UnknownGroupRef {
                            fsm: d.fsm_id.clone(),
                            group: g.clone(),
                        });
                    }
                    Action::EmitEvent { target, .. } if !by_id.contains_key(target.as_str()) => {
                        return Err(ModeError::UnknownFsmRef {
                            fsm: d.fsm_id.clone(),
                            reference: target.clone(),
                        });
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

impl Coordinator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_hook(hook: Box<dyn GroupHook>) -> Self {
        let c = Self::new();
        c.inner.lock().unwrap().hook = Some(hook);
        c
    }

    /// Replaces all definitions; every FSM enters its initial state.
    pub fn load(&self, defs: Vec<FsmDefinition>) -> Result<SystemMode, ModeError> {
        let mut inner = self.inner.lock().unwrap();
        let groups = inner.hook.as_ref().map(|h| h.groups()).unwrap_or_default();
        validate(&defs, &groups)?;
        inner.mode = defs
            .iter()
            .map(|d| (d.fsm_id.clone(), d.initial.clone()))
            .collect();
        inner.defs = defs.into_iter().map(|d| (d.fsm_id.clone(), d)).collect();
        let mode = inner.mode.clone();
        *self.published.write().unwrap() = Arc::new(mode.clone());
        Ok(mode)
    }

    pub fn snapshot(&self) -> Arc<SystemMode> {
        self.published.read().unwrap().clone()
    }

    pub fn state_of(&self, fsm: &str) -> Option<String> {
        self.snapshot().get(fsm).cloned()
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.inner.lock().unwrap().trace.clone()
    }

    pub fn dispatch(&self, fsm: &str, event: &str) -> Result<DispatchOutcome, ModeError> {
        let mut inner = self.inner.lock().unwrap();
        if !inner.defs.contains_key(fsm) {
            return Err(ModeError::UnknownFsm(fsm.to_string()));
        }
        inner.dispatches += 1;
        let (mode, actions, trace) =
            run_cascade(&inner.defs, &inner.mode, fsm, event, inner.dispatches)?;
        let steps = trace.len();
        inner.mode = mode.clone();
        inner.trace.extend(trace);
        *self.published.write().unwrap() = Arc::new(mode.clone());

        let mut group_errors = Vec::new();
        if let Some(hook) = inner.hook.as_mut() {
            for a in &actions {
                let res = match a {
                    Action::StartGroup(g) => hook.start_group(g),
                    Action::StopGroup(g) => hook.stop_group(g),
                    Action::EmitEvent { .. } => continue,
                };
                if let Err(e) = res {
                    log::warn!("mode action {a:?} failed: {e}");
                    group_errors.push((a.clone(), e));
                }
            }
        }
        Ok(DispatchOutcome {
            mode,
            actions,
            steps,
            group_errors,
        })
    }
}

type Cascade = (SystemMode, Vec<Action>, Vec<TraceEntry>);

fn run_cascade(
    defs: &BTreeMap<String, FsmDefinition>,
    start: &SystemMode,
    fsm: &str,
    event: &str,
    dispatch: u64,
) -> Result<Cascade, ModeError> {
    let mut mode = start.clone();
    let mut queue = VecDeque::from([(fsm.to_string(), event.to_string())]);
    let mut actions = Vec::new();
    let mut trace = Vec::new();
    while let Some((target, ev)) = queue.pop_front() {
        if trace.len() == MAX_CASCADE {
            return Err(ModeError::CascadeOverflow { depth: MAX_CASCADE });
        }
        let def = &defs[&target];
        let cur = mode[&target].clone();
        let fired = def.transitions.iter().enumerate().find(|(_, t)| {
            t.from == cur && t.event == ev && t.guard.as_ref().is_none_or(|g| g.holds(&mode))
        });
        let mut entry = TraceEntry {
            dispatch,
            step: trace.len(),
            fsm: target.clone(),
            event: ev,
            from: cur.clone(),
            to: cur,
            transition: None,
            actions: Vec::new(),
        };
        if let Some((i, t)) = fired {
            mode.insert(target.clone(), t.to.clone());
            for a in &t.actions {
                if let Action::EmitEvent { target, event } = a {
                    queue.push_back((target.clone(), event.clone()));
                }
                actions.push(a.clone());
            }
            entry.to = t.to.clone();
            entry.transition = Some(i);
            entry.actions = t.actions.clone();
        }
        trace.push(entry);
    }
    Ok((mode, actions, trace))
}
