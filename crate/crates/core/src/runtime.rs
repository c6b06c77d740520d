//! Event-driven execution of installed apps.
//!
//! Each event runs the triggered apps on private copies of the current
//! state, checks every alive app's invariant, merges the accepted copies and
//! either commits the result or rolls the installation back to the last
//! valid physical state.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde_json::json;
use thiserror::Error;

use crate::compiler::GroupAddressTable;
use crate::lang::{
    evaluate_invariant, interpret_iteration, ChannelMap, TypedProgram, UncheckedImpls,
};
use crate::value::{AppState, PhysicalStateStore, Value, ValueType};
use crate::wire::{decode_dpt, encode_dpt, DptId, GroupAddress, IndividualAddress, WireError};

/// Source address of every telegram the runtime sends (15.15.250).
pub const RUNTIME_SOURCE: IndividualAddress = IndividualAddress::decode(0xFFFA);

#[derive(Debug, Error)]
pub enum BusError {
    #[error("bus unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// The runtime's view of the bus.
pub trait BusClient {
    /// Current payload of `ga`; `None` when nobody answers.
    fn read(&mut self, ga: GroupAddress) -> Result<Option<Vec<u8>>, BusError>;
    fn write(&mut self, ga: GroupAddress, payload: Vec<u8>) -> Result<(), BusError>;
    /// Told whenever the runtime's clock moves; simulated buses stamp their
    /// trace with it.
    fn clock(&mut self, _now: u64) {}
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("startup failed: {0}")]
    Startup(BusError),
    #[error("no answer when reading group address {0}")]
    ReadTimeout(GroupAddress),
    #[error("group address {address}: {source}")]
    Decode {
        address: GroupAddress,
        source: WireError,
    },
    #[error("group address {address} carries {found}, expected {expected}")]
    ValueType {
        address: GroupAddress,
        expected: ValueType,
        found: ValueType,
    },
    #[error("value {value} cannot be sent to group address {address}")]
    Encode { address: GroupAddress, value: Value },
    #[error(
        "app {app}: channel {channel} is bound to {address}, which is not in the address table"
    )]
    Unbound {
        app: String,
        channel: String,
        address: GroupAddress,
    },
    #[error("bus write failed: {0}")]
    Bus(BusError),
    #[error("cannot write log: {0}")]
    Log(std::io::Error),
}

/// An installed app as the runtime holds it.
pub struct AppRuntimeRecord {
    pub name: String,
    pub privileged: bool,
    /// Seconds between periodic runs; 0 disables the timer.
    pub timer: u64,
    pub program: TypedProgram,
    pub channels: ChannelMap,
    pub state: AppState,
    /// Dead apps never run again.
    pub alive: bool,
    impls: Box<dyn UncheckedImpls + Send>,
}

impl AppRuntimeRecord {
    pub fn new(
        name: impl Into<String>,
        privileged: bool,
        timer: u64,
        program: TypedProgram,
        channels: ChannelMap,
        impls: impl UncheckedImpls + Send + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            privileged,
            timer,
            program,
            channels,
            state: AppState::default(),
            alive: true,
            impls: Box::new(impls),
        }
    }

    fn listens_to(&self, ga: GroupAddress) -> bool {
        self.channels.values().any(|a| *a == ga)
    }
}

impl fmt::Debug for AppRuntimeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AppRuntimeRecord")
            .field("name", &self.name)
            .field("privileged", &self.privileged)
            .field("timer", &self.timer)
            .field("alive", &self.alive)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeEvent {
    TelegramReceived(GroupAddress, Value),
    TimerFired(String),
    ShutdownRequested,
}

impl fmt::Display for RuntimeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuntimeEvent::TelegramReceived(ga, v) => write!(f, "telegram {ga} = {v}"),
            RuntimeEvent::TimerFired(app) => write!(f, "timer {app}"),
            RuntimeEvent::ShutdownRequested => f.write_str("shutdown"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The event did not concern the installation.
    Ignored,
    Committed,
    /// The merged state broke an invariant; the last valid state was
    /// restored and every app stopped.
    Restored,
    Shutdown,
}

impl Verdict {
    fn as_str(self) -> &'static str {
        match self {
            Verdict::Ignored => "ignored",
            Verdict::Committed => "committed",
            Verdict::Restored => "restored",
            Verdict::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KilledApp {
    pub name: String,
    pub reason: String,
}

/// What one event did.
#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome {
    pub time: u64,
    pub event: RuntimeEvent,
    /// Apps run, in execution order.
    pub executed: Vec<String>,
    pub killed: Vec<KilledApp>,
    pub verdict: Verdict,
    /// Bus writes sent, in address order.
    pub writes: Vec<(GroupAddress, Value)>,
}

impl EventOutcome {
    fn to_json(&self) -> serde_json::Value {
        json!({
            "t": self.time,
            "event": self.event.to_string(),
            "executed": self.executed,
            "killed": self.killed.iter().map(|k| json!({"app": k.name, "reason": k.reason})).collect::<Vec<_>>(),
            "verdict": self.verdict.as_str(),
            "writes": self.writes.iter().map(|(ga, v)| json!({"address": ga.to_string(), "value": v.to_json()})).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct AddressSpec {
    value_type: ValueType,
    dpt: DptId,
}

pub struct Runtime<B: BusClient> {
    /// Sorted by name.
    apps: Vec<AppRuntimeRecord>,
    types: BTreeMap<GroupAddress, AddressSpec>,
    store: PhysicalStateStore,
    last_valid: PhysicalStateStore,
    timers: BTreeMap<usize, u64>,
    now: u64,
    bus: B,
    log: Option<Box<dyn Write + Send>>,
    stopped: bool,
}

impl<B: BusClient> Runtime<B> {
    /// Reads every table address once, arms timers and sets the last valid
    /// state to what was read.
    pub fn initialize(
        table: &GroupAddressTable,
        mut apps: Vec<AppRuntimeRecord>,
        mut bus: B,
        log: Option<Box<dyn Write + Send>>,
    ) -> Result<Self, RuntimeError> {
        let types: BTreeMap<_, _> = table
            .entries
            .iter()
            .map(|(ga, e)| {
                (
                    *ga,
                    AddressSpec {
                        value_type: e.value_type,
                        dpt: e.dpt,
                    },
                )
            })
            .collect();
        apps.sort_by(|a, b| a.name.cmp(&b.name));
        for app in &apps {
            for (ch, ga) in &app.channels {
                if !types.contains_key(ga) {
                    return Err(RuntimeError::Unbound {
                        app: app.name.clone(),
                        channel: ch.to_string(),
                        address: *ga,
                    });
                }
            }
        }
        bus.clock(0);
        let mut store = PhysicalStateStore::new();
        for (ga, spec) in &types {
            let payload = bus
                .read(*ga)
                .map_err(RuntimeError::Startup)?
                .ok_or(RuntimeError::ReadTimeout(*ga))?;
            store.set(*ga, decode_value(*ga, *spec, &payload)?);
        }
        let timers = apps
            .iter()
            .enumerate()
            .filter(|(_, a)| a.timer > 0)
            .map(|(i, a)| (i, a.timer))
            .collect();
        let mut rt = Self {
            apps,
            types,
            last_valid: store.clone(),
            store,
            timers,
            now: 0,
            bus,
            log,
            stopped: false,
        };
        let line = json!({
            "t": 0,
            "event": "initialized",
            "apps": rt.apps.iter().map(|a| a.name.as_str()).collect::<Vec<_>>(),
            "addresses": rt.types.len(),
        });
        rt.write_log(&line)?;
        Ok(rt)
    }

    pub fn store(&self) -> &PhysicalStateStore {
        &self.store
    }

    pub fn last_valid(&self) -> &PhysicalStateStore {
        &self.last_valid
    }

    pub fn apps(&self) -> &[AppRuntimeRecord] {
        &self.apps
    }

    pub fn app(&self, name: &str) -> Option<&AppRuntimeRecord> {
        self.apps.iter().find(|a| a.name == name)
    }

    pub fn is_alive(&self, name: &str) -> bool {
        self.app(name).is_some_and(|a| a.alive)
    }

    pub fn all_stopped(&self) -> bool {
        self.apps.iter().all(|a| !a.alive)
    }

    pub fn is_shut_down(&self) -> bool {
        self.stopped
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn bus(&self) -> &B {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut B {
        &mut self.bus
    }

    /// Conjunction of every alive app's invariant, using `states[name]` for
    /// the apps listed there and the current app state otherwise.
    pub fn check_conditions(
        &self,
        states: &BTreeMap<String, AppState>,
        phys: &PhysicalStateStore,
    ) -> bool {
        let overrides = self
            .apps
            .iter()
            .enumerate()
            .filter_map(|(i, a)| states.get(&a.name).map(|s| (i, s)))
            .collect();
        self.conditions_hold(phys, &overrides)
    }

    fn conditions_hold(
        &self,
        phys: &PhysicalStateStore,
        overrides: &BTreeMap<usize, &AppState>,
    ) -> bool {
        self.apps
            .iter()
            .enumerate()
            .filter(|(_, a)| a.alive)
            .all(|(i, a)| {
                let state = overrides.get(&i).copied().unwrap_or(&a.state);
                // An invariant that cannot be evaluated counts as violated.
                evaluate_invariant(&a.program, &a.channels, state, phys).unwrap_or(false)
            })
    }

    fn trigger_indices(&self, ev: &RuntimeEvent) -> Vec<usize> {
        let mut hit: Vec<usize> = match ev {
            RuntimeEvent::TelegramReceived(ga, _) => (0..self.apps.len())
                .filter(|&i| self.apps[i].alive && self.apps[i].listens_to(*ga))
                .collect(),
            RuntimeEvent::TimerFired(name) => (0..self.apps.len())
                .filter(|&i| self.apps[i].alive && self.apps[i].name == *name)
                .collect(),
            RuntimeEvent::ShutdownRequested => Vec::new(),
        };
        // Apps are sorted by name, so a stable sort on the flag keeps
        // alphabetical order inside each group.
        hit.sort_by_key(|&i| self.apps[i].privileged);
        hit
    }

    /// Apps an event would run, in execution order.
    pub fn trigger_set(&self, ev: &RuntimeEvent) -> Vec<String> {
        self.trigger_indices(ev)
            .into_iter()
            .map(|i| self.apps[i].name.clone())
            .collect()
    }

    /// Turns a bus telegram into an event. Own writes, read requests and
    /// addresses outside the table yield `None`.
    pub fn event_for(
        &self,
        t: &crate::wire::Telegram,
    ) -> Result<Option<RuntimeEvent>, RuntimeError> {
        if t.source == RUNTIME_SOURCE || t.is_read_request() {
            return Ok(None);
        }
        let Some(ga) = t.group_address() else {
            return Ok(None);
        };
        let Some(spec) = self.types.get(&ga) else {
            return Ok(None);
        };
        let v = decode_value(ga, *spec, &t.payload)?;
        Ok(Some(RuntimeEvent::TelegramReceived(ga, v)))
    }

    fn kill(&mut self, idx: usize) {
        self.apps[idx].alive = false;
        self.timers.remove(&idx);
    }

    pub fn process_event(&mut self, ev: RuntimeEvent) -> Result<EventOutcome, RuntimeError> {
        let mut out = EventOutcome {
            time: self.now,
            event: ev.clone(),
            executed: Vec::new(),
            killed: Vec::new(),
            verdict: Verdict::Ignored,
            writes: Vec::new(),
        };
        match &ev {
            RuntimeEvent::ShutdownRequested => {
                self.stopped = true;
                out.verdict = Verdict::Shutdown;
                self.write_log(&out.to_json())?;
                return Ok(out);
            }
            RuntimeEvent::TelegramReceived(ga, v) => {
                let Some(spec) = self.types.get(ga) else {
                    self.write_log(&out.to_json())?;
                    return Ok(out);
                };
                let v = coerce(*ga, spec.value_type, v.clone())?;
                self.store.set(*ga, v);
            }
            RuntimeEvent::TimerFired(_) => {}
        }

        let order = self.trigger_indices(&ev);
        let snapshot = self.store.clone();
        let valid_before = self.conditions_hold(&snapshot, &BTreeMap::new());

        let mut accepted = Vec::new();
        for idx in order {
            out.executed.push(self.apps[idx].name.clone());
            let app = &mut self.apps[idx];
            let run = interpret_iteration(
                &app.program,
                &app.channels,
                &app.state,
                &snapshot,
                app.impls.as_mut(),
            );
            let reason = match run {
                Err(e) => Some(e.to_string()),
                Ok(exec) => {
                    let overrides = BTreeMap::from([(idx, &exec.app_state)]);
                    if valid_before && !self.conditions_hold(&exec.phys, &overrides) {
                        Some("run would violate an invariant".to_string())
                    } else {
                        accepted.push((idx, exec));
                        None
                    }
                }
            };
            if let Some(reason) = reason {
                self.kill(idx);
                out.killed.push(KilledApp {
                    name: self.apps[idx].name.clone(),
                    reason,
                });
            }
        }

        let mut merged = snapshot.clone();
        for (_, exec) in &accepted {
            for ga in &exec.writes {
                if let Some(v) = exec.phys.get(*ga) {
                    merged.set(*ga, v.clone());
                }
            }
        }
        let pending: BTreeMap<usize, &AppState> =
            accepted.iter().map(|(i, e)| (*i, &e.app_state)).collect();

        let target = if self.conditions_hold(&merged, &pending) {
            for (idx, exec) in &accepted {
                self.apps[*idx].state = exec.app_state.clone();
            }
            self.last_valid = merged.clone();
            out.verdict = Verdict::Committed;
            merged
        } else {
            for idx in 0..self.apps.len() {
                if self.apps[idx].alive {
                    self.kill(idx);
                    out.killed.push(KilledApp {
                        name: self.apps[idx].name.clone(),
                        reason: "installation restored to the last valid state".into(),
                    });
                }
            }
            out.verdict = Verdict::Restored;
            self.last_valid.clone()
        };

        for (ga, v) in target.iter() {
            if snapshot.get(ga) != Some(v) {
                out.writes.push((ga, v.clone()));
            }
        }
        self.store = target;
        for (ga, v) in &out.writes {
            let payload = self.encode_value(*ga, v)?;
            self.bus.write(*ga, payload).map_err(RuntimeError::Bus)?;
        }
        self.write_log(&out.to_json())?;
        Ok(out)
    }

    /// Earliest pending timer.
    pub fn next_timer_due(&self) -> Option<u64> {
        self.timers.values().min().copied()
    }

    /// Moves the clock to `t`, running every timer that falls due on the
    /// way in time order (ties in app order).
    pub fn advance_to(&mut self, t: u64) -> Result<Vec<EventOutcome>, RuntimeError> {
        let mut outcomes = Vec::new();
        while let Some((&idx, &due)) = self.timers.iter().min_by_key(|(i, d)| (**d, **i)) {
            if due > t {
                break;
            }
            self.set_now(due.max(self.now));
            self.timers.insert(idx, due + self.apps[idx].timer);
            let name = self.apps[idx].name.clone();
            outcomes.push(self.process_event(RuntimeEvent::TimerFired(name))?);
        }
        self.set_now(t.max(self.now));
        Ok(outcomes)
    }

    fn set_now(&mut self, t: u64) {
        self.now = t;
        self.bus.clock(t);
    }

    fn encode_value(&self, ga: GroupAddress, v: &Value) -> Result<Vec<u8>, RuntimeError> {
        encode_for(self.types[&ga].dpt, v).ok_or_else(|| RuntimeError::Encode {
            address: ga,
            value: v.clone(),
        })
    }

    fn write_log(&mut self, line: &serde_json::Value) -> Result<(), RuntimeError> {
        if let Some(w) = self.log.as_mut() {
            writeln!(w, "{line}")
                .and_then(|()| w.flush())
                .map_err(RuntimeError::Log)?;
        }
        Ok(())
    }
}

fn coerce(ga: GroupAddress, ty: ValueType, v: Value) -> Result<Value, RuntimeError> {
    match (ty, v) {
        (ValueType::Real, Value::Int(i)) => Ok(Value::Real(i as f64)),
        (ty, v) if v.ty() == ty => Ok(v),
        (ty, v) => Err(RuntimeError::ValueType {
            address: ga,
            expected: ty,
            found: v.ty(),
        }),
    }
}

fn decode_value(
    ga: GroupAddress,
    spec: AddressSpec,
    payload: &[u8],
) -> Result<Value, RuntimeError> {
    let v = decode_dpt(spec.dpt, payload).map_err(|source| RuntimeError::Decode {
        address: ga,
        source,
    })?;
    coerce(ga, spec.value_type, Value::from_dpt(v))
}

/// Encodes `v` for an address of datapoint type `dpt`.
pub fn encode_for(dpt: DptId, v: &Value) -> Option<Vec<u8>> {
    v.to_dpt(dpt).and_then(|d| encode_dpt(&d).ok())
}
