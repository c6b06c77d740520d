//! Simulated KNX bus with a virtual clock, a scenario harness and a UDP
//! bridge.
//!
//! The bus keeps the last payload of every group address so that the
//! runtime's start-up reads become store lookups. Every frame that passes
//! through it is appended to a trace stamped with the virtual time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Deserialize;
use thiserror::Error;

use crate::compiler::GroupAddressTable;
use crate::runtime::{
    encode_for, AppRuntimeRecord, BusClient, BusError, EventOutcome, Runtime, RuntimeError,
};
use crate::value::Value;
use crate::wire::{
    decode_telegram, encode_telegram, GroupAddress, IndividualAddress, Telegram, WireError,
};

/// Source of telegrams injected by scenarios (1.1.200).
pub const SENSOR_SOURCE: IndividualAddress = IndividualAddress::decode(0x11C8);
/// Source of read responses sent by the UDP bridge (0.0.1).
pub const BUS_SOURCE: IndividualAddress = IndividualAddress::decode(0x0001);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: u64,
    pub frame: Vec<u8>,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8} ", self.time)?;
        for b in &self.frame {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Inner {
    store: BTreeMap<GroupAddress, Vec<u8>>,
    trace: Vec<TraceEntry>,
    clock: u64,
    subscribers: Vec<Sender<Telegram>>,
}

impl Inner {
    fn append(&mut self, frame: Vec<u8>, t: &Telegram) {
        self.trace.push(TraceEntry {
            time: self.clock,
            frame,
        });
        if let (Some(ga), false) = (t.group_address(), t.payload.is_empty()) {
            self.store.insert(ga, t.payload.clone());
        }
        self.subscribers.retain(|s| s.send(t.clone()).is_ok());
    }
}

/// Cheap to clone; all clones share one bus.
#[derive(Clone, Default)]
pub struct SimBus {
    inner: Arc<Mutex<Inner>>,
}

impl SimBus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn publish(&self, t: &Telegram) -> Result<(), WireError> {
        let frame = encode_telegram(t)?;
        self.publish_frame(&frame).map(drop)
    }

    /// Validates and publishes an encoded frame. Rejected frames leave the
    /// bus untouched.
    pub fn publish_frame(&self, frame: &[u8]) -> Result<Telegram, WireError> {
        let t = decode_telegram(frame)?;
        self.lock().append(frame.to_vec(), &t);
        Ok(t)
    }

    /// Publishes a read request for `ga` and answers it from the store.
    pub fn read_request(&self, source: IndividualAddress, ga: GroupAddress) -> Option<Vec<u8>> {
        let t = Telegram::group_read(source, ga);
        let frame = encode_telegram(&t).expect("read requests always encode");
        let mut inner = self.lock();
        inner.append(frame, &t);
        inner.store.get(&ga).cloned()
    }

    /// Every telegram published from now on, in publication order.
    pub fn subscribe(&self) -> Receiver<Telegram> {
        let (tx, rx) = mpsc::channel();
        self.lock().subscribers.push(tx);
        rx
    }

    /// Sets a device's current value without a telegram.
    pub fn preset(&self, ga: GroupAddress, payload: Vec<u8>) {
        self.lock().store.insert(ga, payload);
    }

    pub fn value(&self, ga: GroupAddress) -> Option<Vec<u8>> {
        self.lock().store.get(&ga).cloned()
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.lock().trace.clone()
    }

    /// One line per frame: virtual time and hex bytes.
    pub fn render_trace(&self) -> String {
        self.lock().trace.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn read_requests(&self) -> usize {
        self.lock()
            .trace
            .iter()
            .filter(|e| decode_telegram(&e.frame).is_ok_and(|t| t.is_read_request()))
            .count()
    }

    pub fn now(&self) -> u64 {
        self.lock().clock
    }

    pub fn set_time(&self, t: u64) {
        self.lock().clock = t;
    }
}

/// In-process connection used by the runtime.
#[derive(Clone)]
pub struct SimBusClient {
    bus: SimBus,
    source: IndividualAddress,
}

impl SimBusClient {
    pub fn new(bus: SimBus, source: IndividualAddress) -> Self {
        Self { bus, source }
    }
}

impl BusClient for SimBusClient {
    fn read(&mut self, ga: GroupAddress) -> Result<Option<Vec<u8>>, BusError> {
        Ok(self.bus.read_request(self.source, ga))
    }

    fn write(&mut self, ga: GroupAddress, payload: Vec<u8>) -> Result<(), BusError> {
        Ok(self
            .bus
            .publish(&Telegram::group_write(self.source, ga, payload))?)
    }

    fn clock(&mut self, now: u64) {
        self.bus.set_time(now);
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unknown address or channel {0:?}")]
    Address(String),
    #[error("value {value} does not fit {address}")]
    Value {
        address: String,
        value: serde_json::Value,
    },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// A group address literal such as `0/0/1`, or a channel reference
/// `app.INSTANCE.channel`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct AddressRef(pub String);

impl AddressRef {
    pub fn resolve(&self, table: &GroupAddressTable) -> Result<GroupAddress, ScenarioError> {
        if let Ok(ga) = self.0.parse::<GroupAddress>() {
            return Ok(ga);
        }
        let err = || ScenarioError::Address(self.0.clone());
        let (app, channel) = self.0.split_once('.').ok_or_else(err)?;
        table
            .channel_map(app)
            .iter()
            .find(|(id, _)| id.to_string() == channel)
            .map(|(_, ga)| *ga)
            .ok_or_else(err)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Step {
    Inject {
        address: AddressRef,
        value: serde_json::Value,
    },
    Advance(u64),
    ExpectValue {
        address: AddressRef,
        value: serde_json::Value,
    },
    ExpectKilled(String),
    ExpectAllStopped,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Inject { address, value } => write!(f, "inject {} = {value}", address.0),
            Step::Advance(s) => write!(f, "advance {s}s"),
            Step::ExpectValue { address, value } => write!(f, "expect {} = {value}", address.0),
            Step::ExpectKilled(app) => write!(f, "expect {app} killed"),
            Step::ExpectAllStopped => f.write_str("expect all apps stopped"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Device values present on the bus before the runtime starts.
    #[serde(default)]
    pub initial: BTreeMap<String, serde_json::Value>,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn initial_values(
        &self,
        table: &GroupAddressTable,
    ) -> Result<BTreeMap<GroupAddress, Value>, ScenarioError> {
        self.initial
            .iter()
            .map(|(addr, v)| {
                let r = AddressRef(addr.clone());
                let ga = r.resolve(table)?;
                Ok((ga, typed_value(table, &r, ga, v)?))
            })
            .collect()
    }
}

fn typed_value(
    table: &GroupAddressTable,
    r: &AddressRef,
    ga: GroupAddress,
    v: &serde_json::Value,
) -> Result<Value, ScenarioError> {
    let entry = table
        .entries
        .get(&ga)
        .ok_or_else(|| ScenarioError::Address(r.0.clone()))?;
    Value::from_json(v, entry.value_type).ok_or_else(|| ScenarioError::Value {
        address: r.0.clone(),
        value: v.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub index: usize,
    pub step: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub failure: Option<StepFailure>,
    pub trace: Vec<TraceEntry>,
    pub outcomes: Vec<EventOutcome>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => writeln!(f, "scenario {}: pass", self.name)?,
            Some(s) => writeln!(
                f,
                "scenario {}: FAIL at step {} ({}): {}",
                self.name, s.index, s.step, s.message
            )?,
        }
        for e in &self.trace {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

/// A runtime wired to its own simulated bus.
pub struct Simulation {
    pub bus: SimBus,
    pub runtime: Runtime<SimBusClient>,
    pub table: GroupAddressTable,
    inbox: Receiver<Telegram>,
    outcomes: Vec<EventOutcome>,
}

impl Simulation {
    /// Presets the device values, then initializes the runtime against a
    /// fresh bus.
    pub fn start(
        table: GroupAddressTable,
        apps: Vec<AppRuntimeRecord>,
        initial: &BTreeMap<GroupAddress, Value>,
        log: Option<Box<dyn io::Write + Send>>,
    ) -> Result<Self, ScenarioError> {
        let bus = SimBus::new();
        for (ga, v) in initial {
            let payload = encode_payload(&table, *ga, v)?;
            bus.preset(*ga, payload);
        }
        let client = SimBusClient::new(bus.clone(), crate::runtime::RUNTIME_SOURCE);
        let runtime = Runtime::initialize(&table, apps, client, log)?;
        let inbox = bus.subscribe();
        Ok(Self {
            bus,
            runtime,
            table,
            inbox,
            outcomes: Vec::new(),
        })
    }

    pub fn for_scenario(
        scenario: &Scenario,
        table: GroupAddressTable,
        apps: Vec<AppRuntimeRecord>,
        log: Option<Box<dyn io::Write + Send>>,
    ) -> Result<Self, ScenarioError> {
        let initial = scenario.initial_values(&table)?;
        Self::start(table, apps, &initial, log)
    }

    /// Delivers every pending telegram to the runtime.
    pub fn pump(&mut self) -> Result<(), ScenarioError> {
        while let Ok(t) = self.inbox.try_recv() {
            if let Some(ev) = self.runtime.event_for(&t)? {
                let out = self.runtime.process_event(ev)?;
                self.outcomes.push(out);
            }
        }
        Ok(())
    }

    /// A sensor sends `value` to `ga`.
    pub fn inject(&mut self, ga: GroupAddress, value: &Value) -> Result<(), ScenarioError> {
        let payload = encode_payload(&self.table, ga, value)?;
        self.bus
            .publish(&Telegram::group_write(SENSOR_SOURCE, ga, payload))?;
        self.pump()
    }

    pub fn advance(&mut self, seconds: u64) -> Result<(), ScenarioError> {
        let target = self.runtime.now() + seconds;
        let outs = self.runtime.advance_to(target)?;
        self.outcomes.extend(outs);
        self.pump()
    }

    pub fn outcomes(&self) -> &[EventOutcome] {
        &self.outcomes
    }

    /// Value of `ga` as last seen on the bus.
    pub fn bus_value(&self, ga: GroupAddress) -> Option<Value> {
        let entry = self.table.entries.get(&ga)?;
        let payload = self.bus.value(ga)?;
        let raw = crate::wire::decode_dpt(entry.dpt, &payload).ok()?;
        match (Value::from_dpt(raw), entry.value_type) {
            (Value::Int(i), crate::value::ValueType::Real) => Some(Value::Real(i as f64)),
            (v, _) => Some(v),
        }
    }

    fn step(&mut self, step: &Step) -> Result<Option<String>, ScenarioError> {
        match step {
            Step::Inject { address, value } => {
                let ga = address.resolve(&self.table)?;
                let v = typed_value(&self.table, address, ga, value)?;
                self.inject(ga, &v)?;
            }
            Step::Advance(s) => self.advance(*s)?,
            Step::ExpectValue { address, value } => {
                let ga = address.resolve(&self.table)?;
                let want = typed_value(&self.table, address, ga, value)?;
                let local = self.runtime.store().get(ga);
                let on_bus = self.bus_value(ga);
                if local != Some(&want) || on_bus.as_ref() != Some(&want) {
                    return Ok(Some(format!(
                        "{ga}: expected {want}, runtime has {}, bus has {}",
                        show(local),
                        show(on_bus.as_ref())
                    )));
                }
            }
            Step::ExpectKilled(app) => match self.runtime.app(app) {
                None => return Ok(Some(format!("no app named {app}"))),
                Some(a) if a.alive => return Ok(Some(format!("{app} is still alive"))),
                Some(_) => {}
            },
            Step::ExpectAllStopped => {
                let alive: Vec<&str> = self
                    .runtime
                    .apps()
                    .iter()
                    .filter(|a| a.alive)
                    .map(|a| a.name.as_str())
                    .collect();
                if !alive.is_empty() {
                    return Ok(Some(format!("still alive: {}", alive.join(", "))));
                }
            }
        }
        Ok(None)
    }
}

fn show(v: Option<&Value>) -> String {
    v.map_or_else(|| "nothing".into(), Value::to_string)
}

fn encode_payload(
    table: &GroupAddressTable,
    ga: GroupAddress,
    v: &Value,
) -> Result<Vec<u8>, ScenarioError> {
    let err = || ScenarioError::Value {
        address: ga.to_string(),
        value: v.to_json(),
    };
    let entry = table.entries.get(&ga).ok_or_else(err)?;
    encode_for(entry.dpt, v).ok_or_else(err)
}

/// Runs the steps in order and stops at the first failing expectation.
pub fn run_scenario(s: &Scenario, sim: &mut Simulation) -> Result<ScenarioReport, ScenarioError> {
    let mut failure = None;
    for (index, step) in s.steps.iter().enumerate() {
        if let Some(message) = sim.step(step)? {
            failure = Some(StepFailure {
                index,
                step: step.to_string(),
                message,
            });
            break;
        }
    }
    Ok(ScenarioReport {
        name: s.name.clone(),
        failure,
        trace: sim.bus.trace(),
        outcomes: sim.outcomes.clone(),
    })
}

const POLL: Duration = Duration::from_millis(20);

/// Exposes a [`SimBus`] over UDP, one encoded telegram per datagram.
///
/// Peers register by sending any datagram; an empty datagram registers
/// without publishing. Read requests are answered to the asking peer only.
pub struct UdpBridge {
    local: SocketAddr,
    stop: Arc<AtomicBool>,
    dropped: Arc<Mutex<Vec<String>>>,
    threads: Vec<JoinHandle<()>>,
}

impl UdpBridge {
    pub fn bind(bus: SimBus, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(POLL))?;
        let local = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let dropped = Arc::new(Mutex::new(Vec::new()));
        let peers = Arc::new(Mutex::new(BTreeSet::<SocketAddr>::new()));

        let inbox = bus.subscribe();
        let out_socket = socket.try_clone()?;
        let fwd = {
            let stop = Arc::clone(&stop);
            let peers = Arc::clone(&peers);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match inbox.recv_timeout(POLL) {
                        Ok(t) => {
                            let Ok(frame) = encode_telegram(&t) else {
                                continue;
                            };
                            let peers = peers.lock().unwrap_or_else(|e| e.into_inner()).clone();
                            for p in peers {
                                let _ = out_socket.send_to(&frame, p);
                            }
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            })
        };
        let recv = {
            let stop = Arc::clone(&stop);
            let dropped = Arc::clone(&dropped);
            std::thread::spawn(move || {
                let mut buf = [0u8; 512];
                while !stop.load(Ordering::Relaxed) {
                    let (n, peer) = match socket.recv_from(&mut buf) {
                        Ok(x) => x,
                        Err(_) => continue,
                    };
                    peers.lock().unwrap_or_else(|e| e.into_inner()).insert(peer);
                    if n == 0 {
                        continue;
                    }
                    let frame = &buf[..n];
                    match decode_telegram(frame) {
                        Err(e) => dropped
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .push(format!("{peer}: {e}")),
                        Ok(t) if t.is_read_request() => {
                            let ga = t
                                .group_address()
                                .expect("read requests are group telegrams");
                            if let Some(payload) = bus.read_request(t.source, ga) {
                                let answer = Telegram::group_write(BUS_SOURCE, ga, payload);
                                if let Ok(f) = encode_telegram(&answer) {
                                    let _ = socket.send_to(&f, peer);
                                }
                            }
                        }
                        Ok(_) => {
                            let _ = bus.publish_frame(frame);
                        }
                    }
                }
            })
        };
        Ok(Self {
            local,
            stop,
            dropped,
            threads: vec![fwd, recv],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    /// Reasons for every datagram that could not be decoded.
    pub fn dropped(&self) -> Vec<String> {
        self.dropped
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }
}

impl Drop for UdpBridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Runtime-side UDP connection to a bus endpoint.
pub struct UdpClient {
    socket: UdpSocket,
    source: IndividualAddress,
    timeout: Duration,
    pending: VecDeque<Telegram>,
}

impl UdpClient {
    /// Binds an ephemeral local port and registers with `endpoint`.
    pub fn connect(
        endpoint: impl ToSocketAddrs,
        source: IndividualAddress,
        timeout: Duration,
    ) -> io::Result<Self> {
        let peer = endpoint.to_socket_addrs()?.next().ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidInput, "no address to connect to")
        })?;
        let local: SocketAddr = if peer.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal address")
        } else {
            "[::]:0".parse().expect("literal address")
        };
        let socket = UdpSocket::bind(local)?;
        socket.connect(peer)?;
        socket.send(&[])?;
        Ok(Self {
            socket,
            source,
            timeout,
            pending: VecDeque::new(),
        })
    }

    pub fn send(&self, t: &Telegram) -> Result<(), BusError> {
        self.socket.send(&encode_telegram(t)?)?;
        Ok(())
    }

    /// Next decodable telegram, waiting at most `wait`. Undecodable
    /// datagrams are skipped.
    pub fn recv(&mut self, wait: Duration) -> Result<Option<Telegram>, BusError> {
        if let Some(t) = self.pending.pop_front() {
            return Ok(Some(t));
        }
        let deadline = Instant::now() + wait;
        self.next_frame(deadline)
    }

    fn next_frame(&mut self, deadline: Instant) -> Result<Option<Telegram>, BusError> {
        let mut buf = [0u8; 512];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.socket.set_read_timeout(Some(left))?;
            match self.socket.recv(&mut buf) {
                Ok(n) => {
                    if let Ok(t) = decode_telegram(&buf[..n]) {
                        return Ok(Some(t));
                    }
                }
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                    ) =>
                {
                    return Ok(None)
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(BusError::Unreachable(e.to_string())),
            }
        }
    }
}

impl BusClient for UdpClient {
    fn read(&mut self, ga: GroupAddress) -> Result<Option<Vec<u8>>, BusError> {
        self.send(&Telegram::group_read(self.source, ga))?;
        let deadline = Instant::now() + self.timeout;
        while let Some(t) = self.next_frame(deadline)? {
            if t.group_address() == Some(ga) && !t.payload.is_empty() && t.source == BUS_SOURCE {
                return Ok(Some(t.payload));
            }
            self.pending.push_back(t);
        }
        Ok(None)
    }

    fn write(&mut self, ga: GroupAddress, payload: Vec<u8>) -> Result<(), BusError> {
        self.send(&Telegram::group_write(self.source, ga, payload))
    }
}
