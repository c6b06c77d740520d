//! C interface to the knxsafe toolchain.
//!
//! Every function returns a [`KnxStatus`]. On failure a message is kept per
//! thread and can be copied out with [`knx_last_error`]. Compiled programs
//! and simulations are opaque handles owned by the caller and released with
//! their `_free` function.
//!
//! Text outputs follow one convention: the caller passes a buffer and its
//! capacity, the required size including the terminating NUL is stored in
//! `needed`, and [`KnxStatus::BufferTooSmall`] is returned when it does not
//! fit. Passing a null buffer with capacity 0 is a size query.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use knxsafe::app::AppPrototype;
use knxsafe::compiler::{GroupAddressEntry, GroupAddressTable};
use knxsafe::fixtures::Stubs;
use knxsafe::lang::{compile_program, ChannelId, ChannelMap, TypedProgram};
use knxsafe::library::Library;
use knxsafe::runtime::AppRuntimeRecord;
use knxsafe::simbus::{AddressRef, Scenario, Simulation};
use knxsafe::value::Value;
use knxsafe::verifier::{check_app, VerificationTask, VerifyApp};
use knxsafe::wire::{
    decode_float16, decode_telegram, encode_float16, encode_telegram, Control, Destination,
    GroupAddress, IndividualAddress, Telegram, MAX_PAYLOAD,
};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Wire = 4,
    Compile = 5,
    Runtime = 6,
    NotFound = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A telegram in plain fields. `destination` is a group address when
/// `is_group` is nonzero, an individual address otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnxTelegram {
    pub source: u16,
    pub destination: u16,
    pub is_group: u8,
    pub priority: u8,
    pub repeated: u8,
    pub payload_len: u8,
    pub payload: [u8; 16],
}

/// A type-checked app with a private address for each of its channels.
pub struct KnxProgram {
    name: String,
    program: TypedProgram,
    channels: ChannelMap,
    report: String,
}

/// Installed apps running on a simulated bus.
pub struct KnxSimulation {
    sim: Simulation,
    stubs: Stubs,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(KnxStatus, String);

impl Fail {
    fn new(status: KnxStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KnxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KnxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KnxStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(KnxStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(KnxStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail::new(KnxStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write_text(
    s: &str,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> Result<(), Fail> {
    let need = s.len() + 1;
    if let Some(n) = needed.as_mut() {
        *n = need;
    }
    if buf.is_null() || cap < need {
        return Err(Fail::new(
            KnxStatus::BufferTooSmall,
            format!("{need} bytes needed, {cap} given"),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message. Returns the size needed
/// including the NUL; nothing is copied when `cap` is smaller.
#[no_mangle]
pub unsafe extern "C" fn knx_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes_with_nul();
        if !buf.is_null() && cap >= bytes.len() {
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        }
        bytes.len()
    })
}

/// Parses `1/2/3`, `1/515` or a raw number.
#[no_mangle]
pub unsafe extern "C" fn knx_group_address_parse(input: *const c_char, raw: *mut u16) -> KnxStatus {
    guard(|| {
        let s = text(input, "input")?;
        let out = out(raw, "raw")?;
        let ga: GroupAddress = s.parse().map_err(|e| Fail::new(KnxStatus::Wire, e))?;
        *out = ga.raw();
        Ok(())
    })
}

/// Three-level text of a group address.
#[no_mangle]
pub unsafe extern "C" fn knx_group_address_format(
    raw: u16,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> KnxStatus {
    guard(|| write_text(&GroupAddress::from_raw(raw).to_string(), buf, cap, needed))
}

/// Parses `area.line.device`.
#[no_mangle]
pub unsafe extern "C" fn knx_individual_address_parse(
    input: *const c_char,
    raw: *mut u16,
) -> KnxStatus {
    guard(|| {
        let s = text(input, "input")?;
        let out = out(raw, "raw")?;
        let ia: IndividualAddress = s.parse().map_err(|e| Fail::new(KnxStatus::Wire, e))?;
        *out = ia.encode();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn knx_individual_address_format(
    raw: u16,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> KnxStatus {
    guard(|| {
        write_text(
            &IndividualAddress::decode(raw).to_string(),
            buf,
            cap,
            needed,
        )
    })
}

/// 16-bit KNX float of `value`. Values out of range or not finite fail.
#[no_mangle]
pub unsafe extern "C" fn knx_float16_encode(value: f64, word: *mut u16) -> KnxStatus {
    guard(|| {
        let out = out(word, "word")?;
        *out = encode_float16(value).map_err(|e| Fail::new(KnxStatus::Wire, e))?;
        Ok(())
    })
}

/// Fails on the invalid-data marker 0x7FFF.
#[no_mangle]
pub unsafe extern "C" fn knx_float16_decode(word: u16, value: *mut f64) -> KnxStatus {
    guard(|| {
        let out = out(value, "value")?;
        *out = decode_float16(word).map_err(|e| Fail::new(KnxStatus::Wire, e))?;
        Ok(())
    })
}

/// Frames a telegram into `buf`; `written` receives the frame length.
#[no_mangle]
pub unsafe extern "C" fn knx_telegram_encode(
    telegram: *const KnxTelegram,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> KnxStatus {
    guard(|| {
        let t = telegram
            .as_ref()
            .ok_or_else(|| Fail::new(KnxStatus::NullPointer, "telegram is null"))?;
        let written = out(written, "written")?;
        let len = usize::from(t.payload_len);
        if len > MAX_PAYLOAD {
            return Err(Fail::new(
                KnxStatus::InvalidArgument,
                format!("payload_len {len} exceeds 16"),
            ));
        }
        if t.priority > 3 {
            return Err(Fail::new(
                KnxStatus::InvalidArgument,
                "priority must be 0..=3",
            ));
        }
        let destination = if t.is_group != 0 {
            Destination::Group(GroupAddress::from_raw(t.destination))
        } else {
            Destination::Individual(IndividualAddress::decode(t.destination))
        };
        let tg = Telegram {
            control: Control {
                priority: t.priority,
                repeated: t.repeated != 0,
            },
            source: IndividualAddress::decode(t.source),
            destination,
            payload: t.payload[..len].to_vec(),
        };
        let frame = encode_telegram(&tg).map_err(|e| Fail::new(KnxStatus::Wire, e))?;
        *written = frame.len();
        if buf.is_null() || cap < frame.len() {
            return Err(Fail::new(
                KnxStatus::BufferTooSmall,
                format!("{} bytes needed, {cap} given", frame.len()),
            ));
        }
        ptr::copy_nonoverlapping(frame.as_ptr(), buf, frame.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn knx_telegram_decode(
    frame: *const u8,
    len: usize,
    telegram: *mut KnxTelegram,
) -> KnxStatus {
    guard(|| {
        if frame.is_null() {
            return Err(Fail::new(KnxStatus::NullPointer, "frame is null"));
        }
        let out = out(telegram, "telegram")?;
        let bytes = std::slice::from_raw_parts(frame, len);
        let t = decode_telegram(bytes).map_err(|e| Fail::new(KnxStatus::Wire, e))?;
        let (is_group, destination) = match t.destination {
            Destination::Group(g) => (1, g.raw()),
            Destination::Individual(i) => (0, i.encode()),
        };
        let mut payload = [0u8; 16];
        payload[..t.payload.len()].copy_from_slice(&t.payload);
        *out = KnxTelegram {
            source: t.source.encode(),
            destination,
            is_group,
            priority: t.control.priority,
            repeated: u8::from(t.control.repeated),
            payload_len: t.payload.len() as u8,
            payload,
        };
        Ok(())
    })
}

/// Type-checks `source` against the prototype JSON. Each channel of the
/// prototype gets its own address so the program can be verified alone.
#[no_mangle]
pub unsafe extern "C" fn knx_program_compile(
    name: *const c_char,
    prototype_json: *const c_char,
    source: *const c_char,
    program: *mut *mut KnxProgram,
) -> KnxStatus {
    guard(|| {
        let name = text(name, "name")?;
        let proto_text = text(prototype_json, "prototype_json")?;
        let src = text(source, "source")?;
        let slot = out(program, "program")?;
        let proto = AppPrototype::from_json(name, proto_text)
            .map_err(|e| Fail::new(KnxStatus::Compile, e))?;
        let typed = compile_program(src, &proto).map_err(|e| Fail::new(KnxStatus::Compile, e))?;
        let mut channels = ChannelMap::new();
        let mut next = 1u16;
        for d in &proto.devices {
            for ch in d.kind.channels() {
                channels.insert(
                    ChannelId::new(d.instance(), ch.name),
                    GroupAddress::from_raw(next),
                );
                next += 1;
            }
        }
        *slot = Box::into_raw(Box::new(KnxProgram {
            name: name.to_string(),
            program: typed,
            channels,
            report: String::new(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn knx_program_free(program: *mut KnxProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Checks that the program's iteration preserves its invariant. `valid` is
/// set to 1 or 0; the report is kept for [`knx_program_report`].
#[no_mangle]
pub unsafe extern "C" fn knx_program_verify(
    program: *mut KnxProgram,
    valid: *mut i32,
) -> KnxStatus {
    guard(|| {
        let p = out(program, "program")?;
        let valid = out(valid, "valid")?;
        let task = VerificationTask {
            apps: vec![VerifyApp {
                name: &p.name,
                program: &p.program,
                channels: &p.channels,
            }],
            target: 0,
        };
        let outcome = check_app(&task).map_err(|e| Fail::new(KnxStatus::Runtime, e))?;
        *valid = i32::from(outcome.is_valid());
        p.report = match outcome.counterexample() {
            Some(c) => c.to_string(),
            None => format!("{}: valid ({} paths)", p.name, outcome.paths),
        };
        Ok(())
    })
}

/// Text of the last verification of `program`; empty before the first.
#[no_mangle]
pub unsafe extern "C" fn knx_program_report(
    program: *const KnxProgram,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> KnxStatus {
    guard(|| {
        let p = program
            .as_ref()
            .ok_or_else(|| Fail::new(KnxStatus::NullPointer, "program is null"))?;
        write_text(&p.report, buf, cap, needed)
    })
}

/// Starts the apps installed under `home` on a fresh simulated bus.
/// `initial_json` maps addresses (`1/2/3` or `app.INSTANCE.channel`) to the
/// device values present before start.
#[no_mangle]
pub unsafe extern "C" fn knx_simulation_open(
    home: *const c_char,
    initial_json: *const c_char,
    simulation: *mut *mut KnxSimulation,
) -> KnxStatus {
    guard(|| {
        let home = text(home, "home")?;
        let initial = text(initial_json, "initial_json")?;
        let slot = out(simulation, "simulation")?;
        let lib = Library::open(Path::new(home));
        let lib_err = |e: knxsafe::library::LibraryError| {
            let status = if e.exit_code() == 2 {
                KnxStatus::Io
            } else {
                KnxStatus::NotFound
            };
            Fail::new(status, e)
        };
        let installed = lib.installed_apps().map_err(lib_err)?;
        if installed.is_empty() {
            return Err(Fail::new(KnxStatus::NotFound, "no app is installed"));
        }
        let table = lib.table().map_err(lib_err)?;
        let initial: serde_json::Value =
            serde_json::from_str(initial).map_err(|e| Fail::new(KnxStatus::InvalidArgument, e))?;
        let scenario = Scenario::from_json(
            &serde_json::json!({"name": "ffi", "initial": initial, "steps": []}).to_string(),
        )
        .map_err(|e| Fail::new(KnxStatus::InvalidArgument, e))?;
        let stubs = Stubs::new();
        let apps = installed
            .into_iter()
            .map(|a| {
                let impls = stubs.registry(&a.program);
                AppRuntimeRecord::new(
                    a.prototype.name.clone(),
                    a.prototype.is_privileged(),
                    a.prototype.timer,
                    a.program,
                    a.channels,
                    impls,
                )
            })
            .collect();
        let sim = Simulation::for_scenario(&scenario, table, apps, None)
            .map_err(|e| Fail::new(KnxStatus::Runtime, e))?;
        *slot = Box::into_raw(Box::new(KnxSimulation { sim, stubs }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn knx_simulation_free(simulation: *mut KnxSimulation) {
    if !simulation.is_null() {
        drop(Box::from_raw(simulation));
    }
}

fn resolve(
    table: &GroupAddressTable,
    address: &str,
) -> Result<(GroupAddress, GroupAddressEntry), Fail> {
    let ga = AddressRef(address.to_string())
        .resolve(table)
        .map_err(|e| Fail::new(KnxStatus::NotFound, e))?;
    let entry = table.entries.get(&ga).cloned().ok_or_else(|| {
        Fail::new(
            KnxStatus::NotFound,
            format!("{ga} is not in the address table"),
        )
    })?;
    Ok((ga, entry))
}

/// A sensor sends `value_json` (`true`, `21.5`, ...) to `address`.
#[no_mangle]
pub unsafe extern "C" fn knx_simulation_inject(
    simulation: *mut KnxSimulation,
    address: *const c_char,
    value_json: *const c_char,
) -> KnxStatus {
    guard(|| {
        let s = out(simulation, "simulation")?;
        let address = text(address, "address")?;
        let value = text(value_json, "value_json")?;
        let (ga, entry) = resolve(&s.sim.table, address)?;
        let json: serde_json::Value =
            serde_json::from_str(value).map_err(|e| Fail::new(KnxStatus::InvalidArgument, e))?;
        let v = Value::from_json(&json, entry.value_type).ok_or_else(|| {
            Fail::new(
                KnxStatus::InvalidArgument,
                format!("{value} does not fit {address}"),
            )
        })?;
        s.sim
            .inject(ga, &v)
            .map_err(|e| Fail::new(KnxStatus::Runtime, e))
    })
}

/// Moves the clock forward, running due timers.
#[no_mangle]
pub unsafe extern "C" fn knx_simulation_advance(
    simulation: *mut KnxSimulation,
    seconds: u64,
) -> KnxStatus {
    guard(|| {
        let s = out(simulation, "simulation")?;
        s.sim
            .advance(seconds)
            .map_err(|e| Fail::new(KnxStatus::Runtime, e))
    })
}

/// JSON text of the value last seen on the bus at `address`.
#[no_mangle]
pub unsafe extern "C" fn knx_simulation_value(
    simulation: *const KnxSimulation,
    address: *const c_char,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> KnxStatus {
    guard(|| {
        let s = simulation
            .as_ref()
            .ok_or_else(|| Fail::new(KnxStatus::NullPointer, "simulation is null"))?;
        let address = text(address, "address")?;
        let (ga, _) = resolve(&s.sim.table, address)?;
        let v = s.sim.bus_value(ga).ok_or_else(|| {
            Fail::new(KnxStatus::NotFound, format!("no value on the bus at {ga}"))
        })?;
        write_text(&v.to_json().to_string(), buf, cap, needed)
    })
}

/// 1 while `app` runs, 0 once the runtime stopped it.
#[no_mangle]
pub unsafe extern "C" fn knx_simulation_app_alive(
    simulation: *const KnxSimulation,
    app: *const c_char,
    alive: *mut i32,
) -> KnxStatus {
    guard(|| {
        let s = simulation
            .as_ref()
            .ok_or_else(|| Fail::new(KnxStatus::NullPointer, "simulation is null"))?;
        let app = text(app, "app")?;
        let alive = out(alive, "alive")?;
        let rec = s
            .sim
            .runtime
            .app(app)
            .ok_or_else(|| Fail::new(KnxStatus::NotFound, format!("no app named {app}")))?;
        *alive = i32::from(rec.alive);
        Ok(())
    })
}

/// Number of messages the apps sent through the messaging stub.
#[no_mangle]
pub unsafe extern "C" fn knx_simulation_message_count(
    simulation: *const KnxSimulation,
    count: *mut usize,
) -> KnxStatus {
    guard(|| {
        let s = simulation
            .as_ref()
            .ok_or_else(|| Fail::new(KnxStatus::NullPointer, "simulation is null"))?;
        *out(count, "count")? = s.stubs.messages().len();
        Ok(())
    })
}
