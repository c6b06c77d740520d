//! Calls the C entry points the way a C caller would.

use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::path::Path;
use std::ptr;

use knxsafe::compiler::BindingSet;
use knxsafe::fixtures::{fixtures_dir, EXAMPLE_APP, LAB_APPS, LAB_BINDINGS};
use knxsafe::library::Library;
use knxsafe_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let need = unsafe { knx_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; need];
    unsafe { knx_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_str()
        .unwrap()
        .to_string()
}

/// Size query, then the real call.
fn read_text(f: impl Fn(*mut c_char, usize, *mut usize) -> KnxStatus) -> String {
    let mut need = 0usize;
    assert_eq!(f(ptr::null_mut(), 0, &mut need), KnxStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; need];
    assert_eq!(
        f(buf.as_mut_ptr(), buf.len(), &mut need),
        KnxStatus::Ok,
        "{}",
        last_error()
    );
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_str()
        .unwrap()
        .to_string()
}

#[test]
fn group_addresses_round_trip() {
    let mut raw = 0u16;
    let s = unsafe { knx_group_address_parse(c("1/2/3").as_ptr(), &mut raw) };
    assert_eq!(s, KnxStatus::Ok);
    assert_eq!(raw, (1 << 11) | (2 << 8) | 3);
    let text = read_text(|b, n, need| unsafe { knx_group_address_format(raw, b, n, need) });
    assert_eq!(text, "1/2/3");

    let s = unsafe { knx_group_address_parse(c("32/0/0").as_ptr(), &mut raw) };
    assert_eq!(s, KnxStatus::Wire);
    assert!(!last_error().is_empty());
}

#[test]
fn individual_addresses_round_trip() {
    let mut raw = 0u16;
    assert_eq!(
        unsafe { knx_individual_address_parse(c("15.15.250").as_ptr(), &mut raw) },
        KnxStatus::Ok
    );
    assert_eq!(raw, 0xFFFA);
    let text = read_text(|b, n, need| unsafe { knx_individual_address_format(raw, b, n, need) });
    assert_eq!(text, "15.15.250");
    assert_eq!(
        unsafe { knx_individual_address_parse(c("16.0.0").as_ptr(), &mut raw) },
        KnxStatus::Wire
    );
}

#[test]
fn float16_matches_the_core_codec() {
    for v in [0.0, 21.5, -30.0, 670_433.28, -671_088.64, 0.01] {
        let mut word = 0u16;
        assert_eq!(unsafe { knx_float16_encode(v, &mut word) }, KnxStatus::Ok);
        assert_eq!(word, knxsafe::wire::encode_float16(v).unwrap());
        let mut back = 0f64;
        assert_eq!(
            unsafe { knx_float16_decode(word, &mut back) },
            KnxStatus::Ok
        );
        assert!((back - v).abs() <= 0.01 * 2f64.powi(15), "{v} -> {back}");
    }
    let mut word = 0u16;
    assert_eq!(
        unsafe { knx_float16_encode(f64::NAN, &mut word) },
        KnxStatus::Wire
    );
    let mut v = 0f64;
    assert_eq!(
        unsafe { knx_float16_decode(0x7FFF, &mut v) },
        KnxStatus::Wire
    );
}

#[test]
fn telegrams_round_trip() {
    let mut t = KnxTelegram {
        source: 0x1101,
        destination: (1 << 11) | 3,
        is_group: 1,
        priority: 3,
        repeated: 0,
        payload_len: 2,
        payload: [0; 16],
    };
    t.payload[..2].copy_from_slice(&[0x00, 0x81]);
    let mut frame = [0u8; 64];
    let mut len = 0usize;
    assert_eq!(
        unsafe { knx_telegram_encode(&t, frame.as_mut_ptr(), frame.len(), &mut len) },
        KnxStatus::Ok,
        "{}",
        last_error()
    );
    let mut back = KnxTelegram {
        source: 0,
        destination: 0,
        is_group: 0,
        priority: 0,
        repeated: 0,
        payload_len: 0,
        payload: [0; 16],
    };
    assert_eq!(
        unsafe { knx_telegram_decode(frame.as_ptr(), len, &mut back) },
        KnxStatus::Ok
    );
    assert_eq!(back, t);

    frame[len - 1] ^= 0xFF;
    assert_eq!(
        unsafe { knx_telegram_decode(frame.as_ptr(), len, &mut back) },
        KnxStatus::Wire
    );

    let mut small = [0u8; 2];
    assert_eq!(
        unsafe { knx_telegram_encode(&t, small.as_mut_ptr(), small.len(), &mut len) },
        KnxStatus::BufferTooSmall
    );
    t.payload_len = 17;
    assert_eq!(
        unsafe { knx_telegram_encode(&t, frame.as_mut_ptr(), frame.len(), &mut len) },
        KnxStatus::InvalidArgument
    );
}

#[test]
fn null_pointers_are_reported() {
    let mut raw = 0u16;
    assert_eq!(
        unsafe { knx_group_address_parse(ptr::null(), &mut raw) },
        KnxStatus::NullPointer
    );
    assert_eq!(
        unsafe { knx_group_address_parse(c("1/1/1").as_ptr(), ptr::null_mut()) },
        KnxStatus::NullPointer
    );
    assert_eq!(
        unsafe { knx_program_verify(ptr::null_mut(), ptr::null_mut()) },
        KnxStatus::NullPointer
    );
    unsafe {
        knx_program_free(ptr::null_mut());
        knx_simulation_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_reported() {
    let bad = [0xFFu8, 0xFE, 0];
    let mut raw = 0u16;
    assert_eq!(
        unsafe { knx_group_address_parse(bad.as_ptr().cast(), &mut raw) },
        KnxStatus::InvalidUtf8
    );
}

fn verify(source: &str) -> (i32, String) {
    let mut prog: *mut KnxProgram = ptr::null_mut();
    let s = unsafe {
        knx_program_compile(
            c(EXAMPLE_APP.name).as_ptr(),
            c(EXAMPLE_APP.prototype).as_ptr(),
            c(source).as_ptr(),
            &mut prog,
        )
    };
    assert_eq!(s, KnxStatus::Ok, "{}", last_error());
    let mut valid = -1;
    assert_eq!(
        unsafe { knx_program_verify(prog, &mut valid) },
        KnxStatus::Ok,
        "{}",
        last_error()
    );
    let report = read_text(|b, n, need| unsafe { knx_program_report(prog, b, n, need) });
    unsafe { knx_program_free(prog) };
    (valid, report)
}

#[test]
fn example_app_verifies_and_its_mutant_does_not() {
    let (valid, report) = verify(EXAMPLE_APP.source);
    assert_eq!(valid, 1, "{report}");

    let mutant = EXAMPLE_APP.source.replace("SWITCH.off()", "SWITCH.on()");
    let (valid, report) = verify(&mutant);
    assert_eq!(valid, 0);
    assert!(
        report.starts_with("counterexample for example_app"),
        "{report}"
    );
}

#[test]
fn compile_errors_carry_a_message() {
    let mut prog: *mut KnxProgram = ptr::null_mut();
    let s = unsafe {
        knx_program_compile(
            c(EXAMPLE_APP.name).as_ptr(),
            c(EXAMPLE_APP.prototype).as_ptr(),
            c("device NOPE: binary;\ninvariant: true\niteration: {}").as_ptr(),
            &mut prog,
        )
    };
    assert_eq!(s, KnxStatus::Compile);
    assert!(prog.is_null());
    assert!(!last_error().is_empty());
}

fn install_lab(home: &Path) {
    let lib = Library::open(home);
    let phys = fixtures_dir().join("lab/physical_structure.json");
    for app in LAB_APPS {
        let proto = home.join(format!("{}.json", app.name));
        fs::write(&proto, app.prototype).unwrap();
        let dir = lib.generate_app(&proto, app.name).unwrap();
        fs::write(dir.join("main.app"), app.source).unwrap();
    }
    let mut bindings = lib.generate_bindings(&phys).unwrap();
    for (a, i, ch, id) in BindingSet::from_json(LAB_BINDINGS).unwrap().entries() {
        bindings.set(a, i, ch, id);
    }
    fs::write(
        lib.generated_dir().join("apps_bindings.json"),
        bindings.to_json(),
    )
    .unwrap();
    assert!(lib.compile(&phys).unwrap().report.accepted());
}

const INITIAL: &str = r#"{
    "ventilation.PRESENCE_DETECTOR.state": false,
    "ventilation.CO2_SENSOR.read": 400,
    "ventilation.VENTILATION_SWITCH.state": false,
    "door_lock.DOOR_LOCK_SENSOR.state": true,
    "plants.HUMIDITY_SENSOR.read": 45
}"#;

#[test]
fn simulation_runs_installed_apps() {
    let home = tempfile::tempdir().unwrap();
    install_lab(home.path());
    let mut sim: *mut KnxSimulation = ptr::null_mut();
    let home_c = c(home.path().to_str().unwrap());
    let s = unsafe { knx_simulation_open(home_c.as_ptr(), c(INITIAL).as_ptr(), &mut sim) };
    assert_eq!(s, KnxStatus::Ok, "{}", last_error());

    let switch = c("ventilation.VENTILATION_SWITCH.state");
    let value = || {
        read_text(|b, n, need| unsafe { knx_simulation_value(sim, switch.as_ptr(), b, n, need) })
    };
    assert_eq!(value(), "false");
    let co2 = c("ventilation.CO2_SENSOR.read");
    assert_eq!(
        unsafe { knx_simulation_inject(sim, co2.as_ptr(), c("950").as_ptr()) },
        KnxStatus::Ok
    );
    assert_eq!(value(), "true");
    assert_eq!(
        unsafe { knx_simulation_inject(sim, co2.as_ptr(), c("800").as_ptr()) },
        KnxStatus::Ok
    );
    assert_eq!(value(), "false");

    let mut count = 99usize;
    assert_eq!(
        unsafe { knx_simulation_message_count(sim, &mut count) },
        KnxStatus::Ok
    );
    assert_eq!(count, 0);
    let humidity = c("plants.HUMIDITY_SENSOR.read");
    assert_eq!(
        unsafe { knx_simulation_inject(sim, humidity.as_ptr(), c("20").as_ptr()) },
        KnxStatus::Ok
    );
    assert_eq!(
        unsafe { knx_simulation_message_count(sim, &mut count) },
        KnxStatus::Ok
    );
    assert_eq!(count, 1);

    assert_eq!(unsafe { knx_simulation_advance(sim, 60) }, KnxStatus::Ok);
    let mut alive = -1;
    for app in ["door_lock", "plants", "ventilation"] {
        assert_eq!(
            unsafe { knx_simulation_app_alive(sim, c(app).as_ptr(), &mut alive) },
            KnxStatus::Ok
        );
        assert_eq!(alive, 1, "{app}");
    }
    assert_eq!(
        unsafe { knx_simulation_app_alive(sim, c("ghost").as_ptr(), &mut alive) },
        KnxStatus::NotFound
    );
    assert_eq!(
        unsafe { knx_simulation_inject(sim, c("9/9/9").as_ptr(), c("true").as_ptr()) },
        KnxStatus::NotFound
    );
    assert_eq!(
        unsafe { knx_simulation_inject(sim, co2.as_ptr(), c("\"high\"").as_ptr()) },
        KnxStatus::InvalidArgument
    );
    unsafe { knx_simulation_free(sim) };
}

#[test]
fn simulation_needs_installed_apps() {
    let home = tempfile::tempdir().unwrap();
    let mut sim: *mut KnxSimulation = ptr::null_mut();
    let home_c = c(home.path().to_str().unwrap());
    let s = unsafe { knx_simulation_open(home_c.as_ptr(), c("{}").as_ptr(), &mut sim) };
    assert_eq!(s, KnxStatus::NotFound);
    assert!(sim.is_null());
}
