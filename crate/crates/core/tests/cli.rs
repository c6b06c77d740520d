mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::process::Stdio;
use std::time::{Duration, Instant};

use common::{stderr, stdout, Home};
use knxsafe::compiler::{BindingSet, GroupAddressTable, UNBOUND};
use knxsafe::fixtures::{
    DOOR_LOCK, EXAMPLE_APP, LAB_APPS, LAB_BINDINGS, PLANTS, ROGUE, ROGUE_BINDINGS, VENTILATION,
};
use knxsafe::library::Library;
use knxsafe::runtime::encode_for;
use knxsafe::simbus::{AddressRef, SimBus, UdpBridge, SENSOR_SOURCE};
use knxsafe::value::Value;
use knxsafe::wire::Telegram;

#[test]
fn install_three_lab_apps() {
    let home = Home::new();
    let out = home.install(&LAB_APPS, LAB_BINDINGS);
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("verification: ACCEPT"));

    let list = home.cmd(&["listApps"]);
    assert!(list.status.success());
    assert_eq!(
        stdout(&list),
        "door_lock notPrivileged\nplants notPrivileged\nventilation notPrivileged\n"
    );
    let assignments = home.path().join("assignments");
    assert!(assignments.join("assignment.csv").is_file());
    assert!(assignments.join("assignment.txt").is_file());
    let generated: Vec<_> = fs::read_dir(home.path().join("generated"))
        .unwrap()
        .collect();
    assert!(generated.is_empty(), "generated/ should be emptied");
    let table = Library::open(home.path()).table().unwrap();
    assert_eq!(table.len(), 5);
    for app in ["door_lock", "plants", "ventilation"] {
        assert!(home
            .path()
            .join("app_library")
            .join(app)
            .join("addresses.json")
            .is_file());
    }
}

#[test]
fn violating_app_leaves_library_identical() {
    let home = Home::new();
    assert!(home.install(&LAB_APPS, LAB_BINDINGS).status.success());
    let before = home.library_digest();
    assert!(!before.is_empty());

    let out = home.install(&[ROGUE], ROGUE_BINDINGS);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("[verification]"), "{}", stderr(&out));
    assert_eq!(home.library_digest(), before);
    assert!(
        home.path().join("generated/rogue").is_dir(),
        "rejected app stays in generated/"
    );
}

#[test]
fn unfilled_binding_is_rejected() {
    let home = Home::new();
    assert!(home.generate(&EXAMPLE_APP).status.success());
    let phys = home.lab_physical();
    assert!(home
        .cmd(&["generateBindings", "-f", phys.to_str().unwrap()])
        .status
        .success());
    let b = home.generated_bindings();
    assert!(b.entries().all(|(_, _, _, id)| id == UNBOUND));
    let out = home.cmd(&["compile", "-f", phys.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("still -1"), "{}", stderr(&out));
    assert!(!home.path().join("app_library").exists());
}

#[test]
fn bindings_regeneration_keeps_or_resets_ids() {
    let home = Home::new();
    assert!(home
        .install(&[DOOR_LOCK, PLANTS], LAB_BINDINGS)
        .status
        .success());
    assert!(home.generate(&VENTILATION).status.success());
    let phys = home.lab_physical();
    assert!(home
        .cmd(&["generateBindings", "-f", phys.to_str().unwrap()])
        .status
        .success());
    let b = home.generated_bindings();
    assert_eq!(b.get("door_lock", "DOOR_LOCK_SENSOR", "state"), Some(2));
    assert_eq!(b.get("plants", "HUMIDITY_SENSOR", "read"), Some(3));
    assert_eq!(b.get("ventilation", "CO2_SENSOR", "read"), Some(UNBOUND));

    let mut changed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&phys).unwrap()).unwrap();
    changed["devices"].as_array_mut().unwrap().pop();
    let changed_path = home.path().join("changed.json");
    fs::write(&changed_path, changed.to_string()).unwrap();
    assert!(home
        .cmd(&["generateBindings", "-f", changed_path.to_str().unwrap()])
        .status
        .success());
    assert!(home
        .generated_bindings()
        .entries()
        .all(|(_, _, _, id)| id == UNBOUND));
}

#[test]
fn remove_app_reverifies_and_regenerates() {
    let home = Home::new();
    assert!(home.install(&LAB_APPS, LAB_BINDINGS).status.success());
    let out = home.cmd(&["removeApp", "plants"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let list = home.cmd(&["listApps"]);
    assert_eq!(
        stdout(&list),
        "door_lock notPrivileged\nventilation notPrivileged\n"
    );
    let table = Library::open(home.path()).table().unwrap();
    assert_eq!(table.len(), 4);
    assert!(table
        .entries
        .values()
        .all(|e| e.channels.iter().all(|c| c.app != "plants")));
    let csv = fs::read_to_string(home.path().join("assignments/assignment.csv")).unwrap();
    assert!(!csv.contains("plants"));
    let stored = BindingSet::load(&home.path().join("app_library/apps_bindings.json")).unwrap();
    assert!(stored.entries().all(|(app, ..)| app != "plants"));

    let missing = home.cmd(&["removeApp", "plants"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("no installed app"));
}

#[test]
fn commands_are_idempotent() {
    let home = Home::new();
    assert!(home.generate(&EXAMPLE_APP).status.success());
    let phys = home.lab_physical();
    let p = phys.to_str().unwrap();
    assert!(home.cmd(&["generateBindings", "-f", p]).status.success());
    let first = fs::read(home.path().join("generated/apps_bindings.json")).unwrap();
    assert!(home.cmd(&["generateBindings", "-f", p]).status.success());
    assert_eq!(
        fs::read(home.path().join("generated/apps_bindings.json")).unwrap(),
        first
    );

    let l1 = stdout(&home.cmd(&["listApps"]));
    let l2 = stdout(&home.cmd(&["listApps"]));
    assert_eq!(l1, l2);
}

#[test]
fn nothing_to_do_errors() {
    let home = Home::new();
    let phys = home.lab_physical();
    let out = home.cmd(&["generateBindings", "-f", phys.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nothing to bind"));
    let out = home.cmd(&["compile", "-f", phys.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = home.cmd(&["run", "-a", "127.0.0.1:9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nothing to run"));
}

#[test]
fn generate_app_moves_prototype_and_rejects_duplicates() {
    let home = Home::new();
    let scratch = home.path().join("p.json");
    fs::write(&scratch, EXAMPLE_APP.prototype).unwrap();
    let out = home.cmd(&[
        "generateApp",
        "-d",
        scratch.to_str().unwrap(),
        "-n",
        "example_app",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!scratch.exists());
    let dir = home.path().join("generated/example_app");
    assert!(dir.join("main.app").is_file());
    assert!(dir.join("app_prototypical_structure.json").is_file());

    fs::write(&scratch, EXAMPLE_APP.prototype).unwrap();
    let again = home.cmd(&[
        "generateApp",
        "-d",
        scratch.to_str().unwrap(),
        "-n",
        "example_app",
    ]);
    assert_eq!(again.status.code(), Some(1));
    let bad = home.cmd(&[
        "generateApp",
        "-d",
        scratch.to_str().unwrap(),
        "-n",
        "Bad-Name",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let missing = home.cmd(&["generateApp", "-d", "/nonexistent/p.json", "-n", "x"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn held_lock_blocks_commands() {
    let home = Home::new();
    let lib = Library::open(home.path());
    let guard = lib.lock().unwrap();
    let out = home.cmd(&["listApps"]);
    // Listing only reads; mutations need the lock.
    assert!(out.status.success());
    let phys = home.lab_physical();
    let out = home.cmd(&["generateBindings", "-f", phys.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    drop(guard);
    assert!(!home.path().join(".lock").exists());
}

#[test]
fn interrupted_swap_is_recovered() {
    let home = Home::new();
    assert!(home.install(&LAB_APPS, LAB_BINDINGS).status.success());
    let before = home.library_digest();
    // Crash between moving the old library aside and moving the new one in.
    fs::rename(
        home.path().join("app_library"),
        home.path().join(".app_library.old"),
    )
    .unwrap();
    fs::create_dir(home.path().join(".app_library.staging")).unwrap();
    drop(Library::open(home.path()).lock().unwrap());
    assert_eq!(home.library_digest(), before);
    assert!(!home.path().join(".app_library.staging").exists());
}

fn wait_for<T>(what: &str, timeout: Duration, mut f: impl FnMut() -> Option<T>) -> T {
    let start = Instant::now();
    loop {
        if let Some(v) = f() {
            return v;
        }
        assert!(start.elapsed() < timeout, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn publish(bus: &SimBus, table: &GroupAddressTable, addr: &str, v: Value) {
    let ga = AddressRef(addr.into()).resolve(table).unwrap();
    let payload = encode_for(table.entries[&ga].dpt, &v).unwrap();
    bus.publish(&Telegram::group_write(SENSOR_SOURCE, ga, payload))
        .unwrap();
}

#[test]
fn run_against_udp_bus_and_shut_down_on_sigint() {
    let home = Home::new();
    assert!(home.install(&LAB_APPS, LAB_BINDINGS).status.success());
    let table = Library::open(home.path()).table().unwrap();

    let bus = SimBus::new();
    let preset = [
        ("ventilation.PRESENCE_DETECTOR.state", Value::Bool(false)),
        ("ventilation.CO2_SENSOR.read", Value::Real(400.0)),
        ("ventilation.VENTILATION_SWITCH.state", Value::Bool(false)),
        ("door_lock.DOOR_LOCK_SENSOR.state", Value::Bool(true)),
        ("plants.HUMIDITY_SENSOR.read", Value::Real(45.0)),
    ];
    for (addr, v) in &preset {
        let ga = AddressRef((*addr).into()).resolve(&table).unwrap();
        bus.preset(ga, encode_for(table.entries[&ga].dpt, v).unwrap());
    }
    let bridge = UdpBridge::bind(bus.clone(), "127.0.0.1:0").unwrap();

    let mut child = common::bin()
        .args(["run", "-a", &bridge.local_addr().to_string()])
        .env("KNXSAFE_HOME", home.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    assert!(first.starts_with("running 3 app(s)"), "{first}");

    let switch = AddressRef("ventilation.VENTILATION_SWITCH.state".into())
        .resolve(&table)
        .unwrap();
    publish(
        &bus,
        &table,
        "ventilation.CO2_SENSOR.read",
        Value::Real(950.0),
    );
    wait_for("switch on", Duration::from_secs(10), || {
        (bus.value(switch) == Some(vec![1])).then_some(())
    });
    publish(
        &bus,
        &table,
        "ventilation.CO2_SENSOR.read",
        Value::Real(800.0),
    );
    wait_for("switch off", Duration::from_secs(10), || {
        (bus.value(switch) == Some(vec![0])).then_some(())
    });

    publish(
        &bus,
        &table,
        "plants.HUMIDITY_SENSOR.read",
        Value::Real(20.0),
    );
    let msg = lines.next().unwrap().unwrap();
    assert!(msg.starts_with("message: "), "{msg}");

    // SAFETY: plain signal delivery to a child we own.
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGINT);
    }
    let status = wait_for("exit", Duration::from_secs(10), || {
        child.try_wait().unwrap()
    });
    let mut err = String::new();
    std::io::Read::read_to_string(&mut child.stderr.take().unwrap(), &mut err).unwrap();
    assert!(status.success(), "{status}: {err}");
    assert!(bridge.dropped().is_empty());

    let logs: Vec<_> = fs::read_dir(home.path().join("logs")).unwrap().collect();
    assert_eq!(logs.len(), 1);
    let text = fs::read_to_string(logs[0].as_ref().unwrap().path()).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["verdict"], "shutdown");
    assert!(text.lines().count() >= 4);
}
