//! The checked-in header matches the exported symbols and compiles.

use std::path::PathBuf;
use std::process::Command;

fn header() -> (PathBuf, String) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/knxsafe.h");
    let text = std::fs::read_to_string(&path).expect("header is generated by the build script");
    (path, text)
}

#[test]
fn header_declares_every_entry_point() {
    let (_, text) = header();
    let src = include_str!("../src/lib.rs");
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.strip_prefix("pub unsafe extern \"C\" fn "))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 20, "{exported:?}");
    for name in exported {
        assert!(
            text.contains(&format!(" {name}(")),
            "{name} missing from header"
        );
    }
    assert!(text.contains("#ifndef KNXSAFE_H"));
    assert!(text.contains("typedef struct KnxProgram KnxProgram;"));
    assert!(text.contains("typedef struct KnxSimulation KnxSimulation;"));
    assert!(text.contains("KNX_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let (path, _) = header();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let Ok(out) = Command::new(&cc)
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&path)
        .output()
    else {
        eprintln!("no C compiler ({cc}); skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Links a C program against the static library built next to this test.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libknxsafe_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let (path, _) = header();
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(path.parent().unwrap())
        .arg(dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output();
    let Ok(build) = build else {
        eprintln!("no C compiler ({cc}); skipped");
        return;
    };
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
