#![allow(dead_code)]

pub mod progs;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use knxsafe::compiler::{BindingSet, BINDINGS_FILE};
use knxsafe::fixtures::{fixtures_dir, FixtureApp};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_knxsafe"))
}

/// A scratch home directory driven through the command-line binary.
pub struct Home {
    pub dir: tempfile::TempDir,
}

impl Home {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("temp dir"),
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn cmd(&self, args: &[&str]) -> Output {
        bin()
            .args(args)
            .env("KNXSAFE_HOME", self.path())
            .output()
            .expect("binary runs")
    }

    pub fn lab_physical(&self) -> PathBuf {
        fixtures_dir().join("lab/physical_structure.json")
    }

    /// Writes the prototype to a scratch file, runs `generateApp`, and
    /// replaces the skeleton program with the fixture's.
    pub fn generate(&self, app: &FixtureApp) -> Output {
        let scratch = self.path().join(format!("{}.proto.json", app.name));
        fs::write(&scratch, app.prototype).unwrap();
        let out = self.cmd(&[
            "generateApp",
            "-d",
            scratch.to_str().unwrap(),
            "-n",
            app.name,
        ]);
        if out.status.success() {
            fs::write(
                self.path()
                    .join("generated")
                    .join(app.name)
                    .join("main.app"),
                app.source,
            )
            .unwrap();
        }
        out
    }

    pub fn generated_bindings(&self) -> BindingSet {
        BindingSet::load(&self.path().join("generated").join(BINDINGS_FILE)).unwrap()
    }

    pub fn write_bindings(&self, b: &BindingSet) {
        fs::write(
            self.path().join("generated").join(BINDINGS_FILE),
            b.to_json(),
        )
        .unwrap();
    }

    /// Fills every channel of the generated bindings from `source`.
    pub fn fill_bindings(&self, source: &str) {
        let src = BindingSet::from_json(source).unwrap();
        let mut b = self.generated_bindings();
        for (app, inst, ch, id) in src.entries() {
            b.set(app, inst, ch, id);
        }
        self.write_bindings(&b);
    }

    /// generateApp, generateBindings, fill, compile.
    pub fn install(&self, apps: &[FixtureApp], bindings: &str) -> Output {
        for a in apps {
            let out = self.generate(a);
            assert!(
                out.status.success(),
                "generateApp {}: {}",
                a.name,
                stderr(&out)
            );
        }
        let phys = self.lab_physical();
        let out = self.cmd(&["generateBindings", "-f", phys.to_str().unwrap()]);
        assert!(out.status.success(), "generateBindings: {}", stderr(&out));
        self.fill_bindings(bindings);
        self.cmd(&["compile", "-f", phys.to_str().unwrap()])
    }

    /// Hash of every file under `app_library/`.
    pub fn library_digest(&self) -> BTreeMap<String, String> {
        digest_tree(&self.path().join("app_library"))
    }
}

pub fn digest_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if !root.exists() {
        return out;
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                let hash = Sha256::digest(fs::read(&p).unwrap());
                let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
    }
    out
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
