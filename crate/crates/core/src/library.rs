//! The on-disk home: apps under development in `generated/`, installed apps
//! in `app_library/`, ETS assignment files in `assignments/` and runtime
//! logs in `logs/`.
//!
//! The library only changes through [`Library::compile`] and
//! [`Library::remove_app`]. Both build the new library in a staging
//! directory and swap it in with renames, so a rejected or interrupted
//! command leaves the previous library in place.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::app::{
    generate_app_skeleton, AppModelError, AppPrototype, Permission, MAIN_FILE, PROTOTYPE_FILE,
};
use crate::compiler::{
    assign_group_addresses, generate_bindings, parse_app_addresses, render_app_addresses,
    verify_bindings, write_assignments, BindingSet, CompileError, GroupAddressTable,
    ADDRESSES_FILE, BINDINGS_FILE, PHYSICAL_FILE, TABLE_FILE,
};
use crate::lang::{compile_program, ChannelMap, TypedProgram};
use crate::physical::PhysicalStructure;
use crate::verifier::{verify_installation, InstallReport, VerifyApp};

/// Overrides the home directory.
pub const HOME_ENV: &str = "KNXSAFE_HOME";
pub const GENERATED_DIR: &str = "generated";
pub const LIBRARY_DIR: &str = "app_library";
pub const ASSIGNMENTS_DIR: &str = "assignments";
pub const LOGS_DIR: &str = "logs";
pub const LOCK_FILE: &str = ".lock";
const STAGING_DIR: &str = ".app_library.staging";
const OLD_DIR: &str = ".app_library.old";

/// Pipeline step that rejected a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Physical,
    Prototype,
    Typecheck,
    Bindings,
    Addresses,
    Verification,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Physical => "physical",
            Stage::Prototype => "prototype",
            Stage::Typecheck => "typecheck",
            Stage::Bindings => "bindings",
            Stage::Addresses => "addresses",
            Stage::Verification => "verification",
        })
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("[{stage}] {message}")]
    Rejected { stage: Stage, message: String },
    #[error("nothing to bind: {0} holds no app")]
    NothingToBind(PathBuf),
    #[error("nothing to compile: {0} holds no app")]
    NothingToCompile(PathBuf),
    #[error("nothing to run: no app is installed")]
    NothingToRun,
    #[error("no installed app named {0:?}")]
    NotFound(String),
    #[error("app {0:?} is already installed; remove it first")]
    AlreadyInstalled(String),
    #[error("another command holds the library lock ({0})")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("library content is damaged: {0}")]
    Corrupt(String),
}

impl LibraryError {
    /// 1 for rejected input, 2 for environment and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            LibraryError::Locked(_) | LibraryError::Io { .. } | LibraryError::Corrupt(_) => 2,
            _ => 1,
        }
    }

    fn rejected(stage: Stage, message: impl fmt::Display) -> Self {
        LibraryError::Rejected {
            stage,
            message: message.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LibraryError + '_ {
    move |source| LibraryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn app_err(stage: Stage) -> impl FnOnce(AppModelError) -> LibraryError {
    move |e| match e {
        AppModelError::Io { path, source } => LibraryError::Io { path, source },
        other => LibraryError::rejected(stage, other),
    }
}

fn compile_err(stage: Stage) -> impl FnOnce(CompileError) -> LibraryError {
    move |e| match e {
        CompileError::Io { path, source } => LibraryError::Io {
            path: path.into(),
            source,
        },
        other => LibraryError::rejected(stage, other),
    }
}

/// Held while a command mutates the home directory.
#[derive(Debug)]
pub struct LibraryLock {
    path: PathBuf,
}

impl Drop for LibraryLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// An app's files, read but not yet compiled.
#[derive(Debug, Clone)]
pub struct SourceApp {
    pub prototype: AppPrototype,
    pub source: String,
    pub dir: PathBuf,
}

/// An installed app, compiled and with its addresses.
#[derive(Debug, Clone)]
pub struct InstalledApp {
    pub prototype: AppPrototype,
    pub program: TypedProgram,
    pub channels: ChannelMap,
}

#[derive(Debug, Clone)]
pub struct CompileOutcome {
    pub installed: Vec<String>,
    pub report: InstallReport,
    /// Binding findings that did not block the install.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Library {
    root: PathBuf,
}

impl Library {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$KNXSAFE_HOME`, or the current directory.
    pub fn from_env() -> Self {
        Self::open(std::env::var_os(HOME_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn generated_dir(&self) -> PathBuf {
        self.root.join(GENERATED_DIR)
    }

    pub fn library_dir(&self) -> PathBuf {
        self.root.join(LIBRARY_DIR)
    }

    pub fn assignments_dir(&self) -> PathBuf {
        self.root.join(ASSIGNMENTS_DIR)
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join(LOGS_DIR)
    }

    /// Takes the lock file and finishes any swap a crash interrupted.
    pub fn lock(&self) -> Result<LibraryLock, LibraryError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(LibraryError::Locked(path))
            }
            Err(e) => return Err(io_err(&path)(e)),
        }
        let lock = LibraryLock { path };
        self.recover()?;
        Ok(lock)
    }

    fn recover(&self) -> Result<(), LibraryError> {
        let lib = self.library_dir();
        let old = self.root.join(OLD_DIR);
        if old.exists() {
            if lib.exists() {
                fs::remove_dir_all(&old).map_err(io_err(&old))?;
            } else {
                fs::rename(&old, &lib).map_err(io_err(&old))?;
            }
        }
        let staging = self.root.join(STAGING_DIR);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        Ok(())
    }

    /// Creates `generated/<name>/` from a prototype file, which is moved
    /// into the project.
    pub fn generate_app(&self, prototype_file: &Path, name: &str) -> Result<PathBuf, LibraryError> {
        let _lock = self.lock()?;
        let proto = AppPrototype::load(name, prototype_file).map_err(app_err(Stage::Prototype))?;
        if self.library_dir().join(name).exists() {
            return Err(LibraryError::AlreadyInstalled(name.to_string()));
        }
        generate_app_skeleton(&proto, &self.generated_dir(), Some(prototype_file))
            .map_err(app_err(Stage::Prototype))
    }

    fn read_apps(dir: &Path) -> Result<Vec<SourceApp>, LibraryError> {
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path.join(PROTOTYPE_FILE).is_file() {
                if let Some(n) = path.file_name().and_then(|n| n.to_str()) {
                    names.push(n.to_string());
                }
            }
        }
        names.sort();
        names
            .into_iter()
            .map(|name| {
                let app_dir = dir.join(&name);
                let prototype = AppPrototype::load(&name, &app_dir.join(PROTOTYPE_FILE))
                    .map_err(app_err(Stage::Prototype))?;
                let main = app_dir.join(MAIN_FILE);
                let source = fs::read_to_string(&main).map_err(io_err(&main))?;
                Ok(SourceApp {
                    prototype,
                    source,
                    dir: app_dir,
                })
            })
            .collect()
    }

    /// Apps in `generated/`, by name.
    pub fn generated_apps(&self) -> Result<Vec<SourceApp>, LibraryError> {
        Self::read_apps(&self.generated_dir())
    }

    fn installed_sources(&self) -> Result<Vec<SourceApp>, LibraryError> {
        Self::read_apps(&self.library_dir())
    }

    fn stored_physical(&self) -> Result<Option<PhysicalStructure>, LibraryError> {
        let path = self.library_dir().join(PHYSICAL_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        PhysicalStructure::load(&path)
            .map(Some)
            .map_err(|e| LibraryError::Corrupt(format!("{}: {e}", path.display())))
    }

    fn stored_bindings(&self) -> Result<BindingSet, LibraryError> {
        let path = self.library_dir().join(BINDINGS_FILE);
        if !path.is_file() {
            return Ok(BindingSet::default());
        }
        BindingSet::load(&path).map_err(|e| LibraryError::Corrupt(e.to_string()))
    }

    /// The compiled address table of the installed apps.
    pub fn table(&self) -> Result<GroupAddressTable, LibraryError> {
        let path = self.library_dir().join(TABLE_FILE);
        if !path.is_file() {
            return Ok(GroupAddressTable::default());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        GroupAddressTable::from_json(&text).map_err(|e| LibraryError::Corrupt(e.to_string()))
    }

    /// Installed app names with their permission levels.
    pub fn list_apps(&self) -> Result<Vec<(String, Permission)>, LibraryError> {
        Ok(self
            .installed_sources()?
            .into_iter()
            .map(|a| (a.prototype.name, a.prototype.permission))
            .collect())
    }

    /// Installed apps, compiled, with the channel maps from their
    /// `addresses.json`.
    pub fn installed_apps(&self) -> Result<Vec<InstalledApp>, LibraryError> {
        self.installed_sources()?
            .into_iter()
            .map(|a| {
                let program = compile_program(&a.source, &a.prototype)
                    .map_err(|e| LibraryError::Corrupt(format!("{}: {e}", a.prototype.name)))?;
                let path = a.dir.join(ADDRESSES_FILE);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let channels =
                    parse_app_addresses(&text).map_err(|e| LibraryError::Corrupt(e.to_string()))?;
                Ok(InstalledApp {
                    prototype: a.prototype,
                    program,
                    channels,
                })
            })
            .collect()
    }

    /// Writes `generated/apps_bindings.json` and
    /// `generated/physical_structure.json` for the apps in `generated/`.
    /// Installed apps keep their ids when the installation is unchanged.
    pub fn generate_bindings(&self, physical_file: &Path) -> Result<BindingSet, LibraryError> {
        let _lock = self.lock()?;
        let phys = load_physical(physical_file)?;
        let installing = self.generated_apps()?;
        if installing.is_empty() {
            return Err(LibraryError::NothingToBind(self.generated_dir()));
        }
        let installed = self.installed_sources()?;
        let stored = self.stored_physical()?;
        let installed_bindings = self.stored_bindings()?;
        let bindings = generate_bindings(
            &installing.iter().map(|a| &a.prototype).collect::<Vec<_>>(),
            &installed.iter().map(|a| &a.prototype).collect::<Vec<_>>(),
            &installed_bindings,
            stored.as_ref(),
            &phys,
        );
        let gen = self.generated_dir();
        write_file(&gen.join(BINDINGS_FILE), &bindings.to_json())?;
        write_file(&gen.join(PHYSICAL_FILE), &phys.to_json())?;
        Ok(bindings)
    }

    /// Type-checks, binds, allocates addresses and verifies the generated
    /// apps together with the installed ones. On acceptance the generated
    /// apps move into the library and the assignment files are rewritten.
    pub fn compile(&self, physical_file: &Path) -> Result<CompileOutcome, LibraryError> {
        let _lock = self.lock()?;
        let phys = load_physical(physical_file)?;
        let installing = self.generated_apps()?;
        if installing.is_empty() {
            return Err(LibraryError::NothingToCompile(self.generated_dir()));
        }
        let installed = self.installed_sources()?;
        for a in &installing {
            if installed
                .iter()
                .any(|b| b.prototype.name == a.prototype.name)
            {
                return Err(LibraryError::AlreadyInstalled(a.prototype.name.clone()));
            }
        }
        let bindings_path = self.generated_dir().join(BINDINGS_FILE);
        if !bindings_path.is_file() {
            return Err(LibraryError::rejected(
                Stage::Bindings,
                format!(
                    "{} is missing; run generateBindings first",
                    bindings_path.display()
                ),
            ));
        }
        let mut bindings =
            BindingSet::load(&bindings_path).map_err(compile_err(Stage::Bindings))?;
        let names: Vec<String> = installed
            .iter()
            .chain(&installing)
            .map(|a| a.prototype.name.clone())
            .collect();
        bindings.retain_apps(|n| names.iter().any(|m| m == n));

        let all: Vec<SourceApp> = installed.iter().chain(&installing).cloned().collect();
        let (table, warnings, report) = check_set(&all, installed.len(), &bindings, &phys)?;
        self.commit(&phys, &bindings, &table, &all)?;
        let gen = self.generated_dir();
        for a in &installing {
            fs::remove_dir_all(&a.dir).map_err(io_err(&a.dir))?;
        }
        for f in [BINDINGS_FILE, PHYSICAL_FILE] {
            let p = gen.join(f);
            if p.exists() {
                fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
        Ok(CompileOutcome {
            installed: installing.into_iter().map(|a| a.prototype.name).collect(),
            report,
            warnings,
        })
    }

    /// Uninstalls `name` after re-verifying the remaining apps, whose
    /// addresses are reallocated.
    pub fn remove_app(&self, name: &str) -> Result<InstallReport, LibraryError> {
        let _lock = self.lock()?;
        let installed = self.installed_sources()?;
        if !installed.iter().any(|a| a.prototype.name == name) {
            return Err(LibraryError::NotFound(name.to_string()));
        }
        let rest: Vec<SourceApp> = installed
            .into_iter()
            .filter(|a| a.prototype.name != name)
            .collect();
        let phys = self
            .stored_physical()?
            .unwrap_or_else(PhysicalStructure::empty);
        let mut bindings = self.stored_bindings()?;
        bindings.retain_apps(|n| n != name);
        let (table, _, report) = check_set(&rest, rest.len(), &bindings, &phys)?;
        self.commit(&phys, &bindings, &table, &rest)?;
        Ok(report)
    }

    /// Builds the new library in a staging directory and swaps it in.
    fn commit(
        &self,
        phys: &PhysicalStructure,
        bindings: &BindingSet,
        table: &GroupAddressTable,
        apps: &[SourceApp],
    ) -> Result<(), LibraryError> {
        let staging = self.root.join(STAGING_DIR);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        write_file(&staging.join(PHYSICAL_FILE), &phys.to_json())?;
        write_file(&staging.join(BINDINGS_FILE), &bindings.to_json())?;
        write_file(&staging.join(TABLE_FILE), &table.to_json())?;
        for a in apps {
            let dest = staging.join(&a.prototype.name);
            copy_dir(&a.dir, &dest)?;
            write_file(
                &dest.join(ADDRESSES_FILE),
                &render_app_addresses(table, &a.prototype.name),
            )?;
        }
        let lib = self.library_dir();
        let old = self.root.join(OLD_DIR);
        if lib.exists() {
            fs::rename(&lib, &old).map_err(io_err(&lib))?;
        }
        fs::rename(&staging, &lib).map_err(io_err(&staging))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(io_err(&old))?;
        }
        write_assignments(&self.assignments_dir(), table, phys)
            .map_err(compile_err(Stage::Addresses))
    }
}

/// Runs the checks shared by install and removal on `apps`, of which the
/// first `n_installed` are already installed.
fn check_set(
    apps: &[SourceApp],
    n_installed: usize,
    bindings: &BindingSet,
    phys: &PhysicalStructure,
) -> Result<(GroupAddressTable, Vec<String>, InstallReport), LibraryError> {
    let programs = apps
        .iter()
        .map(|a| {
            compile_program(&a.source, &a.prototype).map_err(|e| {
                LibraryError::rejected(Stage::Typecheck, format!("{}: {e}", a.prototype.name))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let protos: Vec<&AppPrototype> = apps.iter().map(|a| &a.prototype).collect();
    let compat = verify_bindings(bindings, &protos, phys).map_err(compile_err(Stage::Bindings))?;
    if compat.has_errors() {
        let lines: Vec<String> = compat
            .errors()
            .map(|f| format!("{}: {}", f.locus, f.message))
            .collect();
        return Err(LibraryError::rejected(Stage::Bindings, lines.join("\n")));
    }
    let warnings = compat
        .warnings()
        .map(|f| format!("{}: {}", f.locus, f.message))
        .collect();
    let table =
        assign_group_addresses(bindings, &protos, phys).map_err(compile_err(Stage::Addresses))?;
    let channels: Vec<ChannelMap> = protos.iter().map(|p| table.channel_map(&p.name)).collect();
    let verify: Vec<VerifyApp<'_>> = apps
        .iter()
        .zip(&programs)
        .zip(&channels)
        .map(|((a, program), channels)| VerifyApp {
            name: &a.prototype.name,
            program,
            channels,
        })
        .collect();
    let (old, new) = verify.split_at(n_installed);
    let report = verify_installation(old, new)
        .map_err(|e| LibraryError::rejected(Stage::Verification, e))?;
    if !report.accepted() {
        return Err(LibraryError::rejected(
            Stage::Verification,
            report.to_string().trim_end(),
        ));
    }
    Ok((table, warnings, report))
}

fn load_physical(path: &Path) -> Result<PhysicalStructure, LibraryError> {
    PhysicalStructure::load(path).map_err(|e| LibraryError::rejected(Stage::Physical, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), LibraryError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(io_err(p))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn copy_dir(from: &Path, to: &Path) -> Result<(), LibraryError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let entry = entry.map_err(io_err(from))?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if src.is_dir() {
            copy_dir(&src, &dst)?;
        } else {
            fs::copy(&src, &dst).map_err(io_err(&src))?;
        }
    }
    Ok(())
}
