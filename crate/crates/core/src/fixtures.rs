//! The lab prototypes at desk scale: plants, door_lock and ventilation on a
//! small installation, with stubbed messaging and calendar services.
//!
//! The files live under `fixtures/` in the crate and are embedded at build
//! time, so suites can be built without touching the filesystem.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::app::{AppModelError, AppPrototype};
use crate::compiler::{
    assign_group_addresses, verify_bindings, BindingSet, CompileError, GroupAddressTable,
};
use crate::lang::{compile_program, ChannelMap, LangError, TypedProgram, UncheckedRegistry};
use crate::physical::{PhysicalError, PhysicalStructure};
use crate::runtime::AppRuntimeRecord;
use crate::simbus::{Scenario, ScenarioError, Simulation};
use crate::value::Value;
use crate::verifier::{verify_installation, InstallReport, VerifyApp, VerifyError};

/// Prototype and source of one fixture app.
#[derive(Debug, Clone, Copy)]
pub struct FixtureApp {
    pub name: &'static str,
    pub prototype: &'static str,
    pub source: &'static str,
}

macro_rules! fixture_app {
    ($dir:literal, $name:literal) => {
        FixtureApp {
            name: $name,
            prototype: include_str!(concat!(
                "../fixtures/",
                $dir,
                "/",
                $name,
                "/app_prototypical_structure.json"
            )),
            source: include_str!(concat!("../fixtures/", $dir, "/", $name, "/main.app")),
        }
    };
}

pub const PLANTS: FixtureApp = fixture_app!("apps", "plants");
pub const DOOR_LOCK: FixtureApp = fixture_app!("apps", "door_lock");
pub const VENTILATION: FixtureApp = fixture_app!("apps", "ventilation");
/// The app used to introduce the language: a switch following a sensor.
pub const EXAMPLE_APP: FixtureApp = fixture_app!("apps", "example_app");
/// Violates its own invariant on the first presence change.
pub const ROGUE: FixtureApp = fixture_app!("violating", "rogue");

pub const LAB_APPS: [FixtureApp; 3] = [DOOR_LOCK, PLANTS, VENTILATION];

pub const LAB_PHYSICAL: &str = include_str!("../fixtures/lab/physical_structure.json");
pub const LAB_BINDINGS: &str = include_str!("../fixtures/lab/apps_bindings.json");
pub const EXAMPLE_BINDINGS: &str = include_str!("../fixtures/example/apps_bindings.json");
pub const ROGUE_BINDINGS: &str = include_str!("../fixtures/violating/apps_bindings.json");

pub const SCENARIO_VENTILATION: &str = include_str!("../fixtures/scenarios/ventilation_co2.json");
pub const SCENARIO_DOOR_LOCK: &str = include_str!("../fixtures/scenarios/door_lock_alert.json");
pub const SCENARIO_PLANTS: &str = include_str!("../fixtures/scenarios/plants_dry.json");
pub const SCENARIO_EXAMPLE: &str = include_str!("../fixtures/scenarios/example_app.json");
pub const SCENARIO_ROGUE: &str = include_str!("../fixtures/scenarios/rogue_killed.json");

/// Moisture level below which plants asks for water.
pub const MOISTURE_THRESHOLD: f64 = 30.0;
/// CO2 level in ppm above which the ventilation must run.
pub const CO2_LIMIT: f64 = 900.0;

/// The fixture files on disk, for tests that drive the command line.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    App(#[from] AppModelError),
    #[error("{app}: {source}")]
    Lang { app: String, source: LangError },
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Physical(#[from] PhysicalError),
    #[error("binding check failed: {0}")]
    Bindings(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Stand-ins for the messaging and calendar services.
#[derive(Clone, Default)]
pub struct Stubs {
    messages: Arc<Mutex<Vec<String>>>,
    meeting_soon: Arc<AtomicBool>,
}

impl Stubs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Messages sent so far.
    pub fn messages(&self) -> Vec<String> {
        self.messages
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn take_messages(&self) -> Vec<String> {
        std::mem::take(&mut *self.messages.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// What the calendar answers from now on.
    pub fn set_meeting_soon(&self, soon: bool) {
        self.meeting_soon.store(soon, Ordering::SeqCst);
    }

    /// Implementations for every unchecked function `program` declares.
    /// Functions other than the two known services return the default
    /// value of their type.
    pub fn registry(&self, program: &TypedProgram) -> UncheckedRegistry {
        let mut reg = UncheckedRegistry::new();
        for decl in &program.unchecked {
            match decl.name.as_str() {
                "unchecked_send_message" => {
                    let log = Arc::clone(&self.messages);
                    reg.register(decl.name.clone(), move |args| {
                        let text = args
                            .iter()
                            .map(Value::to_string)
                            .collect::<Vec<_>>()
                            .join(" ");
                        log.lock().unwrap_or_else(|e| e.into_inner()).push(text);
                        Ok(None)
                    });
                }
                "unchecked_meeting_soon" => {
                    let flag = Arc::clone(&self.meeting_soon);
                    reg.register(decl.name.clone(), move |_| {
                        Ok(Some(Value::Bool(flag.load(Ordering::SeqCst))))
                    });
                }
                _ => {
                    let ret = decl.ret;
                    reg.register(decl.name.clone(), move |_| Ok(ret.map(Value::default_of)));
                }
            }
        }
        reg
    }
}

/// Apps compiled and bound against an installation, ready to verify or run.
#[derive(Debug, Clone)]
pub struct Suite {
    pub physical: PhysicalStructure,
    pub prototypes: Vec<AppPrototype>,
    pub programs: Vec<TypedProgram>,
    pub bindings: BindingSet,
    pub table: GroupAddressTable,
    channels: Vec<ChannelMap>,
}

impl Suite {
    pub fn build(
        apps: &[FixtureApp],
        physical: &str,
        bindings: &str,
    ) -> Result<Self, FixtureError> {
        let physical = PhysicalStructure::from_json(physical)?;
        let prototypes = apps
            .iter()
            .map(|a| AppPrototype::from_json(a.name, a.prototype))
            .collect::<Result<Vec<_>, _>>()?;
        let programs = apps
            .iter()
            .zip(&prototypes)
            .map(|(a, p)| {
                compile_program(a.source, p).map_err(|source| FixtureError::Lang {
                    app: a.name.to_string(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bindings = BindingSet::from_json(bindings)?;
        let refs: Vec<&AppPrototype> = prototypes.iter().collect();
        let report = verify_bindings(&bindings, &refs, &physical)?;
        if report.has_errors() {
            let msgs: Vec<String> = report.errors().map(|f| f.message.clone()).collect();
            return Err(FixtureError::Bindings(msgs.join("; ")));
        }
        let table = assign_group_addresses(&bindings, &refs, &physical)?;
        let channels = prototypes
            .iter()
            .map(|p| table.channel_map(&p.name))
            .collect();
        Ok(Self {
            physical,
            prototypes,
            programs,
            bindings,
            table,
            channels,
        })
    }

    pub fn channels(&self, app: &str) -> Option<&ChannelMap> {
        let i = self.prototypes.iter().position(|p| p.name == app)?;
        Some(&self.channels[i])
    }

    pub fn program(&self, app: &str) -> Option<&TypedProgram> {
        let i = self.prototypes.iter().position(|p| p.name == app)?;
        Some(&self.programs[i])
    }

    pub fn verify_apps(&self) -> Vec<VerifyApp<'_>> {
        self.prototypes
            .iter()
            .zip(&self.programs)
            .zip(&self.channels)
            .map(|((p, program), channels)| VerifyApp {
                name: &p.name,
                program,
                channels,
            })
            .collect()
    }

    /// Checks the whole suite as one installation.
    pub fn verify(&self) -> Result<InstallReport, VerifyError> {
        verify_installation(&[], &self.verify_apps())
    }

    pub fn runtime_apps(&self, stubs: &Stubs) -> Vec<AppRuntimeRecord> {
        self.prototypes
            .iter()
            .zip(&self.programs)
            .zip(&self.channels)
            .map(|((p, program), channels)| {
                AppRuntimeRecord::new(
                    p.name.clone(),
                    p.is_privileged(),
                    p.timer,
                    program.clone(),
                    channels.clone(),
                    stubs.registry(program),
                )
            })
            .collect()
    }

    /// A runtime on a fresh simulated bus, preset with the scenario's
    /// initial values.
    pub fn simulation(
        &self,
        scenario: &Scenario,
        stubs: &Stubs,
    ) -> Result<Simulation, ScenarioError> {
        Simulation::for_scenario(scenario, self.table.clone(), self.runtime_apps(stubs), None)
    }
}

/// The three lab apps on the lab installation.
pub fn build_fixtures() -> Result<Suite, FixtureError> {
    Suite::build(&LAB_APPS, LAB_PHYSICAL, LAB_BINDINGS)
}

/// The introductory example app on the lab installation.
pub fn example_suite() -> Result<Suite, FixtureError> {
    Suite::build(&[EXAMPLE_APP], LAB_PHYSICAL, EXAMPLE_BINDINGS)
}

pub fn rogue_suite() -> Result<Suite, FixtureError> {
    Suite::build(&[ROGUE], LAB_PHYSICAL, ROGUE_BINDINGS)
}

/// Scenarios for the lab suite.
pub fn lab_scenarios() -> Result<Vec<Scenario>, ScenarioError> {
    [SCENARIO_VENTILATION, SCENARIO_DOOR_LOCK, SCENARIO_PLANTS]
        .into_iter()
        .map(Scenario::from_json)
        .collect()
}
