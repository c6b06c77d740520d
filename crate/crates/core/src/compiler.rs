//! Bindings, compatibility checks, group-address allocation and the files
//! handed to the installer and the runtime.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::AppPrototype;
use crate::lang::{ChannelId, ChannelMap};
use crate::physical::{structures_equal, IoType, PhysicalDpt, PhysicalStructure};
use crate::value::ValueType;
use crate::wire::{DptId, GroupAddress};

pub const BINDINGS_FILE: &str = "apps_bindings.json";
pub const PHYSICAL_FILE: &str = "physical_structure.json";
pub const ADDRESSES_FILE: &str = "addresses.json";
pub const TABLE_FILE: &str = "group_addresses.json";
pub const ASSIGNMENT_CSV: &str = "assignment.csv";
pub const ASSIGNMENT_TXT: &str = "assignment.txt";

/// Marks a channel the developer still has to bind.
pub const UNBOUND: i64 = -1;

/// Largest raw address the allocator hands out; 0/0/0 is never used.
pub const MAX_ALLOCATIONS: u32 = u16::MAX as u32;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{app}: {instance}.{channel} is not bound to a communication object (still -1)")]
    Incomplete {
        app: String,
        instance: String,
        channel: String,
    },
    #[error(
        "{app}: {instance}.{channel} is bound to communication object {id}, which does not exist"
    )]
    UnknownCommObject {
        app: String,
        instance: String,
        channel: String,
        id: i64,
    },
    #[error("{app}: bindings do not match the prototype ({detail})")]
    Shape { app: String, detail: String },
    #[error("group address space exhausted: only {MAX_ALLOCATIONS} addresses can be allocated")]
    Capacity,
    #[error("malformed {what}: {source}")]
    Format {
        what: &'static str,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CompileError + '_ {
    move |source| CompileError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceBinding {
    pub device_type: String,
    pub channels: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppBindings {
    pub instances: BTreeMap<String, InstanceBinding>,
}

/// app name -> instance -> channel -> communication-object id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BindingSet {
    pub apps: BTreeMap<String, AppBindings>,
}

impl BindingSet {
    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        serde_json::from_str(text).map_err(|source| CompileError::Format {
            what: BINDINGS_FILE,
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CompileError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bindings serialize") + "\n"
    }

    pub fn get(&self, app: &str, instance: &str, channel: &str) -> Option<i64> {
        self.apps
            .get(app)?
            .instances
            .get(instance)?
            .channels
            .get(channel)
            .copied()
    }

    pub fn set(&mut self, app: &str, instance: &str, channel: &str, id: i64) {
        if let Some(c) = self
            .apps
            .get_mut(app)
            .and_then(|a| a.instances.get_mut(instance))
            .and_then(|i| i.channels.get_mut(channel))
        {
            *c = id;
        }
    }

    /// Every (app, instance, channel, id) in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &str, i64)> {
        self.apps.iter().flat_map(|(app, a)| {
            a.instances.iter().flat_map(move |(inst, i)| {
                i.channels
                    .iter()
                    .map(move |(ch, id)| (app.as_str(), inst.as_str(), ch.as_str(), *id))
            })
        })
    }

    pub fn retain_apps(&mut self, keep: impl Fn(&str) -> bool) {
        self.apps.retain(|name, _| keep(name));
    }
}

fn unbound_app(proto: &AppPrototype) -> AppBindings {
    AppBindings {
        instances: proto
            .devices
            .iter()
            .map(|d| {
                (
                    d.instance(),
                    InstanceBinding {
                        device_type: d.kind.type_name().to_string(),
                        channels: d
                            .kind
                            .channels()
                            .iter()
                            .map(|c| (c.name.to_string(), UNBOUND))
                            .collect(),
                    },
                )
            })
            .collect(),
    }
}

/// Builds the bindings for `installed` plus `installing`. Ids of installed
/// apps are kept only when `phys` equals the structure they were compiled
/// against; every other channel starts at -1.
pub fn generate_bindings(
    installing: &[&AppPrototype],
    installed: &[&AppPrototype],
    installed_bindings: &BindingSet,
    stored_structure: Option<&PhysicalStructure>,
    phys: &PhysicalStructure,
) -> BindingSet {
    let keep = stored_structure.is_some_and(|s| structures_equal(s, phys));
    let mut out = BindingSet::default();
    for proto in installed {
        let mut app = unbound_app(proto);
        if keep {
            for (inst, binding) in app.instances.iter_mut() {
                for (ch, id) in binding.channels.iter_mut() {
                    if let Some(prev) = installed_bindings.get(&proto.name, inst, ch) {
                        *id = prev;
                    }
                }
            }
        }
        out.apps.insert(proto.name.clone(), app);
    }
    for proto in installing {
        out.apps.insert(proto.name.clone(), unbound_app(proto));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Compat {
    Yes,
    No,
    Warning,
}

/// Whether a physical communication object with io `physical` can back a
/// prototype channel with io `prototype`.
pub fn io_compat(physical: IoType, prototype: IoType) -> Compat {
    match (physical, prototype) {
        (IoType::Unknown, _) | (_, IoType::Unknown) => Compat::Warning,
        (IoType::In, IoType::In) => Compat::Yes,
        (IoType::In, _) => Compat::No,
        (IoType::Out | IoType::InOut, _) => Compat::Yes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Rule {
    IoType,
    ValueType,
    Datatype,
    MutualDatatype,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub rule: Rule,
    pub locus: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{sev} [{:?}] {}: {}",
            self.rule, self.locus, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CompatReport {
    pub findings: Vec<Finding>,
}

impl CompatReport {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }
}

/// A prototype channel of a specific app.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelRef {
    pub app: String,
    pub instance: String,
    pub channel: String,
}

impl ChannelRef {
    pub fn id(&self) -> ChannelId {
        ChannelId::new(self.instance.clone(), self.channel.clone())
    }

    /// `<app>_<instance>_<channel>`, used as the group-address name.
    pub fn name(&self) -> String {
        format!("{}_{}_{}", self.app, self.instance, self.channel)
    }
}

impl fmt::Display for ChannelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}.{}", self.app, self.instance, self.channel)
    }
}

struct BoundChannel {
    at: ChannelRef,
    io: IoType,
    value_type: ValueType,
    dpt: DptId,
    comm_object: u32,
}

/// Checks that every channel of every app is bound to an existing
/// communication object and returns those bindings grouped by object.
fn resolve(
    bindings: &BindingSet,
    apps: &[&AppPrototype],
    phys: &PhysicalStructure,
) -> Result<BTreeMap<u32, Vec<BoundChannel>>, CompileError> {
    let objects = phys.comm_object_index();
    let mut by_object: BTreeMap<u32, Vec<BoundChannel>> = BTreeMap::new();
    for proto in apps {
        let app_bindings = bindings
            .apps
            .get(&proto.name)
            .ok_or_else(|| CompileError::Shape {
                app: proto.name.clone(),
                detail: "no entry in the bindings file".into(),
            })?;
        for dev in &proto.devices {
            let inst = dev.instance();
            let ib = app_bindings
                .instances
                .get(&inst)
                .ok_or_else(|| CompileError::Shape {
                    app: proto.name.clone(),
                    detail: format!("instance {inst} missing"),
                })?;
            if ib.device_type != dev.kind.type_name() {
                return Err(CompileError::Shape {
                    app: proto.name.clone(),
                    detail: format!(
                        "instance {inst} has deviceType {:?}, expected {:?}",
                        ib.device_type,
                        dev.kind.type_name()
                    ),
                });
            }
            for schema in dev.kind.channels() {
                let at = ChannelRef {
                    app: proto.name.clone(),
                    instance: inst.clone(),
                    channel: schema.name.to_string(),
                };
                let id = ib.channels.get(schema.name).copied().unwrap_or(UNBOUND);
                if id == UNBOUND {
                    return Err(CompileError::Incomplete {
                        app: at.app,
                        instance: at.instance,
                        channel: at.channel,
                    });
                }
                let co = u32::try_from(id)
                    .ok()
                    .filter(|id| objects.contains_key(id))
                    .ok_or_else(|| CompileError::UnknownCommObject {
                        app: at.app.clone(),
                        instance: at.instance.clone(),
                        channel: at.channel.clone(),
                        id,
                    })?;
                by_object.entry(co).or_default().push(BoundChannel {
                    at,
                    io: schema.io,
                    value_type: schema.value_type,
                    dpt: schema.dpt,
                    comm_object: co,
                });
            }
        }
    }
    Ok(by_object)
}

/// Applies the io-type, value-type, datatype and mutual-datatype rules.
pub fn verify_bindings(
    bindings: &BindingSet,
    apps: &[&AppPrototype],
    phys: &PhysicalStructure,
) -> Result<CompatReport, CompileError> {
    let by_object = resolve(bindings, apps, phys)?;
    let mut report = CompatReport::default();
    let mut push = |severity, rule, locus: String, message: String| {
        report.findings.push(Finding {
            severity,
            rule,
            locus,
            message,
        })
    };
    let objects = phys.comm_object_index();
    for (id, channels) in &by_object {
        let (dev, co) = objects[id];
        for ch in channels {
            let locus = format!("{} -> {} #{id} ({:?})", ch.at, dev.name, co.name);
            match io_compat(co.io, ch.io) {
                Compat::Yes => {}
                Compat::No => push(
                    Severity::Error,
                    Rule::IoType,
                    locus.clone(),
                    format!("physical io {} cannot serve prototype io {}", co.io, ch.io),
                ),
                Compat::Warning => push(
                    Severity::Warning,
                    Rule::IoType,
                    locus.clone(),
                    format!(
                        "physical io is {}; check compatibility with {} by hand",
                        co.io, ch.io
                    ),
                ),
            }
            match co.dpt {
                PhysicalDpt::Known(d) if d.same_main(ch.dpt) => {}
                PhysicalDpt::Known(d) => push(
                    Severity::Error,
                    Rule::Datatype,
                    locus.clone(),
                    format!(
                        "physical datatype {d} differs from prototype datatype {}",
                        ch.dpt
                    ),
                ),
                PhysicalDpt::Unknown => push(
                    Severity::Warning,
                    Rule::Datatype,
                    locus.clone(),
                    format!("physical datatype unknown; prototype expects {}", ch.dpt),
                ),
            }
        }
        let first = &channels[0];
        for other in &channels[1..] {
            let locus = format!("communication object #{id}: {} and {}", first.at, other.at);
            if other.value_type != first.value_type {
                push(
                    Severity::Error,
                    Rule::ValueType,
                    locus.clone(),
                    format!(
                        "channels connected to the same group address have types {} and {}",
                        first.value_type, other.value_type
                    ),
                );
            }
            if !other.dpt.same_main(first.dpt) {
                push(
                    Severity::Error,
                    Rule::MutualDatatype,
                    locus,
                    format!("datatypes {} and {} differ", first.dpt, other.dpt),
                );
            }
        }
    }
    Ok(report)
}

/// Hands out 0/0/1, 0/0/2, ... in order.
#[derive(Debug, Clone, Default)]
pub struct GroupAddressAllocator {
    issued: u32,
}

impl GroupAddressAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issued(&self) -> u32 {
        self.issued
    }

    pub fn allocate(&mut self) -> Result<GroupAddress, CompileError> {
        if self.issued >= MAX_ALLOCATIONS {
            return Err(CompileError::Capacity);
        }
        self.issued += 1;
        Ok(GroupAddress::from_raw(self.issued as u16))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupAddressEntry {
    pub value_type: ValueType,
    pub dpt: DptId,
    pub comm_object: u32,
    pub channels: Vec<ChannelRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupAddressTable {
    pub entries: BTreeMap<GroupAddress, GroupAddressEntry>,
}

impl GroupAddressTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        serde_json::from_str(text).map_err(|source| CompileError::Format {
            what: TABLE_FILE,
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// The channel-to-address map of one app.
    pub fn channel_map(&self, app: &str) -> ChannelMap {
        self.entries
            .iter()
            .flat_map(|(ga, e)| {
                e.channels
                    .iter()
                    .filter(move |c| c.app == app)
                    .map(move |c| (c.id(), *ga))
            })
            .collect()
    }

    pub fn address_of(&self, comm_object: u32) -> Option<GroupAddress> {
        self.entries
            .iter()
            .find(|(_, e)| e.comm_object == comm_object)
            .map(|(ga, _)| *ga)
    }
}

/// One address per distinct bound communication object, in ascending
/// object-id order. Unbound objects get nothing.
pub fn assign_group_addresses(
    bindings: &BindingSet,
    apps: &[&AppPrototype],
    phys: &PhysicalStructure,
) -> Result<GroupAddressTable, CompileError> {
    let by_object = resolve(bindings, apps, phys)?;
    let mut alloc = GroupAddressAllocator::new();
    let mut table = GroupAddressTable::default();
    for (id, mut channels) in by_object {
        let ga = alloc.allocate()?;
        channels.sort_by(|a, b| a.at.cmp(&b.at));
        let first = &channels[0];
        table.entries.insert(
            ga,
            GroupAddressEntry {
                value_type: first.value_type,
                dpt: DptId::new(first.dpt.main),
                comm_object: first.comm_object,
                channels: channels.iter().map(|c| c.at.clone()).collect(),
            },
        );
        debug_assert_eq!(first.comm_object, id);
    }
    Ok(table)
}

pub fn render_assignment_csv(table: &GroupAddressTable) -> String {
    let mut out = String::from("address;name\n");
    for (ga, e) in &table.entries {
        out.push_str(&format!("{ga};{}\n", e.channels[0].name()));
    }
    out
}

pub fn render_assignment_txt(table: &GroupAddressTable, phys: &PhysicalStructure) -> String {
    let objects = phys.comm_object_index();
    let mut out = String::new();
    for (ga, e) in &table.entries {
        let found = objects.get(&e.comm_object);
        let (dev, co) = found
            .map(|(d, c)| (d.name.as_str(), c.name.as_str()))
            .unwrap_or(("?", "?"));
        out.push_str(&format!(
            "{dev} ({}) / {co} #{} -> {ga} [{}, {}]\n",
            found
                .map(|(d, _)| d.address.to_string())
                .unwrap_or_default(),
            e.comm_object,
            e.value_type,
            e.dpt
        ));
        for c in &e.channels {
            out.push_str(&format!("    {c}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AddressInfo {
    pub address: GroupAddress,
    pub value_type: ValueType,
    pub dpt: DptId,
}

/// The `addresses.json` of one app: `INSTANCE.channel` -> address info.
pub fn app_addresses(table: &GroupAddressTable, app: &str) -> BTreeMap<String, AddressInfo> {
    table
        .entries
        .iter()
        .flat_map(|(ga, e)| {
            e.channels
                .iter()
                .filter(move |c| c.app == app)
                .map(move |c| {
                    (
                        c.id().to_string(),
                        AddressInfo {
                            address: *ga,
                            value_type: e.value_type,
                            dpt: e.dpt,
                        },
                    )
                })
        })
        .collect()
}

pub fn render_app_addresses(table: &GroupAddressTable, app: &str) -> String {
    serde_json::to_string_pretty(&app_addresses(table, app)).expect("addresses serialize") + "\n"
}

/// Parses an `addresses.json` back into a channel map.
pub fn parse_app_addresses(text: &str) -> Result<ChannelMap, CompileError> {
    let raw: BTreeMap<String, AddressInfo> =
        serde_json::from_str(text).map_err(|source| CompileError::Format {
            what: ADDRESSES_FILE,
            source,
        })?;
    raw.into_iter()
        .map(|(key, info)| {
            let (inst, ch) = key.split_once('.').ok_or_else(|| CompileError::Format {
                what: ADDRESSES_FILE,
                source: serde::de::Error::custom(format!("bad channel key {key:?}")),
            })?;
            Ok((ChannelId::new(inst, ch), info.address))
        })
        .collect()
}

/// Writes `assignment.csv` and `assignment.txt` into `dir`.
pub fn write_assignments(
    dir: &Path,
    table: &GroupAddressTable,
    phys: &PhysicalStructure,
) -> Result<(), CompileError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, text) in [
        (ASSIGNMENT_CSV, render_assignment_csv(table)),
        (ASSIGNMENT_TXT, render_assignment_txt(table, phys)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
