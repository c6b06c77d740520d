//! App prototypes, supported device kinds and app skeleton generation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physical::IoType;
use crate::value::ValueType;
use crate::wire::DptId;

pub use crate::value::AppState;

pub const PROTOTYPE_FILE: &str = "app_prototypical_structure.json";
pub const MAIN_FILE: &str = "main.app";

#[derive(Debug, Error)]
pub enum AppModelError {
    #[error("malformed prototype file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported device type {0:?}")]
    UnsupportedDevice(String),
    #[error("unknown permission level {0:?}")]
    Permission(String),
    #[error("device instance name {0:?} is used twice")]
    DuplicateInstance(String),
    #[error("invalid device instance name {0:?}")]
    InstanceName(String),
    #[error("timer must be non-negative, got {0}")]
    Timer(i64),
    #[error(
        "invalid app name {0:?}: use short all-lowercase names (letters, digits, underscores)"
    )]
    AppName(String),
    #[error("{0} already exists")]
    Conflict(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AppModelError + '_ {
    move |source| AppModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Permission {
    #[serde(rename = "privileged")]
    Privileged,
    #[serde(rename = "notPrivileged")]
    NotPrivileged,
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Permission::Privileged => "privileged",
            Permission::NotPrivileged => "notPrivileged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceKind {
    Binary,
    Temperature,
    Humidity,
    Co2,
    Switch,
}

/// One communication object a prototypical device exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSchema {
    pub name: &'static str,
    pub io: IoType,
    pub value_type: ValueType,
    pub dpt: DptId,
    pub readable: bool,
    pub writable: bool,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 5] = [
        DeviceKind::Binary,
        DeviceKind::Temperature,
        DeviceKind::Humidity,
        DeviceKind::Co2,
        DeviceKind::Switch,
    ];

    pub fn type_name(self) -> &'static str {
        match self {
            DeviceKind::Binary => "binary",
            DeviceKind::Temperature => "temperature",
            DeviceKind::Humidity => "humidity",
            DeviceKind::Co2 => "co2",
            DeviceKind::Switch => "switch",
        }
    }

    pub fn from_type_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.type_name() == name)
    }

    pub fn channels(self) -> &'static [ChannelSchema] {
        const fn sensor(name: &'static str, value_type: ValueType, dpt: DptId) -> ChannelSchema {
            ChannelSchema {
                name,
                io: IoType::In,
                value_type,
                dpt,
                readable: true,
                writable: false,
            }
        }
        const BINARY: [ChannelSchema; 1] = [sensor("state", ValueType::Bool, DptId::BOOL)];
        const REAL: [ChannelSchema; 1] = [sensor("read", ValueType::Real, DptId::FLOAT16)];
        const SWITCH: [ChannelSchema; 1] = [ChannelSchema {
            name: "state",
            io: IoType::InOut,
            value_type: ValueType::Bool,
            dpt: DptId::BOOL,
            readable: true,
            writable: true,
        }];
        match self {
            DeviceKind::Binary => &BINARY,
            DeviceKind::Temperature | DeviceKind::Humidity | DeviceKind::Co2 => &REAL,
            DeviceKind::Switch => &SWITCH,
        }
    }

    pub fn channel(self, name: &str) -> Option<&'static ChannelSchema> {
        self.channels().iter().find(|c| c.name == name)
    }

    /// The channel the device's read method (`is_on()` / `read()`) observes.
    pub fn read_channel(self) -> &'static ChannelSchema {
        &self.channels()[0]
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.type_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceDecl {
    /// Name as written in the prototype file.
    pub name: String,
    pub kind: DeviceKind,
}

impl DeviceDecl {
    /// Instance identifier used in app code: the declared name capitalized.
    pub fn instance(&self) -> String {
        self.name.to_ascii_uppercase()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppPrototype {
    pub name: String,
    pub permission: Permission,
    pub timer: u64,
    pub files: Vec<String>,
    pub devices: Vec<DeviceDecl>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PrototypeFile {
    permission_level: String,
    #[serde(default)]
    timer: i64,
    #[serde(default)]
    files: Vec<String>,
    #[serde(default)]
    devices: Vec<DeviceEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DeviceEntry {
    name: String,
    device_type: String,
}

pub fn is_valid_app_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn is_valid_instance_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl AppPrototype {
    /// Parses the prototype JSON for an app called `name`. The name itself
    /// is not validated here; see [`is_valid_app_name`].
    pub fn from_json(name: &str, text: &str) -> Result<Self, AppModelError> {
        let raw: PrototypeFile = serde_json::from_str(text)?;
        let permission = match raw.permission_level.as_str() {
            "privileged" => Permission::Privileged,
            "notPrivileged" => Permission::NotPrivileged,
            other => return Err(AppModelError::Permission(other.to_string())),
        };
        if raw.timer < 0 {
            return Err(AppModelError::Timer(raw.timer));
        }
        let mut seen = BTreeSet::new();
        let mut devices = Vec::with_capacity(raw.devices.len());
        for d in raw.devices {
            if !is_valid_instance_name(&d.name) {
                return Err(AppModelError::InstanceName(d.name));
            }
            let kind = DeviceKind::from_type_name(&d.device_type)
                .ok_or_else(|| AppModelError::UnsupportedDevice(d.device_type.clone()))?;
            if !seen.insert(d.name.to_ascii_uppercase()) {
                return Err(AppModelError::DuplicateInstance(d.name));
            }
            devices.push(DeviceDecl { name: d.name, kind });
        }
        Ok(Self {
            name: name.to_string(),
            permission,
            timer: raw.timer as u64,
            files: raw.files,
            devices,
        })
    }

    pub fn load(name: &str, path: &Path) -> Result<Self, AppModelError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(name, &text)
    }

    pub fn to_json(&self) -> String {
        let file = PrototypeFile {
            permission_level: self.permission.to_string(),
            timer: self.timer as i64,
            files: self.files.clone(),
            devices: self
                .devices
                .iter()
                .map(|d| DeviceEntry {
                    name: d.name.clone(),
                    device_type: d.kind.type_name().to_string(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("prototype serializes") + "\n"
    }

    pub fn device(&self, instance: &str) -> Option<&DeviceDecl> {
        self.devices.iter().find(|d| d.instance() == instance)
    }

    pub fn is_privileged(&self) -> bool {
        self.permission == Permission::Privileged
    }
}

/// Text of a fresh `main.app`: one `device` line per prototype entry, a
/// trivially true invariant and an empty handler.
pub fn skeleton_source(proto: &AppPrototype) -> String {
    let mut out = format!("# {}\n", proto.name);
    if !proto.devices.is_empty() {
        out.push('\n');
    }
    for d in &proto.devices {
        out.push_str(&format!("device {}: {};\n", d.instance(), d.kind));
    }
    out.push_str("\ninvariant: true\n\niteration: {\n}\n");
    out
}

/// Creates `dest/generated/<name>/` with `main.app` and the prototype file.
///
/// The prototype source file is moved into the project when `moved_from` is
/// given; declared extra files are not created.
pub fn generate_app_skeleton(
    proto: &AppPrototype,
    generated_dir: &Path,
    moved_from: Option<&Path>,
) -> Result<PathBuf, AppModelError> {
    if !is_valid_app_name(&proto.name) {
        return Err(AppModelError::AppName(proto.name.clone()));
    }
    let dir = generated_dir.join(&proto.name);
    if dir.exists() {
        return Err(AppModelError::Conflict(dir));
    }
    std::fs::create_dir_all(generated_dir).map_err(io_err(generated_dir))?;
    std::fs::create_dir(&dir).map_err(io_err(&dir))?;
    let main = dir.join(MAIN_FILE);
    std::fs::write(&main, skeleton_source(proto)).map_err(io_err(&main))?;
    let proto_path = dir.join(PROTOTYPE_FILE);
    std::fs::write(&proto_path, proto.to_json()).map_err(io_err(&proto_path))?;
    if let Some(src) = moved_from {
        std::fs::remove_file(src).map_err(io_err(src))?;
    }
    Ok(dir)
}
