//! The physical installation: devices, their individual addresses and the
//! communication objects apps can be bound to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{DptId, IndividualAddress, WireError};

/// Devices allowed on one line.
pub const MAX_DEVICES_PER_LINE: usize = 64;

#[derive(Debug, Error)]
pub enum PhysicalError {
    #[error("malformed installation file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("cannot read installation file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("device {device:?}: {source}")]
    Range { device: String, source: WireError },
    #[error("communication object id {0} is used more than once")]
    DuplicateCommObject(u32),
    #[error("individual address {0} is used by more than one device")]
    DuplicateAddress(IndividualAddress),
    #[error("line {area}.{line} holds {count} devices (at most {MAX_DEVICES_PER_LINE})")]
    LineCapacity { area: u8, line: u8, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IoType {
    #[serde(rename = "in")]
    In,
    #[serde(rename = "out")]
    Out,
    #[serde(rename = "in/out")]
    InOut,
    #[serde(rename = "unknown")]
    Unknown,
}

impl fmt::Display for IoType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IoType::In => "in",
            IoType::Out => "out",
            IoType::InOut => "in/out",
            IoType::Unknown => "unknown",
        })
    }
}

/// Datatype of a physical communication object, when the export knows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhysicalDpt {
    Known(DptId),
    Unknown,
}

impl Serialize for PhysicalDpt {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PhysicalDpt::Known(d) => d.serialize(s),
            PhysicalDpt::Unknown => s.serialize_str("unknown"),
        }
    }
}

impl<'de> Deserialize<'de> for PhysicalDpt {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("unknown") {
            Ok(PhysicalDpt::Unknown)
        } else {
            s.parse()
                .map(PhysicalDpt::Known)
                .map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalCommObject {
    pub id: u32,
    pub name: String,
    pub dpt: PhysicalDpt,
    pub io: IoType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PhysicalDevice {
    pub name: String,
    #[serde(serialize_with = "serialize_display")]
    pub address: IndividualAddress,
    pub comm_objects: Vec<PhysicalCommObject>,
}

fn serialize_display<S: serde::Serializer>(
    value: &IndividualAddress,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_str(value)
}

/// A validated installation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhysicalStructure {
    pub devices: Vec<PhysicalDevice>,
}

#[derive(Deserialize)]
struct RawStructure {
    #[serde(default)]
    devices: Vec<RawDevice>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawDevice {
    name: String,
    address: String,
    #[serde(default)]
    comm_objects: Vec<PhysicalCommObject>,
}

type CanonicalObject = (u32, PhysicalDpt, IoType);

impl PhysicalStructure {
    pub fn empty() -> Self {
        Self {
            devices: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PhysicalError> {
        let raw: RawStructure = serde_json::from_str(text)?;
        let mut devices = Vec::with_capacity(raw.devices.len());
        for d in raw.devices {
            let address =
                d.address
                    .parse::<IndividualAddress>()
                    .map_err(|source| PhysicalError::Range {
                        device: d.name.clone(),
                        source,
                    })?;
            devices.push(PhysicalDevice {
                name: d.name,
                address,
                comm_objects: d.comm_objects,
            });
        }
        Self::new(devices)
    }

    pub fn load(path: &Path) -> Result<Self, PhysicalError> {
        let text = std::fs::read_to_string(path).map_err(|source| PhysicalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Validates uniqueness and line capacity.
    pub fn new(devices: Vec<PhysicalDevice>) -> Result<Self, PhysicalError> {
        let mut ids = BTreeSet::new();
        let mut addresses = BTreeSet::new();
        let mut per_line: BTreeMap<(u8, u8), usize> = BTreeMap::new();
        for d in &devices {
            if !addresses.insert(d.address) {
                return Err(PhysicalError::DuplicateAddress(d.address));
            }
            let count = per_line
                .entry((d.address.area(), d.address.line()))
                .or_default();
            *count += 1;
            if *count > MAX_DEVICES_PER_LINE {
                return Err(PhysicalError::LineCapacity {
                    area: d.address.area(),
                    line: d.address.line(),
                    count: *count,
                });
            }
            for co in &d.comm_objects {
                if !ids.insert(co.id) {
                    return Err(PhysicalError::DuplicateCommObject(co.id));
                }
            }
        }
        Ok(Self { devices })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("structure serializes") + "\n"
    }

    pub fn comm_objects(&self) -> impl Iterator<Item = (&PhysicalDevice, &PhysicalCommObject)> {
        self.devices
            .iter()
            .flat_map(|d| d.comm_objects.iter().map(move |co| (d, co)))
    }

    pub fn comm_object(&self, id: u32) -> Option<(&PhysicalDevice, &PhysicalCommObject)> {
        self.comm_objects().find(|(_, co)| co.id == id)
    }

    /// Every communication object by id, for repeated lookups.
    pub fn comm_object_index(&self) -> BTreeMap<u32, (&PhysicalDevice, &PhysicalCommObject)> {
        self.comm_objects()
            .map(|(d, co)| (co.id, (d, co)))
            .collect()
    }

    pub fn comm_object_count(&self) -> usize {
        self.devices.iter().map(|d| d.comm_objects.len()).sum()
    }

    fn canonical(&self) -> Vec<(IndividualAddress, Vec<CanonicalObject>)> {
        let mut devices: Vec<_> = self
            .devices
            .iter()
            .map(|d| {
                let mut cos: Vec<_> = d.comm_objects.iter().map(|c| (c.id, c.dpt, c.io)).collect();
                cos.sort_by_key(|c| c.0);
                (d.address, cos)
            })
            .collect();
        devices.sort_by_key(|d| d.0);
        devices
    }
}

/// Content equality ignoring order and display names: device addresses,
/// communication-object ids, datatypes and io types must all match.
pub fn structures_equal(a: &PhysicalStructure, b: &PhysicalStructure) -> bool {
    a.canonical() == b.canonical()
}
