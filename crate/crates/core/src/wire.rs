//! Bit-exact codecs for KNX addresses, datapoint values and telegrams.
//!
//! Everything here is a pure function over values. The compiler, the runtime
//! and the simulated bus all share these encodings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors raised by the wire codecs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("{field} = {value} is out of range (max {max})")]
    Range {
        field: &'static str,
        value: i64,
        max: i64,
    },
    #[error("cannot parse {what} from {input:?}")]
    Syntax { what: &'static str, input: String },
    #[error("payload of {len} bytes does not fit {dpt}")]
    DptLength { dpt: DptId, len: usize },
    #[error("invalid payload for {dpt}: {reason}")]
    DptValue { dpt: DptId, reason: String },
    #[error("unsupported datapoint type {0}")]
    UnsupportedDpt(DptId),
    #[error("value {0} cannot be encoded as a 16-bit KNX float")]
    Float16Overflow(f64),
    #[error("telegram payload of {0} bytes exceeds 16")]
    PayloadTooLong(usize),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("checksum mismatch: expected {expected:#04x}, found {found:#04x}")]
    Integrity { expected: u8, found: u8 },
}

fn check_range(field: &'static str, value: i64, max: i64) -> Result<(), WireError> {
    if (0..=max).contains(&value) {
        Ok(())
    } else {
        Err(WireError::Range { field, value, max })
    }
}

/// Physical address of a device, written `area.line.device`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndividualAddress {
    area: u8,
    line: u8,
    device: u8,
}

impl IndividualAddress {
    pub fn new(area: i64, line: i64, device: i64) -> Result<Self, WireError> {
        check_range("area", area, 15)?;
        check_range("line", line, 15)?;
        check_range("device", device, 255)?;
        Ok(Self {
            area: area as u8,
            line: line as u8,
            device: device as u8,
        })
    }

    pub fn area(self) -> u8 {
        self.area
    }

    pub fn line(self) -> u8 {
        self.line
    }

    pub fn device(self) -> u8 {
        self.device
    }

    /// Packs the address as `AAAA.LLLL.DDDDDDDD`.
    pub fn encode(self) -> u16 {
        (u16::from(self.area) << 12) | (u16::from(self.line) << 8) | u16::from(self.device)
    }

    pub const fn decode(word: u16) -> Self {
        Self {
            area: (word >> 12) as u8,
            line: ((word >> 8) & 0x0F) as u8,
            device: (word & 0xFF) as u8,
        }
    }
}

impl fmt::Display for IndividualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.area, self.line, self.device)
    }
}

impl FromStr for IndividualAddress {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = parse_components(s, '.', 3).ok_or_else(|| WireError::Syntax {
            what: "individual address",
            input: s.to_string(),
        })?;
        Self::new(parts[0], parts[1], parts[2])
    }
}

fn parse_components(s: &str, sep: char, n: usize) -> Option<Vec<i64>> {
    let parts: Vec<&str> = s.trim().split(sep).collect();
    if parts.len() != n {
        return None;
    }
    parts.iter().map(|p| p.trim().parse::<i64>().ok()).collect()
}

/// Structured view of a group address in one of the two KNX notations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupAddressParts {
    /// `main/middle/sub` with main 0..31, middle 0..7, sub 0..255.
    ThreeLevel { main: u16, middle: u16, sub: u16 },
    /// `main/sub` with main 0..31, sub 0..2047.
    TwoLevel { main: u16, sub: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupAddressStyle {
    ThreeLevel,
    TwoLevel,
}

impl GroupAddressParts {
    pub fn three_level(main: i64, middle: i64, sub: i64) -> Result<Self, WireError> {
        check_range("main group", main, 31)?;
        check_range("middle group", middle, 7)?;
        check_range("sub group", sub, 255)?;
        Ok(Self::ThreeLevel {
            main: main as u16,
            middle: middle as u16,
            sub: sub as u16,
        })
    }

    pub fn two_level(main: i64, sub: i64) -> Result<Self, WireError> {
        check_range("main group", main, 31)?;
        check_range("sub group", sub, 2047)?;
        Ok(Self::TwoLevel {
            main: main as u16,
            sub: sub as u16,
        })
    }

    pub fn encode(self) -> u16 {
        match self {
            Self::ThreeLevel { main, middle, sub } => (main << 11) | (middle << 8) | sub,
            Self::TwoLevel { main, sub } => (main << 11) | sub,
        }
    }

    pub fn decode(word: u16, style: GroupAddressStyle) -> Self {
        match style {
            GroupAddressStyle::ThreeLevel => Self::ThreeLevel {
                main: word >> 11,
                middle: (word >> 8) & 0x07,
                sub: word & 0xFF,
            },
            GroupAddressStyle::TwoLevel => Self::TwoLevel {
                main: word >> 11,
                sub: word & 0x07FF,
            },
        }
    }
}

/// A group address, stored as its canonical 16-bit value.
///
/// Displayed in three-level notation. Parsing accepts three-level
/// (`1/2/3`), two-level (`1/515`) and free-style raw values (`2563`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupAddress(u16);

impl GroupAddress {
    pub const fn from_raw(raw: u16) -> Self {
        Self(raw)
    }

    pub fn three_level(main: i64, middle: i64, sub: i64) -> Result<Self, WireError> {
        Ok(Self(
            GroupAddressParts::three_level(main, middle, sub)?.encode(),
        ))
    }

    pub fn two_level(main: i64, sub: i64) -> Result<Self, WireError> {
        Ok(Self(GroupAddressParts::two_level(main, sub)?.encode()))
    }

    pub const fn raw(self) -> u16 {
        self.0
    }

    pub fn parts(self, style: GroupAddressStyle) -> GroupAddressParts {
        GroupAddressParts::decode(self.0, style)
    }

    /// Identifier-safe spelling, e.g. `GA_0_0_1`.
    pub fn symbol_name(self) -> String {
        match self.parts(GroupAddressStyle::ThreeLevel) {
            GroupAddressParts::ThreeLevel { main, middle, sub } => {
                format!("GA_{main}_{middle}_{sub}")
            }
            GroupAddressParts::TwoLevel { .. } => unreachable!(),
        }
    }
}

impl fmt::Display for GroupAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parts(GroupAddressStyle::ThreeLevel) {
            GroupAddressParts::ThreeLevel { main, middle, sub } => {
                write!(f, "{main}/{middle}/{sub}")
            }
            GroupAddressParts::TwoLevel { .. } => unreachable!(),
        }
    }
}

impl FromStr for GroupAddress {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || WireError::Syntax {
            what: "group address",
            input: s.to_string(),
        };
        match s.matches('/').count() {
            2 => {
                let p = parse_components(s, '/', 3).ok_or_else(syntax)?;
                Self::three_level(p[0], p[1], p[2])
            }
            1 => {
                let p = parse_components(s, '/', 2).ok_or_else(syntax)?;
                Self::two_level(p[0], p[1])
            }
            0 => {
                let raw: i64 = s.trim().parse().map_err(|_| syntax())?;
                check_range("group address", raw, 0xFFFF)?;
                Ok(Self(raw as u16))
            }
            _ => Err(syntax()),
        }
    }
}

impl Serialize for GroupAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Datapoint type identifier `DPT-main[-sub]`.
///
/// Compatibility checks compare [`DptId::main`] only; equality on the whole
/// value is structural.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DptId {
    pub main: u16,
    pub sub: Option<u16>,
}

impl DptId {
    pub const BOOL: DptId = DptId::new(1);
    pub const UNSIGNED8: DptId = DptId::new(5);
    pub const FLOAT16: DptId = DptId::new(9);
    pub const FLOAT32: DptId = DptId::new(14);

    pub const fn new(main: u16) -> Self {
        Self { main, sub: None }
    }

    pub const fn with_sub(main: u16, sub: u16) -> Self {
        Self {
            main,
            sub: Some(sub),
        }
    }

    pub fn same_main(self, other: DptId) -> bool {
        self.main == other.main
    }

    /// Payload size in bytes for the supported families.
    pub fn payload_len(self) -> Option<usize> {
        match self.main {
            1 | 5 => Some(1),
            9 => Some(2),
            14 => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for DptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sub {
            Some(sub) => write!(f, "DPT-{}-{}", self.main, sub),
            None => write!(f, "DPT-{}", self.main),
        }
    }
}

impl FromStr for DptId {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || WireError::Syntax {
            what: "datapoint type",
            input: s.to_string(),
        };
        let t = s.trim();
        let rest = t
            .strip_prefix("DPT-")
            .or_else(|| t.strip_prefix("DPST-"))
            .or_else(|| t.strip_prefix("dpt-"))
            .ok_or_else(syntax)?;
        let mut it = rest.splitn(2, ['-', '.']);
        let main: u16 = it.next().and_then(|m| m.parse().ok()).ok_or_else(syntax)?;
        if main == 0 {
            return Err(syntax());
        }
        let sub = match it.next() {
            Some(x) => Some(x.parse::<u16>().map_err(|_| syntax())?),
            None => None,
        };
        Ok(Self { main, sub })
    }
}

impl Serialize for DptId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DptId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A decoded datapoint value of one of the supported families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DptValue {
    Bool(bool),
    Unsigned8(u8),
    Float16(f64),
    Float32(f32),
}

impl DptValue {
    pub fn dpt(&self) -> DptId {
        match self {
            DptValue::Bool(_) => DptId::BOOL,
            DptValue::Unsigned8(_) => DptId::UNSIGNED8,
            DptValue::Float16(_) => DptId::FLOAT16,
            DptValue::Float32(_) => DptId::FLOAT32,
        }
    }
}

/// Reserved "invalid data" word of the 16-bit float family.
pub const FLOAT16_INVALID: u16 = 0x7FFF;

/// Encodes `0.01 · M · 2^E` with the smallest exponent whose 12-bit
/// two's-complement mantissa holds the rounded value.
pub fn encode_float16(value: f64) -> Result<u16, WireError> {
    if !value.is_finite() {
        return Err(WireError::Float16Overflow(value));
    }
    let scaled = value * 100.0;
    for exponent in 0..=15u16 {
        let mantissa = (scaled / f64::from(1u32 << exponent)).round();
        if (-2048.0..=2047.0).contains(&mantissa) {
            let m = mantissa as i32;
            let word = (((m as u16) & 0x0800) << 4) | (exponent << 11) | ((m as u16) & 0x07FF);
            if word == FLOAT16_INVALID {
                return Err(WireError::Float16Overflow(value));
            }
            return Ok(word);
        }
    }
    Err(WireError::Float16Overflow(value))
}

pub fn decode_float16(word: u16) -> Result<f64, WireError> {
    if word == FLOAT16_INVALID {
        return Err(WireError::DptValue {
            dpt: DptId::FLOAT16,
            reason: "invalid-data marker 0x7FFF".into(),
        });
    }
    let exponent = (word >> 11) & 0x0F;
    let low = i32::from(word & 0x07FF);
    let mantissa = if word & 0x8000 != 0 { low - 2048 } else { low };
    Ok(0.01 * f64::from(mantissa) * f64::from(1u32 << exponent))
}

pub fn encode_dpt(value: &DptValue) -> Result<Vec<u8>, WireError> {
    Ok(match *value {
        DptValue::Bool(b) => vec![u8::from(b)],
        DptValue::Unsigned8(v) => vec![v],
        DptValue::Float16(x) => encode_float16(x)?.to_be_bytes().to_vec(),
        DptValue::Float32(x) => x.to_be_bytes().to_vec(),
    })
}

pub fn decode_dpt(dpt: DptId, bytes: &[u8]) -> Result<DptValue, WireError> {
    let expected = dpt.payload_len().ok_or(WireError::UnsupportedDpt(dpt))?;
    if bytes.len() != expected {
        return Err(WireError::DptLength {
            dpt,
            len: bytes.len(),
        });
    }
    match dpt.main {
        1 => match bytes[0] {
            0 => Ok(DptValue::Bool(false)),
            1 => Ok(DptValue::Bool(true)),
            other => Err(WireError::DptValue {
                dpt,
                reason: format!("boolean byte {other:#04x}"),
            }),
        },
        5 => Ok(DptValue::Unsigned8(bytes[0])),
        9 => decode_float16(u16::from_be_bytes([bytes[0], bytes[1]])).map(DptValue::Float16),
        14 => Ok(DptValue::Float32(f32::from_be_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3],
        ]))),
        _ => Err(WireError::UnsupportedDpt(dpt)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    Group(GroupAddress),
    Individual(IndividualAddress),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Control {
    /// 0 (system) ..= 3 (low).
    pub priority: u8,
    pub repeated: bool,
}

pub const MAX_PAYLOAD: usize = 16;
const HEADER_LEN: usize = 6;
/// Header plus checksum, no payload.
pub const MIN_FRAME_LEN: usize = HEADER_LEN + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Telegram {
    pub control: Control,
    pub source: IndividualAddress,
    pub destination: Destination,
    pub payload: Vec<u8>,
}

impl Telegram {
    pub fn group_write(source: IndividualAddress, address: GroupAddress, payload: Vec<u8>) -> Self {
        Self {
            control: Control {
                priority: 3,
                repeated: false,
            },
            source,
            destination: Destination::Group(address),
            payload,
        }
    }

    /// A group telegram with no payload asks the bus for the address's value.
    pub fn group_read(source: IndividualAddress, address: GroupAddress) -> Self {
        Self::group_write(source, address, Vec::new())
    }

    pub fn group_address(&self) -> Option<GroupAddress> {
        match self.destination {
            Destination::Group(ga) => Some(ga),
            Destination::Individual(_) => None,
        }
    }

    pub fn is_read_request(&self) -> bool {
        self.payload.is_empty() && self.group_address().is_some()
    }
}

/// Complement of the XOR of `bytes`.
pub fn checksum(bytes: &[u8]) -> u8 {
    !bytes.iter().fold(0u8, |acc, b| acc ^ b)
}

pub fn encode_telegram(t: &Telegram) -> Result<Vec<u8>, WireError> {
    if t.payload.len() > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLong(t.payload.len()));
    }
    if t.control.priority > 3 {
        return Err(WireError::Range {
            field: "priority",
            value: i64::from(t.control.priority),
            max: 3,
        });
    }
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + t.payload.len());
    out.push((t.control.priority << 6) | (u8::from(t.control.repeated) << 5));
    out.extend_from_slice(&t.source.encode().to_be_bytes());
    let (dst, group_flag) = match t.destination {
        Destination::Group(ga) => (ga.raw(), 0x80),
        Destination::Individual(ia) => (ia.encode(), 0x00),
    };
    out.extend_from_slice(&dst.to_be_bytes());
    out.push(group_flag | t.payload.len() as u8);
    out.extend_from_slice(&t.payload);
    out.push(checksum(&out));
    Ok(out)
}

/// Decodes one frame. The checksum is verified before the header is
/// interpreted, so any single corrupted byte surfaces as an integrity error;
/// inputs too short to hold a frame are framing errors.
pub fn decode_telegram(bytes: &[u8]) -> Result<Telegram, WireError> {
    if bytes.len() < MIN_FRAME_LEN {
        return Err(WireError::Framing(format!(
            "{} bytes is shorter than the {MIN_FRAME_LEN}-byte minimum frame",
            bytes.len()
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 1);
    let expected = checksum(body);
    if expected != tail[0] {
        return Err(WireError::Integrity {
            expected,
            found: tail[0],
        });
    }
    let control = body[0];
    if control & 0x1F != 0 {
        return Err(WireError::Framing(format!(
            "reserved control bits set in {control:#04x}"
        )));
    }
    let flags = body[5];
    if flags & 0x60 != 0 {
        return Err(WireError::Framing(format!(
            "reserved flag bits set in {flags:#04x}"
        )));
    }
    let len = usize::from(flags & 0x1F);
    if len > MAX_PAYLOAD {
        return Err(WireError::Framing(format!("declared payload length {len}")));
    }
    if body.len() != HEADER_LEN + len {
        return Err(WireError::Framing(format!(
            "declared payload length {len}, found {}",
            body.len() - HEADER_LEN
        )));
    }
    let source = IndividualAddress::decode(u16::from_be_bytes([body[1], body[2]]));
    let dst = u16::from_be_bytes([body[3], body[4]]);
    let destination = if flags & 0x80 != 0 {
        Destination::Group(GroupAddress::from_raw(dst))
    } else {
        Destination::Individual(IndividualAddress::decode(dst))
    };
    Ok(Telegram {
        control: Control {
            priority: control >> 6,
            repeated: control & 0x20 != 0,
        },
        source,
        destination,
        payload: body[HEADER_LEN..].to_vec(),
    })
}
