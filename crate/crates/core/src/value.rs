//! Runtime values, app-state registers and the mirrored physical state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::wire::{DptId, DptValue, GroupAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Bool,
    Int,
    Real,
    Str,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Bool => "bool",
            ValueType::Int => "int",
            ValueType::Real => "real",
            ValueType::Str => "str",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::Bool(_) => ValueType::Bool,
            Value::Int(_) => ValueType::Int,
            Value::Real(_) => ValueType::Real,
            Value::Str(_) => ValueType::Str,
        }
    }

    pub fn default_of(ty: ValueType) -> Value {
        match ty {
            ValueType::Bool => Value::Bool(false),
            ValueType::Int => Value::Int(0),
            ValueType::Real => Value::Real(0.0),
            ValueType::Str => Value::Str(String::new()),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Numeric view; ints widen to reals.
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn to_dpt(&self, dpt: DptId) -> Option<DptValue> {
        match (dpt.main, self) {
            (1, Value::Bool(b)) => Some(DptValue::Bool(*b)),
            (5, Value::Int(i)) => u8::try_from(*i).ok().map(DptValue::Unsigned8),
            (9, v) => v.as_real().map(DptValue::Float16),
            (14, v) => v.as_real().map(|x| DptValue::Float32(x as f32)),
            _ => None,
        }
    }

    pub fn from_dpt(v: DptValue) -> Value {
        match v {
            DptValue::Bool(b) => Value::Bool(b),
            DptValue::Unsigned8(x) => Value::Int(i64::from(x)),
            DptValue::Float16(x) => Value::Real(x),
            DptValue::Float32(x) => Value::Real(f64::from(x)),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Real(r) => serde_json::Value::from(*r),
            Value::Str(s) => serde_json::Value::from(s.as_str()),
        }
    }

    /// Interprets a JSON scalar as a value of type `ty`.
    pub fn from_json(v: &serde_json::Value, ty: ValueType) -> Option<Value> {
        match ty {
            ValueType::Bool => v.as_bool().map(Value::Bool),
            ValueType::Int => v.as_i64().map(Value::Int),
            ValueType::Real => v.as_f64().map(Value::Real),
            ValueType::Str => v.as_str().map(|s| Value::Str(s.to_string())),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

pub const REGISTERS_PER_TYPE: usize = 4;

/// One of the sixteen app-state registers, e.g. `INT_0` or `STR_3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Register {
    pub ty: ValueType,
    pub index: u8,
}

impl Register {
    pub fn new(ty: ValueType, index: u8) -> Option<Self> {
        (usize::from(index) < REGISTERS_PER_TYPE).then_some(Self { ty, index })
    }

    pub fn all() -> impl Iterator<Item = Register> {
        [
            ValueType::Int,
            ValueType::Real,
            ValueType::Bool,
            ValueType::Str,
        ]
        .into_iter()
        .flat_map(|ty| (0..REGISTERS_PER_TYPE as u8).map(move |index| Register { ty, index }))
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.ty {
            ValueType::Int => "INT",
            ValueType::Real => "FLOAT",
            ValueType::Bool => "BOOL",
            ValueType::Str => "STR",
        };
        write!(f, "{prefix}_{}", self.index)
    }
}

impl FromStr for Register {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (prefix, idx) = s.rsplit_once('_').ok_or(())?;
        let ty = match prefix {
            "INT" => ValueType::Int,
            "FLOAT" => ValueType::Real,
            "BOOL" => ValueType::Bool,
            "STR" => ValueType::Str,
            _ => return Err(()),
        };
        if idx.len() != 1 {
            return Err(());
        }
        let index: u8 = idx.parse().map_err(|_| ())?;
        Register::new(ty, index).ok_or(())
    }
}

/// Per-app persistent storage: four registers of each of int, float, bool
/// and str, nothing else.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AppState {
    pub ints: [i64; REGISTERS_PER_TYPE],
    pub floats: [f64; REGISTERS_PER_TYPE],
    pub bools: [bool; REGISTERS_PER_TYPE],
    pub strs: [String; REGISTERS_PER_TYPE],
}

impl AppState {
    pub fn get(&self, r: Register) -> Value {
        let i = usize::from(r.index);
        match r.ty {
            ValueType::Int => Value::Int(self.ints[i]),
            ValueType::Real => Value::Real(self.floats[i]),
            ValueType::Bool => Value::Bool(self.bools[i]),
            ValueType::Str => Value::Str(self.strs[i].clone()),
        }
    }

    /// Stores `v`; returns false when its type does not fit the register.
    pub fn set(&mut self, r: Register, v: Value) -> bool {
        let i = usize::from(r.index);
        match (r.ty, v) {
            (ValueType::Int, Value::Int(x)) => self.ints[i] = x,
            (ValueType::Real, Value::Real(x)) => self.floats[i] = x,
            (ValueType::Real, Value::Int(x)) => self.floats[i] = x as f64,
            (ValueType::Bool, Value::Bool(x)) => self.bools[i] = x,
            (ValueType::Str, Value::Str(x)) => self.strs[i] = x,
            _ => return false,
        }
        true
    }
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for r in Register::all() {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{r}={}", self.get(r))?;
        }
        Ok(())
    }
}

/// Local mirror of the values of every compiled group address.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhysicalStateStore {
    values: BTreeMap<GroupAddress, Value>,
}

impl PhysicalStateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, ga: GroupAddress) -> Option<&Value> {
        self.values.get(&ga)
    }

    pub fn set(&mut self, ga: GroupAddress, v: Value) {
        self.values.insert(ga, v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (GroupAddress, &Value)> {
        self.values.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl FromIterator<(GroupAddress, Value)> for PhysicalStateStore {
    fn from_iter<T: IntoIterator<Item = (GroupAddress, Value)>>(iter: T) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_names() {
        let names: Vec<String> = Register::all().map(|r| r.to_string()).collect();
        assert_eq!(names.len(), 16);
        assert_eq!(names[0], "INT_0");
        assert_eq!(names[4], "FLOAT_0");
        assert_eq!(names[15], "STR_3");
        for n in &names {
            assert_eq!(&n.parse::<Register>().unwrap().to_string(), n);
        }
        assert!("INT_4".parse::<Register>().is_err());
        assert!("FLOAT_01".parse::<Register>().is_err());
        assert!("CHAR_0".parse::<Register>().is_err());
    }

    #[test]
    fn app_state_defaults() {
        let s = AppState::default();
        for r in Register::all() {
            assert_eq!(s.get(r), Value::default_of(r.ty));
        }
    }

    #[test]
    fn app_state_rejects_wrong_type() {
        let mut s = AppState::default();
        let r = Register::new(ValueType::Bool, 1).unwrap();
        assert!(!s.set(r, Value::Int(1)));
        assert!(s.set(r, Value::Bool(true)));
        assert_eq!(s.get(r), Value::Bool(true));
    }

    #[test]
    fn dpt_conversions() {
        assert_eq!(
            Value::Bool(true).to_dpt(DptId::BOOL),
            Some(DptValue::Bool(true))
        );
        assert_eq!(
            Value::Real(1.5).to_dpt(DptId::FLOAT16),
            Some(DptValue::Float16(1.5))
        );
        assert_eq!(Value::Bool(true).to_dpt(DptId::FLOAT16), None);
        assert_eq!(Value::Int(300).to_dpt(DptId::UNSIGNED8), None);
        assert_eq!(Value::from_dpt(DptValue::Unsigned8(7)), Value::Int(7));
    }
}
