//! Symbols, linear terms and quantifier-free formulas over them.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::lang::CmpOp;
use crate::value::{Register, Value, ValueType};
use crate::wire::GroupAddress;

pub type Q = BigRational;
pub type SymId = usize;

/// Exact rational for a program literal or a concrete real.
pub fn q_from_f64(x: f64) -> Q {
    BigRational::from_float(x).expect("finite real")
}

pub fn q_from_i64(i: i64) -> Q {
    BigRational::from_integer(i.into())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SymOrigin {
    Phys(GroupAddress),
    Register {
        app: String,
        reg: Register,
    },
    /// Result of the `seq`-th value-returning unchecked call on a path.
    Return {
        func: String,
        seq: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub ty: ValueType,
    pub origin: SymOrigin,
}

impl Symbol {
    pub fn name(&self) -> String {
        match &self.origin {
            SymOrigin::Phys(ga) => ga.symbol_name(),
            SymOrigin::Register { app, reg } => format!("{app}.{reg}"),
            SymOrigin::Return { func, seq } => format!("{func}#{seq}"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    symbols: Vec<Symbol>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fresh(&mut self, ty: ValueType, origin: SymOrigin) -> SymId {
        self.symbols.push(Symbol { ty, origin });
        self.symbols.len() - 1
    }

    pub fn get(&self, id: SymId) -> &Symbol {
        &self.symbols[id]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymId, &Symbol)> {
        self.symbols.iter().enumerate()
    }

    pub fn is_int(&self, id: SymId) -> bool {
        self.symbols[id].ty == ValueType::Int
    }
}

/// `Σ coeff·sym + constant`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lin {
    pub terms: BTreeMap<SymId, Q>,
    pub constant: Q,
}

impl Lin {
    pub fn constant(c: Q) -> Self {
        Self {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(id: SymId) -> Self {
        Self {
            terms: BTreeMap::from([(id, Q::one())]),
            constant: Q::zero(),
        }
    }

    pub fn as_const(&self) -> Option<&Q> {
        self.terms.is_empty().then_some(&self.constant)
    }

    pub fn coeff(&self, id: SymId) -> Q {
        self.terms.get(&id).cloned().unwrap_or_else(Q::zero)
    }

    pub fn add(&self, other: &Lin) -> Lin {
        let mut out = self.clone();
        for (id, c) in &other.terms {
            let e = out.terms.entry(*id).or_insert_with(Q::zero);
            *e += c;
            if e.is_zero() {
                out.terms.remove(id);
            }
        }
        out.constant += &other.constant;
        out
    }

    pub fn neg(&self) -> Lin {
        self.scale(&-Q::one())
    }

    pub fn sub(&self, other: &Lin) -> Lin {
        self.add(&other.neg())
    }

    pub fn scale(&self, k: &Q) -> Lin {
        if k.is_zero() {
            return Lin::constant(Q::zero());
        }
        Lin {
            terms: self.terms.iter().map(|(id, c)| (*id, c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    /// Replaces `id` by `def`.
    pub fn substitute(&self, id: SymId, def: &Lin) -> Lin {
        match self.terms.get(&id) {
            None => self.clone(),
            Some(c) => {
                let mut rest = self.clone();
                rest.terms.remove(&id);
                rest.add(&def.scale(c))
            }
        }
    }

    pub fn eval(&self, nums: &BTreeMap<SymId, Q>) -> Q {
        let mut v = self.constant.clone();
        for (id, c) in &self.terms {
            if let Some(x) = nums.get(id) {
                v += c * x;
            }
        }
        v
    }
}

/// `lin REL 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinRel {
    Lt,
    Le,
    Eq,
}

impl LinRel {
    pub fn holds(self, v: &Q) -> bool {
        match self {
            LinRel::Lt => v.is_negative(),
            LinRel::Le => !v.is_positive(),
            LinRel::Eq => v.is_zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Formula {
    Const(bool),
    Bool(SymId),
    Cmp(Lin, LinRel),
    StrEq(SymId, String),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::all([a, b])
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::any([a, b])
    }

    pub fn all(items: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for f in items {
            match f {
                Formula::Const(true) => {}
                Formula::Const(false) => return Formula::Const(false),
                Formula::And(v) => out.extend(v),
                f => out.push(f),
            }
        }
        match out.len() {
            0 => Formula::Const(true),
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    pub fn any(items: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for f in items {
            match f {
                Formula::Const(false) => {}
                Formula::Const(true) => return Formula::Const(true),
                Formula::Or(v) => out.extend(v),
                f => out.push(f),
            }
        }
        match out.len() {
            0 => Formula::Const(false),
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::Const(b) => Formula::Const(!b),
            Formula::Not(inner) => *inner,
            f => Formula::Not(Box::new(f)),
        }
    }

    pub fn iff(a: Formula, b: Formula) -> Formula {
        match (&a, &b) {
            (Formula::Const(x), _) => {
                if *x {
                    b
                } else {
                    Formula::not(b)
                }
            }
            (_, Formula::Const(y)) => {
                if *y {
                    a
                } else {
                    Formula::not(a)
                }
            }
            _ => Formula::or(
                Formula::and(a.clone(), b.clone()),
                Formula::and(Formula::not(a), Formula::not(b)),
            ),
        }
    }

    /// `l op r` over numbers.
    pub fn cmp(op: CmpOp, l: &Lin, r: &Lin) -> Formula {
        let (lin, rel, negate) = match op {
            CmpOp::Lt => (l.sub(r), LinRel::Lt, false),
            CmpOp::Le => (l.sub(r), LinRel::Le, false),
            CmpOp::Gt => (r.sub(l), LinRel::Lt, false),
            CmpOp::Ge => (r.sub(l), LinRel::Le, false),
            CmpOp::Eq => (l.sub(r), LinRel::Eq, false),
            CmpOp::Ne => (l.sub(r), LinRel::Eq, true),
        };
        let f = match lin.as_const() {
            Some(c) => Formula::Const(rel.holds(c)),
            None => Formula::Cmp(lin, rel),
        };
        if negate {
            Formula::not(f)
        } else {
            f
        }
    }

    pub fn eval(&self, m: &Model) -> bool {
        match self {
            Formula::Const(b) => *b,
            Formula::Bool(id) => m.bool(*id),
            Formula::Cmp(l, rel) => rel.holds(&l.eval(&m.nums)),
            Formula::StrEq(id, s) => m.str(*id) == s,
            Formula::Not(f) => !f.eval(m),
            Formula::And(v) => v.iter().all(|f| f.eval(m)),
            Formula::Or(v) => v.iter().any(|f| f.eval(m)),
        }
    }

    /// String literals mentioned anywhere.
    pub fn collect_strings(&self, out: &mut Vec<String>) {
        match self {
            Formula::StrEq(_, s) => out.push(s.clone()),
            Formula::Not(f) => f.collect_strings(out),
            Formula::And(v) | Formula::Or(v) => v.iter().for_each(|f| f.collect_strings(out)),
            _ => {}
        }
    }
}

/// A full assignment to every symbol of a table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Model {
    pub bools: BTreeMap<SymId, bool>,
    pub nums: BTreeMap<SymId, Q>,
    pub strs: BTreeMap<SymId, String>,
}

impl Model {
    pub fn bool(&self, id: SymId) -> bool {
        self.bools.get(&id).copied().unwrap_or(false)
    }

    pub fn num(&self, id: SymId) -> Q {
        self.nums.get(&id).cloned().unwrap_or_else(Q::zero)
    }

    pub fn str(&self, id: SymId) -> &str {
        self.strs.get(&id).map_or("", String::as_str)
    }

    /// The concrete value of `id`; `None` if an integer does not fit i64.
    pub fn value(&self, symbols: &SymbolTable, id: SymId) -> Option<Value> {
        Some(match symbols.get(id).ty {
            ValueType::Bool => Value::Bool(self.bool(id)),
            ValueType::Int => Value::Int(self.num(id).to_integer().to_i64()?),
            ValueType::Real => Value::Real(self.num(id).to_f64()?),
            ValueType::Str => Value::Str(self.str(id).to_string()),
        })
    }
}

/// Symbolic value of a typed expression.
#[derive(Debug, Clone, PartialEq)]
pub enum SymValue {
    Bool(Formula),
    Num(Lin),
    Str(SymStr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymStr {
    Lit(String),
    Sym(SymId),
}

impl SymValue {
    pub fn of_symbol(id: SymId, ty: ValueType) -> SymValue {
        match ty {
            ValueType::Bool => SymValue::Bool(Formula::Bool(id)),
            ValueType::Int | ValueType::Real => SymValue::Num(Lin::var(id)),
            ValueType::Str => SymValue::Str(SymStr::Sym(id)),
        }
    }

    pub fn of_value(v: &Value) -> SymValue {
        match v {
            Value::Bool(b) => SymValue::Bool(Formula::Const(*b)),
            Value::Int(i) => SymValue::Num(Lin::constant(q_from_i64(*i))),
            Value::Real(r) => SymValue::Num(Lin::constant(q_from_f64(*r))),
            Value::Str(s) => SymValue::Str(SymStr::Lit(s.clone())),
        }
    }

    pub fn formula(self) -> Formula {
        match self {
            SymValue::Bool(f) => f,
            other => panic!("expected a boolean, got {other:?}"),
        }
    }

    pub fn lin(self) -> Lin {
        match self {
            SymValue::Num(l) => l,
            other => panic!("expected a number, got {other:?}"),
        }
    }

    /// Evaluates under `m`; numbers come back as exact rationals.
    pub fn eval(&self, m: &Model) -> ConcreteSym {
        match self {
            SymValue::Bool(f) => ConcreteSym::Bool(f.eval(m)),
            SymValue::Num(l) => ConcreteSym::Num(l.eval(&m.nums)),
            SymValue::Str(SymStr::Lit(s)) => ConcreteSym::Str(s.clone()),
            SymValue::Str(SymStr::Sym(id)) => ConcreteSym::Str(m.str(*id).to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConcreteSym {
    Bool(bool),
    Num(Q),
    Str(String),
}

impl ConcreteSym {
    pub fn of_value(v: &Value) -> ConcreteSym {
        match v {
            Value::Bool(b) => ConcreteSym::Bool(*b),
            Value::Int(i) => ConcreteSym::Num(q_from_i64(*i)),
            Value::Real(r) => ConcreteSym::Num(q_from_f64(*r)),
            Value::Str(s) => ConcreteSym::Str(s.clone()),
        }
    }
}

impl fmt::Display for Lin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (id, c) in &self.terms {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            if c.is_one() {
                write!(f, "s{id}")?;
            } else {
                write!(f, "{c}·s{id}")?;
            }
        }
        if first || !self.constant.is_zero() {
            if !first {
                f.write_str(" + ")?;
            }
            write!(f, "{}", self.constant)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lin_arithmetic() {
        let x = Lin::var(0);
        let y = Lin::var(1);
        let e = x
            .scale(&q_from_i64(2))
            .add(&y)
            .sub(&Lin::constant(q_from_i64(3)));
        let s = e.substitute(0, &y.add(&Lin::constant(q_from_i64(1))));
        assert_eq!(s.coeff(1), q_from_i64(3));
        assert_eq!(s.constant, q_from_i64(-1));
        assert!(x.sub(&x).as_const().is_some());
    }

    #[test]
    fn smart_constructors_fold() {
        assert_eq!(
            Formula::and(Formula::Const(true), Formula::Bool(0)),
            Formula::Bool(0)
        );
        assert_eq!(
            Formula::or(Formula::Const(true), Formula::Bool(0)),
            Formula::Const(true)
        );
        let two = Lin::constant(q_from_i64(2));
        assert_eq!(Formula::cmp(CmpOp::Ne, &two, &two), Formula::Const(false));
        assert_eq!(
            Formula::not(Formula::not(Formula::Bool(3))),
            Formula::Bool(3)
        );
    }

    #[test]
    fn literal_reals_are_exact() {
        assert_eq!(q_from_f64(20.5), Q::new(41.into(), 2.into()));
        assert_eq!(q_from_f64(0.1).to_f64(), Some(0.1));
    }
}
