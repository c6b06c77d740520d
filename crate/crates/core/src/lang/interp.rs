//! Concrete interpreter.
//!
//! Both operands of `and`/`or` are always evaluated, left to right, so the
//! order of unchecked calls does not depend on short-circuiting. The
//! symbolic executor follows the same rule.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::typeck::{ChannelId, TExpr, TExprKind, TStmt, TypedProgram};
use crate::value::{AppState, PhysicalStateStore, Value, ValueType};
use crate::wire::GroupAddress;

/// Where each of an app's channels lives on the bus.
pub type ChannelMap = BTreeMap<ChannelId, GroupAddress>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("no implementation registered for `{0}`")]
    MissingImpl(String),
    #[error("`{name}` returned {found}, declared {declared}")]
    ReturnType {
        name: String,
        declared: String,
        found: String,
    },
    #[error("`{name}` failed: {message}")]
    ImplFailed { name: String, message: String },
    #[error("integer overflow")]
    Overflow,
    #[error("channel {0} is not bound to a group address")]
    Unbound(ChannelId),
    #[error("no {expected} value stored for group address {address}")]
    Store {
        address: GroupAddress,
        expected: ValueType,
    },
}

/// The effectful result of an unchecked call; `None` for functions
/// declared `-> none`.
pub type UncheckedResult = Result<Option<Value>, String>;

/// Implementations of an app's unchecked functions.
pub trait UncheckedImpls {
    /// Returns `None` when no implementation named `name` exists.
    fn call(&mut self, name: &str, args: &[Value]) -> Option<UncheckedResult>;
}

pub type UncheckedFn = Box<dyn FnMut(&[Value]) -> UncheckedResult + Send>;

/// Name-indexed closures.
#[derive(Default)]
pub struct UncheckedRegistry {
    fns: BTreeMap<String, UncheckedFn>,
}

impl UncheckedRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        f: impl FnMut(&[Value]) -> UncheckedResult + Send + 'static,
    ) -> &mut Self {
        self.fns.insert(name.into(), Box::new(f));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name)
    }
}

impl std::fmt::Debug for UncheckedRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.fns.keys()).finish()
    }
}

impl UncheckedImpls for UncheckedRegistry {
    fn call(&mut self, name: &str, args: &[Value]) -> Option<UncheckedResult> {
        self.fns.get_mut(name).map(|f| f(args))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub name: String,
    pub args: Vec<Value>,
    pub result: Option<Value>,
}

/// Outcome of one run of an iteration handler.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub app_state: AppState,
    pub phys: PhysicalStateStore,
    pub calls: Vec<CallRecord>,
    /// Addresses explicitly written, even when the value did not change.
    pub writes: BTreeSet<GroupAddress>,
    /// Outcome of every branch taken, in order.
    pub branches: Vec<bool>,
}

struct Machine<'a> {
    tp: &'a TypedProgram,
    channels: &'a ChannelMap,
    impls: Option<&'a mut dyn UncheckedImpls>,
    app: AppState,
    phys: PhysicalStateStore,
    calls: Vec<CallRecord>,
    writes: BTreeSet<GroupAddress>,
    branches: Vec<bool>,
}

fn int_op(r: Option<i64>) -> Result<Value, ExecError> {
    r.map(Value::Int).ok_or(ExecError::Overflow)
}

impl Machine<'_> {
    fn address(&self, ch: &ChannelId) -> Result<GroupAddress, ExecError> {
        self.channels
            .get(ch)
            .copied()
            .ok_or_else(|| ExecError::Unbound(ch.clone()))
    }

    fn call(&mut self, func: usize, args: &[TExpr]) -> Result<Option<Value>, ExecError> {
        let args = args
            .iter()
            .map(|a| self.eval(a))
            .collect::<Result<Vec<_>, _>>()?;
        let decl = &self.tp.unchecked[func];
        let name = decl.name.clone();
        let impls = self
            .impls
            .as_deref_mut()
            .ok_or_else(|| ExecError::MissingImpl(name.clone()))?;
        let result = impls
            .call(&name, &args)
            .ok_or_else(|| ExecError::MissingImpl(name.clone()))?
            .map_err(|message| ExecError::ImplFailed {
                name: name.clone(),
                message,
            })?;
        let result = match (decl.ret, result) {
            (None, None) => None,
            (Some(ValueType::Real), Some(Value::Int(i))) => Some(Value::Real(i as f64)),
            (Some(t), Some(v)) if v.ty() == t => Some(v),
            (declared, found) => {
                return Err(ExecError::ReturnType {
                    name,
                    declared: declared.map_or("none".into(), |t| t.to_string()),
                    found: found.map_or("none".into(), |v| v.ty().to_string()),
                })
            }
        };
        self.calls.push(CallRecord {
            name,
            args,
            result: result.clone(),
        });
        Ok(result)
    }

    fn eval(&mut self, e: &TExpr) -> Result<Value, ExecError> {
        Ok(match &e.kind {
            TExprKind::Const(v) => v.clone(),
            TExprKind::Reg(r) => self.app.get(*r),
            TExprKind::Read(ch) => {
                let address = self.address(ch)?;
                match self.phys.get(address) {
                    Some(v) if v.ty() == e.ty => v.clone(),
                    Some(Value::Int(i)) if e.ty == ValueType::Real => Value::Real(*i as f64),
                    _ => {
                        return Err(ExecError::Store {
                            address,
                            expected: e.ty,
                        })
                    }
                }
            }
            TExprKind::Return => unreachable!("__return__ only occurs in postconditions"),
            TExprKind::Call { func, args } => self
                .call(*func, args)?
                .expect("typeck rejects valueless calls in expressions"),
            TExprKind::Not(a) => Value::Bool(!self.eval_bool(a)?),
            TExprKind::And(a, b) => {
                let (x, y) = (self.eval_bool(a)?, self.eval_bool(b)?);
                Value::Bool(x && y)
            }
            TExprKind::Or(a, b) => {
                let (x, y) = (self.eval_bool(a)?, self.eval_bool(b)?);
                Value::Bool(x || y)
            }
            TExprKind::Cmp(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                Value::Bool(match (&x, &y) {
                    (Value::Int(p), Value::Int(q)) => op.holds(p, q),
                    (Value::Bool(p), Value::Bool(q)) => op.holds(p, q),
                    (Value::Str(p), Value::Str(q)) => op.holds(p, q),
                    _ => op.holds(x.as_real().unwrap(), y.as_real().unwrap()),
                })
            }
            TExprKind::Add(a, b) | TExprKind::Sub(a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                let add = matches!(e.kind, TExprKind::Add(..));
                match (x, y) {
                    (Value::Int(p), Value::Int(q)) => int_op(if add {
                        p.checked_add(q)
                    } else {
                        p.checked_sub(q)
                    })?,
                    (x, y) => {
                        let (p, q) = (x.as_real().unwrap(), y.as_real().unwrap());
                        Value::Real(if add { p + q } else { p - q })
                    }
                }
            }
            TExprKind::Neg(a) => match self.eval(a)? {
                Value::Int(i) => int_op(i.checked_neg())?,
                v => Value::Real(-v.as_real().unwrap()),
            },
            TExprKind::Scale(c, a) => match (c, self.eval(a)?) {
                (Value::Int(k), Value::Int(i)) => int_op(k.checked_mul(i))?,
                (c, v) => Value::Real(c.as_real().unwrap() * v.as_real().unwrap()),
            },
        })
    }

    fn eval_bool(&mut self, e: &TExpr) -> Result<bool, ExecError> {
        Ok(self.eval(e)?.as_bool().expect("typeck guarantees bool"))
    }

    fn exec(&mut self, stmts: &[TStmt]) -> Result<(), ExecError> {
        for s in stmts {
            match s {
                TStmt::If {
                    cond,
                    then,
                    otherwise,
                } => {
                    let c = self.eval_bool(cond)?;
                    self.branches.push(c);
                    self.exec(if c { then } else { otherwise })?;
                }
                TStmt::Assign { reg, value } => {
                    let v = self.eval(value)?;
                    let stored = self.app.set(*reg, v);
                    debug_assert!(stored, "typeck guarantees register types");
                }
                TStmt::Write { channel, value } => {
                    let address = self.address(channel)?;
                    self.phys.set(address, Value::Bool(*value));
                    self.writes.insert(address);
                }
                TStmt::Call { func, args } => {
                    self.call(*func, args)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs the iteration handler on copies of `app` and `phys`.
pub fn interpret_iteration(
    tp: &TypedProgram,
    channels: &ChannelMap,
    app: &AppState,
    phys: &PhysicalStateStore,
    impls: &mut dyn UncheckedImpls,
) -> Result<Execution, ExecError> {
    let mut m = Machine {
        tp,
        channels,
        impls: Some(impls),
        app: app.clone(),
        phys: phys.clone(),
        calls: Vec::new(),
        writes: BTreeSet::new(),
        branches: Vec::new(),
    };
    m.exec(&tp.iteration)?;
    Ok(Execution {
        app_state: m.app,
        phys: m.phys,
        calls: m.calls,
        writes: m.writes,
        branches: m.branches,
    })
}

/// Evaluates the invariant. Fails only when a channel is unbound or the
/// store lacks a value of the right type.
pub fn evaluate_invariant(
    tp: &TypedProgram,
    channels: &ChannelMap,
    app: &AppState,
    phys: &PhysicalStateStore,
) -> Result<bool, ExecError> {
    let mut m = Machine {
        tp,
        channels,
        impls: None,
        app: app.clone(),
        phys: phys.clone(),
        calls: Vec::new(),
        writes: BTreeSet::new(),
        branches: Vec::new(),
    };
    m.eval_bool(&tp.invariant)
}
