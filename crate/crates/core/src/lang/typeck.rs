//! Type checking and resolution against an app prototype.
//!
//! The output is a resolved tree in which device reads name their bound
//! channel, register references are typed, constant arithmetic is folded
//! and every multiplication has a constant factor.

use std::collections::BTreeMap;
use std::fmt;

use super::syntax::{
    AssignOp, BinOp, Expr, ExprKind, Literal, Program, Span, Stmt, TypeName, UnOp,
};
use super::LangError;
use crate::app::{AppPrototype, DeviceKind};
use crate::value::{Register, Value, ValueType};

/// `INSTANCE.channel`, the key apps use to find their group addresses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelId {
    pub instance: String,
    pub channel: String,
}

impl ChannelId {
    pub fn new(instance: impl Into<String>, channel: impl Into<String>) -> Self {
        Self {
            instance: instance.into(),
            channel: channel.into(),
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.instance, self.channel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn holds<T: PartialOrd>(self, l: T, r: T) -> bool {
        match self {
            CmpOp::Eq => l == r,
            CmpOp::Ne => l != r,
            CmpOp::Lt => l < r,
            CmpOp::Le => l <= r,
            CmpOp::Gt => l > r,
            CmpOp::Ge => l >= r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TExprKind {
    Const(Value),
    Reg(Register),
    Read(ChannelId),
    /// `__return__` inside a postcondition.
    Return,
    Call {
        func: usize,
        args: Vec<TExpr>,
    },
    Not(Box<TExpr>),
    And(Box<TExpr>, Box<TExpr>),
    Or(Box<TExpr>, Box<TExpr>),
    /// Operands are both numeric, both bool, or str against a literal.
    Cmp(CmpOp, Box<TExpr>, Box<TExpr>),
    Add(Box<TExpr>, Box<TExpr>),
    Sub(Box<TExpr>, Box<TExpr>),
    Neg(Box<TExpr>),
    /// Constant factor (Int or Real) times a linear term.
    Scale(Value, Box<TExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TExpr {
    pub ty: ValueType,
    pub kind: TExprKind,
}

impl TExpr {
    fn constant(v: Value) -> Self {
        Self {
            ty: v.ty(),
            kind: TExprKind::Const(v),
        }
    }

    fn as_const(&self) -> Option<&Value> {
        match &self.kind {
            TExprKind::Const(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TStmt {
    If {
        cond: TExpr,
        then: Vec<TStmt>,
        otherwise: Vec<TStmt>,
    },
    Assign {
        reg: Register,
        value: TExpr,
    },
    Write {
        channel: ChannelId,
        value: bool,
    },
    Call {
        func: usize,
        args: Vec<TExpr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TUnchecked {
    pub name: String,
    pub params: Vec<ValueType>,
    /// `None` for functions called only for their effect.
    pub ret: Option<ValueType>,
    pub posts: Vec<TExpr>,
}

/// A program resolved against its prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedProgram {
    pub app: String,
    pub unchecked: Vec<TUnchecked>,
    pub invariant: TExpr,
    pub iteration: Vec<TStmt>,
    /// Every channel of every declared device, with its value type.
    pub channels: BTreeMap<ChannelId, ValueType>,
}

impl TypedProgram {
    pub fn unchecked_named(&self, name: &str) -> Option<&TUnchecked> {
        self.unchecked.iter().find(|u| u.name == name)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Invariant,
    Iteration,
    Post(Option<ValueType>),
}

struct Checker<'a> {
    proto: &'a AppPrototype,
    unchecked: Vec<TUnchecked>,
}

fn value_type(t: TypeName) -> Option<ValueType> {
    match t {
        TypeName::Bool => Some(ValueType::Bool),
        TypeName::Int => Some(ValueType::Int),
        TypeName::Real => Some(ValueType::Real),
        TypeName::Str => Some(ValueType::Str),
        TypeName::None => None,
    }
}

fn numeric(t: ValueType) -> bool {
    matches!(t, ValueType::Int | ValueType::Real)
}

fn mismatch(span: Span, msg: impl Into<String>) -> LangError {
    LangError::Type {
        span,
        message: msg.into(),
    }
}

fn fold_arith(op: BinOp, l: &Value, r: &Value) -> Option<Value> {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => match op {
            BinOp::Add => a.checked_add(*b),
            BinOp::Sub => a.checked_sub(*b),
            BinOp::Mul => a.checked_mul(*b),
            _ => None,
        }
        .map(Value::Int),
        _ => {
            let (a, b) = (l.as_real()?, r.as_real()?);
            Some(Value::Real(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                _ => return None,
            }))
        }
    }
}

impl Checker<'_> {
    fn device(&self, target: &str, span: Span) -> Result<DeviceKind, LangError> {
        self.proto
            .device(target)
            .map(|d| d.kind)
            .ok_or_else(|| LangError::Resolution {
                span,
                message: format!(
                    "`{target}` is not a device declared by app `{}`",
                    self.proto.name
                ),
            })
    }

    fn func(&self, name: &str, span: Span) -> Result<usize, LangError> {
        self.unchecked
            .iter()
            .position(|u| u.name == name)
            .ok_or_else(|| LangError::Resolution {
                span,
                message: format!("unknown function `{name}`"),
            })
    }

    fn call_args(
        &self,
        func: usize,
        args: &[Expr],
        ctx: Ctx,
        span: Span,
    ) -> Result<Vec<TExpr>, LangError> {
        let params = self.unchecked[func].params.clone();
        if params.len() != args.len() {
            return Err(mismatch(
                span,
                format!(
                    "`{}` takes {} argument(s), {} given",
                    self.unchecked[func].name,
                    params.len(),
                    args.len()
                ),
            ));
        }
        params
            .iter()
            .zip(args)
            .map(|(want, a)| {
                let t = self.expr(a, ctx)?;
                let ok = t.ty == *want || (*want == ValueType::Real && t.ty == ValueType::Int);
                if ok {
                    Ok(t)
                } else {
                    Err(mismatch(a.span, format!("expected {want}, found {}", t.ty)))
                }
            })
            .collect()
    }

    fn expr(&self, e: &Expr, ctx: Ctx) -> Result<TExpr, LangError> {
        let span = e.span;
        match &e.kind {
            ExprKind::Lit(l) => Ok(TExpr::constant(match l {
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Int(i) => Value::Int(*i),
                Literal::Real(r) => Value::Real(*r),
                Literal::Str(s) => Value::Str(s.clone()),
            })),
            ExprKind::Var(name) => match ctx {
                Ctx::Post(Some(ty)) if name == "__return__" => Ok(TExpr {
                    ty,
                    kind: TExprKind::Return,
                }),
                Ctx::Post(None) if name == "__return__" => Err(mismatch(
                    span,
                    "postconditions of a function returning none cannot use __return__",
                )),
                _ => Err(LangError::Resolution {
                    span,
                    message: format!("unknown name `{name}`"),
                }),
            },
            ExprKind::Register(name) => {
                if matches!(ctx, Ctx::Post(_)) {
                    return Err(mismatch(
                        span,
                        "postconditions may only mention __return__ and constants",
                    ));
                }
                let reg: Register = name.parse().map_err(|_| LangError::Resolution {
                    span,
                    message: format!("app_state has no register `{name}`"),
                })?;
                Ok(TExpr {
                    ty: reg.ty,
                    kind: TExprKind::Reg(reg),
                })
            }
            ExprKind::Method {
                target,
                method,
                args,
            } => {
                if matches!(ctx, Ctx::Post(_)) {
                    return Err(mismatch(
                        span,
                        "postconditions may only mention __return__ and constants",
                    ));
                }
                let kind = self.device(target, span)?;
                if !args.is_empty() {
                    return Err(mismatch(span, format!("`{method}` takes no arguments")));
                }
                match (method.as_str(), kind) {
                    ("on" | "off", DeviceKind::Switch) => Err(LangError::SideEffect {
                        span,
                        message: format!("`{target}.{method}()` writes a device and has no value"),
                    }),
                    ("is_on", DeviceKind::Binary | DeviceKind::Switch)
                    | ("read", DeviceKind::Temperature | DeviceKind::Humidity | DeviceKind::Co2) => {
                        let ch = kind.read_channel();
                        Ok(TExpr {
                            ty: ch.value_type,
                            kind: TExprKind::Read(ChannelId::new(target.clone(), ch.name)),
                        })
                    }
                    _ => Err(LangError::Resolution {
                        span,
                        message: format!("{kind} device `{target}` has no method `{method}`"),
                    }),
                }
            }
            ExprKind::Call { name, args } => {
                if ctx == Ctx::Invariant {
                    return Err(LangError::Purity {
                        span,
                        message: format!("invariant cannot use unchecked functions (`{name}`)"),
                    });
                }
                if matches!(ctx, Ctx::Post(_)) {
                    return Err(mismatch(span, "postconditions cannot call functions"));
                }
                let func = self.func(name, span)?;
                let ty = self.unchecked[func].ret.ok_or_else(|| {
                    mismatch(span, format!("`{name}` returns none and has no value"))
                })?;
                let args = self.call_args(func, args, ctx, span)?;
                Ok(TExpr {
                    ty,
                    kind: TExprKind::Call { func, args },
                })
            }
            ExprKind::Unary(UnOp::Not, inner) => {
                let t = self.expr(inner, ctx)?;
                if t.ty != ValueType::Bool {
                    return Err(mismatch(span, format!("`not` needs bool, found {}", t.ty)));
                }
                if let Some(Value::Bool(b)) = t.as_const() {
                    return Ok(TExpr::constant(Value::Bool(!b)));
                }
                Ok(TExpr {
                    ty: ValueType::Bool,
                    kind: TExprKind::Not(Box::new(t)),
                })
            }
            ExprKind::Unary(UnOp::Neg, inner) => {
                let t = self.expr(inner, ctx)?;
                match t.as_const() {
                    Some(Value::Int(i)) => {
                        let v = i
                            .checked_neg()
                            .ok_or_else(|| mismatch(span, "integer overflow"))?;
                        return Ok(TExpr::constant(Value::Int(v)));
                    }
                    Some(Value::Real(r)) => return Ok(TExpr::constant(Value::Real(-r))),
                    _ => {}
                }
                if !numeric(t.ty) {
                    return Err(mismatch(span, format!("cannot negate {}", t.ty)));
                }
                Ok(TExpr {
                    ty: t.ty,
                    kind: TExprKind::Neg(Box::new(t)),
                })
            }
            ExprKind::Binary(op, l, r) => self.binary(*op, l, r, ctx, span),
        }
    }

    fn binary(
        &self,
        op: BinOp,
        l: &Expr,
        r: &Expr,
        ctx: Ctx,
        span: Span,
    ) -> Result<TExpr, LangError> {
        let lt = self.expr(l, ctx)?;
        let rt = self.expr(r, ctx)?;
        match op {
            BinOp::And | BinOp::Or => {
                for t in [&lt, &rt] {
                    if t.ty != ValueType::Bool {
                        return Err(mismatch(span, format!("`{op}` needs bool, found {}", t.ty)));
                    }
                }
                let kind = if op == BinOp::And {
                    TExprKind::And(Box::new(lt), Box::new(rt))
                } else {
                    TExprKind::Or(Box::new(lt), Box::new(rt))
                };
                Ok(TExpr {
                    ty: ValueType::Bool,
                    kind,
                })
            }
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let cmp = match op {
                    BinOp::Eq => CmpOp::Eq,
                    BinOp::Ne => CmpOp::Ne,
                    BinOp::Lt => CmpOp::Lt,
                    BinOp::Le => CmpOp::Le,
                    BinOp::Gt => CmpOp::Gt,
                    _ => CmpOp::Ge,
                };
                let ordering = !matches!(cmp, CmpOp::Eq | CmpOp::Ne);
                let ok = if numeric(lt.ty) && numeric(rt.ty) {
                    true
                } else if lt.ty == ValueType::Bool && rt.ty == ValueType::Bool {
                    !ordering
                } else if lt.ty == ValueType::Str && rt.ty == ValueType::Str {
                    if ordering {
                        false
                    } else if lt.as_const().is_none() && rt.as_const().is_none() {
                        return Err(mismatch(
                            span,
                            "strings can only be compared against string literals",
                        ));
                    } else {
                        true
                    }
                } else {
                    false
                };
                if !ok {
                    return Err(mismatch(
                        span,
                        format!("cannot compare {} {op} {}", lt.ty, rt.ty),
                    ));
                }
                if let (Some(a), Some(b)) = (lt.as_const(), rt.as_const()) {
                    let v = match (a, b) {
                        (Value::Bool(x), Value::Bool(y)) => cmp.holds(x, y),
                        (Value::Str(x), Value::Str(y)) => cmp.holds(x, y),
                        (Value::Int(x), Value::Int(y)) => cmp.holds(x, y),
                        _ => cmp.holds(a.as_real().unwrap(), b.as_real().unwrap()),
                    };
                    return Ok(TExpr::constant(Value::Bool(v)));
                }
                Ok(TExpr {
                    ty: ValueType::Bool,
                    kind: TExprKind::Cmp(cmp, Box::new(lt), Box::new(rt)),
                })
            }
            BinOp::Add | BinOp::Sub | BinOp::Mul => {
                for t in [&lt, &rt] {
                    if !numeric(t.ty) {
                        return Err(mismatch(
                            span,
                            format!("`{op}` needs numbers, found {}", t.ty),
                        ));
                    }
                }
                let ty = if lt.ty == ValueType::Real || rt.ty == ValueType::Real {
                    ValueType::Real
                } else {
                    ValueType::Int
                };
                if let (Some(a), Some(b)) = (lt.as_const(), rt.as_const()) {
                    let v =
                        fold_arith(op, a, b).ok_or_else(|| mismatch(span, "integer overflow"))?;
                    return Ok(TExpr::constant(v));
                }
                let kind = match op {
                    BinOp::Add => TExprKind::Add(Box::new(lt), Box::new(rt)),
                    BinOp::Sub => TExprKind::Sub(Box::new(lt), Box::new(rt)),
                    _ => match (lt.as_const().cloned(), rt.as_const().cloned()) {
                        (Some(c), _) => TExprKind::Scale(c, Box::new(rt)),
                        (_, Some(c)) => TExprKind::Scale(c, Box::new(lt)),
                        _ => {
                            return Err(LangError::Linearity {
                                span,
                                message: "multiplication needs a constant factor".into(),
                            })
                        }
                    },
                };
                Ok(TExpr { ty, kind })
            }
        }
    }

    fn stmts(&self, stmts: &[Stmt]) -> Result<Vec<TStmt>, LangError> {
        stmts.iter().map(|s| self.stmt(s)).collect()
    }

    fn stmt(&self, s: &Stmt) -> Result<TStmt, LangError> {
        match s {
            Stmt::If {
                branches,
                otherwise,
                ..
            } => {
                let mut tail = match otherwise {
                    Some(b) => self.stmts(b)?,
                    None => Vec::new(),
                };
                for (cond, body) in branches.iter().rev() {
                    let c = self.expr(cond, Ctx::Iteration)?;
                    if c.ty != ValueType::Bool {
                        return Err(mismatch(cond.span, format!("condition has type {}", c.ty)));
                    }
                    tail = vec![TStmt::If {
                        cond: c,
                        then: self.stmts(body)?,
                        otherwise: tail,
                    }];
                }
                Ok(tail.pop().expect("at least one branch"))
            }
            Stmt::Assign {
                register,
                op,
                value,
                span,
            } => {
                let reg: Register = register.parse().map_err(|_| LangError::Resolution {
                    span: *span,
                    message: format!("app_state has no register `{register}`"),
                })?;
                let v = self.expr(value, Ctx::Iteration)?;
                let value = match op {
                    AssignOp::Set => v,
                    AssignOp::Add | AssignOp::Sub => {
                        if !numeric(reg.ty) || !numeric(v.ty) {
                            return Err(mismatch(
                                *span,
                                format!("compound assignment needs numbers, found {}", reg.ty),
                            ));
                        }
                        let ty = if reg.ty == ValueType::Real || v.ty == ValueType::Real {
                            ValueType::Real
                        } else {
                            ValueType::Int
                        };
                        let cur = Box::new(TExpr {
                            ty: reg.ty,
                            kind: TExprKind::Reg(reg),
                        });
                        TExpr {
                            ty,
                            kind: if *op == AssignOp::Add {
                                TExprKind::Add(cur, Box::new(v))
                            } else {
                                TExprKind::Sub(cur, Box::new(v))
                            },
                        }
                    }
                };
                let fits =
                    value.ty == reg.ty || (reg.ty == ValueType::Real && value.ty == ValueType::Int);
                if !fits {
                    return Err(mismatch(
                        *span,
                        format!("cannot store {} in {} register {reg}", value.ty, reg.ty),
                    ));
                }
                Ok(TStmt::Assign { reg, value })
            }
            Stmt::Expr(e) => match &e.kind {
                ExprKind::Method {
                    target,
                    method,
                    args,
                } if method == "on" || method == "off" => {
                    let kind = self.device(target, e.span)?;
                    if kind != DeviceKind::Switch || !args.is_empty() {
                        return Err(LangError::Resolution {
                            span: e.span,
                            message: format!("{kind} device `{target}` has no method `{method}`"),
                        });
                    }
                    Ok(TStmt::Write {
                        channel: ChannelId::new(target.clone(), kind.read_channel().name),
                        value: method == "on",
                    })
                }
                ExprKind::Call { name, args } => {
                    let func = self.func(name, e.span)?;
                    let args = self.call_args(func, args, Ctx::Iteration, e.span)?;
                    Ok(TStmt::Call { func, args })
                }
                _ => Err(mismatch(e.span, "expression has no effect")),
            },
        }
    }
}

/// Resolves `program` against `proto` and checks the invariant's purity,
/// typing and linearity.
pub fn typecheck(program: &Program, proto: &AppPrototype) -> Result<TypedProgram, LangError> {
    for line in &program.devices {
        match proto.device(&line.instance) {
            Some(d) if d.kind.type_name() == line.kind => {}
            Some(d) => {
                return Err(LangError::Resolution {
                    span: line.span,
                    message: format!(
                        "device `{}` is declared as {} but the prototype says {}",
                        line.instance, line.kind, d.kind
                    ),
                })
            }
            None => {
                return Err(LangError::Resolution {
                    span: line.span,
                    message: format!("device `{}` is not in the prototype", line.instance),
                })
            }
        }
    }

    let mut checker = Checker {
        proto,
        unchecked: Vec::new(),
    };
    for decl in &program.unchecked {
        if checker.unchecked.iter().any(|u| u.name == decl.name) {
            return Err(LangError::Resolution {
                span: decl.span,
                message: format!("`{}` is declared twice", decl.name),
            });
        }
        let params = decl
            .params
            .iter()
            .map(|(p, t)| {
                value_type(*t)
                    .ok_or_else(|| mismatch(decl.span, format!("parameter `{p}` cannot be none")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        checker.unchecked.push(TUnchecked {
            name: decl.name.clone(),
            params,
            ret: value_type(decl.ret),
            posts: Vec::new(),
        });
    }
    for (i, decl) in program.unchecked.iter().enumerate() {
        let ret = checker.unchecked[i].ret;
        let posts = decl
            .posts
            .iter()
            .map(|p| {
                let t = checker.expr(p, Ctx::Post(ret))?;
                if t.ty != ValueType::Bool {
                    return Err(mismatch(p.span, "postcondition must be boolean"));
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>, _>>()?;
        checker.unchecked[i].posts = posts;
    }

    let invariant = checker.expr(&program.invariant, Ctx::Invariant)?;
    if invariant.ty != ValueType::Bool {
        return Err(mismatch(
            program.invariant.span,
            format!("invariant must be boolean, found {}", invariant.ty),
        ));
    }
    let iteration = checker.stmts(&program.iteration)?;

    let channels = proto
        .devices
        .iter()
        .flat_map(|d| {
            d.kind
                .channels()
                .iter()
                .map(move |c| (ChannelId::new(d.instance(), c.name), c.value_type))
        })
        .collect();

    Ok(TypedProgram {
        app: proto.name.clone(),
        unchecked: checker.unchecked,
        invariant,
        iteration,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::super::syntax::parse_program;
    use super::*;

    fn proto(devices: &[(&str, &str)]) -> AppPrototype {
        let devs: Vec<String> = devices
            .iter()
            .map(|(n, k)| format!(r#"{{"name":"{n}","deviceType":"{k}"}}"#))
            .collect();
        AppPrototype::from_json(
            "app",
            &format!(
                r#"{{"permissionLevel":"notPrivileged","timer":0,"files":[],"devices":[{}]}}"#,
                devs.join(",")
            ),
        )
        .unwrap()
    }

    fn check(src: &str) -> Result<TypedProgram, LangError> {
        let p = proto(&[
            ("binary_sensor", "binary"),
            ("switch", "switch"),
            ("temp", "temperature"),
        ]);
        typecheck(&parse_program(src)?, &p)
    }

    #[test]
    fn paper_example_typechecks() {
        let p = proto(&[("binary_sensor", "binary"), ("switch", "switch")]);
        let tp = typecheck(
            &parse_program(super::super::syntax::tests::PAPER_EXAMPLE).unwrap(),
            &p,
        )
        .unwrap();
        assert_eq!(tp.iteration.len(), 1);
        assert_eq!(tp.channels.len(), 2);
        assert!(tp
            .channels
            .contains_key(&ChannelId::new("BINARY_SENSOR", "state")));
    }

    #[test]
    fn invariant_cannot_write_devices() {
        assert!(matches!(
            check("invariant: SWITCH.on() iteration: {}"),
            Err(LangError::SideEffect { .. })
        ));
    }

    #[test]
    fn invariant_cannot_call_unchecked() {
        assert!(matches!(
            check("fn unchecked_get() -> bool; invariant: unchecked_get() iteration: {}"),
            Err(LangError::Purity { .. })
        ));
    }

    #[test]
    fn resolution_errors() {
        assert!(matches!(
            check("invariant: LAMP.is_on() iteration: {}"),
            Err(LangError::Resolution { .. })
        ));
        assert!(matches!(
            check("invariant: TEMP.is_on() iteration: {}"),
            Err(LangError::Resolution { .. })
        ));
        assert!(matches!(
            check("invariant: true iteration: { BINARY_SENSOR.on(); }"),
            Err(LangError::Resolution { .. })
        ));
        assert!(matches!(
            check("invariant: app_state.INT_9 == 0 iteration: {}"),
            Err(LangError::Resolution { .. })
        ));
        assert!(matches!(
            check("invariant: true iteration: { unchecked_x(); }"),
            Err(LangError::Resolution { .. })
        ));
        assert!(matches!(
            check("device LAMP: switch; invariant: true iteration: {}"),
            Err(LangError::Resolution { .. })
        ));
        assert!(matches!(
            check("device SWITCH: binary; invariant: true iteration: {}"),
            Err(LangError::Resolution { .. })
        ));
    }

    #[test]
    fn nonlinear_arithmetic_is_rejected() {
        assert!(matches!(
            check("invariant: app_state.INT_0 * app_state.INT_1 > 0 iteration: {}"),
            Err(LangError::Linearity { .. })
        ));
        let tp =
            check("invariant: 2 * app_state.INT_0 + (3 - 1) * TEMP.read() > 0.5 iteration: {}")
                .unwrap();
        assert_eq!(tp.invariant.ty, ValueType::Bool);
    }

    #[test]
    fn type_errors() {
        for src in [
            "invariant: app_state.INT_0 iteration: {}",
            "invariant: app_state.BOOL_0 < true iteration: {}",
            "invariant: app_state.STR_0 == app_state.STR_1 iteration: {}",
            "invariant: app_state.STR_0 == 1 iteration: {}",
            "invariant: true iteration: { app_state.INT_0 = 1.5 }",
            "invariant: true iteration: { app_state.BOOL_0 += 1 }",
            "invariant: true iteration: { if app_state.INT_0 { } }",
            "fn unchecked_f() -> none; invariant: true iteration: { app_state.INT_0 = unchecked_f() }",
            "fn unchecked_f(x: int) -> int; invariant: true iteration: { unchecked_f(); }",
            "fn unchecked_f() -> int { post: __return__ } invariant: true iteration: {}",
            "fn unchecked_f() -> none { post: __return__ > 1 } invariant: true iteration: {}",
            "fn unchecked_f() -> int { post: app_state.INT_0 > 1 } invariant: true iteration: {}",
        ] {
            assert!(check(src).is_err(), "{src}");
        }
    }

    #[test]
    fn elif_desugars_to_nested_if() {
        let tp = check(
            "invariant: true iteration: {
                if app_state.INT_0 > 0 { SWITCH.on() } elif app_state.INT_0 < 0 { SWITCH.off() }
                app_state.FLOAT_0 += 1
                app_state.STR_0 = \"x\"
            }",
        )
        .unwrap();
        assert_eq!(tp.iteration.len(), 3);
        match &tp.iteration[0] {
            TStmt::If { otherwise, .. } => {
                assert!(
                    matches!(otherwise.as_slice(), [TStmt::If { otherwise, .. }] if otherwise.is_empty())
                )
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constants_fold() {
        let tp = check("invariant: 1 + 2 == 3 and not false iteration: {}").unwrap();
        assert!(matches!(tp.invariant.kind, TExprKind::And(_, _)));
        let tp = check("invariant: 1 + 2 == 3 iteration: {}").unwrap();
        assert_eq!(tp.invariant.kind, TExprKind::Const(Value::Bool(true)));
    }
}
