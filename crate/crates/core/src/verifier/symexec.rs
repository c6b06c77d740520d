//! Exhaustive symbolic execution of iteration handlers.

use std::collections::{BTreeMap, BTreeSet};

use super::formula::{
    q_from_f64, q_from_i64, Formula, SymId, SymOrigin, SymStr, SymValue, SymbolTable,
};
use crate::lang::{ChannelMap, CmpOp, TExpr, TExprKind, TStmt, TypedProgram};
use crate::value::{Register, Value, ValueType};
use crate::wire::GroupAddress;

/// Every physical field and every register of every app, as symbolic
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct SymState {
    pub phys: BTreeMap<GroupAddress, SymValue>,
    pub apps: BTreeMap<String, BTreeMap<Register, SymValue>>,
}

impl SymState {
    /// Fresh symbols for the given addresses and apps.
    pub fn fresh(
        symbols: &mut SymbolTable,
        phys: &BTreeMap<GroupAddress, ValueType>,
        apps: &[&str],
    ) -> Self {
        let phys = phys
            .iter()
            .map(|(ga, ty)| {
                let id = symbols.fresh(*ty, SymOrigin::Phys(*ga));
                (*ga, SymValue::of_symbol(id, *ty))
            })
            .collect();
        let apps = apps
            .iter()
            .map(|app| {
                let regs = Register::all()
                    .map(|reg| {
                        let id = symbols.fresh(
                            reg.ty,
                            SymOrigin::Register {
                                app: app.to_string(),
                                reg,
                            },
                        );
                        (reg, SymValue::of_symbol(id, reg.ty))
                    })
                    .collect();
                (app.to_string(), regs)
            })
            .collect();
        Self { phys, apps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymCall {
    pub func: String,
    /// Symbol holding the result; `None` for calls erased as `-> none`.
    pub ret: Option<SymId>,
}

/// One complete path through a handler.
#[derive(Debug, Clone, PartialEq)]
pub struct SymPath {
    /// Conjunction of the branch conditions taken.
    pub condition: Formula,
    /// Postconditions of the unchecked calls made on this path.
    pub assumptions: Formula,
    pub calls: Vec<SymCall>,
    pub branches: Vec<bool>,
    pub writes: BTreeSet<GroupAddress>,
    pub state: SymState,
}

#[derive(Clone)]
struct Partial {
    conds: Vec<Formula>,
    assumptions: Vec<Formula>,
    calls: Vec<SymCall>,
    branches: Vec<bool>,
    writes: BTreeSet<GroupAddress>,
    state: SymState,
}

/// Evaluation context for one app.
pub struct Env<'a> {
    pub program: &'a TypedProgram,
    pub app: &'a str,
    pub channels: &'a ChannelMap,
}

impl Env<'_> {
    /// Symbolic value of an expression without unchecked calls, such as an
    /// invariant.
    pub fn eval_pure(&self, e: &TExpr, state: &SymState) -> SymValue {
        let mut scratch = SymbolTable::new();
        let mut p = Partial {
            conds: Vec::new(),
            assumptions: Vec::new(),
            calls: Vec::new(),
            branches: Vec::new(),
            writes: BTreeSet::new(),
            state: state.clone(),
        };
        let v = self.eval(e, &mut p, &mut scratch, None);
        debug_assert!(p.calls.is_empty(), "pure expression made a call");
        v
    }

    /// A postcondition with `__return__` bound to `ret`.
    pub fn eval_post(&self, post: &TExpr, ret: &SymValue) -> Formula {
        let mut scratch = SymbolTable::new();
        let mut p = Partial {
            conds: Vec::new(),
            assumptions: Vec::new(),
            calls: Vec::new(),
            branches: Vec::new(),
            writes: BTreeSet::new(),
            state: SymState {
                phys: BTreeMap::new(),
                apps: BTreeMap::new(),
            },
        };
        self.eval(post, &mut p, &mut scratch, Some(ret)).formula()
    }

    fn fresh_call(&self, func: usize, p: &mut Partial, symbols: &mut SymbolTable) -> Option<SymId> {
        let decl = &self.program.unchecked[func];
        let ty = decl.ret?;
        let seq = p.calls.iter().filter(|c| c.ret.is_some()).count();
        let id = symbols.fresh(
            ty,
            SymOrigin::Return {
                func: decl.name.clone(),
                seq,
            },
        );
        let ret = SymValue::of_symbol(id, ty);
        for post in &decl.posts {
            let f = self.eval(post, p, symbols, Some(&ret)).formula();
            p.assumptions.push(f);
        }
        Some(id)
    }

    fn eval(
        &self,
        e: &TExpr,
        p: &mut Partial,
        symbols: &mut SymbolTable,
        ret: Option<&SymValue>,
    ) -> SymValue {
        match &e.kind {
            TExprKind::Const(v) => SymValue::of_value(v),
            TExprKind::Reg(r) => p.state.apps[self.app][r].clone(),
            TExprKind::Read(ch) => {
                let ga = self.channels[ch];
                let v = p.state.phys[&ga].clone();
                match (e.ty, v) {
                    (ValueType::Real, SymValue::Num(l)) => SymValue::Num(l),
                    (_, v) => v,
                }
            }
            TExprKind::Return => ret.expect("__return__ outside a postcondition").clone(),
            TExprKind::Call { func, args } => {
                for a in args {
                    self.eval(a, p, symbols, ret);
                }
                let id = self.fresh_call(*func, p, symbols);
                p.calls.push(SymCall {
                    func: self.program.unchecked[*func].name.clone(),
                    ret: id,
                });
                SymValue::of_symbol(id.expect("typeck rejects valueless calls"), e.ty)
            }
            TExprKind::Not(a) => {
                SymValue::Bool(Formula::not(self.eval(a, p, symbols, ret).formula()))
            }
            TExprKind::And(a, b) | TExprKind::Or(a, b) => {
                let x = self.eval(a, p, symbols, ret).formula();
                let y = self.eval(b, p, symbols, ret).formula();
                SymValue::Bool(if matches!(e.kind, TExprKind::And(..)) {
                    Formula::and(x, y)
                } else {
                    Formula::or(x, y)
                })
            }
            TExprKind::Cmp(op, a, b) => {
                let x = self.eval(a, p, symbols, ret);
                let y = self.eval(b, p, symbols, ret);
                SymValue::Bool(compare(*op, x, y))
            }
            TExprKind::Add(a, b) => {
                let x = self.eval(a, p, symbols, ret).lin();
                let y = self.eval(b, p, symbols, ret).lin();
                SymValue::Num(x.add(&y))
            }
            TExprKind::Sub(a, b) => {
                let x = self.eval(a, p, symbols, ret).lin();
                let y = self.eval(b, p, symbols, ret).lin();
                SymValue::Num(x.sub(&y))
            }
            TExprKind::Neg(a) => SymValue::Num(self.eval(a, p, symbols, ret).lin().neg()),
            TExprKind::Scale(c, a) => {
                let k = match c {
                    Value::Int(i) => q_from_i64(*i),
                    Value::Real(r) => q_from_f64(*r),
                    other => unreachable!("non-numeric factor {other:?}"),
                };
                SymValue::Num(self.eval(a, p, symbols, ret).lin().scale(&k))
            }
        }
    }

    fn exec(
        &self,
        stmts: &[TStmt],
        mut paths: Vec<Partial>,
        symbols: &mut SymbolTable,
    ) -> Vec<Partial> {
        for s in stmts {
            let mut next = Vec::with_capacity(paths.len());
            for mut p in paths {
                match s {
                    TStmt::If {
                        cond,
                        then,
                        otherwise,
                    } => {
                        let c = self.eval(cond, &mut p, symbols, None).formula();
                        let mut yes = p.clone();
                        yes.conds.push(c.clone());
                        yes.branches.push(true);
                        let mut no = p;
                        no.conds.push(Formula::not(c));
                        no.branches.push(false);
                        next.extend(self.exec(then, vec![yes], symbols));
                        next.extend(self.exec(otherwise, vec![no], symbols));
                    }
                    TStmt::Assign { reg, value } => {
                        let v = self.eval(value, &mut p, symbols, None);
                        p.state
                            .apps
                            .get_mut(self.app)
                            .expect("app has registers")
                            .insert(*reg, v);
                        next.push(p);
                    }
                    TStmt::Write { channel, value } => {
                        let ga = self.channels[channel];
                        p.state
                            .phys
                            .insert(ga, SymValue::Bool(Formula::Const(*value)));
                        p.writes.insert(ga);
                        next.push(p);
                    }
                    TStmt::Call { func, args } => {
                        for a in args {
                            self.eval(a, &mut p, symbols, None);
                        }
                        let id = self.fresh_call(*func, &mut p, symbols);
                        p.calls.push(SymCall {
                            func: self.program.unchecked[*func].name.clone(),
                            ret: id,
                        });
                        next.push(p);
                    }
                }
            }
            paths = next;
        }
        paths
    }
}

fn compare(op: CmpOp, x: SymValue, y: SymValue) -> Formula {
    match (x, y) {
        (SymValue::Num(a), SymValue::Num(b)) => Formula::cmp(op, &a, &b),
        (SymValue::Bool(a), SymValue::Bool(b)) => {
            let same = Formula::iff(a, b);
            match op {
                CmpOp::Eq => same,
                CmpOp::Ne => Formula::not(same),
                _ => unreachable!("typeck rejects ordering on bools"),
            }
        }
        (SymValue::Str(a), SymValue::Str(b)) => {
            let same = match (a, b) {
                (SymStr::Lit(s), SymStr::Lit(t)) => Formula::Const(s == t),
                (SymStr::Sym(id), SymStr::Lit(s)) | (SymStr::Lit(s), SymStr::Sym(id)) => {
                    Formula::StrEq(id, s)
                }
                (SymStr::Sym(i), SymStr::Sym(j)) if i == j => Formula::Const(true),
                (SymStr::Sym(_), SymStr::Sym(_)) => {
                    unreachable!("typeck requires a literal side in string comparisons")
                }
            };
            match op {
                CmpOp::Eq => same,
                CmpOp::Ne => Formula::not(same),
                _ => unreachable!("typeck rejects ordering on strings"),
            }
        }
        (x, y) => unreachable!("ill-typed comparison {x:?} / {y:?}"),
    }
}

/// All paths of `program`'s iteration handler, run as `app` from `init`.
/// The path conditions are pairwise disjoint and cover every input.
pub fn symexec_iteration(
    env: &Env<'_>,
    init: &SymState,
    symbols: &mut SymbolTable,
) -> Vec<SymPath> {
    let start = Partial {
        conds: Vec::new(),
        assumptions: Vec::new(),
        calls: Vec::new(),
        branches: Vec::new(),
        writes: BTreeSet::new(),
        state: init.clone(),
    };
    env.exec(&env.program.iteration, vec![start], symbols)
        .into_iter()
        .map(|p| SymPath {
            condition: Formula::all(p.conds),
            assumptions: Formula::all(p.assumptions),
            calls: p.calls,
            branches: p.branches,
            writes: p.writes,
            state: p.state,
        })
        .collect()
}
