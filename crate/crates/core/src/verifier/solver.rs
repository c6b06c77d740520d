//! Decision procedure for path conditions.
//!
//! Boolean structure is handled by a tableau that splits on disjunctions.
//! Each branch collects literals: boolean symbols, string (dis)equalities
//! against literals, and linear constraints. Linear constraints are decided
//! by Fourier-Motzkin elimination over the rationals with strict bounds,
//! followed by branch and bound for integer symbols. Disequalities are
//! split lazily, only when the candidate model hits them.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use super::formula::{Formula, Lin, LinRel, Model, SymId, SymbolTable, Q};
use crate::value::ValueType;

/// Branch-and-bound splits allowed per integer symbol.
pub const MAX_SPLITS_PER_SYMBOL: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("branch and bound gave up on symbol s{0} after {MAX_SPLITS_PER_SYMBOL} splits")]
    SplitLimit(SymId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveResult {
    Sat(Model),
    Unsat,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }

    pub fn model(self) -> Option<Model> {
        match self {
            SolveResult::Sat(m) => Some(m),
            SolveResult::Unsat => None,
        }
    }
}

/// Decides `f`. A satisfying model assigns every symbol of `symbols`.
pub fn solve(f: &Formula, symbols: &SymbolTable) -> Result<SolveResult, SolverError> {
    let mut literals = Vec::new();
    f.collect_strings(&mut literals);
    let s = Solver {
        symbols,
        literals: literals.into_iter().collect(),
    };
    Ok(match s.search(vec![(f, true)], Lits::default())? {
        Some(m) => SolveResult::Sat(m),
        None => SolveResult::Unsat,
    })
}

#[derive(Debug, Clone, Default)]
struct Lits {
    bools: BTreeMap<SymId, bool>,
    cons: Vec<(Lin, LinRel)>,
    nes: Vec<Lin>,
    str_eq: BTreeMap<SymId, String>,
    str_ne: BTreeMap<SymId, BTreeSet<String>>,
    checked: usize,
}

struct Solver<'a> {
    symbols: &'a SymbolTable,
    literals: BTreeSet<String>,
}

impl Solver<'_> {
    fn search(
        &self,
        mut todo: Vec<(&Formula, bool)>,
        mut lits: Lits,
    ) -> Result<Option<Model>, SolverError> {
        while let Some((f, pol)) = todo.pop() {
            match f {
                Formula::Const(b) => {
                    if *b != pol {
                        return Ok(None);
                    }
                }
                Formula::Bool(id) => {
                    if *lits.bools.entry(*id).or_insert(pol) != pol {
                        return Ok(None);
                    }
                }
                Formula::StrEq(id, s) => {
                    if pol {
                        let clash = lits.str_eq.get(id).is_some_and(|t| t != s)
                            || lits.str_ne.get(id).is_some_and(|ne| ne.contains(s));
                        if clash {
                            return Ok(None);
                        }
                        lits.str_eq.insert(*id, s.clone());
                    } else {
                        if lits.str_eq.get(id) == Some(s) {
                            return Ok(None);
                        }
                        lits.str_ne.entry(*id).or_default().insert(s.clone());
                    }
                }
                Formula::Cmp(l, rel) => match (pol, rel) {
                    (true, r) => lits.cons.push((l.clone(), *r)),
                    (false, LinRel::Lt) => lits.cons.push((l.neg(), LinRel::Le)),
                    (false, LinRel::Le) => lits.cons.push((l.neg(), LinRel::Lt)),
                    (false, LinRel::Eq) => lits.nes.push(l.clone()),
                },
                Formula::Not(g) => todo.push((g, !pol)),
                Formula::And(v) if pol => todo.extend(v.iter().map(|g| (g, true))),
                Formula::Or(v) if !pol => todo.extend(v.iter().map(|g| (g, false))),
                Formula::And(v) | Formula::Or(v) => {
                    if lits.cons.len() > lits.checked {
                        lits.checked = lits.cons.len();
                        if fourier_motzkin(&lits.cons, self.symbols).is_none() {
                            return Ok(None);
                        }
                    }
                    for g in v {
                        let mut t = todo.clone();
                        t.push((g, pol));
                        if let Some(m) = self.search(t, lits.clone())? {
                            return Ok(Some(m));
                        }
                    }
                    return Ok(None);
                }
            }
        }
        self.theory(&lits)
    }

    fn theory(&self, lits: &Lits) -> Result<Option<Model>, SolverError> {
        let mut splits = BTreeMap::new();
        let Some(nums) = arith(lits.cons.clone(), &lits.nes, self.symbols, &mut splits)? else {
            return Ok(None);
        };
        let mut m = Model {
            bools: lits.bools.clone(),
            nums,
            strs: lits.str_eq.clone(),
        };
        for (id, ne) in &lits.str_ne {
            if m.strs.contains_key(id) {
                continue;
            }
            let witness = if ne.contains("") {
                (0..)
                    .map(|i| format!("other{i}"))
                    .find(|w| !ne.contains(w) && !self.literals.contains(w))
                    .unwrap()
            } else {
                String::new()
            };
            m.strs.insert(*id, witness);
        }
        for (id, sym) in self.symbols.iter() {
            match sym.ty {
                ValueType::Bool => {
                    m.bools.entry(id).or_insert(false);
                }
                ValueType::Int | ValueType::Real => {
                    m.nums.entry(id).or_insert_with(Q::zero);
                }
                ValueType::Str => {
                    m.strs.entry(id).or_default();
                }
            }
        }
        Ok(Some(m))
    }
}

fn int_only(l: &Lin, symbols: &SymbolTable) -> bool {
    l.terms.keys().all(|id| symbols.is_int(*id))
}

/// Strengthens a constraint over integer symbols to its integer hull:
/// integral coefficients with gcd 1 and a rounded constant.
fn tighten(l: &Lin, rel: LinRel) -> Option<(Lin, LinRel)> {
    let mut den = BigInt::one();
    for c in l.terms.values().chain(std::iter::once(&l.constant)) {
        den = den.lcm(c.denom());
    }
    let scaled = l.scale(&Q::from_integer(den));
    let g = scaled
        .terms
        .values()
        .fold(BigInt::zero(), |g, c| g.gcd(c.numer()));
    if g.is_zero() {
        return Some((scaled, rel));
    }
    let mut k = scaled.constant.to_integer();
    if rel == LinRel::Lt {
        k += 1;
    }
    let out_rel = if rel == LinRel::Eq {
        if !k.is_multiple_of(&g) {
            return None;
        }
        LinRel::Eq
    } else {
        LinRel::Le
    };
    let terms = scaled
        .terms
        .iter()
        .map(|(id, c)| (*id, Q::from_integer(c.numer() / &g)))
        .collect();
    Some((
        Lin {
            terms,
            constant: Q::from_integer(k.div_ceil(&g)),
        },
        out_rel,
    ))
}

fn arith(
    cons: Vec<(Lin, LinRel)>,
    nes: &[Lin],
    symbols: &SymbolTable,
    splits: &mut BTreeMap<SymId, u32>,
) -> Result<Option<BTreeMap<SymId, Q>>, SolverError> {
    let mut work = Vec::with_capacity(cons.len());
    for (l, rel) in &cons {
        if int_only(l, symbols) {
            match tighten(l, *rel) {
                Some(c) => work.push(c),
                None => return Ok(None),
            }
        } else {
            work.push((l.clone(), *rel));
        }
    }
    let Some(model) = fourier_motzkin(&work, symbols) else {
        return Ok(None);
    };
    if let Some((id, v)) = model
        .iter()
        .find(|(id, v)| symbols.is_int(**id) && !v.is_integer())
    {
        let n = splits.entry(*id).or_insert(0);
        *n += 1;
        if *n > MAX_SPLITS_PER_SYMBOL {
            return Err(SolverError::SplitLimit(*id));
        }
        let x = Lin::var(*id);
        let below = x.sub(&Lin::constant(v.floor()));
        let above = Lin::constant(v.ceil()).sub(&x);
        for extra in [below, above] {
            let mut c = cons.clone();
            c.push((extra, LinRel::Le));
            if let Some(m) = arith(c, nes, symbols, splits)? {
                return Ok(Some(m));
            }
        }
        return Ok(None);
    }
    if let Some(i) = nes.iter().position(|l| l.eval(&model).is_zero()) {
        let rest: Vec<Lin> = nes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, l)| l.clone())
            .collect();
        for side in [nes[i].clone(), nes[i].neg()] {
            let mut c = cons.clone();
            c.push((side, LinRel::Lt));
            if let Some(m) = arith(c, &rest, symbols, splits)? {
                return Ok(Some(m));
            }
        }
        return Ok(None);
    }
    Ok(Some(model))
}

enum Stage {
    Subst(SymId, Lin),
    Bounds(SymId, Vec<(Lin, LinRel)>),
}

/// Drops trivially true constraints, scales the rest to a canonical form
/// and deduplicates. `None` if a constant constraint is false.
fn normalize(cons: Vec<(Lin, LinRel)>) -> Option<Vec<(Lin, LinRel)>> {
    let mut out = BTreeSet::new();
    for (l, rel) in cons {
        if let Some(c) = l.as_const() {
            if !rel.holds(c) {
                return None;
            }
            continue;
        }
        let lead = l.terms.values().next().unwrap().clone();
        let k = if rel == LinRel::Eq { lead } else { lead.abs() };
        out.insert((l.scale(&(Q::one() / k)), rel));
    }
    Some(out.into_iter().collect())
}

/// Rational relaxation: a model for `cons` over the rationals, or `None`.
/// Values are chosen to be small, integral where possible, and otherwise
/// dyadic, so they survive conversion to `f64`.
fn fourier_motzkin(cons: &[(Lin, LinRel)], symbols: &SymbolTable) -> Option<BTreeMap<SymId, Q>> {
    let mut cur = normalize(cons.to_vec())?;
    let vars: BTreeSet<SymId> = cur
        .iter()
        .flat_map(|(l, _)| l.terms.keys().copied())
        .collect();
    let mut stages = Vec::with_capacity(vars.len());
    for v in vars {
        if let Some(pos) = cur
            .iter()
            .position(|(l, r)| *r == LinRel::Eq && l.terms.contains_key(&v))
        {
            let (l, _) = cur.remove(pos);
            let a = l.coeff(v);
            let mut rest = l;
            rest.terms.remove(&v);
            let def = rest.scale(&(-Q::one() / a));
            cur = cur
                .into_iter()
                .map(|(l, r)| (l.substitute(v, &def), r))
                .collect();
            stages.push(Stage::Subst(v, def));
        } else {
            let (with, without): (Vec<_>, Vec<_>) =
                cur.into_iter().partition(|(l, _)| l.terms.contains_key(&v));
            let mut next = without;
            for (u, ur) in with.iter().filter(|(l, _)| l.coeff(v).is_positive()) {
                for (lo, lr) in with.iter().filter(|(l, _)| l.coeff(v).is_negative()) {
                    let a = u.coeff(v);
                    let b = -lo.coeff(v);
                    let combined = u.scale(&b).add(&lo.scale(&a));
                    let rel = if *ur == LinRel::Lt || *lr == LinRel::Lt {
                        LinRel::Lt
                    } else {
                        LinRel::Le
                    };
                    next.push((combined, rel));
                }
            }
            cur = next;
            stages.push(Stage::Bounds(v, with));
        }
        cur = normalize(cur)?;
    }

    let mut model = BTreeMap::new();
    for stage in stages.into_iter().rev() {
        match stage {
            Stage::Subst(v, def) => {
                let x = def.eval(&model);
                model.insert(v, x);
            }
            Stage::Bounds(v, cs) => {
                let mut lo: Option<(Q, bool)> = None;
                let mut hi: Option<(Q, bool)> = None;
                for (l, rel) in cs {
                    let a = l.coeff(v);
                    let mut rest = l;
                    rest.terms.remove(&v);
                    let bound = -rest.eval(&model) / &a;
                    let strict = rel == LinRel::Lt;
                    if a.is_positive() {
                        let tighter = match &hi {
                            None => true,
                            Some((h, hs)) => bound < *h || (bound == *h && strict && !hs),
                        };
                        if tighter {
                            hi = Some((bound, strict));
                        }
                    } else {
                        let tighter = match &lo {
                            None => true,
                            Some((l, ls)) => bound > *l || (bound == *l && strict && !ls),
                        };
                        if tighter {
                            lo = Some((bound, strict));
                        }
                    }
                }
                model.insert(v, pick(lo, hi, symbols.is_int(v)));
            }
        }
    }
    Some(model)
}

fn pick(lo: Option<(Q, bool)>, hi: Option<(Q, bool)>, _is_int: bool) -> Q {
    let lo_int = lo
        .as_ref()
        .map(|(l, s)| if *s { l.floor() + Q::one() } else { l.ceil() });
    let hi_int = hi
        .as_ref()
        .map(|(h, s)| if *s { h.ceil() - Q::one() } else { h.floor() });
    let has_int = match (&lo_int, &hi_int) {
        (Some(a), Some(b)) => a <= b,
        _ => true,
    };
    if has_int {
        let mut x = Q::zero();
        if let Some(a) = &lo_int {
            if x < *a {
                x = a.clone();
            }
        }
        if let Some(b) = &hi_int {
            if x > *b {
                x = b.clone();
            }
        }
        return x;
    }
    let (l, ls) = lo.expect("bounded below");
    let (h, hs) = hi.expect("bounded above");
    if !ls {
        return l;
    }
    if !hs {
        return h;
    }
    let mut d = BigInt::from(2);
    for _ in 0..40 {
        let dq = Q::from_integer(d.clone());
        let k = (&l * &dq).floor() + Q::one();
        let cand = k / &dq;
        if cand > l && cand < h {
            return cand;
        }
        d *= 2;
    }
    (l + h) / Q::from_integer(2.into())
}
