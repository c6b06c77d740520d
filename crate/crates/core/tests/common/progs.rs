//! Random loop-free apps over a small symbol set, and a brute-force oracle
//! that enumerates every assignment of the symbols they mention.
//!
//! The generator keeps every comparison single-symbol with small constants
//! (ints within [-2, 2], at most two additive updates of at most 2; reals
//! against -1, 0 or 1). Under those limits each satisfiable combination of
//! atoms has a witness inside the enumerated domain, so the oracle's verdict
//! is the true one and must match the verifier's.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use knxsafe::app::AppPrototype;
use knxsafe::lang::{
    compile_program, evaluate_invariant, interpret_iteration, ChannelId, ChannelMap, TypedProgram,
    UncheckedRegistry,
};
use knxsafe::value::{AppState, PhysicalStateStore, Register, Value, ValueType};
use knxsafe::verifier::{check_app, VerificationTask, VerifyApp};
use knxsafe::wire::GroupAddress;

pub const APP: &str = "rand";
pub const INT_DOMAIN: std::ops::RangeInclusive<i64> = -8..=8;
pub const REAL_GRID: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];

const PROTOTYPE: &str = r#"{
  "permissionLevel": "notPrivileged",
  "timer": 0,
  "files": [],
  "devices": [
    { "name": "s1", "deviceType": "binary" },
    { "name": "s2", "deviceType": "binary" },
    { "name": "sw", "deviceType": "switch" },
    { "name": "t", "deviceType": "temperature" }
  ]
}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sym {
    S1,
    S2,
    Sw,
    T,
    Reg(ValueType, u8),
}

impl Sym {
    fn ty(self) -> ValueType {
        match self {
            Sym::S1 | Sym::S2 | Sym::Sw => ValueType::Bool,
            Sym::T => ValueType::Real,
            Sym::Reg(ty, _) => ty,
        }
    }

    fn source(self) -> String {
        match self {
            Sym::S1 => "S1.is_on()".into(),
            Sym::S2 => "S2.is_on()".into(),
            Sym::Sw => "SW.is_on()".into(),
            Sym::T => "T.read()".into(),
            Sym::Reg(ty, i) => format!("app_state.{}", Register::new(ty, i).unwrap()),
        }
    }

    fn channel(self) -> Option<(&'static str, u16)> {
        match self {
            Sym::S1 => Some(("S1", 1)),
            Sym::S2 => Some(("S2", 2)),
            Sym::Sw => Some(("SW", 3)),
            Sym::T => Some(("T", 4)),
            Sym::Reg(..) => None,
        }
    }
}

const ALL_CHANNELS: [Sym; 4] = [Sym::S1, Sym::S2, Sym::Sw, Sym::T];

/// A generated app with the symbols its code mentions.
#[derive(Debug, Clone)]
pub struct RandomApp {
    pub source: String,
    pub program: TypedProgram,
    pub channels: ChannelMap,
    pub symbols: Vec<Sym>,
}

pub fn prototype() -> AppPrototype {
    AppPrototype::from_json(APP, PROTOTYPE).unwrap()
}

pub fn channel_map() -> ChannelMap {
    ALL_CHANNELS
        .iter()
        .map(|s| {
            let (inst, ga) = s.channel().unwrap();
            let ch = if *s == Sym::T { "read" } else { "state" };
            (ChannelId::new(inst, ch), GroupAddress::from_raw(ga))
        })
        .collect()
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    bools: Vec<Sym>,
    ints: Vec<Sym>,
    reals: Vec<Sym>,
    arith_left: u32,
}

const CMP: [&str; 6] = ["==", "!=", "<", "<=", ">", ">="];

impl<R: Rng> Gen<'_, R> {
    fn atom(&mut self) -> String {
        let mut kinds = vec![0];
        if self.bools.len() >= 2 {
            kinds.push(1);
        }
        if !self.ints.is_empty() {
            kinds.extend([2, 2]);
        }
        if !self.reals.is_empty() {
            kinds.extend([3, 3]);
        }
        match *kinds.choose(self.rng).unwrap() {
            0 => self.bools.choose(self.rng).unwrap().source(),
            1 => {
                let a = self.bools.choose(self.rng).unwrap().source();
                let b = self.bools.choose(self.rng).unwrap().source();
                let op = ["==", "!="].choose(self.rng).unwrap();
                format!("{a} {op} {b}")
            }
            2 => {
                let s = self.ints.choose(self.rng).unwrap().source();
                let c = self.rng.gen_range(-2..=2);
                format!("{s} {} {c}", CMP.choose(self.rng).unwrap())
            }
            _ => {
                let s = self.reals.choose(self.rng).unwrap().source();
                let c = ["-1.0", "0.0", "1.0"].choose(self.rng).unwrap();
                let op = ["<", "<=", ">", ">="].choose(self.rng).unwrap();
                format!("{s} {op} {c}")
            }
        }
    }

    fn cond(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return self.atom();
        }
        match self.rng.gen_range(0..3) {
            0 => format!("not ({})", self.cond(depth - 1)),
            1 => format!("({}) and ({})", self.cond(depth - 1), self.cond(depth - 1)),
            _ => format!("({}) or ({})", self.cond(depth - 1), self.cond(depth - 1)),
        }
    }

    fn stmt(&mut self, depth: u32, out: &mut String, indent: usize) {
        let pad = " ".repeat(indent);
        let bool_regs: Vec<Sym> = self
            .bools
            .iter()
            .copied()
            .filter(|s| matches!(s, Sym::Reg(..)))
            .collect();
        let int_regs: Vec<Sym> = self.ints.clone();
        let real_regs: Vec<Sym> = self
            .reals
            .iter()
            .copied()
            .filter(|s| matches!(s, Sym::Reg(..)))
            .collect();
        let mut kinds = vec![0];
        if depth > 0 {
            kinds.extend([1, 1]);
        }
        if !bool_regs.is_empty() {
            kinds.push(2);
        }
        if !int_regs.is_empty() {
            kinds.extend([3, 3]);
        }
        if !real_regs.is_empty() {
            kinds.push(4);
        }
        match *kinds.choose(self.rng).unwrap() {
            0 => {
                let m = if self.rng.gen_bool(0.5) { "on" } else { "off" };
                writeln!(out, "{pad}SW.{m}();").unwrap();
            }
            1 => {
                let c = self.cond(2);
                writeln!(out, "{pad}if {c} {{").unwrap();
                self.block(depth - 1, out, indent + 4);
                if self.rng.gen_bool(0.7) {
                    writeln!(out, "{pad}}} else {{").unwrap();
                    self.block(depth - 1, out, indent + 4);
                }
                writeln!(out, "{pad}}}").unwrap();
            }
            2 => {
                let r = bool_regs.choose(self.rng).unwrap().source();
                let v = if self.rng.gen_bool(0.5) {
                    self.cond(1)
                } else {
                    ["true", "false"].choose(self.rng).unwrap().to_string()
                };
                writeln!(out, "{pad}{r} = {v}").unwrap();
            }
            3 => {
                let r = int_regs.choose(self.rng).unwrap().source();
                let arith = self.arith_left > 0 && self.rng.gen_bool(0.6);
                if !arith {
                    writeln!(out, "{pad}{r} = {}", self.rng.gen_range(-2..=2)).unwrap();
                    return;
                }
                self.arith_left -= 1;
                let k = *[1, 2].choose(self.rng).unwrap();
                match self.rng.gen_range(0..3) {
                    0 => writeln!(out, "{pad}{r} += {k}").unwrap(),
                    1 => writeln!(out, "{pad}{r} -= {k}").unwrap(),
                    _ => {
                        let from = int_regs.choose(self.rng).unwrap().source();
                        let op = if self.rng.gen_bool(0.5) { "+" } else { "-" };
                        writeln!(out, "{pad}{r} = {from} {op} {k}").unwrap();
                    }
                }
            }
            _ => {
                let r = real_regs.choose(self.rng).unwrap().source();
                let from = self.reals.choose(self.rng).unwrap();
                let v = if from.channel().is_some() && self.rng.gen_bool(0.5) {
                    from.source()
                } else {
                    ["-1.0", "0.0", "1.0"].choose(self.rng).unwrap().to_string()
                };
                writeln!(out, "{pad}{r} = {v}").unwrap();
            }
        }
    }

    fn block(&mut self, depth: u32, out: &mut String, indent: usize) {
        let n = self.rng.gen_range(1..=3);
        for _ in 0..n {
            self.stmt(depth, out, indent);
        }
    }
}

/// Draws a random app. At most four booleans, two ints and, with two ints,
/// one real, which keeps the enumeration under 40 000 assignments.
pub fn random_app<R: Rng>(rng: &mut R) -> RandomApp {
    let mut bool_pool = [
        Sym::S1,
        Sym::S2,
        Sym::Sw,
        Sym::Reg(ValueType::Bool, 0),
        Sym::Reg(ValueType::Bool, 1),
    ];
    bool_pool.shuffle(rng);
    let nb = rng.gen_range(1..=4);
    let bools: Vec<Sym> = bool_pool[..nb].to_vec();
    let ni = rng.gen_range(0..=2);
    let ints: Vec<Sym> = (0..ni).map(|i| Sym::Reg(ValueType::Int, i)).collect();
    let max_reals = if ni == 2 { 1 } else { 2 };
    let nr = rng.gen_range(0..=max_reals);
    let mut real_pool = [Sym::T, Sym::Reg(ValueType::Real, 0)];
    real_pool.shuffle(rng);
    let reals: Vec<Sym> = real_pool[..nr].to_vec();

    let mut g = Gen {
        rng,
        bools: bools.clone(),
        ints: ints.clone(),
        reals: reals.clone(),
        arith_left: 2,
    };
    let invariant = g.cond(2);
    let mut body = String::new();
    g.block(2, &mut body, 4);
    let source = format!(
        "device S1: binary;\ndevice S2: binary;\ndevice SW: switch;\ndevice T: temperature;\n\n\
         invariant: {invariant}\n\niteration: {{\n{body}}}\n"
    );
    let program = compile_program(&source, &prototype())
        .unwrap_or_else(|e| panic!("generated program does not compile: {e}\n{source}"));
    let symbols = bools.into_iter().chain(ints).chain(reals).collect();
    RandomApp {
        source,
        program,
        channels: channel_map(),
        symbols,
    }
}

fn domain(ty: ValueType) -> Vec<Value> {
    match ty {
        ValueType::Bool => vec![Value::Bool(false), Value::Bool(true)],
        ValueType::Int => INT_DOMAIN.map(Value::Int).collect(),
        ValueType::Real => REAL_GRID.iter().map(|r| Value::Real(*r)).collect(),
        ValueType::Str => vec![Value::Str(String::new())],
    }
}

/// Concrete state for one assignment of `app.symbols`; unmentioned
/// channels hold their type's default.
pub fn concrete_state(app: &RandomApp, values: &[Value]) -> (AppState, PhysicalStateStore) {
    let mut phys = PhysicalStateStore::new();
    for s in ALL_CHANNELS {
        let (_, ga) = s.channel().unwrap();
        phys.set(GroupAddress::from_raw(ga), Value::default_of(s.ty()));
    }
    let mut state = AppState::default();
    for (s, v) in app.symbols.iter().zip(values) {
        match s {
            Sym::Reg(ty, i) => {
                state.set(Register::new(*ty, *i).unwrap(), v.clone());
            }
            ch => {
                let (_, ga) = ch.channel().unwrap();
                phys.set(GroupAddress::from_raw(ga), v.clone());
            }
        }
    }
    (state, phys)
}

/// Every assignment of the app's symbols over the discretized domain.
pub fn assignments(app: &RandomApp) -> Vec<Vec<Value>> {
    let domains: Vec<Vec<Value>> = app.symbols.iter().map(|s| domain(s.ty())).collect();
    let mut out = vec![Vec::new()];
    for d in &domains {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                d.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// The first assignment that satisfies the invariant and leaves a state
/// violating it, if any.
pub fn oracle(app: &RandomApp) -> Option<Vec<Value>> {
    let mut impls = UncheckedRegistry::new();
    for values in assignments(app) {
        let (state, phys) = concrete_state(app, &values);
        if !evaluate_invariant(&app.program, &app.channels, &state, &phys).unwrap() {
            continue;
        }
        let run =
            interpret_iteration(&app.program, &app.channels, &state, &phys, &mut impls).unwrap();
        if !evaluate_invariant(&app.program, &app.channels, &run.app_state, &run.phys).unwrap() {
            return Some(values);
        }
    }
    None
}

/// `true` when the verifier finds the app valid.
pub fn verifier_valid(app: &RandomApp) -> bool {
    let task = VerificationTask {
        apps: vec![VerifyApp {
            name: APP,
            program: &app.program,
            channels: &app.channels,
        }],
        target: 0,
    };
    check_app(&task)
        .unwrap_or_else(|e| panic!("verifier error {e}\n{}", app.source))
        .is_valid()
}

/// Outcome of comparing verifier and oracle on one app.
#[derive(Debug)]
pub struct Comparison {
    pub verifier_valid: bool,
    pub oracle_valid: bool,
    pub assignments: usize,
}

pub fn compare(app: &RandomApp) -> Comparison {
    Comparison {
        verifier_valid: verifier_valid(app),
        oracle_valid: oracle(app).is_none(),
        assignments: assignments(app).len(),
    }
}

/// Symbol values keyed by source text, for failure messages.
pub fn describe(app: &RandomApp, values: &[Value]) -> BTreeMap<String, String> {
    app.symbols
        .iter()
        .zip(values)
        .map(|(s, v)| (s.source(), v.to_string()))
        .collect()
}
