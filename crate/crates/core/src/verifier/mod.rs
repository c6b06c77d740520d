//! Static verification of iteration handlers against the conjunction of all
//! apps' invariants.
//!
//! For an app `A` and every path of `A`'s handler, the verifier asks whether
//! some state satisfying every invariant (and the postconditions of the
//! unchecked calls on the path) can follow the path into a state that
//! breaks an invariant. Models returned by the solver are replayed through
//! the concrete interpreter before being reported.

pub mod formula;
pub mod solver;
pub mod symexec;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::lang::{
    evaluate_invariant, interpret_iteration, ChannelMap, TypedProgram, UncheckedImpls,
    UncheckedResult,
};
use crate::value::{AppState, PhysicalStateStore, Register, Value, ValueType};
use crate::wire::GroupAddress;
pub use formula::{Formula, Lin, LinRel, Model, SymId, SymOrigin, SymValue, SymbolTable};
pub use solver::{solve, SolveResult, SolverError};
pub use symexec::{symexec_iteration, Env, SymCall, SymPath, SymState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{app}: channel {channel} has no group address")]
    Unbound { app: String, channel: String },
    #[error("group address {0} is used with two different value types")]
    TypeClash(GroupAddress),
    #[error("internal soundness error while checking {app}: {detail}")]
    Internal { app: String, detail: String },
}

/// An app as seen by the verifier.
#[derive(Debug, Clone, Copy)]
pub struct VerifyApp<'a> {
    pub name: &'a str,
    pub program: &'a TypedProgram,
    pub channels: &'a ChannelMap,
}

impl<'a> VerifyApp<'a> {
    fn env(&self) -> Env<'a> {
        Env {
            program: self.program,
            app: self.name,
            channels: self.channels,
        }
    }
}

/// Check one handler (`apps[target]`) against the invariants of `apps`.
#[derive(Debug, Clone)]
pub struct VerificationTask<'a> {
    pub apps: Vec<VerifyApp<'a>>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// App whose handler was checked.
    pub app: String,
    /// Apps whose invariant fails after the replayed run.
    pub violated: Vec<String>,
    /// Symbol name -> concrete value, in symbol order.
    pub assignment: Vec<(String, Value)>,
    pub branches: Vec<bool>,
    /// Initial physical state.
    pub phys: PhysicalStateStore,
    /// Initial register values per app.
    pub app_states: BTreeMap<String, AppState>,
    /// Values the unchecked calls returned, in call order.
    pub returns: Vec<Value>,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "counterexample for {}: invariant of {} violated",
            self.app,
            self.violated.join(", ")
        )?;
        for (name, v) in &self.assignment {
            let is_default = *v == Value::default_of(v.ty());
            let is_register = name.contains('.');
            if !is_register || !is_default {
                writeln!(f, "    {name} = {v}")?;
            }
        }
        write!(f, "    path: {:?}", self.branches)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AppVerdict {
    Valid,
    Counterexample(Box<Counterexample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub app: String,
    pub verdict: AppVerdict,
    pub paths: usize,
    pub warnings: Vec<String>,
}

impl CheckOutcome {
    pub fn is_valid(&self) -> bool {
        self.verdict == AppVerdict::Valid
    }

    pub fn counterexample(&self) -> Option<&Counterexample> {
        match &self.verdict {
            AppVerdict::Counterexample(c) => Some(c),
            AppVerdict::Valid => None,
        }
    }
}

fn physical_types(
    apps: &[VerifyApp<'_>],
) -> Result<BTreeMap<GroupAddress, ValueType>, VerifyError> {
    let mut out = BTreeMap::new();
    for a in apps {
        for (ch, ty) in &a.program.channels {
            let ga = *a.channels.get(ch).ok_or_else(|| VerifyError::Unbound {
                app: a.name.to_string(),
                channel: ch.to_string(),
            })?;
            if *out.entry(ga).or_insert(*ty) != *ty {
                return Err(VerifyError::TypeClash(ga));
            }
        }
    }
    Ok(out)
}

/// Replays values in call order, handing none-returning calls `None`.
struct ReplayImpls<'a> {
    queue: VecDeque<Value>,
    program: &'a TypedProgram,
}

impl UncheckedImpls for ReplayImpls<'_> {
    fn call(&mut self, name: &str, _args: &[Value]) -> Option<UncheckedResult> {
        let decl = self.program.unchecked_named(name)?;
        if decl.ret.is_none() {
            return Some(Ok(None));
        }
        Some(
            self.queue
                .pop_front()
                .map(Some)
                .ok_or_else(|| "replay ran out of return values".to_string()),
        )
    }
}

fn concrete_states(
    apps: &[VerifyApp<'_>],
    symbols: &SymbolTable,
    model: &Model,
    init: &SymState,
) -> Option<(PhysicalStateStore, BTreeMap<String, AppState>)> {
    let mut phys = PhysicalStateStore::new();
    for (ga, v) in &init.phys {
        let id = sym_of(v);
        phys.set(*ga, model.value(symbols, id)?);
    }
    let mut states = BTreeMap::new();
    for a in apps {
        let mut s = AppState::default();
        for (reg, v) in &init.apps[a.name] {
            let stored = s.set(*reg, model.value(symbols, sym_of(v))?);
            debug_assert!(stored);
        }
        states.insert(a.name.to_string(), s);
    }
    Some((phys, states))
}

fn sym_of(v: &SymValue) -> SymId {
    match v {
        SymValue::Bool(Formula::Bool(id)) => *id,
        SymValue::Num(l) => *l.terms.keys().next().expect("initial state is symbolic"),
        SymValue::Str(formula::SymStr::Sym(id)) => *id,
        other => unreachable!("initial state holds a non-symbol {other:?}"),
    }
}

/// Checks whether `apps[target]`'s handler preserves the conjunction of all
/// invariants.
pub fn check_app(task: &VerificationTask<'_>) -> Result<CheckOutcome, VerifyError> {
    let apps = &task.apps;
    let target = apps[task.target];
    let mut symbols = SymbolTable::new();
    let phys_types = physical_types(apps)?;
    let mut names: Vec<&str> = apps.iter().map(|a| a.name).collect();
    names.sort_unstable();
    let init = SymState::fresh(&mut symbols, &phys_types, &names);

    let invariants = |state: &SymState| {
        Formula::all(
            apps.iter()
                .map(|a| a.env().eval_pure(&a.program.invariant, state).formula()),
        )
    };
    let pre = invariants(&init);

    let mut warnings = Vec::new();
    for decl in &target.program.unchecked {
        if decl.posts.is_empty() {
            continue;
        }
        let mut t = SymbolTable::new();
        let ty = decl.ret.expect("posts require a return value");
        let id = t.fresh(
            ty,
            SymOrigin::Return {
                func: decl.name.clone(),
                seq: 0,
            },
        );
        let ret = SymValue::of_symbol(id, ty);
        let env = target.env();
        let posts = Formula::all(decl.posts.iter().map(|p| env.eval_post(p, &ret)));
        if !solve(&posts, &t)?.is_sat() {
            warnings.push(format!(
                "{}: postconditions of {} are unsatisfiable; every path calling it verifies vacuously",
                target.name, decl.name
            ));
        }
    }

    let env = target.env();
    let paths = symexec_iteration(&env, &init, &mut symbols);
    for path in &paths {
        let post = invariants(&path.state);
        let query = Formula::all([
            pre.clone(),
            path.assumptions.clone(),
            path.condition.clone(),
            Formula::not(post),
        ]);
        if let SolveResult::Sat(model) = solve(&query, &symbols)? {
            let cex = replay(apps, target, &symbols, &model, &init, path)?;
            return Ok(CheckOutcome {
                app: target.name.to_string(),
                verdict: AppVerdict::Counterexample(Box::new(cex)),
                paths: paths.len(),
                warnings,
            });
        }
    }
    Ok(CheckOutcome {
        app: target.name.to_string(),
        verdict: AppVerdict::Valid,
        paths: paths.len(),
        warnings,
    })
}

fn replay(
    apps: &[VerifyApp<'_>],
    target: VerifyApp<'_>,
    symbols: &SymbolTable,
    model: &Model,
    init: &SymState,
    path: &SymPath,
) -> Result<Counterexample, VerifyError> {
    let internal = |detail: String| VerifyError::Internal {
        app: target.name.to_string(),
        detail,
    };
    let (phys, states) = concrete_states(apps, symbols, model, init)
        .ok_or_else(|| internal("model value does not fit its concrete type".into()))?;
    let returns = path
        .calls
        .iter()
        .filter_map(|c| c.ret)
        .map(|id| model.value(symbols, id))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| internal("unchecked return value does not fit its type".into()))?;

    for a in apps {
        let ok = evaluate_invariant(a.program, a.channels, &states[a.name], &phys)
            .map_err(|e| internal(e.to_string()))?;
        if !ok {
            return Err(internal(format!(
                "model breaks the invariant of {} before the run",
                a.name
            )));
        }
    }
    let mut impls = ReplayImpls {
        queue: returns.iter().cloned().collect(),
        program: target.program,
    };
    let run = interpret_iteration(
        target.program,
        target.channels,
        &states[target.name],
        &phys,
        &mut impls,
    )
    .map_err(|e| internal(format!("replay failed: {e}")))?;
    if run.branches != path.branches {
        return Err(internal(format!(
            "replay took path {:?}, expected {:?}",
            run.branches, path.branches
        )));
    }
    let mut after = states.clone();
    after.insert(target.name.to_string(), run.app_state.clone());
    let mut violated = Vec::new();
    for a in apps {
        let ok = evaluate_invariant(a.program, a.channels, &after[a.name], &run.phys)
            .map_err(|e| internal(e.to_string()))?;
        if !ok {
            violated.push(a.name.to_string());
        }
    }
    if violated.is_empty() {
        return Err(internal(
            "replayed counterexample satisfies every invariant".into(),
        ));
    }
    violated.sort();
    let assignment = symbols
        .iter()
        .filter_map(|(id, _)| Some((symbols.get(id).name(), model.value(symbols, id)?)))
        .collect();
    Ok(Counterexample {
        app: target.name.to_string(),
        violated,
        assignment,
        branches: path.branches.clone(),
        phys,
        app_states: states,
        returns,
    })
}

/// Outcome of checking an installation.
#[derive(Debug, Clone, PartialEq)]
pub struct InstallReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl InstallReport {
    pub fn accepted(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::is_valid)
    }

    pub fn counterexamples(&self) -> impl Iterator<Item = &Counterexample> {
        self.outcomes
            .iter()
            .filter_map(CheckOutcome::counterexample)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.outcomes.iter().flat_map(|o| o.warnings.iter())
    }
}

impl fmt::Display for InstallReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "verification: {}",
            if self.accepted() { "ACCEPT" } else { "REJECT" }
        )?;
        for o in &self.outcomes {
            match &o.verdict {
                AppVerdict::Valid => writeln!(f, "  {}: valid ({} paths)", o.app, o.paths)?,
                AppVerdict::Counterexample(c) => {
                    writeln!(f, "  {}: INVALID ({} paths)", o.app, o.paths)?;
                    for line in c.to_string().lines() {
                        writeln!(f, "    {line}")?;
                    }
                }
            }
        }
        for w in self.warnings() {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

/// Checks every handler of `installed` and `installing` against the
/// invariants of both sets. Results are ordered by app name.
pub fn verify_installation(
    installed: &[VerifyApp<'_>],
    installing: &[VerifyApp<'_>],
) -> Result<InstallReport, VerifyError> {
    let mut apps: Vec<VerifyApp<'_>> = installed.iter().chain(installing).copied().collect();
    apps.sort_by(|a, b| a.name.cmp(b.name));
    let mut outcomes = Vec::with_capacity(apps.len());
    for target in 0..apps.len() {
        outcomes.push(check_app(&VerificationTask {
            apps: apps.clone(),
            target,
        })?);
    }
    Ok(InstallReport { outcomes })
}

/// The register symbol of `app` in `init`, for tests and reports.
pub fn register_symbol(init: &SymState, app: &str, reg: Register) -> Option<SymId> {
    init.apps.get(app)?.get(&reg).map(sym_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::AppPrototype;
    use crate::lang::{compile_program, ChannelId};

    const PAPER_EXAMPLE: &str = r#"
device BINARY_SENSOR: binary;
device SWITCH: switch;

invariant:
    ((BINARY_SENSOR.is_on() or app_state.INT_0 == 42) and SWITCH.is_on())
    or (not BINARY_SENSOR.is_on() and not SWITCH.is_on())

iteration: {
    if BINARY_SENSOR.is_on() or app_state.INT_0 == 42 {
        SWITCH.on();
    } else {
        SWITCH.off();
    }
}
"#;

    fn proto(name: &str, devices: &[(&str, &str)]) -> AppPrototype {
        let devs: Vec<String> = devices
            .iter()
            .map(|(n, k)| format!(r#"{{"name":"{n}","deviceType":"{k}"}}"#))
            .collect();
        AppPrototype::from_json(
            name,
            &format!(
                r#"{{"permissionLevel":"notPrivileged","timer":60,"files":[],"devices":[{}]}}"#,
                devs.join(",")
            ),
        )
        .unwrap()
    }

    fn ga(n: u16) -> GroupAddress {
        GroupAddress::from_raw(n)
    }

    fn example_channels() -> ChannelMap {
        ChannelMap::from([
            (ChannelId::new("BINARY_SENSOR", "state"), ga(1)),
            (ChannelId::new("SWITCH", "state"), ga(2)),
        ])
    }

    fn example(src: &str) -> TypedProgram {
        let p = proto(
            "example",
            &[("binary_sensor", "binary"), ("switch", "switch")],
        );
        compile_program(src, &p).unwrap()
    }

    fn check_single(tp: &TypedProgram, ch: &ChannelMap) -> CheckOutcome {
        check_app(&VerificationTask {
            apps: vec![VerifyApp {
                name: "example",
                program: tp,
                channels: ch,
            }],
            target: 0,
        })
        .unwrap()
    }

    #[test]
    fn paper_example_is_valid() {
        let tp = example(PAPER_EXAMPLE);
        let out = check_single(&tp, &example_channels());
        assert_eq!(out.paths, 2);
        assert!(out.is_valid(), "{:?}", out.verdict);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn always_on_mutant_has_counterexample() {
        let src = PAPER_EXAMPLE.replace("SWITCH.off();", "SWITCH.on();");
        let tp = example(&src);
        let out = check_single(&tp, &example_channels());
        let cex = out.counterexample().expect("mutant must be rejected");
        assert_eq!(cex.branches, vec![false]);
        assert_eq!(cex.phys.get(ga(1)), Some(&Value::Bool(false)));
        assert_ne!(
            cex.app_states["example"].get("INT_0".parse().unwrap()),
            Value::Int(42)
        );
        assert_eq!(cex.violated, vec!["example".to_string()]);
    }

    #[test]
    fn empty_iteration_has_one_path() {
        let src = PAPER_EXAMPLE.replace(
            "iteration: {\n    if BINARY_SENSOR.is_on() or app_state.INT_0 == 42 {\n        SWITCH.on();\n    } else {\n        SWITCH.off();\n    }\n}",
            "iteration: {\n}",
        );
        let tp = example(&src);
        let out = check_single(&tp, &example_channels());
        assert_eq!(out.paths, 1);
        assert!(out.is_valid());
    }

    const DOOR_LOCK: &str = r#"
device PRESENCE_DETECTOR: binary;
device DOOR_LOCK_SENSOR: binary;

fn unchecked_send_message(msg: str) -> none;

invariant: app_state.INT_0 >= 0

iteration: {
    if not PRESENCE_DETECTOR.is_on() and not DOOR_LOCK_SENSOR.is_on() {
        if app_state.INT_0 > 5 {
            unchecked_send_message("The door is still open but nobody is there!");
        } else {
            app_state.INT_0 += 1
        }
    } else {
        app_state.INT_0 = 0
    }
}
"#;

    fn door_lock() -> (TypedProgram, ChannelMap) {
        let p = proto(
            "door_lock",
            &[
                ("presence_detector", "binary"),
                ("door_lock_sensor", "binary"),
            ],
        );
        let ch = ChannelMap::from([
            (ChannelId::new("PRESENCE_DETECTOR", "state"), ga(3)),
            (ChannelId::new("DOOR_LOCK_SENSOR", "state"), ga(4)),
        ]);
        (compile_program(DOOR_LOCK, &p).unwrap(), ch)
    }

    #[test]
    fn door_lock_has_three_paths_and_is_valid() {
        let (tp, ch) = door_lock();
        let out = check_app(&VerificationTask {
            apps: vec![VerifyApp {
                name: "door_lock",
                program: &tp,
                channels: &ch,
            }],
            target: 0,
        })
        .unwrap();
        assert_eq!(out.paths, 3);
        assert!(out.is_valid());
    }

    #[test]
    fn decrementing_counter_is_rejected() {
        let src = DOOR_LOCK.replace("app_state.INT_0 += 1", "app_state.INT_0 -= 1");
        let p = proto(
            "door_lock",
            &[
                ("presence_detector", "binary"),
                ("door_lock_sensor", "binary"),
            ],
        );
        let tp = compile_program(&src, &p).unwrap();
        let (_, ch) = door_lock();
        let out = check_app(&VerificationTask {
            apps: vec![VerifyApp {
                name: "door_lock",
                program: &tp,
                channels: &ch,
            }],
            target: 0,
        })
        .unwrap();
        let cex = out.counterexample().unwrap();
        assert_eq!(cex.app_states["door_lock"].ints[0], 0);
    }

    #[test]
    fn trivial_invariant_is_valid() {
        let src = PAPER_EXAMPLE.replace(
            "((BINARY_SENSOR.is_on() or app_state.INT_0 == 42) and SWITCH.is_on())\n    or (not BINARY_SENSOR.is_on() and not SWITCH.is_on())",
            "true",
        );
        let tp = example(&src);
        assert!(check_single(&tp, &example_channels()).is_valid());
    }

    #[test]
    fn unsatisfiable_postconditions_warn() {
        let src = r#"
device SWITCH: switch;

fn unchecked_pick() -> int {
    post: __return__ > 3;
    post: __return__ < 2
}

invariant: not SWITCH.is_on()

iteration: {
    if unchecked_pick() == 0 {
        SWITCH.on();
    }
}
"#;
        let p = proto("picker", &[("switch", "switch")]);
        let tp = compile_program(src, &p).unwrap();
        let ch = ChannelMap::from([(ChannelId::new("SWITCH", "state"), ga(2))]);
        let out = check_app(&VerificationTask {
            apps: vec![VerifyApp {
                name: "picker",
                program: &tp,
                channels: &ch,
            }],
            target: 0,
        })
        .unwrap();
        assert!(out.is_valid());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn conflicting_apps_are_rejected() {
        let tp = example(PAPER_EXAMPLE);
        let ch = example_channels();
        let off = r#"
device SWITCH: switch;
invariant: not SWITCH.is_on()
iteration: {
    SWITCH.off();
}
"#;
        let p = proto("keep_off", &[("switch", "switch")]);
        let off_tp = compile_program(off, &p).unwrap();
        let off_ch = ChannelMap::from([(ChannelId::new("SWITCH", "state"), ga(2))]);
        let report = verify_installation(
            &[VerifyApp {
                name: "example",
                program: &tp,
                channels: &ch,
            }],
            &[VerifyApp {
                name: "keep_off",
                program: &off_tp,
                channels: &off_ch,
            }],
        )
        .unwrap();
        assert!(!report.accepted());
        assert_eq!(report.outcomes[0].app, "example");
        assert!(report.to_string().starts_with("verification: REJECT"));
    }
}
