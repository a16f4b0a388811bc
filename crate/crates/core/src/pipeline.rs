//! The synthesis loop: check inclusion, generalize the counterexample into
//! mutex constraints, enforce their conflicts, repeat; then place locks
//! globally, patch the source and verify the result.

use crate::abstraction::{abstract_program, AbstractProgram};
use crate::automata::{build_np_nfa, build_p_nfa, find_state, ConflictSet, Model, StateGraph};
use crate::cegen::{derive_conflicts, generalize, infer_mutexes, CegenError, MutexConstraint, DEFAULT_NHOOD_CAP};
use crate::inclusion::{check_iterative, Verdict, DEFAULT_SCHEDULE, SYNTH_SCHEDULE};
use crate::lang::{parse_program, Program};
use crate::lockcons::{
    apply_placement, check_legitimacy, default_lock_count, emit_source, encode_global, synthesize, verify_theorem1_with,
    LockError, LockPlacement, Objective, TheoremReport, Violation,
};
use crate::perfmodel::{
    augment_constraints, bound_derivatives, measure_tl, optimize_perf, profile, rate, refine_params, simulate, PerfError,
    PerfParams, SimConfig, SimError,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Clone, Debug)]
pub struct Options {
    pub objective: Objective,
    /// Synthesized locks; defaults to one per mutex constraint.
    pub locks: Option<usize>,
    /// Displacement bounds tried in turn by `check`.
    pub schedule: Vec<usize>,
    /// Bounds used inside the synthesis loop and by the self-check.
    pub synth_schedule: Vec<usize>,
    /// Length cap on preemptive words explored; `None` explores all.
    pub max_len: Option<usize>,
    pub max_iterations: usize,
    pub nhood_cap: usize,
    /// Profile for the perf objective; measured on the fly when absent.
    pub perf: Option<PerfParams>,
    pub sim: SimConfig,
    pub shatter: usize,
    pub verify: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            objective: Objective::Coarse,
            locks: None,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            synth_schedule: SYNTH_SCHEDULE.to_vec(),
            max_len: None,
            max_iterations: 64,
            nhood_cap: DEFAULT_NHOOD_CAP,
            perf: None,
            sim: SimConfig::default(),
            shatter: 10,
            verify: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input violates the precondition: {}", .0.join("; "))]
    Precondition(Vec<String>),
    #[error("not lock-fixable: {0}")]
    NotLockFixable(#[from] CegenError),
    #[error("counterexample survives its own constraints: {0}")]
    NoProgress(String),
    #[error("no inclusion after {0} iterations")]
    IterationCap(usize),
    #[error("lock placement: {0}")]
    Lock(#[from] LockError),
    #[error("performance model: {0}")]
    Perf(#[from] PerfError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Iteration {
    pub bound: usize,
    pub counterexample: String,
    pub formula: String,
    /// One entry per clause; alternatives joined by ` | `.
    pub mutexes: Vec<String>,
    pub new_conflicts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfSummary {
    pub kappa: f64,
    pub tc: f64,
    pub nu: f64,
    pub tc1: f64,
    pub nu1: f64,
    pub rating: f64,
    pub coarse_rating: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub preemption_safe_input: bool,
    pub iterations: Vec<Iteration>,
    /// The loop stopped on a word that only matches beyond the schedule.
    pub bound_exhausted: bool,
    pub conflicts: Vec<String>,
    pub objective: String,
    pub locks: Vec<String>,
    pub placement: Vec<String>,
    pub cost: u64,
    pub perf: Option<PerfSummary>,
    pub verification: Option<TheoremReport>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct SynthesisSession {
    pub program: Program,
    pub ap: AbstractProgram,
    pub conflicts: ConflictSet,
    pub mutexes: Vec<MutexConstraint>,
    pub placement: LockPlacement,
    pub patched: Program,
    pub text: String,
    pub report: Report,
}

impl SynthesisSession {
    pub fn verified(&self) -> bool {
        self.report.verification.as_ref().map_or(true, |v| v.passed())
    }
}

/// Non-preemptive deadlocks and misuse of the input's own locks.
pub fn precondition_violations(p: &Program) -> Vec<String> {
    let ap = abstract_program(p);
    let np = build_np_nfa(&ap);
    let mut out = Vec::new();
    let mut g = StateGraph::new(&np);
    if let Some(path) = find_state(&mut g, |s| np.model.stuck(&s.pts, &s.sync)) {
        let last = *path.last().unwrap();
        out.push(format!("deadlock under the non-preemptive scheduler: {}", crate::automata::Nfa::describe(&np, g.state(last))));
    }
    for v in check_legitimacy(p, 0) {
        if let Violation::Illegitimate { thread, reason, trace } = v {
            out.push(format!("{thread}: {reason} via {}", trace.join(" -> ")));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub preemption_safe: bool,
    pub bound: usize,
    /// False when the counterexample might vanish at a larger bound.
    pub genuine: bool,
    pub counterexample: Option<String>,
    pub precondition: Vec<String>,
}

/// Is every preemptive behaviour equivalent to a non-preemptive one?
pub fn check(p: &Program, opts: &Options) -> CheckReport {
    let ap = abstract_program(p);
    let pn = build_p_nfa(&ap, &ConflictSet::default());
    let np = build_np_nfa(&ap);
    let out = check_iterative(&pn, &np, &opts.schedule, opts.max_len);
    let cex = match &out.verdict {
        Verdict::Included => None,
        Verdict::Counterexample(w) => Some(ap.fmt_word(w)),
    };
    CheckReport {
        preemption_safe: out.verdict.is_included(),
        bound: out.bound,
        genuine: out.genuine,
        counterexample: cex,
        precondition: precondition_violations(p),
    }
}

/// Accumulate conflicts until the preemptive automaton (with conflict
/// tracking) is included in the non-preemptive one.
pub fn infer_conflicts(
    ap: &AbstractProgram,
    opts: &Options,
) -> Result<(ConflictSet, Vec<MutexConstraint>, Vec<Iteration>, bool), PipelineError> {
    let m = Model::new(ap);
    let np = build_np_nfa(ap);
    let mut cs = ConflictSet::default();
    let mut mutexes: Vec<MutexConstraint> = Vec::new();
    let mut log = Vec::new();
    loop {
        let p = build_p_nfa(ap, &cs);
        let out = check_iterative(&p, &np, &opts.synth_schedule, opts.max_len);
        let Verdict::Counterexample(cex) = out.verdict else { break };
        if !out.genuine {
            return Ok((cs, mutexes, log, true));
        }
        if log.len() >= opts.max_iterations {
            return Err(PipelineError::IterationCap(log.len()));
        }
        let mut pg = StateGraph::new(&p);
        let mut ng = StateGraph::new(&np);
        // Classify the neighbourhood by true equivalence: at the search bound
        // serializable reorderings that need a long displacement look bad.
        let phi = generalize(&m, &mut pg, &mut ng, &cex, cex.len(), opts.nhood_cap)?;
        let clauses = infer_mutexes(&phi)?;
        let before = cs.conflicts.len();
        let mut shown = Vec::new();
        for clause in &clauses {
            let mut ids = Vec::new();
            for mc in clause {
                let id = match mutexes.iter().position(|x| x == mc) {
                    Some(i) => i,
                    None => {
                        mutexes.push(*mc);
                        cs.num_mutexes += 1;
                        for c in derive_conflicts(&m, mc) {
                            cs.conflicts.push(c);
                            cs.owner.push(mutexes.len() - 1);
                        }
                        mutexes.len() - 1
                    }
                };
                ids.push(id);
            }
            ids.sort();
            ids.dedup();
            if !cs.clauses.contains(&ids) {
                cs.clauses.push(ids);
            }
            shown.push(clause.iter().map(|mc| mc.fmt(&m)).collect::<Vec<_>>().join(" | "));
        }
        let word = ap.fmt_word(&cex);
        let p2 = build_p_nfa(ap, &cs);
        if StateGraph::new(&p2).accepts(&cex) {
            return Err(PipelineError::NoProgress(word));
        }
        log.push(Iteration {
            bound: out.bound,
            counterexample: word,
            formula: phi.display(&m).to_string(),
            mutexes: shown,
            new_conflicts: cs.conflicts.len() - before,
        });
    }
    Ok((cs, mutexes, log, false))
}

/// Profile the coarse solution of `cs` under the simulator.
pub fn profile_coarse(ap: &AbstractProgram, cs: &ConflictSet, sim: &SimConfig) -> Result<PerfParams, PipelineError> {
    let coarse = synthesize(ap, cs, default_lock_count(cs), Objective::Coarse)?.placement;
    let nt = if sim.threads == 0 { ap.program.threads.len() } else { sim.threads };
    let tl = measure_tl(nt, sim);
    Ok(profile(&ap.program, &coarse, sim, tl)?)
}

/// Run the whole pipeline on a parsed program.
pub fn run(program: &Program, opts: &Options) -> Result<SynthesisSession, PipelineError> {
    let pre = precondition_violations(program);
    if !pre.is_empty() {
        return Err(PipelineError::Precondition(pre));
    }
    let ap = abstract_program(program);
    let (cs, mutexes, iterations, bound_exhausted) = infer_conflicts(&ap, opts)?;
    let m = Model::new(&ap);
    let conflicts: Vec<String> = cs.conflicts.iter().map(|c| c.fmt(&m)).collect();

    let mut perf = None;
    let (placement, cost) = if cs.is_empty() {
        (LockPlacement::default(), 0)
    } else if opts.objective == Objective::Perf {
        let params = match &opts.perf {
            Some(p) => p.clone(),
            None => profile_coarse(&ap, &cs, &opts.sim)?,
        };
        let enc = encode_global(&ap, &cs, 1)?;
        let f = augment_constraints(enc, &ap, &params);
        let (d1, d2) = bound_derivatives(&params, 20);
        let res = optimize_perf(&ap, &f, &params, opts.shatter, d1, d2)?;
        perf = Some(PerfSummary {
            kappa: params.kappa,
            tc: params.tc,
            nu: params.nu,
            tc1: res.tc1,
            nu1: res.nu1,
            rating: res.rating,
            coarse_rating: rate(params.tc, params.nu, &params)?,
        });
        (res.placement, 0)
    } else {
        let locks = opts.locks.unwrap_or_else(|| default_lock_count(&cs));
        let s = synthesize(&ap, &cs, locks, opts.objective)?;
        (s.placement, s.cost)
    };
    let patched = apply_placement(program, &placement);
    let text = emit_source(program, &placement);
    let verification = opts.verify.then(|| verify_theorem1_with(program, &placement, &opts.synth_schedule));
    let report = Report {
        preemption_safe_input: iterations.is_empty(),
        iterations,
        bound_exhausted,
        conflicts,
        objective: format!("{:?}", opts.objective).to_lowercase(),
        locks: placement.lock_names.clone(),
        placement: placement.describe(program),
        cost,
        perf,
        verification,
    };
    Ok(SynthesisSession { program: program.clone(), ap, conflicts: cs, mutexes, placement, patched, text, report })
}

/// Parse and run; convenience for the CLI and the FFI layer.
pub fn run_source(src: &str, opts: &Options) -> Result<SynthesisSession, String> {
    let p = parse_program(src).map_err(|e| e.to_string())?;
    run(&p, opts).map_err(|e| e.to_string())
}

/// Original text with the placement's lock statements spliced in.
pub fn emit_patched_source(p: &Program, pl: &LockPlacement) -> String {
    emit_source(p, pl)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpeedupPoint {
    pub scale: f64,
    pub predicted: f64,
    pub measured: f64,
}

/// Predicted and simulated speed-up of `refined` over `coarse` while the
/// cost of `blocks` is multiplied by each of `scales`.
pub fn speedup_sweep(
    p: &Program,
    coarse: &LockPlacement,
    refined: &LockPlacement,
    blocks: &[&str],
    scales: &[f64],
    sim: &SimConfig,
) -> Result<Vec<SpeedupPoint>, PipelineError> {
    let nt = if sim.threads == 0 { p.threads.len() } else { sim.threads };
    let tl = measure_tl(nt, sim);
    let pc = apply_placement(p, coarse);
    let pr = apply_placement(p, refined);
    let mut out = Vec::new();
    for &s in scales {
        let mut cfg = sim.clone();
        for b in blocks {
            cfg.workload.scale.insert(b.to_string(), s);
        }
        let params = profile(p, coarse, &cfg, tl.clone())?;
        let (t1, n1) = refine_params(p, &params, refined)?;
        let predicted = rate(params.tc, params.nu, &params)? / rate(t1, n1, &params)?;
        let (mut tc, mut tr) = (0.0, 0.0);
        for r in 0..cfg.runs.max(1) {
            let seed = cfg.seed.wrapping_add(5000 + r as u64);
            tc += simulate(&pc, &cfg, seed)?.mean_finish();
            tr += simulate(&pr, &cfg, seed)?.mean_finish();
        }
        out.push(SpeedupPoint { scale: s, predicted, measured: tc / tr });
    }
    Ok(out)
}

pub fn speedup_csv(points: &[SpeedupPoint]) -> String {
    let mut s = String::from("scale,predicted,measured\n");
    for p in points {
        s.push_str(&format!("{},{:.6},{:.6}\n", p.scale, p.predicted, p.measured));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(name: &str) -> Program {
        let path = format!("{}/corpus/{name}.lsy", env!("CARGO_MANIFEST_DIR"));
        parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn fig9_one_iteration() {
        let s = run(&corpus("fig9"), &Options::default()).unwrap();
        let r = &s.report;
        assert_eq!(r.iterations.len(), 1);
        assert_eq!(r.iterations[0].mutexes, vec!["mutex(T1.[a1:a2],T2.[b1:b4])"]);
        assert_eq!(r.conflicts, vec!["(b1,b2,b3,a1,a2)", "(b2,b3,b4,a1,a2)"]);
        assert!(s.verified());
        assert_eq!(s.placement.insertions.len(), 5);
    }

    #[test]
    fn safe_input_needs_no_locks() {
        let src = "decl shared x;\ndecl local t;\nthread A { a: t := 1; }\nthread B { b: x := 2; }";
        let s = run(&parse_program(src).unwrap(), &Options::default()).unwrap();
        assert!(s.report.preemption_safe_input);
        assert!(s.placement.is_empty());
        assert_eq!(s.text, src);
    }

    #[test]
    fn output_is_a_fixpoint() {
        for name in ["fig9", "rmw_race", "worksharing"] {
            let s = run(&corpus(name), &Options::default()).unwrap();
            let again = run(&parse_program(&s.text).unwrap(), &Options::default()).unwrap();
            assert!(again.report.iterations.is_empty(), "{name}");
            assert_eq!(again.text, s.text, "{name}");
        }
    }

    #[test]
    fn deadlocking_input_is_rejected() {
        let src = "decl lock m;\nthread A { lock(m); }\nthread B { lock(m); unlock(m); }";
        let Err(e) = run(&parse_program(src).unwrap(), &Options::default()) else { panic!("accepted") };
        assert!(matches!(e, PipelineError::Precondition(_)), "{e}");
    }
}
