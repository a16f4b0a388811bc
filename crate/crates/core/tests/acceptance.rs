//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! straight to stdout (bypassing capture) before asserting.

mod common;

use common::*;
use locksynth::abstraction::{abstract_program, AbstractProgram};
use locksynth::automata::{build_np_nfa, build_p_nfa, enumerate_executions, ConflictSet, Model, Point};
use locksynth::cegen::{derive_conflicts, MutexConstraint, Region};
use locksynth::inclusion::{check_inclusion, equivalent_mod_i};
use locksynth::lang::{parse_program, LocId, Program};
use locksynth::lockcons::maxsat::{solve_sat, Lit};
use locksynth::lockcons::{
    apply_placement, coarse_weight, encode_global, fine_cost, synthesize, Act, LockPlacement, Objective,
};
use locksynth::perfmodel::{
    augment_constraints, bound_derivatives, optimize_perf, rate, refine_params, solve_contention, PerfParams,
    SimConfig, TlCurve, Workload,
};
use locksynth::pipeline::{infer_conflicts, run, speedup_sweep, Options};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

fn report(n: u32, what: &str, ok: bool, start: Instant, limit: Duration, detail: &str) {
    let t = start.elapsed();
    let pass = ok && t <= limit;
    let line = format!(
        "criterion {n} [{}] {what}: {:.2}s (limit {}s){}{detail}\n",
        if pass { "PASS" } else { "FAIL" },
        t.as_secs_f64(),
        limit.as_secs(),
        if detail.is_empty() { "" } else { "; " },
    );
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(ok, "criterion {n}: {detail}");
    assert!(t <= limit, "criterion {n} took {t:?}");
}

fn loc(p: &Program, name: &str) -> LocId {
    p.loc_named(name, None).unwrap_or_else(|| panic!("no location {name}"))
}

fn fig9_conflicts(ap: &AbstractProgram) -> ConflictSet {
    let m = Model::new(ap);
    let p = &ap.program;
    let mc = MutexConstraint::new(
        Region { tid: 1, start: Point::at(loc(p, "a1")), end: Point::at(loc(p, "a2")) },
        Region { tid: 2, start: Point::at(loc(p, "b1")), end: Point::at(p.thread(2).last) },
    );
    let conflicts = derive_conflicts(&m, &mc);
    ConflictSet { owner: vec![0; conflicts.len()], conflicts, clauses: vec![vec![0]], num_mutexes: 1 }
}

#[test]
fn criterion_1_fig9_conflicts() {
    let start = Instant::now();
    let ap = abstract_program(&corpus("fig9"));
    let m = Model::new(&ap);
    let got: BTreeSet<String> = fig9_conflicts(&ap).conflicts.iter().map(|c| c.fmt(&m)).collect();
    let want: BTreeSet<String> = ["(b1,b2,b3,a1,a2)", "(b2,b3,b4,a1,a2)"].iter().map(|s| s.to_string()).collect();
    report(1, "fig9 conflict derivation", got == want, start, Duration::from_secs(1), &format!("{got:?}"));
}

#[test]
fn criterion_2_open_dev_abstraction() {
    let start = Instant::now();
    let ap = abstract_program(&corpus("open_dev"));
    let golden = include_str!("golden/open_dev.abs");
    let got = ap.dump();
    let ok = got.trim_end() == golden.trim_end();
    report(2, "open_dev abstraction golden", ok, start, Duration::from_secs(1), if ok { "" } else { &got });
}

#[test]
fn criterion_3_greedy_placement_excluded() {
    let start = Instant::now();
    let ap = abstract_program(&corpus("fig9"));
    let p = &ap.program;
    let cs = fig9_conflicts(&ap);

    // Oracle: every single-lock behaviour of T2 that locks before b1 and
    // whose only release is after b4.
    let (locs, pats) = thread_patterns(p, 2);
    let at = |n: &str| locs.iter().position(|l| *l == loc(p, n)).unwrap();
    let (b1, b4) = (at("b1"), at("b4"));
    let greedy = pats.iter().filter(|q| {
        q.lo_bef[b1]
            && q.un_aft[b4]
            && q.lock_statements() == 1
            && q.un_bef.iter().chain(&q.un_aft).filter(|b| **b).count() == 1
    });
    let oracle_greedy = greedy.count();

    // Solver side: fix the same actions and ask for any model.
    let mut enc = encode_global(&ap, &cs, 1).unwrap();
    let v = enc.vars.clone();
    for (i, x) in locs.iter().enumerate() {
        for a in Act::ALL {
            let on = match a {
                Act::LoBef => i == b1,
                Act::UnAft => i == b4,
                _ => false,
            };
            enc.wcnf.add(vec![Lit::new(v.act(*x, 0, a), on)]);
        }
    }
    let solver_sat = solve_sat(&enc.wcnf).is_some();

    // Synthesized placement releases on both branches of b2.
    let s = synthesize(&ap, &cs, 1, Objective::Coarse).unwrap();
    let patched = apply_placement(p, &s.placement);
    let held = held_oracle(&patched, p, &s.placement.lock_names);
    let b2 = loc(&patched, "b2");
    let last = patched.thread(2).last;
    let branches = patched.cfg().succ[b2.idx()].clone();
    let both = branches.len() == 2 && branches.iter().all(|b| !reaches_without_unlock(&patched, *b, last));

    let req = required(p, &cs);
    let legit = pats.iter().filter(|q| satisfies(&locs, q, &req[&2])).count();
    let ok = oracle_greedy == 0 && !solver_sat && held.is_ok() && both && legit > 0;
    let detail = format!(
        "greedy behaviours {oracle_greedy}, solver {}, {legit} legitimate protecting behaviours, synthesized unlocks both branches: {both}",
        if solver_sat { "SAT" } else { "UNSAT" }
    );
    report(3, "greedy fig9 placement excluded", ok, start, Duration::from_secs(10), &detail);
}

/// Exhaustive single-lock coarse optimum. Merging all locks into one never
/// needs more lock statements, keeps the protected set and the protection
/// of every conflict, so the one-lock optimum is the global one.
fn coarse_optimum(p: &Program, cs: &ConflictSet) -> u64 {
    let k = p.all_statements().len() as u64;
    let req = required(p, cs);
    let mut total = 0;
    for th in &p.threads {
        let (locs, pats) = thread_patterns(p, th.tid);
        let empty = Default::default();
        let r = req.get(&th.tid).unwrap_or(&empty);
        let best = pats
            .iter()
            .filter(|q| satisfies(&locs, q, r))
            .map(|q| 2 * k * q.lock_statements() as u64 + q.il[..locs.len() - 1].iter().filter(|b| **b).count() as u64)
            .min()
            .expect("some legitimate behaviour");
        total += best;
    }
    total
}

/// Cross-thread statement pairs that every placement must put under a
/// common lock: a lower bound on the fine objective.
fn forced_pairs(p: &Program, cs: &ConflictSet) -> usize {
    let mut pairs = BTreeSet::new();
    for c in &cs.conflicts {
        for s in [c.pre.loc, c.mid.loc] {
            let (a, b) = (s.min(c.cpre.loc), s.max(c.cpre.loc));
            if p.node(a).tid != p.node(b).tid {
                pairs.insert((a, b));
            }
        }
    }
    pairs.len()
}

#[test]
fn criterion_4_worksharing_objectives() {
    let start = Instant::now();
    let p = corpus("worksharing");
    let coarse = run(&p, &Options { objective: Objective::Coarse, ..Default::default() }).unwrap();
    let fine = run(&p, &Options { objective: Objective::Fine, ..Default::default() }).unwrap();
    let cs = &coarse.conflicts;

    // Version C: one lock held exactly over x..z in each worker.
    let hc = held_oracle(&coarse.patched, &p, &coarse.placement.lock_names).unwrap();
    let span = ["x", "e", "y", "f", "l", "z"];
    let is_c = coarse.placement.lock_names.len() == 1
        && hc.lock_statements == 2
        && (1..=2).all(|t| {
            ["h", "x", "e", "y", "f", "l", "z", "i", "d"]
                .iter()
                .all(|s| (hc.held(t, &format!("{s}{t}")) != 0) == span.contains(s))
        });
    let c_opt = coarse_optimum(&p, cs);
    let c_cost = coarse_weight(&p, &coarse.placement);

    // Version F: a separate lock for each of x, y, z, nothing else held.
    let hf = held_oracle(&fine.patched, &p, &fine.placement.lock_names).unwrap();
    let is_f = fine.placement.lock_names.len() == 3
        && ["x", "y", "z"].iter().all(|s| {
            let (m1, m2) = (hf.held(1, &format!("{s}1")), hf.held(2, &format!("{s}2")));
            m1.count_ones() == 1 && m1 == m2
        })
        && hf.protected() == 6
        && {
            let ms: BTreeSet<u64> = ["x1", "y1", "z1"].iter().map(|s| hf.held(1, s)).collect();
            ms.len() == 3
        };
    let f_bound = forced_pairs(&p, &fine.conflicts);
    let f_cost = fine_cost(&p, &fine.placement);

    let ok = is_c
        && is_f
        && c_cost == c_opt
        && coarse.report.cost == c_opt
        && f_cost == f_bound
        && hf.shared_pairs() == f_bound
        && fine.report.cost == f_bound as u64
        && coarse.verified()
        && fine.verified();
    let detail = format!(
        "C shape {is_c}, coarse {c_cost} vs enumerated optimum {c_opt}; F shape {is_f}, fine {f_cost} vs forced-pair bound {f_bound}"
    );
    report(4, "work-sharing coarse = C, fine = F", ok, start, Duration::from_secs(30), &detail);
}

fn random_params(rng: &mut ChaCha8Rng) -> PerfParams {
    let mut samples = vec![rng.gen_range(0.05..1.0)];
    for _ in 1..4 {
        let prev = samples[samples.len() - 1];
        samples.push(prev + rng.gen_range(0.0..0.5));
    }
    PerfParams {
        kappa: rng.gen_range(1.0..6.0),
        tc: rng.gen_range(0.5..50.0),
        nu: rng.gen_range(0.5..20.0),
        tl: TlCurve { samples },
        block_costs: BTreeMap::new(),
        freqs: BTreeMap::new(),
        protected: vec![],
    }
}

#[test]
fn criterion_5_contention_fixpoints() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..200 {
        let pp = random_params(&mut rng);
        let same = solve_contention(pp.tc, pp.nu, &pp).map(|c| c.kappa);
        let zero = solve_contention(0.0, 0.0, &pp).map(|c| c.kappa);
        match (same, zero) {
            (Ok(a), Ok(b)) => worst = worst.max((a - pp.kappa).abs()).max((b - 1.0).abs()),
            _ => ok = false,
        }
    }
    ok &= worst <= 1e-6;
    report(5, "contention fixpoints", ok, start, Duration::from_secs(1), &format!("max deviation {worst:.2e} over 200 instances"));
}

/// `(tc', nu')` of every legitimate single-lock placement of fig9 that
/// protects its conflicts, enumerated thread by thread.
fn fig9_pairs(p: &Program, cs: &ConflictSet, pp: &PerfParams) -> BTreeSet<(u64, u64)> {
    let req = required(p, cs);
    let cfg = p.cfg();
    let per_thread: Vec<Vec<(f64, f64)>> = p
        .threads
        .iter()
        .map(|th| {
            let (locs, pats) = thread_patterns(p, th.tid);
            let pos: BTreeMap<LocId, usize> = locs.iter().enumerate().map(|(i, l)| (*l, i)).collect();
            pats.iter()
                .filter(|q| satisfies(&locs, q, &req[&th.tid]))
                .map(|q| {
                    let mut tc = 0.0;
                    let mut nu = 0.0;
                    for (i, x) in locs[..locs.len() - 1].iter().enumerate() {
                        let name = p.name(*x);
                        if q.il[i] {
                            tc += pp.block_costs[name];
                        }
                        let entered = q.lo_bef[i] || cfg.pred[x.idx()].iter().any(|u| q.lo_aft[pos[u]]);
                        if entered {
                            nu += pp.freqs[name];
                        }
                    }
                    (tc, nu)
                })
                .collect()
        })
        .collect();
    let mut out = BTreeSet::new();
    for a in &per_thread[0] {
        for b in &per_thread[1] {
            out.insert(((a.0 + b.0).to_bits(), (a.1 + b.1).to_bits()));
        }
    }
    out
}

#[test]
fn criterion_6_region_search_optimal() {
    let start = Instant::now();
    let ap = abstract_program(&corpus("fig9"));
    let p = &ap.program;
    let cs = fig9_conflicts(&ap);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut checked, mut failures, mut sizes) = (0, Vec::new(), Vec::new());
    for inst in 0..200 {
        if checked >= 25 {
            break;
        }
        let mut pp = random_params(&mut rng);
        for x in p.all_statements() {
            let nm = p.name(x).to_string();
            pp.block_costs.insert(nm.clone(), rng.gen_range(0..16) as f64 / 4.0);
            pp.freqs.insert(nm.clone(), rng.gen_range(0..4) as f64);
            pp.protected.push(nm);
        }
        pp.tc = pp.block_costs.values().sum();
        pp.nu = pp.freqs.values().sum::<f64>() / 2.0;
        let pairs = fig9_pairs(p, &cs, &pp);
        if pairs.len() > 50 {
            continue;
        }
        let oracle = pairs
            .iter()
            .map(|(t, n)| rate(f64::from_bits(*t), f64::from_bits(*n), &pp).unwrap())
            .fold(f64::INFINITY, f64::min);
        let f = augment_constraints(encode_global(&ap, &cs, 1).unwrap(), &ap, &pp);
        let (d1, d2) = bound_derivatives(&pp, 20);
        let res = optimize_perf(&ap, &f, &pp, 10, d1, d2).unwrap();
        let (t, n) = refine_params(p, &pp, &res.placement).unwrap();
        let achieved = rate(t, n, &pp).unwrap();
        let tol = 1e-9 * oracle.abs().max(f64::MIN_POSITIVE);
        if (res.rating - oracle).abs() > tol || (achieved - oracle).abs() > tol {
            failures.push(format!("instance {inst}: {} vs {oracle}", res.rating));
        }
        sizes.push(pairs.len());
        checked += 1;
    }
    let ok = checked >= 20 && failures.is_empty();
    let detail = format!(
        "{checked} instances with {}..={} feasible pairs; mismatches {failures:?}",
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0)
    );
    report(6, "region search equals exhaustive minimum", ok, start, Duration::from_secs(60), &detail);
}

#[test]
fn criterion_7_corpus_self_check() {
    let start = Instant::now();
    let mut problems = Vec::new();
    let mut outputs = 0;
    let mut exhausted = Vec::new();
    for name in corpus_names() {
        let p = corpus(&name);
        for objective in [Objective::Coarse, Objective::Fine] {
            let s = match run(&p, &Options { objective, ..Default::default() }) {
                Ok(s) => s,
                Err(e) => {
                    problems.push(format!("{name}/{objective:?}: {e}"));
                    continue;
                }
            };
            outputs += 1;
            let v = s.report.verification.as_ref().expect("verification ran");
            if !v.violations.is_empty() {
                problems.push(format!("{name}/{objective:?}: {:?}", v.violations));
            }
            if v.bound_exhausted {
                exhausted.push(format!("{name}/{objective:?}"));
            }
            if let Err(e) = held_oracle(&s.patched, &p, &s.placement.lock_names) {
                problems.push(format!("{name}/{objective:?}: {e}"));
            }
        }
    }
    let detail = format!(
        "{outputs} outputs; violations {problems:?}; bound exhausted without a genuine counterexample: {exhausted:?}"
    );
    report(7, "self-check on every corpus output", problems.is_empty(), start, Duration::from_secs(300), &detail);
}

#[test]
fn criterion_8_speedup_prediction() {
    let start = Instant::now();
    let p = corpus("kvstore");
    let ap = abstract_program(&p);
    let (cs, ..) = infer_conflicts(&ap, &Options::default()).unwrap();
    let coarse: LockPlacement = synthesize(&ap, &cs, 1, Objective::Coarse).unwrap().placement;
    let fine: LockPlacement = synthesize(&ap, &cs, 1, Objective::Fine).unwrap().placement;
    let sim = SimConfig { threads: 4, workload: Workload::parse("n=20").unwrap(), ..Default::default() };
    let scales = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let pts = speedup_sweep(&p, &coarse, &fine, &["C1", "C2"], &scales, &sim).unwrap();
    let sign = pts.iter().filter(|q| (q.predicted > 1.0) == (q.measured > 1.0)).count();
    let worst = pts.iter().map(|q| (q.predicted - q.measured).abs() / q.measured).fold(0.0, f64::max);
    let ok = pts.len() >= 8 && sign * 10 >= pts.len() * 7 && worst <= 0.25;
    let table: Vec<String> = pts.iter().map(|q| format!("{}:{:.3}/{:.3}", q.scale, q.predicted, q.measured)).collect();
    let detail = format!("sign agreement {sign}/{}, worst relative error {:.1}%; {}", pts.len(), 100.0 * worst, table.join(" "));
    report(8, "predicted vs simulated speed-up", ok, start, Duration::from_secs(300), &detail);
}

fn shared_accesses_per_thread(ap: &AbstractProgram) -> usize {
    let p = &ap.program;
    p.threads
        .iter()
        .map(|th| {
            p.statements(th.tid)
                .iter()
                .map(|l| ap.node(*l).ops.iter().filter(|a| a.var() != ap.dev()).count())
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0)
}

#[test]
fn criterion_9_inclusion_matches_brute_force() {
    let start = Instant::now();
    const MAX_LEN: usize = 12;
    let mut programs: Vec<(String, Program)> = Vec::new();
    for name in corpus_names() {
        let p = corpus(&name);
        if shared_accesses_per_thread(&abstract_program(&p)) > 4 {
            continue;
        }
        // The synthesized outputs exercise the included side.
        if let Ok(s) = run(&p, &Options { verify: false, ..Default::default() }) {
            if !s.placement.is_empty() {
                programs.push((format!("{name}+locks"), parse_program(&s.text).unwrap()));
            }
        }
        programs.push((name, p));
    }
    let mut mismatches = Vec::new();
    let mut tally = (0, 0);
    for (name, p) in &programs {
        let ap = abstract_program(p);
        let pn = build_p_nfa(&ap, &ConflictSet::default());
        let np = build_np_nfa(&ap);
        let pw = enumerate_executions(&pn, MAX_LEN);
        let nw = enumerate_executions(&np, MAX_LEN);
        for k in [0, 1, 2, 4] {
            let oracle = pw.iter().all(|w| nw.iter().any(|u| equivalent_mod_i(w, u, k)));
            let got = check_inclusion(&pn, &np, k, Some(MAX_LEN)).is_included();
            if got != oracle {
                mismatches.push(format!("{name} k={k}: checker {got}, oracle {oracle}"));
            }
            if oracle {
                tally.0 += 1;
            } else {
                tally.1 += 1;
            }
        }
    }
    let names: Vec<&str> = programs.iter().map(|(n, _)| n.as_str()).collect();
    let detail = format!(
        "{} programs {names:?}, {} included / {} not; mismatches {mismatches:?}",
        programs.len(),
        tally.0,
        tally.1
    );
    report(9, "inclusion checker equals brute force", mismatches.is_empty(), start, Duration::from_secs(120), &detail);
}
