use super::*;
use crate::abstraction::{abstract_program, AbstractProgram};
use crate::automata::{ConflictSet, Model, Point};
use crate::cegen::{derive_conflicts, MutexConstraint, Region as MRegion};
use crate::lang::parse_program;
use crate::lockcons::maxsat::{solve_maxsat, solve_sat, Lit};
use crate::lockcons::{decode_placement, encode_global, synthesize, Objective};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(kappa: f64, tc: f64, tl: f64) -> PerfParams {
    PerfParams {
        kappa,
        tc,
        nu: 1.0,
        tl: TlCurve::constant(tl),
        block_costs: Default::default(),
        freqs: Default::default(),
        protected: vec![],
    }
}

/// Contention-equation residual, written out independently.
fn residual(k: f64, kappa: f64, tc: f64, tc1: f64, nu1: f64, tl: f64) -> f64 {
    let a = (tc1 + nu1 * tl) * f64::max(k - 0.5, 1.0);
    1.0 + (kappa - 1.0) * a / ((tc - tc1) + a) - k
}

fn bisection(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) * f(hi) <= 0.0);
    for _ in 0..200 {
        let m = (lo + hi) / 2.0;
        if f(lo) * f(m) <= 0.0 {
            hi = m;
        } else {
            lo = m;
        }
    }
    (lo + hi) / 2.0
}

#[test]
fn contention_matches_bisection() {
    let oracle = bisection(|k| residual(k, 4.0, 100.0, 50.0, 2.0, 1.0), 1.0, 4.0);
    let got = solve_contention(50.0, 2.0, &params(4.0, 100.0, 1.0)).unwrap();
    assert!((got.kappa - oracle).abs() < 1e-6, "{} vs {oracle}", got.kappa);
    assert!(!got.ambiguous);
    let r = rate(50.0, 2.0, &params(4.0, 100.0, 1.0)).unwrap();
    let want = 50.0 + (50.0 + 2.0) * f64::max(oracle - 0.5, 1.0);
    assert!((r - want).abs() < 1e-4);
}

#[test]
fn contention_endpoints() {
    let p = params(3.7, 40.0, 0.3);
    assert!((solve_contention(40.0, 5.0, &p).unwrap().kappa - 3.7).abs() < 1e-6);
    assert!((solve_contention(0.0, 0.0, &p).unwrap().kappa - 1.0).abs() < 1e-6);
    assert!((rate(0.0, 0.0, &p).unwrap() - 40.0).abs() < 1e-9);
    let full = (40.0 + 5.0 * 0.3) * (3.7 - 0.5);
    assert!((rate(40.0, 5.0, &p).unwrap() - full).abs() < 1e-5);
}

proptest! {
    #[test]
    fn contention_is_a_root(kappa in 1.0f64..8.0, tc in 1.0f64..100.0, frac in 0.0f64..1.0, nu1 in 0.0f64..10.0, tl in 0.0f64..2.0) {
        let tc1 = tc * frac;
        let c = solve_contention(tc1, nu1, &params(kappa, tc, tl)).unwrap();
        prop_assert!(c.kappa >= 1.0 - 1e-9 && c.kappa <= kappa + 1e-9);
        prop_assert!(residual(c.kappa, kappa, tc, tc1, nu1, tl).abs() <= 1e-6);
    }
}

#[test]
fn tl_interpolates_and_clamps() {
    let t = TlCurve { samples: vec![1.0, 2.0, 4.0] };
    assert_eq!(t.eval(0.0), 1.0);
    assert_eq!(t.eval(2.5), 3.0);
    assert_eq!(t.eval(9.0), 4.0);
}

#[test]
fn multi_lock_reduces_and_is_symmetric() {
    let p = params(4.0, 100.0, 1.0);
    let one = multi_lock_contention(&[(50.0, 2.0)], &p).unwrap();
    assert!((one[0] - solve_contention(50.0, 2.0, &p).unwrap().kappa).abs() < 1e-6);
    let two = multi_lock_contention(&[(30.0, 1.0), (30.0, 1.0)], &p).unwrap();
    assert!((two[0] - two[1]).abs() < 1e-9);
    // Asymmetric split against a joint bisection: κ2 as a function of κ1
    // is solved inside, κ1 outside.
    let parts = [(40.0, 1.0), (10.0, 3.0)];
    let got = multi_lock_contention(&parts, &p).unwrap();
    let a = |t: f64, n: f64, k: f64| (t + n) * f64::max(k - 0.5, 1.0);
    let k2_of = |k1: f64| {
        bisection(|k2| 1.0 + 3.0 * a(10.0, 3.0, k2) / (50.0 + a(40.0, 1.0, k1) + a(10.0, 3.0, k2)) - k2, 1.0, 4.0)
    };
    let k1 = bisection(|k1| 1.0 + 3.0 * a(40.0, 1.0, k1) / (50.0 + a(40.0, 1.0, k1) + a(10.0, 3.0, k2_of(k1))) - k1, 1.0, 4.0);
    assert!((got[0] - k1).abs() < 1e-5 && (got[1] - k2_of(k1)).abs() < 1e-5, "{got:?} vs {k1}");
}

#[test]
fn derivative_bounds_cover_finer_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let mut p = params(rng.gen_range(1.0..6.0), rng.gen_range(5.0..50.0), rng.gen_range(0.0..1.0));
        p.freqs.insert("a".into(), rng.gen_range(1.0..20.0));
        let (d1, d2) = bound_derivatives(&p, 10);
        let n = 20;
        let (w, h) = (p.tc, p.nu_max());
        let r = |i: usize, j: usize| rate(w * i as f64 / n as f64, h * j as f64 / n as f64, &p).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((r(i + 1, j) - r(i, j)).abs() / (w / n as f64) <= d1 + 1e-9);
                assert!((r(i, j + 1) - r(i, j)).abs() / (h / n as f64) <= d2 + 1e-9);
            }
        }
    }
}

#[test]
fn simulation_is_linear_for_one_thread() {
    let p = parse_program("decl shared x;\nthread T { a: x := 1; b: x := 2; }").unwrap();
    let tr = simulate(&p, &SimConfig::default(), 3).unwrap();
    assert_eq!(tr.finish, vec![2.0]);
    assert_eq!(tr.acquisitions, 0);
    assert_eq!(tr.occupancy(|_| true), 1.0);
}

const QUEUE: &str = "decl shared x;\ndecl local i, n;\ndecl lock m;\n\
thread T {\n    h: while (i < n) {\n        f: i := i + 1;\n        l: lock(m);\n        c: x := x + 1;\n        u: unlock(m);\n    }\n}\n";

fn queue_kappa(threads: usize, free: f64, crit: f64) -> f64 {
    let src = format!("{QUEUE}cost h = 0;\ncost f = {free};\ncost c = {crit};\n");
    let p = parse_program(&src).unwrap();
    let mut cfg = SimConfig { threads, lock_base: 0.0, lock_slope: 0.0, ..Default::default() };
    cfg.workload.init.insert("n".into(), 400);
    let tr = simulate(&p, &cfg, 1).unwrap();
    let s = [p.loc_named("l", None).unwrap(), p.loc_named("c", None).unwrap()];
    tr.occupancy(|l| s.contains(&l))
}

#[test]
fn saturated_lock_matches_closed_queue() {
    // Saturated deterministic closed queue: the lock never idles, so by
    // Little's law N - f/c threads are inside or queued.
    for (n, f, c) in [(4, 3.0, 3.0), (4, 1.0, 2.0), (3, 2.0, 4.0)] {
        let want = n as f64 - f / c;
        let got = queue_kappa(n, f, c);
        assert!((got - want).abs() <= 0.1 * want, "n={n} f={f} c={c}: {got} vs {want}");
    }
    // Light load: threads fall into step and never overlap.
    let got = queue_kappa(2, 5.0, 1.0);
    assert!((got - 1.0).abs() <= 0.1, "{got}");
}

#[test]
fn lock_overhead_curve() {
    let cfg = SimConfig { runs: 1, ..Default::default() };
    let tl = measure_tl(4, &cfg);
    assert_eq!(tl.samples.len(), 4);
    assert!((tl.samples[0] - cfg.lock_base).abs() < 1e-9);
    assert!(tl.samples[3] >= tl.samples[0]);
}

fn fig9() -> (AbstractProgram, ConflictSet) {
    let ap = abstract_program(&parse_program(include_str!("../../corpus/fig9.lsy")).unwrap());
    let m = Model::new(&ap);
    let l = |n: &str| Point::at(ap.program.loc_named(n, None).unwrap());
    let mc = MutexConstraint::new(
        MRegion { tid: 1, start: l("a1"), end: l("a2") },
        MRegion { tid: 2, start: l("b1"), end: Point::at(ap.program.thread(2).last) },
    );
    let conflicts = derive_conflicts(&m, &mc);
    let cs = ConflictSet { owner: vec![0; conflicts.len()], conflicts, clauses: vec![vec![0]], num_mutexes: 1 };
    (ap, cs)
}

fn fig9_params() -> (AbstractProgram, ConflictSet, PerfParams) {
    let (ap, cs) = fig9();
    let coarse = synthesize(&ap, &cs, 1, Objective::Coarse).unwrap().placement;
    let cfg = SimConfig { threads: 4, runs: 2, ..Default::default() };
    let pp = profile(&ap.program, &coarse, &cfg, TlCurve::constant(0.2)).unwrap();
    (ap, cs, pp)
}

#[test]
fn single_thread_profile_has_unit_contention() {
    let (ap, cs) = fig9();
    let coarse = synthesize(&ap, &cs, 1, Objective::Coarse).unwrap().placement;
    let cfg = SimConfig { threads: 1, runs: 2, ..Default::default() };
    let pp = profile(&ap.program, &coarse, &cfg, TlCurve::constant(0.2)).unwrap();
    assert_eq!(pp.kappa, 1.0);
    assert_eq!(pp.freqs["a1"], 1.0);
}

#[test]
fn refinement_endpoints() {
    let (ap, cs, pp) = fig9_params();
    let coarse = synthesize(&ap, &cs, 1, Objective::Coarse).unwrap().placement;
    let (t, n) = refine_params(&ap.program, &pp, &coarse).unwrap();
    assert!((t - pp.tc).abs() < 1e-12 && (n - pp.nu).abs() < 1e-12);
    assert_eq!(refine_params(&ap.program, &pp, &LockPlacement::default()).unwrap(), (0.0, 0.0));
    let k = solve_contention(t, n, &pp).unwrap().kappa;
    assert!((k - pp.kappa).abs() < 1e-6);
    let mut narrow = pp.clone();
    narrow.protected.retain(|s| s != "a1");
    assert!(matches!(refine_params(&ap.program, &narrow, &coarse), Err(PerfError::NotARefinement(_))));
}

/// Perf formula over the fig9 program with every statement allowed in the lock and
/// random measured costs.
fn random_formula(seed: u64) -> (AbstractProgram, PerfFormula, PerfParams) {
    let (ap, cs) = fig9();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stmts = ap.program.all_statements();
    let mut pp = params(rng.gen_range(1.0..4.0), 0.0, rng.gen_range(0.0..3.0));
    for x in &stmts {
        let nm = ap.program.name(*x).to_string();
        pp.block_costs.insert(nm.clone(), (rng.gen_range(0..20) as f64) / 4.0);
        pp.freqs.insert(nm.clone(), rng.gen_range(0..4) as f64);
        pp.protected.push(nm);
    }
    pp.tc = pp.block_costs.values().sum();
    pp.nu = pp.freqs.values().sum::<f64>() / 2.0;
    let enc = encode_global(&ap, &cs, 1).unwrap();
    let f = augment_constraints(enc, &ap, &pp);
    (ap, f, pp)
}

/// Every assignment to the indicator variables that extends to a model.
fn indicator_assignments(f: &PerfFormula) -> Vec<Vec<bool>> {
    let ind: Vec<u32> = f.blocks.iter().map(|b| b.1).chain(f.entries.iter().map(|e| e.1)).collect();
    let mut w = f.wcnf().clone();
    let mut out = Vec::new();
    while let Some(m) = solve_sat(&w) {
        w.add(ind.iter().map(|v| Lit::new(*v, !m[*v as usize])).collect::<Vec<_>>());
        out.push(m);
    }
    out
}

#[test]
fn indicators_agree_with_decoded_placement() {
    let (ap, f, pp) = random_formula(3);
    for m in indicator_assignments(&f) {
        let pl = decode_placement(&ap, &f.enc, &m);
        let (t, n) = f.eval(&m);
        let (t2, n2) = refine_params(&ap.program, &pp, &pl).unwrap();
        assert!((t - t2).abs() < 1e-9 && (n - n2).abs() < 1e-9, "{:?}", pl.describe(&ap.program));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn optimal_models_agree_with_refine_params(seed in 0u64..1000, w in proptest::collection::vec(0u64..5, 64)) {
        let (ap, mut f, pp) = random_formula(seed);
        let n = f.enc.vars.num_decision.min(w.len());
        for (v, wt) in w.iter().take(n).enumerate() {
            if *wt > 0 {
                f.enc.wcnf.soft.push((Lit::new(v as u32, *wt % 2 == 0), *wt));
            }
        }
        let sol = solve_maxsat(f.wcnf()).unwrap();
        let pl = decode_placement(&ap, &f.enc, &sol.model);
        let (t, n) = f.eval(&sol.model);
        let (t2, n2) = refine_params(&ap.program, &pp, &pl).unwrap();
        prop_assert!((t - t2).abs() < 1e-9 && (n - n2).abs() < 1e-9);
    }
}

#[test]
fn uniqueness_queries() {
    let (_, f, pp) = random_formula(5);
    let nm = pp.nu_max();
    let empty = Region { tc1: pp.tc + 1.0, tc2: pp.tc + 2.0, nu1: 0.0, nu2: nm };
    assert!(unique_performance(&f, &empty));
    let origin = Region { tc1: 0.0, tc2: 0.0, nu1: 0.0, nu2: 0.0 };
    assert!(unique_performance(&f, &origin));
    let all = Region { tc1: 0.0, tc2: pp.tc, nu1: 0.0, nu2: nm };
    assert!(!unique_performance(&f, &all));
}

#[test]
fn region_search_matches_exhaustive_minimum() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let (ap, f, pp) = random_formula(seed);
        let mut pairs: Vec<(f64, f64)> = indicator_assignments(&f).iter().map(|m| f.eval(m)).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pairs.dedup();
        if pairs.len() > 50 {
            continue;
        }
        let oracle = pairs.iter().map(|(t, n)| rate(*t, *n, &pp).unwrap()).fold(f64::INFINITY, f64::min);
        let (d1, d2) = bound_derivatives(&pp, 20);
        let res = optimize_perf(&ap, &f, &pp, 10, d1, d2).unwrap();
        assert!((res.rating - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "seed {seed}: {} vs {oracle}", res.rating);
        let (t, n) = refine_params(&ap.program, &pp, &res.placement).unwrap();
        assert!((rate(t, n, &pp).unwrap() - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} small instances");
}
