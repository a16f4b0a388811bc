//! Region search over the `(tc', nu')` plane for the placement with the
//! best predicted performance.

use super::{block_of, rate, PerfError, PerfParams};
use crate::abstraction::AbstractProgram;
use crate::lang::LocId;
use crate::lockcons::maxsat::{solve_lexmin, solve_sat, Lit, PbConstraint, Var, Wcnf};
use crate::lockcons::{decode_placement, Act, Encoding, LockPlacement};
use serde::Serialize;
use std::collections::BTreeMap;

/// Placement constraints extended with block indicators `b_i` (some member
/// of block `i` is protected) and lock-entry indicators `t_v` (a lock is
/// acquired on an edge into `v`). `tc'` and `nu'` are linear in them.
#[derive(Clone, Debug)]
pub struct PerfFormula {
    pub enc: Encoding,
    pub blocks: Vec<(String, Var)>,
    pub entries: Vec<(LocId, Var)>,
    pub tc_terms: Vec<(Lit, f64)>,
    pub nu_terms: Vec<(Lit, f64)>,
}

impl PerfFormula {
    pub fn wcnf(&self) -> &Wcnf {
        &self.enc.wcnf
    }

    /// `(tc', nu')` of a model.
    pub fn eval(&self, model: &[bool]) -> (f64, f64) {
        let sum = |ts: &[(Lit, f64)]| {
            ts.iter().filter(|(l, _)| model[l.var() as usize] != l.is_neg()).map(|t| t.1).sum::<f64>()
        };
        (sum(&self.tc_terms), sum(&self.nu_terms))
    }

    fn eps(&self) -> f64 {
        let scale = self.tc_terms.iter().chain(&self.nu_terms).map(|t| t.1).fold(1.0, f64::max);
        1e-7 * scale
    }
}

/// Rectangle `tc1 ≤ tc' ≤ tc2 ∧ nu1 ≤ nu' ≤ nu2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Region {
    pub tc1: f64,
    pub tc2: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl Region {
    pub fn width(&self) -> f64 {
        self.tc2 - self.tc1
    }

    pub fn height(&self) -> f64 {
        self.nu2 - self.nu1
    }

    pub fn contains(&self, t: f64, n: f64) -> bool {
        t >= self.tc1 && t <= self.tc2 && n >= self.nu1 && n <= self.nu2
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.tc1 + self.tc2), 0.5 * (self.nu1 + self.nu2))
    }

    /// `k × k` equal sub-rectangles.
    pub fn shatter(&self, k: usize) -> Vec<Region> {
        let (w, h) = (self.width() / k as f64, self.height() / k as f64);
        let mut out = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                out.push(Region {
                    tc1: self.tc1 + w * i as f64,
                    tc2: if i + 1 == k { self.tc2 } else { self.tc1 + w * (i + 1) as f64 },
                    nu1: self.nu1 + h * j as f64,
                    nu2: if j + 1 == k { self.nu2 } else { self.nu1 + h * (j + 1) as f64 },
                });
            }
        }
        out
    }
}

/// Add block and lock-entry indicators for lock 0 and forbid protecting any
/// statement the coarse placement leaves unprotected.
pub fn augment_constraints(mut enc: Encoding, ap: &AbstractProgram, params: &PerfParams) -> PerfFormula {
    let p = &ap.program;
    let cfg = p.cfg();
    let blocks = block_of(p);
    let v = enc.vars.clone();
    let f = &mut enc.wcnf;
    for x in &v.statements {
        if !params.protected.iter().any(|s| s == p.name(*x)) {
            for l in 0..v.locks {
                f.add(vec![Lit::neg(v.in_lo(*x, l))]);
            }
        }
    }
    let mut members: BTreeMap<String, Vec<LocId>> = BTreeMap::new();
    for x in &v.statements {
        members.entry(blocks[x.idx()].clone().expect("statement has a block")).or_default().push(*x);
    }
    let mut out_blocks = Vec::new();
    let mut tc_terms = Vec::new();
    for (name, ms) in &members {
        let b = f.new_var(format!("b({name})"));
        let ins: Vec<Lit> = ms.iter().flat_map(|x| (0..v.locks).map(|l| Lit::pos(v.in_lo(*x, l)))).collect();
        def_or(f, b, &ins);
        let c = params.block_costs.get(name).copied().unwrap_or(0.0);
        if c > 0.0 {
            tc_terms.push((Lit::pos(b), c));
        }
        out_blocks.push((name.clone(), b));
    }
    let mut entries = Vec::new();
    let mut nu_terms = Vec::new();
    for x in &v.statements {
        let t = f.new_var(format!("t({})", p.name(*x)));
        let mut ins: Vec<Lit> = (0..v.locks).map(|l| Lit::pos(v.act(*x, l, Act::LoBef))).collect();
        for u in &cfg.pred[x.idx()] {
            ins.extend((0..v.locks).map(|l| Lit::pos(v.act(*u, l, Act::LoAft))));
        }
        def_or(f, t, &ins);
        let fr = params.freqs.get(p.name(*x)).copied().unwrap_or(0.0);
        if fr > 0.0 {
            nu_terms.push((Lit::pos(t), fr));
        }
        entries.push((*x, t));
    }
    PerfFormula { enc, blocks: out_blocks, entries, tc_terms, nu_terms }
}

fn def_or(f: &mut Wcnf, out: Var, ins: &[Lit]) {
    let mut big = vec![Lit::neg(out)];
    big.extend_from_slice(ins);
    f.add(big);
    for l in ins {
        f.add(vec![!*l, Lit::pos(out)]);
    }
}

fn restrict(f: &PerfFormula, reg: &Region) -> Wcnf {
    let e = f.eps();
    let mut w = f.enc.wcnf.clone();
    w.soft.clear();
    w.pb.push(PbConstraint::at_least(f.tc_terms.clone(), reg.tc1 - e));
    w.pb.push(PbConstraint::at_most(f.tc_terms.clone(), reg.tc2 + e));
    w.pb.push(PbConstraint::at_least(f.nu_terms.clone(), reg.nu1 - e));
    w.pb.push(PbConstraint::at_most(f.nu_terms.clone(), reg.nu2 + e));
    w
}

/// Exclude the value pair `(t, n)` from `w`.
fn block_pair(f: &PerfFormula, w: &mut Wcnf, t: f64, n: f64) {
    let e = f.eps();
    let g: Vec<Var> = (0..4).map(|i| w.new_var(format!("away{i}"))).collect();
    w.pb.push(PbConstraint::at_most(f.tc_terms.clone(), t - e).guarded(Lit::pos(g[0])));
    w.pb.push(PbConstraint::at_least(f.tc_terms.clone(), t + e).guarded(Lit::pos(g[1])));
    w.pb.push(PbConstraint::at_most(f.nu_terms.clone(), n - e).guarded(Lit::pos(g[2])));
    w.pb.push(PbConstraint::at_least(f.nu_terms.clone(), n + e).guarded(Lit::pos(g[3])));
    w.add(g.iter().map(|v| Lit::pos(*v)).collect::<Vec<_>>());
}

enum Query {
    Unsat,
    Unique(Vec<bool>),
    Multiple(Vec<bool>),
}

fn query(f: &PerfFormula, reg: &Region) -> Query {
    let mut w = restrict(f, reg);
    let Some(m) = solve_sat(&w) else { return Query::Unsat };
    let (t, n) = f.eval(&m);
    block_pair(f, &mut w, t, n);
    match solve_sat(&w) {
        None => Query::Unique(m),
        Some(_) => Query::Multiple(m),
    }
}

/// Whether all models inside `reg` have the same `(tc', nu')`.
pub fn unique_performance(f: &PerfFormula, reg: &Region) -> bool {
    !matches!(query(f, reg), Query::Multiple(_))
}

/// Every feasible `(tc', nu')` pair inside `reg`.
pub fn enumerate_pairs(f: &PerfFormula, reg: &Region) -> Vec<(f64, f64)> {
    let mut w = restrict(f, reg);
    let mut out = Vec::new();
    while let Some(m) = solve_sat(&w) {
        let (t, n) = f.eval(&m);
        out.push((t, n));
        block_pair(f, &mut w, t, n);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfResult {
    pub placement: LockPlacement,
    pub tc1: f64,
    pub nu1: f64,
    pub rating: f64,
    /// Solver calls made while searching.
    pub queries: usize,
    pub pruned: usize,
}

#[derive(Clone, Copy)]
struct Pt {
    t: f64,
    n: f64,
    r: f64,
}

fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    a.2 < b.2 || (a.2 == b.2 && (a.0, a.1) < (b.0, b.1))
}

fn rating(params: &PerfParams, t: f64, n: f64) -> f64 {
    rate(t, n, params).unwrap_or(f64::INFINITY)
}

/// Region search for the model with the smallest rating. `d1`, `d2` bound
/// the slopes of the rating along `tc'` and `nu'`.
pub fn optimize_perf(
    ap: &AbstractProgram,
    f: &PerfFormula,
    params: &PerfParams,
    k: usize,
    d1: f64,
    d2: f64,
) -> Result<PerfResult, PerfError> {
    let k = k.max(2);
    let (tc, numax) = (params.tc.max(0.0), params.nu_max().max(0.0));
    let root = Region { tc1: 0.0, tc2: tc, nu1: 0.0, nu2: numax };
    let tiny = |r: &Region| r.width() <= 1e-4 * tc.max(1e-9) && r.height() <= 1e-4 * numax.max(1e-9);

    let mut pts: Vec<Pt> = Vec::new();
    for i in 0..=2 * k {
        for j in 0..=2 * k {
            let t = tc * i as f64 / (2 * k) as f64;
            let n = numax * j as f64 / (2 * k) as f64;
            pts.push(Pt { t, n, r: rating(params, t, n) });
        }
    }
    let mut regions = vec![root];
    let mut best: Option<(f64, f64, f64)> = None;
    let (mut queries, mut pruned) = (0usize, 0usize);
    let consider = |best: &mut Option<(f64, f64, f64)>, t: f64, n: f64| {
        let c = (t, n, rating(params, t, n));
        if best.map_or(true, |b| better(c, b)) {
            *best = Some(c);
        }
    };

    while !regions.is_empty() {
        pts.retain(|p| regions.iter().any(|r| r.contains(p.t, p.n)));
        if pts.is_empty() {
            for r in &regions {
                let (t, n) = r.center();
                pts.push(Pt { t, n, r: rating(params, t, n) });
            }
        }
        let p = *pts.iter().min_by(|a, b| a.r.total_cmp(&b.r).then(a.t.total_cmp(&b.t)).then(a.n.total_cmp(&b.n))).unwrap();
        let ri = regions.iter().position(|r| r.contains(p.t, p.n)).unwrap();
        let reg = regions[ri];
        queries += 1;
        match query(f, &reg) {
            Query::Unsat => {
                regions.swap_remove(ri);
            }
            Query::Unique(m) => {
                let (t, n) = f.eval(&m);
                consider(&mut best, t, n);
                regions.swap_remove(ri);
            }
            Query::Multiple(m) => {
                let (t, n) = f.eval(&m);
                consider(&mut best, t, n);
                regions.swap_remove(ri);
                if tiny(&reg) {
                    for (t, n) in enumerate_pairs(f, &reg) {
                        queries += 1;
                        consider(&mut best, t, n);
                    }
                } else {
                    for s in reg.shatter(k) {
                        if !pts.iter().any(|q| s.contains(q.t, q.n)) {
                            let (t, n) = s.center();
                            pts.push(Pt { t, n, r: rating(params, t, n) });
                        }
                        regions.push(s);
                    }
                }
            }
        }
        if let Some((_, _, min)) = best {
            let before = regions.len();
            regions.retain(|r| {
                let lo = pts.iter().filter(|q| r.contains(q.t, q.n)).map(|q| q.r).fold(f64::INFINITY, f64::min);
                !(lo - d1 * r.width() - d2 * r.height() > min)
            });
            pruned += before - regions.len();
        }
    }

    let (t, n, r) = best.ok_or(PerfError::Unsat)?;
    if !r.is_finite() {
        rate(t, n, params)?;
    }
    let e = f.eps();
    let mut w = restrict(f, &Region { tc1: t - e, tc2: t + e, nu1: n - e, nu2: n + e });
    w.soft.clear();
    let sol = solve_lexmin(&w, f.enc.vars.num_decision).ok_or(PerfError::Unsat)?;
    let placement = decode_placement(ap, &f.enc, &sol.model);
    Ok(PerfResult { placement, tc1: t, nu1: n, rating: r, queries, pruned })
}
