//! Weighted MaxSAT by branch and bound on top of a small CDCL solver.
//!
//! Hard constraints are clauses and (optionally guarded) linear `≤`
//! constraints over literals. Soft constraints are literals with integer
//! weights; the cost of an assignment is the weight of its false soft
//! literals. While searching, any partial assignment whose false soft
//! literals already reach the best known cost is refuted by a learned
//! clause, so the search both branches and bounds.

use std::fmt::Write as _;

pub type Var = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(u32);

impl Lit {
    pub fn pos(v: Var) -> Lit {
        Lit(v << 1)
    }
    pub fn neg(v: Var) -> Lit {
        Lit((v << 1) | 1)
    }
    pub fn new(v: Var, positive: bool) -> Lit {
        if positive {
            Lit::pos(v)
        } else {
            Lit::neg(v)
        }
    }
    pub fn var(self) -> Var {
        self.0 >> 1
    }
    pub fn is_neg(self) -> bool {
        self.0 & 1 == 1
    }
    fn code(self) -> usize {
        self.0 as usize
    }
    /// DIMACS form.
    pub fn dimacs(self) -> i64 {
        let v = self.var() as i64 + 1;
        if self.is_neg() {
            -v
        } else {
            v
        }
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

/// `guard ⇒ Σ coef·lit ≤ bound`, coefficients positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PbConstraint {
    pub terms: Vec<(Lit, f64)>,
    pub bound: f64,
    pub guard: Option<Lit>,
}

impl PbConstraint {
    pub fn at_most(terms: Vec<(Lit, f64)>, bound: f64) -> Self {
        PbConstraint { terms, bound, guard: None }
    }

    /// `Σ coef·lit ≥ lo`, rewritten over negated literals.
    pub fn at_least(terms: Vec<(Lit, f64)>, lo: f64) -> Self {
        let total: f64 = terms.iter().map(|t| t.1).sum();
        PbConstraint { terms: terms.into_iter().map(|(l, a)| (!l, a)).collect(), bound: total - lo, guard: None }
    }

    pub fn guarded(mut self, g: Lit) -> Self {
        self.guard = Some(g);
        self
    }

    pub fn holds(&self, model: &[bool]) -> bool {
        let val = |l: Lit| model[l.var() as usize] != l.is_neg();
        if let Some(g) = self.guard {
            if !val(g) {
                return true;
            }
        }
        let s: f64 = self.terms.iter().filter(|(l, _)| val(*l)).map(|t| t.1).sum();
        s <= self.bound + tol(self.bound)
    }
}

fn tol(b: f64) -> f64 {
    1e-9 * b.abs().max(1.0)
}

/// Hard clauses, hard linear constraints and weighted soft literals.
#[derive(Clone, Debug, Default)]
pub struct Wcnf {
    pub num_vars: usize,
    pub hard: Vec<Vec<Lit>>,
    pub pb: Vec<PbConstraint>,
    pub soft: Vec<(Lit, u64)>,
    pub names: Vec<String>,
}

impl Wcnf {
    pub fn new_var(&mut self, name: impl Into<String>) -> Var {
        self.num_vars += 1;
        self.names.push(name.into());
        (self.num_vars - 1) as Var
    }

    pub fn add(&mut self, c: impl Into<Vec<Lit>>) {
        self.hard.push(c.into());
    }

    pub fn cost(&self, model: &[bool]) -> u64 {
        self.soft.iter().filter(|(l, _)| model[l.var() as usize] == l.is_neg()).map(|s| s.1).sum()
    }

    pub fn satisfies_hard(&self, model: &[bool]) -> bool {
        let val = |l: &Lit| model[l.var() as usize] != l.is_neg();
        self.hard.iter().all(|c| c.iter().any(val)) && self.pb.iter().all(|p| p.holds(model))
    }

    /// DIMACS WCNF text; linear constraints are listed as comments.
    pub fn to_dimacs(&self) -> String {
        let top: u64 = self.soft.iter().map(|s| s.1).sum::<u64>() + 1;
        let mut s = String::new();
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(s, "c var {} {}", i + 1, n);
        }
        for p in &self.pb {
            let terms: Vec<String> = p.terms.iter().map(|(l, a)| format!("{a}*x{}", l.dimacs())).collect();
            let g = p.guard.map_or(String::new(), |g| format!("x{} => ", g.dimacs()));
            let _ = writeln!(s, "c pb {g}{} <= {}", terms.join(" + "), p.bound);
        }
        let _ = writeln!(s, "p wcnf {} {} {}", self.num_vars, self.hard.len() + self.soft.len(), top);
        for c in &self.hard {
            let lits: Vec<String> = c.iter().map(|l| l.dimacs().to_string()).collect();
            let _ = writeln!(s, "{} {} 0", top, lits.join(" "));
        }
        for (l, w) in &self.soft {
            let _ = writeln!(s, "{} {} 0", w, l.dimacs());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    pub model: Vec<bool>,
    pub cost: u64,
}

const NONE: u32 = u32::MAX;

enum Outcome {
    Sat,
    Unsat,
}

struct Solver {
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<u32>>,
    pbs: Vec<PbConstraint>,
    pb_occ: Vec<Vec<u32>>,
    val: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<u32>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    inc: f64,
    seen: Vec<bool>,
    softs: Vec<(Lit, u64)>,
    soft_occ: Vec<Vec<u32>>,
    lb: u64,
    ub: Option<u64>,
    unsat: bool,
}

impl Solver {
    fn new(f: &Wcnf, with_softs: bool) -> Solver {
        let n = f.num_vars;
        let mut s = Solver {
            clauses: Vec::new(),
            watches: vec![Vec::new(); 2 * n],
            pbs: Vec::new(),
            pb_occ: vec![Vec::new(); 2 * n],
            val: vec![-1; n],
            level: vec![0; n],
            reason: vec![NONE; n],
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: vec![0.0; n],
            inc: 1.0,
            seen: vec![false; n],
            softs: Vec::new(),
            soft_occ: vec![Vec::new(); n],
            lb: 0,
            ub: None,
            unsat: false,
        };
        if with_softs {
            for (i, (l, w)) in f.soft.iter().enumerate() {
                if *w > 0 {
                    s.softs.push((*l, *w));
                    s.soft_occ[l.var() as usize].push(i as u32);
                }
            }
        }
        for c in &f.hard {
            s.add_clause(c.clone());
        }
        for p in &f.pb {
            s.add_pb(p.clone());
        }
        s
    }

    fn value(&self, l: Lit) -> i8 {
        let v = self.val[l.var() as usize];
        if v < 0 {
            -1
        } else if l.is_neg() {
            1 - v
        } else {
            v
        }
    }

    fn dl(&self) -> u32 {
        self.trail_lim.len() as u32
    }

    fn add_clause(&mut self, mut c: Vec<Lit>) {
        c.sort();
        c.dedup();
        if c.windows(2).any(|w| w[0] == !w[1]) {
            return;
        }
        match c.len() {
            0 => self.unsat = true,
            1 => match self.value(c[0]) {
                0 => self.unsat = true,
                -1 => self.enqueue(c[0], NONE),
                _ => {}
            },
            _ => {
                let ci = self.clauses.len() as u32;
                self.watches[c[0].code()].push(ci);
                self.watches[c[1].code()].push(ci);
                self.clauses.push(c);
            }
        }
    }

    fn add_pb(&mut self, p: PbConstraint) {
        let i = self.pbs.len() as u32;
        for (l, _) in &p.terms {
            self.pb_occ[l.code()].push(i);
        }
        if let Some(g) = p.guard {
            self.pb_occ[g.code()].push(i);
        }
        self.pbs.push(p);
        if let Err(()) = self.check_pb_root(i as usize) {
            self.unsat = true;
        }
    }

    fn check_pb_root(&mut self, i: usize) -> Result<(), ()> {
        match self.check_pb(i) {
            Some(_) => Err(()),
            None => Ok(()),
        }
    }

    fn enqueue(&mut self, l: Lit, reason: u32) {
        let v = l.var() as usize;
        self.val[v] = if l.is_neg() { 0 } else { 1 };
        self.level[v] = self.dl();
        self.reason[v] = reason;
        self.trail.push(l);
        for &si in &self.soft_occ[v] {
            let (sl, w) = self.softs[si as usize];
            if self.value(sl) == 0 {
                self.lb += w;
            }
        }
    }

    fn backtrack(&mut self, lvl: u32) {
        if self.dl() <= lvl {
            return;
        }
        let keep = self.trail_lim[lvl as usize];
        while self.trail.len() > keep {
            let l = self.trail.pop().unwrap();
            let v = l.var() as usize;
            for &si in &self.soft_occ[v] {
                let (sl, w) = self.softs[si as usize];
                if self.value(sl) == 0 {
                    self.lb -= w;
                }
            }
            self.val[v] = -1;
            self.reason[v] = NONE;
        }
        self.trail_lim.truncate(lvl as usize);
        self.qhead = self.trail.len();
    }

    /// Store an explanation clause (first literal is the implied one).
    fn store_reason(&mut self, c: Vec<Lit>) -> u32 {
        self.clauses.push(c);
        (self.clauses.len() - 1) as u32
    }

    /// Propagate or detect a conflict on linear constraint `i`. Returns a
    /// falsified clause on conflict.
    fn check_pb(&mut self, i: usize) -> Option<Vec<Lit>> {
        let (guard, bound) = (self.pbs[i].guard, self.pbs[i].bound);
        let gval = guard.map_or(1, |g| self.value(g));
        if gval == 0 {
            return None;
        }
        let mut sum = 0.0;
        let mut trues = Vec::new();
        for (l, a) in &self.pbs[i].terms {
            if self.value(*l) == 1 {
                sum += a;
                trues.push(!*l);
            }
        }
        let slack = bound - sum;
        let t = tol(bound);
        if slack < -t {
            let mut c = trues;
            match guard {
                None => return Some(c),
                Some(g) if gval == 1 => {
                    c.push(!g);
                    return Some(c);
                }
                Some(g) => {
                    c.insert(0, !g);
                    let r = self.store_reason(c);
                    self.enqueue(!g, r);
                    return None;
                }
            }
        }
        if gval != 1 {
            return None;
        }
        let terms = self.pbs[i].terms.clone();
        for (l, a) in terms {
            if self.value(l) == -1 && a > slack + t {
                let mut c = vec![!l];
                c.extend(trues.iter().copied());
                if let Some(g) = guard {
                    c.push(!g);
                }
                let r = self.store_reason(c);
                self.enqueue(!l, r);
            }
        }
        None
    }

    fn propagate(&mut self) -> Option<Vec<Lit>> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let fl = !p;
            let ws = std::mem::take(&mut self.watches[fl.code()]);
            let mut keep = Vec::with_capacity(ws.len());
            let mut confl = None;
            let mut k = 0;
            while k < ws.len() {
                let ci = ws[k];
                k += 1;
                let c = &mut self.clauses[ci as usize];
                if c[0] == fl {
                    c.swap(0, 1);
                }
                let first = c[0];
                let fv = {
                    let v = self.val[first.var() as usize];
                    if v < 0 {
                        -1
                    } else if first.is_neg() {
                        1 - v
                    } else {
                        v
                    }
                };
                if fv == 1 {
                    keep.push(ci);
                    continue;
                }
                let mut moved = false;
                for j in 2..c.len() {
                    let l = c[j];
                    let v = self.val[l.var() as usize];
                    let lv = if v < 0 { -1 } else if l.is_neg() { 1 - v } else { v };
                    if lv != 0 {
                        c.swap(1, j);
                        let nw = c[1];
                        self.watches[nw.code()].push(ci);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                keep.push(ci);
                if fv == 0 {
                    confl = Some(self.clauses[ci as usize].clone());
                    keep.extend_from_slice(&ws[k..]);
                    break;
                }
                self.enqueue(first, ci);
            }
            self.watches[fl.code()] = keep;
            if confl.is_some() {
                return confl;
            }
            let occ = self.pb_occ[p.code()].clone();
            for i in occ {
                if let Some(c) = self.check_pb(i as usize) {
                    return Some(c);
                }
            }
        }
        if let Some(ub) = self.ub {
            if self.lb >= ub {
                let mut c = Vec::new();
                let mut acc = 0;
                for l in &self.trail {
                    for &si in &self.soft_occ[l.var() as usize] {
                        let (sl, w) = self.softs[si as usize];
                        if self.value(sl) == 0 && !c.contains(&sl) {
                            c.push(sl);
                            acc += w;
                        }
                    }
                    if acc >= ub {
                        break;
                    }
                }
                return Some(c);
            }
        }
        None
    }

    fn bump(&mut self, v: usize) {
        self.activity[v] += self.inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.inc *= 1e-100;
        }
    }

    fn analyze(&mut self, confl: Vec<Lit>) -> (Vec<Lit>, u32) {
        let cur = self.dl();
        let mut learnt = vec![Lit(0)];
        let mut path = 0;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let mut clause = confl;
        loop {
            for &q in &clause {
                let v = q.var() as usize;
                if p.is_some_and(|p| p.var() as usize == v) {
                    continue;
                }
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump(v);
                    if self.level[v] == cur {
                        path += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[self.trail[idx].var() as usize] {
                    break;
                }
            }
            let pl = self.trail[idx];
            self.seen[pl.var() as usize] = false;
            path -= 1;
            p = Some(pl);
            if path == 0 {
                learnt[0] = !pl;
                break;
            }
            clause = self.clauses[self.reason[pl.var() as usize] as usize].clone();
        }
        for l in &learnt[1..] {
            self.seen[l.var() as usize] = false;
        }
        let mut bt = 0;
        let mut at = 1;
        for (i, l) in learnt.iter().enumerate().skip(1) {
            let lv = self.level[l.var() as usize];
            if lv > bt {
                bt = lv;
                at = i;
            }
        }
        if learnt.len() > 1 {
            learnt.swap(1, at);
        }
        self.inc *= 1.0 / 0.95;
        (learnt, bt)
    }

    fn pick(&self) -> Option<Var> {
        let mut best: Option<usize> = None;
        for v in 0..self.val.len() {
            if self.val[v] < 0 && best.map_or(true, |b| self.activity[v] > self.activity[b]) {
                best = Some(v);
            }
        }
        best.map(|v| v as Var)
    }

    fn search(&mut self, assumptions: &[Lit]) -> Outcome {
        if self.unsat {
            return Outcome::Unsat;
        }
        let mut conflicts = 0u64;
        let mut restart_at = 64u64;
        let mut luby_i = 1u64;
        loop {
            if let Some(confl) = self.propagate() {
                conflicts += 1;
                let max = confl.iter().map(|l| self.level[l.var() as usize]).max().unwrap_or(0);
                if confl.is_empty() || max == 0 {
                    self.unsat = assumptions.is_empty() || self.unsat;
                    self.backtrack(0);
                    return Outcome::Unsat;
                }
                if max < self.dl() {
                    self.backtrack(max);
                }
                let (learnt, bt) = self.analyze(confl);
                self.backtrack(bt);
                if learnt.len() == 1 {
                    self.backtrack(0);
                    match self.value(learnt[0]) {
                        0 => {
                            self.unsat = true;
                            return Outcome::Unsat;
                        }
                        -1 => self.enqueue(learnt[0], NONE),
                        _ => {}
                    }
                } else {
                    let ci = self.clauses.len() as u32;
                    self.watches[learnt[0].code()].push(ci);
                    self.watches[learnt[1].code()].push(ci);
                    let l0 = learnt[0];
                    self.clauses.push(learnt);
                    self.enqueue(l0, ci);
                }
                if conflicts >= restart_at {
                    luby_i += 1;
                    restart_at = conflicts + 64 * luby(luby_i);
                    self.backtrack(0);
                }
                continue;
            }
            let dl = self.dl() as usize;
            if dl < assumptions.len() {
                let a = assumptions[dl];
                match self.value(a) {
                    0 => {
                        self.backtrack(0);
                        return Outcome::Unsat;
                    }
                    1 => self.trail_lim.push(self.trail.len()),
                    _ => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(a, NONE);
                    }
                }
                continue;
            }
            match self.pick() {
                None => return Outcome::Sat,
                Some(v) => {
                    self.trail_lim.push(self.trail.len());
                    self.enqueue(Lit::neg(v), NONE);
                }
            }
        }
    }

    fn model(&self) -> Vec<bool> {
        self.val.iter().map(|v| *v == 1).collect()
    }
}

fn luby(mut i: u64) -> u64 {
    // Luby sequence 1 1 2 1 1 2 4 ...
    let mut size = 1u64;
    let mut seq = 0u32;
    while size < i + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != i {
        size = (size - 1) >> 1;
        seq -= 1;
        i %= size;
    }
    1 << seq
}

/// Minimum-cost model, or `None` when the hard part is unsatisfiable.
pub fn solve_maxsat(f: &Wcnf) -> Option<Solution> {
    let mut s = Solver::new(f, true);
    let mut best: Option<Solution> = None;
    loop {
        match s.search(&[]) {
            Outcome::Sat => {
                let model = s.model();
                let cost = s.lb;
                debug_assert_eq!(cost, f.cost(&model));
                best = Some(Solution { model, cost });
                if cost == 0 {
                    break;
                }
                s.ub = Some(cost);
            }
            Outcome::Unsat => break,
        }
    }
    best
}

/// Among minimum-cost models, the one that is lexicographically smallest on
/// variables `0..prefix` (false before true).
pub fn solve_lexmin(f: &Wcnf, prefix: usize) -> Option<Solution> {
    let opt = solve_maxsat(f)?;
    let mut g = f.clone();
    if !g.soft.is_empty() {
        let terms = g.soft.iter().map(|(l, w)| (!*l, *w as f64)).collect();
        g.pb.push(PbConstraint::at_most(terms, opt.cost as f64));
    }
    let mut s = Solver::new(&g, false);
    let mut model = opt.model;
    let mut fixed: Vec<Lit> = Vec::new();
    for v in 0..prefix.min(f.num_vars) {
        if !model[v] {
            fixed.push(Lit::neg(v as Var));
            continue;
        }
        let mut trial = fixed.clone();
        trial.push(Lit::neg(v as Var));
        match s.search(&trial) {
            Outcome::Sat => {
                model = s.model();
                s.backtrack(0);
                fixed.push(Lit::neg(v as Var));
            }
            Outcome::Unsat => fixed.push(Lit::pos(v as Var)),
        }
    }
    let cost = f.cost(&model);
    Some(Solution { model, cost })
}

/// Any model of the hard part; deterministic.
pub fn solve_sat(f: &Wcnf) -> Option<Vec<bool>> {
    let mut s = Solver::new(f, false);
    match s.search(&[]) {
        Outcome::Sat => Some(s.model()),
        Outcome::Unsat => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(f: &Wcnf) -> Option<u64> {
        let n = f.num_vars;
        (0..1u64 << n)
            .filter_map(|bits| {
                let m: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
                f.satisfies_hard(&m).then(|| f.cost(&m))
            })
            .min()
    }

    #[test]
    fn two_softs_example() {
        let mut f = Wcnf::default();
        let x = f.new_var("x");
        let y = f.new_var("y");
        f.add(vec![Lit::pos(x), Lit::pos(y)]);
        f.soft.push((Lit::neg(x), 1));
        f.soft.push((Lit::neg(y), 2));
        let s = solve_lexmin(&f, 2).unwrap();
        assert_eq!(s.model, vec![true, false]);
        assert_eq!(s.cost, 1);
    }

    #[test]
    fn no_softs_cost_zero() {
        let mut f = Wcnf::default();
        let x = f.new_var("x");
        f.add(vec![Lit::pos(x)]);
        assert_eq!(solve_maxsat(&f).unwrap().cost, 0);
    }

    #[test]
    fn unsat_detected() {
        let mut f = Wcnf::default();
        let x = f.new_var("x");
        f.add(vec![Lit::pos(x)]);
        f.add(vec![Lit::neg(x)]);
        assert!(solve_maxsat(&f).is_none());
    }

    #[test]
    fn pb_guard_propagates() {
        let mut f = Wcnf::default();
        let a = f.new_var("a");
        let b = f.new_var("b");
        let g = f.new_var("g");
        f.pb.push(PbConstraint::at_most(vec![(Lit::pos(a), 1.5), (Lit::pos(b), 1.0)], 2.0).guarded(Lit::pos(g)));
        f.add(vec![Lit::pos(a)]);
        f.add(vec![Lit::pos(b)]);
        let m = solve_sat(&f).unwrap();
        assert!(!m[g as usize]);
        f.add(vec![Lit::pos(g)]);
        assert!(solve_sat(&f).is_none());
    }

    #[test]
    fn luby_prefix() {
        let v: Vec<u64> = (0..7).map(luby).collect();
        assert_eq!(v, vec![1, 1, 2, 1, 1, 2, 4]);
    }

    fn arb_instance() -> impl Strategy<Value = Wcnf> {
        let n = 2usize..9;
        n.prop_flat_map(|n| {
            let lit = (0..n as u32, any::<bool>()).prop_map(|(v, p)| Lit::new(v, p));
            let clause = proptest::collection::vec(lit.clone(), 1..4);
            let pbt = proptest::collection::vec((lit.clone(), 1u8..4), 1..4);
            (
                proptest::collection::vec(clause, 0..12),
                proptest::collection::vec((lit, 1u64..5), 0..6),
                proptest::option::of((pbt, 1u8..6)),
            )
                .prop_map(move |(hard, soft, pb)| {
                    let mut f = Wcnf { num_vars: n, names: vec![String::new(); n], ..Default::default() };
                    f.hard = hard;
                    f.soft = soft;
                    if let Some((t, b)) = pb {
                        f.pb.push(PbConstraint::at_most(t.into_iter().map(|(l, a)| (l, a as f64)).collect(), b as f64));
                    }
                    f
                })
        })
    }

    proptest! {
        #[test]
        fn optimum_matches_enumeration(f in arb_instance()) {
            let got = solve_maxsat(&f);
            prop_assert_eq!(got.as_ref().map(|s| s.cost), brute(&f));
            if let Some(s) = got {
                prop_assert!(f.satisfies_hard(&s.model));
            }
            if let Some(s) = solve_lexmin(&f, f.num_vars) {
                prop_assert!(f.satisfies_hard(&s.model));
                prop_assert_eq!(Some(s.cost), brute(&f));
            }
        }
    }
}
