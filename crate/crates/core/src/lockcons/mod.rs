//! Global lock placement: constraint encoding, optimisation and decoding.
//!
//! Every location `x` and lock `lk` gets four action variables (lock or
//! unlock, before or after `x`) and two derived ones: `InLo` (held while `x`
//! executes) and `InLoEnd` (held when control leaves `x`). Conflicts demand
//! that their locations share a lock; the remaining clauses rule out
//! placements that double lock, unlock something not held, leak a lock at
//! thread exit, wait while holding a lock, or acquire locks out of order.

pub mod maxsat;
mod apply;
mod verify;

pub use apply::{apply_placement, emit_source, InsertPos};
pub use verify::{check_legitimacy, verify_theorem1, verify_theorem1_with, TheoremReport, Violation};

use crate::abstraction::AbstractProgram;
use crate::automata::ConflictSet;
use crate::lang::{LocId, NodeKind, Program, SyncOp, Tid};
use maxsat::{solve_lexmin, Lit, Var, Wcnf};
use serde::Serialize;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum LockError {
    #[error("no legitimate lock placement satisfies the conflicts")]
    Unsatisfiable,
    #[error("at least one lock is required")]
    NoLocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Act {
    LoBef,
    LoAft,
    UnBef,
    UnAft,
}

impl Act {
    pub const ALL: [Act; 4] = [Act::LoBef, Act::LoAft, Act::UnBef, Act::UnAft];

    pub fn is_lock(self) -> bool {
        matches!(self, Act::LoBef | Act::LoAft)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Objective {
    None,
    Coarse,
    Fine,
    Perf,
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "none" => Objective::None,
            "coarse" => Objective::Coarse,
            "fine" => Objective::Fine,
            "perf" => Objective::Perf,
            _ => return Err(format!("unknown objective `{s}`")),
        })
    }
}

/// Variable layout of an encoding.
#[derive(Clone, Debug)]
pub struct PlacementVars {
    pub locks: usize,
    /// Locations of all threads in textual order, each thread's `last` at its end.
    pub locs: Vec<LocId>,
    /// Real statements (no `last`).
    pub statements: Vec<LocId>,
    index: Vec<Option<usize>>,
    act: Vec<[Var; 4]>,
    in_lo: Vec<Var>,
    in_lo_end: Vec<Var>,
    order: Vec<Vec<Option<Var>>>,
    /// Variables `0..num_decision` are the ones minimised lexicographically.
    pub num_decision: usize,
}

impl PlacementVars {
    fn slot(&self, x: LocId, lk: usize) -> usize {
        lk * self.locs.len() + self.index[x.idx()].expect("location in encoding")
    }

    pub fn act(&self, x: LocId, lk: usize, a: Act) -> Var {
        self.act[self.slot(x, lk)][a as usize]
    }

    pub fn in_lo(&self, x: LocId, lk: usize) -> Var {
        self.in_lo[self.slot(x, lk)]
    }

    pub fn in_lo_end(&self, x: LocId, lk: usize) -> Var {
        self.in_lo_end[self.slot(x, lk)]
    }

    /// `lk1` is acquired before `lk2` whenever both are held.
    pub fn order(&self, lk1: usize, lk2: usize) -> Lit {
        if lk1 < lk2 {
            Lit::pos(self.order[lk1][lk2].unwrap())
        } else {
            Lit::neg(self.order[lk2][lk1].unwrap())
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoding {
    pub wcnf: Wcnf,
    pub vars: PlacementVars,
}

fn pos(v: Var) -> Lit {
    Lit::pos(v)
}
fn neg(v: Var) -> Lit {
    Lit::neg(v)
}

/// `out ↔ ⋁ ins`
fn def_or(f: &mut Wcnf, out: Var, ins: &[Lit]) {
    let mut big = vec![neg(out)];
    big.extend_from_slice(ins);
    f.add(big);
    for l in ins {
        f.add(vec![!*l, pos(out)]);
    }
}

/// `out ↔ ⋀ ins`
fn def_and(f: &mut Wcnf, out: Var, ins: &[Lit]) {
    let mut big = vec![pos(out)];
    big.extend(ins.iter().map(|l| !*l));
    f.add(big);
    for l in ins {
        f.add(vec![neg(out), *l]);
    }
}

fn is_goto_target(p: &Program, x: LocId) -> bool {
    p.nodes.iter().any(|n| matches!(n.kind, NodeKind::Goto { target } if target == x))
}

/// Hard constraints of the placement problem for `locks` synthesized locks.
pub fn encode_global(ap: &AbstractProgram, cs: &ConflictSet, locks: usize) -> Result<Encoding, LockError> {
    if locks == 0 {
        return Err(LockError::NoLocks);
    }
    let p = &ap.program;
    let mut locs = Vec::new();
    for th in &p.threads {
        locs.extend(p.statements(th.tid));
        locs.push(th.last);
    }
    let statements = p.all_statements();
    let mut index = vec![None; p.nodes.len()];
    for (i, l) in locs.iter().enumerate() {
        index[l.idx()] = Some(i);
    }
    let mut f = Wcnf::default();
    let n = locs.len();
    let mut act = Vec::with_capacity(locks * n);
    for lk in 0..locks {
        for x in &locs {
            let nm = p.name(*x);
            act.push(Act::ALL.map(|a| f.new_var(format!("{a:?}({nm},lk{lk})"))));
        }
    }
    let mut order = vec![vec![None; locks]; locks];
    for (i, row) in order.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate().skip(i + 1) {
            *o = Some(f.new_var(format!("Order(lk{i},lk{j})")));
        }
    }
    let num_decision = f.num_vars;
    let mut in_lo = Vec::with_capacity(locks * n);
    let mut in_lo_end = Vec::with_capacity(locks * n);
    for lk in 0..locks {
        for x in &locs {
            let nm = p.name(*x);
            in_lo.push(f.new_var(format!("InLo({nm},lk{lk})")));
            in_lo_end.push(f.new_var(format!("InLoEnd({nm},lk{lk})")));
        }
    }
    let v = PlacementVars { locks, locs: locs.clone(), statements, index, act, in_lo, in_lo_end, order, num_decision };

    let cfg = &ap.pred;
    for lk in 0..locks {
        for &x in &locs {
            let node = p.node(x);
            let is_first = p.thread(node.tid).first == x;
            let [lb, la, ub, ua] = Act::ALL.map(|a| v.act(x, lk, a));
            let (il, ile) = (v.in_lo(x, lk), v.in_lo_end(x, lk));
            let preds = &cfg[x.idx()];
            let nm = p.name(x);
            // Held on entry from any predecessor; the virtual entry edge of
            // `first` never carries a lock.
            let pin = f.new_var(format!("pin({nm},lk{lk})"));
            let pred_ends: Vec<Lit> = preds.iter().map(|q| pos(v.in_lo_end(*q, lk))).collect();
            def_or(&mut f, pin, &pred_ends);
            let a = f.new_var(format!("a({nm},lk{lk})"));
            def_and(&mut f, a, &[neg(ub), pos(pin)]);
            def_or(&mut f, il, &[pos(lb), pos(a)]);
            let b = f.new_var(format!("b({nm},lk{lk})"));
            def_and(&mut f, b, &[pos(il), neg(ua)]);
            def_or(&mut f, ile, &[pos(b), pos(la)]);

            for q in preds {
                f.add(vec![neg(ub), neg(v.act(*q, lk, Act::LoAft))]);
                f.add(vec![neg(lb), neg(v.act(*q, lk, Act::UnAft))]);
            }
            f.add(vec![neg(lb), neg(ub)]);
            f.add(vec![neg(la), neg(ua)]);
            // Every entry edge agrees, which also makes loop bodies uniform.
            for w in preds.windows(2) {
                let (e0, e1) = (v.in_lo_end(w[0], lk), v.in_lo_end(w[1], lk));
                f.add(vec![neg(e0), pos(e1)]);
                f.add(vec![pos(e0), neg(e1)]);
            }
            if is_first {
                for q in preds {
                    f.add(vec![neg(v.in_lo_end(*q, lk))]);
                }
            }
            f.add(vec![neg(ua), pos(il)]);
            f.add(vec![neg(ub), pos(pin)]);
            f.add(vec![neg(lb), neg(pin)]);
            f.add(vec![neg(la), neg(il)]);

            match &node.kind {
                NodeKind::Last => {
                    f.add(vec![neg(il)]);
                    f.add(vec![neg(la)]);
                    f.add(vec![neg(ua)]);
                }
                NodeKind::Sync { op: SyncOp::Wait | SyncOp::WaitNot | SyncOp::Lock, .. } => f.add(vec![neg(il)]),
                NodeKind::Goto { .. } => {
                    f.add(vec![neg(la)]);
                    f.add(vec![neg(ua)]);
                }
                _ => {}
            }
            if is_goto_target(p, x) {
                f.add(vec![neg(lb)]);
                f.add(vec![neg(ub)]);
            }

            // Nesting follows the lock order.
            for lk2 in 0..locks {
                if lk2 == lk {
                    continue;
                }
                let lb2 = v.act(x, lk2, Act::LoBef);
                let la2 = v.act(x, lk2, Act::LoAft);
                f.add(vec![neg(lb2), neg(a), v.order(lk, lk2)]);
                f.add(vec![neg(la2), neg(b), v.order(lk, lk2)]);
            }
        }
    }
    for i in 0..locks {
        for j in 0..locks {
            for k in 0..locks {
                if i != j && j != k && i != k {
                    f.add(vec![!v.order(i, j), !v.order(j, k), v.order(i, k)]);
                }
            }
        }
    }
    // Symmetry breaking: locks are used in index order.
    let mut used = Vec::new();
    for lk in 0..locks {
        let u = f.new_var(format!("used(lk{lk})"));
        let acts: Vec<Lit> =
            locs.iter().flat_map(|x| [pos(v.act(*x, lk, Act::LoBef)), pos(v.act(*x, lk, Act::LoAft))]).collect();
        def_or(&mut f, u, &acts);
        if lk > 0 {
            f.add(vec![neg(u), pos(used[lk - 1])]);
        }
        used.push(u);
    }

    // Conflict protection.
    let mut prot_of = Vec::with_capacity(cs.conflicts.len());
    for (ci, c) in cs.conflicts.iter().enumerate() {
        let mut alts = Vec::new();
        for lk in 0..locks {
            let pv = f.new_var(format!("prot(c{ci},lk{lk})"));
            for l in [c.pre.loc, c.mid.loc, c.cpre.loc] {
                f.add(vec![neg(pv), pos(v.in_lo(l, lk))]);
            }
            if c.pre.loc != c.mid.loc {
                f.add(vec![neg(pv), pos(v.in_lo_end(c.pre.loc, lk))]);
            }
            alts.push(pos(pv));
        }
        let any = f.new_var(format!("prot(c{ci})"));
        def_or(&mut f, any, &alts);
        prot_of.push(any);
    }
    let mut sel = Vec::with_capacity(cs.num_mutexes);
    for m in 0..cs.num_mutexes {
        let s = f.new_var(format!("sel(m{m})"));
        for (ci, o) in cs.owner.iter().enumerate() {
            if *o == m {
                f.add(vec![neg(s), pos(prot_of[ci])]);
            }
        }
        sel.push(s);
    }
    for cl in &cs.clauses {
        f.add(cl.iter().map(|m| pos(sel[*m])).collect::<Vec<_>>());
    }
    Ok(Encoding { wcnf: f, vars: v })
}

/// Soft clauses for the fewest lock statements, then the fewest protected
/// statements (weights scaled by `2k`).
pub fn encode_coarse(enc: &mut Encoding) {
    let v = &enc.vars;
    let f = &mut enc.wcnf;
    let k = v.statements.len() as u64;
    for lk in 0..v.locks {
        for x in &v.locs {
            f.soft.push((neg(v.act(*x, lk, Act::LoBef)), 2 * k));
            f.soft.push((neg(v.act(*x, lk, Act::LoAft)), 2 * k));
        }
    }
    for x in &v.statements {
        let any = f.new_var(format!("prot({})", x.0));
        let ins: Vec<Lit> = (0..v.locks).map(|lk| pos(v.in_lo(*x, lk))).collect();
        def_or(f, any, &ins);
        f.soft.push((neg(any), 1));
    }
}

/// Soft clauses penalising every cross-thread statement pair that shares a lock.
pub fn encode_fine(enc: &mut Encoding, ap: &AbstractProgram) {
    let v = &enc.vars;
    let f = &mut enc.wcnf;
    let p = &ap.program;
    for (i, s) in v.statements.iter().enumerate() {
        for s2 in &v.statements[i + 1..] {
            if p.node(*s).tid == p.node(*s2).tid {
                continue;
            }
            let d = f.new_var(format!("share({},{})", s.0, s2.0));
            for lk in 0..v.locks {
                f.add(vec![neg(v.in_lo(*s, lk)), neg(v.in_lo(*s2, lk)), pos(d)]);
            }
            f.soft.push((neg(d), 1));
        }
    }
}

/// One synthesized lock or unlock placed on a flow-graph edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Insertion {
    pub tid: Tid,
    /// `None` for the thread entry edge.
    pub from: Option<LocId>,
    /// Which successor of `from` the edge leads to.
    pub succ_index: usize,
    pub to: LocId,
    /// Lock or unlock, with the index of the synthesized lock.
    pub ops: Vec<(SyncOp, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LockPlacement {
    /// Synthesized locks, outermost first.
    pub lock_names: Vec<String>,
    pub actions: BTreeSet<(LocId, usize, Act)>,
    pub insertions: Vec<Insertion>,
}

impl LockPlacement {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn has(&self, x: LocId, lk: usize, a: Act) -> bool {
        self.actions.contains(&(x, lk, a))
    }

    pub fn num_lock_statements(&self) -> usize {
        self.actions.iter().filter(|a| a.2.is_lock()).count()
    }

    pub fn num_unlock_statements(&self) -> usize {
        self.actions.iter().filter(|a| !a.2.is_lock()).count()
    }

    /// Readable listing such as `LoBef(a1,lk1)`.
    pub fn describe(&self, p: &Program) -> Vec<String> {
        self.actions.iter().map(|(x, lk, a)| format!("{a:?}({},{})", p.name(*x), self.lock_names[*lk])).collect()
    }
}

fn fresh_lock_names(p: &Program, n: usize) -> Vec<String> {
    let taken = |s: &str| p.vars.iter().any(|v| v.name == s) || p.channels.iter().any(|c| c == s);
    let mut out = Vec::new();
    let mut i = 1;
    while out.len() < n {
        let name = format!("lk{i}");
        if !taken(&name) {
            out.push(name);
        }
        i += 1;
    }
    out
}

/// Read the placement off a model; locks are renumbered outermost first and
/// unused locks dropped.
pub fn decode_placement(ap: &AbstractProgram, enc: &Encoding, model: &[bool]) -> LockPlacement {
    let v = &enc.vars;
    let val = |l: Lit| model[l.var() as usize] != l.is_neg();
    let mut used: Vec<usize> = (0..v.locks)
        .filter(|lk| v.locs.iter().any(|x| Act::ALL.iter().any(|a| model[v.act(*x, *lk, *a) as usize])))
        .collect();
    used.sort_by_key(|lk| (used_rank(v, *lk, &val), *lk));
    let mut actions = BTreeSet::new();
    for (new, lk) in used.iter().enumerate() {
        for x in &v.locs {
            for a in Act::ALL {
                if model[v.act(*x, *lk, a) as usize] {
                    actions.insert((*x, new, a));
                }
            }
        }
    }
    let lock_names = fresh_lock_names(&ap.program, used.len());
    let mut pl = LockPlacement { lock_names, actions, insertions: vec![] };
    pl.insertions = edge_insertions(&ap.program, &pl);
    pl
}

fn used_rank(v: &PlacementVars, lk: usize, val: &impl Fn(Lit) -> bool) -> usize {
    (0..v.locks).filter(|o| *o != lk && val(v.order(*o, lk))).count()
}

/// Spread node actions onto the flow-graph edges: after-actions of the
/// source, then before-actions of the target; unlocks before locks, unlocks
/// innermost first.
pub fn edge_insertions(p: &Program, pl: &LockPlacement) -> Vec<Insertion> {
    let cfg = p.cfg();
    let nl = pl.lock_names.len();
    let mut out = Vec::new();
    let mut emit = |tid: Tid, from: Option<LocId>, k: usize, to: LocId| {
        let mut ops = Vec::new();
        if let Some(u) = from {
            for lk in (0..nl).rev() {
                if pl.has(u, lk, Act::UnAft) {
                    ops.push((SyncOp::Unlock, lk));
                }
            }
            for lk in 0..nl {
                if pl.has(u, lk, Act::LoAft) {
                    ops.push((SyncOp::Lock, lk));
                }
            }
        }
        for lk in (0..nl).rev() {
            if pl.has(to, lk, Act::UnBef) {
                ops.push((SyncOp::Unlock, lk));
            }
        }
        for lk in 0..nl {
            if pl.has(to, lk, Act::LoBef) {
                ops.push((SyncOp::Lock, lk));
            }
        }
        if !ops.is_empty() {
            out.push(Insertion { tid, from, succ_index: k, to, ops });
        }
    };
    for th in &p.threads {
        emit(th.tid, None, 0, th.first);
        for u in p.statements(th.tid) {
            for (k, to) in cfg.succ[u.idx()].iter().enumerate() {
                emit(th.tid, Some(u), k, *to);
            }
        }
    }
    out
}

/// Lock-holding sets per location obtained by simulating the placement over
/// the flow graph: `(held while executing, held on exit)`, bit `lk` per lock.
pub fn held_sets(p: &Program, pl: &LockPlacement) -> (Vec<u64>, Vec<u64>) {
    let cfg = p.cfg();
    let n = p.nodes.len();
    let mut inl = vec![0u64; n];
    let mut end = vec![0u64; n];
    let mask = |x: LocId, a: Act| -> u64 {
        pl.actions.iter().filter(|t| t.0 == x && t.2 == a).fold(0, |m, t| m | 1 << t.1)
    };
    let mut changed = true;
    while changed {
        changed = false;
        for th in &p.threads {
            let mut locs = p.statements(th.tid);
            locs.push(th.last);
            for x in locs {
                let pin = cfg.pred[x.idx()].iter().fold(0, |m, q| m | end[q.idx()]);
                let i = mask(x, Act::LoBef) | (pin & !mask(x, Act::UnBef));
                let e = (i & !mask(x, Act::UnAft)) | mask(x, Act::LoAft);
                if i != inl[x.idx()] || e != end[x.idx()] {
                    inl[x.idx()] = i;
                    end[x.idx()] = e;
                    changed = true;
                }
            }
        }
    }
    (inl, end)
}

/// `(lock statements, protected statements)` of a placement.
pub fn coarse_cost(p: &Program, pl: &LockPlacement) -> (usize, usize) {
    let (inl, _) = held_sets(p, pl);
    let prot = p.all_statements().iter().filter(|x| inl[x.idx()] != 0).count();
    (pl.num_lock_statements(), prot)
}

/// Coarse objective value in the solver's integer scale.
pub fn coarse_weight(p: &Program, pl: &LockPlacement) -> u64 {
    let (l, prot) = coarse_cost(p, pl);
    2 * p.all_statements().len() as u64 * l as u64 + prot as u64
}

/// Cross-thread statement pairs protected by a common lock.
pub fn fine_cost(p: &Program, pl: &LockPlacement) -> usize {
    let (inl, _) = held_sets(p, pl);
    let st = p.all_statements();
    let mut n = 0;
    for (i, s) in st.iter().enumerate() {
        for s2 in &st[i + 1..] {
            if p.node(*s).tid != p.node(*s2).tid && inl[s.idx()] & inl[s2.idx()] != 0 {
                n += 1;
            }
        }
    }
    n
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Synthesis {
    pub placement: LockPlacement,
    /// Objective value in solver units (0 without an objective).
    pub cost: u64,
}

/// Default number of synthesized locks: one per mutex constraint.
pub fn default_lock_count(cs: &ConflictSet) -> usize {
    cs.num_mutexes.max(1)
}

/// Encode, add the objective and solve. `Objective::Perf` is handled by the
/// performance model and is treated as `None` here.
pub fn synthesize(
    ap: &AbstractProgram,
    cs: &ConflictSet,
    locks: usize,
    objective: Objective,
) -> Result<Synthesis, LockError> {
    if cs.is_empty() {
        return Ok(Synthesis { placement: LockPlacement::default(), cost: 0 });
    }
    let mut enc = encode_global(ap, cs, locks)?;
    match objective {
        Objective::Coarse => encode_coarse(&mut enc),
        Objective::Fine => encode_fine(&mut enc, ap),
        Objective::None | Objective::Perf => {}
    }
    solve_encoding(ap, &enc)
}

pub fn solve_encoding(ap: &AbstractProgram, enc: &Encoding) -> Result<Synthesis, LockError> {
    let sol = solve_lexmin(&enc.wcnf, enc.vars.num_decision).ok_or(LockError::Unsatisfiable)?;
    Ok(Synthesis { placement: decode_placement(ap, enc, &sol.model), cost: sol.cost })
}

/// Model-level check that each conflict's locations share a held lock
/// (`pre` held through to `mid`).
pub fn protects(p: &Program, pl: &LockPlacement, cs: &ConflictSet) -> Vec<bool> {
    let (inl, end) = held_sets(p, pl);
    cs.conflicts
        .iter()
        .map(|c| {
            let mut s = inl[c.pre.loc.idx()] & inl[c.mid.loc.idx()] & inl[c.cpre.loc.idx()];
            if c.pre.loc != c.mid.loc {
                s &= end[c.pre.loc.idx()];
            }
            s != 0
        })
        .collect()
}
