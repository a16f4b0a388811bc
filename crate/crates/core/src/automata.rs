//! Automata over abstract observables for the non-preemptive (NP) and the
//! preemptive (P) semantics of an abstract program.
//!
//! A location may emit several symbols (`4: r(open); w(open)`), so threads
//! move between *points* `(loc, step)`: one step per access, then one
//! control step for branches and synchronization.

use crate::abstraction::{AbsKind, AbstractProgram, Obs, Theta};
use crate::lang::{LocId, SyncOp, Tid};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::hash::Hash;
use std::rc::Rc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub loc: LocId,
    pub step: u8,
}

impl Point {
    pub fn at(loc: LocId) -> Point {
        Point { loc, step: 0 }
    }
}

/// One transition of a single thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    pub sym: Option<Obs>,
    pub to: Point,
    /// Synchronization variable slot and its new value.
    pub sync: Option<(usize, u8)>,
}

/// Static step structure shared by every automaton built from a program.
#[derive(Clone, Debug)]
pub struct Model<'a> {
    pub ap: &'a AbstractProgram,
    pub lasts: Vec<LocId>,
    pub firsts: Vec<LocId>,
    /// Optional relabelling of locations in emitted symbols.
    relabel: Option<Vec<LocId>>,
}

impl<'a> Model<'a> {
    pub fn new(ap: &'a AbstractProgram) -> Model<'a> {
        let p = &ap.program;
        Model {
            ap,
            lasts: p.threads.iter().map(|t| t.last).collect(),
            firsts: p.threads.iter().map(|t| t.first).collect(),
            relabel: None,
        }
    }

    /// Emit symbols with locations mapped through `map` (used to compare a
    /// patched program against the original).
    pub fn with_relabel(mut self, map: Vec<LocId>) -> Self {
        self.relabel = Some(map);
        self
    }

    pub fn n(&self) -> usize {
        self.lasts.len()
    }

    pub fn steps(&self, l: LocId) -> usize {
        let n = self.ap.node(l);
        match n.kind {
            AbsKind::Plain => n.ops.len().max(1),
            AbsKind::Last => 1,
            _ => n.ops.len() + 1,
        }
    }

    /// Point reached after executing step `p` along successor `k`.
    fn after(&self, p: Point, k: usize) -> Point {
        if (p.step as usize) + 1 < self.steps(p.loc) {
            Point { loc: p.loc, step: p.step + 1 }
        } else {
            Point::at(self.ap.succ[p.loc.idx()][k])
        }
    }

    /// Successor points of `p` ignoring synchronization guards.
    pub fn point_succ(&self, p: Point) -> Vec<Point> {
        let n = self.ap.node(p.loc);
        let s = p.step as usize;
        if s < n.ops.len() {
            return vec![self.after(p, 0)];
        }
        match n.kind {
            AbsKind::Last => vec![],
            AbsKind::If | AbsKind::While => {
                let ss = &self.ap.succ[p.loc.idx()];
                vec![Point::at(ss[0]), Point::at(ss[1])]
            }
            AbsKind::Goto(t) => vec![Point::at(t)],
            _ => vec![self.after(p, 0)],
        }
    }

    /// Access performed by step `p`, if any.
    pub fn access_at(&self, p: Point) -> Option<crate::abstraction::Access> {
        self.ap.node(p.loc).ops.get(p.step as usize).copied()
    }

    pub fn all_points(&self, tid: Tid) -> Vec<Point> {
        let p = &self.ap.program;
        let mut locs = p.statements(tid);
        locs.push(p.thread(tid).last);
        let mut out = Vec::new();
        for l in locs {
            for s in 0..self.steps(l) {
                out.push(Point { loc: l, step: s as u8 });
            }
        }
        out
    }

    fn sym(&self, tid: Tid, theta: Theta, loc: LocId) -> Obs {
        let loc = match &self.relabel {
            Some(m) => m[loc.idx()],
            None => loc,
        };
        Obs::new(tid, theta, loc)
    }

    /// Control step of lock/wait/wait_not/assume/assume_not/yield, where the
    /// non-preemptive scheduler may switch threads.
    pub fn is_switch_point(&self, p: Point) -> bool {
        let n = self.ap.node(p.loc);
        if (p.step as usize) < n.ops.len() {
            return false;
        }
        match n.kind {
            AbsKind::Yield => true,
            AbsKind::Sync(op, _) => matches!(
                op,
                SyncOp::Lock | SyncOp::Wait | SyncOp::WaitNot | SyncOp::Assume | SyncOp::AssumeNot
            ),
            _ => false,
        }
    }

    pub fn is_last(&self, tid: Tid, p: Point) -> bool {
        p.loc == self.lasts[tid - 1]
    }

    /// Enabled moves of thread `tid` at point `p` under valuation `sync`.
    pub fn thread_moves(&self, tid: Tid, p: Point, sync: &[u8]) -> Vec<Move> {
        let n = self.ap.node(p.loc);
        let s = p.step as usize;
        if s < n.ops.len() {
            let sym = self.sym(tid, n.ops[s].into(), p.loc);
            return vec![Move { sym: Some(sym), to: self.after(p, 0), sync: None }];
        }
        let eps = |to: Point| Move { sym: None, to, sync: None };
        match n.kind {
            AbsKind::Last => vec![],
            AbsKind::Plain | AbsKind::Yield => vec![eps(self.after(p, 0))],
            AbsKind::Goto(t) => vec![eps(Point::at(t))],
            AbsKind::If | AbsKind::While => {
                let ss = &self.ap.succ[p.loc.idx()];
                let (a, b) = if n.kind == AbsKind::If { (Theta::If, Theta::Else) } else { (Theta::Loop, Theta::ExitLoop) };
                vec![
                    Move { sym: Some(self.sym(tid, a, p.loc)), to: Point::at(ss[0]), sync: None },
                    Move { sym: Some(self.sym(tid, b, p.loc)), to: Point::at(ss[1]), sync: None },
                ]
            }
            AbsKind::Sync(op, v) => {
                let slot = self.ap.sync_slot[v.idx()].expect("sync variable has a slot");
                let cur = sync[slot];
                let me = tid as u8;
                let (enabled, new) = match op {
                    SyncOp::Lock => (cur == 0, Some(me)),
                    SyncOp::Unlock => (cur == me, Some(0)),
                    SyncOp::Wait | SyncOp::Assume => (cur == 1, None),
                    SyncOp::WaitNot | SyncOp::AssumeNot => (cur == 0, None),
                    SyncOp::Notify | SyncOp::Set => (true, Some(1)),
                    SyncOp::Reset | SyncOp::Unset => (true, Some(0)),
                };
                if enabled {
                    vec![Move { sym: None, to: self.after(p, 0), sync: new.map(|x| (slot, x)) }]
                } else {
                    vec![]
                }
            }
        }
    }

    /// Not every thread has finished, yet none can move.
    pub fn stuck(&self, pts: &[Point], sync: &[u8]) -> bool {
        let done = pts.iter().enumerate().all(|(i, p)| self.is_last(i + 1, *p));
        !done && (1..=pts.len()).all(|t| self.thread_moves(t, pts[t - 1], sync).is_empty())
    }

    pub fn initial_points(&self) -> Vec<Point> {
        self.firsts.iter().map(|l| Point::at(*l)).collect()
    }
}

/// An automaton over abstract observables explored on the fly.
pub trait Nfa {
    type State: Clone + Eq + Hash + std::fmt::Debug;
    fn initial(&self) -> Self::State;
    fn successors(&self, s: &Self::State) -> Vec<(Option<Obs>, Self::State)>;
    fn is_accepting(&self, s: &Self::State) -> bool;
    fn describe(&self, s: &Self::State) -> String {
        format!("{s:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NpState {
    /// 0 until the first scheduling step.
    pub ctid: u8,
    pub pts: Vec<Point>,
    pub sync: Vec<u8>,
}

/// Non-preemptive semantics: only the current thread moves; switches happen
/// at switch points and at thread end.
pub struct NpNfa<'a> {
    pub model: Model<'a>,
}

pub fn build_np_nfa(ap: &AbstractProgram) -> NpNfa<'_> {
    NpNfa { model: Model::new(ap) }
}

impl<'a> Nfa for NpNfa<'a> {
    type State = NpState;

    fn initial(&self) -> NpState {
        NpState { ctid: 0, pts: self.model.initial_points(), sync: vec![0; self.model.ap.num_sync] }
    }

    fn successors(&self, s: &NpState) -> Vec<(Option<Obs>, NpState)> {
        let m = &self.model;
        let n = m.n();
        let mut out = Vec::new();
        let switch_all = |out: &mut Vec<(Option<Obs>, NpState)>, skip: usize| {
            for t in 1..=n {
                if t != skip {
                    let mut ns = s.clone();
                    ns.ctid = t as u8;
                    out.push((None, ns));
                }
            }
        };
        if s.ctid == 0 {
            switch_all(&mut out, 0);
            return out;
        }
        let c = s.ctid as usize;
        let p = s.pts[c - 1];
        for mv in m.thread_moves(c, p, &s.sync) {
            let mut ns = s.clone();
            ns.pts[c - 1] = mv.to;
            if let Some((slot, v)) = mv.sync {
                ns.sync[slot] = v;
            }
            out.push((mv.sym, ns));
        }
        if m.is_last(c, p) || m.is_switch_point(p) {
            switch_all(&mut out, c);
        }
        out
    }

    fn is_accepting(&self, s: &NpState) -> bool {
        s.pts.iter().enumerate().all(|(i, p)| self.model.is_last(i + 1, *p))
    }

    fn describe(&self, s: &NpState) -> String {
        format!("ctid={} locs=[{}] sync={:?}", s.ctid, fmt_points(&self.model, &s.pts), s.sync)
    }
}

pub fn fmt_point(m: &Model<'_>, p: Point) -> String {
    let name = m.ap.program.name(p.loc);
    if m.steps(p.loc) > 1 {
        format!("{name}.{}", p.step)
    } else {
        name.to_string()
    }
}

fn fmt_points(m: &Model<'_>, pts: &[Point]) -> String {
    pts.iter().map(|p| fmt_point(m, *p)).collect::<Vec<_>>().join(",")
}

/// A minimal witness that two regions interleaved: thread `tid1` moves
/// `pre -> mid -> post` while thread `tid2` moves `cpre -> cpost` in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub tid1: Tid,
    pub pre: Point,
    pub mid: Point,
    pub post: Point,
    pub tid2: Tid,
    pub cpre: Point,
    pub cpost: Point,
}

impl Conflict {
    pub fn fmt(&self, m: &Model<'_>) -> String {
        format!(
            "({},{},{},{},{})",
            fmt_point(m, self.pre),
            fmt_point(m, self.mid),
            fmt_point(m, self.post),
            fmt_point(m, self.cpre),
            fmt_point(m, self.cpost)
        )
    }
}

/// Conflicts grouped by the mutex constraint they come from, and the
/// disjunctions of mutex constraints that must hold.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConflictSet {
    pub conflicts: Vec<Conflict>,
    /// Mutex index of each conflict.
    pub owner: Vec<usize>,
    /// Each clause is a disjunction of mutex indices.
    pub clauses: Vec<Vec<usize>>,
    pub num_mutexes: usize,
}

impl ConflictSet {
    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PState {
    pub pts: Vec<Point>,
    pub sync: Vec<u8>,
    /// Nonzero conflict propositions, sorted by conflict index.
    pub props: Vec<(u32, u8)>,
    /// Bitset of mutex alternatives already violated.
    pub violated: Vec<u64>,
}

/// Preemptive semantics with conflict tracking.
pub struct PNfa<'a> {
    pub model: Model<'a>,
    pub cs: ConflictSet,
    activation: HashMap<(Tid, Point, Point), Vec<u32>>,
    /// For each mutex, the clauses it occurs in.
    clauses_of: Vec<Vec<usize>>,
}

pub fn build_p_nfa<'a>(ap: &'a AbstractProgram, cs: &ConflictSet) -> PNfa<'a> {
    PNfa::new(Model::new(ap), cs.clone())
}

impl<'a> PNfa<'a> {
    pub fn new(model: Model<'a>, cs: ConflictSet) -> PNfa<'a> {
        let mut activation: HashMap<(Tid, Point, Point), Vec<u32>> = HashMap::new();
        for (k, c) in cs.conflicts.iter().enumerate() {
            activation.entry((c.tid1, c.pre, c.mid)).or_default().push(k as u32);
        }
        let mut clauses_of = vec![Vec::new(); cs.num_mutexes];
        for (ci, cl) in cs.clauses.iter().enumerate() {
            for m in cl {
                clauses_of[*m].push(ci);
            }
        }
        PNfa { model, cs, activation, clauses_of }
    }

    /// Update conflict propositions for thread `t` moving `a -> b`.
    /// Returns `None` when the destination state must be deleted.
    fn track(&self, s: &PState, t: Tid, a: Point, b: Point) -> Option<(Vec<(u32, u8)>, Vec<u64>)> {
        let mut props = Vec::with_capacity(s.props.len() + 1);
        let mut violated = s.violated.clone();
        let bit = |v: &[u64], m: usize| v.get(m / 64).is_some_and(|w| w & (1u64 << (m % 64)) != 0);
        for &(k, v) in &s.props {
            let c = &self.cs.conflicts[k as usize];
            let nv = match v {
                1 if t == c.tid2 && a == c.cpre && b == c.cpost => 2,
                1 | 2 if t == c.tid1 && a == c.mid => {
                    if v == 2 && b == c.post {
                        let m = self.cs.owner[k as usize];
                        if violated.len() <= m / 64 {
                            violated.resize(m / 64 + 1, 0);
                        }
                        violated[m / 64] |= 1u64 << (m % 64);
                        let dead = self.clauses_of[m]
                            .iter()
                            .any(|ci| self.cs.clauses[*ci].iter().all(|mm| bit(&violated, *mm)));
                        if dead {
                            return None;
                        }
                    }
                    0
                }
                _ => v,
            };
            if nv != 0 {
                props.push((k, nv));
            }
        }
        if let Some(ks) = self.activation.get(&(t, a, b)) {
            for &k in ks {
                if !s.props.iter().any(|(kk, _)| *kk == k) {
                    props.push((k, 1));
                }
            }
            props.sort_unstable();
        }
        Some((props, violated))
    }
}

impl<'a> Nfa for PNfa<'a> {
    type State = PState;

    fn initial(&self) -> PState {
        PState { pts: self.model.initial_points(), sync: vec![0; self.model.ap.num_sync], props: vec![], violated: vec![] }
    }

    fn successors(&self, s: &PState) -> Vec<(Option<Obs>, PState)> {
        let m = &self.model;
        let mut out = Vec::new();
        for t in 1..=m.n() {
            let p = s.pts[t - 1];
            for mv in m.thread_moves(t, p, &s.sync) {
                let Some((props, violated)) = self.track(s, t, p, mv.to) else { continue };
                let mut pts = s.pts.clone();
                pts[t - 1] = mv.to;
                let mut sync = s.sync.clone();
                if let Some((slot, v)) = mv.sync {
                    sync[slot] = v;
                }
                out.push((mv.sym, PState { pts, sync, props, violated }));
            }
        }
        out
    }

    fn is_accepting(&self, s: &PState) -> bool {
        s.props.is_empty() && s.pts.iter().enumerate().all(|(i, p)| self.model.is_last(i + 1, *p))
    }

    fn describe(&self, s: &PState) -> String {
        format!("locs=[{}] sync={:?} props={:?}", fmt_points(&self.model, &s.pts), s.sync, s.props)
    }
}

pub type Edge = (Option<Obs>, u32);

/// Memoized state graph of an automaton with integer state ids.
pub struct StateGraph<'n, N: Nfa> {
    pub nfa: &'n N,
    ids: HashMap<N::State, u32>,
    states: Vec<N::State>,
    succ: Vec<Option<Rc<[Edge]>>>,
    closure: Vec<Option<Rc<[u32]>>>,
}

impl<'n, N: Nfa> StateGraph<'n, N> {
    pub fn new(nfa: &'n N) -> Self {
        let mut g = StateGraph { nfa, ids: HashMap::new(), states: Vec::new(), succ: Vec::new(), closure: Vec::new() };
        let init = nfa.initial();
        g.intern(init);
        g
    }

    pub fn initial(&self) -> u32 {
        0
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: u32) -> &N::State {
        &self.states[id as usize]
    }

    pub fn intern(&mut self, s: N::State) -> u32 {
        if let Some(id) = self.ids.get(&s) {
            return *id;
        }
        let id = self.states.len() as u32;
        self.ids.insert(s.clone(), id);
        self.states.push(s);
        self.succ.push(None);
        self.closure.push(None);
        id
    }

    pub fn succ(&mut self, id: u32) -> Rc<[Edge]> {
        if let Some(s) = &self.succ[id as usize] {
            return s.clone();
        }
        let st = self.states[id as usize].clone();
        let edges: Vec<Edge> = self.nfa.successors(&st).into_iter().map(|(a, t)| (a, self.intern(t))).collect();
        let rc: Rc<[Edge]> = edges.into();
        self.succ[id as usize] = Some(rc.clone());
        rc
    }

    pub fn accepting(&self, id: u32) -> bool {
        self.nfa.is_accepting(&self.states[id as usize])
    }

    /// Sorted epsilon closure of a state, including itself.
    pub fn eps_closure(&mut self, id: u32) -> Rc<[u32]> {
        if let Some(c) = &self.closure[id as usize] {
            return c.clone();
        }
        let mut seen = BTreeSet::new();
        seen.insert(id);
        let mut stack = vec![id];
        while let Some(u) = stack.pop() {
            for (a, v) in self.succ(u).iter() {
                if a.is_none() && seen.insert(*v) {
                    stack.push(*v);
                }
            }
        }
        let rc: Rc<[u32]> = seen.into_iter().collect::<Vec<_>>().into();
        self.closure[id as usize] = Some(rc.clone());
        rc
    }

    /// Epsilon-closed image of a closed set under symbol `a`.
    pub fn step_set(&mut self, set: &[u32], a: &Obs) -> Vec<u32> {
        let mut out = BTreeSet::new();
        for &q in set {
            for (b, t) in self.succ(q).iter() {
                if b.as_ref() == Some(a) {
                    for c in self.eps_closure(*t).iter() {
                        out.insert(*c);
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn accepts(&mut self, word: &[Obs]) -> bool {
        let mut cur: Vec<u32> = self.eps_closure(0).to_vec();
        for a in word {
            cur = self.step_set(&cur, a);
            if cur.is_empty() {
                return false;
            }
        }
        cur.iter().any(|q| self.accepting(*q))
    }

    /// Explore every reachable state, up to `limit`.
    pub fn explore(&mut self, limit: usize) -> bool {
        let mut i = 0;
        while i < self.states.len() {
            if self.states.len() > limit {
                return false;
            }
            self.succ(i as u32);
            i += 1;
        }
        true
    }

    /// Plain-text listing of reachable states and transitions.
    pub fn dump(&mut self, limit: usize, fmt_sym: impl Fn(&Obs) -> String) -> String {
        let complete = self.explore(limit);
        let mut s = String::new();
        let n = self.states.len().min(limit);
        for i in 0..n {
            let acc = if self.accepting(i as u32) { " accepting" } else { "" };
            let _ = writeln!(s, "s{i}: {}{acc}", self.nfa.describe(&self.states[i]));
            if let Some(edges) = self.succ[i].clone() {
                for (a, t) in edges.iter() {
                    let lbl = a.as_ref().map_or("eps".to_string(), &fmt_sym);
                    let _ = writeln!(s, "  --{lbl}--> s{t}");
                }
            }
        }
        if !complete {
            let _ = writeln!(s, "... truncated at {limit} states");
        }
        s
    }
}

/// All accepted words of length at most `max_len`.
pub fn enumerate_executions<N: Nfa>(nfa: &N, max_len: usize) -> BTreeSet<Vec<Obs>> {
    let mut g = StateGraph::new(nfa);
    let mut out = BTreeSet::new();
    let mut layer: Vec<(Vec<Obs>, Vec<u32>)> = vec![(vec![], g.eps_closure(0).to_vec())];
    for len in 0..=max_len {
        let mut next: std::collections::BTreeMap<Vec<Obs>, BTreeSet<u32>> = Default::default();
        for (w, set) in &layer {
            if set.iter().any(|q| g.accepting(*q)) {
                out.insert(w.clone());
            }
            if len == max_len {
                continue;
            }
            for &q in set {
                for (a, t) in g.succ(q).iter() {
                    if let Some(a) = a {
                        let mut w2 = w.clone();
                        w2.push(*a);
                        let e = next.entry(w2).or_default();
                        for c in g.eps_closure(*t).iter() {
                            e.insert(*c);
                        }
                    }
                }
            }
        }
        layer = next.into_iter().map(|(w, s)| (w, s.into_iter().collect())).collect();
    }
    out
}

/// Breadth-first search for a state satisfying `bad`; returns the path of
/// `(symbol, state)` steps from the initial state.
pub fn find_state<N: Nfa>(
    g: &mut StateGraph<'_, N>,
    bad: impl Fn(&N::State) -> bool,
) -> Option<Vec<u32>> {
    let mut parent: HashMap<u32, u32> = HashMap::new();
    let mut q = VecDeque::new();
    q.push_back(0u32);
    parent.insert(0, u32::MAX);
    while let Some(u) = q.pop_front() {
        if bad(g.state(u)) {
            let mut path = vec![u];
            let mut x = u;
            while parent[&x] != u32::MAX {
                x = parent[&x];
                path.push(x);
            }
            path.reverse();
            return Some(path);
        }
        for (_, v) in g.succ(u).iter() {
            if !parent.contains_key(v) {
                parent.insert(*v, u);
                q.push_back(*v);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{abstract_program, AVar};
    use crate::lang::parse_program;

    fn two_writers() -> AbstractProgram {
        abstract_program(&parse_program("decl shared x;\nthread T1 { a: x := 1; }\nthread T2 { a2: x := 2; }").unwrap())
    }

    #[test]
    fn np_two_writers_switch_only_at_end() {
        let ap = two_writers();
        let np = build_np_nfa(&ap);
        let words = enumerate_executions(&np, 4);
        let a = ap.program.loc_named("a", None).unwrap();
        let a2 = ap.program.loc_named("a2", None).unwrap();
        let w1 = Obs::new(1, Theta::Write(AVar(0)), a);
        let w2 = Obs::new(2, Theta::Write(AVar(0)), a2);
        let expected: BTreeSet<Vec<Obs>> = [vec![w1, w2], vec![w2, w1]].into_iter().collect();
        assert_eq!(words, expected);
    }

    #[test]
    fn single_empty_thread_accepts_empty_word() {
        let ap = abstract_program(&parse_program("thread T {}").unwrap());
        let np = build_np_nfa(&ap);
        let words = enumerate_executions(&np, 3);
        assert_eq!(words, [vec![]].into_iter().collect());
        let p = build_p_nfa(&ap, &ConflictSet::default());
        assert!(p.is_accepting(&p.initial()));
    }

    #[test]
    fn max_len_zero_gives_empty_word_iff_initial_accepting() {
        let ap = two_writers();
        assert!(enumerate_executions(&build_np_nfa(&ap), 0).is_empty());
    }

    #[test]
    fn lock_blocks_second_thread() {
        let src = "decl shared x; decl lock m;\nthread T1 { l1: lock(m); a: x := 1; u1: unlock(m); }\nthread T2 { l2: lock(m); b: x := 2; u2: unlock(m); }";
        let ap = abstract_program(&parse_program(src).unwrap());
        let p = build_p_nfa(&ap, &ConflictSet::default());
        let m = &p.model;
        let l1 = ap.program.loc_named("l1", None).unwrap();
        let mvs = m.thread_moves(1, Point::at(l1), &[0]);
        assert_eq!(mvs.len(), 1);
        assert_eq!(mvs[0].sync, Some((0, 1)));
        let l2 = ap.program.loc_named("l2", None).unwrap();
        assert!(m.thread_moves(2, Point::at(l2), &[1]).is_empty());
        let u1 = ap.program.loc_named("u1", None).unwrap();
        assert!(m.thread_moves(2, Point::at(u1), &[1]).is_empty());
        assert_eq!(m.thread_moves(1, Point::at(u1), &[1])[0].sync, Some((0, 0)));
    }
}
