//! Counterexample generalization: neighbourhoods, happens-before formulas,
//! mutex constraints and the conflicts that witness their violation.

use crate::abstraction::{AbsKind, Obs, Theta};
use crate::automata::{Conflict, Model, Nfa, Point, StateGraph};
use crate::inclusion::word_has_equivalent;
use crate::lang::Tid;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

pub const DEFAULT_NHOOD_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CegenError {
    #[error("neighborhood too large (more than {0} words)")]
    NhoodTooLarge(usize),
    #[error("pattern not lock-enforceable: {0}")]
    NotLockEnforceable(String),
    #[error("counterexample cannot be separated from its good permutations")]
    Inseparable,
}

/// One symbol occurrence of the counterexample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub obs: Obs,
    /// Point emitting the symbol.
    pub point: Point,
    /// Point the thread moves to afterwards.
    pub next: Point,
    /// Position among the events of its thread.
    pub rank: usize,
}

impl Event {
    pub fn tid(&self) -> Tid {
        self.obs.tid as Tid
    }
}

/// `before` happens before `after`; both index into the event list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub before: usize,
    pub after: usize,
}

/// Disjunction of conjunctions of happens-before atoms over `events`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbFormula {
    pub events: Vec<Event>,
    pub conjuncts: Vec<Vec<Atom>>,
}

impl HbFormula {
    /// Truth value on a permutation given as a list of event indices.
    pub fn eval(&self, perm: &[usize]) -> bool {
        let mut pos = vec![0; self.events.len()];
        for (i, e) in perm.iter().enumerate() {
            pos[*e] = i;
        }
        self.conjuncts.iter().any(|c| c.iter().all(|a| pos[a.before] < pos[a.after]))
    }

    pub fn is_false(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn display<'a>(&'a self, m: &'a Model<'_>) -> impl fmt::Display + 'a {
        FormulaDisplay(self, m)
    }
}

struct FormulaDisplay<'a, 'b>(&'a HbFormula, &'a Model<'b>);

impl fmt::Display for FormulaDisplay<'_, '_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (phi, m) = (self.0, self.1);
        if phi.conjuncts.is_empty() {
            return write!(f, "false");
        }
        let ev = |i: usize| m.ap.fmt_obs(&phi.events[i].obs);
        let parts: Vec<String> = phi
            .conjuncts
            .iter()
            .map(|c| {
                if c.is_empty() {
                    "true".to_string()
                } else {
                    let atoms: Vec<String> = c.iter().map(|a| format!("{} < {}", ev(a.before), ev(a.after))).collect();
                    format!("({})", atoms.join(" && "))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" || "))
    }
}

/// `tid.[start:end]` over points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region {
    pub tid: Tid,
    pub start: Point,
    pub end: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MutexConstraint {
    pub r1: Region,
    pub r2: Region,
}

impl MutexConstraint {
    /// Regions are stored with the smaller thread id first.
    pub fn new(a: Region, b: Region) -> Self {
        if a.tid <= b.tid {
            MutexConstraint { r1: a, r2: b }
        } else {
            MutexConstraint { r1: b, r2: a }
        }
    }

    pub fn fmt(&self, m: &Model<'_>) -> String {
        let r = |r: &Region| {
            format!(
                "{}.[{}:{}]",
                m.ap.program.thread(r.tid).name,
                crate::automata::fmt_point(m, r.start),
                crate::automata::fmt_point(m, r.end)
            )
        };
        format!("mutex({},{})", r(&self.r1), r(&self.r2))
    }
}

/// Recover the points visited by each symbol of an accepted word.
pub fn events_of(m: &Model<'_>, word: &[Obs]) -> Vec<Event> {
    let mut ranks: BTreeMap<u16, usize> = BTreeMap::new();
    word.iter()
        .map(|o| {
            let node = m.ap.node(o.loc);
            let succ = &m.ap.succ[o.loc.idx()];
            let (point, next) = match o.theta.access() {
                Some(acc) => {
                    let s = node.ops.iter().position(|x| *x == acc).expect("access emitted by its location");
                    let p = Point { loc: o.loc, step: s as u8 };
                    (p, m.point_succ(p)[0])
                }
                None => {
                    let p = Point { loc: o.loc, step: node.ops.len() as u8 };
                    let k = usize::from(matches!(o.theta, Theta::Else | Theta::ExitLoop));
                    debug_assert!(matches!(node.kind, AbsKind::If | AbsKind::While));
                    (p, Point::at(succ[k]))
                }
            };
            let r = ranks.entry(o.tid).or_default();
            let rank = *r;
            *r += 1;
            Event { obs: *o, point, next, rank }
        })
        .collect()
}

fn dependent(a: &Obs, b: &Obs) -> bool {
    match (a.theta.access(), b.theta.access()) {
        (Some(x), Some(y)) => x.conflicts_with(y),
        _ => false,
    }
}

/// All interleavings of the counterexample that keep per-thread order and
/// are accepted by `p`, as permutations of event indices.
pub fn compute_nhood<P: Nfa>(
    pg: &mut StateGraph<'_, P>,
    events: &[Event],
    cap: usize,
) -> Result<Vec<Vec<usize>>, CegenError> {
    let mut per: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        per.entry(e.obs.tid).or_default().push(i);
    }
    let seqs: Vec<Vec<usize>> = per.into_values().collect();
    let mut out = Vec::new();
    let mut idx = vec![0; seqs.len()];
    let mut cur = Vec::with_capacity(events.len());
    let start = pg.eps_closure(0).to_vec();
    rec(pg, events, &seqs, &mut idx, &mut cur, start, &mut out, cap)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn rec<P: Nfa>(
    pg: &mut StateGraph<'_, P>,
    events: &[Event],
    seqs: &[Vec<usize>],
    idx: &mut [usize],
    cur: &mut Vec<usize>,
    set: Vec<u32>,
    out: &mut Vec<Vec<usize>>,
    cap: usize,
) -> Result<(), CegenError> {
    if cur.len() == events.len() {
        if set.iter().any(|q| pg.accepting(*q)) {
            if out.len() >= cap {
                return Err(CegenError::NhoodTooLarge(cap));
            }
            out.push(cur.clone());
        }
        return Ok(());
    }
    for t in 0..seqs.len() {
        if idx[t] == seqs[t].len() {
            continue;
        }
        let e = seqs[t][idx[t]];
        let next = pg.step_set(&set, &events[e].obs);
        if next.is_empty() {
            continue;
        }
        idx[t] += 1;
        cur.push(e);
        rec(pg, events, seqs, idx, cur, next, out, cap)?;
        cur.pop();
        idx[t] -= 1;
    }
    Ok(())
}

/// Classify the neighbourhood and build a DNF that holds exactly on the
/// bad permutations.
pub fn generalize<P: Nfa, Q: Nfa>(
    m: &Model<'_>,
    pg: &mut StateGraph<'_, P>,
    ng: &mut StateGraph<'_, Q>,
    cex: &[Obs],
    k: usize,
    cap: usize,
) -> Result<HbFormula, CegenError> {
    let events = events_of(m, cex);
    let nhood = compute_nhood(pg, &events, cap)?;
    let mut bad = Vec::new();
    let mut good = Vec::new();
    for perm in nhood {
        let w: Vec<Obs> = perm.iter().map(|i| events[*i].obs).collect();
        if word_has_equivalent(ng, &w, k) {
            good.push(perm);
        } else {
            bad.push(perm);
        }
    }
    let conjuncts = separate(&events, &bad, &good)?;
    Ok(HbFormula { events, conjuncts })
}

fn positions(perm: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; perm.len()];
    for (i, e) in perm.iter().enumerate() {
        pos[*e] = i;
    }
    pos
}

/// Greedy cover of the bad permutations by minimal conjunctions that no
/// good permutation satisfies.
pub fn separate(events: &[Event], bad: &[Vec<usize>], good: &[Vec<usize>]) -> Result<Vec<Vec<Atom>>, CegenError> {
    if bad.is_empty() {
        return Ok(vec![]);
    }
    if good.is_empty() {
        return Ok(vec![vec![]]);
    }
    let n = events.len();
    let mut cross = Vec::new();
    let mut dep = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if events[a].obs.tid != events[b].obs.tid {
                let at = Atom { before: a, after: b };
                cross.push(at);
                if dependent(&events[a].obs, &events[b].obs) {
                    dep.push(at);
                }
            }
        }
    }
    let bad_pos: Vec<Vec<usize>> = bad.iter().map(|p| positions(p)).collect();
    let good_pos: Vec<Vec<usize>> = good.iter().map(|p| positions(p)).collect();
    let holds = |pos: &[usize], a: &Atom| pos[a.before] < pos[a.after];
    let mut covered = vec![false; bad.len()];
    let mut out: Vec<Vec<Atom>> = Vec::new();
    for bi in 0..bad.len() {
        if covered[bi] {
            continue;
        }
        let mut found = None;
        for pool in [&dep, &cross] {
            let cand: Vec<Atom> = pool.iter().filter(|a| holds(&bad_pos[bi], a)).copied().collect();
            // Bitmask of good permutations each atom excludes.
            let kills: Vec<Vec<bool>> =
                cand.iter().map(|a| good_pos.iter().map(|g| !holds(g, a)).collect()).collect();
            if let Some(c) = smallest_cover(events, &cand, &kills, good.len(), 4) {
                found = Some(c);
                break;
            }
        }
        let Some(conj) = found else { return Err(CegenError::Inseparable) };
        let conj = minimize(events, conj);
        for (bj, pos) in bad_pos.iter().enumerate() {
            if conj.iter().all(|a| holds(pos, a)) {
                covered[bj] = true;
            }
        }
        if !out.contains(&conj) {
            out.push(conj);
        }
    }
    Ok(out)
}

/// Smallest subset of `cand` excluding every good permutation; among
/// subsets of equal size prefer one containing an atomicity pattern.
fn smallest_cover(events: &[Event], cand: &[Atom], kills: &[Vec<bool>], ngood: usize, max: usize) -> Option<Vec<Atom>> {
    for size in 1..=max.min(cand.len()) {
        let mut first = None;
        let mut pick = vec![0usize; size];
        for (i, p) in pick.iter_mut().enumerate() {
            *p = i;
        }
        loop {
            let ok = (0..ngood).all(|g| pick.iter().any(|i| kills[*i][g]));
            if ok {
                let c: Vec<Atom> = pick.iter().map(|i| cand[*i]).collect();
                if !patterns(events, &c).is_empty() {
                    return Some(c);
                }
                if first.is_none() {
                    first = Some(c);
                }
            }
            // Next combination in lexicographic order.
            let mut i = size;
            while i > 0 && pick[i - 1] == cand.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            pick[i - 1] += 1;
            for j in i..size {
                pick[j] = pick[j - 1] + 1;
            }
        }
        if first.is_some() {
            return first;
        }
    }
    None
}

/// Drop atoms implied by another atom of the conjunction through
/// per-thread order.
fn minimize(events: &[Event], mut conj: Vec<Atom>) -> Vec<Atom> {
    let po_le = |a: usize, b: usize| events[a].obs.tid == events[b].obs.tid && events[a].rank <= events[b].rank;
    let mut i = 0;
    while i < conj.len() {
        let a = conj[i];
        let implied = conj.iter().enumerate().any(|(j, b)| j != i && po_le(a.before, b.before) && po_le(b.after, a.after));
        if implied {
            conj.remove(i);
        } else {
            i += 1;
        }
    }
    conj.sort();
    conj
}

/// Atom pairs `(i,x) < (j,y)` and `(j,u) < (i,v)` in a conjunction.
fn patterns(events: &[Event], conj: &[Atom]) -> Vec<(Atom, Atom)> {
    let mut out = Vec::new();
    for a in conj {
        for b in conj {
            let (i, j) = (events[a.before].obs.tid, events[a.after].obs.tid);
            if events[b.before].obs.tid == j && events[b.after].obs.tid == i && a < b {
                out.push((*a, *b));
            }
        }
    }
    out
}

fn region_of(events: &[Event], xs: [usize; 2]) -> Region {
    let (lo, hi) = if events[xs[0]].rank <= events[xs[1]].rank { (xs[0], xs[1]) } else { (xs[1], xs[0]) };
    Region { tid: events[lo].tid(), start: events[lo].point, end: events[hi].next }
}

/// One clause of alternative mutex constraints per conjunct.
pub fn infer_mutexes(phi: &HbFormula) -> Result<Vec<Vec<MutexConstraint>>, CegenError> {
    let ev = &phi.events;
    let mut out = Vec::new();
    for conj in &phi.conjuncts {
        let pats = patterns(ev, conj);
        if pats.is_empty() {
            let desc: Vec<String> =
                conj.iter().map(|a| format!("{:?} < {:?}", ev[a.before].obs, ev[a.after].obs)).collect();
            return Err(CegenError::NotLockEnforceable(if desc.is_empty() { "true".into() } else { desc.join(" && ") }));
        }
        let mut alts: Vec<MutexConstraint> = pats
            .iter()
            .map(|(a, b)| {
                let ri = region_of(ev, [a.before, b.after]);
                let rj = region_of(ev, [a.after, b.before]);
                MutexConstraint::new(ri, rj)
            })
            .collect();
        alts.sort();
        alts.dedup();
        if !out.contains(&alts) {
            out.push(alts);
        }
    }
    Ok(out)
}

/// Points of `r` and the region subgraph: points on paths from `start` to
/// `end` once edges into `start` and out of `end` are removed.
struct RegionGraph {
    pts: BTreeSet<Point>,
    succ: BTreeMap<Point, Vec<Point>>,
}

impl RegionGraph {
    fn new(m: &Model<'_>, r: &Region) -> Self {
        let edges = |p: Point| -> Vec<Point> {
            if p == r.end {
                vec![]
            } else {
                m.point_succ(p).into_iter().filter(|q| *q != r.start).collect()
            }
        };
        let mut fwd = BTreeSet::new();
        let mut stack = vec![r.start];
        fwd.insert(r.start);
        let mut all_succ: BTreeMap<Point, Vec<Point>> = BTreeMap::new();
        while let Some(p) = stack.pop() {
            let ss = edges(p);
            for q in &ss {
                if fwd.insert(*q) {
                    stack.push(*q);
                }
            }
            all_succ.insert(p, ss);
        }
        // Backward closure from `end` inside the forward set.
        let mut pts = BTreeSet::new();
        if fwd.contains(&r.end) {
            pts.insert(r.end);
            let mut changed = true;
            while changed {
                changed = false;
                for (p, ss) in &all_succ {
                    if !pts.contains(p) && ss.iter().any(|q| pts.contains(q)) {
                        pts.insert(*p);
                        changed = true;
                    }
                }
            }
        }
        let succ = pts
            .iter()
            .map(|p| (*p, all_succ.get(p).map_or(vec![], |ss| ss.iter().filter(|q| pts.contains(q)).copied().collect())))
            .collect();
        RegionGraph { pts, succ }
    }

    fn reach(&self, from: Point) -> BTreeSet<Point> {
        let mut seen = BTreeSet::new();
        if !self.pts.contains(&from) {
            return seen;
        }
        let mut stack = vec![from];
        seen.insert(from);
        while let Some(p) = stack.pop() {
            for q in &self.succ[&p] {
                if seen.insert(*q) {
                    stack.push(*q);
                }
            }
        }
        seen
    }

    fn reaching(&self, to: Point) -> BTreeSet<Point> {
        self.pts.iter().filter(|p| self.reach(**p).contains(&to)).copied().collect()
    }
}

/// Conflicts of a mutex constraint in both orientations, keeping only those
/// where the interleaved step of the other thread depends on the region on
/// both sides of the interruption.
pub fn derive_conflicts(m: &Model<'_>, mc: &MutexConstraint) -> Vec<Conflict> {
    let mut out = BTreeSet::new();
    for (ri, rj) in [(&mc.r1, &mc.r2), (&mc.r2, &mc.r1)] {
        let gi = RegionGraph::new(m, ri);
        let gj = RegionGraph::new(m, rj);
        let dep = |xs: &BTreeSet<Point>, ys: &BTreeSet<Point>| {
            xs.iter().any(|x| {
                ys.iter().any(|y| match (m.access_at(*x), m.access_at(*y)) {
                    (Some(a), Some(b)) => a.conflicts_with(b),
                    _ => false,
                })
            })
        };
        for pre in &gi.pts {
            for mid in &gi.succ[pre] {
                for post in &gi.succ[mid] {
                    let before_i = gi.reaching(*pre);
                    let mut after_i = gi.reach(*post);
                    after_i.insert(*mid);
                    for cpre in &gj.pts {
                        for cpost in &gj.succ[cpre] {
                            let before_j = gj.reaching(*cpre);
                            let mut after_j = gj.reach(*cpost);
                            after_j.insert(*cpre);
                            if dep(&before_i, &before_j) && dep(&after_j, &after_i) {
                                out.insert(Conflict {
                                    tid1: ri.tid,
                                    pre: *pre,
                                    mid: *mid,
                                    post: *post,
                                    tid2: rj.tid,
                                    cpre: *cpre,
                                    cpost: *cpost,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::abstract_program;
    use crate::automata::{build_np_nfa, build_p_nfa, ConflictSet};
    use crate::inclusion::{check_inclusion, Verdict};
    use crate::lang::parse_program;

    const RMW: &str = "decl shared x; decl local t, u;\nthread T1 { a: t := x; b: x := t; }\nthread T2 { c: u := x; d: x := u; }";

    #[test]
    fn single_thread_nhood_is_the_word() {
        let ap = abstract_program(&parse_program("decl shared x;\nthread T { a: x := 1; b: x := 2; }").unwrap());
        let m = Model::new(&ap);
        let p = build_p_nfa(&ap, &ConflictSet::default());
        let mut pg = StateGraph::new(&p);
        let w: Vec<Obs> = crate::automata::enumerate_executions(&p, 4).into_iter().next().unwrap();
        let ev = events_of(&m, &w);
        assert_eq!(compute_nhood(&mut pg, &ev, 10).unwrap(), vec![vec![0, 1]]);
    }

    #[test]
    fn rmw_gives_one_atomicity_mutex() {
        let ap = abstract_program(&parse_program(RMW).unwrap());
        let m = Model::new(&ap);
        let p = build_p_nfa(&ap, &ConflictSet::default());
        let np = build_np_nfa(&ap);
        let Verdict::Counterexample(cex) = check_inclusion(&p, &np, 4, None) else { panic!() };
        let mut pg = StateGraph::new(&p);
        let mut ng = StateGraph::new(&np);
        let phi = generalize(&m, &mut pg, &mut ng, &cex, 4, DEFAULT_NHOOD_CAP).unwrap();
        assert_eq!(phi.conjuncts.len(), 1);
        let ms = infer_mutexes(&phi).unwrap();
        assert_eq!(ms.len(), 1);
        let mc = ms[0][0];
        assert_eq!(mc.fmt(&m), "mutex(T1.[a:last],T2.[c:last])");
    }

    #[test]
    fn single_point_regions_have_no_conflicts() {
        let ap = abstract_program(&parse_program(RMW).unwrap());
        let m = Model::new(&ap);
        let l = |n: &str| Point::at(ap.program.loc_named(n, None).unwrap());
        let mc = MutexConstraint::new(
            Region { tid: 1, start: l("a"), end: l("a") },
            Region { tid: 2, start: l("c"), end: l("c") },
        );
        assert!(derive_conflicts(&m, &mc).is_empty());
    }

    #[test]
    fn formula_false_gives_no_mutexes() {
        let phi = HbFormula { events: vec![], conjuncts: vec![] };
        assert!(infer_mutexes(&phi).unwrap().is_empty());
    }

    #[test]
    fn fig9_region_to_last_yields_two_conflicts() {
        let ap = abstract_program(&parse_program(include_str!("../corpus/fig9.lsy")).unwrap());
        let m = Model::new(&ap);
        let l = |n: &str| Point::at(ap.program.loc_named(n, None).unwrap());
        let last2 = Point::at(ap.program.thread(2).last);
        let mc = MutexConstraint::new(
            Region { tid: 1, start: l("a1"), end: l("a2") },
            Region { tid: 2, start: l("b1"), end: last2 },
        );
        let got: Vec<String> = derive_conflicts(&m, &mc).iter().map(|c| c.fmt(&m)).collect();
        assert_eq!(got, vec!["(b1,b2,b3,a1,a2)", "(b2,b3,b4,a1,a2)"]);
    }

    #[test]
    fn fig9_pipeline_cex_blocks_itself() {
        let ap = abstract_program(&parse_program(include_str!("../corpus/fig9.lsy")).unwrap());
        let m = Model::new(&ap);
        let p = build_p_nfa(&ap, &ConflictSet::default());
        let np = build_np_nfa(&ap);
        let Verdict::Counterexample(cex) = check_inclusion(&p, &np, 4, None) else { panic!() };
        let mut pg = StateGraph::new(&p);
        let mut ng = StateGraph::new(&np);
        let phi = generalize(&m, &mut pg, &mut ng, &cex, 4, DEFAULT_NHOOD_CAP).unwrap();
        let ms = infer_mutexes(&phi).unwrap();
        let mut cs = ConflictSet::default();
        for clause in &ms {
            let mut cl = vec![];
            for mc in clause {
                let id = cs.num_mutexes;
                cs.num_mutexes += 1;
                cl.push(id);
                for c in derive_conflicts(&m, mc) {
                    cs.conflicts.push(c);
                    cs.owner.push(id);
                }
            }
            cs.clauses.push(cl);
        }
        let p2 = build_p_nfa(&ap, &cs);
        assert!(!StateGraph::new(&p2).accepts(&cex));
    }
}
