//! Bounded language inclusion modulo the independence relation.
//!
//! A preemptive word `w` is matched by a non-preemptive word `u` when `u` is
//! a permutation of `w` that keeps every pair of dependent symbols in order
//! and moves no symbol more than `k` positions. The checker reads `w` left
//! to right and lets the non-preemptive side lag behind through a buffer of
//! read but unmatched symbols.

use crate::abstraction::{independent, Obs};
use crate::automata::{Nfa, StateGraph};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

pub const DEFAULT_SCHEDULE: [usize; 5] = [2, 4, 8, 16, 32];

/// Schedule used inside the synthesis loop and the final self-check. Loops
/// produce bound artefacts at every bound, and each doubling multiplies the
/// cost of the search, so the loop stops early and reports exhaustion.
pub const SYNTH_SCHEDULE: [usize; 2] = [2, 4];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Included,
    Counterexample(Vec<Obs>),
}

impl Verdict {
    pub fn is_included(&self) -> bool {
        matches!(self, Verdict::Included)
    }
}

/// Result of the iterative bound schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub verdict: Verdict,
    /// Bound at which the verdict was reached.
    pub bound: usize,
    /// False when the counterexample might disappear at a larger bound
    /// than the schedule allows ("bound exhausted").
    pub genuine: bool,
}

/// A buffered symbol and its offset `j - q`: position in the preemptive
/// word minus the number of symbols the non-preemptive side has consumed.
type Entry = (Obs, i16);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Config {
    set: u32,
    buf: Vec<Entry>,
}

/// Deterministic view of the non-preemptive automaton.
struct NpDfa<'g, 'n, N: Nfa> {
    g: &'g mut StateGraph<'n, N>,
    ids: HashMap<Rc<[u32]>, u32>,
    sets: Vec<Rc<[u32]>>,
    acc: Vec<bool>,
    step: HashMap<(u32, Obs), Option<u32>>,
}

impl<'g, 'n, N: Nfa> NpDfa<'g, 'n, N> {
    fn new(g: &'g mut StateGraph<'n, N>) -> Self {
        let mut d = NpDfa { g, ids: HashMap::new(), sets: Vec::new(), acc: Vec::new(), step: HashMap::new() };
        let init = d.g.eps_closure(0);
        d.intern(init);
        d
    }

    fn intern(&mut self, s: Rc<[u32]>) -> u32 {
        if let Some(id) = self.ids.get(&s) {
            return *id;
        }
        let id = self.sets.len() as u32;
        let acc = s.iter().any(|q| self.g.accepting(*q));
        self.ids.insert(s.clone(), id);
        self.sets.push(s);
        self.acc.push(acc);
        id
    }

    fn next(&mut self, set: u32, a: Obs) -> Option<u32> {
        if let Some(r) = self.step.get(&(set, a)) {
            return *r;
        }
        let src = self.sets[set as usize].clone();
        let img = self.g.step_set(&src, &a);
        let r = if img.is_empty() { None } else { Some(self.intern(img.into())) };
        self.step.insert((set, a), r);
        r
    }

    fn subset(&self, a: u32, b: u32) -> bool {
        if a == b {
            return true;
        }
        let (x, y) = (&self.sets[a as usize], &self.sets[b as usize]);
        let mut j = 0;
        for v in x.iter() {
            while j < y.len() && y[j] < *v {
                j += 1;
            }
            if j == y.len() || y[j] != *v {
                return false;
            }
        }
        true
    }
}

struct Engine<'g, 'n, N: Nfa> {
    dfa: NpDfa<'g, 'n, N>,
    k: i16,
}

impl<'g, 'n, N: Nfa> Engine<'g, 'n, N> {
    /// Read one preemptive symbol into every configuration, then close under
    /// emissions and drop configurations that can no longer meet the bound.
    fn read(&mut self, cs: &[Config], a: Obs) -> Vec<Config> {
        let mut out = Vec::new();
        for c in cs {
            let mut buf = c.buf.clone();
            let d = buf.len() as i16;
            buf.push((a, d));
            out.push(Config { set: c.set, buf });
        }
        self.close(out)
    }

    fn close(&mut self, start: Vec<Config>) -> Vec<Config> {
        let mut seen: BTreeSet<Config> = BTreeSet::new();
        let mut stack = start;
        while let Some(c) = stack.pop() {
            if !seen.insert(c.clone()) {
                continue;
            }
            for i in 0..c.buf.len() {
                let (a, d) = c.buf[i];
                if d.abs() > self.k {
                    continue;
                }
                if !c.buf[..i].iter().all(|(b, _)| independent(b, &a)) {
                    continue;
                }
                let Some(set) = self.dfa.next(c.set, a) else { continue };
                let mut buf = Vec::with_capacity(c.buf.len() - 1);
                let mut ok = true;
                for (j, (b, e)) in c.buf.iter().enumerate() {
                    if j != i {
                        if e - 1 < -self.k {
                            ok = false;
                        }
                        buf.push((*b, e - 1));
                    }
                }
                if ok {
                    stack.push(Config { set, buf });
                }
            }
        }
        let live: Vec<Config> = seen.into_iter().filter(|c| c.buf.len() <= self.k as usize).collect();
        self.minimize(live)
    }

    /// Keep only configurations not dominated by another with the same
    /// buffer and a larger state set.
    fn minimize(&self, cs: Vec<Config>) -> Vec<Config> {
        let mut out: Vec<Config> = Vec::with_capacity(cs.len());
        for (i, c) in cs.iter().enumerate() {
            let dominated = cs.iter().enumerate().any(|(j, o)| {
                j != i && o.buf == c.buf && self.dfa.subset(c.set, o.set) && (c.set != o.set || j < i)
            });
            if !dominated {
                out.push(c.clone());
            }
        }
        out.sort();
        out
    }

    fn accepts(&self, cs: &[Config]) -> bool {
        cs.iter().any(|c| c.buf.is_empty() && self.dfa.acc[c.set as usize])
    }

    /// `weak` can only do what `strong` can do.
    fn weaker(&self, weak: &[Config], strong: &[Config]) -> bool {
        weak.iter()
            .all(|y| strong.iter().any(|x| x.buf == y.buf && self.dfa.subset(y.set, x.set)))
    }
}

/// Shortest, then lexicographically first, word of `p` (of length at most
/// `max_len` when given) with no equivalent word of `np` at bound `k`.
pub fn check_inclusion<P: Nfa, Q: Nfa>(p: &P, np: &Q, k: usize, max_len: Option<usize>) -> Verdict {
    let mut pg = StateGraph::new(p);
    let mut ng = StateGraph::new(np);
    check_graphs(&mut pg, &mut ng, k, max_len)
}

pub fn check_graphs<P: Nfa, Q: Nfa>(
    pg: &mut StateGraph<'_, P>,
    ng: &mut StateGraph<'_, Q>,
    k: usize,
    max_len: Option<usize>,
) -> Verdict {
    search(pg, ng, k, max_len, &mut |_| true)
}

/// Like [`check_inclusion`], but failing words that do have an equivalent
/// at unbounded displacement are skipped rather than reported. With loops
/// such words exist at every bound (one thread idles at a non-switch point
/// while the other iterates), so raising the bound never removes them.
pub fn check_genuine<P: Nfa, Q: Nfa>(p: &P, np: &Q, k: usize, max_len: Option<usize>) -> Verdict {
    let mut pg = StateGraph::new(p);
    let mut ng = StateGraph::new(np);
    let mut ng2 = StateGraph::new(np);
    search(&mut pg, &mut ng, k, max_len, &mut |w| !word_has_equivalent(&mut ng2, w, w.len()))
}

fn search<P: Nfa, Q: Nfa>(
    pg: &mut StateGraph<'_, P>,
    ng: &mut StateGraph<'_, Q>,
    k: usize,
    max_len: Option<usize>,
    report: &mut dyn FnMut(&[Obs]) -> bool,
) -> Verdict {
    let mut eng = Engine { dfa: NpDfa::new(ng), k: k.min(i16::MAX as usize / 2) as i16 };
    let init = eng.close(vec![Config { set: 0, buf: vec![] }]);
    // Visited macro-states per preemptive state.
    let mut visited: HashMap<u32, Vec<Rc<[Config]>>> = HashMap::new();
    let mut layer: Vec<(Vec<Obs>, u32, Rc<[Config]>)> = vec![(vec![], pg.initial(), init.into())];
    let mut len = 0usize;
    while !layer.is_empty() {
        // Epsilon-close the layer, keeping the lexicographic order of words.
        let mut frontier: Vec<(Vec<Obs>, u32, Rc<[Config]>)> = Vec::new();
        let mut i = 0;
        while i < layer.len() {
            let (w, q, cs) = layer[i].clone();
            i += 1;
            let vs = visited.entry(q).or_default();
            if vs.iter().any(|y| eng.weaker(y, &cs)) {
                continue;
            }
            vs.push(cs.clone());
            if pg.accepting(q) && !eng.accepts(&cs) && report(&w) {
                return Verdict::Counterexample(w);
            }
            frontier.push((w.clone(), q, cs.clone()));
            for (a, t) in pg.succ(q).iter() {
                if a.is_none() {
                    layer.insert(i, (w.clone(), *t, cs.clone()));
                }
            }
        }
        if max_len.is_some_and(|m| len >= m) {
            break;
        }
        let mut next: Vec<(Vec<Obs>, u32, Rc<[Config]>)> = Vec::new();
        for (w, q, cs) in &frontier {
            let mut edges: Vec<(Obs, u32)> = pg.succ(*q).iter().filter_map(|(a, t)| a.map(|a| (a, *t))).collect();
            edges.sort();
            for (a, t) in edges {
                let ncs = eng.read(cs, a);
                let mut w2 = w.clone();
                w2.push(a);
                next.push((w2, t, ncs.into()));
            }
        }
        next.sort_by(|x, y| x.0.cmp(&y.0));
        layer = next;
        len += 1;
    }
    Verdict::Included
}

/// Does some word of `np` match `word` within bound `k`?
pub fn word_has_equivalent<Q: Nfa>(ng: &mut StateGraph<'_, Q>, word: &[Obs], k: usize) -> bool {
    let mut eng = Engine { dfa: NpDfa::new(ng), k: k.min(i16::MAX as usize / 2) as i16 };
    let mut cs = eng.close(vec![Config { set: 0, buf: vec![] }]);
    for a in word {
        cs = eng.read(&cs, *a);
        if cs.is_empty() {
            return false;
        }
    }
    eng.accepts(&cs)
}

/// Run the bound schedule. A counterexample that no bound can repair (the
/// word has no match even at displacement `|word|`) is reported at once;
/// otherwise the same bound is searched again for such a word before the
/// bound is raised. A counterexample left over at the end of the schedule
/// is reported with `genuine == false` ("bound exhausted").
pub fn check_iterative<P: Nfa, Q: Nfa>(p: &P, np: &Q, schedule: &[usize], max_len: Option<usize>) -> Outcome {
    let mut pg = StateGraph::new(p);
    let mut ng = StateGraph::new(np);
    let mut last = None;
    for &k in schedule {
        match check_graphs(&mut pg, &mut ng, k, max_len) {
            Verdict::Included => return Outcome { verdict: Verdict::Included, bound: k, genuine: true },
            Verdict::Counterexample(w) => {
                if !word_has_equivalent(&mut ng, &w, w.len()) {
                    return Outcome { verdict: Verdict::Counterexample(w), bound: k, genuine: true };
                }
                if let Verdict::Counterexample(g) = check_genuine(p, np, k, max_len) {
                    return Outcome { verdict: Verdict::Counterexample(g), bound: k, genuine: true };
                }
                last = Some((w, k));
            }
        }
    }
    match last {
        Some((w, k)) => Outcome { verdict: Verdict::Counterexample(w), bound: k, genuine: false },
        None => Outcome { verdict: Verdict::Included, bound: 0, genuine: true },
    }
}

/// Is `w2` obtained from `w1` by commuting adjacent independent symbols,
/// with no symbol displaced by more than `k` positions?
pub fn equivalent_mod_i(w1: &[Obs], w2: &[Obs], k: usize) -> bool {
    if w1.len() != w2.len() {
        return false;
    }
    // Same-thread symbols are dependent, so occurrences match up by their
    // rank within the thread.
    let mut slots: HashMap<u16, Vec<usize>> = HashMap::new();
    for (i, o) in w2.iter().enumerate() {
        slots.entry(o.tid).or_default().push(i);
    }
    let mut used: HashMap<u16, usize> = HashMap::new();
    let mut pi = Vec::with_capacity(w1.len());
    for (i, o) in w1.iter().enumerate() {
        let r = used.entry(o.tid).or_default();
        let Some(&j) = slots.get(&o.tid).and_then(|v| v.get(*r)) else { return false };
        *r += 1;
        if w2[j] != *o || i.abs_diff(j) > k {
            return false;
        }
        pi.push(j);
    }
    for i in 0..w1.len() {
        for j in i + 1..w1.len() {
            if pi[i] > pi[j] && !independent(&w1[i], &w1[j]) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{abstract_program, AVar, Theta};
    use crate::automata::{build_np_nfa, build_p_nfa, enumerate_executions, ConflictSet};
    use crate::lang::{parse_program, LocId};

    fn o(t: usize, th: Theta, l: u32) -> Obs {
        Obs::new(t, th, LocId(l))
    }

    /// Explicit finite automaton over a word list, for unit tests.
    struct Words(Vec<Vec<Obs>>);

    impl Nfa for Words {
        type State = (usize, usize);
        fn initial(&self) -> (usize, usize) {
            (usize::MAX, 0)
        }
        fn successors(&self, s: &(usize, usize)) -> Vec<(Option<Obs>, (usize, usize))> {
            if s.0 == usize::MAX {
                return (0..self.0.len()).map(|i| (None, (i, 0))).collect();
            }
            match self.0[s.0].get(s.1) {
                Some(a) => vec![(Some(*a), (s.0, s.1 + 1))],
                None => vec![],
            }
        }
        fn is_accepting(&self, s: &(usize, usize)) -> bool {
            s.0 != usize::MAX && s.1 == self.0[s.0].len()
        }
    }

    #[test]
    fn identity_at_bound_zero() {
        let w = vec![o(1, Theta::Write(AVar(0)), 0), o(2, Theta::Read(AVar(1)), 1)];
        let a = Words(vec![w.clone()]);
        assert_eq!(check_inclusion(&a, &a, 0, None), Verdict::Included);
    }

    #[test]
    fn single_swap_needs_bound_one() {
        let a = o(1, Theta::Write(AVar(0)), 0);
        let b = o(2, Theta::Read(AVar(1)), 1);
        let p = Words(vec![vec![a, b]]);
        let np = Words(vec![vec![b, a]]);
        assert_eq!(check_inclusion(&p, &np, 1, None), Verdict::Included);
        assert_eq!(check_inclusion(&p, &np, 0, None), Verdict::Counterexample(vec![a, b]));
    }

    #[test]
    fn dependent_swap_never_matches() {
        let a = o(1, Theta::Write(AVar(0)), 0);
        let b = o(2, Theta::Read(AVar(0)), 1);
        assert!(!equivalent_mod_i(&[a, b], &[b, a], 5));
        let p = Words(vec![vec![a, b]]);
        let np = Words(vec![vec![b, a]]);
        assert!(!check_inclusion(&p, &np, 4, None).is_included());
    }

    #[test]
    fn equivalence_basics() {
        let a = o(1, Theta::Write(AVar(0)), 0);
        let b = o(2, Theta::Read(AVar(1)), 1);
        assert!(equivalent_mod_i(&[a, b], &[a, b], 0));
        assert!(equivalent_mod_i(&[a, b], &[b, a], 1));
        assert!(!equivalent_mod_i(&[a, b], &[b, a], 0));
        assert!(!equivalent_mod_i(&[a], &[b], 3));
    }

    #[test]
    fn rmw_race_has_counterexample() {
        let src = "decl shared x; decl local t, u;\nthread T1 { a: t := x; b: x := t; }\nthread T2 { c: u := x; d: x := u; }";
        let ap = abstract_program(&parse_program(src).unwrap());
        let p = build_p_nfa(&ap, &ConflictSet::default());
        let np = build_np_nfa(&ap);
        let v = check_inclusion(&p, &np, 4, None);
        let Verdict::Counterexample(w) = v else { panic!("expected counterexample") };
        assert_eq!(w.len(), 4);
        let nps = enumerate_executions(&np, 4);
        assert!(nps.iter().all(|u| !equivalent_mod_i(&w, u, 4)));
    }

    #[test]
    fn np_is_included_in_itself_through_p() {
        let src = "decl shared x, y;\nthread T1 { a: x := 1; }\nthread T2 { b: y := 1; }";
        let ap = abstract_program(&parse_program(src).unwrap());
        let p = build_p_nfa(&ap, &ConflictSet::default());
        let np = build_np_nfa(&ap);
        assert_eq!(check_inclusion(&p, &np, 1, None), Verdict::Included);
        let out = check_iterative(&p, &np, &DEFAULT_SCHEDULE, None);
        assert!(out.verdict.is_included());
    }
}
