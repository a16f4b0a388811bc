use super::{apply_placement, LockPlacement};
use crate::abstraction::abstract_program;
use crate::automata::{build_np_nfa, build_p_nfa, find_state, ConflictSet, Nfa, StateGraph};
use crate::inclusion::{check_iterative, Verdict, SYNTH_SCHEDULE};
use crate::lang::{LocId, NodeKind, Program, SyncOp, Tid};
use serde::Serialize;
use std::collections::{HashMap, VecDeque};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    /// A preemptive run of the patched program with no non-preemptive
    /// equivalent in the original.
    NotIncluded { word: String },
    /// Reachable state where no thread can move and not all have finished.
    Deadlock { state: String, depth: usize },
    /// A thread path that misuses a synthesized lock.
    Illegitimate { thread: String, reason: String, trace: Vec<String> },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TheoremReport {
    pub violations: Vec<Violation>,
    /// Some preemptive words only match at a displacement beyond the
    /// schedule; none lacks a match altogether.
    pub bound_exhausted: bool,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a placement the hard way: the patched program must be
/// preemption-safe with respect to the original, deadlock free, and use its
/// new locks legitimately on every thread path.
pub fn verify_theorem1(orig: &Program, pl: &LockPlacement) -> TheoremReport {
    verify_theorem1_with(orig, pl, &SYNTH_SCHEDULE)
}

pub fn verify_theorem1_with(orig: &Program, pl: &LockPlacement, schedule: &[usize]) -> TheoremReport {
    let patched = apply_placement(orig, pl);
    let ap0 = abstract_program(orig);
    let ap1 = abstract_program(&patched);
    let mut violations = Vec::new();

    let p = build_p_nfa(&ap1, &ConflictSet::default());
    let np = build_np_nfa(&ap0);
    let out = check_iterative(&p, &np, schedule, None);
    let mut bound_exhausted = false;
    if let Verdict::Counterexample(w) = out.verdict {
        if out.genuine {
            violations.push(Violation::NotIncluded { word: ap0.fmt_word(&w) });
        } else {
            bound_exhausted = true;
        }
    }

    let mut g = StateGraph::new(&p);
    if let Some(path) = find_state(&mut g, |s| p.model.stuck(&s.pts, &s.sync)) {
        let last = *path.last().unwrap();
        violations.push(Violation::Deadlock { state: p.describe(g.state(last)), depth: path.len() - 1 });
    }

    violations.extend(check_legitimacy(&patched, orig.vars.len()));
    TheoremReport { violations, bound_exhausted }
}

/// Per-thread lock discipline for the lock variables numbered from
/// `first_var` on.
pub fn check_legitimacy(p: &Program, first_var: usize) -> Vec<Violation> {
    p.threads
        .iter()
        .filter_map(|th| {
            monitor(p, th.tid, first_var)
                .map(|(reason, trace)| Violation::Illegitimate { thread: th.name.clone(), reason, trace })
        })
        .collect()
}

/// Explore every flow path of one thread, tracking which synthesized locks
/// are held: every lock is released before the thread ends, nothing is
/// released that is not held, and nothing is acquired twice.
fn monitor(p: &Program, tid: Tid, first_new: usize) -> Option<(String, Vec<String>)> {
    type St = (LocId, u64);
    let cfg = p.cfg();
    let th = p.thread(tid);
    let start: St = (th.first, 0);
    let mut parent: HashMap<St, Option<St>> = HashMap::new();
    parent.insert(start, None);
    let mut q = VecDeque::from([start]);
    let trace = |parent: &HashMap<St, Option<St>>, mut s: St| {
        let mut t = vec![p.name(s.0).to_string()];
        while let Some(Some(u)) = parent.get(&s) {
            t.push(p.name(u.0).to_string());
            s = *u;
        }
        t.reverse();
        t
    };
    while let Some(s) = q.pop_front() {
        let (x, held) = s;
        let node = p.node(x);
        let mine = match node.kind {
            NodeKind::Sync { op: op @ (SyncOp::Lock | SyncOp::Unlock), var }
                if var.idx() >= first_new && var.idx() - first_new < 64 =>
            {
                Some((op, var.idx() - first_new))
            }
            _ => None,
        };
        let bad = match mine {
            Some((SyncOp::Lock, lk)) if held >> lk & 1 == 1 => Some("lock acquired twice"),
            Some((SyncOp::Unlock, lk)) if held >> lk & 1 == 0 => Some("unlock of a lock not held"),
            None if node.kind == NodeKind::Last && held != 0 => Some("thread ends holding a lock"),
            _ => None,
        };
        if let Some(r) = bad {
            return Some((r.to_string(), trace(&parent, s)));
        }
        let held2 = match mine {
            Some((SyncOp::Lock, lk)) => held | 1 << lk,
            Some((_, lk)) => held & !(1 << lk),
            None => held,
        };
        for y in &cfg.succ[x.idx()] {
            let t: St = (*y, held2);
            if !parent.contains_key(&t) {
                parent.insert(t, Some(s));
                q.push_back(t);
            }
        }
    }
    None
}
