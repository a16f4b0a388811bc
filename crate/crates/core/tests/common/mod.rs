//! Brute-force oracles shared by the integration tests. They re-derive
//! lock semantics from the flow graph without going through the solver.
#![allow(dead_code)]

use locksynth::automata::ConflictSet;
use locksynth::lang::{parse_program, LocId, NodeKind, Program, SyncOp, Tid};
use std::collections::{BTreeMap, BTreeSet, HashSet};

pub fn corpus_src(name: &str) -> String {
    std::fs::read_to_string(format!("{}/corpus/{name}.lsy", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn corpus(name: &str) -> Program {
    parse_program(&corpus_src(name)).unwrap()
}

pub fn corpus_names() -> Vec<String> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus");
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok()?.path().file_stem()?.to_str().map(String::from))
        .collect();
    v.sort();
    v
}

/// One-lock behaviour of a thread: whether the lock is held while each
/// location executes (`il`) and when it is left (`ile`), with the lock and
/// unlock actions this forces. Indexed like `locs`.
#[derive(Clone, Debug)]
pub struct Pattern {
    pub il: Vec<bool>,
    pub ile: Vec<bool>,
    pub lo_bef: Vec<bool>,
    pub lo_aft: Vec<bool>,
    pub un_bef: Vec<bool>,
    pub un_aft: Vec<bool>,
}

impl Pattern {
    pub fn lock_statements(&self) -> usize {
        self.lo_bef.iter().chain(&self.lo_aft).filter(|b| **b).count()
    }
}

/// Every legitimate single-lock pattern of thread `tid`: the lock is never
/// taken twice or released unheld, is free at the thread's start and end,
/// every edge into a location agrees on it, and it is not held across a
/// `wait` or an input `lock`.
pub fn thread_patterns(p: &Program, tid: Tid) -> (Vec<LocId>, Vec<Pattern>) {
    let cfg = p.cfg();
    let mut locs = p.statements(tid);
    let th = p.thread(tid);
    locs.push(th.last);
    let n = locs.len();
    let pos: BTreeMap<LocId, usize> = locs.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let preds: Vec<Vec<usize>> = locs.iter().map(|l| cfg.pred[l.idx()].iter().map(|q| pos[q]).collect()).collect();
    let goto_targets: HashSet<LocId> = p
        .nodes
        .iter()
        .filter_map(|nd| match nd.kind {
            NodeKind::Goto { target } => Some(target),
            _ => None,
        })
        .collect();
    let free = 2 * (n - 1);
    assert!(free <= 24, "thread too large for enumeration");
    let mut out = Vec::new();
    'next: for bits in 0u32..(1 << free) {
        let mut il = vec![false; n];
        let mut ile = vec![false; n];
        for i in 0..n - 1 {
            il[i] = bits >> (2 * i) & 1 == 1;
            ile[i] = bits >> (2 * i + 1) & 1 == 1;
        }
        let mut pat = Pattern {
            lo_bef: vec![false; n],
            lo_aft: vec![false; n],
            un_bef: vec![false; n],
            un_aft: vec![false; n],
            il: il.clone(),
            ile: ile.clone(),
        };
        for i in 0..n {
            let ps = &preds[i];
            if ps.windows(2).any(|w| ile[w[0]] != ile[w[1]]) {
                continue 'next;
            }
            if locs[i] == th.first && ps.iter().any(|q| ile[*q]) {
                continue 'next;
            }
            let pin = ps.iter().any(|q| ile[*q]);
            pat.lo_bef[i] = il[i] && !pin;
            pat.un_bef[i] = !il[i] && pin;
            pat.lo_aft[i] = ile[i] && !il[i];
            pat.un_aft[i] = il[i] && !ile[i];
            let kind = &p.node(locs[i]).kind;
            match kind {
                NodeKind::Last if il[i] || ile[i] => continue 'next,
                NodeKind::Sync { op: SyncOp::Wait | SyncOp::WaitNot | SyncOp::Lock, .. } if il[i] => continue 'next,
                NodeKind::Goto { .. } if pat.lo_aft[i] || pat.un_aft[i] => continue 'next,
                _ => {}
            }
            if goto_targets.contains(&locs[i]) && (pat.lo_bef[i] || pat.un_bef[i]) {
                continue 'next;
            }
        }
        for i in 0..n {
            for &q in &preds[i] {
                if (pat.lo_bef[i] && pat.un_aft[q]) || (pat.un_bef[i] && pat.lo_aft[q]) {
                    continue 'next;
                }
            }
        }
        out.push(pat);
    }
    (locs, out)
}

/// Per thread, the locations that must be held (`il`) and held on exit
/// (`ile`) for a single lock to protect every conflict of `cs`.
pub fn required(p: &Program, cs: &ConflictSet) -> BTreeMap<Tid, (BTreeSet<LocId>, BTreeSet<LocId>)> {
    let mut req: BTreeMap<Tid, (BTreeSet<LocId>, BTreeSet<LocId>)> = BTreeMap::new();
    for c in &cs.conflicts {
        let e = req.entry(p.node(c.pre.loc).tid).or_default();
        e.0.insert(c.pre.loc);
        e.0.insert(c.mid.loc);
        if c.pre.loc != c.mid.loc {
            e.1.insert(c.pre.loc);
        }
        req.entry(p.node(c.cpre.loc).tid).or_default().0.insert(c.cpre.loc);
    }
    req
}

pub fn satisfies(locs: &[LocId], pat: &Pattern, req: &(BTreeSet<LocId>, BTreeSet<LocId>)) -> bool {
    locs.iter().enumerate().all(|(i, l)| (!req.0.contains(l) || pat.il[i]) && (!req.1.contains(l) || pat.ile[i]))
}

/// Held-lock state of every statement of a patched program, found by
/// walking its flow graph. Only locks named in `locks` are tracked.
#[derive(Debug)]
pub struct Held {
    /// Original statement name and thread -> bitmask of held locks.
    pub mask: BTreeMap<(Tid, String), u64>,
    pub lock_statements: usize,
}

impl Held {
    pub fn held(&self, tid: Tid, name: &str) -> u64 {
        self.mask[&(tid, name.to_string())]
    }

    pub fn protected(&self) -> usize {
        self.mask.values().filter(|m| **m != 0).count()
    }

    /// Cross-thread statement pairs that share a lock.
    pub fn shared_pairs(&self) -> usize {
        let v: Vec<_> = self.mask.iter().collect();
        let mut n = 0;
        for (i, ((t1, _), m1)) in v.iter().enumerate() {
            for ((t2, _), m2) in &v[i + 1..] {
                if t1 != t2 && **m1 & **m2 != 0 {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Fails on a double acquire, a release of an unheld lock, a lock held at
/// the end of a thread, or a statement reached with different held sets.
pub fn held_oracle(patched: &Program, original: &Program, locks: &[String]) -> Result<Held, String> {
    let cfg = patched.cfg();
    let bit = |v: locksynth::lang::VarId| -> Option<u64> {
        let name = &patched.var(v).name;
        locks.iter().position(|l| l == name).map(|i| 1u64 << i)
    };
    let mut mask = BTreeMap::new();
    let mut lock_statements = 0;
    for th in &patched.threads {
        let mut seen: BTreeMap<LocId, BTreeSet<u64>> = BTreeMap::new();
        let mut work = vec![(th.first, 0u64)];
        while let Some((l, m)) = work.pop() {
            if !seen.entry(l).or_default().insert(m) {
                continue;
            }
            let node = patched.node(l);
            let out = match node.kind {
                NodeKind::Sync { op: SyncOp::Lock, var } if bit(var).is_some() => {
                    let b = bit(var).unwrap();
                    if m & b != 0 {
                        return Err(format!("{}: {} acquired twice", th.name, node.name));
                    }
                    m | b
                }
                NodeKind::Sync { op: SyncOp::Unlock, var } if bit(var).is_some() => {
                    let b = bit(var).unwrap();
                    if m & b == 0 {
                        return Err(format!("{}: {} released unheld", th.name, node.name));
                    }
                    m & !b
                }
                NodeKind::Last if m != 0 => return Err(format!("{}: ends holding {m:#b}", th.name)),
                _ => m,
            };
            for s in &cfg.succ[l.idx()] {
                work.push((*s, out));
            }
        }
        for (l, ms) in &seen {
            let node = patched.node(*l);
            if ms.len() != 1 {
                return Err(format!("{}: {} reached with held sets {ms:?}", th.name, node.name));
            }
            if matches!(node.kind, NodeKind::Sync { op: SyncOp::Lock, var } if bit(var).is_some()) {
                lock_statements += 1;
            }
            // Generated labels shift when statements are inserted; only
            // written labels identify original statements.
            if !node.explicit {
                continue;
            }
            if let Some(o) = original.loc_named(&node.name, Some(th.tid)) {
                if !matches!(original.node(o).kind, NodeKind::Last) {
                    mask.insert((th.tid, node.name.clone()), *ms.iter().next().unwrap());
                }
            }
        }
    }
    Ok(Held { mask, lock_statements })
}

/// Can `to` be reached from `from` without passing an `unlock`?
pub fn reaches_without_unlock(p: &Program, from: LocId, to: LocId) -> bool {
    let cfg = p.cfg();
    let mut stack = vec![from];
    let mut seen = HashSet::new();
    while let Some(l) = stack.pop() {
        if l == to {
            return true;
        }
        if !seen.insert(l) || matches!(p.node(l).kind, NodeKind::Sync { op: SyncOp::Unlock, .. }) {
            continue;
        }
        stack.extend(cfg.succ[l.idx()].iter().copied());
    }
    false
}
