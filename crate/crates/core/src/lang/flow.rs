use super::{Block, Item, LocId, NodeKind, Program, Tid};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Successor/predecessor tables for every location of a program.
///
/// `succ[if]` and `succ[while]` are `[taken, not taken]`; for a `while` the
/// first successor is the body (or the header itself when the body is empty).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub succ: Vec<Vec<LocId>>,
    pub pred: Vec<Vec<LocId>>,
}

impl Cfg {
    pub fn new(p: &Program) -> Cfg {
        let n = p.nodes.len();
        let mut succ = vec![Vec::new(); n];
        for th in &p.threads {
            link(p, &th.body, th.last, &mut succ);
        }
        let mut pred = vec![Vec::new(); n];
        for (u, ss) in succ.iter().enumerate() {
            for v in ss {
                if !pred[v.idx()].contains(&LocId(u as u32)) {
                    pred[v.idx()].push(LocId(u as u32));
                }
            }
        }
        for ps in &mut pred {
            ps.sort();
        }
        Cfg { succ, pred }
    }

    pub fn reachable_from(&self, start: LocId) -> Vec<bool> {
        walk(start, &self.succ)
    }

    pub fn reaching(&self, end: LocId) -> Vec<bool> {
        walk(end, &self.pred)
    }
}

fn walk(start: LocId, adj: &[Vec<LocId>]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start.idx()] = true;
    while let Some(u) = stack.pop() {
        for v in &adj[u.idx()] {
            if !seen[v.idx()] {
                seen[v.idx()] = true;
                stack.push(*v);
            }
        }
    }
    seen
}

fn first_of(b: &Block, fallback: LocId) -> LocId {
    b.items.first().map_or(fallback, |i| i.loc())
}

fn link(p: &Program, b: &Block, next: LocId, succ: &mut [Vec<LocId>]) {
    for (i, it) in b.items.iter().enumerate() {
        let nxt = b.items.get(i + 1).map_or(next, |x| x.loc());
        match it {
            Item::Simple(l) => {
                succ[l.idx()] = match p.node(*l).kind {
                    NodeKind::Goto { target } => vec![target],
                    _ => vec![nxt],
                };
            }
            Item::While { loc, body } => {
                succ[loc.idx()] = vec![first_of(body, *loc), nxt];
                link(p, body, *loc, succ);
            }
            Item::If { loc, then_block, else_block } => {
                let e = else_block.as_ref().map_or(nxt, |e| first_of(e, nxt));
                succ[loc.idx()] = vec![first_of(then_block, nxt), e];
                link(p, then_block, nxt, succ);
                if let Some(e) = else_block {
                    link(p, e, nxt, succ);
                }
            }
        }
    }
}

/// Flow graph of a single thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowGraph {
    pub tid: Tid,
    pub entry: LocId,
    pub exit: LocId,
    /// Statements in textual order followed by the exit node.
    pub nodes: Vec<LocId>,
    pub succ: BTreeMap<LocId, Vec<LocId>>,
}

impl FlowGraph {
    pub fn successors(&self, l: LocId) -> &[LocId] {
        self.succ.get(&l).map_or(&[], |v| v.as_slice())
    }

    /// Plain-text adjacency listing used by `--dump-cfg`.
    pub fn dump(&self, p: &Program) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "thread {} (entry {}, exit {})", p.thread(self.tid).name, p.name(self.entry), p.name(self.exit));
        for n in &self.nodes {
            let succ: Vec<&str> = self.successors(*n).iter().map(|x| p.name(*x)).collect();
            let _ = writeln!(s, "  {} -> {}", p.name(*n), if succ.is_empty() { "-".to_string() } else { succ.join(", ") });
        }
        s
    }
}

pub fn build_flow_graph(p: &Program, tid: Tid) -> FlowGraph {
    let cfg = p.cfg();
    let th = p.thread(tid);
    let mut nodes = p.statements(tid);
    nodes.push(th.last);
    let succ = nodes.iter().map(|n| (*n, cfg.succ[n.idx()].clone())).collect();
    FlowGraph { tid, entry: th.first, exit: th.last, nodes, succ }
}
