//! Data-oblivious abstraction: keep only the kind of each shared access,
//! make every branch nondeterministic, and pass synchronization through.

use crate::lang::{Block, Item, LocId, NodeKind, Program, SyncOp, Tid, VarId, VarKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;

/// Abstract memory location: a shared variable or the device `dev`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AVar(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Access {
    Read(AVar),
    Write(AVar),
}

impl Access {
    pub fn var(self) -> AVar {
        match self {
            Access::Read(v) | Access::Write(v) => v,
        }
    }

    pub fn is_write(self) -> bool {
        matches!(self, Access::Write(_))
    }

    /// Same location and at least one write.
    pub fn conflicts_with(self, other: Access) -> bool {
        self.var() == other.var() && (self.is_write() || other.is_write())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Theta {
    Read(AVar),
    Write(AVar),
    If,
    Else,
    Loop,
    ExitLoop,
}

impl Theta {
    pub fn access(self) -> Option<Access> {
        match self {
            Theta::Read(v) => Some(Access::Read(v)),
            Theta::Write(v) => Some(Access::Write(v)),
            _ => None,
        }
    }
}

impl From<Access> for Theta {
    fn from(a: Access) -> Theta {
        match a {
            Access::Read(v) => Theta::Read(v),
            Access::Write(v) => Theta::Write(v),
        }
    }
}

/// An abstract observable `(tid, θ, loc)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Obs {
    pub tid: u16,
    pub theta: Theta,
    pub loc: LocId,
}

impl Obs {
    pub fn new(tid: Tid, theta: Theta, loc: LocId) -> Obs {
        Obs { tid: tid as u16, theta, loc }
    }
}

/// Dependence is the complement: same thread, or same location with a write.
/// Branch tags of different threads always commute.
pub fn independent(a: &Obs, b: &Obs) -> bool {
    if a.tid == b.tid {
        return false;
    }
    match (a.theta.access(), b.theta.access()) {
        (Some(x), Some(y)) => !x.conflicts_with(y),
        _ => true,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AbsKind {
    /// Emits its accesses and falls through; with no accesses this is `skip`.
    Plain,
    If,
    While,
    Sync(SyncOp, VarId),
    Goto(LocId),
    Yield,
    Last,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbsNode {
    /// Accesses in execution order: reads of the right-hand side, then the write.
    pub ops: Vec<Access>,
    pub kind: AbsKind,
}

#[derive(Clone, Debug)]
pub struct AbstractProgram {
    /// The concrete program, kept for structure, names and flow graphs.
    pub program: Program,
    pub nodes: Vec<AbsNode>,
    /// Abstract variable names: shared variables in declaration order, then `dev`.
    pub vars: Vec<String>,
    /// Dense slot for each lock/cond/guard variable, indexed by `VarId`.
    pub sync_slot: Vec<Option<usize>>,
    pub num_sync: usize,
    pub succ: Vec<Vec<LocId>>,
    pub pred: Vec<Vec<LocId>>,
}

impl AbstractProgram {
    pub fn node(&self, l: LocId) -> &AbsNode {
        &self.nodes[l.idx()]
    }

    pub fn num_threads(&self) -> usize {
        self.program.threads.len()
    }

    pub fn dev(&self) -> AVar {
        AVar(self.vars.len() as u32 - 1)
    }

    pub fn var_name(&self, v: AVar) -> &str {
        &self.vars[v.0 as usize]
    }

    pub fn fmt_obs(&self, o: &Obs) -> String {
        let th = match o.theta {
            Theta::Read(v) => format!("r({})", self.var_name(v)),
            Theta::Write(v) => format!("w({})", self.var_name(v)),
            Theta::If => "if".into(),
            Theta::Else => "else".into(),
            Theta::Loop => "loop".into(),
            Theta::ExitLoop => "exitloop".into(),
        };
        format!("T{}:{}@{}", o.tid, th, self.program.name(o.loc))
    }

    pub fn fmt_word(&self, w: &[Obs]) -> String {
        w.iter().map(|o| self.fmt_obs(o)).collect::<Vec<_>>().join(" ")
    }

    fn fmt_access(&self, a: Access) -> String {
        match a {
            Access::Read(v) => format!("r({});", self.var_name(v)),
            Access::Write(v) => format!("w({});", self.var_name(v)),
        }
    }

    /// The abstract program in the syntax of the abstract language.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for th in &self.program.threads {
            let _ = writeln!(s, "thread {} {{", th.name);
            self.dump_block(&th.body, 1, &mut s);
            s.push_str("}\n");
        }
        s
    }

    fn dump_block(&self, b: &Block, depth: usize, s: &mut String) {
        let pad = "    ".repeat(depth);
        for it in &b.items {
            let l = it.loc();
            let n = self.node(l);
            let mut line = format!("{pad}{}: ", self.program.name(l));
            for a in &n.ops {
                line.push_str(&self.fmt_access(*a));
                line.push(' ');
            }
            match (it, n.kind) {
                (Item::While { body, .. }, _) => {
                    let _ = writeln!(s, "{line}while (*) {{");
                    self.dump_block(body, depth + 1, s);
                    let _ = writeln!(s, "{pad}}}");
                }
                (Item::If { then_block, else_block, .. }, _) => {
                    let _ = writeln!(s, "{line}if (*) {{");
                    self.dump_block(then_block, depth + 1, s);
                    if let Some(e) = else_block {
                        let _ = writeln!(s, "{pad}}} else {{");
                        self.dump_block(e, depth + 1, s);
                    }
                    let _ = writeln!(s, "{pad}}}");
                }
                (_, AbsKind::Plain) => {
                    if n.ops.is_empty() {
                        line.push_str("skip;");
                    }
                    let _ = writeln!(s, "{}", line.trim_end());
                }
                (_, AbsKind::Sync(op, v)) => {
                    let _ = writeln!(s, "{line}{}({});", op.keyword(), self.program.var(v).name);
                }
                (_, AbsKind::Goto(t)) => {
                    let _ = writeln!(s, "{line}goto {};", self.program.name(t));
                }
                (_, AbsKind::Yield) => {
                    let _ = writeln!(s, "{line}yield;");
                }
                _ => {}
            }
        }
    }
}

pub fn abstract_program(p: &Program) -> AbstractProgram {
    let mut vars: Vec<String> = Vec::new();
    let mut avar = vec![None; p.vars.len()];
    for v in p.vars_of(VarKind::Shared) {
        avar[v.idx()] = Some(AVar(vars.len() as u32));
        vars.push(p.var(v).name.clone());
    }
    let dev = AVar(vars.len() as u32);
    vars.push("dev".into());

    let mut sync_slot = vec![None; p.vars.len()];
    let mut num_sync = 0;
    for (i, v) in p.vars.iter().enumerate() {
        if matches!(v.kind, VarKind::Lock | VarKind::Cond | VarKind::Guard) {
            sync_slot[i] = Some(num_sync);
            num_sync += 1;
        }
    }

    let reads = |e: &crate::lang::Expr| -> Vec<Access> {
        let mut vs = Vec::new();
        e.vars(&mut vs);
        let mut out: Vec<Access> = Vec::new();
        for v in vs {
            if let Some(a) = avar[v.idx()] {
                if !out.contains(&Access::Read(a)) {
                    out.push(Access::Read(a));
                }
            }
        }
        out
    };

    let nodes = p
        .nodes
        .iter()
        .map(|n| match &n.kind {
            NodeKind::Assign { target, value } => {
                let mut ops = reads(value);
                if let Some(a) = avar[target.idx()] {
                    ops.push(Access::Write(a));
                }
                AbsNode { ops, kind: AbsKind::Plain }
            }
            NodeKind::Havoc { target } => {
                let ops = avar[target.idx()].map(Access::Write).into_iter().collect();
                AbsNode { ops, kind: AbsKind::Plain }
            }
            NodeKind::Input { target, .. } => {
                let mut ops = vec![Access::Write(dev)];
                if let Some(a) = avar[target.idx()] {
                    ops.push(Access::Write(a));
                }
                AbsNode { ops, kind: AbsKind::Plain }
            }
            NodeKind::Output { value, .. } => {
                let mut ops = reads(value);
                ops.push(Access::Write(dev));
                AbsNode { ops, kind: AbsKind::Plain }
            }
            NodeKind::While { cond } => AbsNode { ops: reads(cond), kind: AbsKind::While },
            NodeKind::If { cond } => AbsNode { ops: reads(cond), kind: AbsKind::If },
            NodeKind::Sync { op, var } => AbsNode { ops: vec![], kind: AbsKind::Sync(*op, *var) },
            NodeKind::Goto { target } => AbsNode { ops: vec![], kind: AbsKind::Goto(*target) },
            NodeKind::Yield => AbsNode { ops: vec![], kind: AbsKind::Yield },
            NodeKind::Skip => AbsNode { ops: vec![], kind: AbsKind::Plain },
            NodeKind::Last => AbsNode { ops: vec![], kind: AbsKind::Last },
        })
        .collect();
    let cfg = p.cfg();
    AbstractProgram {
        program: p.clone(),
        nodes,
        vars,
        sync_slot,
        num_sync,
        succ: cfg.succ,
        pred: cfg.pred,
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Read(v) => write!(f, "(read,{})", v.0),
            Theta::Write(v) => write!(f, "(write,{})", v.0),
            Theta::If => f.write_str("if"),
            Theta::Else => f.write_str("else"),
            Theta::Loop => f.write_str("loop"),
            Theta::ExitLoop => f.write_str("exitloop"),
        }
    }
}
