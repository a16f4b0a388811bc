//! The concrete input language: variables, threads of labelled statements,
//! per-thread flow graphs, and a canonical printer.
//!
//! Surface syntax, one statement per label:
//!
//! ```text
//! decl shared open;
//! decl local t;
//! thread T1 {
//!   1: while (*) {
//!     2: if (open == 0) { 3: out(dev, 1); }
//!     4: open := open + 1;
//!     5: yield;
//!   }
//! }
//! ```
//!
//! Labels are optional; unlabelled statements get `<thread>#<n>` names which
//! cannot clash with user labels. Every thread ends in a synthetic `last`.

mod flow;
mod lexer;
mod parser;
mod printer;

pub use flow::{build_flow_graph, Cfg, FlowGraph};
pub use parser::parse_program;
pub use printer::{print_expr, print_program};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Program-wide location identifier; indexes [`Program::nodes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocId(pub u32);

impl LocId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub u32);

impl VarId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Thread identifiers start at 1.
pub type Tid = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Shared,
    Local,
    Lock,
    Cond,
    Guard,
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarKind::Shared => "shared",
            VarKind::Local => "local",
            VarKind::Lock => "lock",
            VarKind::Cond => "cond",
            VarKind::Guard => "guard",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Var {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    /// Nondeterministic value, written `*`.
    Star,
    Var(VarId),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn vars(&self, out: &mut Vec<VarId>) {
        match self {
            Expr::Int(_) | Expr::Star => {}
            Expr::Var(v) => out.push(*v),
            Expr::Unary(_, e) => e.vars(out),
            Expr::Binary(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncOp {
    Lock,
    Unlock,
    Wait,
    WaitNot,
    Notify,
    Reset,
    Assume,
    AssumeNot,
    Set,
    Unset,
}

impl SyncOp {
    pub fn keyword(self) -> &'static str {
        match self {
            SyncOp::Lock => "lock",
            SyncOp::Unlock => "unlock",
            SyncOp::Wait => "wait",
            SyncOp::WaitNot => "wait_not",
            SyncOp::Notify => "notify",
            SyncOp::Reset => "reset",
            SyncOp::Assume => "assume",
            SyncOp::AssumeNot => "assume_not",
            SyncOp::Set => "set",
            SyncOp::Unset => "unset",
        }
    }

    pub fn from_keyword(s: &str) -> Option<SyncOp> {
        Some(match s {
            "lock" => SyncOp::Lock,
            "unlock" => SyncOp::Unlock,
            "wait" => SyncOp::Wait,
            "wait_not" => SyncOp::WaitNot,
            "notify" => SyncOp::Notify,
            "reset" => SyncOp::Reset,
            "assume" => SyncOp::Assume,
            "assume_not" => SyncOp::AssumeNot,
            "set" => SyncOp::Set,
            "unset" => SyncOp::Unset,
            _ => return None,
        })
    }

    pub fn var_kind(self) -> VarKind {
        match self {
            SyncOp::Lock | SyncOp::Unlock => VarKind::Lock,
            SyncOp::Wait | SyncOp::WaitNot | SyncOp::Notify | SyncOp::Reset => VarKind::Cond,
            _ => VarKind::Guard,
        }
    }
}

/// Statement content without nested blocks; structure lives in [`Block`].
#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Assign { target: VarId, value: Expr },
    Havoc { target: VarId },
    Input { target: VarId, channel: String },
    Output { channel: String, value: Expr },
    While { cond: Expr },
    If { cond: Expr },
    Sync { op: SyncOp, var: VarId },
    Goto { target: LocId },
    Yield,
    Skip,
    Last,
}

impl NodeKind {
    pub fn is_branch(&self) -> bool {
        matches!(self, NodeKind::While { .. } | NodeKind::If { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub col: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub tid: Tid,
    pub kind: NodeKind,
    /// Whether the label was written in the source.
    pub explicit: bool,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    Simple(LocId),
    While { loc: LocId, body: Block },
    If { loc: LocId, then_block: Block, else_block: Option<Block> },
}

impl Item {
    pub fn loc(&self) -> LocId {
        match self {
            Item::Simple(l) | Item::While { loc: l, .. } | Item::If { loc: l, .. } => *l,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block {
    pub items: Vec<Item>,
    /// Byte offset just after the opening brace.
    pub open: usize,
    /// Byte offset of the closing brace.
    pub close: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thread {
    pub tid: Tid,
    pub name: String,
    pub body: Block,
    pub first: LocId,
    pub last: LocId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecl {
    pub name: String,
    pub members: Vec<LocId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub vars: Vec<Var>,
    pub channels: Vec<String>,
    pub threads: Vec<Thread>,
    pub nodes: Vec<Node>,
    pub blocks: Vec<BlockDecl>,
    pub costs: Vec<(LocId, f64)>,
    pub source: String,
    /// Byte offset right after the last `decl` line.
    pub decl_end: usize,
}

impl Program {
    pub fn node(&self, l: LocId) -> &Node {
        &self.nodes[l.idx()]
    }

    pub fn name(&self, l: LocId) -> &str {
        &self.nodes[l.idx()].name
    }

    pub fn thread(&self, tid: Tid) -> &Thread {
        &self.threads[tid - 1]
    }

    pub fn var(&self, v: VarId) -> &Var {
        &self.vars[v.idx()]
    }

    pub fn var_named(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(|i| VarId(i as u32))
    }

    pub fn vars_of(&self, kind: VarKind) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(move |(_, v)| v.kind == kind)
            .map(|(i, _)| VarId(i as u32))
    }

    /// Resolve a location by name; `last` needs a thread, written `T.last`
    /// or passed through `tid`.
    pub fn loc_named(&self, name: &str, tid: Option<Tid>) -> Option<LocId> {
        if let Some((t, l)) = name.split_once('.') {
            let th = self.threads.iter().find(|th| th.name == t)?;
            return self.loc_named(l, Some(th.tid));
        }
        if name == "last" {
            return tid.map(|t| self.thread(t).last);
        }
        self.nodes
            .iter()
            .position(|n| n.name == name && tid.map_or(true, |t| n.tid == t))
            .map(|i| LocId(i as u32))
    }

    /// All non-`last` locations of a thread in textual order.
    pub fn statements(&self, tid: Tid) -> Vec<LocId> {
        let mut out = Vec::new();
        collect_locs(&self.thread(tid).body, &mut out);
        out
    }

    /// Real statements of all threads (excludes the synthetic `last`s).
    pub fn all_statements(&self) -> Vec<LocId> {
        self.threads.iter().flat_map(|t| self.statements(t.tid)).collect()
    }

    pub fn cost_of(&self, l: LocId) -> Option<f64> {
        self.costs.iter().find(|(x, _)| *x == l).map(|(_, c)| *c)
    }

    pub fn cfg(&self) -> Cfg {
        Cfg::new(self)
    }
}

pub(crate) fn collect_locs(b: &Block, out: &mut Vec<LocId>) {
    for it in &b.items {
        out.push(it.loc());
        match it {
            Item::Simple(_) => {}
            Item::While { body, .. } => collect_locs(body, out),
            Item::If { then_block, else_block, .. } => {
                collect_locs(then_block, out);
                if let Some(e) = else_block {
                    collect_locs(e, out);
                }
            }
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("{line}:{col}: multiple shared reads in expression")]
    MultipleSharedReads { line: u32, col: u32 },
    #[error("{line}:{col}: statement reads and writes two shared variables")]
    TwoSharedVars { line: u32, col: u32 },
    #[error("{line}:{col}: undeclared variable `{name}`")]
    Undeclared { line: u32, col: u32, name: String },
    #[error("{line}:{col}: `{name}` is declared {found}, expected {expected}")]
    WrongKind { line: u32, col: u32, name: String, found: VarKind, expected: VarKind },
    #[error("{line}:{col}: `{name}` declared twice")]
    Redeclared { line: u32, col: u32, name: String },
    #[error("{line}:{col}: duplicate location `{label}`")]
    DuplicateLabel { line: u32, col: u32, label: String },
    #[error("{line}:{col}: goto to unknown location `{label}`")]
    UnknownGotoTarget { line: u32, col: u32, label: String },
    #[error("{line}:{col}: goto `{label}` crosses a loop boundary")]
    GotoCrossesLoop { line: u32, col: u32, label: String },
    #[error("{line}:{col}: unknown location `{label}`")]
    UnknownLocation { line: u32, col: u32, label: String },
    #[error("{line}:{col}: unknown channel `{name}`")]
    UnknownChannel { line: u32, col: u32, name: String },
    #[error("location `{label}` is unreachable")]
    Unreachable { label: String },
    #[error("location `{label}` cannot reach the end of its thread")]
    NoExit { label: String },
}
