use super::{Insertion, LockPlacement};
use crate::lang::{Block, Item, LocId, Node, NodeKind, Program, Span, SyncOp, Tid, Var, VarId, VarKind};

/// Where an edge insertion lands in the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertPos {
    ThreadStart(Tid),
    /// Right after the whole item (for a `while`, after its block).
    After(LocId),
    ThenStart(LocId),
    /// Start of the else block, created when missing.
    ElseStart(LocId),
    BodyStart(LocId),
}

impl InsertPos {
    pub fn of(p: &Program, ins: &Insertion) -> InsertPos {
        let Some(u) = ins.from else { return InsertPos::ThreadStart(ins.tid) };
        match (&p.node(u).kind, ins.succ_index) {
            (NodeKind::If { .. }, 0) => InsertPos::ThenStart(u),
            (NodeKind::If { .. }, _) => InsertPos::ElseStart(u),
            (NodeKind::While { .. }, 0) => InsertPos::BodyStart(u),
            _ => InsertPos::After(u),
        }
    }
}

fn find_item(b: &mut Block, l: LocId) -> Option<(&mut Block, usize)> {
    if let Some(i) = b.items.iter().position(|it| it.loc() == l) {
        return Some((b, i));
    }
    let k = b.items.iter().position(|it| nested(it, l))?;
    match &mut b.items[k] {
        Item::Simple(_) => None,
        Item::While { body, .. } => find_item(body, l),
        Item::If { then_block, else_block, .. } => {
            if contains(then_block, l) {
                find_item(then_block, l)
            } else {
                else_block.as_mut().and_then(|e| find_item(e, l))
            }
        }
    }
}

fn nested(it: &Item, l: LocId) -> bool {
    match it {
        Item::Simple(_) => false,
        Item::While { body, .. } => contains(body, l),
        Item::If { then_block, else_block, .. } => {
            contains(then_block, l) || else_block.as_ref().is_some_and(|e| contains(e, l))
        }
    }
}

fn contains(b: &Block, l: LocId) -> bool {
    b.items.iter().any(|it| it.loc() == l || nested(it, l))
}

/// Patched program with the synthesized locks declared and lock/unlock
/// statements inserted. Existing locations keep their ids; new statements
/// are appended, so symbols of the patched program line up with the original.
pub fn apply_placement(p: &Program, pl: &LockPlacement) -> Program {
    let mut q = p.clone();
    let lock_vars: Vec<VarId> = pl
        .lock_names
        .iter()
        .map(|n| {
            q.vars.push(Var { name: n.clone(), kind: VarKind::Lock });
            VarId(q.vars.len() as u32 - 1)
        })
        .collect();
    let mut counter = 0;
    for ins in &pl.insertions {
        let tid = ins.tid;
        let new_items: Vec<Item> = ins
            .ops
            .iter()
            .map(|(op, lk)| {
                counter += 1;
                let name = format!("{}#L{}", p.thread(tid).name, counter);
                q.nodes.push(Node {
                    name,
                    tid,
                    kind: NodeKind::Sync { op: *op, var: lock_vars[*lk] },
                    explicit: false,
                    span: Span::default(),
                });
                Item::Simple(LocId(q.nodes.len() as u32 - 1))
            })
            .collect();
        let first_new = new_items[0].loc();
        let splice = |b: &mut Block, at: usize| {
            for (k, it) in new_items.iter().enumerate() {
                b.items.insert(at + k, it.clone());
            }
        };
        match InsertPos::of(p, ins) {
            InsertPos::ThreadStart(t) => {
                let th = &mut q.threads[t - 1];
                splice(&mut th.body, 0);
                th.first = first_new;
            }
            InsertPos::After(u) => {
                let th = &mut q.threads[tid - 1];
                let (b, i) = find_item(&mut th.body, u).expect("item in thread");
                splice(b, i + 1);
            }
            pos @ (InsertPos::ThenStart(u) | InsertPos::ElseStart(u) | InsertPos::BodyStart(u)) => {
                let th = &mut q.threads[tid - 1];
                let (b, i) = find_item(&mut th.body, u).expect("item in thread");
                match (&mut b.items[i], pos) {
                    (Item::If { then_block, .. }, InsertPos::ThenStart(_)) => splice(then_block, 0),
                    (Item::If { else_block, .. }, InsertPos::ElseStart(_)) => {
                        splice(else_block.get_or_insert_with(Block::default), 0)
                    }
                    (Item::While { body, .. }, InsertPos::BodyStart(_)) => splice(body, 0),
                    _ => unreachable!("insertion position does not match item"),
                }
            }
        }
    }
    q
}

fn line_indent(src: &str, at: usize) -> &str {
    let ls = src[..at].rfind('\n').map_or(0, |i| i + 1);
    let rest = &src[ls..];
    let n = rest.len() - rest.trim_start_matches([' ', '\t']).len();
    &rest[..n]
}

fn item_span(b: &Block, l: LocId, p: &Program) -> Option<(usize, usize)> {
    for it in &b.items {
        if it.loc() == l {
            let s = p.node(l).span;
            return Some((s.start, s.end));
        }
        let inner = match it {
            Item::Simple(_) => None,
            Item::While { body, .. } => item_span(body, l, p),
            Item::If { then_block, else_block, .. } => {
                item_span(then_block, l, p).or_else(|| else_block.as_ref().and_then(|e| item_span(e, l, p)))
            }
        };
        if inner.is_some() {
            return inner;
        }
    }
    None
}

fn find_ref<'b>(b: &'b Block, l: LocId) -> Option<&'b Item> {
    for it in &b.items {
        if it.loc() == l {
            return Some(it);
        }
        let inner = match it {
            Item::Simple(_) => None,
            Item::While { body, .. } => find_ref(body, l),
            Item::If { then_block, else_block, .. } => {
                find_ref(then_block, l).or_else(|| else_block.as_ref().and_then(|e| find_ref(e, l)))
            }
        };
        if inner.is_some() {
            return inner;
        }
    }
    None
}

/// Patched source text: the original file with declarations and lock
/// statements spliced in; everything else is left byte-for-byte intact.
pub fn emit_source(p: &Program, pl: &LockPlacement) -> String {
    let src = &p.source;
    let mut edits: Vec<(usize, usize, String)> = Vec::new();
    if !pl.lock_names.is_empty() {
        let mut at = p.decl_end.min(src.len());
        // Keep the new declaration on its own line.
        let mut text = format!("decl lock {};\n", pl.lock_names.join(", "));
        if at > 0 && !src[..at].ends_with('\n') {
            match src[at..].find('\n') {
                Some(i) => at += i + 1,
                None => text.insert(0, '\n'),
            }
        }
        edits.push((at, 0, text));
    }
    let stmt = |op: &SyncOp, lk: &usize| format!("{}({});", op.keyword(), pl.lock_names[*lk]);
    for (seq, ins) in pl.insertions.iter().enumerate() {
        let body = &p.thread(ins.tid).body;
        let block_start = |b: &Block, header_at: usize| {
            let ind = match b.items.first() {
                Some(it) => line_indent(src, p.node(it.loc()).span.start).to_string(),
                None => format!("{}    ", line_indent(src, header_at)),
            };
            let mut t = String::new();
            for (op, lk) in &ins.ops {
                t.push('\n');
                t.push_str(&ind);
                t.push_str(&stmt(op, lk));
            }
            (b.open, t)
        };
        let (at, text) = match InsertPos::of(p, ins) {
            InsertPos::ThreadStart(_) => block_start(body, body.open.saturating_sub(1)),
            InsertPos::After(u) => {
                let (s, e) = item_span(body, u, p).expect("item in thread");
                let ind = line_indent(src, s);
                let mut t = String::new();
                for (op, lk) in &ins.ops {
                    t.push('\n');
                    t.push_str(ind);
                    t.push_str(&stmt(op, lk));
                }
                (e, t)
            }
            InsertPos::ThenStart(u) | InsertPos::BodyStart(u) | InsertPos::ElseStart(u) => {
                let it = find_ref(body, u).expect("item in thread");
                let s = p.node(u).span.start;
                match (it, InsertPos::of(p, ins)) {
                    (Item::If { then_block, .. }, InsertPos::ThenStart(_)) => block_start(then_block, s),
                    (Item::While { body, .. }, InsertPos::BodyStart(_)) => block_start(body, s),
                    (Item::If { else_block: Some(e), .. }, InsertPos::ElseStart(_)) => block_start(e, s),
                    (Item::If { then_block, else_block: None, .. }, InsertPos::ElseStart(_)) => {
                        let ind = line_indent(src, s);
                        let mut t = " else {".to_string();
                        for (op, lk) in &ins.ops {
                            t.push('\n');
                            t.push_str(ind);
                            t.push_str("    ");
                            t.push_str(&stmt(op, lk));
                        }
                        t.push('\n');
                        t.push_str(ind);
                        t.push('}');
                        (then_block.close + 1, t)
                    }
                    _ => unreachable!("insertion position does not match item"),
                }
            }
        };
        edits.push((at, seq + 1, text));
    }
    edits.sort_by_key(|e| (e.0, e.1));
    let mut out = String::with_capacity(src.len() + 64 * edits.len());
    let mut cur = 0;
    for (at, _, text) in edits {
        out.push_str(&src[cur..at]);
        out.push_str(&text);
        cur = at;
    }
    out.push_str(&src[cur..]);
    out
}
