use super::*;
use std::fmt::Write as _;

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne => 3,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
        BinOp::Add | BinOp::Sub => 5,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
    }
}

fn op_str(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Rem => "%",
        BinOp::Eq => "==",
        BinOp::Ne => "!=",
        BinOp::Lt => "<",
        BinOp::Le => "<=",
        BinOp::Gt => ">",
        BinOp::Ge => ">=",
        BinOp::And => "&&",
        BinOp::Or => "||",
    }
}

pub fn print_expr(p: &Program, e: &Expr) -> String {
    let mut s = String::new();
    expr(p, e, 0, &mut s);
    s
}

fn expr(p: &Program, e: &Expr, min: u8, s: &mut String) {
    match e {
        Expr::Int(i) => {
            let _ = write!(s, "{i}");
        }
        Expr::Star => s.push('*'),
        Expr::Var(v) => s.push_str(&p.var(*v).name),
        Expr::Unary(op, inner) => {
            s.push(if *op == UnOp::Neg { '-' } else { '!' });
            expr(p, inner, 7, s);
        }
        Expr::Binary(op, a, b) => {
            let q = prec(*op);
            let paren = q < min;
            if paren {
                s.push('(');
            }
            expr(p, a, q, s);
            let _ = write!(s, " {} ", op_str(*op));
            expr(p, b, q + 1, s);
            if paren {
                s.push(')');
            }
        }
    }
}

/// Canonical source text; reparsing yields the same AST up to byte offsets.
pub fn print_program(p: &Program) -> String {
    let mut s = String::new();
    let mut i = 0;
    while i < p.vars.len() {
        let kind = p.vars[i].kind;
        let mut names = vec![p.vars[i].name.as_str()];
        i += 1;
        while i < p.vars.len() && p.vars[i].kind == kind {
            names.push(&p.vars[i].name);
            i += 1;
        }
        let _ = writeln!(s, "decl {} {};", kind, names.join(", "));
    }
    if !p.channels.is_empty() {
        let _ = writeln!(s, "decl channel {};", p.channels.join(", "));
    }
    for th in &p.threads {
        let _ = writeln!(s, "\nthread {} {{", th.name);
        block(p, &th.body, 1, &mut s);
        s.push_str("}\n");
    }
    if !p.blocks.is_empty() || !p.costs.is_empty() {
        s.push('\n');
    }
    for b in &p.blocks {
        let names: Vec<&str> = b.members.iter().map(|m| p.name(*m)).collect();
        let _ = writeln!(s, "block {} = {};", b.name, names.join(", "));
    }
    for (l, c) in &p.costs {
        let _ = writeln!(s, "cost {} = {};", p.name(*l), fmt_num(*c));
    }
    s
}

fn fmt_num(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

fn block(p: &Program, b: &Block, depth: usize, s: &mut String) {
    for it in &b.items {
        item(p, it, depth, s);
    }
}

fn item(p: &Program, it: &Item, depth: usize, s: &mut String) {
    let pad = "    ".repeat(depth);
    let n = p.node(it.loc());
    s.push_str(&pad);
    if n.explicit {
        let _ = write!(s, "{}: ", n.name);
    }
    match it {
        Item::Simple(l) => {
            s.push_str(&simple_text(p, *l));
            s.push('\n');
        }
        Item::While { loc, body } => {
            let NodeKind::While { cond } = &p.node(*loc).kind else { unreachable!() };
            let _ = writeln!(s, "while ({}) {{", print_expr(p, cond));
            block(p, body, depth + 1, s);
            let _ = writeln!(s, "{pad}}}");
        }
        Item::If { loc, then_block, else_block } => {
            let NodeKind::If { cond } = &p.node(*loc).kind else { unreachable!() };
            let _ = writeln!(s, "if ({}) {{", print_expr(p, cond));
            block(p, then_block, depth + 1, s);
            match else_block {
                Some(e) => {
                    let _ = writeln!(s, "{pad}}} else {{");
                    block(p, e, depth + 1, s);
                    let _ = writeln!(s, "{pad}}}");
                }
                None => {
                    let _ = writeln!(s, "{pad}}}");
                }
            }
        }
    }
}

/// Text of a non-compound statement, including the trailing `;`.
pub(crate) fn simple_text(p: &Program, l: LocId) -> String {
    match &p.node(l).kind {
        NodeKind::Assign { target, value } => format!("{} := {};", p.var(*target).name, print_expr(p, value)),
        NodeKind::Havoc { target } => format!("{} := havoc();", p.var(*target).name),
        NodeKind::Input { target, channel } => format!("{} := in({channel});", p.var(*target).name),
        NodeKind::Output { channel, value } => format!("out({channel}, {});", print_expr(p, value)),
        NodeKind::Sync { op, var } => format!("{}({});", op.keyword(), p.var(*var).name),
        NodeKind::Goto { target } => format!("goto {};", p.name(*target)),
        NodeKind::Yield => "yield;".into(),
        NodeKind::Skip => "skip;".into(),
        NodeKind::Last => "skip;".into(),
        NodeKind::While { .. } | NodeKind::If { .. } => unreachable!("compound statement"),
    }
}
