use super::lexer::{tokenize, Tok, Token};
use super::*;
use std::collections::HashMap;

const KEYWORDS: &[&str] = &[
    "decl", "thread", "while", "if", "else", "out", "in", "havoc", "goto", "yield", "skip",
    "block", "cost", "last", "lock", "unlock", "wait", "wait_not", "notify", "reset", "assume",
    "assume_not", "set", "unset",
];

/// Parse a source file into a [`Program`] with locations numbered in textual order.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        src: text,
        vars: Vec::new(),
        channels: Vec::new(),
        nodes: Vec::new(),
        threads: Vec::new(),
        labels: HashMap::new(),
        decl_end: 0,
    };
    let mut blocks_raw = Vec::new();
    let mut costs_raw = Vec::new();
    loop {
        let t = p.peek().clone();
        match &t.tok {
            Tok::Eof => break,
            Tok::Ident(k) if k == "decl" => p.decl()?,
            Tok::Ident(k) if k == "thread" => p.thread()?,
            Tok::Ident(k) if k == "block" => {
                p.bump();
                let name = p.ident()?.0;
                p.expect(Tok::Eq, "`=`")?;
                let mut members = vec![p.label_ref()?];
                while p.eat(&Tok::Comma) {
                    members.push(p.label_ref()?);
                }
                p.expect(Tok::Semi, "`;`")?;
                blocks_raw.push((name, members));
            }
            Tok::Ident(k) if k == "cost" => {
                p.bump();
                let l = p.label_ref()?;
                p.expect(Tok::Eq, "`=`")?;
                let nt = p.bump();
                let c = match nt.tok {
                    Tok::Int(i) => i as f64,
                    Tok::Num(f) => f,
                    _ => return Err(p.err_at(&nt, "expected a number")),
                };
                p.expect(Tok::Semi, "`;`")?;
                costs_raw.push((l, c));
            }
            _ => return Err(p.err_at(&t, "expected `decl`, `thread`, `block` or `cost`")),
        }
    }
    let resolve = |p: &Parser, (name, line, col): &(String, u32, u32)| {
        p.labels.get(name).copied().ok_or_else(|| ParseError::UnknownLocation {
            line: *line,
            col: *col,
            label: name.clone(),
        })
    };
    let mut blocks = Vec::new();
    for (name, members) in &blocks_raw {
        let members = members.iter().map(|m| resolve(&p, m)).collect::<Result<Vec<_>, _>>()?;
        blocks.push(BlockDecl { name: name.clone(), members });
    }
    let mut costs = Vec::new();
    for (l, c) in &costs_raw {
        costs.push((resolve(&p, l)?, *c));
    }
    let prog = Program {
        vars: p.vars,
        channels: p.channels,
        threads: p.threads,
        nodes: p.nodes,
        blocks,
        costs,
        source: text.to_string(),
        decl_end: p.decl_end,
    };
    check_flow(&prog)?;
    Ok(prog)
}

fn check_flow(prog: &Program) -> Result<(), ParseError> {
    let cfg = prog.cfg();
    for th in &prog.threads {
        let fwd = cfg.reachable_from(th.first);
        let bwd = cfg.reaching(th.last);
        let mut locs = prog.statements(th.tid);
        locs.push(th.last);
        for l in locs {
            if !fwd[l.idx()] {
                return Err(ParseError::Unreachable { label: prog.name(l).to_string() });
            }
            if !bwd[l.idx()] {
                return Err(ParseError::NoExit { label: prog.name(l).to_string() });
            }
        }
    }
    Ok(())
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    src: &'a str,
    vars: Vec<Var>,
    channels: Vec<String>,
    nodes: Vec<Node>,
    threads: Vec<Thread>,
    labels: HashMap<String, LocId>,
    decl_end: usize,
}

struct ThreadCtx {
    tid: Tid,
    name: String,
    counter: usize,
    /// Enclosing loop per statement of this thread.
    loop_of: HashMap<LocId, Option<LocId>>,
    local_labels: HashMap<String, LocId>,
    gotos: Vec<(LocId, String, u32, u32, Option<LocId>)>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek2(&self) -> &Token {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if &self.peek().tok == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<Token, ParseError> {
        if self.peek().tok == t {
            Ok(self.bump())
        } else {
            let tok = self.peek().clone();
            Err(self.err_at(&tok, &format!("expected {what}")))
        }
    }

    fn err_at(&self, t: &Token, msg: &str) -> ParseError {
        let found = if t.tok == Tok::Eof { "end of input".to_string() } else { format!("`{}`", &self.src[t.start..t.end]) };
        ParseError::Syntax { line: t.line, col: t.col, msg: format!("{msg}, found {found}") }
    }

    fn ident(&mut self) -> Result<(String, Token), ParseError> {
        let t = self.bump();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            _ => Err(self.err_at(&t, "expected an identifier")),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    /// A label written as an identifier or a number.
    fn label_ref(&mut self) -> Result<(String, u32, u32), ParseError> {
        let t = self.bump();
        match &t.tok {
            Tok::Ident(_) | Tok::Int(_) => Ok((self.src[t.start..t.end].to_string(), t.line, t.col)),
            _ => Err(self.err_at(&t, "expected a location label")),
        }
    }

    fn decl(&mut self) -> Result<(), ParseError> {
        self.bump();
        let (kind, kt) = self.ident()?;
        let kind = match kind.as_str() {
            "shared" => Some(VarKind::Shared),
            "local" => Some(VarKind::Local),
            "lock" => Some(VarKind::Lock),
            "cond" => Some(VarKind::Cond),
            "guard" => Some(VarKind::Guard),
            "channel" => None,
            _ => return Err(self.err_at(&kt, "expected a variable category")),
        };
        loop {
            let (name, t) = self.ident()?;
            if KEYWORDS.contains(&name.as_str())
                || self.vars.iter().any(|v| v.name == name)
                || self.channels.contains(&name)
            {
                return Err(ParseError::Redeclared { line: t.line, col: t.col, name });
            }
            match kind {
                Some(kind) => self.vars.push(Var { name, kind }),
                None => self.channels.push(name),
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let semi = self.expect(Tok::Semi, "`;`")?;
        let rest = &self.src[semi.end..];
        self.decl_end = semi.end + rest.find('\n').map_or(rest.len(), |i| i + 1);
        Ok(())
    }

    fn thread(&mut self) -> Result<(), ParseError> {
        self.bump();
        let (name, nt) = self.ident()?;
        if self.threads.iter().any(|t| t.name == name) {
            return Err(ParseError::Redeclared { line: nt.line, col: nt.col, name });
        }
        let tid = self.threads.len() + 1;
        let mut ctx = ThreadCtx {
            tid,
            name: name.clone(),
            counter: 0,
            loop_of: HashMap::new(),
            local_labels: HashMap::new(),
            gotos: Vec::new(),
        };
        let body = self.block(&mut ctx, None)?;
        let last = LocId(self.nodes.len() as u32);
        let close = body.close;
        self.nodes.push(Node {
            name: "last".into(),
            tid,
            kind: NodeKind::Last,
            explicit: false,
            span: Span { start: close, end: close, line: 0, col: 0 },
        });
        for (g, label, line, col, lp) in std::mem::take(&mut ctx.gotos) {
            let target = if label == "last" {
                last
            } else {
                *ctx.local_labels
                    .get(&label)
                    .ok_or_else(|| ParseError::UnknownGotoTarget { line, col, label: label.clone() })?
            };
            if target != last && ctx.loop_of[&target] != lp {
                return Err(ParseError::GotoCrossesLoop { line, col, label });
            }
            if target == last && lp.is_some() {
                return Err(ParseError::GotoCrossesLoop { line, col, label });
            }
            self.nodes[g.idx()].kind = NodeKind::Goto { target };
        }
        let first = body.items.first().map_or(last, |i| i.loc());
        self.threads.push(Thread { tid, name, body, first, last });
        Ok(())
    }

    fn block(&mut self, ctx: &mut ThreadCtx, lp: Option<LocId>) -> Result<Block, ParseError> {
        let open = self.expect(Tok::LBrace, "`{`")?;
        let mut items = Vec::new();
        while self.peek().tok != Tok::RBrace {
            if self.peek().tok == Tok::Eof {
                let t = self.peek().clone();
                return Err(self.err_at(&t, "expected `}`"));
            }
            items.push(self.stmt(ctx, lp)?);
        }
        let close = self.bump();
        Ok(Block { items, open: open.end, close: close.start })
    }

    fn stmt(&mut self, ctx: &mut ThreadCtx, lp: Option<LocId>) -> Result<Item, ParseError> {
        let start_tok = self.peek().clone();
        let labelled = matches!(start_tok.tok, Tok::Ident(_) | Tok::Int(_)) && self.peek2().tok == Tok::Colon;
        ctx.counter += 1;
        let loc = LocId(self.nodes.len() as u32);
        let name = if labelled {
            let (label, line, col) = self.label_ref()?;
            self.bump();
            if label == "last" || KEYWORDS.contains(&label.as_str()) {
                return Err(ParseError::Syntax { line, col, msg: format!("`{label}` cannot be used as a label") });
            }
            if self.labels.contains_key(&label) {
                return Err(ParseError::DuplicateLabel { line, col, label });
            }
            self.labels.insert(label.clone(), loc);
            ctx.local_labels.insert(label.clone(), loc);
            label
        } else {
            format!("{}#{}", ctx.name, ctx.counter)
        };
        ctx.loop_of.insert(loc, lp);
        let span0 = Span { start: start_tok.start, end: start_tok.end, line: start_tok.line, col: start_tok.col };
        self.nodes.push(Node { name, tid: ctx.tid, kind: NodeKind::Skip, explicit: labelled, span: span0 });

        let kt = self.peek().clone();
        let kw = match &kt.tok {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.err_at(&kt, "expected a statement")),
        };
        let (kind, item, end) = match kw.as_str() {
            "while" => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                self.check_reads(&cond, &kt)?;
                let body = self.block(ctx, Some(loc))?;
                let mut end = body.close + 1;
                if self.peek().tok == Tok::Semi {
                    end = self.bump().end;
                }
                (NodeKind::While { cond }, Item::While { loc, body }, end)
            }
            "if" => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                self.check_reads(&cond, &kt)?;
                let then_block = self.block(ctx, lp)?;
                let mut end = then_block.close + 1;
                let else_block = if self.is_kw("else") {
                    self.bump();
                    let b = self.block(ctx, lp)?;
                    end = b.close + 1;
                    Some(b)
                } else {
                    None
                };
                if self.peek().tok == Tok::Semi {
                    end = self.bump().end;
                }
                (NodeKind::If { cond }, Item::If { loc, then_block, else_block }, end)
            }
            "out" => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let (channel, ct) = self.ident()?;
                self.check_channel(&channel, &ct)?;
                self.expect(Tok::Comma, "`,`")?;
                let value = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                self.check_reads(&value, &kt)?;
                let end = self.expect(Tok::Semi, "`;`")?.end;
                (NodeKind::Output { channel, value }, Item::Simple(loc), end)
            }
            "goto" => {
                self.bump();
                let (label, line, col) = self.label_ref()?;
                ctx.gotos.push((loc, label, line, col, lp));
                let end = self.expect(Tok::Semi, "`;`")?.end;
                (NodeKind::Goto { target: loc }, Item::Simple(loc), end)
            }
            "yield" | "skip" => {
                self.bump();
                let end = self.expect(Tok::Semi, "`;`")?.end;
                let k = if kw == "yield" { NodeKind::Yield } else { NodeKind::Skip };
                (k, Item::Simple(loc), end)
            }
            k if SyncOp::from_keyword(k).is_some() => {
                let op = SyncOp::from_keyword(k).unwrap();
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let (vname, vt) = self.ident()?;
                let var = self.lookup(&vname, &vt, Some(op.var_kind()))?;
                self.expect(Tok::RParen, "`)`")?;
                let end = self.expect(Tok::Semi, "`;`")?.end;
                (NodeKind::Sync { op, var }, Item::Simple(loc), end)
            }
            k if KEYWORDS.contains(&k) => return Err(self.err_at(&kt, "expected a statement")),
            _ => {
                let (tname, tt) = self.ident()?;
                let target = self.lookup(&tname, &tt, None)?;
                self.expect(Tok::Assign, "`:=`")?;
                let kind = if self.is_kw("havoc") {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    self.expect(Tok::RParen, "`)`")?;
                    NodeKind::Havoc { target }
                } else if self.is_kw("in") {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    let (channel, ct) = self.ident()?;
                    self.check_channel(&channel, &ct)?;
                    self.expect(Tok::RParen, "`)`")?;
                    NodeKind::Input { target, channel }
                } else {
                    let value = self.expr()?;
                    let mut vs = Vec::new();
                    value.vars(&mut vs);
                    let mut shared: Vec<VarId> =
                        vs.into_iter().filter(|v| self.vars[v.idx()].kind == VarKind::Shared).collect();
                    shared.sort();
                    shared.dedup();
                    if self.vars[target.idx()].kind == VarKind::Shared {
                        if shared.iter().any(|v| *v != target) {
                            return Err(ParseError::TwoSharedVars { line: span0.line, col: span0.col });
                        }
                    } else if shared.len() > 1 {
                        return Err(ParseError::MultipleSharedReads { line: span0.line, col: span0.col });
                    }
                    NodeKind::Assign { target, value }
                };
                let end = self.expect(Tok::Semi, "`;`")?.end;
                (kind, Item::Simple(loc), end)
            }
        };
        let n = &mut self.nodes[loc.idx()];
        n.kind = kind;
        n.span.end = end;
        Ok(item)
    }

    fn check_channel(&self, name: &str, t: &Token) -> Result<(), ParseError> {
        if self.channels.iter().any(|c| c == name) {
            Ok(())
        } else {
            Err(ParseError::UnknownChannel { line: t.line, col: t.col, name: name.to_string() })
        }
    }

    fn check_reads(&self, e: &Expr, at: &Token) -> Result<(), ParseError> {
        let mut vs = Vec::new();
        e.vars(&mut vs);
        let mut shared: Vec<VarId> = vs.into_iter().filter(|v| self.vars[v.idx()].kind == VarKind::Shared).collect();
        shared.sort();
        shared.dedup();
        if shared.len() > 1 {
            return Err(ParseError::MultipleSharedReads { line: at.line, col: at.col });
        }
        Ok(())
    }

    /// `want = None` accepts program variables (shared or local) only.
    fn lookup(&self, name: &str, t: &Token, want: Option<VarKind>) -> Result<VarId, ParseError> {
        let i = self
            .vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ParseError::Undeclared { line: t.line, col: t.col, name: name.to_string() })?;
        let kind = self.vars[i].kind;
        let ok = match want {
            Some(k) => kind == k,
            None => matches!(kind, VarKind::Shared | VarKind::Local),
        };
        if !ok {
            return Err(ParseError::WrongKind {
                line: t.line,
                col: t.col,
                name: name.to_string(),
                found: kind,
                expected: want.unwrap_or(VarKind::Local),
            });
        }
        Ok(VarId(i as u32))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let (op, prec) = match self.peek().tok {
                Tok::OrOr => (BinOp::Or, 1),
                Tok::AndAnd => (BinOp::And, 2),
                Tok::EqEq => (BinOp::Eq, 3),
                Tok::Ne => (BinOp::Ne, 3),
                Tok::Lt => (BinOp::Lt, 4),
                Tok::Le => (BinOp::Le, 4),
                Tok::Gt => (BinOp::Gt, 4),
                Tok::Ge => (BinOp::Ge, 4),
                Tok::Plus => (BinOp::Add, 5),
                Tok::Minus => (BinOp::Sub, 5),
                Tok::Star => (BinOp::Mul, 6),
                Tok::Slash => (BinOp::Div, 6),
                Tok::Percent => (BinOp::Rem, 6),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)))
            }
            Tok::Bang => {
                self.bump();
                Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)))
            }
            Tok::Star => {
                self.bump();
                Ok(Expr::Star)
            }
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Int(*i))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                self.bump();
                Ok(Expr::Var(self.lookup(name, &t, None)?))
            }
            _ => Err(self.err_at(&t, "expected an expression")),
        }
    }
}
