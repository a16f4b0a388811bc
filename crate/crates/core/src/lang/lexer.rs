use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Num(f64),
    Assign,
    Colon,
    Semi,
    Comma,
    Dot,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Eq,
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub col: u32,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut line_start = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let col = (i - line_start) as u32 + 1;
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident(src[start..i].to_string())
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let is_float = bytes.get(i) == Some(&b'.')
                && bytes.get(i + 1).map_or(false, |d| d.is_ascii_digit());
            if is_float {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                Tok::Num(src[start..i].parse().map_err(|_| syntax(line, col, "bad number"))?)
            } else {
                Tok::Int(src[start..i].parse().map_err(|_| syntax(line, col, "integer out of range"))?)
            }
        } else {
            let two = |a: u8, b: u8| c == a && bytes.get(i + 1) == Some(&b);
            let (t, len) = if two(b':', b'=') {
                (Tok::Assign, 2)
            } else if two(b'=', b'=') {
                (Tok::EqEq, 2)
            } else if two(b'!', b'=') {
                (Tok::Ne, 2)
            } else if two(b'<', b'=') {
                (Tok::Le, 2)
            } else if two(b'>', b'=') {
                (Tok::Ge, 2)
            } else if two(b'&', b'&') {
                (Tok::AndAnd, 2)
            } else if two(b'|', b'|') {
                (Tok::OrOr, 2)
            } else {
                let t = match c {
                    b':' => Tok::Colon,
                    b';' => Tok::Semi,
                    b',' => Tok::Comma,
                    b'.' => Tok::Dot,
                    b'(' => Tok::LParen,
                    b')' => Tok::RParen,
                    b'{' => Tok::LBrace,
                    b'}' => Tok::RBrace,
                    b'+' => Tok::Plus,
                    b'-' => Tok::Minus,
                    b'*' => Tok::Star,
                    b'/' => Tok::Slash,
                    b'%' => Tok::Percent,
                    b'<' => Tok::Lt,
                    b'>' => Tok::Gt,
                    b'!' => Tok::Bang,
                    b'=' => Tok::Eq,
                    _ => {
                        let ch = src[i..].chars().next().unwrap_or('?');
                        return Err(syntax(line, col, &format!("unexpected character `{ch}`")));
                    }
                };
                (t, 1)
            };
            i += len;
            t
        };
        out.push(Token { tok, start, end: i, line, col });
    }
    let col = (bytes.len() - line_start) as u32 + 1;
    out.push(Token { tok: Tok::Eof, start: bytes.len(), end: bytes.len(), line, col });
    Ok(out)
}

fn syntax(line: u32, col: u32, msg: &str) -> ParseError {
    ParseError::Syntax { line, col, msg: msg.to_string() }
}
