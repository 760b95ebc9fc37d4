use crate::error::{Error, ErrorKind, Result};
use crate::ir::Span;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    Kw(&'static str),
    Op(&'static str),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    DoubleColon,
    Transpose,
    Newline,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Float(v) => format!("number `{v}`"),
            Tok::Str(_) => "string".into(),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Kw(k) => format!("`{k}`"),
            Tok::Op(o) => format!("`{o}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::DoubleColon => "`::`".into(),
            Tok::Transpose => "`'`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

pub const KEYWORDS: [&str; 9] = ["entry", "function", "end", "for", "in", "return", "extern", "true", "false"];

// Longest first so that maximal munch is a linear scan.
const OPS: [&str; 28] = [
    ".==", ".!=", ".<=", ".>=", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", ".+", ".-", ".*", "./", ".^", ".<",
    ".>", "+", "-", "*", "/", "^", "<", ">", "=", "!",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    // Newlines inside (), [] and {} are insignificant.
    let mut depth = 0i32;

    while i < chars.len() {
        let c = chars[i];
        let span = Span::new(line, col);
        let advance = |n: usize, i: &mut usize, col: &mut u32| {
            *i += n;
            *col += n as u32;
        };
        if c == '\n' {
            if depth == 0 && !matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                out.push(Token { tok: Tok::Newline, span });
            }
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c == ';' {
            if depth == 0 && !matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                out.push(Token { tok: Tok::Newline, span });
            }
            advance(1, &mut i, &mut col);
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(1, &mut i, &mut col);
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(1, &mut i, &mut col);
            }
            let mut float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                float = true;
                advance(1, &mut i, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(1, &mut i, &mut col);
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    float = true;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    let n = j - i;
                    advance(n, &mut i, &mut col);
                }
            }
            let text: String = chars[start..i].iter().collect();
            let tok = if float {
                Tok::Float(
                    text.parse().map_err(|_| Error::at(ErrorKind::Syntax, span, format!("bad number `{text}`")))?,
                )
            } else {
                Tok::Int(
                    text.parse()
                        .map_err(|_| Error::at(ErrorKind::Syntax, span, format!("integer `{text}` out of range")))?,
                )
            };
            out.push(Token { tok, span });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                advance(1, &mut i, &mut col);
            }
            let text: String = chars[start..i].iter().collect();
            let tok = match KEYWORDS.iter().find(|k| **k == text) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(text),
            };
            out.push(Token { tok, span });
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            advance(1, &mut i, &mut col);
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(Error::at(ErrorKind::Syntax, span, "unterminated string")),
                    Some('"') => {
                        advance(1, &mut i, &mut col);
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('n') => s.push('\n'),
                            Some(&e @ ('"' | '\\')) => s.push(e),
                            _ => {
                                return Err(Error::at(ErrorKind::Syntax, Span::new(line, col), "bad escape in string"))
                            }
                        }
                        advance(2, &mut i, &mut col);
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(1, &mut i, &mut col);
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), span });
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            '\'' => {
                let postfix = matches!(
                    out.last().map(|t| &t.tok),
                    Some(Tok::Ident(_) | Tok::RParen | Tok::RBracket | Tok::Transpose | Tok::Int(_) | Tok::Float(_))
                );
                if !postfix {
                    return Err(Error::at(ErrorKind::Syntax, span, "`'` must follow an operand"));
                }
                Some(Tok::Transpose)
            }
            ':' => {
                if chars.get(i + 1) == Some(&':') {
                    advance(1, &mut i, &mut col);
                    Some(Tok::DoubleColon)
                } else {
                    Some(Tok::Colon)
                }
            }
            _ => None,
        };
        if let Some(tok) = single {
            match tok {
                Tok::LParen | Tok::LBracket | Tok::LBrace => depth += 1,
                Tok::RParen | Tok::RBracket | Tok::RBrace => depth -= 1,
                _ => {}
            }
            advance(1, &mut i, &mut col);
            out.push(Token { tok, span });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match OPS.iter().find(|op| rest.starts_with(**op)) {
            Some(op) => {
                advance(op.len(), &mut i, &mut col);
                out.push(Token { tok: Tok::Op(op), span });
            }
            None => return Err(Error::at(ErrorKind::Syntax, span, format!("unexpected character `{c}`"))),
        }
    }
    if depth == 0 && !matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
        out.push(Token { tok: Tok::Newline, span: Span::new(line, col) });
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(line, col) });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn dotted_division_after_integer() {
        assert_eq!(toks("1./x"), vec![Tok::Int(1), Tok::Op("./"), Tok::Ident("x".into()), Tok::Newline, Tok::Eof]);
    }

    #[test]
    fn transpose_vs_string() {
        assert_eq!(
            toks("a*b'"),
            vec![Tok::Ident("a".into()), Tok::Op("*"), Tok::Ident("b".into()), Tok::Transpose, Tok::Newline, Tok::Eof]
        );
    }

    #[test]
    fn newlines_inside_brackets_are_dropped() {
        let t = toks("x = [a\n for i in 1:N]\n");
        assert_eq!(t.iter().filter(|t| **t == Tok::Newline).count(), 1);
    }

    #[test]
    fn exponent_literals() {
        assert_eq!(toks("1e-3")[0], Tok::Float(1e-3));
        assert_eq!(toks("2.5")[0], Tok::Float(2.5));
    }
}
