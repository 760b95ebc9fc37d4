//! Hand-written recursive descent parser (LL(2)).
//!
//! ```text
//! program    := { "extern" IDENT {"," IDENT} NL } "entry" "function" IDENT "(" params ")" NL block "end"
//! block      := { stmt NL }
//! stmt       := "for" IDENT "in" expr ":" expr NL block "end"
//!             | "return" [expr {"," expr}]
//!             | "partitioned" "(" IDENT "," "2D" ")"
//!             | IDENT {"," IDENT} ("=" | "+=" | "-=" | "*=" | "/=") expr
//!             | expr
//! expr       := additive [cmpop additive]
//! additive   := mult {("+" | "-" | ".+" | ".-") mult}
//! mult       := unary {("*" | "/" | ".*" | "./") unary}
//! unary      := ("-" | "!") unary | power
//! power      := postfix [("^" | ".^") unary]
//! postfix    := primary {"[" index {"," index} "]" | "'"}
//! primary    := INT | FLOAT | STRING | "true" | "false"
//!             | IDENT ["(" [expr {"," expr}] ")"]
//!             | ("Vector" | "Matrix") "{" ELEM "}"
//!             | [ELEM] "[" expr "for" gen {"," gen} "]"
//!             | "(" expr ")"
//! gen        := IDENT "in" expr ":" expr
//! ```

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use crate::error::{Error, ErrorKind, Result};
use crate::ir::{BinOp, ScalarKind, Span, UnOp};

pub fn parse(src: &str) -> Result<Program> {
    let tokens = lex(src)?;
    let mut p = Parser { toks: tokens, pos: 0 };
    p.program()
}

/// Parse a single expression (used by tests and the CLI `--arg` parser).
pub fn parse_expr(src: &str) -> Result<Expr> {
    let tokens = lex(src)?;
    let mut p = Parser { toks: tokens, pos: 0 };
    let e = p.expr()?;
    p.skip_newlines();
    p.expect_tok(&Tok::Eof, "end of input")?;
    Ok(e)
}

pub fn elem_kind_from_name(s: &str) -> Option<ScalarKind> {
    match s {
        "Float64" | "f64" => Some(ScalarKind::F64),
        "Int" | "Int64" | "i64" => Some(ScalarKind::I64),
        "Bool" | "bool" => Some(ScalarKind::Bool),
        _ => None,
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> Error {
        let found = self.peek().describe();
        let mut e =
            Error::at(ErrorKind::Syntax, self.span(), format!("expected {}, found {found}", expected.join(" or ")));
        e.expected = expected.iter().map(|s| s.to_string()).collect();
        e
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_tok(&mut self, t: &Tok, what: &str) -> Result<Span> {
        if self.peek() == t {
            Ok(self.bump().span)
        } else {
            Err(self.error(&[what]))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<Span> {
        if *self.peek() == Tok::Kw(kw(k)) {
            Ok(self.bump().span)
        } else {
            Err(self.error(&[&format!("`{k}`")]))
        }
    }

    fn ident(&mut self) -> Result<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let sp = self.bump().span;
                Ok((s, sp))
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn end_of_stmt(&mut self) -> Result<()> {
        match self.peek() {
            Tok::Newline => {
                self.skip_newlines();
                Ok(())
            }
            Tok::Eof => Ok(()),
            _ => Err(self.error(&["end of line"])),
        }
    }

    fn program(&mut self) -> Result<Program> {
        self.skip_newlines();
        let mut externs = Vec::new();
        while *self.peek() == Tok::Kw("extern") {
            self.bump();
            loop {
                externs.push(self.ident()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.end_of_stmt()?;
        }
        let span = self.span();
        if !matches!(self.peek(), Tok::Kw("entry") | Tok::Kw("function")) {
            let mut e = Error::at(ErrorKind::Syntax, span, "expected function");
            e.expected = vec!["`entry`".into()];
            return Err(e);
        }
        self.expect_kw("entry")?;
        self.expect_kw("function")?;
        let (name, _) = self.ident()?;
        self.expect_tok(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (pname, pspan) = self.ident()?;
                let ty = if self.eat(&Tok::DoubleColon) {
                    let (t, tspan) = self.ident()?;
                    Some(match t.as_str() {
                        "String" | "str" => ParamType::Str,
                        other => ParamType::Scalar(elem_kind_from_name(other).ok_or_else(|| {
                            Error::at(ErrorKind::Syntax, tspan, format!("unknown parameter type `{other}`"))
                        })?),
                    })
                } else {
                    None
                };
                params.push(ParamDecl { name: pname, ty, span: pspan });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect_tok(&Tok::RParen, "`)`")?;
        self.end_of_stmt()?;
        let body = self.block()?;
        self.expect_kw("end")?;
        self.skip_newlines();
        if *self.peek() != Tok::Eof {
            return Err(Error::at(ErrorKind::Syntax, self.span(), "only one function per file is supported"));
        }
        Ok(Program { externs, func: Function { name, params, body, span } })
    }

    fn block(&mut self) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            if matches!(self.peek(), Tok::Kw("end") | Tok::Eof) {
                return Ok(out);
            }
            out.push(self.stmt()?);
            if !matches!(self.peek(), Tok::Kw("end")) {
                self.end_of_stmt()?;
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Kw("for") => {
                self.bump();
                let (var, _) = self.ident()?;
                self.expect_kw("in")?;
                let lo = self.expr()?;
                self.expect_tok(&Tok::Colon, "`:`")?;
                let hi = self.expr()?;
                self.end_of_stmt()?;
                let body = self.block()?;
                self.expect_kw("end")?;
                Ok(Stmt { kind: StmtKind::For { var, lo, hi, body }, span })
            }
            Tok::Kw("return") => {
                self.bump();
                let mut vals = Vec::new();
                if !matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Kw("end")) {
                    if let Some(t) = self.try_paren_tuple()? {
                        vals = t;
                    } else {
                        vals.push(self.expr()?);
                        while self.eat(&Tok::Comma) {
                            vals.push(self.expr()?);
                        }
                    }
                }
                Ok(Stmt { kind: StmtKind::Return(vals), span })
            }
            Tok::Ident(name) if name == "partitioned" && *self.peek_at(1) == Tok::LParen => {
                self.bump();
                self.bump();
                let (arr, _) = self.ident()?;
                self.expect_tok(&Tok::Comma, "`,`")?;
                let ok = matches!(self.peek(), Tok::Int(2)) && *self.peek_at(1) == Tok::Ident("D".into());
                if !ok {
                    return Err(self.error(&["`2D`"]));
                }
                self.bump();
                self.bump();
                self.expect_tok(&Tok::RParen, "`)`")?;
                Ok(Stmt { kind: StmtKind::Partitioned(arr), span })
            }
            Tok::Ident(first) if *self.peek_at(1) == Tok::Comma => {
                self.bump();
                let mut targets = vec![first];
                while self.eat(&Tok::Comma) {
                    targets.push(self.ident()?.0);
                }
                if !self.eat(&Tok::Op("=")) {
                    return Err(self.error(&["`=`"]));
                }
                let value = self.expr()?;
                Ok(Stmt { kind: StmtKind::Assign { targets, op: AssignOp::Set, value }, span })
            }
            _ => {
                let e = self.expr()?;
                let op = match self.peek() {
                    Tok::Op("=") => Some(AssignOp::Set),
                    Tok::Op("+=") => Some(AssignOp::Add),
                    Tok::Op("-=") => Some(AssignOp::Sub),
                    Tok::Op("*=") => Some(AssignOp::Mul),
                    Tok::Op("/=") => Some(AssignOp::Div),
                    _ => None,
                };
                match op {
                    None => Ok(Stmt { kind: StmtKind::Expr(e), span }),
                    Some(op) => {
                        let ExprKind::Ident(target) = e.kind else {
                            return Err(Error::at(ErrorKind::Syntax, e.span, "only plain variables can be assigned"));
                        };
                        self.bump();
                        let value = self.expr()?;
                        Ok(Stmt { kind: StmtKind::Assign { targets: vec![target], op, value }, span })
                    }
                }
            }
        }
    }

    /// `( e1, e2, ... )` directly followed by end of statement.
    fn try_paren_tuple(&mut self) -> Result<Option<Vec<Expr>>> {
        if *self.peek() != Tok::LParen {
            return Ok(None);
        }
        let save = self.pos;
        self.bump();
        let mut vals = Vec::new();
        let ok = (|| -> Result<bool> {
            vals.push(self.expr()?);
            if !self.eat(&Tok::Comma) {
                return Ok(false);
            }
            loop {
                vals.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            Ok(self.eat(&Tok::RParen) && matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Kw("end")))
        })();
        match ok {
            Ok(true) => Ok(Some(vals)),
            _ => {
                self.pos = save;
                Ok(None)
            }
        }
    }

    pub fn expr(&mut self) -> Result<Expr> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Op(o) => cmp_op(o),
            _ => None,
        };
        if let Some(sym) = op {
            self.bump();
            let rhs = self.additive()?;
            let span = lhs.span;
            let e = Expr::new(ExprKind::Binary(sym, Box::new(lhs), Box::new(rhs)), span);
            if let Tok::Op(o) = self.peek() {
                if cmp_op(o).is_some() {
                    return Err(Error::at(ErrorKind::Syntax, self.span(), "comparisons do not chain"));
                }
            }
            return Ok(e);
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut lhs = self.mult()?;
        loop {
            let sym = match self.peek() {
                Tok::Op("+") => BinSym { op: BinOp::Add, dot: false },
                Tok::Op("-") => BinSym { op: BinOp::Sub, dot: false },
                Tok::Op(".+") => BinSym { op: BinOp::Add, dot: true },
                Tok::Op(".-") => BinSym { op: BinOp::Sub, dot: true },
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mult()?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Binary(sym, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn mult(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let sym = match self.peek() {
                Tok::Op("*") => BinSym { op: BinOp::Mul, dot: false },
                Tok::Op("/") => BinSym { op: BinOp::Div, dot: false },
                Tok::Op(".*") => BinSym { op: BinOp::Mul, dot: true },
                Tok::Op("./") => BinSym { op: BinOp::Div, dot: true },
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Binary(sym, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        let span = self.span();
        let op = match self.peek() {
            Tok::Op("-") => Some(UnOp::Neg),
            Tok::Op("!") => Some(UnOp::Not),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let a = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(op, Box::new(a)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.postfix()?;
        let dot = match self.peek() {
            Tok::Op("^") => false,
            Tok::Op(".^") => true,
            _ => return Ok(base),
        };
        self.bump();
        let exp = self.unary()?;
        let span = base.span;
        Ok(Expr::new(ExprKind::Binary(BinSym { op: BinOp::Pow, dot }, Box::new(base), Box::new(exp)), span))
    }

    fn postfix(&mut self) -> Result<Expr> {
        let mut e = self.primary()?;
        loop {
            match self.peek() {
                Tok::LBracket => {
                    self.bump();
                    let mut idx = Vec::new();
                    loop {
                        if *self.peek() == Tok::Colon && matches!(self.peek_at(1), Tok::Comma | Tok::RBracket) {
                            self.bump();
                            idx.push(Index::All);
                        } else {
                            idx.push(Index::Expr(self.expr()?));
                        }
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    self.expect_tok(&Tok::RBracket, "`]`")?;
                    let span = e.span;
                    e = Expr::new(ExprKind::Index(Box::new(e), idx), span);
                }
                Tok::Transpose => {
                    self.bump();
                    let span = e.span;
                    e = Expr::new(ExprKind::Transpose(Box::new(e)), span);
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Int(v), span))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Float(v), span))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::new(ExprKind::Str(s), span))
            }
            Tok::Kw("true") => {
                self.bump();
                Ok(Expr::new(ExprKind::Bool(true), span))
            }
            Tok::Kw("false") => {
                self.bump();
                Ok(Expr::new(ExprKind::Bool(false), span))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect_tok(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::LBracket => self.comprehension(None, span),
            Tok::Ident(name) => {
                self.bump();
                if let (Some(k), Tok::LBracket) = (elem_kind_from_name(&name), self.peek()) {
                    return self.comprehension(Some(k), span);
                }
                if (name == "Vector" || name == "Matrix") && *self.peek() == Tok::LBrace {
                    self.bump();
                    let (elem, espan) = self.ident()?;
                    let k = elem_kind_from_name(&elem)
                        .ok_or_else(|| Error::at(ErrorKind::Syntax, espan, format!("unknown element type `{elem}`")))?;
                    self.expect_tok(&Tok::RBrace, "`}`")?;
                    let c = if name == "Vector" { ContainerKind::Vector } else { ContainerKind::Matrix };
                    return Ok(Expr::new(ExprKind::TypeLit(c, k), span));
                }
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect_tok(&Tok::RParen, "`)`")?;
                    return Ok(Expr::new(ExprKind::Call(name, args), span));
                }
                Ok(Expr::new(ExprKind::Ident(name), span))
            }
            _ => Err(self.error(&["expression"])),
        }
    }

    fn comprehension(&mut self, elem: Option<ScalarKind>, span: Span) -> Result<Expr> {
        self.expect_tok(&Tok::LBracket, "`[`")?;
        let body = self.expr()?;
        if *self.peek() != Tok::Kw("for") {
            return Err(self.error(&["`for`"]));
        }
        self.bump();
        let mut gens = Vec::new();
        loop {
            let (var, gspan) = self.ident()?;
            self.expect_kw("in")?;
            let lo = self.expr()?;
            self.expect_tok(&Tok::Colon, "`:`")?;
            let hi = self.expr()?;
            gens.push(Generator { var, lo, hi, span: gspan });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect_tok(&Tok::RBracket, "`]`")?;
        Ok(Expr::new(ExprKind::Comprehension { elem, body: Box::new(body), gens }, span))
    }
}

fn kw(k: &str) -> &'static str {
    super::lexer::KEYWORDS.iter().find(|x| **x == k).copied().expect("known keyword")
}

fn cmp_op(o: &str) -> Option<BinSym> {
    let (dot, base) = match o.strip_prefix('.') {
        Some(b) => (true, b),
        None => (false, o),
    };
    let op = match base {
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "<" => BinOp::Lt,
        "<=" => BinOp::Le,
        ">" => BinOp::Gt,
        ">=" => BinOp::Ge,
        _ => return None,
    };
    Some(BinSym { op, dot })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(mut e: Expr) -> Expr {
        let mut p = Program {
            externs: vec![],
            func: Function {
                name: "f".into(),
                params: vec![],
                body: vec![Stmt { kind: StmtKind::Expr(e.clone()), span: Span::default() }],
                span: Span::default(),
            },
        };
        strip_spans(&mut p);
        if let StmtKind::Expr(x) = &p.func.body[0].kind {
            e = x.clone();
        }
        e
    }

    fn z(kind: ExprKind) -> Expr {
        Expr::new(kind, Span::default())
    }

    fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        z(ExprKind::Binary(BinSym { op, dot: false }, Box::new(a), Box::new(b)))
    }

    #[test]
    fn rand_init_line() {
        let e = strip(parse_expr("2*rand(1,D)-1").unwrap());
        let rand = z(ExprKind::Call("rand".into(), vec![z(ExprKind::Int(1)), z(ExprKind::Ident("D".into()))]));
        assert_eq!(e, bin(BinOp::Sub, bin(BinOp::Mul, z(ExprKind::Int(2)), rand), z(ExprKind::Int(1))));
    }

    #[test]
    fn empty_input_expects_function() {
        let e = parse("").unwrap_err();
        assert_eq!(e.message, "expected function");
    }

    #[test]
    fn unbalanced_paren_reports_end_of_input() {
        let src = "entry function f()\n  x = (1+\nend\n";
        let e = parse(src).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Syntax);
        assert!(e.expected.contains(&"expression".to_string()), "{e:?}");
        let e = parse_expr("(1+").unwrap_err();
        assert!(e.message.contains("end of input"), "{e}");
        assert_eq!(e.expected, vec!["expression".to_string()]);
    }

    #[test]
    fn power_binds_tighter_than_negation() {
        let e = strip(parse_expr("-x^2").unwrap());
        assert!(matches!(e.kind, ExprKind::Unary(UnOp::Neg, _)));
    }

    #[test]
    fn masked_slice_index() {
        let e = strip(parse_expr("points[j, labels.==i]").unwrap());
        let ExprKind::Index(_, idx) = e.kind else { panic!() };
        assert_eq!(idx.len(), 2);
        let e = strip(parse_expr("points[:,i]").unwrap());
        let ExprKind::Index(_, idx) = e.kind else { panic!() };
        assert_eq!(idx[0], Index::All);
    }
}
