//! Expression language for metric components.
//!
//! Infix grammar with the usual precedence, `^` right-associative, unary
//! minus, real literals, and the function set `sin cos exp log sqrt atan`.
//! Identifiers resolve against the chart coordinates and declared parameters
//! at parse time; anything else is an error with line/column position.

use crate::jets::{Jet3, JetError};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier `{name}` at {line}:{col}")]
    UnknownIdentifier { name: String, line: usize, col: usize },
    #[error("evaluation failed: {0}")]
    Eval(#[from] JetError),
    #[error("evaluation produced a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Atan,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Log => "log",
            UnaryFn::Sqrt => "sqrt",
            UnaryFn::Atan => "atan",
        }
    }

    fn from_name(name: &str) -> Option<UnaryFn> {
        Some(match name {
            "sin" => UnaryFn::Sin,
            "cos" => UnaryFn::Cos,
            "exp" => UnaryFn::Exp,
            "log" => UnaryFn::Log,
            "sqrt" => UnaryFn::Sqrt,
            "atan" => UnaryFn::Atan,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Abstract syntax tree over chart coordinates and literal constants.
///
/// Parameters are substituted to literals at parse time, so evaluation only
/// ever sees coordinates and numbers.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Chart coordinate by index.
    Coord(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Fn(UnaryFn, Box<Expr>),
}

impl Expr {
    /// Evaluate to an order-3 jet at the point `x`.
    pub fn eval_jet(&self, dim: usize, x: &[f64]) -> Result<Jet3, ExprError> {
        let j = self.eval_jet_inner(dim, x)?;
        if !j.is_finite() {
            return Err(ExprError::NonFinite);
        }
        Ok(j)
    }

    fn eval_jet_inner(&self, dim: usize, x: &[f64]) -> Result<Jet3, ExprError> {
        Ok(match self {
            Expr::Num(c) => Jet3::constant(dim, *c),
            Expr::Coord(k) => Jet3::coordinate(dim, *k, x)?,
            Expr::Neg(e) => e.eval_jet_inner(dim, x)?.neg(),
            Expr::Bin(op, a, b) => {
                let a = a.eval_jet_inner(dim, x)?;
                match op {
                    BinOp::Add => a.add(&b.eval_jet_inner(dim, x)?)?,
                    BinOp::Sub => a.sub(&b.eval_jet_inner(dim, x)?)?,
                    BinOp::Mul => a.mul(&b.eval_jet_inner(dim, x)?)?,
                    BinOp::Div => a.div(&b.eval_jet_inner(dim, x)?)?,
                    BinOp::Pow => {
                        // Constant exponents take the dedicated power path;
                        // a variable exponent falls back to exp(e*log(b)).
                        if let Some(e) = b.const_value() {
                            a.powf(e)?
                        } else {
                            let e = b.eval_jet_inner(dim, x)?;
                            e.mul(&a.ln()?)?.exp()
                        }
                    }
                }
            }
            Expr::Fn(f, e) => {
                let u = e.eval_jet_inner(dim, x)?;
                match f {
                    UnaryFn::Sin => u.sin(),
                    UnaryFn::Cos => u.cos(),
                    UnaryFn::Exp => u.exp(),
                    UnaryFn::Log => u.ln()?,
                    UnaryFn::Sqrt => u.sqrt()?,
                    UnaryFn::Atan => u.atan(),
                }
            }
        })
    }

    /// Plain floating-point evaluation. Independent of the jet path; used as
    /// the reference when checking jets against finite differences.
    pub fn eval_f64(&self, x: &[f64]) -> Option<f64> {
        let v = match self {
            Expr::Num(c) => *c,
            Expr::Coord(k) => x[*k],
            Expr::Neg(e) => -e.eval_f64(x)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval_f64(x)?;
                let b = b.eval_f64(x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.abs() <= 1e-13 * (1.0 + a.abs()) {
                            return None;
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if b == b.trunc() && b.abs() < 64.0 {
                            a.powi(b as i32)
                        } else if a > 0.0 {
                            a.powf(b)
                        } else {
                            return None;
                        }
                    }
                }
            }
            Expr::Fn(f, e) => {
                let u = e.eval_f64(x)?;
                match f {
                    UnaryFn::Sin => u.sin(),
                    UnaryFn::Cos => u.cos(),
                    UnaryFn::Exp => u.exp(),
                    UnaryFn::Log => {
                        if u <= 0.0 {
                            return None;
                        }
                        u.ln()
                    }
                    UnaryFn::Sqrt => {
                        if u <= 0.0 {
                            return None;
                        }
                        u.sqrt()
                    }
                    UnaryFn::Atan => u.atan(),
                }
            }
        };
        if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    fn const_value(&self) -> Option<f64> {
        match self {
            Expr::Num(c) => Some(*c),
            Expr::Neg(e) => e.const_value().map(|v| -v),
            _ => None,
        }
    }

    /// Render with full parenthesization so that reparsing reproduces the
    /// identical tree (and therefore bit-identical evaluation).
    pub fn print(&self, coord_names: &[String]) -> String {
        match self {
            Expr::Num(c) => {
                if *c < 0.0 {
                    format!("({})", fmt_f64(*c))
                } else {
                    fmt_f64(*c)
                }
            }
            Expr::Coord(k) => coord_names[*k].clone(),
            Expr::Neg(e) => format!("(-{})", e.print(coord_names)),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                format!("({} {} {})", a.print(coord_names), s, b.print(coord_names))
            }
            Expr::Fn(f, e) => format!("{}({})", f.name(), e.print(coord_names)),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips through f64 parsing.
    let s = format!("{v}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

pub(crate) struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, line: usize, col0: usize) -> Self {
        Lexer { src, bytes: src.as_bytes(), pos: 0, line, col: col0 }
    }

    fn error(&self, msg: impl Into<String>) -> ExprError {
        ExprError::Syntax { line: self.line, col: self.col, msg: msg.into() }
    }

    fn bump(&mut self) {
        self.pos += 1;
        self.col += 1;
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ExprError> {
        let mut out = Vec::new();
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos] as char;
            let (line, col) = (self.line, self.col);
            match c {
                ' ' | '\t' => self.bump(),
                '+' => {
                    out.push(Spanned { tok: Tok::Plus, line, col });
                    self.bump();
                }
                '-' => {
                    out.push(Spanned { tok: Tok::Minus, line, col });
                    self.bump();
                }
                '*' => {
                    out.push(Spanned { tok: Tok::Star, line, col });
                    self.bump();
                }
                '/' => {
                    out.push(Spanned { tok: Tok::Slash, line, col });
                    self.bump();
                }
                '^' => {
                    out.push(Spanned { tok: Tok::Caret, line, col });
                    self.bump();
                }
                '(' => {
                    out.push(Spanned { tok: Tok::LParen, line, col });
                    self.bump();
                }
                ')' => {
                    out.push(Spanned { tok: Tok::RParen, line, col });
                    self.bump();
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let start = self.pos;
                    while self.pos < self.bytes.len() {
                        let d = self.bytes[self.pos] as char;
                        if d.is_ascii_digit() || d == '.' {
                            self.bump();
                        } else if (d == 'e' || d == 'E')
                            && self.pos + 1 < self.bytes.len()
                            && {
                                let n = self.bytes[self.pos + 1] as char;
                                n.is_ascii_digit() || n == '+' || n == '-'
                            }
                        {
                            self.bump();
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    let text = &self.src[start..self.pos];
                    let v: f64 = text
                        .parse()
                        .map_err(|_| self.error(format!("bad number literal `{text}`")))?;
                    out.push(Spanned { tok: Tok::Num(v), line, col });
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while self.pos < self.bytes.len() {
                        let d = self.bytes[self.pos] as char;
                        if d.is_ascii_alphanumeric() || d == '_' {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push(Spanned {
                        tok: Tok::Ident(self.src[start..self.pos].to_string()),
                        line,
                        col,
                    });
                }
                other => return Err(self.error(format!("unexpected character `{other}`"))),
            }
        }
        Ok(out)
    }
}

/// Identifier resolution scope for expression parsing.
pub struct Scope<'a> {
    pub coords: &'a [String],
    pub params: &'a [(String, f64)],
}

impl Scope<'_> {
    fn resolve(&self, name: &str) -> Option<Expr> {
        if let Some(k) = self.coords.iter().position(|c| c == name) {
            return Some(Expr::Coord(k));
        }
        self.params
            .iter()
            .find(|(p, _)| p == name)
            .map(|(_, v)| Expr::Num(*v))
    }
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    scope: &'a Scope<'a>,
    end_line: usize,
    end_col: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|s| (s.line, s.col))
            .unwrap_or((self.end_line, self.end_col))
    }

    fn syntax(&self, msg: impl Into<String>) -> ExprError {
        let (line, col) = self.here();
        ExprError::Syntax { line, col, msg: msg.into() }
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        match self.next() {
            Some(s) if s.tok == tok => Ok(()),
            _ => {
                self.pos = self.pos.saturating_sub(0);
                Err(self.syntax(format!("expected {what}")))
            }
        }
    }

    // sum := product (("+"|"-") product)*
    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    let rhs = self.product()?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.next();
                    let rhs = self.product()?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // product := unary (("*"|"/") unary)*
    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.next();
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := "-" unary | power
    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Minus) = self.peek() {
            self.next();
            let e = self.unary()?;
            return Ok(Expr::Neg(Box::new(e)));
        }
        self.power()
    }

    // power := atom ("^" unary)?   (right-associative, binds unary minus in exponent)
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.next();
            let e = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.next() {
            Some(Spanned { tok: Tok::Num(v), .. }) => Ok(Expr::Num(v)),
            Some(Spanned { tok: Tok::Ident(name), line, col }) => {
                if let Some(Tok::LParen) = self.peek() {
                    let f = UnaryFn::from_name(&name).ok_or(ExprError::Syntax {
                        line,
                        col,
                        msg: format!("unknown function `{name}`"),
                    })?;
                    self.next(); // consume '('
                    let arg = self.sum()?;
                    self.expect(Tok::RParen, "closing `)`")?;
                    Ok(Expr::Fn(f, Box::new(arg)))
                } else {
                    self.scope
                        .resolve(&name)
                        .ok_or(ExprError::UnknownIdentifier { name, line, col })
                }
            }
            Some(Spanned { tok: Tok::LParen, .. }) => {
                let e = self.sum()?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(e)
            }
            _ => Err(self.syntax("expected expression")),
        }
    }
}

/// Parse a single expression. `line`/`col0` locate `src` within a larger
/// document for error reporting.
pub fn parse_expr(
    src: &str,
    scope: &Scope<'_>,
    line: usize,
    col0: usize,
) -> Result<Expr, ExprError> {
    let toks = Lexer::new(src, line, col0).tokens()?;
    let end_col = col0 + src.len();
    let mut p = Parser { toks, pos: 0, scope, end_line: line, end_col };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return Err(p.syntax("unexpected trailing tokens"));
    }
    Ok(e)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Coordinates render positionally when no names are available.
        let names: Vec<String> = (0..crate::jets::MAX_DIM).map(|i| format!("x{}", i + 1)).collect();
        write!(f, "{}", self.print(&names))
    }
}
