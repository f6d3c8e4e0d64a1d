//! Arithmetic expressions for decision value functions.
//!
//! A value function is written as a plain infix expression over the model's
//! state variables, e.g. `3*cap_pop - 9.0*cap_risk + max(cap_rate, 0.5)`.
//! The grammar is
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := factor (("*" | "/") factor)*
//! factor  := "-" factor | primary
//! primary := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! with the usual precedence (unary minus binds tighter than `*`/`/`, which
//! bind tighter than `+`/`-`) and left associativity. The printer emits the
//! minimal parenthesization, so `parse(print(ast))` reproduces the tree.
//!
//! Evaluation is plain IEEE double arithmetic. Division by zero, `ln` of a
//! non-positive argument, and any operation producing a non-finite value are
//! hard errors rather than silent `inf`/`NaN` propagation: downstream
//! regression inputs must stay finite.

use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Binary arithmetic operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Built-in function. `min`/`max` take two or more arguments, `pow` exactly
/// two, the rest exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Exp,
    Ln,
    Pow,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "pow" => Some(Func::Pow),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Pow => "pow",
            Func::Abs => "abs",
        }
    }

    /// (min, max) argument count; `None` max means unbounded.
    fn arity(self) -> (usize, Option<usize>) {
        match self {
            Func::Min | Func::Max => (2, None),
            Func::Pow => (2, Some(2)),
            Func::Exp | Func::Ln | Func::Abs => (1, Some(1)),
        }
    }
}

/// Expression AST over numeric literals, variable references, unary minus,
/// the four arithmetic operators, and the built-in functions.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Source of variable values during evaluation.
pub trait VarLookup {
    fn value_of(&self, name: &str) -> Option<f64>;
}

impl VarLookup for HashMap<String, f64> {
    fn value_of(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// Looks variables up by position in a parallel (names, values) pair. The
/// linear scan is fast for the handful of variables a model carries.
pub struct SliceLookup<'a> {
    pub names: &'a [String],
    pub values: &'a [f64],
}

impl VarLookup for SliceLookup<'_> {
    fn value_of(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Expression parse failure, with the byte offset into the source text.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {position}: unexpected character '{found}'")]
    UnexpectedChar { position: usize, found: char },
    #[error("syntax error at position {position}: invalid number '{text}'")]
    InvalidNumber { position: usize, text: String },
    #[error("syntax error at position {position}: expected {expected}, found '{found}'")]
    UnexpectedToken {
        position: usize,
        expected: &'static str,
        found: String,
    },
    #[error("syntax error at position {position}: unexpected end of input, expected {expected}")]
    UnexpectedEnd {
        position: usize,
        expected: &'static str,
    },
    #[error("unknown function name '{name}' at position {position}")]
    UnknownFunction { position: usize, name: String },
    #[error("function '{name}' at position {position} takes {expected} argument(s), got {got}")]
    WrongArity {
        position: usize,
        name: &'static str,
        expected: String,
        got: usize,
    },
}

/// Expression evaluation failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable '{name}' has no value in the assignment")]
    MissingVariable { name: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("ln of non-positive value {value}")]
    LnNonPositive { value: f64 },
    #[error("operation '{op}' produced a non-finite value")]
    NonFinite { op: &'static str },
}

impl Expr {
    /// Evaluates the expression against a variable assignment.
    pub fn evaluate(&self, vars: &impl VarLookup) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Number(x) => *x,
            Expr::Var(name) => vars
                .value_of(name)
                .ok_or_else(|| EvalError::MissingVariable { name: name.clone() })?,
            Expr::Neg(e) => -e.evaluate(vars)?,
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.evaluate(vars)?;
                let b = rhs.evaluate(vars)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(a.evaluate(vars)?);
                }
                match func {
                    Func::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    Func::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Func::Exp => vals[0].exp(),
                    Func::Abs => vals[0].abs(),
                    Func::Ln => {
                        if vals[0] <= 0.0 {
                            return Err(EvalError::LnNonPositive { value: vals[0] });
                        }
                        vals[0].ln()
                    }
                    Func::Pow => vals[0].powf(vals[1]),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { op: self.node_name() })
        }
    }

    fn node_name(&self) -> &'static str {
        match self {
            Expr::Number(_) => "literal",
            Expr::Var(_) => "variable",
            Expr::Neg(_) => "negation",
            Expr::Binary(op, _, _) => match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            },
            Expr::Call(f, _) => f.name(),
        }
    }

    /// Collects every variable name referenced by the expression, in first
    /// appearance order, without duplicates.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Number(_) => {}
            Expr::Var(name) => {
                if !out.iter().any(|n| n == name) {
                    out.push(name.clone());
                }
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
        }
    }

    fn fmt_prec(&self, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(x) => write!(f, "{x}"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Neg(e) => {
                if 3 < min_prec {
                    write!(f, "(-")?;
                    e.fmt_prec(3, f)?;
                    write!(f, ")")
                } else {
                    write!(f, "-")?;
                    e.fmt_prec(3, f)
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                let parens = p < min_prec;
                if parens {
                    write!(f, "(")?;
                }
                lhs.fmt_prec(p, f)?;
                write!(f, " {} ", op.symbol())?;
                // same-precedence operands on the right re-associate when
                // reparsed, so they keep their parentheses
                rhs.fmt_prec(p + 1, f)?;
                if parens {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    a.fmt_prec(0, f)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(0, f)
    }
}

/// Checks `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Number(x) => format!("{x}"),
            Token::Ident(s) => s.clone(),
            Token::Plus => "+".into(),
            Token::Minus => "-".into(),
            Token::Star => "*".into(),
            Token::Slash => "/".into(),
            Token::LParen => "(".into(),
            Token::RParen => ")".into(),
            Token::Comma => ",".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' => {
                tokens.push((i, Token::Plus));
                i += 1;
            }
            '-' => {
                tokens.push((i, Token::Minus));
                i += 1;
            }
            '*' => {
                tokens.push((i, Token::Star));
                i += 1;
            }
            '/' => {
                tokens.push((i, Token::Slash));
                i += 1;
            }
            '(' => {
                tokens.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                tokens.push((i, Token::RParen));
                i += 1;
            }
            ',' => {
                tokens.push((i, Token::Comma));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &text[start..i];
                let value = text.parse::<f64>().map_err(|_| ParseError::InvalidNumber {
                    position: start,
                    text: text.to_string(),
                })?;
                tokens.push((start, Token::Number(value)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push((start, Token::Ident(text[start..i].to_string())));
            }
            _ => {
                return Err(ParseError::UnexpectedChar {
                    position: i,
                    found: c,
                })
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [(usize, Token)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(usize, Token)> {
        self.tokens.get(self.pos)
    }

    fn advance(&mut self) -> Option<&(usize, Token)> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Token, expected: &'static str) -> Result<(), ParseError> {
        match self.advance() {
            Some((_, t)) if t == want => Ok(()),
            Some((p, t)) => Err(ParseError::UnexpectedToken {
                position: *p,
                expected,
                found: t.describe(),
            }),
            None => Err(ParseError::UnexpectedEnd {
                position: self.end,
                expected,
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some((_, Token::Plus)) => BinOp::Add,
                Some((_, Token::Minus)) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some((_, Token::Star)) => BinOp::Mul,
                Some((_, Token::Slash)) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if let Some((_, Token::Minus)) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.advance() {
            Some((_, Token::Number(x))) => Ok(Expr::Number(*x)),
            Some((p, Token::Ident(name))) => {
                let p = *p;
                let name = name.clone();
                if let Some((_, Token::LParen)) = self.peek() {
                    self.pos += 1;
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { position: p, name })?;
                    let mut args = vec![self.expr()?];
                    while let Some((_, Token::Comma)) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(&Token::RParen, "')'")?;
                    let (lo, hi) = func.arity();
                    let ok = args.len() >= lo && hi.is_none_or(|h| args.len() <= h);
                    if !ok {
                        let expected = match hi {
                            Some(h) if h == lo => format!("{lo}"),
                            Some(h) => format!("{lo}..{h}"),
                            None => format!("at least {lo}"),
                        };
                        return Err(ParseError::WrongArity {
                            position: p,
                            name: func.name(),
                            expected,
                            got: args.len(),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some((_, Token::LParen)) => {
                let inner = self.expr()?;
                self.expect(&Token::RParen, "')'")?;
                Ok(inner)
            }
            Some((p, t)) => Err(ParseError::UnexpectedToken {
                position: *p,
                expected: "a number, variable, function call, or '('",
                found: t.describe(),
            }),
            None => Err(ParseError::UnexpectedEnd {
                position: self.end,
                expected: "a number, variable, function call, or '('",
            }),
        }
    }
}

/// Evaluates a parsed expression against a variable assignment.
/// Free-function form of [`Expr::evaluate`].
pub fn evaluate_expression(expr: &Expr, vars: &impl VarLookup) -> Result<f64, EvalError> {
    expr.evaluate(vars)
}

/// Parses an infix expression into an [`Expr`].
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if let Some((p, t)) = parser.peek() {
        return Err(ParseError::UnexpectedToken {
            position: *p,
            expected: "end of expression",
            found: t.describe(),
        });
    }
    Ok(expr)
}
