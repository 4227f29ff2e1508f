//! Small arithmetic expression language for scenario files.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are the variables handed to [`parse`] plus the constant `pi`.
//! Functions: `sin cos tan exp log sqrt`.

use std::fmt;

use crate::func::{GenericFunc, ScalarField, VectorMap};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Fun, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fun {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Fun {
    fn from_name(name: &str) -> Option<Fun> {
        Some(match name {
            "sin" => Fun::Sin,
            "cos" => Fun::Cos,
            "tan" => Fun::Tan,
            "exp" => Fun::Exp,
            "log" => Fun::Log,
            "sqrt" => Fun::Sqrt,
            _ => return None,
        })
    }
}

/// Parse failure with a 1-based line/column inside the expression text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

fn error_at(src: &str, offset: usize, message: impl Into<String>) -> ParseError {
    let (line, column) = position(src, offset);
    ParseError { line, column, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut toks = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
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
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| error_at(src, start, format!("malformed number `{text}`")))?;
            toks.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^()".contains(c) {
            toks.push((Tok::Op(c), i));
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or(c);
            return Err(error_at(src, i, format!("unexpected character `{ch}`")));
        }
    }
    toks.push((Tok::End, src.len()));
    Ok(toks)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        error_at(self.src, self.offset(), msg)
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if *self.peek() == Tok::Op(op) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Op('(') {
                    let fun = Fun::from_name(&name)
                        .ok_or_else(|| error_at(self.src, at, format!("unknown function `{name}`")))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(fun, Box::new(arg)));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if Fun::from_name(&name).is_some() {
                    return Err(error_at(self.src, at, format!("function `{name}` needs an argument")));
                }
                Err(error_at(self.src, at, format!("unknown identifier `{name}`")))
            }
            Tok::End => Err(error_at(self.src, at, "unexpected end of expression")),
            Tok::Op(c) => Err(error_at(self.src, at, format!("unexpected `{c}`"))),
        }
    }
}

/// Parses `src` with the given variable names (index = position in `vars`).
pub fn parse(src: &str, vars: &[&str]) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { src, toks, pos: 0, vars };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

fn integer_exponent(e: &Expr) -> Option<i32> {
    let v = match e {
        Expr::Num(v) => *v,
        Expr::Neg(inner) => match **inner {
            Expr::Num(v) => -v,
            _ => return None,
        },
        _ => return None,
    };
    (v.fract() == 0.0 && v.abs() <= 64.0).then_some(v as i32)
}

impl Expr {
    pub fn eval<R: Real>(&self, x: &[R]) -> R {
        match self {
            Expr::Num(v) => R::cst(*v),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => match integer_exponent(b) {
                Some(n) if n >= 0 => a.eval(x).powi(n),
                Some(n) => R::one() / a.eval(x).powi(-n),
                None => a.eval(x).powr(b.eval(x)),
            },
            Expr::Call(f, a) => {
                let v = a.eval(x);
                match f {
                    Fun::Sin => v.sin(),
                    Fun::Cos => v.cos(),
                    Fun::Tan => v.tan(),
                    Fun::Exp => v.exp(),
                    Fun::Log => v.ln(),
                    Fun::Sqrt => v.sqrt(),
                }
            }
        }
    }

    /// True when the expression does not read variable `i`.
    pub fn independent_of(&self, i: usize) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(j) => *j != i,
            Expr::Neg(a) | Expr::Call(_, a) => a.independent_of(i),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.independent_of(i) && b.independent_of(i)
            }
        }
    }
}

/// A vector of expressions over a shared variable list, usable anywhere a
/// differentiable map is expected.
#[derive(Debug, Clone)]
pub struct ExprMap {
    pub in_dim: usize,
    pub exprs: Vec<Expr>,
}

impl ExprMap {
    pub fn new(in_dim: usize, exprs: Vec<Expr>) -> Self {
        ExprMap { in_dim, exprs }
    }
}

impl GenericFunc for ExprMap {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.exprs.len()
    }
    fn apply<R: Real>(&self, x: &[R]) -> Vec<R> {
        self.exprs.iter().map(|e| e.eval(x)).collect()
    }
}

/// `q1..qn`.
pub fn config_vars(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("q{i}")).collect()
}

/// `q1..qn, p1..pn`.
pub fn phase_vars(n: usize) -> Vec<String> {
    let mut v = config_vars(n);
    v.extend((1..=n).map(|i| format!("p{i}")));
    v
}

fn build(srcs: &[&str], vars: &[String]) -> Result<ExprMap, ParseError> {
    let names: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
    let exprs = srcs.iter().map(|s| parse(s, &names)).collect::<Result<Vec<_>, _>>()?;
    Ok(ExprMap::new(vars.len(), exprs))
}

/// Scalar field over `q1..qn, p1..pn`.
pub fn phase_scalar(src: &str, n: usize) -> Result<ScalarField, ParseError> {
    Ok(ScalarField::new(build(&[src], &phase_vars(n))?))
}

/// Scalar field over `q1..qn`.
pub fn config_scalar(src: &str, n: usize) -> Result<ScalarField, ParseError> {
    Ok(ScalarField::new(build(&[src], &config_vars(n))?))
}

/// Vector map over `q1..qn, p1..pn`.
pub fn phase_map(srcs: &[&str], n: usize) -> Result<VectorMap, ParseError> {
    Ok(VectorMap::new(build(srcs, &phase_vars(n))?))
}

/// Vector map over `q1..qn`.
pub fn config_map(srcs: &[&str], n: usize) -> Result<VectorMap, ParseError> {
    Ok(VectorMap::new(build(srcs, &config_vars(n))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::D1;

    fn ev(src: &str, x: &[f64]) -> f64 {
        let vars = ["x", "y"];
        parse(src, &vars).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[0.0, 0.0]), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[0.0, 0.0]), 512.0);
        assert_eq!(ev("-x^2", &[3.0, 0.0]), -9.0);
        assert_eq!(ev("8 / 4 / 2", &[0.0, 0.0]), 1.0);
        assert_eq!(ev("x - y - 1", &[5.0, 2.0]), 2.0);
        assert_eq!(ev("2^-1", &[0.0, 0.0]), 0.5);
        assert_eq!(ev("1.5e2 + .5", &[0.0, 0.0]), 150.5);
    }

    #[test]
    fn functions_and_constants() {
        assert!((ev("sin(pi/2) + cos(0) + exp(0) + log(1) + sqrt(4)", &[0.0, 0.0]) - 5.0).abs() < 1e-15);
        assert!((ev("tan(x)", &[0.3, 0.0]) - 0.3_f64.tan()).abs() < 1e-15);
        assert!((ev("x^0.5", &[9.0, 0.0]) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_through_dual() {
        let e = parse("x^3 * sin(y)", &["x", "y"]).unwrap();
        let v = e.eval(&[D1::variable(2.0), D1::constant(0.4)]);
        assert!((v.eps - 12.0 * 0.4_f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn error_positions() {
        let err = parse("q1 + foo(q2)", &["q1", "q2"]).unwrap_err();
        assert_eq!((err.line, err.column), (1, 6));
        assert!(err.message.contains("foo"));
        let err = parse("q1 +\n  * q2", &["q1", "q2"]).unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
        assert!(parse("(q1", &["q1"]).is_err());
        assert!(parse("q1 q1", &["q1"]).is_err());
        assert!(parse("q3", &["q1"]).unwrap_err().message.contains("q3"));
        assert!(parse("2 $ 3", &[]).unwrap_err().message.contains('$'));
    }

    #[test]
    fn dependence() {
        let e = parse("q1 * cos(q3)", &["q1", "q2", "q3"]).unwrap();
        assert!(e.independent_of(1));
        assert!(!e.independent_of(2));
    }
}
