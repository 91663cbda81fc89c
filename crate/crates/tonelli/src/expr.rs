//! Closed-form expression grammar over the jet primitive set.
//!
//! Scenario files describe metrics, potentials and perturbations as strings
//! in a small arithmetic grammar (`+ - * / ^`, `exp`, `log`, `sin`, `cos`,
//! `sqrt`, `pow`). An [`Expr`] evaluates on plain floats or on [`Jet3`]
//! values, so the same definition yields values and exact derivatives to
//! order 3.

use crate::jets::{Jet3, JetError};
use thiserror::Error;

/// Expression parse failure.
#[derive(Debug, Clone, Error)]
pub enum ParseError {
    #[error("unexpected character `{0}` at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unknown identifier `{0}` (variables: {1})")]
    UnknownIdentifier(String, String),
    #[error("function `{0}` expects {1} argument(s)")]
    Arity(String, usize),
    #[error("malformed number `{0}`")]
    BadNumber(String),
}

/// Expression tree over indexed variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// Integer power (any sign, any base away from `0^negative`).
    Powi(Box<Expr>, i32),
    /// Real power; requires positive base at evaluation time.
    Powf(Box<Expr>, f64),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sqrt(Box<Expr>),
}

#[allow(clippy::should_implement_trait)] // builder methods, not operator impls
impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn add(self, o: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(o))
    }

    pub fn sub(self, o: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(o))
    }

    pub fn mul(self, o: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(o))
    }

    pub fn div(self, o: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(o))
    }

    pub fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }

    pub fn powi(self, k: i32) -> Expr {
        Expr::Powi(Box::new(self), k)
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    pub fn ln(self) -> Expr {
        Expr::Ln(Box::new(self))
    }

    pub fn sin(self) -> Expr {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Box::new(self))
    }

    pub fn sqrt(self) -> Expr {
        Expr::Sqrt(Box::new(self))
    }

    /// Scale by a constant.
    pub fn cmul(self, c: f64) -> Expr {
        Expr::c(c).mul(self)
    }

    /// `|x|^2` over the given variable indices.
    pub fn norm_sq(indices: &[usize]) -> Expr {
        indices
            .iter()
            .map(|&i| Expr::var(i).powi(2))
            .reduce(|a, b| a.add(b))
            .unwrap_or(Expr::c(0.0))
    }

    pub fn eval_f64(&self, vars: &[f64]) -> Result<f64, JetError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => {
                if *i >= vars.len() {
                    return Err(JetError::UnknownVariable(*i, vars.len()));
                }
                vars[*i]
            }
            Expr::Add(a, b) => a.eval_f64(vars)? + b.eval_f64(vars)?,
            Expr::Sub(a, b) => a.eval_f64(vars)? - b.eval_f64(vars)?,
            Expr::Mul(a, b) => a.eval_f64(vars)? * b.eval_f64(vars)?,
            Expr::Div(a, b) => {
                let d = b.eval_f64(vars)?;
                if d == 0.0 {
                    return Err(JetError::Domain { op: "recip", arg: d });
                }
                a.eval_f64(vars)? / d
            }
            Expr::Neg(a) => -a.eval_f64(vars)?,
            Expr::Powi(a, k) => {
                let u = a.eval_f64(vars)?;
                if u == 0.0 && *k < 0 {
                    return Err(JetError::Domain { op: "powi", arg: u });
                }
                u.powi(*k)
            }
            Expr::Powf(a, p) => {
                let u = a.eval_f64(vars)?;
                if u <= 0.0 {
                    return Err(JetError::Domain { op: "pow", arg: u });
                }
                u.powf(*p)
            }
            Expr::Exp(a) => a.eval_f64(vars)?.exp(),
            Expr::Ln(a) => {
                let u = a.eval_f64(vars)?;
                if u <= 0.0 {
                    return Err(JetError::Domain { op: "log", arg: u });
                }
                u.ln()
            }
            Expr::Sin(a) => a.eval_f64(vars)?.sin(),
            Expr::Cos(a) => a.eval_f64(vars)?.cos(),
            Expr::Sqrt(a) => {
                let u = a.eval_f64(vars)?;
                if u <= 0.0 {
                    return Err(JetError::Domain { op: "sqrt", arg: u });
                }
                u.sqrt()
            }
        })
    }

    pub fn eval_jet(&self, vars: &[Jet3]) -> Result<Jet3, JetError> {
        let n = vars.first().map_or(0, |j| j.nvars());
        Ok(match self {
            Expr::Const(c) => Jet3::constant(n, *c),
            Expr::Var(i) => {
                if *i >= vars.len() {
                    return Err(JetError::UnknownVariable(*i, vars.len()));
                }
                vars[*i].clone()
            }
            Expr::Add(a, b) => a.eval_jet(vars)?.add(&b.eval_jet(vars)?)?,
            Expr::Sub(a, b) => a.eval_jet(vars)?.sub(&b.eval_jet(vars)?)?,
            Expr::Mul(a, b) => a.eval_jet(vars)?.mul(&b.eval_jet(vars)?)?,
            Expr::Div(a, b) => a.eval_jet(vars)?.div(&b.eval_jet(vars)?)?,
            Expr::Neg(a) => a.eval_jet(vars)?.neg(),
            Expr::Powi(a, k) => a.eval_jet(vars)?.powi(*k)?,
            Expr::Powf(a, p) => a.eval_jet(vars)?.powf(*p)?,
            Expr::Exp(a) => a.eval_jet(vars)?.exp(),
            Expr::Ln(a) => a.eval_jet(vars)?.ln()?,
            Expr::Sin(a) => a.eval_jet(vars)?.sin(),
            Expr::Cos(a) => a.eval_jet(vars)?.cos(),
            Expr::Sqrt(a) => a.eval_jet(vars)?.sqrt()?,
        })
    }

    /// Parses `src` against a list of variable names.
    pub fn parse(src: &str, variables: &[&str]) -> Result<Expr, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            variables,
        };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(ParseError::UnexpectedToken(format!("{:?}", p.tokens[p.pos])));
        }
        Ok(e)
    }
}

// ============================================================================
// Tokenizer / recursive-descent parser
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        match ch {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| ParseError::BadNumber(text.clone()))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_')
                {
                    i += 1;
                }
                out.push(Token::Ident(bytes[start..i].iter().collect()));
            }
            other => return Err(ParseError::UnexpectedChar(other, i)),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    variables: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Result<Token, ParseError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(ParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, t: Token) -> Result<(), ParseError> {
        let got = self.bump()?;
        if got != t {
            return Err(ParseError::UnexpectedToken(format!("{got:?}")));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = lhs.add(self.term()?);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = lhs.sub(self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = lhs.mul(self.unary()?);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = lhs.div(self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.pos += 1;
            return Ok(self.unary()?.neg());
        }
        if matches!(self.peek(), Some(Token::Plus)) {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.pos += 1;
            // Exponent: signed number literal or parenthesized expression.
            let neg = if matches!(self.peek(), Some(Token::Minus)) {
                self.pos += 1;
                true
            } else {
                false
            };
            match self.bump()? {
                Token::Num(v) => {
                    let v = if neg { -v } else { v };
                    if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
                        return Ok(base.powi(v as i32));
                    }
                    Ok(Expr::Powf(Box::new(base), v))
                }
                t => Err(ParseError::UnexpectedToken(format!("{t:?}"))),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.bump()? {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Token::Ident(name) => {
                if matches!(self.peek(), Some(Token::LParen)) {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Some(Token::Comma)) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Token::RParen)?;
                    return self.call(&name, args);
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                match self.variables.iter().position(|v| *v == name) {
                    Some(i) => Ok(Expr::Var(i)),
                    None => Err(ParseError::UnknownIdentifier(
                        name,
                        self.variables.join(","),
                    )),
                }
            }
            t => Err(ParseError::UnexpectedToken(format!("{t:?}"))),
        }
    }

    fn call(&mut self, name: &str, mut args: Vec<Expr>) -> Result<Expr, ParseError> {
        let unary = |args: &mut Vec<Expr>, name: &str| -> Result<Expr, ParseError> {
            if args.len() != 1 {
                return Err(ParseError::Arity(name.to_string(), 1));
            }
            Ok(args.pop().unwrap())
        };
        match name {
            "exp" => Ok(unary(&mut args, name)?.exp()),
            "log" | "ln" => Ok(unary(&mut args, name)?.ln()),
            "sin" => Ok(unary(&mut args, name)?.sin()),
            "cos" => Ok(unary(&mut args, name)?.cos()),
            "sqrt" => Ok(unary(&mut args, name)?.sqrt()),
            "pow" => {
                if args.len() != 2 {
                    return Err(ParseError::Arity(name.to_string(), 2));
                }
                let e = args.pop().unwrap();
                let base = args.pop().unwrap();
                match e {
                    Expr::Const(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                        Ok(base.powi(v as i32))
                    }
                    Expr::Const(v) => Ok(Expr::Powf(Box::new(base), v)),
                    Expr::Neg(inner) => match *inner {
                        Expr::Const(v) if v.fract() == 0.0 => Ok(base.powi(-(v as i32))),
                        Expr::Const(v) => Ok(Expr::Powf(Box::new(base), -v)),
                        _ => Err(ParseError::UnexpectedToken(
                            "pow exponent must be a constant".into(),
                        )),
                    },
                    _ => Err(ParseError::UnexpectedToken(
                        "pow exponent must be a constant".into(),
                    )),
                }
            }
            other => Err(ParseError::UnknownIdentifier(
                other.to_string(),
                "exp,log,sin,cos,sqrt,pow".into(),
            )),
        }
    }
}
