//! Closed-form scalar fields of `(t, q, p)`.
//!
//! Expressions are parsed from plain text (`"0.5*p^2 + cos(q)"`) and
//! evaluated either as numbers or as [`Jet`]s carrying exact derivatives up to
//! third order. Recognized variables: `t`; `q`, `x` (aliases of `q1`), `q1`,
//! `q2`, `x1`, `x2`; `p`, `xi` (aliases of `p1`), `p1`, `p2`, `xi1`, `xi2`.
//! Functions: `sin cos exp ln sqrt tanh atan`. Constant: `pi`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    T,
    Q(usize),
    P(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Atan,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Tanh => x.tanh(),
            Func::Atan => x.atan(),
        }
    }

    fn apply_jet(self, j: &Jet) -> Jet {
        match self {
            Func::Sin => j.sin(),
            Func::Cos => j.cos(),
            Func::Exp => j.exp(),
            Func::Ln => j.ln(),
            Func::Sqrt => j.sqrt(),
            Func::Tanh => j.tanh(),
            Func::Atan => j.atan(),
        }
    }
}

/// A scalar field built from arithmetic and elementary functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Expr {
    Const(f64),
    Var(Var),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn parse(s: &str) -> Result<Expr> {
        s.parse()
    }

    /// Largest spatial index referenced (1-based), 0 if none.
    pub fn max_dim(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(Var::T) => 0,
            Expr::Var(Var::Q(i)) | Expr::Var(Var::P(i)) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_dim().max(b.max_dim())
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_dim(),
        }
    }

    pub fn depends_on_t(&self) -> bool {
        self.any_var(&|v| v == Var::T)
    }

    pub fn depends_on_q(&self) -> bool {
        self.any_var(&|v| matches!(v, Var::Q(_)))
    }

    pub fn depends_on_p(&self) -> bool {
        self.any_var(&|v| matches!(v, Var::P(_)))
    }

    fn any_var(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => pred(*v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.any_var(pred) || b.any_var(pred)
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.any_var(pred),
        }
    }

    /// Value at `(t, z)` with `z = (q_1..q_d, p_1..p_d)`.
    pub fn eval(&self, t: f64, z: &[f64]) -> f64 {
        let d = z.len() / 2;
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::Q(i)) => z[*i],
            Expr::Var(Var::P(i)) => z[d + i],
            Expr::Add(a, b) => a.eval(t, z) + b.eval(t, z),
            Expr::Sub(a, b) => a.eval(t, z) - b.eval(t, z),
            Expr::Mul(a, b) => a.eval(t, z) * b.eval(t, z),
            Expr::Div(a, b) => a.eval(t, z) / b.eval(t, z),
            Expr::Neg(a) => -a.eval(t, z),
            Expr::Pow(a, k) => a.eval(t, z).powi(*k),
            Expr::Call(f, a) => f.apply(a.eval(t, z)),
        }
    }

    /// Taylor jet in the variables `(t, q, p)` up to `order`.
    pub fn jet(&self, t: f64, z: &[f64], order: usize) -> Jet {
        let n = z.len() + 1;
        let d = z.len() / 2;
        match self {
            Expr::Const(c) => Jet::constant(n, order, *c),
            Expr::Var(Var::T) => Jet::variable(n, order, 0, t),
            Expr::Var(Var::Q(i)) => Jet::variable(n, order, 1 + i, z[*i]),
            Expr::Var(Var::P(i)) => Jet::variable(n, order, 1 + d + i, z[d + i]),
            Expr::Add(a, b) => a.jet(t, z, order).add(&b.jet(t, z, order)),
            Expr::Sub(a, b) => a.jet(t, z, order).sub(&b.jet(t, z, order)),
            Expr::Mul(a, b) => a.jet(t, z, order).mul(&b.jet(t, z, order)),
            Expr::Div(a, b) => a.jet(t, z, order).div(&b.jet(t, z, order)),
            Expr::Neg(a) => a.jet(t, z, order).scale(-1.0),
            Expr::Pow(a, k) => a.jet(t, z, order).powi(*k),
            Expr::Call(f, a) => f.apply_jet(&a.jet(t, z, order)),
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::Q(i)) => write!(f, "q{}", i + 1),
            Expr::Var(Var::P(i)) => write!(f, "p{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, k) => {
                if *k < 0 {
                    write!(f, "({a}^({k}))")
                } else {
                    write!(f, "({a}^{k})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;
    fn try_from(s: String) -> Result<Expr> {
        s.parse()
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        let tokens = tokenize(s)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!("unexpected trailing input in `{s}`")));
        }
        Ok(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{text}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = lhs + self.term()?;
            } else if self.eat_op('-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = lhs * self.unary()?;
            } else if self.eat_op('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            return Ok(-self.unary()?);
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let neg = self.eat_op('-');
            let k = match self.tokens.get(self.pos) {
                Some(Tok::Num(v)) if v.fract() == 0.0 => *v as i32,
                _ => {
                    // parenthesized integer exponent, e.g. x^(-2)
                    if self.eat_op('(') {
                        let inner_neg = self.eat_op('-');
                        let k = match self.tokens.get(self.pos) {
                            Some(Tok::Num(v)) if v.fract() == 0.0 => *v as i32,
                            _ => return Err(Error::Expr("exponent must be an integer".into())),
                        };
                        self.pos += 1;
                        if !self.eat_op(')') {
                            return Err(Error::Expr("missing `)` in exponent".into()));
                        }
                        let k = if inner_neg { -k } else { k };
                        return Ok(Expr::Pow(Box::new(base), if neg { -k } else { k }));
                    }
                    return Err(Error::Expr("exponent must be an integer".into()));
                }
            };
            self.pos += 1;
            return Ok(Expr::Pow(Box::new(base), if neg { -k } else { k }));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(Error::Expr("missing `)`".into()));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = Func::from_name(&name) {
                    if !self.eat_op('(') {
                        return Err(Error::Expr(format!("`{name}` must be called")));
                    }
                    let arg = self.expr()?;
                    if !self.eat_op(')') {
                        return Err(Error::Expr("missing `)`".into()));
                    }
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                variable(&name).map(Expr::Var)
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

fn variable(name: &str) -> Result<Var> {
    let (stem, idx) = match name.find(|c: char| c.is_ascii_digit()) {
        Some(k) => (&name[..k], name[k..].parse::<usize>().ok()),
        None => (name, Some(1)),
    };
    let idx = idx.filter(|&i| i >= 1).ok_or_else(|| Error::Expr(format!("bad index in `{name}`")))?;
    match stem {
        "t" if name == "t" => Ok(Var::T),
        "q" | "x" => Ok(Var::Q(idx - 1)),
        "p" | "xi" => Ok(Var::P(idx - 1)),
        _ => Err(Error::Expr(format!("unknown identifier `{name}`"))),
    }
}
