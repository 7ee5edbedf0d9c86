//! Scalar expressions in `x` and `y`.
//!
//! Source terms, manufactured solutions and coefficient entries are all given
//! as text (`"x*y"`, `"(1 - x*x - y*y)*x"`) and parsed into an [`Expr`] tree.
//! The tree can be evaluated at a point and differentiated symbolically.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := power (('*' | '/') power)*
//! power   := unary ('^' power)?          right-associative
//! unary   := '-' unary | call
//! call    := NAME '(' sum ')' | atom
//! atom    := NUMBER | 'x' | 'y' | 'pi' | '(' sum ')'
//! ```
//!
//! Unary minus sits between `^` and function application, so `-x^2` reads as
//! `(-x)^2` while `-sin(x)^2` reads as `(-(sin(x)))^2`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("domain error: {what} at ({x}, {y})")]
    Domain { what: &'static str, x: f64, y: f64 },
    #[error("cannot differentiate `{0}`")]
    NonDifferentiable(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Log,
    Abs,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Log => "log",
            UnaryOp::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "sqrt" => UnaryOp::Sqrt,
            "log" => UnaryOp::Log,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// Expression tree. Immutable once built; `Send + Sync`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    Y,
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        parse(source)
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    pub fn var(v: Var) -> Expr {
        match v {
            Var::X => Expr::X,
            Var::Y => Expr::Y,
        }
    }

    /// `a + b`, folding constants.
    pub fn sum(a: Expr, b: Expr) -> Expr {
        add(a, b)
    }

    /// `a * b`, folding constants.
    pub fn product(a: Expr, b: Expr) -> Expr {
        mul(a, b)
    }

    pub fn negated(a: Expr) -> Expr {
        neg(a)
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64, ExprError> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::Y => y,
            Expr::Unary(op, child) => {
                let a = child.eval(x, y)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::Domain {
                                what: "sqrt of negative",
                                x,
                                y,
                            });
                        }
                        a.sqrt()
                    }
                    UnaryOp::Log => {
                        if a <= 0.0 {
                            return Err(ExprError::Domain {
                                what: "log of non-positive",
                                x,
                                y,
                            });
                        }
                        a.ln()
                    }
                    UnaryOp::Abs => a.abs(),
                }
            }
            Expr::Binary(op, l, r) => {
                let a = l.eval(x, y)?;
                let b = r.eval(x, y)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::Domain {
                                what: "division by zero",
                                x,
                                y,
                            });
                        }
                        a / b
                    }
                    BinaryOp::Pow => a.powf(b),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ExprError::Domain {
                what: "non-finite result",
                x,
                y,
            })
        }
    }

    /// True when the tree mentions `x` or `y`.
    pub fn has_variables(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::X | Expr::Y => true,
            Expr::Unary(_, c) => c.has_variables(),
            Expr::Binary(_, l, r) => l.has_variables() || r.has_variables(),
        }
    }

    fn contains_abs(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::X | Expr::Y => false,
            Expr::Unary(UnaryOp::Abs, _) => true,
            Expr::Unary(_, c) => c.contains_abs(),
            Expr::Binary(_, l, r) => l.contains_abs() || r.contains_abs(),
        }
    }

    /// Partial derivative with respect to `var`. The result is only
    /// constant-folded, so compare derivatives by value, not by shape.
    pub fn differentiate(&self, var: Var) -> Result<Expr, ExprError> {
        if self.contains_abs() {
            return Err(ExprError::NonDifferentiable("abs"));
        }
        Ok(self.diff(var))
    }

    fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::X => Expr::Const(if var == Var::X { 1.0 } else { 0.0 }),
            Expr::Y => Expr::Const(if var == Var::Y { 1.0 } else { 0.0 }),
            Expr::Unary(op, u) => {
                let du = u.diff(var);
                let u = (**u).clone();
                match op {
                    UnaryOp::Neg => neg(du),
                    UnaryOp::Sin => mul(unary(UnaryOp::Cos, u), du),
                    UnaryOp::Cos => neg(mul(unary(UnaryOp::Sin, u), du)),
                    UnaryOp::Exp => mul(unary(UnaryOp::Exp, u), du),
                    UnaryOp::Sqrt => div(du, mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, u))),
                    UnaryOp::Log => div(du, u),
                    UnaryOp::Abs => unreachable!("abs rejected before differentiation"),
                }
            }
            Expr::Binary(op, l, r) => {
                let dl = l.diff(var);
                let dr = r.diff(var);
                let l = (**l).clone();
                let r = (**r).clone();
                match op {
                    BinaryOp::Add => add(dl, dr),
                    BinaryOp::Sub => sub(dl, dr),
                    BinaryOp::Mul => add(mul(dl, r.clone()), mul(l, dr)),
                    BinaryOp::Div => div(sub(mul(dl, r.clone()), mul(l, dr)), pow(r, Expr::Const(2.0))),
                    BinaryOp::Pow => {
                        if !r.has_variables() {
                            // c * u^(c-1) * u'
                            let reduced = sub(r.clone(), Expr::Const(1.0));
                            mul(mul(r, pow(l, reduced)), dl)
                        } else if !l.has_variables() {
                            // u^v * ln(u) * v'
                            mul(mul(pow(l.clone(), r), unary(UnaryOp::Log, l)), dr)
                        } else {
                            // u^v * (v' ln u + v u' / u)
                            let whole = pow(l.clone(), r.clone());
                            mul(whole, add(mul(dr, unary(UnaryOp::Log, l.clone())), div(mul(r, dl), l)))
                        }
                    }
                }
            }
        }
    }
}

fn as_const(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(c) => Some(*c),
        _ => None,
    }
}

// Smart constructors: constant folding plus the 0/1 identities.

fn unary(op: UnaryOp, a: Expr) -> Expr {
    if let Some(c) = as_const(&a) {
        if let Ok(v) = Expr::Unary(op, Box::new(Expr::Const(c))).eval(0.0, 0.0) {
            return Expr::Const(v);
        }
    }
    Expr::Unary(op, Box::new(a))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        let folded = Expr::Binary(op, Box::new(Expr::Const(x)), Box::new(Expr::Const(y)));
        if let Ok(v) = folded.eval(0.0, 0.0) {
            return Expr::Const(v);
        }
        return folded;
    }
    Expr::Binary(op, Box::new(a), Box::new(b))
}

fn add(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => binary(BinaryOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        _ => binary(BinaryOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (Some(0.0), _) | (_, Some(0.0)) => Expr::Const(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => binary(BinaryOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (Some(0.0), _) => Expr::Const(0.0),
        (_, Some(1.0)) => a,
        _ => binary(BinaryOp::Div, a, b),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match as_const(&b) {
        Some(1.0) => a,
        Some(0.0) => Expr::Const(1.0),
        _ => binary(BinaryOp::Pow, a, b),
    }
}

/// Fully parenthesized, re-parseable text.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::X => f.write_str("x"),
            Expr::Y => f.write_str("y"),
            Expr::Unary(UnaryOp::Neg, c) => write!(f, "(-{c})"),
            Expr::Unary(op, c) => write!(f, "{}({c})", op.name()),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                } else {
                    return Err(ExprError::Syntax {
                        pos: i,
                        msg: "malformed exponent".into(),
                    });
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push((start, Tok::Num(value)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        pos: start,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((start, tok));
            i += c.len_utf8();
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.at += 1;
                Ok(())
            }
            _ => self.err("expected `)`"),
        }
    }

    /// Pratt loop over the infix operators.
    fn expr(&mut self, min_bp: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(c)) => *c,
                Some(Tok::RParen) | None => break,
                Some(_) => return self.err("expected an operator"),
            };
            let (l_bp, r_bp, bop) = match op {
                '+' => (1, 2, BinaryOp::Add),
                '-' => (1, 2, BinaryOp::Sub),
                '*' => (3, 4, BinaryOp::Mul),
                '/' => (3, 4, BinaryOp::Div),
                '^' => (6, 5, BinaryOp::Pow),
                _ => unreachable!(),
            };
            if l_bp < min_bp {
                break;
            }
            self.at += 1;
            let rhs = self.expr(r_bp)?;
            lhs = Expr::Binary(bop, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        let Some(tok) = self.peek().cloned() else {
            return self.err("unexpected end of input");
        };
        self.at += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('-') => Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.prefix()?))),
            Tok::Op(c) => Err(ExprError::Syntax {
                pos,
                msg: format!("unexpected operator `{c}`"),
            }),
            Tok::LParen => {
                let inner = self.expr(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::RParen => Err(ExprError::Syntax {
                pos,
                msg: "unexpected `)`".into(),
            }),
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::X),
                "y" => Ok(Expr::Y),
                "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                _ => {
                    let Some(op) = UnaryOp::from_name(&name) else {
                        return Err(ExprError::UnknownIdentifier { name, pos });
                    };
                    if self.peek() != Some(&Tok::LParen) {
                        return self.err(format!("expected `(` after `{name}`"));
                    }
                    self.at += 1;
                    let arg = self.expr(0)?;
                    self.expect_rparen()?;
                    Ok(Expr::Unary(op, Box::new(arg)))
                }
            },
        }
    }
}

pub fn parse(source: &str) -> Result<Expr, ExprError> {
    let toks = lex(source)?;
    if toks.is_empty() {
        return Err(ExprError::Syntax {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks,
        at: 0,
        end: source.len(),
    };
    let e = p.expr(0)?;
    if p.at != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        parse(s).unwrap().eval(x, y).unwrap()
    }

    fn fd(e: &Expr, var: Var, x: f64, y: f64, h: f64) -> Option<f64> {
        let (dx, dy) = match var {
            Var::X => (h, 0.0),
            Var::Y => (0.0, h),
        };
        let p = e.eval(x + dx, y + dy).ok()?;
        let m = e.eval(x - dx, y - dy).ok()?;
        Some((p - m) / (2.0 * h))
    }

    #[test]
    fn parses_product() {
        assert_eq!(
            parse("x*y").unwrap(),
            Expr::Binary(BinaryOp::Mul, Box::new(Expr::X), Box::new(Expr::Y))
        );
        assert_eq!(parse("0").unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn evaluates_basic() {
        assert!(ev("1 - x*x - y*y", 0.6, 0.8).abs() < 1e-15);
        assert_eq!(ev("x*y", 2.0, 3.0), 6.0);
        assert_eq!(ev("sin(x)+1", 0.0, 5.0), 1.0);
        assert_eq!(ev("1 - x*x/4", 1.0, 0.0), 0.75);
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-x^2", 3.0, 0.0), 9.0);
        assert_eq!(ev("-(x^2)", 3.0, 0.0), -9.0);
        assert_eq!(ev("x^-1", 4.0, 0.0), 0.25);
        assert_eq!(ev("2*-3", 0.0, 0.0), -6.0);
        assert_eq!(ev("1.5e1 + .5 + 2E-1", 0.0, 0.0), 15.7);
        assert_eq!(ev("8 - 2 - 1", 0.0, 0.0), 5.0);
        assert_eq!(ev("8 / 2 / 2", 0.0, 0.0), 2.0);
        assert!((ev("cos(pi)", 0.0, 0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert!(matches!(parse("x*"), Err(ExprError::Syntax { pos: 2, .. })));
        assert!(matches!(parse("(x+y"), Err(ExprError::Syntax { pos: 4, .. })));
        assert!(matches!(parse("x y"), Err(ExprError::Syntax { pos: 2, .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("sin x"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("3 $ 4"), Err(ExprError::Syntax { pos: 2, .. })));
        assert!(matches!(parse("1e"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("+x"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn unknown_identifier() {
        assert_eq!(
            parse("2*z"),
            Err(ExprError::UnknownIdentifier {
                name: "z".into(),
                pos: 2
            })
        );
        assert!(matches!(parse("tan(x)"), Err(ExprError::UnknownIdentifier { .. })));
    }

    #[test]
    fn domain_errors() {
        let cases = ["1/x", "log(x)", "sqrt(x - 1)", "exp(1000)"];
        for c in cases {
            assert!(
                matches!(parse(c).unwrap().eval(0.0, 0.0), Err(ExprError::Domain { .. })),
                "{c}"
            );
        }
        assert!(matches!(
            parse("x^0.5").unwrap().eval(-1.0, 0.0),
            Err(ExprError::Domain { .. })
        ));
    }

    #[test]
    fn derivative_of_product() {
        let d = parse("x*y").unwrap().differentiate(Var::X).unwrap();
        for (x, y) in [(0.1, 0.2), (-0.5, 0.7)] {
            assert_eq!(d.eval(x, y).unwrap(), y);
        }
        assert_eq!(d, Expr::Y);
    }

    #[test]
    fn abs_is_rejected() {
        let e = parse("abs(x)*y").unwrap();
        assert_eq!(e.differentiate(Var::Y), Err(ExprError::NonDifferentiable("abs")));
    }

    #[test]
    fn constant_derivative_is_zero() {
        for c in [0.0, 1.0, -3.5, 1e10] {
            assert_eq!(Expr::Const(c).differentiate(Var::X).unwrap(), Expr::Const(0.0));
        }
    }

    // Hand derivatives, cross-checked with central differences at 10 random
    // points (h = 1e-5).
    #[test]
    fn second_derivatives_match_hand_and_fd() {
        let bubble = parse("1 - x*x - y*y").unwrap();
        let uxx = bubble.differentiate(Var::X).unwrap().differentiate(Var::X).unwrap();
        let cubic = parse("(1 - x*x - y*y)*x").unwrap();
        let ux = cubic.differentiate(Var::X).unwrap();
        let uxy = ux.differentiate(Var::Y).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let r: f64 = rng.gen_range(0.0..0.9);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (x, y) = (r * t.cos(), r * t.sin());

            assert!((uxx.eval(x, y).unwrap() + 2.0).abs() < 1e-14);
            let fd_xx = fd(&bubble.differentiate(Var::X).unwrap(), Var::X, x, y, 1e-5).unwrap();
            assert!((fd_xx + 2.0).abs() <= 1e-6 * 2.0);

            assert!((uxy.eval(x, y).unwrap() + 2.0 * y).abs() < 1e-14);
            let fd_xy = fd(&ux, Var::Y, x, y, 1e-5).unwrap();
            assert!((fd_xy + 2.0 * y).abs() <= 1e-6 * (1.0 + (2.0 * y).abs()));
        }
    }

    #[test]
    fn general_power_rule() {
        let e = parse("x^y").unwrap();
        let dx = e.differentiate(Var::X).unwrap();
        let dy = e.differentiate(Var::Y).unwrap();
        let (x, y) = (0.7, 0.3);
        assert!((dx.eval(x, y).unwrap() - y * x.powf(y - 1.0)).abs() < 1e-14);
        assert!((dy.eval(x, y).unwrap() - x.powf(y) * x.ln()).abs() < 1e-14);
        let e = parse("2^x").unwrap().differentiate(Var::X).unwrap();
        assert!((e.eval(0.5, 0.0).unwrap() - 2f64.powf(0.5) * 2f64.ln()).abs() < 1e-14);
    }

    /// Seeded grammar fuzzer for the derivative and printer properties.
    pub(crate) fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
        if depth == 0 || rng.gen_bool(0.25) {
            return match rng.gen_range(0..3) {
                0 => Expr::X,
                1 => Expr::Y,
                _ => Expr::Const((rng.gen_range(-30..=30) as f64) / 10.0),
            };
        }
        match rng.gen_range(0..9) {
            0 => Expr::Unary(UnaryOp::Neg, Box::new(random_expr(rng, depth - 1))),
            1 => Expr::Unary(UnaryOp::Sin, Box::new(random_expr(rng, depth - 1))),
            2 => Expr::Unary(UnaryOp::Cos, Box::new(random_expr(rng, depth - 1))),
            3 => Expr::Unary(UnaryOp::Exp, Box::new(random_expr(rng, depth - 1))),
            4 => Expr::Binary(
                BinaryOp::Pow,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(Expr::Const(rng.gen_range(2..=3) as f64)),
            ),
            5 => {
                // Denominator bounded away from zero.
                let den = Expr::Binary(
                    BinaryOp::Add,
                    Box::new(Expr::Const(2.0)),
                    Box::new(Expr::Unary(UnaryOp::Sin, Box::new(random_expr(rng, depth - 1)))),
                );
                Expr::Binary(BinaryOp::Div, Box::new(random_expr(rng, depth - 1)), Box::new(den))
            }
            6 => Expr::Binary(
                BinaryOp::Add,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
            7 => Expr::Binary(
                BinaryOp::Sub,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
            _ => Expr::Binary(
                BinaryOp::Mul,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            ),
        }
    }

    fn disc_point(rng: &mut ChaCha8Rng) -> (f64, f64) {
        let r: f64 = rng.gen_range(0.0..0.95);
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (r * t.cos(), r * t.sin())
    }

    #[test]
    fn fuzzed_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        for _ in 0..100 {
            let e = random_expr(&mut rng, 5);
            for var in [Var::X, Var::Y] {
                let d = e.differentiate(var).unwrap();
                for _ in 0..10 {
                    let (x, y) = disc_point(&mut rng);
                    let Ok(v) = e.eval(x, y) else { continue };
                    if v.abs() > 1e3 {
                        continue;
                    }
                    let Some(reference) = fd(&e, var, x, y, 1e-5) else {
                        continue;
                    };
                    let got = d.eval(x, y).unwrap();
                    assert!(
                        (got - reference).abs() <= 1e-6 * (1.0 + reference.abs()),
                        "{e} d/{var:?} at ({x},{y}): {got} vs {reference}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 1500);
    }

    #[test]
    fn printed_form_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let e = random_expr(&mut rng, 5);
            let back = parse(&e.to_string()).unwrap();
            for _ in 0..10 {
                let (x, y) = disc_point(&mut rng);
                match (e.eval(x, y), back.eval(x, y)) {
                    (Ok(a), Ok(b)) => assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs())),
                    (Err(_), Err(_)) => {}
                    other => panic!("round trip disagreed on {e}: {other:?}"),
                }
            }
        }
        let c = Expr::Const(-2.5);
        assert_eq!(parse(&c.to_string()).unwrap().eval(0.0, 0.0).unwrap(), -2.5);
    }
}
