//! A small arithmetic-expression language for declaring fields, curves and
//! Nagumo functions in text.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = ("-" | "+") unary | power ;
//! power   = primary [ "^" unary ] ;
//! primary = number | name | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" | "ln" | "sqrt" | "abs" | "tanh" ;
//! ```
//!
//! `^` binds tighter than unary minus and is right-associative, so `-2^2`
//! is `-4` and `2^3^2` is `512`. Names resolve to the allowed variables
//! (a subset of `t`, `u`, `v`), then to parameters, then to the constants
//! `pi` and `e`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    T,
    U,
    V,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::U => "u",
            Var::V => "v",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        match name {
            "t" => Some(Var::T),
            "u" => Some(Var::U),
            "v" => Some(Var::V),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
}

impl UnaryOp {
    fn from_name(name: &str) -> Option<UnaryOp> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            "tanh" => UnaryOp::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Tanh => "tanh",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Ln => x.ln(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Tanh => x.tanh(),
        }
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

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    /// A named parameter, resolved to its value at parse time.
    Param(String, f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    #[inline]
    pub fn eval(&self, t: f64, u: f64, v: f64) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::U) => u,
            Expr::Var(Var::V) => v,
            Expr::Param(_, x) => *x,
            Expr::Unary(op, a) => op.apply(a.eval(t, u, v)),
            Expr::Binary(op, a, b) => op.apply(a.eval(t, u, v), b.eval(t, u, v)),
        }
    }

    /// True when the variable occurs anywhere in the tree.
    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Var(x) => *x == var,
            Expr::Num(_) | Expr::Param(..) => false,
            Expr::Unary(_, a) => a.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// Constant value when the tree has no free variables.
    pub fn constant_value(&self) -> Option<f64> {
        if [Var::T, Var::U, Var::V].iter().any(|&x| self.depends_on(x)) {
            None
        } else {
            Some(self.eval(0.0, 0.0, 0.0))
        }
    }
}

/// Fully parenthesized rendering; parsing it back yields the same tree
/// (parameters re-resolve by name).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => {
                if *x < 0.0 || (*x == 0.0 && x.is_sign_negative()) {
                    write!(f, "(-{:?})", -x)
                } else {
                    write!(f, "{:?}", x)
                }
            }
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Param(name, _) => f.write_str(name),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{})", a),
            Expr::Unary(op, a) => write!(f, "{}({})", op.name(), a),
            Expr::Binary(op, a, b) => write!(f, "({} {} {})", a, op.symbol(), b),
        }
    }
}

/// Parses `source`, accepting only the variables in `allowed_vars` and the
/// names in `params`.
pub fn parse_expr(source: &str, allowed_vars: &[&str], params: &BTreeMap<String, f64>) -> Result<Expr> {
    let mut vars = Vec::new();
    for name in allowed_vars {
        match Var::from_name(name) {
            Some(v) => vars.push(v),
            None => {
                return Err(Error::UnknownIdentifier {
                    name: (*name).to_string(),
                    offset: 0,
                })
            }
        }
    }
    let mut parser = Parser {
        src: source.as_bytes(),
        pos: 0,
        vars,
        params,
    };
    parser.skip_ws();
    if parser.pos == parser.src.len() {
        return Err(Error::EmptyExpression);
    }
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: Vec<Var>,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            digits(self);
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                // not an exponent after all (e.g. `2e` followed by something else)
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>().map(Expr::Num).map_err(|_| Error::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })
    }

    fn name(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        if let Some(op) = UnaryOp::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.syntax(&format!("expected `(` after `{name}`")));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.syntax("expected `)`"));
            }
            return Ok(Expr::Unary(op, Box::new(arg)));
        }
        if let Some(var) = Var::from_name(name) {
            if self.vars.contains(&var) {
                return Ok(Expr::Var(var));
            }
        }
        if let Some(&value) = self.params.get(name) {
            return Ok(Expr::Param(name.to_string(), value));
        }
        match name {
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "e" => Ok(Expr::Num(std::f64::consts::E)),
            _ => Err(Error::UnknownIdentifier {
                name: name.to_string(),
                offset: start,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    const TUV: &[&str] = &["t", "u", "v"];

    #[test]
    fn pendulum_expression_vanishes_at_equilibrium() {
        let e = parse_expr("c*v + a*sin(u)", TUV, &params(&[("c", 0.2), ("a", 1.0)])).unwrap();
        assert!(e.eval(0.0, PI, 0.0).abs() < 1e-12);
    }

    #[test]
    fn identity() {
        let e = parse_expr("v", TUV, &BTreeMap::new()).unwrap();
        assert_eq!(e.eval(0.0, 1.0, 2.0), 2.0);
    }

    #[test]
    fn unterminated_call_reports_offset() {
        let err = parse_expr("sin(", TUV, &BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            Error::Syntax {
                offset: 4,
                message: "unexpected end of input".into()
            }
        );
    }

    #[test]
    fn empty_and_unknown() {
        assert_eq!(parse_expr("   ", TUV, &BTreeMap::new()), Err(Error::EmptyExpression));
        match parse_expr("u + w", &["u"], &BTreeMap::new()) {
            Err(Error::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "w");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
        // `t` is a variable name but not allowed here
        assert!(matches!(
            parse_expr("t", &["u"], &BTreeMap::new()),
            Err(Error::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        let p = BTreeMap::new();
        let ev = |s: &str| parse_expr(s, TUV, &p).unwrap().eval(0.0, 0.0, 0.0);
        assert_eq!(ev("-2^2"), -4.0);
        assert_eq!(ev("2^3^2"), 512.0);
        assert_eq!(ev("2^-1"), 0.5);
        assert_eq!(ev("8/4/2"), 1.0);
        assert_eq!(ev("8-4-2"), 2.0);
        assert_eq!(ev("1+2*3"), 7.0);
        assert_eq!(ev("-3*-2"), 6.0);
        assert_eq!(ev("1.5e2 + 2E-1"), 150.2);
        assert!((ev("ln(e) + cos(pi)")).abs() < 1e-15);
        assert_eq!(ev("sqrt(abs(-16)) + tanh(0) + exp(0)"), 5.0);
    }

    #[test]
    fn syntax_errors() {
        let p = BTreeMap::new();
        assert!(matches!(parse_expr("1 +", TUV, &p), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse_expr("(1", TUV, &p), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("1 2", TUV, &p), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("sin 1", TUV, &p), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expr("3 $ 4", TUV, &p), Err(Error::Syntax { offset: 2, .. })));
    }

    #[test]
    fn dependency_flags() {
        let e = parse_expr("a*sin(u) + t", TUV, &params(&[("a", 1.0)])).unwrap();
        assert!(e.depends_on(Var::U) && e.depends_on(Var::T) && !e.depends_on(Var::V));
        assert_eq!(parse_expr("3*pi/2", &["t"], &BTreeMap::new()).unwrap().constant_value(), Some(1.5 * PI));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-1.0e3..1.0e3f64).prop_map(Expr::Num),
            prop_oneof![Just(Var::T), Just(Var::U), Just(Var::V)].prop_map(Expr::Var),
            Just(Expr::Param("c".into(), 0.2)),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                (
                    prop_oneof![
                        Just(UnaryOp::Neg),
                        Just(UnaryOp::Sin),
                        Just(UnaryOp::Cos),
                        Just(UnaryOp::Exp),
                        Just(UnaryOp::Ln),
                        Just(UnaryOp::Sqrt),
                        Just(UnaryOp::Abs),
                        Just(UnaryOp::Tanh)
                    ],
                    inner.clone()
                )
                    .prop_map(|(op, a)| Expr::Unary(op, Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner
                )
                    .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn pretty_print_round_trip_is_idempotent(e in arb_expr()) {
            let p = params(&[("c", 0.2)]);
            let once = e.to_string();
            let reparsed = parse_expr(&once, TUV, &p).unwrap();
            let twice = reparsed.to_string();
            prop_assert_eq!(&once, &twice);
            let a = e.eval(0.3, -0.7, 1.1);
            let b = reparsed.eval(0.3, -0.7, 1.1);
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }
}
