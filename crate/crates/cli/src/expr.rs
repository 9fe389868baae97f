//! Whitelisted scalar expressions with exact gradients.
//!
//! Grammar: numbers, the variables `x1..xn` and `p1..pd` (`x` and `p` when
//! the dimension is one), `+ - * /`, integer powers `^k`, and the functions
//! `sin`, `cos`, `exp`, `abs`, `max` and `min`. Gradients are propagated in
//! forward mode; `abs`, `max` and `min` use a one-sided derivative at kinks.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at character {}", self.message, self.position + 1)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Max,
    Min,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "max" => Func::Max,
            "min" => Func::Min,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Max | Func::Min => n >= 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Vec<Node>),
}

/// A compiled expression over the variables `(x, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    x_dim: usize,
    p_dim: usize,
    root: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(s: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i].1 == '+' || chars[i].1 == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].1.is_ascii_digit() {
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().map(|c| c.1).collect();
            let v = text.parse::<f64>().map_err(|_| ExprError {
                position: pos,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((pos, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            out.push((pos, Tok::Ident(chars[start..i].iter().map(|c| c.1).collect())));
        } else if "+-*/^(),".contains(c) {
            out.push((pos, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(ExprError {
                position: pos,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    x_dim: usize,
    p_dim: usize,
}

impl Parser {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            position: self.pos(),
            message: message.into(),
        })
    }

    fn peek_sym(&self, c: char) -> bool {
        matches!(self.toks.get(self.at), Some((_, Tok::Sym(s))) if *s == c)
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ExprError> {
        if self.peek_sym(c) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_sym('+') {
                self.at += 1;
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.peek_sym('-') {
                self.at += 1;
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_sym('*') {
                self.at += 1;
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek_sym('/') {
                self.at += 1;
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_sym('-') {
            self.at += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek_sym('+') {
            self.at += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if !self.peek_sym('^') {
            return Ok(base);
        }
        self.at += 1;
        let negative = if self.peek_sym('-') {
            self.at += 1;
            true
        } else {
            false
        };
        match self.toks.get(self.at) {
            Some((_, Tok::Num(k))) if k.fract() == 0.0 && k.abs() <= 64.0 => {
                let k = *k as i32;
                self.at += 1;
                Ok(Node::Pow(Box::new(base), if negative { -k } else { k }))
            }
            _ => self.err("exponents must be integer literals"),
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some((pos, tok)) = self.toks.get(self.at).cloned() else {
            return self.err("unexpected end of expression");
        };
        self.at += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::lookup(&name) {
                    self.expect_sym('(')?;
                    let mut args = vec![self.expr()?];
                    while self.peek_sym(',') {
                        self.at += 1;
                        args.push(self.expr()?);
                    }
                    self.expect_sym(')')?;
                    if !f.arity_ok(args.len()) {
                        return Err(ExprError {
                            position: pos,
                            message: format!("wrong number of arguments to '{name}'"),
                        });
                    }
                    return Ok(Node::Call(f, args));
                }
                self.variable(&name).map(Node::Var).ok_or(ExprError {
                    position: pos,
                    message: format!("unknown identifier '{name}'"),
                })
            }
            Tok::Sym(c) => Err(ExprError {
                position: pos,
                message: format!("unexpected '{c}'"),
            }),
        }
    }

    fn variable(&self, name: &str) -> Option<usize> {
        let (head, tail) = name.split_at(1);
        let (offset, dim) = match head {
            "x" => (0, self.x_dim),
            "p" => (self.x_dim, self.p_dim),
            _ => return None,
        };
        if tail.is_empty() {
            return (dim == 1).then_some(offset);
        }
        let k: usize = tail.parse().ok()?;
        (k >= 1 && k <= dim && !tail.starts_with('0')).then_some(offset + k - 1)
    }
}

/// Value and gradient with respect to the first `n` variables.
type Dual = (f64, Vec<f64>);

impl Expr {
    pub fn parse(source: &str, x_dim: usize, p_dim: usize) -> Result<Expr, ExprError> {
        let toks = tokenize(source)?;
        let mut parser = Parser {
            toks,
            at: 0,
            end: source.len(),
            x_dim,
            p_dim,
        };
        let root = parser.expr()?;
        if parser.at != parser.toks.len() {
            return parser.err("unexpected trailing input");
        }
        Ok(Expr {
            source: source.to_string(),
            x_dim,
            p_dim,
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Value at the concatenated variables `(x, p)`.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        eval(&self.root, vars)
    }

    /// Value and gradient with respect to `x`.
    pub fn eval_grad_x(&self, vars: &[f64]) -> (f64, Vec<f64>) {
        grad(&self.root, vars, self.x_dim)
    }

    /// Whether the expression mentions any `x` variable.
    pub fn depends_on_x(&self) -> bool {
        mentions(&self.root, 0, self.x_dim)
    }

    /// Whether every `x` occurrence enters affinely.
    pub fn affine_in_x(&self) -> bool {
        affine(&self.root, self.x_dim)
    }

    pub fn p_dim(&self) -> usize {
        self.p_dim
    }
}

fn eval(n: &Node, v: &[f64]) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(i) => v[*i],
        Node::Neg(a) => -eval(a, v),
        Node::Add(a, b) => eval(a, v) + eval(b, v),
        Node::Sub(a, b) => eval(a, v) - eval(b, v),
        Node::Mul(a, b) => eval(a, v) * eval(b, v),
        Node::Div(a, b) => eval(a, v) / eval(b, v),
        Node::Pow(a, k) => eval(a, v).powi(*k),
        Node::Call(f, args) => {
            let mut vals = args.iter().map(|a| eval(a, v));
            match f {
                Func::Sin => vals.next().unwrap().sin(),
                Func::Cos => vals.next().unwrap().cos(),
                Func::Exp => vals.next().unwrap().exp(),
                Func::Abs => vals.next().unwrap().abs(),
                Func::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                Func::Min => vals.fold(f64::INFINITY, f64::min),
            }
        }
    }
}

fn scale(g: &[f64], c: f64) -> Vec<f64> {
    g.iter().map(|d| d * c).collect()
}

fn combine(a: &[f64], ca: f64, b: &[f64], cb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
}

fn grad(n: &Node, v: &[f64], nx: usize) -> Dual {
    match n {
        Node::Num(c) => (*c, vec![0.0; nx]),
        Node::Var(i) => {
            let mut d = vec![0.0; nx];
            if *i < nx {
                d[*i] = 1.0;
            }
            (v[*i], d)
        }
        Node::Neg(a) => {
            let (x, d) = grad(a, v, nx);
            (-x, scale(&d, -1.0))
        }
        Node::Add(a, b) => {
            let ((x, dx), (y, dy)) = (grad(a, v, nx), grad(b, v, nx));
            (x + y, combine(&dx, 1.0, &dy, 1.0))
        }
        Node::Sub(a, b) => {
            let ((x, dx), (y, dy)) = (grad(a, v, nx), grad(b, v, nx));
            (x - y, combine(&dx, 1.0, &dy, -1.0))
        }
        Node::Mul(a, b) => {
            let ((x, dx), (y, dy)) = (grad(a, v, nx), grad(b, v, nx));
            (x * y, combine(&dx, y, &dy, x))
        }
        Node::Div(a, b) => {
            let ((x, dx), (y, dy)) = (grad(a, v, nx), grad(b, v, nx));
            (x / y, combine(&dx, 1.0 / y, &dy, -x / (y * y)))
        }
        Node::Pow(a, k) => {
            let (x, d) = grad(a, v, nx);
            let c = if *k == 0 { 0.0 } else { *k as f64 * x.powi(k - 1) };
            (x.powi(*k), scale(&d, c))
        }
        Node::Call(f, args) => match f {
            Func::Sin | Func::Cos | Func::Exp | Func::Abs => {
                let (x, d) = grad(&args[0], v, nx);
                let (val, slope) = match f {
                    Func::Sin => (x.sin(), x.cos()),
                    Func::Cos => (x.cos(), -x.sin()),
                    Func::Exp => (x.exp(), x.exp()),
                    _ => (x.abs(), if x < 0.0 { -1.0 } else { 1.0 }),
                };
                (val, scale(&d, slope))
            }
            Func::Max | Func::Min => {
                let mut best = grad(&args[0], v, nx);
                for a in &args[1..] {
                    let cand = grad(a, v, nx);
                    let better = if *f == Func::Max {
                        cand.0 > best.0
                    } else {
                        cand.0 < best.0
                    };
                    if better {
                        best = cand;
                    }
                }
                best
            }
        },
    }
}

fn mentions(n: &Node, lo: usize, hi: usize) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(i) => *i >= lo && *i < hi,
        Node::Neg(a) | Node::Pow(a, _) => mentions(a, lo, hi),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            mentions(a, lo, hi) || mentions(b, lo, hi)
        }
        Node::Call(_, args) => args.iter().any(|a| mentions(a, lo, hi)),
    }
}

fn affine(n: &Node, nx: usize) -> bool {
    let free = |a: &Node| !mentions(a, 0, nx);
    match n {
        Node::Num(_) | Node::Var(_) => true,
        Node::Neg(a) => affine(a, nx),
        Node::Add(a, b) | Node::Sub(a, b) => affine(a, nx) && affine(b, nx),
        Node::Mul(a, b) => (free(a) && affine(b, nx)) || (free(b) && affine(a, nx)),
        Node::Div(a, b) => free(b) && affine(a, nx),
        Node::Pow(a, k) => free(a) || (*k == 1 && affine(a, nx)),
        Node::Call(_, args) => args.iter().all(free),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("0.5*(x1^2 - x2^2)", 2, 0).unwrap();
        assert_eq!(e.eval(&[3.0, 1.0]), 4.0);
        let e = Expr::parse("max(-1, abs(p)*x)", 1, 1).unwrap();
        assert_eq!(e.eval(&[5.0, 0.1]), 0.5);
        assert_eq!(e.eval(&[-100.0, 0.1]), -1.0);
        let e = Expr::parse("2*x + sin(p)", 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 0.0);
        let e = Expr::parse("-x^2 + 1e-1*x - 2^-1", 1, 0).unwrap();
        assert!((e.eval(&[2.0]) - (-4.0 + 0.2 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn rejects_outside_the_whitelist() {
        assert!(Expr::parse("log(x)", 1, 0).is_err());
        assert!(Expr::parse("x3", 2, 0).is_err());
        assert!(Expr::parse("x", 2, 0).is_err());
        assert!(Expr::parse("x^0.5", 1, 0).is_err());
        assert!(Expr::parse("sin(x, x)", 1, 0).is_err());
        assert!(Expr::parse("x +", 1, 0).is_err());
        assert!(Expr::parse("(x", 1, 0).is_err());
        assert!(Expr::parse("x $ 2", 1, 0).is_err());
        let e = Expr::parse("x + y", 1, 0).unwrap_err();
        assert_eq!(e.position, 4);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let e = Expr::parse(
            "sin(x1)*x2^3 - exp(x1/x2) + cos(p1*x2) + max(x1, x2, p1) - min(x1, 0.3)",
            2,
            1,
        )
        .unwrap();
        let v = [0.4, 1.3, 0.7];
        let (val, g) = e.eval_grad_x(&v);
        assert_eq!(val, e.eval(&v));
        for i in 0..2 {
            let h = 1e-6;
            let mut a = v;
            let mut b = v;
            a[i] += h;
            b[i] -= h;
            let fd = (e.eval(&a) - e.eval(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn structure_queries() {
        assert!(Expr::parse("2*x1 - 3*p1*x2 + sin(p1)", 2, 1).unwrap().affine_in_x());
        assert!(!Expr::parse("x1*x2", 2, 0).unwrap().affine_in_x());
        assert!(!Expr::parse("abs(x)", 1, 0).unwrap().affine_in_x());
        assert!(!Expr::parse("p1 + 1", 1, 1).unwrap().depends_on_x());
        assert!(Expr::parse("(x - p)/2", 1, 1).unwrap().affine_in_x());
    }
}
