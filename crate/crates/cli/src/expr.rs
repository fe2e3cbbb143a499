//! Expression reader for operators, symbols and microdifferential operators.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' ['-'] int | '^' '(' ['-'] int ')')?
//! atom   := int | 'p' | x<j> | d<j> | D<j>[m,k] | xi<j> | xi<m>[k1,..,kd]
//!         | name '(' args ')' | '(' expr ')' | binding
//! ```
//!
//! `d<j>` is the derivative at the level of the expression (the level of any
//! `D<j>[m,k]` or localizer call in it, else the session level). `xi<j>`
//! alone is the level-0 symbol variable; with brackets the digit is a level.
//! Calls: `T(theta, m, M)`, `Tinv(theta, m, M)` and `Tinv2(theta, M, M')`
//! with optional `side=left|right` and `chart=affine|torus`; `Tinv` and
//! `Tinv2` default to the right presentation.

use std::collections::BTreeMap;
use std::fmt;

use microdiff::diffop::Side;
use microdiff::microloc::{micro_multiply, Chart, Localizer, MicroOp};
use microdiff::{DiffOp, Error, Poly, Result, SymbolPoly};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// What an expression evaluates to.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(BigRational),
    Coefficient(Poly),
    Diff(DiffOp),
    Symbol(SymbolPoly),
    Micro(MicroOp),
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Coefficient(_) => "coefficient",
            Value::Diff(_) => "diffop",
            Value::Symbol(_) => "symbol",
            Value::Micro(_) => "microop",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(c) => write!(f, "{}", microdiff::padic::rational_to_string(c)),
            Value::Coefficient(a) => write!(f, "{a}"),
            Value::Diff(d) => write!(f, "{d}"),
            Value::Symbol(s) => write!(f, "{s}"),
            Value::Micro(m) => write!(f, "{m}"),
        }
    }
}

/// Session data the reader needs.
#[derive(Debug, Clone)]
pub struct Context {
    pub p: u64,
    pub level: u32,
    pub nvars: Option<usize>,
    pub floor: i64,
    pub precision: Option<i64>,
    pub bindings: BTreeMap<String, Value>,
}

impl Context {
    pub fn new(p: u64) -> Self {
        Context {
            p,
            level: 0,
            nvars: None,
            floor: -12,
            precision: None,
            bindings: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(BigInt),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Eq,
}

type Span = (usize, usize);

fn syntax(span: Span, message: impl Into<String>) -> Error {
    Error::Parse {
        start: span.0,
        end: span.1,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, Span)>> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(src.len(), |c| c.0);
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' | '⟨' => Some(Tok::LBracket),
            ']' | '⟩' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            '+' => Some(Tok::Plus),
            '-' | '−' => Some(Tok::Minus),
            '*' | '·' | '×' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, (pos, end_of(i + 1))));
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].1.is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().map(|c| c.1).collect();
            out.push((Tok::Int(s.parse().unwrap()), (pos, end_of(i))));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            let mut s = String::new();
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                match chars[i].1 {
                    '∂' => s.push('d'),
                    'ξ' => s.push_str("xi"),
                    ch => s.push(ch),
                }
                i += 1;
            }
            let _ = start;
            out.push((Tok::Ident(s), (pos, end_of(i))));
            continue;
        }
        if c == '∂' || c == 'ξ' {
            // not alphabetic in every Unicode table; treat as identifier start
            let mut s = String::from(if c == '∂' { "d" } else { "xi" });
            i += 1;
            while i < chars.len() && chars[i].1.is_ascii_digit() {
                s.push(chars[i].1);
                i += 1;
            }
            out.push((Tok::Ident(s), (pos, end_of(i))));
            continue;
        }
        return Err(syntax((pos, end_of(i + 1)), format!("unexpected character '{c}'")));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Node {
    Int(BigInt),
    P,
    X(usize),
    D(usize),
    DLevel { j: usize, m: u32, k: u64 },
    Xi(usize),
    XiLevel { m: u32, k: Vec<u64> },
    Word(String),
    Binding(String),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i64),
    Call { name: String, args: Vec<(Option<String>, Expr)> },
}

#[derive(Debug, Clone)]
struct Expr {
    node: Node,
    span: Span,
}

struct Parser<'a> {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    len: usize,
    bindings: &'a BTreeMap<String, Value>,
}

fn index_suffix(s: &str, prefix: &str) -> Option<usize> {
    let rest = s.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn span_here(&self) -> Span {
        self.toks
            .get(self.pos)
            .map(|t| t.1)
            .unwrap_or((self.len, self.len))
    }

    fn next(&mut self) -> Option<(Tok, Span)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<Span> {
        let span = self.span_here();
        match self.next() {
            Some((got, s)) if got == t => Ok(s),
            _ => Err(syntax(span, format!("expected {what}"))),
        }
    }

    fn int(&mut self, what: &str) -> Result<(BigInt, Span)> {
        let span = self.span_here();
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.next() {
            Some((Tok::Int(n), s)) => Ok((if neg { -n } else { n }, (span.0, s.1))),
            _ => Err(syntax(span, format!("expected {what}"))),
        }
    }

    fn small(&mut self, what: &str) -> Result<(u64, Span)> {
        let (n, s) = self.int(what)?;
        let v = n
            .to_u64()
            .ok_or_else(|| syntax(s, format!("{what} must be a non-negative machine integer")))?;
        Ok((v, s))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => '+',
                Some(Tok::Minus) => '-',
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Expr {
                node: Node::Bin(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => '*',
                Some(Tok::Slash) => '/',
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Expr {
                node: Node::Bin(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            let start = self.span_here().0;
            self.pos += 1;
            let inner = self.unary()?;
            let span = (start, inner.span.1);
            return Ok(Expr {
                node: Node::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let paren = self.peek() == Some(&Tok::LParen);
        if paren {
            self.pos += 1;
        }
        let (e, s) = self.int("an integer exponent")?;
        let mut end = s.1;
        if paren {
            end = self.expect(Tok::RParen, "')'")?.1;
        }
        let e = e
            .to_i64()
            .ok_or_else(|| syntax(s, "exponent out of range"))?;
        let span = (base.span.0, end);
        Ok(Expr {
            node: Node::Pow(Box::new(base), e),
            span,
        })
    }

    fn bracket_list(&mut self) -> Result<(Vec<u64>, usize)> {
        self.expect(Tok::LBracket, "'['")?;
        let mut v = vec![self.small("an index")?.0];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            v.push(self.small("an index")?.0);
        }
        let end = self.expect(Tok::RBracket, "']'")?.1;
        Ok((v, end))
    }

    fn atom(&mut self) -> Result<Expr> {
        let span = self.span_here();
        let Some((tok, s)) = self.next() else {
            return Err(syntax(span, "unexpected end of expression"));
        };
        let leaf = |node| Ok(Expr { node, span: s });
        match tok {
            Tok::Int(n) => leaf(Node::Int(n)),
            Tok::LParen => {
                let inner = self.expr()?;
                let end = self.expect(Tok::RParen, "')'")?.1;
                Ok(Expr {
                    node: inner.node,
                    span: (s.0, end),
                })
            }
            Tok::Ident(name) => {
                if self.bindings.contains_key(&name) {
                    return leaf(Node::Binding(name));
                }
                if self.peek() == Some(&Tok::LParen) {
                    return self.call(name, s);
                }
                if name == "p" {
                    return leaf(Node::P);
                }
                if let Some(m) = index_suffix(&name, "xi") {
                    if self.peek() == Some(&Tok::LBracket) {
                        let (k, end) = self.bracket_list()?;
                        return Ok(Expr {
                            node: Node::XiLevel { m: m as u32, k },
                            span: (s.0, end),
                        });
                    }
                    return var(m, s, Node::Xi);
                }
                if let Some(j) = index_suffix(&name, "x") {
                    return var(j, s, Node::X);
                }
                if let Some(j) = index_suffix(&name, "d") {
                    return var(j, s, Node::D);
                }
                if let Some(j) = index_suffix(&name, "D") {
                    if j == 0 {
                        return Err(syntax(s, "variables are numbered from 1"));
                    }
                    let (v, end) = self.bracket_list()?;
                    if v.len() != 2 {
                        return Err(syntax((s.0, end), "expected D<j>[m,k]"));
                    }
                    return Ok(Expr {
                        node: Node::DLevel {
                            j: j - 1,
                            m: v[0] as u32,
                            k: v[1],
                        },
                        span: (s.0, end),
                    });
                }
                Err(syntax(s, format!("unknown name '{name}'")))
            }
            _ => Err(syntax(s, "expected a term")),
        }
    }

    fn call(&mut self, name: String, s: Span) -> Result<Expr> {
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                let mut key = None;
                if let (Some(Tok::Ident(k)), Some(Tok::Eq)) =
                    (self.peek().cloned(), self.toks.get(self.pos + 1).map(|t| t.0.clone()))
                {
                    key = Some(k);
                    self.pos += 2;
                }
                let value = match self.peek().cloned() {
                    Some(Tok::Ident(w))
                        if matches!(w.as_str(), "left" | "right" | "affine" | "torus") =>
                    {
                        let sp = self.span_here();
                        self.pos += 1;
                        Expr {
                            node: Node::Word(w),
                            span: sp,
                        }
                    }
                    _ => self.expr()?,
                };
                args.push((key, value));
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    continue;
                }
                break;
            }
        }
        let end = self.expect(Tok::RParen, "')' or ','")?.1;
        Ok(Expr {
            node: Node::Call { name, args },
            span: (s.0, end),
        })
    }
}

fn var(j: usize, s: Span, f: fn(usize) -> Node) -> Result<Expr> {
    if j == 0 {
        return Err(syntax(s, "variables are numbered from 1"));
    }
    Ok(Expr { node: f(j - 1), span: s })
}

/// Levels and dimension implied by the expression.
fn scan(e: &Expr, levels: &mut Vec<(u32, Span)>, nvars: &mut usize) -> Result<()> {
    match &e.node {
        Node::X(j) | Node::D(j) | Node::Xi(j) => *nvars = (*nvars).max(j + 1),
        Node::DLevel { j, m, .. } => {
            *nvars = (*nvars).max(j + 1);
            levels.push((*m, e.span));
        }
        Node::XiLevel { k, .. } => *nvars = (*nvars).max(k.len()),
        Node::Neg(a) | Node::Pow(a, _) => scan(a, levels, nvars)?,
        Node::Bin(_, a, b) => {
            scan(a, levels, nvars)?;
            scan(b, levels, nvars)?;
        }
        Node::Call { name, args } => {
            for (_, a) in args {
                // the symbol argument is level 0 by construction
                let mut inner = Vec::new();
                scan(a, &mut inner, nvars)?;
            }
            if let Some(m) = call_level(name, args)? {
                levels.push((m, e.span));
            }
        }
        _ => {}
    }
    Ok(())
}

fn int_arg(e: &Expr) -> Result<u32> {
    match &e.node {
        Node::Int(n) => n
            .to_u32()
            .ok_or_else(|| syntax(e.span, "level out of range")),
        _ => Err(syntax(e.span, "expected a level")),
    }
}

/// `(m, M)` of a localizer call, from positional or named arguments.
fn call_levels(name: &str, args: &[(Option<String>, Expr)]) -> Result<(Option<u32>, Option<u32>)> {
    let mut m = None;
    let mut big = None;
    let mut positional = 0;
    for (key, a) in args {
        match key.as_deref() {
            Some("m") => m = Some(int_arg(a)?),
            Some("M") | Some("mprime") => big = Some(int_arg(a)?),
            Some("side") | Some("chart") => {}
            Some(other) => return Err(syntax(a.span, format!("unknown argument '{other}' to {name}"))),
            None => {
                match positional {
                    0 => {}
                    1 => m = Some(int_arg(a)?),
                    2 => big = Some(int_arg(a)?),
                    _ => return Err(syntax(a.span, format!("too many arguments to {name}"))),
                }
                positional += 1;
            }
        }
    }
    Ok((m, big))
}

fn call_level(name: &str, args: &[(Option<String>, Expr)]) -> Result<Option<u32>> {
    match name {
        "T" | "Tinv" | "Tinv2" => Ok(call_levels(name, args)?.0),
        _ => Ok(None),
    }
}

struct Eval<'a> {
    ctx: &'a Context,
    level: u32,
    nvars: usize,
}

impl<'a> Eval<'a> {
    fn p(&self) -> u64 {
        self.ctx.p
    }

    fn eval(&self, e: &Expr) -> Result<Value> {
        let n = self.nvars;
        match &e.node {
            Node::Int(v) => Ok(Value::Scalar(BigRational::from_integer(v.clone()))),
            Node::P => Ok(Value::Scalar(BigRational::from_integer(BigInt::from(self.p())))),
            Node::X(j) => Ok(Value::Coefficient(Poly::var(n, *j))),
            Node::D(j) => Ok(Value::Diff(DiffOp::d(self.p(), self.level, n, *j))),
            Node::DLevel { j, m, k } => {
                let mut idx = vec![0; n];
                idx[*j] = *k;
                Ok(Value::Diff(DiffOp::basis(self.p(), *m, n, idx)))
            }
            Node::Xi(j) => {
                let mut k = vec![0; n];
                k[*j] = 1;
                Ok(Value::Symbol(SymbolPoly::power_monomial(self.p(), &k, Poly::one(n))))
            }
            Node::XiLevel { m, k } => {
                let mut kk = k.clone();
                kk.resize(n, 0);
                Ok(Value::Symbol(SymbolPoly::divided_power(
                    self.p(),
                    *m,
                    &kk,
                    Poly::one(n),
                    microdiff::CoeffRing::Rational,
                )))
            }
            Node::Word(w) => Err(syntax(e.span, format!("'{w}' is only valid as a call argument"))),
            Node::Binding(name) => Ok(self.ctx.bindings[name].clone()),
            Node::Neg(a) => Ok(neg(self.eval(a)?)),
            Node::Bin(op, a, b) => {
                let (va, vb) = (self.eval(a)?, self.eval(b)?);
                let r = match op {
                    '+' => self.add(va, vb, false),
                    '-' => self.add(va, vb, true),
                    '*' => self.mul(va, vb),
                    _ => self.div(va, vb, b.span),
                };
                r.map_err(|err| spanned(err, e.span))
            }
            Node::Pow(a, k) => {
                let v = self.eval(a)?;
                self.pow(v, *k, e.span)
            }
            Node::Call { name, args } => self.call(name, args, e.span),
        }
    }

    fn promote_coefficient(&self, v: Value) -> Value {
        match v {
            Value::Scalar(c) => Value::Coefficient(Poly::constant(self.nvars, c)),
            other => other,
        }
    }

    fn to_diff(&self, v: Value, level: u32) -> Value {
        match self.promote_coefficient(v) {
            Value::Coefficient(a) => Value::Diff(DiffOp::coefficient(self.p(), level, a)),
            other => other,
        }
    }

    fn to_micro(&self, v: Value, like: &MicroOp) -> Result<MicroOp> {
        match self.to_diff(v, like.level()) {
            Value::Diff(d) => MicroOp::from_diffop(&d, like.localizer(), like.side(), like.floor()),
            Value::Micro(m) => Ok(m),
            other => Err(Error::InvalidArgument(format!(
                "cannot combine a {} with a microdifferential operator",
                other.kind()
            ))),
        }
    }

    fn to_symbol(&self, v: Value, like: &SymbolPoly) -> Result<SymbolPoly> {
        match self.promote_coefficient(v) {
            Value::Coefficient(a) => Ok(SymbolPoly::from_coefficient(self.p(), like.level(), a, like.ring())),
            Value::Symbol(s) => Ok(s),
            other => Err(Error::InvalidArgument(format!(
                "cannot combine a {} with a symbol",
                other.kind()
            ))),
        }
    }

    fn rank(v: &Value) -> u8 {
        match v {
            Value::Scalar(_) => 0,
            Value::Coefficient(_) => 1,
            Value::Diff(_) => 2,
            Value::Symbol(_) => 3,
            Value::Micro(_) => 4,
        }
    }

    fn add(&self, a: Value, b: Value, subtract: bool) -> Result<Value> {
        let b = if subtract { neg(b) } else { b };
        let (hi, lo) = if Self::rank(&a) >= Self::rank(&b) { (a, b) } else { (b, a) };
        Ok(match hi {
            Value::Scalar(x) => match lo {
                Value::Scalar(y) => Value::Scalar(x + y),
                _ => unreachable!(),
            },
            Value::Coefficient(x) => match self.promote_coefficient(lo) {
                Value::Coefficient(y) => Value::Coefficient(x.add(&y)),
                _ => unreachable!(),
            },
            Value::Diff(x) => match self.to_diff(lo, x.level()) {
                Value::Diff(y) => Value::Diff(x.add(&y)?),
                _ => unreachable!(),
            },
            Value::Symbol(x) => {
                let y = self.to_symbol(lo, &x)?;
                Value::Symbol(x.add(&y)?)
            }
            Value::Micro(x) => {
                let y = self.to_micro(lo, &x)?;
                Value::Micro(x.add(&y)?)
            }
        })
    }

    fn mul(&self, a: Value, b: Value) -> Result<Value> {
        use Value::*;
        Ok(match (a, b) {
            (Scalar(x), Scalar(y)) => Scalar(x * y),
            (Scalar(c), v) | (v, Scalar(c)) if !matches!(v, Micro(_) | Diff(_)) => scale(v, &c),
            (Micro(x), y) => {
                let y = self.to_micro(y, &x)?;
                Micro(micro_multiply(&x, &y)?)
            }
            (x, Micro(y)) => {
                let x = self.to_micro(x, &y)?;
                Micro(micro_multiply(&x, &y)?)
            }
            (Symbol(x), y) => {
                let y = self.to_symbol(y, &x)?;
                Symbol(x.multiply(&y)?)
            }
            (x, Symbol(y)) => {
                let x = self.to_symbol(x, &y)?;
                Symbol(x.multiply(&y)?)
            }
            (Coefficient(x), Coefficient(y)) => Coefficient(x.mul(&y)),
            (x, y) => {
                let level = match (&x, &y) {
                    (Diff(d), _) | (_, Diff(d)) => d.level(),
                    _ => self.level,
                };
                match (self.to_diff(x, level), self.to_diff(y, level)) {
                    (Diff(x), Diff(y)) => Diff(x.multiply(&y)?),
                    _ => unreachable!(),
                }
            }
        })
    }

    fn div(&self, a: Value, b: Value, span: Span) -> Result<Value> {
        let Value::Scalar(c) = b else {
            return Err(syntax(span, "only division by a scalar is supported"));
        };
        if c.is_zero() {
            return Err(syntax(span, "division by zero"));
        }
        Ok(scale(a, &c.recip()))
    }

    fn pow(&self, v: Value, k: i64, span: Span) -> Result<Value> {
        if k < 0 {
            return match v {
                Value::Scalar(c) if !c.is_zero() => Ok(Value::Scalar(num_traits::pow(c.recip(), k.unsigned_abs() as usize))),
                Value::Coefficient(a) => match a.as_monomial() {
                    Some((e, c)) => {
                        let inv = Poly::monomial(a.nvars(), e.iter().map(|x| -x).collect(), c.recip());
                        Ok(Value::Coefficient(inv.pow(k.unsigned_abs())))
                    }
                    None => Err(syntax(span, "only monomials have negative powers")),
                },
                other => Err(syntax(
                    span,
                    format!("negative power of a {}; use invert or Tinv", other.kind()),
                )),
            };
        }
        let k = k as u64;
        Ok(match v {
            Value::Scalar(c) => Value::Scalar(num_traits::pow(c, k as usize)),
            Value::Coefficient(a) => Value::Coefficient(a.pow(k)),
            Value::Diff(d) => Value::Diff(d.pow(k)?),
            Value::Symbol(s) => Value::Symbol(s.pow(k)),
            Value::Micro(m) => {
                let mut acc = MicroOp::one(m.localizer(), m.side(), m.floor());
                for _ in 0..k {
                    acc = micro_multiply(&acc, &m)?;
                }
                Value::Micro(acc)
            }
        })
    }

    fn call(&self, name: &str, args: &[(Option<String>, Expr)], span: Span) -> Result<Value> {
        if !matches!(name, "T" | "Tinv" | "Tinv2") {
            return Err(syntax(span, format!("unknown function '{name}'")));
        }
        let theta_expr = args
            .iter()
            .find(|(k, _)| k.is_none() || k.as_deref() == Some("theta"))
            .map(|(_, e)| e)
            .ok_or_else(|| syntax(span, format!("{name} needs a symbol argument")))?;
        let theta = match self.eval(theta_expr)? {
            Value::Symbol(s) => s,
            other => {
                return Err(syntax(
                    theta_expr.span,
                    format!("expected a symbol such as xi1, got a {}", other.kind()),
                ))
            }
        };
        let (m, big) = call_levels(name, args)?;
        let m = m.unwrap_or(self.ctx.level);
        let big = big.unwrap_or(m);
        let mut side = if name == "T" { Side::Left } else { Side::Right };
        let mut chart = None;
        for (key, a) in args {
            if let Node::Word(w) = &a.node {
                match (key.as_deref(), w.as_str()) {
                    (Some("side") | None, "left") => side = Side::Left,
                    (Some("side") | None, "right") => side = Side::Right,
                    (Some("chart") | None, "affine") => chart = Some(Chart::Affine),
                    (Some("chart") | None, "torus") => chart = Some(Chart::Torus),
                    _ => return Err(syntax(a.span, format!("'{w}' does not fit here"))),
                }
            }
        }
        let chart = chart.unwrap_or_else(|| {
            let constant = theta.to_k_basis().values().all(|c| c.is_constant());
            if constant {
                Chart::Affine
            } else {
                Chart::Torus
            }
        });
        let loc = Localizer::new(&theta, m, big, chart).map_err(|e| spanned(e, span))?;
        let floor = self.ctx.floor;
        let op = if name == "T" {
            MicroOp::theta_tilde(&loc, side, floor)?
        } else {
            MicroOp::from_terms(
                &loc,
                side,
                [((vec![0; loc.nvars()], 1), Poly::one(loc.nvars()))],
                floor,
            )?
        };
        Ok(Value::Micro(match self.ctx.precision {
            Some(n) => op.with_precision(Some(n)),
            None => op,
        }))
    }
}

fn spanned(e: Error, span: Span) -> Error {
    match e {
        Error::InvalidArgument(message) => syntax(span, message),
        other => other,
    }
}

fn neg(v: Value) -> Value {
    scale(v, &-BigRational::one())
}

fn scale(v: Value, c: &BigRational) -> Value {
    match v {
        Value::Scalar(x) => Value::Scalar(x * c),
        Value::Coefficient(a) => Value::Coefficient(a.scale(c)),
        Value::Diff(d) => Value::Diff(d.scale(c)),
        Value::Symbol(s) => Value::Symbol(s.scale(c)),
        Value::Micro(m) => Value::Micro(m.scale(c)),
    }
}

/// Parse and evaluate `src`.
pub fn parse(src: &str, ctx: &Context) -> Result<Value> {
    let toks = tokenize(src)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        len: src.len(),
        bindings: &ctx.bindings,
    };
    let e = parser.expr()?;
    if parser.pos < parser.toks.len() {
        return Err(syntax(parser.span_here(), "unexpected input after expression"));
    }
    let mut levels = Vec::new();
    let mut nvars = 1;
    scan(&e, &mut levels, &mut nvars)?;
    for v in ctx.bindings.values() {
        nvars = nvars.max(value_nvars(v));
    }
    if let Some(d) = ctx.nvars {
        if d < nvars {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: nvars,
            });
        }
        nvars = d;
    }
    let level = match levels.first() {
        None => ctx.level,
        Some(&(m, _)) => {
            if let Some(&(m2, s)) = levels.iter().find(|(l, _)| *l != m) {
                return Err(Error::LevelMismatch(format!(
                    "levels {m} and {m2} mixed in one expression (at {}..{})",
                    s.0, s.1
                )));
            }
            m
        }
    };
    let ev = Eval {
        ctx,
        level,
        nvars,
    };
    let v = ev.eval(&e)?;
    Ok(match (v, ctx.precision) {
        (Value::Diff(d), Some(n)) if n >= 0 => Value::Diff(d.with_precision(Some(n as u32))?),
        (v, _) => v,
    })
}

fn value_nvars(v: &Value) -> usize {
    match v {
        Value::Scalar(_) => 1,
        Value::Coefficient(a) => a.nvars(),
        Value::Diff(d) => d.nvars(),
        Value::Symbol(s) => s.nvars(),
        Value::Micro(m) => m.localizer().nvars(),
    }
}

/// Scalar value of an integer-like expression, for flags such as `--lambda`.
pub fn parse_scalar(src: &str, ctx: &Context) -> Result<BigRational> {
    match parse(src, ctx)? {
        Value::Scalar(c) => Ok(c),
        other => Err(Error::InvalidArgument(format!("expected a scalar, got a {}", other.kind()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(p: u64) -> Context {
        Context::new(p)
    }

    fn q(a: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(a))
    }

    #[test]
    fn operators() {
        let v = parse("d1 - x1", &ctx(2)).unwrap();
        assert_eq!(v.to_string(), "d1 - x1");
        let v = parse("D1[1,2]*D1[1,2]", &ctx(2)).unwrap();
        let Value::Diff(d) = v else { panic!() };
        assert_eq!(d, DiffOp::basis(2, 1, 1, vec![4]).scale(&q(3)));
        let v = parse("(x1 + 1)*d1^2 - 3/2*x2", &ctx(3)).unwrap();
        assert_eq!(v.to_string(), "(x1 + 1)*d1^2 - 3/2*x2");
    }

    #[test]
    fn display_parses_back() {
        for src in ["x1*D1[1,3] + D1[1,1] - 2", "x1^(-2)*d1 + 1/3", "p^2*d1*d2 - x1*x2"] {
            let v = parse(src, &ctx(3)).unwrap();
            let again = parse(&v.to_string(), &ctx(3)).unwrap();
            assert_eq!(v, again, "{src}");
        }
    }

    #[test]
    fn symbols() {
        let v = parse("2*xi1[2]", &ctx(2)).unwrap();
        assert_eq!(v.to_string(), "2*xi1[2]");
        let v = parse("xi1*xi1", &ctx(2)).unwrap();
        assert_eq!(v.to_string(), "xi0[2]");
        assert_eq!(parse("xi0[2]", &ctx(2)).unwrap(), v);
        // at level 1, xi<1><2> * xi<1><2> = 3 xi<1><4>
        let v = parse("xi1[2]*xi1[2]", &ctx(2)).unwrap();
        assert_eq!(v.to_string(), "3*xi1[4]");
    }

    #[test]
    fn micro_construction() {
        let v = parse("Tinv(xi1, m=0) * x1", &ctx(2)).unwrap();
        let Value::Micro(m) = v else { panic!() };
        assert_eq!(m.side(), Side::Right);
        assert_eq!(m.to_string(), "T^-1*x1");
        let t = parse("Tinv2(xi1,1,2)", &ctx(2)).unwrap();
        let Value::Micro(t) = t else { panic!() };
        assert_eq!((t.level(), t.localizer().localizer_level()), (1, 2));
        let prod = parse("T(xi1, m=0) * Tinv(xi1, m=0, side=left)", &ctx(2)).unwrap();
        assert_eq!(prod.to_string(), "1");
    }

    #[test]
    fn unicode_input() {
        let a = parse("∂1 − x1", &ctx(2)).unwrap();
        let b = parse("d1 - x1", &ctx(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse("2·ξ1", &ctx(2)).unwrap(), parse("2*xi1", &ctx(2)).unwrap());
    }

    #[test]
    fn errors_carry_spans() {
        match parse("d1 + $", &ctx(2)) {
            Err(Error::Parse { start, end, .. }) => assert_eq!((start, end), (5, 6)),
            other => panic!("{other:?}"),
        }
        match parse("d1 * (x1", &ctx(2)) {
            Err(Error::Parse { start, .. }) => assert_eq!(start, 8),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("D1[1,2] + D1[2,4]", &ctx(2)), Err(Error::LevelMismatch(_))));
        assert!(matches!(parse("Tinv(1 + 0*xi1, m=0)", &ctx(2)), Err(Error::DegreeZeroLocalizer) | Err(Error::NotHomogeneous)));
        assert!(matches!(parse("Tinv(xi1^0, m=0)", &ctx(2)), Err(Error::DegreeZeroLocalizer)));
    }
}
