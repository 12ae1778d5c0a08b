//! Scalar force-law expressions.
//!
//! An [`Expr`] is an immutable, reference-counted tree. Trees built by
//! [`Expr::diff`] share untouched subtrees with their source, so repeated
//! differentiation stays cheap. Evaluation comes in two flavours: [`Expr::eval`]
//! walks the tree against a name binding, while [`Compiled`] flattens the tree
//! into a stack tape over numbered slots for the hot loops of the integrator.
//! Both routes call the same scalar kernels and agree bit for bit.

mod diff;
mod parser;
mod tape;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

pub use parser::parse;
pub use tape::Compiled;

/// Errors raised while parsing or evaluating an expression.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    /// `offset` is the 1-based character column where parsing stopped.
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared identifier `{name}` at offset {offset}")]
    Undeclared { name: String, offset: usize },
    #[error("no value bound for `{0}`")]
    Unbound(String),
    #[error("domain error: {kind} in `{at}`")]
    Domain { kind: DomainKind, at: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    PowNegativeBase,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::LogNonPositive => "logarithm of a non-positive number",
            DomainKind::SqrtNegative => "square root of a negative number",
            DomainKind::PowNegativeBase => "non-integer power of a negative number",
        })
    }
}

/// Elementary functions understood by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    /// Derivative of `abs`; `sign(0) = 0`.
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    pub(crate) fn apply(self, x: f64) -> Result<f64, DomainKind> {
        Ok(match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Ln => {
                if x <= 0.0 {
                    return Err(DomainKind::LogNonPositive);
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(DomainKind::SqrtNegative);
                }
                x.sqrt()
            }
            Func::Abs => x.abs(),
            Func::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
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

    pub(crate) fn apply(self, a: f64, b: f64) -> Result<f64, DomainKind> {
        match self {
            BinOp::Add => Ok(a + b),
            BinOp::Sub => Ok(a - b),
            BinOp::Mul => Ok(a * b),
            BinOp::Div => {
                if b == 0.0 {
                    Err(DomainKind::DivisionByZero)
                } else {
                    Ok(a / b)
                }
            }
            BinOp::Pow => pow_value(a, b),
        }
    }
}

/// Largest exponent magnitude routed through repeated multiplication.
const MAX_INT_EXPONENT: f64 = 1024.0;

/// `a^n` by binary exponentiation; valid for negative bases.
pub(crate) fn powi_exact(a: f64, n: i64) -> Result<f64, DomainKind> {
    if n < 0 {
        if a == 0.0 {
            return Err(DomainKind::DivisionByZero);
        }
        return Ok(1.0 / powi_exact(a, -n)?);
    }
    let mut base = a;
    let mut e = n as u64;
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        e >>= 1;
        if e > 0 {
            base *= base;
        }
    }
    Ok(acc)
}

pub(crate) fn pow_value(a: f64, b: f64) -> Result<f64, DomainKind> {
    if b.fract() == 0.0 && b.abs() <= MAX_INT_EXPONENT {
        return powi_exact(a, b as i64);
    }
    if a > 0.0 {
        Ok((b * a.ln()).exp())
    } else if a == 0.0 && b > 0.0 {
        Ok(0.0)
    } else if a == 0.0 {
        Err(DomainKind::DivisionByZero)
    } else {
        Err(DomainKind::PowNegativeBase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Arc<str>),
    Neg(Expr),
    Bin(BinOp, Expr, Expr),
    Call(Func, Expr),
}

/// A shared expression tree.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn num(v: f64) -> Expr {
        Expr(Arc::new(Node::Num(v)))
    }

    pub fn var(name: &str) -> Expr {
        Expr(Arc::new(Node::Var(Arc::from(name))))
    }

    pub fn zero() -> Expr {
        Expr::num(0.0)
    }

    pub fn one() -> Expr {
        Expr::num(1.0)
    }

    /// Raw constructors; no folding.
    pub fn raw_neg(a: Expr) -> Expr {
        Expr(Arc::new(Node::Neg(a)))
    }

    pub fn raw_bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr(Arc::new(Node::Bin(op, a, b)))
    }

    pub fn raw_call(f: Func, a: Expr) -> Expr {
        Expr(Arc::new(Node::Call(f, a)))
    }

    pub fn as_num(&self) -> Option<f64> {
        match *self.0 {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_num() == Some(1.0)
    }

    // Folding constructors. These implement the only simplifications the
    // crate performs: literal arithmetic and the 0/1 identities.

    pub fn neg(a: Expr) -> Expr {
        match a.node() {
            Node::Num(v) => Expr::num(-v),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::raw_neg(a),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            return Expr::num(x + y);
        }
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        Expr::raw_bin(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            return Expr::num(x - y);
        }
        if b.is_zero() {
            return a;
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        Expr::raw_bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            return Expr::num(x * y);
        }
        if a.is_zero() || b.is_zero() {
            return Expr::zero();
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        if a.as_num() == Some(-1.0) {
            return Expr::neg(b);
        }
        if b.as_num() == Some(-1.0) {
            return Expr::neg(a);
        }
        Expr::raw_bin(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            if y != 0.0 {
                return Expr::num(x / y);
            }
        }
        if b.is_one() {
            return a;
        }
        if a.is_zero() && b.as_num().is_none_or(|y| y != 0.0) {
            return Expr::zero();
        }
        Expr::raw_bin(BinOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            if let Ok(v) = pow_value(x, y) {
                if v.is_finite() {
                    return Expr::num(v);
                }
            }
        }
        match b.as_num() {
            Some(0.0) => Expr::one(),
            Some(1.0) => a,
            _ => Expr::raw_bin(BinOp::Pow, a, b),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Some(x) = a.as_num() {
            if let Ok(v) = f.apply(x) {
                if v.is_finite() {
                    return Expr::num(v);
                }
            }
        }
        Expr::raw_call(f, a)
    }

    pub fn scale(c: f64, a: Expr) -> Expr {
        Expr::mul(Expr::num(c), a)
    }

    /// Sum of the terms with folding; the empty sum is zero.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Rebuild the tree through the folding constructors.
    pub fn fold(&self) -> Expr {
        match self.node() {
            Node::Num(_) | Node::Var(_) => self.clone(),
            Node::Neg(a) => Expr::neg(a.fold()),
            Node::Bin(op, a, b) => Expr::bin(*op, a.fold(), b.fold()),
            Node::Call(f, a) => Expr::call(*f, a.fold()),
        }
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        match op {
            BinOp::Add => Expr::add(a, b),
            BinOp::Sub => Expr::sub(a, b),
            BinOp::Mul => Expr::mul(a, b),
            BinOp::Div => Expr::div(a, b),
            BinOp::Pow => Expr::pow(a, b),
        }
    }

    /// Evaluate against a name binding.
    pub fn eval(&self, binding: &HashMap<String, f64>) -> Result<f64, ExprError> {
        self.eval_with(&|name| binding.get(name).copied())
    }

    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        let domain = |kind, e: &Expr| ExprError::Domain {
            kind,
            at: e.to_string(),
        };
        match self.node() {
            Node::Num(v) => Ok(*v),
            Node::Var(name) => lookup(name).ok_or_else(|| ExprError::Unbound(name.to_string())),
            Node::Neg(a) => Ok(-a.eval_with(lookup)?),
            Node::Bin(op, a, b) => {
                let x = a.eval_with(lookup)?;
                let y = b.eval_with(lookup)?;
                op.apply(x, y).map_err(|k| domain(k, self))
            }
            Node::Call(f, a) => {
                let x = a.eval_with(lookup)?;
                f.apply(x).map_err(|k| domain(k, self))
            }
        }
    }

    /// Names referenced anywhere in the tree.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self.node() {
            Node::Num(_) => {}
            Node::Var(n) => {
                out.insert(n.to_string());
            }
            Node::Neg(a) | Node::Call(_, a) => a.collect_vars(out),
            Node::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on(&self, name: &str) -> bool {
        match self.node() {
            Node::Num(_) => false,
            Node::Var(n) => &**n == name,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on(name),
            Node::Bin(_, a, b) => a.depends_on(name) || b.depends_on(name),
        }
    }

    /// Replace variables by expressions, folding on the way back up.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        match self.node() {
            Node::Num(_) => self.clone(),
            Node::Var(n) => map.get(&**n).cloned().unwrap_or_else(|| self.clone()),
            Node::Neg(a) => Expr::neg(a.substitute(map)),
            Node::Bin(op, a, b) => Expr::bin(*op, a.substitute(map), b.substitute(map)),
            Node::Call(f, a) => Expr::call(*f, a.substitute(map)),
        }
    }

    /// Replace named parameters by their values and fold.
    pub fn bind_constants(&self, constants: &BTreeMap<String, f64>) -> Expr {
        let map = constants
            .iter()
            .map(|(k, v)| (k.clone(), Expr::num(*v)))
            .collect();
        self.substitute(&map)
    }

    /// Number of nodes counted as a tree (shared subtrees counted once per use).
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Num(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Call(_, a) => 1 + a.size(),
            Node::Bin(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Node::Num(_) | Node::Var(_) | Node::Call(..) => 5,
            Node::Neg(_) => 3,
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Bin(BinOp::Pow, ..) => 4,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(n) => f.write_str(n),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_operand(f, a, 3)
            }
            Node::Bin(op, a, b) => {
                let (lp, rp) = match op {
                    BinOp::Add => (1, 2),
                    BinOp::Sub => (1, 2),
                    BinOp::Mul | BinOp::Div => (2, 3),
                    BinOp::Pow => (5, 5),
                };
                write_operand(f, a, lp)?;
                match op {
                    BinOp::Pow => f.write_str("^")?,
                    _ => write!(f, " {} ", op.symbol())?,
                }
                write_operand(f, b, rp)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
