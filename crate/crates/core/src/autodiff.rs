//! Tape-based reverse-mode differentiation for scalar computations.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`] holding the
//! parent indices and the local partial derivatives. Nodes are appended in
//! evaluation order, so the tape is topologically sorted and a single
//! reverse sweep visits each node once.
//!
//! Constants never touch the tape: a `Var` without a tape is a plain value,
//! and operations whose operands are all constants produce constants.
//!
//! ```
//! use perfcrd_core::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! let grads = tape.backward(&[(y, 1.0)]);
//! assert_eq!(grads.wrt(&x), 6.0);
//! ```

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Scalar};

/// Primitive operations recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Affine,
    Sigmoid,
    Tanh,
    Ln,
    Exp,
    Clamp,
    PoissonBinomialCell,
    Bayes,
    Dot,
    Sum,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Input => "input",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Neg => "neg",
            Primitive::Affine => "affine",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Ln => "ln",
            Primitive::Exp => "exp",
            Primitive::Clamp => "clamp",
            Primitive::PoissonBinomialCell => "pb-cell",
            Primitive::Bayes => "bayes",
            Primitive::Dot => "dot",
            Primitive::Sum => "sum",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        use Primitive::*;
        [Input, Add, Sub, Mul, Div, Neg, Affine, Sigmoid, Tanh, Ln, Exp, Clamp, PoissonBinomialCell, Bayes, Dot, Sum]
            .into_iter()
            .find(|p| p.name() == name)
    }
}

#[derive(Default)]
struct Inner {
    ops: Vec<Primitive>,
    /// `edge_start[i]..edge_start[i + 1]` indexes node `i`'s parents.
    edge_start: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    non_finite: Option<(Primitive, usize)>,
}

/// Append-only operation record.
pub struct Tape {
    inner: RefCell<Inner>,
    fault: Cell<Option<(Primitive, f64)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        let inner = Inner { edge_start: vec![0], ..Default::default() };
        Self { inner: RefCell::new(inner), fault: Cell::new(None) }
    }

    /// Scales every partial recorded by `primitive` by `factor`. Only
    /// useful as a negative control for gradient checks.
    pub fn inject_fault(&self, primitive: Primitive, factor: f64) {
        self.fault.set(Some((primitive, factor)));
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Primitive::Input, value, &[]);
        Var { tape: Some(self), idx, val: value }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, op: Primitive, value: f64, edges: &[(u32, f64)]) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.ops.len();
        let scale = match self.fault.get() {
            Some((p, f)) if p == op => f,
            _ => 1.0,
        };
        let mut finite = value.is_finite();
        for &(parent, partial) in edges {
            inner.parents.push(parent);
            inner.partials.push(partial * scale);
            finite &= partial.is_finite();
        }
        if !finite && inner.non_finite.is_none() {
            inner.non_finite = Some((op, idx));
        }
        inner.ops.push(op);
        let end = inner.parents.len() as u32;
        inner.edge_start.push(end);
        idx as u32
    }

    /// First non-finite value or partial recorded, reported as an error
    /// naming the primitive that produced it.
    pub fn check_finite(&self) -> Result<()> {
        match self.inner.borrow().non_finite {
            Some((op, node)) => Err(Error::NonFinite { primitive: op.name(), node }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from a weighted set of outputs: computes the gradient
    /// of `sum_k w_k * y_k` with respect to every node.
    pub fn backward(&self, seeds: &[(Var<'_>, f64)]) -> Adjoints {
        let inner = self.inner.borrow();
        let mut adj = vec![0.0; inner.ops.len()];
        for (v, w) in seeds {
            if let Some(t) = v.tape {
                debug_assert!(std::ptr::eq(t, self), "seed belongs to a different tape");
                adj[v.idx as usize] += w;
            }
        }
        for node in (0..adj.len()).rev() {
            let a = adj[node];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (inner.edge_start[node] as usize, inner.edge_start[node + 1] as usize);
            for k in s..e {
                adj[inner.parents[k] as usize] += a * inner.partials[k];
            }
        }
        Adjoints { adj }
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    /// Derivative with respect to `v`; zero for constants.
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.adj[v.idx as usize],
            None => 0.0,
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(v)).collect()
    }
}

/// A value, optionally tracked on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{}: {})", self.idx, self.val),
            None => write!(f, "Const({})", self.val),
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    /// Records a node whose parents are `operands` with the given partials.
    /// Constant operands are dropped; if all are constant, the result is a
    /// constant too.
    fn record(op: Primitive, value: f64, operands: &[(Var<'t>, f64)]) -> Var<'t> {
        let Some(tape) = operands.iter().find_map(|(v, _)| v.tape) else {
            return Var { tape: None, idx: 0, val: value };
        };
        let edges: Vec<(u32, f64)> = operands
            .iter()
            .filter(|(v, _)| v.tape.is_some())
            .map(|(v, d)| (v.idx, *d))
            .collect();
        let idx = tape.push(op, value, &edges);
        Var { tape: Some(tape), idx, val: value }
    }

    fn unary(self, op: Primitive, value: f64, partial: f64) -> Var<'t> {
        if self.tape.is_none() {
            return Var { tape: None, idx: 0, val: value };
        }
        Self::record(op, value, &[(self, partial)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::record(Primitive::Add, self.val + rhs.val, &[(self, 1.0), (rhs, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::record(Primitive::Sub, self.val - rhs.val, &[(self, 1.0), (rhs, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::record(Primitive::Mul, self.val * rhs.val, &[(self, rhs.val), (rhs, self.val)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.val / rhs.val;
        Var::record(Primitive::Div, q, &[(self, 1.0 / rhs.val), (rhs, -q / rhs.val)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Primitive::Neg, -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(Primitive::Affine, self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(Primitive::Affine, self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(Primitive::Affine, self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(Primitive::Affine, self.val / c, 1.0 / c)
    }
}

impl Scalar for Var<'_> {
    fn constant(v: f64) -> Self {
        Var { tape: None, idx: 0, val: v }
    }

    fn value(&self) -> f64 {
        self.val
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid(self.val);
        self.unary(Primitive::Sigmoid, s, s * (1.0 - s))
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(Primitive::Tanh, t, 1.0 - t * t)
    }

    fn ln(self) -> Self {
        self.unary(Primitive::Ln, self.val.ln(), 1.0 / self.val)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(Primitive::Exp, e, e)
    }

    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        let inside = self.val >= lo && self.val <= hi;
        self.unary(Primitive::Clamp, self.val.clamp(lo, hi), if inside { 1.0 } else { 0.0 })
    }

    fn detach(self) -> Self {
        Self::constant(self.val)
    }

    fn rsub(self, c: f64) -> Self {
        self.unary(Primitive::Affine, c - self.val, -1.0)
    }

    fn pb_cell(stay: Self, step: Self, p: Self) -> Self {
        let value = stay.val * (1.0 - p.val) + step.val * p.val;
        Var::record(
            Primitive::PoissonBinomialCell,
            value,
            &[(stay, 1.0 - p.val), (step, p.val), (p, step.val - stay.val)],
        )
    }

    fn bayes(prior: Self, lik_a: Self, lik_b: Self) -> Self {
        let (t, a, b) = (prior.val, lik_a.val, lik_b.val);
        let den = t * a + (1.0 - t) * b;
        let den2 = den * den;
        // The likelihood partials carry a t (1 - t) factor, so they vanish
        // exactly at t = 0 and t = 1.
        let mix = t * (1.0 - t);
        Var::record(
            Primitive::Bayes,
            t * a / den,
            &[(prior, a * b / den2), (lik_a, mix * b / den2), (lik_b, -mix * a / den2)],
        )
    }

    fn dot(w: &[Self], x: &[Self]) -> Self {
        assert_eq!(w.len(), x.len(), "dot operands differ in length");
        let value = w.iter().zip(x).map(|(a, b)| a.val * b.val).sum();
        let mut ops: Vec<(Var<'_>, f64)> = Vec::with_capacity(2 * w.len());
        for (a, b) in w.iter().zip(x) {
            ops.push((*a, b.val));
            ops.push((*b, a.val));
        }
        Var::record(Primitive::Dot, value, &ops)
    }

    fn sum(xs: &[Self]) -> Self {
        let value = xs.iter().map(|x| x.val).sum();
        let ops: Vec<(Var<'_>, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
        Var::record(Primitive::Sum, value, &ops)
    }
}
