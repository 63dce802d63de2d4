//! Scalar reverse-mode tape.
//!
//! Each recorded node holds up to two operand indices together with the local
//! partial derivatives of the node with respect to those operands, so the
//! reverse sweep is a single pass over the node list in reverse order.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    lhs: u32,
    rhs: u32,
    d_lhs: f64,
    d_rhs: f64,
    value: f64,
}

/// Operation record for the scalar part of a loss computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Drops all recorded nodes, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Independent input with a nonzero adjoint slot.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, NONE, 0.0, NONE, 0.0)
    }

    /// Constant; recorded like an input but its adjoint is never read.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    fn push(&self, value: f64, lhs: u32, d_lhs: f64, rhs: u32, d_rhs: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            lhs,
            rhs,
            d_lhs,
            d_rhs,
            value,
        });
        Var { tape: self, index }
    }

    /// Reverse sweep seeded with `seed` at `output`; returns one adjoint per
    /// recorded node.
    pub fn adjoints(&self, output: Var<'_>, seed: f64) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.index as usize] = seed;
        for i in (0..=output.index as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            if n.lhs != NONE {
                adj[n.lhs as usize] += a * n.d_lhs;
            }
            if n.rhs != NONE {
                adj[n.rhs as usize] += a * n.d_rhs;
            }
        }
        adj
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn value(&self) -> f64 {
        self.tape.nodes.borrow()[self.index as usize].value
    }

    fn unary(self, value: f64, d: f64) -> Self {
        self.tape.push(value, self.index, d, NONE, 0.0)
    }

    fn binary(self, other: Self, value: f64, d_self: f64, d_other: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        self.tape
            .push(value, self.index, d_self, other.index, d_other)
    }
}

/// Scalar arithmetic shared by plain `f64` evaluation and taped evaluation,
/// so residual and scaling formulas are written once.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn lift(&self, c: f64) -> Self;
    fn val(&self) -> f64;
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn square(self) -> Self {
        self * self
    }
    /// `min(self, ceiling)` with zero derivative on the saturated side.
    fn min_const(self, ceiling: f64) -> Self;
}

pub fn softplus(u: f64) -> f64 {
    // log(1 + e^u) without overflow for large u
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn val(&self) -> f64 {
        *self
    }
    fn softplus(self) -> Self {
        softplus(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn min_const(self, ceiling: f64) -> Self {
        if self > ceiling {
            ceiling
        } else {
            self
        }
    }
}

impl<'t> Real for Var<'t> {
    fn lift(&self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn val(&self) -> f64 {
        self.value()
    }
    fn softplus(self) -> Self {
        let u = self.value();
        self.unary(softplus(u), sigmoid(u))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value());
        self.unary(s, s * (1.0 - s))
    }
    fn tanh(self) -> Self {
        let s = self.value().tanh();
        self.unary(s, 1.0 - s * s)
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(e, e)
    }
    fn powi(self, n: i32) -> Self {
        let u = self.value();
        self.unary(u.powi(n), n as f64 * u.powi(n - 1))
    }
    fn min_const(self, ceiling: f64) -> Self {
        let u = self.value();
        if u > ceiling {
            self.unary(ceiling, 0.0)
        } else {
            self.unary(u, 1.0)
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.binary(rhs, v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.binary(rhs, v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, a * b, b, a)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        let v = -self.value();
        self.unary(v, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        let v = self.value() + rhs;
        self.unary(v, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        let v = self.value() - rhs;
        self.unary(v, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        let v = self.value() * rhs;
        self.unary(v, rhs)
    }
}
