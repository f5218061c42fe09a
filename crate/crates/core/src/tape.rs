//! Scalar reverse-mode automatic differentiation on a tape.
//!
//! Every differentiable computation in this crate (network forward passes,
//! covariance assembly, per-pixel factorizations, likelihood terms) is written
//! once, generically over [`Real`]. Instantiated with `f64` it is a plain
//! evaluation; instantiated with [`Var`] it records a Wengert list whose
//! reverse sweep yields exact gradients. Local partials are stored at forward
//! time, so the backward pass is a single reverse loop over the tape.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

/// Scalar type abstraction: implemented by `f64` (plain evaluation) and by
/// [`Var`] (taped evaluation with gradients).
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value (used for branching and diagnostics; branching
    /// on values is what makes piecewise losses differentiate correctly).
    fn val(self) -> f64;
    fn add_f(self, c: f64) -> Self;
    /// `self - c`
    fn sub_f(self, c: f64) -> Self;
    /// `c - self`
    fn rsub_f(self, c: f64) -> Self;
    fn mul_f(self, c: f64) -> Self;
    fn div_f(self, c: f64) -> Self;
    fn recip(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn relu(self) -> Self;
    fn softplus(self) -> Self;
    fn square(self) -> Self {
        self * self
    }
    /// Lift a plain constant, when the representation allows it (only `f64`
    /// does; taped values need a tape).
    fn from_const(_v: f64) -> Option<Self> {
        None
    }
}

/// Numerically stable softplus, shared by the `f64` and `Var` paths so both
/// evaluate bit-identical forward values.
pub fn softplus_f64(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable logistic function; derivative of [`softplus_f64`].
pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn add_f(self, c: f64) -> Self {
        self + c
    }
    #[inline]
    fn sub_f(self, c: f64) -> Self {
        self - c
    }
    #[inline]
    fn rsub_f(self, c: f64) -> Self {
        c - self
    }
    #[inline]
    fn mul_f(self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn div_f(self, c: f64) -> Self {
        self / c
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    #[inline]
    fn from_const(v: f64) -> Option<Self> {
        Some(v)
    }
}

#[derive(Clone, Copy)]
struct Node {
    p1: u32,
    p2: u32,
    d1: f64,
    d2: f64,
    val: f64,
}

/// Gradient tape. Create one per objective evaluation (or [`Tape::reset`] and
/// reuse the allocation between steps).
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes but keep the allocation.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Introduce an input value. Leaves are also how constants enter; their
    /// adjoints are simply never read.
    pub fn leaf(&self, v: f64) -> Var<'_> {
        self.push(Node {
            p1: NONE,
            p2: NONE,
            d1: 0.0,
            d2: 0.0,
            val: v,
        })
    }

    fn push(&self, n: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(n);
        Var { tape: self, idx }
    }

    fn value(&self, idx: u32) -> f64 {
        self.nodes.borrow()[idx as usize].val
    }

    fn unary(&self, p: u32, val: f64, d: f64) -> Var<'_> {
        self.push(Node {
            p1: p,
            p2: NONE,
            d1: d,
            d2: 0.0,
            val,
        })
    }

    fn binary(&self, p1: u32, p2: u32, val: f64, d1: f64, d2: f64) -> Var<'_> {
        self.push(Node { p1, p2, d1, d2, val })
    }

    /// Reverse sweep from `out`; returns adjoints for every node.
    pub fn backward(&self, out: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        adj[out.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            if n.p1 != NONE {
                adj[n.p1 as usize] += n.d1 * a;
            }
            if n.p2 != NONE {
                adj[n.p2 as usize] += n.d2 * a;
            }
        }
        Gradients { adj }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `v`.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl<'t> Var<'t> {
    pub fn tape(self) -> &'t Tape {
        self.tape
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        let v = self.tape.value(self.idx) + self.tape.value(rhs.idx);
        self.tape.binary(self.idx, rhs.idx, v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        let v = self.tape.value(self.idx) - self.tape.value(rhs.idx);
        self.tape.binary(self.idx, rhs.idx, v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        let a = self.tape.value(self.idx);
        let b = self.tape.value(rhs.idx);
        self.tape.binary(self.idx, rhs.idx, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        let a = self.tape.value(self.idx);
        let b = self.tape.value(rhs.idx);
        self.tape
            .binary(self.idx, rhs.idx, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        let v = self.tape.value(self.idx);
        self.tape.unary(self.idx, -v, -1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.tape.value(self.idx)
    }
    fn add_f(self, c: f64) -> Self {
        let v = self.val() + c;
        self.tape.unary(self.idx, v, 1.0)
    }
    fn sub_f(self, c: f64) -> Self {
        let v = self.val() - c;
        self.tape.unary(self.idx, v, 1.0)
    }
    fn rsub_f(self, c: f64) -> Self {
        let v = c - self.val();
        self.tape.unary(self.idx, v, -1.0)
    }
    fn mul_f(self, c: f64) -> Self {
        let v = self.val() * c;
        self.tape.unary(self.idx, v, c)
    }
    fn div_f(self, c: f64) -> Self {
        let v = self.val() / c;
        self.tape.unary(self.idx, v, 1.0 / c)
    }
    fn recip(self) -> Self {
        let x = self.val();
        self.tape.unary(self.idx, 1.0 / x, -1.0 / (x * x))
    }
    fn exp(self) -> Self {
        let e = self.val().exp();
        self.tape.unary(self.idx, e, e)
    }
    fn ln(self) -> Self {
        let x = self.val();
        self.tape.unary(self.idx, x.ln(), 1.0 / x)
    }
    fn sqrt(self) -> Self {
        let s = self.val().sqrt();
        self.tape.unary(self.idx, s, 0.5 / s)
    }
    fn abs(self) -> Self {
        let x = self.val();
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.unary(self.idx, x.abs(), d)
    }
    fn relu(self) -> Self {
        let x = self.val();
        if x > 0.0 {
            self.tape.unary(self.idx, x, 1.0)
        } else {
            self.tape.unary(self.idx, 0.0, 0.0)
        }
    }
    fn softplus(self) -> Self {
        let x = self.val();
        self.tape.unary(self.idx, softplus_f64(x), sigmoid_f64(x))
    }
}

/// Sum of a slice of reals; `zero_like` seeds the empty case.
pub fn sum_slice<T: Real>(xs: &[T]) -> Option<T> {
    let mut it = xs.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, |a, b| a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn arithmetic_matches_plain_f64() {
        let t = Tape::new();
        let x = t.leaf(1.7);
        let y = t.leaf(-0.4);
        let z = (x * y + x.exp()).sqrt().ln().mul_f(3.0) - y.recip();
        let (xf, yf) = (1.7f64, -0.4f64);
        let plain = (xf * yf + xf.exp()).sqrt().ln() * 3.0 - 1.0 / yf;
        assert_relative_eq!(z.val(), plain, epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = |x: f64, y: f64| -> f64 {
            let a = (x * y).softplus();
            let b = (x.square() + y.exp()).sqrt();
            a * b + x.abs().ln() - y.relu().mul_f(0.5)
        };
        let (x0, y0) = (0.8, 1.3);
        let t = Tape::new();
        let x = t.leaf(x0);
        let y = t.leaf(y0);
        let a = (x * y).softplus();
        let b = (x.square() + y.exp()).sqrt();
        let out = a * b + x.abs().ln() - y.relu().mul_f(0.5);
        assert_relative_eq!(out.val(), f(x0, y0), epsilon = 1e-14);
        let g = t.backward(out);
        assert_relative_eq!(g.wrt(x), fd(|v| f(v, y0), x0), epsilon = 1e-7);
        assert_relative_eq!(g.wrt(y), fd(|v| f(x0, v), y0), epsilon = 1e-7);
    }

    #[test]
    fn fan_out_accumulates() {
        // z = x*x + x => dz/dx = 2x + 1
        let t = Tape::new();
        let x = t.leaf(3.0);
        let z = x * x + x;
        let g = t.backward(z);
        assert_relative_eq!(g.wrt(x), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn mixed_const_ops() {
        let t = Tape::new();
        let x = t.leaf(2.0);
        let z = x.rsub_f(5.0).mul_f(2.0).add_f(1.0); // 2(5-x)+1
        assert_relative_eq!(z.val(), 7.0, epsilon = 1e-15);
        let g = t.backward(z);
        assert_relative_eq!(g.wrt(x), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn softplus_stable_tails() {
        assert_relative_eq!(softplus_f64(100.0), 100.0, epsilon = 1e-12);
        assert!(softplus_f64(-100.0) > 0.0);
        assert_relative_eq!(softplus_f64(0.0), (2.0f64).ln(), epsilon = 1e-15);
        assert_relative_eq!(sigmoid_f64(0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn reset_reuses_allocation() {
        let t = Tape::new();
        let x = t.leaf(1.0);
        let _ = x.exp() + x;
        assert_eq!(t.len(), 3);
        t.reset();
        assert!(t.is_empty());
    }
}
