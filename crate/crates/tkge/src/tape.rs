//! Minimal reverse-mode tape over scalars.
//!
//! The tape is an arena of nodes. Each node stores up to two parent indices
//! and the local partial derivatives with respect to those parents. A
//! backward sweep in reverse arena order accumulates adjoints, which makes
//! the gradient of a scalar output exact to rounding and deterministic: the
//! accumulation order is fixed by construction order.
//!
//! [`Var`] implements [`Scalar`], so every manifold kernel written against
//! that trait can be recorded without a second implementation.

use std::cell::RefCell;

use crate::scalar::Scalar;

#[derive(Clone, Copy)]
struct Node {
    p0: u32,
    p1: u32,
    d0: f64,
    d1: f64,
}

/// Arena of computation nodes. Cleared and reused between batches.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to one tape node. Copyable; carries its forward value so reads
/// never touch the arena.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
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

    pub fn with_capacity(cap: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes but keep the allocation. Any `Var` created before the
    /// clear must not be used afterwards.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Register an independent variable.
    pub fn leaf(&self, val: f64) -> Var<'_> {
        // Leaves point at themselves with zero partials; the backward sweep
        // then leaves their adjoints untouched.
        self.push(0, 0.0, 0, 0.0, val).self_parented()
    }

    fn push(&self, p0: u32, d0: f64, p1: u32, d1: f64, val: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < u32::MAX as usize, "tape overflow");
        nodes.push(Node { p0, p1, d0, d1 });
        Var {
            tape: self,
            idx: idx as u32,
            val,
        }
    }

    /// Adjoints of every node given unit seed on `of`. Mostly useful in
    /// tests; batch code uses [`Tape::backward_multi`].
    pub fn backward(&self, of: Var<'_>) -> Vec<f64> {
        self.backward_multi(&[(of, 1.0)])
    }

    /// Backward sweep with several seeded outputs sharing one pass.
    /// `seeds` pairs an output with d(loss)/d(output).
    pub fn backward_multi(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        for &(v, s) in seeds {
            adj[v.idx as usize] += s;
        }
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            // Skipping zero adjoints is both an optimization and a shield:
            // a dead branch may hold an infinite local partial (sqrt at 0)
            // that must not poison live gradients with 0 * inf = NaN.
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            if (n.p0 as usize) != i {
                adj[n.p0 as usize] += n.d0 * a;
            }
            if (n.p1 as usize) != i {
                adj[n.p1 as usize] += n.d1 * a;
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    fn self_parented(self) -> Self {
        // Rewrite the freshly pushed node so p0 == p1 == own index.
        let mut nodes = self.tape.nodes.borrow_mut();
        let i = self.idx as usize;
        nodes[i].p0 = self.idx;
        nodes[i].p1 = self.idx;
        self
    }

    pub fn index(self) -> usize {
        self.idx as usize
    }

    fn unary(self, d: f64, val: f64) -> Var<'t> {
        self.tape.push(self.idx, d, self.idx, 0.0, val)
    }

    fn binary(self, o: Var<'t>, d0: f64, d1: f64, val: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, o.tape), "vars from different tapes");
        self.tape.push(self.idx, d0, o.idx, d1, val)
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, 1.0, 1.0, self.val + o.val)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, 1.0, -1.0, self.val - o.val)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, o.val, self.val, self.val * o.val)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let inv = 1.0 / o.val;
        self.binary(o, inv, -self.val * inv * inv, self.val * inv)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-1.0, -self.val)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }

    fn scale(self, c: f64) -> Self {
        self.unary(c, self.val * c)
    }

    fn shift(self, c: f64) -> Self {
        self.unary(1.0, self.val + c)
    }

    fn recip(self) -> Self {
        let inv = 1.0 / self.val;
        self.unary(-inv * inv, inv)
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        // Derivative is unbounded at zero; callers guard zero-norm cases
        // before taking square roots, and the backward sweep never
        // propagates through branches with zero adjoint.
        self.unary(0.5 / s, s)
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(1.0 - t * t, t)
    }

    fn atanh(self) -> Self {
        let d = 1.0 / (1.0 - self.val * self.val);
        self.unary(d, self.val.atanh())
    }

    fn tan(self) -> Self {
        let t = self.val.tan();
        self.unary(1.0 + t * t, t)
    }

    fn atan(self) -> Self {
        let d = 1.0 / (1.0 + self.val * self.val);
        self.unary(d, self.val.atan())
    }

    fn sin(self) -> Self {
        self.unary(self.val.cos(), self.val.sin())
    }

    fn cosh(self) -> Self {
        self.unary(self.val.sinh(), self.val.cosh())
    }
}
