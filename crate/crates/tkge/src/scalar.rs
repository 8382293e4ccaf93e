//! Numeric abstraction shared by the plain `f64` evaluation path and the
//! reverse-mode tape in [`crate::tape`].
//!
//! All manifold kernels in [`crate::geometry`] are written once, generic over
//! [`Scalar`]. Instantiated with `f64` they compile down to ordinary float
//! arithmetic; instantiated with [`crate::tape::Var`] the same expressions
//! record a computation graph for exact reverse-mode differentiation. Keeping
//! a single implementation guarantees the differentiated function is the
//! function actually evaluated.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A differentiable scalar. Plain constants enter through `scale` / `shift`
/// so the tape never has to allocate nodes for them.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value. Used for branching (domain guards, clamps)
    /// and for diagnostics; branches picked on `value()` select the branch
    /// that is then differentiated.
    fn value(self) -> f64;

    /// `self * c` for a plain constant `c`.
    fn scale(self, c: f64) -> Self;

    /// `self + c` for a plain constant `c`.
    fn shift(self, c: f64) -> Self;

    /// `1 / self`.
    fn recip(self) -> Self;

    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn atanh(self) -> Self;
    fn tan(self) -> Self;
    fn atan(self) -> Self;
    fn sin(self) -> Self;
    fn cosh(self) -> Self;

    /// A zero with the same provenance as `self` (no fresh leaf is created
    /// on a tape). Used for removable singularities such as `d(x, x)`.
    fn zeroed(self) -> Self {
        self.scale(0.0)
    }

    /// A constant with the same provenance as `self`.
    fn constant(self, c: f64) -> Self {
        self.zeroed().shift(c)
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    #[inline]
    fn shift(self, c: f64) -> Self {
        self + c
    }

    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    #[inline]
    fn atanh(self) -> Self {
        f64::atanh(self)
    }

    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }

    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }

    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }

    #[inline]
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
}

/// Left-to-right dot product. The summation order is part of the crate's
/// determinism contract, so do not replace this with a reduction that
/// reassociates.
pub fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    assert_eq!(x.len(), y.len());
    assert!(!x.is_empty(), "dot of empty vectors");
    let mut acc = x[0] * y[0];
    for i in 1..x.len() {
        acc = acc + x[i] * y[i];
    }
    acc
}

/// Squared Euclidean norm, summed left to right.
pub fn norm_sq<S: Scalar>(x: &[S]) -> S {
    dot(x, x)
}
