//! Scalar abstraction for the numeric kernels.
//!
//! Everything in this crate is generic over [`Scalar`], which is implemented
//! for `f32` and `f64`. The concrete aliases exported from the crate root pin
//! `f64`, the precision the tests and the benchmark CLI run at.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the library is generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Relative off-diagonal threshold at which the Jacobi sweeps stop.
    fn jacobi_tol() -> Self;
}

impl Scalar for f64 {
    fn jacobi_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn jacobi_tol() -> Self {
        1e-6
    }
}

/// Lifts an `f64` constant into the scalar type.
pub(crate) fn cst<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("constant representable in scalar type")
}
