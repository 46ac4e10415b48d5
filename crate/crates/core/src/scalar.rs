//! Scalar abstraction for the numerical kernels.
//!
//! Geometry and flow code is generic over [`Scalar`] so the same stencils and
//! integrators run in `f32` or `f64`. Production paths use the `f64` aliases
//! exported from the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the geometry and flow kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum<T>
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn real<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal must convert into the scalar type")
}

/// Converts a node count or index into the working scalar type.
#[inline]
pub fn real_usize<S: Scalar>(n: usize) -> S {
    S::from_usize(n).expect("usize must convert into the scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_convert_to_both_widths() {
        let a: f32 = real(0.25);
        let b: f64 = real(0.25);
        assert_eq!(a, 0.25f32);
        assert_eq!(b, 0.25f64);
        assert_eq!(real_usize::<f64>(7), 7.0);
    }
}
