//! Scalar abstraction: core math is generic over `f32`/`f64`.

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar usable in tensors and geometry kernels.
pub trait Real:
    Float + FromPrimitive + NumAssignOps + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_f32(x: f32) -> Self {
        Self::of_f64(x as f64)
    }
    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Real for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand cast from an `f64` literal into the generic scalar.
#[inline]
pub fn r<T: Real>(x: f64) -> T {
    T::of_f64(x)
}
