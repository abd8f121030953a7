//! Scalar abstraction for the closed-form model layer.

/// Floating point scalar: f32 or f64.
pub trait Real:
    num_traits::Float + num_traits::FloatConst + num_traits::FromPrimitive + core::fmt::Debug
{
    /// Lift an f64 constant into the scalar type.
    fn c(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}
