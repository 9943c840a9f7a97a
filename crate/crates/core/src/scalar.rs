use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar the whole crate is generic over.
///
/// Implemented for `f32` and `f64`; the crate root exports concrete type
/// aliases for both. All tolerances in this crate are quoted on the `f64`
/// scale, so `f64` is the precision the acceptance-grade guarantees refer to.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal into this scalar type.
    fn real(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
