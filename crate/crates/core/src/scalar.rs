//! Floating-point abstraction so the decoder runs in f32 for training and
//! f64 for finite-difference gradient verification.

use ndarray::NdFloat;
use std::iter::Sum;

/// Scalar type usable throughout the model and training code.
pub trait Real: NdFloat + Sum {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
