//! Floating-point abstraction so the network runs in f32 for training and
//! f64 for finite-difference gradient checks.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::distr::uniform::SampleUniform;

pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
