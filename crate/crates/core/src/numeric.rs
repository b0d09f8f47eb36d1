//! Scalar abstraction shared by plain `f64` evaluation and the recording
//! tape, so one model of the simulation serves both evaluation and
//! differentiation.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Arithmetic needed by predictors, agent decisions, and losses.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sigmoid(self) -> Self;
    fn tanh(self) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    /// Clamps into `[lo, hi]`; the derivative is zero where clamped.
    fn clamp_to(self, lo: f64, hi: f64) -> Self;
    /// Same value, no gradient flow.
    fn detach(self) -> Self;

    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        Self::constant(c) - self
    }

    /// One Poisson-binomial DP cell: `stay * (1 - p) + step * p`.
    fn pb_cell(stay: Self, step: Self, p: Self) -> Self {
        stay * p.rsub(1.0) + step * p
    }

    /// Two-hypothesis Bayes posterior `prior * a / (prior * a + (1 - prior) * b)`.
    fn bayes(prior: Self, lik_a: Self, lik_b: Self) -> Self {
        let num = prior * lik_a;
        num / (num + prior.rsub(1.0) * lik_b)
    }

    fn dot(w: &[Self], x: &[Self]) -> Self {
        w.iter().zip(x).fold(Self::constant(0.0), |acc, (&a, &b)| acc + a * b)
    }

    fn sum(xs: &[Self]) -> Self {
        xs.iter().fold(Self::constant(0.0), |acc, &x| acc + x)
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        self.clamp(lo, hi)
    }
    fn detach(self) -> Self {
        self
    }
    fn rsub(self, c: f64) -> Self {
        c - self
    }
}
