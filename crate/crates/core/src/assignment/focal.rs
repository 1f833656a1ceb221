//! Element-wise binary focal loss and its derivative in the probability.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    /// Focusing exponent.
    pub gamma: f64,
    /// Optional positive-class balance; negatives get `1 − alpha`.
    pub alpha: Option<f64>,
    /// Probabilities are clamped to `[clamp_eps, 1 − clamp_eps]`.
    pub clamp_eps: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: None,
            clamp_eps: 1e-7,
        }
    }
}

impl FocalParams {
    fn weights<T: Real>(&self) -> (T, T) {
        match self.alpha {
            Some(a) => (T::lit(a), T::lit(1.0 - a)),
            None => (T::one(), T::one()),
        }
    }
}

/// `y = 1: −(1−p)^γ ln p`, `y = 0: −p^γ ln(1−p)`.
pub fn focal_term<T: Real>(positive: bool, p: T, params: &FocalParams) -> T {
    let eps = T::lit(params.clamp_eps);
    let p = p.max(eps).min(T::one() - eps);
    let g = T::lit(params.gamma);
    let (wp, wn) = params.weights::<T>();
    if positive {
        -wp * (T::one() - p).powf(g) * p.ln()
    } else {
        -wn * p.powf(g) * (T::one() - p).ln()
    }
}

/// `d/dp` of [`focal_term`]; zero where the clamp is active.
pub fn focal_grad<T: Real>(positive: bool, p: T, params: &FocalParams) -> T {
    let eps = T::lit(params.clamp_eps);
    if p < eps || p > T::one() - eps {
        return T::zero();
    }
    let g = T::lit(params.gamma);
    let one = T::one();
    let (wp, wn) = params.weights::<T>();
    if positive {
        let q = one - p;
        // γ(1−p)^{γ−1} ln p − (1−p)^γ / p
        let lead = if params.gamma == 0.0 {
            T::zero()
        } else {
            g * q.powf(g - one) * p.ln()
        };
        wp * (lead - q.powf(g) / p)
    } else {
        let q = one - p;
        // −γ p^{γ−1} ln(1−p) + p^γ / (1−p)
        let lead = if params.gamma == 0.0 {
            T::zero()
        } else {
            -g * p.powf(g - one) * q.ln()
        };
        wn * (lead + p.powf(g) / q)
    }
}
