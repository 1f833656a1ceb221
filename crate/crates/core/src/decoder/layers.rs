//! Parameterized building blocks shared by the decoder and the heads.

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::{layer_norm_in_place, linear_row, Matrix2D};
use crate::weights::{ParamSource, WeightStore};

/// Affine map `y = W x + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix2D<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn load(src: &ParamSource<'_>, prefix: &str, out: usize, inp: usize) -> Result<Self> {
        Ok(Self {
            weight: src.matrix(&format!("{prefix}.weight"), out, inp, inp)?,
            bias: src.vector(&format!("{prefix}.bias"), out, inp)?,
        })
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix2D::zeros(out, inp),
            bias: vec![T::zero(); out],
        }
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) {
        store.insert_matrix(format!("{prefix}.weight"), &self.weight);
        store.insert_vector(format!("{prefix}.bias"), &self.bias);
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn apply_into(&self, x: &[T], out: &mut [T]) {
        linear_row(x, &self.weight, Some(&self.bias), out);
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.out_dim()];
        self.apply_into(x, &mut out);
        out
    }

    /// Apply to every row of `x`.
    pub fn apply_rows(&self, x: &Matrix2D<T>) -> Matrix2D<T> {
        let mut out = Matrix2D::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            self.apply_into(x.row(r), out.row_mut(r));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: T,
}

impl<T: Real> LayerNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn load(src: &ParamSource<'_>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: src.vector_or(&format!("{prefix}.gamma"), dim, 1.0)?,
            beta: src.vector_or(&format!("{prefix}.beta"), dim, 0.0)?,
            eps: T::lit(Self::DEFAULT_EPS),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            eps: T::lit(Self::DEFAULT_EPS),
        }
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) {
        store.insert_vector(format!("{prefix}.gamma"), &self.gamma);
        store.insert_vector(format!("{prefix}.beta"), &self.beta);
    }

    #[inline]
    pub fn apply(&self, x: &mut [T]) {
        layer_norm_in_place(x, &self.gamma, &self.beta, self.eps);
    }
}

/// Three-layer perceptron (two hidden rectifier layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: [Linear<T>; 3],
}

impl<T: Real> Mlp<T> {
    pub fn load(src: &ParamSource<'_>, prefix: &str, inp: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            layers: [
                Linear::load(src, &format!("{prefix}.0"), hidden, inp)?,
                Linear::load(src, &format!("{prefix}.1"), hidden, hidden)?,
                Linear::load(src, &format!("{prefix}.2"), out, hidden)?,
            ],
        })
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            l.save(store, &format!("{prefix}.{i}"));
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim()
    }

    /// Pre-activation output (no final nonlinearity).
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut h = self.layers[0].apply(x);
        relu(&mut h);
        let mut h = self.layers[1].apply(&h);
        relu(&mut h);
        self.layers[2].apply(&h)
    }
}

#[inline]
pub fn relu<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}
