//! Dense kernels, reverse-mode differentiation and transformer sublayers.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, GradFailure};
pub use graph::{sigmoid, softmax_row, AttentionMask, Gradients, Graph, Var};
pub use layers::{
    attend, AttentionOutput, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, LayerShape, Linear,
    MultiHeadAttention, NormPlacement,
};
pub use params::{normal_init, xavier_uniform, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.matmul(b)
}

/// Softmax along `axis` (0 = down columns, 1 = along rows) of a matrix.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    match axis {
        1 => {
            let mut out = Tensor::zeros(&[x.rows(), x.cols()]);
            for i in 0..x.rows() {
                softmax_row(x.row(i), out.row_mut(i), |_| true);
            }
            Ok(out)
        }
        0 => Ok(softmax(&x.transpose(), 1)?.transpose()),
        _ => Err(Error::Argument(format!("softmax axis {axis} out of range"))),
    }
}

pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], eps: f64) -> Result<Vec<T>> {
    let d = x.len();
    if d == 0 || gamma.len() != d || beta.len() != d {
        return Err(Error::shape("layer_norm", "x, gamma and beta must share a positive length"));
    }
    let n = T::from_usize(d).expect("usize");
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let s = T::one() / (var + T::from_f64_lossy(eps)).sqrt();
    Ok(x.iter().zip(gamma).zip(beta).map(|((&v, &g), &b)| g * (v - mean) * s + b).collect())
}

pub fn elementwise<T: Real>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Relu => x.map(|v| v.max(T::zero())),
    }
}
