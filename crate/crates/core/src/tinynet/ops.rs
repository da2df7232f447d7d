use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Probability clamp applied inside [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

/// Gradient of ReLU evaluated at the forward input `x` (0 at the kink).
pub fn relu_backward<F: Scalar>(x: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    grad_out.expect_shape(x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Gradient w.r.t. the logit, given the forward output `y = sigmoid(z)`.
pub fn sigmoid_backward<F: Scalar>(y: F, grad_out: F) -> F {
    grad_out * y * (F::one() - y)
}

/// Softmax over a flat vector (max-shifted for stability).
pub fn softmax<F: Scalar>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient w.r.t. the softmax input, given its output `y`.
pub fn softmax_backward<F: Scalar>(y: &[F], grad_out: &[F]) -> Vec<F> {
    let dot: F = y.iter().zip(grad_out).map(|(&a, &g)| a * g).sum();
    y.iter().zip(grad_out).map(|(&a, &g)| a * (g - dot)).collect()
}

fn clamp_prob<F: Scalar>(p: F) -> F {
    let eps = F::from_f64(BCE_EPS);
    p.max(eps).min(F::one() - eps)
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
pub fn bce_loss<F: Scalar>(p: F, y: F) -> F {
    let p = clamp_prob(p);
    -(y * p.ln() + (F::one() - y) * (F::one() - p).ln())
}

/// `d bce / d p`; zero where the clamp is active.
pub fn bce_grad<F: Scalar>(p: F, y: F) -> F {
    let eps = F::from_f64(BCE_EPS);
    if p < eps || p > F::one() - eps {
        return F::zero();
    }
    -(y / p) + (F::one() - y) / (F::one() - p)
}

fn check_linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>) -> Result<(usize, usize)> {
    if x.rank() != 1 || w.rank() != 2 || w.shape()[1] != x.len() {
        return Err(Error::Shape(format!(
            "linear input {:?} incompatible with weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    Ok((w.shape()[0], w.shape()[1]))
}

/// `W x + b` with `W: [out, in]`.
pub fn linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = check_linear(x, w)?;
    b.expect_shape(&[m])?;
    let out = (0..m)
        .map(|i| {
            let row = &w.data()[i * n..(i + 1) * n];
            b.data()[i] + row.iter().zip(x.data()).map(|(&a, &v)| a * v).sum::<F>()
        })
        .collect();
    Ok(Tensor::from_vec1(out))
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (m, n) = check_linear(x, w)?;
    grad_out.expect_shape(&[m])?;
    let mut gx = vec![F::zero(); n];
    let mut gw = vec![F::zero(); m * n];
    for i in 0..m {
        let g = grad_out.data()[i];
        let row = &w.data()[i * n..(i + 1) * n];
        for j in 0..n {
            gx[j] += g * row[j];
            gw[i * n + j] = g * x.data()[j];
        }
    }
    Ok((
        Tensor::from_vec1(gx),
        Tensor::new(vec![m, n], gw)?,
        grad_out.clone(),
    ))
}
