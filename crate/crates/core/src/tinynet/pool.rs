//! Adaptive average pooling. Each axis of length `n` is split into `m` bins
//! `[floor(i*n/m), ceil((i+1)*n/m))`, so bins differ in size by at most one
//! and cover the axis.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

fn bins(n: usize, m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .map(|i| ((i * n) / m, ((i + 1) * n).div_ceil(m)))
        .collect()
}

fn check(x_shape: &[usize], out: [usize; 3]) -> Result<()> {
    if x_shape.len() != 4 || out.contains(&0) || x_shape.contains(&0) {
        return Err(Error::Shape(format!(
            "adaptive_avg_pool3d input {:?} with output size {:?}",
            x_shape, out
        )));
    }
    Ok(())
}

/// `[C, T, H, W] -> [C, out_t, out_h, out_w]`.
pub fn adaptive_avg_pool3d<F: Scalar>(x: &Tensor<F>, out: [usize; 3]) -> Result<Tensor<F>> {
    check(x.shape(), out)?;
    let (c, t, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (bt, bh, bw) = (bins(t, out[0]), bins(h, out[1]), bins(w, out[2]));
    let xd = x.data();
    let mut y = Vec::with_capacity(c * out.iter().product::<usize>());
    for ci in 0..c {
        for &(t0, t1) in &bt {
            for &(h0, h1) in &bh {
                for &(w0, w1) in &bw {
                    let mut acc = F::zero();
                    for ti in t0..t1 {
                        for hi in h0..h1 {
                            let off = ((ci * t + ti) * h + hi) * w;
                            acc += xd[off + w0..off + w1].iter().copied().sum();
                        }
                    }
                    let count = (t1 - t0) * (h1 - h0) * (w1 - w0);
                    y.push(acc / F::from_f64(count as f64));
                }
            }
        }
    }
    Tensor::new(vec![c, out[0], out[1], out[2]], y)
}

pub fn adaptive_avg_pool3d_backward<F: Scalar>(
    x_shape: &[usize],
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if grad_out.rank() != 4 {
        return Err(Error::Shape(format!(
            "adaptive_avg_pool3d grad {:?} is not rank 4",
            grad_out.shape()
        )));
    }
    let out = [grad_out.shape()[1], grad_out.shape()[2], grad_out.shape()[3]];
    check(x_shape, out)?;
    if grad_out.shape()[0] != x_shape[0] {
        return Err(Error::Shape(format!(
            "adaptive_avg_pool3d grad {:?} does not match input {:?}",
            grad_out.shape(),
            x_shape
        )));
    }
    let (c, t, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (bt, bh, bw) = (bins(t, out[0]), bins(h, out[1]), bins(w, out[2]));
    let mut gx = Tensor::zeros(x_shape);
    let gxd = gx.data_mut();
    let mut gy = grad_out.data().iter();
    for ci in 0..c {
        for &(t0, t1) in &bt {
            for &(h0, h1) in &bh {
                for &(w0, w1) in &bw {
                    let count = (t1 - t0) * (h1 - h0) * (w1 - w0);
                    let g = *gy.next().expect("grad length checked") / F::from_f64(count as f64);
                    for ti in t0..t1 {
                        for hi in h0..h1 {
                            let off = ((ci * t + ti) * h + hi) * w;
                            for v in &mut gxd[off + w0..off + w1] {
                                *v += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// `[C, L] -> [C, out_len]`.
pub fn adaptive_avg_pool1d<F: Scalar>(x: &Tensor<F>, out_len: usize) -> Result<Tensor<F>> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!(
            "adaptive_avg_pool1d input {:?} is not rank 2",
            x.shape()
        )));
    }
    let (c, l) = (x.shape()[0], x.shape()[1]);
    let y = adaptive_avg_pool3d(&x.clone().reshape(&[c, 1, 1, l])?, [1, 1, out_len])?;
    y.reshape(&[c, out_len])
}

pub fn adaptive_avg_pool1d_backward<F: Scalar>(
    x_shape: &[usize],
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if x_shape.len() != 2 || grad_out.rank() != 2 {
        return Err(Error::Shape(format!(
            "adaptive_avg_pool1d input {:?} with grad {:?}",
            x_shape,
            grad_out.shape()
        )));
    }
    let (c, l) = (x_shape[0], x_shape[1]);
    let gy = grad_out
        .clone()
        .reshape(&[grad_out.shape()[0], 1, 1, grad_out.shape()[1]])?;
    adaptive_avg_pool3d_backward(&[c, 1, 1, l], &gy)?.reshape(x_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_axis_with_near_equal_sizes() {
        for n in 1..20 {
            for m in 1..=n {
                let b = bins(n, m);
                assert_eq!(b[0].0, 0);
                assert_eq!(b[m - 1].1, n);
                let sizes: Vec<_> = b.iter().map(|(s, e)| e - s).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1, "{n} {m} {sizes:?}");
            }
        }
    }

    #[test]
    fn constant_input_pools_to_constant_per_channel() {
        let mut x = Tensor::<f32>::zeros(&[2, 5, 3, 3]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = if i < 45 { 0.25 } else { -1.5 };
        }
        let y = adaptive_avg_pool3d(&x, [1, 1, 1]).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1, 1]);
        assert!((y.data()[0] - 0.25).abs() < 1e-6);
        assert!((y.data()[1] + 1.5).abs() < 1e-6);
    }

    #[test]
    fn exact_divisor_is_block_mean() {
        let x = Tensor::new(vec![1, 4], vec![1.0f64, 3.0, 5.0, 7.0]).unwrap();
        let y = adaptive_avg_pool1d(&x, 2).unwrap();
        assert_eq!(y.data(), &[2.0, 6.0]);
    }

    #[test]
    fn zero_output_size_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        assert!(adaptive_avg_pool3d(&x, [0, 1, 1]).is_err());
    }
}
