//! Cross-correlation in 3D and 1D, lowered to patch matrices (im2col) so
//! the inner loops are long contiguous dot products even on tiny maps.
//!
//! Layouts: 3D input `[C_in, T, H, W]`, weight `[C_out, C_in, kT, kH, kW]`;
//! 1D input `[C_in, L]`, weight `[C_out, C_in, k]`. Bias is `[C_out]`.
//! Zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dGeom {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dGeom {
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dGeom {
    fn as_3d(self) -> Conv3dGeom {
        Conv3dGeom {
            stride: [1, 1, self.stride],
            padding: [0, 0, self.padding],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

pub(crate) fn out_len(input: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || input + 2 * p < k {
        return None;
    }
    Some((input + 2 * p - k) / s + 1)
}

struct Dims {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    out: [usize; 3],
}

impl Dims {
    fn positions(&self) -> usize {
        self.out.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }
}

fn check3d<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, geom: &Conv3dGeom) -> Result<Dims> {
    if x.rank() != 4 || w.rank() != 5 || x.shape()[0] != w.shape()[1] {
        return Err(Error::Shape(format!(
            "conv3d input {:?} incompatible with weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let input = [x.shape()[1], x.shape()[2], x.shape()[3]];
    let kernel = [w.shape()[2], w.shape()[3], w.shape()[4]];
    let mut out = [0; 3];
    for d in 0..3 {
        out[d] = out_len(input[d], kernel[d], geom.stride[d], geom.padding[d]).ok_or_else(|| {
            Error::Shape(format!(
                "conv3d input {:?} too small for weight {:?} with {:?}",
                x.shape(),
                w.shape(),
                geom
            ))
        })?;
    }
    Ok(Dims {
        cin: x.shape()[0],
        cout: w.shape()[0],
        input,
        kernel,
        out,
    })
}

/// Visit every (patch slot, input offset) pair: `f(p * K + k, input_index)`
/// for in-bounds taps only; padded taps are skipped.
fn for_each_tap(d: &Dims, geom: &Conv3dGeom, mut f: impl FnMut(usize, usize)) {
    let [it_n, ih_n, iw_n] = d.input.map(|v| v as isize);
    let [kt_n, kh_n, kw_n] = d.kernel;
    let [ot_n, oh_n, ow_n] = d.out;
    let [st, sh, sw] = geom.stride.map(|v| v as isize);
    let [pt, ph, pw] = geom.padding.map(|v| v as isize);
    let k_len = d.patch();
    let mut p = 0;
    for ot in 0..ot_n as isize {
        for oh in 0..oh_n as isize {
            for ow in 0..ow_n as isize {
                let base = p * k_len;
                let mut k = 0;
                for ci in 0..d.cin as isize {
                    for kt in 0..kt_n as isize {
                        let it = ot * st + kt - pt;
                        if it < 0 || it >= it_n {
                            k += kh_n * kw_n;
                            continue;
                        }
                        for kh in 0..kh_n as isize {
                            let ih = oh * sh + kh - ph;
                            if ih < 0 || ih >= ih_n {
                                k += kw_n;
                                continue;
                            }
                            let row = ((ci * it_n + it) * ih_n + ih) * iw_n;
                            for kw in 0..kw_n as isize {
                                let iw = ow * sw + kw - pw;
                                if iw >= 0 && iw < iw_n {
                                    f(base + k, (row + iw) as usize);
                                }
                                k += 1;
                            }
                        }
                    }
                }
                p += 1;
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorises.
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = acc.iter().copied().sum::<F>();
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub fn conv3d<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    geom: &Conv3dGeom,
) -> Result<Tensor<F>> {
    let d = check3d(x, w, geom)?;
    b.expect_shape(&[d.cout])?;
    let (np, nk) = (d.positions(), d.patch());
    let mut col = vec![F::zero(); np * nk];
    let xd = x.data();
    for_each_tap(&d, geom, |slot, src| col[slot] = xd[src]);
    let (wd, bd) = (w.data(), b.data());
    let mut y = vec![F::zero(); d.cout * np];
    for (p, patch) in col.chunks_exact(nk).enumerate() {
        for co in 0..d.cout {
            y[co * np + p] = bd[co] + dot(&wd[co * nk..(co + 1) * nk], patch);
        }
    }
    Tensor::new(vec![d.cout, d.out[0], d.out[1], d.out[2]], y)
}

pub fn conv3d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
    geom: &Conv3dGeom,
) -> Result<ConvGrads<F>> {
    conv3d_backward_with(x, w, grad_out, geom, true)
}

/// With `input_grad == false` the returned input gradient is all zeros.
pub(crate) fn conv3d_backward_with<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
    geom: &Conv3dGeom,
    input_grad: bool,
) -> Result<ConvGrads<F>> {
    let d = check3d(x, w, geom)?;
    grad_out.expect_shape(&[d.cout, d.out[0], d.out[1], d.out[2]])?;
    let (np, nk) = (d.positions(), d.patch());
    let mut col = vec![F::zero(); np * nk];
    let xd = x.data();
    for_each_tap(&d, geom, |slot, src| col[slot] = xd[src]);

    let (wd, gy) = (w.data(), grad_out.data());
    let mut gw = vec![F::zero(); d.cout * nk];
    let mut gcol = vec![F::zero(); np * nk];
    for p in 0..np {
        let patch = &col[p * nk..(p + 1) * nk];
        let gpatch = &mut gcol[p * nk..(p + 1) * nk];
        for co in 0..d.cout {
            let g = gy[co * np + p];
            axpy(g, patch, &mut gw[co * nk..(co + 1) * nk]);
            if input_grad {
                axpy(g, &wd[co * nk..(co + 1) * nk], gpatch);
            }
        }
    }
    let mut gx = x.zeros_like();
    if input_grad {
        let gxd = gx.data_mut();
        for_each_tap(&d, geom, |slot, src| gxd[src] += gcol[slot]);
    }
    let gb = (0..d.cout).map(|co| gy[co * np..(co + 1) * np].iter().copied().sum()).collect();
    Ok(ConvGrads {
        input: gx,
        weight: Tensor::new(w.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![d.cout], gb)?,
    })
}

fn lift1d<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    if x.rank() != 2 || w.rank() != 3 {
        return Err(Error::Shape(format!(
            "conv1d input {:?} incompatible with weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (c, l) = (x.shape()[0], x.shape()[1]);
    let (o, i, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    Ok((x.clone().reshape(&[c, 1, 1, l])?, w.clone().reshape(&[o, i, 1, 1, k])?))
}

pub fn conv1d<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    geom: &Conv1dGeom,
) -> Result<Tensor<F>> {
    let (x3, w3) = lift1d(x, w)?;
    let y = conv3d(&x3, &w3, b, &geom.as_3d())?;
    let (c, l) = (y.shape()[0], y.shape()[3]);
    y.reshape(&[c, l])
}

pub fn conv1d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
    geom: &Conv1dGeom,
) -> Result<ConvGrads<F>> {
    conv1d_backward_with(x, w, grad_out, geom, true)
}

pub(crate) fn conv1d_backward_with<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad_out: &Tensor<F>,
    geom: &Conv1dGeom,
    input_grad: bool,
) -> Result<ConvGrads<F>> {
    let (x3, w3) = lift1d(x, w)?;
    if grad_out.rank() != 2 {
        return Err(Error::Shape(format!(
            "conv1d grad_out {:?} is not rank 2",
            grad_out.shape()
        )));
    }
    let gy3 = grad_out
        .clone()
        .reshape(&[grad_out.shape()[0], 1, 1, grad_out.shape()[1]])?;
    let g = conv3d_backward_with(&x3, &w3, &gy3, &geom.as_3d(), input_grad)?;
    Ok(ConvGrads {
        input: g.input.reshape(x.shape())?,
        weight: g.weight.reshape(w.shape())?,
        bias: g.bias,
    })
}
