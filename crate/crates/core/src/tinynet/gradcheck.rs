//! Central finite-difference gradient checking in `f64`.
//!
//! Each check builds a scalar objective `L = sum(r ⊙ op(x))` with a random
//! projection `r`, so the analytic gradient is `op_backward(r)` and the
//! numeric gradient is `(L(x + h e_i) - L(x - h e_i)) / 2h` per coordinate.

use rand::Rng as _;
use serde::Serialize;

use crate::rng::{self, Rng};

use super::*;

/// Finite-difference step.
pub const STEP: f64 = 1e-3;

/// Denominator floor of the relative error. Below this magnitude the test
/// degrades to an absolute comparison, which keeps coordinates whose true
/// gradient is (near) zero from reporting rounding noise as relative error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, REL_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, nan_max)
}

#[derive(Debug, Clone, Serialize)]
pub struct OpReport {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    /// Coordinates left out because a probe crossed a non-differentiable point.
    pub skipped: usize,
    /// The error the check is judged by.
    pub max_rel_err: f64,
    /// Worst single-coordinate relative error, for reference.
    pub max_coord_rel_err: f64,
}

impl OpReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }
}

/// Accumulates per-instance results for one op.
pub struct Tally {
    name: String,
    instances: usize,
    coordinates: usize,
    skipped: usize,
    max_rel_err: f64,
    max_coord_rel_err: f64,
}

fn nan_max(acc: f64, e: f64) -> f64 {
    if e.is_nan() || acc.is_nan() {
        f64::NAN
    } else {
        acc.max(e)
    }
}

/// `||a - n||_2 / max(||a||_2, ||n||_2, REL_FLOOR)` over a whole tensor.
pub fn tensor_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(REL_FLOOR)
}

impl Tally {
    pub fn new(name: impl Into<String>) -> Self {
        Tally {
            name: name.into(),
            instances: 0,
            coordinates: 0,
            skipped: 0,
            max_rel_err: 0.0,
            max_coord_rel_err: 0.0,
        }
    }

    /// One complete instance.
    pub fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.instances += 1;
        self.record_part(analytic, numeric);
    }

    /// Additional coordinates of the current instance.
    pub fn record_part(&mut self, analytic: &[f64], numeric: &[f64]) {
        let e = max_relative_error(analytic, numeric);
        self.coordinates += analytic.len();
        self.max_rel_err = nan_max(self.max_rel_err, e);
        self.max_coord_rel_err = nan_max(self.max_coord_rel_err, e);
    }

    /// A whole tensor of the current instance, judged by
    /// [`tensor_relative_error`].
    pub fn record_tensor(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.coordinates += analytic.len();
        self.max_rel_err = nan_max(self.max_rel_err, tensor_relative_error(analytic, numeric));
        self.max_coord_rel_err = nan_max(self.max_coord_rel_err, max_relative_error(analytic, numeric));
    }

    pub fn begin_instance(&mut self) {
        self.instances += 1;
    }

    pub fn skip(&mut self, n: usize) {
        self.skipped += n;
    }

    pub fn finish(self) -> OpReport {
        OpReport {
            name: self.name,
            instances: self.instances,
            coordinates: self.coordinates,
            skipped: self.skipped,
            max_rel_err: self.max_rel_err,
            max_coord_rel_err: self.max_coord_rel_err,
        }
    }
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/product agree")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), data.to_vec()).expect("same shape")
}

fn check_conv3d(rng: &mut Rng, instances: usize) -> [OpReport; 3] {
    let (mut tx, mut tw, mut tb) = (
        Tally::new("conv3d/input"),
        Tally::new("conv3d/weight"),
        Tally::new("conv3d/bias"),
    );
    for _ in 0..instances {
        let cin = rng.random_range(1..=2);
        let cout = rng.random_range(1..=3);
        let k = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let geom = Conv3dGeom {
            stride: [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)],
            padding: [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)],
        };
        let dims = [cin, rng.random_range(3..=5), rng.random_range(3..=5), rng.random_range(3..=5)];
        let x = random_tensor(rng, &dims, 1.0);
        let w = random_tensor(rng, &[cout, cin, k[0], k[1], k[2]], 1.0);
        let b = random_tensor(rng, &[cout], 1.0);
        let y = conv3d(&x, &w, &b, &geom).expect("valid geometry");
        let r = random_tensor(rng, y.shape(), 1.0);
        let g = conv3d_backward(&x, &w, &r, &geom).expect("valid geometry");
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            dot(conv3d(x, w, b, &geom).unwrap().data(), r.data())
        };
        tx.record(g.input.data(), &numeric_gradient(|d| loss(&with(&x, d), &w, &b), x.data(), STEP));
        tw.record(g.weight.data(), &numeric_gradient(|d| loss(&x, &with(&w, d), &b), w.data(), STEP));
        tb.record(g.bias.data(), &numeric_gradient(|d| loss(&x, &w, &with(&b, d)), b.data(), STEP));
    }
    [tx.finish(), tw.finish(), tb.finish()]
}

fn check_conv1d(rng: &mut Rng, instances: usize) -> [OpReport; 3] {
    let (mut tx, mut tw, mut tb) = (
        Tally::new("conv1d/input"),
        Tally::new("conv1d/weight"),
        Tally::new("conv1d/bias"),
    );
    for _ in 0..instances {
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let k = rng.random_range(1..=5);
        let geom = Conv1dGeom {
            stride: rng.random_range(1..=3),
            padding: rng.random_range(0..=2),
        };
        let len = rng.random_range(5..=12);
        let x = random_tensor(rng, &[cin, len], 1.0);
        let w = random_tensor(rng, &[cout, cin, k], 1.0);
        let b = random_tensor(rng, &[cout], 1.0);
        let y = conv1d(&x, &w, &b, &geom).expect("valid geometry");
        let r = random_tensor(rng, y.shape(), 1.0);
        let g = conv1d_backward(&x, &w, &r, &geom).expect("valid geometry");
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            dot(conv1d(x, w, b, &geom).unwrap().data(), r.data())
        };
        tx.record(g.input.data(), &numeric_gradient(|d| loss(&with(&x, d), &w, &b), x.data(), STEP));
        tw.record(g.weight.data(), &numeric_gradient(|d| loss(&x, &with(&w, d), &b), w.data(), STEP));
        tb.record(g.bias.data(), &numeric_gradient(|d| loss(&x, &w, &with(&b, d)), b.data(), STEP));
    }
    [tx.finish(), tw.finish(), tb.finish()]
}

fn check_relu(rng: &mut Rng, instances: usize) -> OpReport {
    let mut t = Tally::new("relu");
    for _ in 0..instances {
        let n = rng.random_range(4..=32);
        // Keep inputs at least 10h away from the kink so the central
        // difference never straddles it.
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.random_range(10.0 * STEP..1.0);
                if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let x = Tensor::from_vec1(data);
        let r = random_tensor(rng, &[n], 1.0);
        let g = relu_backward(&x, &r).unwrap();
        t.record(g.data(), &numeric_gradient(|d| dot(relu(&with(&x, d)).data(), r.data()), x.data(), STEP));
    }
    t.finish()
}

fn check_pools(rng: &mut Rng, instances: usize) -> [OpReport; 2] {
    let (mut t3, mut t1) = (Tally::new("adaptive_avg_pool3d"), Tally::new("adaptive_avg_pool1d"));
    for _ in 0..instances {
        let shape = [rng.random_range(1..=2), rng.random_range(2..=6), rng.random_range(1..=5), rng.random_range(1..=5)];
        let out = [rng.random_range(1..=shape[1]), rng.random_range(1..=shape[2]), rng.random_range(1..=shape[3])];
        let x = random_tensor(rng, &shape, 1.0);
        let r = random_tensor(rng, &[shape[0], out[0], out[1], out[2]], 1.0);
        let g = adaptive_avg_pool3d_backward(x.shape(), &r).unwrap();
        t3.record(g.data(), &numeric_gradient(|d| dot(adaptive_avg_pool3d(&with(&x, d), out).unwrap().data(), r.data()), x.data(), STEP));

        let (c, l) = (rng.random_range(1..=3), rng.random_range(2..=17));
        let o = rng.random_range(1..=l);
        let x = random_tensor(rng, &[c, l], 1.0);
        let r = random_tensor(rng, &[c, o], 1.0);
        let g = adaptive_avg_pool1d_backward(x.shape(), &r).unwrap();
        t1.record(g.data(), &numeric_gradient(|d| dot(adaptive_avg_pool1d(&with(&x, d), o).unwrap().data(), r.data()), x.data(), STEP));
    }
    [t3.finish(), t1.finish()]
}

fn check_linear(rng: &mut Rng, instances: usize) -> [OpReport; 3] {
    let (mut tx, mut tw, mut tb) = (
        Tally::new("linear/input"),
        Tally::new("linear/weight"),
        Tally::new("linear/bias"),
    );
    for _ in 0..instances {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let x = random_tensor(rng, &[n], 1.0);
        let w = random_tensor(rng, &[m, n], 1.0);
        let b = random_tensor(rng, &[m], 1.0);
        let r = random_tensor(rng, &[m], 1.0);
        let (gx, gw, gb) = linear_backward(&x, &w, &r).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(linear(x, w, b).unwrap().data(), r.data());
        tx.record(gx.data(), &numeric_gradient(|d| loss(&with(&x, d), &w, &b), x.data(), STEP));
        tw.record(gw.data(), &numeric_gradient(|d| loss(&x, &with(&w, d), &b), w.data(), STEP));
        tb.record(gb.data(), &numeric_gradient(|d| loss(&x, &w, &with(&b, d)), b.data(), STEP));
    }
    [tx.finish(), tw.finish(), tb.finish()]
}

fn check_pointwise(rng: &mut Rng, instances: usize) -> [OpReport; 3] {
    let (mut ts, mut tsm, mut tb) = (Tally::new("sigmoid"), Tally::new("softmax"), Tally::new("bce_loss"));
    for _ in 0..instances {
        let n = rng.random_range(1..=10);
        let z = random_tensor(rng, &[n], 4.0);
        let r = random_tensor(rng, &[n], 1.0);
        let analytic: Vec<f64> = z.data().iter().zip(r.data()).map(|(&z, &r)| sigmoid_backward(sigmoid(z), r)).collect();
        ts.record(&analytic, &numeric_gradient(|d| d.iter().zip(r.data()).map(|(&z, &r)| sigmoid(z) * r).sum(), z.data(), STEP));

        let y = softmax(z.data());
        let analytic = softmax_backward(&y, r.data());
        tsm.record(&analytic, &numeric_gradient(|d| dot(&softmax(d), r.data()), z.data(), STEP));

        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let labels: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let analytic: Vec<f64> = p.iter().zip(&labels).map(|(&p, &y)| bce_grad(p, y)).collect();
        tb.record(&analytic, &numeric_gradient(|d| d.iter().zip(&labels).map(|(&p, &y)| bce_loss(p, y)).sum(), &p, STEP));
    }
    [ts.finish(), tsm.finish(), tb.finish()]
}

/// Finite-difference check of every primitive op, `instances` random
/// problems each.
pub fn op_suite(seed: u64, instances: usize) -> Vec<OpReport> {
    let mut rng = rng::stream(seed, &[rng::tag::GRADCHECK]);
    let mut out = Vec::new();
    out.extend(check_conv3d(&mut rng, instances));
    out.extend(check_conv1d(&mut rng, instances));
    out.push(check_relu(&mut rng, instances));
    out.extend(check_pools(&mut rng, instances));
    out.extend(check_linear(&mut rng, instances));
    out.extend(check_pointwise(&mut rng, instances));
    out
}
