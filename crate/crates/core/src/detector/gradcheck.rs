//! Finite-difference checks of the detector's hand-written backward pass.

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::tinynet::gradcheck::{numeric_gradient, random_tensor, OpReport, Tally, STEP};
use crate::tinynet::Scalar as _;
use crate::tinynet::Tensor;

use super::*;

/// Input shape used by [`DetectorConfig::tiny`].
pub fn tiny_input() -> InputShape {
    InputShape { t_v: 4, c_v: 1, h: 4, w: 4, t_a: 32 }
}

fn random_input(rng: &mut Rng, shape: &InputShape) -> ModelInput<f64> {
    let v = [shape.c_v, shape.t_v, shape.h, shape.w];
    let n: usize = v.iter().product();
    let visual = Tensor::new(v.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).expect("shape");
    let audio = Tensor::new(vec![1, shape.t_a], (0..shape.t_a).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape");
    ModelInput { visual, audio }
}

fn random_detector(rng: &mut Rng, config: &DetectorConfig, input: &InputShape) -> Detector<f64> {
    let mut det = Detector::<f64>::new(config.clone(), *input, rng.random()).expect("valid tiny config");
    for (name, value) in det.params_mut().names().to_vec().iter().zip(0..) {
        if name.ends_with(".bias") {
            let t = &mut det.params_mut().values_mut()[value];
            for b in t.data_mut() {
                *b = rng.random_range(-0.1..0.1);
            }
        }
    }
    det
}

fn check_distance(rng: &mut Rng, instances: usize) -> OpReport {
    let mut tally = Tally::new("distance_map");
    for _ in 0..instances {
        let (tp, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let fv = random_tensor(rng, &[tp, c], 1.0);
        let fa = random_tensor(rng, &[tp, c], 1.0);
        let r: Vec<f64> = (0..tp).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |v: &[f64], a: &[f64]| -> f64 {
            let fv = FeatureMap::new(Tensor::new(vec![tp, c], v.to_vec()).expect("shape")).expect("rank 2");
            let fa = FeatureMap::new(Tensor::new(vec![tp, c], a.to_vec()).expect("shape")).expect("rank 2");
            distance_map(&fv, &fa).expect("same shape").iter().zip(&r).map(|(m, r)| m * r).sum()
        };
        let (gv, ga) = distance_map_backward(
            &FeatureMap::new(fv.clone()).expect("rank 2"),
            &FeatureMap::new(fa.clone()).expect("rank 2"),
            &r,
        )
        .expect("same shape");
        let nv = numeric_gradient(|v| objective(v, fa.data()), fv.data(), STEP);
        let na = numeric_gradient(|a| objective(fv.data(), a), fa.data(), STEP);
        tally.record(gv.values().data(), &nv);
        tally.record_part(ga.values().data(), &na);
    }
    tally.finish()
}

/// Analytic and numeric loss gradients over every parameter whose name
/// satisfies `select`, judged per coordinate or, with `per_tensor`, by the
/// relative error of each whole parameter tensor. A coordinate whose `±STEP` probe flips the sign of
/// any ReLU input is skipped: the loss has a kink inside the difference
/// stencil there and the central difference does not estimate the gradient.
fn check_params(
    rng: &mut Rng,
    instances: usize,
    name: &str,
    config: &DetectorConfig,
    select: impl Fn(&str) -> bool,
    per_tensor: bool,
) -> OpReport {
    let input = tiny_input();
    let mut tally = Tally::new(name);
    for _ in 0..instances {
        let det = random_detector(rng, config, &input);
        let x = random_input(rng, &input);
        let target = f64::from(rng.random_range(0..2u8));
        let mut grads = det.params().zero_grads();
        det.loss_and_grad(&x, target, &mut grads).expect("tiny forward");
        let (_, base) = det.loss_with_pattern(&x, target).expect("tiny forward");
        tally.begin_instance();
        let mut probe = det.clone();
        for (idx, pname) in det.params().names().iter().enumerate() {
            if !select(pname) {
                continue;
            }
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for j in 0..det.params().values()[idx].len() {
                let orig = det.params().values()[idx].data()[j];
                let mut eval = |v: f64| {
                    probe.params_mut().values_mut()[idx].data_mut()[j] = v;
                    let r = probe.loss_with_pattern(&x, target).expect("tiny forward");
                    probe.params_mut().values_mut()[idx].data_mut()[j] = orig;
                    r
                };
                let (up, pu) = eval(orig + STEP);
                let (down, pd) = eval(orig - STEP);
                if pu != base || pd != base {
                    tally.skip(1);
                    continue;
                }
                analytic.push(grads[idx].data()[j].to_f64());
                numeric.push((up - down) / (2.0 * STEP));
            }
            if per_tensor {
                tally.record_tensor(&analytic, &numeric);
            } else {
                tally.record_part(&analytic, &numeric);
            }
        }
    }
    tally.finish()
}

/// Distance map, attention projections and the full tiny detector
/// (`T'=2`, `C'=4`), each over `instances` random draws. The first two are
/// judged per coordinate, the full model per parameter tensor.
pub fn model_suite(seed: u64, instances: usize) -> Vec<OpReport> {
    let mut rng = rng::stream(seed, &[rng::tag::GRADCHECK, 1]);
    let config = DetectorConfig::tiny(2, 4);
    vec![
        check_distance(&mut rng, instances),
        check_params(&mut rng, instances, "attention", &config, |n| n.starts_with("attention."), false),
        check_params(&mut rng, instances, "detector", &config, |_| true, true),
    ]
}
