use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::avdata::{
    read_container, write_container, AVPair, AudioClip, Container, NamedTensor, TemporalSequence,
    VisualClip,
};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tinynet::conv::{conv1d_backward_with, conv3d_backward_with};
use crate::tinynet::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, adaptive_avg_pool3d,
    adaptive_avg_pool3d_backward, bce_grad, bce_loss, conv1d, conv1d_backward, conv3d,
    conv3d_backward, linear,
    linear_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward,
    Conv1dGeom, Conv3dGeom, ParamId, ParamStore, Scalar, Tensor,
};

use super::{AudioBlock, DetectorConfig, InputShape, VisualBlock};

/// Per-timestep features, stored `(T', C')`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F> {
    values: Tensor<F>,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn new(values: Tensor<F>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Shape(format!("feature map must be (T', C'), got {:?}", values.shape())));
        }
        Ok(FeatureMap { values })
    }

    fn from_channel_major(cm: &Tensor<F>) -> Self {
        FeatureMap { values: cm.transpose2() }
    }

    pub(crate) fn channel_major(&self) -> Tensor<F> {
        self.values.transpose2()
    }

    pub fn t_prime(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor<F> {
        &self.values
    }

    pub fn at(&self, t: usize) -> &[F] {
        let c = self.channels();
        &self.values.data()[t * c..(t + 1) * c]
    }
}

/// `m_t = || fv_t - fa_t ||_2` for every timestep.
pub fn distance_map<F: Scalar>(fv: &FeatureMap<F>, fa: &FeatureMap<F>) -> Result<Vec<F>> {
    fa.values.expect_shape(fv.values.shape())?;
    Ok((0..fv.t_prime())
        .map(|t| {
            fv.at(t)
                .iter()
                .zip(fa.at(t))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<F>()
                .sqrt()
        })
        .collect())
}

/// Gradients of `sum(g ⊙ distance_map(fv, fa))` with respect to both
/// feature maps. Timesteps with zero distance contribute nothing.
pub fn distance_map_backward<F: Scalar>(
    fv: &FeatureMap<F>,
    fa: &FeatureMap<F>,
    grad: &[F],
) -> Result<(FeatureMap<F>, FeatureMap<F>)> {
    let m = distance_map(fv, fa)?;
    if grad.len() != m.len() {
        return Err(Error::Shape(format!("distance grad has {} entries for T'={}", grad.len(), m.len())));
    }
    let (cv, ca) = (fv.channel_major(), fa.channel_major());
    let (mut gv, mut ga) = (cv.zeros_like(), ca.zeros_like());
    distance_backward_cm(&cv, &ca, &m, grad, &mut gv, &mut ga);
    Ok((FeatureMap::from_channel_major(&gv), FeatureMap::from_channel_major(&ga)))
}

fn distance_backward_cm<F: Scalar>(
    fv: &Tensor<F>,
    fa: &Tensor<F>,
    m: &[F],
    grad: &[F],
    gfv: &mut Tensor<F>,
    gfa: &mut Tensor<F>,
) {
    let (c_prime, tp) = (fv.shape()[0], fv.shape()[1]);
    for t in 0..tp {
        if m[t] <= F::zero() {
            continue;
        }
        let g = grad[t] / m[t];
        for c in 0..c_prime {
            let i = c * tp + t;
            let d = fv.data()[i] - fa.data()[i];
            gfv.data_mut()[i] += g * d;
            gfa.data_mut()[i] -= g * d;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds<G> {
    w: ParamId,
    b: ParamId,
    geom: G,
}

#[derive(Debug, Clone)]
enum VLayer {
    Pool { out: [usize; 3] },
    Conv(ConvIds<Conv3dGeom>),
    Residual {
        a: ConvIds<Conv3dGeom>,
        b: ConvIds<Conv3dGeom>,
        shortcut: Option<ConvIds<Conv3dGeom>>,
    },
}

#[derive(Debug, Clone, Copy)]
struct Head {
    ev: ConvIds<Conv1dGeom>,
    ea: ConvIds<Conv1dGeom>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Inputs laid out for the extractors: visual `[C, T, H, W]`, audio `[1, T_a]`.
#[derive(Debug, Clone)]
pub struct ModelInput<F> {
    pub visual: Tensor<F>,
    pub audio: Tensor<F>,
}

impl<F: Scalar> ModelInput<F> {
    pub fn from_clips(visual: &VisualClip, audio: &AudioClip) -> Result<Self> {
        let [t, c, h, w] = visual.shape();
        let v: Tensor<F> = Tensor::new(
            vec![t, c, h * w],
            visual.raw().iter().map(|&x| F::from_f64(x as f64)).collect(),
        )?;
        let visual = v.swap_leading().reshape(&[c, t, h, w])?;
        let audio = Tensor::new(
            vec![1, audio.len()],
            audio.raw().iter().map(|&x| F::from_f64(x as f64)).collect(),
        )?;
        Ok(ModelInput { visual, audio })
    }

    pub fn from_pair(pair: &AVPair) -> Result<Self> {
        Self::from_clips(&pair.visual, &pair.audio)
    }
}

/// Everything a forward pass produces, intermediate maps included.
#[derive(Debug, Clone)]
pub struct Forward<F> {
    /// Probability that the pair is fake.
    pub y: F,
    pub distance: Vec<F>,
    /// Pre-softmax attention logits `a'` (zeros when attention is off).
    pub attention_logits: Vec<F>,
    pub attention: Vec<F>,
    pub attended: Vec<F>,
    pub visual_features: FeatureMap<F>,
    pub audio_features: FeatureMap<F>,
}

enum VCache<F> {
    Pool { in_shape: Vec<usize> },
    Conv { input: Tensor<F>, pre: Tensor<F> },
    Residual { input: Tensor<F>, pre_a: Tensor<F>, hidden: Tensor<F>, pre_out: Tensor<F> },
}

struct ACache<F> {
    input: Tensor<F>,
    pre: Tensor<F>,
}

struct HeadCache<F> {
    fv: Tensor<F>,
    fa: Tensor<F>,
    ev: Tensor<F>,
    ea: Tensor<F>,
    mhat: Tensor<F>,
    hidden_pre: Tensor<F>,
    hidden: Tensor<F>,
}

struct Trace<F> {
    visual: Vec<VCache<F>>,
    visual_preshape: Vec<usize>,
    audio: Vec<ACache<F>>,
    audio_preshape: Vec<usize>,
    head: HeadCache<F>,
}

/// The distance-map detector: two extractors, per-timestep L2 distance,
/// cross-modal attention and a one-hidden-layer classifier.
#[derive(Debug, Clone)]
pub struct Detector<F> {
    config: DetectorConfig,
    input: InputShape,
    params: ParamStore<F>,
    visual: Vec<VLayer>,
    audio: Vec<ConvIds<Conv1dGeom>>,
    head: Head,
    /// Index of the first visual/audio layer owning parameters; no input
    /// gradient is needed below it.
    visual_first_param: usize,
}

fn kaiming<F: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/product agree")
}

impl<F: Scalar> Detector<F> {
    /// Build with uniform fan-in (Kaiming) weights drawn from `seed` and
    /// zero biases.
    pub fn new(config: DetectorConfig, input: InputShape, seed: u64) -> Result<Self> {
        config.validate(&input)?;
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let mut params = ParamStore::new();
        let trace = config.trace_visual(&input)?;

        let mut conv3 = |params: &mut ParamStore<F>, name: String, cin: usize, cout: usize, k: [usize; 3], geom: Conv3dGeom| {
            let fan_in = cin * k.iter().product::<usize>();
            let w = params.push(format!("{name}.weight"), kaiming(&mut rng, &[cout, cin, k[0], k[1], k[2]], fan_in));
            let b = params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
            ConvIds { w, b, geom }
        };
        let mut visual = Vec::new();
        for (idx, block) in config.visual_blocks.iter().enumerate() {
            let (cin, out_shape) = (trace[idx][0], trace[idx + 1]);
            visual.push(match *block {
                VisualBlock::AvgPool { .. } => VLayer::Pool {
                    out: [out_shape[1], out_shape[2], out_shape[3]],
                },
                VisualBlock::Conv { out_channels, kernel, stride, padding } => VLayer::Conv(conv3(
                    &mut params,
                    format!("visual.{idx}.conv"),
                    cin,
                    out_channels,
                    kernel,
                    Conv3dGeom { stride, padding },
                )),
                VisualBlock::Residual { out_channels, stride } => {
                    let (ga, gb, gs) = DetectorConfig::residual_geoms(stride);
                    let a = conv3(&mut params, format!("visual.{idx}.conv_a"), cin, out_channels, [3; 3], ga);
                    let b = conv3(&mut params, format!("visual.{idx}.conv_b"), out_channels, out_channels, [3; 3], gb);
                    let reshapes = cin != out_channels || stride != [1; 3];
                    let shortcut = reshapes
                        .then(|| conv3(&mut params, format!("visual.{idx}.shortcut"), cin, out_channels, [1; 3], gs));
                    VLayer::Residual { a, b, shortcut }
                }
            });
        }
        let visual_first_param = visual
            .iter()
            .position(|l| !matches!(l, VLayer::Pool { .. }))
            .unwrap_or(visual.len());

        let mut conv1 = |params: &mut ParamStore<F>, name: String, cin: usize, cout: usize, k: usize, geom: Conv1dGeom| {
            let w = params.push(format!("{name}.weight"), kaiming(&mut rng, &[cout, cin, k], cin * k));
            let b = params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
            ConvIds { w, b, geom }
        };
        let mut audio = Vec::new();
        let mut cin = 1;
        for (idx, AudioBlock { out_channels, kernel, .. }) in config.audio_blocks.iter().enumerate() {
            let geom = config.audio_blocks[idx].geom();
            audio.push(conv1(&mut params, format!("audio.{idx}.conv"), cin, *out_channels, *kernel, geom));
            cin = *out_channels;
        }

        let (c, ca, k) = (config.c_prime, config.attention_channels(), config.attention_kernel);
        let att_geom = Conv1dGeom { stride: 1, padding: k / 2 };
        let ev = conv1(&mut params, "attention.visual".into(), c, ca, k, att_geom);
        let ea = conv1(&mut params, "attention.audio".into(), c, ca, k, att_geom);
        let (tp, hid) = (config.t_prime, config.hidden);
        let w1 = params.push("classifier.0.weight", kaiming(&mut rng, &[hid, tp], tp));
        let b1 = params.push("classifier.0.bias", Tensor::zeros(&[hid]));
        let w2 = params.push("classifier.1.weight", kaiming(&mut rng, &[1, hid], hid));
        let b2 = params.push("classifier.1.bias", Tensor::zeros(&[1]));

        Ok(Detector {
            config,
            input,
            params,
            visual,
            audio,
            head: Head { ev, ea, w1, b1, w2, b2 },
            visual_first_param,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn input_shape(&self) -> &InputShape {
        &self.input
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn cast<G: Scalar>(&self) -> Detector<G> {
        Detector {
            config: self.config.clone(),
            input: self.input,
            params: self.params.cast(),
            visual: self.visual.clone(),
            audio: self.audio.clone(),
            head: self.head,
            visual_first_param: self.visual_first_param,
        }
    }

    fn check_input(&self, x: &ModelInput<F>) -> Result<()> {
        let i = &self.input;
        if x.visual.shape() != [i.c_v, i.t_v, i.h, i.w] || x.audio.shape() != [1, i.t_a] {
            return Err(Error::Shape(format!(
                "detector expects visual (T,C,H,W)=({}, {}, {}, {}) and audio {}, got visual [C,T,H,W]={:?} audio {:?}",
                i.t_v,
                i.c_v,
                i.h,
                i.w,
                i.t_a,
                x.visual.shape(),
                x.audio.shape()
            )));
        }
        Ok(())
    }

    fn visual_forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<VCache<F>>, Vec<usize>)> {
        let p = &self.params;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.visual.len());
        for layer in &self.visual {
            match layer {
                VLayer::Pool { out } => {
                    let next = adaptive_avg_pool3d(&h, *out)?;
                    caches.push(VCache::Pool { in_shape: h.shape().to_vec() });
                    h = next;
                }
                VLayer::Conv(c) => {
                    let pre = conv3d(&h, p.get(c.w), p.get(c.b), &c.geom)?;
                    let next = relu(&pre);
                    caches.push(VCache::Conv { input: h, pre });
                    h = next;
                }
                VLayer::Residual { a, b, shortcut } => {
                    let pre_a = conv3d(&h, p.get(a.w), p.get(a.b), &a.geom)?;
                    let hidden = relu(&pre_a);
                    let mut pre_out = conv3d(&hidden, p.get(b.w), p.get(b.b), &b.geom)?;
                    match shortcut {
                        Some(s) => pre_out.add_assign(&conv3d(&h, p.get(s.w), p.get(s.b), &s.geom)?)?,
                        None => pre_out.add_assign(&h)?,
                    }
                    let next = relu(&pre_out);
                    caches.push(VCache::Residual { input: h, pre_a, hidden, pre_out });
                    h = next;
                }
            }
        }
        let preshape = h.shape().to_vec();
        let pooled = adaptive_avg_pool3d(&h, [self.config.t_prime, 1, 1])?;
        let c = pooled.shape()[0];
        Ok((pooled.reshape(&[c, self.config.t_prime])?, caches, preshape))
    }

    fn visual_backward(&self, trace: &Trace<F>, g: &Tensor<F>, grads: &mut [Tensor<F>]) -> Result<()> {
        let (c, t) = (g.shape()[0], g.shape()[1]);
        let g4 = g.clone().reshape(&[c, t, 1, 1])?;
        let mut g = adaptive_avg_pool3d_backward(&trace.visual_preshape, &g4)?;
        let p = &self.params;
        for (idx, (layer, cache)) in self.visual.iter().zip(&trace.visual).enumerate().rev() {
            let need_input = idx > self.visual_first_param;
            match (layer, cache) {
                (VLayer::Pool { .. }, VCache::Pool { in_shape }) => {
                    if !need_input {
                        break;
                    }
                    g = adaptive_avg_pool3d_backward(in_shape, &g)?;
                }
                (VLayer::Conv(cv), VCache::Conv { input, pre }) => {
                    let gp = relu_backward(pre, &g)?;
                    let cg = conv3d_backward_with(input, p.get(cv.w), &gp, &cv.geom, need_input)?;
                    grads[cv.w.0].add_assign(&cg.weight)?;
                    grads[cv.b.0].add_assign(&cg.bias)?;
                    g = cg.input;
                }
                (VLayer::Residual { a, b, shortcut }, VCache::Residual { input, pre_a, hidden, pre_out }) => {
                    let g_out = relu_backward(pre_out, &g)?;
                    let cb = conv3d_backward(hidden, p.get(b.w), &g_out, &b.geom)?;
                    grads[b.w.0].add_assign(&cb.weight)?;
                    grads[b.b.0].add_assign(&cb.bias)?;
                    let g_a = relu_backward(pre_a, &cb.input)?;
                    let ca = conv3d_backward_with(input, p.get(a.w), &g_a, &a.geom, need_input)?;
                    grads[a.w.0].add_assign(&ca.weight)?;
                    grads[a.b.0].add_assign(&ca.bias)?;
                    let mut g_in = ca.input;
                    match shortcut {
                        Some(s) => {
                            let cs = conv3d_backward_with(input, p.get(s.w), &g_out, &s.geom, need_input)?;
                            grads[s.w.0].add_assign(&cs.weight)?;
                            grads[s.b.0].add_assign(&cs.bias)?;
                            g_in.add_assign(&cs.input)?;
                        }
                        None => g_in.add_assign(&g_out)?,
                    }
                    g = g_in;
                }
                _ => unreachable!("cache layout follows the layer list"),
            }
        }
        Ok(())
    }

    fn audio_forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<ACache<F>>, Vec<usize>)> {
        let p = &self.params;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.audio.len());
        for c in &self.audio {
            let pre = conv1d(&h, p.get(c.w), p.get(c.b), &c.geom)?;
            let next = relu(&pre);
            caches.push(ACache { input: h, pre });
            h = next;
        }
        let preshape = h.shape().to_vec();
        Ok((adaptive_avg_pool1d(&h, self.config.t_prime)?, caches, preshape))
    }

    fn audio_backward(&self, trace: &Trace<F>, g: &Tensor<F>, grads: &mut [Tensor<F>]) -> Result<()> {
        let mut g = adaptive_avg_pool1d_backward(&trace.audio_preshape, g)?;
        let p = &self.params;
        for (idx, (c, cache)) in self.audio.iter().zip(&trace.audio).enumerate().rev() {
            let gp = relu_backward(&cache.pre, &g)?;
            let cg = conv1d_backward_with(&cache.input, p.get(c.w), &gp, &c.geom, idx > 0)?;
            grads[c.w.0].add_assign(&cg.weight)?;
            grads[c.b.0].add_assign(&cg.bias)?;
            g = cg.input;
        }
        Ok(())
    }

    /// Attention logits and projections from channel-major `[C', T']`
    /// features. Returns `(a', E_v(F_v), E_a(F_a))`.
    pub(crate) fn attention_logits(&self, fv: &Tensor<F>, fa: &Tensor<F>) -> Result<(Vec<F>, Tensor<F>, Tensor<F>)> {
        let (p, h) = (&self.params, &self.head);
        let tp = self.config.t_prime;
        if !self.config.attention {
            return Ok((vec![F::zero(); tp], Tensor::zeros(&[0]), Tensor::zeros(&[0])));
        }
        let ev = conv1d(fv, p.get(h.ev.w), p.get(h.ev.b), &h.ev.geom)?;
        let ea = conv1d(fa, p.get(h.ea.w), p.get(h.ea.b), &h.ea.geom)?;
        let scale = F::from_f64(self.config.c_prime as f64);
        let ca = ev.shape()[0];
        let logits = (0..tp)
            .map(|t| (0..ca).map(|c| ev.data()[c * tp + t] * ea.data()[c * tp + t]).sum::<F>() / scale)
            .collect();
        Ok((logits, ev, ea))
    }

    fn attention_from_logits(&self, logits: &[F]) -> Vec<F> {
        if self.config.attention {
            softmax(logits)
        } else {
            let tp = self.config.t_prime;
            vec![F::one() / F::from_f64(tp as f64); tp]
        }
    }

    /// Softmax attention over `T'` (uniform when attention is disabled).
    pub fn attention_map(&self, fv: &FeatureMap<F>, fa: &FeatureMap<F>) -> Result<Vec<F>> {
        self.check_features(fv, fa)?;
        let (logits, _, _) = self.attention_logits(&fv.channel_major(), &fa.channel_major())?;
        Ok(self.attention_from_logits(&logits))
    }

    fn check_features(&self, fv: &FeatureMap<F>, fa: &FeatureMap<F>) -> Result<()> {
        let want = [self.config.t_prime, self.config.c_prime];
        fv.values.expect_shape(&want)?;
        fa.values.expect_shape(&want)
    }

    fn classify_cached(&self, attended: &[F]) -> Result<(F, Tensor<F>, Tensor<F>)> {
        let (p, h) = (&self.params, &self.head);
        let x = Tensor::from_vec1(attended.to_vec());
        let hidden_pre = linear(&x, p.get(h.w1), p.get(h.b1))?;
        let hidden = relu(&hidden_pre);
        let z = linear(&hidden, p.get(h.w2), p.get(h.b2))?.data()[0];
        Ok((sigmoid(z), hidden_pre, hidden))
    }

    /// Fake probability for an attended distance map `m ⊙ a`.
    pub fn classify(&self, attended: &[F]) -> Result<F> {
        Ok(self.classify_cached(attended)?.0)
    }

    /// Visual features `(T', C')` for a clip.
    pub fn extract_visual(&self, clip: &VisualClip) -> Result<FeatureMap<F>> {
        let x = ModelInput::from_clips(clip, &AudioClip::zeros(self.input.t_a))?;
        self.check_input(&x)?;
        Ok(FeatureMap::from_channel_major(&self.visual_forward(&x.visual)?.0))
    }

    /// Audio features `(T', C')` for a clip.
    pub fn extract_audio(&self, clip: &AudioClip) -> Result<FeatureMap<F>> {
        let [t, c, h, w] = [self.input.t_v, self.input.c_v, self.input.h, self.input.w];
        let x = ModelInput::from_clips(&VisualClip::zeros([t, c, h, w]), clip)?;
        self.check_input(&x)?;
        Ok(FeatureMap::from_channel_major(&self.audio_forward(&x.audio)?.0))
    }

    fn forward_traced(&self, x: &ModelInput<F>) -> Result<(Forward<F>, Trace<F>)> {
        self.check_input(x)?;
        let (fv, visual, visual_preshape) = self.visual_forward(&x.visual)?;
        let (fa, audio, audio_preshape) = self.audio_forward(&x.audio)?;
        let visual_features = FeatureMap::from_channel_major(&fv);
        let audio_features = FeatureMap::from_channel_major(&fa);
        let distance = distance_map(&visual_features, &audio_features)?;
        let (attention_logits, ev, ea) = self.attention_logits(&fv, &fa)?;
        let attention = self.attention_from_logits(&attention_logits);
        let attended: Vec<F> = distance.iter().zip(&attention).map(|(&m, &a)| m * a).collect();
        let (y, hidden_pre, hidden) = self.classify_cached(&attended)?;
        let trace = Trace {
            visual,
            visual_preshape,
            audio,
            audio_preshape,
            head: HeadCache { fv, fa, ev, ea, mhat: Tensor::from_vec1(attended.clone()), hidden_pre, hidden },
        };
        let out = Forward { y, distance, attention_logits, attention, attended, visual_features, audio_features };
        Ok((out, trace))
    }

    pub fn forward(&self, x: &ModelInput<F>) -> Result<Forward<F>> {
        Ok(self.forward_traced(x)?.0)
    }

    /// Fake probability for a pair.
    pub fn predict(&self, pair: &AVPair) -> Result<F> {
        Ok(self.forward(&ModelInput::from_pair(pair)?)?.y)
    }

    /// Backpropagate `dL/dy` and add parameter gradients into `grads`.
    fn backward(&self, out: &Forward<F>, trace: &Trace<F>, dy: F, grads: &mut [Tensor<F>]) -> Result<()> {
        let (p, h, hc) = (&self.params, &self.head, &trace.head);
        let tp = self.config.t_prime;
        let dz = sigmoid_backward(out.y, dy);
        let (dhidden, dw2, db2) = linear_backward(&hc.hidden, p.get(h.w2), &Tensor::from_vec1(vec![dz]))?;
        grads[h.w2.0].add_assign(&dw2)?;
        grads[h.b2.0].add_assign(&db2)?;
        let dpre = relu_backward(&hc.hidden_pre, &dhidden)?;
        let (dmhat, dw1, db1) = linear_backward(&hc.mhat, p.get(h.w1), &dpre)?;
        grads[h.w1.0].add_assign(&dw1)?;
        grads[h.b1.0].add_assign(&db1)?;

        let dm = dmhat.data();
        let mut gfv = hc.fv.zeros_like();
        let mut gfa = hc.fa.zeros_like();
        if self.config.attention {
            let da: Vec<F> = dm.iter().zip(&out.distance).map(|(&g, &m)| g * m).collect();
            let dlogit = softmax_backward(&out.attention, &da);
            let scale = F::from_f64(self.config.c_prime as f64);
            let ca = hc.ev.shape()[0];
            let mut dev = hc.ev.zeros_like();
            let mut dea = hc.ea.zeros_like();
            for c in 0..ca {
                for t in 0..tp {
                    let i = c * tp + t;
                    dev.data_mut()[i] = dlogit[t] * hc.ea.data()[i] / scale;
                    dea.data_mut()[i] = dlogit[t] * hc.ev.data()[i] / scale;
                }
            }
            let cv = conv1d_backward(&hc.fv, p.get(h.ev.w), &dev, &h.ev.geom)?;
            let ca_ = conv1d_backward(&hc.fa, p.get(h.ea.w), &dea, &h.ea.geom)?;
            grads[h.ev.w.0].add_assign(&cv.weight)?;
            grads[h.ev.b.0].add_assign(&cv.bias)?;
            grads[h.ea.w.0].add_assign(&ca_.weight)?;
            grads[h.ea.b.0].add_assign(&ca_.bias)?;
            gfv.add_assign(&cv.input)?;
            gfa.add_assign(&ca_.input)?;
        }
        let gm: Vec<F> = dm.iter().zip(&out.attention).map(|(&g, &a)| g * a).collect();
        distance_backward_cm(&hc.fv, &hc.fa, &out.distance, &gm, &mut gfv, &mut gfa);
        self.visual_backward(trace, &gfv, grads)?;
        self.audio_backward(trace, &gfa, grads)
    }

    /// BCE loss for one sample; gradients are added into `grads`, which
    /// must follow the parameter order. Returns `(loss, y)`.
    pub fn loss_and_grad(&self, x: &ModelInput<F>, target: F, grads: &mut [Tensor<F>]) -> Result<(F, F)> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let (out, trace) = self.forward_traced(x)?;
        let loss = bce_loss(out.y, target);
        self.backward(&out, &trace, bce_grad(out.y, target), grads)?;
        Ok((loss, out.y))
    }

    /// Loss together with the sign pattern of every ReLU input.
    pub(crate) fn loss_with_pattern(&self, x: &ModelInput<F>, target: F) -> Result<(F, Vec<bool>)> {
        let (out, trace) = self.forward_traced(x)?;
        let mut pattern = Vec::new();
        let mut push = |t: &Tensor<F>| pattern.extend(t.data().iter().map(|&v| v > F::zero()));
        for c in &trace.visual {
            match c {
                VCache::Pool { .. } => {}
                VCache::Conv { pre, .. } => push(pre),
                VCache::Residual { pre_a, pre_out, .. } => {
                    push(pre_a);
                    push(pre_out);
                }
            }
        }
        for c in &trace.audio {
            push(&c.pre);
        }
        push(&trace.head.hidden_pre);
        Ok((bce_loss(out.y, target), pattern))
    }

    pub fn loss(&self, x: &ModelInput<F>, target: F) -> Result<F> {
        Ok(bce_loss(self.forward(x)?.y, target))
    }
}

const META_CONFIG: &str = "detector_config";
const META_INPUT: &str = "input_shape";
const META_HASH: &str = "config_sha256";

/// SHA-256 of the detector config JSON, hex encoded.
pub fn config_hash(config: &DetectorConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

impl Detector<f32> {
    /// Parameters as named container tensors plus config metadata.
    pub fn to_container(&self, mut meta: BTreeMap<String, String>) -> Result<Container> {
        meta.insert(META_CONFIG.into(), serde_json::to_string(&self.config)?);
        meta.insert(META_INPUT.into(), serde_json::to_string(&self.input)?);
        meta.insert(META_HASH.into(), config_hash(&self.config));
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| NamedTensor::new(name, t.shape().to_vec(), t.data().to_vec()))
            .collect::<Result<_>>()?;
        Ok(Container { tensors, meta })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: DetectorConfig = serde_json::from_str(c.meta_value(META_CONFIG)?)?;
        let input: InputShape = serde_json::from_str(c.meta_value(META_INPUT)?)?;
        if let Some(h) = c.meta.get(META_HASH) {
            if *h != config_hash(&config) {
                return Err(Error::format(0, format!("checkpoint config hash {h} does not match its config")));
            }
        }
        let mut det = Detector::new(config, input, 0)?;
        let named = c
            .tensors
            .iter()
            .map(|t| Ok((t.name.as_str(), Tensor::new(t.shape.clone(), t.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        det.params.load(named)?;
        Ok(det)
    }

    pub fn save(&self, path: &Path, meta: BTreeMap<String, String>) -> Result<()> {
        let c = self.to_container(meta)?;
        write_container(path, &c.tensors, &c.meta)
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let (tensors, meta) = read_container(path)?;
        let c = Container { tensors, meta };
        Ok((Self::from_container(&c)?, c.meta))
    }
}
