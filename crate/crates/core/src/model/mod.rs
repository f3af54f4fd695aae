//! Toy property network: shared convolutional encoder, a detection head
//! producing per-pixel interest probabilities and a description head
//! producing per-pixel unit description vectors.
//!
//! ```text
//! encoder     conv3x3(C→8) relu, conv3x3(8→8) relu, maxpool2,
//!             conv3x3(8→16) relu, conv3x3(16→16) relu, maxpool2
//! detection   upsample×4, conv3x3(16→8) relu, conv3x3(8→1), sigmoid
//! description conv3x3(16→16) relu, conv3x3(16→d), L2 normalize,
//!             upsample×4, L2 normalize
//! ```
//!
//! All convolutions use padding 1 and stride 1. The backward pass is exact
//! (maxpool routes to the first maximum, ReLU has zero slope at 0).

mod adam;
mod checkpoint;
pub mod layers;

use rand::distr::{Distribution, Uniform};

pub use self::adam::{Adam, AdamState};
pub use self::checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_HEADER};
use self::layers::{
    conv3x3, conv3x3_backward, l2_normalize, l2_normalize_backward, maxpool2, maxpool2_backward,
    relu_backward_in_place, relu_in_place, sigmoid, upsample_bilinear, upsample_bilinear_backward,
    Tensor,
};
use crate::error::{Error, Result};
use crate::image::Image;

/// Spatial downsampling of the encoder (two stride-2 poolings).
pub const ENCODER_STRIDE: usize = 4;

pub const ENC1A: usize = 0;
pub const ENC1B: usize = 1;
pub const ENC2A: usize = 2;
pub const ENC2B: usize = 3;
pub const DET1: usize = 4;
pub const DET2: usize = 5;
pub const DESC1: usize = 6;
pub const DESC2: usize = 7;

pub const LAYER_NAMES: [&str; 8] = [
    "encoder.conv1a",
    "encoder.conv1b",
    "encoder.conv2a",
    "encoder.conv2b",
    "detector.conv1",
    "detector.conv2",
    "descriptor.conv1",
    "descriptor.conv2",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    MaxPool2,
    UpsampleBilinear4,
    Sigmoid,
    L2Normalize,
}

/// Fixed toy topology, parameterized by input channels and descriptor length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Topology {
    pub in_channels: usize,
    pub desc_len: usize,
}

impl Topology {
    pub fn new(in_channels: usize, desc_len: usize) -> Result<Self> {
        if desc_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "descriptor length must be at least 2, got {desc_len}"
            )));
        }
        if in_channels == 0 {
            return Err(Error::InvalidConfig("model needs at least one input channel".into()));
        }
        Ok(Self {
            in_channels,
            desc_len,
        })
    }

    /// `(in, out)` channels of each convolution, indexed like [`LAYER_NAMES`].
    pub fn conv_shapes(&self) -> [(usize, usize); 8] {
        [
            (self.in_channels, 8),
            (8, 8),
            (8, 16),
            (16, 16),
            (16, 8),
            (8, 1),
            (16, 16),
            (16, self.desc_len),
        ]
    }

    /// The encoder, detection head and description head as layer lists.
    pub fn describe(&self) -> [(&'static str, Vec<LayerKind>); 3] {
        let s = self.conv_shapes();
        let conv = |k: usize| LayerKind::Conv3x3 {
            in_channels: s[k].0,
            out_channels: s[k].1,
        };
        use LayerKind::*;
        [
            (
                "encoder",
                vec![conv(ENC1A), Relu, conv(ENC1B), Relu, MaxPool2, conv(ENC2A), Relu, conv(ENC2B), Relu, MaxPool2],
            ),
            ("detection", vec![UpsampleBilinear4, conv(DET1), Relu, conv(DET2), Sigmoid]),
            (
                "description",
                vec![conv(DESC1), Relu, conv(DESC2), L2Normalize, UpsampleBilinear4, L2Normalize],
            ),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    /// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))` with 3×3 fans.
    pub fn init_bound(in_channels: usize, out_channels: usize) -> f64 {
        (6.0 / (9 * in_channels + 9 * out_channels) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    topology: Topology,
    layers: Vec<ConvParams>,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(topology: Topology) -> Self {
        let layers = topology
            .conv_shapes()
            .iter()
            .map(|&(i, o)| ConvParams::zeros(i, o))
            .collect();
        Self { topology, layers }
    }

    /// Glorot-uniform weights from a seeded stream, zero biases.
    pub fn init(seed: u64, in_channels: usize, desc_len: usize) -> Result<Self> {
        let topology = Topology::new(in_channels, desc_len)?;
        let mut params = Self::zeros(topology);
        for (k, layer) in params.layers.iter_mut().enumerate() {
            let bound = ConvParams::init_bound(layer.in_channels, layer.out_channels);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let mut rng = crate::rng::stream(seed, &[0x1417, k as u64]);
            for w in &mut layer.weight {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn desc_len(&self) -> usize {
        self.topology.desc_len
    }

    pub fn layers(&self) -> &[ConvParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvParams] {
        &mut self.layers
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All scalars in layer order, weights before biases.
    pub fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn scalar(&self, mut k: usize) -> f64 {
        for l in &self.layers {
            if k < l.weight.len() {
                return l.weight[k];
            }
            k -= l.weight.len();
            if k < l.bias.len() {
                return l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub fn scalar_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.weight.len() {
                return &mut l.weight[k];
            }
            k -= l.weight.len();
            if k < l.bias.len() {
                return &mut l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Flat index range `[start, end)` of each layer.
    pub fn layer_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let end = start + l.weight.len() + l.bias.len();
                let r = (start, end);
                start = end;
                r
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(f64::is_finite)
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.topology == other.topology
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.scalars_mut().zip(other.scalars()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.scalars_mut() {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.scalars().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Tensor,
    e1a: Tensor,
    e1b: Tensor,
    pool1_arg: Vec<usize>,
    p1: Tensor,
    e2a: Tensor,
    e2b: Tensor,
    pool2_arg: Vec<usize>,
    enc: Tensor,
    up: Tensor,
    det1: Tensor,
    q1: Tensor,
    n2: Tensor,
    norms2: Vec<f64>,
    out_desc: Tensor,
    norms_up: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    width: usize,
    height: usize,
    desc_len: usize,
    prob: Vec<f64>,
    /// Pixel-major: `desc[(y * width + x) * desc_len + k]`.
    desc: Vec<f64>,
    /// Absent for outputs assembled with [`ModelOutput::from_maps`].
    cache: Option<ForwardCache>,
}

impl ModelOutput {
    /// Output built from given maps rather than by [`forward`]. It carries
    /// no activations, so [`backward`] rejects it.
    pub fn from_maps(width: usize, height: usize, desc_len: usize, prob: Vec<f64>, desc: Vec<f64>) -> Result<Self> {
        if prob.len() != width * height || desc.len() != width * height * desc_len {
            return Err(Error::Shape(format!(
                "maps of {} and {} values do not fit {width}x{height}x{desc_len}",
                prob.len(),
                desc.len()
            )));
        }
        Ok(Self {
            width,
            height,
            desc_len,
            prob,
            desc,
            cache: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn desc_len(&self) -> usize {
        self.desc_len
    }

    /// Row-major interest probabilities.
    pub fn prob_map(&self) -> &[f64] {
        &self.prob
    }

    pub fn prob(&self, pixel: usize) -> f64 {
        self.prob[pixel]
    }

    pub fn desc_field(&self) -> &[f64] {
        &self.desc
    }

    pub fn desc(&self, pixel: usize) -> &[f64] {
        &self.desc[pixel * self.desc_len..(pixel + 1) * self.desc_len]
    }
}

fn image_tensor(image: &Image) -> Tensor {
    Tensor {
        channels: image.channels(),
        height: image.height(),
        width: image.width(),
        data: image.data().to_vec(),
    }
}

/// Runs the network on one image. Height and width must be positive
/// multiples of 4 and the channel count must match the topology.
pub fn forward(params: &ModelParams, image: &Image) -> Result<ModelOutput> {
    let topo = params.topology;
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 || w % ENCODER_STRIDE != 0 || h % ENCODER_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "image {w}x{h} must have dimensions divisible by {ENCODER_STRIDE}"
        )));
    }
    if image.channels() != topo.in_channels {
        return Err(Error::Shape(format!(
            "image has {} channels, model expects {}",
            image.channels(),
            topo.in_channels
        )));
    }
    let l = &params.layers;
    let conv = |x: &Tensor, k: usize| conv3x3(x, &l[k].weight, &l[k].bias, l[k].out_channels);

    let input = image_tensor(image);
    let mut e1a = conv(&input, ENC1A);
    relu_in_place(&mut e1a);
    let mut e1b = conv(&e1a, ENC1B);
    relu_in_place(&mut e1b);
    let (p1, pool1_arg) = maxpool2(&e1b);
    let mut e2a = conv(&p1, ENC2A);
    relu_in_place(&mut e2a);
    let mut e2b = conv(&e2a, ENC2B);
    relu_in_place(&mut e2b);
    let (enc, pool2_arg) = maxpool2(&e2b);

    let up = upsample_bilinear(&enc, ENCODER_STRIDE);
    let mut det1 = conv(&up, DET1);
    relu_in_place(&mut det1);
    let logits = conv(&det1, DET2);
    let prob: Vec<f64> = logits.data.iter().map(|&z| sigmoid(z)).collect();

    let mut q1 = conv(&enc, DESC1);
    relu_in_place(&mut q1);
    let z2 = conv(&q1, DESC2);
    let (n2, norms2) = l2_normalize(&z2);
    let u = upsample_bilinear(&n2, ENCODER_STRIDE);
    let (out_desc, norms_up) = l2_normalize(&u);

    let d = topo.desc_len;
    let n = w * h;
    let mut desc = vec![0.0; n * d];
    for c in 0..d {
        for (p, &v) in out_desc.plane(c).iter().enumerate() {
            desc[p * d + c] = v;
        }
    }

    Ok(ModelOutput {
        width: w,
        height: h,
        desc_len: d,
        prob,
        desc,
        cache: Some(ForwardCache {
            input,
            e1a,
            e1b,
            pool1_arg,
            p1,
            e2a,
            e2b,
            pool2_arg,
            enc,
            up,
            det1,
            q1,
            n2,
            norms2,
            out_desc,
            norms_up,
        }),
    })
}

fn conv_back(input: &Tensor, layer: &ConvParams, grad: &mut ConvParams, grad_out: &Tensor, need_input: bool) -> Option<Tensor> {
    let ConvParams { weight, bias, .. } = grad;
    conv3x3_backward(input, &layer.weight, grad_out, weight, bias, need_input)
}

/// Gradient of `Σ grad_prob · prob_map + Σ grad_desc · desc_field` with
/// respect to every parameter. `grad_desc` is pixel-major like
/// [`ModelOutput::desc_field`]; either may be `None` for zero.
pub fn backward(
    params: &ModelParams,
    output: &ModelOutput,
    grad_prob: Option<&[f64]>,
    grad_desc: Option<&[f64]>,
) -> Result<ParamGrads> {
    let (w, h, d) = (output.width, output.height, output.desc_len);
    let n = w * h;
    let Some(c) = &output.cache else {
        return Err(Error::Contract("output has no forward activations".into()));
    };
    if params.desc_len() != d || c.input.channels != params.topology.in_channels {
        return Err(Error::Shape("output was produced by a different topology".into()));
    }
    if let Some(g) = grad_prob {
        if g.len() != n {
            return Err(Error::Shape(format!("grad_prob has {} values, expected {n}", g.len())));
        }
    }
    if let Some(g) = grad_desc {
        if g.len() != n * d {
            return Err(Error::Shape(format!(
                "grad_desc has {} values, expected {}",
                g.len(),
                n * d
            )));
        }
    }

    let l = &params.layers;
    let mut grads = ModelParams::zeros(params.topology);
    let mut g_enc = Tensor::zeros(c.enc.channels, c.enc.height, c.enc.width);

    if let Some(gp) = grad_prob {
        let mut g_logit = Tensor::zeros(1, h, w);
        for ((g, &up), &p) in g_logit.data.iter_mut().zip(gp).zip(&output.prob) {
            *g = up * p * (1.0 - p);
        }
        let gl = &mut grads.layers;
        let mut g_det1 = conv_back(&c.det1, &l[DET2], &mut gl[DET2], &g_logit, true)
        .expect("input gradient requested");
        relu_backward_in_place(&c.det1, &mut g_det1);
        let g_up = conv_back(&c.up, &l[DET1], &mut gl[DET1], &g_det1, true)
            .expect("input gradient requested");
        let g = upsample_bilinear_backward(&g_up, ENCODER_STRIDE);
        for (a, b) in g_enc.data.iter_mut().zip(&g.data) {
            *a += b;
        }
    }

    if let Some(gd) = grad_desc {
        let mut g_out = Tensor::zeros(d, h, w);
        for ch in 0..d {
            for (p, v) in g_out.plane_mut(ch).iter_mut().enumerate() {
                *v = gd[p * d + ch];
            }
        }
        let g_u = l2_normalize_backward(&c.out_desc, &c.norms_up, &g_out);
        let g_n2 = upsample_bilinear_backward(&g_u, ENCODER_STRIDE);
        let g_z2 = l2_normalize_backward(&c.n2, &c.norms2, &g_n2);
        let gl = &mut grads.layers;
        let mut g_q1 = conv_back(&c.q1, &l[DESC2], &mut gl[DESC2], &g_z2, true)
            .expect("input gradient requested");
        relu_backward_in_place(&c.q1, &mut g_q1);
        let g = conv_back(&c.enc, &l[DESC1], &mut gl[DESC1], &g_q1, true)
            .expect("input gradient requested");
        for (a, b) in g_enc.data.iter_mut().zip(&g.data) {
            *a += b;
        }
    }

    let gl = &mut grads.layers;
    let shape = |t: &Tensor| (t.channels, t.height, t.width);
    let mut g_e2b = maxpool2_backward(shape(&c.e2b), &c.pool2_arg, &g_enc);
    relu_backward_in_place(&c.e2b, &mut g_e2b);
    let mut g_e2a = conv_back(&c.e2a, &l[ENC2B], &mut gl[ENC2B], &g_e2b, true)
        .expect("input gradient requested");
    relu_backward_in_place(&c.e2a, &mut g_e2a);
    let g_p1 = conv_back(&c.p1, &l[ENC2A], &mut gl[ENC2A], &g_e2a, true)
        .expect("input gradient requested");
    let mut g_e1b = maxpool2_backward(shape(&c.e1b), &c.pool1_arg, &g_p1);
    relu_backward_in_place(&c.e1b, &mut g_e1b);
    let mut g_e1a = conv_back(&c.e1a, &l[ENC1B], &mut gl[ENC1B], &g_e1b, true)
        .expect("input gradient requested");
    relu_backward_in_place(&c.e1a, &mut g_e1a);
    conv_back(&c.input, &l[ENC1A], &mut gl[ENC1A], &g_e1a, false);

    Ok(grads)
}
