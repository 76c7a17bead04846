//! The fixed three-layer voxel segmenter.
//!
//! ```text
//! input (4) ─ conv 3³ ─ ReLU ─ conv 3³ ─ ReLU ─ conv 1³ ─ logits (4) ─ head
//!              4→16            16→16            16→4
//! ```
//!
//! Parameters live in one flat `f32` vector in canonical order:
//!
//! | block          | shape                      | count |
//! |----------------|----------------------------|-------|
//! | `conv1.weight` | `[16][4][3][3][3]`         | 1728  |
//! | `conv1.bias`   | `[16]`                     | 16    |
//! | `conv2.weight` | `[16][16][3][3][3]`        | 6912  |
//! | `conv2.bias`   | `[16]`                     | 16    |
//! | `conv3.weight` | `[4][16]`                  | 64    |
//! | `conv3.bias`   | `[4]`                      | 4     |
//!
//! Kernel axes are `[out][in][z][y][x]`; kernels are applied as
//! cross-correlation with one voxel of zero padding, so spatial size is
//! preserved.

use super::conv::{self, Padded, Scalar, TAPS};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossValue};
use crate::rng::Rng;
use crate::volume::{check_same_dims, Dims, LabelVolume, Volume};

pub const IN_CHANNELS: usize = 4;
pub const HIDDEN: usize = 16;
pub const CLASSES: usize = 4;

const W1: usize = HIDDEN * IN_CHANNELS * TAPS;
const W2: usize = HIDDEN * HIDDEN * TAPS;
const W3: usize = CLASSES * HIDDEN;

/// Offsets of each block in the canonical parameter vector.
pub mod layout {
    use super::*;
    pub const CONV1_W: usize = 0;
    pub const CONV1_B: usize = CONV1_W + W1;
    pub const CONV2_W: usize = CONV1_B + HIDDEN;
    pub const CONV2_B: usize = CONV2_W + W2;
    pub const CONV3_W: usize = CONV2_B + HIDDEN;
    pub const CONV3_B: usize = CONV3_W + W3;
    pub const END: usize = CONV3_B + CLASSES;
}

/// Total number of trainable scalars.
pub const PARAM_COUNT: usize = layout::END;

/// Output head applied to the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// Softplus evidence and a Dirichlet opinion per voxel.
    Evidential,
    /// Plain softmax class probabilities.
    Softmax,
}

impl Head {
    pub fn tag(self) -> u8 {
        match self {
            Head::Evidential => 0,
            Head::Softmax => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Head::Evidential),
            1 => Ok(Head::Softmax),
            t => Err(Error::format(format!("unknown head tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Evidential => "evidential",
            Head::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evidential" => Ok(Head::Evidential),
            "softmax" => Ok(Head::Softmax),
            other => Err(Error::invalid(format!("unknown head '{other}'"))),
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hidden-layer nonlinearity. `Identity` exists to probe the linear
/// structure of the network in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    head: Head,
    activation: Activation,
    params: Vec<f32>,
}

impl TinyNet {
    /// He-uniform weights, `U(±√(6 / fan_in))`, drawn in canonical order;
    /// zero biases.
    pub fn init(head: Head, rng: &mut Rng) -> Self {
        let mut params = vec![0.0f32; PARAM_COUNT];
        let blocks = [
            (layout::CONV1_W, W1, IN_CHANNELS * TAPS),
            (layout::CONV2_W, W2, HIDDEN * TAPS),
            (layout::CONV3_W, W3, HIDDEN),
        ];
        for (start, len, fan_in) in blocks {
            let bound = he_uniform_bound(fan_in);
            for p in &mut params[start..start + len] {
                *p = rng.uniform_in(-bound, bound) as f32;
            }
        }
        Self::from_parts(head, params)
    }

    pub fn zeros(head: Head) -> Self {
        Self::from_parts(head, vec![0.0; PARAM_COUNT])
    }

    pub fn from_params(head: Head, params: Vec<f32>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::invalid(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self::from_parts(head, params))
    }

    fn from_parts(head: Head, params: Vec<f32>) -> Self {
        Self {
            head,
            activation: Activation::Relu,
            params,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// Raw per-class logits, channel-major.
    pub fn logits(&self, input: &Volume) -> Result<Volume> {
        check_input(input)?;
        let packed = Packed::<f32>::new(&self.params);
        let acts = forward_impl(&packed, input, self.activation);
        let data = voxel_to_channel_major(&acts.logits, CLASSES);
        Volume::from_vec(input.dims(), CLASSES, data.into_iter().map(|v| v as f32).collect())
    }

    /// Network output: logits for the evidential head (the head itself is
    /// applied by [`crate::subjective_logic`]), probabilities for softmax.
    pub fn forward(&self, input: &Volume) -> Result<Volume> {
        let logits = self.logits(input)?;
        match self.head {
            Head::Evidential => Ok(logits),
            Head::Softmax => {
                let x: Vec<f64> = logits.as_slice().iter().map(|&v| v as f64).collect();
                let mut p = vec![0.0; x.len()];
                losses::softmax_into(&x, CLASSES, &mut p);
                Volume::from_vec(input.dims(), CLASSES, p.into_iter().map(|v| v as f32).collect())
            }
        }
    }

    /// Parameter gradients (canonical order) of `Σ grad_output ⊙ forward(input)`.
    pub fn backward(&self, input: &Volume, grad_output: &Volume) -> Result<Vec<f64>> {
        check_input(input)?;
        check_same_dims(input.dims(), grad_output.dims(), "input and output gradient")?;
        if grad_output.channels() != CLASSES {
            return Err(Error::invalid(format!(
                "output gradient needs {CLASSES} channels, got {}",
                grad_output.channels()
            )));
        }
        let packed = Packed::<f64>::new(&self.params);
        let acts = forward_impl(&packed, input, self.activation);
        let g: Vec<f64> = grad_output.as_slice().iter().map(|&v| v as f64).collect();
        let g_logits = match self.head {
            Head::Evidential => g,
            Head::Softmax => {
                let x = voxel_to_channel_major(&acts.logits, CLASSES);
                let mut p = vec![0.0; x.len()];
                losses::softmax_into(&x, CLASSES, &mut p);
                let mut gz = vec![0.0; x.len()];
                losses::softmax_backward(&p, &g, CLASSES, &mut gz);
                gz
            }
        };
        Ok(backward_impl(&packed, &acts, &channel_to_voxel_major(&g_logits, CLASSES), self.activation))
    }

    /// Signs of both hidden layers' pre-activations (`> 0`), evaluated in
    /// `f64`. Two parameter vectors with equal patterns lie in the same
    /// smooth piece of the network, which lets finite-difference probes skip
    /// steps that cross a ReLU kink.
    pub fn relu_pattern(&self, input: &Volume) -> Result<Vec<bool>> {
        check_input(input)?;
        let packed = Packed::<f64>::new(&self.params);
        let acts = forward_impl(&packed, input, self.activation);
        Ok(acts.a1.iter().chain(&acts.a2).map(|&v| v > 0.0).collect())
    }

    /// Training objective of this head on one sample and its parameter
    /// gradient, evaluated in precision `T`.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        input: &Volume,
        labels: &LabelVolume,
        cfg: &LossConfig,
        epoch_frac: f64,
    ) -> Result<(LossValue, Vec<f64>)> {
        check_input(input)?;
        check_same_dims(input.dims(), labels.dims(), "input and labels")?;
        labels.validate(CLASSES)?;
        if cfg.classes != CLASSES {
            return Err(Error::invalid(format!("network has {CLASSES} classes, loss config {}", cfg.classes)));
        }
        let packed = Packed::<T>::new(&self.params);
        let acts = forward_impl(&packed, input, self.activation);
        let logits = voxel_to_channel_major(&acts.logits, CLASSES);
        let mut grad = vec![0.0; logits.len()];
        let value = match self.head {
            Head::Evidential => {
                losses::evidential_objective(&logits, labels.as_slice(), cfg, epoch_frac, &mut grad)
            }
            Head::Softmax => losses::softmax_objective(&logits, labels.as_slice(), CLASSES, cfg, &mut grad),
        };
        let g: Vec<T> = channel_to_voxel_major(&grad, CLASSES)
            .into_iter()
            .map(T::from_f64)
            .collect();
        Ok((value, backward_impl(&packed, &acts, &g, self.activation)))
    }
}

pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn check_input(input: &Volume) -> Result<()> {
    if input.channels() != IN_CHANNELS {
        return Err(Error::invalid(format!(
            "network input needs {IN_CHANNELS} channels, got {}",
            input.channels()
        )));
    }
    Ok(())
}

/// Weights repacked as `[tap][in][out]` in the compute precision.
struct Packed<T> {
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
    w3: Vec<T>,
    b3: Vec<T>,
}

impl<T: Scalar> Packed<T> {
    fn new(params: &[f32]) -> Self {
        use layout::*;
        let cast = |s: &[f32]| s.iter().map(|&v| T::from_f32(v)).collect::<Vec<T>>();
        Self {
            w1: pack_conv3(&params[CONV1_W..CONV1_B], IN_CHANNELS, HIDDEN),
            b1: cast(&params[CONV1_B..CONV2_W]),
            w2: pack_conv3(&params[CONV2_W..CONV2_B], HIDDEN, HIDDEN),
            b2: cast(&params[CONV2_B..CONV3_W]),
            w3: pack_conv1(&params[CONV3_W..CONV3_B], HIDDEN, CLASSES),
            b3: cast(&params[CONV3_B..END]),
        }
    }
}

/// `[out][in][tap]` → `[tap][in][out]`.
fn pack_conv3<T: Scalar>(w: &[f32], cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for t in 0..TAPS {
                out[(t * cin + i) * cout + o] = T::from_f32(w[(o * cin + i) * TAPS + t]);
            }
        }
    }
    out
}

fn unpack_conv3(packed: &[f64], cin: usize, cout: usize, out: &mut [f64]) {
    for o in 0..cout {
        for i in 0..cin {
            for t in 0..TAPS {
                out[(o * cin + i) * TAPS + t] = packed[(t * cin + i) * cout + o];
            }
        }
    }
}

/// `[out][in]` → `[in][out]`.
fn pack_conv1<T: Scalar>(w: &[f32], cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            out[i * cout + o] = T::from_f32(w[o * cin + i]);
        }
    }
    out
}

struct Activations<T> {
    x0: Padded<T>,
    a1: Vec<T>,
    h1: Padded<T>,
    a2: Vec<T>,
    h2: Vec<T>,
    logits: Vec<T>,
}

fn apply_activation<T: Scalar>(pre: &[T], act: Activation) -> Vec<T> {
    match act {
        Activation::Relu => pre.iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect(),
        Activation::Identity => pre.to_vec(),
    }
}

fn forward_impl<T: Scalar>(p: &Packed<T>, input: &Volume, act: Activation) -> Activations<T> {
    let dims = input.dims();
    let n = dims.voxels();
    let x: Vec<T> = channel_to_voxel_major_f32(input.as_slice(), IN_CHANNELS);
    let mut x0 = Padded::zeros(dims, IN_CHANNELS);
    x0.fill_interior(&x);

    let mut a1 = vec![T::ZERO; n * HIDDEN];
    conv::conv3::<T, HIDDEN>(&x0, &p.w1, &p.b1, &mut a1);
    let mut h1 = Padded::zeros(dims, HIDDEN);
    h1.fill_interior(&apply_activation(&a1, act));

    let mut a2 = vec![T::ZERO; n * HIDDEN];
    conv::conv3::<T, HIDDEN>(&h1, &p.w2, &p.b2, &mut a2);
    let h2 = apply_activation(&a2, act);

    let mut logits = vec![T::ZERO; n * CLASSES];
    conv::conv1::<T, CLASSES>(&h2, HIDDEN, &p.w3, &p.b3, &mut logits);
    Activations {
        x0,
        a1,
        h1,
        a2,
        h2,
        logits,
    }
}

fn mask_activation<T: Scalar>(grad: &mut [T], pre: &[T], act: Activation) {
    if act == Activation::Relu {
        for (g, &a) in grad.iter_mut().zip(pre) {
            if !(a > T::ZERO) {
                *g = T::ZERO;
            }
        }
    }
}

/// Parameter gradients in canonical order from the voxel-major logit gradient.
fn backward_impl<T: Scalar>(p: &Packed<T>, acts: &Activations<T>, g_logits: &[T], act: Activation) -> Vec<f64> {
    use layout::*;
    let dims = acts.x0.dims;
    let n = dims.voxels();
    let mut grads = vec![0.0f64; PARAM_COUNT];

    // conv3 (pointwise)
    let mut gw3 = vec![0.0; W3];
    let mut g_h2 = vec![T::ZERO; n * HIDDEN];
    conv::conv1_backward::<T, CLASSES>(
        &acts.h2,
        HIDDEN,
        &p.w3,
        g_logits,
        &mut gw3,
        &mut grads[CONV3_B..END],
        &mut g_h2,
    );
    for o in 0..CLASSES {
        for i in 0..HIDDEN {
            grads[CONV3_W + o * HIDDEN + i] = gw3[i * CLASSES + o];
        }
    }

    // conv2
    mask_activation(&mut g_h2, &acts.a2, act);
    let g_a2 = g_h2;
    let mut gw2 = vec![0.0; W2];
    conv::conv3_param_grad::<T, HIDDEN>(&acts.h1, &g_a2, &mut gw2, &mut grads[CONV2_B..CONV3_W]);
    unpack_conv3(&gw2, HIDDEN, HIDDEN, &mut grads[CONV2_W..CONV2_B]);

    let mut g_a2_pad = Padded::zeros(dims, HIDDEN);
    g_a2_pad.fill_interior(&g_a2);
    let w2t = conv::transpose_kernel(&p.w2, HIDDEN, HIDDEN);
    let mut g_h1 = vec![T::ZERO; n * HIDDEN];
    conv::conv3::<T, HIDDEN>(&g_a2_pad, &w2t, &[T::ZERO; HIDDEN], &mut g_h1);

    // conv1; its input gradient is never needed.
    mask_activation(&mut g_h1, &acts.a1, act);
    let mut gw1 = vec![0.0; W1];
    conv::conv3_param_grad::<T, HIDDEN>(&acts.x0, &g_h1, &mut gw1, &mut grads[CONV1_B..CONV2_W]);
    unpack_conv3(&gw1, IN_CHANNELS, HIDDEN, &mut grads[CONV1_W..CONV1_B]);

    grads
}

fn channel_to_voxel_major_f32<T: Scalar>(src: &[f32], channels: usize) -> Vec<T> {
    let n = src.len() / channels;
    let mut out = vec![T::ZERO; src.len()];
    for c in 0..channels {
        for v in 0..n {
            out[v * channels + c] = T::from_f32(src[c * n + v]);
        }
    }
    out
}

fn channel_to_voxel_major<T: Scalar>(src: &[f64], channels: usize) -> Vec<T> {
    let n = src.len() / channels;
    let mut out = vec![T::ZERO; src.len()];
    for c in 0..channels {
        for v in 0..n {
            out[v * channels + c] = T::from_f64(src[c * n + v]);
        }
    }
    out
}

fn voxel_to_channel_major<T: Scalar>(src: &[T], channels: usize) -> Vec<f64> {
    let n = src.len() / channels;
    let mut out = vec![0.0; src.len()];
    for v in 0..n {
        for c in 0..channels {
            out[c * n + v] = src[v * channels + c].to_f64();
        }
    }
    out
}

/// Smallest spatial extent the network accepts on each axis.
pub const MIN_EXTENT: usize = 3;

pub(crate) fn check_min_dims(dims: Dims) -> Result<()> {
    if dims.x < MIN_EXTENT || dims.y < MIN_EXTENT || dims.z < MIN_EXTENT {
        return Err(Error::invalid(format!("network input must be at least 3 voxels per axis, got {dims}")));
    }
    Ok(())
}
