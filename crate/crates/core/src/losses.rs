//! Training objectives with analytic gradients.
//!
//! The evidential objective combines three terms over the per-voxel
//! Dirichlet `Dir(α)`:
//!
//! * integrated cross-entropy, `Σₙ yⁿ (ψ(S) − ψ(αⁿ))`, the expected
//!   cross-entropy under the Dirichlet;
//! * `KL(Dir(α̃) ‖ Dir(1, …, 1))` on the parameters with the true-class
//!   component reset to one, penalising evidence for wrong classes;
//! * volumetric soft Dice on the Dirichlet mean `α / S`.
//!
//! Voxel terms are averaged over the volume; Dice is averaged over classes.
//! All arithmetic runs in `f64` in a fixed voxel order, so values and
//! gradients are bitwise reproducible.
//!
//! Fields are passed channel-major, matching [`Volume`]'s layout.

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked as psi, ln_gamma_unchecked as ln_gamma, trigamma_unchecked as psi1};
use crate::subjective_logic::{sigmoid, softplus};
use crate::volume::{check_same_dims, LabelVolume, Volume};

/// Lower clamp applied to probabilities inside the cross-entropy.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Weights and constants of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the KL regulariser.
    pub lambda_p: f64,
    /// Weight of the soft Dice term.
    pub lambda_s: f64,
    /// Smoothing added to the Dice numerator.
    pub dice_alpha: f64,
    /// Smoothing added to the Dice denominator.
    pub dice_beta: f64,
    pub classes: usize,
    /// Scale `lambda_p` by `min(1, epoch_frac)` when set.
    pub kl_anneal: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_p: 0.2,
            lambda_s: 1.0,
            dice_alpha: 1e-5,
            dice_beta: 1e-5,
            classes: 4,
            kl_anneal: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        if !(self.dice_alpha > 0.0 && self.dice_beta > 0.0) {
            return Err(Error::invalid("dice smoothing constants must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        Ok(())
    }

    /// KL weight in effect at training progress `epoch_frac`.
    pub fn effective_lambda_p(&self, epoch_frac: f64) -> f64 {
        if self.kl_anneal {
            self.lambda_p * epoch_frac.clamp(0.0, 1.0)
        } else {
            self.lambda_p
        }
    }
}

/// Components of a loss evaluation. For the softmax baseline `ice` holds
/// the plain cross-entropy and `kl` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub ice: f64,
    pub kl: f64,
    pub dice: f64,
}

fn check_labels(field: &Volume, labels: &LabelVolume) -> Result<()> {
    check_same_dims(field.dims(), labels.dims(), "field and labels")?;
    labels.validate(field.channels())
}

fn to_f64(v: &Volume) -> Vec<f64> {
    v.as_slice().iter().map(|&x| x as f64).collect()
}

fn grad_volume(like: &Volume, grad: &[f64]) -> Volume {
    let data = grad.iter().map(|&g| g as f32).collect();
    Volume::from_vec(like.dims(), like.channels(), data).expect("gradient matches input shape")
}

fn check_alpha_at_least_one(alpha: &Volume, what: &str) -> Result<()> {
    match alpha.as_slice().iter().find(|a| !(**a >= 1.0) || !a.is_finite()) {
        Some(bad) => Err(Error::invalid(format!("{what} components must be >= 1, got {bad}"))),
        None => Ok(()),
    }
}

/// Integrated cross-entropy of one voxel: `ψ(S) − ψ(α_y)`.
pub fn ice_voxel(alpha: &[f64], label: usize, digamma: impl Fn(f64) -> f64) -> f64 {
    let s: f64 = alpha.iter().sum();
    digamma(s) - digamma(alpha[label])
}

/// `KL(Dir(α̃) ‖ Dir(1, …, 1))` of one voxel.
pub fn kl_voxel(alpha_tilde: &[f64]) -> f64 {
    let c = alpha_tilde.len() as f64;
    let s: f64 = alpha_tilde.iter().sum();
    let psi_s = psi(s);
    let mut kl = ln_gamma(s) - ln_gamma(c);
    for &a in alpha_tilde {
        kl += -ln_gamma(a) + (a - 1.0) * (psi(a) - psi_s);
    }
    kl
}

/// `∂KL/∂α̃ᵏ = (α̃ᵏ − 1) ψ′(α̃ᵏ) − (S̃ − C) ψ′(S̃)`.
fn kl_voxel_grad(alpha_tilde: &[f64], out: &mut [f64]) {
    let c = alpha_tilde.len() as f64;
    let s: f64 = alpha_tilde.iter().sum();
    let cross = (s - c) * psi1(s);
    for (g, &a) in out.iter_mut().zip(alpha_tilde) {
        *g = (a - 1.0) * psi1(a) - cross;
    }
}

/// Mean integrated cross-entropy and its gradient with respect to α.
pub fn ice_loss(alpha: &Volume, labels: &LabelVolume) -> Result<(f64, Volume)> {
    check_labels(alpha, labels)?;
    check_alpha_at_least_one(alpha, "alpha")?;
    let c = alpha.channels();
    let n = alpha.voxels();
    let a = to_f64(alpha);
    let mut grad = vec![0.0; a.len()];
    let mut total = 0.0;
    let mut voxel = vec![0.0; c];
    for (v, &y) in labels.as_slice().iter().enumerate() {
        gather(&a, n, v, &mut voxel);
        let y = y as usize;
        total += ice_voxel(&voxel, y, psi);
        let g_s = psi1(voxel.iter().sum());
        for k in 0..c {
            let mut g = g_s;
            if k == y {
                g -= psi1(voxel[k]);
            }
            grad[k * n + v] = g / n as f64;
        }
    }
    Ok((total / n as f64, grad_volume(alpha, &grad)))
}

/// Mean KL divergence to the uniform Dirichlet and its gradient.
pub fn kl_to_uniform(alpha_tilde: &Volume) -> Result<(f64, Volume)> {
    check_alpha_at_least_one(alpha_tilde, "adjusted alpha")?;
    let c = alpha_tilde.channels();
    let n = alpha_tilde.voxels();
    let a = to_f64(alpha_tilde);
    let mut grad = vec![0.0; a.len()];
    let mut total = 0.0;
    let mut voxel = vec![0.0; c];
    let mut g = vec![0.0; c];
    for v in 0..n {
        gather(&a, n, v, &mut voxel);
        total += kl_voxel(&voxel);
        kl_voxel_grad(&voxel, &mut g);
        for k in 0..c {
            grad[k * n + v] = g[k] / n as f64;
        }
    }
    Ok((total / n as f64, grad_volume(alpha_tilde, &grad)))
}

/// `α̃ = y + (1 − y) ⊙ α`: the true-class component becomes one.
pub fn adjust_alpha(alpha: &Volume, labels: &LabelVolume) -> Result<Volume> {
    check_labels(alpha, labels)?;
    let n = alpha.voxels();
    let mut out = alpha.clone();
    let data = out.as_mut_slice();
    for (v, &y) in labels.as_slice().iter().enumerate() {
        data[y as usize * n + v] = 1.0;
    }
    Ok(out)
}

/// Per-class volumetric soft Dice, averaged over classes, with gradient
/// with respect to the probabilities.
pub fn soft_dice_loss(prob: &Volume, labels: &LabelVolume, cfg: &LossConfig) -> Result<(f64, Volume)> {
    check_labels(prob, labels)?;
    cfg.validate()?;
    let p = to_f64(prob);
    let mut grad = vec![0.0; p.len()];
    let value = dice_core(&p, labels.as_slice(), prob.channels(), cfg, &mut grad);
    Ok((value, grad_volume(prob, &grad)))
}

/// Dice value; writes `∂L/∂p` into `grad`.
fn dice_core(p: &[f64], labels: &[u8], classes: usize, cfg: &LossConfig, grad: &mut [f64]) -> f64 {
    let n = labels.len();
    let mut loss = 0.0;
    for c in 0..classes {
        let pc = &p[c * n..(c + 1) * n];
        let mut inter = 0.0;
        let mut sum_y = 0.0;
        let mut sum_p = 0.0;
        for (&pv, &y) in pc.iter().zip(labels) {
            sum_p += pv;
            if y as usize == c {
                inter += pv;
                sum_y += 1.0;
            }
        }
        let num = 2.0 * inter + cfg.dice_alpha;
        let den = sum_y + sum_p + cfg.dice_beta;
        loss += 1.0 - num / den;
        let scale = 1.0 / (classes as f64 * den * den);
        let gc = &mut grad[c * n..(c + 1) * n];
        for (g, &y) in gc.iter_mut().zip(labels) {
            let yv = if y as usize == c { 1.0 } else { 0.0 };
            *g = -(2.0 * yv * den - num) * scale;
        }
    }
    loss / classes as f64
}

/// Mean cross-entropy `−ln p_y` with probabilities clamped below at
/// [`CE_PROB_FLOOR`]; gradient `−1 / (p N)` on the true class.
pub fn cross_entropy_loss(prob: &Volume, labels: &LabelVolume) -> Result<(f64, Volume)> {
    check_labels(prob, labels)?;
    let p = to_f64(prob);
    let mut grad = vec![0.0; p.len()];
    let value = ce_core(&p, labels.as_slice(), &mut grad);
    Ok((value, grad_volume(prob, &grad)))
}

fn ce_core(p: &[f64], labels: &[u8], grad: &mut [f64]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (v, &y) in labels.iter().enumerate() {
        let i = y as usize * n + v;
        let py = p[i].max(CE_PROB_FLOOR);
        total -= py.ln();
        grad[i] = -1.0 / (py * n as f64);
    }
    total / n as f64
}

/// Full evidential objective on raw logits, back-propagated through
/// softplus to the logits.
pub fn total_loss(
    logits: &Volume,
    labels: &LabelVolume,
    cfg: &LossConfig,
    epoch_frac: f64,
) -> Result<(LossValue, Volume)> {
    check_labels(logits, labels)?;
    cfg.validate()?;
    if logits.channels() != cfg.classes {
        return Err(Error::invalid(format!(
            "logits have {} channels, config expects {} classes",
            logits.channels(),
            cfg.classes
        )));
    }
    let x = to_f64(logits);
    let mut grad = vec![0.0; x.len()];
    let value = evidential_objective(&x, labels.as_slice(), cfg, epoch_frac, &mut grad);
    Ok((value, grad_volume(logits, &grad)))
}

/// Softmax-baseline objective: cross-entropy plus `lambda_s` times soft
/// Dice on the softmax probabilities, with gradient to the logits.
pub fn softmax_total_loss(logits: &Volume, labels: &LabelVolume, cfg: &LossConfig) -> Result<(LossValue, Volume)> {
    check_labels(logits, labels)?;
    cfg.validate()?;
    let x = to_f64(logits);
    let mut grad = vec![0.0; x.len()];
    let value = softmax_objective(&x, labels.as_slice(), logits.channels(), cfg, &mut grad);
    Ok((value, grad_volume(logits, &grad)))
}

#[inline]
fn gather(field: &[f64], n: usize, v: usize, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = field[k * n + v];
    }
}

/// Evidential objective over channel-major `f64` logits. Writes the
/// gradient with respect to the logits into `grad`.
pub(crate) fn evidential_objective(
    logits: &[f64],
    labels: &[u8],
    cfg: &LossConfig,
    epoch_frac: f64,
    grad: &mut [f64],
) -> LossValue {
    let c = cfg.classes;
    let n = labels.len();
    debug_assert_eq!(logits.len(), c * n);
    let lambda_p = cfg.effective_lambda_p(epoch_frac);
    let inv_n = 1.0 / n as f64;

    let mut alpha = vec![0.0; c * n];
    for (a, &x) in alpha.iter_mut().zip(logits) {
        *a = softplus(x) + 1.0;
    }

    let mut prob = vec![0.0; c * n];
    let mut strength = vec![0.0; n];
    let mut ice = 0.0;
    let mut kl = 0.0;
    let mut voxel = vec![0.0; c];
    let mut psi_a = vec![0.0; c];
    let mut g_kl = vec![0.0; c];
    for (v, &y) in labels.iter().enumerate() {
        let y = y as usize;
        gather(&alpha, n, v, &mut voxel);
        let s: f64 = voxel.iter().sum();
        strength[v] = s;
        for k in 0..c {
            prob[k * n + v] = voxel[k] / s;
            psi_a[k] = psi(voxel[k]);
        }

        // ψ(S) − ψ(α_y)
        ice += psi(s) - psi_a[y];
        let g_s = psi1(s);

        // KL on α̃, which equals α except for a 1 at the true class.
        let s_t = s - voxel[y] + 1.0;
        let psi_st = psi(s_t);
        let mut kl_v = ln_gamma(s_t) - ln_gamma(c as f64);
        let cross = (s_t - c as f64) * psi1(s_t);
        for k in 0..c {
            if k == y {
                g_kl[k] = 0.0;
                continue;
            }
            let a = voxel[k];
            kl_v += -ln_gamma(a) + (a - 1.0) * (psi_a[k] - psi_st);
            g_kl[k] = (a - 1.0) * psi1(a) - cross;
        }
        kl += kl_v;

        for k in 0..c {
            let mut g = g_s + lambda_p * g_kl[k];
            if k == y {
                g -= psi1(voxel[k]);
            }
            grad[k * n + v] = g * inv_n;
        }
    }
    ice *= inv_n;
    kl *= inv_n;

    let mut g_prob = vec![0.0; c * n];
    let dice = dice_core(&prob, labels, c, cfg, &mut g_prob);

    for v in 0..n {
        let s = strength[v];
        // ∂pⁿ/∂αᵏ = (δₙₖ − pⁿ) / S
        let dot: f64 = (0..c).map(|k| g_prob[k * n + v] * prob[k * n + v]).sum();
        for k in 0..c {
            let i = k * n + v;
            let g_alpha = grad[i] + cfg.lambda_s * (g_prob[i] - dot) / s;
            grad[i] = g_alpha * sigmoid(logits[i]);
        }
    }

    LossValue {
        total: ice + lambda_p * kl + cfg.lambda_s * dice,
        ice,
        kl,
        dice,
    }
}

/// Per-voxel softmax of channel-major logits.
pub(crate) fn softmax_into(logits: &[f64], classes: usize, out: &mut [f64]) {
    let n = logits.len() / classes;
    for v in 0..n {
        let max = (0..classes)
            .map(|k| logits[k * n + v])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..classes {
            let e = (logits[k * n + v] - max).exp();
            out[k * n + v] = e;
            z += e;
        }
        for k in 0..classes {
            out[k * n + v] /= z;
        }
    }
}

/// Maps a gradient with respect to softmax outputs back to the logits:
/// `g_z = p ⊙ (g_p − Σ p g_p)`.
pub(crate) fn softmax_backward(prob: &[f64], grad_prob: &[f64], classes: usize, out: &mut [f64]) {
    let n = prob.len() / classes;
    for v in 0..n {
        let dot: f64 = (0..classes).map(|k| prob[k * n + v] * grad_prob[k * n + v]).sum();
        for k in 0..classes {
            let i = k * n + v;
            out[i] = prob[i] * (grad_prob[i] - dot);
        }
    }
}

pub(crate) fn softmax_objective(
    logits: &[f64],
    labels: &[u8],
    classes: usize,
    cfg: &LossConfig,
    grad: &mut [f64],
) -> LossValue {
    let mut prob = vec![0.0; logits.len()];
    softmax_into(logits, classes, &mut prob);
    let mut g_ce = vec![0.0; logits.len()];
    let ce = ce_core(&prob, labels, &mut g_ce);
    let mut g_dice = vec![0.0; logits.len()];
    let dice = dice_core(&prob, labels, classes, cfg, &mut g_dice);
    let g_prob: Vec<f64> = g_ce
        .iter()
        .zip(&g_dice)
        .map(|(a, b)| a + cfg.lambda_s * b)
        .collect();
    softmax_backward(&prob, &g_prob, classes, grad);
    LossValue {
        total: ce + cfg.lambda_s * dice,
        ice: ce,
        kl: 0.0,
        dice,
    }
}
