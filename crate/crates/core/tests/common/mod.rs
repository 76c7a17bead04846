//! Helpers and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the code under test except
//! for constructing inputs.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use evidseg::rng::Rng;
use evidseg::{Dims, LabelVolume, Volume};

pub fn random_volume(dims: Dims, channels: usize, scale: f64, rng: &mut Rng) -> Volume {
    let data = (0..dims.voxels() * channels).map(|_| (scale * rng.normal()) as f32).collect();
    Volume::from_vec(dims, channels, data).unwrap()
}

pub fn random_labels(dims: Dims, classes: usize, rng: &mut Rng) -> LabelVolume {
    let data = (0..dims.voxels()).map(|_| rng.below(classes) as u8).collect();
    LabelVolume::from_vec(dims, data).unwrap()
}

/// Random per-voxel probability vectors (normalized exponentials).
pub fn random_probabilities(dims: Dims, classes: usize, scale: f64, rng: &mut Rng) -> Volume {
    let n = dims.voxels();
    let mut data = vec![0.0f32; classes * n];
    for v in 0..n {
        let e: Vec<f64> = (0..classes).map(|_| (scale * rng.normal()).exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..classes {
            data[c * n + v] = (e[c] / s) as f32;
        }
    }
    Volume::from_vec(dims, classes, data).unwrap()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn index_set(mask: &[bool]) -> BTreeSet<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Dice on index sets; 1 when both are empty.
pub fn dice_bf(a: &[bool], b: &[bool]) -> f64 {
    let (sa, sb) = (index_set(a), index_set(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

/// Probability of class `c` at voxel `v`.
pub fn p(prob: &Volume, c: usize, v: usize) -> f64 {
    prob.as_slice()[c * prob.voxels() + v] as f64
}

/// Smallest index attaining the maximum.
pub fn argmax_bf(prob: &Volume, v: usize) -> usize {
    let mut best = 0;
    for c in 0..prob.channels() {
        if p(prob, c, v) > p(prob, best, v) {
            best = c;
        }
    }
    best
}

pub fn ne_bf(prob: &Volume) -> f64 {
    let n = prob.voxels();
    let classes = prob.channels();
    let mut total = 0.0;
    for v in 0..n {
        let mut h = 0.0;
        for c in 0..classes {
            let q = p(prob, c, v);
            if q != 0.0 {
                h -= q * q.ln();
            }
        }
        total += h / (classes as f64).ln();
    }
    total / n as f64
}

/// ECE with an explicit scan over all voxels for every bin. Returns the
/// value and the per-bin counts.
pub fn ece_bf(prob: &Volume, gt: &[u8], bins: usize) -> (f64, Vec<usize>) {
    let n = prob.voxels();
    let mut ece = 0.0;
    let mut counts = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let (mut count, mut conf, mut hits) = (0usize, 0.0, 0usize);
        for v in 0..n {
            let k = argmax_bf(prob, v);
            let c = p(prob, k, v);
            if (c > lo || b == 0) && c <= hi {
                count += 1;
                conf += c;
                if k == gt[v] as usize {
                    hits += 1;
                }
            }
        }
        if count > 0 {
            ece += count as f64 / n as f64 * (hits as f64 / count as f64 - conf / count as f64).abs();
        }
        counts.push(count);
    }
    (ece, counts)
}

/// UEO sweep over τ = k/100, k = 1..99: `(best, best τ, value at 0.5)`.
pub fn ueo_bf(uncertainty: &[f32], pred: &[bool], gt: &[bool]) -> (f64, f64, f64, Vec<f64>) {
    let errors: Vec<bool> = pred.iter().zip(gt).map(|(a, b)| a != b).collect();
    let mut sweep = Vec::new();
    for k in 1..100 {
        let tau = k as f64 / 100.0;
        let u: Vec<bool> = uncertainty.iter().map(|&x| x as f64 > tau).collect();
        sweep.push(dice_bf(&u, &errors));
    }
    let mut best = 0;
    for k in 0..sweep.len() {
        if sweep[k] > sweep[best] {
            best = k;
        }
    }
    (sweep[best], (best + 1) as f64 / 100.0, sweep[49], sweep)
}

pub struct NetGradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_index: usize,
}

/// Central differences of the f64 training loss for the listed parameters,
/// against the f64 analytic gradient. Steps that move any hidden unit
/// across its ReLU kink are skipped.
pub fn network_fd_check(
    net: &evidseg::backbone::TinyNet,
    input: &Volume,
    labels: &LabelVolume,
    indices: &[usize],
    h: f32,
) -> NetGradCheck {
    let cfg = evidseg::losses::LossConfig::default();
    let (_, grad) = net.loss_and_grad::<f64>(input, labels, &cfg, 1.0).unwrap();
    let pattern = net.relu_pattern(input).unwrap();
    let mut out = NetGradCheck { checked: 0, skipped: 0, worst: 0.0, worst_index: 0 };
    let mut probe = net.clone();
    for &i in indices {
        let p = net.params()[i];
        let (hi, lo) = (p + h, p - h);
        probe.params_mut()[i] = hi;
        let up_pattern = probe.relu_pattern(input).unwrap();
        let up = probe.loss_and_grad::<f64>(input, labels, &cfg, 1.0).unwrap().0.total;
        probe.params_mut()[i] = lo;
        let down_pattern = probe.relu_pattern(input).unwrap();
        let down = probe.loss_and_grad::<f64>(input, labels, &cfg, 1.0).unwrap().0.total;
        probe.params_mut()[i] = p;
        if up_pattern != pattern || down_pattern != pattern {
            out.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (hi as f64 - lo as f64);
        let err = rel_err(grad[i], numeric, 1e-6);
        if err > out.worst {
            out.worst = err;
            out.worst_index = i;
        }
        out.checked += 1;
    }
    out
}
