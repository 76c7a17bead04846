//! Fast property suite behind `evidseg selfcheck`.
//!
//! Each check is independent and reports a one-line verdict. Reference
//! computations here are deliberately naive so they share no code paths
//! with the implementations they check.

use std::time::Instant;

use rand_distr::{Dirichlet, Distribution};

use crate::backbone::{Head, TinyNet, CLASSES, IN_CHANNELS, PARAM_COUNT};
use crate::backbone::{layout as param_layout, Checkpoint};
use crate::error::Result;
use crate::losses::{self, LossConfig};
use crate::metrics::{calibration_bin, dice_score, expected_calibration_error, uncertainty_error_overlap};
use crate::rng::Rng;
use crate::subjective_logic::{argmax_class, dirichlet_from_evidence, evidence_from_logits};
use crate::volio::{self, VolumeFile};
use crate::volume::{Dims, LabelVolume, Volume};

/// Replaceable internals, for fault-injection tests of the suite itself.
#[derive(Debug, Clone, Copy)]
pub struct SelfCheckHooks {
    pub digamma: fn(f64) -> f64,
}

impl Default for SelfCheckHooks {
    fn default() -> Self {
        Self {
            digamma: crate::special::digamma_unchecked,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<18} {} [{:.2} s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelfCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

type Check = fn(&SelfCheckHooks, &mut Rng) -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 7] = [
    ("mass_sum", check_mass_sum),
    ("ice_monte_carlo", check_ice_monte_carlo),
    ("kl_reference", check_kl_reference),
    ("loss_gradient", check_loss_gradient),
    ("network_gradient", check_network_gradient),
    ("metric_reference", check_metric_reference),
    ("io_round_trip", check_io_round_trip),
];

/// Runs every check, calling `on_result` as each one finishes.
pub fn run_selfcheck(hooks: &SelfCheckHooks, mut on_result: impl FnMut(&CheckOutcome)) -> SelfCheckReport {
    let mut checks = Vec::with_capacity(CHECKS.len());
    for (i, (name, check)) in CHECKS.iter().enumerate() {
        let mut rng = Rng::new(0x5e1f_c4ec + i as u64);
        let start = Instant::now();
        let (passed, detail) = match check(hooks, &mut rng) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let outcome = CheckOutcome {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_result(&outcome);
        checks.push(outcome);
    }
    SelfCheckReport { checks }
}

fn random_volume(dims: Dims, channels: usize, scale: f64, rng: &mut Rng) -> Result<Volume> {
    let data = (0..dims.voxels() * channels)
        .map(|_| (scale * rng.normal()) as f32)
        .collect();
    Volume::from_vec(dims, channels, data)
}

fn random_labels(dims: Dims, classes: usize, rng: &mut Rng) -> Result<LabelVolume> {
    let data = (0..dims.voxels()).map(|_| rng.below(classes) as u8).collect();
    LabelVolume::from_vec(dims, data)
}

fn check_mass_sum(_: &SelfCheckHooks, rng: &mut Rng) -> Result<(bool, String)> {
    let dims = Dims::new(100, 100, 10);
    let logits = random_volume(dims, CLASSES, 5.0, rng)?;
    let field = dirichlet_from_evidence(&evidence_from_logits(&logits))?;
    let mut worst: f64 = 0.0;
    for v in 0..dims.voxels() {
        let b: f64 = (0..CLASSES).map(|c| field.belief().at(c, v) as f64).sum();
        worst = worst.max((b + field.uncertainty().at(0, v) as f64 - 1.0).abs());
    }
    let zero = dirichlet_from_evidence(&Volume::zeros(Dims::cube(1), CLASSES)?)?;
    let u0 = zero.uncertainty().at(0, 0);
    Ok((
        worst <= 1e-6 && u0 == 1.0,
        format!("max |sum b + u - 1| = {worst:.2e} over 1e5 voxels; u(e=0) = {u0}"),
    ))
}

fn check_ice_monte_carlo(hooks: &SelfCheckHooks, rng: &mut Rng) -> Result<(bool, String)> {
    const DRAWS: usize = 20_000;
    let mut worst_z: f64 = 0.0;
    for _ in 0..8 {
        let alpha = [0; CLASSES].map(|_| rng.uniform_in(1.0, 10.0));
        let y = rng.below(CLASSES);
        let closed = losses::ice_voxel(&alpha, y, hooks.digamma);
        let dir = Dirichlet::new(alpha).expect("positive concentration");
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..DRAWS {
            let p = dir.sample(rng.as_rand());
            let ce = -p[y].max(f64::MIN_POSITIVE).ln();
            sum += ce;
            sum_sq += ce * ce;
        }
        let mean = sum / DRAWS as f64;
        let var = (sum_sq / DRAWS as f64 - mean * mean) * DRAWS as f64 / (DRAWS - 1) as f64;
        let se = (var / DRAWS as f64).sqrt();
        worst_z = worst_z.max((closed - mean).abs() / se);
    }
    Ok((
        worst_z <= 4.0,
        format!("worst |closed - MC| = {worst_z:.2} standard errors (8 alphas, 2e4 draws)"),
    ))
}

fn check_kl_reference(_: &SelfCheckHooks, _: &mut Rng) -> Result<(bool, String)> {
    let flat = losses::kl_voxel(&[1.0; 4]);
    let one = losses::kl_voxel(&[2.0, 1.0, 1.0, 1.0]);
    let want = 4f64.ln() - 13.0 / 12.0;
    Ok((
        flat.abs() <= 1e-12 && (one - want).abs() <= 1e-9,
        format!("KL(1,1,1,1) = {flat:.1e}; KL(2,1,1,1) - (ln 4 - 13/12) = {:.1e}", one - want),
    ))
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn check_loss_gradient(_: &SelfCheckHooks, rng: &mut Rng) -> Result<(bool, String)> {
    let cfg = LossConfig::default();
    let n = 27;
    let logits: Vec<f64> = (0..CLASSES * n).map(|_| 2.0 * rng.normal()).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.below(CLASSES) as u8).collect();
    let mut worst: f64 = 0.0;
    for head in [Head::Evidential, Head::Softmax] {
        let eval = |x: &[f64], g: &mut [f64]| match head {
            Head::Evidential => losses::evidential_objective(x, &labels, &cfg, 1.0, g).total,
            Head::Softmax => losses::softmax_objective(x, &labels, CLASSES, &cfg, g).total,
        };
        let mut grad = vec![0.0; logits.len()];
        eval(&logits, &mut grad);
        let mut scratch = vec![0.0; logits.len()];
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut x = logits.clone();
            x[i] += h;
            let up = eval(&x, &mut scratch);
            x[i] -= 2.0 * h;
            let down = eval(&x, &mut scratch);
            worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * h), 1e-7));
        }
    }
    Ok((
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 216 logits, both heads"),
    ))
}

fn check_network_gradient(_: &SelfCheckHooks, rng: &mut Rng) -> Result<(bool, String)> {
    let dims = Dims::cube(5);
    let cfg = LossConfig::default();
    let input = random_volume(dims, IN_CHANNELS, 1.0, rng)?;
    let labels = random_labels(dims, CLASSES, rng)?;
    let (mut worst, mut checked, mut skipped): (f64, usize, usize) = (0.0, 0, 0);
    for head in [Head::Evidential, Head::Softmax] {
        let net = TinyNet::init(head, rng);
        let (_, grad) = net.loss_and_grad::<f64>(&input, &labels, &cfg, 1.0)?;
        let pattern = net.relu_pattern(&input)?;
        let blocks = [
            param_layout::CONV1_W,
            param_layout::CONV1_B,
            param_layout::CONV2_W,
            param_layout::CONV2_B,
            param_layout::CONV3_W,
            param_layout::CONV3_B,
            PARAM_COUNT,
        ];
        for w in blocks.windows(2) {
            for _ in 0..3 {
                let i = w[0] + rng.below(w[1] - w[0]);
                let p = net.params()[i];
                let h = 1e-4f32;
                let mut plus = net.clone();
                plus.params_mut()[i] = p + h;
                let mut minus = net.clone();
                minus.params_mut()[i] = p - h;
                if plus.relu_pattern(&input)? != pattern || minus.relu_pattern(&input)? != pattern {
                    skipped += 1;
                    continue;
                }
                let up = plus.loss_and_grad::<f64>(&input, &labels, &cfg, 1.0)?.0.total;
                let down = minus.loss_and_grad::<f64>(&input, &labels, &cfg, 1.0)?.0.total;
                let step = (p + h) as f64 - (p - h) as f64;
                worst = worst.max(rel_err(grad[i], (up - down) / step, 1e-6));
                checked += 1;
            }
        }
    }
    Ok((
        worst <= 1e-3 && checked >= 30,
        format!("max relative error {worst:.2e} on {checked} parameters ({skipped} kink crossings skipped)"),
    ))
}

fn naive_dice(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0.0;
    let mut total = 0.0;
    for i in 0..a.len() {
        if a[i] {
            total += 1.0;
        }
        if b[i] {
            total += 1.0;
            if a[i] {
                inter += 1.0;
            }
        }
    }
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

fn check_metric_reference(_: &SelfCheckHooks, rng: &mut Rng) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut count_mismatch = 0;
    for _ in 0..10 {
        let dims = Dims::new(1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let n = dims.voxels();
        let logits = random_volume(dims, CLASSES, 2.0, rng)?;
        let mut p = vec![0.0f32; CLASSES * n];
        for v in 0..n {
            let e: Vec<f64> = (0..CLASSES).map(|c| (logits.at(c, v) as f64).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..CLASSES {
                p[c * n + v] = (e[c] / s) as f32;
            }
        }
        let prob = Volume::from_vec(dims, CLASSES, p)?;
        let gt = random_labels(dims, CLASSES, rng)?;
        let pred = argmax_class(&prob)?;

        let pm: Vec<bool> = pred.as_slice().iter().map(|&l| l != 0).collect();
        let gm: Vec<bool> = gt.as_slice().iter().map(|&l| l != 0).collect();
        let bin_pred = LabelVolume::from_vec(dims, pm.iter().map(|&b| b as u8).collect())?;
        let bin_gt = LabelVolume::from_vec(dims, gm.iter().map(|&b| b as u8).collect())?;
        worst = worst.max((dice_score(&bin_pred, &bin_gt)? - naive_dice(&pm, &gm)).abs());

        let (ece, bins) = expected_calibration_error(&prob, &gt, 10)?;
        let mut naive_ece = 0.0;
        for (b, bin) in bins.iter().enumerate() {
            let (lo, hi) = (b as f64 / 10.0, (b + 1) as f64 / 10.0);
            let (mut cnt, mut conf, mut acc) = (0usize, 0.0, 0.0);
            for v in 0..n {
                let mut best = 0;
                for c in 1..CLASSES {
                    if prob.at(c, v) > prob.at(best, v) {
                        best = c;
                    }
                }
                let cv = prob.at(best, v) as f64;
                if (cv > lo || b == 0) && cv <= hi {
                    cnt += 1;
                    conf += cv;
                    acc += f64::from(u8::from(best as u8 == gt.as_slice()[v]));
                }
            }
            if cnt != bin.count || calibration_bin(bin.upper, 10) != b {
                count_mismatch += 1;
            }
            if cnt > 0 {
                naive_ece += cnt as f64 / n as f64 * (acc / cnt as f64 - conf / cnt as f64).abs();
            }
        }
        worst = worst.max((ece - naive_ece).abs());

        let unc = Volume::from_vec(dims, 1, (0..n).map(|_| rng.uniform() as f32).collect())?;
        let ueo = uncertainty_error_overlap(&unc, &bin_pred, &bin_gt)?;
        let err: Vec<bool> = pm.iter().zip(&gm).map(|(a, b)| a != b).collect();
        for &(tau, score) in &ueo.sweep {
            let u: Vec<bool> = unc.as_slice().iter().map(|&x| x as f64 > tau).collect();
            worst = worst.max((score - naive_dice(&u, &err)).abs());
        }
    }
    Ok((
        worst <= 1e-12 && count_mismatch == 0,
        format!("max deviation {worst:.1e}, bin count mismatches {count_mismatch} (10 random volumes)"),
    ))
}

fn check_io_round_trip(_: &SelfCheckHooks, rng: &mut Rng) -> Result<(bool, String)> {
    let dims = Dims::new(3, 4, 5);
    let vol = random_volume(dims, IN_CHANNELS, 1.0, rng)?;
    let labels = random_labels(dims, CLASSES, rng)?;
    let net = TinyNet::init(Head::Evidential, rng);
    let ckpt = Checkpoint {
        head: Head::Evidential,
        params: net.params().to_vec(),
        adam_m: (0..PARAM_COUNT).map(|_| rng.normal() as f32).collect(),
        adam_v: (0..PARAM_COUNT).map(|_| rng.uniform() as f32).collect(),
        epoch: 7,
        loss_history: Vec::new(),
    };
    let dir = tempfile::tempdir().map_err(|e| crate::Error::io(std::env::temp_dir(), e))?;
    let vpath = dir.path().join("v.evol");
    let lpath = dir.path().join("l.evol");
    let cpath = dir.path().join("c.evck");
    volio::write_volume(&vpath, &vol)?;
    volio::write_labels(&lpath, &labels)?;
    volio::write_checkpoint(&cpath, &ckpt)?;
    let bits = |v: &Volume| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let vol_ok = matches!(volio::read_volume_file(&vpath)?, VolumeFile::Real(ref v) if bits(v) == bits(&vol));
    let lab_ok = volio::read_labels(&lpath)? == labels;
    let ck_ok = volio::read_checkpoint(&cpath)? == ckpt;
    let mut corrupt = std::fs::read(&vpath).map_err(|e| crate::Error::io(&vpath, e))?;
    corrupt[4] = 2;
    let rejects = volio::decode_volume_file(&corrupt).is_err();
    Ok((
        vol_ok && lab_ok && ck_ok && rejects,
        format!("volume {vol_ok}, labels {lab_ok}, checkpoint {ck_ok}, bad version rejected {rejects}"),
    ))
}
