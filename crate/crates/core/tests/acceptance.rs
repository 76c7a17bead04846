//! Acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary so every verdict is printed. Pass criterion ids
//! (`C1` … `C10`) as arguments to run a subset.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::rel_err;
use evidseg::backbone::{layout, predict_net, train_with, Checkpoint, Head, TinyNet, TrainConfig, PARAM_COUNT};
use evidseg::harness::{cmd_generate, cmd_sweep, cmd_train, ExperimentConfig, SweepResult, TrainOutcome};
use evidseg::losses::{
    cross_entropy_loss, ice_loss, ice_voxel, kl_to_uniform, kl_voxel, soft_dice_loss, total_loss, LossConfig,
};
use evidseg::metrics::{
    dice_score, expected_calibration_error, normalized_entropy, uncertainty_error_overlap, ECE_BINS,
};
use evidseg::phantom::{generate, merge_whole_tumor, PhantomConfig};
use evidseg::rng::Rng;
use evidseg::special::digamma;
use evidseg::subjective_logic::{argmax_class, dirichlet_from_evidence, evidence_from_logits};
use evidseg::volio::{self, VolumeFile};
use evidseg::{Dims, Error, LabelVolume, Volume};
use rand_distr::{Dirichlet, Distribution};

struct Verdict {
    passed: bool,
    detail: String,
    notes: Vec<String>,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
            notes: Vec::new(),
        }
    }
}

/// Desk-scale run for one training seed.
struct SeedRun {
    sweep: SweepResult,
    histories: BTreeMap<&'static str, TrainOutcome>,
    elapsed: Duration,
}

#[derive(Default)]
struct Context {
    runs: BTreeMap<u64, SeedRun>,
}

const TREND_SEEDS: [u64; 3] = [42, 43, 44];
const NOISE_LEVELS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

impl Context {
    fn run(&mut self, seed: u64) -> &SeedRun {
        self.runs.entry(seed).or_insert_with(|| {
            let start = Instant::now();
            let dir = tempfile::tempdir().expect("temporary directory");
            let mut cfg = ExperimentConfig::default();
            cfg.train.seed = seed;
            cfg.out_dir = dir.path().to_path_buf();
            cmd_generate(&cfg).expect("generate");
            let mut histories = BTreeMap::new();
            for head in [Head::Evidential, Head::Softmax] {
                let out = cmd_train(&cfg, head, |_| {}).expect("train");
                histories.insert(head.name(), out);
            }
            let sweep = cmd_sweep(&cfg).expect("sweep");
            SeedRun {
                sweep,
                histories,
                elapsed: start.elapsed(),
            }
        })
    }
}

fn c1_mass_sum(_: &mut Context) -> Verdict {
    let mut rng = Rng::new(1);
    let dims = Dims::new(100, 100, 10);
    let logits = common::random_volume(dims, 4, 6.0, &mut rng);
    let field = dirichlet_from_evidence(&evidence_from_logits(&logits)).unwrap();
    let mut worst: f64 = 0.0;
    for v in 0..dims.voxels() {
        let b: f64 = (0..4).map(|c| field.belief().at(c, v) as f64).sum();
        worst = worst.max((b + field.uncertainty().at(0, v) as f64 - 1.0).abs());
    }
    let zero = dirichlet_from_evidence(&Volume::zeros(Dims::new(5, 5, 4), 4).unwrap()).unwrap();
    let exact = zero.uncertainty().as_slice().iter().all(|&u| u == 1.0);
    Verdict::new(
        worst <= 1e-6 && exact,
        format!("max |Σb + u − 1| = {worst:.2e} over 1e5 voxels; zero evidence gives u = 1 exactly: {exact}"),
    )
}

fn c2_ice_monte_carlo(_: &mut Context) -> Verdict {
    const DRAWS: usize = 100_000;
    let mut rng = Rng::new(2);
    let (mut worst_z, mut within_two): (f64, usize) = (0.0, 0);
    for _ in 0..50 {
        let alpha = [0; 4].map(|_| rng.uniform_in(1.0, 10.0));
        let y = rng.below(4);
        let closed = ice_voxel(&alpha, y, |x| digamma(x).unwrap());
        let dir = Dirichlet::new(alpha).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..DRAWS {
            let p = dir.sample(rng.as_rand());
            let ce = -p[y].ln();
            sum += ce;
            sum_sq += ce * ce;
        }
        let n = DRAWS as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        let z = (closed - mean).abs() / se;
        worst_z = worst_z.max(z);
        within_two += usize::from(z <= 2.0);
    }
    Verdict::new(
        worst_z <= 3.0,
        format!("50 α × 1e5 draws: max |closed − MC| = {worst_z:.2} SE; {within_two}/50 within 2 SE"),
    )
}

fn c3_kl(_: &mut Context) -> Verdict {
    let uniform = kl_voxel(&[1.0; 4]);
    let one = kl_voxel(&[2.0, 1.0, 1.0, 1.0]);
    let target = 4f64.ln() - 13.0 / 12.0;
    let mut rng = Rng::new(3);
    let dims = Dims::new(25, 20, 20);
    let n = dims.voxels();
    let mut data = vec![0.0f32; 4 * n];
    for v in 0..n {
        let y = rng.below(4);
        for c in 0..4 {
            data[c * n + v] = if c == y { 1.0 } else { rng.uniform_in(1.0, 50.0) as f32 };
        }
    }
    let tilde = Volume::from_vec(dims, 4, data).unwrap();
    let mut min_kl = f64::INFINITY;
    let mut voxel = [0.0; 4];
    for v in 0..n {
        (0..4).for_each(|c| voxel[c] = tilde.at(c, v) as f64);
        min_kl = min_kl.min(kl_voxel(&voxel));
    }
    let (mean, _) = kl_to_uniform(&tilde).unwrap();
    Verdict::new(
        uniform.abs() <= 1e-12 && (one - target).abs() <= 1e-6 && min_kl >= 0.0 && mean >= 0.0,
        format!(
            "KL(uniform) = {uniform:.1e}; KL(2,1,1,1) = {one:.8} (ln 4 − 13/12 = {target:.8}); min over 1e4 α̃ = {min_kl:.3e}"
        ),
    )
}

fn finite_difference(x: &Volume, h: f64, f: impl Fn(&Volume) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.as_slice().len())
        .map(|i| {
            let v = x.as_slice()[i];
            let (plus, minus) = ((v as f64 + h) as f32, (v as f64 - h) as f32);
            probe.as_mut_slice()[i] = plus;
            let fp = f(&probe);
            probe.as_mut_slice()[i] = minus;
            let fm = f(&probe);
            probe.as_mut_slice()[i] = v;
            (fp - fm) / (plus as f64 - minus as f64)
        })
        .collect()
}

fn worst_error(analytic: &Volume, numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    analytic
        .as_slice()
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a as f64, n, 1e-3 * scale))
        .fold(0.0, f64::max)
}

fn c4_gradients(_: &mut Context) -> Verdict {
    let cfg = LossConfig::default();
    let dims = Dims::cube(6);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    let (mut checked, mut skipped, mut mixed): (usize, usize, f64) = (0, 0, 0.0);
    for seed in 0..20u64 {
        let mut rng = Rng::new(400 + seed);
        let logits = common::random_volume(dims, 4, 2.0, &mut rng);
        let labels = common::random_labels(dims, 4, &mut rng);
        let alpha = Volume::from_vec(
            dims,
            4,
            (0..4 * dims.voxels()).map(|_| rng.uniform_in(1.01, 10.0) as f32).collect(),
        )
        .unwrap();

        let (_, g) = ice_loss(&alpha, &labels).unwrap();
        record("ice", worst_error(&g, &finite_difference(&alpha, 1e-3, |a| ice_loss(a, &labels).unwrap().0)));
        let (_, g) = kl_to_uniform(&alpha).unwrap();
        record("kl", worst_error(&g, &finite_difference(&alpha, 1e-3, |a| kl_to_uniform(a).unwrap().0)));
        let prob = common::random_probabilities(dims, 4, 1.0, &mut rng);
        let (_, g) = soft_dice_loss(&prob, &labels, &cfg).unwrap();
        let fd = finite_difference(&prob, 1e-4, |p| soft_dice_loss(p, &labels, &cfg).unwrap().0);
        record("dice", worst_error(&g, &fd));
        let (_, g) = cross_entropy_loss(&prob, &labels).unwrap();
        record("ce", worst_error(&g, &finite_difference(&prob, 1e-5, |p| cross_entropy_loss(p, &labels).unwrap().0)));
        let (_, g) = total_loss(&logits, &labels, &cfg, 1.0).unwrap();
        let fd = finite_difference(&logits, 1e-3, |x| total_loss(x, &labels, &cfg, 1.0).unwrap().0.total);
        record("total", worst_error(&g, &fd));

        // Every parameter for the first seed, a sample from each block after.
        let input = common::random_volume(dims, 4, 1.0, &mut rng);
        for head in [Head::Evidential, Head::Softmax] {
            let net = TinyNet::init(head, &mut rng);
            let indices: Vec<usize> = if seed == 0 {
                (0..PARAM_COUNT).collect()
            } else {
                let blocks = [
                    (layout::CONV1_W, layout::CONV1_B),
                    (layout::CONV1_B, layout::CONV2_W),
                    (layout::CONV2_W, layout::CONV2_B),
                    (layout::CONV2_B, layout::CONV3_W),
                    (layout::CONV3_W, layout::CONV3_B),
                    (layout::CONV3_B, layout::END),
                ];
                blocks.iter().flat_map(|&(a, b)| (0..6).map(move |k| a + (k * 7919 + seed as usize * 31) % (b - a))).collect()
            };
            let r = common::network_fd_check(&net, &input, &labels, &indices, 1e-4);
            record("network", r.worst);
            checked += r.checked;
            skipped += r.skipped;

            let (_, g32) = net.loss_and_grad::<f32>(&input, &labels, &cfg, 1.0).unwrap();
            let (_, g64) = net.loss_and_grad::<f64>(&input, &labels, &cfg, 1.0).unwrap();
            let diff: f64 = g32.iter().zip(&g64).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = g64.iter().map(|b| b * b).sum::<f64>().sqrt();
            mixed = mixed.max(diff / norm);
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    let mut verdict = Verdict::new(
        max <= 1e-3 && mixed <= 1e-3 && checked >= PARAM_COUNT,
        format!(
            "worst relative error: {detail}; {checked} parameter probes ({skipped} skipped at ReLU kinks); f32 vs f64 gradient {mixed:.1e}"
        ),
    );
    verdict.notes.push("seed 0 probes every TinyNet parameter of both heads; seeds 1–19 probe 6 per block".into());
    verdict
}

fn c5_metrics(_: &mut Context) -> Verdict {
    let mut mismatches = Vec::new();
    for seed in 0..100u64 {
        let mut rng = Rng::new(500 + seed);
        let dims = Dims::new(1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let prob = common::random_probabilities(dims, 4, 2.0, &mut rng);
        let gt = common::random_labels(dims, 4, &mut rng);
        let u = common::random_volume(dims, 1, 1.0, &mut rng);
        let u = Volume::from_vec(dims, 1, u.as_slice().iter().map(|v| v.abs().min(1.0)).collect()).unwrap();
        let pred = argmax_class(&prob).unwrap();
        let (pw, gw) = (merge_whole_tumor(&pred), merge_whole_tumor(&gt));
        let bits = |m: &LabelVolume| m.as_slice().iter().map(|&l| l != 0).collect::<Vec<_>>();
        if dice_score(&pw, &gw).unwrap() != common::dice_bf(&bits(&pw), &bits(&gw)) {
            mismatches.push(format!("dice@{seed}"));
        }
        if (normalized_entropy(&prob) - common::ne_bf(&prob)).abs() > 1e-12 {
            mismatches.push(format!("ne@{seed}"));
        }
        let (ece, bins) = expected_calibration_error(&prob, &gt, ECE_BINS).unwrap();
        let (ece_ref, counts) = common::ece_bf(&prob, gt.as_slice(), ECE_BINS);
        if (ece - ece_ref).abs() > 1e-12 || bins.iter().map(|b| b.count).collect::<Vec<_>>() != counts {
            mismatches.push(format!("ece@{seed}"));
        }
        let ueo = uncertainty_error_overlap(&u, &pw, &gw).unwrap();
        let (best, tau, _, sweep) = common::ueo_bf(u.as_slice(), &bits(&pw), &bits(&gw));
        if ueo.best != best || ueo.best_threshold != tau || ueo.sweep.iter().map(|s| s.1).collect::<Vec<_>>() != sweep {
            mismatches.push(format!("ueo@{seed}"));
        }
    }
    let dims = Dims::new(2, 1, 1);
    let prob = Volume::from_vec(dims, 2, vec![0.8, 0.8, 0.2, 0.2]).unwrap();
    let gt = LabelVolume::from_vec(dims, vec![0, 1]).unwrap();
    let (ece, _) = expected_calibration_error(&prob, &gt, ECE_BINS).unwrap();
    let ece_ok = (ece - (0.8f32 as f64 - 0.5)).abs() <= 1e-9;
    let dims = Dims::new(4, 1, 1);
    let ueo = uncertainty_error_overlap(
        &Volume::new(dims, 1, 0.6).unwrap(),
        &LabelVolume::from_vec(dims, vec![1, 1, 0, 0]).unwrap(),
        &LabelVolume::new(dims, 0).unwrap(),
    )
    .unwrap();
    let ueo_ok = (ueo.best - 2.0 / 3.0).abs() <= 1e-9;
    let mut v = Verdict::new(
        mismatches.is_empty() && ece_ok && ueo_ok,
        format!(
            "100 random volumes: {} mismatches; hand cases ECE = {ece:.9} (0.3 at f32 confidence 0.8), UEO = {:.12}",
            mismatches.len(),
            ueo.best
        ),
    );
    v.notes.extend(mismatches);
    v.notes.push("Dice, UEO and bin counts compared for equality; NE and ECE sums to 1e-12".into());
    v
}

fn c6_overfit(_: &mut Context) -> Verdict {
    let cfg = PhantomConfig::default();
    let sample = generate(&cfg, &mut Rng::new(cfg.seed)).unwrap();
    let wt = merge_whole_tumor(&sample.labels);
    let data = vec![(sample.image.clone(), sample.labels.clone())];
    let tc = TrainConfig {
        epochs: 500,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let dice = |net: &TinyNet| {
        let p = predict_net(net, &sample.image).unwrap();
        dice_score(&merge_whole_tumor(&argmax_class(&p.prob).unwrap()), &wt).unwrap()
    };
    let (mut dice_200, mut first_below) = (f64::NAN, None);
    let start = Instant::now();
    let ckpt: Checkpoint = train_with(&data, Head::Evidential, &tc, |s, net| {
        if s.epoch == 200 {
            dice_200 = dice(net);
        }
        if first_below.is_none() && s.mean_loss.total < 0.1 {
            first_below = Some(s.epoch);
        }
    })
    .unwrap();
    let elapsed = start.elapsed();
    let final_dice = dice(&ckpt.net().unwrap());
    let last_loss = *ckpt.loss_history.last().unwrap();
    let mut v = Verdict::new(
        final_dice > 0.95 && elapsed < Duration::from_secs(180),
        format!("whole-tumor Dice after 500 steps {final_dice:.4} (after 200: {dice_200:.4}); {elapsed:.1?}"),
    );
    v.notes.push(match first_below {
        Some(step) => format!("total loss first below 0.1 at step {step}; last {last_loss:.4}"),
        None => format!("total loss never below 0.1 within 500 steps; last {last_loss:.4}"),
    });
    v
}

fn c7_desk_scale(ctx: &mut Context) -> Verdict {
    let run = ctx.run(42);
    let ev = run.sweep.cell(Head::Evidential, 0.0).unwrap().aggregate.dice_whole_tumor;
    let sm = run.sweep.cell(Head::Softmax, 0.0).unwrap().aggregate.dice_whole_tumor;
    let hist = &run.histories["evidential"].history;
    let (first, last) = (hist[0].loss.total, hist.last().unwrap().loss.total);
    let at_30 = hist[29].loss.total;
    let mut v = Verdict::new(
        ev >= 0.85 && sm >= 0.85 && run.elapsed < Duration::from_secs(15 * 60),
        format!(
            "clean-test whole-tumor Dice: evidential {ev:.4}, softmax {sm:.4}; {:.0?} for generate + both trainings + sweep",
            run.elapsed
        ),
    );
    v.notes.push(format!("evidential train loss: epoch 1 {first:.4}, epoch 30 {at_30:.4}, epoch 60 {last:.4}"));
    v.passed &= last < first && at_30 < first;
    v
}

fn c8_noise_trend(ctx: &mut Context) -> Verdict {
    let mut notes = Vec::new();
    let mut monotone = true;
    let (mut dice_ev, mut dice_sm, mut ece_ev, mut ece_sm) = (0.0, 0.0, 0.0, 0.0);
    for seed in TREND_SEEDS {
        let run = ctx.run(seed);
        let metric = |h: Head, s: f64| &run.sweep.cell(h, s).unwrap().aggregate;
        let u: Vec<f64> = NOISE_LEVELS.iter().map(|&s| metric(Head::Evidential, s).mean_uncertainty).collect();
        let ok = u.windows(2).all(|w| w[1] >= w[0] - 0.01);
        monotone &= ok;
        let (de, ds) = (metric(Head::Evidential, 1.5).dice_whole_tumor, metric(Head::Softmax, 1.5).dice_whole_tumor);
        let (ee, es) = (metric(Head::Evidential, 1.5).ece, metric(Head::Softmax, 1.5).ece);
        dice_ev += de / 3.0;
        dice_sm += ds / 3.0;
        ece_ev += ee / 3.0;
        ece_sm += es / 3.0;
        let u_text = u.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        notes.push(format!(
            "seed {seed}: u(σ²) = [{u_text}]{}; σ²=1.5 Dice ev {de:.4} / sm {ds:.4}, ECE ev {ee:.4} / sm {es:.4}",
            if ok { "" } else { " NOT non-decreasing" }
        ));
        if de < ds - 0.02 || ee > es + 0.02 {
            notes.push(format!("seed {seed}: trend deviation, margin check fails for this seed"));
        }
    }
    let margins = dice_ev >= dice_sm - 0.02 && ece_ev <= ece_sm + 0.02;
    let mut v = Verdict::new(
        monotone && margins,
        format!(
            "u non-decreasing for every seed: {monotone}; 3-seed mean at σ²=1.5: Dice ev {dice_ev:.4} vs sm {dice_sm:.4}, ECE ev {ece_ev:.4} vs sm {ece_sm:.4}"
        ),
    );
    v.notes = notes;
    v
}

fn csv_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "evck" | "svg" | "json")) {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(key, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c9_determinism(_: &mut Context) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let mut cfg = ExperimentConfig::parse(
            "n_train = 6\nn_val = 2\nn_test = 3\nphantom.dims = 16\nphantom.outer_radius = 2.5, 4.0\ntrain.epochs = 4\n",
        )
        .unwrap();
        cfg.out_dir = dir.path().join(name);
        cmd_generate(&cfg).unwrap();
        for head in [Head::Evidential, Head::Softmax] {
            cmd_train(&cfg, head, |_| {}).unwrap();
        }
        cmd_sweep(&cfg).unwrap();
        outputs.push(csv_files(&cfg.out_dir));
    }
    let csvs = outputs[0].keys().filter(|k| k.ends_with(".csv")).count();
    let differing: Vec<&String> = outputs[0].iter().filter(|(k, v)| outputs[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    let mut v = Verdict::new(
        differing.is_empty() && outputs[0].len() == outputs[1].len() && csvs == 15,
        format!("{} output files ({csvs} CSV) compared across two runs; {} differ", outputs[0].len(), differing.len()),
    );
    v.notes.extend(differing.into_iter().cloned());
    v
}

fn c10_io(_: &mut Context) -> Verdict {
    let mut rng = Rng::new(10);
    let mut failures = Vec::new();
    for trial in 0..50 {
        let dims = Dims::new(1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(9));
        let channels = 1 + rng.below(4);
        let data: Vec<f32> = (0..dims.voxels() * channels).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
        let vol = Volume::from_vec(dims, channels, data).unwrap();
        match volio::decode_volume_file(&volio::encode_volume(&vol).unwrap()) {
            Ok(VolumeFile::Real(back))
                if back.dims() == dims
                    && back.as_slice().iter().zip(vol.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()) => {}
            _ => failures.push(format!("f32 volume {trial}")),
        }
        let labels = LabelVolume::from_vec(dims, (0..dims.voxels()).map(|_| rng.next_u64() as u8).collect()).unwrap();
        match volio::decode_volume_file(&volio::encode_labels(&labels).unwrap()) {
            Ok(VolumeFile::Labels(back)) if back == labels => {}
            _ => failures.push(format!("u8 volume {trial}")),
        }
    }
    let mut draw = || (0..PARAM_COUNT).map(|_| rng.normal() as f32).collect::<Vec<_>>();
    let ckpt = Checkpoint {
        head: Head::Softmax,
        params: draw(),
        adam_m: draw(),
        adam_v: draw(),
        epoch: 17,
        loss_history: Vec::new(),
    };
    let bytes = volio::encode_checkpoint(&ckpt).unwrap();
    if volio::decode_checkpoint(&bytes).ok().as_ref() != Some(&ckpt) {
        failures.push("checkpoint".into());
    }

    let vol_bytes = volio::encode_volume(&Volume::new(Dims::new(2, 2, 2), 3, 0.5).unwrap()).unwrap();
    let mut rejected = 0;
    let mut cases = 0;
    let mut check = |bytes: &[u8], decode: &dyn Fn(&[u8]) -> bool| {
        cases += 1;
        rejected += usize::from(decode(bytes));
    };
    let evol_rejects = |b: &[u8]| matches!(volio::decode_volume_file(b), Err(Error::Format(_)));
    let evck_rejects = |b: &[u8]| matches!(volio::decode_checkpoint(b), Err(Error::Format(_)));
    for byte in 0..volio::EVOL_HEADER_LEN {
        let mut b = vol_bytes.clone();
        b[byte] ^= 0x5a;
        check(&b, &evol_rejects);
    }
    check(&vol_bytes[..vol_bytes.len() - 1], &evol_rejects);
    check(&vol_bytes[..10], &evol_rejects);
    for byte in [0, 3, 4, 8, 9, 16] {
        let mut b = bytes.clone();
        b[byte] ^= 0x5a;
        check(&b, &evck_rejects);
    }
    check(&bytes[..bytes.len() - 2], &evck_rejects);
    Verdict::new(
        failures.is_empty() && rejected == cases,
        format!(
            "100 volume and 1 checkpoint round-trips bitwise ({} failures); {rejected}/{cases} corrupted headers rejected as format errors",
            failures.len()
        ),
    )
}

type Criterion = (&'static str, &'static str, fn(&mut Context) -> Verdict);

const CRITERIA: [Criterion; 10] = [
    ("C1", "mass-sum identity", c1_mass_sum),
    ("C2", "ICE closed form vs Monte-Carlo", c2_ice_monte_carlo),
    ("C3", "KL correctness", c3_kl),
    ("C4", "gradient checks", c4_gradients),
    ("C5", "metric oracles", c5_metrics),
    ("C6", "single-sample overfit", c6_overfit),
    ("C7", "desk-scale training", c7_desk_scale),
    ("C8", "noise-robustness trend", c8_noise_trend),
    ("C9", "pipeline determinism", c9_determinism),
    ("C10", "EVOL/EVCK I/O", c10_io),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut ctx = Context::default();
    let (mut passed, mut failed) = (0, 0);
    for (id, name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| f.eq_ignore_ascii_case(id)) {
            continue;
        }
        let start = Instant::now();
        let v = run(&mut ctx);
        let verdict = if v.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {id:<3} {name}: {} [{:.1?}]", v.detail, start.elapsed());
        for note in &v.notes {
            println!("          {note}");
        }
        if v.passed {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
