//! Segmentation and uncertainty-quality metrics: Dice, normalized entropy,
//! expected calibration error and uncertainty-error overlap.
//!
//! NE and ECE use every voxel of the volume and all classes. UEO compares a
//! thresholded uncertainty map with the whole-tumour error map.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::phantom::merge_whole_tumor;
use crate::subjective_logic::argmax_class;
use crate::volume::{check_same_dims, LabelVolume, Volume};

pub const ECE_BINS: usize = 10;
/// UEO thresholds are `k / UEO_STEPS` for `k = 1 .. UEO_STEPS − 1`.
pub const UEO_STEPS: usize = 100;

fn overlap_dice(intersection: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (a + b) as f64
    }
}

/// `2|P∩G| / (|P| + |G|)` on binary masks (nonzero = foreground); 1 when
/// both are empty.
pub fn dice_score(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    check_same_dims(pred.dims(), gt.dims(), "dice")?;
    let (mut inter, mut p, mut g) = (0, 0, 0);
    for (&a, &b) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (a, b) = (a != 0, b != 0);
        inter += usize::from(a && b);
        p += usize::from(a);
        g += usize::from(b);
    }
    Ok(overlap_dice(inter, p, g))
}

/// Entropy of voxel `v` divided by `ln C`.
fn voxel_entropy(prob: &Volume, v: usize) -> f64 {
    let classes = prob.channels();
    let norm = (classes as f64).ln();
    if norm <= 0.0 {
        return 0.0;
    }
    let h: f64 = (0..classes)
        .map(|c| {
            let p = prob.at(c, v) as f64;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    h / norm
}

/// Per-voxel entropy divided by `ln C`, as a one-channel volume.
pub fn voxel_normalized_entropy(prob: &Volume) -> Volume {
    let data = (0..prob.voxels()).map(|v| voxel_entropy(prob, v) as f32).collect();
    Volume::from_vec(prob.dims(), 1, data).expect("same dims")
}

/// Mean normalized Shannon entropy over all voxels.
pub fn normalized_entropy(prob: &Volume) -> f64 {
    (0..prob.voxels()).map(|v| voxel_entropy(prob, v)).sum::<f64>() / prob.voxels() as f64
}

fn mean(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Bin `b` covers `(b/bins, (b+1)/bins]`; nonpositive confidences go to
/// the first bin.
pub fn calibration_bin(confidence: f64, bins: usize) -> usize {
    let n = bins as f64;
    let mut b = ((confidence * n).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
    while b > 0 && confidence <= b as f64 / n {
        b -= 1;
    }
    while b + 1 < bins && confidence > (b + 1) as f64 / n {
        b += 1;
    }
    b
}

/// ECE over equal-width confidence bins, with the per-bin detail.
pub fn expected_calibration_error(
    prob: &Volume,
    gt: &LabelVolume,
    bins: usize,
) -> Result<(f64, Vec<CalibrationBin>)> {
    check_same_dims(prob.dims(), gt.dims(), "calibration")?;
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    let pred = argmax_class(prob)?;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct = vec![0usize; bins];
    for v in 0..prob.voxels() {
        let k = pred.as_slice()[v] as usize;
        let conf = prob.at(k, v) as f64;
        let b = calibration_bin(conf, bins);
        count[b] += 1;
        conf_sum[b] += conf;
        correct[b] += usize::from(pred.as_slice()[v] == gt.as_slice()[v]);
    }
    let n = prob.voxels() as f64;
    let mut ece = 0.0;
    let detail = (0..bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] > 0 {
                (conf_sum[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
            } else {
                (0.0, 0.0)
            };
            ece += count[b] as f64 / n * (accuracy - mean_confidence).abs();
            CalibrationBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                mean_confidence,
                accuracy,
                count: count[b],
            }
        })
        .collect();
    Ok((ece, detail))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeoResult {
    pub best: f64,
    /// Smallest threshold reaching `best`.
    pub best_threshold: f64,
    pub at_half: f64,
    /// `(threshold, ueo)` for every swept threshold.
    pub sweep: Vec<(f64, f64)>,
}

/// Dice between `uncertainty > τ` and the error map `pred ≠ gt`, swept
/// over `τ ∈ {0.01, …, 0.99}`.
pub fn uncertainty_error_overlap(
    uncertainty: &Volume,
    pred: &LabelVolume,
    gt: &LabelVolume,
) -> Result<UeoResult> {
    if uncertainty.channels() != 1 {
        return Err(Error::invalid("uncertainty map must have one channel"));
    }
    check_same_dims(uncertainty.dims(), pred.dims(), "uncertainty")?;
    check_same_dims(pred.dims(), gt.dims(), "error map")?;
    let errors: Vec<bool> = pred.as_slice().iter().zip(gt.as_slice()).map(|(a, b)| a != b).collect();
    let n_err = errors.iter().filter(|&&e| e).count();
    let u = uncertainty.as_slice();

    let mut sweep = Vec::with_capacity(UEO_STEPS - 1);
    let (mut best, mut best_threshold, mut at_half) = (f64::NEG_INFINITY, 0.0, 0.0);
    for k in 1..UEO_STEPS {
        let tau = k as f64 / UEO_STEPS as f64;
        let (mut n_unc, mut inter) = (0, 0);
        for (&uv, &e) in u.iter().zip(&errors) {
            if uv as f64 > tau {
                n_unc += 1;
                inter += usize::from(e);
            }
        }
        let score = overlap_dice(inter, n_unc, n_err);
        if score > best {
            best = score;
            best_threshold = tau;
        }
        if 2 * k == UEO_STEPS {
            at_half = score;
        }
        sweep.push((tau, score));
    }
    Ok(UeoResult {
        best,
        best_threshold,
        at_half,
        sweep,
    })
}

/// Which map fed the UEO computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintySource {
    /// Subjective-logic uncertainty mass `u = C / S`.
    DirichletMass,
    /// Per-voxel normalized entropy, for heads without an uncertainty output.
    NormalizedEntropy,
}

impl UncertaintySource {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintySource::DirichletMass => "dirichlet_mass",
            UncertaintySource::NormalizedEntropy => "normalized_entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dice_whole_tumor: f64,
    pub dice_per_class: Vec<f64>,
    pub ne: f64,
    pub ece: f64,
    pub ueo_best: f64,
    pub ueo_best_threshold: f64,
    pub ueo_at_half: f64,
    pub mean_uncertainty: f64,
    pub uncertainty_source: UncertaintySource,
    pub calibration_bins: Vec<CalibrationBin>,
    pub ueo_sweep: Vec<(f64, f64)>,
}

impl MetricsReport {
    /// Scalar fields as `(column, value)` pairs, per-class Dice expanded to
    /// `dice_class<k>`.
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("dice_whole_tumor".to_string(), self.dice_whole_tumor),
            ("ne".to_string(), self.ne),
            ("ece".to_string(), self.ece),
            ("ueo_best".to_string(), self.ueo_best),
            ("ueo_best_threshold".to_string(), self.ueo_best_threshold),
            ("ueo_at_half".to_string(), self.ueo_at_half),
            ("mean_uncertainty".to_string(), self.mean_uncertainty),
        ];
        for (k, d) in self.dice_per_class.iter().enumerate() {
            out.push((format!("dice_class{k}"), *d));
        }
        out
    }

    /// Sample average. Scalars and the UEO sweep are arithmetic means;
    /// calibration bins are pooled (counts summed, confidence and accuracy
    /// count-weighted).
    pub fn average(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or_else(|| Error::invalid("no reports to average"))?;
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        for r in reports {
            if r.dice_per_class.len() != first.dice_per_class.len()
                || r.calibration_bins.len() != first.calibration_bins.len()
                || r.ueo_sweep.len() != first.ueo_sweep.len()
                || r.uncertainty_source != first.uncertainty_source
            {
                return Err(Error::invalid("reports have inconsistent shapes"));
            }
        }
        let calibration_bins = (0..first.calibration_bins.len())
            .map(|b| {
                let count: usize = reports.iter().map(|r| r.calibration_bins[b].count).sum();
                let weighted = |f: &dyn Fn(&CalibrationBin) -> f64| {
                    if count == 0 {
                        0.0
                    } else {
                        reports
                            .iter()
                            .map(|r| f(&r.calibration_bins[b]) * r.calibration_bins[b].count as f64)
                            .sum::<f64>()
                            / count as f64
                    }
                };
                CalibrationBin {
                    lower: first.calibration_bins[b].lower,
                    upper: first.calibration_bins[b].upper,
                    mean_confidence: weighted(&|c| c.mean_confidence),
                    accuracy: weighted(&|c| c.accuracy),
                    count,
                }
            })
            .collect();
        Ok(MetricsReport {
            dice_whole_tumor: avg(&|r| r.dice_whole_tumor),
            dice_per_class: (0..first.dice_per_class.len())
                .map(|k| avg(&|r| r.dice_per_class[k]))
                .collect(),
            ne: avg(&|r| r.ne),
            ece: avg(&|r| r.ece),
            ueo_best: avg(&|r| r.ueo_best),
            ueo_best_threshold: avg(&|r| r.ueo_best_threshold),
            ueo_at_half: avg(&|r| r.ueo_at_half),
            mean_uncertainty: avg(&|r| r.mean_uncertainty),
            uncertainty_source: first.uncertainty_source,
            calibration_bins,
            ueo_sweep: (0..first.ueo_sweep.len())
                .map(|k| (first.ueo_sweep[k].0, avg(&|r| r.ueo_sweep[k].1)))
                .collect(),
        })
    }
}

/// Full report for one prediction. Without an uncertainty map, per-voxel
/// normalized entropy stands in for it.
pub fn evaluate(
    prob: &Volume,
    uncertainty: Option<&Volume>,
    gt: &LabelVolume,
    classes: usize,
) -> Result<MetricsReport> {
    if prob.channels() != classes {
        return Err(Error::invalid(format!(
            "expected {classes} probability channels, got {}",
            prob.channels()
        )));
    }
    check_same_dims(prob.dims(), gt.dims(), "evaluation")?;
    gt.validate(classes)?;
    let pred = argmax_class(prob)?;

    let dice_per_class = (0..classes as u8)
        .map(|c| {
            let p = mask(&pred, |l| l == c);
            let g = mask(gt, |l| l == c);
            dice_score(&p, &g)
        })
        .collect::<Result<Vec<_>>>()?;
    let pred_wt = merge_whole_tumor(&pred);
    let gt_wt = merge_whole_tumor(gt);
    let dice_whole_tumor = dice_score(&pred_wt, &gt_wt)?;

    let entropy = voxel_normalized_entropy(prob);
    let ne = normalized_entropy(prob);
    let (ece, calibration_bins) = expected_calibration_error(prob, gt, ECE_BINS)?;

    let (unc, uncertainty_source) = match uncertainty {
        Some(u) => (u, UncertaintySource::DirichletMass),
        None => (&entropy, UncertaintySource::NormalizedEntropy),
    };
    let ueo = uncertainty_error_overlap(unc, &pred_wt, &gt_wt)?;

    Ok(MetricsReport {
        dice_whole_tumor,
        dice_per_class,
        ne,
        ece,
        ueo_best: ueo.best,
        ueo_best_threshold: ueo.best_threshold,
        ueo_at_half: ueo.at_half,
        mean_uncertainty: mean(unc.as_slice()),
        uncertainty_source,
        calibration_bins,
        ueo_sweep: ueo.sweep,
    })
}

fn mask(labels: &LabelVolume, keep: impl Fn(u8) -> bool) -> LabelVolume {
    let data = labels.as_slice().iter().map(|&l| u8::from(keep(l))).collect();
    LabelVolume::from_vec(labels.dims(), data).expect("same dims")
}
