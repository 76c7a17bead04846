//! Pipeline commands: generate → train → eval / sweep.
//!
//! Output tree under the configured directory:
//!
//! ```text
//! config.txt                       resolved configuration
//! data/manifest.csv                index, split, seed, image, labels
//! data/sample_000_image.evol       4-channel z-scored intensities
//! data/sample_000_labels.evol      class indices 0..3
//! models/<head>.evck               checkpoint
//! models/<head>_loss.csv           per-epoch loss and validation Dice
//! eval/<head>_sigma2_<s>.json      aggregate report with metadata
//! eval/<head>_sigma2_<s>.csv       per-sample rows
//! sweep/sweep.csv                  every (head, sigma2, sample) row
//! sweep/summary.csv                per-(head, sigma2) means
//! sweep/{dice,ne,ece,ueo}.svg      metric against noise variance
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::backbone::{predict_net, train_with, Checkpoint, Head, TinyNet, CLASSES};
use crate::error::{Error, Result};
use crate::losses::LossValue;
use crate::metrics::{dice_score, evaluate, MetricsReport};
use crate::phantom::{generate, merge_whole_tumor, LABEL_MAP};
use crate::rng::{derive_seed, Rng};
use crate::subjective_logic::argmax_class;
use crate::volio::{self, Cell, CsvRow, PlotSeries};
use crate::volume::{LabelVolume, Volume};

pub const THREADS_ENV: &str = "EVIDSEG_THREADS";

/// File locations below an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.csv")
    }

    pub fn image_name(index: usize) -> String {
        format!("sample_{index:03}_image.evol")
    }

    pub fn labels_name(index: usize) -> String {
        format!("sample_{index:03}_labels.evol")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn checkpoint(&self, head: Head) -> PathBuf {
        self.models_dir().join(format!("{head}.evck"))
    }

    pub fn loss_log(&self, head: Head) -> PathBuf {
        self.models_dir().join(format!("{head}_loss.csv"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    fn eval_file(&self, head: Head, sigma2: f64, extension: &str) -> PathBuf {
        let sigma = volio::format_significant(sigma2, 6);
        self.eval_dir().join(format!("{head}_sigma2_{sigma}.{extension}"))
    }

    pub fn eval_report(&self, head: Head, sigma2: f64) -> PathBuf {
        self.eval_file(head, sigma2, "json")
    }

    pub fn eval_rows(&self, head: Head, sigma2: f64) -> PathBuf {
        self.eval_file(head, sigma2, "csv")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.sweep_dir().join("sweep.csv")
    }

    pub fn sweep_summary(&self) -> PathBuf {
        self.sweep_dir().join("summary.csv")
    }

    pub fn plot(&self, metric: &str) -> PathBuf {
        self.sweep_dir().join(format!("{metric}.svg"))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::format(format!("unknown split {other:?} in manifest"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
    pub image: String,
    pub labels: String,
}

/// One loaded dataset sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: usize,
    pub image: Volume,
    pub labels: LabelVolume,
}

/// Writes `n_train + n_val + n_test` phantoms and the manifest. Sample `i`
/// is drawn with seed `phantom.seed + i`; splits are consecutive.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    create_dir(&layout.data_dir())?;
    volio::write_atomic(&layout.config(), cfg.to_text().as_bytes())?;
    let mut entries = Vec::with_capacity(cfg.n_total());
    for index in 0..cfg.n_total() {
        let split = if index < cfg.n_train {
            Split::Train
        } else if index < cfg.n_train + cfg.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let seed = cfg.phantom.seed.wrapping_add(index as u64);
        let sample = generate(&cfg.phantom, &mut Rng::new(seed))?;
        let entry = ManifestEntry {
            index,
            split,
            seed,
            image: Layout::image_name(index),
            labels: Layout::labels_name(index),
        };
        volio::write_volume(&layout.data_dir().join(&entry.image), &sample.image)?;
        volio::write_labels(&layout.data_dir().join(&entry.labels), &sample.labels)?;
        entries.push(entry);
    }
    let rows: Vec<CsvRow> = entries
        .iter()
        .map(|e| {
            [
                ("index".to_string(), Cell::Text(e.index.to_string())),
                ("split".to_string(), Cell::from(e.split.name())),
                ("seed".to_string(), Cell::Text(e.seed.to_string())),
                ("image".to_string(), Cell::from(e.image.as_str())),
                ("labels".to_string(), Cell::from(e.labels.as_str())),
            ]
            .into()
        })
        .collect();
    volio::write_csv(&layout.manifest(), &rows)?;
    Ok(entries)
}

pub fn read_manifest(layout: &Layout) -> Result<Vec<ManifestEntry>> {
    let path = layout.manifest();
    if !path.exists() {
        return Err(Error::NotFound(format!(
            "dataset manifest {} (run `generate` first)",
            path.display()
        )));
    }
    volio::read_csv(&path)?
        .into_iter()
        .map(|row| {
            let field = |k: &str| {
                row.get(k)
                    .cloned()
                    .ok_or_else(|| Error::format(format!("manifest is missing column {k}")))
            };
            let number = |k: &str| -> Result<u64> {
                field(k)?
                    .parse()
                    .map_err(|_| Error::format(format!("manifest column {k} is not an integer")))
            };
            Ok(ManifestEntry {
                index: number("index")? as usize,
                split: Split::parse(&field("split")?)?,
                seed: number("seed")?,
                image: field("image")?,
                labels: field("labels")?,
            })
        })
        .collect()
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<Sample>> {
    let layout = Layout::new(&cfg.out_dir);
    read_manifest(&layout)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            Ok(Sample {
                index: e.index,
                image: volio::read_volume(&layout.data_dir().join(&e.image))?,
                labels: volio::read_labels(&layout.data_dir().join(&e.labels))?,
            })
        })
        .collect()
}

/// Mean whole-tumour Dice of `net` on clean samples.
pub fn whole_tumor_dice(net: &TinyNet, samples: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let pred = argmax_class(&predict_net(net, &s.image)?.prob)?;
        sum += dice_score(&merge_whole_tumor(&pred), &merge_whole_tumor(&s.labels))?;
    }
    Ok(sum / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossValue,
    /// Whole-tumour Dice on the validation split, when it is nonempty.
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub path: PathBuf,
    pub history: Vec<EpochLog>,
}

/// Trains `head` on the train split, logging loss and validation Dice per
/// epoch, and writes the checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig, head: Head, mut progress: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let train: Vec<(Volume, LabelVolume)> = load_split(cfg, Split::Train)?
        .into_iter()
        .map(|s| (s.image, s.labels))
        .collect();
    if train.is_empty() {
        return Err(Error::NotFound("training split is empty".into()));
    }
    let val = load_split(cfg, Split::Val)?;
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut failure = None;
    let checkpoint = train_with(&train, head, &cfg.train, |summary, net| {
        let val_dice = if val.is_empty() || failure.is_some() {
            None
        } else {
            match whole_tumor_dice(net, &val) {
                Ok(d) => Some(d),
                Err(e) => {
                    failure = Some(e);
                    None
                }
            }
        };
        let log = EpochLog {
            epoch: summary.epoch,
            loss: summary.mean_loss,
            val_dice,
        };
        progress(&log);
        history.push(log);
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    create_dir(&layout.models_dir())?;
    let rows: Vec<CsvRow> = history
        .iter()
        .map(|h| {
            [
                ("epoch".to_string(), Cell::Num(h.epoch as f64)),
                ("loss_total".to_string(), Cell::Num(h.loss.total)),
                ("loss_ce".to_string(), Cell::Num(h.loss.ice)),
                ("loss_kl".to_string(), Cell::Num(h.loss.kl)),
                ("loss_dice".to_string(), Cell::Num(h.loss.dice)),
                ("val_dice".to_string(), Cell::Num(h.val_dice.unwrap_or(f64::NAN))),
            ]
            .into()
        })
        .collect();
    volio::write_csv(&layout.loss_log(head), &rows)?;
    let path = layout.checkpoint(head);
    volio::write_checkpoint(&path, &checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        path,
        history,
    })
}

/// Seed of the evaluation noise for one sample at one noise level.
pub fn noise_seed(base: u64, sample_index: usize, sigma2: f64) -> u64 {
    derive_seed(base, &[sample_index as u64, sigma2.to_bits()])
}

/// Test image after re-normalization and seeded Gaussian degradation.
pub fn degrade(image: &Volume, sigma2: f64, seed: u64) -> Result<Volume> {
    image.znorm().gaussian_noise(sigma2, &mut Rng::new(seed))
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub head: Head,
    pub sigma2: f64,
    pub aggregate: MetricsReport,
    /// `(sample index, report)` per test sample.
    pub samples: Vec<(usize, MetricsReport)>,
}

impl EvalOutcome {
    pub fn rows(&self) -> Vec<CsvRow> {
        self.samples
            .iter()
            .map(|(index, r)| {
                let mut row: CsvRow = r.scalars().into_iter().map(|(k, v)| (k, Cell::Num(v))).collect();
                row.insert("head".into(), Cell::from(self.head.name()));
                row.insert("sigma2".into(), Cell::Num(self.sigma2));
                row.insert("sample".into(), Cell::Num(*index as f64));
                row
            })
            .collect()
    }

    fn summary_row(&self) -> CsvRow {
        let mut row: CsvRow = self
            .aggregate
            .scalars()
            .into_iter()
            .map(|(k, v)| (k, Cell::Num(v)))
            .collect();
        row.insert("head".into(), Cell::from(self.head.name()));
        row.insert("sigma2".into(), Cell::Num(self.sigma2));
        row.insert("samples".into(), Cell::Num(self.samples.len() as f64));
        row
    }
}

/// JSON layout of an aggregate evaluation report.
#[derive(Serialize)]
struct ReportFile<'a> {
    head: &'a str,
    sigma2: f64,
    samples: usize,
    ne_scope: &'static str,
    ece_scope: &'static str,
    ueo_scope: &'static str,
    label_map: [u8; 4],
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

/// Evaluates a checkpoint on `test` at noise variance `sigma2` without
/// touching the filesystem.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    test: &[Sample],
    sigma2: f64,
    eval_seed: u64,
) -> Result<EvalOutcome> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be finite and >= 0, got {sigma2}")));
    }
    if test.is_empty() {
        return Err(Error::NotFound("test split is empty".into()));
    }
    let net = ckpt.net()?;
    let samples = test
        .iter()
        .map(|s| {
            let image = degrade(&s.image, sigma2, noise_seed(eval_seed, s.index, sigma2))?;
            let p = predict_net(&net, &image)?;
            Ok((s.index, evaluate(&p.prob, p.uncertainty.as_ref(), &s.labels, CLASSES)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = samples.iter().map(|(_, r)| r.clone()).collect();
    Ok(EvalOutcome {
        head: ckpt.head,
        sigma2,
        aggregate: MetricsReport::average(&reports)?,
        samples,
    })
}

fn write_eval(layout: &Layout, outcome: &EvalOutcome) -> Result<()> {
    create_dir(&layout.eval_dir())?;
    let file = ReportFile {
        head: outcome.head.name(),
        sigma2: outcome.sigma2,
        samples: outcome.samples.len(),
        ne_scope: "all_voxels_all_classes",
        ece_scope: "all_voxels_all_classes",
        ueo_scope: "whole_tumor_error_map",
        label_map: LABEL_MAP,
        metrics: &outcome.aggregate,
    };
    let mut json = serde_json::to_string_pretty(&file).map_err(|e| Error::format(e.to_string()))?;
    json.push('\n');
    volio::write_atomic(&layout.eval_report(outcome.head, outcome.sigma2), json.as_bytes())?;
    volio::write_csv(&layout.eval_rows(outcome.head, outcome.sigma2), &outcome.rows())
}

fn load_checkpoint(layout: &Layout, head: Head) -> Result<Checkpoint> {
    let path = layout.checkpoint(head);
    let ckpt = volio::read_checkpoint(&path).map_err(|e| match e {
        Error::NotFound(_) => Error::NotFound(format!("checkpoint {} (run `train` first)", path.display())),
        other => other,
    })?;
    if ckpt.head != head {
        return Err(Error::format(format!("{} holds a {} checkpoint", path.display(), ckpt.head)));
    }
    Ok(ckpt)
}

/// Evaluates the `head` checkpoint on the test split at `sigma2` and writes
/// the aggregate report and per-sample rows.
pub fn cmd_eval(cfg: &ExperimentConfig, head: Head, sigma2: f64) -> Result<EvalOutcome> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be finite and >= 0, got {sigma2}")));
    }
    let layout = Layout::new(&cfg.out_dir);
    let ckpt = load_checkpoint(&layout, head)?;
    let test = load_split(cfg, Split::Test)?;
    let outcome = evaluate_checkpoint(&ckpt, &test, sigma2, cfg.eval_seed)?;
    write_eval(&layout, &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// One entry per (head, σ²), heads outermost, in configuration order.
    pub cells: Vec<EvalOutcome>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<CsvRow> {
        self.cells.iter().flat_map(EvalOutcome::rows).collect()
    }

    pub fn cell(&self, head: Head, sigma2: f64) -> Option<&EvalOutcome> {
        self.cells.iter().find(|c| c.head == head && c.sigma2 == sigma2)
    }
}

/// Worker-thread cap from `EVIDSEG_THREADS`, default 1.
pub fn thread_limit() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Metric plots written by the sweep: file stem, report column, axis label.
pub const SWEEP_PLOTS: [(&str, &str, &str); 4] = [
    ("dice", "dice_whole_tumor", "Dice (whole tumour)"),
    ("ne", "ne", "Normalized entropy"),
    ("ece", "ece", "Expected calibration error"),
    ("ueo", "ueo_best", "Uncertainty-error overlap"),
];

/// Evaluates every (head, σ²) cell, writes the per-cell reports, the
/// combined CSV, the summary CSV and one plot per metric.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let threads = thread_limit()?;
    let ckpts = cfg
        .heads
        .iter()
        .map(|&h| load_checkpoint(&layout, h))
        .collect::<Result<Vec<_>>>()?;
    let test = load_split(cfg, Split::Test)?;
    let jobs: Vec<(&Checkpoint, f64)> = ckpts
        .iter()
        .flat_map(|c| cfg.noise_levels.iter().map(move |&s| (c, s)))
        .collect();

    let run = |&(ckpt, sigma2): &(&Checkpoint, f64)| -> Result<EvalOutcome> {
        let outcome = evaluate_checkpoint(ckpt, &test, sigma2, cfg.eval_seed)?;
        write_eval(&layout, &outcome)?;
        Ok(outcome)
    };
    let cells: Vec<EvalOutcome> = if threads <= 1 || jobs.len() <= 1 {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        let chunk = jobs.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
                .collect();
            let mut out = Vec::with_capacity(jobs.len());
            for h in handles {
                out.extend(h.join().expect("sweep worker panicked")?);
            }
            Ok::<_, Error>(out)
        })?
    };
    let result = SweepResult { cells };

    create_dir(&layout.sweep_dir())?;
    volio::write_csv(&layout.sweep_csv(), &result.rows())?;
    let summary: Vec<CsvRow> = result.cells.iter().map(EvalOutcome::summary_row).collect();
    volio::write_csv(&layout.sweep_summary(), &summary)?;
    for (stem, column, label) in SWEEP_PLOTS {
        let series: Vec<PlotSeries> = cfg
            .heads
            .iter()
            .map(|&head| {
                let cells: Vec<&EvalOutcome> = result.cells.iter().filter(|c| c.head == head).collect();
                PlotSeries {
                    name: head.name().to_string(),
                    xs: cells.iter().map(|c| c.sigma2).collect(),
                    ys: cells
                        .iter()
                        .map(|c| {
                            c.aggregate
                                .scalars()
                                .into_iter()
                                .find(|(k, _)| k == column)
                                .map(|(_, v)| v)
                                .expect("known column")
                        })
                        .collect(),
                }
            })
            .collect();
        volio::write_svg_lineplot(&layout.plot(stem), &series, "noise variance sigma^2", label)?;
    }
    Ok(result)
}
