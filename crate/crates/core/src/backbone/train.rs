//! Adam training loop, checkpoints and prediction.

use super::net::{check_min_dims, Head, TinyNet, CLASSES, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossValue};
use crate::rng::Rng;
use crate::subjective_logic::{dirichlet_from_evidence, evidence_from_logits, expected_probability};
use crate::volume::{check_same_dims, LabelVolume, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Decay the step size as `lr · (1 − step / total_steps)^0.9`.
    pub poly_decay: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 60,
            batch_size: 2,
            seed: 42,
            poly_decay: false,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        self.loss.validate()
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Trained parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub head: Head,
    pub params: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    pub epoch: u32,
    /// Mean training loss per epoch. Kept in memory only; the checkpoint
    /// file carries parameters, moments and epoch.
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn net(&self) -> Result<TinyNet> {
        TinyNet::from_params(self.head, self.params.clone())
    }
}

/// Per-epoch progress passed to the training observer.
#[derive(Debug, Clone, Copy)]
pub struct EpochSummary {
    /// One-based epoch number.
    pub epoch: usize,
    pub mean_loss: LossValue,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    fn new() -> Self {
        Self {
            m: vec![0.0; PARAM_COUNT],
            v: vec![0.0; PARAM_COUNT],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.adam_beta1.powi(t);
        let c2 = 1.0 - cfg.adam_beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g;
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = (params[i] as f64 - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps)) as f32;
        }
    }
}

pub fn train(dataset: &[(Volume, LabelVolume)], head: Head, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_with(dataset, head, cfg, |_, _| {})
}

/// Trains from a fresh He-uniform initialization. `observer` runs after
/// every epoch with the epoch summary and the current network.
pub fn train_with(
    dataset: &[(Volume, LabelVolume)],
    head: Head,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochSummary, &TinyNet),
) -> Result<Checkpoint> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let dims = dataset[0].0.dims();
    check_min_dims(dims)?;
    for (img, lab) in dataset {
        check_same_dims(dims, img.dims(), "training sample")?;
        check_same_dims(dims, lab.dims(), "training labels")?;
        lab.validate(CLASSES)?;
    }

    let mut rng = Rng::new(cfg.seed);
    let mut net = TinyNet::init(head, &mut rng);
    let mut adam = Adam::new();
    let steps_per_epoch = cfg.steps_per_epoch(dataset.len());
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0f64; PARAM_COUNT];

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let epoch_frac = epoch as f64 / cfg.epochs as f64;
        let mut sum = LossValue::default();
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (img, lab) = &dataset[i];
                let (value, g) = net.loss_and_grad::<f32>(img, lab, &cfg.loss, epoch_frac)?;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
                sum.total += value.total;
                sum.ice += value.ice;
                sum.kl += value.kl;
                sum.dice += value.dice;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let lr = if cfg.poly_decay {
                cfg.learning_rate * (1.0 - adam.step as f64 / total_steps).powf(0.9)
            } else {
                cfg.learning_rate
            };
            adam.update(net.params_mut(), &grad, lr, cfg);
        }
        let n = dataset.len() as f64;
        let mean = LossValue {
            total: sum.total / n,
            ice: sum.ice / n,
            kl: sum.kl / n,
            dice: sum.dice / n,
        };
        history.push(mean.total);
        observer(
            &EpochSummary {
                epoch: epoch + 1,
                mean_loss: mean,
            },
            &net,
        );
    }

    Ok(Checkpoint {
        head,
        params: net.params().to_vec(),
        adam_m: adam.m.iter().map(|&v| v as f32).collect(),
        adam_v: adam.v.iter().map(|&v| v as f32).collect(),
        epoch: cfg.epochs as u32,
        loss_history: history,
    })
}

/// Class probabilities and, for the evidential head, the uncertainty mass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub prob: Volume,
    pub uncertainty: Option<Volume>,
}

pub fn predict(ckpt: &Checkpoint, input: &Volume) -> Result<Prediction> {
    predict_net(&ckpt.net()?, input)
}

pub fn predict_net(net: &TinyNet, input: &Volume) -> Result<Prediction> {
    check_min_dims(input.dims())?;
    match net.head() {
        Head::Evidential => {
            let logits = net.logits(input)?;
            let field = dirichlet_from_evidence(&evidence_from_logits(&logits))?;
            Ok(Prediction {
                prob: expected_probability(&field),
                uncertainty: Some(field.into_uncertainty()),
            })
        }
        Head::Softmax => Ok(Prediction {
            prob: net.forward(input)?,
            uncertainty: None,
        }),
    }
}

/// Evaluates the head's objective on one sample without gradients.
pub fn sample_loss(net: &TinyNet, input: &Volume, labels: &LabelVolume, cfg: &LossConfig) -> Result<LossValue> {
    let logits = net.logits(input)?;
    match net.head() {
        Head::Evidential => Ok(losses::total_loss(&logits, labels, cfg, 1.0)?.0),
        Head::Softmax => Ok(losses::softmax_total_loss(&logits, labels, cfg)?.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    fn toy_sample(seed: u64) -> (Volume, LabelVolume) {
        let mut rng = Rng::new(seed);
        let dims = Dims::cube(6);
        let mut img = Volume::zeros(dims, 4).unwrap();
        let mut lab = LabelVolume::new(dims, 0).unwrap();
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let class = if x >= 3 { 1 } else { 0 };
                    lab.set(x, y, z, class);
                    for c in 0..4 {
                        let v = class as f64 * (c as f64 + 1.0) * 0.5 + 0.1 * rng.normal();
                        img.set(c, x, y, z, v as f32);
                    }
                }
            }
        }
        (img, lab)
    }

    #[test]
    fn untrained_zero_net_uncertainty() {
        let net = TinyNet::zeros(Head::Evidential);
        let p = predict_net(&net, &Volume::zeros(Dims::cube(3), 4).unwrap()).unwrap();
        let want = 4.0 / (4.0 * std::f64::consts::LN_2 + 4.0);
        for &u in p.uncertainty.unwrap().as_slice() {
            assert!((u as f64 - want).abs() < 1e-6);
        }
        assert!(p.prob.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn evidential_prediction_ranges() {
        let net = TinyNet::init(Head::Evidential, &mut Rng::new(4));
        let (img, _) = toy_sample(1);
        let p = predict_net(&net, &img).unwrap();
        let n = img.voxels();
        for v in 0..n {
            let s: f64 = (0..4).map(|c| p.prob.at(c, v) as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(p.uncertainty.unwrap().as_slice().iter().all(|&u| u > 0.0 && u <= 1.0));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train(&[], Head::Evidential, &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data: Vec<_> = (0..3).map(toy_sample).collect();
        let cfg = TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        };
        for head in [Head::Evidential, Head::Softmax] {
            let a = train(&data, head, &cfg).unwrap();
            let b = train(&data, head, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.loss_history.len(), 15);
            assert!(a.loss_history[14] < a.loss_history[0], "{head}: {:?}", a.loss_history);
        }
    }

    #[test]
    fn poly_decay_changes_trajectory() {
        let data: Vec<_> = (0..2).map(toy_sample).collect();
        let base = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let poly = TrainConfig {
            poly_decay: true,
            ..base.clone()
        };
        let a = train(&data, Head::Evidential, &base).unwrap();
        let b = train(&data, Head::Evidential, &poly).unwrap();
        assert_eq!(a.loss_history[0], b.loss_history[0]);
        assert_ne!(a.params, b.params);
    }
}
