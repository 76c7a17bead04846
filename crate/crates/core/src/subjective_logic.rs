//! Evidence, Dirichlet parameters and subjective-logic opinions per voxel.
//!
//! Raw network outputs become nonnegative evidence through softplus. With
//! `α = e + 1` and strength `S = Σ α`, each voxel carries belief masses
//! `b = (α − 1) / S` and an uncertainty mass `u = C / S` that together sum
//! to one.

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume};

/// Overflow-safe `ln(1 + eˣ)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise softplus over all channels.
pub fn evidence_from_logits(logits: &Volume) -> Volume {
    let mut out = logits.clone();
    out.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = softplus(*v as f64) as f32);
    out
}

/// Per-voxel Dirichlet parameters together with the derived masses.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletField {
    alpha: Volume,
    strength: Volume,
    belief: Volume,
    uncertainty: Volume,
}

impl DirichletField {
    pub fn classes(&self) -> usize {
        self.alpha.channels()
    }

    pub fn alpha(&self) -> &Volume {
        &self.alpha
    }

    pub fn strength(&self) -> &Volume {
        &self.strength
    }

    pub fn belief(&self) -> &Volume {
        &self.belief
    }

    pub fn uncertainty(&self) -> &Volume {
        &self.uncertainty
    }

    pub fn into_uncertainty(self) -> Volume {
        self.uncertainty
    }

    /// Scalar view of voxel `v`.
    pub fn opinion(&self, v: usize) -> Opinion {
        let alpha: Vec<f64> = (0..self.classes())
            .map(|c| self.alpha.at(c, v) as f64)
            .collect();
        Opinion::from_alpha(&alpha)
    }
}

/// Subjective opinion of a single voxel, in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Opinion {
    pub belief: Vec<f64>,
    pub uncertainty: f64,
    pub expected_prob: Vec<f64>,
}

impl Opinion {
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        if let Some(bad) = evidence.iter().find(|e| !(**e >= 0.0)) {
            return Err(Error::invalid(format!("evidence must be nonnegative, got {bad}")));
        }
        let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
        Ok(Self::from_alpha(&alpha))
    }

    fn from_alpha(alpha: &[f64]) -> Self {
        let s: f64 = alpha.iter().sum();
        Self {
            belief: alpha.iter().map(|a| (a - 1.0) / s).collect(),
            uncertainty: alpha.len() as f64 / s,
            expected_prob: alpha.iter().map(|a| a / s).collect(),
        }
    }
}

/// Builds `α = e + 1` and the strength, belief and uncertainty fields.
pub fn dirichlet_from_evidence(evidence: &Volume) -> Result<DirichletField> {
    if let Some(bad) = evidence.as_slice().iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::invalid(format!("evidence must be nonnegative, got {bad}")));
    }
    let dims = evidence.dims();
    let classes = evidence.channels();
    let n = evidence.voxels();
    let mut alpha = evidence.clone();
    alpha.as_mut_slice().iter_mut().for_each(|e| *e += 1.0);
    let mut strength = Volume::zeros(dims, 1)?;
    let mut belief = Volume::zeros(dims, classes)?;
    let mut uncertainty = Volume::zeros(dims, 1)?;
    for v in 0..n {
        let s: f64 = (0..classes).map(|c| evidence.at(c, v) as f64 + 1.0).sum();
        strength.as_mut_slice()[v] = s as f32;
        uncertainty.as_mut_slice()[v] = (classes as f64 / s) as f32;
        for c in 0..classes {
            belief.as_mut_slice()[c * n + v] = (evidence.at(c, v) as f64 / s) as f32;
        }
    }
    Ok(DirichletField {
        alpha,
        strength,
        belief,
        uncertainty,
    })
}

/// Dirichlet mean `α / S` per voxel.
pub fn expected_probability(field: &DirichletField) -> Volume {
    let alpha = &field.alpha;
    let classes = alpha.channels();
    let n = alpha.voxels();
    let mut out = alpha.clone();
    let p = out.as_mut_slice();
    for v in 0..n {
        let s: f64 = (0..classes).map(|c| alpha.at(c, v) as f64).sum();
        for c in 0..classes {
            p[c * n + v] = (alpha.at(c, v) as f64 / s) as f32;
        }
    }
    out
}

/// Hard labels: the smallest class index attaining the per-voxel maximum.
pub fn argmax_class(prob: &Volume) -> Result<LabelVolume> {
    let classes = prob.channels();
    if classes < 2 {
        return Err(Error::invalid("argmax needs at least two classes"));
    }
    if classes > u8::MAX as usize + 1 {
        return Err(Error::invalid("too many classes for 8-bit labels"));
    }
    let n = prob.voxels();
    let labels = (0..n)
        .map(|v| {
            let mut best = 0;
            let mut best_val = prob.at(0, v);
            for c in 1..classes {
                let val = prob.at(c, v);
                if val > best_val {
                    best = c;
                    best_val = val;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::from_vec(prob.dims(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::volume::Dims;

    fn one_voxel(values: &[f32]) -> Volume {
        Volume::from_vec(Dims::cube(1), values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-6);
        let tiny = softplus(-50.0);
        assert!(tiny > 0.0 && tiny < 1e-20);
        assert!(softplus(1000.0).is_finite());
        let e = evidence_from_logits(&one_voxel(&[0.0, 50.0, -50.0, 200.0]));
        assert!((e.as_slice()[0] - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(e.as_slice()[2] > 0.0);
        assert_eq!(e.as_slice()[3], 200.0);
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        for &x in &[-30.0, -2.0, 0.0, 0.7, 25.0] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn dirichlet_hand_cases() {
        let d = dirichlet_from_evidence(&one_voxel(&[0.0; 4])).unwrap();
        assert_eq!(d.alpha().as_slice(), &[1.0; 4]);
        assert_eq!(d.strength().as_slice(), &[4.0]);
        assert_eq!(d.belief().as_slice(), &[0.0; 4]);
        assert_eq!(d.uncertainty().as_slice(), &[1.0]);

        let d = dirichlet_from_evidence(&one_voxel(&[3.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(d.strength().as_slice(), &[7.0]);
        assert!((d.belief().as_slice()[0] as f64 - 3.0 / 7.0).abs() < 1e-7);
        assert!((d.uncertainty().as_slice()[0] as f64 - 4.0 / 7.0).abs() < 1e-7);

        let d = dirichlet_from_evidence(&one_voxel(&[10.0; 4])).unwrap();
        assert!((d.uncertainty().as_slice()[0] as f64 - 4.0 / 44.0).abs() < 1e-7);
        for b in d.belief().as_slice() {
            assert!((*b as f64 - 10.0 / 44.0).abs() < 1e-7);
        }
    }

    #[test]
    fn negative_evidence_rejected() {
        assert!(dirichlet_from_evidence(&one_voxel(&[1.0, -0.1])).is_err());
        assert!(Opinion::from_evidence(&[0.5, -1.0]).is_err());
    }

    #[test]
    fn expected_probability_hand_cases() {
        let p = |e: &[f32]| {
            expected_probability(&dirichlet_from_evidence(&one_voxel(e)).unwrap()).into_vec()
        };
        assert_eq!(p(&[0.0; 4]), vec![0.25; 4]);
        assert_eq!(p(&[1.0, 0.0, 0.0, 0.0]), vec![0.4, 0.2, 0.2, 0.2]);
        let got = p(&[100.0, 0.0, 0.0, 0.0]);
        assert!((got[0] as f64 - 101.0 / 104.0).abs() < 1e-7);
        assert!((got[1] as f64 - 1.0 / 104.0).abs() < 1e-7);
    }

    #[test]
    fn argmax_ties_go_to_smallest_index() {
        let lab = |p: &[f32]| argmax_class(&one_voxel(p)).unwrap().as_slice()[0];
        assert_eq!(lab(&[0.1, 0.7, 0.1, 0.1]), 1);
        assert_eq!(lab(&[0.25; 4]), 0);
        assert_eq!(lab(&[0.0, 0.0, 0.5, 0.5]), 2);
        assert!(argmax_class(&one_voxel(&[1.0])).is_err());
    }

    #[test]
    fn opinion_view_matches_fields() {
        let d = dirichlet_from_evidence(&one_voxel(&[2.0, 0.5, 0.0, 1.0])).unwrap();
        let o = d.opinion(0);
        let total: f64 = o.belief.iter().sum::<f64>() + o.uncertainty;
        assert!((total - 1.0).abs() < 1e-9);
        assert!((o.expected_prob.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((o.uncertainty - d.uncertainty().as_slice()[0] as f64).abs() < 1e-7);
    }

    #[test]
    fn uncertainty_limits() {
        let o = Opinion::from_evidence(&[1e-12; 4]).unwrap();
        assert!((o.uncertainty - 1.0).abs() < 1e-11);
        let o = Opinion::from_evidence(&[1e12, 1e12, 0.0, 0.0]).unwrap();
        assert!(o.uncertainty < 1e-11);
    }

    #[test]
    fn argmax_of_mean_equals_argmax_of_evidence() {
        let mut rng = Rng::new(21);
        let dims = Dims::cube(6);
        let data = (0..4 * dims.voxels())
            .map(|_| (rng.uniform() * 5.0) as f32)
            .collect();
        let e = Volume::from_vec(dims, 4, data).unwrap();
        let p = expected_probability(&dirichlet_from_evidence(&e).unwrap());
        assert_eq!(argmax_class(&p).unwrap(), argmax_class(&e).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn mass_sum_is_one(logits in proptest::collection::vec(-60.0f32..60.0, 4)) {
            let d = dirichlet_from_evidence(&evidence_from_logits(&one_voxel(&logits))).unwrap();
            let total: f64 = d.belief().as_slice().iter().map(|&b| b as f64).sum::<f64>()
                + d.uncertainty().as_slice()[0] as f64;
            proptest::prop_assert!((total - 1.0).abs() < 1e-6);
            proptest::prop_assert!(d.alpha().as_slice().iter().all(|&a| a >= 1.0));
            proptest::prop_assert!(d.uncertainty().as_slice()[0] > 0.0);
        }

        #[test]
        fn raising_a_logit_is_monotone(
            logits in proptest::collection::vec(-20.0f32..20.0, 4),
            k in 0usize..4,
            step in 0.0f32..10.0,
        ) {
            let before = dirichlet_from_evidence(&evidence_from_logits(&one_voxel(&logits))).unwrap();
            let mut raised = logits.clone();
            raised[k] += step;
            let after = dirichlet_from_evidence(&evidence_from_logits(&one_voxel(&raised))).unwrap();
            proptest::prop_assert!(after.belief().as_slice()[k] >= before.belief().as_slice()[k]);
            proptest::prop_assert!(after.uncertainty().as_slice()[0] <= before.uncertainty().as_slice()[0]);
        }
    }
}
