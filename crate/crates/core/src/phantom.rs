//! Synthetic four-modality brain-tumour phantoms.
//!
//! Each sample is a spherical "brain" holding one axis-aligned ellipsoidal
//! tumour with three nested compartments:
//!
//! | index | compartment                  | label in the BraTS convention |
//! |-------|------------------------------|-------------------------------|
//! | 0     | background (air and brain)   | 0                             |
//! | 1     | necrotic / non-enhancing core| 1                             |
//! | 2     | peritumoral edema            | 2                             |
//! | 3     | enhancing tumour             | 4                             |
//!
//! The necrotic core is innermost, the enhancing rim surrounds it and the
//! edema shell is outermost. Modalities are filled from a per-tissue
//! intensity table, modulated by a smooth multiplicative bias field, with
//! additive Gaussian noise, and finally z-scored per modality.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::{Dims, LabelVolume, Volume};

pub const MODALITIES: usize = 4;
pub const MODALITY_NAMES: [&str; MODALITIES] = ["t1", "t1c", "t2", "flair"];

/// Intensity-table tissues. Air and brain both carry class 0.
pub const TISSUES: usize = 5;
pub const TISSUE_NAMES: [&str; TISSUES] = ["air", "brain", "necrotic", "edema", "enhancing"];

/// Internal class index → BraTS label.
pub const LABEL_MAP: [u8; 4] = [0, 1, 2, 4];

pub const CLASS_NECROTIC: u8 = 1;
pub const CLASS_EDEMA: u8 = 2;
pub const CLASS_ENHANCING: u8 = 3;

/// Smallest extent accepted on each axis.
pub const MIN_EXTENT: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub seed: u64,
    pub tumor_probability: f64,
    /// Base radius of the edema (outer) ellipsoid, in voxels.
    pub outer_radius: (f64, f64),
    /// Per-axis stretch applied to the base radius.
    pub axis_scale: (f64, f64),
    /// Enhancing-core radius as a fraction of the outer radii.
    pub core_fraction: (f64, f64),
    /// Necrotic radius as a fraction of the enhancing-core radii.
    pub necrotic_fraction: (f64, f64),
    /// Mean intensity, `[modality][tissue]`.
    pub intensity: [[f64; TISSUES]; MODALITIES],
    pub base_noise_std: f64,
    pub bias_amplitude: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: Dims::cube(32),
            seed: 0,
            tumor_probability: 1.0,
            outer_radius: (5.5, 8.5),
            axis_scale: (0.85, 1.15),
            core_fraction: (0.45, 0.7),
            necrotic_fraction: (0.4, 0.7),
            //           air  brain  necr  edema  enh
            intensity: [
                [0.0, 0.60, 0.30, 0.45, 0.50], // t1
                [0.0, 0.60, 0.30, 0.50, 1.00], // t1c
                [0.0, 0.40, 0.90, 0.80, 0.60], // t2
                [0.0, 0.40, 0.50, 0.90, 0.70], // flair
            ],
            base_noise_std: 0.05,
            bias_amplitude: 0.1,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.x < MIN_EXTENT || d.y < MIN_EXTENT || d.z < MIN_EXTENT {
            return Err(Error::invalid(format!(
                "phantom dims must be at least {MIN_EXTENT} per axis, got {d}"
            )));
        }
        let ranges = [
            ("outer_radius", self.outer_radius, 0.0, f64::INFINITY),
            ("axis_scale", self.axis_scale, 0.0, f64::INFINITY),
            ("core_fraction", self.core_fraction, 0.0, 1.0),
            ("necrotic_fraction", self.necrotic_fraction, 0.0, 1.0),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo > min && lo <= hi && hi <= max) {
                return Err(Error::invalid(format!("phantom {name} range ({lo}, {hi}) is invalid")));
            }
        }
        if !(0.0..=1.0).contains(&self.tumor_probability) {
            return Err(Error::invalid("tumor probability must lie in [0, 1]"));
        }
        if !(self.base_noise_std >= 0.0 && self.bias_amplitude >= 0.0) {
            return Err(Error::invalid("noise and bias amplitudes must be nonnegative"));
        }
        let brain = self.brain_radius();
        let widest = self.outer_radius.1 * self.axis_scale.1;
        if widest + 1.0 > brain {
            return Err(Error::invalid(format!(
                "tumour radius {widest:.1} does not fit inside brain radius {brain:.1}"
            )));
        }
        Ok(())
    }

    pub fn brain_radius(&self) -> f64 {
        0.42 * self.dims.x.min(self.dims.y).min(self.dims.z) as f64
    }

    fn center(&self) -> [f64; 3] {
        [
            (self.dims.x as f64 - 1.0) / 2.0,
            (self.dims.y as f64 - 1.0) / 2.0,
            (self.dims.z as f64 - 1.0) / 2.0,
        ]
    }
}

/// Generating geometry of one phantom's tumour.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorGeometry {
    pub center: [f64; 3],
    /// Semi-axes of the edema ellipsoid.
    pub outer_axes: [f64; 3],
    pub core_fraction: f64,
    /// Fraction of the outer axes bounding the necrotic core.
    pub necrotic_fraction: f64,
}

impl TumorGeometry {
    /// Normalized ellipsoidal radius of a voxel; 1 on the edema boundary.
    pub fn radius(&self, x: usize, y: usize, z: usize) -> f64 {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.outer_axes[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Class of a voxel by the nesting rule.
    pub fn class_at(&self, x: usize, y: usize, z: usize) -> u8 {
        let r = self.radius(x, y, z);
        if r <= self.necrotic_fraction {
            CLASS_NECROTIC
        } else if r <= self.core_fraction {
            CLASS_ENHANCING
        } else if r <= 1.0 {
            CLASS_EDEMA
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomMeta {
    pub seed: u64,
    pub tumor: Option<TumorGeometry>,
    pub label_map: [u8; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub image: Volume,
    pub labels: LabelVolume,
    pub meta: PhantomMeta,
}

struct BiasTerm {
    weight: f64,
    freq: [f64; 3],
    phase: [f64; 3],
}

/// Draws one phantom from `rng`.
pub fn generate(cfg: &PhantomConfig, rng: &mut Rng) -> Result<PhantomSample> {
    cfg.validate()?;
    let dims = cfg.dims;
    let seed = rng.seed();
    let brain_center = cfg.center();
    let brain_r = cfg.brain_radius();

    let tumor = if rng.uniform() < cfg.tumor_probability {
        let base = rng.uniform_in(cfg.outer_radius.0, cfg.outer_radius.1);
        let outer_axes = [0; 3].map(|_| base * rng.uniform_in(cfg.axis_scale.0, cfg.axis_scale.1));
        let widest = outer_axes.iter().cloned().fold(0.0, f64::max);
        // Keep the whole tumour one voxel inside the brain.
        let reach = (brain_r - widest - 1.0).max(0.0);
        let offset = loop {
            let o = [0; 3].map(|_| rng.uniform_in(-reach, reach));
            if o.iter().map(|v| v * v).sum::<f64>() <= reach * reach {
                break o;
            }
        };
        let core_fraction = rng.uniform_in(cfg.core_fraction.0, cfg.core_fraction.1);
        let necrotic_fraction =
            core_fraction * rng.uniform_in(cfg.necrotic_fraction.0, cfg.necrotic_fraction.1);
        Some(TumorGeometry {
            center: [0, 1, 2].map(|i| brain_center[i] + offset[i]),
            outer_axes,
            core_fraction,
            necrotic_fraction,
        })
    } else {
        None
    };

    let bias: Vec<BiasTerm> = (0..3)
        .map(|_| BiasTerm {
            weight: rng.uniform_in(-1.0, 1.0),
            freq: [0; 3].map(|_| rng.uniform_in(0.5, 1.5)),
            phase: [0; 3].map(|_| rng.uniform_in(0.0, 2.0 * std::f64::consts::PI)),
        })
        .collect();
    let extent = [dims.x as f64, dims.y as f64, dims.z as f64];

    let mut labels = LabelVolume::new(dims, 0)?;
    let mut image = Volume::zeros(dims, MODALITIES)?;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let p = [x as f64, y as f64, z as f64];
                let d2: f64 = (0..3).map(|i| (p[i] - brain_center[i]).powi(2)).sum();
                let class = tumor.as_ref().map_or(0, |t| t.class_at(x, y, z));
                labels.set(x, y, z, class);
                let tissue = match class {
                    CLASS_NECROTIC => 2,
                    CLASS_EDEMA => 3,
                    CLASS_ENHANCING => 4,
                    _ if d2 <= brain_r * brain_r => 1,
                    _ => 0,
                };
                let field: f64 = bias
                    .iter()
                    .map(|b| {
                        b.weight
                            * (0..3)
                                .map(|i| {
                                    (2.0 * std::f64::consts::PI * b.freq[i] * p[i] / extent[i] + b.phase[i]).cos()
                                })
                                .product::<f64>()
                    })
                    .sum::<f64>()
                    / 3.0;
                let gain = 1.0 + cfg.bias_amplitude * field;
                for m in 0..MODALITIES {
                    let v = cfg.intensity[m][tissue] * gain + cfg.base_noise_std * rng.normal();
                    image.set(m, x, y, z, v as f32);
                }
            }
        }
    }

    Ok(PhantomSample {
        image: image.znorm(),
        labels,
        meta: PhantomMeta {
            seed,
            tumor,
            label_map: LABEL_MAP,
        },
    })
}

/// `n` phantoms seeded `seed, seed + 1, …`.
pub fn make_dataset(n: usize, cfg: &PhantomConfig, seed: u64) -> Result<Vec<PhantomSample>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    (0..n as u64)
        .map(|i| generate(cfg, &mut Rng::new(seed.wrapping_add(i))))
        .collect()
}

/// Binary whole-tumour mask: 1 wherever the label is a tumour compartment.
pub fn merge_whole_tumor(labels: &LabelVolume) -> LabelVolume {
    let data = labels.as_slice().iter().map(|&l| u8::from(l != 0)).collect();
    LabelVolume::from_vec(labels.dims(), data).expect("same dims")
}
