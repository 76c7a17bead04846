//! Dense multi-channel voxel grids.
//!
//! Layout is channel-major, then z, y, x with x varying fastest:
//! `index = ((c * nz + z) * ny + y) * nx + x`.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Spatial extent of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub const fn cube(n: usize) -> Self {
        Self { x: n, y: n, z: n }
    }

    pub const fn voxels(&self) -> usize {
        self.x * self.y * self.z
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.y + y) * self.x + x
    }

    fn check_nonzero(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || self.z == 0 {
            return Err(Error::invalid(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.x, self.y, self.z
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.x, self.y, self.z)
    }
}

/// Multi-channel 3D field of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    channels: usize,
    data: Vec<f32>,
}

impl Volume {
    /// Volume with every element equal to `fill`.
    pub fn new(dims: Dims, channels: usize, fill: f32) -> Result<Self> {
        dims.check_nonzero()?;
        if channels == 0 {
            return Err(Error::invalid("channel count must be positive"));
        }
        Ok(Self {
            dims,
            channels,
            data: vec![fill; channels * dims.voxels()],
        })
    }

    pub fn zeros(dims: Dims, channels: usize) -> Result<Self> {
        Self::new(dims, channels, 0.0)
    }

    pub fn from_vec(dims: Dims, channels: usize, data: Vec<f32>) -> Result<Self> {
        dims.check_nonzero()?;
        if channels == 0 {
            return Err(Error::invalid("channel count must be positive"));
        }
        let expected = channels * dims.voxels();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match {} channels of {}",
                data.len(),
                channels,
                dims
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxels(&self) -> usize {
        self.dims.voxels()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        c * self.dims.voxels() + self.dims.index(x, y, z)
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.offset(c, x, y, z)]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, value: f32) {
        let i = self.offset(c, x, y, z);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Value of channel `c` at flat voxel index `v`.
    #[inline]
    pub fn at(&self, c: usize, v: usize) -> f32 {
        self.data[c * self.dims.voxels() + v]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds i.i.d. N(0, `sigma2`) noise to every element.
    pub fn gaussian_noise(&self, sigma2: f64, rng: &mut Rng) -> Result<Volume> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be finite and nonnegative, got {sigma2}"
            )));
        }
        if sigma2 == 0.0 {
            return Ok(self.clone());
        }
        let sd = sigma2.sqrt();
        let data = self
            .data
            .iter()
            .map(|&v| (v as f64 + sd * rng.normal()) as f32)
            .collect();
        Ok(Volume { data, ..*self })
    }

    /// Per-channel z-score with population standard deviation. A channel
    /// with zero spread is only shifted to zero mean.
    pub fn znorm(&self) -> Volume {
        let mut out = self.clone();
        for c in 0..self.channels {
            let ch = out.channel_mut(c);
            let n = ch.len() as f64;
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                ch.iter_mut()
                    .for_each(|v| *v = ((*v as f64 - mean) / sd) as f32);
            } else {
                ch.iter_mut().for_each(|v| *v = (*v as f64 - mean) as f32);
            }
        }
        out
    }
}

/// Single-channel field of class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims, fill: u8) -> Result<Self> {
        dims.check_nonzero()?;
        Ok(Self {
            dims,
            data: vec![fill; dims.voxels()],
        })
    }

    pub fn from_vec(dims: Dims, data: Vec<u8>) -> Result<Self> {
        dims.check_nonzero()?;
        if data.len() != dims.voxels() {
            return Err(Error::invalid(format!(
                "label length {} does not match {}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        self.dims.voxels()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: u8) {
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&l| l == class).count()
    }

    /// Checks that every label is a valid index for `classes` classes.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= classes) {
            Some(bad) => Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            ))),
            None => Ok(()),
        }
    }
}

pub(crate) fn check_same_dims(a: Dims, b: Dims, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: dims {a} vs {b}")));
    }
    Ok(())
}
