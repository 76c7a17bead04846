//! 3D convolution kernels over voxel-major (channel-last) buffers.
//!
//! Activations inside the network are stored voxel-major with the channel
//! index fastest, optionally surrounded by a one-voxel zero border. Weights
//! are packed as `[tap][in][out]` so that the innermost loop runs over the
//! output channels with a compile-time width and vectorizes without
//! reordering any floating-point sum. Every output element is accumulated
//! in a fixed order, so results do not depend on the target's SIMD width.

use std::ops::{Add, AddAssign, Mul, Sub};

use crate::volume::Dims;

/// Arithmetic the kernels need. Implemented for `f32` (training) and
/// `f64` (gradient verification).
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + AddAssign
    + Send
    + Sync
    + std::fmt::Debug
    + 'static
{
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}

pub const TAPS: usize = 27;

/// Gradient rows reduced together in registers.
const ROW_BLOCK: usize = 4;

/// Output voxels along x computed together in [`conv3`].
const X_BLOCK: usize = 4;

/// Voxel-major buffer with a zero border of one voxel on every face.
#[derive(Debug, Clone)]
pub struct Padded<T> {
    pub dims: Dims,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Padded<T> {
    pub fn zeros(dims: Dims, channels: usize) -> Self {
        let n = (dims.x + 2) * (dims.y + 2) * (dims.z + 2);
        Self {
            dims,
            channels,
            data: vec![T::ZERO; n * channels],
        }
    }

    #[inline]
    fn stride_y(&self) -> usize {
        self.dims.x + 2
    }

    #[inline]
    fn stride_z(&self) -> usize {
        (self.dims.x + 2) * (self.dims.y + 2)
    }

    /// Padded voxel index of interior voxel (x, y, z).
    #[inline]
    pub fn interior(&self, x: usize, y: usize, z: usize) -> usize {
        (z + 1) * self.stride_z() + (y + 1) * self.stride_y() + x + 1
    }

    /// Copies an unpadded voxel-major buffer into the interior.
    pub fn fill_interior(&mut self, src: &[T]) {
        let c = self.channels;
        let (nx, ny, nz) = (self.dims.x, self.dims.y, self.dims.z);
        for z in 0..nz {
            for y in 0..ny {
                let s = (z * ny + y) * nx * c;
                let d = self.interior(0, y, z) * c;
                self.data[d..d + nx * c].copy_from_slice(&src[s..s + nx * c]);
            }
        }
    }
}

/// Same-size 3×3×3 convolution: `out[v][o] = bias[o] + Σ_tap Σ_i in[v+tap][i] · w[tap][i][o]`.
///
/// `out` is unpadded voxel-major with `CO` channels.
pub fn conv3<T: Scalar, const CO: usize>(input: &Padded<T>, w: &[T], bias: &[T], out: &mut [T]) {
    let cin = input.channels;
    let Dims { x: nx, y: ny, z: nz } = input.dims;
    assert_eq!(w.len(), TAPS * cin * CO);
    assert_eq!(bias.len(), CO);
    assert_eq!(out.len(), nx * ny * nz * CO);
    let sy = input.stride_y();
    let sz = input.stride_z();
    let src = &input.data;
    let mut b = [T::ZERO; CO];
    b.copy_from_slice(bias);

    for z in 0..nz {
        for y in 0..ny {
            let v_row = (z * ny + y) * nx;
            let mut x = 0;
            // Blocks of X_BLOCK neighbouring voxels give independent
            // accumulation chains without changing any voxel's sum order.
            while x + X_BLOCK <= nx {
                let mut acc = [b; X_BLOCK];
                let mut tap = 0;
                for dz in 0..3 {
                    for dy in 0..3 {
                        let row = (z + dz) * sz + (y + dy) * sy + x;
                        for dx in 0..3 {
                            let w_tap = &w[tap * cin * CO..(tap + 1) * cin * CO];
                            let base = (row + dx) * cin;
                            for i in 0..cin {
                                let wr = &w_tap[i * CO..(i + 1) * CO];
                                for (j, acc_j) in acc.iter_mut().enumerate() {
                                    let a = src[base + j * cin + i];
                                    for k in 0..CO {
                                        acc_j[k] += a * wr[k];
                                    }
                                }
                            }
                            tap += 1;
                        }
                    }
                }
                for (j, acc_j) in acc.iter().enumerate() {
                    let v = v_row + x + j;
                    out[v * CO..(v + 1) * CO].copy_from_slice(acc_j);
                }
                x += X_BLOCK;
            }
            while x < nx {
                let mut acc = b;
                let mut tap = 0;
                for dz in 0..3 {
                    for dy in 0..3 {
                        let row = (z + dz) * sz + (y + dy) * sy + x;
                        for dx in 0..3 {
                            let a_row = &src[(row + dx) * cin..(row + dx + 1) * cin];
                            let w_tap = &w[tap * cin * CO..(tap + 1) * cin * CO];
                            for (i, &a) in a_row.iter().enumerate() {
                                let wr = &w_tap[i * CO..(i + 1) * CO];
                                for k in 0..CO {
                                    acc[k] += a * wr[k];
                                }
                            }
                            tap += 1;
                        }
                    }
                }
                let v = v_row + x;
                out[v * CO..(v + 1) * CO].copy_from_slice(&acc);
                x += 1;
            }
        }
    }
}

/// Accumulates the weight and bias gradients of [`conv3`].
///
/// Each `[tap][in]` row of the gradient is a sum over voxels of
/// `in[v+tap][i] · grad_out[v]`. Rows are reduced in blocks held in
/// registers, per z-slice in `T`, and the slice sums are folded into the
/// `f64` accumulators in slice order.
pub fn conv3_param_grad<T: Scalar, const CO: usize>(
    input: &Padded<T>,
    grad_out: &[T],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let cin = input.channels;
    let Dims { x: nx, y: ny, z: nz } = input.dims;
    assert_eq!(grad_w.len(), TAPS * cin * CO);
    assert_eq!(grad_b.len(), CO);
    assert_eq!(grad_out.len(), nx * ny * nz * CO);
    let sy = input.stride_y();
    let sz = input.stride_z();
    let src = &input.data;
    let plane = nx * ny;

    for z in 0..nz {
        let g_slice = &grad_out[z * plane * CO..(z + 1) * plane * CO];
        let mut sb = [T::ZERO; CO];
        for g in g_slice.chunks_exact(CO) {
            for k in 0..CO {
                sb[k] += g[k];
            }
        }
        for (acc, s) in grad_b.iter_mut().zip(sb) {
            *acc += s.to_f64();
        }

        for tap in 0..TAPS {
            let (dz, dy, dx) = (tap / 9, (tap / 3) % 3, tap % 3);
            let mut i = 0;
            while i < cin {
                let rows = (cin - i).min(ROW_BLOCK);
                let mut acc = [[T::ZERO; CO]; ROW_BLOCK];
                for y in 0..ny {
                    let row = ((z + dz) * sz + (y + dy) * sy + dx) * cin + i;
                    let g_row = &g_slice[y * nx * CO..(y + 1) * nx * CO];
                    if rows == ROW_BLOCK {
                        for (x, g) in g_row.chunks_exact(CO).enumerate() {
                            let a = &src[row + x * cin..row + x * cin + ROW_BLOCK];
                            for r in 0..ROW_BLOCK {
                                for k in 0..CO {
                                    acc[r][k] += a[r] * g[k];
                                }
                            }
                        }
                    } else {
                        for (x, g) in g_row.chunks_exact(CO).enumerate() {
                            let a = &src[row + x * cin..row + x * cin + rows];
                            for r in 0..rows {
                                for k in 0..CO {
                                    acc[r][k] += a[r] * g[k];
                                }
                            }
                        }
                    }
                }
                for (r, acc_r) in acc.iter().enumerate().take(rows) {
                    let base = (tap * cin + i + r) * CO;
                    for k in 0..CO {
                        grad_w[base + k] += acc_r[k].to_f64();
                    }
                }
                i += rows;
            }
        }
    }
}

/// Repacks `[tap][in][out]` weights into the kernel that maps output
/// gradients back to input gradients: spatially flipped, channels swapped.
pub fn transpose_kernel<T: Scalar>(w: &[T], cin: usize, cout: usize) -> Vec<T> {
    let mut t = vec![T::ZERO; w.len()];
    for tap in 0..TAPS {
        let flipped = TAPS - 1 - tap;
        for i in 0..cin {
            for o in 0..cout {
                t[(flipped * cout + o) * cin + i] = w[(tap * cin + i) * cout + o];
            }
        }
    }
    t
}

/// Pointwise (1×1×1) convolution over an unpadded voxel-major buffer.
pub fn conv1<T: Scalar, const CO: usize>(input: &[T], cin: usize, w: &[T], bias: &[T], out: &mut [T]) {
    assert_eq!(w.len(), cin * CO);
    let n = input.len() / cin;
    assert_eq!(out.len(), n * CO);
    let mut b = [T::ZERO; CO];
    b.copy_from_slice(bias);
    for v in 0..n {
        let mut acc = b;
        for (i, &a) in input[v * cin..(v + 1) * cin].iter().enumerate() {
            let wr = &w[i * CO..(i + 1) * CO];
            for k in 0..CO {
                acc[k] += a * wr[k];
            }
        }
        out[v * CO..(v + 1) * CO].copy_from_slice(&acc);
    }
}

/// Parameter gradients of [`conv1`] plus the input gradient.
pub fn conv1_backward<T: Scalar, const CO: usize>(
    input: &[T],
    cin: usize,
    w: &[T],
    grad_out: &[T],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: &mut [T],
) {
    let n = input.len() / cin;
    let mut gw = vec![0.0f64; cin * CO];
    let mut gb = [0.0f64; CO];
    for v in 0..n {
        let g = &grad_out[v * CO..(v + 1) * CO];
        let a_row = &input[v * cin..(v + 1) * cin];
        for k in 0..CO {
            gb[k] += g[k].to_f64();
        }
        for (i, &a) in a_row.iter().enumerate() {
            let wr = &w[i * CO..(i + 1) * CO];
            let mut s = T::ZERO;
            for k in 0..CO {
                gw[i * CO + k] += (a * g[k]).to_f64();
                s += wr[k] * g[k];
            }
            grad_in[v * cin + i] = s;
        }
    }
    for (a, g) in grad_w.iter_mut().zip(gw) {
        *a += g;
    }
    for (a, g) in grad_b.iter_mut().zip(gb) {
        *a += g;
    }
}
