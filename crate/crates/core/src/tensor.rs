//! Dense 4-D video tensors (frames × channels × height × width).
//!
//! Every latent, noise estimate and pixel-space frame stack in this crate is a
//! [`VideoTensor`]. Values are `f32`, stored row-major in frame, channel, row,
//! column order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Extents of a [`VideoTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    pub fn with_frames(self, frames: usize) -> Self {
        Self { frames, ..self }
    }

    pub fn with_spatial(self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::dim(format!("all extents must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl VideoTensor {
    /// Builds a tensor, checking the extents, the buffer length and that every
    /// value is finite.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "buffer holds {} values, dims {dims} need {}",
                data.len(),
                dims.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("element {i} is {}", data[i])));
        }
        Ok(Self { dims, data })
    }

    /// Builds a tensor without the finiteness scan. Extents and length are
    /// still enforced.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.frames {
            for c in 0..dims.channels {
                for y in 0..dims.height {
                    for x in 0..dims.width {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// Standard-normal samples scaled by `scale`, from a ChaCha8 stream.
    pub fn gaussian(dims: Dims, seed: u64, scale: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale as f64) as f32
            })
            .collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
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
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let d = &self.dims;
        ((n * d.channels + c) * d.height + y) * d.width + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        let len = self.dims.frame_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.dims.frame_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let len = self.dims.plane_len();
        let start = (n * self.dims.channels + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let len = self.dims.plane_len();
        let start = (n * self.dims.channels + c) * len;
        &mut self.data[start..start + len]
    }

    /// Copies frames `[start, start + count)` into a new tensor.
    pub fn frames_range(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.dims.frames {
            return Err(Error::dim(format!(
                "frame range {start}..{} outside {} frames",
                start + count,
                self.dims.frames
            )));
        }
        let len = self.dims.frame_len();
        Ok(Self {
            dims: self.dims.with_frames(count),
            data: self.data[start * len..(start + count) * len].to_vec(),
        })
    }

    /// Concatenates tensors along the frame axis.
    pub fn concat_frames(parts: &[VideoTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let base = first.dims;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            if p.dims.with_frames(base.frames) != base {
                return Err(Error::dim(format!("cannot concat {} with {}", p.dims, base)));
            }
            frames += p.dims.frames;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            dims: base.with_frames(frames),
            data,
        })
    }

    /// Frames in reverse order.
    pub fn reversed_frames(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for n in (0..self.dims.frames).rev() {
            out.extend_from_slice(self.frame(n));
        }
        Self {
            dims: self.dims,
            data: out,
        }
    }

    /// Reinterprets groups of `group` consecutive frames as one frame with
    /// `group` times the channels. The buffer is untouched.
    pub fn group_frames_into_channels(self, group: usize) -> Result<Self> {
        if group == 0 || !self.dims.frames.is_multiple_of(group) {
            return Err(Error::dim(format!(
                "{} frames do not split into groups of {group}",
                self.dims.frames
            )));
        }
        let dims = Dims {
            frames: self.dims.frames / group,
            channels: self.dims.channels * group,
            ..self.dims
        };
        Ok(Self {
            dims,
            data: self.data,
        })
    }

    /// Inverse of [`Self::group_frames_into_channels`].
    pub fn split_channels_into_frames(self, group: usize) -> Result<Self> {
        if group == 0 || !self.dims.channels.is_multiple_of(group) {
            return Err(Error::dim(format!(
                "{} channels do not split into groups of {group}",
                self.dims.channels
            )));
        }
        let dims = Dims {
            frames: self.dims.frames * group,
            channels: self.dims.channels / group,
            ..self.dims
        };
        Ok(Self {
            dims,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.ensure_same_dims(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dim(format!(
                "shape mismatch: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Little-endian byte image of the payload, used for bit-exact comparisons.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
