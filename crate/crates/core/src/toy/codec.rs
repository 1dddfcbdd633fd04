use crate::error::{Error, Result};
use crate::tensor::{Dims, VideoTensor};

/// Linear latent codec: `f × f` box averaging on the way in, pixel-centre
/// aligned bilinear interpolation on the way out. Channels pass through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCodec {
    pub factor: usize,
}

impl Default for ToyCodec {
    fn default() -> Self {
        Self { factor: 8 }
    }
}

impl ToyCodec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("codec factor must be >= 1"));
        }
        Ok(Self { factor })
    }

    pub fn latent_dims(&self, video: Dims) -> Result<Dims> {
        let f = self.factor;
        if !video.height.is_multiple_of(f) || !video.width.is_multiple_of(f) {
            return Err(Error::dim(format!(
                "frame {}x{} is not divisible by codec factor {f}",
                video.height, video.width
            )));
        }
        Ok(video.with_spatial(video.height / f, video.width / f))
    }

    pub fn encode(&self, video: &VideoTensor) -> Result<VideoTensor> {
        let f = self.factor;
        let ld = self.latent_dims(video.dims())?;
        let area = (f * f) as f64;
        Ok(VideoTensor::from_fn(ld, |n, c, y, x| {
            let mut acc = 0.0f64;
            for dy in 0..f {
                for dx in 0..f {
                    acc += video.get(n, c, y * f + dy, x * f + dx) as f64;
                }
            }
            (acc / area) as f32
        }))
    }

    pub fn decode(&self, latent: &VideoTensor) -> Result<VideoTensor> {
        let f = self.factor;
        let ld = latent.dims();
        let out = ld.with_spatial(ld.height * f, ld.width * f);
        let ys: Vec<(usize, usize, f64)> = (0..out.height).map(|i| taps(i, f, ld.height)).collect();
        let xs: Vec<(usize, usize, f64)> = (0..out.width).map(|i| taps(i, f, ld.width)).collect();
        Ok(VideoTensor::from_fn(out, |n, c, y, x| {
            let (y0, y1, ty) = ys[y];
            let (x0, x1, tx) = xs[x];
            let g = |yy, xx| latent.get(n, c, yy, xx) as f64;
            let top = (1.0 - tx) * g(y0, x0) + tx * g(y0, x1);
            let bottom = (1.0 - tx) * g(y1, x0) + tx * g(y1, x1);
            ((1.0 - ty) * top + ty * bottom) as f32
        }))
    }
}

/// Source samples and blend weight for output index `i` at upscale `f`.
fn taps(i: usize, f: usize, len: usize) -> (usize, usize, f64) {
    let src = (i as f64 + 0.5) / f as f64 - 0.5;
    let lo = src.floor();
    let t = src - lo;
    let clamp = |v: f64| v.clamp(0.0, (len - 1) as f64) as usize;
    (clamp(lo), clamp(lo + 1.0), t)
}
