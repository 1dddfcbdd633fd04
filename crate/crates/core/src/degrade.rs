//! Synthetic low-resolution generation and bicubic resampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::tensor::VideoTensor;

/// Catmull-Rom cubic (`a = −0.5`).
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps for every output index along one axis: four clamped indices
/// and their weights.
fn axis_taps(len_in: usize, len_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0f64; 4];
            for k in 0..4 {
                let off = k as f64 - 1.0;
                idx[k] = (base + off).clamp(0.0, (len_in - 1) as f64) as usize;
                w[k] = cubic(frac - off);
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic resampling of every plane to `height × width`, pixel-centre
/// aligned, edge-clamped.
pub fn resize_bicubic(t: &VideoTensor, height: usize, width: usize) -> Result<VideoTensor> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let d = t.dims();
    let ty = axis_taps(d.height, height);
    let tx = axis_taps(d.width, width);
    let out_dims = d.with_spatial(height, width);
    let mut out = VideoTensor::zeros(out_dims);
    let mut rows = vec![0.0f64; d.height * width];
    for n in 0..d.frames {
        for c in 0..d.channels {
            let src = t.plane(n, c);
            for y in 0..d.height {
                for (x, (idx, w)) in tx.iter().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += w[k] * src[y * d.width + idx[k]] as f64;
                    }
                    rows[y * width + x] = acc;
                }
            }
            let dst = out.plane_mut(n, c);
            for (y, (idx, w)) in ty.iter().enumerate() {
                for x in 0..width {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += w[k] * rows[idx[k] * width + x];
                    }
                    dst[y * width + x] = acc as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Resizes by `scale`, rounding the target size.
pub fn bicubic_resize(t: &VideoTensor, scale: f64) -> Result<VideoTensor> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let d = t.dims();
    let h = ((d.height as f64 * scale).round() as usize).max(1);
    let w = ((d.width as f64 * scale).round() as usize).max(1);
    resize_bicubic(t, h, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationConfig {
    pub blur_sigma: f64,
    pub down_factor: usize,
    pub noise_sigma: f64,
    pub quant_levels: u32,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            down_factor: 4,
            noise_sigma: 0.02,
            quant_levels: 256,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.down_factor == 0 {
            return Err(Error::invalid("down_factor must be >= 1"));
        }
        if self.quant_levels < 2 {
            return Err(Error::invalid("quant_levels must be >= 2"));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("blur_sigma and noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Blur, bicubic downscale, seeded noise (clamped to [0, 1]) and uniform
/// quantization, in that order. Stands in for compression artifacts with
/// the quantizer.
pub fn degrade(video: &VideoTensor, cfg: &DegradationConfig) -> Result<VideoTensor> {
    cfg.validate()?;
    let d = video.dims();
    if !d.height.is_multiple_of(cfg.down_factor) || !d.width.is_multiple_of(cfg.down_factor) {
        return Err(Error::dim(format!(
            "{}x{} is not divisible by {}",
            d.height, d.width, cfg.down_factor
        )));
    }
    let blurred = gaussian_blur(video, cfg.blur_sigma);
    let mut lr = resize_bicubic(&blurred, d.height / cfg.down_factor, d.width / cfg.down_factor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let levels = (cfg.quant_levels - 1) as f64;
    for v in lr.as_mut_slice() {
        let mut x = *v as f64;
        if cfg.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            x += cfg.noise_sigma * z;
        }
        let x = x.clamp(0.0, 1.0);
        *v = ((x * levels).round() / levels) as f32;
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn catmull_rom_taps_sum_to_one() {
        for frac in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (0..4).map(|k| cubic(frac - (k as f64 - 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
    }

    #[test]
    fn resize_identity_constant_and_ramp() {
        let t = VideoTensor::gaussian(Dims::new(2, 3, 9, 7), 4, 1.0);
        assert!(bicubic_resize(&t, 1.0).unwrap().max_abs_diff(&t) <= 1e-6);

        let c = VideoTensor::filled(Dims::new(1, 1, 5, 6), 0.375);
        let up = resize_bicubic(&c, 13, 4).unwrap();
        assert!(up.as_slice().iter().all(|&v| v == 0.375));

        let ramp = VideoTensor::from_fn(Dims::new(1, 1, 8, 8), |_, _, y, x| 0.1 * x as f32 + 0.03 * y as f32);
        let up = bicubic_resize(&ramp, 2.0).unwrap();
        // Output pixel i sits at source coordinate (i + 0.5)/2 − 0.5.
        for y in 4..12 {
            for x in 4..12 {
                let (sy, sx) = ((y as f64 + 0.5) / 2.0 - 0.5, (x as f64 + 0.5) / 2.0 - 0.5);
                let expect = 0.1 * sx + 0.03 * sy;
                assert!((up.get(0, 0, y, x) as f64 - expect).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn identity_degradation_quantizes() {
        let cfg = DegradationConfig {
            blur_sigma: 0.0,
            down_factor: 1,
            noise_sigma: 0.0,
            quant_levels: 256,
            seed: 0,
        };
        let v = VideoTensor::gaussian(Dims::new(1, 1, 4, 4), 1, 0.3).map(|x| (x + 0.5).clamp(0.0, 1.0));
        let out = degrade(&v, &cfg).unwrap();
        for (&o, &i) in out.as_slice().iter().zip(v.as_slice()) {
            assert_eq!(o, ((i as f64 * 255.0).round() / 255.0) as f32);
        }
    }

    #[test]
    fn noise_statistics_and_shape() {
        let cfg = DegradationConfig {
            blur_sigma: 0.0,
            down_factor: 1,
            noise_sigma: 0.05,
            quant_levels: 4096,
            seed: 3,
        };
        let v = VideoTensor::filled(Dims::new(1, 1, 64, 64), 0.5);
        let out = degrade(&v, &cfg).unwrap();
        let mean = out.mean();
        let var = out.as_slice().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 4096.0;
        assert!((var.sqrt() / 0.05 - 1.0).abs() < 0.1);

        let shaped = degrade(&v, &DegradationConfig::default()).unwrap();
        assert_eq!((shaped.dims().height, shaped.dims().width), (16, 16));
    }

    #[test]
    fn seed_only_changes_the_noise() {
        let v = VideoTensor::gaussian(Dims::new(2, 1, 16, 16), 1, 0.2).map(|x| (x + 0.5).clamp(0.0, 1.0));
        let a = degrade(&v, &DegradationConfig::default()).unwrap();
        let b = degrade(&v, &DegradationConfig::default()).unwrap();
        assert_eq!(a, b);
        let quiet = DegradationConfig {
            noise_sigma: 0.0,
            ..DegradationConfig::default()
        };
        let q1 = degrade(&v, &quiet).unwrap();
        let q2 = degrade(&v, &DegradationConfig { seed: 9, ..quiet }).unwrap();
        assert_eq!(q1, q2);
        let c = degrade(&v, &DegradationConfig { seed: 9, ..DegradationConfig::default() }).unwrap();
        assert_ne!(a, c);
        assert!(degrade(&v, &DegradationConfig { quant_levels: 1, ..quiet }).is_err());
    }
}
