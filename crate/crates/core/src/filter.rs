//! Separable spatial filters on [`VideoTensor`] planes.

use crate::tensor::VideoTensor;

/// Normalized Gaussian taps for `sigma`, radius `ceil(3σ)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Convolves every plane with a 1-D kernel along rows then columns, clamping
/// at the edges. Taps need not be normalized; each output is divided by the
/// tap sum so constant planes stay exactly constant.
pub fn separable_filter(t: &VideoTensor, taps: &[f64]) -> VideoTensor {
    let d = t.dims();
    let r = (taps.len() / 2) as isize;
    let norm: f64 = taps.iter().sum();
    let (h, w) = (d.height as isize, d.width as isize);
    let mut out = t.clone();
    let mut tmp = vec![0.0f64; d.plane_len()];
    for n in 0..d.frames {
        for c in 0..d.channels {
            let src = t.plane(n, c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &tap) in taps.iter().enumerate() {
                        let xx = (x + k as isize - r).clamp(0, w - 1);
                        acc += tap * src[(y * w + xx) as usize] as f64;
                    }
                    tmp[(y * w + x) as usize] = acc / norm;
                }
            }
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &tap) in taps.iter().enumerate() {
                        let yy = (y + k as isize - r).clamp(0, h - 1);
                        acc += tap * tmp[(yy * w + x) as usize];
                    }
                    dst[(y * w + x) as usize] = (acc / norm) as f32;
                }
            }
        }
    }
    out
}

/// Gaussian blur with edge clamping. `sigma <= 0` returns the input.
pub fn gaussian_blur(t: &VideoTensor, sigma: f64) -> VideoTensor {
    if !(sigma > 0.0) {
        return t.clone();
    }
    separable_filter(t, &gaussian_taps(sigma))
}
