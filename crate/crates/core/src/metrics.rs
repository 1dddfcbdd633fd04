//! Fidelity and temporal-consistency metrics for videos with values in
//! [0, 1].

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

pub const PSNR_CAP: f64 = 99.0;

fn check_pair(a: &VideoTensor, b: &VideoTensor) -> Result<()> {
    a.ensure_same_dims(b)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.as_slice().len() as f64;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 8;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean SSIM over all 8×8 windows (stride 1) of every plane. Planes smaller
/// than the window use the whole plane.
pub fn ssim(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    check_pair(a, b)?;
    let d = a.dims();
    let (wh, ww) = (SSIM_WINDOW.min(d.height), SSIM_WINDOW.min(d.width));
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    let mut count = 0usize;
    let area = (wh * ww) as f64;
    for n in 0..d.frames {
        for c in 0..d.channels {
            let (pa, pb) = (a.plane(n, c), b.plane(n, c));
            for y0 in 0..=d.height - wh {
                for x0 in 0..=d.width - ww {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for y in y0..y0 + wh {
                        for x in x0..x0 + ww {
                            let (u, v) = (pa[y * d.width + x] as f64, pb[y * d.width + x] as f64);
                            sa += u;
                            sb += v;
                            saa += u * u;
                            sbb += v * v;
                            sab += u * v;
                        }
                    }
                    let (ma, mb) = (sa / area, sb / area);
                    let va = (saa / area - ma * ma).max(0.0);
                    let vb = (sbb / area - mb * mb).max(0.0);
                    let cov = sab / area - ma * mb;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Per-pixel displacement field from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub dy: Vec<f32>,
    pub dx: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dy: vec![0.0; height * width],
            dx: vec![0.0; height * width],
        }
    }

    /// The same displacement everywhere.
    pub fn constant(height: usize, width: usize, dy: f32, dx: f32) -> Self {
        Self {
            height,
            width,
            dy: vec![dy; height * width],
            dx: vec![dx; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dy[i], self.dx[i])
    }
}

/// Flow estimator between frame `i` of `a` and frame `j` of `b`.
pub trait FlowFn: Fn(&VideoTensor, usize, &VideoTensor, usize) -> Result<FlowField> {}
impl<F: Fn(&VideoTensor, usize, &VideoTensor, usize) -> Result<FlowField>> FlowFn for F {}

/// Integer block-matching flow from frame `f1` to frame `f2`.
///
/// The frame is cut into `block × block` blocks (the last row/column may be
/// smaller). For each block the displacement within `±radius` minimizing
/// the sum of absolute differences over all channels wins; candidates that
/// leave the frame are skipped. Ties go to the smallest `dy² + dx²`, then to
/// the lexicographically smallest `(dy, dx)`.
pub fn block_match_flow(
    a: &VideoTensor,
    f1: usize,
    b: &VideoTensor,
    f2: usize,
    block: usize,
    radius: usize,
) -> Result<FlowField> {
    let d = a.dims();
    let db = b.dims();
    if (d.channels, d.height, d.width) != (db.channels, db.height, db.width) {
        return Err(Error::dim(format!("frames {d} and {db} differ")));
    }
    if block == 0 || block > d.height.min(d.width) {
        return Err(Error::invalid(format!(
            "block {block} must lie in 1..={}",
            d.height.min(d.width)
        )));
    }
    let (h, w) = (d.height as isize, d.width as isize);
    let r = radius as isize;
    let mut flow = FlowField::zeros(d.height, d.width);
    for by in (0..d.height).step_by(block) {
        for bx in (0..d.width).step_by(block) {
            let bh = block.min(d.height - by) as isize;
            let bw = block.min(d.width - bx) as isize;
            let (by, bx) = (by as isize, bx as isize);
            let mut best: Option<(f64, isize, isize)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    if by + dy < 0 || bx + dx < 0 || by + dy + bh > h || bx + dx + bw > w {
                        continue;
                    }
                    let mut sad = 0.0f64;
                    for c in 0..d.channels {
                        let (p1, p2) = (a.plane(f1, c), b.plane(f2, c));
                        for y in by..by + bh {
                            for x in bx..bx + bw {
                                let u = p1[(y * w + x) as usize] as f64;
                                let v = p2[((y + dy) * w + x + dx) as usize] as f64;
                                sad += (u - v).abs();
                            }
                        }
                    }
                    let better = match best {
                        None => true,
                        Some((bs, bdy, bdx)) => {
                            sad < bs
                                || (sad == bs
                                    && (dy * dy + dx * dx, dy, dx) < (bdy * bdy + bdx * bdx, bdy, bdx))
                        }
                    };
                    if better {
                        best = Some((sad, dy, dx));
                    }
                }
            }
            let (_, dy, dx) = best.expect("zero displacement is always in bounds");
            for y in by..by + bh {
                for x in bx..bx + bw {
                    let i = (y * w + x) as usize;
                    flow.dy[i] = dy as f32;
                    flow.dx[i] = dx as f32;
                }
            }
        }
    }
    Ok(flow)
}

/// [`block_match_flow`] with 8×8 blocks and radius 4, as a [`FlowFn`].
pub fn default_flow(a: &VideoTensor, f1: usize, b: &VideoTensor, f2: usize) -> Result<FlowField> {
    let d = a.dims();
    block_match_flow(a, f1, b, f2, 8.min(d.height).min(d.width), 4)
}

fn need_two_frames(v: &VideoTensor) -> Result<()> {
    if v.dims().frames < 2 {
        return Err(Error::invalid("temporal metrics need at least 2 frames"));
    }
    Ok(())
}

/// Flow difference between restored and ground-truth motion:
/// `Σ_i Σ_p |OF(r_{i−1}, r_i) − OF(g_{i−1}, g_i)|₁`, divided by
/// `(N − 1)·H·W`.
pub fn tof(gt: &VideoTensor, restored: &VideoTensor, flow: impl FlowFn) -> Result<f64> {
    check_pair(gt, restored)?;
    need_two_frames(gt)?;
    let d = gt.dims();
    let mut total = 0.0;
    for i in 1..d.frames {
        let fg = flow(gt, i - 1, gt, i)?;
        let fr = flow(restored, i - 1, restored, i)?;
        for p in 0..d.plane_len() {
            total += (fr.dy[p] as f64 - fg.dy[p] as f64).abs() + (fr.dx[p] as f64 - fg.dx[p] as f64).abs();
        }
    }
    Ok(total / ((d.frames - 1) * d.plane_len()) as f64)
}

/// Mean absolute difference between frame `i` of `a` and frame `j` of `b`.
pub fn mean_abs_frame_diff(a: &VideoTensor, i: usize, b: &VideoTensor, j: usize) -> f64 {
    let (fa, fb) = (a.frame(i), b.frame(j));
    fa.iter().zip(fb).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / fa.len() as f64
}

/// `Σ_i |dist(r_{i−1}, r_i) − dist(g_{i−1}, g_i)|` divided by `N − 1`.
pub fn tlp(
    gt: &VideoTensor,
    restored: &VideoTensor,
    dist: impl Fn(&VideoTensor, usize, &VideoTensor, usize) -> f64,
) -> Result<f64> {
    check_pair(gt, restored)?;
    need_two_frames(gt)?;
    let n = gt.dims().frames;
    let total: f64 = (1..n)
        .map(|i| (dist(restored, i - 1, restored, i) - dist(gt, i - 1, gt, i)).abs())
        .sum();
    Ok(total / (n - 1) as f64)
}

/// Pulls frame `i` of `v` along `flow`: output pixel `p` samples
/// `frame_i(p − flow(p))` bilinearly with edge clamping.
pub fn warp_frame(v: &VideoTensor, i: usize, flow: &FlowField) -> Result<VideoTensor> {
    let d = v.dims();
    if (flow.height, flow.width) != (d.height, d.width) {
        return Err(Error::dim("flow field does not match the frame"));
    }
    let fd = d.with_frames(1);
    let (hm, wm) = ((d.height - 1) as f64, (d.width - 1) as f64);
    let mut out = VideoTensor::zeros(fd);
    for c in 0..d.channels {
        let src = v.plane(i, c);
        let dst = out.plane_mut(0, c);
        for y in 0..d.height {
            for x in 0..d.width {
                let (dy, dx) = flow.at(y, x);
                let sy = (y as f64 - dy as f64).clamp(0.0, hm);
                let sx = (x as f64 - dx as f64).clamp(0.0, wm);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(d.height - 1), (x0 + 1).min(d.width - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let at = |yy: usize, xx: usize| src[yy * d.width + xx] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                dst[y * d.width + x] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    Ok(out)
}

/// Mean over frame pairs of the mean `|warp(f_i, OF(f_i, f_{i+1})) − f_{i+1}|`,
/// ignoring a border of `margin` pixels.
pub fn warping_error_interior(video: &VideoTensor, flow: impl FlowFn, margin: usize) -> Result<f64> {
    need_two_frames(video)?;
    let d = video.dims();
    if 2 * margin >= d.height || 2 * margin >= d.width {
        return Err(Error::invalid(format!("margin {margin} leaves no interior")));
    }
    let mut total = 0.0;
    for i in 0..d.frames - 1 {
        let f = flow(video, i, video, i + 1)?;
        let warped = warp_frame(video, i, &f)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for c in 0..d.channels {
            let (wp, next) = (warped.plane(0, c), video.plane(i + 1, c));
            for y in margin..d.height - margin {
                for x in margin..d.width - margin {
                    let k = y * d.width + x;
                    sum += (wp[k] as f64 - next[k] as f64).abs();
                    count += 1;
                }
            }
        }
        total += sum / count as f64;
    }
    Ok(total / (d.frames - 1) as f64)
}

pub fn warping_error(video: &VideoTensor, flow: impl FlowFn) -> Result<f64> {
    warping_error_interior(video, flow, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(dims: Dims, seed: u64) -> VideoTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len()).map(|_| rng.gen::<f32>()).collect();
        VideoTensor::new(dims, data).unwrap()
    }

    /// Frame `k` is `base` translated by `k·(ty, tx)` with edge clamping.
    fn translating(base: &VideoTensor, frames: usize, ty: isize, tx: isize) -> VideoTensor {
        let d = base.dims();
        VideoTensor::from_fn(d.with_frames(frames), |n, c, y, x| {
            let sy = (y as isize - n as isize * ty).clamp(0, d.height as isize - 1) as usize;
            let sx = (x as isize - n as isize * tx).clamp(0, d.width as isize - 1) as usize;
            base.get(0, c, sy, sx)
        })
    }

    #[test]
    fn psnr_values() {
        let a = VideoTensor::zeros(Dims::new(1, 1, 4, 4));
        let b = VideoTensor::filled(Dims::new(1, 1, 4, 4), 0.1);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &VideoTensor::zeros(Dims::new(1, 1, 4, 5))).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise(Dims::new(2, 1, 12, 10), 1);
        let b = noise(Dims::new(2, 1, 12, 10), 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 0.5);
    }

    #[test]
    fn block_flow_cases() {
        let base = noise(Dims::new(1, 1, 32, 32), 3);
        assert!(block_match_flow(&base, 0, &base, 0, 8, 3).unwrap().dy.iter().all(|&v| v == 0.0));

        let moved = translating(&base, 2, 0, 2);
        let f = block_match_flow(&moved, 0, &moved, 1, 8, 3).unwrap();
        for y in 8..24 {
            for x in 8..24 {
                assert_eq!(f.at(y, x), (0.0, 2.0));
            }
        }

        let flat = VideoTensor::filled(Dims::new(2, 1, 16, 16), 0.4);
        let f = block_match_flow(&flat, 0, &flat, 1, 4, 2).unwrap();
        assert!(f.dy.iter().chain(&f.dx).all(|&v| v == 0.0));
    }

    #[test]
    fn tie_break_prefers_small_then_lexicographic() {
        // A vertical stripe pattern repeating every 2 columns: dx = ±2 match
        // as well as 0, dx = 0 wins; rows are constant so every dy ties too.
        let v = VideoTensor::from_fn(Dims::new(2, 1, 16, 16), |_, _, _, x| (x % 2) as f32);
        let f = block_match_flow(&v, 0, &v, 1, 4, 2).unwrap();
        assert!(f.dy.iter().chain(&f.dx).all(|&d| d == 0.0));
        // Shifted by one column: dx = −1 and dx = +1 tie; −1 is smaller.
        let w = VideoTensor::from_fn(Dims::new(2, 1, 16, 16), |n, _, _, x| ((x + n) % 2) as f32);
        let f = block_match_flow(&w, 0, &w, 1, 4, 2).unwrap();
        assert_eq!(f.at(8, 8), (0.0, -1.0));
    }

    #[test]
    fn temporal_metrics_vanish_on_identical_videos() {
        let v = translating(&noise(Dims::new(1, 1, 24, 24), 4), 3, 1, 0);
        assert_eq!(tof(&v, &v, default_flow).unwrap(), 0.0);
        assert_eq!(tlp(&v, &v, mean_abs_frame_diff).unwrap(), 0.0);
        assert_eq!(tlp(&v, &noise(v.dims(), 5), |_, _, _, _| 0.0).unwrap(), 0.0);
    }

    #[test]
    fn tof_constant_flow_offset() {
        let d = Dims::new(3, 1, 6, 5);
        let gt = VideoTensor::zeros(d);
        let restored = VideoTensor::filled(d, 1.0);
        // Exact flows: ground truth static, restored moving by (1, 0).
        let flow = |v: &VideoTensor, _: usize, _: &VideoTensor, _: usize| {
            let m = if v.as_slice()[0] == 1.0 { 1.0 } else { 0.0 };
            Ok(FlowField::constant(6, 5, m, 0.0))
        };
        assert!((tof(&gt, &restored, flow).unwrap() - 1.0).abs() < 1e-12);

        let static_a = translating(&noise(Dims::new(1, 1, 16, 16), 6), 3, 0, 0);
        let static_b = translating(&noise(Dims::new(1, 1, 16, 16), 7), 3, 0, 0);
        assert_eq!(tof(&static_a, &static_b, default_flow).unwrap(), 0.0);
    }

    #[test]
    fn tlp_hand_case() {
        let gt = VideoTensor::new(Dims::new(2, 1, 1, 2), vec![0.0, 0.0, 0.2, 0.2]).unwrap();
        let restored = VideoTensor::new(Dims::new(2, 1, 1, 2), vec![0.1, 0.1, 0.6, 0.6]).unwrap();
        assert!((tlp(&gt, &restored, mean_abs_frame_diff).unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn temporal_metrics_are_reversal_symmetric() {
        let g = noise(Dims::new(4, 1, 16, 16), 8);
        let r = noise(Dims::new(4, 1, 16, 16), 9);
        let a = tlp(&g, &r, mean_abs_frame_diff).unwrap();
        let b = tlp(&g.reversed_frames(), &r.reversed_frames(), mean_abs_frame_diff).unwrap();
        assert!((a - b).abs() < 1e-12);
        let static_flow = |_: &VideoTensor, _: usize, _: &VideoTensor, _: usize| Ok(FlowField::zeros(16, 16));
        assert_eq!(tof(&g, &r, static_flow).unwrap(), 0.0);
    }

    #[test]
    fn warping_error_cases() {
        let base = noise(Dims::new(1, 1, 32, 32), 10);
        let still = translating(&base, 3, 0, 0);
        assert_eq!(warping_error(&still, default_flow).unwrap(), 0.0);

        let moving = translating(&base, 3, 1, 2);
        assert_eq!(warping_error_interior(&moving, default_flow, 8).unwrap(), 0.0);

        // Independent uniform frames, zero flow: E|a − b| = 1/3.
        let iid = noise(Dims::new(2, 1, 64, 64), 11);
        let zero = |_: &VideoTensor, _: usize, _: &VideoTensor, _: usize| Ok(FlowField::zeros(64, 64));
        let we = warping_error(&iid, zero).unwrap();
        assert!((we / (1.0 / 3.0) - 1.0).abs() < 0.1);
        assert!(warping_error(&base, default_flow).is_err());
    }
}
