//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: the suppression-strength curve over a sampling
//! schedule, attention weights under a given suppression strength, and the
//! tile blending coverage of a latent plane.

use wasm_bindgen::prelude::*;

use dcvsr_core::attention::{attention_probs, row_entropies, Matrix, SuppressionParam};
use dcvsr_core::grid::{gaussian_mask, plan_tiles, Extent};
use dcvsr_core::guidance::gamma_schedule;
use dcvsr_core::sampler::build_sigma_schedule;
use dcvsr_core::tensor::{Dims, VideoTensor};

fn js_err(e: dcvsr_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Interleaved `[σ_0, γ_0, σ_1, γ_1, …]` for every sampling step.
pub fn gamma_curve_values(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> dcvsr_core::Result<Vec<f64>> {
    let schedule = build_sigma_schedule(steps, sigma_min, sigma_max, 7.0)?;
    let mut out = Vec::with_capacity(2 * steps);
    for &s in &schedule.sigmas[..steps] {
        out.push(s);
        out.push(gamma_schedule(s, sigma_max, sigma_min, rho)?);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn gamma_curve(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Vec<f64>, JsError> {
    gamma_curve_values(steps, sigma_min, sigma_max, rho).map_err(js_err)
}

/// Suppressed attention on seeded random tokens.
///
/// Returns `[temperature, mean_entropy, max_entropy, w_0, …, w_{n-1}]`
/// where `w` is the weight row of query 0.
pub fn suppression_values(tokens: usize, dim: usize, gamma: f64, seed: u64) -> dcvsr_core::Result<Vec<f64>> {
    if tokens == 0 || dim == 0 {
        return Err(dcvsr_core::Error::InvalidArgument("tokens and dim must be positive".into()));
    }
    let qk = VideoTensor::gaussian(Dims::new(2, 1, tokens, dim), seed, 1.5);
    let q = Matrix::new(tokens, dim, qk.frame(0).to_vec())?;
    let k = Matrix::new(tokens, dim, qk.frame(1).to_vec())?;
    let temperature = SuppressionParam::new(gamma)?.temperature(q.max_abs(), k.max_abs());
    let probs = attention_probs(&q, &k, temperature);
    let ent = row_entropies(&probs);
    let mean = ent.iter().sum::<f64>() / ent.len() as f64;
    let mut out = vec![temperature, mean, (tokens as f64).ln()];
    out.extend_from_slice(&probs[0]);
    Ok(out)
}

#[wasm_bindgen]
pub fn suppression(tokens: usize, dim: usize, gamma: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    suppression_values(tokens, dim, gamma, seed).map_err(js_err)
}

/// Summed blend weight of every tile over an `height × width` plane,
/// one value per pixel, row-major.
pub fn coverage_values(
    height: usize,
    width: usize,
    tile_h: usize,
    tile_w: usize,
    sigma_fraction: f64,
) -> dcvsr_core::Result<Vec<f64>> {
    let grid = plan_tiles(Extent::new(1, height, width), Extent::new(1, tile_h, tile_w))?;
    let mask = gaussian_mask(grid.tile, sigma_fraction)?;
    let mut acc = vec![0.0f64; height * width];
    for idx in grid.indices() {
        let (_, oy, ox) = grid.origin(idx);
        for y in 0..tile_h {
            for x in 0..tile_w {
                acc[(oy + y) * width + ox + x] += mask.at(0, y, x);
            }
        }
    }
    Ok(acc)
}

/// [`coverage_values`] rendered as RGBA, with tile origins marked.
#[wasm_bindgen]
pub fn coverage_rgba(
    height: usize,
    width: usize,
    tile_h: usize,
    tile_w: usize,
    sigma_fraction: f64,
) -> Result<Vec<u8>, JsError> {
    let acc = coverage_values(height, width, tile_h, tile_w, sigma_fraction).map_err(js_err)?;
    let grid = plan_tiles(Extent::new(1, height, width), Extent::new(1, tile_h, tile_w)).map_err(js_err)?;
    let max = acc.iter().copied().fold(0.0, f64::max).max(1e-12);
    let mut rgba = Vec::with_capacity(4 * acc.len());
    for &v in &acc {
        let t = v / max;
        rgba.extend_from_slice(&[(255.0 * t) as u8, (255.0 * t * t) as u8, (255.0 * (1.0 - t)) as u8, 255]);
    }
    for idx in grid.indices() {
        let (_, oy, ox) = grid.origin(idx);
        let p = 4 * (oy * width + ox);
        rgba[p..p + 3].copy_from_slice(&[255, 255, 255]);
    }
    Ok(rgba)
}

/// Number of tiles along each axis, `[rows, cols]`.
#[wasm_bindgen]
pub fn tile_counts(height: usize, width: usize, tile_h: usize, tile_w: usize) -> Result<Vec<u32>, JsError> {
    let grid = plan_tiles(Extent::new(1, height, width), Extent::new(1, tile_h, tile_w)).map_err(js_err)?;
    Ok(vec![grid.offsets_y.len() as u32, grid.offsets_x.len() as u32])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_curve_runs_from_one_to_zero() {
        let c = gamma_curve_values(25, 0.002, 700.0, 1.0).unwrap();
        assert_eq!(c.len(), 50);
        assert_eq!(c[0], 700.0);
        assert!((c[1] - 1.0).abs() < 1e-12);
        assert!(c.chunks(2).all(|p| (0.0..=1.0).contains(&p[1])));
        assert!(c.chunks(2).zip(c.chunks(2).skip(1)).all(|(a, b)| b[1] <= a[1]));
    }

    #[test]
    fn suppression_flattens_weights() {
        let base = suppression_values(16, 8, 0.0, 3).unwrap();
        let strong = suppression_values(16, 8, 1e4, 3).unwrap();
        assert_eq!(base[0], 1.0);
        assert!(strong[1] > base[1]);
        assert!((strong[1] - strong[2]).abs() < 1e-4);
        let s: f64 = base[3..].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_is_positive_everywhere() {
        let c = coverage_values(24, 40, 8, 16, 0.25).unwrap();
        assert!(c.iter().all(|&v| v > 0.0));
        assert!(coverage_values(4, 4, 8, 8, 0.25).is_err());
    }
}
