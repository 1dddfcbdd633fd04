//! Spatio-temporal tiling of latent videos.
//!
//! A [`TileGrid`] decomposes a `frames × height × width` extent into tiles that
//! overlap by half a tile along every axis. The final offset on each axis is
//! clamped so the last tile ends exactly on the boundary. Tiles are merged back
//! with separable Gaussian alpha weights that are normalized per output
//! position at merge time.

use crate::error::{Error, Result};
use crate::tensor::{Dims, VideoTensor};

/// Frame/row/column extent, used both for whole videos and for tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extent {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Extent {
    pub const fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
        }
    }

    pub fn of(dims: Dims) -> Self {
        Self::new(dims.frames, dims.height, dims.width)
    }

    pub fn voxels(&self) -> usize {
        self.frames * self.height * self.width
    }
}

impl std::fmt::Display for Extent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.frames)
    }
}

/// Parses `HxWxF` (`×` is accepted in place of `x`).
impl std::str::FromStr for Extent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X', '×']).collect();
        let bad = || Error::invalid(format!("expected HxWxF, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad))
            .collect::<Result<_>>()?;
        Ok(Self::new(n[2], n[0], n[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub video: Extent,
    pub tile: Extent,
    pub offsets_t: Vec<usize>,
    pub offsets_y: Vec<usize>,
    pub offsets_x: Vec<usize>,
}

/// Location of one tile: `m` indexes the spatial position (row-major over the
/// y/x offsets), `n` the temporal position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileIndex {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub m: usize,
    pub n: usize,
    pub payload: VideoTensor,
}

impl Tile {
    pub fn index(&self) -> TileIndex {
        TileIndex {
            n: self.n,
            m: self.m,
        }
    }
}

/// Offsets along one axis: stride `tile / 2`, last offset clamped to
/// `extent - tile`.
fn axis_offsets(extent: usize, tile: usize) -> Vec<usize> {
    let stride = (tile / 2).max(1);
    let last = extent - tile;
    let mut out = Vec::new();
    let mut o = 0;
    while o < last {
        out.push(o);
        o += stride;
    }
    out.push(last);
    out
}

pub fn plan_tiles(video: Extent, tile: Extent) -> Result<TileGrid> {
    let axes = [
        ("frames", video.frames, tile.frames),
        ("height", video.height, tile.height),
        ("width", video.width, tile.width),
    ];
    for (name, v, t) in axes {
        if t == 0 {
            return Err(Error::dim(format!("tile {name} must be >= 1")));
        }
        if v < t {
            return Err(Error::dim(format!(
                "video {name} {v} is smaller than tile {name} {t}"
            )));
        }
    }
    Ok(TileGrid {
        video,
        tile,
        offsets_t: axis_offsets(video.frames, tile.frames),
        offsets_y: axis_offsets(video.height, tile.height),
        offsets_x: axis_offsets(video.width, tile.width),
    })
}

impl TileGrid {
    /// Number of spatial tile positions per temporal slot (M).
    pub fn spatial_count(&self) -> usize {
        self.offsets_y.len() * self.offsets_x.len()
    }

    /// Number of temporal tile positions (N).
    pub fn temporal_count(&self) -> usize {
        self.offsets_t.len()
    }

    pub fn len(&self) -> usize {
        self.spatial_count() * self.temporal_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(frame, row, column)` origin of a tile.
    pub fn origin(&self, idx: TileIndex) -> (usize, usize, usize) {
        let nx = self.offsets_x.len();
        (
            self.offsets_t[idx.n],
            self.offsets_y[idx.m / nx],
            self.offsets_x[idx.m % nx],
        )
    }

    /// All tile indices in ascending `(n, m)` order.
    pub fn indices(&self) -> impl Iterator<Item = TileIndex> + '_ {
        (0..self.temporal_count())
            .flat_map(move |n| (0..self.spatial_count()).map(move |m| TileIndex { n, m }))
    }

    fn check_tensor(&self, t: &VideoTensor) -> Result<()> {
        if Extent::of(t.dims()) != self.video {
            return Err(Error::dim(format!(
                "tensor extent {} does not match planned extent {}",
                Extent::of(t.dims()),
                self.video
            )));
        }
        Ok(())
    }
}

/// Cuts `latent` into grid tiles, ordered by `(n, m)`.
pub fn split(latent: &VideoTensor, grid: &TileGrid) -> Result<Vec<Tile>> {
    grid.check_tensor(latent)?;
    Ok(grid
        .indices()
        .map(|idx| Tile {
            m: idx.m,
            n: idx.n,
            payload: extract(latent, grid, idx),
        })
        .collect())
}

/// One tile's sub-block.
pub fn extract(latent: &VideoTensor, grid: &TileGrid, idx: TileIndex) -> VideoTensor {
    let (t0, y0, x0) = grid.origin(idx);
    let dims = latent.dims();
    let td = Dims::new(grid.tile.frames, dims.channels, grid.tile.height, grid.tile.width);
    let mut data = Vec::with_capacity(td.len());
    for n in 0..td.frames {
        for c in 0..td.channels {
            for y in 0..td.height {
                let start = latent.index(t0 + n, c, y0 + y, x0);
                data.extend_from_slice(&latent.as_slice()[start..start + td.width]);
            }
        }
    }
    VideoTensor::from_raw(td, data)
}

/// Separable Gaussian weights over one tile, indexed `[frame][row][column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    pub extent: Extent,
    pub weights: Vec<f64>,
}

impl BlendMask {
    pub fn at(&self, n: usize, y: usize, x: usize) -> f64 {
        self.weights[(n * self.extent.height + y) * self.extent.width + x]
    }

    /// A mask of all ones.
    pub fn uniform(extent: Extent) -> Self {
        Self {
            extent,
            weights: vec![1.0; extent.voxels()],
        }
    }
}

fn axis_gaussian(len: usize, sigma_fraction: f64) -> Vec<f64> {
    let center = (len as f64 - 1.0) / 2.0;
    let sigma = sigma_fraction * len as f64;
    (0..len)
        .map(|i| {
            let d = i as f64 - center;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Per-axis weight `exp(-d² / (2 (sigma_fraction · extent)²))` measured from
/// the tile center, multiplied across axes. Not normalized.
pub fn gaussian_mask(tile: Extent, sigma_fraction: f64) -> Result<BlendMask> {
    if !(sigma_fraction > 0.0 && sigma_fraction.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma_fraction must be positive, got {sigma_fraction}"
        )));
    }
    let wt = axis_gaussian(tile.frames, sigma_fraction);
    let wy = axis_gaussian(tile.height, sigma_fraction);
    let wx = axis_gaussian(tile.width, sigma_fraction);
    let mut weights = Vec::with_capacity(tile.voxels());
    for a in &wt {
        for b in &wy {
            for c in &wx {
                weights.push(a * b * c);
            }
        }
    }
    Ok(BlendMask {
        extent: tile,
        weights,
    })
}

/// Weighted average of overlapping tiles. Accumulation runs in ascending
/// `(n, m)` order whatever order `tiles` arrives in.
pub fn merge(tiles: &[Tile], grid: &TileGrid, mask: &BlendMask) -> Result<VideoTensor> {
    if mask.extent != grid.tile {
        return Err(Error::dim(format!(
            "mask extent {} differs from tile extent {}",
            mask.extent, grid.tile
        )));
    }
    let mut slots: Vec<Option<&Tile>> = vec![None; grid.len()];
    let m_count = grid.spatial_count();
    for t in tiles {
        if t.n >= grid.temporal_count() || t.m >= m_count {
            return Err(Error::Coverage(format!(
                "tile (m={}, n={}) is outside the grid",
                t.m, t.n
            )));
        }
        let slot = &mut slots[t.n * m_count + t.m];
        if slot.is_some() {
            return Err(Error::Coverage(format!("duplicate tile (m={}, n={})", t.m, t.n)));
        }
        *slot = Some(t);
    }
    let ordered = slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.ok_or_else(|| {
                Error::Coverage(format!("missing tile (m={}, n={})", i % m_count, i / m_count))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let channels = ordered[0].payload.dims().channels;
    let tile_dims = Dims::new(grid.tile.frames, channels, grid.tile.height, grid.tile.width);
    for t in &ordered {
        if t.payload.dims() != tile_dims {
            return Err(Error::dim(format!(
                "tile (m={}, n={}) has dims {}, expected {tile_dims}",
                t.m,
                t.n,
                t.payload.dims()
            )));
        }
    }

    let out_dims = Dims::new(grid.video.frames, channels, grid.video.height, grid.video.width);
    let plane = out_dims.plane_len();
    let mut num = vec![0.0f64; out_dims.len()];
    let mut den = vec![0.0f64; grid.video.voxels()];
    for t in ordered {
        let (t0, y0, x0) = grid.origin(t.index());
        for n in 0..grid.tile.frames {
            for y in 0..grid.tile.height {
                for x in 0..grid.tile.width {
                    let w = mask.at(n, y, x);
                    let (gn, gy, gx) = (t0 + n, y0 + y, x0 + x);
                    den[(gn * grid.video.height + gy) * grid.video.width + gx] += w;
                    for c in 0..channels {
                        let v = t.payload.get(n, c, y, x) as f64;
                        num[(gn * channels + c) * plane + gy * grid.video.width + gx] += w * v;
                    }
                }
            }
        }
    }
    let mut data = Vec::with_capacity(out_dims.len());
    for n in 0..out_dims.frames {
        for c in 0..channels {
            for p in 0..plane {
                let w = den[n * plane + p];
                if w <= 0.0 {
                    return Err(Error::Coverage(format!("position (frame {n}, pixel {p}) uncovered")));
                }
                data.push((num[(n * channels + c) * plane + p] / w) as f32);
            }
        }
    }
    Ok(VideoTensor::from_raw(out_dims, data))
}

/// Frame-interleaves noisy and conditioning latents: `[x1, l1, x2, l2, ...]`.
pub fn interleave(x: &VideoTensor, l: &VideoTensor) -> Result<VideoTensor> {
    x.ensure_same_dims(l)?;
    let d = x.dims();
    let mut data = Vec::with_capacity(2 * d.len());
    for n in 0..d.frames {
        data.extend_from_slice(x.frame(n));
        data.extend_from_slice(l.frame(n));
    }
    Ok(VideoTensor::from_raw(d.with_frames(2 * d.frames), data))
}

/// Exact inverse of [`interleave`].
pub fn deinterleave(y: &VideoTensor) -> Result<(VideoTensor, VideoTensor)> {
    let d = y.dims();
    if !d.frames.is_multiple_of(2) {
        return Err(Error::dim(format!(
            "interleaved tensor needs an even frame count, got {}",
            d.frames
        )));
    }
    let half = d.with_frames(d.frames / 2);
    let mut x = Vec::with_capacity(half.len());
    let mut l = Vec::with_capacity(half.len());
    for n in 0..half.frames {
        x.extend_from_slice(y.frame(2 * n));
        l.extend_from_slice(y.frame(2 * n + 1));
    }
    Ok((VideoTensor::from_raw(half, x), VideoTensor::from_raw(half, l)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent enumeration: every multiple of the stride that still fits,
    /// plus the boundary-aligned offset.
    fn enumerate_offsets(extent: usize, tile: usize) -> Vec<usize> {
        let stride = (tile / 2).max(1);
        let mut set: Vec<usize> = (0..=extent)
            .filter(|o| o % stride == 0 && o + tile <= extent)
            .collect();
        set.push(extent - tile);
        set.sort_unstable();
        set.dedup();
        set
    }

    #[test]
    fn extent_notation() {
        let e: Extent = "64x32x14".parse().unwrap();
        assert_eq!(e, Extent::new(14, 64, 32));
        assert_eq!(e.to_string(), "64x32x14");
        assert_eq!("8×8×4".parse::<Extent>().unwrap(), Extent::new(4, 8, 8));
        assert!("8x8".parse::<Extent>().is_err());
        assert!("8x0x2".parse::<Extent>().is_err());
    }

    #[test]
    fn plan_128_by_64() {
        let g = plan_tiles(Extent::new(14, 128, 128), Extent::new(14, 64, 64)).unwrap();
        assert_eq!(g.offsets_y, enumerate_offsets(128, 64));
        assert_eq!(g.offsets_y, vec![0, 32, 64]);
        assert_eq!(g.offsets_x, vec![0, 32, 64]);
        assert_eq!(g.spatial_count(), 9);
    }

    #[test]
    fn plan_exact_fit_and_temporal_clamp() {
        let g = plan_tiles(Extent::new(21, 64, 64), Extent::new(14, 64, 64)).unwrap();
        assert_eq!(g.offsets_y, vec![0]);
        assert_eq!(g.spatial_count(), 1);
        assert_eq!(g.offsets_t, enumerate_offsets(21, 14));
        assert_eq!(g.offsets_t, vec![0, 7]);
    }

    #[test]
    fn plan_rejects_small_video() {
        assert!(matches!(
            plan_tiles(Extent::new(14, 32, 64), Extent::new(14, 64, 64)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn split_constant_and_identity() {
        let d = Dims::new(1, 2, 64, 64);
        let v = VideoTensor::filled(d, 3.25);
        let g = plan_tiles(Extent::of(d), Extent::new(1, 32, 32)).unwrap();
        for t in split(&v, &g).unwrap() {
            assert!(t.payload.as_slice().iter().all(|&x| x == 3.25));
        }
        let r = VideoTensor::gaussian(d, 1, 1.0);
        let g1 = plan_tiles(Extent::of(d), Extent::of(d)).unwrap();
        let tiles = split(&r, &g1).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].payload, r);
    }

    #[test]
    fn split_tile_matches_direct_slice() {
        let d = Dims::new(1, 1, 128, 128);
        let r = VideoTensor::gaussian(d, 2, 1.0);
        let g = plan_tiles(Extent::of(d), Extent::new(1, 64, 64)).unwrap();
        let tiles = split(&r, &g).unwrap();
        assert_eq!(tiles.len(), 9);
        // m = 4 is the (row 1, column 1) position, origin (32, 32).
        let t = &tiles[4];
        assert_eq!(g.origin(t.index()), (0, 32, 32));
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(t.payload.get(0, 0, y, x), r.get(0, 0, 32 + y, 32 + x));
            }
        }
    }

    #[test]
    fn mask_center_symmetry_and_closed_form() {
        let m = gaussian_mask(Extent::new(1, 5, 5), 0.25).unwrap();
        assert_eq!(m.at(0, 2, 2), 1.0);
        let m = gaussian_mask(Extent::new(3, 6, 4), 0.25).unwrap();
        for n in 0..3 {
            for y in 0..6 {
                for x in 0..4 {
                    assert_eq!(m.at(n, y, x), m.at(n, 5 - y, x));
                    assert_eq!(m.at(n, y, x), m.at(2 - n, y, 3 - x));
                    assert!(m.at(n, y, x) > 0.0);
                }
            }
        }
        // 4x4 tile, sigma_fraction 0.5: sigma = 2, corner sits 1.5 px from the
        // center on both axes, the innermost pixels 0.5 px.
        let m = gaussian_mask(Extent::new(1, 4, 4), 0.5).unwrap();
        let expected = (-(1.5f64 * 1.5 + 1.5 * 1.5) / 8.0).exp() / (-(0.25f64 + 0.25) / 8.0).exp();
        let ratio = m.at(0, 0, 0) / m.at(0, 1, 1);
        assert!((ratio - expected).abs() < 1e-15);
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn merge_constant_tiles() {
        let d = Dims::new(5, 1, 20, 13);
        let g = plan_tiles(Extent::of(d), Extent::new(3, 8, 6)).unwrap();
        let mask = gaussian_mask(g.tile, 0.25).unwrap();
        let v = VideoTensor::filled(d, -1.5);
        let out = merge(&split(&v, &g).unwrap(), &g, &mask).unwrap();
        assert!(out.as_slice().iter().all(|&x| x == -1.5));
    }

    #[test]
    fn merge_two_1d_tiles_averages_overlap() {
        // Length-3 row, tiles of length 2 at offsets 0 and 1, uniform weights.
        let g = plan_tiles(Extent::new(1, 1, 3), Extent::new(1, 1, 2)).unwrap();
        assert_eq!(g.offsets_x, vec![0, 1]);
        let (a, b) = (2.0f32, 5.0f32);
        let td = Dims::new(1, 1, 1, 2);
        let tiles = vec![
            Tile { m: 0, n: 0, payload: VideoTensor::filled(td, a) },
            Tile { m: 1, n: 0, payload: VideoTensor::filled(td, b) },
        ];
        let out = merge(&tiles, &g, &BlendMask::uniform(g.tile)).unwrap();
        assert_eq!(out.as_slice(), &[a, (a + b) / 2.0, b]);
    }

    #[test]
    fn merge_reports_missing_tile() {
        let d = Dims::new(1, 1, 8, 8);
        let g = plan_tiles(Extent::of(d), Extent::new(1, 4, 4)).unwrap();
        let mut tiles = split(&VideoTensor::zeros(d), &g).unwrap();
        tiles.remove(3);
        let mask = gaussian_mask(g.tile, 0.25).unwrap();
        assert!(matches!(merge(&tiles, &g, &mask), Err(Error::Coverage(_))));
    }

    #[test]
    fn merge_is_order_independent() {
        let d = Dims::new(6, 2, 12, 12);
        let g = plan_tiles(Extent::of(d), Extent::new(4, 6, 6)).unwrap();
        let mask = gaussian_mask(g.tile, 0.25).unwrap();
        // Perturb each tile so overlaps disagree.
        let mut tiles = split(&VideoTensor::gaussian(d, 3, 1.0), &g).unwrap();
        for (i, t) in tiles.iter_mut().enumerate() {
            t.payload = t.payload.map(|v| v + i as f32 * 0.1);
        }
        let a = merge(&tiles, &g, &mask).unwrap();
        tiles.reverse();
        tiles.swap(1, 4);
        let b = merge(&tiles, &g, &mask).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
    }

    #[test]
    fn interleave_layout() {
        let d = Dims::new(2, 1, 1, 1);
        let x = VideoTensor::new(d, vec![1.0, 2.0]).unwrap();
        let l = VideoTensor::new(d, vec![10.0, 20.0]).unwrap();
        let y = interleave(&x, &l).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(deinterleave(&y).unwrap(), (x, l));

        let d1 = Dims::new(1, 3, 2, 2);
        let x = VideoTensor::gaussian(d1, 1, 1.0);
        let l = VideoTensor::gaussian(d1, 2, 1.0);
        let y = interleave(&x, &l).unwrap();
        assert_eq!(y.frame(0), x.frame(0));
        assert_eq!(y.frame(1), l.frame(0));
        assert!(interleave(&x, &VideoTensor::zeros(Dims::new(2, 3, 2, 2))).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_merge_round_trip(
            tf in 1usize..5, th in 1usize..9, tw in 1usize..9,
            ef in 0usize..6, eh in 0usize..12, ew in 0usize..12,
            seed in any::<u64>(),
        ) {
            let d = Dims::new(tf + ef, 2, th + eh, tw + ew);
            let g = plan_tiles(Extent::of(d), Extent::new(tf, th, tw)).unwrap();
            let mask = gaussian_mask(g.tile, 0.25).unwrap();
            let x = VideoTensor::gaussian(d, seed, 3.0);
            let back = merge(&split(&x, &g).unwrap(), &g, &mask).unwrap();
            prop_assert!(back.max_abs_diff(&x) <= 1e-6);
            let ones = VideoTensor::filled(d, 1.0);
            let back = merge(&split(&ones, &g).unwrap(), &g, &mask).unwrap();
            prop_assert!(back.max_abs_diff(&ones) <= 1e-6);
            for w in [&g.offsets_t, &g.offsets_y, &g.offsets_x] {
                prop_assert!(w.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }
}
