//! Self-attention kernels used by the tiled sampler.
//!
//! All variants share one numerically stable softmax kernel (row max
//! subtracted, accumulation in `f64`). The variants differ only in the key/value
//! set they see and in the softmax temperature:
//!
//! * [`self_attention`] computes `softmax(QKᵀ/√d)V`.
//! * [`extended_self_attention`] extends keys/values with an injected set,
//!   used for spatial and temporal propagation across tiles.
//! * [`dssag_attention`] uses temperature `max(γ²·q·k, 1)` where `q`, `k` are the
//!   largest absolute entries of `Q` and `K`. Large `γ` flattens the weights
//!   and blurs detail.
//! * [`pag_attention`] uses an identity score matrix, so it returns `V`.

use crate::error::{Error, Result};

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// A matrix with no rows and `cols` columns.
    pub fn empty(cols: usize) -> Self {
        Self::zeros(0, cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks `parts` vertically. All parts must share the column count.
    pub fn vstack<'a>(cols: usize, parts: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dim(format!(
                    "feature width {} does not match {cols}",
                    p.cols
                )));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Query, key and value matrices for one attention call. The feature
/// dimension `d` is the column count of `Q` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttentionTensors {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        let a = Self { q, k, v };
        a.validate()?;
        Ok(a)
    }

    pub fn d(&self) -> usize {
        self.q.cols
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.q.cols == 0 {
            return Err(Error::dim("feature dimension must be >= 1"));
        }
        if self.k.cols != self.q.cols {
            return Err(Error::dim(format!(
                "query width {} vs key width {}",
                self.q.cols, self.k.cols
            )));
        }
        if self.k.rows != self.v.rows {
            return Err(Error::dim(format!(
                "{} keys but {} values",
                self.k.rows, self.v.rows
            )));
        }
        if self.k.rows == 0 {
            return Err(Error::dim("at least one key is required"));
        }
        if !(self.q.is_finite() && self.k.is_finite() && self.v.is_finite()) {
            return Err(Error::NonFinite("attention operands".into()));
        }
        Ok(())
    }
}

/// Where an injected key/value set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvSource {
    SapGlobal,
    TapForward,
    TapBackward,
}

/// Extra keys and values appended to a tile's own set.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedKv {
    pub keys: Matrix,
    pub values: Matrix,
    pub source: KvSource,
}

impl InjectedKv {
    pub fn new(keys: Matrix, values: Matrix, source: KvSource) -> Result<Self> {
        if keys.rows != values.rows {
            return Err(Error::dim(format!(
                "{} injected keys but {} values",
                keys.rows, values.rows
            )));
        }
        Ok(Self {
            keys,
            values,
            source,
        })
    }

    pub fn empty(d: usize, d_v: usize, source: KvSource) -> Self {
        Self {
            keys: Matrix::empty(d),
            values: Matrix::empty(d_v),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.rows
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows == 0
    }
}

/// Detail-suppression strength `γ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionParam(f64);

impl SuppressionParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self(gamma))
    }

    pub fn gamma(&self) -> f64 {
        self.0
    }

    /// Softmax temperature `max(γ²·q·k, 1)`.
    pub fn temperature(&self, q_max: f32, k_max: f32) -> f64 {
        (self.0 * self.0 * q_max as f64 * k_max as f64).max(1.0)
    }
}

/// Row-wise softmax weights of `QKᵀ / (temperature·√d)`.
pub fn attention_probs(q: &Matrix, k: &Matrix, temperature: f64) -> Vec<Vec<f64>> {
    let denom = temperature * (q.cols as f64).sqrt();
    (0..q.rows)
        .map(|i| {
            let qi = q.row(i);
            let scores: Vec<f64> = (0..k.rows)
                .map(|j| dot(qi, k.row(j)) / denom)
                .collect();
            softmax(&scores)
        })
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    for w in &mut e {
        *w /= sum;
    }
    e
}

/// The shared kernel.
pub(crate) fn attend(q: &Matrix, k: &Matrix, v: &Matrix, temperature: f64) -> Matrix {
    attend_with_probs(q, k, v, temperature).0
}

/// [`attend`] that also hands back the softmax rows.
pub(crate) fn attend_with_probs(q: &Matrix, k: &Matrix, v: &Matrix, temperature: f64) -> (Matrix, Vec<Vec<f64>>) {
    let probs = attention_probs(q, k, temperature);
    let mut out = Matrix::zeros(q.rows, v.cols);
    let mut acc = vec![0.0f64; v.cols];
    for (i, p) in probs.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (j, &w) in p.iter().enumerate() {
            for (a, &x) in acc.iter_mut().zip(v.row(j)) {
                *a += w * x as f64;
            }
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    (out, probs)
}

pub fn self_attention(a: &AttentionTensors) -> Result<Matrix> {
    a.validate()?;
    Ok(attend(&a.q, &a.k, &a.v, 1.0))
}

pub(crate) fn extend(a: &AttentionTensors, inj: &InjectedKv) -> Result<(Matrix, Matrix)> {
    if inj.keys.cols != a.k.cols && !inj.is_empty() {
        return Err(Error::dim(format!(
            "injected key width {} vs tile key width {}",
            inj.keys.cols, a.k.cols
        )));
    }
    if inj.values.cols != a.v.cols && !inj.is_empty() {
        return Err(Error::dim(format!(
            "injected value width {} vs tile value width {}",
            inj.values.cols, a.v.cols
        )));
    }
    if inj.is_empty() {
        return Ok((a.k.clone(), a.v.clone()));
    }
    Ok((
        Matrix::vstack(a.k.cols, [&a.k, &inj.keys])?,
        Matrix::vstack(a.v.cols, [&a.v, &inj.values])?,
    ))
}

/// Attention over the tile's keys/values concatenated with an injected set.
pub fn extended_self_attention(a: &AttentionTensors, inj: &InjectedKv) -> Result<Matrix> {
    a.validate()?;
    let (k, v) = extend(a, inj)?;
    Ok(attend(&a.q, &k, &v, 1.0))
}

/// γ-tempered attention.
pub fn dssag_attention(a: &AttentionTensors, p: SuppressionParam) -> Result<Matrix> {
    a.validate()?;
    let t = p.temperature(a.q.max_abs(), a.k.max_abs());
    Ok(attend(&a.q, &a.k, &a.v, t))
}

/// γ-tempered attention over an extended key/value set. `q`/`k` maxima are
/// taken over the keys actually attended to.
pub fn tempered_extended_attention(
    a: &AttentionTensors,
    inj: &InjectedKv,
    p: SuppressionParam,
) -> Result<Matrix> {
    a.validate()?;
    let (k, v) = extend(a, inj)?;
    let t = p.temperature(a.q.max_abs(), k.max_abs());
    Ok(attend(&a.q, &k, &v, t))
}

/// Extended attention at an explicit softmax temperature. Callers that take
/// the γ-tempering maxima over a wider scope than one call use this.
pub fn extended_attention_at(a: &AttentionTensors, inj: Option<&InjectedKv>, temperature: f64) -> Result<Matrix> {
    a.validate()?;
    match inj {
        Some(inj) => {
            let (k, v) = extend(a, inj)?;
            Ok(attend(&a.q, &k, &v, temperature))
        }
        None => Ok(attend(&a.q, &a.k, &a.v, temperature)),
    }
}

/// Identity-score perturbation: the output is `V`.
pub fn pag_attention(a: &AttentionTensors) -> Result<Matrix> {
    a.validate()?;
    if a.q.rows != a.k.rows {
        return Err(Error::dim(format!(
            "identity scores need square attention, got {} queries and {} keys",
            a.q.rows, a.k.rows
        )));
    }
    Ok(a.v.clone())
}

/// Token layout of a key/value matrix: rows ordered frame, row, column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl TokenGrid {
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }
}

/// Keeps the tokens on a stride-`rate` lattice anchored at (0, 0) in every
/// frame.
pub fn subsample_spatial_kv(
    keys: &Matrix,
    values: &Matrix,
    rate: usize,
    grid: TokenGrid,
) -> Result<InjectedKv> {
    if rate == 0 {
        return Err(Error::invalid("subsampling rate must be >= 1"));
    }
    if keys.rows != grid.tokens() || values.rows != grid.tokens() {
        return Err(Error::dim(format!(
            "{} keys / {} values for a {}x{}x{} token grid",
            keys.rows, values.rows, grid.frames, grid.height, grid.width
        )));
    }
    let mut idx = Vec::new();
    for f in 0..grid.frames {
        for y in (0..grid.height).step_by(rate) {
            for x in (0..grid.width).step_by(rate) {
                idx.push((f * grid.height + y) * grid.width + x);
            }
        }
    }
    InjectedKv::new(
        keys.select_rows(&idx),
        values.select_rows(&idx),
        KvSource::SapGlobal,
    )
}

/// Row-concatenates per-tile sets in the given (ascending `m`) order.
pub fn aggregate_frame_kv(per_tile: &[InjectedKv]) -> Result<InjectedKv> {
    let first = per_tile
        .first()
        .ok_or_else(|| Error::invalid("no tiles to aggregate"))?;
    InjectedKv::new(
        Matrix::vstack(first.keys.cols, per_tile.iter().map(|p| &p.keys))?,
        Matrix::vstack(first.values.cols, per_tile.iter().map(|p| &p.values))?,
        first.source,
    )
}

/// Population standard deviation of every element of `m`.
pub fn population_std(m: &Matrix) -> f64 {
    let n = m.data.len() as f64;
    let mean = m.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = m
        .data
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Indices of the `count` frames whose keys have the largest population
/// standard deviation. Ties go to the lower index; the result is ascending.
pub fn select_tap_frames(keys_by_frame: &[Matrix], count: usize) -> Result<Vec<usize>> {
    if count > keys_by_frame.len() {
        return Err(Error::invalid(format!(
            "cannot select {count} of {} frames",
            keys_by_frame.len()
        )));
    }
    if keys_by_frame.iter().any(|k| k.data.is_empty()) {
        return Err(Error::dim("every frame needs at least one key"));
    }
    let mut ranked: Vec<(f64, usize)> = keys_by_frame
        .iter()
        .enumerate()
        .map(|(i, k)| (population_std(k), i))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(count).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Shannon entropy (nats) of each softmax row.
pub fn row_entropies(probs: &[Vec<f64>]) -> Vec<f64> {
    probs
        .iter()
        .map(|p| {
            -p.iter()
                .filter(|&&w| w > 0.0)
                .map(|&w| w * w.ln())
                .sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Matrix {
        Matrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
        )
        .unwrap()
    }

    fn unit_example() -> AttentionTensors {
        AttentionTensors::new(
            m(&[&[1.0, 0.0]]),
            m(&[&[1.0, 0.0], &[0.0, 1.0]]),
            m(&[&[1.0, 0.0], &[0.0, 1.0]]),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_softmax() {
        // scores (1/√2, 0): weights e^{1/√2} / (e^{1/√2} + 1).
        let w = (0.5f64.sqrt()).exp() / ((0.5f64.sqrt()).exp() + 1.0);
        let out = self_attention(&unit_example()).unwrap();
        assert!((out.get(0, 0) as f64 - w).abs() < 1e-6);
        assert!((out.get(0, 0) - 0.6698).abs() < 1e-3);
        assert!((out.get(0, 1) - 0.3302).abs() < 1e-3);
    }

    #[test]
    fn identical_keys_give_value_mean() {
        let a = AttentionTensors::new(
            m(&[&[0.3, -2.0], &[5.0, 1.0]]),
            m(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]),
            m(&[&[3.0], &[6.0], &[0.0]]),
        )
        .unwrap();
        let out = self_attention(&a).unwrap();
        for i in 0..2 {
            assert!((out.get(i, 0) - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let a = AttentionTensors::new(
            m(&[&[9.0, -4.0], &[0.1, 0.2]]),
            m(&[&[1.0, 1.0]]),
            m(&[&[7.0, -1.0, 2.0]]),
        )
        .unwrap();
        let out = self_attention(&a).unwrap();
        assert_eq!(out.row(0), &[7.0, -1.0, 2.0]);
        assert_eq!(out.row(1), &[7.0, -1.0, 2.0]);
    }

    #[test]
    fn empty_injection_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = AttentionTensors::new(
            random(&mut rng, 5, 8, 1.0),
            random(&mut rng, 7, 8, 1.0),
            random(&mut rng, 7, 3, 1.0),
        )
        .unwrap();
        let inj = InjectedKv::empty(8, 3, KvSource::SapGlobal);
        let base = self_attention(&a).unwrap();
        assert!(extended_self_attention(&a, &inj).unwrap().max_abs_diff(&base) <= 1e-6);
    }

    #[test]
    fn duplicate_injection_preserves_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = AttentionTensors::new(
            random(&mut rng, 4, 6, 1.0),
            random(&mut rng, 5, 6, 1.0),
            random(&mut rng, 5, 2, 1.0),
        )
        .unwrap();
        let inj = InjectedKv::new(a.k.clone(), a.v.clone(), KvSource::SapGlobal).unwrap();
        // Each original key's weight halves: p_j' = e^{s_j} / (2 Σ e^{s}).
        let base = attention_probs(&a.q, &a.k, 1.0);
        let (k, _) = extend(&a, &inj).unwrap();
        let ext = attention_probs(&a.q, &k, 1.0);
        for (b, e) in base.iter().zip(&ext) {
            for j in 0..5 {
                assert!((e[j] - b[j] / 2.0).abs() < 1e-12);
                assert!((e[j + 5] - b[j] / 2.0).abs() < 1e-12);
            }
        }
        let out = extended_self_attention(&a, &inj).unwrap();
        assert!(out.max_abs_diff(&self_attention(&a).unwrap()) <= 1e-6);
    }

    #[test]
    fn far_injected_key_is_ignored() {
        // Scores against the tile keys are ≈ 40/√2 ≈ 28+, the injected key is
        // orthogonal to every query, so the score gap is ≥ 30 after scaling.
        let a = AttentionTensors::new(
            m(&[&[45.0, 0.0], &[50.0, 0.0]]),
            m(&[&[1.0, 0.0], &[1.2, 0.0]]),
            m(&[&[1.0], &[2.0]]),
        )
        .unwrap();
        let inj = InjectedKv::new(m(&[&[0.0, 1.0]]), m(&[&[100.0]]), KvSource::TapForward).unwrap();
        let base = self_attention(&a).unwrap();
        let out = extended_self_attention(&a, &inj).unwrap();
        assert!(out.max_abs_diff(&base) < 1e-6);
        assert!(extended_self_attention(
            &a,
            &InjectedKv::new(m(&[&[0.0, 1.0, 0.0]]), m(&[&[1.0]]), KvSource::TapForward).unwrap()
        )
        .is_err());
    }

    #[test]
    fn dssag_reductions() {
        let a = unit_example();
        let base = self_attention(&a).unwrap();
        let g0 = dssag_attention(&a, SuppressionParam::new(0.0).unwrap()).unwrap();
        assert_eq!(g0, base);
        // q = k = 1 here, so γ² = 4 gives temperature 4: scores (1/(4√2), 0).
        let out = dssag_attention(&a, SuppressionParam::new(2.0).unwrap()).unwrap();
        let s = 1.0 / (4.0 * 2f64.sqrt());
        let w = s.exp() / (s.exp() + 1.0);
        assert!((out.get(0, 0) as f64 - w).abs() < 1e-6);
        assert!((out.get(0, 0) - 0.5440).abs() < 1e-3);
        assert!((out.get(0, 1) - 0.4560).abs() < 1e-3);
        // γ²qk = 1e6: nearly uniform.
        let out = dssag_attention(&a, SuppressionParam::new(1000.0).unwrap()).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-4);
        assert!(SuppressionParam::new(-1.0).is_err());
    }

    #[test]
    fn pag_returns_values() {
        let a = AttentionTensors::new(
            m(&[&[1.0, 2.0], &[3.0, 4.0]]),
            m(&[&[0.5, 0.5], &[1.0, -1.0]]),
            m(&[&[7.0], &[8.0]]),
        )
        .unwrap();
        let once = pag_attention(&a).unwrap();
        assert_eq!(once, a.v);
        let again = pag_attention(&AttentionTensors::new(a.q.clone(), a.k.clone(), once.clone()).unwrap()).unwrap();
        assert_eq!(again, once);
        let zero = AttentionTensors::new(a.q.clone(), a.k.clone(), Matrix::zeros(2, 1)).unwrap();
        assert_eq!(pag_attention(&zero).unwrap(), Matrix::zeros(2, 1));
        let rect = AttentionTensors::new(m(&[&[1.0, 0.0]]), a.k.clone(), a.v.clone()).unwrap();
        assert!(pag_attention(&rect).is_err());
    }

    #[test]
    fn subsample_lattice() {
        let grid = TokenGrid { frames: 1, height: 4, width: 4 };
        let keys = Matrix::new(16, 1, (0..16).map(|i| i as f32).collect()).unwrap();
        let s = subsample_spatial_kv(&keys, &keys, 2, grid).unwrap();
        // Enumerated (row, col) pairs (0,0), (0,2), (2,0), (2,2).
        let expected: Vec<f32> = [(0, 0), (0, 2), (2, 0), (2, 2)]
            .iter()
            .map(|&(y, x)| (y * 4 + x) as f32)
            .collect();
        assert_eq!(s.keys.as_slice(), expected.as_slice());
        assert_eq!(subsample_spatial_kv(&keys, &keys, 1, grid).unwrap().keys, keys);
        let s = subsample_spatial_kv(&keys, &keys, 9, grid).unwrap();
        assert_eq!(s.keys.as_slice(), &[0.0]);
        let two = TokenGrid { frames: 2, height: 2, width: 2 };
        let k8 = Matrix::new(8, 1, (0..8).map(|i| i as f32).collect()).unwrap();
        assert_eq!(subsample_spatial_kv(&k8, &k8, 5, two).unwrap().keys.as_slice(), &[0.0, 4.0]);
        assert!(subsample_spatial_kv(&k8, &k8, 2, grid).is_err());
    }

    #[test]
    fn aggregation_order_and_count() {
        let grid = TokenGrid { frames: 1, height: 4, width: 4 };
        let tiles: Vec<InjectedKv> = (0..3)
            .map(|m| {
                let k = Matrix::new(16, 2, vec![m as f32; 32]).unwrap();
                subsample_spatial_kv(&k, &k, 2, grid).unwrap()
            })
            .collect();
        let agg = aggregate_frame_kv(&tiles[..1]).unwrap();
        assert_eq!(agg, tiles[0]);
        let agg = aggregate_frame_kv(&tiles[..2]).unwrap();
        assert_eq!(agg.len(), 8);
        assert!(agg.keys.as_slice()[..8].iter().all(|&v| v == 0.0));
        assert_eq!(aggregate_frame_kv(&tiles).unwrap().len(), 4 * 3);
    }

    /// Brute-force oracle: repeatedly scan for the largest std (naive
    /// E[x²] − E[x]² formula), lowest index first on ties.
    fn brute_force_select(frames: &[Matrix], count: usize) -> Vec<usize> {
        let stds: Vec<f64> = frames
            .iter()
            .map(|f| {
                let n = f.as_slice().len() as f64;
                let mean: f64 = f.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
                let sq: f64 = f.as_slice().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
                (sq / n).sqrt()
            })
            .collect();
        let mut taken = vec![false; frames.len()];
        let mut out = Vec::new();
        for _ in 0..count {
            let mut best: Option<usize> = None;
            for i in 0..frames.len() {
                if taken[i] {
                    continue;
                }
                if best.is_none_or(|b| stds[i] > stds[b]) {
                    best = Some(i);
                }
            }
            taken[best.unwrap()] = true;
            out.push(best.unwrap());
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn tap_selection_examples() {
        let mut frames = vec![Matrix::zeros(1, 2); 5];
        frames[2] = m(&[&[-3.0, 3.0]]);
        assert!((population_std(&frames[2]) - 3.0).abs() < 1e-15);
        assert_eq!(select_tap_frames(&frames, 1).unwrap(), vec![2]);
        let same = vec![m(&[&[1.0, 2.0]]); 6];
        assert_eq!(select_tap_frames(&same, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_tap_frames(&same, 6).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(select_tap_frames(&same, 7).is_err());
    }

    #[test]
    fn tap_selection_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..100 {
            let n = rng.gen_range(1..16);
            let mut frames: Vec<Matrix> = (0..n)
                .map(|_| {
                    let s = rng.gen_range(0.1..3.0);
                    random(&mut rng, 4, 3, s)
                })
                .collect();
            // Every third case duplicates frames to force ties.
            if case % 3 == 0 && n > 2 {
                for i in (1..n).step_by(2) {
                    frames[i] = frames[i - 1].clone();
                }
            }
            let l = rng.gen_range(0..=n);
            assert_eq!(select_tap_frames(&frames, l).unwrap(), brute_force_select(&frames, l));
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_permutation_invariant(seed in any::<u64>(), gamma in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = AttentionTensors::new(
                random(&mut rng, 3, 4, 2.0),
                random(&mut rng, 6, 4, 2.0),
                random(&mut rng, 6, 3, 2.0),
            ).unwrap();
            let p = SuppressionParam::new(gamma).unwrap();
            for probs in [
                attention_probs(&a.q, &a.k, 1.0),
                attention_probs(&a.q, &a.k, p.temperature(a.q.max_abs(), a.k.max_abs())),
            ] {
                for row in probs {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
            let perm = [3usize, 0, 5, 1, 4, 2];
            let b = AttentionTensors::new(a.q.clone(), a.k.select_rows(&perm), a.v.select_rows(&perm)).unwrap();
            prop_assert!(self_attention(&a).unwrap().max_abs_diff(&self_attention(&b).unwrap()) <= 1e-6);
            prop_assert!(dssag_attention(&a, p).unwrap().max_abs_diff(&dssag_attention(&b, p).unwrap()) <= 1e-6);
        }
    }
}
