use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend_with_probs, extend, AttentionTensors, Matrix, TokenGrid};
use crate::denoiser::{
    AttentionKernel, CapturedKv, DenoiseOutput, DenoiseRequest, Denoiser, LayerHook, COND_DIM,
};
use crate::error::{Error, Result};
use crate::sampler::precondition;
use crate::tensor::{Dims, VideoTensor};

/// Shape and seed of a [`ToyAttentionDenoiser`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserSpec {
    pub seed: u64,
    pub patch: usize,
    pub embed: usize,
    /// Spatial self-attention layers; at least 4.
    pub spatial_layers: usize,
    /// Latent channels of `x` (the network sees `2·channels` with the
    /// conditioning latent stacked on).
    pub channels: usize,
    pub mlp_hidden: usize,
    pub sigma_data: f64,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            patch: 4,
            embed: 32,
            spatial_layers: 4,
            channels: 3,
            mlp_hidden: 64,
            sigma_data: 0.5,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spatial_layers < 4 {
            return Err(Error::invalid(format!(
                "need at least 4 spatial attention layers, got {}",
                self.spatial_layers
            )));
        }
        if self.patch == 0 || self.embed == 0 || self.channels == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("network sizes must be >= 1"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::invalid("sigma_data must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Linear {
    fan_in: usize,
    fan_out: usize,
    w: Vec<f32>,
    b: Vec<f32>,
}

impl Linear {
    fn seeded(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let bound = gain / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| (rng.gen_range(-1.0..1.0) * bound) as f32)
            .collect();
        let b = (0..fan_out)
            .map(|_| (rng.gen_range(-1.0..1.0) * 0.1) as f32)
            .collect();
        Self {
            fan_in,
            fan_out,
            w,
            b,
        }
    }

    fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        for (o, (row, &b)) in out
            .iter_mut()
            .zip(self.w.chunks_exact(self.fan_in).zip(&self.b))
        {
            let acc: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
            *o = (acc + b as f64) as f32;
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.fan_out];
        self.apply_into(x, &mut out);
        out
    }

    fn apply_rows(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(m.rows(), self.fan_out);
        for i in 0..m.rows() {
            self.apply_into(m.row(i), out.row_mut(i));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct AttnBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone)]
struct MlpBlock {
    up: Linear,
    down: Linear,
}

/// Seeded patch transformer with hookable spatial self-attention.
///
/// Every frame is patchified into tokens; `spatial_layers` blocks of
/// per-frame self-attention plus MLP follow, with one temporal attention
/// block across frames in the middle. The temporal block has no positional
/// encoding along time, so the network commutes with frame reversal.
#[derive(Debug, Clone)]
pub struct ToyAttentionDenoiser {
    spec: DenoiserSpec,
    embed: Linear,
    cond: Linear,
    noise: Linear,
    spatial: Vec<(AttnBlock, MlpBlock)>,
    temporal: AttnBlock,
    unembed: Linear,
}

const QK_GAIN: f64 = 2.5;

fn attn_block(rng: &mut ChaCha8Rng, d: usize) -> AttnBlock {
    AttnBlock {
        q: Linear::seeded(rng, d, d, QK_GAIN),
        k: Linear::seeded(rng, d, d, QK_GAIN),
        v: Linear::seeded(rng, d, d, 1.0),
        o: Linear::seeded(rng, d, d, 0.5),
    }
}

fn layer_norm(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let n = row.len() as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for v in row.iter_mut() {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
    out
}

fn add_assign(h: &mut Matrix, delta: &Matrix) {
    for i in 0..h.rows() {
        for (a, &b) in h.row_mut(i).iter_mut().zip(delta.row(i)) {
            *a += b;
        }
    }
}

impl ToyAttentionDenoiser {
    pub fn new(spec: DenoiserSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.embed;
        let p2 = spec.patch * spec.patch;
        let embed = Linear::seeded(&mut rng, 2 * spec.channels * p2, d, 1.0);
        let cond = Linear::seeded(&mut rng, COND_DIM, d, 0.5);
        let noise = Linear::seeded(&mut rng, 4, d, 0.5);
        let spatial = (0..spec.spatial_layers)
            .map(|_| {
                let a = attn_block(&mut rng, d);
                let m = MlpBlock {
                    up: Linear::seeded(&mut rng, d, spec.mlp_hidden, 1.0),
                    down: Linear::seeded(&mut rng, spec.mlp_hidden, d, 0.5),
                };
                (a, m)
            })
            .collect();
        let temporal = attn_block(&mut rng, d);
        let unembed = Linear::seeded(&mut rng, d, spec.channels * p2, 1.0);
        Ok(Self {
            spec,
            embed,
            cond,
            noise,
            spatial,
            temporal,
            unembed,
        })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    fn token_grid(&self, dims: Dims) -> Result<TokenGrid> {
        let p = self.spec.patch;
        if dims.channels != self.spec.channels {
            return Err(Error::dim(format!(
                "network expects {} channels, got {}",
                self.spec.channels, dims.channels
            )));
        }
        if !dims.height.is_multiple_of(p) || !dims.width.is_multiple_of(p) {
            return Err(Error::dim(format!(
                "{}x{} is not divisible by patch size {p}",
                dims.height, dims.width
            )));
        }
        Ok(TokenGrid {
            frames: dims.frames,
            height: dims.height / p,
            width: dims.width / p,
        })
    }

    /// Patch vectors of frame `n` from the scaled noisy input and the clean
    /// conditioning latent.
    fn patchify(&self, x: &VideoTensor, l: Option<&VideoTensor>, scale: f64, n: usize, g: TokenGrid) -> Matrix {
        let p = self.spec.patch;
        let c = self.spec.channels;
        let mut m = Matrix::zeros(g.height * g.width, 2 * c * p * p);
        for ty in 0..g.height {
            for tx in 0..g.width {
                let row = m.row_mut(ty * g.width + tx);
                let mut k = 0;
                for src in 0..2 {
                    for ch in 0..c {
                        for dy in 0..p {
                            for dx in 0..p {
                                let (y, xx) = (ty * p + dy, tx * p + dx);
                                row[k] = match (src, l) {
                                    (0, _) => (x.get(n, ch, y, xx) as f64 * scale) as f32,
                                    (_, Some(l)) => l.get(n, ch, y, xx),
                                    (_, None) => 0.0,
                                };
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        m
    }

    fn positional(&self, g: TokenGrid) -> Matrix {
        let d = self.spec.embed;
        let mut m = Matrix::zeros(g.height * g.width, d);
        for ty in 0..g.height {
            for tx in 0..g.width {
                let row = m.row_mut(ty * g.width + tx);
                for (j, v) in row.iter_mut().enumerate() {
                    let pos = if j % 2 == 0 { ty } else { tx } as f64;
                    let freq = 1.0 / (1.0 + (j / 2) as f64);
                    let phase = pos * freq;
                    *v = (0.1 * if j % 4 < 2 { phase.sin() } else { phase.cos() }) as f32;
                }
            }
        }
        m
    }

    fn forward(&self, req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
        let x = req.noisy;
        let dims = x.dims();
        let g = self.token_grid(dims)?;
        if let Some(l) = req.lr_latent {
            x.ensure_same_dims(l)?;
        }
        if !(req.sigma > 0.0 && req.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", req.sigma)));
        }
        if !req.cond.is_empty() && req.cond.len() != COND_DIM {
            return Err(Error::dim(format!(
                "conditioning vector has length {}, expected {COND_DIM}",
                req.cond.len()
            )));
        }
        let hooks = req.hooks;
        if let Some((&bad, _)) = hooks.layers.range(self.spec.spatial_layers..).next() {
            return Err(Error::Hook(format!(
                "layer {bad} does not exist ({} spatial layers)",
                self.spec.spatial_layers
            )));
        }

        let pre = precondition(req.sigma, self.spec.sigma_data);
        let cond: Vec<f32> = if req.cond.is_empty() {
            vec![0.0; COND_DIM]
        } else {
            req.cond.to_vec()
        };
        let nc = pre.c_noise;
        let mut bias = self.noise.apply(&[nc as f32, nc.sin() as f32, nc.cos() as f32, nc.tanh() as f32]);
        for (b, c) in bias.iter_mut().zip(self.cond.apply(&cond)) {
            *b += c;
        }
        let pos = self.positional(g);
        let tokens = g.height * g.width;

        let mut h: Vec<Matrix> = (0..dims.frames)
            .map(|n| {
                let mut e = self.embed.apply_rows(&self.patchify(x, req.lr_latent, pre.c_in, n, g));
                add_assign(&mut e, &pos);
                for i in 0..tokens {
                    for (v, &b) in e.row_mut(i).iter_mut().zip(&bias) {
                        *v += b;
                    }
                }
                e
            })
            .collect();

        let mut captured = Vec::new();
        let mut received = vec![0.0f64; dims.frames * tokens];
        let temporal_after = self.spec.spatial_layers / 2 - 1;

        for (layer, (attn, mlp)) in self.spatial.iter().enumerate() {
            let hook = hooks.layers.get(&layer);
            let normed: Vec<Matrix> = h.iter().map(layer_norm).collect();
            let q: Vec<Matrix> = normed.iter().map(|m| attn.q.apply_rows(m)).collect();
            let k: Vec<Matrix> = normed.iter().map(|m| attn.k.apply_rows(m)).collect();
            let v: Vec<Matrix> = normed.iter().map(|m| attn.v.apply_rows(m)).collect();
            let out = self.spatial_attention(layer, hook, &q, &k, &v, hooks.attention_map.then_some(&mut received))?;
            if hooks.capture && hook.is_some() {
                captured.push(CapturedKv {
                    layer,
                    grid: TokenGrid {
                        frames: dims.frames,
                        ..g
                    },
                    keys: k,
                    values: v,
                });
            }
            for (hf, of) in h.iter_mut().zip(&out) {
                add_assign(hf, &attn.o.apply_rows(of));
            }
            for hf in h.iter_mut() {
                let up = mlp.up.apply_rows(&layer_norm(hf));
                let mut act = up.clone();
                for i in 0..act.rows() {
                    for a in act.row_mut(i) {
                        *a = a.tanh();
                    }
                }
                add_assign(hf, &mlp.down.apply_rows(&act));
            }
            if layer == temporal_after {
                self.temporal_mix(&mut h, tokens)?;
            }
        }

        let p = self.spec.patch;
        let c = self.spec.channels;
        let mut denoised = x.clone();
        for (n, hf) in h.iter().enumerate() {
            let f = self.unembed.apply_rows(&layer_norm(hf));
            for ty in 0..g.height {
                for tx in 0..g.width {
                    let row = f.row(ty * g.width + tx);
                    let mut k = 0;
                    for ch in 0..c {
                        for dy in 0..p {
                            for dx in 0..p {
                                let (y, xx) = (ty * p + dy, tx * p + dx);
                                let xv = x.get(n, ch, y, xx) as f64;
                                let v = pre.c_skip * xv + pre.c_out * row[k] as f64;
                                denoised.set(n, ch, y, xx, v as f32);
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        if !denoised.is_finite() {
            return Err(Error::NonFinite(format!("toy network output at sigma={}", req.sigma)));
        }

        let attention_map = if hooks.attention_map {
            let layers = self.spec.spatial_layers as f64;
            let data = received.iter().map(|&r| (r / layers) as f32).collect();
            Some(VideoTensor::new(
                Dims::new(dims.frames, 1, g.height, g.width),
                data,
            )?)
        } else {
            None
        };
        Ok(DenoiseOutput {
            denoised,
            attention_map,
            captured,
        })
    }

    /// One spatial attention layer over every frame. `received` accumulates
    /// the mean weight each own token receives.
    fn spatial_attention(
        &self,
        layer: usize,
        hook: Option<&LayerHook>,
        q: &[Matrix],
        k: &[Matrix],
        v: &[Matrix],
        mut received: Option<&mut Vec<f64>>,
    ) -> Result<Vec<Matrix>> {
        let kernel = hook.map_or(AttentionKernel::Vanilla, |h| h.kernel);
        let injection = hook.and_then(|h| h.injection.as_deref());
        let frames = q.len();
        let inj_for = |f: usize| -> Result<Option<&crate::attention::InjectedKv>> {
            match injection {
                None => Ok(None),
                Some(i) => match i.for_frame(f) {
                    Some(kv) => Ok(Some(kv)),
                    None => Err(Error::Hook(format!(
                        "layer {layer}: no injected keys for frame {f}"
                    ))),
                },
            }
        };

        // The γ-tempering maxima are taken over the whole tile, injected keys
        // included.
        let temperature = match kernel {
            AttentionKernel::Tempered(p) => {
                let q_max = q.iter().map(Matrix::max_abs).fold(0.0, f32::max);
                let mut k_max = k.iter().map(Matrix::max_abs).fold(0.0, f32::max);
                for f in 0..frames {
                    if let Some(kv) = inj_for(f)? {
                        k_max = k_max.max(kv.keys.max_abs());
                    }
                }
                p.temperature(q_max, k_max)
            }
            _ => 1.0,
        };

        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let a = AttentionTensors::new(q[f].clone(), k[f].clone(), v[f].clone())
                .map_err(|e| Error::Hook(format!("layer {layer}: {e}")))?;
            let own = a.k.rows();
            let (o, probs) = match kernel {
                AttentionKernel::Identity => {
                    let probs = (0..own)
                        .map(|i| (0..own).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect();
                    (a.v.clone(), probs)
                }
                _ => match inj_for(f)? {
                    Some(kv) => {
                        let (ke, ve) = extend(&a, kv)?;
                        attend_with_probs(&a.q, &ke, &ve, temperature)
                    }
                    None => attend_with_probs(&a.q, &a.k, &a.v, temperature),
                },
            };
            if let Some(r) = received.as_deref_mut() {
                let rows = probs.len() as f64;
                for p in &probs {
                    for (j, &w) in p.iter().take(own).enumerate() {
                        r[f * own + j] += w / rows;
                    }
                }
            }
            out.push(o);
        }
        Ok(out)
    }

    /// Attention across frames at every token position.
    fn temporal_mix(&self, h: &mut [Matrix], tokens: usize) -> Result<()> {
        let frames = h.len();
        let d = self.spec.embed;
        let normed: Vec<Matrix> = h.iter().map(layer_norm).collect();
        for t in 0..tokens {
            let mut seq = Matrix::zeros(frames, d);
            for (f, m) in normed.iter().enumerate() {
                seq.row_mut(f).copy_from_slice(m.row(t));
            }
            let a = &self.temporal;
            let (q, k, v) = (a.q.apply_rows(&seq), a.k.apply_rows(&seq), a.v.apply_rows(&seq));
            let (o, _) = attend_with_probs(&q, &k, &v, 1.0);
            let o = a.o.apply_rows(&o);
            for (f, hf) in h.iter_mut().enumerate() {
                for (x, &y) in hf.row_mut(t).iter_mut().zip(o.row(f)) {
                    *x += y;
                }
            }
        }
        Ok(())
    }
}

impl Denoiser for ToyAttentionDenoiser {
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
        self.forward(req)
    }

    /// The first two and last two spatial attention layers.
    fn hooked_layers(&self) -> Vec<usize> {
        let l = self.spec.spatial_layers;
        let mut v = vec![0, 1, l - 2, l - 1];
        v.dedup();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{InjectedKv, KvSource, SuppressionParam};
    use crate::denoiser::{AttentionHooks, LayerInjection};
    use std::sync::Arc;

    fn net() -> ToyAttentionDenoiser {
        ToyAttentionDenoiser::new(DenoiserSpec {
            channels: 2,
            ..DenoiserSpec::default()
        })
        .unwrap()
    }

    fn input() -> (VideoTensor, VideoTensor) {
        let d = Dims::new(3, 2, 8, 12);
        (VideoTensor::gaussian(d, 11, 1.5), VideoTensor::gaussian(d, 12, 0.5))
    }

    fn run(net: &ToyAttentionDenoiser, hooks: &AttentionHooks) -> Result<DenoiseOutput> {
        let (x, l) = input();
        let cond = [0.1, -0.2, 0.3, 0.0, 0.5, 0.2, -0.1, 0.4];
        net.denoise(&DenoiseRequest {
            noisy: &x,
            lr_latent: Some(&l),
            cond: &cond,
            sigma: 1.3,
            hooks,
        })
    }

    fn all_layers(kernel: AttentionKernel, injection: Option<Arc<LayerInjection>>) -> AttentionHooks {
        let mut h = AttentionHooks::none();
        for l in 0..4 {
            h.layers.insert(
                l,
                LayerHook {
                    kernel,
                    injection: injection.clone(),
                },
            );
        }
        h
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let a = run(&net(), &AttentionHooks::none()).unwrap();
        let b = run(&net(), &AttentionHooks::none()).unwrap();
        assert_eq!(a.denoised, b.denoised);
        assert_eq!(a.denoised.dims(), input().0.dims());
        let other = ToyAttentionDenoiser::new(DenoiserSpec {
            seed: 1,
            channels: 2,
            ..DenoiserSpec::default()
        })
        .unwrap();
        assert_ne!(run(&other, &AttentionHooks::none()).unwrap().denoised, a.denoised);
    }

    #[test]
    fn zero_effect_hooks_are_bit_exact() {
        let n = net();
        let base = run(&n, &AttentionHooks::none()).unwrap().denoised;
        let empty = Arc::new(LayerInjection::Shared(InjectedKv::empty(32, 32, KvSource::SapGlobal)));
        let h = all_layers(AttentionKernel::Vanilla, Some(empty));
        assert_eq!(run(&n, &h).unwrap().denoised, base);
        let h = all_layers(AttentionKernel::Tempered(SuppressionParam::new(0.0).unwrap()), None);
        assert_eq!(run(&n, &h).unwrap().denoised, base);
        let mut cap = AttentionHooks::none();
        cap.capture = true;
        cap.attention_map = true;
        assert_eq!(run(&n, &cap).unwrap().denoised, base);
    }

    #[test]
    fn hooks_change_the_output() {
        let n = net();
        let base = run(&n, &AttentionHooks::none()).unwrap().denoised;
        let strong = all_layers(AttentionKernel::Tempered(SuppressionParam::new(3.0).unwrap()), None);
        assert!(run(&n, &strong).unwrap().denoised.max_abs_diff(&base) > 1e-4);
        let ident = all_layers(AttentionKernel::Identity, None);
        assert!(run(&n, &ident).unwrap().denoised.max_abs_diff(&base) > 1e-4);
    }

    #[test]
    fn nonexistent_layer_is_rejected() {
        let mut h = AttentionHooks::none();
        h.layers.insert(4, LayerHook::default());
        assert!(matches!(run(&net(), &h), Err(Error::Hook(_))));
        assert_eq!(net().hooked_layers(), vec![0, 1, 2, 3]);
        let six = ToyAttentionDenoiser::new(DenoiserSpec {
            spatial_layers: 6,
            ..DenoiserSpec::default()
        })
        .unwrap();
        assert_eq!(six.hooked_layers(), vec![0, 1, 4, 5]);
        assert!(ToyAttentionDenoiser::new(DenoiserSpec {
            spatial_layers: 3,
            ..DenoiserSpec::default()
        })
        .is_err());
    }

    #[test]
    fn capture_and_attention_map_layout() {
        let n = net();
        let mut h = all_layers(AttentionKernel::Vanilla, None);
        h.capture = true;
        h.attention_map = true;
        let out = run(&n, &h).unwrap();
        assert_eq!(out.captured.len(), 4);
        let c = &out.captured[0];
        assert_eq!(c.keys.len(), 3);
        assert_eq!((c.grid.height, c.grid.width), (2, 3));
        assert_eq!(c.keys[0].rows(), 6);
        let map = out.attention_map.unwrap();
        assert_eq!(map.dims(), Dims::new(3, 1, 2, 3));
        // Each query row sums to one over own tokens, so per frame the mean
        // received weight sums to one.
        for f in 0..3 {
            let s: f64 = map.frame(f).iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn frame_reversal_commutes() {
        let n = net();
        let (x, l) = input();
        let hooks = AttentionHooks::none();
        let cond = [0.0; COND_DIM];
        let fwd = n
            .denoise(&DenoiseRequest {
                noisy: &x,
                lr_latent: Some(&l),
                cond: &cond,
                sigma: 0.7,
                hooks: &hooks,
            })
            .unwrap()
            .denoised;
        let (xr, lr) = (x.reversed_frames(), l.reversed_frames());
        let rev = n
            .denoise(&DenoiseRequest {
                noisy: &xr,
                lr_latent: Some(&lr),
                cond: &cond,
                sigma: 0.7,
                hooks: &hooks,
            })
            .unwrap()
            .denoised;
        assert!(rev.reversed_frames().max_abs_diff(&fwd) < 1e-5);
    }

    #[test]
    fn bounded_inputs_stay_finite() {
        let n = net();
        let d = Dims::new(2, 2, 8, 8);
        let hooks = AttentionHooks::none();
        for (seed, sigma) in [(1, 0.002), (2, 1.0), (3, 700.0)] {
            let x = VideoTensor::gaussian(d, seed, 1.0).map(|v| (v * 10.0).clamp(-10.0, 10.0));
            let out = n
                .denoise(&DenoiseRequest {
                    noisy: &x,
                    lr_latent: None,
                    cond: &[],
                    sigma,
                    hooks: &hooks,
                })
                .unwrap();
            assert!(out.denoised.is_finite());
            assert!(out.denoised.as_slice().iter().all(|v| v.abs() < 1e3));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let n = net();
        let hooks = AttentionHooks::none();
        let x = VideoTensor::zeros(Dims::new(1, 2, 6, 8));
        let req = DenoiseRequest {
            noisy: &x,
            lr_latent: None,
            cond: &[],
            sigma: 1.0,
            hooks: &hooks,
        };
        assert!(n.denoise(&req).is_err());
    }
}
