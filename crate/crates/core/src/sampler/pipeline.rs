//! The tiled sampling loop: SAP and TAP alternate across steps, guidance is
//! applied per tile in ε space, and the ε tiles are blended before one ODE
//! step on the whole latent.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::attention::{
    aggregate_frame_kv, select_tap_frames, subsample_spatial_kv, InjectedKv, KvSource, Matrix,
    TokenGrid,
};
use crate::degrade::resize_bicubic;
use crate::denoiser::{
    AttentionHooks, AttentionKernel, CapturedKv, DenoiseRequest, Denoiser, LayerHook,
    LayerInjection, PassKind, COND_DIM,
};
use crate::error::{Error, Result};
use crate::grid::{deinterleave, gaussian_mask, interleave, merge, plan_tiles, split, Extent, Tile};
use crate::guidance::{gamma_schedule, guided_eps, BranchRequest, EpsEstimate, EpsModel, GuidanceConfig, GuidanceMode};
use crate::sampler::schedule::{build_sigma_schedule, ode_step_eps, SigmaSchedule};
use crate::tensor::{Dims, VideoTensor};
use crate::toy::ToyCodec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Sap,
    Tap,
    /// The scheme due this step is disabled.
    Plain,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Sap => "sap",
            Scheme::Tap => "tap",
            Scheme::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapDirection {
    Forward,
    Backward,
}

impl fmt::Display for TapDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TapDirection::Forward => "forward",
            TapDirection::Backward => "backward",
        })
    }
}

/// One line of the step trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub scheme: Scheme,
    pub direction: Option<TapDirection>,
    pub guidance: GuidanceMode,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} sigma={:.6} gamma={:.6} scheme={} direction={} guidance={}",
            self.step,
            self.sigma,
            self.gamma,
            self.scheme,
            self.direction.map_or_else(|| "-".to_string(), |d| d.to_string()),
            self.guidance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub schedule_exponent: f64,
    /// Latent tile extent.
    pub tile: Extent,
    pub blend_sigma_fraction: f64,
    pub sap_enabled: bool,
    pub sap_rate: usize,
    pub tap_enabled: bool,
    /// Frames taken from each neighbouring tile.
    pub tap_frames: usize,
    /// How many neighbouring temporal tiles feed TAP.
    pub tap_range: usize,
    /// SAP on even steps when true, on odd steps otherwise.
    pub sap_first: bool,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    /// Denoise independent tiles on the rayon pool. Results are identical
    /// either way.
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            sigma_min: 0.002,
            sigma_max: 700.0,
            schedule_exponent: 7.0,
            tile: Extent {
                frames: 14,
                height: 64,
                width: 64,
            },
            blend_sigma_fraction: 0.25,
            sap_enabled: true,
            sap_rate: 2,
            tap_enabled: true,
            tap_frames: 4,
            tap_range: 1,
            sap_first: true,
            guidance: GuidanceConfig::default(),
            seed: 0,
            parallel: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if self.sap_rate == 0 {
            return Err(Error::invalid("sap_rate must be >= 1"));
        }
        if self.tap_range == 0 {
            return Err(Error::invalid("tap_range must be >= 1"));
        }
        if self.tap_frames == 0 || (self.tap_enabled && self.tap_frames > self.tile.frames) {
            return Err(Error::invalid(format!(
                "tap_frames must lie in 1..={}, got {}",
                self.tile.frames, self.tap_frames
            )));
        }
        if !(self.blend_sigma_fraction > 0.0) {
            return Err(Error::invalid("blend_sigma_fraction must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<SigmaSchedule> {
        build_sigma_schedule(self.steps, self.sigma_min, self.sigma_max, self.schedule_exponent)
    }

    /// Scheme and TAP direction of every step, in order.
    pub fn plan_schemes(&self) -> Vec<(Scheme, Option<TapDirection>)> {
        let mut tap_steps = 0;
        (0..self.steps)
            .map(|i| {
                let sap_turn = (i % 2 == 0) == self.sap_first;
                if sap_turn {
                    (if self.sap_enabled { Scheme::Sap } else { Scheme::Plain }, None)
                } else {
                    let dir = if tap_steps % 2 == 0 {
                        TapDirection::Forward
                    } else {
                        TapDirection::Backward
                    };
                    tap_steps += 1;
                    if self.tap_enabled {
                        (Scheme::Tap, Some(dir))
                    } else {
                        (Scheme::Plain, None)
                    }
                }
            })
            .collect()
    }
}

/// Noisy and conditioning latents of one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileInput {
    pub x: VideoTensor,
    pub lr: VideoTensor,
}

/// Everything a tile pass needs besides the tiles.
pub struct PassContext<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub sigma: f64,
    pub gamma: f64,
    pub cond: &'a [f32],
    pub config: &'a PipelineConfig,
}

type Injections = BTreeMap<usize, Arc<LayerInjection>>;

/// Adapts a denoiser on one tile to the guidance [`EpsModel`] interface.
struct TileModel<'a> {
    ctx: &'a PassContext<'a>,
    lr: &'a VideoTensor,
    layers: Vec<usize>,
    injections: &'a Injections,
    capture: bool,
    captured: RefCell<Vec<CapturedKv>>,
}

impl<'a> TileModel<'a> {
    fn new(ctx: &'a PassContext<'a>, lr: &'a VideoTensor, injections: &'a Injections, capture: bool) -> Self {
        Self {
            ctx,
            lr,
            layers: ctx.denoiser.hooked_layers(),
            injections,
            capture,
            captured: RefCell::new(Vec::new()),
        }
    }
}

impl EpsModel for TileModel<'_> {
    fn eps(&self, x: &VideoTensor, req: &BranchRequest) -> Result<EpsEstimate> {
        if self.layers.is_empty() && req.kernel != AttentionKernel::Vanilla {
            return Err(Error::Hook(
                "guidance needs attention layers but the denoiser exposes none".into(),
            ));
        }
        let mut hooks = AttentionHooks {
            capture: self.capture && req.target,
            attention_map: req.attention_map,
            pass: PassKind::Branch,
            ..AttentionHooks::none()
        };
        for &l in &self.layers {
            hooks.layers.insert(
                l,
                LayerHook {
                    kernel: req.kernel,
                    injection: self.injections.get(&l).cloned(),
                },
            );
        }
        let null;
        let cond = if req.conditional {
            self.ctx.cond
        } else {
            null = vec![0.0; self.ctx.cond.len()];
            &null
        };
        let out = self.ctx.denoiser.denoise(&DenoiseRequest {
            noisy: x,
            lr_latent: Some(self.lr),
            cond,
            sigma: self.ctx.sigma,
            hooks: &hooks,
        })?;
        if hooks.capture {
            *self.captured.borrow_mut() = out.captured;
        }
        let sigma = self.ctx.sigma;
        let eps = x.zip_map(&out.denoised, |xv, d| ((xv as f64 - d as f64) / sigma) as f32)?;
        Ok(EpsEstimate {
            eps,
            attention_map: out.attention_map,
        })
    }
}

fn guided_tile(ctx: &PassContext<'_>, tile: &TileInput, injections: &Injections, capture: bool) -> Result<(VideoTensor, Vec<CapturedKv>)> {
    let model = TileModel::new(ctx, &tile.lr, injections, capture);
    let eps = guided_eps(&model, &tile.x, ctx.sigma, ctx.gamma, &ctx.config.guidance)?;
    Ok((eps, model.captured.into_inner()))
}

fn map_tiles<T: Sync, R: Send>(parallel: bool, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    if parallel {
        items.par_iter().map(&f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn require_layers(den: &dyn Denoiser, what: &str) -> Result<Vec<usize>> {
    let layers = den.hooked_layers();
    if layers.is_empty() {
        return Err(Error::Hook(format!(
            "{what} needs spatial attention layers but the denoiser exposes none"
        )));
    }
    Ok(layers)
}

fn captured_for(captured: &[CapturedKv], layer: usize) -> Result<&CapturedKv> {
    captured
        .iter()
        .find(|c| c.layer == layer)
        .ok_or_else(|| Error::Hook(format!("no keys/values captured at layer {layer}")))
}

/// Every tile independently, no injection.
pub fn denoise_pass_plain(tiles: &[TileInput], ctx: &PassContext<'_>) -> Result<Vec<VideoTensor>> {
    let none = Injections::new();
    map_tiles(ctx.config.parallel, tiles, |t| Ok(guided_tile(ctx, t, &none, false)?.0))
}

/// Spatial attention propagation over the tiles of one temporal index,
/// ordered by `m`.
///
/// A gather pass records every tile's hooked-layer keys/values; per frame
/// these are subsampled on a stride-`sap_rate` lattice and concatenated over
/// `m`. Each tile is then denoised with that frame aggregate appended at
/// every hooked layer.
pub fn denoise_pass_sap(tiles: &[TileInput], ctx: &PassContext<'_>) -> Result<Vec<VideoTensor>> {
    let layers = require_layers(ctx.denoiser, "SAP")?;
    let cfg = ctx.config;
    let gather_cond = target_conditional(cfg.guidance.mode);
    let null = vec![0.0; ctx.cond.len()];
    let cond: &[f32] = if gather_cond { ctx.cond } else { &null };

    let mut gather_hooks = AttentionHooks {
        capture: true,
        pass: PassKind::Gather,
        ..AttentionHooks::none()
    };
    for &l in &layers {
        gather_hooks.layers.insert(l, LayerHook::default());
    }
    let captured: Vec<Vec<CapturedKv>> = map_tiles(cfg.parallel, tiles, |t| {
        Ok(ctx
            .denoiser
            .denoise(&DenoiseRequest {
                noisy: &t.x,
                lr_latent: Some(&t.lr),
                cond,
                sigma: ctx.sigma,
                hooks: &gather_hooks,
            })?
            .captured)
    })?;

    let mut injections = Injections::new();
    for &l in &layers {
        let per_tile: Vec<&CapturedKv> = captured
            .iter()
            .map(|c| captured_for(c, l))
            .collect::<Result<_>>()?;
        let frames = per_tile[0].keys.len();
        let grid = per_tile[0].grid;
        let frame_grid = TokenGrid { frames: 1, ..grid };
        let mut per_frame = Vec::with_capacity(frames);
        for f in 0..frames {
            let subs: Vec<InjectedKv> = per_tile
                .iter()
                .map(|c| subsample_spatial_kv(&c.keys[f], &c.values[f], cfg.sap_rate, frame_grid))
                .collect::<Result<_>>()?;
            per_frame.push(aggregate_frame_kv(&subs)?);
        }
        injections.insert(l, Arc::new(LayerInjection::PerFrame(per_frame)));
    }
    map_tiles(cfg.parallel, tiles, |t| Ok(guided_tile(ctx, t, &injections, false)?.0))
}

/// Whether the guidance rule's target branch is conditional.
fn target_conditional(mode: GuidanceMode) -> bool {
    mode != GuidanceMode::Dssag
}

/// Keys/values of the `count` highest-variance frames of one neighbour, per
/// hooked layer.
fn tap_selection(neighbour: &[CapturedKv], layer: usize, count: usize) -> Result<(Matrix, Matrix)> {
    let c = captured_for(neighbour, layer)?;
    let chosen = select_tap_frames(&c.keys, count)?;
    let d = c.keys[0].cols();
    let dv = c.values[0].cols();
    Ok((
        Matrix::vstack(d, chosen.iter().map(|&f| &c.keys[f]))?,
        Matrix::vstack(dv, chosen.iter().map(|&f| &c.values[f]))?,
    ))
}

/// Temporal attention propagation along the tiles of one spatial index,
/// ordered by `n`.
///
/// Tiles run sequentially in `direction`. Each tile records its own
/// hooked-layer keys/values on its target branch; the next tile receives the
/// `tap_frames` highest-variance frames from each of its `tap_range` already
/// processed neighbours.
pub fn denoise_pass_tap(tiles: &[TileInput], ctx: &PassContext<'_>, direction: TapDirection) -> Result<Vec<VideoTensor>> {
    let layers = require_layers(ctx.denoiser, "TAP")?;
    let cfg = ctx.config;
    let source = match direction {
        TapDirection::Forward => KvSource::TapForward,
        TapDirection::Backward => KvSource::TapBackward,
    };
    let order: Vec<usize> = match direction {
        TapDirection::Forward => (0..tiles.len()).collect(),
        TapDirection::Backward => (0..tiles.len()).rev().collect(),
    };
    let mut out: Vec<Option<VideoTensor>> = vec![None; tiles.len()];
    // Captures of processed tiles, most recent first.
    let mut history: Vec<Vec<CapturedKv>> = Vec::new();
    for &n in &order {
        let mut injections = Injections::new();
        let neighbours = &history[..history.len().min(cfg.tap_range)];
        if !neighbours.is_empty() {
            for &l in &layers {
                let picks: Vec<(Matrix, Matrix)> = neighbours
                    .iter()
                    .map(|c| tap_selection(c, l, cfg.tap_frames))
                    .collect::<Result<_>>()?;
                let d = picks[0].0.cols();
                let dv = picks[0].1.cols();
                let keys = Matrix::vstack(d, picks.iter().map(|p| &p.0))?;
                let values = Matrix::vstack(dv, picks.iter().map(|p| &p.1))?;
                injections.insert(
                    l,
                    Arc::new(LayerInjection::Shared(InjectedKv::new(keys, values, source)?)),
                );
            }
        }
        let (eps, captured) = guided_tile(ctx, &tiles[n], &injections, true)?;
        if captured.is_empty() {
            return Err(Error::Hook("target branch captured no keys/values".into()));
        }
        history.insert(0, captured);
        history.truncate(cfg.tap_range);
        out[n] = Some(eps);
    }
    Ok(out.into_iter().map(|e| e.expect("every tile visited")).collect())
}

/// Per-step record plus the final latent.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub latent: VideoTensor,
    pub trace: Vec<StepRecord>,
}

/// Seeded Gaussian initial state at `σ_max`.
pub fn initial_noise(dims: Dims, seed: u64, sigma_max: f64) -> VideoTensor {
    VideoTensor::gaussian(dims, seed, 1.0).map(|v| (v as f64 * sigma_max) as f32)
}

/// Placeholder conditioning: per-channel mean and standard deviation of the
/// first frame, padded with fixed motion and frame-rate slots.
pub fn conditioning_vector(video: &VideoTensor) -> Vec<f32> {
    let d = video.dims();
    let mut stats = Vec::new();
    for c in 0..d.channels {
        let p = video.plane(0, c);
        let n = p.len() as f64;
        let mean = p.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        stats.push((mean as f32, var.sqrt() as f32));
    }
    let mut cond = vec![0.0f32; COND_DIM];
    let slots = COND_DIM - 2;
    for (i, (m, s)) in stats.iter().take(slots / 2).enumerate() {
        cond[i] = *m;
        cond[slots / 2 + i] = *s;
    }
    cond[COND_DIM - 2] = 0.5; // motion
    cond[COND_DIM - 1] = 0.25; // frame rate
    cond
}

fn step_state_check(x: &VideoTensor, step: usize, sigma: f64) -> Result<()> {
    if x.is_finite() {
        return Ok(());
    }
    let bad = x.as_slice().iter().position(|v| !v.is_finite()).unwrap_or(0);
    Err(Error::Numeric {
        step,
        sigma,
        detail: format!("non-finite latent at flat index {bad} (dims {})", x.dims()),
    })
}

/// Runs the tiled sampler from `x_init` (noise at `σ_max`) with conditioning
/// latent `lr`.
pub fn sample_latent(
    denoiser: &dyn Denoiser,
    x_init: &VideoTensor,
    lr: &VideoTensor,
    cond: &[f32],
    config: &PipelineConfig,
) -> Result<SampleOutput> {
    config.validate()?;
    x_init.ensure_same_dims(lr)?;
    let schedule = config.schedule()?;
    let grid = plan_tiles(Extent::of(x_init.dims()), config.tile)?;
    let mask = gaussian_mask(config.tile, config.blend_sigma_fraction)?;
    let schemes = config.plan_schemes();
    let m_count = grid.spatial_count();
    let n_count = grid.temporal_count();

    let mut x = x_init.clone();
    let mut trace = Vec::with_capacity(config.steps);
    for (step, w) in schedule.sigmas.windows(2).enumerate() {
        let (sigma, sigma_next) = (w[0], w[1]);
        let gamma = gamma_schedule(sigma, config.sigma_max, config.sigma_min, config.guidance.rho)?;
        let (scheme, direction) = schemes[step];

        let stacked = interleave(&x, lr)?.group_frames_into_channels(2)?;
        let inputs: Vec<TileInput> = split(&stacked, &grid)?
            .into_iter()
            .map(|t| {
                let (x, lr) = deinterleave(&t.payload.split_channels_into_frames(2)?)?;
                Ok(TileInput { x, lr })
            })
            .collect::<Result<_>>()?;
        // `inputs` is in (n, m) order.
        let ctx = PassContext {
            denoiser,
            sigma,
            gamma,
            cond,
            config,
        };
        let eps: Vec<VideoTensor> = match scheme {
            Scheme::Plain => denoise_pass_plain(&inputs, &ctx)?,
            Scheme::Sap => {
                let rows: Vec<Vec<VideoTensor>> = (0..n_count)
                    .map(|n| denoise_pass_sap(&inputs[n * m_count..(n + 1) * m_count], &ctx))
                    .collect::<Result<_>>()?;
                rows.into_iter().flatten().collect()
            }
            Scheme::Tap => {
                let dir = direction.expect("TAP steps carry a direction");
                let columns: Vec<usize> = (0..m_count).collect();
                let per_m: Vec<Vec<VideoTensor>> = map_tiles(config.parallel, &columns, |&m| {
                    let column: Vec<TileInput> =
                        (0..n_count).map(|n| inputs[n * m_count + m].clone()).collect();
                    denoise_pass_tap(&column, &ctx, dir)
                })?;
                let mut flat = Vec::with_capacity(grid.len());
                for n in 0..n_count {
                    for col in &per_m {
                        flat.push(col[n].clone());
                    }
                }
                flat
            }
        };
        let tiles: Vec<Tile> = grid
            .indices()
            .zip(eps)
            .map(|(idx, payload)| Tile {
                m: idx.m,
                n: idx.n,
                payload,
            })
            .collect();
        let eps = merge(&tiles, &grid, &mask)?;
        x = ode_step_eps(&x, &eps, sigma, sigma_next)?;
        step_state_check(&x, step, sigma)?;
        trace.push(StepRecord {
            step,
            sigma,
            gamma,
            scheme,
            direction,
            guidance: config.guidance.mode,
        });
    }
    Ok(SampleOutput { latent: x, trace })
}

/// Untiled reference: guidance on the whole latent, no propagation.
pub fn sample_latent_untiled(
    denoiser: &dyn Denoiser,
    x_init: &VideoTensor,
    lr: &VideoTensor,
    cond: &[f32],
    config: &PipelineConfig,
) -> Result<VideoTensor> {
    config.validate()?;
    x_init.ensure_same_dims(lr)?;
    let schedule = config.schedule()?;
    let none = Injections::new();
    let mut x = x_init.clone();
    for (step, w) in schedule.sigmas.windows(2).enumerate() {
        let (sigma, sigma_next) = (w[0], w[1]);
        let gamma = gamma_schedule(sigma, config.sigma_max, config.sigma_min, config.guidance.rho)?;
        let ctx = PassContext {
            denoiser,
            sigma,
            gamma,
            cond,
            config,
        };
        let tile = TileInput {
            x: x.clone(),
            lr: lr.clone(),
        };
        let (eps, _) = guided_tile(&ctx, &tile, &none, false)?;
        x = ode_step_eps(&x, &eps, sigma, sigma_next)?;
        step_state_check(&x, step, sigma)?;
    }
    Ok(x)
}

/// Result of [`dc_vsr_sample`].
#[derive(Debug, Clone)]
pub struct VsrOutput {
    pub video: VideoTensor,
    pub trace: Vec<StepRecord>,
}

/// Full super-resolution: bicubic upsample by `factor`, encode, sample in
/// latent space, decode.
pub fn dc_vsr_sample(
    lr_video: &VideoTensor,
    factor: usize,
    denoiser: &dyn Denoiser,
    codec: &ToyCodec,
    config: &PipelineConfig,
) -> Result<VsrOutput> {
    if factor == 0 {
        return Err(Error::invalid("upscale factor must be >= 1"));
    }
    let d = lr_video.dims();
    let up = resize_bicubic(lr_video, d.height * factor, d.width * factor)?;
    let latent = codec.encode(&up)?;
    let cond = conditioning_vector(&up);
    let x0 = initial_noise(latent.dims(), config.seed, config.sigma_max);
    let out = sample_latent(denoiser, &x0, &latent, &cond, config)?;
    Ok(VsrOutput {
        video: codec.decode(&out.latent)?,
        trace: out.trace,
    })
}
