//! `dcvsr` command-line tool: upscale, degrade, metrics, ablate, fixture.
//!
//! Exit codes: 0 success, 2 usage/configuration/input errors, 3 numeric
//! failure during sampling.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dcvsr_core::degrade::degrade;
use dcvsr_core::denoiser::CountingDenoiser;
use dcvsr_core::filter::gaussian_blur;
use dcvsr_core::grid::{plan_tiles, Extent};
use dcvsr_core::guidance::GuidanceMode;
use dcvsr_core::io::{read_container, read_frames, write_atomic, write_container, write_frames, Container};
use dcvsr_core::metrics::{default_flow, mean_abs_frame_diff, psnr, ssim, tlp, tof, warping_error};
use dcvsr_core::sampler::{dc_vsr_sample, StepRecord};
use dcvsr_core::toy::{ToyAttentionDenoiser, ToyCodec};
use dcvsr_core::{Dims, Error, Result, VideoTensor};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dcvsr", version, about = "Tiled diffusion video super-resolution with toy models")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of `--config`.
#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Latent tile as HxWxF.
    #[arg(long, global = true, value_name = "HxWxF")]
    pub tile: Option<String>,
    #[arg(long, global = true, value_name = "MODE")]
    pub guidance: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub scale: Option<f64>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub sap_rate: Option<usize>,
    #[arg(long, global = true)]
    pub tap_l: Option<usize>,
    /// Step-trace log destination.
    #[arg(long, global = true, value_name = "PATH")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Super-resolve a frame directory or tensor container.
    Upscale {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Blur, downscale, add noise and quantize.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare a restored video against ground truth.
    Metrics {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        restored: PathBuf,
    },
    /// Run the pipeline under several toggle sets on the same input.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        /// High-resolution ground truth for fidelity metrics.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Toggle sets separated by ';', toggles within a set by ','.
        /// Toggles: sap, tap, dssag, sag, pag; `none` is the empty set.
        #[arg(long, default_value = "none;sap;tap;sap,tap;sap,tap,dssag")]
        sets: String,
        /// Directory for per-variant traces.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write seeded synthetic HR/LR pairs and a matching config.
    Fixture {
        /// translate, texture or constant.
        #[arg(long, default_value = "translate")]
        kind: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 14)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        /// Per-frame translation as DYxDX (translate only).
        #[arg(long, default_value = "0x1", allow_hyphen_values = true)]
        shift: String,
        /// Fill value (constant only).
        #[arg(long, default_value_t = 0.5)]
        value: f32,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Resolves the configuration from the file and flag overrides.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.seed {
        c.pipeline.seed = v;
    }
    if let Some(v) = common.steps {
        c.pipeline.steps = v;
    }
    if let Some(v) = &common.tile {
        c.set("tile", v)?;
    }
    if let Some(v) = &common.guidance {
        c.set("guidance", v)?;
    }
    if let Some(v) = common.scale {
        c.pipeline.guidance.scale = v;
    }
    if let Some(v) = common.rho {
        c.pipeline.guidance.rho = v;
    }
    if let Some(v) = common.sap_rate {
        c.pipeline.sap_rate = v;
    }
    if let Some(v) = common.tap_l {
        c.pipeline.tap_frames = v;
    }
    c.validate()?;
    Ok(c)
}

/// A frame directory, or a `.dcvt` container file.
pub fn read_video(path: &Path) -> Result<VideoTensor> {
    if path.is_dir() {
        read_frames(path)
    } else {
        read_container(path)?.into_video()
    }
}

fn write_video(dir: &Path, v: &VideoTensor, cfg: &RunConfig, name: &str) -> Result<()> {
    write_frames(dir, v, cfg.format)?;
    write_container(&dir.join(format!("{name}.dcvt")), &Container::from_video(v))
}

fn trace_text(trace: &[StepRecord]) -> String {
    trace.iter().map(|r| format!("{r}\n")).collect()
}

/// Clamps the configured tile to the latent extent.
fn effective_tile(tile: Extent, latent: Dims) -> Extent {
    Extent::new(
        tile.frames.min(latent.frames),
        tile.height.min(latent.height),
        tile.width.min(latent.width),
    )
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    log: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", line.as_ref());
    }

    fn note(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.log, "{}", line.as_ref());
    }
}

struct Prepared {
    run: RunConfig,
    den: ToyAttentionDenoiser,
    codec: ToyCodec,
    tiles: usize,
}

fn prepare_run(cfg: &RunConfig, lr: &VideoTensor, ctx: &mut Ctx<'_>) -> Result<Prepared> {
    let d = lr.dims();
    let codec = ToyCodec::new(cfg.codec_factor)?;
    let hr = Dims::new(d.frames, d.channels, d.height * cfg.upscale, d.width * cfg.upscale);
    let latent = codec.latent_dims(hr)?;
    let mut run = cfg.clone();
    let tile = effective_tile(cfg.pipeline.tile, latent);
    if tile != cfg.pipeline.tile {
        ctx.note(format!(
            "note: tile {} exceeds latent {}x{}x{}; using {tile}",
            cfg.pipeline.tile, latent.height, latent.width, latent.frames
        ));
        run.pipeline.tile = tile;
        if run.pipeline.tap_frames > tile.frames {
            ctx.note(format!("note: tap_l reduced to {}", tile.frames));
            run.pipeline.tap_frames = tile.frames;
        }
    }
    let den = ToyAttentionDenoiser::new(cfg.denoiser_spec(d.channels))?;
    let tiles = plan_tiles(Extent::of(latent), run.pipeline.tile)?.len();
    Ok(Prepared { run, den, codec, tiles })
}

fn cmd_upscale(cfg: &RunConfig, common: &CommonArgs, input: &Path, output: &Path, ctx: &mut Ctx<'_>) -> Result<()> {
    let lr = read_video(input)?;
    let Prepared { run, den, codec, .. } = prepare_run(cfg, &lr, ctx)?;
    let out = dc_vsr_sample(&lr, run.upscale, &den, &codec, &run.pipeline)?;
    write_video(output, &out.video, cfg, "video")?;
    let trace_path = common.trace.clone().unwrap_or_else(|| output.join("trace.log"));
    write_atomic(&trace_path, trace_text(&out.trace).as_bytes())?;
    let d = out.video.dims();
    ctx.say(format!(
        "wrote {} frames of {}x{} to {} (trace: {})",
        d.frames,
        d.height,
        d.width,
        output.display(),
        trace_path.display()
    ));
    Ok(())
}

fn cmd_degrade(cfg: &RunConfig, input: &Path, output: &Path, ctx: &mut Ctx<'_>) -> Result<()> {
    let hr = read_video(input)?;
    let lr = degrade(&hr, &cfg.degradation)?;
    write_video(output, &lr, cfg, "video")?;
    let d = lr.dims();
    ctx.say(format!("wrote {} frames of {}x{} to {}", d.frames, d.height, d.width, output.display()));
    Ok(())
}

/// `key=value` metric lines. Temporal metrics are `n/a` for one frame.
pub fn metric_lines(gt: &VideoTensor, restored: &VideoTensor) -> Result<Vec<String>> {
    gt.ensure_same_dims(restored)?;
    let d = gt.dims();
    let mut lines = vec![
        format!("psnr={}", psnr(gt, restored)?),
        format!("ssim={}", ssim(gt, restored)?),
    ];
    if d.frames >= 2 {
        lines.push(format!("tof={}", tof(gt, restored, default_flow)?));
        lines.push(format!("tlp={}", tlp(gt, restored, mean_abs_frame_diff)?));
        lines.push(format!("we={}", warping_error(restored, default_flow)?));
        lines.push(format!("tof_normalization=per_pixel_per_frame_pair({})", (d.frames - 1) * d.plane_len()));
        lines.push(format!("tlp_normalization=per_frame_pair({})", d.frames - 1));
    } else {
        lines.extend(["tof=n/a", "tlp=n/a", "we=n/a"].map(String::from));
    }
    Ok(lines)
}

fn cmd_metrics(gt: &Path, restored: &Path, ctx: &mut Ctx<'_>) -> Result<()> {
    let g = read_video(gt)?;
    let r = read_video(restored)?;
    for l in metric_lines(&g, &r)? {
        ctx.say(l);
    }
    Ok(())
}

/// One ablation toggle set.
#[derive(Debug, Clone, PartialEq)]
pub struct ToggleSet {
    pub name: String,
    pub sap: bool,
    pub tap: bool,
    pub guidance: GuidanceMode,
}

pub fn parse_toggle_sets(spec: &str) -> Result<Vec<ToggleSet>> {
    let mut sets = Vec::new();
    for raw in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let mut set = ToggleSet {
            name: raw.to_string(),
            sap: false,
            tap: false,
            guidance: GuidanceMode::None,
        };
        let mut guidance: Vec<&str> = Vec::new();
        for t in raw.split(',').map(str::trim) {
            match t {
                "none" => {}
                "sap" => set.sap = true,
                "tap" => set.tap = true,
                "dssag" => {
                    guidance.push(t);
                    set.guidance = GuidanceMode::CfgDssag;
                }
                "sag" => {
                    guidance.push(t);
                    set.guidance = GuidanceMode::Sag;
                }
                "pag" => {
                    guidance.push(t);
                    set.guidance = GuidanceMode::Pag;
                }
                other => return Err(usage(format!("unknown toggle '{other}' in '{raw}'"))),
            }
        }
        if guidance.len() > 1 {
            return Err(usage(format!("conflicting guidance toggles in '{raw}': {}", guidance.join(", "))));
        }
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(usage("no toggle sets given"));
    }
    Ok(sets)
}

fn cmd_ablate(
    cfg: &RunConfig,
    input: &Path,
    gt: Option<&Path>,
    sets: &str,
    output: Option<&Path>,
    ctx: &mut Ctx<'_>,
) -> Result<()> {
    let sets = parse_toggle_sets(sets)?;
    let lr = read_video(input)?;
    let gt = gt.map(read_video).transpose()?;
    let Prepared { run: base, den, codec, tiles } = prepare_run(cfg, &lr, ctx)?;
    let counting = CountingDenoiser::new(den);
    for set in &sets {
        let mut run = base.pipeline.clone();
        run.sap_enabled = set.sap;
        run.tap_enabled = set.tap;
        run.guidance.mode = set.guidance;
        counting.reset();
        let out = dc_vsr_sample(&lr, base.upscale, &counting, &codec, &run)?;
        // Per tile and step.
        let per = (run.steps * tiles) as f64;
        let mut row = vec![
            format!("variant={}", set.name.replace(',', "+")),
            format!("sap={}", set.sap),
            format!("tap={}", set.tap),
            format!("guidance={}", set.guidance),
            format!("ff_per_iter={}", counting.branch_calls() as f64 / per),
            format!("gather_per_iter={}", counting.gather_calls() as f64 / per),
        ];
        match &gt {
            Some(g) => row.extend(metric_lines(g, &out.video)?),
            None if out.video.dims().frames >= 2 => {
                row.push(format!("we={}", warping_error(&out.video, default_flow)?))
            }
            None => row.push("we=n/a".into()),
        }
        ctx.say(row.into_iter().filter(|s| !s.contains("normalization")).collect::<Vec<_>>().join(" "));
        if let Some(dir) = output {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let name = set.name.replace(',', "+");
            write_atomic(&dir.join(format!("trace_{name}.log")), trace_text(&out.trace).as_bytes())?;
        }
    }
    Ok(())
}

fn parse_shift(s: &str) -> Result<(isize, isize)> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("shift must be DYxDX, got '{s}'")))?;
    let p = |v: &str| v.trim().parse::<isize>().map_err(|_| usage(format!("bad shift '{s}'")));
    Ok((p(a)?, p(b)?))
}

/// Smooth seeded texture in [0, 1].
fn texture(dims: Dims, seed: u64) -> VideoTensor {
    let noise = VideoTensor::gaussian(dims, seed, 1.0);
    let smooth = gaussian_blur(&noise, 1.5);
    let max = smooth.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
    smooth.map(|v| 0.5 + 0.45 * v / max)
}

/// Periodic translation: frame `k` is the base shifted by `k·shift`,
/// wrapping at the borders, so the true flow is `shift` everywhere.
fn translating(base: &VideoTensor, frames: usize, dy: isize, dx: isize) -> VideoTensor {
    let d = base.dims();
    let (h, w) = (d.height as isize, d.width as isize);
    VideoTensor::from_fn(d.with_frames(frames), |n, c, y, x| {
        let sy = (y as isize - n as isize * dy).rem_euclid(h) as usize;
        let sx = (x as isize - n as isize * dx).rem_euclid(w) as usize;
        base.get(0, c, sy, sx)
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_fixture(
    cfg: &RunConfig,
    kind: &str,
    output: &Path,
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    shift: &str,
    value: f32,
    ctx: &mut Ctx<'_>,
) -> Result<()> {
    if frames == 0 || height == 0 || width == 0 || !(channels == 1 || channels == 3) {
        return Err(usage("fixture needs positive sizes and 1 or 3 channels"));
    }
    let dims = Dims::new(1, channels, height, width);
    let seed = cfg.pipeline.seed;
    let (hr, flow) = match kind {
        "translate" => {
            let (dy, dx) = parse_shift(shift)?;
            (translating(&texture(dims, seed), frames, dy, dx), Some((dy, dx)))
        }
        "texture" => (translating(&texture(dims, seed), frames, 0, 0), Some((0, 0))),
        "constant" => (VideoTensor::filled(dims.with_frames(frames), value.clamp(0.0, 1.0)), Some((0, 0))),
        other => return Err(usage(format!("unknown fixture kind '{other}'"))),
    };
    let lr = degrade(&hr, &cfg.degradation)?;
    write_video(&output.join("hr"), &hr, cfg, "video")?;
    write_video(&output.join("lr"), &lr, cfg, "video")?;
    let mut fixture_conf = format!("# fixture kind={kind}\n");
    fixture_conf.push_str(&cfg.to_text());
    write_atomic(&output.join("fixture.conf"), fixture_conf.as_bytes())?;
    if let Some((dy, dx)) = flow {
        let text: String = (1..frames).map(|i| format!("pair={} dy={dy} dx={dx}\n", i - 1)).collect();
        write_atomic(&output.join("flow.txt"), text.as_bytes())?;
    }
    ctx.say(format!(
        "wrote {kind} fixture: hr {height}x{width}x{frames}, lr {}x{}x{frames} to {}",
        lr.dims().height,
        lr.dims().width,
        output.display()
    ));
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Runs the tool; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, log: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(log, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let mut ctx = Ctx { out, log };
    let cfg = match resolve_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            ctx.note(format!("error: {e}"));
            return EXIT_USAGE;
        }
    };
    for line in cfg.to_text().lines() {
        ctx.note(format!("config: {line}"));
    }
    let result = match &cli.command {
        Command::Upscale { input, output } => cmd_upscale(&cfg, &cli.common, input, output, &mut ctx),
        Command::Degrade { input, output } => cmd_degrade(&cfg, input, output, &mut ctx),
        Command::Metrics { gt, restored } => cmd_metrics(gt, restored, &mut ctx),
        Command::Ablate {
            input,
            gt,
            sets,
            output,
        } => cmd_ablate(&cfg, input, gt.as_deref(), sets, output.as_deref(), &mut ctx),
        Command::Fixture {
            kind,
            output,
            frames,
            height,
            width,
            channels,
            shift,
            value,
        } => cmd_fixture(&cfg, kind, output, *frames, *height, *width, *channels, shift, *value, &mut ctx),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            ctx.note(format!("error: {e}"));
            exit_code(&e)
        }
    }
}
