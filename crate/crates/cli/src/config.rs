//! `key = value` run configuration. Unknown keys are rejected; absent keys
//! keep their defaults.

use std::path::Path;

use dcvsr_core::degrade::DegradationConfig;
use dcvsr_core::grid::Extent;
use dcvsr_core::guidance::GuidanceMode;
use dcvsr_core::io::FrameFormat;
use dcvsr_core::sampler::PipelineConfig;
use dcvsr_core::toy::DenoiserSpec;
use dcvsr_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub degradation: DegradationConfig,
    /// Spatial upscaling factor of `upscale`.
    pub upscale: usize,
    pub codec_factor: usize,
    pub model_seed: u64,
    pub patch: usize,
    pub embed: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub sigma_data: f64,
    pub format: FrameFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            degradation: DegradationConfig::default(),
            upscale: 4,
            codec_factor: 8,
            model_seed: 0,
            patch: 4,
            embed: 32,
            layers: 4,
            mlp_hidden: 64,
            sigma_data: 0.5,
            format: FrameFormat::Ppm,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("{key}: expected true/false, got '{value}'"))),
    }
}

/// Every key, in the order it is echoed.
pub const KEYS: &[&str] = &[
    "steps", "sigma_min", "sigma_max", "schedule_exponent", "tile", "blend_sigma_fraction",
    "sap", "sap_rate", "tap", "tap_l", "tap_range", "sap_first", "seed", "parallel",
    "guidance", "scale", "rho", "sag_blur_sigma", "sag_mask_quantile",
    "blur_sigma", "down_factor", "noise_sigma", "quant_levels", "degrade_seed",
    "upscale", "codec_factor", "model_seed", "patch", "embed", "layers", "mlp_hidden",
    "sigma_data", "format",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.pipeline;
        let g = &mut p.guidance;
        let d = &mut self.degradation;
        match key {
            "steps" => p.steps = parse(key, value)?,
            "sigma_min" => p.sigma_min = parse(key, value)?,
            "sigma_max" => p.sigma_max = parse(key, value)?,
            "schedule_exponent" => p.schedule_exponent = parse(key, value)?,
            "tile" => p.tile = value.parse::<Extent>()?,
            "blend_sigma_fraction" => p.blend_sigma_fraction = parse(key, value)?,
            "sap" => p.sap_enabled = parse_bool(key, value)?,
            "sap_rate" => p.sap_rate = parse(key, value)?,
            "tap" => p.tap_enabled = parse_bool(key, value)?,
            "tap_l" => p.tap_frames = parse(key, value)?,
            "tap_range" => p.tap_range = parse(key, value)?,
            "sap_first" => p.sap_first = parse_bool(key, value)?,
            "seed" => p.seed = parse(key, value)?,
            "parallel" => p.parallel = parse_bool(key, value)?,
            "guidance" => g.mode = value.parse::<GuidanceMode>()?,
            "scale" => g.scale = parse(key, value)?,
            "rho" => g.rho = parse(key, value)?,
            "sag_blur_sigma" => g.sag_blur_sigma = parse(key, value)?,
            "sag_mask_quantile" => g.sag_mask_quantile = parse(key, value)?,
            "blur_sigma" => d.blur_sigma = parse(key, value)?,
            "down_factor" => d.down_factor = parse(key, value)?,
            "noise_sigma" => d.noise_sigma = parse(key, value)?,
            "quant_levels" => d.quant_levels = parse(key, value)?,
            "degrade_seed" => d.seed = parse(key, value)?,
            "upscale" => self.upscale = parse(key, value)?,
            "codec_factor" => self.codec_factor = parse(key, value)?,
            "model_seed" => self.model_seed = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "embed" => self.embed = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "sigma_data" => self.sigma_data = parse(key, value)?,
            "format" => {
                self.format = match value {
                    "ppm" => FrameFormat::Ppm,
                    "pfm" => FrameFormat::Pfm,
                    _ => return Err(Error::InvalidArgument(format!("format: expected ppm or pfm, got '{value}'"))),
                }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let p = &self.pipeline;
        let g = &p.guidance;
        let d = &self.degradation;
        match key {
            "steps" => p.steps.to_string(),
            "sigma_min" => p.sigma_min.to_string(),
            "sigma_max" => p.sigma_max.to_string(),
            "schedule_exponent" => p.schedule_exponent.to_string(),
            "tile" => p.tile.to_string(),
            "blend_sigma_fraction" => p.blend_sigma_fraction.to_string(),
            "sap" => p.sap_enabled.to_string(),
            "sap_rate" => p.sap_rate.to_string(),
            "tap" => p.tap_enabled.to_string(),
            "tap_l" => p.tap_frames.to_string(),
            "tap_range" => p.tap_range.to_string(),
            "sap_first" => p.sap_first.to_string(),
            "seed" => p.seed.to_string(),
            "parallel" => p.parallel.to_string(),
            "guidance" => g.mode.to_string(),
            "scale" => g.scale.to_string(),
            "rho" => g.rho.to_string(),
            "sag_blur_sigma" => g.sag_blur_sigma.to_string(),
            "sag_mask_quantile" => g.sag_mask_quantile.to_string(),
            "blur_sigma" => d.blur_sigma.to_string(),
            "down_factor" => d.down_factor.to_string(),
            "noise_sigma" => d.noise_sigma.to_string(),
            "quant_levels" => d.quant_levels.to_string(),
            "degrade_seed" => d.seed.to_string(),
            "upscale" => self.upscale.to_string(),
            "codec_factor" => self.codec_factor.to_string(),
            "model_seed" => self.model_seed.to_string(),
            "patch" => self.patch.to_string(),
            "embed" => self.embed.to_string(),
            "layers" => self.layers.to_string(),
            "mlp_hidden" => self.mlp_hidden.to_string(),
            "sigma_data" => self.sigma_data.to_string(),
            "format" => self.format.extension().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::InvalidArgument(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn denoiser_spec(&self, channels: usize) -> DenoiserSpec {
        DenoiserSpec {
            seed: self.model_seed,
            patch: self.patch,
            embed: self.embed,
            spatial_layers: self.layers,
            channels,
            mlp_hidden: self.mlp_hidden,
            sigma_data: self.sigma_data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.degradation.validate()?;
        if self.upscale == 0 || self.codec_factor == 0 {
            return Err(Error::InvalidArgument("upscale and codec_factor must be >= 1".into()));
        }
        self.denoiser_spec(1).validate()
    }
}
