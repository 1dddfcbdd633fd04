//! Guidance combinators and the noise-adaptive suppression schedule.
//!
//! Every combinator has the form `base + (1 + s)(target − base)`; the modes
//! differ in which two (or three) noise estimates fill the roles:
//!
//! | mode        | base                         | target        | passes |
//! |-------------|------------------------------|---------------|--------|
//! | `cfg`       | ε(x)                         | ε(x, c)       | 2      |
//! | `sag`       | ε(b(x)), b blurs salient x̂₀  | ε(x, c)       | 3      |
//! | `pag`       | ε_identity(x, c), plus CFG   | ε(x, c)       | 3      |
//! | `dssag`     | ε_γ(x)                       | ε(x)          | 2      |
//! | `cfg_dssag` | ε_γ(x)                       | ε(x, c)       | 2      |

use std::fmt;
use std::str::FromStr;

use crate::attention::SuppressionParam;
use crate::denoiser::AttentionKernel;
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceMode {
    None,
    Cfg,
    Sag,
    Pag,
    Dssag,
    #[default]
    CfgDssag,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 6] = [
        GuidanceMode::None,
        GuidanceMode::Cfg,
        GuidanceMode::Sag,
        GuidanceMode::Pag,
        GuidanceMode::Dssag,
        GuidanceMode::CfgDssag,
    ];

    /// Network evaluations per sampling step that feed the noise estimate.
    pub fn passes_per_step(self) -> usize {
        match self {
            GuidanceMode::None => 1,
            GuidanceMode::Cfg | GuidanceMode::Dssag | GuidanceMode::CfgDssag => 2,
            GuidanceMode::Sag | GuidanceMode::Pag => 3,
        }
    }

    pub fn uses_suppression(self) -> bool {
        matches!(self, GuidanceMode::Dssag | GuidanceMode::CfgDssag)
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::None => "none",
            GuidanceMode::Cfg => "cfg",
            GuidanceMode::Sag => "sag",
            GuidanceMode::Pag => "pag",
            GuidanceMode::Dssag => "dssag",
            GuidanceMode::CfgDssag => "cfg_dssag",
        })
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GuidanceMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown guidance mode '{s}' (expected none, cfg, sag, pag, dssag, cfg_dssag)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub scale: f64,
    /// Detail-suppression exponent of the γ schedule.
    pub rho: f64,
    /// Latent-pixel sigma of the SAG blur.
    pub sag_blur_sigma: f64,
    /// Tokens whose received attention exceeds this quantile are blurred.
    pub sag_mask_quantile: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::CfgDssag,
            scale: 1.0,
            rho: 0.5,
            sag_blur_sigma: 1.0,
            sag_mask_quantile: 0.5,
        }
    }
}

impl GuidanceConfig {
    pub fn with_mode(mode: GuidanceMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be > 0, got {}", self.rho)));
        }
        if !self.scale.is_finite() {
            return Err(Error::invalid("guidance scale must be finite"));
        }
        // 1.0 is accepted and yields an empty SAG mask.
        if !(self.sag_mask_quantile > 0.0 && self.sag_mask_quantile <= 1.0) {
            return Err(Error::invalid(format!(
                "sag_mask_quantile must lie in (0, 1], got {}",
                self.sag_mask_quantile
            )));
        }
        if !(self.sag_blur_sigma >= 0.0 && self.sag_blur_sigma.is_finite()) {
            return Err(Error::invalid("sag_blur_sigma must be >= 0"));
        }
        Ok(())
    }
}

fn combine(base: &VideoTensor, target: &VideoTensor, s: f64) -> Result<VideoTensor> {
    let k = 1.0 + s;
    base.zip_map(target, |b, t| {
        let (b, t) = (b as f64, t as f64);
        (b + k * (t - b)) as f32
    })
}

/// `ε_u + (1 + s)(ε_c − ε_u)`.
pub fn cfg(eps_uncond: &VideoTensor, eps_cond: &VideoTensor, s: f64) -> Result<VideoTensor> {
    combine(eps_uncond, eps_cond, s)
}

/// `ε_pag + (1 + s)(ε − ε_pag)`.
pub fn pag_combine(eps_perturbed: &VideoTensor, eps_normal: &VideoTensor, s: f64) -> Result<VideoTensor> {
    combine(eps_perturbed, eps_normal, s)
}

/// `ε' + (1 + s)(ε_target − ε')`, with `ε_target` unconditional for plain
/// DSSAG and conditional when combined with CFG.
pub fn dssag_combine(eps_suppressed: &VideoTensor, eps_target: &VideoTensor, s: f64) -> Result<VideoTensor> {
    combine(eps_suppressed, eps_target, s)
}

/// `γ_t = ((ln σ_t − ln σ_end) / (ln σ_start − ln σ_end))^ρ`. One at the
/// highest noise level of the run, zero at the lowest.
pub fn gamma_schedule(sigma_t: f64, sigma_start: f64, sigma_end: f64, rho: f64) -> Result<f64> {
    if !(sigma_end > 0.0 && sigma_start > sigma_end) {
        return Err(Error::invalid(format!(
            "need sigma_start > sigma_end > 0, got {sigma_start} and {sigma_end}"
        )));
    }
    if !(sigma_t >= sigma_end && sigma_t <= sigma_start) {
        return Err(Error::invalid(format!(
            "sigma {sigma_t} outside [{sigma_end}, {sigma_start}]"
        )));
    }
    let ratio = (sigma_t.ln() - sigma_end.ln()) / (sigma_start.ln() - sigma_end.ln());
    Ok(ratio.powf(rho))
}

/// One network evaluation requested by a guidance rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRequest {
    pub conditional: bool,
    pub kernel: AttentionKernel,
    pub attention_map: bool,
    /// The branch whose estimate the guidance pushes towards. Models that
    /// record keys/values for later propagation do so on this branch.
    pub target: bool,
}

impl BranchRequest {
    fn plain(conditional: bool, target: bool) -> Self {
        Self {
            conditional,
            kernel: AttentionKernel::Vanilla,
            attention_map: false,
            target,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpsEstimate {
    pub eps: VideoTensor,
    pub attention_map: Option<VideoTensor>,
}

/// A noise predictor `ε(x)` at a fixed noise level.
pub trait EpsModel {
    fn eps(&self, x: &VideoTensor, req: &BranchRequest) -> Result<EpsEstimate>;
}

/// Binary mask at latent resolution: tokens whose map value is strictly above
/// the `quantile` threshold, upsampled by nearest neighbour.
pub fn sag_mask(map: &VideoTensor, quantile: f64, latent: crate::tensor::Dims) -> Result<VideoTensor> {
    let md = map.dims();
    if md.frames != latent.frames
        || !latent.height.is_multiple_of(md.height)
        || !latent.width.is_multiple_of(md.width)
    {
        return Err(Error::dim(format!(
            "attention map {md} does not tile latent {latent}"
        )));
    }
    let mut sorted: Vec<f32> = map.as_slice().to_vec();
    sorted.sort_by(f32::total_cmp);
    let pos = ((sorted.len() - 1) as f64 * quantile).round() as usize;
    let threshold = sorted[pos.min(sorted.len() - 1)];
    let (fy, fx) = (latent.height / md.height, latent.width / md.width);
    Ok(VideoTensor::from_fn(latent, |n, _, y, x| {
        let mut hit = false;
        for c in 0..md.channels {
            hit |= map.get(n, c, y / fy, x / fx) > threshold;
        }
        if hit {
            1.0
        } else {
            0.0
        }
    }))
}

/// Self-attention guidance: blur the salient parts of the predicted clean
/// signal, keep the noise, and guide away from the blurred prediction.
/// With `conditional_target` the target estimate is `ε(x, c)` (three passes),
/// otherwise the detector's unconditional estimate is reused (two passes).
pub fn sag(
    model: &dyn EpsModel,
    x: &VideoTensor,
    sigma: f64,
    config: &GuidanceConfig,
    conditional_target: bool,
) -> Result<VideoTensor> {
    let detect = model.eps(
        x,
        &BranchRequest {
            conditional: false,
            kernel: AttentionKernel::Vanilla,
            attention_map: true,
            target: !conditional_target,
        },
    )?;
    let map = detect
        .attention_map
        .as_ref()
        .ok_or_else(|| Error::Hook("denoiser does not report attention maps".into()))?;
    let mask = sag_mask(map, config.sag_mask_quantile, x.dims())?;
    let sigma32 = sigma as f32;
    let x0 = x.zip_map(&detect.eps, |xv, e| xv - sigma32 * e)?;
    let blurred = gaussian_blur(&x0, config.sag_blur_sigma);
    // b(x) = x + mask·(blur(x̂₀) − x̂₀): the noise component σ·ε is untouched.
    let mut perturbed = x.clone();
    for (((p, &m), &bl), &o) in perturbed
        .as_mut_slice()
        .iter_mut()
        .zip(mask.as_slice())
        .zip(blurred.as_slice())
        .zip(x0.as_slice())
    {
        *p += m * (bl - o);
    }
    let base = model.eps(&perturbed, &BranchRequest::plain(false, false))?;
    let target = if conditional_target {
        model.eps(x, &BranchRequest::plain(true, true))?.eps
    } else {
        detect.eps
    };
    combine(&base.eps, &target, config.scale)
}

/// Runs the configured guidance rule. `gamma` is the current suppression
/// strength for the DSSAG modes.
pub fn guided_eps(
    model: &dyn EpsModel,
    x: &VideoTensor,
    sigma: f64,
    gamma: f64,
    config: &GuidanceConfig,
) -> Result<VideoTensor> {
    let s = config.scale;
    match config.mode {
        GuidanceMode::None => Ok(model.eps(x, &BranchRequest::plain(true, true))?.eps),
        GuidanceMode::Cfg => {
            let u = model.eps(x, &BranchRequest::plain(false, false))?;
            let c = model.eps(x, &BranchRequest::plain(true, true))?;
            cfg(&u.eps, &c.eps, s)
        }
        GuidanceMode::Sag => sag(model, x, sigma, config, true),
        GuidanceMode::Pag => {
            let u = model.eps(x, &BranchRequest::plain(false, false))?;
            let c = model.eps(x, &BranchRequest::plain(true, true))?;
            let p = model.eps(
                x,
                &BranchRequest {
                    kernel: AttentionKernel::Identity,
                    ..BranchRequest::plain(true, false)
                },
            )?;
            // CFG and PAG pushes applied separately around ε(x, c).
            let with_cfg = cfg(&u.eps, &c.eps, s)?;
            let with_pag = pag_combine(&p.eps, &c.eps, s)?;
            let mut out = with_cfg;
            for ((o, &pg), &cv) in out
                .as_mut_slice()
                .iter_mut()
                .zip(with_pag.as_slice())
                .zip(c.eps.as_slice())
            {
                *o = (*o as f64 + pg as f64 - cv as f64) as f32;
            }
            Ok(out)
        }
        GuidanceMode::Dssag | GuidanceMode::CfgDssag => {
            let suppressed = model.eps(
                x,
                &BranchRequest {
                    kernel: AttentionKernel::Tempered(SuppressionParam::new(gamma)?),
                    ..BranchRequest::plain(false, false)
                },
            )?;
            let conditional = config.mode == GuidanceMode::CfgDssag;
            let target = model.eps(x, &BranchRequest::plain(conditional, true))?;
            dssag_combine(&suppressed.eps, &target.eps, s)
        }
    }
}
