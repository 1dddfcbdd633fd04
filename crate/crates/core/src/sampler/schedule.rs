//! Noise-level schedule, denoiser preconditioning and the deterministic
//! probability-flow ODE solvers.

use crate::denoiser::{AttentionHooks, DenoiseRequest, Denoiser};
use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

/// Strictly descending noise levels `σ_0 = σ_max > … > σ_T = σ_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    pub sigmas: Vec<f64>,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub exponent: f64,
}

impl SigmaSchedule {
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }
}

/// `σ_i = (σ_max^(1/e) + (i/T)(σ_min^(1/e) − σ_max^(1/e)))^e`.
pub fn build_sigma_schedule(steps: usize, sigma_min: f64, sigma_max: f64, exponent: f64) -> Result<SigmaSchedule> {
    if steps == 0 {
        return Err(Error::invalid("need at least one sampling step"));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
        )));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::invalid("schedule exponent must be positive"));
    }
    let hi = sigma_max.powf(1.0 / exponent);
    let lo = sigma_min.powf(1.0 / exponent);
    let mut sigmas: Vec<f64> = (0..=steps)
        .map(|i| (hi + (i as f64 / steps as f64) * (lo - hi)).powf(exponent))
        .collect();
    // Pin the endpoints against round-off in the power.
    sigmas[0] = sigma_max;
    sigmas[steps] = sigma_min;
    if sigmas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::invalid("schedule is not strictly descending"));
    }
    Ok(SigmaSchedule {
        sigmas,
        sigma_max,
        sigma_min,
        exponent,
    })
}

/// Scalings of the wrapped network: `D = c_skip·x + c_out·F(c_in·x, c_noise)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precondition {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

pub fn precondition(sigma: f64, sigma_data: f64) -> Precondition {
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    let norm = (s2 + d2).sqrt();
    Precondition {
        c_skip: d2 / (s2 + d2),
        c_out: sigma * sigma_data / norm,
        c_in: 1.0 / norm,
        c_noise: sigma.ln() / 4.0,
    }
}

fn check_order(sigma_cur: f64, sigma_next: f64) -> Result<()> {
    if !(sigma_cur > 0.0 && sigma_next >= 0.0 && sigma_next <= sigma_cur) {
        return Err(Error::invalid(format!(
            "ODE step needs sigma_cur > 0 and 0 <= sigma_next <= sigma_cur, got {sigma_cur} -> {sigma_next}"
        )));
    }
    Ok(())
}

/// Euler step of `dx/dσ = ε` given the noise estimate directly.
pub fn ode_step_eps(x: &VideoTensor, eps: &VideoTensor, sigma_cur: f64, sigma_next: f64) -> Result<VideoTensor> {
    check_order(sigma_cur, sigma_next)?;
    let h = sigma_next - sigma_cur;
    x.zip_map(eps, |xv, e| (xv as f64 + h * e as f64) as f32)
}

/// Euler step of `dx/dσ = (x − D)/σ`.
pub fn ode_step(x: &VideoTensor, denoised: &VideoTensor, sigma_cur: f64, sigma_next: f64) -> Result<VideoTensor> {
    check_order(sigma_cur, sigma_next)?;
    let h = sigma_next - sigma_cur;
    x.zip_map(denoised, |xv, d| {
        let (xv, d) = (xv as f64, d as f64);
        (xv + h * (xv - d) / sigma_cur) as f32
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    Euler,
    /// Second-order trapezoidal correction; two evaluations per step.
    Heun,
}

fn plain_denoise(den: &dyn Denoiser, x: &VideoTensor, sigma: f64) -> Result<VideoTensor> {
    let hooks = AttentionHooks::none();
    Ok(den
        .denoise(&DenoiseRequest {
            noisy: x,
            lr_latent: None,
            cond: &[],
            sigma,
            hooks: &hooks,
        })?
        .denoised)
}

/// Integrates the probability-flow ODE along `schedule` starting from `x`,
/// which must already carry noise at `σ_max`.
pub fn sample_ode(den: &dyn Denoiser, x: &VideoTensor, schedule: &SigmaSchedule, solver: Solver) -> Result<VideoTensor> {
    let mut x = x.clone();
    for (i, w) in schedule.sigmas.windows(2).enumerate() {
        let (s, s_next) = (w[0], w[1]);
        let d = plain_denoise(den, &x, s)?;
        x = match solver {
            Solver::Euler => ode_step(&x, &d, s, s_next)?,
            Solver::Heun => {
                let h = s_next - s;
                let euler = ode_step(&x, &d, s, s_next)?;
                let d2 = plain_denoise(den, &euler, s_next)?;
                let mut out = x.clone();
                for (((o, &xv), &dv), (&ev, &d2v)) in out
                    .as_mut_slice()
                    .iter_mut()
                    .zip(x.as_slice())
                    .zip(d.as_slice())
                    .zip(euler.as_slice().iter().zip(d2.as_slice()))
                {
                    let slope = (xv as f64 - dv as f64) / s;
                    let slope2 = (ev as f64 - d2v as f64) / s_next;
                    *o = (xv as f64 + h * 0.5 * (slope + slope2)) as f32;
                }
                out
            }
        };
        if !x.is_finite() {
            return Err(Error::Numeric {
                step: i,
                sigma: s,
                detail: "non-finite state after ODE step".into(),
            });
        }
    }
    Ok(x)
}
