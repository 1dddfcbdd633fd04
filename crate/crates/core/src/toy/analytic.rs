use crate::denoiser::{DenoiseOutput, DenoiseRequest, Denoiser};
use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

/// Exact posterior mean for data drawn from `N(μ, σ_d² I)` with a per-channel
/// mean: `D(x; σ) = (σ_d²·x + σ²·μ) / (σ_d² + σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    pub mu: Vec<f32>,
    pub sigma_data: f64,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu: Vec<f32>, sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0) {
            return Err(Error::invalid("sigma_data must be positive"));
        }
        Ok(Self { mu, sigma_data })
    }

    /// Zero-mean data with `channels` channels.
    pub fn centered(channels: usize, sigma_data: f64) -> Self {
        Self {
            mu: vec![0.0; channels],
            sigma_data,
        }
    }

    pub fn analytic_denoise(&self, x: &VideoTensor, sigma: f64) -> Result<VideoTensor> {
        if !(sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        let d = x.dims();
        if self.mu.len() != d.channels {
            return Err(Error::dim(format!(
                "mean has {} channels, input has {}",
                self.mu.len(),
                d.channels
            )));
        }
        let sd2 = self.sigma_data * self.sigma_data;
        let keep = sd2 / (sd2 + sigma * sigma);
        let plane = d.plane_len();
        let mut out = x.clone();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let mu = self.mu[(i / plane) % d.channels] as f64;
            *v = (keep * *v as f64 + (1.0 - keep) * mu) as f32;
        }
        Ok(out)
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
        Ok(DenoiseOutput::plain(self.analytic_denoise(req.noisy, req.sigma)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn limits_and_plug_in() {
        let den = AnalyticGaussianDenoiser::new(vec![0.5, -1.0], 1.0).unwrap();
        let x = VideoTensor::gaussian(Dims::new(2, 2, 3, 3), 1, 2.0);
        assert_eq!(den.analytic_denoise(&x, 0.0).unwrap(), x);
        let far = den.analytic_denoise(&x, f64::INFINITY).unwrap();
        assert!(far.as_slice()[..9].iter().all(|&v| v == 0.5));
        assert!(far.as_slice()[9..18].iter().all(|&v| v == -1.0));

        // μ = 0, σ_d = 1, σ = 1, x = 2 → (1·2 + 1·0) / 2 = 1.
        let den = AnalyticGaussianDenoiser::centered(1, 1.0);
        let x = VideoTensor::filled(Dims::new(1, 1, 1, 1), 2.0);
        assert_eq!(den.analytic_denoise(&x, 1.0).unwrap().as_slice(), &[1.0]);
        assert!(den.analytic_denoise(&x, -1.0).is_err());
    }

    #[test]
    fn tweedie_residual_has_zero_mean() {
        // x ~ N(μ, (σ_d² + σ²) I) ⇒ E[(x − D)/σ] = 0.
        let (mu, sd, sigma) = (0.3f32, 0.5f64, 2.0f64);
        let den = AnalyticGaussianDenoiser::new(vec![mu], sd).unwrap();
        let n = 10_000;
        let std = (sd * sd + sigma * sigma).sqrt();
        let x = VideoTensor::gaussian(Dims::new(1, 1, 1, n), 17, std as f32).map(|v| v + mu);
        let d = den.analytic_denoise(&x, sigma).unwrap();
        let res: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(d.as_slice())
            .map(|(&a, &b)| (a as f64 - b as f64) / sigma)
            .collect();
        let mean = res.iter().sum::<f64>() / n as f64;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
    }
}
