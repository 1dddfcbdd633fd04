//! Deterministic ODE sampling and the tiled super-resolution loop.

mod pipeline;
mod schedule;

pub use pipeline::{
    conditioning_vector, dc_vsr_sample, denoise_pass_plain, denoise_pass_sap, denoise_pass_tap,
    initial_noise, sample_latent, sample_latent_untiled, PassContext, PipelineConfig, SampleOutput,
    Scheme, StepRecord, TapDirection, TileInput, VsrOutput,
};
pub use schedule::{
    build_sigma_schedule, ode_step, ode_step_eps, precondition, sample_ode, Precondition,
    SigmaSchedule, Solver,
};
