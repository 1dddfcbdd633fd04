//! The denoiser contract the sampler drives, and the attention hooks it uses
//! to reach into a network's spatial self-attention layers.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::attention::{InjectedKv, Matrix, SuppressionParam, TokenGrid};
use crate::error::Result;
use crate::tensor::VideoTensor;

/// Length of the conditioning vector.
pub const COND_DIM: usize = 8;

/// Which kernel a hooked spatial self-attention layer runs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AttentionKernel {
    #[default]
    Vanilla,
    /// γ-tempered softmax.
    Tempered(SuppressionParam),
    /// Identity score matrix (output = V).
    Identity,
}

/// Keys/values appended to a layer, either one set for every frame or one set
/// per frame.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerInjection {
    Shared(InjectedKv),
    PerFrame(Vec<InjectedKv>),
}

impl LayerInjection {
    pub fn for_frame(&self, f: usize) -> Option<&InjectedKv> {
        match self {
            LayerInjection::Shared(kv) => Some(kv),
            LayerInjection::PerFrame(v) => v.get(f),
        }
    }

    pub fn total_tokens(&self) -> usize {
        match self {
            LayerInjection::Shared(kv) => kv.len(),
            LayerInjection::PerFrame(v) => v.iter().map(InjectedKv::len).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerHook {
    pub kernel: AttentionKernel,
    pub injection: Option<Arc<LayerInjection>>,
}

/// What a denoiser call is for. Only used for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PassKind {
    /// A guidance branch whose noise estimate feeds the sampler.
    #[default]
    Branch,
    /// A key/value gathering pass whose output is discarded.
    Gather,
}

/// Per-call hook set. An empty set runs the network untouched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionHooks {
    pub layers: BTreeMap<usize, LayerHook>,
    /// Record each hooked layer's own keys and values.
    pub capture: bool,
    /// Return the per-token attention-received map.
    pub attention_map: bool,
    pub pass: PassKind,
}

impl AttentionHooks {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_noop(&self) -> bool {
        self.layers.values().all(|h| {
            h.kernel == AttentionKernel::Vanilla
                && h.injection.as_ref().is_none_or(|i| i.total_tokens() == 0)
        })
    }
}

/// One layer's own keys and values, per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedKv {
    pub layer: usize,
    pub grid: TokenGrid,
    pub keys: Vec<Matrix>,
    pub values: Vec<Matrix>,
}

pub struct DenoiseRequest<'a> {
    pub noisy: &'a VideoTensor,
    /// Clean conditioning latent, channel-stacked with `noisy` by networks
    /// that use it.
    pub lr_latent: Option<&'a VideoTensor>,
    pub cond: &'a [f32],
    pub sigma: f64,
    pub hooks: &'a AttentionHooks,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub denoised: VideoTensor,
    /// `frames × 1 × grid_h × grid_w` mean attention weight each token
    /// receives.
    pub attention_map: Option<VideoTensor>,
    pub captured: Vec<CapturedKv>,
}

impl DenoiseOutput {
    pub fn plain(denoised: VideoTensor) -> Self {
        Self {
            denoised,
            attention_map: None,
            captured: Vec::new(),
        }
    }
}

/// `D(x; c, σ)`: returns the denoised estimate with the same shape as
/// `noisy`.
pub trait Denoiser: Sync {
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<DenoiseOutput>;

    /// Spatial self-attention layers that propagation and suppression hooks
    /// target. Empty for networks without attention.
    fn hooked_layers(&self) -> Vec<usize> {
        Vec::new()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
        (**self).denoise(req)
    }

    fn hooked_layers(&self) -> Vec<usize> {
        (**self).hooked_layers()
    }
}

/// Wraps a denoiser and counts calls by [`PassKind`].
pub struct CountingDenoiser<D> {
    inner: D,
    branch: AtomicUsize,
    gather: AtomicUsize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            branch: AtomicUsize::new(0),
            gather: AtomicUsize::new(0),
        }
    }

    pub fn branch_calls(&self) -> usize {
        self.branch.load(Ordering::SeqCst)
    }

    pub fn gather_calls(&self) -> usize {
        self.gather.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.branch.store(0, Ordering::SeqCst);
        self.gather.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
        match req.hooks.pass {
            PassKind::Branch => self.branch.fetch_add(1, Ordering::SeqCst),
            PassKind::Gather => self.gather.fetch_add(1, Ordering::SeqCst),
        };
        self.inner.denoise(req)
    }

    fn hooked_layers(&self) -> Vec<usize> {
        self.inner.hooked_layers()
    }
}
