//! Small causal self-attention language model with explicit forward pass,
//! activation caching, and exact backpropagation.
//!
//! Parameters live in one flat buffer in a documented order (see [`Layout`]),
//! which is also the checkpoint serialization order and the index space for
//! finite-difference probing. The scalar type is generic: f32 for training,
//! f64 for gradient verification.

mod backward;
mod checkpoint;
mod forward;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, softmax, Cache, ForwardResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::real::Real;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters. `seed` drives parameter initialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ffn == 0 {
            return Err(ModelError::InvalidConfig("zero-sized dimension".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(ModelError::InvalidConfig("vocab_size must be >= 2".into()));
        }
        if self.max_len < 2 {
            return Err(ModelError::InvalidConfig("max_len must be >= 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// (offset, len) of one tensor inside the flat parameter buffer.
pub type Span = (usize, usize);

#[derive(Debug, Clone)]
pub struct LayerSpans {
    pub ln1_g: Span,
    pub ln1_b: Span,
    pub w_q: Span,
    pub b_q: Span,
    pub w_k: Span,
    pub b_k: Span,
    pub w_v: Span,
    pub b_v: Span,
    pub w_o: Span,
    pub b_o: Span,
    pub ln2_g: Span,
    pub ln2_b: Span,
    pub w_fc: Span,
    pub b_fc: Span,
    pub w_proj: Span,
    pub b_proj: Span,
}

/// Flatten order of all parameter tensors:
/// token embedding [V, D]; positional embedding [max_len, D]; then per layer
/// ln1 gain/bias, W_q/b_q, W_k/b_k, W_v/b_v, W_o/b_o, ln2 gain/bias,
/// W_fc/b_fc, W_proj/b_proj; then final layer-norm gain/bias; then the
/// untied output projection [D, V] (no bias).
///
/// Weight matrices are row-major [d_in, d_out]: y[j] = sum_i x[i] * w[i, j].
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: Span,
    pub pos_emb: Span,
    pub layers: Vec<LayerSpans>,
    pub lnf_g: Span,
    pub lnf_b: Span,
    pub w_out: Span,
    pub total: usize,
}

impl Layout {
    pub fn of(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let f = config.d_ffn;
        let v = config.vocab_size;
        let mut at = 0usize;
        let mut take = |len: usize| -> Span {
            let span = (at, len);
            at += len;
            span
        };
        let tok_emb = take(v * d);
        let pos_emb = take(config.max_len * d);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerSpans {
                ln1_g: take(d),
                ln1_b: take(d),
                w_q: take(d * d),
                b_q: take(d),
                w_k: take(d * d),
                b_k: take(d),
                w_v: take(d * d),
                b_v: take(d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * f),
                b_fc: take(f),
                w_proj: take(f * d),
                b_proj: take(d),
            });
        }
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_out = take(d * v);
        Layout { tok_emb, pos_emb, layers, lnf_g, lnf_b, w_out, total: at }
    }
}

/// Flat model parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub(crate) config: ModelConfig,
    pub(crate) data: Vec<T>,
}

/// Gradient store with exactly the parameter layout.
#[derive(Debug, Clone)]
pub struct GradientBundle<T> {
    pub(crate) config: ModelConfig,
    pub(crate) data: Vec<T>,
}

macro_rules! flat_store_impl {
    ($ty:ident) => {
        impl<T: Real> $ty<T> {
            pub fn config(&self) -> &ModelConfig {
                &self.config
            }

            pub fn layout(&self) -> Layout {
                Layout::of(&self.config)
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            /// The flat buffer in layout order.
            pub fn as_flat(&self) -> &[T] {
                &self.data
            }

            pub fn as_flat_mut(&mut self) -> &mut [T] {
                &mut self.data
            }

            #[inline]
            #[allow(dead_code)]
            pub(crate) fn slice(&self, span: Span) -> &[T] {
                &self.data[span.0..span.0 + span.1]
            }

            #[inline]
            #[allow(dead_code)]
            pub(crate) fn slice_mut(&mut self, span: Span) -> &mut [T] {
                &mut self.data[span.0..span.0 + span.1]
            }
        }
    };
}

flat_store_impl!(Parameters);
flat_store_impl!(GradientBundle);

impl<T: Real> Parameters<T> {
    /// Rebuilds a parameter store from a flat buffer in layout order.
    pub fn from_flat(config: ModelConfig, data: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let expect = Layout::of(&config).total;
        if data.len() != expect {
            return Err(ModelError::ShapeMismatch(format!(
                "flat buffer has {} values, layout needs {}",
                data.len(),
                expect
            )));
        }
        Ok(Self { config, data })
    }

    /// Converts the working precision (f32 training state <-> f64 checking).
    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }
}

impl<T: Real> GradientBundle<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let total = Layout::of(config).total;
        Self { config: config.clone(), data: vec![T::zero(); total] }
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &GradientBundle<T>) {
        assert_eq!(self.data.len(), other.data.len(), "gradient shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.data {
            *g *= factor;
        }
    }

    /// Global L2 norm, accumulated in f64 for a deterministic, stable value.
    pub fn global_norm(&self) -> f64 {
        self.data.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
    }
}

/// Deterministic parameter initialization.
///
/// Scheme: embeddings and weight matrices ~ Normal(0, 0.02); the residual
/// output projections (W_o, W_proj) additionally scaled by 1/sqrt(2*n_layers);
/// biases and layer-norm shifts zero; layer-norm gains one. Values are drawn
/// in f64 in layout order from a ChaCha8 stream seeded with `config.seed`,
/// then cast to the working type.
pub fn init_parameters<T: Real>(config: &ModelConfig) -> Result<Parameters<T>, ModelError> {
    config.validate()?;
    let layout = Layout::of(config);
    let mut data = vec![T::zero(); layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0f64, 0.02).expect("valid std");
    let residual_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();

    let mut fill = |span: Span, scale: f64, data: &mut Vec<T>| {
        for slot in &mut data[span.0..span.0 + span.1] {
            *slot = T::from_f64(normal.sample(&mut rng) * scale);
        }
    };
    let ones = |span: Span, data: &mut Vec<T>| {
        for slot in &mut data[span.0..span.0 + span.1] {
            *slot = T::one();
        }
    };

    fill(layout.tok_emb, 1.0, &mut data);
    fill(layout.pos_emb, 1.0, &mut data);
    for l in &layout.layers {
        fill(l.w_q, 1.0, &mut data);
        fill(l.w_k, 1.0, &mut data);
        fill(l.w_v, 1.0, &mut data);
        fill(l.w_o, residual_scale, &mut data);
        fill(l.w_fc, 1.0, &mut data);
        fill(l.w_proj, residual_scale, &mut data);
    }
    fill(layout.w_out, 1.0, &mut data);
    for l in &layout.layers {
        ones(l.ln1_g, &mut data);
        ones(l.ln2_g, &mut data);
    }
    ones(layout.lnf_g, &mut data);

    debug_assert!(data.iter().all(|x| x.as_f64().is_finite()));
    Ok(Parameters { config: config.clone(), data })
}

/// Anything that maps a context to next-step logits. Row `i` of the returned
/// matrix scores the token at position `i + 1` given `ids[..=i]`.
pub trait LanguageModel<T: Real> {
    fn vocab_size(&self) -> usize;
    fn logits(&self, ids: &[u32]) -> Result<Mat<T>, ModelError>;
}

impl<T: Real> LanguageModel<T> for Parameters<T> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn logits(&self, ids: &[u32]) -> Result<Mat<T>, ModelError> {
        Ok(forward(self, ids)?.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ffn: 16,
            vocab_size: 11,
            max_len: 16,
            seed: 7,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let a = init_parameters::<f32>(&cfg).unwrap();
        let b = init_parameters::<f32>(&cfg).unwrap();
        assert_eq!(a.as_flat(), b.as_flat());
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = tiny_config();
        let mut cfg2 = cfg.clone();
        cfg2.seed = 8;
        let a = init_parameters::<f32>(&cfg).unwrap();
        let b = init_parameters::<f32>(&cfg2).unwrap();
        assert_ne!(a.as_flat(), b.as_flat());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut cfg = tiny_config();
        cfg.d_model = 6;
        cfg.n_heads = 4;
        assert!(matches!(init_parameters::<f32>(&cfg), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn layout_spans_are_contiguous_and_cover() {
        let cfg = tiny_config();
        let layout = Layout::of(&cfg);
        let mut at = 0usize;
        let mut check = |span: Span| {
            assert_eq!(span.0, at, "span not contiguous");
            at += span.1;
        };
        check(layout.tok_emb);
        check(layout.pos_emb);
        for l in &layout.layers {
            for span in [
                l.ln1_g, l.ln1_b, l.w_q, l.b_q, l.w_k, l.b_k, l.w_v, l.b_v, l.w_o, l.b_o,
                l.ln2_g, l.ln2_b, l.w_fc, l.b_fc, l.w_proj, l.b_proj,
            ] {
                check(span);
            }
        }
        check(layout.lnf_g);
        check(layout.lnf_b);
        check(layout.w_out);
        assert_eq!(at, layout.total);
    }

    #[test]
    fn init_values_are_finite_and_small() {
        let params = init_parameters::<f64>(&tiny_config()).unwrap();
        assert!(params.as_flat().iter().all(|x| x.is_finite()));
        assert!(params.as_flat().iter().all(|x| x.abs() <= 1.0));
    }
}
