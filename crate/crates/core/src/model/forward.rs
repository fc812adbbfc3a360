//! Forward pass with activation caching.

use crate::mat::Mat;
use crate::real::Real;

use super::{LayerSpans, ModelError, Parameters};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_COEF: f64 = 0.044_715;

/// Numerically stabilized softmax of one logit row (max subtraction).
/// Rejects NaN inputs.
pub fn softmax<T: Real>(row: &[T]) -> Result<Vec<T>, ModelError> {
    if row.iter().any(|x| x.is_nan()) {
        return Err(ModelError::NonFinite("NaN in softmax input".into()));
    }
    let mut out = vec![T::zero(); row.len()];
    softmax_into(row, &mut out);
    Ok(out)
}

/// Softmax without validation; used on rows known to be finite.
#[inline]
pub(crate) fn softmax_into<T: Real>(row: &[T], out: &mut [T]) {
    let mut max = row[0];
    for &x in &row[1..] {
        if x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// y[t] = x[t] W + b for row-major W [d_in, d_out].
pub(crate) fn linear_forward<T: Real>(
    x: &Mat<T>,
    w: &[T],
    b: Option<&[T]>,
    d_in: usize,
    d_out: usize,
    y: &mut Mat<T>,
) {
    debug_assert_eq!(x.cols(), d_in);
    debug_assert_eq!(y.cols(), d_out);
    for t in 0..x.rows() {
        let xr = x.row(t);
        let yr = y.row_mut(t);
        match b {
            Some(b) => yr.copy_from_slice(b),
            None => yr.fill(T::zero()),
        }
        for i in 0..d_in {
            let xi = xr[i];
            let wrow = &w[i * d_out..(i + 1) * d_out];
            for (yj, &wij) in yr.iter_mut().zip(wrow) {
                *yj += xi * wij;
            }
        }
    }
}

/// Per-row layer norm: y = g * (x - mean) / sqrt(var + eps) + b.
/// Records mean and reciprocal std for the backward pass.
pub(crate) fn layernorm_forward<T: Real>(
    x: &Mat<T>,
    gain: &[T],
    bias: &[T],
    y: &mut Mat<T>,
    mean_out: &mut [T],
    rstd_out: &mut [T],
) {
    let d = x.cols();
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LN_EPS);
    for t in 0..x.rows() {
        let xr = x.row(t);
        let mut mean = T::zero();
        for &v in xr {
            mean += v;
        }
        mean *= inv_d;
        let mut var = T::zero();
        for &v in xr {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        mean_out[t] = mean;
        rstd_out[t] = rstd;
        let yr = y.row_mut(t);
        for ((out, &v), (&g, &b)) in yr.iter_mut().zip(xr).zip(gain.iter().zip(bias)) {
            *out = (v - mean) * rstd * g + b;
        }
    }
}

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let scale = T::from_f64(GELU_SCALE);
    let coef = T::from_f64(GELU_COEF);
    let u = scale * (x + coef * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let scale = T::from_f64(GELU_SCALE);
    let coef = T::from_f64(GELU_COEF);
    let three = T::from_f64(3.0);
    let u = scale * (x + coef * x * x * x);
    let th = u.tanh();
    let du = scale * (T::one() + three * coef * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

/// Per-layer activations kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    pub ln1_mean: Vec<T>,
    pub ln1_rstd: Vec<T>,
    pub ln1_out: Mat<T>,
    pub q: Mat<T>,
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// One [T, T] lower-triangular probability matrix per head.
    pub att_probs: Vec<Mat<T>>,
    /// Concatenated per-head context vectors (input to W_o).
    pub att_ctx: Mat<T>,
    pub x_mid: Mat<T>,
    pub ln2_mean: Vec<T>,
    pub ln2_rstd: Vec<T>,
    pub ln2_out: Mat<T>,
    pub fc_pre: Mat<T>,
    pub fc_act: Mat<T>,
}

/// Intermediate activations needed to run [`super::backward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    pub(crate) ids: Vec<u32>,
    /// Residual stream entering each layer; `x[n_layers]` feeds the final norm.
    pub(crate) x: Vec<Mat<T>>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) lnf_mean: Vec<T>,
    pub(crate) lnf_rstd: Vec<T>,
    pub(crate) lnf_out: Mat<T>,
}

/// Logits plus the activation cache from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardResult<T> {
    /// Row t scores the token at position t+1; depends only on ids[..=t].
    pub logits: Mat<T>,
    pub cache: Cache<T>,
}

/// Causal forward pass over a token sequence.
pub fn forward<T: Real>(params: &Parameters<T>, ids: &[u32]) -> Result<ForwardResult<T>, ModelError> {
    let cfg = &params.config;
    if ids.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if ids.len() > cfg.max_len {
        return Err(ModelError::SequenceTooLong { len: ids.len(), max: cfg.max_len });
    }
    if let Some(&bad) = ids.iter().find(|&&id| (id as usize) >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id: bad, vocab: cfg.vocab_size });
    }

    let layout = params.layout();
    let t_len = ids.len();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

    // Embedding sum.
    let tok_emb = params.slice(layout.tok_emb);
    let pos_emb = params.slice(layout.pos_emb);
    let mut x0 = Mat::zeros(t_len, d);
    for (t, &id) in ids.iter().enumerate() {
        let row = x0.row_mut(t);
        let te = &tok_emb[id as usize * d..(id as usize + 1) * d];
        let pe = &pos_emb[t * d..(t + 1) * d];
        for ((o, &a), &b) in row.iter_mut().zip(te).zip(pe) {
            *o = a + b;
        }
    }

    let mut x_states = Vec::with_capacity(cfg.n_layers + 1);
    x_states.push(x0);
    let mut layer_caches = Vec::with_capacity(cfg.n_layers);

    for spans in &layout.layers {
        let x_in = x_states.last().unwrap().clone();
        let (layer_cache, x_out) = layer_forward(params, spans, &x_in, heads, dh, inv_sqrt_dh);
        x_states.push(x_out);
        layer_caches.push(layer_cache);
    }

    // Final norm + output projection.
    let x_final = x_states.last().unwrap();
    let mut lnf_out = Mat::zeros(t_len, d);
    let mut lnf_mean = vec![T::zero(); t_len];
    let mut lnf_rstd = vec![T::zero(); t_len];
    layernorm_forward(
        x_final,
        params.slice(layout.lnf_g),
        params.slice(layout.lnf_b),
        &mut lnf_out,
        &mut lnf_mean,
        &mut lnf_rstd,
    );
    let mut logits = Mat::zeros(t_len, cfg.vocab_size);
    linear_forward(&lnf_out, params.slice(layout.w_out), None, d, cfg.vocab_size, &mut logits);

    Ok(ForwardResult {
        logits,
        cache: Cache {
            ids: ids.to_vec(),
            x: x_states,
            layers: layer_caches,
            lnf_mean,
            lnf_rstd,
            lnf_out,
        },
    })
}

fn layer_forward<T: Real>(
    params: &Parameters<T>,
    spans: &LayerSpans,
    x_in: &Mat<T>,
    heads: usize,
    dh: usize,
    inv_sqrt_dh: T,
) -> (LayerCache<T>, Mat<T>) {
    let t_len = x_in.rows();
    let d = x_in.cols();
    let f = spans.b_fc.1;

    let mut ln1_out = Mat::zeros(t_len, d);
    let mut ln1_mean = vec![T::zero(); t_len];
    let mut ln1_rstd = vec![T::zero(); t_len];
    layernorm_forward(
        x_in,
        params.slice(spans.ln1_g),
        params.slice(spans.ln1_b),
        &mut ln1_out,
        &mut ln1_mean,
        &mut ln1_rstd,
    );

    let mut q = Mat::zeros(t_len, d);
    let mut k = Mat::zeros(t_len, d);
    let mut v = Mat::zeros(t_len, d);
    linear_forward(&ln1_out, params.slice(spans.w_q), Some(params.slice(spans.b_q)), d, d, &mut q);
    linear_forward(&ln1_out, params.slice(spans.w_k), Some(params.slice(spans.b_k)), d, d, &mut k);
    linear_forward(&ln1_out, params.slice(spans.w_v), Some(params.slice(spans.b_v)), d, d, &mut v);

    // Causal attention: row t attends to positions <= t only; the strictly
    // upper triangle of every probability matrix stays zero.
    let mut att_probs = Vec::with_capacity(heads);
    let mut att_ctx = Mat::zeros(t_len, d);
    for h in 0..heads {
        let off = h * dh;
        let mut probs = Mat::zeros(t_len, t_len);
        let mut scores_row = vec![T::zero(); t_len];
        for t in 0..t_len {
            let qr = &q.row(t)[off..off + dh];
            for (s, score) in scores_row.iter_mut().enumerate().take(t + 1) {
                let kr = &k.row(s)[off..off + dh];
                let mut dot = T::zero();
                for (a, b) in qr.iter().zip(kr) {
                    dot += *a * *b;
                }
                *score = dot * inv_sqrt_dh;
            }
            softmax_into(&scores_row[..t + 1], &mut probs.row_mut(t)[..t + 1]);
            let ctx = &mut att_ctx.row_mut(t)[off..off + dh];
            let prow = probs.row(t);
            for s in 0..=t {
                let p = prow[s];
                let vr = &v.row(s)[off..off + dh];
                for (c, &vv) in ctx.iter_mut().zip(vr) {
                    *c += p * vv;
                }
            }
        }
        att_probs.push(probs);
    }

    let mut att_out = Mat::zeros(t_len, d);
    linear_forward(&att_ctx, params.slice(spans.w_o), Some(params.slice(spans.b_o)), d, d, &mut att_out);

    let mut x_mid = x_in.clone();
    for (a, &b) in x_mid.data_mut().iter_mut().zip(att_out.data()) {
        *a += b;
    }

    let mut ln2_out = Mat::zeros(t_len, d);
    let mut ln2_mean = vec![T::zero(); t_len];
    let mut ln2_rstd = vec![T::zero(); t_len];
    layernorm_forward(
        &x_mid,
        params.slice(spans.ln2_g),
        params.slice(spans.ln2_b),
        &mut ln2_out,
        &mut ln2_mean,
        &mut ln2_rstd,
    );

    let mut fc_pre = Mat::zeros(t_len, f);
    linear_forward(&ln2_out, params.slice(spans.w_fc), Some(params.slice(spans.b_fc)), d, f, &mut fc_pre);
    let mut fc_act = Mat::zeros(t_len, f);
    for (a, &p) in fc_act.data_mut().iter_mut().zip(fc_pre.data()) {
        *a = gelu(p);
    }
    let mut proj_out = Mat::zeros(t_len, d);
    linear_forward(&fc_act, params.slice(spans.w_proj), Some(params.slice(spans.b_proj)), f, d, &mut proj_out);

    let mut x_out = x_mid.clone();
    for (a, &b) in x_out.data_mut().iter_mut().zip(proj_out.data()) {
        *a += b;
    }

    (
        LayerCache {
            ln1_mean,
            ln1_rstd,
            ln1_out,
            q,
            k,
            v,
            att_probs,
            att_ctx,
            x_mid,
            ln2_mean,
            ln2_rstd,
            ln2_out,
            fc_pre,
            fc_act,
        },
        x_out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ffn: 16,
            vocab_size: 11,
            max_len: 12,
            seed: 3,
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0f64, 0.0, 0.0, 0.0]).unwrap();
        for &x in &p {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_preserves_argmax() {
        let row = [0.3f64, -1.2, 2.5, 2.4, 0.0];
        let p = softmax(&row).unwrap();
        let arg_in = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let arg_out = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(arg_in, arg_out);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn forward_rows_are_distributions() {
        let params = init_parameters::<f64>(&cfg()).unwrap();
        let out = forward(&params, &[1, 2, 3, 4, 5]).unwrap();
        for t in 0..5 {
            let p = softmax(out.logits.row(t)).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_causal() {
        let params = init_parameters::<f64>(&cfg()).unwrap();
        let base = forward(&params, &[1, 2, 3, 4, 5]).unwrap();
        // Perturb position 3; rows 0..3 must not change at all.
        let changed = forward(&params, &[1, 2, 3, 9, 5]).unwrap();
        for t in 0..3 {
            assert_eq!(base.logits.row(t), changed.logits.row(t), "row {t} changed");
        }
        assert_ne!(base.logits.row(3), changed.logits.row(3));
    }

    #[test]
    fn forward_is_pure() {
        let params = init_parameters::<f32>(&cfg()).unwrap();
        let a = forward(&params, &[0, 1, 2]).unwrap();
        let b = forward(&params, &[0, 1, 2]).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn forward_validates_inputs() {
        let params = init_parameters::<f32>(&cfg()).unwrap();
        assert!(matches!(forward(&params, &[]), Err(ModelError::EmptySequence)));
        assert!(matches!(
            forward(&params, &[11]),
            Err(ModelError::TokenOutOfRange { .. })
        ));
        let too_long: Vec<u32> = vec![0; 13];
        assert!(matches!(
            forward(&params, &too_long),
            Err(ModelError::SequenceTooLong { .. })
        ));
    }
}
