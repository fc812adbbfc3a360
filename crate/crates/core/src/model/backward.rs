//! Exact backpropagation through the forward pass in `forward.rs`.

use crate::mat::Mat;
use crate::real::Real;

use super::forward::{gelu_grad, Cache, LayerCache};
use super::{GradientBundle, LayerSpans, ModelError, Parameters, Span};

/// dx[t,i] = sum_j dy[t,j] w[i,j]; accumulates dw and db.
fn linear_backward<T: Real>(
    x: &Mat<T>,
    w: &[T],
    dy: &Mat<T>,
    d_in: usize,
    d_out: usize,
    dx: &mut Mat<T>,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    for t in 0..x.rows() {
        let dyr = dy.row(t);
        let xr = x.row(t);
        let dxr = dx.row_mut(t);
        for i in 0..d_in {
            let wrow = &w[i * d_out..(i + 1) * d_out];
            let dwrow = &mut dw[i * d_out..(i + 1) * d_out];
            let xi = xr[i];
            let mut acc = T::zero();
            for ((&dyj, &wij), dwij) in dyr.iter().zip(wrow).zip(dwrow.iter_mut()) {
                acc += dyj * wij;
                *dwij += xi * dyj;
            }
            dxr[i] = acc;
        }
    }
    if let Some(db) = db {
        for t in 0..dy.rows() {
            for (b, &g) in db.iter_mut().zip(dy.row(t)) {
                *b += g;
            }
        }
    }
}

/// Backward through y = gain * (x - mean) * rstd + bias.
fn layernorm_backward<T: Real>(
    x: &Mat<T>,
    gain: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &Mat<T>,
    dx: &mut Mat<T>,
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let d = x.cols();
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for t in 0..x.rows() {
        let xr = x.row(t);
        let dyr = dy.row(t);
        let m = mean[t];
        let r = rstd[t];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            xhat[i] = (xr[i] - m) * r;
            dxhat[i] = dyr[i] * gain[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
            dgain[i] += dyr[i] * xhat[i];
            dbias[i] += dyr[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let dxr = dx.row_mut(t);
        for i in 0..d {
            dxr[i] = r * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
}

/// Gradient of every parameter for a loss whose logit gradient is `dlogits`.
pub fn backward<T: Real>(
    params: &Parameters<T>,
    cache: &Cache<T>,
    dlogits: &Mat<T>,
) -> Result<GradientBundle<T>, ModelError> {
    let cfg = &params.config;
    let t_len = cache.ids.len();
    if dlogits.rows() != t_len || dlogits.cols() != cfg.vocab_size {
        return Err(ModelError::ShapeMismatch(format!(
            "dlogits is {}x{}, expected {}x{}",
            dlogits.rows(),
            dlogits.cols(),
            t_len,
            cfg.vocab_size
        )));
    }
    let layout = params.layout();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut grads = GradientBundle::zeros(cfg);

    // Output projection (no bias), then the final norm.
    let mut dlnf_out = Mat::zeros(t_len, d);
    {
        let dw_out = span_mut(grads.as_flat_mut(), layout.w_out);
        linear_backward(
            &cache.lnf_out,
            params.slice(layout.w_out),
            dlogits,
            d,
            cfg.vocab_size,
            &mut dlnf_out,
            dw_out,
            None,
        );
    }
    let mut dx = Mat::zeros(t_len, d);
    {
        let (dgain, dbias) = split_two(grads.as_flat_mut(), layout.lnf_g, layout.lnf_b);
        layernorm_backward(
            &cache.x[cfg.n_layers],
            params.slice(layout.lnf_g),
            &cache.lnf_mean,
            &cache.lnf_rstd,
            &dlnf_out,
            &mut dx,
            dgain,
            dbias,
        );
    }

    for l in (0..cfg.n_layers).rev() {
        dx = layer_backward(
            params,
            &layout.layers[l],
            &cache.layers[l],
            &cache.x[l],
            &dx,
            &mut grads,
            heads,
            dh,
            inv_sqrt_dh,
        );
    }

    // Embedding scatter.
    let dtok = grads.slice_mut(layout.tok_emb);
    for (t, &id) in cache.ids.iter().enumerate() {
        let src = dx.row(t);
        let dst = &mut dtok[id as usize * d..(id as usize + 1) * d];
        for (a, &b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
    let dpos = grads.slice_mut(layout.pos_emb);
    for t in 0..t_len {
        let src = dx.row(t);
        let dst = &mut dpos[t * d..(t + 1) * d];
        for (a, &b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }

    Ok(grads)
}

fn span_mut<T>(data: &mut [T], span: Span) -> &mut [T] {
    &mut data[span.0..span.0 + span.1]
}

/// Two disjoint mutable spans out of the flat gradient buffer.
fn split_two<T>(data: &mut [T], a: Span, b: Span) -> (&mut [T], &mut [T]) {
    assert!(a.0 + a.1 <= b.0, "spans must be ordered and disjoint");
    let (left, right) = data.split_at_mut(b.0);
    (&mut left[a.0..a.0 + a.1], &mut right[..b.1])
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Real>(
    params: &Parameters<T>,
    spans: &LayerSpans,
    lc: &LayerCache<T>,
    x_in: &Mat<T>,
    dx_out: &Mat<T>,
    grads: &mut GradientBundle<T>,
    heads: usize,
    dh: usize,
    inv_sqrt_dh: T,
) -> Mat<T> {
    let t_len = dx_out.rows();
    let d = dx_out.cols();
    let f = spans.b_fc.1;

    // x_out = x_mid + proj(gelu(fc(ln2(x_mid)))): the residual copies dx_out.
    let mut dx_mid = dx_out.clone();

    // FFN path.
    let mut dfc_act = Mat::zeros(t_len, f);
    {
        let (dw_proj, db_proj) = split_two(grads.as_flat_mut(), spans.w_proj, spans.b_proj);
        linear_backward(
            &lc.fc_act,
            params.slice(spans.w_proj),
            dx_out,
            f,
            d,
            &mut dfc_act,
            dw_proj,
            Some(db_proj),
        );
    }
    let mut dfc_pre = dfc_act;
    for (g, &pre) in dfc_pre.data_mut().iter_mut().zip(lc.fc_pre.data()) {
        *g = *g * gelu_grad(pre);
    }
    let mut dln2_out = Mat::zeros(t_len, d);
    {
        let (dw_fc, db_fc) = split_two(grads.as_flat_mut(), spans.w_fc, spans.b_fc);
        linear_backward(
            &lc.ln2_out,
            params.slice(spans.w_fc),
            &dfc_pre,
            d,
            f,
            &mut dln2_out,
            dw_fc,
            Some(db_fc),
        );
    }
    {
        let mut dx_mid_ln = Mat::zeros(t_len, d);
        let (dgain, dbias) = split_two(grads.as_flat_mut(), spans.ln2_g, spans.ln2_b);
        layernorm_backward(
            &lc.x_mid,
            params.slice(spans.ln2_g),
            &lc.ln2_mean,
            &lc.ln2_rstd,
            &dln2_out,
            &mut dx_mid_ln,
            dgain,
            dbias,
        );
        for (a, &b) in dx_mid.data_mut().iter_mut().zip(dx_mid_ln.data()) {
            *a += b;
        }
    }

    // x_mid = x_in + attn_out: residual copies dx_mid into both branches.
    let mut dx_in = dx_mid.clone();

    // Attention output projection.
    let mut datt_ctx = Mat::zeros(t_len, d);
    {
        let (dw_o, db_o) = split_two(grads.as_flat_mut(), spans.w_o, spans.b_o);
        linear_backward(
            &lc.att_ctx,
            params.slice(spans.w_o),
            &dx_mid,
            d,
            d,
            &mut datt_ctx,
            dw_o,
            Some(db_o),
        );
    }

    // Attention core, head by head.
    let mut dq = Mat::zeros(t_len, d);
    let mut dk = Mat::zeros(t_len, d);
    let mut dv = Mat::zeros(t_len, d);
    let mut dprobs_row = vec![T::zero(); t_len];
    for h in 0..heads {
        let off = h * dh;
        let probs = &lc.att_probs[h];
        for t in 0..t_len {
            let dctx = &datt_ctx.row(t)[off..off + dh];
            let prow = probs.row(t);
            // dprobs and dv.
            for s in 0..=t {
                let vr = &lc.v.row(s)[off..off + dh];
                let mut dot = T::zero();
                for (a, b) in dctx.iter().zip(vr) {
                    dot += *a * *b;
                }
                dprobs_row[s] = dot;
                let p = prow[s];
                let dvr = &mut dv.row_mut(s)[off..off + dh];
                for (dvi, &di) in dvr.iter_mut().zip(dctx) {
                    *dvi += p * di;
                }
            }
            // Softmax backward on the causal row.
            let mut inner = T::zero();
            for s in 0..=t {
                inner += prow[s] * dprobs_row[s];
            }
            // dscores -> dq, dk (scores were scaled by 1/sqrt(dh)).
            let qr: Vec<T> = lc.q.row(t)[off..off + dh].to_vec();
            let dqr = &mut dq.row_mut(t)[off..off + dh];
            for s in 0..=t {
                let dscore = prow[s] * (dprobs_row[s] - inner) * inv_sqrt_dh;
                if dscore == T::zero() {
                    continue;
                }
                let kr = &lc.k.row(s)[off..off + dh];
                for (dqi, &ki) in dqr.iter_mut().zip(kr) {
                    *dqi += dscore * ki;
                }
                let dkr = &mut dk.row_mut(s)[off..off + dh];
                for (dki, &qi) in dkr.iter_mut().zip(&qr) {
                    *dki += dscore * qi;
                }
            }
        }
    }

    // Back through the three input projections into ln1_out.
    let mut dln1_out = Mat::zeros(t_len, d);
    {
        let mut tmp = Mat::zeros(t_len, d);
        let (dw_q, db_q) = split_two(grads.as_flat_mut(), spans.w_q, spans.b_q);
        linear_backward(&lc.ln1_out, params.slice(spans.w_q), &dq, d, d, &mut tmp, dw_q, Some(db_q));
        for (a, &b) in dln1_out.data_mut().iter_mut().zip(tmp.data()) {
            *a += b;
        }
        let (dw_k, db_k) = split_two(grads.as_flat_mut(), spans.w_k, spans.b_k);
        linear_backward(&lc.ln1_out, params.slice(spans.w_k), &dk, d, d, &mut tmp, dw_k, Some(db_k));
        for (a, &b) in dln1_out.data_mut().iter_mut().zip(tmp.data()) {
            *a += b;
        }
        let (dw_v, db_v) = split_two(grads.as_flat_mut(), spans.w_v, spans.b_v);
        linear_backward(&lc.ln1_out, params.slice(spans.w_v), &dv, d, d, &mut tmp, dw_v, Some(db_v));
        for (a, &b) in dln1_out.data_mut().iter_mut().zip(tmp.data()) {
            *a += b;
        }
    }
    {
        let mut dx_in_ln = Mat::zeros(t_len, d);
        let (dgain, dbias) = split_two(grads.as_flat_mut(), spans.ln1_g, spans.ln1_b);
        layernorm_backward(
            x_in,
            params.slice(spans.ln1_g),
            &lc.ln1_mean,
            &lc.ln1_rstd,
            &dln1_out,
            &mut dx_in_ln,
            dgain,
            dbias,
        );
        for (a, &b) in dx_in.data_mut().iter_mut().zip(dx_in_ln.data()) {
            *a += b;
        }
    }

    dx_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_parameters, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ffn: 16,
            vocab_size: 11,
            max_len: 12,
            seed: 9,
        }
    }

    #[test]
    fn zero_dlogits_gives_zero_grads() {
        let params = init_parameters::<f64>(&cfg()).unwrap();
        let out = forward(&params, &[1, 2, 3]).unwrap();
        let dlogits = Mat::zeros(3, 11);
        let grads = backward(&params, &out.cache, &dlogits).unwrap();
        assert!(grads.as_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_are_additive_in_dlogits() {
        let params = init_parameters::<f64>(&cfg()).unwrap();
        let out = forward(&params, &[1, 2, 3, 4]).unwrap();
        let mut d1 = Mat::zeros(4, 11);
        let mut d2 = Mat::zeros(4, 11);
        d1.set(0, 3, 1.0);
        d1.set(2, 5, -0.5);
        d2.set(3, 1, 2.0);
        d2.set(1, 9, 0.25);
        let mut dsum = d1.clone();
        for (a, &b) in dsum.data_mut().iter_mut().zip(d2.data()) {
            *a += b;
        }
        let g1 = backward(&params, &out.cache, &d1).unwrap();
        let g2 = backward(&params, &out.cache, &d2).unwrap();
        let gsum = backward(&params, &out.cache, &dsum).unwrap();
        for i in 0..gsum.len() {
            let expect = g1.as_flat()[i] + g2.as_flat()[i];
            assert!(
                (gsum.as_flat()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()),
                "index {i}: {} vs {}",
                gsum.as_flat()[i],
                expect
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = init_parameters::<f64>(&cfg()).unwrap();
        let out = forward(&params, &[1, 2, 3]).unwrap();
        let bad = Mat::zeros(2, 11);
        assert!(matches!(
            backward(&params, &out.cache, &bad),
            Err(ModelError::ShapeMismatch(_))
        ));
    }
}
