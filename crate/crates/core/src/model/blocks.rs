//! The three transformer blocks and their knowledge biases.
//!
//! All blocks share one attention primitive: scaled dot-product weights,
//! softmax, then an optional additive bias on the weights *before* the
//! weighted sum over values. Biased rows are deliberately not renormalized.

use super::{ModelError, ModelState, Result};
use crate::knowledge::CcMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Attention weights observed at one site during a forward pass.
pub struct AttentionRecord<T: Scalar> {
    /// Block and head, e.g. `semantic.h0`.
    pub site: String,
    /// Post-softmax weights, before any bias is added.
    pub weights: Tensor<T>,
    /// The additive bias applied to the weights, when the site has one.
    pub bias: Option<Tensor<T>>,
}

/// Per-site attention records collected by `forward_traced`.
#[derive(Default)]
pub struct ForwardTrace<T: Scalar> {
    pub attention: Vec<AttentionRecord<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn new() -> Self {
        ForwardTrace {
            attention: Vec::new(),
        }
    }
}

/// One head: `softmax(q_in·Wq · (kv_in·Wk)ᵀ / √d) (+ bias) · kv_in·Wv`.
/// Returns the head output and the pre-bias attention matrix.
pub fn attention_head<T: Scalar>(
    q_in: &Tensor<T>,
    kv_in: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = wq.shape()[1];
    let q = q_in.matmul(wq)?;
    let k = kv_in.matmul(wk)?;
    let v = kv_in.matmul(wv)?;
    let inv_sqrt_d = T::one() / T::from_usize(d).unwrap().sqrt();
    let attn = q.matmul(&k.transpose()?)?.scale(inv_sqrt_d).softmax_rows();
    let weights = match bias {
        Some(b) => attn.add(b)?,
        None => attn.clone(),
    };
    Ok((weights.matmul(&v)?, attn))
}

/// Runs `heads` attention heads with parameters under `prefix`, concatenates
/// the outputs and applies the integration layer `prefix.f`.
fn multi_head<T: Scalar>(
    state: &ModelState<T>,
    prefix: &str,
    heads: usize,
    q_in: &Tensor<T>,
    kv_in: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    site: &str,
    mut trace: Option<&mut ForwardTrace<T>>,
) -> Result<Tensor<T>> {
    let params = state.params();
    let mut outputs = Vec::with_capacity(heads);
    for i in 0..heads {
        let wq = params.get(&format!("{prefix}.h{i}.wq"))?;
        let wk = params.get(&format!("{prefix}.h{i}.wk"))?;
        let wv = params.get(&format!("{prefix}.h{i}.wv"))?;
        let (h, attn) = attention_head(q_in, kv_in, wq, wk, wv, bias)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.attention.push(AttentionRecord {
                site: format!("{site}.h{i}"),
                weights: attn,
                bias: bias.cloned(),
            });
        }
        outputs.push(h);
    }
    let refs: Vec<&Tensor<T>> = outputs.iter().collect();
    let cat = Tensor::concat_last(&refs)?;
    cat.linear(
        params.get(&format!("{prefix}.f.w"))?,
        Some(params.get(&format!("{prefix}.f.b"))?),
    )
    .map_err(ModelError::from)
}

fn feed_forward<T: Scalar>(
    state: &ModelState<T>,
    prefix: &str,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let params = state.params();
    let h = x
        .linear(
            params.get(&format!("{prefix}.w1"))?,
            Some(params.get(&format!("{prefix}.b1"))?),
        )?
        .relu();
    h.linear(
        params.get(&format!("{prefix}.w2"))?,
        Some(params.get(&format!("{prefix}.b2"))?),
    )
    .map_err(ModelError::from)
}

fn post_norm<T: Scalar>(
    state: &ModelState<T>,
    norm: &str,
    residual: &Tensor<T>,
    sublayer: &Tensor<T>,
) -> Result<Tensor<T>> {
    let params = state.params();
    residual
        .add(sublayer)?
        .layer_norm(
            params.get(&format!("{norm}.gain"))?,
            params.get(&format!("{norm}.bias"))?,
        )
        .map_err(ModelError::from)
}

/// Semantic transformer over the label embeddings Y (K, D): self-attention
/// with the class-class map added to every head's weights, multi-head
/// integration, then residual + norm + FFN + residual + norm.
pub fn semantic_transformer<T: Scalar>(
    state: &ModelState<T>,
    y: &Tensor<T>,
    cc: &CcMap<T>,
    trace: Option<&mut ForwardTrace<T>>,
) -> Result<Tensor<T>> {
    let cfg = state.config();
    if cc.action_count() != cfg.action_classes {
        return Err(ModelError::Config(format!(
            "class-class map is {}x{0}, model expects {1}x{1}",
            cc.action_count(),
            cfg.action_classes
        )));
    }
    let bias = cc.to_tensor().scale(T::from_config(cfg.cc_gain));
    let att = multi_head(
        state,
        "sem",
        cfg.heads_enc,
        y,
        y,
        Some(&bias),
        "semantic",
        trace,
    )?;
    let t = post_norm(state, "sem.norm1", y, &att)?;
    let f = feed_forward(state, "sem.ffn", &t)?;
    post_norm(state, "sem.norm2", &t, &f)
}

/// Conventional vision-transformer encoder over the N·P part tokens (no
/// knowledge bias), followed by the per-person part-collapse MLP.
/// Yields the refined individual representation X̂ as an (N, D) matrix.
pub fn visual_encoder<T: Scalar>(
    state: &ModelState<T>,
    x_bar: &Tensor<T>,
    trace: Option<&mut ForwardTrace<T>>,
) -> Result<Tensor<T>> {
    let cfg = state.config();
    let shape = x_bar.shape().to_vec();
    if shape.len() != 3 || shape[1] != cfg.parts || shape[2] != cfg.embed_dim {
        return Err(ModelError::Config(format!(
            "visual encoder expects (N, {}, {}), got {shape:?}",
            cfg.parts, cfg.embed_dim
        )));
    }
    let n = shape[0];
    let tokens = x_bar.reshape(&[n * cfg.parts, cfg.embed_dim])?;
    let att = multi_head(
        state,
        "venc",
        cfg.heads_enc,
        &tokens,
        &tokens,
        None,
        "visual_encoder",
        trace,
    )?;
    let t = post_norm(state, "venc.norm1", &tokens, &att)?;
    let f = feed_forward(state, "venc.ffn", &t)?;
    let refined = post_norm(state, "venc.norm2", &t, &f)?;

    let params = state.params();
    let flat = refined.reshape(&[n, cfg.parts * cfg.embed_dim])?;
    let hidden = flat
        .linear(params.get("parts.w1")?, Some(params.get("parts.b1")?))?
        .relu();
    hidden
        .linear(params.get("parts.w2")?, Some(params.get("parts.b2")?))
        .map_err(ModelError::from)
}

/// Visual-semantic inference transformer.
///
/// Encoder: unbiased self-attention over the person representations,
/// summed with the input and normalized (X̃). Decoder: cross-attention from
/// X̃ queries to the semantic features Ŷ with the per-person class-position
/// rows added to the weights, then residual + norm + FFN + residual + norm.
pub fn inference_transformer<T: Scalar>(
    state: &ModelState<T>,
    x_collapsed: &Tensor<T>,
    y_hat: &Tensor<T>,
    cp_bias: &Tensor<T>,
    trace: Option<&mut ForwardTrace<T>>,
) -> Result<Tensor<T>> {
    let cfg = state.config();
    let n = x_collapsed.shape()[0];
    if cp_bias.shape() != [n, cfg.action_classes] {
        return Err(ModelError::Config(format!(
            "class-position bias must be ({n}, {}), got {:?}",
            cfg.action_classes,
            cp_bias.shape()
        )));
    }
    let mut trace = trace;
    let enc_att = multi_head(
        state,
        "ienc",
        cfg.heads_enc,
        x_collapsed,
        x_collapsed,
        None,
        "interaction_encoder",
        trace.as_deref_mut(),
    )?;
    let x_tilde = post_norm(state, "ienc.norm", x_collapsed, &enc_att)?;

    let bias = cp_bias.scale(T::from_config(cfg.cp_gain));
    let cross = multi_head(
        state,
        "dec",
        cfg.heads_dec,
        &x_tilde,
        y_hat,
        Some(&bias),
        "decoder",
        trace,
    )?;
    let t = post_norm(state, "dec.norm1", &x_tilde, &cross)?;
    let f = feed_forward(state, "dec.ffn", &t)?;
    post_norm(state, "dec.norm2", &t, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Worked Eq. 4 case: K=2, d=1, weights forcing uniform attention.
    /// A = [[.5,.5],[.5,.5]], P = [[.1,.4],[.4,.1]] → weights [[.6,.9],[.9,.6]],
    /// so h = [[.6 v0 + .9 v1], [.9 v0 + .6 v1]] for values v = Y·Wv.
    #[test]
    fn biased_head_matches_scalar_arithmetic() {
        let y = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let zero_w = Tensor::new(&[2, 1], vec![0.0, 0.0]).unwrap();
        let wv = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::new(&[2, 2], vec![0.1, 0.4, 0.4, 0.1]).unwrap();
        let (h, attn) = attention_head(&y, &y, &zero_w, &zero_w, &wv, Some(&bias)).unwrap();
        for &a in attn.data() {
            assert!((a - 0.5).abs() < 1e-15);
        }
        // v = [3.0, -0.5]
        let expected = [0.6 * 3.0 + 0.9 * (-0.5), 0.9 * 3.0 + 0.6 * (-0.5)];
        for (hv, ev) in h.data().iter().zip(&expected) {
            assert!((hv - ev).abs() < 1e-12, "{hv} vs {ev}");
        }
    }

    /// Cross-attention N=1, K=2, d=1 case from the same arithmetic:
    /// A = [.5,.5], bias [.2,.1] → h = [.7 v0 + .6 v1].
    #[test]
    fn biased_cross_head_matches_scalar_arithmetic() {
        let x = Tensor::<f64>::new(&[1, 2], vec![0.3, -0.7]).unwrap();
        let y = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let zero_w = Tensor::new(&[2, 1], vec![0.0, 0.0]).unwrap();
        let wv = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::new(&[1, 2], vec![0.2, 0.1]).unwrap();
        let (h, _) = attention_head(&x, &y, &zero_w, &zero_w, &wv, Some(&bias)).unwrap();
        let expected = 0.7 * 3.0 + 0.6 * (-0.5);
        assert!((h.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn pre_bias_rows_are_stochastic_and_bias_shifts_row_sums() {
        let q = Tensor::<f64>::new(&[3, 4], (0..12).map(|v| v as f64 * 0.13 - 0.7).collect())
            .unwrap();
        let k = Tensor::<f64>::new(&[5, 4], (0..20).map(|v| (v as f64).sin()).collect()).unwrap();
        let wq = Tensor::new(&[4, 2], vec![0.2, -0.1, 0.4, 0.3, -0.2, 0.5, 0.1, 0.6]).unwrap();
        let bias =
            Tensor::<f64>::new(&[3, 5], (0..15).map(|v| v as f64 * 0.01).collect()).unwrap();
        let (_, attn) = attention_head(&q, &k, &wq, &wq, &wq, Some(&bias)).unwrap();
        for row in attn.data().chunks(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let biased = attn.add(&bias).unwrap();
        for (row, brow) in biased.data().chunks(5).zip(bias.data().chunks(5)) {
            let sum: f64 = row.iter().sum();
            let bias_sum: f64 = brow.iter().sum();
            assert!((sum - (1.0 + bias_sum)).abs() < 1e-12);
        }
    }
}
