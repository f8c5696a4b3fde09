//! Full forward pass, losses and score fusion.

use super::blocks::{inference_transformer, semantic_transformer, visual_encoder, ForwardTrace};
use super::encode::embed_persons;
use super::{ModelError, ModelState, Result};
use crate::knowledge::{cp_lookup, BBox, CcMap, CpMap};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One scene as the model consumes it: a global feature grid, per-person
/// part features, geometry and ground-truth labels.
#[derive(Clone)]
pub struct SceneSample<T: Scalar> {
    pub scene_id: String,
    /// Pixel size of the frame the bboxes live in.
    pub frame: (u32, u32),
    /// Global scene information X: (H_f, W_f, C) feature grid.
    pub scene_feature: Tensor<T>,
    /// Raw person features: (N, P, C).
    pub person_features: Tensor<T>,
    pub bboxes: Vec<BBox>,
    /// y_a: one action index per person.
    pub action_targets: Vec<usize>,
    /// y_g: the scene's group activity index.
    pub group_target: usize,
}

/// The five classification outputs. The `o`-branch heads are absent when
/// the semantic branch is disabled (the visual-only baseline).
pub struct Predictions<T: Scalar> {
    /// ŷ_a from X̂: (N, K) logits.
    pub ya_x: Tensor<T>,
    /// ŷ_g from X̂: (G,) logits.
    pub yg_x: Tensor<T>,
    /// ŷ_a from Ō: (N, K) logits.
    pub ya_o: Option<Tensor<T>>,
    /// ŷ_g from Ō: (G,) logits.
    pub yg_o: Option<Tensor<T>>,
    /// ŷ_g from the global scene feature: (G,) logits.
    pub yg_s: Tensor<T>,
}

/// Scalar loss terms; `total` is exactly the sum the graph computed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub l_x: f64,
    pub l_o: f64,
    pub l_s: f64,
    pub total: f64,
}

/// Runs the network. With `semantic` off only the visual representation and
/// the scene head are evaluated (the ablation baseline); the knowledge maps
/// enter solely as attention biases, so all-zero maps reproduce the
/// unbiased architecture bit for bit.
pub fn forward<T: Scalar>(
    state: &ModelState<T>,
    sample: &SceneSample<T>,
    cc: &CcMap<T>,
    cp: &CpMap<T>,
    semantic: bool,
) -> Result<Predictions<T>> {
    forward_impl(state, sample, cc, cp, semantic, None)
}

/// Same as [`forward`] but also returns the attention weights observed at
/// every site, for invariant checks and inspection.
pub fn forward_traced<T: Scalar>(
    state: &ModelState<T>,
    sample: &SceneSample<T>,
    cc: &CcMap<T>,
    cp: &CpMap<T>,
    semantic: bool,
) -> Result<(Predictions<T>, ForwardTrace<T>)> {
    let mut trace = ForwardTrace::new();
    let pred = forward_impl(state, sample, cc, cp, semantic, Some(&mut trace))?;
    Ok((pred, trace))
}

fn forward_impl<T: Scalar>(
    state: &ModelState<T>,
    sample: &SceneSample<T>,
    cc: &CcMap<T>,
    cp: &CpMap<T>,
    semantic: bool,
    mut trace: Option<&mut ForwardTrace<T>>,
) -> Result<Predictions<T>> {
    let cfg = state.config();
    let n = sample.bboxes.len();
    if n == 0 || sample.action_targets.len() != n {
        return Err(ModelError::Config(format!(
            "scene {} has {} bboxes and {} action targets",
            sample.scene_id,
            n,
            sample.action_targets.len()
        )));
    }
    if sample.group_target >= cfg.group_classes {
        return Err(ModelError::Config(format!(
            "scene {}: group target {} out of range",
            sample.scene_id, sample.group_target
        )));
    }
    if sample.scene_feature.rank() != 3
        || sample.scene_feature.shape()[2] != cfg.feature_dim
    {
        return Err(ModelError::Config(format!(
            "scene feature must be (H, W, {}), got {:?}",
            cfg.feature_dim,
            sample.scene_feature.shape()
        )));
    }

    let params = state.params();
    let head = |x: &Tensor<T>, name: &str| -> Result<Tensor<T>> {
        x.linear(
            params.get(&format!("{name}.w"))?,
            Some(params.get(&format!("{name}.b"))?),
        )
        .map_err(ModelError::from)
    };

    let x_bar = embed_persons(state, sample)?;

    // scene head over the mean-pooled global feature
    let yg_s = head(&sample.scene_feature.mean_pool_2d()?, "head.scene")?;

    if !semantic {
        // Visual-only baseline: classify straight from X̄ (parts averaged).
        let person_repr = x_bar.mean_axis(1)?;
        let ya_x = head(&person_repr, "head.action_x")?;
        let yg_x = head(&person_repr.mean_axis(0)?, "head.group_x")?;
        return Ok(Predictions {
            ya_x,
            yg_x,
            ya_o: None,
            yg_o: None,
            yg_s,
        });
    }

    let x_hat = visual_encoder(state, &x_bar, trace.as_deref_mut())?;
    let ya_x = head(&x_hat, "head.action_x")?;
    let yg_x = head(&x_hat.mean_axis(0)?, "head.group_x")?;

    let y = state.embed_labels()?;
    let y_hat = semantic_transformer(state, &y, cc, trace.as_deref_mut())?;
    let cp_bias = cp_lookup(cp, &sample.bboxes);
    let o_bar = inference_transformer(state, &x_hat, &y_hat, &cp_bias, trace)?;

    let ya_o = head(&o_bar, "head.action_o")?;
    let yg_o = head(&o_bar.mean_axis(0)?, "head.group_o")?;

    Ok(Predictions {
        ya_x,
        yg_x,
        ya_o: Some(ya_o),
        yg_o: Some(yg_o),
        yg_s,
    })
}

/// Loss of one scene: per branch, group cross-entropy plus λ times the
/// person-action cross-entropy (averaged over persons); the scene branch is
/// group-only. Returns the numeric breakdown and the scalar graph node.
pub fn compute_loss<T: Scalar>(
    pred: &Predictions<T>,
    action_targets: &[usize],
    group_target: usize,
    lambda: f64,
) -> Result<(LossBreakdown, Tensor<T>)> {
    let lam = T::from_config(lambda);
    let group = [group_target];

    let l_x = pred
        .yg_x
        .cross_entropy(&group)?
        .add(&pred.ya_x.cross_entropy(action_targets)?.scale(lam))?;
    let l_o = match (&pred.ya_o, &pred.yg_o) {
        (Some(ya), Some(yg)) => Some(
            yg.cross_entropy(&group)?
                .add(&ya.cross_entropy(action_targets)?.scale(lam))?,
        ),
        _ => None,
    };
    let l_s = pred.yg_s.cross_entropy(&group)?;

    let partial = match &l_o {
        Some(o) => l_x.add(o)?,
        None => l_x.clone(),
    };
    let total = partial.add(&l_s)?;

    let breakdown = LossBreakdown {
        l_x: l_x.item()?.as_f64(),
        l_o: l_o.as_ref().map(|t| t.item()).transpose()?.map_or(0.0, |v| v.as_f64()),
        l_s: l_s.item()?.as_f64(),
        total: total.item()?.as_f64(),
    };
    Ok((breakdown, total))
}

fn softmax_slice<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = T::zero();
    for &e in &exps {
        sum = sum + e;
    }
    exps.iter().map(|&e| e / sum).collect()
}

/// Final group score: the sum of the available group heads' softmax
/// probabilities. The argmax of this vector is the predicted activity.
pub fn fuse_scores<T: Scalar>(pred: &Predictions<T>) -> Vec<T> {
    let mut fused = softmax_slice(pred.yg_x.data());
    if let Some(yg_o) = &pred.yg_o {
        for (f, p) in fused.iter_mut().zip(softmax_slice(yg_o.data())) {
            *f = *f + p;
        }
    }
    for (f, p) in fused.iter_mut().zip(softmax_slice(pred.yg_s.data())) {
        *f = *f + p;
    }
    fused
}

/// Index of the largest score; ties resolve to the first maximum.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate() {
        if *v > scores[best] {
            best = i;
        }
    }
    best
}
