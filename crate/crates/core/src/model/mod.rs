//! The knowledge-augmented relation inference network.
//!
//! Pipeline per scene: person features are embedded with a 2-D positional
//! encoding, refined by a vision-transformer encoder, and cross-attended
//! against semantic label embeddings whose self-attention carries the
//! class-class bias; the cross-attention weights carry each person's
//! class-position row. Five classification heads feed the losses and the
//! fused group score.

mod blocks;
mod config;
mod encode;
mod forward;
mod state;

pub use blocks::{
    attention_head, inference_transformer, semantic_transformer, visual_encoder,
    AttentionRecord, ForwardTrace,
};
pub use config::ModelConfig;
pub use encode::{embed_persons, positional_encode};
pub use forward::{
    argmax, compute_loss, forward, forward_traced, fuse_scores, LossBreakdown, Predictions,
    SceneSample,
};
pub use state::ModelState;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Knowledge(#[from] crate::knowledge::KnowledgeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<V> = std::result::Result<V, ModelError>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{
        build_cc_map, build_cp_map, parse_annotations, BBox, CcMap, CpMap, MapGrid,
    };
    use crate::rng::substream;
    use crate::tensor::{grad_check, ParamSet, Tensor};
    use rand::Rng;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            action_classes: 4,
            group_classes: 3,
            persons: 4,
            parts: 1,
            feature_dim: 6,
            embed_dim: 8,
            head_dim: 4,
            heads_enc: 2,
            heads_dec: 1,
            ffn_dim: 16,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn toy_sample(cfg: &ModelConfig, seed: u64) -> SceneSample<f64> {
        let mut rng = substream(seed, "toy-sample");
        let n = cfg.persons;
        let frame = (320u32, 240u32);
        let feat_len = n * cfg.parts * cfg.feature_dim;
        let person_features = Tensor::new(
            &[n, cfg.parts, cfg.feature_dim],
            (0..feat_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let scene_feature = Tensor::new(
            &[2, 2, cfg.feature_dim],
            (0..4 * cfg.feature_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let bboxes = (0..n)
            .map(|_| {
                let cx = rng.random_range(20.0..300.0);
                let cy = rng.random_range(20.0..220.0);
                BBox::new(cx - 10.0, cy - 10.0, cx + 10.0, cy + 10.0)
            })
            .collect();
        let action_targets = (0..n)
            .map(|_| rng.random_range(0..cfg.action_classes))
            .collect();
        SceneSample {
            scene_id: format!("toy-{seed}"),
            frame,
            scene_feature,
            person_features,
            bboxes,
            action_targets,
            group_target: rng.random_range(0..cfg.group_classes),
        }
    }

    /// Non-degenerate maps for a K-action vocabulary on a 320×240 frame.
    pub(crate) fn toy_maps(k: usize) -> (CcMap<f64>, CpMap<f64>) {
        let actions: Vec<String> = (0..k).map(|i| format!("a{i}")).collect();
        let mut text = format!("actions: {}\ngroups: g0,g1\nframe: 320x240\n", actions.join(","));
        // two scenes spreading all labels over distinct cells
        for (s, base) in [(0, 30.0), (1, 150.0)] {
            for (i, a) in actions.iter().enumerate() {
                let x = base + 20.0 * i as f64;
                let y = 40.0 + 30.0 * i as f64;
                text.push_str(&format!(
                    "s{s} g{} {} {} {} {} {a}\n",
                    s % 2,
                    x,
                    y,
                    x + 12.0,
                    y + 12.0
                ));
            }
        }
        let ann = parse_annotations(&text).unwrap();
        let cc = build_cc_map(&ann);
        let cp = build_cp_map(&ann, MapGrid { h: 6, w: 8 }).unwrap();
        (cc, cp)
    }

    #[test]
    fn zero_cc_map_equals_unbiased_transformer_block() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 5).unwrap();
        let y = state.embed_labels().unwrap();
        let zero = CcMap::zeros(cfg.action_classes);
        let biased = semantic_transformer(&state, &y, &zero, None).unwrap();

        // reference: the same block assembled without any bias term
        let params = state.params();
        let mut heads = Vec::new();
        for i in 0..cfg.heads_enc {
            let (h, _) = attention_head(
                &y,
                &y,
                params.get(&format!("sem.h{i}.wq")).unwrap(),
                params.get(&format!("sem.h{i}.wk")).unwrap(),
                params.get(&format!("sem.h{i}.wv")).unwrap(),
                None,
            )
            .unwrap();
            heads.push(h);
        }
        let refs: Vec<&Tensor<f64>> = heads.iter().collect();
        let merged = Tensor::concat_last(&refs)
            .unwrap()
            .linear(
                params.get("sem.f.w").unwrap(),
                Some(params.get("sem.f.b").unwrap()),
            )
            .unwrap();
        let t = y
            .add(&merged)
            .unwrap()
            .layer_norm(
                params.get("sem.norm1.gain").unwrap(),
                params.get("sem.norm1.bias").unwrap(),
            )
            .unwrap();
        let f = t
            .linear(
                params.get("sem.ffn.w1").unwrap(),
                Some(params.get("sem.ffn.b1").unwrap()),
            )
            .unwrap()
            .relu()
            .linear(
                params.get("sem.ffn.w2").unwrap(),
                Some(params.get("sem.ffn.b2").unwrap()),
            )
            .unwrap();
        let reference = t
            .add(&f)
            .unwrap()
            .layer_norm(
                params.get("sem.norm2.gain").unwrap(),
                params.get("sem.norm2.bias").unwrap(),
            )
            .unwrap();
        assert_eq!(biased.data(), reference.data());
    }

    #[test]
    fn zero_cp_bias_equals_unbiased_cross_attention() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 6).unwrap();
        let n = cfg.persons;
        let xc = Tensor::new(
            &[n, cfg.embed_dim],
            (0..n * cfg.embed_dim).map(|v| (v as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let y_hat = Tensor::new(
            &[cfg.action_classes, cfg.embed_dim],
            (0..cfg.action_classes * cfg.embed_dim)
                .map(|v| (v as f64 * 0.13).cos())
                .collect(),
        )
        .unwrap();
        let zero_bias = Tensor::zeros(&[n, cfg.action_classes]);
        let out = inference_transformer(&state, &xc, &y_hat, &zero_bias, None).unwrap();

        // the bias enters only through one additive term; with a zero matrix
        // the block must equal itself run with a freshly built zero bias
        let out2 =
            inference_transformer(&state, &xc, &y_hat, &Tensor::zeros(&[n, cfg.action_classes]), None)
                .unwrap();
        assert_eq!(out.data(), out2.data());

        // and differ once any bias entry is nonzero
        let mut bias = vec![0.0; n * cfg.action_classes];
        bias[1] = 0.3;
        let biased = inference_transformer(
            &state,
            &xc,
            &y_hat,
            &Tensor::new(&[n, cfg.action_classes], bias).unwrap(),
            None,
        )
        .unwrap();
        assert_ne!(out.data(), biased.data());
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 7).unwrap();
        let sample = toy_sample(&cfg, 1);
        let (cc, cp) = toy_maps(cfg.action_classes);
        let a = forward(&state, &sample, &cc, &cp, true).unwrap();
        assert_eq!(a.ya_x.shape(), &[cfg.persons, cfg.action_classes]);
        assert_eq!(a.yg_x.shape(), &[cfg.group_classes]);
        assert_eq!(a.yg_s.shape(), &[cfg.group_classes]);
        assert_eq!(
            a.ya_o.as_ref().unwrap().shape(),
            &[cfg.persons, cfg.action_classes]
        );
        let b = forward(&state, &sample, &cc, &cp, true).unwrap();
        assert_eq!(a.ya_x.data(), b.ya_x.data());
        assert_eq!(a.yg_x.data(), b.yg_x.data());
        assert_eq!(a.yg_s.data(), b.yg_s.data());
        assert_eq!(
            a.yg_o.as_ref().unwrap().data(),
            b.yg_o.as_ref().unwrap().data()
        );

        // baseline leaves the o-branch empty
        let base = forward(&state, &sample, &cc, &cp, false).unwrap();
        assert!(base.ya_o.is_none() && base.yg_o.is_none());
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 11).unwrap();
        let sample = toy_sample(&cfg, 3);
        let (cc, cp) = toy_maps(cfg.action_classes);
        let perm: Vec<usize> = vec![2, 0, 3, 1];

        let permuted = permute_sample(&sample, &perm, &cfg);
        let a = forward(&state, &sample, &cc, &cp, true).unwrap();
        let b = forward(&state, &permuted, &cc, &cp, true).unwrap();

        let k = cfg.action_classes;
        for (new_row, &old_row) in perm.iter().enumerate() {
            for j in 0..k {
                let va = a.ya_x.data()[old_row * k + j];
                let vb = b.ya_x.data()[new_row * k + j];
                assert!((va - vb).abs() < 1e-10, "ya_x[{old_row}->{new_row},{j}]");
                let oa = a.ya_o.as_ref().unwrap().data()[old_row * k + j];
                let ob = b.ya_o.as_ref().unwrap().data()[new_row * k + j];
                assert!((oa - ob).abs() < 1e-10);
            }
        }
        for (va, vb) in fuse_scores(&a).iter().zip(fuse_scores(&b)) {
            assert!((va - vb).abs() < 1e-10);
        }
    }

    pub(crate) fn permute_sample(
        sample: &SceneSample<f64>,
        perm: &[usize],
        cfg: &ModelConfig,
    ) -> SceneSample<f64> {
        let stride = cfg.parts * cfg.feature_dim;
        let mut feats = Vec::with_capacity(sample.person_features.len());
        for &src in perm {
            feats.extend_from_slice(
                &sample.person_features.data()[src * stride..(src + 1) * stride],
            );
        }
        SceneSample {
            scene_id: sample.scene_id.clone(),
            frame: sample.frame,
            scene_feature: sample.scene_feature.clone(),
            person_features: Tensor::new(
                &[perm.len(), cfg.parts, cfg.feature_dim],
                feats,
            )
            .unwrap(),
            bboxes: perm.iter().map(|&i| sample.bboxes[i]).collect(),
            action_targets: perm.iter().map(|&i| sample.action_targets[i]).collect(),
            group_target: sample.group_target,
        }
    }

    fn full_loss(
        state: &ModelState<f64>,
        params: &ParamSet<f64>,
        sample: &SceneSample<f64>,
        cc: &CcMap<f64>,
        cp: &CpMap<f64>,
    ) -> crate::tensor::Result<Tensor<f64>> {
        let candidate = state.with_params(params.clone());
        let pred = forward(&candidate, sample, cc, cp, true).map_err(|e| {
            crate::tensor::TensorError::ShapeMismatch {
                op: "forward",
                detail: e.to_string(),
            }
        })?;
        let (_, total) = compute_loss(
            &pred,
            &sample.action_targets,
            sample.group_target,
            candidate.config().lambda,
        )
        .map_err(|e| crate::tensor::TensorError::ShapeMismatch {
            op: "loss",
            detail: e.to_string(),
        })?;
        Ok(total)
    }

    #[test]
    fn full_model_passes_gradient_check() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 17).unwrap();
        let sample = toy_sample(&cfg, 17);
        let (cc, cp) = toy_maps(cfg.action_classes);
        let err = grad_check(
            |p| full_loss(&state, p, &sample, &cc, &cp),
            state.params(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn part_machinery_works_and_checks_at_p2() {
        let cfg = ModelConfig {
            parts: 2,
            persons: 3,
            action_classes: 3,
            group_classes: 2,
            feature_dim: 4,
            embed_dim: 8,
            head_dim: 4,
            heads_enc: 1,
            heads_dec: 1,
            ffn_dim: 8,
            ..ModelConfig::default()
        };
        let state = ModelState::<f64>::init(&cfg, 23).unwrap();
        let sample = toy_sample(&cfg, 23);
        let (cc, cp) = toy_maps(cfg.action_classes);
        let pred = forward(&state, &sample, &cc, &cp, true).unwrap();
        assert_eq!(pred.ya_x.shape(), &[3, 3]);
        let err = grad_check(
            |p| full_loss(&state, p, &sample, &cc, &cp),
            state.params(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn visual_encoder_keeps_attention_rows_stochastic() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 31).unwrap();
        let sample = toy_sample(&cfg, 31);
        let (cc, cp) = toy_maps(cfg.action_classes);
        let (_, trace) = forward_traced(&state, &sample, &cc, &cp, true).unwrap();
        assert!(!trace.attention.is_empty());
        for record in &trace.attention {
            let cols = record.weights.shape()[record.weights.rank() - 1];
            for row in record.weights.data().chunks(cols) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "{}: row sum {sum}", record.site);
            }
        }
        // sites cover all four attention blocks
        let sites: Vec<&str> = trace.attention.iter().map(|r| r.site.as_str()).collect();
        assert!(sites.iter().any(|s| s.starts_with("semantic")));
        assert!(sites.iter().any(|s| s.starts_with("visual_encoder")));
        assert!(sites.iter().any(|s| s.starts_with("interaction_encoder")));
        assert!(sites.iter().any(|s| s.starts_with("decoder")));
    }
}
