//! Learnable parameters: layout, seeded initialization, checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use super::{ModelConfig, ModelError, Result};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::ser::{json_escape, push_f64_array};
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    Xavier,
    Zero,
    One,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

/// Full parameter layout for a configuration, sorted by name.
fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (k, g, c) = (cfg.action_classes, cfg.group_classes, cfg.feature_dim);
    let (d_model, d_head) = (cfg.embed_dim, cfg.head_dim);
    let ffn = cfg.ffn_dim;
    let mut out = Vec::new();

    out.push(spec("embed.label", &[k, d_model], Init::Xavier));
    out.push(spec("embed.person.w", &[c, d_model], Init::Xavier));
    out.push(spec("embed.person.b", &[d_model], Init::Zero));

    // encoder-style blocks: multi-head self-attention + FFN, post-norm
    for prefix in ["sem", "venc"] {
        for i in 0..cfg.heads_enc {
            for w in ["wq", "wk", "wv"] {
                out.push(spec(format!("{prefix}.h{i}.{w}"), &[d_model, d_head], Init::Xavier));
            }
        }
        out.push(spec(
            format!("{prefix}.f.w"),
            &[cfg.heads_enc * d_head, d_model],
            Init::Xavier,
        ));
        out.push(spec(format!("{prefix}.f.b"), &[d_model], Init::Zero));
        out.push(spec(format!("{prefix}.ffn.w1"), &[d_model, ffn], Init::Xavier));
        out.push(spec(format!("{prefix}.ffn.b1"), &[ffn], Init::Zero));
        out.push(spec(format!("{prefix}.ffn.w2"), &[ffn, d_model], Init::Xavier));
        out.push(spec(format!("{prefix}.ffn.b2"), &[d_model], Init::Zero));
        for n in ["norm1", "norm2"] {
            out.push(spec(format!("{prefix}.{n}.gain"), &[d_model], Init::One));
            out.push(spec(format!("{prefix}.{n}.bias"), &[d_model], Init::Zero));
        }
    }

    // part-collapse MLP: (P·D) → ffn → D per person
    out.push(spec("parts.w1", &[cfg.parts * d_model, ffn], Init::Xavier));
    out.push(spec("parts.b1", &[ffn], Init::Zero));
    out.push(spec("parts.w2", &[ffn, d_model], Init::Xavier));
    out.push(spec("parts.b2", &[d_model], Init::Zero));

    // interaction encoder: self-attention + residual + norm (no FFN)
    for i in 0..cfg.heads_enc {
        for w in ["wq", "wk", "wv"] {
            out.push(spec(format!("ienc.h{i}.{w}"), &[d_model, d_head], Init::Xavier));
        }
    }
    out.push(spec(
        "ienc.f.w",
        &[cfg.heads_enc * d_head, d_model],
        Init::Xavier,
    ));
    out.push(spec("ienc.f.b", &[d_model], Init::Zero));
    out.push(spec("ienc.norm.gain", &[d_model], Init::One));
    out.push(spec("ienc.norm.bias", &[d_model], Init::Zero));

    // cross-attention decoder
    for i in 0..cfg.heads_dec {
        for w in ["wq", "wk", "wv"] {
            out.push(spec(format!("dec.h{i}.{w}"), &[d_model, d_head], Init::Xavier));
        }
    }
    out.push(spec(
        "dec.f.w",
        &[cfg.heads_dec * d_head, d_model],
        Init::Xavier,
    ));
    out.push(spec("dec.f.b", &[d_model], Init::Zero));
    out.push(spec("dec.ffn.w1", &[d_model, ffn], Init::Xavier));
    out.push(spec("dec.ffn.b1", &[ffn], Init::Zero));
    out.push(spec("dec.ffn.w2", &[ffn, d_model], Init::Xavier));
    out.push(spec("dec.ffn.b2", &[d_model], Init::Zero));
    for n in ["norm1", "norm2"] {
        out.push(spec(format!("dec.{n}.gain"), &[d_model], Init::One));
        out.push(spec(format!("dec.{n}.bias"), &[d_model], Init::Zero));
    }

    // classification heads
    for (name, classes) in [
        ("head.action_x", k),
        ("head.group_x", g),
        ("head.action_o", k),
        ("head.group_o", g),
    ] {
        out.push(spec(format!("{name}.w"), &[d_model, classes], Init::Xavier));
        out.push(spec(format!("{name}.b"), &[classes], Init::Zero));
    }
    out.push(spec("head.scene.w", &[c, g], Init::Xavier));
    out.push(spec("head.scene.b", &[g], Init::Zero));

    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// All learnable parameters plus the configuration they were built for.
#[derive(Clone)]
pub struct ModelState<T: Scalar> {
    config: ModelConfig,
    params: ParamSet<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Deterministic initialization: affine weights uniform Xavier, biases
    /// zero, norm gains one. Draws happen in sorted parameter-name order
    /// from the `model-init` substream of `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "model-init");
        let mut params = ParamSet::new();
        for s in param_layout(config) {
            let len: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zero => vec![T::zero(); len],
                Init::One => vec![T::one(); len],
                Init::Xavier => {
                    let (fan_in, fan_out) = (s.shape[0] as f64, s.shape[1] as f64);
                    let limit = (6.0 / (fan_in + fan_out)).sqrt();
                    (0..len)
                        .map(|_| T::from_config(rng.random_range(-limit..=limit)))
                        .collect()
                }
            };
            params.insert(s.name, Tensor::var(&s.shape, data)?);
        }
        Ok(ModelState {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// State with the same config but a caller-supplied parameter set
    /// (used by the gradient checker).
    pub fn with_params(&self, params: ParamSet<T>) -> Self {
        ModelState {
            config: self.config.clone(),
            params,
        }
    }

    /// Semantic features Y: the one-hot label matrix times the embedding
    /// table, i.e. the table itself (K, D).
    pub fn embed_labels(&self) -> Result<Tensor<T>> {
        Ok(self.params.get("embed.label")?.clone())
    }

    // ── checkpoint io ────────────────────────────────────────────────────

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        out.push_str("{\n  \"version\": 1,\n  \"config\": ");
        out.push_str(&serde_json::to_string(&self.config).expect("config serializes"));
        out.push_str(",\n  \"params\": {");
        for (i, (name, tensor)) in self.params.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("\n    \"{}\": {{\"shape\": [", json_escape(name)));
            let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&dims.join(", "));
            out.push_str("], \"data\": ");
            push_f64_array(&mut out, tensor.data().iter().map(|v| v.as_f64()));
            out.push('}');
        }
        out.push_str("\n  }\n}\n");
        fs::write(path.as_ref(), out).map_err(|e| ModelError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct RawParam {
            shape: Vec<usize>,
            data: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct RawState {
            version: u32,
            config: ModelConfig,
            params: BTreeMap<String, RawParam>,
        }
        let text = fs::read_to_string(path.as_ref()).map_err(|e| ModelError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        let raw: RawState =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if raw.version != 1 {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                raw.version
            )));
        }
        raw.config.validate()?;
        let layout = param_layout(&raw.config);
        if layout.len() != raw.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                raw.params.len()
            )));
        }
        let mut params = ParamSet::new();
        for s in layout {
            let raw_p = raw.params.get(&s.name).ok_or_else(|| {
                ModelError::Checkpoint(format!("missing parameter {}", s.name))
            })?;
            if raw_p.shape != s.shape {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name, raw_p.shape, s.shape
                )));
            }
            if raw_p.data.len() != s.shape.iter().product::<usize>() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has {} values, shape implies {}",
                    s.name,
                    raw_p.data.len(),
                    s.shape.iter().product::<usize>()
                )));
            }
            if !raw_p.data.iter().all(|v| v.is_finite()) {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} contains non-finite values",
                    s.name
                )));
            }
            let data = raw_p.data.iter().map(|&v| T::from_f64(v).unwrap()).collect();
            params.insert(s.name, Tensor::var(&s.shape, data)?);
        }
        Ok(ModelState {
            config: raw.config,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            action_classes: 3,
            group_classes: 2,
            persons: 3,
            parts: 1,
            feature_dim: 5,
            embed_dim: 8,
            head_dim: 4,
            heads_enc: 2,
            heads_dec: 1,
            ffn_dim: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = toy_config();
        let a = ModelState::<f64>::init(&cfg, 9).unwrap();
        let b = ModelState::<f64>::init(&cfg, 9).unwrap();
        for ((name_a, ta), (_, tb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(ta.data(), tb.data(), "{name_a}");
        }
        for (name, t) in a.params().iter() {
            assert!(t.all_finite(), "{name}");
            if t.rank() == 2 {
                let limit = (6.0 / (t.shape()[0] + t.shape()[1]) as f64).sqrt();
                for &v in t.data() {
                    assert!(v.abs() <= limit, "{name}: {v} vs ±{limit}");
                }
            }
        }
        let c = ModelState::<f64>::init(&cfg, 10).unwrap();
        let differs = a
            .params()
            .iter()
            .zip(c.params().iter())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn embed_labels_is_the_table() {
        let cfg = toy_config();
        let state = ModelState::<f64>::init(&cfg, 3).unwrap();
        let y = state.embed_labels().unwrap();
        assert_eq!(y.shape(), &[3, 8]);
        assert_eq!(y.data(), state.params().get("embed.label").unwrap().data());
        // a second call without parameter changes is identical
        assert_eq!(y.data(), state.embed_labels().unwrap().data());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let state = ModelState::<f64>::init(&toy_config(), 42).unwrap();
        state.save(&path).unwrap();
        let loaded = ModelState::<f64>::load(&path).unwrap();
        assert_eq!(state.config(), loaded.config());
        for ((name, ta), (_, tb)) in state.params().iter().zip(loaded.params().iter()) {
            assert_eq!(ta.data(), tb.data(), "{name}");
            assert!(tb.is_tracked());
        }
    }

    #[test]
    fn checkpoint_shape_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let state = ModelState::<f64>::init(&toy_config(), 42).unwrap();
        state.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // corrupt one declared shape
        let bad = text.replacen("\"shape\": [8, 10]", "\"shape\": [8, 11]", 1);
        assert_ne!(text, bad);
        std::fs::write(&path, bad).unwrap();
        assert!(ModelState::<f64>::load(&path).is_err());
    }
}
