//! The training loop and the ablation variants.

use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::adam::AdamState;
use super::{OptimConfig, Result, TrainError};
use crate::knowledge::{build_cc_map, build_cp_map, AnnotationSet, CcMap, CpMap, MapGrid};
use crate::model::{compute_loss, forward, ModelConfig, ModelState, SceneSample};
use crate::rng::substream;
use crate::scalar::Scalar;

/// The ablation variants. `Base` runs only the visual representation and
/// the scene head; the map flags choose which knowledge bias the semantic
/// pipeline receives (disabled maps are replaced by zero maps, which is
/// value-identical to removing the bias term).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    BaseSemantic,
    BaseSemanticCp,
    BaseSemanticCc,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::BaseSemantic,
        Variant::BaseSemanticCp,
        Variant::BaseSemanticCc,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::BaseSemantic => "Base+Semantic",
            Variant::BaseSemanticCp => "Base+Semantic+C-P",
            Variant::BaseSemanticCc => "Base+Semantic+C-C",
            Variant::Full => "Full",
        }
    }

    pub fn use_semantic(self) -> bool {
        !matches!(self, Variant::Base)
    }

    pub fn use_cc(self) -> bool {
        matches!(self, Variant::BaseSemanticCc | Variant::Full)
    }

    pub fn use_cp(self) -> bool {
        matches!(self, Variant::BaseSemanticCp | Variant::Full)
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        let canon = s.to_ascii_lowercase().replace([' ', '_'], "");
        match canon.as_str() {
            "base" => Ok(Variant::Base),
            "base+semantic" | "semantic" => Ok(Variant::BaseSemantic),
            "base+semantic+c-p" | "base+semantic+cp" | "cp" => Ok(Variant::BaseSemanticCp),
            "base+semantic+c-c" | "base+semantic+cc" | "cc" => Ok(Variant::BaseSemanticCc),
            "full" => Ok(Variant::Full),
            _ => Err(TrainError::Config(format!(
                "unknown variant `{s}` (expected one of Base, Base+Semantic, \
                 Base+Semantic+C-P, Base+Semantic+C-C, Full)"
            ))),
        }
    }
}

/// The two knowledge maps, built from training annotations only.
#[derive(Clone)]
pub struct KnowledgeMaps<T: Scalar> {
    pub cc: CcMap<T>,
    pub cp: CpMap<T>,
}

impl<T: Scalar> KnowledgeMaps<T> {
    pub fn build(annotations: &AnnotationSet, grid: MapGrid) -> Result<Self> {
        Ok(KnowledgeMaps {
            cc: build_cc_map(annotations),
            cp: build_cp_map(annotations, grid)?,
        })
    }

    /// The maps a variant actually sees: disabled maps become zero maps of
    /// the same geometry.
    pub fn effective(&self, variant: Variant, cfg: &ModelConfig) -> (CcMap<T>, CpMap<T>) {
        let cc = if variant.use_cc() {
            self.cc.clone()
        } else {
            CcMap::zeros(cfg.action_classes)
        };
        let cp = if variant.use_cp() {
            self.cp.clone()
        } else {
            CpMap::zeros(
                MapGrid {
                    h: self.cp.grid_h(),
                    w: self.cp.grid_w(),
                },
                self.cp.action_count(),
                self.cp.frame_size(),
            )
        };
        (cc, cp)
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub l_x: f64,
    pub l_o: f64,
    pub l_s: f64,
    pub total: f64,
}

pub struct TrainResult<T: Scalar> {
    pub state: ModelState<T>,
    pub history: Vec<EpochStats>,
}

/// Trains a variant from a fresh seeded initialization.
///
/// Scenes are visited one at a time (batch size 1) in a per-epoch shuffled
/// order drawn from the optimizer seed, so runs are bit-reproducible. The
/// base variant optimizes `L_x + L_s`; semantic variants add `L_o`.
pub fn train<T: Scalar>(
    variant: Variant,
    data: &[SceneSample<T>],
    maps: &KnowledgeMaps<T>,
    model_cfg: &ModelConfig,
    optim_cfg: &OptimConfig,
) -> Result<TrainResult<T>> {
    optim_cfg.validate()?;
    let mut state = ModelState::init(model_cfg, optim_cfg.seed)?;
    let (cc, cp) = maps.effective(variant, model_cfg);
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(optim_cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut global_step = 0usize;

    for epoch in 0..optim_cfg.epochs {
        let lr = optim_cfg.lr_at(epoch);
        let mut rng = substream(optim_cfg.seed, &format!("shuffle-e{epoch}"));
        order.shuffle(&mut rng);
        let mut sums = EpochStats {
            l_x: 0.0,
            l_o: 0.0,
            l_s: 0.0,
            total: 0.0,
        };
        for &idx in &order {
            let sample = &data[idx];
            let pred = forward(&state, sample, &cc, &cp, variant.use_semantic())?;
            let (breakdown, loss) = compute_loss(
                &pred,
                &sample.action_targets,
                sample.group_target,
                model_cfg.lambda,
            )?;
            for (component, value) in [
                ("l_x", breakdown.l_x),
                ("l_o", breakdown.l_o),
                ("l_s", breakdown.l_s),
            ] {
                if !value.is_finite() {
                    return Err(TrainError::NanLoss {
                        step: global_step,
                        component,
                    });
                }
            }
            let grads = loss.backward()?;
            adam.step(state.params_mut(), &grads, lr, optim_cfg)?;
            sums.l_x += breakdown.l_x;
            sums.l_o += breakdown.l_o;
            sums.l_s += breakdown.l_s;
            sums.total += breakdown.total;
            global_step += 1;
        }
        let n = data.len().max(1) as f64;
        history.push(EpochStats {
            l_x: sums.l_x / n,
            l_o: sums.l_o / n,
            l_s: sums.l_s / n,
            total: sums.total / n,
        });
    }
    Ok(TrainResult { state, history })
}

/// Keeps a `ratio` share of the scenes, stratified by group class: every
/// class retains round(ratio · count) scenes, chosen by a seeded shuffle,
/// in their original relative order.
pub fn subsample_stratified<T: Scalar>(
    data: &[SceneSample<T>],
    ratio: f64,
    group_classes: usize,
    seed: u64,
) -> Result<Vec<SceneSample<T>>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TrainError::Config(format!(
            "ratio must be in [0, 1], got {ratio}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); group_classes];
    for (i, s) in data.iter().enumerate() {
        by_class[s.group_target].push(i);
    }
    let mut keep = Vec::new();
    for (class, mut indices) in by_class.into_iter().enumerate() {
        let want = (ratio * indices.len() as f64).round() as usize;
        let mut rng = substream(seed, &format!("subsample-c{class}"));
        indices.shuffle(&mut rng);
        keep.extend(indices.into_iter().take(want));
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| data[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{annotations_for, gen_dataset, GenConfig};

    fn tiny_setup() -> (
        Vec<SceneSample<f64>>,
        KnowledgeMaps<f64>,
        ModelConfig,
        OptimConfig,
    ) {
        let gen = GenConfig {
            scenes_train: 10,
            scenes_test: 4,
            ..GenConfig::default()
        };
        let data = gen_dataset(&gen).unwrap();
        let ann = annotations_for(&data.vocabulary, &data.train).unwrap();
        let maps = KnowledgeMaps::build(&ann, MapGrid::default()).unwrap();
        let model_cfg = ModelConfig {
            embed_dim: 16,
            head_dim: 8,
            ffn_dim: 16,
            ..ModelConfig::default()
        };
        let optim = OptimConfig {
            epochs: 2,
            ..OptimConfig::default()
        };
        (data.train, maps, model_cfg, optim)
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let (data, maps, model_cfg, mut optim) = tiny_setup();
        optim.epochs = 0;
        let result = train(Variant::Full, &data, &maps, &model_cfg, &optim).unwrap();
        assert!(result.history.is_empty());
        let fresh = ModelState::<f64>::init(&model_cfg, optim.seed).unwrap();
        for ((name, a), (_, b)) in result.state.params().iter().zip(fresh.params().iter()) {
            assert_eq!(a.data(), b.data(), "{name}");
        }
    }

    #[test]
    fn history_has_one_entry_per_epoch_and_is_deterministic() {
        let (data, maps, model_cfg, optim) = tiny_setup();
        let a = train(Variant::Full, &data, &maps, &model_cfg, &optim).unwrap();
        assert_eq!(a.history.len(), optim.epochs);
        let b = train(Variant::Full, &data, &maps, &model_cfg, &optim).unwrap();
        for (ea, eb) in a.history.iter().zip(&b.history) {
            assert_eq!(ea.total.to_bits(), eb.total.to_bits());
        }
        for ((name, ta), (_, tb)) in a.state.params().iter().zip(b.state.params().iter()) {
            assert_eq!(ta.data(), tb.data(), "{name}");
        }
    }

    #[test]
    fn base_variant_never_touches_semantic_parameters() {
        let (data, maps, model_cfg, optim) = tiny_setup();
        let result = train(Variant::Base, &data, &maps, &model_cfg, &optim).unwrap();
        let fresh = ModelState::<f64>::init(&model_cfg, optim.seed).unwrap();
        for prefix in ["sem.", "venc.", "ienc.", "dec.", "parts.", "embed.label"] {
            for ((name, trained), (_, init)) in
                result.state.params().iter().zip(fresh.params().iter())
            {
                if name.starts_with(prefix) {
                    assert_eq!(trained.data(), init.data(), "{name} moved in Base");
                }
            }
        }
        // the visual branch and heads did move
        let moved = result
            .state
            .params()
            .iter()
            .zip(fresh.params().iter())
            .any(|((name, a), (_, b))| name.starts_with("embed.person") && a.data() != b.data());
        assert!(moved);
        // every epoch logged a zero o-branch loss
        assert!(result.history.iter().all(|e| e.l_o == 0.0));
    }

    #[test]
    fn variant_names_and_flags() {
        assert_eq!(Variant::ALL.len(), 5);
        assert!(!Variant::Base.use_semantic());
        assert!(Variant::BaseSemantic.use_semantic());
        assert!(!Variant::BaseSemantic.use_cc());
        assert!(Variant::BaseSemanticCc.use_cc());
        assert!(!Variant::BaseSemanticCc.use_cp());
        assert!(Variant::Full.use_cc() && Variant::Full.use_cp());
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("frobnicate".parse::<Variant>().is_err());
    }

    #[test]
    fn stratified_subsample_is_within_one_scene_per_class() {
        let gen = GenConfig {
            scenes_train: 97,
            scenes_test: 1,
            ..GenConfig::default()
        };
        let data = gen_dataset(&gen).unwrap();
        for ratio in [0.1, 0.25, 0.5, 1.0] {
            let subset = subsample_stratified(&data.train, ratio, 4, 7).unwrap();
            let mut full = vec![0f64; 4];
            let mut kept = vec![0f64; 4];
            for s in &data.train {
                full[s.group_target] += 1.0;
            }
            for s in &subset {
                kept[s.group_target] += 1.0;
            }
            for g in 0..4 {
                assert!(
                    (kept[g] - ratio * full[g]).abs() <= 1.0,
                    "class {g}: kept {} of {} at ratio {ratio}",
                    kept[g],
                    full[g]
                );
            }
            // deterministic
            let again = subsample_stratified(&data.train, ratio, 4, 7).unwrap();
            let ids: Vec<&str> = subset.iter().map(|s| s.scene_id.as_str()).collect();
            let ids2: Vec<&str> = again.iter().map(|s| s.scene_id.as_str()).collect();
            assert_eq!(ids, ids2);
        }
        // full ratio keeps everything
        let all = subsample_stratified(&data.train, 1.0, 4, 7).unwrap();
        assert_eq!(all.len(), data.train.len());
    }
}
