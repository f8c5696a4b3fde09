//! Tactic-driven synthetic group-activity scenes.
//!
//! Each group activity class is a tactic: a set of roles, each giving an
//! action, a head count and a spatial zone. Every tactic owns a signature
//! action no other tactic uses, placed in a zone of its own, so both
//! knowledge maps are discriminative by construction. Observed person
//! features are drawn from per-action prototype vectors and corrupted with
//! probability `noise_rho` by swapping in a wrong action's prototype — the
//! visual ambiguity the knowledge maps are meant to repair. Ground-truth
//! labels are never corrupted.

mod features;

pub use features::{load_dataset, load_features, save_features};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::knowledge::{AnnotationSet, BBox, SceneAnnotation, Vocabulary};
use crate::model::SceneSample;
use crate::rng::substream;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible generator sizes: {0}")]
    Infeasible(String),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Knowledge(#[from] crate::knowledge::KnowledgeError),
    #[error("feature file: {0}")]
    FeatureFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<V> = std::result::Result<V, SynthError>;

/// Generator configuration. `noise_rho` is the probability that a person's
/// observed feature vector is drawn from a wrong action's prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub group_classes: usize,
    pub action_classes: usize,
    pub persons: usize,
    pub frame: (u32, u32),
    pub feature_dim: usize,
    pub noise_rho: f64,
    pub feature_sigma: f64,
    pub scenes_train: usize,
    pub scenes_test: usize,
    pub seed: u64,
    /// Cells of the coarse scene-feature grid.
    pub scene_grid: (usize, usize),
    /// Normalized spread of signature-role zones.
    pub zone_sigma_signature: f64,
    /// Normalized spread of shared filler zones.
    pub zone_sigma_filler: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            group_classes: 4,
            action_classes: 6,
            persons: 8,
            frame: (640, 480),
            feature_dim: 16,
            noise_rho: 0.3,
            feature_sigma: 0.3,
            scenes_train: 400,
            scenes_test: 200,
            seed: 0,
            scene_grid: (3, 3),
            zone_sigma_signature: 0.05,
            zone_sigma_filler: 0.15,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rho) {
            return Err(SynthError::Config(format!(
                "gen.noise_rho must be in [0, 1], got {}",
                self.noise_rho
            )));
        }
        if self.feature_sigma < 0.0 || !self.feature_sigma.is_finite() {
            return Err(SynthError::Config("gen.feature_sigma must be >= 0".into()));
        }
        for (name, v) in [
            ("gen.G", self.group_classes),
            ("gen.K", self.action_classes),
            ("gen.N", self.persons),
            ("gen.feature_dim", self.feature_dim),
            ("gen.scenes_train", self.scenes_train),
            ("gen.scenes_test", self.scenes_test),
            ("gen.scene_grid_h", self.scene_grid.0),
            ("gen.scene_grid_w", self.scene_grid.1),
        ] {
            if v == 0 {
                return Err(SynthError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.frame.0 == 0 || self.frame.1 == 0 {
            return Err(SynthError::Config("gen.frame must be positive".into()));
        }
        if self.zone_sigma_signature <= 0.0 || self.zone_sigma_filler <= 0.0 {
            return Err(SynthError::Config("zone sigmas must be > 0".into()));
        }
        Ok(())
    }

    /// Label names for the synthetic vocabulary.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(
            (0..self.action_classes)
                .map(|i| format!("act_{i}"))
                .collect(),
            (0..self.group_classes)
                .map(|g| format!("tac_{g}"))
                .collect(),
        )
        .expect("generated labels are unique and non-empty")
    }
}

/// One role inside a tactic.
#[derive(Debug, Clone, PartialEq)]
pub struct Role {
    pub action_index: usize,
    pub count: usize,
    /// Normalized zone center in [0, 1]².
    pub zone_center: (f64, f64),
    /// Normalized standard deviation of positions around the center.
    pub zone_sigma: f64,
}

/// A group activity template: roles whose counts sum to N.
#[derive(Debug, Clone, PartialEq)]
pub struct Tactic {
    pub group_index: usize,
    pub roles: Vec<Role>,
}

impl Tactic {
    /// The role whose action appears in no other tactic.
    pub fn signature_role(&self) -> &Role {
        &self.roles[0]
    }
}

/// Builds G tactics. Tactic g's first role uses action g exclusively, in a
/// zone on a circle around the frame center (jittered per library); the
/// remaining persons split over shared filler actions in shared zones, so
/// only the signature role separates the activities.
pub fn make_tactic_library(config: &GenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Tactic>> {
    config.validate()?;
    let (g_count, k, n) = (config.group_classes, config.action_classes, config.persons);
    if k < g_count {
        return Err(SynthError::Infeasible(format!(
            "need at least as many actions as activities (K={k} < G={g_count})"
        )));
    }
    if n < g_count {
        return Err(SynthError::Infeasible(format!(
            "need at least as many persons as activities (N={n} < G={g_count})"
        )));
    }
    let filler_pool: Vec<usize> = (g_count..k).collect();
    let mut tactics = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let angle = std::f64::consts::TAU * g as f64 / g_count as f64;
        let jitter = (rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        let zone = (
            (0.5 + 0.38 * angle.cos() + jitter.0).clamp(0.05, 0.95),
            (0.5 + 0.38 * angle.sin() + jitter.1).clamp(0.05, 0.95),
        );
        let mut roles = vec![Role {
            action_index: g,
            count: 1,
            zone_center: zone,
            zone_sigma: config.zone_sigma_signature,
        }];
        let rest = n - 1;
        match filler_pool.len() {
            0 => {
                // no shared actions: the signature role carries everyone
                roles[0].count = n;
            }
            1 => {
                if rest > 0 {
                    roles.push(Role {
                        action_index: filler_pool[0],
                        count: rest,
                        zone_center: (0.5, 0.5),
                        zone_sigma: config.zone_sigma_filler,
                    });
                }
            }
            _ => {
                // identical filler composition across tactics, so the
                // signature role is the only group evidence
                let first = rest - rest / 2;
                for (idx, (action, count)) in filler_pool
                    .iter()
                    .take(2)
                    .zip([first, rest / 2])
                    .enumerate()
                {
                    if count > 0 {
                        let center = if idx == 0 { (0.35, 0.4) } else { (0.65, 0.6) };
                        roles.push(Role {
                            action_index: *action,
                            count,
                            zone_center: center,
                            zone_sigma: config.zone_sigma_filler,
                        });
                    }
                }
            }
        }
        debug_assert_eq!(roles.iter().map(|r| r.count).sum::<usize>(), n);
        tactics.push(Tactic {
            group_index: g,
            roles,
        });
    }
    Ok(tactics)
}

/// Per-action prototype feature vectors: standard Gaussian draws, which are
/// nearly orthogonal at the default dimensionality.
pub fn action_prototypes(config: &GenConfig) -> Vec<Vec<f64>> {
    let mut rng = substream(config.seed, "prototypes");
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    (0..config.action_classes)
        .map(|_| {
            (0..config.feature_dim)
                .map(|_| normal.sample(&mut rng))
                .collect()
        })
        .collect()
}

/// Draws one scene from a tactic. Positions are clipped Gaussians around
/// each role's zone; bboxes are fixed-size boxes clamped into the frame;
/// observed features come from the (possibly wrong) prototype plus noise;
/// the ground truth always carries the true labels.
pub fn sample_scene(
    tactic: &Tactic,
    config: &GenConfig,
    prototypes: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    scene_id: String,
) -> SceneSample<f64> {
    let (fw, fh) = (f64::from(config.frame.0), f64::from(config.frame.1));
    let (box_w, box_h) = (fw / 16.0, fh / 8.0);
    let k = config.action_classes;
    let c = config.feature_dim;

    struct Person {
        action: usize,
        bbox: BBox,
        feature: Vec<f64>,
    }

    let mut persons = Vec::with_capacity(config.persons);
    for role in &tactic.roles {
        for _ in 0..role.count {
            let pos_x = sample_clipped(rng, role.zone_center.0, role.zone_sigma);
            let pos_y = sample_clipped(rng, role.zone_center.1, role.zone_sigma);
            let cx = pos_x * fw;
            let cy = pos_y * fh;
            let x_min = (cx - box_w / 2.0).clamp(0.0, fw - box_w);
            let y_min = (cy - box_h / 2.0).clamp(0.0, fh - box_h);
            let bbox = BBox::new(x_min, y_min, x_min + box_w, y_min + box_h);

            let observed_action = if k > 1 && rng.random_range(0.0..1.0) < config.noise_rho {
                // visual evidence from a uniformly chosen *other* action
                let mut other = rng.random_range(0..k - 1);
                if other >= role.action_index {
                    other += 1;
                }
                other
            } else {
                role.action_index
            };
            let mut feature = prototypes[observed_action].clone();
            if config.feature_sigma > 0.0 {
                let noise = Normal::new(0.0, config.feature_sigma).expect("valid normal");
                for v in feature.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
            persons.push(Person {
                action: role.action_index,
                bbox,
                feature,
            });
        }
    }
    persons.shuffle(rng);

    // coarse scene grid: mean observed feature of the persons in each cell
    let (gh, gw) = config.scene_grid;
    let mut grid = vec![0.0f64; gh * gw * c];
    let mut cell_counts = vec![0usize; gh * gw];
    for p in &persons {
        let (cx, cy) = p.bbox.center();
        let col = ((cx / fw * gw as f64).floor() as usize).min(gw - 1);
        let row = ((cy / fh * gh as f64).floor() as usize).min(gh - 1);
        let cell = row * gw + col;
        cell_counts[cell] += 1;
        for (slot, v) in grid[cell * c..(cell + 1) * c].iter_mut().zip(&p.feature) {
            *slot += v;
        }
    }
    for (cell, &count) in cell_counts.iter().enumerate() {
        if count > 0 {
            let inv = 1.0 / count as f64;
            for v in grid[cell * c..(cell + 1) * c].iter_mut() {
                *v *= inv;
            }
        }
    }

    let mut feature_data = Vec::with_capacity(persons.len() * c);
    for p in &persons {
        feature_data.extend_from_slice(&p.feature);
    }
    SceneSample {
        scene_id,
        frame: config.frame,
        scene_feature: Tensor::new(&[gh, gw, c], grid).expect("consistent dims"),
        person_features: Tensor::new(&[persons.len(), 1, c], feature_data)
            .expect("consistent dims"),
        bboxes: persons.iter().map(|p| p.bbox).collect(),
        action_targets: persons.iter().map(|p| p.action).collect(),
        group_target: tactic.group_index,
    }
}

fn sample_clipped(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    let normal = Normal::new(mean, sigma).expect("valid normal");
    normal.sample(rng).clamp(0.0, 1.0)
}

/// A generated benchmark: train and test splits from disjoint substreams of
/// one seed, plus the vocabulary and the tactic library that produced them.
pub struct GeneratedData {
    pub vocabulary: Vocabulary,
    pub tactics: Vec<Tactic>,
    pub train: Vec<SceneSample<f64>>,
    pub test: Vec<SceneSample<f64>>,
}

/// Generates both splits. Tactics are sampled uniformly per scene; the
/// train and test streams are independent, so neither split leaks into the
/// other however many scenes are drawn.
pub fn gen_dataset(config: &GenConfig) -> Result<GeneratedData> {
    config.validate()?;
    let mut lib_rng = substream(config.seed, "tactics");
    let tactics = make_tactic_library(config, &mut lib_rng)?;
    let prototypes = action_prototypes(config);

    let mut split = |name: &str, count: usize| -> Vec<SceneSample<f64>> {
        let mut rng = substream(config.seed, name);
        (0..count)
            .map(|i| {
                let t = rng.random_range(0..tactics.len());
                sample_scene(
                    &tactics[t],
                    config,
                    &prototypes,
                    &mut rng,
                    format!("{name}_{i:05}"),
                )
            })
            .collect()
    };
    let train = split("train", config.scenes_train);
    let test = split("test", config.scenes_test);
    Ok(GeneratedData {
        vocabulary: config.vocabulary(),
        tactics,
        train,
        test,
    })
}

/// The annotation view of a set of samples (true labels, true boxes) in the
/// knowledge module's format.
pub fn annotations_for(
    vocabulary: &Vocabulary,
    samples: &[SceneSample<f64>],
) -> Result<AnnotationSet> {
    let scenes = samples
        .iter()
        .map(|s| SceneAnnotation {
            scene_id: s.scene_id.clone(),
            frame_size: s.frame,
            persons: s
                .bboxes
                .iter()
                .zip(&s.action_targets)
                .map(|(bbox, &action_index)| crate::knowledge::PersonRecord {
                    bbox: *bbox,
                    action_index,
                })
                .collect(),
            group_index: s.group_target,
        })
        .collect();
    AnnotationSet::new(vocabulary.clone(), scenes).map_err(SynthError::from)
}
