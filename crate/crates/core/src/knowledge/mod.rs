//! Annotation data and its concretization into knowledge maps.
//!
//! Scene annotations (who is where, doing what, in which group activity) are
//! counted into two normalized statistics: a class-class co-occurrence map
//! over action labels and a class-position distribution map over a coarse
//! spatial grid. Both are frozen at build time and later injected as
//! attention biases.

mod files;
mod maps;

pub use files::{load_maps, parse_annotations, save_maps};
pub use maps::{build_cc_map, build_cp_map, cp_lookup, CcMap, CpMap, MapGrid};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown label `{label}` at line {line}")]
    UnknownLabel { label: String, line: usize },
    #[error("scene `{scene_id}`: {message}")]
    BadScene { scene_id: String, message: String },
    #[error("duplicate label `{0}` in vocabulary")]
    DuplicateLabel(String),
    #[error("vocabulary must declare at least one action and one group label")]
    EmptyVocabulary,
    #[error("scenes use mixed frame sizes: {0:?} vs {1:?}")]
    MixedFrameSizes((u32, u32), (u32, u32)),
    #[error("map file: unsupported version {0}")]
    Version(u32),
    #[error("map file: {0}")]
    MapFormat(String),
    #[error("grid dimensions must be >= 1")]
    BadGrid,
}

pub type Result<V> = std::result::Result<V, KnowledgeError>;

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Geometric center, the canonical point of an individual.
    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    fn validate(&self, scene_id: &str, frame: (u32, u32)) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(KnowledgeError::BadScene {
                scene_id: scene_id.to_string(),
                message: format!(
                    "degenerate bbox ({}, {}, {}, {})",
                    self.x_min, self.y_min, self.x_max, self.y_max
                ),
            });
        }
        let (w, h) = (f64::from(frame.0), f64::from(frame.1));
        if self.x_min < 0.0 || self.y_min < 0.0 || self.x_max > w || self.y_max > h {
            return Err(KnowledgeError::BadScene {
                scene_id: scene_id.to_string(),
                message: format!(
                    "bbox ({}, {}, {}, {}) outside frame {}x{}",
                    self.x_min, self.y_min, self.x_max, self.y_max, frame.0, frame.1
                ),
            });
        }
        Ok(())
    }
}

/// Ordered label sets; the index of a label is stable for the whole run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    actions: Vec<String>,
    groups: Vec<String>,
}

impl Vocabulary {
    pub fn new(actions: Vec<String>, groups: Vec<String>) -> Result<Self> {
        if actions.is_empty() || groups.is_empty() {
            return Err(KnowledgeError::EmptyVocabulary);
        }
        for list in [&actions, &groups] {
            for (i, l) in list.iter().enumerate() {
                if list[..i].contains(l) {
                    return Err(KnowledgeError::DuplicateLabel(l.clone()));
                }
            }
        }
        Ok(Vocabulary { actions, groups })
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|l| l == label)
    }

    pub fn group_index(&self, label: &str) -> Option<usize> {
        self.groups.iter().position(|l| l == label)
    }
}

/// One annotated individual.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub bbox: BBox,
    pub action_index: usize,
}

/// One annotated scene: frame geometry, persons and the group activity.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub frame_size: (u32, u32),
    pub persons: Vec<PersonRecord>,
    pub group_index: usize,
}

/// A validated collection of scenes plus the vocabulary they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub vocabulary: Vocabulary,
    pub scenes: Vec<SceneAnnotation>,
}

impl AnnotationSet {
    /// Validates label indices, bboxes and per-scene person counts.
    pub fn new(vocabulary: Vocabulary, scenes: Vec<SceneAnnotation>) -> Result<Self> {
        for scene in &scenes {
            if scene.persons.is_empty() {
                return Err(KnowledgeError::BadScene {
                    scene_id: scene.scene_id.clone(),
                    message: "scene has no persons".into(),
                });
            }
            if scene.group_index >= vocabulary.group_count() {
                return Err(KnowledgeError::BadScene {
                    scene_id: scene.scene_id.clone(),
                    message: format!("group index {} out of range", scene.group_index),
                });
            }
            for p in &scene.persons {
                if p.action_index >= vocabulary.action_count() {
                    return Err(KnowledgeError::BadScene {
                        scene_id: scene.scene_id.clone(),
                        message: format!("action index {} out of range", p.action_index),
                    });
                }
                p.bbox.validate(&scene.scene_id, scene.frame_size)?;
            }
        }
        Ok(AnnotationSet { vocabulary, scenes })
    }

    /// The common frame size, or an error when scenes disagree.
    pub fn frame_size(&self) -> Result<Option<(u32, u32)>> {
        let mut frame = None;
        for scene in &self.scenes {
            match frame {
                None => frame = Some(scene.frame_size),
                Some(f) if f != scene.frame_size => {
                    return Err(KnowledgeError::MixedFrameSizes(f, scene.frame_size))
                }
                _ => {}
            }
        }
        Ok(frame)
    }
}
