//! Feature file: per-scene person feature rows and the scene grid.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{Result, SynthError};
use crate::knowledge::AnnotationSet;
use crate::model::SceneSample;
use crate::ser::{json_escape, push_f64_array};
use crate::tensor::Tensor;

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes every sample's person features (N×P×C row-major) and scene grid
/// (H×W×C row-major) keyed by scene id, with 17-significant-digit numbers.
pub fn save_features(samples: &[SceneSample<f64>], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("{\n  \"version\": 1,\n");
    let (parts, feature_dim) = match samples.first() {
        Some(s) => (s.person_features.shape()[1], s.person_features.shape()[2]),
        None => (1, 0),
    };
    let grid = match samples.first() {
        Some(s) => (s.scene_feature.shape()[0], s.scene_feature.shape()[1]),
        None => (0, 0),
    };
    out.push_str(&format!("  \"parts\": {parts},\n"));
    out.push_str(&format!("  \"feature_dim\": {feature_dim},\n"));
    out.push_str(&format!("  \"scene_grid\": [{}, {}],\n", grid.0, grid.1));
    out.push_str("  \"scenes\": [");
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "\n    {{\"id\": \"{}\", \"persons\": ",
            json_escape(&s.scene_id)
        ));
        push_f64_array(&mut out, s.person_features.data().iter().copied());
        out.push_str(", \"grid\": ");
        push_f64_array(&mut out, s.scene_feature.data().iter().copied());
        out.push('}');
    }
    out.push_str("\n  ]\n}\n");
    fs::write(path.as_ref(), out).map_err(|e| io_err(path.as_ref(), e))
}

#[derive(Deserialize)]
pub struct FeatureFile {
    pub version: u32,
    pub parts: usize,
    pub feature_dim: usize,
    pub scene_grid: (usize, usize),
    pub scenes: Vec<FeatureScene>,
}

#[derive(Deserialize)]
pub struct FeatureScene {
    pub id: String,
    pub persons: Vec<f64>,
    pub grid: Vec<f64>,
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| io_err(path.as_ref(), e))?;
    let file: FeatureFile =
        serde_json::from_str(&text).map_err(|e| SynthError::FeatureFormat(e.to_string()))?;
    if file.version != 1 {
        return Err(SynthError::FeatureFormat(format!(
            "unsupported version {}",
            file.version
        )));
    }
    Ok(file)
}

/// Joins an annotation file with its feature file into model inputs.
/// Scene ids must match one-to-one in order.
pub fn load_dataset(
    annotations: impl AsRef<Path>,
    features: impl AsRef<Path>,
) -> Result<(Vec<SceneSample<f64>>, AnnotationSet)> {
    let ann = AnnotationSet::load(annotations)?;
    let file = load_features(features)?;
    if ann.scenes.len() != file.scenes.len() {
        return Err(SynthError::FeatureFormat(format!(
            "{} annotated scenes but {} feature scenes",
            ann.scenes.len(),
            file.scenes.len()
        )));
    }
    let by_id: HashMap<&str, &FeatureScene> =
        file.scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    let (gh, gw) = file.scene_grid;
    let c = file.feature_dim;
    let mut samples = Vec::with_capacity(ann.scenes.len());
    for scene in &ann.scenes {
        let feat = by_id.get(scene.scene_id.as_str()).ok_or_else(|| {
            SynthError::FeatureFormat(format!("no features for scene {}", scene.scene_id))
        })?;
        let n = scene.persons.len();
        if feat.persons.len() != n * file.parts * c {
            return Err(SynthError::FeatureFormat(format!(
                "scene {}: {} feature values, expected {}",
                scene.scene_id,
                feat.persons.len(),
                n * file.parts * c
            )));
        }
        if feat.grid.len() != gh * gw * c {
            return Err(SynthError::FeatureFormat(format!(
                "scene {}: grid has {} values, expected {}",
                scene.scene_id,
                feat.grid.len(),
                gh * gw * c
            )));
        }
        samples.push(SceneSample {
            scene_id: scene.scene_id.clone(),
            frame: scene.frame_size,
            scene_feature: Tensor::new(&[gh, gw, c], feat.grid.clone())
                .expect("validated above"),
            person_features: Tensor::new(&[n, file.parts, c], feat.persons.clone())
                .expect("validated above"),
            bboxes: scene.persons.iter().map(|p| p.bbox).collect(),
            action_targets: scene.persons.iter().map(|p| p.action_index).collect(),
            group_target: scene.group_index,
        });
    }
    Ok((samples, ann))
}
