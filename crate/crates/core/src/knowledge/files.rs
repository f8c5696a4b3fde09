//! On-disk formats: line-oriented annotations and the JSON map file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{
    AnnotationSet, BBox, CcMap, CpMap, KnowledgeError, MapGrid, PersonRecord, Result,
    SceneAnnotation, Vocabulary,
};
use crate::scalar::Scalar;
use crate::ser::push_f64_array;

fn io_err(path: &Path, source: std::io::Error) -> KnowledgeError {
    KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> KnowledgeError {
    KnowledgeError::Parse {
        line,
        message: message.into(),
    }
}

// ── annotation text format ───────────────────────────────────────────────
//
// Header lines `actions: a,b,c`, `groups: g1,g2`, `frame: WxH`, then one
// line per person: `scene_id group_label x_min y_min x_max y_max action_label`.
// Scenes are formed by first appearance of a scene id; order is preserved.

impl AnnotationSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| io_err(path.as_ref(), e))?;
        parse_annotations(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text()?).map_err(|e| io_err(path.as_ref(), e))
    }

    pub fn to_text(&self) -> Result<String> {
        let frame = self.frame_size()?.unwrap_or((0, 0));
        let mut out = String::new();
        out.push_str(&format!("actions: {}\n", self.vocabulary.actions().join(",")));
        out.push_str(&format!("groups: {}\n", self.vocabulary.groups().join(",")));
        out.push_str(&format!("frame: {}x{}\n", frame.0, frame.1));
        for scene in &self.scenes {
            let group = &self.vocabulary.groups()[scene.group_index];
            for p in &scene.persons {
                let action = &self.vocabulary.actions()[p.action_index];
                out.push_str(&format!(
                    "{} {} {} {} {} {} {}\n",
                    scene.scene_id, group, p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max,
                    action
                ));
            }
        }
        Ok(out)
    }
}

/// Parses the annotation text format. See [`AnnotationSet::load`].
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut header = |name: &str| -> Result<(usize, String)> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("missing `{name}:` header")))?;
        let value = line
            .strip_prefix(name)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(|| parse_err(no, format!("expected `{name}:` header, got `{line}`")))?;
        Ok((no, value.trim().to_string()))
    };

    let (_, actions) = header("actions")?;
    let (_, groups) = header("groups")?;
    let (frame_no, frame_str) = header("frame")?;

    let split_labels = |s: &str| -> Vec<String> {
        s.split(',')
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect()
    };
    let vocabulary = Vocabulary::new(split_labels(&actions), split_labels(&groups))?;

    let frame = frame_str
        .split_once('x')
        .and_then(|(w, h)| Some((w.trim().parse::<u32>().ok()?, h.trim().parse::<u32>().ok()?)))
        .ok_or_else(|| parse_err(frame_no, format!("bad frame size `{frame_str}`")))?;

    let mut scenes: Vec<SceneAnnotation> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(parse_err(no, format!("expected 7 fields, got {}", fields.len())));
        }
        let scene_id = fields[0];
        let group_index =
            vocabulary
                .group_index(fields[1])
                .ok_or_else(|| KnowledgeError::UnknownLabel {
                    label: fields[1].to_string(),
                    line: no,
                })?;
        let coords: Vec<f64> = fields[2..6]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(no, format!("bad coordinate: {e}")))?;
        let action_index =
            vocabulary
                .action_index(fields[6])
                .ok_or_else(|| KnowledgeError::UnknownLabel {
                    label: fields[6].to_string(),
                    line: no,
                })?;
        let record = PersonRecord {
            bbox: BBox::new(coords[0], coords[1], coords[2], coords[3]),
            action_index,
        };
        match index.get(scene_id) {
            Some(&i) => {
                if scenes[i].group_index != group_index {
                    return Err(KnowledgeError::BadScene {
                        scene_id: scene_id.to_string(),
                        message: "inconsistent group label across lines".into(),
                    });
                }
                scenes[i].persons.push(record);
            }
            None => {
                index.insert(scene_id.to_string(), scenes.len());
                scenes.push(SceneAnnotation {
                    scene_id: scene_id.to_string(),
                    frame_size: frame,
                    persons: vec![record],
                    group_index,
                });
            }
        }
    }
    AnnotationSet::new(vocabulary, scenes)
}

// ── map file (JSON) ──────────────────────────────────────────────────────

const MAP_FORMAT_VERSION: u32 = 1;

/// Writes both maps to one JSON document with 17-significant-digit numbers,
/// so a reload reproduces every value bit-exactly.
pub fn save_maps<S: Scalar>(cc: &CcMap<S>, cp: &CpMap<S>, path: impl AsRef<Path>) -> Result<()> {
    let k = cc.action_count();
    if cp.action_count() != k {
        return Err(KnowledgeError::MapFormat(format!(
            "cc has K={k} but cp has K={}",
            cp.action_count()
        )));
    }
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"version\": {MAP_FORMAT_VERSION},\n"));
    out.push_str(&format!("  \"K\": {k},\n"));
    out.push_str(&format!("  \"H\": {},\n", cp.grid_h()));
    out.push_str(&format!("  \"W\": {},\n", cp.grid_w()));
    out.push_str(&format!(
        "  \"frame\": [{}, {}],\n",
        cp.frame_size().0,
        cp.frame_size().1
    ));
    out.push_str("  \"cc\": ");
    push_f64_array(&mut out, cc.values().iter().map(|v| v.as_f64()));
    out.push_str(",\n  \"cp\": ");
    push_f64_array(&mut out, cp.values().iter().map(|v| v.as_f64()));
    out.push_str("\n}\n");
    fs::write(path.as_ref(), out).map_err(|e| io_err(path.as_ref(), e))
}

#[derive(Deserialize)]
struct MapFile {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    frame: (u32, u32),
    cc: Vec<f64>,
    cp: Vec<f64>,
}

pub fn load_maps<S: Scalar>(path: impl AsRef<Path>) -> Result<(CcMap<S>, CpMap<S>)> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| io_err(path.as_ref(), e))?;
    let file: MapFile =
        serde_json::from_str(&text).map_err(|e| KnowledgeError::MapFormat(e.to_string()))?;
    if file.version != MAP_FORMAT_VERSION {
        return Err(KnowledgeError::Version(file.version));
    }
    if file.cc.len() != file.k * file.k {
        return Err(KnowledgeError::MapFormat(format!(
            "cc payload has {} values, header implies {}",
            file.cc.len(),
            file.k * file.k
        )));
    }
    if file.cp.len() != file.h * file.w * file.k {
        return Err(KnowledgeError::MapFormat(format!(
            "cp payload has {} values, header implies {}",
            file.cp.len(),
            file.h * file.w * file.k
        )));
    }
    if !file.cc.iter().chain(&file.cp).all(|v| v.is_finite()) {
        return Err(KnowledgeError::MapFormat("non-finite map value".into()));
    }
    let from = |v: &f64| S::from_f64(*v).unwrap();
    let cc = CcMap::from_values(file.k, file.cc.iter().map(from).collect());
    let cp = CpMap::from_values(
        MapGrid {
            h: file.h,
            w: file.w,
        },
        file.k,
        file.frame,
        file.cp.iter().map(from).collect(),
    );
    Ok((cc, cp))
}
