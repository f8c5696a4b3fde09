//! Building and querying the two knowledge maps.

use super::{AnnotationSet, BBox, KnowledgeError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Resolution of the class-position grid. The paper projects onto a
/// frame-sized image; a coarse grid with coordinate scaling keeps the same
/// distribution semantics at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapGrid {
    pub h: usize,
    pub w: usize,
}

impl Default for MapGrid {
    fn default() -> Self {
        MapGrid { h: 16, w: 16 }
    }
}

/// Class-class co-occurrence statistics: `values[i*k + j]` is the normalized
/// count of unordered (i, j) action pairs over all training scenes. The
/// matrix is symmetric and sums to 1 unless no pair exists at all.
#[derive(Debug, Clone, PartialEq)]
pub struct CcMap<S: Scalar> {
    k: usize,
    values: Vec<S>,
    degenerate: bool,
}

impl<S: Scalar> CcMap<S> {
    /// All-zero map, the neutral element of the attention bias.
    pub fn zeros(k: usize) -> Self {
        CcMap {
            k,
            values: vec![S::zero(); k * k],
            degenerate: true,
        }
    }

    pub(crate) fn from_values(k: usize, values: Vec<S>) -> Self {
        let degenerate = values.iter().all(|v| *v == S::zero());
        CcMap {
            k,
            values,
            degenerate,
        }
    }

    pub fn action_count(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.values[i * self.k + j]
    }

    /// True when the source annotations contained no action pair.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// The map as a (K, K) tensor for use as an attention bias.
    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::new(&[self.k, self.k], self.values.clone()).expect("consistent dims")
    }
}

/// Class-position statistics on an H×W grid: `values[(r*w + c)*k + i]` is
/// the normalized count of action `i` occurrences whose bbox center falls in
/// cell (r, c). Each observed action's slice sums to 1; unobserved actions
/// have all-zero slices.
#[derive(Debug, Clone, PartialEq)]
pub struct CpMap<S: Scalar> {
    grid_h: usize,
    grid_w: usize,
    k: usize,
    frame_size: (u32, u32),
    values: Vec<S>,
    degenerate: bool,
}

impl<S: Scalar> CpMap<S> {
    pub fn zeros(grid: MapGrid, k: usize, frame_size: (u32, u32)) -> Self {
        CpMap {
            grid_h: grid.h,
            grid_w: grid.w,
            k,
            frame_size,
            values: vec![S::zero(); grid.h * grid.w * k],
            degenerate: true,
        }
    }

    pub(crate) fn from_values(
        grid: MapGrid,
        k: usize,
        frame_size: (u32, u32),
        values: Vec<S>,
    ) -> Self {
        let degenerate = values.iter().all(|v| *v == S::zero());
        CpMap {
            grid_h: grid.h,
            grid_w: grid.w,
            k,
            frame_size,
            values,
            degenerate,
        }
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn action_count(&self) -> usize {
        self.k
    }

    pub fn frame_size(&self) -> (u32, u32) {
        self.frame_size
    }

    /// Row-major (H, W, K) payload.
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize, action: usize) -> S {
        self.values[(row * self.grid_w + col) * self.k + action]
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Grid cell containing a pixel point; out-of-frame points clamp to the
    /// nearest valid cell so lookup is total.
    pub fn cell_of(&self, cx: f64, cy: f64) -> (usize, usize) {
        let col = scale_to_cell(cx, self.frame_size.0, self.grid_w);
        let row = scale_to_cell(cy, self.frame_size.1, self.grid_h);
        (row, col)
    }
}

fn scale_to_cell(coord: f64, extent_px: u32, cells: usize) -> usize {
    if extent_px == 0 || cells == 0 {
        return 0;
    }
    let raw = (coord / f64::from(extent_px) * cells as f64).floor();
    if raw.is_nan() || raw < 0.0 {
        0
    } else {
        (raw as usize).min(cells - 1)
    }
}

/// Counts unordered action pairs per scene and normalizes by the total.
///
/// A scene with `n_i` persons of action `i` contributes `n_i · n_j` to both
/// (i, j) and (j, i) for `i ≠ j`, and `n_i (n_i − 1) / 2` to (i, i). Counts
/// accumulate as integers, so scene order cannot perturb the result.
pub fn build_cc_map<S: Scalar>(annotations: &AnnotationSet) -> CcMap<S> {
    let k = annotations.vocabulary.action_count();
    let mut counts = vec![0u64; k * k];
    let mut per_scene = vec![0u64; k];
    for scene in &annotations.scenes {
        per_scene.iter_mut().for_each(|c| *c = 0);
        for p in &scene.persons {
            per_scene[p.action_index] += 1;
        }
        for i in 0..k {
            let n_i = per_scene[i];
            if n_i == 0 {
                continue;
            }
            counts[i * k + i] += n_i * (n_i - 1) / 2;
            for j in (i + 1)..k {
                let pairs = n_i * per_scene[j];
                counts[i * k + j] += pairs;
                counts[j * k + i] += pairs;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return CcMap::zeros(k);
    }
    let inv = S::one() / S::from_u64(total).unwrap();
    let values = counts
        .iter()
        .map(|&c| S::from_u64(c).unwrap() * inv)
        .collect();
    CcMap::from_values(k, values)
}

/// Histograms bbox centers per action label onto the grid and normalizes
/// each observed label's slice to sum 1.
pub fn build_cp_map<S: Scalar>(annotations: &AnnotationSet, grid: MapGrid) -> Result<CpMap<S>> {
    if grid.h == 0 || grid.w == 0 {
        return Err(KnowledgeError::BadGrid);
    }
    let k = annotations.vocabulary.action_count();
    let frame = annotations.frame_size()?.unwrap_or((0, 0));
    let mut counts = vec![0u64; grid.h * grid.w * k];
    let mut label_totals = vec![0u64; k];
    for scene in &annotations.scenes {
        for p in &scene.persons {
            let (cx, cy) = p.bbox.center();
            let col = scale_to_cell(cx, frame.0, grid.w);
            let row = scale_to_cell(cy, frame.1, grid.h);
            counts[(row * grid.w + col) * k + p.action_index] += 1;
            label_totals[p.action_index] += 1;
        }
    }
    let mut values = vec![S::zero(); counts.len()];
    for (idx, &c) in counts.iter().enumerate() {
        let label = idx % k;
        if c > 0 {
            values[idx] = S::from_u64(c).unwrap() / S::from_u64(label_totals[label]).unwrap();
        }
    }
    Ok(CpMap::from_values(grid, k, frame, values))
}

/// Reads the map at each bbox center, turning the H×W×K map into an N×K
/// bias: row n is the action distribution at person n's position.
pub fn cp_lookup<S: Scalar>(map: &CpMap<S>, bboxes: &[BBox]) -> Tensor<S> {
    let k = map.action_count();
    let mut data = Vec::with_capacity(bboxes.len() * k);
    for bbox in bboxes {
        let (cx, cy) = bbox.center();
        let (row, col) = map.cell_of(cx, cy);
        let base = (row * map.grid_w + col) * k;
        data.extend_from_slice(&map.values[base..base + k]);
    }
    Tensor::new(&[bboxes.len(), k], data).expect("consistent dims")
}
