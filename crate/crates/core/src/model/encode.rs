//! Person feature embedding and the fixed 2-D positional encoding.

use std::f64::consts::PI;

use super::{ModelError, ModelState, Result, SceneSample};
use crate::knowledge::BBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fixed sinusoidal encoding of normalized bbox centers: D/2 dimensions per
/// axis, interleaved sin/cos over geometrically spaced frequencies. The
/// highest frequency spans [0, π] across the frame, so (sin, cos) pairs stay
/// injective in position.
pub fn positional_encode<T: Scalar>(
    bboxes: &[BBox],
    frame: (u32, u32),
    d_model: usize,
) -> Result<Tensor<T>> {
    if d_model % 4 != 0 {
        return Err(ModelError::Config(format!(
            "positional encoding needs D divisible by 4, got {d_model}"
        )));
    }
    let pairs = d_model / 4;
    let (fw, fh) = (f64::from(frame.0).max(1.0), f64::from(frame.1).max(1.0));
    let mut data = Vec::with_capacity(bboxes.len() * d_model);
    for bbox in bboxes {
        let (cx, cy) = bbox.center();
        for u in [cx / fw, cy / fh] {
            for p in 0..pairs {
                let omega = PI / 10000f64.powf(p as f64 / pairs as f64);
                let angle = u * omega;
                data.push(T::from_config(angle.sin()));
                data.push(T::from_config(angle.cos()));
            }
        }
    }
    Tensor::new(&[bboxes.len(), d_model], data).map_err(ModelError::from)
}

/// X̄: per-person features through a fully-connected layer and ReLU, plus
/// the positional encoding of each person's bbox center (broadcast over
/// body parts).
pub fn embed_persons<T: Scalar>(
    state: &ModelState<T>,
    sample: &SceneSample<T>,
) -> Result<Tensor<T>> {
    let cfg = state.config();
    let n = sample.bboxes.len();
    let shape = sample.person_features.shape();
    if shape != [n, cfg.parts, cfg.feature_dim] {
        return Err(ModelError::Config(format!(
            "person features {shape:?} do not match N={n}, P={}, C={}",
            cfg.parts, cfg.feature_dim
        )));
    }
    let w = state.params().get("embed.person.w")?;
    let b = state.params().get("embed.person.b")?;
    let activated = sample.person_features.linear(w, Some(b))?.relu();

    let pe = positional_encode::<T>(&sample.bboxes, sample.frame, cfg.embed_dim)?;
    // broadcast the per-person encoding across parts
    let mut pe_data = Vec::with_capacity(n * cfg.parts * cfg.embed_dim);
    for person in 0..n {
        let row = &pe.data()[person * cfg.embed_dim..(person + 1) * cfg.embed_dim];
        for _ in 0..cfg.parts {
            pe_data.extend_from_slice(row);
        }
    }
    let pe_expanded = Tensor::new(&[n, cfg.parts, cfg.embed_dim], pe_data)?;
    activated.add(&pe_expanded).map_err(ModelError::from)
}
