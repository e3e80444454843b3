//! Eye-corner normalized pupil coordinates.
//!
//! The eye corners map to `(-1, 0)` and `(1, 0)`. The perpendicular axis is
//! measured in iris radii, so `y = 1` is one iris radius along the
//! corner-to-corner direction rotated by +90° (image-down for an upright
//! face in pixel coordinates). The result does not change under rotation,
//! translation or uniform scaling of the image plane.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeObservation {
    pub left_corner: [f64; 2],
    pub right_corner: [f64; 2],
    pub pupil: [f64; 2],
    pub iris_radius: f64,
}

pub fn normalize_gaze(obs: &EyeObservation) -> Result<(f64, f64)> {
    let [lx, ly] = obs.left_corner;
    let [rx, ry] = obs.right_corner;
    let (dx, dy) = (rx - lx, ry - ly);
    let width = dx.hypot(dy);
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::DegenerateGeometry(
            "eye corners coincide; no reference axis".into(),
        ));
    }
    if !(obs.iris_radius > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "iris radius must be positive, got {}",
            obs.iris_radius
        )));
    }
    let (ux, uy) = (dx / width, dy / width);
    let (px, py) = (obs.pupil[0] - 0.5 * (lx + rx), obs.pupil[1] - 0.5 * (ly + ry));
    let along = px * ux + py * uy;
    let across = -px * uy + py * ux;
    Ok((along / (0.5 * width), across / obs.iris_radius))
}

/// Per-frame gaze features `[T, 4]`: `(x, y)` of the left eye, then the right.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeFrameSequence {
    pub frames: Tensor<f64>,
    /// Values outside the typical `[-2, 2]` range (soft check only).
    pub out_of_range: usize,
}

pub fn gaze_features(eyes: &[[EyeObservation; 2]]) -> Result<GazeFrameSequence> {
    let mut data = Vec::with_capacity(eyes.len() * 4);
    for pair in eyes {
        for eye in pair {
            let (x, y) = normalize_gaze(eye)?;
            data.push(x);
            data.push(y);
        }
    }
    let out_of_range = data.iter().filter(|v| v.abs() > 2.0).count();
    Ok(GazeFrameSequence {
        frames: Tensor::new(vec![eyes.len(), 4], data)?,
        out_of_range,
    })
}
