//! Eye tracker observations: image-space eye corners, pupil and iris size
//! under slow head motion, with tracker artefacts from smiles and blinks.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tracks::FactorTracks;
use super::SubjectProfile;
use crate::features::EyeObservation;

/// Eye corners in head coordinates (pixels), left eye then right eye.
const CORNERS: [[[f64; 2]; 2]; 2] = [[[-60.0, 0.0], [-20.0, 0.0]], [[20.0, 0.0], [60.0, 0.0]]];
/// Downward tracker offset during a smile, in iris radii.
pub const SMILE_DROP: f64 = 0.45;
/// Downward pupil estimate shift while the lid covers it, in iris radii.
pub const BLINK_DROP: f64 = 1.2;

/// Tracker-space gaze as seen by the frontend: `(x, y)` per eye.
pub fn observed_gaze(tracks: &FactorTracks, t: usize) -> [f64; 4] {
    let g = tracks.gaze[t];
    let dy = SMILE_DROP * tracks.expression[t] + BLINK_DROP * tracks.blink[t];
    [g[0], g[1] + dy, g[2], g[3] + dy]
}

pub(crate) fn observe(rng: &mut ChaCha8Rng, tracks: &FactorTracks, subject: &SubjectProfile) -> Vec<[EyeObservation; 2]> {
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let mut noise = || -> f64 { StandardNormal.sample(rng) };
    (0..tracks.len())
        .map(|t| {
            let x = t as f64 / 100.0;
            let centre = [
                320.0 + 15.0 * (TAU * 0.05 * x + phases[0]).sin(),
                240.0 + 10.0 * (TAU * 0.07 * x + phases[1]).sin(),
            ];
            let theta = 0.06 * (TAU * 0.03 * x + phases[2]).sin();
            let scale = 1.0 + 0.04 * (TAU * 0.02 * x + phases[3]).sin();
            let (c, s) = (theta.cos(), theta.sin());
            let to_image = |p: [f64; 2]| {
                [
                    centre[0] + scale * (c * p[0] - s * p[1]),
                    centre[1] + scale * (s * p[0] + c * p[1]),
                ]
            };
            let obs = observed_gaze(tracks, t);
            let jitter = subject.gaze_noise * (1.0 + 3.0 * tracks.blink[t]);
            std::array::from_fn(|e| {
                let [l, r] = CORNERS[e];
                let half = 0.5 * (r[0] - l[0]);
                let mid = [0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1])];
                let gx = obs[2 * e] + jitter * noise();
                let gy = obs[2 * e + 1] + jitter * noise();
                let radius = subject.iris_radius;
                // Head frame is axis-aligned: along = +x, across = +y.
                let pupil = [mid[0] + gx * half, mid[1] + gy * radius];
                EyeObservation {
                    left_corner: to_image(l),
                    right_corner: to_image(r),
                    pupil: to_image(pupil),
                    iris_radius: radius * scale,
                }
            })
        })
        .collect()
}
