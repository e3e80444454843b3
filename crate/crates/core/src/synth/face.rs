//! Facial coefficient wiring. Each 64-wide block is a fixed seeded linear
//! image of its own factors, with the block's first coefficient set to a
//! named factor:
//!
//! | dims    | block      | factors                                        | first dim      |
//! |---------|------------|------------------------------------------------|----------------|
//! | 0–63    | mouth      | lip gap, `s`, four phones, jaw, `s · phone2`   | lip gap        |
//! | 64–127  | eyes       | gaze `(x, y)` of both eyes, blink, squint      | lid closure    |
//! | 128–191 | expression | `e`, `e²`, slow average of `e`                 | `e`            |
//! | 192–255 | filler     | independent slow AR(1) noise                   |                |
//!
//! The lip gap is `clamp(s (0.55 + 0.45 phone0) + onset + rest, 0, 1)`, so
//! it is 0 wherever the envelope closes outside onsets and resting pauses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tracks::FactorTracks;
use crate::features::FACE_DIM;
use crate::tensor::Tensor;

pub const MOUTH: std::ops::Range<usize> = 0..64;
pub const EYES: std::ops::Range<usize> = 64..128;
pub const EXPRESSION: std::ops::Range<usize> = 128..192;
pub const FILLER: std::ops::Range<usize> = 192..256;
pub const LIP_GAP: usize = 0;

const WIRING_SEED: u64 = 0x00c0_ffee;
const FILLER_RHO: f64 = 0.995;
const FILLER_STD: f64 = 0.08;
const EXPRESSION_LAG: f64 = 0.02;

pub fn lip_gap(tracks: &FactorTracks, t: usize) -> f64 {
    let s = tracks.speech[t];
    (s * (0.55 + 0.45 * tracks.phones[t][0]) + tracks.onset[t] + tracks.rest[t]).clamp(0.0, 1.0)
}

/// Fixed block matrices: 63 rows per block, one column per factor.
pub struct Wiring {
    pub mouth: Vec<[f64; 8]>,
    pub eyes: Vec<[f64; 6]>,
    pub expression: Vec<[f64; 3]>,
}

fn rows<const K: usize>(rng: &mut ChaCha8Rng) -> Vec<[f64; K]> {
    let scale = 0.8 / (K as f64).sqrt();
    (0..63)
        .map(|_| std::array::from_fn(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng)))
        .collect()
}

impl Wiring {
    pub fn fixed() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(WIRING_SEED);
        Wiring {
            mouth: rows(&mut rng),
            eyes: rows(&mut rng),
            expression: rows(&mut rng),
        }
    }
}

fn fill<const K: usize>(out: &mut [f64], first: f64, m: &[[f64; K]], u: &[f64; K]) {
    out[0] = first;
    for (o, row) in out[1..].iter_mut().zip(m) {
        *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
    }
}

pub(crate) fn coefficients(rng: &mut ChaCha8Rng, tracks: &FactorTracks) -> Tensor<f64> {
    let w = Wiring::fixed();
    let n = tracks.len();
    let mut c = vec![0.0; n * FACE_DIM];
    let mut filler = [0.0f64; 64];
    for v in filler.iter_mut() {
        *v = FILLER_STD * Distribution::<f64>::sample(&StandardNormal, &mut *rng);
    }
    let innov = FILLER_STD * (1.0 - FILLER_RHO * FILLER_RHO).sqrt();
    let mut slow_e = 0.0;
    for t in 0..n {
        let row = &mut c[t * FACE_DIM..(t + 1) * FACE_DIM];
        let (s, p, e) = (tracks.speech[t], tracks.phones[t], tracks.expression[t]);
        let g = lip_gap(tracks, t);
        let mouth = [g, s, p[0], p[1], p[2], p[3], 0.6 * g + 0.4 * s, s * p[2]];
        fill(&mut row[MOUTH], g, &w.mouth, &mouth);
        let gz = tracks.gaze[t];
        let b = tracks.blink[t];
        let eyes = [gz[0], gz[1], gz[2], gz[3], b, e];
        fill(&mut row[EYES], (b + 0.35 * e).min(1.0), &w.eyes, &eyes);
        slow_e += EXPRESSION_LAG * (e - slow_e);
        fill(&mut row[EXPRESSION], e, &w.expression, &[e, e * e, slow_e]);
        for (o, f) in row[FILLER].iter_mut().zip(filler.iter_mut()) {
            *f = FILLER_RHO * *f + innov * Distribution::<f64>::sample(&StandardNormal, &mut *rng);
            *o = *f;
        }
    }
    Tensor::new(vec![n, FACE_DIM], c).unwrap()
}
