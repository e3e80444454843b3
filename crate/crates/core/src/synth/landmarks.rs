//! Coefficient-to-landmark map standing in for a rendered face and tracker.
//!
//! 83 points in four regions: eyebrows (18), eyes (20), nose (13) and mouth
//! (32, of which the last 12 are the inner lips: six upper points followed
//! by their six lower partners). Every coordinate of a landmark `j` moves by
//! `S tanh(a_j · c_R / S)` from the subject's neutral template, where `c_R`
//! holds the coefficients driving the landmark's region and `a_j` is a fixed
//! seeded row. Inner-lip pairs share one such offset and are then separated
//! vertically by `GAP_SCALE · w_i · c[0]`, so they coincide exactly when the
//! lip-gap coefficient is zero.

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::face::{EXPRESSION, EYES, FILLER, LIP_GAP};
use crate::error::{Error, Result};
use crate::features::FACE_DIM;
use crate::tensor::Tensor;

pub const LANDMARKS: usize = 83;
pub const EYEBROWS: Range<usize> = 0..18;
pub const EYE_POINTS: Range<usize> = 18..38;
pub const NOSE: Range<usize> = 38..51;
pub const MOUTH_POINTS: Range<usize> = 51..83;
pub const INNER_UPPER: Range<usize> = 71..77;
pub const INNER_LOWER: Range<usize> = 77..83;

pub const SATURATION: f64 = 15.0;
pub const GAP_SCALE: f64 = 24.0;
pub const GAP_PROFILE: [f64; 6] = [0.55, 0.85, 1.0, 1.0, 0.85, 0.55];

/// Named facial regions in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Eyebrows,
    Eyes,
    Nose,
    Mouth,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Eyebrows, Region::Eyes, Region::Nose, Region::Mouth];

    pub fn points(self) -> Range<usize> {
        match self {
            Region::Eyebrows => EYEBROWS,
            Region::Eyes => EYE_POINTS,
            Region::Nose => NOSE,
            Region::Mouth => MOUTH_POINTS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Eyebrows => "eyebrows",
            Region::Eyes => "eyes",
            Region::Nose => "nose",
            Region::Mouth => "mouth",
        }
    }

    pub fn of(point: usize) -> Region {
        Region::ALL
            .into_iter()
            .find(|r| r.points().contains(&point))
            .expect("point index below 83")
    }

    /// Coefficient blocks driving the region, with the per-block row scale.
    pub fn drivers(self) -> &'static [(Range<usize>, f64)] {
        const BROWS: &[(Range<usize>, f64)] = &[(EXPRESSION, 0.9), (EYES, 0.35)];
        const EYE: &[(Range<usize>, f64)] = &[(EYES, 0.8)];
        const NOSE_D: &[(Range<usize>, f64)] = &[(FILLER, 0.6), (EXPRESSION, 0.25)];
        const MOUTH_D: &[(Range<usize>, f64)] = &[(1..64, 1.1), (EXPRESSION, 0.8)];
        match self {
            Region::Eyebrows => BROWS,
            Region::Eyes => EYE,
            Region::Nose => NOSE_D,
            Region::Mouth => MOUTH_D,
        }
    }
}

/// `[T, 83, 2]` landmark positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLandmarkSet {
    pub points: Tensor<f64>,
}

impl SyntheticLandmarkSet {
    pub fn frames(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn point(&self, t: usize, j: usize) -> [f64; 2] {
        let d = self.points.data();
        let i = (t * LANDMARKS + j) * 2;
        [d[i], d[i + 1]]
    }
}

/// A subject's neutral template and per-coordinate driving rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkDecoder {
    /// `[83][2]` neutral positions.
    pub template: Vec<[f64; 2]>,
    /// For each landmark and coordinate, weights over the concatenated
    /// driving blocks of its region (in [`Region::drivers`] order).
    pub rows: Vec<[Vec<f64>; 2]>,
}

fn canonical() -> Vec<[f64; 2]> {
    let mut p = Vec::with_capacity(LANDMARKS);
    for side in [-1.0, 1.0] {
        for i in 0..9 {
            let u = i as f64 / 8.0;
            let x = side * (20.0 + 55.0 * u);
            p.push([x, -55.0 - 8.0 * (PI * u).sin()]);
        }
    }
    for cx in [-40.0, 40.0] {
        for i in 0..10 {
            let a = 2.0 * PI * i as f64 / 10.0;
            p.push([cx + 20.0 * a.cos(), -30.0 + 8.0 * a.sin()]);
        }
    }
    for i in 0..5 {
        p.push([0.0, -25.0 + 7.5 * i as f64]);
    }
    for i in 0..8 {
        let a = PI * (0.15 + 0.7 * i as f64 / 7.0);
        p.push([-18.0 * a.cos(), 10.0 + 6.0 * a.sin()]);
    }
    for i in 0..20 {
        let a = 2.0 * PI * i as f64 / 20.0;
        p.push([30.0 * a.cos(), 45.0 + 14.0 * a.sin()]);
    }
    for _ in 0..2 {
        for i in 0..6 {
            p.push([-15.0 + 6.0 * i as f64, 45.0]);
        }
    }
    p
}

impl LandmarkDecoder {
    /// Subject-specific decoder; ids other than 1..=3 are rejected.
    pub fn for_subject(subject: u8) -> Result<Self> {
        if !(1..=3).contains(&subject) {
            return Err(Error::invalid(format!("subject must be 1..=3, got {subject}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x1a2d_0000 + subject as u64);
        let scale = rng.random_range(0.93..1.07);
        let mut template: Vec<[f64; 2]> = canonical()
            .into_iter()
            .map(|[x, y]| {
                let jx: f64 = StandardNormal.sample(&mut rng);
                let jy: f64 = StandardNormal.sample(&mut rng);
                [scale * x + jx, scale * y + jy]
            })
            .collect();
        for (u, l) in INNER_UPPER.zip(INNER_LOWER) {
            template[l] = template[u];
        }
        let mut rows = Vec::with_capacity(LANDMARKS);
        for j in 0..LANDMARKS {
            let region = Region::of(j);
            let mut row = || -> Vec<f64> {
                region
                    .drivers()
                    .iter()
                    .flat_map(|(r, s)| r.clone().map(move |_| *s))
                    .map(|s| s * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            };
            rows.push([row(), row()]);
        }
        // Inner-lip partners move together before the gap is applied.
        for (u, l) in INNER_UPPER.zip(INNER_LOWER) {
            rows[l] = rows[u].clone();
        }
        Ok(LandmarkDecoder { template, rows })
    }

    fn drive(region: Region, c: &[f64]) -> Vec<f64> {
        region
            .drivers()
            .iter()
            .flat_map(|(r, _)| c[r.clone()].iter().copied())
            .collect()
    }

    /// Landmarks for `[T, 256]` coefficients.
    pub fn decode(&self, coeffs: &Tensor<f64>) -> Result<SyntheticLandmarkSet> {
        if coeffs.shape().len() != 2 || coeffs.channels() != FACE_DIM {
            return Err(Error::invalid(format!(
                "coefficients must be [T, {FACE_DIM}], got {:?}",
                coeffs.shape()
            )));
        }
        let t = coeffs.shape()[0];
        let mut out = Vec::with_capacity(t * LANDMARKS * 2);
        for c in coeffs.data().chunks(FACE_DIM) {
            let drives: Vec<Vec<f64>> = Region::ALL.iter().map(|&r| Self::drive(r, c)).collect();
            for j in 0..LANDMARKS {
                let d = &drives[Region::of(j) as usize];
                for (k, row) in self.rows[j].iter().enumerate() {
                    let a: f64 = row.iter().zip(d).map(|(w, v)| w * v).sum();
                    let mut v = self.template[j][k] + SATURATION * (a / SATURATION).tanh();
                    if k == 1 {
                        let gap = GAP_SCALE * c[LIP_GAP];
                        if INNER_UPPER.contains(&j) {
                            v -= 0.5 * gap * GAP_PROFILE[j - INNER_UPPER.start];
                        } else if INNER_LOWER.contains(&j) {
                            v += 0.5 * gap * GAP_PROFILE[j - INNER_LOWER.start];
                        }
                    }
                    out.push(v);
                }
            }
        }
        Ok(SyntheticLandmarkSet {
            points: Tensor::new(vec![t, LANDMARKS, 2], out)?,
        })
    }
}

/// Decodes with the given subject's decoder.
pub fn decode_landmarks(decoder: &LandmarkDecoder, coeffs: &Tensor<f64>) -> Result<SyntheticLandmarkSet> {
    decoder.decode(coeffs)
}
