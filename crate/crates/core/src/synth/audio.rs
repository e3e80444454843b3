//! Harmonic speech-like audio driven by the envelope and phone tracks.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tracks::FactorTracks;
use super::{Style, SubjectProfile};
use crate::features::PcmClip;

pub const SAMPLE_RATE: u32 = 16_000;
const HOP: usize = 160;
const WINDOW: usize = 800;
/// Formant-like band centres weighted by the four phone amplitudes.
pub const BAND_HZ: [f64; 4] = [550.0, 1250.0, 2600.0, 4200.0];
const BAND_OCTAVES: f64 = 0.35;
const GAIN: f64 = 0.08;
const TOP_HZ: f64 = 7600.0;

/// Samples needed so the mel frontend yields exactly `frames` frames.
pub fn samples_for(frames: usize) -> usize {
    HOP * (frames - 1) + WINDOW
}

fn f0_track(rng: &mut ChaCha8Rng, n: usize, style: Style, subject: &SubjectProfile) -> Vec<f64> {
    let base = subject.f0_hz
        * match style {
            Style::Descriptive => 1.15,
            Style::Conversational => 1.0,
        };
    let (p1, p2): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    (0..n)
        .map(|t| {
            let x = t as f64 / 100.0;
            base * (1.0 + 0.06 * (TAU * 0.21 * x + p1).sin() + 0.04 * (TAU * 0.47 * x + p2).sin())
        })
        .collect()
}

fn band_gain(f: f64, phones: &[f64; 4]) -> f64 {
    BAND_HZ
        .iter()
        .zip(phones)
        .map(|(&c, &p)| {
            let d = (f / c).log2() / BAND_OCTAVES;
            (0.15 + 0.85 * p) * (-0.5 * d * d).exp()
        })
        .sum()
}

/// Sum of harmonics of `f0(t)` with per-harmonic amplitude
/// `s(t) · band_gain(h f0, phones(t)) / sqrt(h)`, interpolated linearly
/// between frames and quantized to 16 bits. Frames where `s` is zero on both
/// sides produce exactly zero samples.
pub(crate) fn synthesize(
    rng: &mut ChaCha8Rng,
    tracks: &FactorTracks,
    style: Style,
    subject: &SubjectProfile,
) -> PcmClip {
    let n = tracks.len();
    let f0 = f0_track(rng, n, style, subject);
    let harmonics = (TOP_HZ / f0.iter().copied().fold(0.0, f64::max)).floor() as usize;
    // Per-frame amplitude of every harmonic.
    let amps: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            (1..=harmonics)
                .map(|h| {
                    let s = tracks.speech[t];
                    if s == 0.0 {
                        0.0
                    } else {
                        s * band_gain(h as f64 * f0[t], &tracks.phones[t]) / (h as f64).sqrt()
                    }
                })
                .collect()
        })
        .collect();
    let total = samples_for(n);
    let mut out = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    for k in 0..total {
        let pos = k as f64 / HOP as f64;
        let t0 = (pos.floor() as usize).min(n - 1);
        let t1 = (t0 + 1).min(n - 1);
        let u = (pos - t0 as f64).min(1.0);
        let f = f0[t0] + (f0[t1] - f0[t0]) * u;
        phase = (phase + TAU * f / SAMPLE_RATE as f64) % TAU;
        let (a0, a1) = (&amps[t0], &amps[t1]);
        let mut v = 0.0;
        if tracks.speech[t0] != 0.0 || tracks.speech[t1] != 0.0 {
            for h in 0..harmonics {
                let a = a0[h] + (a1[h] - a0[h]) * u;
                v += a * ((h + 1) as f64 * phase).sin();
            }
        }
        let q = (GAIN * v * 32768.0).round().clamp(-32768.0, 32767.0);
        out.push(q / 32768.0);
    }
    PcmClip::new(SAMPLE_RATE, out).expect("finite samples")
}
