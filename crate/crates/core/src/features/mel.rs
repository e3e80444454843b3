//! Log-mel spectrogram at 100 frames per second.
//!
//! Periodic Hann window of 800 samples (50 ms), hop 160 (10 ms), FFT size
//! 2048 with zero padding, 1025 one-sided power bins, 80 triangular filters
//! with edges equally spaced on `mel(f) = 2595 log10(1 + f / 700)` between
//! 0 and 8000 Hz, then `ln(x + 1e-6)`. No centering: frame `i` covers
//! samples `[160 i, 160 i + 800)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{MelFrameSequence, PcmClip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 800;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 2048;
pub const BINS: usize = FFT_SIZE / 2 + 1;
pub const MEL_BANDS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-6;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Number of frames produced for `n` samples (0 when shorter than a window).
pub fn frame_count(n: usize) -> usize {
    if n < WINDOW {
        0
    } else {
        1 + (n - WINDOW) / HOP
    }
}

/// Timestamp of frame `i` in seconds (start of its window).
pub fn frame_time(i: usize) -> f64 {
    (i * HOP) as f64 / SAMPLE_RATE as f64
}

struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Reusable mel analysis state (window, filterbank, FFT plan).
pub struct MelFrontend {
    window: Vec<f64>,
    filters: Vec<Filter>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontend {
    pub fn new() -> Self {
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
            .collect();
        let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
        let edges: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (MEL_BANDS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let filters = (0..MEL_BANDS)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let tri: Vec<(usize, f64)> = (0..BINS)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - lo) / (mid - lo);
                        let down = (hi - f) / (hi - mid);
                        (k, up.min(down).max(0.0))
                    })
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                Filter {
                    first_bin: tri.first().map_or(0, |t| t.0),
                    weights: tri.iter().map(|t| t.1).collect(),
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        MelFrontend {
            window,
            filters,
            centers_hz: edges[1..=MEL_BANDS].to_vec(),
            fft,
        }
    }

    /// Center frequency of each filter in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    fn check(clip: &PcmClip) -> Result<usize> {
        if clip.sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedFormat(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE}",
                clip.sample_rate
            )));
        }
        let t = frame_count(clip.samples.len());
        if t == 0 {
            return Err(Error::invalid(format!(
                "clip has {} samples, need at least {WINDOW}",
                clip.samples.len()
            )));
        }
        Ok(t)
    }

    /// Mel energies before log compression, `[T, 80]`.
    pub fn power_frames(&self, clip: &PcmClip) -> Result<Tensor<f64>> {
        let t_len = Self::check(clip)?;
        let mut out = vec![0.0; t_len * MEL_BANDS];
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; BINS];
        for (i, row) in out.chunks_mut(MEL_BANDS).enumerate() {
            let frame = &clip.samples[i * HOP..i * HOP + WINDOW];
            for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(s * w, 0.0);
            }
            for b in &mut buf[WINDOW..] {
                *b = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (r, f) in row.iter_mut().zip(&self.filters) {
                *r = f
                    .weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
            }
        }
        Tensor::new(vec![t_len, MEL_BANDS], out)
    }

    pub fn compute(&self, clip: &PcmClip) -> Result<MelFrameSequence> {
        let power = self.power_frames(clip)?;
        Ok(MelFrameSequence {
            frames: power.map(|p| (p + LOG_FLOOR).ln()),
        })
    }
}

/// Convenience wrapper building a fresh [`MelFrontend`].
pub fn mel_spectrogram(clip: &PcmClip) -> Result<MelFrameSequence> {
    MelFrontend::new().compute(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, seconds: f64, amp: f64) -> PcmClip {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        PcmClip::new(
            SAMPLE_RATE,
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn silence_sits_at_log_floor() {
        let clip = PcmClip::new(SAMPLE_RATE, vec![0.0; 4000]).unwrap();
        let mel = mel_spectrogram(&clip).unwrap();
        assert!(mel.frames.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn one_second_has_96_frames() {
        let mel = mel_spectrogram(&sine(440.0, 1.0, 1.0)).unwrap();
        assert_eq!(mel.frames.shape(), &[96, 80]);
    }

    #[test]
    fn rejects_wrong_rate_and_short_clips() {
        let clip = PcmClip::new(8000, vec![0.0; 8000]).unwrap();
        assert!(matches!(mel_spectrogram(&clip), Err(Error::UnsupportedFormat(_))));
        let short = PcmClip::new(SAMPLE_RATE, vec![0.0; 799]).unwrap();
        assert!(matches!(mel_spectrogram(&short), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn filters_are_triangles_with_unit_peak_region() {
        let fe = MelFrontend::new();
        assert_eq!(fe.filters.len(), MEL_BANDS);
        for f in &fe.filters {
            let peak = f.weights.iter().copied().fold(0.0, f64::max);
            assert!(peak > 0.5 && peak <= 1.0);
        }
    }

    #[test]
    fn energy_scales_quadratically() {
        let fe = MelFrontend::new();
        let base = sine(300.0, 0.2, 0.3);
        let loud = PcmClip::new(SAMPLE_RATE, base.samples.iter().map(|s| 2.0 * s).collect())
            .unwrap();
        let a = fe.power_frames(&base).unwrap();
        let b = fe.power_frames(&loud).unwrap();
        // Power-of-two scaling is exact in binary floating point.
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*y, 4.0 * x);
        }
        let c = 1.7;
        let louder = PcmClip::new(SAMPLE_RATE, base.samples.iter().map(|s| c * s).collect())
            .unwrap();
        let d = fe.power_frames(&louder).unwrap();
        // FFT rounding is relative to the frame's peak energy, not each band.
        for (ra, rd) in a.data().chunks(MEL_BANDS).zip(d.data().chunks(MEL_BANDS)) {
            let peak = rd.iter().copied().fold(0.0, f64::max);
            for (x, y) in ra.iter().zip(rd) {
                assert!((y - c * c * x).abs() <= 1e-12 * peak);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn frame_count_formula(n in 800usize..40_000) {
            let clip = PcmClip::new(SAMPLE_RATE, vec![0.01; n]).unwrap();
            let mel = MelFrontend::new().compute(&clip).unwrap();
            prop_assert_eq!(mel.frames.shape()[0], 1 + (n - 800) / 160);
        }
    }
}
