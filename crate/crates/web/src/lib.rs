//! In-browser views of the feature frontends and the mixture fusion law.
//!
//! Each `#[wasm_bindgen]` export is a thin wrapper over a plain function so
//! the numerics are testable natively.

use mmvae::features::mel::{MEL_BANDS, SAMPLE_RATE};
use mmvae::features::{normalize_gaze, EyeObservation, MelFrontend, PcmClip};
use mmvae::model::{fuse, LatentGaussian, MixtureWeights};
use mmvae::tensor::Tensor;
use mmvae::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

fn js(e: mmvae::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Mean log-mel energy per band of a tone plus optional white noise.
pub fn tone_profile(freq_hz: f64, amplitude: f64, noise: f64, seed: u64) -> Result<Vec<f64>> {
    let n = SAMPLE_RATE as usize / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let e: f64 = StandardNormal.sample(&mut rng);
            amplitude * (std::f64::consts::TAU * freq_hz * t).sin() + noise * e
        })
        .collect();
    let clip = PcmClip::new(SAMPLE_RATE, samples)?;
    let mel = MelFrontend::new().compute(&clip)?.frames;
    let frames = mel.shape()[0];
    let mut mean = vec![0.0; MEL_BANDS];
    for t in 0..frames {
        for (m, v) in mean.iter_mut().zip(mel.row(t)) {
            *m += v / frames as f64;
        }
    }
    Ok(mean)
}

/// Analytic and sampled moments of a fused scalar latent:
/// `[mean, variance, sample mean, sample variance]`.
pub fn fusion_moments(
    mu: &[f64],
    sigma: &[f64],
    pi: &[f64],
    draws: usize,
    seed: u64,
) -> Result<[f64; 4]> {
    let m = mu.len();
    if sigma.len() != m || pi.len() != m || m == 0 || draws < 2 {
        return Err(mmvae::Error::InvalidArgument(
            "mu, sigma and pi need one entry per modality and draws >= 2".into(),
        ));
    }
    let scalar = |v: f64| Tensor::full(&[1, 1], v);
    let gaussians: Vec<_> = (0..m)
        .map(|j| LatentGaussian { mu: scalar(mu[j]), sigma: scalar(sigma[j]) })
        .collect();
    let weights = MixtureWeights { pi: Tensor::new(vec![m, 1, 1], pi.to_vec())? };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut law = None;
    for _ in 0..draws {
        let samples: Vec<_> = gaussians
            .iter()
            .map(|g| {
                let e: f64 = StandardNormal.sample(&mut rng);
                scalar(g.mu.data()[0] + g.sigma.data()[0] * e)
            })
            .collect();
        let f = fuse(&samples, &gaussians, &weights)?;
        let z = f.z.data()[0];
        sum += z;
        sq += z * z;
        law.get_or_insert((f.mu.data()[0], f.sigma.data()[0].powi(2)));
    }
    let (mean, var) = law.expect("draws >= 2");
    let n = draws as f64;
    let sample_mean = sum / n;
    let sample_var = (sq - n * sample_mean * sample_mean) / (n - 1.0);
    Ok([mean, var, sample_mean, sample_var])
}

#[wasm_bindgen]
pub fn mel_centers() -> Vec<f64> {
    MelFrontend::new().centers_hz().to_vec()
}

#[wasm_bindgen]
pub fn mel_tone(freq_hz: f64, amplitude: f64, noise: f64) -> std::result::Result<Vec<f64>, JsError> {
    tone_profile(freq_hz, amplitude, noise, 7).map_err(js)
}

/// Normalized `(x, y)` of one eye from image-plane landmarks.
#[wasm_bindgen]
pub fn gaze_normalize(
    left: Vec<f64>,
    right: Vec<f64>,
    pupil: Vec<f64>,
    iris_radius: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    let pt = |v: &[f64]| -> std::result::Result<[f64; 2], JsError> {
        v.try_into().map_err(|_| JsError::new("points have two coordinates"))
    };
    let obs = EyeObservation {
        left_corner: pt(&left)?,
        right_corner: pt(&right)?,
        pupil: pt(&pupil)?,
        iris_radius,
    };
    let (x, y) = normalize_gaze(&obs).map_err(js)?;
    Ok(vec![x, y])
}

#[wasm_bindgen]
pub fn fusion_check(
    mu: Vec<f64>,
    sigma: Vec<f64>,
    pi: Vec<f64>,
    draws: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    fusion_moments(&mu, &sigma, &pi, draws, seed.into()).map(|r| r.to_vec()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_peaks_near_its_frequency() {
        let profile = tone_profile(1000.0, 0.5, 0.0, 1).unwrap();
        let peak = (0..MEL_BANDS)
            .max_by(|&a, &b| profile[a].total_cmp(&profile[b]))
            .unwrap();
        let centers = MelFrontend::new().centers_hz().to_vec();
        let nearest = (0..MEL_BANDS)
            .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "peak {peak}, nearest {nearest}");
    }

    #[test]
    fn sampled_moments_follow_the_law() {
        let [m, v, sm, sv] =
            fusion_moments(&[1.0, -2.0], &[0.5, 2.0], &[0.7, 0.3], 50_000, 3).unwrap();
        assert!((m - (0.7 - 0.6)).abs() < 1e-12);
        assert!((v - (0.49 * 0.25 + 0.09 * 4.0)).abs() < 1e-12);
        assert!((sm - m).abs() < 0.02);
        assert!((sv / v - 1.0).abs() < 0.03);
    }

    #[test]
    fn bad_fusion_inputs_are_rejected() {
        assert!(fusion_moments(&[0.0], &[1.0, 1.0], &[1.0], 10, 0).is_err());
        assert!(fusion_moments(&[0.0, 0.0], &[1.0, 1.0], &[0.9, 0.3], 10, 0).is_err());
    }
}
