use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Batch, Model, ModelConfig, ModelVariant};
use crate::error::Result;
use crate::tensor::{grad_check, Tensor};

/// Summary of [`gradient_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteReport {
    pub configs: usize,
    pub checked: usize,
    pub at_kink: usize,
    pub max_rel_error: f64,
    /// Configurations whose worst coordinate reached `tolerance`.
    pub failures: usize,
    pub seconds: f64,
}

/// Gradient checks of the full training loss on random small models
/// (C ≤ 8, L ≤ 8, T ≤ 32, up to five layers), cycling through every variant.
pub fn gradient_suite(configs: usize, seed: u64, tolerance: f64) -> Result<GradSuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |shape: &[usize], rng: &mut ChaCha8Rng| -> Tensor<f64> {
        Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
    };
    let mut report = GradSuiteReport {
        configs,
        checked: 0,
        at_kink: 0,
        max_rel_error: 0.0,
        failures: 0,
        seconds: 0.0,
    };
    for i in 0..configs {
        let variant = ModelVariant::ALL[i % ModelVariant::ALL.len()];
        let c = rng.random_range(2..=8);
        let l = rng.random_range(1..=8);
        let t = rng.random_range(4..=32);
        let mut cfg = ModelConfig::new(variant).with_size(c, l);
        cfg.layers = rng.random_range(1..=5);
        let model = Model::<f64>::new(cfg, seed.wrapping_add(i as u64))?;
        let batch = Batch {
            audio: gaussian(&[1, t, 80], &mut rng),
            gaze: gaussian(&[1, t, 4], &mut rng),
            face: gaussian(&[1, t, 256], &mut rng),
        };
        let noise: Vec<_> = (0..model.noise_count()).map(|_| gaussian(&[1, t, l], &mut rng)).collect();
        let r = grad_check(
            model.params().tensors(),
            |tape, vars| Ok(model.loss_on_tape(tape, vars, &batch, &noise, 1.0)?.total),
            3e-3,
            400,
            i as u64,
        )?;
        report.checked += r.checked;
        report.at_kink += r.at_kink;
        report.max_rel_error = report.max_rel_error.max(r.max_rel_error);
        report.failures += usize::from(r.max_rel_error >= tolerance);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
