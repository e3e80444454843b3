use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::tensor::{Tape, Tensor};

fn small(variant: ModelVariant) -> Model<f64> {
    Model::new(ModelConfig::new(variant).with_size(6, 3), 7).unwrap()
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn batch(b: usize, t: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        audio: randn(&[b, t, AUDIO_DIM], &mut rng),
        gaze: randn(&[b, t, GAZE_DIM], &mut rng),
        face: randn(&[b, t, FACE_DIM], &mut rng),
    }
}

fn noise(model: &Model<f64>, b: usize, t: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..model.noise_count())
        .map(|_| randn(&[b, t, model.config().latent], &mut rng))
        .collect()
}

fn zero_params(model: &mut Model<f64>) {
    for t in model.param_values_mut() {
        t.data_mut().fill(0.0);
    }
}

#[test]
fn zero_model_gives_zero_mean_and_unit_sigma() {
    let mut m = small(ModelVariant::C);
    zero_params(&mut m);
    let x = Tensor::full(&[10, AUDIO_DIM], 0.0);
    let g = m.encode_modality(Modality::Audio, &x).unwrap();
    assert!(g.mu.data().iter().all(|&v| v == 0.0));
    assert!(g.sigma.data().iter().all(|&v| v == 1.0));
    let w = m
        .encode_mixture(Some(&x), Some(&Tensor::full(&[10, GAZE_DIM], 0.3)))
        .unwrap();
    assert!(w.pi.data().iter().all(|&p| p == 0.5));
    let face = m.decode(Target::Face, &Tensor::zeros(&[10, 3])).unwrap();
    assert_eq!(face.shape(), &[10, FACE_DIM]);
    assert!(face.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sigma_positive_and_clamped() {
    let m = small(ModelVariant::C);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&[40, GAZE_DIM], &mut rng).map(|v| 1e3 * v);
    let g = m.encode_modality(Modality::Gaze, &x).unwrap();
    assert!(g.sigma.data().iter().all(|&s| (1e-4 - 1e-18..=10.0 + 1e-12).contains(&s)));
}

#[test]
fn encoders_are_causal() {
    let m = small(ModelVariant::C);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&[30, AUDIO_DIM], &mut rng);
    let mut y = x.clone();
    for v in &mut y.data_mut()[17 * AUDIO_DIM..18 * AUDIO_DIM] {
        *v += 3.0;
    }
    let a = m.encode_modality(Modality::Audio, &x).unwrap();
    let b = m.encode_modality(Modality::Audio, &y).unwrap();
    let l = 3;
    assert_eq!(a.mu.data()[..17 * l], b.mu.data()[..17 * l]);
    assert_eq!(a.sigma.data()[..17 * l], b.sigma.data()[..17 * l]);
    assert_ne!(a.mu.data()[17 * l..], b.mu.data()[17 * l..]);
}

#[test]
fn width_mismatch_is_rejected() {
    let m = small(ModelVariant::C);
    let x = Tensor::zeros(&[5, 7]);
    assert!(matches!(
        m.encode_modality(Modality::Audio, &x),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        m.decode(Target::Face, &Tensor::zeros(&[5, 4])),
        Err(Error::InvalidArgument(_))
    ));
    let a = Tensor::zeros(&[5, AUDIO_DIM]);
    assert!(matches!(
        m.encode_mixture(Some(&a), None),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn mixture_weights_are_convex_and_repeatable() {
    let m = small(ModelVariant::D);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&[25, AUDIO_DIM], &mut rng);
    let g = randn(&[25, GAZE_DIM], &mut rng);
    let w = m.encode_mixture(Some(&a), Some(&g)).unwrap();
    w.validate(1e-12).unwrap();
    assert_eq!(w, m.encode_mixture(Some(&a), Some(&g)).unwrap());
}

#[test]
fn sampling_and_fusion_examples() {
    let g = LatentGaussian {
        mu: Tensor::<f64>::new(vec![1, 2], vec![0.5, -1.0]).unwrap(),
        sigma: Tensor::new(vec![1, 2], vec![2.0, 1e-4]).unwrap(),
    };
    let z = sample_latent(&g, &Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(z, g.mu);
    let z = sample_latent(&g, &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(z.data()[0], 2.5);
    assert!((z.data()[1] + 1.0).abs() < 1e-3);

    let other = LatentGaussian {
        mu: Tensor::new(vec![1, 2], vec![-0.5, 1.0]).unwrap(),
        sigma: Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
    };
    let za = Tensor::new(vec![1, 2], vec![0.7, -0.2]).unwrap();
    let zg = za.map(|v| -v);
    let hot = MixtureWeights::one_hot(2, 0, 1, 2);
    let f = fuse(&[za.clone(), zg.clone()], &[g.clone(), other.clone()], &hot).unwrap();
    assert_eq!(f.z, za);
    let half = MixtureWeights::uniform(2, 1, 2);
    let f = fuse(&[za, zg], &[g, other], &half).unwrap();
    assert!(f.z.data().iter().all(|&v| v == 0.0));
    let expect = (0.25 * 4.0 + 0.25 * 1.0f64).sqrt();
    assert!((f.sigma.data()[0] - expect).abs() < 1e-15);
}

#[test]
fn fuse_rejects_invalid_weights() {
    let g = LatentGaussian {
        mu: Tensor::zeros(&[1, 1]),
        sigma: Tensor::full(&[1, 1], 1.0),
    };
    let w = MixtureWeights {
        pi: Tensor::new(vec![2, 1, 1], vec![0.7, 0.7]).unwrap(),
    };
    let z = Tensor::zeros(&[1, 1]);
    assert!(matches!(
        fuse(&[z.clone(), z], &[g.clone(), g], &w),
        Err(Error::InternalConsistency(_))
    ));
}

#[test]
fn kl_examples() {
    assert_eq!(kl_standard_normal(&[0.0], &[1.0]).unwrap(), 0.0);
    assert!((kl_standard_normal(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
    let expect = 0.5 * (4.0 - 1.0 - 4f64.ln());
    assert!((kl_standard_normal(&[0.0], &[2.0]).unwrap() - expect).abs() < 1e-15);
    assert!(kl_standard_normal(&[0.0], &[0.0]).is_err());
}

/// Recomputes every loss term through the tape-free API.
fn oracle_terms(m: &Model<f64>, b: &Batch<f64>, eps: &[Tensor<f64>]) -> LossBreakdown {
    let (bn, t) = (b.face.shape()[0], b.face.shape()[1]);
    let l = m.config().latent;
    let take = |x: &Tensor<f64>, i: usize| {
        let c = x.channels();
        Tensor::new(vec![t, c], x.data()[i * t * c..(i + 1) * t * c].to_vec()).unwrap()
    };
    let mse = |p: &Tensor<f64>, q: &Tensor<f64>| {
        p.data()
            .iter()
            .zip(q.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    let mut out = LossBreakdown::default();
    for i in 0..bn {
        let a = take(&b.audio, i);
        let g = take(&b.gaze, i);
        let f = take(&b.face, i);
        let mods = m.variant().modalities();
        let inputs: Vec<&Tensor<f64>> = mods
            .iter()
            .map(|&x| if x == Modality::Audio { &a } else { &g })
            .collect();
        let gs: Vec<LatentGaussian<f64>> = mods
            .iter()
            .zip(&inputs)
            .map(|(&x, inp)| m.encode_modality(x, inp).unwrap())
            .collect();
        let zs: Vec<Tensor<f64>> = gs
            .iter()
            .zip(eps)
            .map(|(gg, e)| sample_latent(gg, &take(e, i)).unwrap())
            .collect();
        let w = if mods.len() == 2 {
            m.encode_mixture(Some(&a), Some(&g)).unwrap()
        } else {
            MixtureWeights::uniform(1, t, l)
        };
        let fused = fuse(&zs, &gs, &w).unwrap();
        out.face_rec += mse(&m.decode(Target::Face, &fused.z).unwrap(), &f);
        out.kl_shared += kl_standard_normal(fused.mu.data(), fused.sigma.data()).unwrap();
        if mods.len() == 2 {
            for gg in &gs {
                out.kl_modality += kl_standard_normal(gg.mu.data(), gg.sigma.data()).unwrap();
            }
        }
        if m.variant().reconstructs_inputs() {
            for (&x, inp) in mods.iter().zip(&inputs) {
                let r = mse(&m.decode(Target::Input(x), &fused.z).unwrap(), inp);
                match x {
                    Modality::Audio => out.audio_rec += r,
                    Modality::Gaze => out.gaze_rec += r,
                }
            }
        }
    }
    let n = (bn * t) as f64;
    out.face_rec /= n * FACE_DIM as f64;
    out.audio_rec /= n * AUDIO_DIM as f64;
    out.gaze_rec /= n * GAZE_DIM as f64;
    out.kl_shared /= bn as f64;
    out.kl_modality /= bn as f64;
    out
}

#[test]
fn loss_matches_term_by_term_oracle() {
    for v in ModelVariant::ALL {
        if v == ModelVariant::F {
            continue;
        }
        let m = small(v);
        let b = batch(2, 9, 11);
        let eps = noise(&m, 2, 9, 12);
        let got = m.loss(&b, &eps, 0.7).unwrap();
        let want = oracle_terms(&m, &b, &eps);
        for (x, y) in [
            (got.face_rec, want.face_rec),
            (got.audio_rec, want.audio_rec),
            (got.gaze_rec, want.gaze_rec),
            (got.kl_shared, want.kl_shared),
            (got.kl_modality, want.kl_modality),
        ] {
            assert!((x - y).abs() < 1e-9, "{v}: {x} vs {y}");
        }
        assert!((got.total - got.active_sum(v, 0.7)).abs() < 1e-9, "{v}");
    }
}

#[test]
fn variant_a_excludes_kl_from_total() {
    let m = small(ModelVariant::A);
    let b = batch(1, 6, 4);
    let l = m.loss(&b, &noise(&m, 1, 6, 5), 1.0).unwrap();
    assert!(l.kl_shared > 0.0 && l.kl_modality > 0.0);
    assert!((l.total - (l.face_rec + l.audio_rec + l.gaze_rec)).abs() < 1e-12);
}

#[test]
fn regression_variant_uses_face_loss_only() {
    let m = small(ModelVariant::F);
    let b = batch(2, 8, 4);
    let l = m.loss(&b, &[], 1.0).unwrap();
    assert_eq!(l.total, l.face_rec);
    assert_eq!((l.audio_rec, l.kl_shared), (0.0, 0.0));
    assert_eq!(m.receptive_field(), 249);
}

#[test]
fn vanishing_terms_give_zero_total() {
    // Zero weights make every decoder output zero, matching zero targets.
    let mut m = small(ModelVariant::C);
    zero_params(&mut m);
    let b = Batch {
        face: Tensor::zeros(&[1, 5, FACE_DIM]),
        audio: Tensor::zeros(&[1, 5, AUDIO_DIM]),
        gaze: Tensor::zeros(&[1, 5, GAZE_DIM]),
    };
    // π = ½ each and σ_m = 1 give a fused variance of ½, so set the raw
    // log-sigma biases to ln √2 for a unit fused variance.
    for name in ["enc.audio.out1.b", "enc.gaze.out1.b"] {
        m.params.get_mut(name).unwrap().data_mut().fill(0.5 * 2f64.ln());
    }
    let zero = Tensor::zeros(&[1, 5, 3]);
    let l = m.loss(&b, &[zero.clone(), zero], 1.0).unwrap();
    assert!(l.kl_shared.abs() < 1e-15, "{}", l.kl_shared);
    assert!(l.total.abs() < 1e-15);
}

#[test]
fn one_hot_weights_recover_single_branch() {
    let m = small(ModelVariant::C);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = randn(&[20, AUDIO_DIM], &mut rng);
    let g = randn(&[20, GAZE_DIM], &mut rng);
    for (which, modality) in [(0, Modality::Audio), (1, Modality::Gaze)] {
        let hot = MixtureWeights::one_hot(2, which, 20, 3);
        let fused = m.infer_normalized(Some(&a), Some(&g), Some(&hot)).unwrap();
        let x = if which == 0 { &a } else { &g };
        let single = m
            .decode(Target::Face, &m.encode_modality(modality, x).unwrap().mu)
            .unwrap();
        assert_eq!(fused, single);
    }
}

#[test]
fn infer_is_deterministic_and_shaped() {
    for v in ModelVariant::ALL {
        let m = small(v);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = randn(&[13, AUDIO_DIM], &mut rng);
        let g = randn(&[13, GAZE_DIM], &mut rng);
        let y = m.infer(Some(&a), Some(&g)).unwrap();
        assert_eq!(y.shape(), &[13, FACE_DIM]);
        assert_eq!(y, m.infer(Some(&a), Some(&g)).unwrap());
    }
}

#[test]
fn non_finite_parameters_are_a_state_error() {
    let mut m = small(ModelVariant::AudioOnly);
    m.param_values_mut()[0].data_mut()[0] = f64::NAN;
    let a = Tensor::zeros(&[4, AUDIO_DIM]);
    assert!(matches!(m.infer(Some(&a), None), Err(Error::State(_))));
}

#[test]
fn every_parameter_receives_gradient() {
    for v in ModelVariant::ALL {
        let m = small(v);
        let b = batch(2, 40, 21);
        let eps = noise(&m, 2, 40, 22);
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        let lv = m.loss_on_tape(&mut tape, &vars, &b, &eps, 1.0).unwrap();
        let grads = tape.backward(lv.total).unwrap();
        for (name, &var) in m.params().names().iter().zip(&vars) {
            let g = grads.data_or_zero(var);
            assert!(g.iter().any(|&x| x != 0.0), "{v}: `{name}` has zero gradient");
        }
    }
}

#[test]
fn from_params_checks_shape_table() {
    let m = small(ModelVariant::C);
    let mut params = ParamSet::default();
    for (i, (name, t)) in m.params().iter().enumerate() {
        let t = if i == 3 { Tensor::zeros(&[1]) } else { t.clone() };
        params.push(name, t).unwrap();
    }
    let e = Model::from_params(m.config().clone(), params, Normalization::default());
    assert!(matches!(e, Err(Error::Format { section, .. }) if section == "params"));
    let e = Model::from_params(
        ModelConfig::new(ModelVariant::F).with_size(6, 3),
        m.params().clone(),
        Normalization::default(),
    );
    assert!(e.is_err());
}

#[test]
fn default_receptive_fields() {
    let m = Model::<f32>::new(ModelConfig::new(ModelVariant::C), 0).unwrap();
    let enc = m.layouts().encoders[0].as_ref().unwrap();
    assert_eq!(enc.receptive_field(), 125);
    assert_eq!(m.receptive_field(), 249);
}
