use super::*;
use crate::model::ModelVariant;
use rand::Rng;

fn clip(seed: u64, t: usize) -> AlignedClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |w: usize, scale: f64| {
        Tensor::from_fn(&[t, w], |_| scale * rng.random_range(-1.0..1.0))
    };
    let audio = noise(AUDIO_DIM, 3.0);
    let gaze = noise(GAZE_DIM, 1.0);
    let face = noise(FACE_DIM, 0.5);
    AlignedClip::new(audio, gaze, face).unwrap()
}

fn small(variant: ModelVariant, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelConfig::new(variant).with_size(4, 3));
    cfg.layers_for_test();
    cfg.batch = 2;
    cfg.window = 130;
    cfg.steps = steps;
    cfg.seed = 9;
    cfg.eval_every = 2;
    cfg
}

impl TrainConfig {
    fn layers_for_test(&mut self) {
        self.model.layers = 2;
    }
}

#[test]
fn zero_steps_is_the_initialization() {
    let data = [clip(1, 300)];
    let cfg = small(ModelVariant::C, 0);
    let out = train(&cfg, &data, &[]).unwrap();
    let init = Model::<f64>::new(cfg.model.clone(), cfg.seed).unwrap();
    assert_eq!(&out.checkpoint.params, init.params());
    assert!(out.log.records.is_empty());
    assert_eq!(out.checkpoint.step, 0);
}

#[test]
fn same_seed_same_log() {
    let data = [clip(1, 300), clip(2, 200)];
    let held = [clip(3, 150)];
    for precision in [Precision::Double, Precision::Single] {
        let mut cfg = small(ModelVariant::D, 4);
        cfg.precision = precision;
        let a = train(&cfg, &data, &held).unwrap();
        let b = train(&cfg, &data, &held).unwrap();
        assert_eq!(a.log.render(), b.log.render());
        assert_eq!(a.checkpoint, b.checkpoint);
        cfg.seed += 1;
        let c = train(&cfg, &data, &held).unwrap();
        assert_ne!(a.log.render(), c.log.render());
    }
}

#[test]
fn logged_terms_sum_to_total() {
    let data = [clip(4, 260)];
    for v in ModelVariant::ALL {
        let cfg = small(v, 3);
        let out = train(&cfg, &data, &[]).unwrap();
        for (_, l) in out.log.steps() {
            let s = l.active_sum(v, cfg.kl_weight);
            assert!((s - l.total).abs() <= 1e-12 * s.abs().max(1.0), "{v}: {s} vs {}", l.total);
        }
    }
}

#[test]
fn held_out_metric_is_logged_periodically() {
    let data = [clip(1, 300)];
    let held = [clip(3, 150)];
    let out = train(&small(ModelVariant::B, 5), &data, &held).unwrap();
    let evals: Vec<usize> = out
        .log
        .records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::Eval { step, .. } => Some(*step),
            _ => None,
        })
        .collect();
    assert_eq!(evals, vec![2, 4, 5]);
    assert!(out.log.last_eval().unwrap().is_finite());
}

#[test]
fn divergence_returns_the_last_good_parameters() {
    let mut bad = clip(1, 300);
    bad.face.data_mut().fill(1e200);
    let cfg = small(ModelVariant::C, 10);
    let out = train(&cfg, &[bad], &[]).unwrap();
    let msg = out.diverged.expect("diverges");
    assert!(msg.contains("step 1"), "{msg}");
    let init = Model::<f64>::new(cfg.model.clone(), cfg.seed).unwrap();
    assert_eq!(&out.checkpoint.params, init.params());
}

#[test]
fn short_window_and_empty_data_are_rejected() {
    let mut cfg = small(ModelVariant::C, 1);
    cfg.window = 100;
    assert!(train(&cfg, &[clip(1, 300)], &[]).is_err());
    assert!(train(&small(ModelVariant::C, 1), &[], &[]).is_err());
}

#[test]
fn config_round_trips_through_kv() {
    let mut cfg = small(ModelVariant::E, 7);
    cfg.train_paths = vec!["a/b".into(), "c".into()];
    cfg.precision = Precision::Single;
    let back = TrainConfig::from_kv(&KvFile::parse(&cfg.to_kv().render()).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let kv = KvFile::parse("variant=c\nwidth=3\n").unwrap();
    assert!(TrainConfig::from_kv(&kv).is_err());
}

mod checkpoint_format {
    use super::*;

    fn trained(variant: ModelVariant, precision: Precision) -> (Checkpoint, AlignedClip) {
        let data = [clip(5, 260)];
        let mut cfg = small(variant, 2);
        cfg.precision = precision;
        (train(&cfg, &data, &[]).unwrap().checkpoint, clip(6, 140))
    }

    #[test]
    fn round_trip_forward_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for precision in [Precision::Double, Precision::Single] {
            for v in [ModelVariant::C, ModelVariant::F, ModelVariant::GazeOnly] {
                let (ck, x) = trained(v, precision);
                let p = dir.path().join("m.ckpt");
                ck.save(&p).unwrap();
                let back = Checkpoint::load(&p).unwrap();
                assert_eq!(back, ck);
                match precision {
                    Precision::Double => {
                        let a = ck.model::<f64>().unwrap().infer(Some(&x.audio), Some(&x.gaze)).unwrap();
                        let b = back.model::<f64>().unwrap().infer(Some(&x.audio), Some(&x.gaze)).unwrap();
                        assert_eq!(a, b);
                    }
                    Precision::Single => {
                        let a = ck.model::<f32>().unwrap().infer(Some(&x.audio), Some(&x.gaze)).unwrap();
                        let b = back.model::<f32>().unwrap().infer(Some(&x.audio), Some(&x.gaze)).unwrap();
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    fn section_of(e: Error) -> String {
        match e {
            Error::Format { section, .. } => section,
            other => panic!("expected a format error, got {other}"),
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let (ck, _) = trained(ModelVariant::B, Precision::Double);
        let bytes = ck.to_bytes();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            let e = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(!section_of(e).is_empty());
        }
    }

    #[test]
    fn truncation_inside_params_names_params() {
        let (mut ck, _) = trained(ModelVariant::C, Precision::Double);
        ck.optim = None;
        let bytes = ck.to_bytes();
        let e = Checkpoint::from_bytes(&bytes[..bytes.len() * 2 / 3]).unwrap_err();
        assert_eq!(section_of(e), "params");
    }

    #[test]
    fn flipped_bit_and_bad_header_are_rejected() {
        let (ck, _) = trained(ModelVariant::A, Precision::Single);
        let mut bytes = ck.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert_eq!(section_of(Checkpoint::from_bytes(&bytes).unwrap_err()), "checksum");
        let mut bytes = ck.to_bytes();
        bytes[8] = 2;
        assert_eq!(section_of(Checkpoint::from_bytes(&bytes).unwrap_err()), "header");
        assert_eq!(section_of(Checkpoint::from_bytes(b"nope").unwrap_err()), "header");
    }

    #[test]
    fn wrong_variant_is_refused() {
        let (ck, _) = trained(ModelVariant::F, Precision::Double);
        assert!(matches!(
            ck.model_of::<f64>(ModelVariant::C),
            Err(Error::VariantMismatch { .. })
        ));
        assert!(ck.model_of::<f64>(ModelVariant::F).is_ok());
    }

    #[test]
    fn optimizer_state_survives() {
        let (ck, _) = trained(ModelVariant::D, Precision::Single);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let o = back.optim.unwrap();
        assert_eq!(o.step, 2);
        assert_eq!(Some(o), ck.optim);
    }
}
