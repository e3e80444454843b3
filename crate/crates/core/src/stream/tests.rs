use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::ChannelStats;
use crate::model::{ModelConfig, ModelVariant};

fn randomized<F: Real>(variant: ModelVariant, seed: u64) -> Model<F> {
    let mut cfg = ModelConfig::new(variant).with_size(6, 4);
    cfg.layers = 3;
    let mut m = Model::<F>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in m.param_values_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v = F::of(rng.random_range(-0.3..0.3));
            }
        }
    }
    m.norm = Normalization {
        audio: ChannelStats {
            mean: (0..AUDIO_DIM).map(|i| i as f64 * 0.01).collect(),
            std: vec![1.5; AUDIO_DIM],
        },
        gaze: ChannelStats {
            mean: vec![0.1; GAZE_DIM],
            std: vec![0.5; GAZE_DIM],
        },
    };
    m
}

fn inputs(t: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        Tensor::from_fn(&[t, AUDIO_DIM], |_| rng.random_range(-2.0..2.0)),
        Tensor::from_fn(&[t, GAZE_DIM], |_| rng.random_range(-1.0..1.0)),
    )
}

fn check_equivalence<F: Real>() {
    let (a, g) = inputs(300, 5);
    for (i, v) in ModelVariant::ALL.into_iter().enumerate() {
        let m = randomized::<F>(v, i as u64);
        let offline = m.infer(Some(&a), Some(&g)).unwrap();
        let online = StreamSession::new(&m).unwrap().run_clip(&a, &g).unwrap();
        assert_eq!(online.data(), offline.data(), "variant {v}");
    }
}

#[test]
fn streaming_matches_offline_in_both_precisions() {
    check_equivalence::<f32>();
    check_equivalence::<f64>();
}

#[test]
fn first_frame_is_valid_and_reset_restarts() {
    let m = randomized::<f64>(ModelVariant::C, 3);
    let (a, g) = inputs(20, 1);
    let mut s = StreamSession::new(&m).unwrap();
    let first = s.step(a.row(0), g.row(0)).unwrap();
    assert!(!first.rejected && first.coeffs.iter().all(|v| v.is_finite()));
    let whole = s.run_clip(&a, &g).unwrap();
    s.reset();
    assert_eq!(s.frames(), 0);
    assert_eq!(s.step(a.row(0), g.row(0)).unwrap().coeffs, first.coeffs);
    assert_ne!(whole.row(0), first.coeffs.as_slice(), "history carried across frames");
}

#[test]
fn non_finite_frames_repeat_the_previous_output() {
    let m = randomized::<f64>(ModelVariant::C, 4);
    let (a, g) = inputs(10, 2);
    let mut s = StreamSession::new(&m).unwrap();
    let prev = s.step(a.row(0), g.row(0)).unwrap();
    let mut bad = a.row(1).to_vec();
    bad[7] = f64::NAN;
    let out = s.step(&bad, g.row(1)).unwrap();
    assert!(out.rejected);
    assert_eq!(out.coeffs, prev.coeffs);
    assert_eq!((s.frames(), s.rejected()), (1, 1));
    // Rejected frames leave the state untouched.
    let mut fresh = StreamSession::new(&m).unwrap();
    fresh.step(a.row(0), g.row(0)).unwrap();
    assert_eq!(s.step(a.row(2), g.row(2)).unwrap().coeffs, fresh.step(a.row(2), g.row(2)).unwrap().coeffs);
}

#[test]
fn unused_modality_may_be_non_finite() {
    let m = randomized::<f64>(ModelVariant::AudioOnly, 6);
    let (a, _) = inputs(3, 3);
    let mut s = StreamSession::new(&m).unwrap();
    assert!(!s.step(a.row(0), &[f64::NAN; 4]).unwrap().rejected);
}

#[test]
fn rejects_lookahead_models_and_bad_widths() {
    let mut cfg = ModelConfig::new(ModelVariant::C).with_size(4, 3);
    cfg.layers = 2;
    cfg.lookahead = 1;
    let m = Model::<f64>::new(cfg, 0).unwrap();
    assert!(matches!(StreamSession::new(&m), Err(Error::InvalidArgument(_))));
    let m = randomized::<f64>(ModelVariant::C, 1);
    let mut s = StreamSession::new(&m).unwrap();
    assert!(s.step(&[0.0; 79], &[0.0; 4]).is_err());
}

#[test]
fn rejects_non_finite_parameters() {
    let mut m = randomized::<f64>(ModelVariant::C, 1);
    m.param_values_mut()[0].data_mut()[0] = f64::INFINITY;
    assert!(matches!(StreamSession::new(&m), Err(Error::State(_))));
}

#[test]
fn history_is_bounded() {
    let m = randomized::<f64>(ModelVariant::C, 2);
    let mut s = StreamSession::new(&m).unwrap();
    let (a, g) = inputs(400, 9);
    s.run_clip(&a, &g).unwrap();
    let cells: usize = s.encoders.iter().chain(&s.mixture).chain([&s.face]).flat_map(|t| &t.rings).map(|r| r.data.len()).sum();
    s.run_clip(&a, &g).unwrap();
    let again: usize = s.encoders.iter().chain(&s.mixture).chain([&s.face]).flat_map(|t| &t.rings).map(|r| r.data.len()).sum();
    assert_eq!(cells, again);
    // Three layers with dilations 1, 2, 4 and five taps.
    assert_eq!(s.face.rings.iter().map(|r| r.cap).collect::<Vec<_>>(), [5, 9, 17]);
    assert_eq!(s.plan().receptive_field(), 2 * 29 - 1);
}

#[test]
fn shared_plan_drives_independent_sessions() {
    let m = randomized::<f32>(ModelVariant::D, 8);
    let plan = Arc::new(StreamPlan::new(&m).unwrap());
    let (a, g) = inputs(50, 4);
    let outs: Vec<Tensor<f32>> = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..2)
            .map(|_| {
                let p = Arc::clone(&plan);
                let (a, g) = (&a, &g);
                sc.spawn(move || StreamSession::with_plan(p).run_clip(a, g).unwrap())
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn latency_quantiles() {
    let mut l = LatencyStats::new();
    assert_eq!(l.p99(), Duration::ZERO);
    for us in 1..=100u64 {
        l.record(Duration::from_micros(us) - Duration::from_nanos(1));
    }
    assert_eq!(l.count(), 100);
    assert_eq!(l.p99(), Duration::from_micros(99));
    assert_eq!(l.quantile(0.5), Duration::from_micros(50));
    l.record(Duration::from_secs(1));
    assert_eq!(l.quantile(1.0), Duration::from_secs(1));
    assert!(l.mean() > Duration::from_millis(9));
}
