use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::face::{lip_gap, EXPRESSION, EYES, LIP_GAP, MOUTH};
use super::*;
use crate::features::mel::LOG_FLOOR;

fn session(seed: u64, secs: f64, style: Style, subject: u8) -> SyntheticSession {
    generate_session(&WorldConfig::new(seed, secs, style, subject)).unwrap()
}

#[test]
fn sessions_are_deterministic() {
    let a = session(3, 6.0, Style::Conversational, 2);
    let b = session(3, 6.0, Style::Conversational, 2);
    assert_eq!(a.pcm.samples, b.pcm.samples);
    assert_eq!(a.face, b.face);
    assert_eq!(format!("{:?}", a.gaze), format!("{:?}", b.gaze));
    let c = session(4, 6.0, Style::Conversational, 2);
    assert_ne!(a.face, c.face);
}

#[test]
fn stream_lengths_agree() {
    let s = session(1, 4.5, Style::Descriptive, 3);
    let n = s.config.frames();
    assert_eq!(s.face.shape(), [n, FACE_DIM]);
    assert_eq!(s.gaze.len(), n);
    assert_eq!(s.pcm.samples.len(), samples_for(n));
    assert_eq!(s.aligned().unwrap().len(), n);
}

#[test]
fn config_validation() {
    assert!(WorldConfig::new(0, 1.0, Style::Descriptive, 1).validate().is_err());
    assert!(WorldConfig::new(0, 10.0, Style::Descriptive, 4).validate().is_err());
    assert!(generate_session(&WorldConfig::new(0, 10.0, Style::Descriptive, 0)).is_err());
    assert_eq!("descriptive".parse::<Style>().unwrap(), Style::Descriptive);
    assert!("shouting".parse::<Style>().is_err());
}

#[test]
fn descriptive_sessions_carry_no_expression() {
    for subject in 1..=3 {
        let s = session(7, 30.0, Style::Descriptive, subject);
        assert!(s.tracks.expression.iter().all(|&e| e.abs() < 0.05));
        assert!(s.tracks.smiles.is_empty());
        assert!(s.tracks.onset.iter().all(|&o| o == 0.0));
    }
}

#[test]
fn conversational_sessions_have_silent_smiles() {
    for subject in 1..=3 {
        let s = session(11, 60.0, Style::Conversational, subject);
        assert!(s.tracks.silent_smiles() >= 5, "subject {subject}");
        let speaking = (0..s.tracks.len()).filter(|&t| s.tracks.is_speaking(t)).count();
        let frac = speaking as f64 / s.tracks.len() as f64;
        assert!((0.25..0.8).contains(&frac), "speaking fraction {frac}");
    }
}

#[test]
fn silence_gives_the_mel_floor() {
    let s = session(2, 20.0, Style::Conversational, 1);
    let clip = s.aligned().unwrap();
    let floor = LOG_FLOOR.ln();
    let quiet: Vec<usize> = (2..clip.len().saturating_sub(8))
        .filter(|&t| (t - 2..t + 8).all(|u| s.tracks.speech[u] == 0.0))
        .collect();
    assert!(quiet.len() > 100);
    for t in quiet {
        assert!(clip.audio.row(t).iter().all(|&v| v == floor), "frame {t}");
    }
}

#[test]
fn speech_is_audible() {
    let s = session(2, 20.0, Style::Descriptive, 1);
    let clip = s.aligned().unwrap();
    let floor = LOG_FLOOR.ln();
    let loud = (0..clip.len())
        .filter(|&t| s.tracks.speech[t] > 0.5)
        .filter(|&t| clip.audio.row(t).iter().any(|&v| v > floor + 5.0))
        .count();
    let speaking = (0..clip.len()).filter(|&t| s.tracks.speech[t] > 0.5).count();
    assert!(loud as f64 > 0.95 * speaking as f64);
}

#[test]
fn tracks_respect_the_slew_limit() {
    for style in [Style::Conversational, Style::Descriptive] {
        let s = session(5, 40.0, style, 1);
        let tr = &s.tracks;
        let slew = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(slew(&tr.speech) <= MAX_SLEW + 1e-12);
        assert!(slew(&tr.expression) <= MAX_SLEW + 1e-12);
        assert!(slew(&tr.rest) <= MAX_SLEW + 1e-12);
        for k in 0..4 {
            let g: Vec<f64> = tr.gaze.iter().map(|g| g[k]).collect();
            assert!(slew(&g) <= MAX_SLEW + 1e-12, "{style} gaze {k}");
        }
        assert!(tr.speech.iter().chain(&tr.expression).chain(&tr.blink).all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn lips_close_between_bursts() {
    let s = session(8, 30.0, Style::Conversational, 1);
    let closed = (0..s.tracks.len()).filter(|&t| s.face.row(t)[LIP_GAP] == 0.0).count();
    assert!(closed > 0);
    let speaking_closed = (0..s.tracks.len())
        .filter(|&t| s.tracks.is_speaking(t) && s.face.row(t)[LIP_GAP] == 0.0)
        .count();
    assert!(speaking_closed > 0, "closures inside utterances");
}

#[test]
fn coefficient_blocks_follow_their_factors() {
    let s = session(9, 20.0, Style::Conversational, 1);
    let tr = &s.tracks;
    for t in 0..tr.len() {
        let row = s.face.row(t);
        assert_eq!(row[LIP_GAP], lip_gap(tr, t));
        assert_eq!(row[EXPRESSION.start], tr.expression[t]);
        assert_eq!(row[EYES.start], (tr.blink[t] + 0.35 * tr.expression[t]).min(1.0));
    }
    // Mouth coefficients ignore gaze, blinks and smiles; eye and expression
    // coefficients ignore speech.
    let mut other = tr.clone();
    for t in 0..other.len() {
        other.expression[t] = 0.0;
        other.blink[t] = 0.0;
        other.gaze[t] = [0.3, -0.2, 0.3, -0.2];
    }
    let mut muted = tr.clone();
    for t in 0..muted.len() {
        muted.speech[t] = 0.0;
        muted.onset[t] = 0.0;
        muted.rest[t] = 0.0;
        muted.phones[t] = [0.0; 4];
    }
    let f = |tracks: &FactorTracks| face::coefficients(&mut ChaCha8Rng::seed_from_u64(1), tracks);
    let (base, no_eyes, no_speech) = (f(tr), f(&other), f(&muted));
    for t in 0..tr.len() {
        assert_eq!(base.row(t)[MOUTH], no_eyes.row(t)[MOUTH]);
        assert_eq!(base.row(t)[EYES.start..], no_speech.row(t)[EYES.start..]);
    }
}

#[test]
fn smiles_and_blinks_shift_the_tracked_pupils() {
    let s = session(12, 30.0, Style::Conversational, 1);
    let tr = &s.tracks;
    for t in (0..tr.len()).step_by(37) {
        let obs = observed_gaze(tr, t);
        let dy = SMILE_DROP * tr.expression[t] + BLINK_DROP * tr.blink[t];
        assert_eq!(obs[0], tr.gaze[t][0]);
        assert_eq!(obs[1], tr.gaze[t][1] + dy);
        assert_eq!(obs[3], tr.gaze[t][3] + dy);
    }
}

#[test]
fn neutral_coefficients_decode_to_the_template() {
    for subject in 1..=3 {
        let dec = LandmarkDecoder::for_subject(subject).unwrap();
        let lm = dec.decode(&Tensor::zeros(&[3, FACE_DIM])).unwrap();
        for t in 0..3 {
            for j in 0..LANDMARKS {
                assert_eq!(lm.point(t, j), dec.template[j]);
            }
        }
    }
    assert!(LandmarkDecoder::for_subject(4).is_err());
}

#[test]
fn zero_gap_superposes_inner_lips() {
    let dec = LandmarkDecoder::for_subject(2).unwrap();
    let c = Tensor::from_fn(&[4, FACE_DIM], |i| if i % FACE_DIM == LIP_GAP { 0.0 } else { ((i * 31) % 17) as f64 / 17.0 - 0.5 });
    let lm = dec.decode(&c).unwrap();
    for t in 0..4 {
        for (u, l) in INNER_UPPER.zip(INNER_LOWER) {
            assert_eq!(lm.point(t, u), lm.point(t, l));
        }
    }
}

#[test]
fn decoder_rejects_wrong_widths() {
    let dec = LandmarkDecoder::for_subject(1).unwrap();
    assert!(matches!(dec.decode(&Tensor::zeros(&[2, 255])), Err(Error::InvalidArgument(_))));
    assert!(dec.decode(&Tensor::zeros(&[256])).is_err());
}

/// Direct per-point evaluation of the decoder definition.
fn oracle_point(dec: &LandmarkDecoder, c: &[f64], j: usize, k: usize) -> f64 {
    let region = Region::of(j);
    let mut drive = Vec::new();
    for (r, _) in region.drivers() {
        for i in r.clone() {
            drive.push(c[i]);
        }
    }
    let mut a = 0.0;
    for (w, v) in dec.rows[j][k].iter().zip(&drive) {
        a += w * v;
    }
    let mut v = dec.template[j][k] + SATURATION * (a / SATURATION).tanh();
    if k == 1 && INNER_UPPER.contains(&j) {
        v -= GAP_SCALE * c[0] * GAP_PROFILE[j - INNER_UPPER.start] / 2.0;
    }
    if k == 1 && INNER_LOWER.contains(&j) {
        v += GAP_SCALE * c[0] * GAP_PROFILE[j - INNER_LOWER.start] / 2.0;
    }
    v
}

#[test]
fn region_tables_partition_the_landmarks() {
    let mut seen = [0usize; LANDMARKS];
    for r in Region::ALL {
        for j in r.points() {
            seen[j] += 1;
            assert_eq!(Region::of(j), r);
        }
    }
    assert!(seen.iter().all(|&n| n == 1));
    assert_eq!(
        [EYEBROWS.len(), EYE_POINTS.len(), NOSE.len(), MOUTH_POINTS.len()],
        [18, 20, 13, 32]
    );
}

#[test]
fn write_and_featurize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(6, 5.0, Style::Conversational, 1);
    let files = s.write(dir.path(), "s6").unwrap();
    let back = files.featurize().unwrap();
    let direct = s.aligned().unwrap();
    assert_eq!(back.audio, direct.audio);
    assert_eq!(back.gaze, direct.gaze);
    assert_eq!(back.face, direct.face);
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.txt");
    let entries = vec![
        ManifestEntry {
            name: "a".into(),
            split: Split::Train,
            config: WorldConfig::new(1, 60.0, Style::Conversational, 1),
        },
        ManifestEntry {
            name: "b".into(),
            split: Split::Heldout,
            config: WorldConfig::new(2, 12.5, Style::Descriptive, 3),
        },
    ];
    write_manifest(&path, &entries).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), entries);
    std::fs::write(&path, "a train 1\n").unwrap();
    assert!(read_manifest(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoder_matches_pointwise_oracle(seed in 0u64..1000, subject in 1u8..=3) {
        let dec = LandmarkDecoder::for_subject(subject).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Tensor::from_fn(&[2, FACE_DIM], |_| rand::Rng::random_range(&mut rng, -1.5..1.5));
        let lm = dec.decode(&c).unwrap();
        for t in 0..2 {
            for j in 0..LANDMARKS {
                for k in 0..2 {
                    let want = oracle_point(&dec, c.row(t), j, k);
                    prop_assert!((lm.point(t, j)[k] - want).abs() <= 1e-12);
                }
            }
        }
    }
}
