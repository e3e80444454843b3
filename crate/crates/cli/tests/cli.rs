use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mmvae(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmvae"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn mmvae")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = mmvae(args, cwd);
    assert!(
        out.status.success(),
        "mmvae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--session-seconds",
    "3",
    "--heldout-sessions",
    "1",
    "--heldout-seconds",
    "3",
];

#[test]
fn no_arguments_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mmvae(&[], dir.path()).status.code(), Some(1));
    assert_eq!(mmvae(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(mmvae(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn datagen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["datagen", "--out", out, "--seed", "4"];
        args.extend_from_slice(SMALL);
        ok(&args, dir.path());
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "manifest.txt"));
    assert!(names.iter().any(|n| n == "heldout-conv-0.wav"));
    for n in names {
        let a = fs::read(dir.path().join("a").join(&n)).unwrap();
        let b = fs::read(dir.path().join("b").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn bad_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmvae(&["datagen", "--out", "d", "--set", "colour=blue"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    fs::write(dir.path().join("cfg.txt"), "sessions = 0\n").unwrap();
    let out = mmvae(&["datagen", "--out", "d", "--config", "cfg.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = mmvae(&["eval", "--checkpoint", "missing.ckpt", "--data", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_infer_stream() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut args = vec!["datagen", "--out", "data"];
    args.extend_from_slice(SMALL);
    ok(&args, p);
    fs::write(p.join("small.cfg"), "channels = 8\nlatent = 4\nlayers = 3\n").unwrap();
    ok(
        &[
            "train", "--out", "m.ckpt", "--data", "data", "--heldout", "data", "--steps", "5",
            "--window", "128", "--config", "small.cfg", "--metrics", "metrics.txt",
        ],
        p,
    );
    assert!(p.join("metrics.txt").exists());

    let text = ok(
        &["eval", "--checkpoint", "m.ckpt", "--data", "data", "--table", "t.tsv", "--heatmap", "h.csv"],
        p,
    );
    assert!(text.contains("heldout-conv-s1") && text.contains("heldout-desc-s1"));
    let tsv = fs::read_to_string(p.join("t.tsv")).unwrap();
    assert!(tsv.starts_with("run\teyebrows\teyes\tnose\tmouth\tall\tlip_closure_f1"));
    assert_eq!(fs::read_to_string(p.join("h.csv")).unwrap().lines().count(), 5);

    fs::write(p.join("runs.txt"), "c m.ckpt heldout-conv-s1\nx gone.ckpt heldout-conv-s1\n").unwrap();
    let text = ok(&["eval", "--runs", "runs.txt", "--data", "data"], p);
    assert!(text.contains("absent"));

    let infer = ok(&["infer", "--checkpoint", "m.ckpt", "--input", "data/heldout-conv-0"], p);
    let stream = ok(&["stream", "--checkpoint", "m.ckpt", "--input", "data/heldout-conv-0"], p);
    assert_eq!(infer, stream);
    assert_eq!(infer.lines().count(), 301);
    assert_eq!(infer.lines().next().unwrap().split(',').count(), 257);

    ok(&["featurize", "--data", "data", "--out", "feat"], p);
    let from_features = ok(
        &["infer", "--checkpoint", "m.ckpt", "--input", "feat/heldout-conv-0.features.csv"],
        p,
    );
    assert_eq!(infer, from_features);

    ok(
        &["stream", "--checkpoint", "m.ckpt", "--input", "data/heldout-conv-0", "--format", "bin", "--out", "s.bin"],
        p,
    );
    let bin = fs::read(p.join("s.bin")).unwrap();
    assert_eq!(bin.len(), 300 * (4 + 256 * 4));
    assert_eq!(u32::from_le_bytes(bin[..4].try_into().unwrap()), 256);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&["gradcheck", "--configs", "2"], dir.path());
    assert!(text.contains("0 above"), "{text}");
}
