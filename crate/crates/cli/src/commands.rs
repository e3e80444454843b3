use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mmvae::eval::{
    build_ablation_table, evaluate_model, export_weight_heatmap, AblationTable, EvalSet, RunEntry,
    RunManifest,
};
use mmvae::experiment::{desk_train_config, median_scores, run_grid, DataPlan};
use mmvae::features::{AlignedClip, AUDIO_DIM, FACE_DIM, FRAME_RATE, GAZE_DIM};
use mmvae::io::{read_series, write_series};
use mmvae::model::{gradient_suite, Model, ModelConfig, ModelVariant};
use mmvae::stream::StreamSession;
use mmvae::synth::{
    generate_session, read_manifest, write_manifest, LandmarkDecoder, ManifestEntry, SessionFiles,
    Split, Style,
};
use mmvae::features::TimeSeries;
use mmvae::tensor::Tensor;
use mmvae::train::{train as fit, Checkpoint, TrainConfig};
use mmvae::{Error, Precision, Real, Result};

use crate::settings::{apply, flag, gather, with_path};
use crate::{
    AblateArgs, DatagenArgs, EvalArgs, FeaturizeArgs, Format, GradcheckArgs, InferArgs, InputArgs,
    StreamArgs, TrainArgs,
};

const MANIFEST: &str = "manifest.txt";

fn create_dir(dir: &Path) -> Result<()> {
    with_path(dir, fs::create_dir_all(dir).map_err(Error::from))
}

pub fn datagen(a: DatagenArgs) -> Result<()> {
    let mut plan = DataPlan::default();
    let kv = gather(
        &a.config,
        vec![
            flag("subject", &a.subject),
            flag("train_set", &a.train_set),
            flag("sessions", &a.sessions),
            flag("session_seconds", &a.session_seconds),
            flag("heldout_sessions", &a.heldout_sessions),
            flag("heldout_seconds", &a.heldout_seconds),
            flag("data_seed", &a.seed),
        ],
    )?;
    apply(&kv, &mut [&mut |k, v| plan.set(k, v)])?;
    plan.validate()?;
    create_dir(&a.out)?;
    let entries = plan.entries();
    for e in &entries {
        generate_session(&e.config)?.write(&a.out, &e.name)?;
        println!("{} {} {} {:.1} s", e.name, e.split.name(), e.config.style, e.config.duration);
    }
    write_manifest(&a.out.join(MANIFEST), &entries)?;
    println!("wrote {} sessions to {}", entries.len(), a.out.display());
    Ok(())
}

fn sessions(dir: &Path, split: Option<Split>) -> Result<Vec<(ManifestEntry, AlignedClip)>> {
    let path = dir.join(MANIFEST);
    let entries = with_path(&path, read_manifest(&path))?;
    entries
        .into_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| {
            let files = SessionFiles::new(dir, &e.name);
            let clip = with_path(&files.wav, files.featurize())?;
            Ok((e, clip))
        })
        .collect()
}

fn input_columns() -> Vec<String> {
    let mut c: Vec<String> = (0..AUDIO_DIM).map(|i| format!("mel{i}")).collect();
    c.extend((0..GAZE_DIM).map(|i| format!("gaze{i}")));
    c
}

pub fn featurize(a: FeaturizeArgs) -> Result<()> {
    create_dir(&a.out)?;
    for (e, clip) in sessions(&a.data, None)? {
        let t = clip.len();
        let mut data = Vec::with_capacity(t * (AUDIO_DIM + GAZE_DIM));
        for i in 0..t {
            data.extend_from_slice(clip.audio.row(i));
            data.extend_from_slice(clip.gaze.row(i));
        }
        let times: Vec<f64> = (0..t).map(|i| i as f64 / FRAME_RATE).collect();
        let series = TimeSeries::new(times, Tensor::new(vec![t, AUDIO_DIM + GAZE_DIM], data)?)?;
        let path = a.out.join(format!("{}.features.csv", e.name));
        write_series(&path, &input_columns(), &series)?;
        println!("{} {} frames", path.display(), t);
    }
    Ok(())
}

/// Reads `(times, audio, gaze)` from a features file or a session stem.
fn load_input(path: &Path) -> Result<(Vec<f64>, Tensor<f64>, Tensor<f64>)> {
    let name = path.to_string_lossy();
    if let Some(stripped) = name.strip_suffix(".features.csv") {
        let (cols, series) = read_series(path)?;
        if cols.len() != AUDIO_DIM + GAZE_DIM {
            return Err(Error::UnsupportedFormat(format!(
                "{stripped}.features.csv has {} channels, expected {}",
                cols.len(),
                AUDIO_DIM + GAZE_DIM
            )));
        }
        let t = series.times.len();
        let mut audio = Vec::with_capacity(t * AUDIO_DIM);
        let mut gaze = Vec::with_capacity(t * GAZE_DIM);
        for i in 0..t {
            let row = series.values.row(i);
            audio.extend_from_slice(&row[..AUDIO_DIM]);
            gaze.extend_from_slice(&row[AUDIO_DIM..]);
        }
        return Ok((
            series.times,
            Tensor::new(vec![t, AUDIO_DIM], audio)?,
            Tensor::new(vec![t, GAZE_DIM], gaze)?,
        ));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("`{name}` is not a session stem")))?;
    let files = SessionFiles::new(dir, &stem.to_string_lossy());
    let clip = with_path(&files.wav, files.featurize_inputs())?;
    let times = (0..clip.len()).map(|i| i as f64 / FRAME_RATE).collect();
    Ok((times, clip.audio, clip.gaze))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    with_path(path, Checkpoint::load(path))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::new(ModelConfig::new(ModelVariant::C));
    let kv = gather(
        &a.config,
        vec![
            flag("variant", &a.variant),
            flag("steps", &a.steps),
            flag("seed", &a.seed),
            flag("precision", &a.precision),
            flag("lr", &a.lr),
            flag("batch", &a.batch),
            flag("window", &a.window),
            flag("kl_weight", &a.kl_weight),
            flag("channels", &a.channels),
            flag("latent", &a.latent),
            flag("layers", &a.layers),
        ],
    )?;
    apply(&kv, &mut [&mut |k, v| cfg.set(k, v)])?;
    cfg.train_paths.extend(a.data);
    cfg.heldout_paths.extend(a.heldout);
    cfg.validate()?;
    if cfg.train_paths.is_empty() {
        return Err(Error::InvalidArgument("no training data (--data or `train=`)".into()));
    }
    let load = |dirs: &[PathBuf], split| -> Result<Vec<AlignedClip>> {
        let mut out = Vec::new();
        for d in dirs {
            out.extend(sessions(d, Some(split))?.into_iter().map(|(_, c)| c));
        }
        Ok(out)
    };
    let data = load(&cfg.train_paths, Split::Train)?;
    let heldout = load(&cfg.heldout_paths, Split::Heldout)?;
    eprintln!(
        "training variant {} on {} clips ({} frames), {} steps",
        cfg.model.variant,
        data.len(),
        data.iter().map(AlignedClip::len).sum::<usize>(),
        cfg.steps
    );
    let start = Instant::now();
    let out = fit(&cfg, &data, &heldout)?;
    out.checkpoint.save(&a.out)?;
    if let Some(m) = &a.metrics {
        with_path(m, fs::write(m, out.log.render()).map_err(Error::from))?;
    }
    if let Some((step, last)) = out.log.steps().last() {
        println!("step {step}: face_rec {:.6} total {:.6}", last.face_rec, last.total);
    }
    if let Some(h) = out.log.last_eval() {
        println!("held-out face mse {h:.6}");
    }
    println!(
        "checkpoint {} ({}), {:.1} s, {} skipped steps",
        a.out.display(),
        out.checkpoint.sha256(),
        start.elapsed().as_secs_f64(),
        out.skipped_steps
    );
    match out.diverged {
        Some(why) => Err(Error::Numerical {
            op: "train".into(),
            detail: format!("{why}; saved the last finite parameters"),
        }),
        None => Ok(()),
    }
}

/// Held-out sessions of a data directory, one split per style.
fn eval_splits(dir: &Path) -> Result<BTreeMap<String, EvalSet>> {
    let mut splits: BTreeMap<String, EvalSet> = BTreeMap::new();
    for (e, clip) in sessions(dir, Some(Split::Heldout))? {
        let tag = match e.config.style {
            Style::Conversational => "conv",
            Style::Descriptive => "desc",
        };
        let key = format!("heldout-{tag}-s{}", e.config.subject);
        match splits.get_mut(&key) {
            Some(set) => set.clips.push(clip),
            None => {
                let decoder = LandmarkDecoder::for_subject(e.config.subject)?;
                splits.insert(key, EvalSet { clips: vec![clip], decoder });
            }
        }
    }
    if splits.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} lists no held-out sessions",
            dir.join(MANIFEST).display()
        )));
    }
    Ok(splits)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let splits = eval_splits(&a.data)?;
    let table = match (&a.checkpoint, &a.runs) {
        (Some(path), None) => {
            let ck = load_checkpoint(path)?;
            let model = ck.model::<f64>()?;
            let mut t = AblationTable::default();
            for (name, set) in &splits {
                t.push(name.clone(), evaluate_model(&model, set)?, ck.sha256());
            }
            if let Some(h) = &a.heatmap {
                let clip = &splits.values().next().expect("non-empty").clips[0];
                let pi = model.mixture_weights(&clip.audio, &clip.gaze)?;
                let map = export_weight_heatmap(&pi, 0, a.heatmap_start, a.heatmap_frames, h)?;
                print!("{}", map.summary());
            }
            t
        }
        (None, Some(runs)) => {
            let manifest = with_path(runs, RunManifest::load(runs))?;
            build_ablation_table(&manifest, &splits)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "pass exactly one of --checkpoint or --runs".into(),
            ))
        }
    };
    print!("{}", table.to_text());
    if let Some(p) = &a.table {
        with_path(p, fs::write(p, table.to_tsv()).map_err(Error::from))?;
    }
    Ok(())
}

/// Coefficient frames to a file or standard output.
struct FrameSink {
    out: Box<dyn Write>,
    format: Format,
}

impl FrameSink {
    fn open(path: &Path, format: Format) -> Result<Self> {
        let out: Box<dyn Write> = if path == Path::new("-") {
            Box::new(BufWriter::new(io::stdout().lock()))
        } else {
            Box::new(BufWriter::new(with_path(path, fs::File::create(path).map_err(Error::from))?))
        };
        let mut sink = FrameSink { out, format };
        if format == Format::Csv {
            let mut header = String::from("time_seconds");
            for i in 0..FACE_DIM {
                header.push_str(&format!(",c{i}"));
            }
            writeln!(sink.out, "{header}")?;
        }
        Ok(sink)
    }

    fn frame<F: Real>(&mut self, time: f64, coeffs: &[F]) -> Result<()> {
        match self.format {
            Format::Csv => {
                let mut line = time.to_string();
                for c in coeffs {
                    line.push(',');
                    line.push_str(&c.f64().to_string());
                }
                writeln!(self.out, "{line}")?;
            }
            Format::Bin => {
                self.out.write_all(&(coeffs.len() as u32).to_le_bytes())?;
                for c in coeffs {
                    self.out.write_all(&(c.f64() as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::from)
    }
}

fn infer_as<F: Real>(ck: &Checkpoint, io: &InputArgs) -> Result<usize> {
    let model: Model<F> = ck.model()?;
    let (times, audio, gaze) = load_input(&io.input)?;
    let coeffs = model.infer(Some(&audio), Some(&gaze))?;
    let mut sink = FrameSink::open(&io.out, io.format)?;
    for (i, t) in times.iter().enumerate() {
        sink.frame(*t, coeffs.row(i))?;
    }
    sink.flush()?;
    Ok(times.len())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let ck = load_checkpoint(&a.io.checkpoint)?;
    let frames = match ck.precision {
        Precision::Single => infer_as::<f32>(&ck, &a.io)?,
        Precision::Double => infer_as::<f64>(&ck, &a.io)?,
    };
    eprintln!("{frames} frames");
    Ok(())
}

fn stream_as<F: Real>(ck: &Checkpoint, a: &StreamArgs) -> Result<()> {
    let model: Model<F> = ck.model()?;
    let mut session = StreamSession::new(&model)?;
    let (times, audio, gaze) = load_input(&a.io.input)?;
    let mut sink = FrameSink::open(&a.io.out, a.io.format)?;
    let tick = Duration::from_secs_f64(1.0 / FRAME_RATE);
    let start = Instant::now();
    for (i, t) in times.iter().enumerate() {
        if a.realtime {
            let due = tick * i as u32;
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let frame = session.step(audio.row(i), gaze.row(i))?;
        sink.frame(*t, &frame.coeffs)?;
        if a.realtime {
            sink.flush()?;
        }
    }
    sink.flush()?;
    let l = session.latency();
    eprintln!(
        "{} frames ({} rejected), latency mean {:.3} ms, p99 {:.3} ms, max {:.3} ms, {:.0} frames/s",
        l.count(),
        session.rejected(),
        l.mean().as_secs_f64() * 1e3,
        l.p99().as_secs_f64() * 1e3,
        l.max().as_secs_f64() * 1e3,
        l.throughput()
    );
    Ok(())
}

pub fn stream(a: StreamArgs) -> Result<()> {
    let ck = load_checkpoint(&a.io.checkpoint)?;
    match ck.precision {
        Precision::Single => stream_as::<f32>(&ck, &a),
        Precision::Double => stream_as::<f64>(&ck, &a),
    }
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let r = gradient_suite(a.configs, a.seed, a.tolerance)?;
    println!(
        "{} configs, {} coordinates ({} at a kink), max rel error {:.3e}, {} above {:.0e}, {:.1} s",
        r.configs, r.checked, r.at_kink, r.max_rel_error, r.failures, a.tolerance, r.seconds
    );
    if r.failures > 0 {
        return Err(Error::Numerical {
            op: "gradcheck".into(),
            detail: format!("{} configurations exceed the tolerance", r.failures),
        });
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad entry `{s}` in `{key}`")))
        })
        .collect()
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut plan = DataPlan::default();
    let mut cfg = desk_train_config(ModelVariant::C);
    let mut variants = ModelVariant::ALL.to_vec();
    let mut seeds: Vec<u64> = vec![0, 1, 2];
    let kv = gather(&a.config, vec![flag("variants", &a.variants), flag("seeds", &a.seeds)])?;
    apply(
        &kv,
        &mut [
            &mut |k, v| match k {
                "variants" => {
                    variants = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?;
                    Ok(true)
                }
                "seeds" => {
                    seeds = parse_list(k, v)?;
                    Ok(true)
                }
                _ => Ok(false),
            },
            &mut |k, v| plan.set(k, v),
            &mut |k, v| cfg.set(k, v),
        ],
    )?;
    plan.validate()?;
    cfg.validate()?;
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("empty variant or seed list".into()));
    }
    create_dir(&a.out)?;
    eprintln!("generating {} sessions", plan.entries().len());
    let data = plan.prepare()?;
    let runs = run_grid(&cfg, &variants, &seeds, &data, |r| {
        eprintln!("trained {} seed {} in {:.1} s", r.variant, r.seed, r.seconds);
    })?;
    let mut manifest = RunManifest::default();
    for r in &runs {
        let name = format!("{}-s{}.ckpt", r.variant, r.seed);
        r.checkpoint.save(&a.out.join(&name))?;
        for split in data.heldout.keys() {
            manifest.runs.push(RunEntry {
                label: format!("{}/s{}", r.variant, r.seed),
                checkpoint: PathBuf::from(&name),
                split: split.clone(),
            });
        }
    }
    let manifest_path = a.out.join("runs.txt");
    fs::write(&manifest_path, manifest.render())?;
    let manifest = RunManifest::load(&manifest_path)?;
    for (split, set) in &data.heldout {
        let subset = RunManifest {
            runs: manifest.runs.iter().filter(|r| &r.split == split).cloned().collect(),
        };
        let mut table = build_ablation_table(&subset, &BTreeMap::from([(split.clone(), set.clone())]));
        for v in &variants {
            let prefix = format!("{v}/");
            let rows: Vec<_> = table
                .rows
                .iter()
                .filter(|r| r.label.starts_with(&prefix))
                .filter_map(|r| r.scores.as_ref())
                .collect();
            if let Some(m) = median_scores(rows) {
                table.push(format!("{v}/median"), m, "-");
            }
        }
        fs::write(a.out.join(format!("table-{split}.tsv")), table.to_tsv())?;
        println!("# {split}");
        print!("{}", table.to_text());
    }
    println!("{} runs, manifest {}", runs.len(), manifest_path.display());
    Ok(())
}
