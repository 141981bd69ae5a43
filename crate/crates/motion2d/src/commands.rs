//! One function per subcommand. Each writes its artifacts plus a
//! `run_manifest.json` into the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use motion2d_core::batch::{pair_to_sample, prepare_pair, MotionPair};
use motion2d_core::cleaning::{augment_caption_with_count, clean_samples, parse_count_prefix, split_stratified, tag_caption, CleaningConfig};
use motion2d_core::denoiser::Denoiser;
use motion2d_core::diffusion::build_schedule;
use motion2d_core::evaluator::{train_eval_model, EvalModel};
use motion2d_core::losses::Stage;
use motion2d_core::metrics::{diversity, fit_gaussian, frechet_distance, mm_distance, r_precision, stack_rows, RPrecision};
use motion2d_core::motion::{denormalize, normalize, MotionSample};
use motion2d_core::seed::derive_seed;
use motion2d_core::synthetic::toy_corpus_variants;
use motion2d_core::text::FeatureSource;
use motion2d_core::trainer::{embed_motions, sample_motion, stage1_train, stage2_finetune, StepLog, TrainExample, TrainObserver, TrainState};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::cli::{CleanArgs, Common, EvalArgs, RenderArgs, RenderFormat, SampleArgs, SplitArgs, StatsArgs, SynthArgs, TrainArgs};
use crate::config::{EvalSettings, RunConfig, STREAM_METRICS, STREAM_SAMPLE, STREAM_SPLIT};
use crate::error::{CliError, CliResult};
use crate::features::feature_source;
use crate::io::{read_json, read_motion_file, write_json, write_motion_file, write_text};
use crate::manifest::{relative_to, write_manifest, Manifest, ManifestRecord};
use crate::render::{render_gif, render_svg_frames};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub inputs: Vec<String>,
    /// Relative to the output directory, sorted.
    pub outputs: Vec<String>,
    pub checkpoint_hash: Option<String>,
    pub tool_version: String,
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn finish(
    command: &str,
    common: &Common,
    seed: u64,
    inputs: &[&Path],
    outputs: impl IntoIterator<Item = PathBuf>,
    checkpoint_hash: Option<String>,
) -> CliResult<()> {
    let outputs: BTreeSet<String> = outputs.into_iter().map(|p| relative_to(&p, &common.out)).collect();
    let manifest = RunManifest {
        command: command.to_owned(),
        config_path: common.config.as_deref().map(display),
        seed,
        inputs: inputs.iter().map(|p| display(p)).collect(),
        outputs: outputs.into_iter().collect(),
        checkpoint_hash,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    write_json(&common.out.join(RUN_MANIFEST), &manifest)
}

/// A file-name-safe form of a source id.
pub fn file_stem(source_id: &str) -> String {
    source_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn check_unique_stems<'a>(ids: impl IntoIterator<Item = &'a str>, path: &Path) -> CliResult<()> {
    let mut seen = BTreeMap::new();
    for id in ids {
        if let Some(prev) = seen.insert(file_stem(id), id) {
            return Err(CliError::data(path, format!("source ids {prev:?} and {id:?} collide")));
        }
    }
    Ok(())
}

/// `manifest.jsonl` lines for samples written under `dir`.
fn record_for(sample: &MotionSample, path: &Path, base: &Path) -> ManifestRecord {
    ManifestRecord {
        source_id: sample.source_id.clone(),
        path: relative_to(path, base),
        person_count: sample.person_count,
        length: sample.len(),
    }
}

/// Path of `target` as written into a manifest located in `dir`.
fn manifest_path(target: &Path, dir: &Path) -> String {
    if target.is_relative() && dir.as_os_str().is_empty() {
        return display(target);
    }
    match (fs::canonicalize(target), fs::canonicalize(dir)) {
        (Ok(t), Ok(d)) => match t.strip_prefix(&d) {
            Ok(rel) => display(rel),
            Err(_) => display(&t),
        },
        _ => display(target),
    }
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.common.config.as_deref(), args.common.seed)?;
    if args.frames < 2 || args.variants == 0 {
        return Err(CliError::Usage("synth needs --frames >= 2 and --variants >= 1".into()));
    }
    let out = &args.common.out;
    let mut records = Vec::new();
    let mut outputs = Vec::new();
    for sample in toy_corpus_variants(args.frames, args.variants) {
        let path = out.join("motions").join(format!("{}.json", file_stem(&sample.source_id)));
        write_motion_file(&sample, &path)?;
        records.push(record_for(&sample, &path, out));
        outputs.push(path);
    }
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    outputs.push(manifest);
    finish("synth", &args.common, cfg.seed, &[], outputs, None)
}

/// `--config` for cleaning may be a full run config or a bare cleaning config.
fn cleaning_config(common: &Common) -> CliResult<(CleaningConfig, u64)> {
    let Some(path) = common.config.as_deref() else {
        let cfg = RunConfig::load(None, common.seed)?;
        return Ok((cfg.cleaning, cfg.seed));
    };
    match RunConfig::load(Some(path), common.seed) {
        Ok(cfg) => Ok((cfg.cleaning, cfg.seed)),
        Err(CliError::Data(run_err)) => {
            let cleaning: CleaningConfig = read_json(path)
                .map_err(|e| CliError::Data(format!("{run_err}; as a cleaning config: {e}")))?;
            cleaning.validate()?;
            Ok((cleaning, common.seed.unwrap_or(0)))
        }
        Err(e) => Err(e),
    }
}

pub fn clean(args: &CleanArgs) -> CliResult<()> {
    let (cfg, seed) = cleaning_config(&args.common)?;
    let manifest = Manifest::read(&args.manifest)?;
    check_unique_stems(manifest.records.iter().map(|r| r.source_id.as_str()), &args.manifest)?;
    let mut loaded = BTreeMap::new();
    let inputs: Vec<_> = manifest
        .records
        .iter()
        .map(|r| {
            let result = read_motion_file(&manifest.resolve(r)).map_err(|e| e.to_string());
            if let Ok(s) = &result {
                loaded.insert(r.source_id.clone(), s.clone());
            }
            (r.source_id.clone(), result)
        })
        .collect();
    let report = clean_samples(inputs, &cfg);
    let out = &args.common.out;
    let mut records = Vec::new();
    let mut outputs = Vec::new();
    for id in report.accepted_ids() {
        let mut sample = augment_caption_with_count(&loaded[id]);
        sample.source_id = id.to_owned();
        let path = out.join("motions").join(format!("{}.json", file_stem(id)));
        write_motion_file(&sample, &path)?;
        records.push(record_for(&sample, &path, out));
        outputs.push(path);
    }
    info!("clean: {} of {} accepted", report.accepted, report.ingested);
    let manifest_out = out.join("manifest.jsonl");
    write_manifest(&manifest_out, &records)?;
    let report_path = out.join("cleaning_report.json");
    write_json(&report_path, &report)?;
    outputs.extend([manifest_out, report_path]);
    finish("clean", &args.common, seed, &[&args.manifest], outputs, None)
}

pub fn split(args: &SplitArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.common.config.as_deref(), args.common.seed)?;
    let manifest = Manifest::read(&args.manifest)?;
    let out = &args.common.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let rebased: Vec<ManifestRecord> = manifest
        .records
        .iter()
        .map(|r| ManifestRecord { path: manifest_path(&manifest.resolve(r), out), ..r.clone() })
        .collect();
    let (train, test) = split_stratified(&rebased, |r| r.person_count, cfg.test_fraction, derive_seed(cfg.seed, STREAM_SPLIT, 0))?;
    let (train_path, test_path) = (out.join("train.jsonl"), out.join("test.jsonl"));
    write_manifest(&train_path, &train)?;
    write_manifest(&test_path, &test)?;
    info!("split: {} train, {} test", train.len(), test.len());
    finish("split", &args.common, cfg.seed, &[&args.manifest], [train_path, test_path], None)
}

/// Normalized, count-tagged samples of a manifest, in manifest order.
fn load_normalized(manifest: &Manifest) -> CliResult<Vec<(ManifestRecord, MotionSample, MotionSample)>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let path = manifest.resolve(r);
            let raw = read_motion_file(&path)?;
            let norm = augment_caption_with_count(&normalize(&raw).map_err(|e| CliError::data(&path, e))?);
            Ok((r.clone(), raw, norm))
        })
        .collect()
}

fn train_examples(manifest: &Manifest, text: &dyn FeatureSource, pad_to: Option<usize>) -> CliResult<Vec<TrainExample>> {
    load_normalized(manifest)?
        .iter()
        .map(|(r, _, s)| {
            TrainExample::from_sample(s, text, pad_to).map_err(|e| CliError::Data(format!("{}: {e}", r.source_id)))
        })
        .collect()
}

/// Streams step logs to `train_log.jsonl` and rolling checkpoints to
/// `last.json`.
struct FileObserver<'a> {
    log: File,
    checkpoint: PathBuf,
    config: &'a RunConfig,
    last: Option<StepLog>,
}

impl TrainObserver for FileObserver<'_> {
    fn on_step(&mut self, log: &StepLog) -> motion2d_core::Result<()> {
        let line = serde_json::to_string(log).expect("step logs always serialize");
        writeln!(self.log, "{line}").map_err(|e| motion2d_core::Error::InvalidInput(format!("writing train log: {e}")))?;
        if log.step % 100 == 0 {
            info!("step {} epoch {} loss {:.6}", log.step, log.epoch, log.losses.total);
        }
        self.last = Some(*log);
        Ok(())
    }

    fn on_checkpoint(&mut self, model: &Denoiser, state: &TrainState) -> motion2d_core::Result<()> {
        Checkpoint::of_denoiser(model, self.config, Some(state))
            .save(&self.checkpoint)
            .map(|_| ())
            .map_err(|e| motion2d_core::Error::InvalidInput(e.to_string()))
    }
}

/// Keep the log lines of steps before `step`, dropping any written after
/// the checkpoint being resumed.
fn truncate_log(path: &Path, step: u64) -> CliResult<()> {
    let Ok(file) = File::open(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let log: StepLog = serde_json::from_str(&line).map_err(|e| CliError::data(path, e))?;
        if log.step < step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    write_text(path, &kept)
}

#[derive(Serialize)]
struct TrainSummary {
    examples: usize,
    text_dim: usize,
    evaluator_loss: Option<f64>,
    steps: u64,
    epochs: u64,
    last_step: Option<StepLog>,
    stage1_checkpoint_hash: String,
    checkpoint_hash: String,
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let out = &args.common.out;
    let last_path = out.join("last.json");
    let eval_path = out.join("evaluator.json");
    let stage1_path = out.join("denoiser_stage1.json");
    let final_path = out.join("denoiser.json");
    let log_path = out.join("train_log.jsonl");

    let resumed = if args.resume {
        let (ckpt, _) = Checkpoint::load(&last_path)?;
        let state = ckpt.state.clone().ok_or_else(|| CliError::data(&last_path, "checkpoint has no training state"))?;
        if let Some(path) = args.common.config.as_deref() {
            let given = RunConfig::load(Some(path), args.common.seed)?;
            if given != ckpt.config {
                return Err(CliError::Usage("config differs from the run being resumed".into()));
            }
        }
        Some((ckpt.denoiser()?, state, ckpt.config))
    } else {
        None
    };
    let cfg = match &resumed {
        Some((_, _, c)) => c.clone(),
        None => RunConfig::load(args.common.config.as_deref(), args.common.seed)?,
    };
    let text = feature_source(&cfg.text)?;
    let manifest = Manifest::read(&args.train)?;
    let data = train_examples(&manifest, text.as_ref(), cfg.pad_to)?;
    let schedule = build_schedule(&cfg.diffusion)?;

    let (eval, evaluator_loss) = if args.resume && eval_path.exists() {
        (Checkpoint::load(&eval_path)?.0.evaluator()?, None)
    } else {
        let examples: Vec<_> = data.iter().map(TrainExample::eval_example).collect();
        let (model, losses) = train_eval_model(&examples, &cfg.evaluator)?;
        Checkpoint::of_evaluator(&model, &cfg).save(&eval_path)?;
        info!("evaluator trained, final loss {:?}", losses.last());
        (model, losses.last().copied())
    };

    let (mut model, mut state) = match resumed {
        Some((m, s, _)) => {
            truncate_log(&log_path, s.step)?;
            (m, s)
        }
        None => {
            let m = Denoiser::new(&cfg.denoiser, text.dim(), schedule.num_steps())?;
            let s = TrainState::new(&m);
            write_text(&log_path, "")?;
            (m, s)
        }
    };
    let log = OpenOptions::new().append(true).open(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut observer = FileObserver { log, checkpoint: last_path.clone(), config: &cfg, last: None };

    if state.stage == Stage::First {
        stage1_train(&mut model, &mut state, &data, &schedule, &cfg.train, &mut observer)?;
        Checkpoint::of_denoiser(&model, &cfg, Some(&state)).save(&stage1_path)?;
    } else if !stage1_path.exists() {
        warn!("resuming in the second stage without {}", stage1_path.display());
    }
    stage2_finetune(&mut model, &mut state, &data, &schedule, &eval, &cfg.train, &mut observer)?;
    let hash = Checkpoint::of_denoiser(&model, &cfg, Some(&state)).save(&final_path)?;
    let stage1_hash = crate::checkpoint::file_sha256(&stage1_path).unwrap_or_default();

    let summary = TrainSummary {
        examples: data.len(),
        text_dim: text.dim(),
        evaluator_loss,
        steps: state.step,
        epochs: state.epoch,
        last_step: observer.last,
        stage1_checkpoint_hash: stage1_hash,
        checkpoint_hash: hash.clone(),
    };
    let summary_path = out.join("train_summary.json");
    write_json(&summary_path, &summary)?;
    let outputs = [eval_path, stage1_path, final_path, last_path, log_path, summary_path];
    finish("train", &args.common, cfg.seed, &[&args.train], outputs, Some(hash))
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    source_id: &'a str,
    caption: &'a str,
    seed: u64,
    frames: usize,
    person_count: u8,
    reference: bool,
    num_inference_steps: usize,
    eta: f64,
    guidance: Option<f64>,
    schedule: motion2d_core::diffusion::DiffusionConfig,
    checkpoint_hash: &'a str,
}

/// One generation request.
struct Request {
    source_id: String,
    caption: String,
    frames: usize,
    person_count: u8,
    frame_size: (f64, f64),
    reference: Option<MotionPair>,
}

pub fn sample(args: &SampleArgs) -> CliResult<()> {
    let (ckpt, hash) = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.denoiser()?;
    let mut cfg = match args.common.config.as_deref() {
        Some(p) => RunConfig::load(Some(p), args.common.seed)?,
        None => ckpt.config.clone(),
    };
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let text = feature_source(&ckpt.config.text)?;
    let schedule = build_schedule(&ckpt.config.diffusion)?;
    cfg.sampler.validate(&schedule)?;
    let max_len = model.config().max_len;

    let mut inputs: Vec<&Path> = vec![&args.checkpoint];
    let requests: Vec<Request> = if let Some(manifest_path) = &args.manifest {
        inputs.push(manifest_path);
        let manifest = Manifest::read(manifest_path)?;
        check_unique_stems(manifest.records.iter().map(|r| r.source_id.as_str()), manifest_path)?;
        load_normalized(&manifest)?
            .into_iter()
            .map(|(r, raw, norm)| {
                let reference = if cfg.sample.reference {
                    Some(prepare_pair(&norm, None).map_err(|e| CliError::Data(format!("{}: {e}", r.source_id)))?.0)
                } else {
                    None
                };
                Ok(Request {
                    source_id: r.source_id,
                    caption: norm.caption,
                    frames: raw.len().min(max_len),
                    person_count: raw.person_count,
                    frame_size: raw.frame_size,
                    reference,
                })
            })
            .collect::<CliResult<_>>()?
    } else {
        let caption = args.caption.clone().unwrap_or_default();
        let person_count = args.person_count.or_else(|| parse_count_prefix(&caption)).unwrap_or(2);
        let frames = args.frames.unwrap_or(cfg.sample.frames);
        if frames == 0 || frames > max_len {
            return Err(CliError::Usage(format!("--frames {frames} outside [1, {max_len}]")));
        }
        vec![Request {
            source_id: "caption-000".into(),
            caption: tag_caption(person_count, &caption),
            frames,
            person_count,
            frame_size: cfg.sample.frame_size,
            reference: None,
        }]
    };

    let out = &args.common.out;
    let mut records = Vec::new();
    let mut outputs = Vec::new();
    for (i, req) in requests.iter().enumerate() {
        let seed = derive_seed(cfg.seed, STREAM_SAMPLE, i as u64);
        let features = text.features(&req.caption)?;
        let reference = req.reference.as_ref().map(MotionPair::first_frames);
        let pair = sample_motion(&model, &schedule, &features, req.frames, reference, &cfg.sampler, seed)?;
        let generated =
            pair_to_sample(&pair, req.frames, req.person_count, &req.source_id, &req.caption, req.frame_size)?;
        let pixels = denormalize(&generated)?;
        let stem = file_stem(&req.source_id);
        let path = out.join(format!("{stem}.json"));
        write_motion_file(&pixels, &path)?;
        let meta = SampleMeta {
            source_id: &req.source_id,
            caption: &req.caption,
            seed,
            frames: req.frames,
            person_count: req.person_count,
            reference: req.reference.is_some(),
            num_inference_steps: cfg.sampler.num_inference_steps,
            eta: cfg.sampler.eta,
            guidance: cfg.sampler.guidance,
            schedule: ckpt.config.diffusion,
            checkpoint_hash: &hash,
        };
        let meta_path = out.join(format!("{stem}.meta.json"));
        write_json(&meta_path, &meta)?;
        records.push(record_for(&pixels, &path, out));
        outputs.extend([path, meta_path]);
    }
    let listing = out.join("generated.jsonl");
    write_manifest(&listing, &records)?;
    outputs.push(listing);
    info!("sample: wrote {} motions", requests.len());
    finish("sample", &args.common, cfg.seed, &inputs, outputs, Some(hash))
}

#[derive(Serialize)]
struct EvalEcho {
    settings: EvalSettings,
    r_precision_batch_used: usize,
    motions: usize,
    seed: u64,
    evaluator_hash: String,
}

#[derive(Serialize)]
struct EvalReport {
    fid: f64,
    r_precision: RPrecision,
    mm_dist: f64,
    diversity: f64,
    config_echo: EvalEcho,
}

fn embed_samples(eval: &EvalModel, samples: &[MotionSample]) -> CliResult<motion2d_core::Tensor> {
    let pairs = samples
        .iter()
        .map(|s| {
            let norm = normalize(s).map_err(|e| CliError::Data(format!("{}: {e}", s.source_id)))?;
            let (pair, mask) = prepare_pair(&norm, None).map_err(|e| CliError::Data(format!("{}: {e}", s.source_id)))?;
            Ok((pair, mask.frames))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(embed_motions(eval, &pairs)?)
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.common.config.as_deref(), args.common.seed)?;
    let (ckpt, hash) = Checkpoint::load(&args.evaluator)?;
    let evaluator = ckpt.evaluator()?;
    let text = feature_source(&ckpt.config.text)?;
    let test = Manifest::read(&args.test)?;
    check_unique_stems(test.records.iter().map(|r| r.source_id.as_str()), &args.test)?;
    let n = test.records.len();
    if n < 2 {
        return Err(CliError::data(&args.test, format!("need at least 2 test records, found {n}")));
    }
    let mut truth = Vec::with_capacity(n);
    let mut generated = Vec::with_capacity(n);
    let mut captions = Vec::with_capacity(n);
    for r in &test.records {
        let gt = read_motion_file(&test.resolve(r))?;
        let gen_path = args.generated.join(format!("{}.json", file_stem(&r.source_id)));
        if !gen_path.exists() {
            return Err(CliError::data(&gen_path, format!("no generated motion for {}", r.source_id)));
        }
        let gen = read_motion_file(&gen_path)?;
        if gen.person_count != gt.person_count {
            return Err(CliError::data(&gen_path, format!("person_count {} vs test {}", gen.person_count, gt.person_count)));
        }
        captions.push(tag_caption(gt.person_count, &gt.caption));
        truth.push(gt);
        generated.push(gen);
    }
    let gt_emb = embed_samples(&evaluator, &truth)?;
    let gen_emb = embed_samples(&evaluator, &generated)?;
    let text_rows = captions
        .iter()
        .map(|c| evaluator.embed_text(&text.features(c)?))
        .collect::<motion2d_core::Result<Vec<_>>>()?;
    let text_emb = stack_rows(&text_rows)?;

    let fid = frechet_distance(&fit_gaussian(&gen_emb)?, &fit_gaussian(&gt_emb)?)?;
    let batch = cfg.eval.r_precision_batch.min(n);
    let rp = r_precision(&text_emb, &gen_emb, batch, cfg.eval.r_precision_trials, derive_seed(cfg.seed, STREAM_METRICS, 0))?;
    let mm = mm_distance(&text_emb, &gen_emb)?;
    let div = diversity(&gen_emb, cfg.eval.diversity_pairs, derive_seed(cfg.seed, STREAM_METRICS, 1))?;
    let report = EvalReport {
        fid,
        r_precision: rp,
        mm_dist: mm,
        diversity: div,
        config_echo: EvalEcho { settings: cfg.eval, r_precision_batch_used: batch, motions: n, seed: cfg.seed, evaluator_hash: hash.clone() },
    };
    let path = args.common.out.join("eval_report.json");
    write_json(&path, &report)?;
    info!("eval: fid {fid:.6}, top1 {:.2}", rp.top1);
    finish("eval", &args.common, cfg.seed, &[&args.generated, &args.test, &args.evaluator], [path], Some(hash))
}

pub fn render(args: &RenderArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.common.config.as_deref(), args.common.seed)?;
    let mut style = cfg.render.clone();
    if let Some(s) = args.scale {
        style.scale = s;
    }
    if let Some(f) = args.fps {
        style.fps = f;
    }
    let sample = read_motion_file(&args.motion)?;
    let out = &args.common.out;
    let mut outputs = Vec::new();
    match args.format {
        RenderFormat::SvgFrames => {
            for (i, svg) in render_svg_frames(&sample, &style)?.iter().enumerate() {
                let path = out.join(format!("frame_{i:04}.svg"));
                write_text(&path, svg)?;
                outputs.push(path);
            }
        }
        RenderFormat::Gif => {
            let bytes = render_gif(&sample, &style)?;
            let stem = args.motion.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "motion".into());
            let path = out.join(format!("{stem}.gif"));
            fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
            fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            outputs.push(path);
        }
    }
    finish("render", &args.common, cfg.seed, &[&args.motion], outputs, None)
}

#[derive(Serialize)]
struct Stats {
    samples: usize,
    by_person_count: BTreeMap<u8, usize>,
    replicated: usize,
    count_tagged_captions: usize,
    min_frames: usize,
    max_frames: usize,
    mean_frames: f64,
    total_frames: usize,
}

pub fn stats(args: &StatsArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.common.config.as_deref(), args.common.seed)?;
    let manifest = Manifest::read(&args.manifest)?;
    let samples = manifest
        .records
        .iter()
        .map(|r| read_motion_file(&manifest.resolve(r)))
        .collect::<CliResult<Vec<_>>>()?;
    let lengths: Vec<usize> = samples.iter().map(MotionSample::len).collect();
    let mut by_person_count = BTreeMap::new();
    for s in &samples {
        *by_person_count.entry(s.person_count).or_insert(0) += 1;
    }
    let total: usize = lengths.iter().sum();
    let stats = Stats {
        samples: samples.len(),
        by_person_count,
        replicated: samples.iter().filter(|s| s.replicated).count(),
        count_tagged_captions: samples.iter().filter(|s| parse_count_prefix(&s.caption).is_some()).count(),
        min_frames: lengths.iter().copied().min().unwrap_or(0),
        max_frames: lengths.iter().copied().max().unwrap_or(0),
        mean_frames: if lengths.is_empty() { 0.0 } else { total as f64 / lengths.len() as f64 },
        total_frames: total,
    };
    let path = args.common.out.join("stats.json");
    write_json(&path, &stats)?;
    finish("stats", &args.common, cfg.seed, &[&args.manifest], [path], None)
}
