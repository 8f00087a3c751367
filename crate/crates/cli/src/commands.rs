//! Subcommand bodies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use grounding_core::annotate::{
    run_pipeline, AnnotationJob, FmClient, FmKind, HttpClient, MockCaptioner, MockParaphraser,
};
use grounding_core::camera::CameraRig;
use grounding_core::datakit::{
    corpus_stats, preprocess as run_preprocess, read_jsonl, read_samples, synth_corpus, write_corpus, write_jsonl,
    write_samples, GroundingSample, SplitManifest,
};
use grounding_core::evalkit::{join, mean_report, report_with_thresholds, IouKind, PredictionRecord, Report};
use grounding_core::textenc::{EncoderRegistry, EncoderSpec, TextEncoder};
use grounding_core::Error;
use grounding_model::baseline::{
    detect_samples, match_examples, predict_matcher, read_proposals, reference_predictions, selection_accuracy,
    train_matcher, write_proposals, MatchHead, MatcherFile, NoisyDetector, ProposalFrame,
};
use grounding_model::bev::{checkpoint, load_from_dir, predict as bev_predict, BevGrounding, Dataset, Trainer};
use log::info;
use serde::Serialize;
use std::sync::Arc;

use crate::{
    AnnotateArgs, Ctx, EvalArgs, IouArg, PredictArgs, PreprocessArgs, RemoteExhausted, StatsArgs, SynthArgs,
    TrainBaselineArgs, TrainBevArgs, UsageError,
};

/// Environment prefixes of the remote clients (`<PREFIX>_ENDPOINT`,
/// `<PREFIX>_API_KEY`).
pub const CAPTIONER_ENV: &str = "GROUNDING_CAPTIONER";
pub const PARAPHRASER_ENV: &str = "GROUNDING_PARAPHRASER";

/// Writes through a sibling `.partial` file, then renames over `path`.
fn atomic<F>(path: &Path, write: F) -> anyhow::Result<()>
where
    F: FnOnce(&Path) -> grounding_core::Result<()>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    atomic(path, |tmp| {
        let bytes = serde_json::to_vec_pretty(value)?;
        fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))
    })
}

fn parent_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_rig(path: &Path) -> anyhow::Result<CameraRig> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rig: CameraRig =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(rig)
}

fn build_encoder(spec: &EncoderSpec) -> anyhow::Result<Arc<dyn TextEncoder>> {
    Ok(EncoderRegistry::default().build(spec)?)
}

/// Detector proposals from a file, or from the synthetic detector.
fn proposals_for(ctx: &Ctx, file: Option<&PathBuf>, samples: &[GroundingSample]) -> anyhow::Result<Vec<ProposalFrame>> {
    match file {
        Some(p) => Ok(read_proposals(&ctx.path(p))?),
        None => Ok(detect_samples(&NoisyDetector::new(ctx.run.detector.clone()), samples)),
    }
}

pub fn preprocess(ctx: &Ctx, a: PreprocessArgs) -> anyhow::Result<()> {
    let input = ctx.path(&a.input);
    let records: Vec<serde_json::Value> = read_jsonl(&input)?;
    let mut cfg = ctx.run.preprocess.clone();
    cfg.lidar_root = match (a.lidar_root, cfg.lidar_root.take()) {
        (Some(r), _) | (None, Some(r)) => Some(ctx.path(&r)),
        (None, None) => Some(parent_of(&input)),
    };
    if let Some(m) = a.min_points {
        cfg.min_points = m;
    }
    let report = run_preprocess(&records, &cfg);
    atomic(&ctx.path(&a.out), |p| write_samples(p, &report.samples))?;
    atomic(&ctx.path(&a.diagnostics), |p| write_jsonl(p, &report.diagnostics))?;
    say!(
        "{} records: {} kept, {} filtered, {} malformed",
        records.len(),
        report.samples.len(),
        report.filtered(),
        report.malformed()
    );
    Ok(())
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.run.synth.clone();
    if let Some(n) = a.scenes {
        cfg.n_scenes = n;
    }
    if let Some(k) = a.prompts_per_scene {
        cfg.prompts_per_scene = k;
    }
    let frac = a.test_fraction.unwrap_or(ctx.run.split.test_fraction);
    let dir = ctx.path(&a.out);
    if dir.exists() && fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(true) {
        bail!(UsageError(format!("{} exists and is not empty", dir.display())));
    }
    let corpus = synth_corpus(&cfg)?;
    // Build the whole tree beside the target and move it into place at once.
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = dir.with_file_name(name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    write_corpus(&corpus, &tmp)?;
    let split = SplitManifest::by_scene(&corpus.samples, frac, cfg.seed)?;
    let pick = |ids: &[String]| -> Vec<GroundingSample> {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        corpus.samples.iter().filter(|s| keep.contains(s.sample_id.as_str())).cloned().collect()
    };
    write_samples(&tmp.join("train.jsonl"), &pick(&split.train))?;
    write_samples(&tmp.join("test.jsonl"), &pick(&split.test))?;
    let manifest = tmp.join("split.json");
    fs::write(&manifest, serde_json::to_vec_pretty(&split)?).map_err(|e| Error::io(&manifest, e))?;
    if dir.exists() {
        fs::remove_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
    say!(
        "{} scenes, {} samples ({} train / {} test), {} scenes skipped -> {}",
        corpus.scenes.len(),
        corpus.samples.len(),
        split.train.len(),
        split.test.len(),
        corpus.skipped.len(),
        dir.display()
    );
    Ok(())
}

pub fn annotate(ctx: &Ctx, a: AnnotateArgs) -> anyhow::Result<()> {
    let frames_path = ctx.path(&a.frames);
    let frames = read_samples(&frames_path)?;
    let root = parent_of(&frames_path);
    let calib = a.calib.map(|c| ctx.path(&c)).unwrap_or_else(|| root.join("calib.json"));
    let rig = read_rig(&calib)?;
    let sec = &ctx.run.annotate;
    let defaults = AnnotationJob::default();
    let job = AnnotationJob {
        sampling_rate: a.rate.unwrap_or(sec.sampling_rate),
        seed: ctx.seed(),
        caption_prompt: sec.caption_prompt.clone().unwrap_or(defaults.caption_prompt),
        paraphrase_templates: sec.paraphrase_templates.clone().unwrap_or(defaults.paraphrase_templates),
        image_root: Some(root),
        concurrency: a.concurrency.unwrap_or(sec.concurrency),
    };
    let (captioner, paraphraser): (Box<dyn FmClient>, Box<dyn FmClient>) = if a.mock || sec.mock {
        (Box::new(MockCaptioner), Box::new(MockParaphraser { seed: ctx.seed() }))
    } else {
        let missing = |prefix: &str| UsageError(format!("set {prefix}_ENDPOINT or pass --mock"));
        (
            Box::new(HttpClient::from_env(CAPTIONER_ENV, FmKind::Captioner).ok_or_else(|| missing(CAPTIONER_ENV))?),
            Box::new(
                HttpClient::from_env(PARAPHRASER_ENV, FmKind::Paraphraser).ok_or_else(|| missing(PARAPHRASER_ENV))?,
            ),
        )
    };
    let out = run_pipeline(&job, &frames, &rig, captioner.as_ref(), paraphraser.as_ref())?;
    atomic(&ctx.path(&a.out), |p| write_samples(p, &out.samples))?;
    atomic(&ctx.path(&a.failures), |p| write_jsonl(p, &out.failures))?;
    atomic(&ctx.path(&a.review), |p| write_jsonl(p, &out.review_queue))?;
    say!(
        "{} frames: {} sampled, {} filtered, {} annotated, {} failed",
        frames.len(),
        out.sampled,
        out.filtered,
        out.samples.len(),
        out.failures.len()
    );
    if out.remote_exhausted() {
        bail!(RemoteExhausted(format!(
            "all {} attempted frames failed at the remote clients",
            out.failures.len()
        )));
    }
    Ok(())
}

pub fn train_baseline(ctx: &Ctx, a: TrainBaselineArgs) -> anyhow::Result<()> {
    let samples = read_samples(&ctx.path(&a.samples))?;
    let out = ctx.path(&a.out);
    let frames = proposals_for(ctx, a.proposals.as_ref(), &samples)?;
    if a.proposals.is_none() {
        let p = out.with_extension("proposals.jsonl");
        atomic(&p, |t| write_proposals(t, &frames))?;
        info!("wrote detector proposals to {}", p.display());
    }
    let mut cfg = ctx.run.matcher.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let spec = ctx.run.encoder();
    let encoder = build_encoder(&spec)?;
    let (examples, skipped) = match_examples::<f32>(&samples, &frames, encoder.as_ref(), cfg.iou_threshold)?;
    let Some(first) = examples.first() else {
        bail!(Error::Empty("training prompts with a positive proposal"));
    };
    let feature_dim = first.features.shape()[1];
    let mut head = MatchHead::<f32>::new(encoder.width(), feature_dim, cfg.hidden, cfg.match_dim, cfg.seed)?;
    let curve = train_matcher(&mut head, &examples, &cfg)?;
    let acc = selection_accuracy(&head, &examples)?;
    let file = MatcherFile::from_head(&head, spec, curve.clone());
    atomic(&out, |p| file.save(p))?;
    say!(
        "{} prompts used, {} without a positive proposal; final loss {:.4}, train selection accuracy {:.3} -> {}",
        examples.len(),
        skipped,
        curve.last().copied().unwrap_or(f64::NAN),
        acc,
        out.display()
    );
    Ok(())
}

pub fn train_bev(ctx: &Ctx, a: TrainBevArgs) -> anyhow::Result<()> {
    let samples_path = ctx.path(&a.samples);
    let samples = read_samples(&samples_path)?;
    let root = parent_of(&samples_path);
    let mut trainer = match &a.resume {
        Some(r) => Trainer::resume(checkpoint::load(&ctx.path(r))?)?,
        None => {
            let cfg = ctx.run.model.clone();
            let encoder = build_encoder(&cfg.text)?;
            let rig = if a.lidar_only {
                None
            } else {
                let calib = a.calib.as_ref().map(|c| ctx.path(c)).unwrap_or_else(|| root.join("calib.json"));
                Some(read_rig(&calib)?)
            };
            let model = BevGrounding::<f32>::new(cfg, encoder.width(), rig.as_ref(), ctx.seed())?;
            Trainer::new(model, ctx.run.train.clone(), rig)?
        }
    };
    let tc = &mut trainer.config;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(e) = a.finetune_epochs {
        tc.finetune_epochs = e;
    }
    if let Some(m) = a.max_steps {
        tc.max_steps = Some(m);
    }
    if let Some(b) = a.batch_size {
        if a.resume.is_some() && b != tc.batch_size {
            bail!(UsageError("--batch-size cannot change on resume".into()));
        }
        tc.batch_size = b;
    }
    if a.lidar_only {
        tc.finetune_epochs = 0;
    }
    let encoder = build_encoder(&trainer.model.config.text)?;
    let with_views = trainer.model.has_camera_branch() && !a.lidar_only;
    let data = Dataset::build(&trainer.model, &samples, encoder.as_ref(), load_from_dir(&root, with_views))?;
    if data.is_empty() {
        bail!(Error::Empty("training samples"));
    }
    let out = ctx.path(&a.out);
    trainer.run(&data, Some(&out))?;
    let log = ctx.path(&a.log);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(|e| Error::io(&log, e))?;
    for l in &trainer.log {
        writeln!(f, "{}", serde_json::to_string(l)?).map_err(|e| Error::io(&log, e))?;
    }
    let last = trainer.log.last();
    say!(
        "{} steps this run, stage {:?} at step {}, last loss {} -> {}",
        trainer.log.len(),
        trainer.state.stage,
        trainer.state.step,
        last.map_or("-".to_string(), |l| format!("{:.4}", l.loss)),
        out.display()
    );
    Ok(())
}

fn trial_path(out: &Path, t: usize, trials: usize) -> PathBuf {
    if trials == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.t{t}.jsonl"))
}

pub fn predict(ctx: &Ctx, a: PredictArgs) -> anyhow::Result<()> {
    let samples_path = ctx.path(&a.samples);
    let samples = read_samples(&samples_path)?;
    let out = ctx.path(&a.out);
    if a.trials == 0 {
        bail!(UsageError("--trials must be positive".into()));
    }
    if a.trials > 1 && a.method.reference.is_none() {
        bail!(UsageError("--trials applies to --reference selectors only".into()));
    }
    let m = &a.method;
    if let Some(ck) = &m.checkpoint {
        let model = checkpoint::load(&ctx.path(ck))?.model;
        let encoder = build_encoder(&model.config.text)?;
        let root = parent_of(&samples_path);
        let data = Dataset::build(&model, &samples, encoder.as_ref(), load_from_dir(&root, model.use_images))?;
        let preds = bev_predict(&model, &data)?;
        atomic(&out, |p| write_jsonl(p, &preds))?;
        say!("{} predictions -> {}", preds.len(), out.display());
        return Ok(());
    }
    let frames = proposals_for(ctx, a.proposals.as_ref(), &samples)?;
    if let Some(path) = &m.matcher {
        let file = MatcherFile::load(&ctx.path(path))?;
        let head = file.to_head::<f32>()?;
        let encoder = build_encoder(&file.encoder)?;
        let preds = predict_matcher(&head, &samples, &frames, encoder.as_ref())?;
        atomic(&out, |p| write_jsonl(p, &preds))?;
        say!("{} predictions -> {}", preds.len(), out.display());
        return Ok(());
    }
    let mode = m.reference.expect("clap requires one method");
    for t in 0..a.trials {
        let preds = reference_predictions(mode, &samples, &frames, ctx.seed() + t as u64)?;
        let path = trial_path(&out, t, a.trials);
        atomic(&path, |p| write_jsonl(p, &preds))?;
        say!("{} predictions -> {}", preds.len(), path.display());
    }
    Ok(())
}

/// Report table restricted to the requested IoU kinds.
pub fn render_report(report: &Report, iou: IouArg) -> String {
    let text = report.to_string();
    let drop = match iou {
        IouArg::Bev => Some(IouKind::ThreeD.label()),
        IouArg::ThreeD => Some(IouKind::Bev.label()),
        IouArg::Both => None,
    };
    text.lines()
        .filter(|l| drop.map_or(true, |d| l.split_whitespace().next() != Some(d)))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> anyhow::Result<()> {
    if a.thresholds.is_empty() || a.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        bail!(UsageError(format!("thresholds must lie in [0, 1], got {:?}", a.thresholds)));
    }
    let gt = read_samples(&ctx.path(&a.gt))?;
    let mut reports = Vec::with_capacity(a.pred.len());
    for p in &a.pred {
        let path = ctx.path(p);
        let preds: Vec<PredictionRecord> = read_jsonl(&path)?;
        let records = join(&preds, &gt).with_context(|| format!("joining {}", path.display()))?;
        reports.push(report_with_thresholds(&records, &a.thresholds));
    }
    let report = if reports.len() == 1 { reports.pop().unwrap() } else { mean_report(&reports)? };
    say!("{}", render_report(&report, a.iou).trim_end());
    if let Some(j) = &a.json {
        write_json(&ctx.path(j), &report)?;
    }
    Ok(())
}

pub fn stats(ctx: &Ctx, a: StatsArgs) -> anyhow::Result<()> {
    let samples = read_samples(&ctx.path(&a.samples))?;
    let stats = corpus_stats(&samples)?;
    say!("{}", serde_json::to_string_pretty(&stats)?);
    if let Some(j) = &a.json {
        write_json(&ctx.path(j), &stats)?;
    }
    Ok(())
}
