use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::ingest::ingest_video;
use super::run::{completed_runs, latest_run, require_run, ErrorRecord, RunContext};
use crate::detector::{
    cross_model_matrix, detect_all, generate_pseudo_ground_truth, open_detector, toy_weights_path,
    train_toy_detector, DetectorAdapter, TOY_PREFIX,
};
use crate::efficiency::{count_macs, sweep_svg, width_sweep, SweepPoint};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision, labelled_frames, mean_similarity, table3_harness, ApResult, Blur, BlurKind, Identity,
    Learned, Noise, Obfuscation, Quantize, SimilarityReport,
};
use crate::models::{build_autoencoder, load_model, save_model, ModelHandle, Role};
use crate::synth::generate_dataset;
use crate::training::{run_epochs, resume, TrainOptions, TrainState, TrainingData};
use crate::types::{BoundingBox, FrameEntry, FrameManifest, ImageTensor, Split, CHANNELS};

/// One CLI command with its command-specific arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Synth,
    Ingest { input: PathBuf },
    PseudoGt,
    TrainDetector,
    Train { resume: Option<PathBuf> },
    Obfuscate { input: Option<PathBuf> },
    EvalAp,
    EvalSimilarity,
    Table3,
    CrossModel,
    Macs,
    Sweep,
    Report { force: bool },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest { .. } => "ingest",
            Command::PseudoGt => "pseudo-gt",
            Command::TrainDetector => "train-detector",
            Command::Train { .. } => "train",
            Command::Obfuscate { .. } => "obfuscate",
            Command::EvalAp => "eval-ap",
            Command::EvalSimilarity => "eval-similarity",
            Command::Table3 => "table3",
            Command::CrossModel => "cross-model",
            Command::Macs => "macs",
            Command::Sweep => "sweep",
            Command::Report { .. } => "report",
        }
    }
}

/// What a successful command leaves behind.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub status: String,
    pub command: String,
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub artifacts: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Runs `command` in a fresh run directory. On failure the run is marked
/// failed and the returned record describes the error.
pub fn execute(command: &Command, config: &ExperimentConfig) -> std::result::Result<RunOutcome, ErrorRecord> {
    let name = command.name();
    let mut ctx = RunContext::create(config, name).map_err(|e| ErrorRecord::new(name, &e, None))?;
    log::info!("{name}: run directory {}", ctx.dir.display());
    match dispatch(command, &mut ctx) {
        Ok(summary) => {
            let dir = ctx.dir.clone();
            let hash = ctx.hash.clone();
            let record = ctx.finish().map_err(|e| ErrorRecord::new(name, &e, Some(&dir)))?;
            Ok(RunOutcome {
                status: "ok".into(),
                command: name.into(),
                run_dir: dir,
                config_hash: hash,
                artifacts: record.artifacts,
                summary,
            })
        }
        Err(e) => Err(ctx.fail(&e)),
    }
}

fn dispatch(command: &Command, ctx: &mut RunContext) -> Result<serde_json::Value> {
    match command {
        Command::Synth => synth(ctx),
        Command::Ingest { input } => ingest(ctx, input),
        Command::PseudoGt => pseudo_gt(ctx),
        Command::TrainDetector => train_detector(ctx),
        Command::Train { resume } => train(ctx, resume.as_deref()),
        Command::Obfuscate { input } => obfuscate(ctx, input.as_deref()),
        Command::EvalAp => eval_ap(ctx),
        Command::EvalSimilarity => eval_similarity(ctx),
        Command::Table3 => table3(ctx),
        Command::CrossModel => cross_model(ctx),
        Command::Macs => macs(ctx),
        Command::Sweep => sweep(ctx),
        Command::Report { force } => report(ctx, *force),
    }
}

const DATASET_DIR: &str = "dataset";
const SECOND_DATASET_DIR: &str = "dataset-b";
const MANIFEST: &str = "manifest.jsonl";
const WEIGHTS_DIR: &str = "weights";
const OBFUSCATOR_FILE: &str = "obfuscator.bin";
const DEOBFUSCATOR_FILE: &str = "deobfuscator.bin";

fn hash_comment(hash: &str) -> String {
    format!("<!-- config_hash: {hash} -->\n")
}

/// A primary manifest and, for two-camera synthetic data, the second camera.
struct Dataset {
    primary: FrameManifest,
    second: Option<FrameManifest>,
}

fn resolve_dataset(ctx: &mut RunContext) -> Result<Dataset> {
    if let Some(p) = ctx.config.dataset.manifest.clone() {
        ctx.upstream("dataset", &p);
        return Ok(Dataset {
            primary: FrameManifest::read(&p)?,
            second: None,
        });
    }
    let (dir, _) = require_run(
        &ctx.config.output_dir,
        &["synth", "ingest", "pseudo-gt"],
        "a dataset manifest; alternatively set dataset.manifest",
    )?;
    let primary = dir.join(DATASET_DIR).join(MANIFEST);
    ctx.upstream("dataset", &primary);
    let second = dir.join(SECOND_DATASET_DIR).join(MANIFEST);
    let second = if second.exists() {
        ctx.upstream("dataset-b", &second);
        Some(FrameManifest::read(&second)?)
    } else {
        None
    };
    Ok(Dataset {
        primary: FrameManifest::read(&primary)?,
        second,
    })
}

fn test_set(manifest: &FrameManifest) -> Result<(Vec<ImageTensor>, Vec<Vec<BoundingBox>>)> {
    let test = manifest.split(Split::Test);
    if test.is_empty() {
        return Err(Error::Config("the dataset has no test-split frames (dataset.train_ratio = 1?)".into()));
    }
    labelled_frames(&test)
}

/// The configured weights directory, or else the newest run holding weights for `id`.
fn weights_dir(ctx: &RunContext, id: &str) -> Result<Option<PathBuf>> {
    if let Some(d) = &ctx.config.detector.weights_dir {
        return Ok(Some(d.clone()));
    }
    let runs = completed_runs(&ctx.config.output_dir, &["train-detector", "train", "sweep"])?;
    Ok(runs
        .into_iter()
        .rev()
        .map(|(d, _)| d.join(WEIGHTS_DIR))
        .find(|d| toy_weights_path(id, d).exists()))
}

/// Fits a toy detector on the dataset's train split and saves it under `weights/`.
fn fit_toy(ctx: &mut RunContext, id: &str, data: &Dataset) -> Result<Box<dyn DetectorAdapter>> {
    let (mut frames, mut boxes) = labelled_frames(&data.primary.split(Split::Train))?;
    if ctx.config.detector.train_on_second_camera {
        let second = data.second.as_ref().ok_or_else(|| {
            Error::Dependency("a second-camera dataset (set dataset.second_camera and rerun `synth`)".into())
        })?;
        let (f, b) = labelled_frames(&second.split(Split::Train))?;
        frames.extend(f);
        boxes.extend(b);
    }
    log::info!("fitting toy detector `{id}` on {} frames", frames.len());
    let (mut det, losses) = train_toy_detector(id, &frames, &boxes, &ctx.config.detector.toy)?;
    det.config_hash = Some(ctx.hash.clone());
    let dir = ctx.mkdir(WEIGHTS_DIR)?;
    let path = toy_weights_path(id, &dir);
    det.save(&path)?;
    ctx.artifact(path.strip_prefix(&ctx.dir).unwrap_or(&path).to_path_buf());
    let csv: String = std::iter::once(format!("# config_hash: {}\nepoch,loss\n", ctx.hash))
        .chain(losses.iter().enumerate().map(|(i, l)| format!("{i},{l:?}\n")))
        .collect();
    ctx.write_text(&format!("{WEIGHTS_DIR}/{id}.loss.csv"), &csv)?;
    Ok(Box::new(det))
}

/// Opens detector `id`. A toy detector without weights is fitted on the spot
/// when `fit_missing` holds and is a dependency error otherwise.
fn open_adapter(
    ctx: &mut RunContext,
    id: &str,
    data: Option<&Dataset>,
    fit_missing: bool,
) -> Result<Box<dyn DetectorAdapter>> {
    let dir = weights_dir(ctx, id)?;
    if id.starts_with(TOY_PREFIX) {
        let found = dir.as_ref().map(|d| toy_weights_path(id, d)).filter(|p| p.exists());
        match (found, data) {
            (Some(p), _) => ctx.upstream(&format!("detector:{id}"), p),
            (None, Some(data)) if fit_missing => return fit_toy(ctx, id, data),
            (None, _) => {
                return Err(Error::Dependency(format!(
                    "weights for detector `{id}` (run `train-detector` or set detector.weights_dir)"
                )))
            }
        }
    }
    open_detector(id, dir.as_deref().unwrap_or(&ctx.dir))
}

fn trained_models(ctx: &mut RunContext) -> Result<(ModelHandle, ModelHandle)> {
    let (dir, _) = require_run(&ctx.config.output_dir, &["train"], "a trained obfuscator")?;
    let obf = dir.join(OBFUSCATOR_FILE);
    let deobf = dir.join(DEOBFUSCATOR_FILE);
    ctx.upstream("obfuscator", &obf);
    ctx.upstream("deobfuscator", &deobf);
    Ok((
        load_model(&obf, Some(Role::Obfuscator))?,
        load_model(&deobf, Some(Role::Deobfuscator))?,
    ))
}

fn synth(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let d = ctx.config.dataset.clone();
    let hash = ctx.hash.clone();
    let tags = [("config_hash", hash.as_str())];
    let a = generate_dataset(&d.scene, d.frames, d.train_ratio, &ctx.path(DATASET_DIR), &tags)?;
    ctx.artifact(format!("{DATASET_DIR}/{MANIFEST}"));
    let mut summary = json!({ "frames": a.len(), "cameras": [d.scene.camera] });
    if d.second_camera {
        let scene_b = d.scene.second_camera();
        generate_dataset(&scene_b, d.frames, d.train_ratio, &ctx.path(SECOND_DATASET_DIR), &tags)?;
        ctx.artifact(format!("{SECOND_DATASET_DIR}/{MANIFEST}"));
        summary["cameras"] = json!([d.scene.camera, scene_b.camera]);
    }
    Ok(summary)
}

fn ingest(ctx: &mut RunContext, input: &Path) -> Result<serde_json::Value> {
    ctx.upstream("input", input);
    let stride = ctx.config.dataset.ingest_stride;
    let m = ingest_video(
        input,
        &ctx.path(DATASET_DIR),
        ctx.config.resolution(),
        stride,
        ctx.config.dataset.train_ratio,
        &ctx.tags(),
    )?;
    ctx.artifact(format!("{DATASET_DIR}/{MANIFEST}"));
    Ok(json!({ "frames": m.len(), "stride": stride }))
}

/// Rewrites entries with absolute frame paths so the manifest can live elsewhere.
fn relocated(m: &FrameManifest, base: &Path) -> Result<FrameManifest> {
    let entries: Vec<FrameEntry> = m
        .entries()
        .iter()
        .map(|e| FrameEntry {
            path: m.resolve(e),
            ..e.clone()
        })
        .collect();
    FrameManifest::new(base, entries)
}

fn pseudo_gt(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let id = ctx.config.detector.train.clone();
    let thr = ctx.config.detector.pseudo_gt_threshold;
    let adapter = open_adapter(ctx, &id, None, false)?;
    let mut counts = Vec::new();
    for (m, dir) in [(Some(&data.primary), DATASET_DIR), (data.second.as_ref(), SECOND_DATASET_DIR)] {
        let Some(m) = m else { continue };
        let labelled = generate_pseudo_ground_truth(adapter.as_ref(), m, thr)?;
        let out = ctx.mkdir(dir)?;
        let labelled = relocated(&labelled, &out)?;
        labelled.write_with_header(out.join(MANIFEST), &ctx.tags())?;
        ctx.artifact(format!("{dir}/{MANIFEST}"));
        let boxes: usize = labelled
            .entries()
            .iter()
            .map(|e| e.labels.as_ref().map_or(0, |l| l.person_boxes().len()))
            .sum();
        counts.push(json!({ "frames": labelled.len(), "person_boxes": boxes }));
    }
    Ok(json!({ "detector": id, "score_threshold": thr, "manifests": counts }))
}

fn train_detector(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let ids: Vec<String> = std::iter::once(ctx.config.detector.train.clone())
        .chain(ctx.config.detector.eval.iter().cloned())
        .filter(|id| id.starts_with(TOY_PREFIX))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.is_empty() {
        return Err(Error::Config("no toy detector ids in detector.train or detector.eval".into()));
    }
    let mut clean = BTreeMap::new();
    let (frames, gt) = test_set(&data.primary)?;
    for id in &ids {
        let det = fit_toy(ctx, id, &data)?;
        let dets = detect_all(det.as_ref(), &frames, 0.0)?;
        clean.insert(id.clone(), average_precision(&dets, &gt, ctx.config.eval.iou_threshold)?.person_ap);
    }
    Ok(json!({ "detectors": ids, "clean_test_ap": clean }))
}

fn train(ctx: &mut RunContext, resume_from: Option<&Path>) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let id = ctx.config.detector.train.clone();
    let adapter = open_adapter(ctx, &id, Some(&data), true)?;
    let schedule = ctx.config.train_schedule();
    let seed = ctx.config.seed;
    let training = TrainingData::from_manifest(&data.primary)?;
    let mut state = match resume_from {
        Some(p) => {
            ctx.upstream("checkpoint", p);
            resume(p, &ctx.hash)?
        }
        None => {
            let spec = ctx.config.autoencoder_spec();
            let obf = build_autoencoder(&spec, Role::Obfuscator, seed)?;
            let deobf = build_autoencoder(&spec, Role::Deobfuscator, seed.wrapping_add(1))?;
            TrainState::new(obf, deobf, &schedule, seed, ctx.hash.clone())?
        }
    };
    let ckpt = ctx.path("checkpoint.bin");
    let opts = TrainOptions {
        checkpoint: Some(&ckpt),
        ..TrainOptions::default()
    };
    run_epochs(&mut state, &training, adapter.as_ref(), &schedule, &opts)?;
    ctx.artifact("checkpoint.bin");
    for (model, file) in [(&mut state.obfuscator, OBFUSCATOR_FILE), (&mut state.deobfuscator, DEOBFUSCATOR_FILE)] {
        model.config_hash = Some(ctx.hash.clone());
        save_model(model, ctx.path(file))?;
        ctx.artifact(file);
    }
    ctx.write_text("history.csv", &state.history.to_csv())?;
    ctx.write_text("history.jsonl", &state.history.to_jsonl())?;
    // wall times are kept apart so the other artifacts stay byte-identical across reruns
    fs::write(ctx.path("timings.csv"), state.history.timings_csv()).map_err(|e| Error::io(ctx.path("timings.csv"), e))?;
    let last = state.history.epochs.last();
    Ok(json!({
        "epochs": state.history.epochs.len(),
        "detector": id,
        "final_obfuscator_loss": last.map(|r| r.obfuscator_loss),
        "final_deobfuscator_loss": last.map(|r| r.deobfuscator_loss),
        "obfuscator_checksum": state.obfuscator.checksum(),
    }))
}

fn obfuscate(ctx: &mut RunContext, input: Option<&Path>) -> Result<serde_json::Value> {
    let manifest = match input {
        Some(p) => {
            ctx.upstream("input", p);
            FrameManifest::read(p)?
        }
        None => resolve_dataset(ctx)?.primary.split(Split::Test),
    };
    let (obf, _) = trained_models(ctx)?;
    let obf = obf.eval();
    let out = ctx.mkdir("obfuscated/frames")?;
    let mut entries = Vec::with_capacity(manifest.len());
    for e in manifest.entries() {
        let frame = manifest.load_frame(e).map_err(|err| err.in_frame(&e.frame_id))?;
        let z = obf.forward(std::slice::from_ref(&frame))?.remove(0);
        let rel = Path::new("frames").join(format!("{}.png", e.frame_id));
        z.save_png(out.join(format!("{}.png", e.frame_id)), &ctx.tags())?;
        entries.push(FrameEntry {
            path: rel,
            ..e.clone()
        });
    }
    let base = ctx.path("obfuscated");
    let m = FrameManifest::new(&base, entries)?;
    m.write_with_header(base.join(MANIFEST), &ctx.tags())?;
    ctx.artifact(format!("obfuscated/{MANIFEST}"));
    Ok(json!({ "frames": m.len() }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ApEntry {
    detector: String,
    camera: String,
    clean: Option<ApResult>,
    obfuscated: Option<ApResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn eval_ap(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let (obf, _) = trained_models(ctx)?;
    let obf = obf.eval();
    let iou = ctx.config.eval.iou_threshold;
    let mut sets = Vec::new();
    for m in std::iter::once(&data.primary).chain(data.second.as_ref()) {
        let (frames, gt) = test_set(m)?;
        let z = obf.transform_all(&frames, 16)?;
        sets.push((m.cameras().join("+"), frames, z, gt));
    }
    let mut results = Vec::new();
    for id in ctx.config.detector.eval.clone() {
        let adapter = match open_adapter(ctx, &id, None, false) {
            Ok(a) => a,
            Err(e) => {
                results.push(ApEntry {
                    detector: id.clone(),
                    camera: String::new(),
                    clean: None,
                    obfuscated: None,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        for (camera, frames, z, gt) in &sets {
            let ap = |f: &[ImageTensor]| -> Result<ApResult> {
                average_precision(&detect_all(adapter.as_ref(), f, 0.0)?, gt, iou)
            };
            let (clean, obfuscated) = (ap(frames), ap(z));
            let error = clean.as_ref().err().or(obfuscated.as_ref().err()).map(|e| e.to_string());
            results.push(ApEntry {
                detector: id.clone(),
                camera: camera.clone(),
                clean: clean.ok(),
                obfuscated: obfuscated.ok(),
                error,
            });
        }
    }
    ctx.write_json(
        "ap.json",
        &json!({ "config_hash": ctx.hash, "iou_threshold": iou, "results": results }),
    )?;
    let summary: Vec<_> = results
        .iter()
        .map(|r| {
            json!({
                "detector": r.detector,
                "camera": r.camera,
                "clean_ap": r.clean.as_ref().map(|a| a.person_ap),
                "obfuscated_ap": r.obfuscated.as_ref().map(|a| a.person_ap),
                "error": r.error,
            })
        })
        .collect();
    Ok(json!(summary))
}

fn eval_similarity(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let (obf, deobf) = trained_models(ctx)?;
    let (frames, _) = test_set(&data.primary)?;
    let z = obf.eval().transform_all(&frames, 16)?;
    let x_hat = deobf.eval().transform_all(&z, 16)?;
    let mc = ctx.config.eval.metrics;
    let obfuscated: SimilarityReport = mean_similarity(&frames, &z, &mc)?;
    let reconstructed: SimilarityReport = mean_similarity(&frames, &x_hat, &mc)?;
    let value = json!({
        "config_hash": ctx.hash,
        "frames": frames.len(),
        "obfuscated": obfuscated,
        "reconstructed": reconstructed,
    });
    ctx.write_json("similarity.json", &value)?;
    Ok(json!({ "obfuscated": obfuscated, "reconstructed": reconstructed }))
}

fn table3(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let (obf, _) = trained_models(ctx)?;
    let id = ctx.config.detector.train.clone();
    let adapter = open_adapter(ctx, &id, None, false)?;
    let (frames, gt) = test_set(&data.primary)?;
    let e = ctx.config.eval.clone();
    let learned = Learned {
        label: "ours".into(),
        model: &obf,
    };
    let blur = Blur {
        kernel: e.blur_kernel,
        kind: BlurKind::Gaussian,
    };
    let noise = Noise {
        factor: e.noise_factor,
        seed: ctx.config.seed,
    };
    let quant = Quantize {
        levels: e.quantize_levels,
    };
    let methods: [&dyn Obfuscation; 5] = [&Identity, &blur, &noise, &quant, &learned];
    let thumbs = ctx.mkdir("thumbnails")?;
    let table = table3_harness(
        &methods,
        &frames,
        &gt,
        adapter.as_ref(),
        &e.metrics,
        e.iou_threshold,
        (e.grid_frames > 0).then_some((thumbs.as_path(), e.grid_frames)),
    )?;
    let md = table.to_markdown() + "\n" + &hash_comment(&ctx.hash);
    ctx.write_text("table3.md", &md)?;
    ctx.write_json("table3.json", &json!({ "config_hash": ctx.hash, "table": table }))?;
    Ok(serde_json::to_value(&table.rows)?)
}

fn cross_model(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let (obf, _) = trained_models(ctx)?;
    let gt_id = ctx.config.detector.train.clone();
    let gt_source = open_adapter(ctx, &gt_id, None, false)?;
    let mut adapters = Vec::new();
    for id in ctx.config.detector.eval.clone() {
        adapters.push(open_adapter(ctx, &id, None, false)?);
    }
    let refs: Vec<&dyn DetectorAdapter> = adapters.iter().map(|a| a.as_ref()).collect();
    let learned = Learned {
        label: "ours".into(),
        model: &obf,
    };
    let obfuscators: [&dyn Obfuscation; 2] = [&Identity, &learned];
    let matrix = cross_model_matrix(
        &obfuscators,
        &refs,
        &data.primary.split(Split::Test),
        gt_source.as_ref(),
        ctx.config.detector.pseudo_gt_threshold,
        ctx.config.eval.iou_threshold,
    )?;
    let md = matrix.to_markdown() + "\n" + &hash_comment(&ctx.hash);
    ctx.write_text("cross_model.md", &md)?;
    ctx.write_json("cross_model.json", &json!({ "config_hash": ctx.hash, "matrix": matrix }))?;
    Ok(serde_json::to_value(&matrix.cells)?)
}

fn macs(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let spec = ctx.config.autoencoder_spec();
    let report = count_macs(&spec, spec.input_height, spec.input_width)?;
    let md = report.to_markdown() + "\n" + &hash_comment(&ctx.hash);
    ctx.write_text("macs.md", &md)?;
    ctx.write_json("macs.json", &json!({ "config_hash": ctx.hash, "report": report }))?;
    Ok(json!({ "macs_gops": report.macs_gops, "params_m": report.params_m }))
}

fn sweep(ctx: &mut RunContext) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let id = ctx.config.detector.train.clone();
    let adapter = open_adapter(ctx, &id, Some(&data), true)?;
    let mut schedule = ctx.config.train_schedule();
    if let Some(e) = ctx.config.sweep.epochs {
        schedule.total_epochs = e;
    }
    schedule.validate()?;
    let training = TrainingData::from_manifest(&data.primary)?;
    let (frames, gt) = test_set(&data.primary)?;
    let seed = ctx.config.seed;
    let iou = ctx.config.eval.iou_threshold;
    let hash = ctx.hash.clone();
    let mut saved = Vec::new();
    let points: Vec<SweepPoint> = width_sweep(&ctx.config.sweep.alphas, &ctx.config.autoencoder_spec(), |spec| {
        let obf = build_autoencoder(spec, Role::Obfuscator, seed)?;
        let deobf = build_autoencoder(spec, Role::Deobfuscator, seed.wrapping_add(1))?;
        let mut state = TrainState::new(obf, deobf, &schedule, seed, hash.clone())?;
        run_epochs(&mut state, &training, adapter.as_ref(), &schedule, &TrainOptions::default())?;
        let mut model = state.obfuscator.eval();
        model.config_hash = Some(hash.clone());
        let rel = format!("sweep/alpha-{}.bin", spec.width_multiplier);
        let path = ctx.dir.join(&rel);
        fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| Error::io(&path, e))?;
        save_model(&model, &path)?;
        saved.push(rel);
        let z = model.transform_all(&frames, 16)?;
        Ok(average_precision(&detect_all(adapter.as_ref(), &z, 0.0)?, &gt, iou)?.person_ap)
    });
    for rel in saved {
        ctx.artifact(rel);
    }
    let svg = format!(
        "{}{}",
        hash_comment(&hash),
        sweep_svg(&points, "Person AP against obfuscator MACs")
    );
    ctx.write_text("sweep.svg", &svg)?;
    let mut md = String::from("| alpha | MACs (Gops) | params (M) | person AP |\n|---|---|---|---|\n");
    for p in &points {
        let ap = p.person_ap.map_or_else(|| format!("failed: {}", p.error.as_deref().unwrap_or("")), |a| format!("{a:.2}"));
        md += &format!("| {} | {:.4} | {:.4} | {ap} |\n", p.alpha, p.macs_gops, p.params_m);
    }
    md += &format!("\n{}", hash_comment(&hash));
    ctx.write_text("sweep.md", &md)?;
    ctx.write_json("sweep.json", &json!({ "config_hash": hash, "points": points }))?;
    Ok(serde_json::to_value(&points)?)
}

/// Tiles rows of equally sized frames with a 2-pixel white gutter.
pub fn image_grid(rows: &[Vec<ImageTensor>]) -> Result<ImageTensor> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Argument("an image grid needs at least one frame".into()))?;
    let (h, w) = (first.height(), first.width());
    let gap = 2;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (gh, gw) = (rows.len() * (h + gap) - gap, cols * (w + gap) - gap);
    let mut v = vec![1.0; gh * gw * CHANNELS];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::Structural("grid frames differ in size".into()));
            }
            for y in 0..h {
                let dst = ((r * (h + gap) + y) * gw + c * (w + gap)) * CHANNELS;
                v[dst..dst + w * CHANNELS].copy_from_slice(&img.values()[y * w * CHANNELS..(y + 1) * w * CHANNELS]);
            }
        }
    }
    ImageTensor::new(gh, gw, v)
}

fn json_hash(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    v["config_hash"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Integrity {
            path: path.to_path_buf(),
            check: "no config_hash field".into(),
        })
}

fn report(ctx: &mut RunContext, force: bool) -> Result<serde_json::Value> {
    let data = resolve_dataset(ctx)?;
    let (obf, deobf) = trained_models(ctx)?;
    let out_dir = ctx.config.output_dir.clone();
    let mut sources: Vec<(String, PathBuf, String)> = Vec::new();
    for (label, m) in [("obfuscator", &obf), ("deobfuscator", &deobf)] {
        let path = ctx.record().upstream[label].clone();
        let hash = m.config_hash.clone().ok_or_else(|| Error::Integrity {
            path: path.clone(),
            check: "model carries no config hash".into(),
        })?;
        sources.push((label.into(), path, hash));
    }
    let sections = [
        ("table3", "table3.json", "table3.md"),
        ("eval-ap", "ap.json", ""),
        ("eval-similarity", "similarity.json", ""),
        ("cross-model", "cross_model.json", "cross_model.md"),
        ("macs", "macs.json", "macs.md"),
        ("sweep", "sweep.json", "sweep.md"),
    ];
    let mut md = String::from("# Obfuscation report\n\n![original, obfuscated, reconstructed](grid.png)\n\n");
    md += "Rows: original, obfuscated, reconstructed by the deobfuscator.\n\n";
    for (cmd, json_file, md_file) in sections {
        let Some((dir, _)) = latest_run(&out_dir, &[cmd])? else {
            continue;
        };
        let jp = dir.join(json_file);
        sources.push((cmd.into(), jp.clone(), json_hash(&jp)?));
        ctx.upstream(cmd, &jp);
        md += &format!("## {cmd}\n\n");
        if md_file.is_empty() {
            let text = fs::read_to_string(&jp).map_err(|e| Error::io(&jp, e))?;
            md += &format!("```json\n{}\n```\n\n", text.trim());
        } else {
            let mp = dir.join(md_file);
            md += &fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
            md += "\n";
        }
        if cmd == "sweep" {
            let svg = dir.join("sweep.svg");
            fs::copy(&svg, ctx.path("sweep.svg")).map_err(|e| Error::io(&svg, e))?;
            ctx.artifact("sweep.svg");
            md += "![sweep](sweep.svg)\n\n";
        }
    }
    let reference = sources[0].2.clone();
    let mismatched: Vec<&(String, PathBuf, String)> = sources.iter().filter(|s| s.2 != reference).collect();
    if let Some(bad) = mismatched.first() {
        if !force {
            return Err(Error::Integrity {
                path: bad.1.clone(),
                check: format!(
                    "config hash {} differs from the obfuscator's {reference}; rerun with --force to combine anyway",
                    bad.2
                ),
            });
        }
        log::warn!("combining artifacts from {} differing configurations", mismatched.len() + 1);
    }
    let (frames, _) = test_set(&data.primary)?;
    let n = ctx.config.eval.grid_frames.max(1).min(frames.len());
    let originals: Vec<ImageTensor> = frames[..n].to_vec();
    let z = obf.eval().transform_all(&originals, 16)?;
    let x_hat = deobf.eval().transform_all(&z, 16)?;
    image_grid(&[originals, z, x_hat])?.save_png(ctx.path("grid.png"), &ctx.tags())?;
    ctx.artifact("grid.png");
    md += &hash_comment(&ctx.hash);
    ctx.write_text("report.md", &md)?;
    let listing: Vec<_> = sources
        .iter()
        .map(|(k, p, h)| json!({ "source": k, "path": p, "config_hash": h }))
        .collect();
    ctx.write_json(
        "report.json",
        &json!({ "config_hash": ctx.hash, "forced": force && !mismatched.is_empty(), "sources": listing }),
    )?;
    Ok(json!({ "sources": sources.len(), "hash_mismatches": mismatched.len() }))
}
