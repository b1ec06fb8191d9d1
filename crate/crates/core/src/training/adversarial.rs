use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::history::{EpochRecord, StepAudit, TrainHistory};
use super::losses::{deobfuscator_loss, obfuscator_loss};
use super::schedule::{lr_at_epoch, Alternation, TrainSchedule};
use crate::detector::DetectorAdapter;
use crate::error::{Error, Result};
use crate::models::{ModelHandle, Role};
use crate::nn::blob::{sha256_hex, BlobReader, BlobWriter};
use crate::nn::{AdamW, Mode, Tensor, Trace};
use crate::types::{BoundingBox, FrameManifest, ImageTensor, Split};

/// Training frames held in memory with their person boxes.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub frames: Vec<ImageTensor>,
    pub targets: Vec<Vec<BoundingBox>>,
}

impl TrainingData {
    /// The labelled train split of a manifest.
    pub fn from_manifest(manifest: &FrameManifest) -> Result<Self> {
        let train = manifest.split(Split::Train);
        if train.is_empty() {
            return Err(Error::Dependency("a manifest with train-split frames".into()));
        }
        let (frames, targets) = crate::eval::labelled_frames(&train)?;
        Ok(Self { frames, targets })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<Vec<BoundingBox>>)> {
        let refs: Vec<&ImageTensor> = idx.iter().map(|&i| &self.frames[i]).collect();
        let targets = idx.iter().map(|&i| self.targets[i].clone()).collect();
        Ok((Tensor::from_images(&refs)?, targets))
    }
}

/// Everything needed to continue a run: both players, both optimizers and the history so far.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub obfuscator: ModelHandle,
    pub deobfuscator: ModelHandle,
    pub opt_obfuscator: AdamW,
    pub opt_deobfuscator: AdamW,
    pub history: TrainHistory,
    /// Index of the next epoch to run; equals the number of completed epochs.
    pub next_epoch: usize,
}

impl TrainState {
    pub fn new(
        obfuscator: ModelHandle,
        deobfuscator: ModelHandle,
        schedule: &TrainSchedule,
        seed: u64,
        config_hash: impl Into<String>,
    ) -> Result<Self> {
        for (m, role) in [(&obfuscator, Role::Obfuscator), (&deobfuscator, Role::Deobfuscator)] {
            if m.role() != role {
                return Err(Error::RoleMismatch {
                    expected: role.to_string(),
                    found: m.role().to_string(),
                });
            }
        }
        let wd = schedule.weight_decay;
        Ok(Self {
            opt_obfuscator: AdamW::for_params(&obfuscator.net.params(), wd),
            opt_deobfuscator: AdamW::for_params(&deobfuscator.net.params(), wd),
            obfuscator: obfuscator.train(),
            deobfuscator: deobfuscator.train(),
            history: TrainHistory::new(seed, config_hash),
            next_epoch: 0,
        })
    }
}

/// Hash of everything that determines a training run apart from the data.
pub fn training_config_hash(
    obfuscator: &ModelHandle,
    deobfuscator: &ModelHandle,
    detector_id: &str,
    schedule: &TrainSchedule,
    seed: u64,
) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        obfuscator: &'a crate::models::AutoencoderSpec,
        deobfuscator: &'a crate::models::AutoencoderSpec,
        detector: &'a str,
        schedule: &'a TrainSchedule,
        seed: u64,
    }
    let v = serde_json::to_value(Key {
        obfuscator: obfuscator.spec(),
        deobfuscator: deobfuscator.spec(),
        detector: detector_id,
        schedule,
        seed,
    })
    .expect("training key serializes");
    sha256_hex(v.to_string().as_bytes())
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Written after every completed epoch.
    pub checkpoint: Option<&'a Path>,
    /// Checksums all three models around every step and records a [`StepAudit`].
    pub audit: bool,
    /// Stop once this many epochs are complete (for interrupted-run tests).
    pub stop_after: Option<usize>,
}

/// Frame order of one epoch, a pure function of `(seed, epoch)`.
pub fn batch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5c_a7e0_0000_0000);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One deobfuscator update on `MSE(x, D(z))` with `z` treated as a constant.
/// Returns the loss before the update.
pub fn deobfuscator_step(
    deobfuscator: &mut ModelHandle,
    opt: &mut AdamW,
    z: &Tensor,
    x: &Tensor,
    lr: f64,
) -> Result<f64> {
    let (x_hat, trace) = deobfuscator.net.forward(z.clone(), Mode::Train);
    let (loss, dy) = deobfuscator_loss(x, &x_hat)?;
    if !loss.is_finite() {
        return Err(Error::numerical("deobfuscator loss", format!("value {loss}")));
    }
    let mut grads = deobfuscator.net.zero_grads();
    deobfuscator.net.backward(&trace, dy, Some(&mut grads));
    opt.apply(deobfuscator.net.params_mut(), &grads, lr);
    deobfuscator.net.commit_running_stats(&trace);
    Ok(loss)
}

struct ObfStep {
    total: f64,
    detection: f64,
    reconstruction: f64,
}

/// The obfuscator's loss on the batch; with `update`, also its gradient step.
#[allow(clippy::too_many_arguments)]
fn obfuscator_step(
    obfuscator: &mut ModelHandle,
    opt: &mut AdamW,
    trace: &Trace,
    z: &Tensor,
    deobfuscator: &ModelHandle,
    adapter: &dyn DetectorAdapter,
    x: &Tensor,
    targets: &[Vec<BoundingBox>],
    lambda: f64,
    lr: f64,
    update: bool,
) -> Result<ObfStep> {
    let (x_hat, d_trace) = deobfuscator.net.forward(z.clone(), Mode::Train);
    let loss = obfuscator_loss(z, targets, &x_hat, x, adapter, lambda)?;
    if update {
        let mut dz = loss.grad_obfuscated;
        if lambda != 0.0 {
            let through_d = deobfuscator.net.backward(&d_trace, loss.grad_reconstruction, None);
            dz.add_scaled(&through_d, 1.0);
        }
        let mut grads = obfuscator.net.zero_grads();
        obfuscator.net.backward(trace, dz, Some(&mut grads));
        if !grads.is_finite() {
            return Err(Error::numerical("obfuscator gradients", "non-finite entries"));
        }
        opt.apply(obfuscator.net.params_mut(), &grads, lr);
        obfuscator.net.commit_running_stats(trace);
    }
    Ok(ObfStep {
        total: loss.value,
        detection: loss.detection,
        reconstruction: loss.reconstruction,
    })
}

struct Sums {
    obf: f64,
    deobf: f64,
    det: f64,
}

/// Runs epochs `state.next_epoch..schedule.total_epochs` (or up to `opts.stop_after`).
pub fn run_epochs(
    state: &mut TrainState,
    data: &TrainingData,
    adapter: &dyn DetectorAdapter,
    schedule: &TrainSchedule,
    opts: &TrainOptions,
) -> Result<()> {
    schedule.validate()?;
    if data.frames.is_empty() || data.frames.len() != data.targets.len() {
        return Err(Error::Argument("training data needs labelled frames".into()));
    }
    if !adapter.capabilities().loss {
        return Err(Error::Argument(format!(
            "detector `{}` cannot provide a loss",
            adapter.detector_id()
        )));
    }
    let end = opts
        .stop_after
        .map_or(schedule.total_epochs, |s| s.min(schedule.total_epochs));
    let seed = state.history.seed;
    let checksums = |s: &TrainState| {
        (
            s.obfuscator.checksum(),
            s.deobfuscator.checksum(),
            adapter.parameter_checksum(),
        )
    };
    while state.next_epoch < end {
        let epoch = state.next_epoch;
        let started = Instant::now();
        let lr_o = lr_at_epoch(schedule, epoch, Role::Obfuscator)?;
        let lr_d = lr_at_epoch(schedule, epoch, Role::Deobfuscator)?;
        let (train_d, train_o) = match schedule.alternation {
            Alternation::PerBatch => (true, true),
            Alternation::PerEpoch => (epoch % 2 == 0, epoch % 2 == 1),
        };
        let order = batch_order(seed, epoch, data.frames.len());
        let mut sums = Sums {
            obf: 0.0,
            deobf: 0.0,
            det: 0.0,
        };
        let mut batches = 0usize;
        for (b, idx) in order.chunks(schedule.batch_size).enumerate() {
            let ctx = |e: Error| match e {
                Error::Numerical { context, message } => {
                    Error::numerical(format!("epoch {epoch}, batch {b}: {context}"), message)
                }
                other => other,
            };
            let (x, targets) = data.batch(idx)?;
            let (z, o_trace) = state.obfuscator.net.forward(x.clone(), Mode::Train);
            if !z.is_finite() {
                return Err(ctx(Error::numerical("obfuscator output", "non-finite values")));
            }

            let before = opts.audit.then(|| checksums(state));
            let deobf_loss = if train_d {
                deobfuscator_step(&mut state.deobfuscator, &mut state.opt_deobfuscator, &z, &x, lr_d)
                    .map_err(ctx)?
            } else {
                f64::NAN
            };
            let mid = opts.audit.then(|| checksums(state));
            if let (Some(a), Some(m)) = (&before, &mid) {
                if train_d {
                    state.history.audit.push(StepAudit {
                        epoch,
                        batch: b,
                        updated: Role::Deobfuscator,
                        obfuscator_changed: a.0 != m.0,
                        deobfuscator_changed: a.1 != m.1,
                        detector_changed: a.2 != m.2,
                    });
                }
            }

            let step = obfuscator_step(
                &mut state.obfuscator,
                &mut state.opt_obfuscator,
                &o_trace,
                &z,
                &state.deobfuscator,
                adapter,
                &x,
                &targets,
                schedule.lambda,
                lr_o,
                train_o,
            )
            .map_err(ctx)?;
            if train_o {
                if let Some(m) = &mid {
                    let after = checksums(state);
                    state.history.audit.push(StepAudit {
                        epoch,
                        batch: b,
                        updated: Role::Obfuscator,
                        obfuscator_changed: m.0 != after.0,
                        deobfuscator_changed: m.1 != after.1,
                        detector_changed: m.2 != after.2,
                    });
                }
            }
            let deobf = if train_d { deobf_loss } else { step.reconstruction };
            if !step.total.is_finite() {
                return Err(ctx(Error::numerical("obfuscator loss", format!("value {}", step.total))));
            }
            sums.obf += step.total;
            sums.deobf += deobf;
            sums.det += step.detection;
            batches += 1;
        }
        let n = batches as f64;
        state.history.epochs.push(EpochRecord {
            epoch,
            obfuscator_loss: sums.obf / n,
            deobfuscator_loss: sums.deobf / n,
            detection_loss: sums.det / n,
            lr_obfuscator: lr_o,
            lr_deobfuscator: lr_d,
            wall_time_s: Some(started.elapsed().as_secs_f64()),
        });
        state.next_epoch += 1;
        log::info!(
            "epoch {epoch}: obf {:.5} deobf {:.5} det {:.5}",
            sums.obf / n,
            sums.deobf / n,
            sums.det / n
        );
        if let Some(path) = opts.checkpoint {
            checkpoint(state, path)?;
        }
    }
    Ok(())
}

/// Adversarial training from scratch on the train split of `manifest`.
pub fn train_adversarial(
    obfuscator: ModelHandle,
    deobfuscator: ModelHandle,
    adapter: &dyn DetectorAdapter,
    manifest: &FrameManifest,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(ModelHandle, ModelHandle, TrainHistory)> {
    let data = TrainingData::from_manifest(manifest)?;
    let hash = training_config_hash(&obfuscator, &deobfuscator, adapter.detector_id(), schedule, seed);
    let mut state = TrainState::new(obfuscator, deobfuscator, schedule, seed, hash)?;
    run_epochs(&mut state, &data, adapter, schedule, &TrainOptions::default())?;
    Ok((state.obfuscator, state.deobfuscator, state.history))
}

const CKPT_MAGIC: &[u8; 4] = b"AOBC";
const CKPT_VERSION: u32 = 1;

fn write_opt(w: &mut BlobWriter, opt: &AdamW) {
    w.u64(opt.step);
    w.array(&[4], &[opt.beta1, opt.beta2, opt.eps, opt.weight_decay]);
    w.u32(opt.m.len() as u32);
    for (m, v) in opt.m.iter().zip(&opt.v) {
        w.array(&[m.len()], m);
        w.array(&[v.len()], v);
    }
}

fn read_opt(r: &mut BlobReader) -> Result<AdamW> {
    let step = r.u64()?;
    let (_, h) = r.array()?;
    let n = r.u32()? as usize;
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        m.push(r.array()?.1);
        v.push(r.array()?.1);
    }
    if h.len() != 4 {
        return Err(Error::Checkpoint("optimizer header has the wrong length".into()));
    }
    Ok(AdamW {
        beta1: h[0],
        beta2: h[1],
        eps: h[2],
        weight_decay: h[3],
        step,
        m,
        v,
    })
}

/// Writes the state atomically: a partial write never replaces a good checkpoint.
pub fn checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if state.history.epochs.len() != state.next_epoch {
        return Err(Error::Checkpoint("history length disagrees with the epoch index".into()));
    }
    let mut w = BlobWriter::new(CKPT_MAGIC, CKPT_VERSION);
    w.str(&state.history.config_hash);
    w.u64(state.next_epoch as u64);
    w.bytes(&state.obfuscator.to_bytes()?);
    w.bytes(&state.deobfuscator.to_bytes()?);
    write_opt(&mut w, &state.opt_obfuscator);
    write_opt(&mut w, &state.opt_deobfuscator);
    // wall times would make otherwise identical checkpoints differ
    let mut history = state.history.clone();
    history.epochs.iter_mut().for_each(|r| r.wall_time_s = None);
    w.str(&serde_json::to_string(&history)?);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, w.finish()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, refusing it unless it was written under `expected_config_hash`.
pub fn resume(path: &Path, expected_config_hash: &str) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = BlobReader::open(&bytes, path, CKPT_MAGIC, CKPT_VERSION)?;
    let hash = r.str()?;
    if hash != expected_config_hash {
        return Err(Error::Checkpoint(format!(
            "{} was written under config hash {hash}, current config hashes to {expected_config_hash}",
            path.display()
        )));
    }
    let next_epoch = r.u64()? as usize;
    let obfuscator = ModelHandle::from_bytes(r.bytes()?, path, Some(Role::Obfuscator))?;
    let deobfuscator = ModelHandle::from_bytes(r.bytes()?, path, Some(Role::Deobfuscator))?;
    let opt_obfuscator = read_opt(&mut r)?;
    let opt_deobfuscator = read_opt(&mut r)?;
    let history: TrainHistory = serde_json::from_str(&r.str()?)?;
    if history.epochs.len() != next_epoch {
        return Err(Error::Checkpoint(format!(
            "epoch index {next_epoch} disagrees with {} history records",
            history.epochs.len()
        )));
    }
    Ok(TrainState {
        obfuscator,
        deobfuscator,
        opt_obfuscator,
        opt_deobfuscator,
        history,
        next_epoch,
    })
}
