use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorTrainConfig, DEFAULT_PSEUDO_GT_THRESHOLD, TOY_PREFIX};
use crate::error::{Error, Result};
use crate::eval::{
    MetricConfig, DEFAULT_BLUR_KERNEL, DEFAULT_IOU_THRESHOLD, DEFAULT_NOISE_FACTOR,
    DEFAULT_QUANTIZE_LEVELS,
};
use crate::models::{AutoencoderSpec, Stage};
use crate::nn::blob::sha256_hex;
use crate::synth::SceneSpec;
use crate::training::{Alternation, TrainSchedule};

/// Everything a command needs; every section may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed for model initialisation, batch order and noise.
    pub seed: u64,
    /// Runs are written under `<output_dir>/runs`. Not part of the config hash.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub schedule: ScheduleConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            detector: DetectorConfig::default(),
            schedule: ScheduleConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// An existing manifest. When set, `synth`, `ingest` and `pseudo-gt` runs are not consulted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Frames per camera for `synth`.
    pub frames: usize,
    /// Fraction of frames in the train split.
    pub train_ratio: f64,
    /// Also render the second camera for `synth`.
    pub second_camera: bool,
    /// Keep every n-th input frame in `ingest`.
    pub ingest_stride: usize,
    /// Synthetic scene; its `height` and `width` are also the working resolution.
    pub scene: SceneSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            frames: 256,
            train_ratio: 0.75,
            second_camera: false,
            ingest_stride: 1,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub width_multiplier: f64,
    pub encoder: Vec<Stage>,
    /// Weight of the reconstruction term in the obfuscator loss.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = AutoencoderSpec::default();
        Self {
            width_multiplier: spec.width_multiplier,
            encoder: spec.encoder,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// The frozen detector used during training and for pseudo ground truth.
    pub train: String,
    /// Detectors evaluated by `eval-ap` and `cross-model`.
    pub eval: Vec<String>,
    pub pseudo_gt_threshold: f64,
    /// Where detector weights live. Defaults to the latest `train-detector` run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
    /// Include the second camera's train split when fitting the toy detector.
    pub train_on_second_camera: bool,
    pub toy: DetectorTrainConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            train: TOY_PREFIX.into(),
            eval: vec![TOY_PREFIX.into()],
            pseudo_gt_threshold: DEFAULT_PSEUDO_GT_THRESHOLD,
            weights_dir: None,
            train_on_second_camera: false,
            toy: DetectorTrainConfig::default(),
        }
    }
}

/// [`TrainSchedule`] without `lambda`, which lives in the model section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub total_epochs: usize,
    pub lr_obf_initial: f64,
    pub lr_deobf_initial: f64,
    pub milestone_period: usize,
    pub obf_decay_factor: f64,
    pub deobf_decay_factor: f64,
    pub weight_decay: f64,
    pub alternation: Alternation,
    pub batch_size: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = TrainSchedule::default();
        Self {
            total_epochs: s.total_epochs,
            lr_obf_initial: s.lr_obf_initial,
            lr_deobf_initial: s.lr_deobf_initial,
            milestone_period: s.milestone_period,
            obf_decay_factor: s.obf_decay_factor,
            deobf_decay_factor: s.deobf_decay_factor,
            weight_decay: s.weight_decay,
            alternation: s.alternation,
            batch_size: s.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub metrics: MetricConfig,
    pub blur_kernel: [usize; 2],
    pub noise_factor: f64,
    pub quantize_levels: usize,
    /// Frames per method written as thumbnails and shown in report grids.
    pub grid_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            metrics: MetricConfig::default(),
            blur_kernel: DEFAULT_BLUR_KERNEL,
            noise_factor: DEFAULT_NOISE_FACTOR,
            quantize_levels: DEFAULT_QUANTIZE_LEVELS,
            grid_frames: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    /// Epochs per sweep point; the schedule's own length when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 0.5, 0.25],
            epochs: None,
        }
    }
}

/// Sets `key` (dotted path, kebab or snake case) in `table`. `raw` is read as
/// a TOML value and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
    if parts.iter().any(String::is_empty) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = parts.split_last().expect("at least one part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("`{}` is not a section", parts[..=i].join(".")))
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Sorted-key JSON with no whitespace.
fn canonical_json(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", serde_json::Value::String(k.clone()), canonical_json(&m[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        serde_json::Value::Array(a) => {
            format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(","))
        }
        other => other.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text; `origin` names the source in error messages.
    pub fn from_toml_str(text: &str, origin: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {e}")))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{origin}: key `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults only when `None`) and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml_str(&text, &p.display().to_string(), overrides)
            }
            None => Self::from_toml_str("", "<defaults>", overrides),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.frames == 0 || d.ingest_stride == 0 {
            return Err(Error::Config("dataset.frames and dataset.ingest_stride must be positive".into()));
        }
        if !(0.0..=1.0).contains(&d.train_ratio) {
            return Err(Error::Config(format!("dataset.train_ratio {} outside [0, 1]", d.train_ratio)));
        }
        self.autoencoder_spec().validate()?;
        self.train_schedule().validate()?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(Error::Config(format!("eval.iou_threshold {} outside (0, 1]", self.eval.iou_threshold)));
        }
        if !(0.0..=1.0).contains(&self.detector.pseudo_gt_threshold) {
            return Err(Error::Config(format!(
                "detector.pseudo_gt_threshold {} outside [0, 1]",
                self.detector.pseudo_gt_threshold
            )));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        sha256_hex(canonical_json(&v).as_bytes())
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.dataset.scene.height, self.dataset.scene.width)
    }

    pub fn autoencoder_spec(&self) -> AutoencoderSpec {
        let (h, w) = self.resolution();
        AutoencoderSpec {
            width_multiplier: self.model.width_multiplier,
            encoder: self.model.encoder.clone(),
            input_height: h,
            input_width: w,
        }
    }

    pub fn train_schedule(&self) -> TrainSchedule {
        let s = &self.schedule;
        TrainSchedule {
            total_epochs: s.total_epochs,
            lr_obf_initial: s.lr_obf_initial,
            lr_deobf_initial: s.lr_deobf_initial,
            milestone_period: s.milestone_period,
            obf_decay_factor: s.obf_decay_factor,
            deobf_decay_factor: s.deobf_decay_factor,
            weight_decay: s.weight_decay,
            alternation: s.alternation,
            lambda: self.model.lambda,
            batch_size: s.batch_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("", "t", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.train_schedule(), TrainSchedule::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = ExperimentConfig::from_toml_str("[schedule]\ntotal_epoch = 3\n", "cfg.toml", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("cfg.toml") && msg.contains("total_epoch"), "{msg}");
        let err = ExperimentConfig::from_toml_str("[eval]\niou_threshold = \"x\"\n", "cfg.toml", &[]).unwrap_err();
        assert!(err.to_string().contains("eval.iou_threshold"), "{err}");
    }

    #[test]
    fn overrides_accept_kebab_case() {
        let o = vec![
            ("schedule.total-epochs".to_string(), "10".to_string()),
            ("detector.train".to_string(), "toy-conv".to_string()),
            ("sweep.alphas".to_string(), "[0.5, 0.25]".to_string()),
        ];
        let c = ExperimentConfig::from_toml_str("", "t", &o).unwrap();
        assert_eq!(c.schedule.total_epochs, 10);
        assert_eq!(c.sweep.alphas, vec![0.5, 0.25]);
        let bad = vec![("schedule.nope".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_toml_str("", "t", &bad).is_err());
        let bad = vec![("seed.x".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_toml_str("", "t", &bad).is_err());
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = "seed = 3\n[model]\nlambda = 0.5\nwidth_multiplier = 0.5\n[schedule]\nbatch_size = 8\n";
        let b = "output_dir = \"elsewhere\"\nseed = 3\n[schedule]\nbatch_size = 8\n[model]\nwidth_multiplier = 0.5\nlambda = 0.5\n";
        let ca = ExperimentConfig::from_toml_str(a, "a", &[]).unwrap();
        let cb = ExperimentConfig::from_toml_str(b, "b", &[]).unwrap();
        assert_eq!(ca.hash(), cb.hash());
        let cc = ExperimentConfig::from_toml_str(&a.replace("seed = 3", "seed = 4"), "c", &[]).unwrap();
        assert_ne!(ca.hash(), cc.hash());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.model.lambda = 0.3;
        c.dataset.manifest = Some("data/m.jsonl".into());
        c.sweep.epochs = Some(2);
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, "rt", &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b":{"z":1,"a":[2,{"y":0,"x":1}]},"a":1.5}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":1.5,"b":{"a":[2,{"x":1,"y":0}],"z":1}}"#);
    }
}
