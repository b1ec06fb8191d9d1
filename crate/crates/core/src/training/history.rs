use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub obfuscator_loss: f64,
    pub deobfuscator_loss: f64,
    pub detection_loss: f64,
    pub lr_obfuscator: f64,
    pub lr_deobfuscator: f64,
    /// Seconds spent in the epoch. Ignored by equality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.obfuscator_loss.to_bits() == o.obfuscator_loss.to_bits()
            && self.deobfuscator_loss.to_bits() == o.deobfuscator_loss.to_bits()
            && self.detection_loss.to_bits() == o.detection_loss.to_bits()
            && self.lr_obfuscator.to_bits() == o.lr_obfuscator.to_bits()
            && self.lr_deobfuscator.to_bits() == o.lr_deobfuscator.to_bits()
    }
}

/// Which models one training step changed, by parameter checksum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAudit {
    pub epoch: usize,
    pub batch: usize,
    /// The model this step was meant to update.
    pub updated: crate::models::Role,
    pub obfuscator_changed: bool,
    pub deobfuscator_changed: bool,
    pub detector_changed: bool,
}

impl StepAudit {
    /// Exactly the intended model changed.
    pub fn isolated(&self) -> bool {
        use crate::models::Role;
        !self.detector_changed
            && match self.updated {
                Role::Obfuscator => self.obfuscator_changed && !self.deobfuscator_changed,
                Role::Deobfuscator => self.deobfuscator_changed && !self.obfuscator_changed,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<StepAudit>,
}

impl TrainHistory {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            seed,
            config_hash: config_hash.into(),
            epochs: Vec::new(),
            audit: Vec::new(),
        }
    }

    /// One CSV row per epoch, without wall times.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# config_hash: {}\n# seed: {}\n", self.config_hash, self.seed);
        s += "epoch,obfuscator_loss,deobfuscator_loss,detection_loss,lr_obfuscator,lr_deobfuscator\n";
        for r in &self.epochs {
            s += &format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.obfuscator_loss, r.deobfuscator_loss, r.detection_loss, r.lr_obfuscator, r.lr_deobfuscator
            );
        }
        s
    }

    /// One JSON object per epoch, without wall times.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.wall_time_s = None;
                let mut v = serde_json::to_value(&r).expect("record serializes");
                v["config_hash"] = self.config_hash.clone().into();
                format!("{v}\n")
            })
            .collect()
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("epoch,wall_time_s\n");
        for r in &self.epochs {
            s += &format!("{},{}\n", r.epoch, r.wall_time_s.unwrap_or(f64::NAN));
        }
        s
    }
}
