//! Adversarial training of the obfuscator against the deobfuscator.
//!
//! Per batch, the deobfuscator first takes a step on `MSE(X, D(O(X)))` with the
//! obfuscator output held constant. The obfuscator then takes a step on
//! `L_obj(O(X), Y) - lambda * MSE(X, D(O(X)))`, differentiating through the
//! frozen detector and the frozen deobfuscator.

mod adversarial;
mod history;
mod losses;
mod schedule;

pub use adversarial::{
    batch_order, checkpoint, deobfuscator_step, resume, run_epochs, train_adversarial,
    training_config_hash, TrainOptions, TrainState, TrainingData,
};
pub use history::{EpochRecord, StepAudit, TrainHistory};
pub use losses::{deobfuscator_loss, deobfuscator_loss_images, obfuscator_loss, ObfuscatorLoss};
pub use schedule::{lr_at_epoch, Alternation, TrainSchedule};
