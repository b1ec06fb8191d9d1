//! Adversarially trained frame obfuscation for privacy-preserving person detection.
//!
//! A small depthwise-separable autoencoder (the obfuscator) is trained against a
//! reconstruction attacker (the deobfuscator) while a frozen detector keeps the
//! obfuscated frames usable for person detection. The crate also carries the
//! evaluation side: person AP, image similarity metrics, classical obfuscation
//! baselines and MAC/parameter accounting.

pub mod detector;
pub mod efficiency;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod training;
pub mod types;

pub use error::{Error, Result};
