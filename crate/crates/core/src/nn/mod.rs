//! Minimal CPU neural-network toolkit: NCHW tensors, convolution and
//! normalization layers with explicit backward passes, and AdamW.

pub mod blob;
mod gemm;
mod layers;
mod optim;
mod tensor;

pub use gemm::gemm;
pub use layers::{
    sigmoid, BatchNorm2d, Cache, Conv2d, Gradients, Layer, Mode, Param, Sequential, Trace,
};
pub use optim::AdamW;
pub use tensor::Tensor;

use sha2::{Digest, Sha256};

/// SHA-256 over every parameter and buffer of the network, in order.
pub fn state_checksum(net: &Sequential) -> String {
    let mut h = Sha256::new();
    for p in net.params() {
        for v in &p.data {
            h.update(v.to_le_bytes());
        }
    }
    for b in net.buffers() {
        for v in b {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
