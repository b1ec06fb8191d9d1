use crate::detector::DetectorAdapter;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::types::{BoundingBox, ImageTensor};

fn check_same(x: &Tensor, y: &Tensor) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::Structural(format!(
            "batch shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.is_empty() {
        return Err(Error::Structural("empty batch".into()));
    }
    Ok(())
}

/// `MSE(x, x_hat)` over every pixel and channel, with its gradient with respect to `x_hat`.
pub fn deobfuscator_loss(x: &Tensor, x_hat: &Tensor) -> Result<(f64, Tensor)> {
    check_same(x, x_hat)?;
    let n = x.len() as f64;
    let mut grad = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut sum = 0.0;
    for ((g, a), b) in grad.data.iter_mut().zip(&x.data).zip(&x_hat.data) {
        let d = b - a;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

/// [`deobfuscator_loss`] on image batches.
pub fn deobfuscator_loss_images(x: &[ImageTensor], x_hat: &[ImageTensor]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Structural(format!(
            "batches of {} and {} frames",
            x.len(),
            x_hat.len()
        )));
    }
    let xs: Vec<&ImageTensor> = x.iter().collect();
    let ys: Vec<&ImageTensor> = x_hat.iter().collect();
    Ok(deobfuscator_loss(&Tensor::from_images(&xs)?, &Tensor::from_images(&ys)?)?.0)
}

/// Value and gradients of `L_obj(O(X), Y) - lambda * MSE(X, X_hat)`.
#[derive(Debug, Clone)]
pub struct ObfuscatorLoss {
    pub value: f64,
    pub detection: f64,
    pub reconstruction: f64,
    /// Gradient of the detection term with respect to the obfuscated batch.
    pub grad_obfuscated: Tensor,
    /// Gradient of the whole loss with respect to the reconstruction.
    pub grad_reconstruction: Tensor,
}

pub fn obfuscator_loss(
    obfuscated: &Tensor,
    targets: &[Vec<BoundingBox>],
    x_hat: &Tensor,
    x: &Tensor,
    adapter: &dyn DetectorAdapter,
    lambda: f64,
) -> Result<ObfuscatorLoss> {
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("lambda {lambda} must be non-negative")));
    }
    check_same(obfuscated, x)?;
    let (detection, grad_obfuscated) = adapter.loss_batch(obfuscated, targets)?;
    if !detection.is_finite() || !grad_obfuscated.is_finite() {
        return Err(Error::numerical("obfuscator loss, detection term", format!("value {detection}")));
    }
    let (reconstruction, mut grad_reconstruction) = deobfuscator_loss(x, x_hat)?;
    if !reconstruction.is_finite() {
        return Err(Error::numerical(
            "obfuscator loss, reconstruction term",
            format!("value {reconstruction}"),
        ));
    }
    grad_reconstruction.scale(-lambda);
    Ok(ObfuscatorLoss {
        value: detection - lambda * reconstruction,
        detection,
        reconstruction,
        grad_obfuscated,
        grad_reconstruction,
    })
}
