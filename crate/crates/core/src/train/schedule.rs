use crate::error::{Error, Result};

/// `scale · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, scale: f64) -> Result<f64> {
    if step < 1 {
        return Err(Error::InvalidArgument("noam schedule steps start at 1".into()));
    }
    if warmup < 1 || d_model < 1 {
        return Err(Error::InvalidArgument("warmup and d_model must be >= 1".into()));
    }
    let s = step as f64;
    let decay = s.powf(-0.5);
    let ramp = s * (warmup as f64).powf(-1.5);
    Ok(scale * (d_model as f64).powf(-0.5) * decay.min(ramp))
}

/// Noam shape rescaled so the peak, reached at `step == warmup`, equals `peak_lr`.
pub fn peak_scaled_lr(step: u64, d_model: usize, warmup: u64, peak_lr: f64) -> Result<f64> {
    let scale = peak_lr * (d_model as f64).sqrt() * (warmup as f64).sqrt();
    noam_lr(step, d_model, warmup, scale)
}
