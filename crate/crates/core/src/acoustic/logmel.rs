use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AcousticFeatures;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters over `n_fft / 2 + 1` bins, spanning 0 Hz to
/// Nyquist. Returned as `n_mels` rows of bin weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn frame_count(len: usize, win: usize, hop: usize) -> Option<usize> {
    (len >= win && win > 0 && hop > 0).then(|| (len - win) / hop + 1)
}

/// Log-mel filterbank features: Hann-windowed frames, DFT magnitude, HTK mel
/// filters, natural log floored at `1e-10`.
pub fn logmel(waveform: &[f64], sample_rate: u32, n_mels: usize, win_ms: f64, hop_ms: f64) -> Result<AcousticFeatures> {
    if sample_rate == 0 || n_mels == 0 {
        return Err(Error::InvalidArgument("sample rate and mel count must be positive".into()));
    }
    let win = (sample_rate as f64 * win_ms / 1000.0).round() as usize;
    let hop = (sample_rate as f64 * hop_ms / 1000.0).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {win_ms} ms / hop {hop_ms} ms round to zero samples"
        )));
    }
    let frames = frame_count(waveform.len(), win, hop).ok_or(Error::InputTooShort {
        len: waveform.len(),
        kernel: win,
    })?;
    let n_fft = win.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let window: Vec<f64> = (0..win).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos()).collect();
    let bank = mel_filterbank(n_mels, n_fft, sample_rate);
    let mut out = Vec::with_capacity(frames * n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new(waveform[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm()).collect();
        for filt in &bank {
            let energy: f64 = filt.iter().zip(&mags).map(|(w, m)| w * m).sum();
            out.push(energy.max(LOG_FLOOR).ln());
        }
    }
    AcousticFeatures::new(Tensor::new(vec![frames, n_mels], out)?, 1000.0 / hop_ms)
}
