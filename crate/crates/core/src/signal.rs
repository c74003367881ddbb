//! Physiological signal segmentation: slice, resample, denoise, standardise.

use alloc::format;
use alloc::vec::Vec;

use crate::data::SignalClip;
use crate::tensor::Tensor;
use crate::wavelet::{denoise, WaveletSpec};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentConfig {
    pub target_len: usize,
    pub wavelet: WaveletSpec,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            target_len: 300,
            wavelet: WaveletSpec::default(),
        }
    }
}

/// Linear interpolation onto `len` points with both endpoints kept.
pub fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    match (x.len(), len) {
        (_, 0) | (0, _) => Vec::new(),
        (1, _) => alloc::vec![x[0]; len],
        (_, 1) => alloc::vec![x[0]],
        (n, _) => (0..len)
            .map(|i| {
                let pos = (i * (n - 1)) as f64 / (len - 1) as f64;
                let lo = (pos as usize).min(n - 2);
                let t = pos - lo as f64;
                x[lo] + t * (x[lo + 1] - x[lo])
            })
            .collect(),
    }
}

/// Zero mean and unit (population) variance; constant input gives zeros.
pub fn z_normalise(x: &mut [f64]) {
    let n = x.len() as f64;
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    if sd <= 1e-12 * mean.abs().max(1.0) {
        x.iter_mut().for_each(|v| *v = 0.0);
    } else {
        x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

/// Cuts `[onset, offset)` seconds from every channel and returns the
/// resampled, denoised and standardised `[3×L]` tensor.
pub fn segment_signals(clip: &SignalClip, onset: f64, offset: f64, cfg: &SegmentConfig) -> Result<Tensor, Error> {
    let rate = clip.sample_rate;
    if !(onset >= 0.0) || !(offset > onset) || offset * rate > clip.len() as f64 + 1e-9 {
        return Err(Error::Data(format!(
            "window [{}, {}) s outside the {:.3} s recording",
            onset,
            offset,
            clip.duration()
        )));
    }
    let start = libm::round(onset * rate) as usize;
    let end = (libm::round(offset * rate) as usize).min(clip.len());
    if end <= start + 1 {
        return Err(Error::Data(format!("window [{}, {}) s holds fewer than two samples", onset, offset)));
    }
    let l = cfg.target_len;
    let mut out = Vec::with_capacity(3 * l);
    for ch in &clip.channels {
        let resampled = resample_linear(&ch[start..end], l);
        let mut clean = denoise(&resampled, &cfg.wavelet)?;
        z_normalise(&mut clean);
        out.extend(clean.iter().map(|&v| v as f32));
    }
    Ok(Tensor::new(&[3, l], out)?)
}
