//! Temporal weighting of per-frame features.
//!
//! The standard-normal weighting puts most mass on the middle of a clip,
//! where the apex of a micro-expression usually lies. Frame `f` of `F` is
//! placed at `i_f = -3σ + f·6σ/(F-1)` and weighted by `exp(-i_f²/2)`,
//! normalised to sum to one.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Longest accepted clip (500 ms at 30 fps).
pub const MAX_FRAMES: usize = 15;

/// Standard deviation of the weighting curve.
pub const SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    weights: Vec<f64>,
}

impl FusionWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

fn check_frames(op: &'static str, frames: usize) -> Result<(), TensorError> {
    if frames == 0 || frames > MAX_FRAMES {
        return Err(TensorError::invalid(
            op,
            alloc::format!("frame count {} outside 1..={}", frames, MAX_FRAMES),
        ));
    }
    Ok(())
}

pub fn gaussian_weights(frames: usize) -> Result<FusionWeights, TensorError> {
    gaussian_weights_with_sigma(frames, SIGMA)
}

pub fn gaussian_weights_with_sigma(frames: usize, sigma: f64) -> Result<FusionWeights, TensorError> {
    check_frames("gaussian_weights", frames)?;
    if frames == 1 {
        return Ok(FusionWeights { weights: vec![1.0] });
    }
    let step = 6.0 * sigma / (frames - 1) as f64;
    let raw: Vec<f64> = (0..frames)
        .map(|f| {
            let i = -3.0 * sigma + f as f64 * step;
            libm::exp(-i * i / 2.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(FusionWeights {
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

pub fn uniform_weights(frames: usize) -> Result<FusionWeights, TensorError> {
    if frames == 0 {
        return Err(TensorError::invalid("uniform_weights", "frame count must be at least 1"));
    }
    Ok(FusionWeights {
        weights: vec![1.0 / frames as f64; frames],
    })
}

/// `Σ_f w_f · features[f]` for `features: [F×D]`, giving `[D]`. The weights
/// enter the graph as constants.
pub fn fuse_frames(g: &mut Graph, features: Var, w: &FusionWeights) -> Result<Var, TensorError> {
    let (frames, dim) = match *g.shape(features) {
        [f, d] => (f, d),
        ref s => return Err(TensorError::invalid("fuse_frames", alloc::format!("expected [F×D], got {:?}", s))),
    };
    if frames != w.len() {
        return Err(TensorError::shape("fuse_frames", g.shape(features), &[w.len()]));
    }
    let wt = Tensor::new(&[1, frames], w.weights.iter().map(|&v| v as f32).collect())?;
    let wv = g.constant(wt);
    let fused = g.matmul(wv, features)?;
    g.reshape(fused, &[dim])
}
