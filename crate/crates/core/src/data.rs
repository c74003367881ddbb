//! In-memory sample types.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fusion::MAX_FRAMES;
use crate::signal::{segment_signals, SegmentConfig};
use crate::tensor::Tensor;
use crate::Error;

/// Colour and depth frames of one clip, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    colour: Tensor,
    depth: Tensor,
}

impl FrameStack {
    /// `colour` is `[F×3×H×W]`, `depth` is `[F×1×H×W]`, `1 ≤ F ≤ 15`.
    pub fn new(colour: Tensor, depth: Tensor) -> Result<Self, Error> {
        let (cs, ds) = (colour.shape(), depth.shape());
        if cs.len() != 4 || ds.len() != 4 || cs[1] != 3 || ds[1] != 1 {
            return Err(Error::Data(format!("frame shapes {:?} and {:?} are not [F×3×H×W] and [F×1×H×W]", cs, ds)));
        }
        if cs[0] != ds[0] || cs[2..] != ds[2..] {
            return Err(Error::Data(format!("colour {:?} and depth {:?} disagree", cs, ds)));
        }
        if cs[0] > MAX_FRAMES {
            return Err(Error::Data(format!("{} frames exceeds the {}-frame limit", cs[0], MAX_FRAMES)));
        }
        let in_range = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(&colour) || !in_range(&depth) {
            return Err(Error::Data("frame values must lie in [0, 1]".into()));
        }
        Ok(FrameStack { colour, depth })
    }

    pub fn frames(&self) -> usize {
        self.colour.shape()[0]
    }

    /// `(H, W)`.
    pub fn size(&self) -> (usize, usize) {
        (self.colour.shape()[2], self.colour.shape()[3])
    }

    pub fn colour(&self) -> &Tensor {
        &self.colour
    }

    pub fn depth(&self) -> &Tensor {
        &self.depth
    }

    pub fn colour_frame(&self, f: usize) -> Tensor {
        self.colour.index_first(f).expect("frame index in range")
    }

    pub fn depth_frame(&self, f: usize) -> Tensor {
        self.depth.index_first(f).expect("frame index in range")
    }

    pub fn reversed(&self) -> Self {
        let rev = |t: &Tensor| {
            let n = t.shape()[0];
            let per = t.numel() / n;
            let mut data = Vec::with_capacity(t.numel());
            for f in (0..n).rev() {
                data.extend_from_slice(&t.data()[f * per..(f + 1) * per]);
            }
            Tensor::from_parts(t.shape().to_vec(), data)
        };
        FrameStack {
            colour: rev(&self.colour),
            depth: rev(&self.depth),
        }
    }
}

/// Raw EDA, ECG and PPG recordings sharing one sample clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalClip {
    pub sample_rate: f64,
    /// EDA, ECG, PPG.
    pub channels: [Vec<f64>; 3],
}

impl SignalClip {
    pub fn new(sample_rate: f64, channels: [Vec<f64>; 3]) -> Result<Self, Error> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::Data(format!("sample rate {} must be positive", sample_rate)));
        }
        let n = channels[0].len();
        if n == 0 || channels.iter().any(|c| c.len() != n) {
            return Err(Error::Data("signal channels must be non-empty and of equal length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("signal contains non-finite values".into()));
        }
        Ok(SignalClip { sample_rate, channels })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }
}

/// One recorded clip as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct MeSample {
    pub sample_id: String,
    pub subject_id: String,
    pub label: usize,
    pub fps: f64,
    pub frames: FrameStack,
    pub signals: SignalClip,
    /// Analysis window on the signal clock, in seconds.
    pub onset_s: f64,
    pub offset_s: f64,
}

/// A sample ready for the model: frames plus the segmented `[3×L]` signals.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample_id: String,
    pub subject_id: String,
    pub label: usize,
    pub frames: FrameStack,
    pub ps: Tensor,
}

impl PreparedSample {
    pub fn from_sample(s: &MeSample, seg: &SegmentConfig) -> Result<Self, Error> {
        let ps = segment_signals(&s.signals, s.onset_s, s.offset_s, seg)?;
        Ok(PreparedSample {
            sample_id: s.sample_id.clone(),
            subject_id: s.subject_id.clone(),
            label: s.label,
            frames: s.frames.clone(),
            ps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PreparedSample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<PreparedSample>, num_classes: usize) -> Result<Self, Error> {
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::Data(format!(
                "sample `{}` has label {} but there are {} classes",
                s.sample_id, s.label, num_classes
            )));
        }
        Ok(Dataset { samples, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.samples.iter().map(|s| &s.subject_id).collect();
        set.into_iter().cloned().collect()
    }
}
