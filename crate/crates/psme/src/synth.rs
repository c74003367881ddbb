//! Synthetic multimodal clips with class-dependent faces and physiology.
//!
//! Each clip shows a Gaussian intensity bump whose position encodes the
//! class and whose amplitude follows the standard-normal temporal profile,
//! so it peaks mid-clip. Off-apex frames also carry a class-independent
//! nuisance bump with the complementary amplitude. The depth stream shows
//! the same bumps with independent noise, min-max normalised per frame.
//!
//! The signals are 100 Hz EDA (drift plus a class-scaled step at the clip),
//! ECG (spike train) and PPG (pulse wave), the latter two at a
//! class-dependent rate. Subjects get their own offsets, gains, bump jitter
//! and heart-rate shift.

use psme_core::data::{FrameStack, MeSample, SignalClip};
use psme_core::fusion::{gaussian_weights, MAX_FRAMES};
use psme_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub per_subject: usize,
    pub classes: usize,
    pub seed: u64,
    /// Frame height and width.
    pub size: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub fps: f64,
    pub ps_rate: f64,
    /// Length of the stored recording.
    pub record_s: f64,
    /// Analysis window centred on the clip.
    pub window_s: f64,
    pub ps_noise: f64,
    pub frame_noise: f64,
    /// Peak height of the class bump at the apex frame.
    pub bump_amp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 12,
            per_subject: 6,
            classes: 3,
            seed: 42,
            size: 64,
            min_frames: 5,
            max_frames: MAX_FRAMES,
            fps: 30.0,
            ps_rate: 100.0,
            record_s: 5.0,
            window_s: 3.0,
            ps_noise: 0.2,
            frame_noise: 0.8,
            bump_amp: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |msg: &str| Err(psme_core::Error::Config(format!("synthetic dataset: {}", msg)).into());
        if self.subjects < 2 {
            return bad("need at least 2 subjects");
        }
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.per_subject == 0 {
            return bad("need at least one sample per subject");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames || self.max_frames > MAX_FRAMES {
            return bad("frame range must lie in [1, 15]");
        }
        if self.size < 8 {
            return bad("frames must be at least 8 pixels wide");
        }
        if !(self.window_s > 0.0 && self.record_s >= self.window_s + 1.0 && self.ps_rate > 0.0 && self.fps > 0.0) {
            return bad("recording must exceed the window by at least a second");
        }
        Ok(())
    }
}

struct Subject {
    /// Bump centre jitter in pixels.
    dx: f64,
    dy: f64,
    brightness: f64,
    hr_shift: f64,
    eda_gain: f64,
    drift: f64,
    dc: [f64; 3],
}

fn bump(size: usize, cx: f64, cy: f64, width: f64, amp: f64, out: &mut [f64]) {
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            out[y * size + x] += amp * (-d2 / (2.0 * width * width)).exp();
        }
    }
}

/// Class centre on a ring around the image centre.
fn class_centre(cfg: &SynthConfig, k: usize) -> (f64, f64) {
    let c = (cfg.size as f64 - 1.0) / 2.0;
    let r = 0.28 * cfg.size as f64;
    let a = std::f64::consts::TAU * k as f64 / cfg.classes as f64;
    (c + r * a.cos(), c + r * a.sin())
}

fn class_rate(k: usize) -> f64 {
    1.0 + 0.4 * k as f64
}

fn frames(cfg: &SynthConfig, subj: &Subject, k: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<FrameStack, IoError> {
    let s = cfg.size;
    let px = s * s;
    let profile = gaussian_weights(n).map_err(psme_core::Error::from)?;
    let peak = profile.as_slice().iter().cloned().fold(0.0, f64::max);
    let (cx, cy) = class_centre(cfg, k);
    let width = s as f64 / 10.0;
    let noise = Normal::new(0.0, cfg.frame_noise).expect("finite noise");
    let gains = [1.0, 0.8, 0.6];
    let mut colour = Vec::with_capacity(n * 3 * px);
    let mut depth = Vec::with_capacity(n * px);
    for f in 0..n {
        let a = profile.as_slice()[f] / peak;
        let mut face = vec![0.0; px];
        bump(s, cx + subj.dx, cy + subj.dy, width, cfg.bump_amp * a, &mut face);
        let nx = rng.random_range(0.2..0.8) * s as f64;
        let ny = rng.random_range(0.2..0.8) * s as f64;
        bump(s, nx, ny, width, cfg.bump_amp * (1.0 - a), &mut face);
        for g in gains {
            colour.extend(face.iter().map(|v| (subj.brightness + g * v + noise.sample(rng)).clamp(0.0, 1.0) as f32));
        }
        let raw: Vec<f64> = face.iter().map(|v| v + noise.sample(rng)).collect();
        let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let span = (hi - lo).max(1e-12);
        depth.extend(raw.iter().map(|v| ((v - lo) / span) as f32));
    }
    let colour = Tensor::new(&[n, 3, s, s], colour).map_err(psme_core::Error::from)?;
    let depth = Tensor::new(&[n, 1, s, s], depth).map_err(psme_core::Error::from)?;
    Ok(FrameStack::new(colour, depth)?)
}

fn signals(cfg: &SynthConfig, subj: &Subject, k: usize, centre: f64, rng: &mut ChaCha8Rng) -> Result<SignalClip, IoError> {
    let n = (cfg.record_s * cfg.ps_rate).round() as usize;
    let noise = Normal::new(0.0, cfg.ps_noise).expect("finite noise");
    let rate = class_rate(k) + subj.hr_shift;
    let phase = rng.random_range(0.0..1.0);
    let step = subj.eda_gain * (0.5 + 0.5 * k as f64);
    let mut ch: [Vec<f64>; 3] = Default::default();
    for i in 0..n {
        let t = i as f64 / cfg.ps_rate;
        let cycle = (t * rate + phase).fract();
        let eda = subj.drift * t + step / (1.0 + (-(t - centre) / 0.1).exp());
        let ecg = (-(cycle - 0.5).powi(2) / (2.0 * 0.03f64.powi(2))).exp();
        let ppg = 0.5 * (1.0 + (std::f64::consts::TAU * cycle).sin());
        for (c, v) in [eda, ecg, ppg].into_iter().enumerate() {
            ch[c].push(subj.dc[c] + v + noise.sample(rng));
        }
    }
    Ok(SignalClip::new(cfg.ps_rate, ch)?)
}

/// Generates `subjects × per_subject` clips. Same config, same bytes.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<MeSample>, IoError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(cfg.subjects * cfg.per_subject);
    for si in 0..cfg.subjects {
        let subj = Subject {
            dx: rng.random_range(-0.04..0.04) * cfg.size as f64,
            dy: rng.random_range(-0.04..0.04) * cfg.size as f64,
            brightness: rng.random_range(0.15..0.3),
            hr_shift: rng.random_range(-0.1..0.1),
            eda_gain: rng.random_range(0.7..1.3),
            drift: rng.random_range(-0.3..0.3),
            dc: [unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)],
        };
        for j in 0..cfg.per_subject {
            let k = rng.random_range(0..cfg.classes);
            let n = rng.random_range(cfg.min_frames..=cfg.max_frames);
            let half = cfg.window_s / 2.0;
            let centre = cfg.record_s / 2.0 + rng.random_range(-0.25..0.25);
            // keep the window on whole ticks so segmentation length is exact
            let onset = ((centre - half) * cfg.ps_rate).round() / cfg.ps_rate;
            let offset = onset + cfg.window_s;
            let fr = frames(cfg, &subj, k, n, &mut rng)?;
            let sig = signals(cfg, &subj, k, centre, &mut rng)?;
            out.push(MeSample {
                sample_id: format!("s{:02}_{:02}", si, j),
                subject_id: format!("sub{:02}", si),
                label: k,
                fps: cfg.fps,
                frames: fr,
                signals: sig,
                onset_s: onset,
                offset_s: offset,
            });
        }
    }
    Ok(out)
}

/// Magnitude spectrum of each mean-removed channel over the analysis window,
/// concatenated.
pub fn window_spectrum(s: &MeSample, bins: usize) -> Vec<f64> {
    let rate = s.signals.sample_rate;
    let a = (s.onset_s * rate).round() as usize;
    let b = ((s.offset_s * rate).round() as usize).min(s.signals.len());
    let n = b - a;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut out = Vec::with_capacity(3 * bins);
    for ch in &s.signals.channels {
        let w = &ch[a..b];
        let mean = w.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = w.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
        fft.process(&mut buf);
        out.extend(buf.iter().take(bins).map(|c| c.norm() / n as f64));
    }
    out
}

/// Resubstitution accuracy of a nearest-centroid classifier on
/// [`window_spectrum`] features.
pub fn centroid_accuracy(samples: &[MeSample], classes: usize, bins: usize) -> f64 {
    let feats: Vec<Vec<f64>> = samples.iter().map(|s| window_spectrum(s, bins)).collect();
    let dim = 3 * bins;
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (f, s) in feats.iter().zip(samples) {
        counts[s.label] += 1;
        centroids[s.label].iter_mut().zip(f).for_each(|(c, v)| *c += v);
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let hits = feats
        .iter()
        .zip(samples)
        .filter(|(f, s)| {
            let dist = |c: &Vec<f64>| c.iter().zip(f.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..classes)
                .filter(|&k| counts[k] > 0)
                .min_by(|&i, &j| dist(&centroids[i]).total_cmp(&dist(&centroids[j])))
                .expect("at least one class");
            best == s.label
        })
        .count();
    hits as f64 / samples.len() as f64
}

/// Frequency bins used by the separability check (0 to about 13 Hz on a
/// 3 s window).
pub const CENTROID_BINS: usize = 40;
