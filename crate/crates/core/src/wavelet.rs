//! Periodic Daubechies discrete wavelet transform and soft-threshold
//! denoising.
//!
//! All arithmetic is `f64`; this runs as preprocessing, outside the autodiff
//! graph.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WaveletError {
    #[error("unsupported Daubechies order {0} (available: 1..=10)")]
    UnsupportedOrder(usize),
    #[error("decomposition needs at least one level")]
    ZeroLevels,
    #[error("signal of length {len} is too short for {levels} levels of db{order} (needs at least {min})")]
    TooShort { len: usize, levels: usize, order: usize, min: usize },
    #[error("coefficient bands are inconsistent: {0}")]
    Inconsistent(&'static str),
    #[error("threshold must be non-negative and finite, got {0}")]
    NegativeThreshold(f64),
    #[error("expected {expected} thresholds, got {got}")]
    ThresholdCount { expected: usize, got: usize },
}

/// Daubechies low-pass reconstruction filters, `dbN` has `2N` taps.
const DB: [&[f64]; 10] = [
    &[0.7071067811865476, 0.7071067811865476],
    &[0.48296291314453416, 0.8365163037378079, 0.2241438680420134, -0.12940952255126037],
    &[
        0.33267055295008263, 0.8068915093110925, 0.45987750211849154, -0.13501102001025458, -0.08544127388202666,
        0.03522629188570953,
    ],
    &[
        0.2303778133088965, 0.7148465705529157, 0.6308807679298589, -0.027983769416859854, -0.18703481171909309,
        0.030841381835560764, 0.0328830116668852, -0.010597401785069032,
    ],
    &[
        0.16010239797419293, 0.6038292697971896, 0.7243085284377729, 0.13842814590132074, -0.24229488706638203,
        -0.032244869584638375, 0.07757149384004572, -0.006241490212798274, -0.012580751999081999,
        0.0033357252854737712,
    ],
    &[
        0.11154074335010947, 0.49462389039845306, 0.7511339080210954, 0.31525035170919763, -0.22626469396543983,
        -0.12976686756726194, 0.09750160558732304, 0.027522865530305727, -0.03158203931748603,
        0.0005538422011614961, 0.004777257510945511, -0.0010773010853084796,
    ],
    &[
        0.07785205408500918, 0.3965393194819173, 0.7291320908462351, 0.4697822874051931, -0.14390600392856498,
        -0.22403618499387498, 0.07130921926683026, 0.08061260915108308, -0.03802993693501441,
        -0.01657454163066688, 0.01255099855609984, 0.0004295779729213665, -0.0018016407040474908,
        0.00035371379997452024,
    ],
    &[
        0.05441584224310401, 0.31287159091429995, 0.6756307362972898, 0.5853546836542067, -0.015829105256349306,
        -0.2840155429615469, 0.0004724845739132828, 0.12874742662047847, -0.017369301001807547,
        -0.044088253930794755, 0.013981027917398282, 0.008746094047405777, -0.004870352993451574,
        -0.00039174037337694705, 0.0006754494064505693, -0.00011747678412476953,
    ],
    &[
        0.038077947363878345, 0.24383467461259034, 0.6048231236901112, 0.6572880780513005, 0.13319738582500756,
        -0.2932737832791749, -0.09684078322297646, 0.14854074933810638, 0.03072568147933338,
        -0.06763282906132997, 0.00025094711483145197, 0.022361662123679096, -0.004723204757751397,
        -0.00428150368246343, 0.0018476468830562265, 0.00023038576352319597, -0.0002519631889427101,
        3.93473203162716e-05,
    ],
    &[
        0.026670057900555554, 0.1881768000776915, 0.5272011889317256, 0.6884590394536035, 0.2811723436605775,
        -0.24984642432731538, -0.19594627437737705, 0.12736934033579325, 0.09305736460357235,
        -0.07139414716639708, -0.029457536821875813, 0.033212674059341, 0.0036065535669561697,
        -0.010733175483330575, 0.001395351747052901, 0.001992405295185056, -0.0006858566949597116,
        -0.00011646685512928545, 9.358867032006959e-05, -1.3264202894521244e-05,
    ],
];

/// Median absolute deviation to standard deviation for Gaussian noise.
const MAD_TO_SIGMA: f64 = 0.6745;

/// Wavelet family and depth. Boundary handling is always periodic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletSpec {
    /// Daubechies order = number of vanishing moments.
    pub order: usize,
    pub levels: usize,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        WaveletSpec { order: 4, levels: 4 }
    }
}

impl WaveletSpec {
    pub fn new(order: usize, levels: usize) -> Result<Self, WaveletError> {
        let spec = WaveletSpec { order, levels };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), WaveletError> {
        if !(1..=DB.len()).contains(&self.order) {
            return Err(WaveletError::UnsupportedOrder(self.order));
        }
        if self.levels == 0 {
            return Err(WaveletError::ZeroLevels);
        }
        Ok(())
    }

    pub fn lowpass(&self) -> &'static [f64] {
        DB[self.order - 1]
    }

    /// Quadrature mirror of the low-pass filter: `g[k] = (-1)^k h[L-1-k]`.
    pub fn highpass(&self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n).map(|k| if k % 2 == 0 { h[n - 1 - k] } else { -h[n - 1 - k] }).collect()
    }

    pub fn filter_len(&self) -> usize {
        2 * self.order
    }

    /// Shortest accepted signal: the input to the deepest analysis step must
    /// be at least one filter long.
    pub fn min_len(&self) -> usize {
        (1usize << (self.levels - 1)) * self.filter_len()
    }

    fn padded_len(&self, n: usize) -> usize {
        let block = 1usize << self.levels;
        n.div_ceil(block) * block
    }
}

/// Output of [`dwt`]. `details[0]` is the finest band.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub original_len: usize,
    pub padded_len: usize,
}

impl WaveletCoeffs {
    pub fn len(&self) -> usize {
        self.approx.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn energy(&self) -> f64 {
        self.approx.iter().chain(self.details.iter().flatten()).map(|c| c * c).sum()
    }
}

fn analysis_step(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for i in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for k in 0..h.len() {
            let v = x[(2 * i + k) % n];
            sa += h[k] * v;
            sd += g[k] * v;
        }
        a[i] = sa;
        d[i] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for i in 0..a.len() {
        for k in 0..h.len() {
            x[(2 * i + k) % n] += h[k] * a[i] + g[k] * d[i];
        }
    }
    x
}

/// Multi-level periodic analysis. Lengths that are not a multiple of
/// `2^levels` are zero-padded; the original length is recorded.
pub fn dwt(x: &[f64], spec: &WaveletSpec) -> Result<WaveletCoeffs, WaveletError> {
    spec.validate()?;
    if x.len() < spec.min_len() {
        return Err(WaveletError::TooShort {
            len: x.len(),
            levels: spec.levels,
            order: spec.order,
            min: spec.min_len(),
        });
    }
    let padded_len = spec.padded_len(x.len());
    let mut approx = x.to_vec();
    approx.resize(padded_len, 0.0);
    let (h, g) = (spec.lowpass(), spec.highpass());
    let mut details = Vec::with_capacity(spec.levels);
    for _ in 0..spec.levels {
        let (a, d) = analysis_step(&approx, h, &g);
        details.push(d);
        approx = a;
    }
    Ok(WaveletCoeffs {
        approx,
        details,
        original_len: x.len(),
        padded_len,
    })
}

/// Inverse of [`dwt`]; the result is truncated to the original length.
pub fn idwt(c: &WaveletCoeffs, spec: &WaveletSpec) -> Result<Vec<f64>, WaveletError> {
    spec.validate()?;
    if c.details.len() != spec.levels {
        return Err(WaveletError::Inconsistent("number of detail bands differs from levels"));
    }
    if c.original_len > c.padded_len || c.padded_len != spec.padded_len(c.padded_len) {
        return Err(WaveletError::Inconsistent("original/padded length"));
    }
    for (j, d) in c.details.iter().enumerate() {
        if d.len() != c.padded_len >> (j + 1) {
            return Err(WaveletError::Inconsistent("detail band length"));
        }
    }
    if c.approx.len() != c.padded_len >> spec.levels {
        return Err(WaveletError::Inconsistent("approximation band length"));
    }
    let (h, g) = (spec.lowpass(), spec.highpass());
    let mut x = c.approx.clone();
    for d in c.details.iter().rev() {
        x = synthesis_step(&x, d, h, &g);
    }
    x.truncate(c.original_len);
    Ok(x)
}

/// Shrinks detail band `j` by `thresholds[j]`: `d -> sign(d) max(|d| - t, 0)`.
/// The approximation band is left untouched.
pub fn soft_threshold(c: &WaveletCoeffs, thresholds: &[f64]) -> Result<WaveletCoeffs, WaveletError> {
    if thresholds.len() != c.details.len() {
        return Err(WaveletError::ThresholdCount {
            expected: c.details.len(),
            got: thresholds.len(),
        });
    }
    if let Some(&t) = thresholds.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(WaveletError::NegativeThreshold(t));
    }
    let mut out = c.clone();
    for (band, &t) in out.details.iter_mut().zip(thresholds) {
        band.iter_mut().for_each(|d| *d = shrink(*d, t));
    }
    Ok(out)
}

#[inline]
pub fn shrink(d: f64, t: f64) -> f64 {
    let m = (d.abs() - t).max(0.0);
    if d < 0.0 {
        -m
    } else {
        m
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `sigma * sqrt(2 ln N)` with `sigma = median(|finest detail|) / 0.6745`.
pub fn universal_threshold(c: &WaveletCoeffs) -> f64 {
    let mut finest: Vec<f64> = c.details[0].iter().map(|d| d.abs()).collect();
    let sigma = median(&mut finest) / MAD_TO_SIGMA;
    let n = c.original_len.max(2) as f64;
    sigma * libm::sqrt(2.0 * libm::log(n))
}

/// DWT, universal soft threshold on every detail band, inverse DWT.
pub fn denoise(x: &[f64], spec: &WaveletSpec) -> Result<Vec<f64>, WaveletError> {
    let c = dwt(x, spec)?;
    let t = universal_threshold(&c);
    let shrunk = soft_threshold(&c, &vec![t; spec.levels])?;
    idwt(&shrunk, spec)
}
