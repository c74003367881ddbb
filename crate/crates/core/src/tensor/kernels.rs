// Raw loops behind the graph ops. All reductions run in a fixed order so
// identical inputs give bit-identical outputs.

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // eight independent lanes so the loop vectorises
    let mut acc = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, brow, &mut c[p * n..(p + 1) * n]);
            }
        }
    }
}

/// Valid output range `[lo, hi)` for a tap shifted by `offset` over a row of
/// length `len` with zero padding.
#[inline]
fn tap_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).clamp(0, len as isize) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// Geometry of a grouped 1D "same" convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dDims {
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub k: usize,
    pub groups: usize,
}

impl Conv1dDims {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
}

pub(crate) fn conv1d_forward(d: Conv1dDims, x: &[f32], w: &[f32], b: Option<&[f32]>, out: &mut [f32]) {
    let (cin_g, cout_g, l, k) = (d.cin_g(), d.cout_g(), d.len, d.k);
    for co in 0..d.c_out {
        let g = co / cout_g;
        let orow = &mut out[co * l..(co + 1) * l];
        if let Some(b) = b {
            orow.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..cin_g {
            let xrow = &x[(g * cin_g + ci) * l..(g * cin_g + ci + 1) * l];
            let wrow = &w[(co * cin_g + ci) * k..(co * cin_g + ci + 1) * k];
            for (t, &wv) in wrow.iter().enumerate() {
                let off = t as isize - d.pad();
                let (lo, hi) = tap_range(off, l);
                if lo == hi {
                    continue;
                }
                let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                axpy(wv, src, &mut orow[lo..hi]);
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    d: Conv1dDims,
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    mut gb: Option<&mut [f32]>,
) {
    let (cin_g, cout_g, l, k) = (d.cin_g(), d.cout_g(), d.len, d.k);
    for co in 0..d.c_out {
        let g = co / cout_g;
        let grow = &gout[co * l..(co + 1) * l];
        if let Some(gb) = gb.as_deref_mut() {
            gb[co] += grow.iter().sum::<f32>();
        }
        for ci in 0..cin_g {
            let xi = g * cin_g + ci;
            let wbase = (co * cin_g + ci) * k;
            for t in 0..k {
                let off = t as isize - d.pad();
                let (lo, hi) = tap_range(off, l);
                if lo == hi {
                    continue;
                }
                let s_lo = (lo as isize + off) as usize;
                let s_hi = (hi as isize + off) as usize;
                if let Some(gw) = gw.as_deref_mut() {
                    gw[wbase + t] += dot(&grow[lo..hi], &x[xi * l + s_lo..xi * l + s_hi]);
                }
                if let Some(gx) = gx.as_deref_mut() {
                    axpy(w[wbase + t], &grow[lo..hi], &mut gx[xi * l + s_lo..xi * l + s_hi]);
                }
            }
        }
    }
}

/// Geometry of a 2D "same" convolution over one `[C, H, W]` image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn conv2d_forward(d: Conv2dDims, x: &[f32], w: &[f32], b: Option<&[f32]>, out: &mut [f32]) {
    let (h, wd, k) = (d.h, d.w, d.k);
    let pad = (k / 2) as isize;
    let plane = h * wd;
    for co in 0..d.c_out {
        let oplane = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = b {
            oplane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..d.c_in {
            let xplane = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let oy = ky as isize - pad;
                let (ylo, yhi) = tap_range(oy, h);
                for kx in 0..k {
                    let wv = w[((co * d.c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let ox = kx as isize - pad;
                    let (xlo, xhi) = tap_range(ox, wd);
                    if xlo == xhi {
                        continue;
                    }
                    for y in ylo..yhi {
                        let sy = (y as isize + oy) as usize;
                        let src = &xplane[sy * wd + (xlo as isize + ox) as usize..sy * wd + (xhi as isize + ox) as usize];
                        axpy(wv, src, &mut oplane[y * wd + xlo..y * wd + xhi]);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward(
    d: Conv2dDims,
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    mut gb: Option<&mut [f32]>,
) {
    let (h, wd, k) = (d.h, d.w, d.k);
    let pad = (k / 2) as isize;
    let plane = h * wd;
    for co in 0..d.c_out {
        let gplane = &gout[co * plane..(co + 1) * plane];
        if let Some(gb) = gb.as_deref_mut() {
            gb[co] += gplane.iter().sum::<f32>();
        }
        for ci in 0..d.c_in {
            for ky in 0..k {
                let oy = ky as isize - pad;
                let (ylo, yhi) = tap_range(oy, h);
                for kx in 0..k {
                    let widx = ((co * d.c_in + ci) * k + ky) * k + kx;
                    let ox = kx as isize - pad;
                    let (xlo, xhi) = tap_range(ox, wd);
                    if xlo == xhi {
                        continue;
                    }
                    let (s_lo, s_hi) = ((xlo as isize + ox) as usize, (xhi as isize + ox) as usize);
                    let mut acc = 0.0f32;
                    for y in ylo..yhi {
                        let sy = (y as isize + oy) as usize;
                        let grow = &gplane[y * wd + xlo..y * wd + xhi];
                        let xb = ci * plane + sy * wd;
                        if gw.is_some() {
                            acc += dot(grow, &x[xb + s_lo..xb + s_hi]);
                        }
                        if let Some(gx) = gx.as_deref_mut() {
                            axpy(w[widx], grow, &mut gx[xb + s_lo..xb + s_hi]);
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}
