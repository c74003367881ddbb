use alloc::vec::Vec;

use super::{Graph, Tensor, TensorError, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// Flat index where the maximum was attained.
    pub worst_index: usize,
    pub checked: usize,
    /// Probes whose `±h`, `±h/2` and `±h/4` intervals all straddle a ReLU or
    /// max-pool switch. The central difference is meaningless there, so they
    /// are not compared.
    pub skipped: usize,
}

fn eval<F>(f: &F, x: &Tensor) -> Result<(f64, u64), TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = f(&mut g, xv)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::NonScalarLoss(g.shape(out).to_vec()));
    }
    Ok((g.scalar_f64(out), g.branch_signature()))
}

/// Central-difference check of `d f(x) / dx` over every element of `x`.
///
/// `f` must build a single-element output from its input var. The numeric
/// quotient is formed in `f64` from the actually representable perturbed
/// inputs.
pub fn gradcheck<F>(f: F, x: &Tensor, h: f32) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    gradcheck_indices(f, x, h, &all)
}

/// Like [`gradcheck`] but only probes up to `max_points` evenly strided
/// elements. Large parameter tensors are checked this way.
pub fn gradcheck_sampled<F>(f: F, x: &Tensor, h: f32, max_points: usize) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let n = x.numel();
    let stride = n.div_ceil(max_points.max(1)).max(1);
    // Odd offset so strided probes do not always land on the same channel.
    let start = (stride / 2) % n;
    let idx: Vec<usize> = (start..n).step_by(stride).collect();
    gradcheck_indices(f, x, h, &idx)
}

pub fn gradcheck_indices<F>(f: F, x: &Tensor, h: f32, indices: &[usize]) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let (f0, sig0) = eval(&f, x)?;
    if eval(&f, x)?.0.to_bits() != f0.to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    let mut g = Graph::new();
    let xv = g.param(x);
    let out = f(&mut g, xv)?;
    g.backward(out)?;
    let analytic = g.grad(xv).map(|s| s.to_vec()).unwrap_or_else(|| alloc::vec![0.0; x.numel()]);

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = x.clone();
    'probes: for &i in indices {
        let orig = x.data()[i];
        // halve the step up to twice if the interval straddles a kink
        for step in [h, h / 2.0, h / 4.0] {
            let plus = orig + step;
            let minus = orig - step;
            probe.data_mut()[i] = plus;
            let (fp, sp) = eval(&f, &probe)?;
            probe.data_mut()[i] = minus;
            let (fm, sm) = eval(&f, &probe)?;
            probe.data_mut()[i] = orig;
            if sp != sig0 || sm != sig0 {
                continue;
            }
            let numeric = (fp - fm) / (plus as f64 - minus as f64);
            let a = analytic[i] as f64;
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_index = i;
            }
            report.checked += 1;
            continue 'probes;
        }
        report.skipped += 1;
    }
    Ok(report)
}
