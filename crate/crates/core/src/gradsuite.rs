//! Finite-difference checks of every op and every composite module.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{sdp_attention, AttentionConfig, GuidedAttention};
use crate::backbone::{Backbone, BackboneConfig, StageSpec};
use crate::data::{FrameStack, PreparedSample};
use crate::me::{MeBranch, MeConfig};
use crate::model::{loss, Arm, Model, ModelConfig};
use crate::params::{BoundParams, ParameterStore};
use crate::psnet::{InceptionBlock, PsNet, PsNetConfig};
use crate::tensor::{gradcheck_sampled, GradCheck, Graph, Tensor, TensorError, Var};
use crate::Error;

pub const OP_TOLERANCE: f64 = 1e-3;
pub const MODULE_TOLERANCE: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCase {
    /// Within tolerance, with at most a quarter of the probes skipped at
    /// kinks.
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.checked > 0 && self.skipped * 4 <= self.checked + self.skipped
    }
}

const STEP: f32 = 1e-3;
const MAX_POINTS: usize = 48;

fn as_tensor_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "gradsuite",
            msg: format!("{}", other),
        },
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("valid shape")
}

/// Squared-sum readout so that every output element carries gradient.
fn energy(g: &mut Graph, y: Var) -> Result<Var, TensorError> {
    let y2 = g.mul(y, y)?;
    g.sum(y2)
}

/// Weighted-sum readout with fixed pseudo-random weights.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn case(name: &str, tolerance: f64, r: Result<GradCheck, TensorError>) -> Result<GradCase, Error> {
    let r = r?;
    Ok(GradCase {
        name: name.into(),
        max_rel_err: r.max_rel_err,
        tolerance,
        checked: r.checked,
        skipped: r.skipped,
    })
}

fn check<F>(f: F, x: &Tensor) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    gradcheck_sampled(f, x, STEP, MAX_POINTS)
}

fn op_cases() -> Result<Vec<GradCase>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[4, 5], -1.0, 1.0);
    let bias = random(&mut rng, &[5], -1.0, 1.0);
    let v = random(&mut rng, &[2, 6], -2.0, 2.0);
    let sig = random(&mut rng, &[6, 20], -1.0, 1.0);
    let w1 = random(&mut rng, &[6, 2, 5], -0.5, 0.5);
    let wd = random(&mut rng, &[6, 3], -0.5, 0.5);
    let img = random(&mut rng, &[2, 6, 6], -1.0, 1.0);
    let w2 = random(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let logits = random(&mut rng, &[3, 4], -2.0, 2.0);
    let tol = OP_TOLERANCE;

    let mut out = Vec::new();
    out.push(case(
        "matmul",
        tol,
        check(
            |g, x| {
                let y = g.constant(b.clone());
                let m = g.matmul(x, y)?;
                energy(g, m)
            },
            &a,
        ),
    )?);
    out.push(case(
        "matmul.rhs",
        tol,
        check(
            |g, y| {
                let x = g.constant(a.clone());
                let m = g.matmul(x, y)?;
                project(g, m, 2)
            },
            &b,
        ),
    )?);
    out.push(case(
        "transpose",
        tol,
        check(
            |g, x| {
                let t = g.transpose(x)?;
                project(g, t, 3)
            },
            &a,
        ),
    )?);
    out.push(case(
        "linear",
        tol,
        check(
            |g, w| {
                let x = g.constant(a.clone());
                let bb = g.constant(bias.clone());
                let y = g.linear(x, w, Some(bb))?;
                energy(g, y)
            },
            &b,
        ),
    )?);
    out.push(case(
        "add_mul_scale",
        tol,
        check(
            |g, x| {
                let s = g.scale(x, 1.7)?;
                let m = g.mul(x, s)?;
                let y = g.add(m, x)?;
                project(g, y, 4)
            },
            &v,
        ),
    )?);
    out.push(case(
        "relu",
        tol,
        check(
            |g, x| {
                let y = g.relu(x)?;
                project(g, y, 5)
            },
            &v,
        ),
    )?);
    out.push(case(
        "softmax",
        tol,
        check(
            |g, x| {
                let y = g.softmax(x)?;
                project(g, y, 6)
            },
            &v,
        ),
    )?);
    out.push(case(
        "layer_norm",
        tol,
        check(
            |g, x| {
                let y = g.layer_norm(x)?;
                project(g, y, 7)
            },
            &v,
        ),
    )?);
    out.push(case("cross_entropy", tol, check(|g, x| g.cross_entropy(x, &[0, 3, 1]), &logits))?);
    out.push(case(
        "mean_last",
        tol,
        check(
            |g, x| {
                let y = g.mean_last(x)?;
                energy(g, y)
            },
            &v,
        ),
    )?);
    out.push(case(
        "reshape_gather_concat",
        tol,
        check(
            |g, x| {
                let r = g.reshape(x, &[3, 4])?;
                let s = g.gather_rows(r, &[2, 0, 2])?;
                let c = g.concat(&[r, s], 0)?;
                let d = g.concat(&[c, c], 1)?;
                project(g, d, 8)
            },
            &v,
        ),
    )?);
    out.push(case("sum", tol, check(|g, x| g.sum(x), &v))?);
    out.push(case(
        "conv1d.x",
        tol,
        check(
            |g, x| {
                let w = g.constant(w1.clone());
                let y = g.conv1d(x, w, None, 3)?;
                energy(g, y)
            },
            &sig,
        ),
    )?);
    out.push(case(
        "conv1d.w",
        tol,
        check(
            |g, w| {
                let x = g.constant(sig.clone());
                let y = g.conv1d(x, w, None, 3)?;
                energy(g, y)
            },
            &w1,
        ),
    )?);
    out.push(case(
        "conv1d_depthwise.x",
        tol,
        check(
            |g, x| {
                let w = g.constant(wd.clone());
                let y = g.conv1d_depthwise(x, w, None)?;
                energy(g, y)
            },
            &sig,
        ),
    )?);
    out.push(case(
        "conv1d_depthwise.w",
        tol,
        check(
            |g, w| {
                let x = g.constant(sig.clone());
                let y = g.conv1d_depthwise(x, w, None)?;
                energy(g, y)
            },
            &wd,
        ),
    )?);
    out.push(case(
        "conv2d.x",
        tol,
        check(
            |g, x| {
                let w = g.constant(w2.clone());
                let y = g.conv2d(x, w, None)?;
                energy(g, y)
            },
            &img,
        ),
    )?);
    out.push(case(
        "conv2d.w",
        tol,
        check(
            |g, w| {
                let x = g.constant(img.clone());
                let y = g.conv2d(x, w, None)?;
                energy(g, y)
            },
            &w2,
        ),
    )?);
    out.push(case(
        "max_pool2d",
        tol,
        check(
            |g, x| {
                let y = g.max_pool2d(x, 2)?;
                project(g, y, 9)
            },
            &img,
        ),
    )?);
    out.push(case(
        "avg_pool2d",
        tol,
        check(
            |g, x| {
                let y = g.avg_pool2d(x, 3)?;
                project(g, y, 10)
            },
            &img,
        ),
    )?);
    Ok(out)
}

fn small_attention() -> AttentionConfig {
    AttentionConfig {
        tokens: 3,
        d_model: 4,
        heads: 2,
        ..Default::default()
    }
}

fn small_ps() -> PsNetConfig {
    PsNetConfig {
        input_length: 40,
        feature_dim: 8,
        ..PsNetConfig::default().with_widths([1, 2, 3, 4], [2, 3, 4, 5])
    }
}

fn small_backbone() -> BackboneConfig {
    BackboneConfig {
        in_channels: 3,
        input_size: 16,
        input_pool: 2,
        stages: vec![
            StageSpec { channels: 3, kernel: 3, pool: 2 },
            StageSpec { channels: 4, kernel: 3, pool: 2 },
        ],
        feature_dim: 12,
    }
}

/// Full-model config used by the composite checks: 16×16 frames, two frames.
pub fn reduced_model_config() -> ModelConfig {
    ModelConfig {
        backbone: small_backbone(),
        depth_attention: small_attention(),
        ps: small_ps(),
        fusion_attention: small_attention(),
        arm: Arm::ColourDepthPs,
        ..Default::default()
    }
}

fn sample(rng: &mut ChaCha8Rng, frames: usize, size: usize, ps_len: usize) -> PreparedSample {
    PreparedSample {
        sample_id: "g".into(),
        subject_id: "g".into(),
        label: 1,
        frames: FrameStack::new(random(rng, &[frames, 3, size, size], 0.0, 1.0), random(rng, &[frames, 1, size, size], 0.0, 1.0))
            .expect("valid frames"),
        ps: random(rng, &[3, ps_len], -1.0, 1.0),
    }
}

/// Checks `f` with respect to the stored parameter `name`.
fn param_check<F>(store: &ParameterStore, name: &str, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, &mut BoundParams) -> Result<Var, Error>,
{
    let t = store.get(name).ok_or_else(|| as_tensor_err(Error::MissingParam(name.into())))?.clone();
    check(
        |g, w| {
            let mut p = BoundParams::new(store).bind(name, w);
            f(g, &mut p).map_err(as_tensor_err)
        },
        &t,
    )
}

fn module_cases() -> Result<Vec<GradCase>, Error> {
    let tol = MODULE_TOLERANCE;
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // Q, K and V are slices of one input
    let qkv = random(&mut rng, &[3, 4, 4], -1.0, 1.0);
    out.push(case(
        "sdp_attention",
        tol,
        check(
            |g, x| {
                let mut m = [x; 3];
                for (i, slot) in m.iter_mut().enumerate() {
                    let r = g.gather_rows(x, &[i])?;
                    *slot = g.reshape(r, &[4, 4])?;
                }
                let (o, _) = sdp_attention(g, m[0], m[1], m[2])?;
                energy(g, o)
            },
            &qkv,
        ),
    )?);

    let att = GuidedAttention::new("att", small_attention(), 10, 7)?;
    let store = ParameterStore::build(&att.decls(), 12)?;
    let main = random(&mut rng, &[10], -1.0, 1.0);
    let guide = random(&mut rng, &[7], -1.0, 1.0);
    out.push(case(
        "guided_multihead.main",
        tol,
        check(
            |g, x| {
                let mut p = BoundParams::new(&store);
                let gd = g.constant(guide.clone());
                let o = att.forward(g, &mut p, x, gd).map_err(as_tensor_err)?;
                energy(g, o.out)
            },
            &main,
        ),
    )?);
    for name in ["att.q_in.w", "att.head0.wq", "att.head1.wv", "att.w0"] {
        let r = param_check(&store, name, |g, p| {
            let (mv, gd) = (g.constant(main.clone()), g.constant(guide.clone()));
            let o = att.forward(g, p, mv, gd)?;
            Ok(energy(g, o.out)?)
        });
        out.push(case(&format!("guided_multihead.{}", &name[4..]), tol, r)?);
    }

    let block = InceptionBlock::new("blk", 6, 3, &small_ps().grouped_blocks[0])?;
    let bstore = ParameterStore::build(&block.decls(), 13)?;
    let bx = random(&mut rng, &[6, 16], -1.0, 1.0);
    out.push(case(
        "inception_block",
        tol,
        check(
            |g, x| {
                let mut p = BoundParams::new(&bstore);
                let y = block.forward(g, &mut p, x).map_err(as_tensor_err)?;
                project(g, y, 14)
            },
            &bx,
        ),
    )?);

    let net = PsNet::new("ps", small_ps())?;
    let pstore = ParameterStore::build(&net.decls(), 15)?;
    let px = random(&mut rng, &[3, 40], -1.0, 1.0);
    out.push(case(
        "ps_net.input",
        tol,
        check(
            |g, x| {
                let mut p = BoundParams::new(&pstore);
                let o = net.forward(g, &mut p, x).map_err(as_tensor_err)?;
                g.cross_entropy(o.logits, &[2])
            },
            &px,
        ),
    )?);
    for name in ["ps.stem.w", "ps.grouped0.b3.dw.w", "ps.mixed1.b1.pw.w", "ps.fc.w"] {
        let r = param_check(&pstore, name, |g, p| {
            let x = g.constant(px.clone());
            let o = net.forward(g, p, x)?;
            Ok(g.cross_entropy(o.logits, &[2])?)
        });
        out.push(case(&format!("ps_net.{}", &name[3..]), tol, r)?);
    }

    let bb = Backbone::new("bb", small_backbone())?;
    let bbstore = ParameterStore::build(&bb.decls(), 16)?;
    let frame = random(&mut rng, &[3, 16, 16], 0.0, 1.0);
    out.push(case(
        "frame_features.input",
        tol,
        check(
            |g, x| {
                let mut p = BoundParams::new(&bbstore);
                let y = bb.forward(g, &mut p, x).map_err(as_tensor_err)?;
                project(g, y, 17)
            },
            &frame,
        ),
    )?);

    let me = MeBranch::new(MeConfig {
        backbone: small_backbone(),
        attention: small_attention(),
        ..Default::default()
    })?;
    let mstore = ParameterStore::build(&me.decls(), 18)?;
    let clip = sample(&mut rng, 2, 16, 40);
    for name in ["me.colour.conv0.w", "me.depth.conv1.w", "me.guide.kv_in.w", "me.guide.head1.wk"] {
        let r = param_check(&mstore, name, |g, p| {
            let o = me.forward(g, p, &clip.frames)?;
            Ok(project(g, o.feature, 19)?)
        });
        out.push(case(&format!("me_forward.{}", &name[3..]), tol, r)?);
    }
    Ok(out)
}

fn model_cases() -> Result<Vec<GradCase>, Error> {
    let model = Model::new(reduced_model_config())?;
    let store = model.init_params(21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = sample(&mut rng, 2, 16, 40);
    let mut out = Vec::new();
    for name in [
        "head.w",
        "fusion.guide.w0",
        "fusion.guide.q_in.w",
        "ps.grouped1.b0.pw.w",
        "me.guide.head0.wv",
        "me.colour.conv1.w",
        "me.depth.fc.w",
    ] {
        let r = param_check(&store, name, |g, p| {
            let o = model.forward(g, p, &s)?;
            loss(g, o.logits_mm, o.logits_ps, s.label)
        });
        out.push(case(&format!("full_model.{}", name), MODULE_TOLERANCE, r)?);
    }
    Ok(out)
}

/// Runs every check. Op checks use [`OP_TOLERANCE`], module and full-model
/// checks [`MODULE_TOLERANCE`].
pub fn run_all() -> Result<Vec<GradCase>, Error> {
    let mut all = op_cases()?;
    all.extend(module_cases()?);
    all.extend(model_cases()?);
    Ok(all)
}
