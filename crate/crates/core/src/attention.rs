//! Guided multi-head attention and the concatenation baseline.
//!
//! A guide vector supplies the queries and the main vector supplies both
//! keys and values. Each vector is projected and reshaped into `T` tokens of
//! width `d_model` so that attention has more than one key to choose from.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::{BoundParams, ParamDecl};
use crate::tensor::{Graph, TensorError, Var};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub tokens: usize,
    pub d_model: usize,
    pub heads: usize,
    pub residual: bool,
    pub layer_norm: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            tokens: 8,
            d_model: 32,
            heads: 4,
            residual: false,
            layer_norm: false,
        }
    }
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    /// Width of the flattened output, `T · d_model`.
    pub fn out_dim(&self) -> usize {
        self.tokens * self.d_model
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.tokens == 0 || self.d_model == 0 || self.heads == 0 {
            return Err(Error::Config(format!("attention sizes must be positive: {:?}", self)));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "attention d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// `softmax(Q Kᵀ / √d) V` for `Q[T_q×d]`, `K[T_k×d]`, `V[T_k×d_v]`. Returns
/// the output and the attention weights `[T_q×T_k]`.
pub fn sdp_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var), TensorError> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(TensorError::invalid("sdp_attention", "Q, K and V must be matrices"));
    }
    if qs[1] != ks[1] {
        return Err(TensorError::shape("sdp_attention", &qs, &ks));
    }
    if ks[0] != vs[0] {
        return Err(TensorError::shape("sdp_attention", &ks, &vs));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / libm::sqrtf(qs[1] as f32))?;
    let weights = g.softmax(scores)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

pub struct AttentionOutput {
    /// Flattened `[T · d_model]` output.
    pub out: Var,
    /// One `[T×T]` weight matrix per head.
    pub weights: Vec<Var>,
}

/// Parameters live under `prefix`:
/// `q_in.{w,b}` `[guide_dim × T·d_model]`, `kv_in.{w,b}` `[main_dim × T·d_model]`,
/// `head{i}.{wq,wk,wv}` `[d_model × d]` and `w0` `[h·d × d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedAttention {
    pub cfg: AttentionConfig,
    pub prefix: String,
    pub main_dim: usize,
    pub guide_dim: usize,
}

impl GuidedAttention {
    pub fn new(prefix: &str, cfg: AttentionConfig, main_dim: usize, guide_dim: usize) -> Result<Self, Error> {
        cfg.validate()?;
        if main_dim == 0 || guide_dim == 0 {
            return Err(Error::Config(format!("{}: feature widths must be positive", prefix)));
        }
        if cfg.residual && main_dim != cfg.out_dim() {
            return Err(Error::Config(format!(
                "{}: residual needs main width {} to equal T·d_model {}",
                prefix,
                main_dim,
                cfg.out_dim()
            )));
        }
        Ok(GuidedAttention {
            cfg,
            prefix: prefix.into(),
            main_dim,
            guide_dim,
        })
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{}", self.prefix, leaf)
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.out_dim()
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let c = &self.cfg;
        let (td, d) = (c.out_dim(), c.head_dim());
        let mut out = alloc::vec![
            ParamDecl::he(self.name("q_in.w"), &[self.guide_dim, td], self.guide_dim),
            ParamDecl::zeros(self.name("q_in.b"), &[td]),
            ParamDecl::he(self.name("kv_in.w"), &[self.main_dim, td], self.main_dim),
            ParamDecl::zeros(self.name("kv_in.b"), &[td]),
        ];
        for i in 0..c.heads {
            for m in ["wq", "wk", "wv"] {
                out.push(ParamDecl::he(self.name(&format!("head{}.{}", i, m)), &[c.d_model, d], c.d_model));
            }
        }
        out.push(ParamDecl::he(self.name("w0"), &[c.heads * d, c.d_model], c.heads * d));
        out
    }

    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, main: Var, guide: Var) -> Result<AttentionOutput, Error> {
        let c = &self.cfg;
        if g.shape(main) != [self.main_dim] {
            return Err(TensorError::shape("guided_attention", g.shape(main), &[self.main_dim]).into());
        }
        if g.shape(guide) != [self.guide_dim] {
            return Err(TensorError::shape("guided_attention", g.shape(guide), &[self.guide_dim]).into());
        }
        let (w, b) = (p.get(g, &self.name("q_in.w"))?, p.get(g, &self.name("q_in.b"))?);
        let q_src = g.linear(guide, w, Some(b))?;
        let q_src = g.reshape(q_src, &[c.tokens, c.d_model])?;
        let (w, b) = (p.get(g, &self.name("kv_in.w"))?, p.get(g, &self.name("kv_in.b"))?);
        let kv_src = g.linear(main, w, Some(b))?;
        let kv_src = g.reshape(kv_src, &[c.tokens, c.d_model])?;

        let mut heads = Vec::with_capacity(c.heads);
        let mut weights = Vec::with_capacity(c.heads);
        for i in 0..c.heads {
            let wq = p.get(g, &self.name(&format!("head{}.wq", i)))?;
            let wk = p.get(g, &self.name(&format!("head{}.wk", i)))?;
            let wv = p.get(g, &self.name(&format!("head{}.wv", i)))?;
            let q = g.matmul(q_src, wq)?;
            let k = g.matmul(kv_src, wk)?;
            let v = g.matmul(kv_src, wv)?;
            let (o, a) = sdp_attention(g, q, k, v)?;
            heads.push(o);
            weights.push(a);
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let w0 = p.get(g, &self.name("w0"))?;
        let mut out = g.matmul(joined, w0)?;
        if c.residual {
            let skip = g.reshape(main, &[c.tokens, c.d_model])?;
            out = g.add(out, skip)?;
        }
        if c.layer_norm {
            out = g.layer_norm(out)?;
        }
        let out = g.reshape(out, &[c.out_dim()])?;
        Ok(AttentionOutput { out, weights })
    }
}

/// `[main ; guide]` followed by one fully-connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatFusion {
    pub prefix: String,
    pub main_dim: usize,
    pub guide_dim: usize,
    pub out_dim: usize,
}

impl ConcatFusion {
    pub fn new(prefix: &str, main_dim: usize, guide_dim: usize, out_dim: usize) -> Result<Self, Error> {
        if main_dim == 0 || guide_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!("{}: feature widths must be positive", prefix)));
        }
        Ok(ConcatFusion {
            prefix: prefix.into(),
            main_dim,
            guide_dim,
            out_dim,
        })
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let fan_in = self.main_dim + self.guide_dim;
        alloc::vec![
            ParamDecl::he(format!("{}.w", self.prefix), &[fan_in, self.out_dim], fan_in),
            ParamDecl::zeros(format!("{}.b", self.prefix), &[self.out_dim]),
        ]
    }

    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, main: Var, guide: Var) -> Result<Var, Error> {
        if g.shape(main) != [self.main_dim] || g.shape(guide) != [self.guide_dim] {
            return Err(TensorError::shape("concat_fusion", g.shape(main), g.shape(guide)).into());
        }
        let x = g.concat(&[main, guide], 0)?;
        let w = p.get(g, &format!("{}.w", self.prefix))?;
        let b = p.get(g, &format!("{}.b", self.prefix))?;
        Ok(g.linear(x, w, Some(b))?)
    }
}
