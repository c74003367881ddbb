//! Separable and mixable 1D depthwise inception network for the
//! three-channel physiological input (EDA, ECG, PPG).
//!
//! Each source is first processed in its own channel group. The grouped
//! output is then interleaved so that every new channel neighbourhood holds
//! features from all sources, and the remaining blocks run over the whole
//! channel set.
//!
//! Parameter count for `C` input channels, `g` groups, stem kernel `K`,
//! branch kernels `k_b` and outputs `o_b` (per group):
//!
//! ```text
//! stem           C·K + C
//! block(C_in,g)  Σ_b [C_in·k_b + C_in] + Σ_b [g·o_b·(C_in/g) + g·o_b]
//! head           C_last·D + D + D·classes + classes
//! ```
//!
//! The defaults give 47 089 parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::{BoundParams, ParamDecl};
use crate::tensor::{Graph, TensorError, Var};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionBranchSpec {
    pub kernel_size: usize,
    /// Output channels per group.
    pub out_channels: usize,
}

impl InceptionBranchSpec {
    pub const fn new(kernel_size: usize, out_channels: usize) -> Self {
        InceptionBranchSpec { kernel_size, out_channels }
    }
}

fn branches(kernels: [usize; 4], outs: [usize; 4]) -> Vec<InceptionBranchSpec> {
    kernels.iter().zip(outs).map(|(&k, o)| InceptionBranchSpec::new(k, o)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsNetConfig {
    pub in_channels: usize,
    pub input_length: usize,
    pub stem_kernel: usize,
    pub groups: usize,
    pub grouped_blocks: Vec<Vec<InceptionBranchSpec>>,
    pub mixed_blocks: Vec<Vec<InceptionBranchSpec>>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Default for PsNetConfig {
    fn default() -> Self {
        let k = [3, 5, 7, 11];
        PsNetConfig {
            in_channels: 3,
            input_length: 300,
            stem_kernel: 7,
            groups: 3,
            grouped_blocks: alloc::vec![branches(k, [4, 6, 8, 10]); 2],
            mixed_blocks: alloc::vec![branches(k, [12, 18, 24, 30]); 2],
            feature_dim: 256,
            num_classes: 3,
        }
    }
}

impl PsNetConfig {
    /// Smaller widths with the same topology.
    pub fn with_widths(mut self, grouped: [usize; 4], mixed: [usize; 4]) -> Self {
        let k = [3, 5, 7, 11];
        self.grouped_blocks = alloc::vec![branches(k, grouped); self.grouped_blocks.len()];
        self.mixed_blocks = alloc::vec![branches(k, mixed); self.mixed_blocks.len()];
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Config(format!("ps net: {}", msg)));
        if self.in_channels == 0 || self.input_length == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return bad("sizes must be positive".into());
        }
        if self.groups != self.in_channels {
            return bad(format!("{} groups for {} input sources", self.groups, self.in_channels));
        }
        if self.stem_kernel % 2 == 0 {
            return bad(format!("stem kernel {} is even", self.stem_kernel));
        }
        if self.grouped_blocks.is_empty() {
            return bad("at least one grouped block is required".into());
        }
        for block in self.grouped_blocks.iter().chain(&self.mixed_blocks) {
            validate_branches(block)?;
        }
        Ok(())
    }

    /// Input samples that can influence one position of the last block.
    pub fn receptive_field(&self) -> usize {
        let widest = |b: &Vec<InceptionBranchSpec>| b.iter().map(|s| s.kernel_size).max().unwrap_or(1);
        self.stem_kernel + self.grouped_blocks.iter().chain(&self.mixed_blocks).map(|b| widest(b) - 1).sum::<usize>()
    }
}

fn validate_branches(specs: &[InceptionBranchSpec]) -> Result<(), Error> {
    if specs.is_empty() {
        return Err(Error::Config("inception block without branches".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.kernel_size % 2 == 0 || s.out_channels == 0 {
            return Err(Error::Config(format!("invalid inception branch {:?}", s)));
        }
        if specs[..i].iter().any(|o| o.out_channels == s.out_channels) {
            return Err(Error::Config(format!(
                "inception branch widths must differ, {} repeats",
                s.out_channels
            )));
        }
    }
    Ok(())
}

/// Parallel branches of depthwise conv → grouped pointwise conv → ReLU.
///
/// The output is group-major: the channels of group `j` are the outputs of
/// every branch for that group, in branch order.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionBlock {
    pub prefix: String,
    pub in_channels: usize,
    pub groups: usize,
    pub branches: Vec<InceptionBranchSpec>,
}

impl InceptionBlock {
    pub fn new(prefix: &str, in_channels: usize, groups: usize, branches: &[InceptionBranchSpec]) -> Result<Self, Error> {
        validate_branches(branches)?;
        if groups == 0 || in_channels % groups != 0 {
            return Err(TensorError::invalid(
                "inception_block",
                format!("{} channels cannot be split into {} groups", in_channels, groups),
            )
            .into());
        }
        Ok(InceptionBlock {
            prefix: prefix.into(),
            in_channels,
            groups,
            branches: branches.to_vec(),
        })
    }

    pub fn per_group_out(&self) -> usize {
        self.branches.iter().map(|b| b.out_channels).sum()
    }

    pub fn out_channels(&self) -> usize {
        self.groups * self.per_group_out()
    }

    fn name(&self, branch: usize, leaf: &str) -> String {
        format!("{}.b{}.{}", self.prefix, branch, leaf)
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let c = self.in_channels;
        let cg = c / self.groups;
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let o = self.groups * b.out_channels;
            out.push(ParamDecl::he(self.name(i, "dw.w"), &[c, b.kernel_size], b.kernel_size));
            out.push(ParamDecl::zeros(self.name(i, "dw.b"), &[c]));
            out.push(ParamDecl::he(self.name(i, "pw.w"), &[o, cg, 1], cg));
            out.push(ParamDecl::zeros(self.name(i, "pw.b"), &[o]));
        }
        out
    }

    /// One branch on its own, `[C×L] -> [g·o_b × L]` (group-major).
    pub fn branch_forward(&self, g: &mut Graph, p: &mut BoundParams, x: Var, branch: usize) -> Result<Var, Error> {
        let w = p.get(g, &self.name(branch, "dw.w"))?;
        let b = p.get(g, &self.name(branch, "dw.b"))?;
        let y = g.conv1d_depthwise(x, w, Some(b))?;
        let w = p.get(g, &self.name(branch, "pw.w"))?;
        let b = p.get(g, &self.name(branch, "pw.b"))?;
        let y = g.conv1d(y, w, Some(b), self.groups)?;
        Ok(g.relu(y)?)
    }

    /// Row order taking branch-major concatenation to group-major.
    fn group_major_order(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.branches.len());
        let mut acc = 0;
        for b in &self.branches {
            offsets.push(acc);
            acc += self.groups * b.out_channels;
        }
        let mut order = Vec::with_capacity(acc);
        for j in 0..self.groups {
            for (b, &off) in self.branches.iter().zip(&offsets) {
                order.extend(off + j * b.out_channels..off + (j + 1) * b.out_channels);
            }
        }
        order
    }

    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, x: Var) -> Result<Var, Error> {
        match *g.shape(x) {
            [c, _] if c == self.in_channels => {}
            ref s => {
                return Err(TensorError::invalid(
                    "inception_block",
                    format!("expected {} channels, got shape {:?}", self.in_channels, s),
                )
                .into())
            }
        }
        let outs = (0..self.branches.len())
            .map(|i| self.branch_forward(g, p, x, i))
            .collect::<Result<Vec<_>, _>>()?;
        let cat = g.concat(&outs, 0)?;
        if self.groups == 1 {
            return Ok(cat);
        }
        Ok(g.gather_rows(cat, &self.group_major_order())?)
    }
}

/// Round-robin interleave of `channels` group-major channels: new channel `i`
/// is channel `i / groups` of group `i % groups`.
pub fn mix_order(channels: usize, groups: usize) -> Vec<usize> {
    let per = channels / groups;
    (0..channels).map(|i| (i % groups) * per + i / groups).collect()
}

pub struct PsOutput {
    pub features: Var,
    pub logits: Var,
    /// Activations of the last grouped block, before interleaving.
    pub pre_mix: Var,
    /// The interleaved channels fed to the whole-group blocks.
    pub post_mix: Var,
    /// Activations of the last block before pooling.
    pub trunk: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsNet {
    pub cfg: PsNetConfig,
    pub prefix: String,
    grouped: Vec<InceptionBlock>,
    mixed: Vec<InceptionBlock>,
}

impl PsNet {
    pub fn new(prefix: &str, cfg: PsNetConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let mut channels = cfg.in_channels;
        let mut grouped = Vec::new();
        for (i, b) in cfg.grouped_blocks.iter().enumerate() {
            let block = InceptionBlock::new(&format!("{}.grouped{}", prefix, i), channels, cfg.groups, b)?;
            channels = block.out_channels();
            grouped.push(block);
        }
        let mut mixed = Vec::new();
        for (i, b) in cfg.mixed_blocks.iter().enumerate() {
            let block = InceptionBlock::new(&format!("{}.mixed{}", prefix, i), channels, 1, b)?;
            channels = block.out_channels();
            mixed.push(block);
        }
        Ok(PsNet {
            cfg,
            prefix: prefix.into(),
            grouped,
            mixed,
        })
    }

    pub fn grouped_blocks(&self) -> &[InceptionBlock] {
        &self.grouped
    }

    pub fn mixed_blocks(&self) -> &[InceptionBlock] {
        &self.mixed
    }

    pub fn trunk_channels(&self) -> usize {
        self.mixed.last().unwrap_or_else(|| self.grouped.last().unwrap()).out_channels()
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{}", self.prefix, leaf)
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let c = &self.cfg;
        let mut out = alloc::vec![
            ParamDecl::he(self.name("stem.w"), &[c.in_channels, c.stem_kernel], c.stem_kernel),
            ParamDecl::zeros(self.name("stem.b"), &[c.in_channels]),
        ];
        for b in self.grouped.iter().chain(&self.mixed) {
            out.extend(b.decls());
        }
        let t = self.trunk_channels();
        out.push(ParamDecl::he(self.name("fc.w"), &[t, c.feature_dim], t));
        out.push(ParamDecl::zeros(self.name("fc.b"), &[c.feature_dim]));
        out.push(ParamDecl::he(self.name("head.w"), &[c.feature_dim, c.num_classes], c.feature_dim));
        out.push(ParamDecl::zeros(self.name("head.b"), &[c.num_classes]));
        out
    }

    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, x: Var) -> Result<PsOutput, Error> {
        let c = &self.cfg;
        if g.shape(x) != [c.in_channels, c.input_length] {
            return Err(TensorError::shape("ps_forward", g.shape(x), &[c.in_channels, c.input_length]).into());
        }
        let w = p.get(g, &self.name("stem.w"))?;
        let b = p.get(g, &self.name("stem.b"))?;
        let y = g.conv1d_depthwise(x, w, Some(b))?;
        let mut y = g.relu(y)?;
        for block in &self.grouped {
            y = block.forward(g, p, y)?;
        }
        let pre_mix = y;
        let channels = g.shape(pre_mix)[0];
        let post_mix = g.gather_rows(pre_mix, &mix_order(channels, c.groups))?;
        y = post_mix;
        for block in &self.mixed {
            y = block.forward(g, p, y)?;
        }
        let trunk = y;
        let pooled = g.mean_last(trunk)?;
        let w = p.get(g, &self.name("fc.w"))?;
        let b = p.get(g, &self.name("fc.b"))?;
        let features = g.linear(pooled, w, Some(b))?;
        let features = g.relu(features)?;
        let w = p.get(g, &self.name("head.w"))?;
        let b = p.get(g, &self.name("head.b"))?;
        let logits = g.linear(features, w, Some(b))?;
        Ok(PsOutput {
            features,
            logits,
            pre_mix,
            post_mix,
            trunk,
        })
    }
}
