//! Micro-expression branch: per-frame colour and depth encoders, depth
//! guidance of each colour feature, and temporal fusion into one vector.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{AttentionConfig, ConcatFusion, GuidedAttention};
use crate::backbone::{Backbone, BackboneConfig};
use crate::data::FrameStack;
use crate::fusion::{fuse_frames, gaussian_weights, uniform_weights, FusionWeights};
use crate::params::{BoundParams, ParamDecl};
use crate::tensor::{Graph, TensorError, Var};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthGuidance {
    Guided,
    Concat,
    /// Depth is ignored; the colour feature passes through.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalWeighting {
    Gaussian,
    Uniform,
}

impl TemporalWeighting {
    pub fn weights(self, frames: usize) -> Result<FusionWeights, TensorError> {
        match self {
            TemporalWeighting::Gaussian => gaussian_weights(frames),
            TemporalWeighting::Uniform => uniform_weights(frames),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeConfig {
    /// Colour encoder; the depth encoder uses the same layout on one channel.
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub guidance: DepthGuidance,
    pub weighting: TemporalWeighting,
}

impl Default for MeConfig {
    fn default() -> Self {
        MeConfig {
            backbone: BackboneConfig::default(),
            attention: AttentionConfig::default(),
            guidance: DepthGuidance::Guided,
            weighting: TemporalWeighting::Gaussian,
        }
    }
}

pub struct MeOutput {
    pub feature: Var,
    pub colour: Vec<Var>,
    /// Empty when depth is not used.
    pub depth: Vec<Var>,
    /// Per-frame features entering temporal fusion, stacked `[F×D]`.
    pub per_frame: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeBranch {
    pub cfg: MeConfig,
    colour: Backbone,
    depth: Backbone,
    guided: GuidedAttention,
    concat: ConcatFusion,
}

impl MeBranch {
    pub fn new(cfg: MeConfig) -> Result<Self, Error> {
        let colour = Backbone::new("me.colour", cfg.backbone.clone().with_in_channels(3))?;
        let depth = Backbone::new("me.depth", cfg.backbone.clone().with_in_channels(1))?;
        let d = cfg.backbone.feature_dim;
        if cfg.attention.out_dim() != d {
            return Err(Error::Config(format!(
                "depth attention emits {} values but the frame feature has {}",
                cfg.attention.out_dim(),
                d
            )));
        }
        let guided = GuidedAttention::new("me.guide", cfg.attention, d, d)?;
        let concat = ConcatFusion::new("me.concat", d, d, d)?;
        Ok(MeBranch {
            cfg,
            colour,
            depth,
            guided,
            concat,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.backbone.feature_dim
    }

    /// Parameters needed for the configured guidance mode.
    pub fn decls(&self) -> Vec<ParamDecl> {
        self.decls_for(self.cfg.guidance)
    }

    pub fn decls_for(&self, guidance: DepthGuidance) -> Vec<ParamDecl> {
        let mut out = self.colour.decls();
        match guidance {
            DepthGuidance::Identity => {}
            DepthGuidance::Guided => {
                out.extend(self.depth.decls());
                out.extend(self.guided.decls());
            }
            DepthGuidance::Concat => {
                out.extend(self.depth.decls());
                out.extend(self.concat.decls());
            }
        }
        out
    }

    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, frames: &FrameStack) -> Result<MeOutput, Error> {
        self.forward_with(g, p, frames, self.cfg.guidance)
    }

    /// The branch with depth guidance bypassed.
    pub fn forward_colour_only(&self, g: &mut Graph, p: &mut BoundParams, frames: &FrameStack) -> Result<MeOutput, Error> {
        self.forward_with(g, p, frames, DepthGuidance::Identity)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph,
        p: &mut BoundParams,
        frames: &FrameStack,
        guidance: DepthGuidance,
    ) -> Result<MeOutput, Error> {
        let n = frames.frames();
        if n == 0 {
            return Err(Error::Data("clip has no frames".into()));
        }
        let mut colour = Vec::with_capacity(n);
        let mut depth = Vec::new();
        let mut fused = Vec::with_capacity(n);
        for f in 0..n {
            let cx = g.constant(frames.colour_frame(f));
            let c = self.colour.forward(g, p, cx)?;
            colour.push(c);
            let out = match guidance {
                DepthGuidance::Identity => c,
                DepthGuidance::Guided | DepthGuidance::Concat => {
                    let dx = g.constant(frames.depth_frame(f));
                    let d = self.depth.forward(g, p, dx)?;
                    depth.push(d);
                    if guidance == DepthGuidance::Guided {
                        self.guided.forward(g, p, c, d)?.out
                    } else {
                        self.concat.forward(g, p, c, d)?
                    }
                }
            };
            fused.push(out);
        }
        let per_frame = g.stack(&fused)?;
        let w = self.cfg.weighting.weights(n)?;
        let feature = fuse_frames(g, per_frame, &w)?;
        Ok(MeOutput {
            feature,
            colour,
            depth,
            per_frame,
        })
    }
}
