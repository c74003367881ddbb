//! Full multimodal model, composite loss and the training loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, ConcatFusion, GuidedAttention};
use crate::backbone::BackboneConfig;
use crate::data::PreparedSample;
use crate::me::{DepthGuidance, MeBranch, MeConfig, MeOutput, TemporalWeighting};
use crate::optim::{Adam, AdamConfig};
use crate::params::{BoundParams, ParamDecl, ParameterStore};
use crate::psnet::{PsNet, PsNetConfig, PsOutput};
use crate::tensor::{Graph, Var};
use crate::Error;

/// Modality combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Colour,
    ColourDepth,
    ColourDepthPs,
    ColourPs,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Colour, Arm::ColourDepth, Arm::ColourDepthPs, Arm::ColourPs];

    pub fn uses_depth(self) -> bool {
        matches!(self, Arm::ColourDepth | Arm::ColourDepthPs)
    }

    pub fn uses_ps(self) -> bool {
        matches!(self, Arm::ColourPs | Arm::ColourDepthPs)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Colour => "colour",
            Arm::ColourDepth => "colour+depth",
            Arm::ColourDepthPs => "colour+depth+ps",
            Arm::ColourPs => "colour+ps",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// How a guiding modality is merged into the main one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FusionMechanism {
    Guided,
    Concat,
}

impl FusionMechanism {
    pub fn name(self) -> &'static str {
        match self {
            FusionMechanism::Guided => "guided",
            FusionMechanism::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "guided" => Some(FusionMechanism::Guided),
            "concat" => Some(FusionMechanism::Concat),
            _ => None,
        }
    }
}

impl TemporalWeighting {
    pub fn name(self) -> &'static str {
        match self {
            TemporalWeighting::Gaussian => "gaussian",
            TemporalWeighting::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(TemporalWeighting::Gaussian),
            "uniform" => Some(TemporalWeighting::Uniform),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Depth guidance of each frame.
    pub depth_attention: AttentionConfig,
    pub ps: PsNetConfig,
    /// Physiological guidance of the clip feature.
    pub fusion_attention: AttentionConfig,
    pub arm: Arm,
    pub fusion: FusionMechanism,
    pub weighting: TemporalWeighting,
    pub num_classes: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            depth_attention: AttentionConfig::default(),
            ps: PsNetConfig::default(),
            fusion_attention: AttentionConfig::default(),
            arm: Arm::ColourDepthPs,
            fusion: FusionMechanism::Guided,
            weighting: TemporalWeighting::Gaussian,
            num_classes: 3,
            adam: AdamConfig::default(),
            epochs: 100,
            batch_size: 8,
            seed: 0,
        }
    }
}

pub struct ForwardOutput {
    pub logits_mm: Var,
    pub logits_ps: Option<Var>,
    pub me: MeOutput,
    pub ps: Option<PsOutput>,
    /// Input to the multimodal head.
    pub fused: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    me: MeBranch,
    ps: Option<PsNet>,
    guided: Option<GuidedAttention>,
    concat: Option<ConcatFusion>,
    head_in: usize,
}

impl Model {
    /// The physiological head is sized to `cfg.num_classes`.
    pub fn new(cfg: ModelConfig) -> Result<Self, Error> {
        if cfg.num_classes < 2 {
            return Err(Error::Config(format!("{} classes, need at least 2", cfg.num_classes)));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let guidance = match (cfg.arm.uses_depth(), cfg.fusion) {
            (false, _) => DepthGuidance::Identity,
            (true, FusionMechanism::Guided) => DepthGuidance::Guided,
            (true, FusionMechanism::Concat) => DepthGuidance::Concat,
        };
        let me = MeBranch::new(MeConfig {
            backbone: cfg.backbone.clone(),
            attention: cfg.depth_attention,
            guidance,
            weighting: cfg.weighting,
        })?;
        let d_me = me.out_dim();
        let (mut ps, mut guided, mut concat, mut head_in) = (None, None, None, d_me);
        if cfg.arm.uses_ps() {
            let ps_cfg = PsNetConfig {
                num_classes: cfg.num_classes,
                ..cfg.ps.clone()
            };
            let net = PsNet::new("ps", ps_cfg)?;
            let d_ps = net.cfg.feature_dim;
            match cfg.fusion {
                FusionMechanism::Guided => {
                    let a = GuidedAttention::new("fusion.guide", cfg.fusion_attention, d_me, d_ps)?;
                    head_in = a.out_dim();
                    guided = Some(a);
                }
                FusionMechanism::Concat => {
                    concat = Some(ConcatFusion::new("fusion.concat", d_me, d_ps, d_me)?);
                }
            }
            ps = Some(net);
        }
        Ok(Model {
            cfg,
            me,
            ps,
            guided,
            concat,
            head_in,
        })
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let mut out = self.me.decls();
        if let Some(ps) = &self.ps {
            out.extend(ps.decls());
        }
        if let Some(a) = &self.guided {
            out.extend(a.decls());
        }
        if let Some(c) = &self.concat {
            out.extend(c.decls());
        }
        out.push(ParamDecl::he("head.w", &[self.head_in, self.cfg.num_classes], self.head_in));
        out.push(ParamDecl::zeros("head.b", &[self.cfg.num_classes]));
        out
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore, Error> {
        ParameterStore::build(&self.decls(), seed)
    }

    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, s: &PreparedSample) -> Result<ForwardOutput, Error> {
        let me = self.me.forward(g, p, &s.frames)?;
        let (fused, ps) = match &self.ps {
            None => (me.feature, None),
            Some(net) => {
                let x = g.constant(s.ps.clone());
                let out = net.forward(g, p, x)?;
                let fused = match (&self.guided, &self.concat) {
                    (Some(a), _) => a.forward(g, p, me.feature, out.features)?.out,
                    (None, Some(c)) => c.forward(g, p, me.feature, out.features)?,
                    (None, None) => unreachable!("ps arms always carry a fusion module"),
                };
                (fused, Some(out))
            }
        };
        let w = p.get(g, "head.w")?;
        let b = p.get(g, "head.b")?;
        let logits_mm = g.linear(fused, w, Some(b))?;
        Ok(ForwardOutput {
            logits_mm,
            logits_ps: ps.as_ref().map(|o| o.logits),
            me,
            ps,
            fused,
        })
    }
}

/// `(CE(ps) + CE(mm)) / 2`, or `CE(mm)` when there is no physiological head.
pub fn loss(g: &mut Graph, logits_mm: Var, logits_ps: Option<Var>, target: usize) -> Result<Var, Error> {
    let mm = g.cross_entropy(logits_mm, &[target])?;
    Ok(match logits_ps {
        None => mm,
        Some(l) => {
            let ps = g.cross_entropy(l, &[target])?;
            let both = g.add(ps, mm)?;
            g.scale(both, 0.5)?
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterStore,
    pub adam: Adam,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &Model) -> Result<Self, Error> {
        let seed = model.cfg.seed;
        Ok(TrainState {
            params: model.init_params(seed)?,
            adam: Adam::new(model.cfg.adam),
            epoch: 0,
            // separate stream from initialisation
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed),
        })
    }
}

/// Loss of one sample under the current parameters.
pub fn sample_loss(model: &Model, params: &ParameterStore, s: &PreparedSample) -> Result<f64, Error> {
    let mut g = Graph::new();
    let mut p = BoundParams::new(params);
    let out = model.forward(&mut g, &mut p, s)?;
    let l = loss(&mut g, out.logits_mm, out.logits_ps, s.label)?;
    Ok(g.scalar_f64(l))
}

/// One pass over `samples` in a seeded shuffled order. Returns the mean loss.
pub fn train_epoch(model: &Model, state: &mut TrainState, samples: &[&PreparedSample]) -> Result<f64, Error> {
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut state.rng);
    let mut total = 0.0;
    for (step, batch) in order.chunks(model.cfg.batch_size).enumerate() {
        let scale = 1.0 / batch.len() as f32;
        let mut grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        for &i in batch {
            let s = samples[i];
            let mut g = Graph::new();
            let mut p = BoundParams::new(&state.params);
            let out = model.forward(&mut g, &mut p, s)?;
            let l = loss(&mut g, out.logits_mm, out.logits_ps, s.label)?;
            let value = g.scalar_f64(l);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: state.epoch,
                    step,
                });
            }
            total += value;
            g.backward(l)?;
            for (name, v) in p.bound() {
                if let Some(gr) = g.grad(v) {
                    let acc = grads.entry(name.into()).or_insert_with(|| alloc::vec![0.0; gr.len()]);
                    acc.iter_mut().zip(gr).for_each(|(a, &x)| *a += x * scale);
                }
            }
        }
        state.adam.step(&mut state.params, &grads)?;
    }
    state.epoch += 1;
    Ok(total / samples.len() as f64)
}

/// Runs `cfg.epochs` epochs and returns the per-epoch mean loss.
pub fn train(model: &Model, state: &mut TrainState, samples: &[&PreparedSample]) -> Result<Vec<f64>, Error> {
    (0..model.cfg.epochs).map(|_| train_epoch(model, state, samples)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Softmax in `f64` with the lowest index winning ties.
pub fn prediction_from_logits(logits: &[f32]) -> Prediction {
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| libm::exp(v as f64 - max)).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut class = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[class] {
            class = i;
        }
    }
    Prediction { class, probs }
}

pub fn predict(model: &Model, params: &ParameterStore, s: &PreparedSample) -> Result<Prediction, Error> {
    let mut g = Graph::new();
    let mut p = BoundParams::new(params);
    let out = model.forward(&mut g, &mut p, s)?;
    Ok(prediction_from_logits(g.data(out.logits_mm)))
}
