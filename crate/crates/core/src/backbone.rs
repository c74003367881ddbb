//! Small convolutional frame encoder, trained from scratch.
//!
//! Stages of 3×3 "same" conv, ReLU and 2×2 max-pool, then one
//! fully-connected layer to the feature width.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::{BoundParams, ParamDecl};
use crate::tensor::{Graph, TensorError, Var};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub input_size: usize,
    /// Average-pool factor applied to the frame before the first stage.
    pub input_pool: usize,
    pub stages: Vec<StageSpec>,
    pub feature_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let stage = |channels| StageSpec { channels, kernel: 3, pool: 2 };
        BackboneConfig {
            in_channels: 3,
            input_size: 64,
            input_pool: 1,
            stages: alloc::vec![stage(16), stage(32), stage(64), stage(64)],
            feature_dim: 256,
        }
    }
}

impl BackboneConfig {
    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    /// Spatial extent after the input pool and every stage.
    pub fn output_size(&self) -> usize {
        self.stages.iter().fold(self.input_size / self.input_pool.max(1), |s, st| s / st.pool.max(1))
    }

    pub fn flat_dim(&self) -> usize {
        let c = self.stages.last().map_or(self.in_channels, |s| s.channels);
        c * self.output_size() * self.output_size()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(format!("backbone: {}", m)));
        if !matches!(self.in_channels, 1 | 3) {
            return bad(format!("{} input channels, expected 1 or 3", self.in_channels));
        }
        if self.feature_dim == 0 || self.input_pool == 0 {
            return bad("sizes must be positive".into());
        }
        let mut size = self.input_size;
        if size % self.input_pool != 0 {
            return bad(format!("input {} not divisible by pool {}", size, self.input_pool));
        }
        size /= self.input_pool;
        for s in &self.stages {
            if s.channels == 0 || s.kernel % 2 == 0 || s.pool == 0 || size % s.pool != 0 {
                return bad(format!("stage {:?} does not fit a {}×{} input", s, size, size));
            }
            size /= s.pool;
        }
        if size == 0 {
            return bad("stages reduce the frame to nothing".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub prefix: String,
}

impl Backbone {
    pub fn new(prefix: &str, cfg: BackboneConfig) -> Result<Self, Error> {
        cfg.validate()?;
        Ok(Backbone {
            cfg,
            prefix: prefix.into(),
        })
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{}", self.prefix, leaf)
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        let mut c_in = self.cfg.in_channels;
        for (i, s) in self.cfg.stages.iter().enumerate() {
            let fan_in = c_in * s.kernel * s.kernel;
            out.push(ParamDecl::he(self.name(&format!("conv{}.w", i)), &[s.channels, c_in, s.kernel, s.kernel], fan_in));
            out.push(ParamDecl::zeros(self.name(&format!("conv{}.b", i)), &[s.channels]));
            c_in = s.channels;
        }
        let flat = self.cfg.flat_dim();
        out.push(ParamDecl::he(self.name("fc.w"), &[flat, self.cfg.feature_dim], flat));
        out.push(ParamDecl::zeros(self.name("fc.b"), &[self.cfg.feature_dim]));
        out
    }

    /// `[C×H×W] -> [feature_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &mut BoundParams, frame: Var) -> Result<Var, Error> {
        let c = &self.cfg;
        let expect = [c.in_channels, c.input_size, c.input_size];
        if g.shape(frame) != expect {
            return Err(TensorError::shape("frame_features", g.shape(frame), &expect).into());
        }
        let mut x = if c.input_pool > 1 { g.avg_pool2d(frame, c.input_pool)? } else { frame };
        for (i, s) in c.stages.iter().enumerate() {
            let w = p.get(g, &self.name(&format!("conv{}.w", i)))?;
            let b = p.get(g, &self.name(&format!("conv{}.b", i)))?;
            x = g.conv2d(x, w, Some(b))?;
            x = g.relu(x)?;
            if s.pool > 1 {
                x = g.max_pool2d(x, s.pool)?;
            }
        }
        let flat = c.flat_dim();
        let x = g.reshape(x, &[flat])?;
        let w = p.get(g, &self.name("fc.w"))?;
        let b = p.get(g, &self.name("fc.b"))?;
        Ok(g.linear(x, w, Some(b))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterStore;
    use crate::tensor::{gradcheck_sampled, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_shape_and_zero_input() {
        let net = Backbone::new("bb", BackboneConfig::default()).unwrap();
        assert_eq!(net.cfg.flat_dim(), 64 * 4 * 4);
        let mut store = ParameterStore::build(&net.decls(), 1).unwrap();
        store.get_mut("bb.fc.b").unwrap().data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f32);
        let mut g = Graph::new();
        let mut p = BoundParams::new(&store);
        let x = g.constant(Tensor::zeros(&[3, 64, 64]));
        let y = net.forward(&mut g, &mut p, x).unwrap();
        assert_eq!(g.shape(y), &[256]);
        // zero biases in the conv stages leave only the head bias
        for (i, &v) in g.data(y).iter().enumerate() {
            assert_eq!(v, i as f32);
        }
        let bad = g.constant(Tensor::zeros(&[3, 32, 32]));
        assert!(net.forward(&mut g, &mut p, bad).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Backbone::new("bb", BackboneConfig::default().with_in_channels(2)).is_err());
        let c = BackboneConfig {
            input_size: 60,
            ..BackboneConfig::default()
        };
        assert!(Backbone::new("bb", c).is_err());
    }

    #[test]
    fn gradcheck_on_small_frames() {
        let cfg = BackboneConfig {
            in_channels: 1,
            input_size: 16,
            input_pool: 2,
            stages: alloc::vec![StageSpec { channels: 3, kernel: 3, pool: 2 }, StageSpec { channels: 4, kernel: 3, pool: 2 }],
            feature_dim: 5,
        };
        let net = Backbone::new("bb", cfg).unwrap();
        let store = ParameterStore::build(&net.decls(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(&[1, 16, 16], |_| rng.random_range(0.0f32..1.0)).unwrap();
        let to_t = |e: Error| match e {
            Error::Tensor(t) => t,
            o => TensorError::invalid("test", format!("{}", o)),
        };
        let r = gradcheck_sampled(
            |g, x| {
                let mut p = BoundParams::new(&store);
                let y = net.forward(g, &mut p, x).map_err(to_t)?;
                let y = g.mul(y, y)?;
                g.sum(y)
            },
            &x,
            1e-3,
            64,
        )
        .unwrap();
        assert!(r.max_rel_err < 5e-3, "{:?}", r);
        let w = store.get("bb.conv0.w").unwrap().clone();
        let r = gradcheck_sampled(
            |g, w| {
                let mut p = BoundParams::new(&store).bind("bb.conv0.w", w);
                let xv = g.constant(x.clone());
                let y = net.forward(g, &mut p, xv).map_err(to_t)?;
                let y = g.mul(y, y)?;
                g.sum(y)
            },
            &w,
            1e-3,
            27,
        )
        .unwrap();
        assert!(r.max_rel_err < 5e-3, "{:?}", r);
    }
}
