//! Named trainable tensors and their binding onto a [`Graph`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Tensor, Var};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Zeros,
}

/// Declaration of one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    pub fn he(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        ParamDecl {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::HeUniform { fan_in },
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamDecl {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// FNV-1a, used to give every parameter its own RNG stream.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn initialise(decl: &ParamDecl, seed: u64) -> Tensor {
    match decl.init {
        Init::Zeros => Tensor::zeros(&decl.shape),
        Init::HeUniform { fan_in } => {
            let bound = libm::sqrtf(6.0 / fan_in.max(1) as f32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&decl.name));
            let data = (0..decl.numel()).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_parts(decl.shape.clone(), data)
        }
    }
}

/// Flat, name-ordered collection of trainable tensors.
///
/// Initial values depend only on `(seed, name)`, so models that share a
/// parameter name start from the same values regardless of what else they
/// contain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(decls: &[ParamDecl], seed: u64) -> Result<Self, Error> {
        let mut store = Self::new();
        for d in decls {
            if d.shape.is_empty() || d.shape.contains(&0) {
                return Err(Error::Config(alloc::format!("parameter `{}` has empty shape {:?}", d.name, d.shape)));
            }
            store.insert(&d.name, initialise(d, seed))?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<(), Error> {
        if self.params.contains_key(name) {
            return Err(Error::Config(alloc::format!("duplicate parameter `{}`", name)));
        }
        self.params.insert(name.to_string(), t.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Bitwise equality of every value.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb && a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Lazily records store parameters on a graph, once each.
pub struct BoundParams<'a> {
    store: &'a ParameterStore,
    vars: BTreeMap<String, Var>,
}

impl<'a> BoundParams<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        BoundParams {
            store,
            vars: BTreeMap::new(),
        }
    }

    /// Uses `var` in place of the stored parameter `name`.
    pub fn bind(mut self, name: &str, var: Var) -> Self {
        self.vars.insert(name.to_string(), var);
        self
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var, Error> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let v = g.param(t);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters recorded so far, in name order.
    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }
}
