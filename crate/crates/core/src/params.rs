//! Named, ordered registry of learnable tensors and the handles blocks use to
//! reach them during a forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Padding, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor by the same-named one from `other`, checking
    /// shapes.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other
                .id_of(name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(Error::TensorShape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// Binds every tensor as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> Bound<'t, T> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect(),
        }
    }
}

/// The store's tensors as tape variables, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound<'t, T: Element> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Element> Bound<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Accumulated gradients after `backward`, zeros where none reached.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }
}

/// How fresh parameters are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(1/fan_in)` for weights and biases, unit/zero for
    /// norm scales/shifts.
    FanIn,
    /// Everything zero, norm scales included. Useful as a load target and
    /// for degenerate-weight tests.
    Zeros,
}

/// Registers parameters with hierarchical names and initial values.
pub struct ParamBuilder<'a, T: Element> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    init: Init,
    prefix: Vec<String>,
}

impl<'a, T: Element> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64, init: Init) -> Self {
        ParamBuilder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            init,
            prefix: Vec::new(),
        }
    }

    /// Runs `f` with `name` appended to the current prefix.
    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    fn fan_in(&mut self, leaf: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let t = match self.init {
            Init::Zeros => Tensor::zeros(shape),
            Init::FanIn => {
                let b = (1.0 / fan_in as f64).sqrt();
                Tensor::<f64>::uniform(shape, -b, b, &mut self.rng).cast()
            }
        };
        let name = self.full_name(leaf);
        self.store.push(name, t)
    }

    fn constant(&mut self, leaf: &str, shape: Vec<usize>, value: f64) -> ParamId {
        let v = if self.init == Init::Zeros { 0.0 } else { value };
        let name = self.full_name(leaf);
        self.store.push(name, Tensor::full(shape, T::lit(v)))
    }

    pub fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> ConvParams {
        self.scope(name, |b| {
            let fan = cin * k * k;
            ConvParams {
                weight: b.fan_in("weight", vec![cout, cin, k, k], fan),
                bias: b.fan_in("bias", vec![cout], fan),
            }
        })
    }

    pub fn dense(&mut self, name: &str, out: usize, inp: usize) -> DenseParams {
        self.scope(name, |b| DenseParams {
            weight: b.fan_in("weight", vec![out, inp], inp),
            bias: b.fan_in("bias", vec![out], inp),
        })
    }

    pub fn norm(&mut self, name: &str, n: usize) -> NormParams {
        self.scope(name, |b| NormParams {
            gamma: b.constant("gamma", vec![n], 1.0),
            beta: b.constant("beta", vec![n], 0.0),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvParams {
    pub fn apply<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p.get(self.weight), Some(p.get(self.bias)), Padding::Zero)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseParams {
    pub fn apply<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
        x.dense(axis, p.get(self.weight), Some(p.get(self.bias)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl NormParams {
    pub fn apply<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
        x.layer_norm(axis, p.get(self.gamma), p.get(self.beta), LN_EPS)
    }
}
