//! Named parameter tensors and their binding into a [`Graph`].

use std::collections::{BTreeMap, HashMap};

use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Gradients, Graph, Var};
use crate::rng::GpenRng;
use crate::tensor::Tensor;

/// The three separately optimized parts of the restoration network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    Encoder,
    /// The GAN prior generator, mapping network included.
    Decoder,
    Discriminator,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Encoder, Part::Decoder, Part::Discriminator];

    pub fn prefix(self) -> &'static str {
        match self {
            Part::Encoder => "encoder.",
            Part::Decoder => "generator.",
            Part::Discriminator => "discriminator.",
        }
    }

    pub fn of(name: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| name.starts_with(p.prefix()))
    }
}

/// Ordered map from parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Entries belonging to `part`.
    pub fn part(&self, part: Part) -> ParamStore {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(part.prefix()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn remove_part(&mut self, part: Part) {
        self.tensors.retain(|k, _| !k.starts_with(part.prefix()));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    // Initializers. Weights are unit normal; layers apply their fan-in gain
    // at run time.
    pub(crate) fn init_normal(&mut self, name: String, shape: &[usize], rng: &mut GpenRng) {
        let t = Tensor::from_fn(shape, |_| StandardNormal.sample(rng));
        self.insert(name, t);
    }

    pub(crate) fn init_const(&mut self, name: String, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value));
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}

/// Graph handles for every parameter of a store.
#[derive(Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Binds every tensor; `trainable(name)` decides variable vs constant.
    pub fn new(graph: &mut Graph, store: &ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = store
            .iter()
            .map(|(k, t)| {
                let v = if trainable(k) { graph.variable(t.clone()) } else { graph.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn all_constant(graph: &mut Graph, store: &ParamStore) -> Self {
        Self::new(graph, store, |_| false)
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name:?} is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients of all bound variables that received one.
    pub fn collect(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone()))).collect()
    }
}
