//! Named, ordered parameter storage.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)` (Kaiming-uniform with `a = sqrt(5)`).
    KaimingUniform { fan_in: usize },
    StandardNormal,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape4,
    pub init: Init,
}

/// Ordered parameter declarations; names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Shape4, init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = self.specs.len();
        self.index.insert(name.clone(), id);
        self.specs.push(ParamSpec { name, shape, init });
        Ok(ParamId(id))
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.specs.iter().map(|s| s.shape.numel()).sum()
    }

    /// Overrides the initializer of every parameter whose name starts with `prefix`.
    pub fn set_init_prefix(&mut self, prefix: &str, init: Init) {
        for spec in self.specs.iter_mut().filter(|s| s.name.starts_with(prefix)) {
            spec.init = init;
        }
    }
}

/// Parameter values in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T: Scalar = f32> {
    names: Vec<String>,
    values: Vec<Tensor4<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Draws initial values in layout order from the seed's init stream.
    pub fn init(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = SeededRng::stream(seed, streams::INIT);
        let values = layout
            .specs()
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor4::zeros(spec.shape),
                Init::StandardNormal => Tensor4::from_fn(spec.shape, |_, _, _, _| T::of(rng.normal())),
                Init::KaimingUniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Tensor4::from_fn(spec.shape, |_, _, _, _| T::of(rng.uniform_in(-bound, bound)))
                }
            })
            .collect();
        Parameters {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            values,
        }
    }

    pub fn zeros(layout: &ParamLayout) -> Self {
        Parameters {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            values: layout.specs().iter().map(|s| Tensor4::zeros(s.shape)).collect(),
        }
    }

    /// Rebuilds a store from `(name, value)` entries, checking them against `layout`.
    pub fn from_entries(layout: &ParamLayout, entries: Vec<(String, Tensor4<T>)>) -> Result<Self> {
        if entries.len() != layout.len() {
            return Err(Error::config(format!(
                "{} parameter entries for a layout of {}",
                entries.len(),
                layout.len()
            )));
        }
        for ((name, value), spec) in entries.iter().zip(layout.specs()) {
            if *name != spec.name || value.shape() != spec.shape {
                return Err(Error::config(format!(
                    "parameter {name} ({}) does not match layout entry {} ({})",
                    value.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        let (names, values) = entries.into_iter().unzip();
        Ok(Parameters { names, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor4<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor4<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor4<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &str, &mut Tensor4<T>)> {
        self.names
            .iter()
            .zip(self.values.iter_mut())
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (_, name, v) in self.iter_mut() {
            if name.starts_with(prefix) {
                v.data_mut().fill(T::zero());
            }
        }
    }
}

/// Gradient slots matching a [`Parameters`] store, zero-initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Scalar = f32> {
    values: Vec<Tensor4<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        Gradients {
            values: params.values.iter().map(|v| Tensor4::zeros(v.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor4<T> {
        &self.values[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor4<T>) -> Result<()> {
        self.values[id.0].add_assign(g)
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.data_mut().fill(T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor4<T>)> {
        self.values.iter().enumerate().map(|(i, v)| (ParamId(i), v))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.all_finite())
    }
}
