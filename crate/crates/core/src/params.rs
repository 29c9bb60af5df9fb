use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Random generator used for every initialisation and stochastic layer.
pub type ModelRng = ChaCha8Rng;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimiser.
    Trainable,
    /// Carried state such as running statistics; never receives gradient.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Flat, name-addressed storage of every parameter and buffer of a model.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.value.shape(), value.shape(), "shape change for `{}`", e.name);
        e.value = value;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(id, _)| id)
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.trainable().map(|id| self.get(id).numel()).sum()
    }

    /// Adds `N(0, std^2)` noise to every trainable value.
    pub fn perturb(&mut self, std: f64, rng: &mut ModelRng) {
        for e in &mut self.entries {
            if e.kind == ParamKind::Trainable {
                let noise = Tensor::<T>::randn(e.value.shape(), std, rng);
                e.value.add_assign(&noise);
            }
        }
    }

    /// Name-sorted snapshot of all values.
    pub fn named(&self) -> BTreeMap<String, Tensor<T>> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect()
    }

    /// Loads values by name. Every stored entry must be present with a
    /// matching shape; extra names are rejected.
    pub fn load_named(&mut self, values: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for e in &self.entries {
            let v = values
                .get(&e.name)
                .ok_or_else(|| CoreError::MissingParam(e.name.clone()))?;
            if v.shape() != e.value.shape() {
                return Err(CoreError::Shape(format!(
                    "parameter `{}` expects {:?}, got {:?}",
                    e.name,
                    e.value.shape(),
                    v.shape()
                )));
            }
        }
        if let Some(extra) = values.keys().find(|k| !self.by_name.contains_key(*k)) {
            return Err(CoreError::InvalidInput(format!("unexpected parameter `{extra}`")));
        }
        for e in &mut self.entries {
            e.value = values[&e.name].clone();
        }
        Ok(())
    }
}

/// Initialisation schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    /// Uniform on `±1/sqrt(fan_in)`.
    FanInUniform(usize),
    /// Gaussian with std `sqrt(2/fan_in)` for rectifier stacks.
    KaimingNormal(usize),
    /// Random orthogonal square matrix.
    Orthogonal,
    Eye,
}

impl Init {
    pub fn tensor<T: Scalar>(self, shape: &[usize], rng: &mut ModelRng) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Const(v) => Tensor::full(shape, T::lit(v)),
            Init::Normal(std) => Tensor::randn(shape, std, rng),
            Init::FanInUniform(fan_in) => {
                Tensor::uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
            }
            Init::KaimingNormal(fan_in) => {
                Tensor::randn(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
            }
            Init::Eye => {
                assert!(shape.len() == 2 && shape[0] == shape[1], "eye needs square shape");
                Tensor::eye(shape[0])
            }
            Init::Orthogonal => {
                assert!(shape.len() == 2 && shape[0] == shape[1], "orthogonal needs square shape");
                random_orthogonal(shape[0], rng)
            }
        }
    }
}

/// Gram-Schmidt on a Gaussian matrix (rows orthonormalised, in f64).
pub fn random_orthogonal<T: Scalar>(n: usize, rng: &mut ModelRng) -> Tensor<T> {
    loop {
        let g: Tensor<f64> = Tensor::randn(&[n, n], 1.0, rng);
        let mut q = g.into_vec();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                for k in 0..n {
                    q[i * n + k] -= dot * q[j * n + k];
                }
            }
            let norm: f64 = (0..n).map(|k| q[i * n + k] * q[i * n + k]).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..n {
                q[i * n + k] /= norm;
            }
        }
        if ok {
            return Tensor::from_parts(q.into_iter().map(T::lit).collect(), vec![n, n]);
        }
    }
}

/// Scoped parameter registration: names are joined with `.`.
pub struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ModelRng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ModelRng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: impl std::fmt::Display) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let value = init.tensor(shape, self.rng);
        let full = self.full_name(name);
        self.store.add(&full, value, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add(&full, value, ParamKind::Buffer)
    }

    pub fn rng(&mut self) -> &mut ModelRng {
        self.rng
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }
}
