use std::cell::RefCell;

use rand::{Rng, SeedableRng};

use crate::autograd::{Graph, Var};
use crate::params::{ModelRng, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One forward pass: the recording graph, read-only parameters, the
/// train/eval switch and the stream of randomness used by dropout.
pub struct Ctx<'a, T: Scalar> {
    graph: Graph<T>,
    params: &'a ParamStore<T>,
    train: bool,
    rng: RefCell<ModelRng>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(params: &'a ParamStore<T>, graph: Graph<T>, train: bool, seed: u64) -> Self {
        Self {
            graph,
            params,
            train,
            rng: RefCell::new(ModelRng::seed_from_u64(seed)),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    /// Differentiable training pass.
    pub fn train(params: &'a ParamStore<T>, seed: u64) -> Self {
        Self::new(params, Graph::new(), true, seed)
    }

    /// Non-recording evaluation pass (dropout off, running statistics).
    pub fn eval(params: &'a ParamStore<T>) -> Self {
        Self::new(params, Graph::inference(), false, 0)
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&self, id: ParamId) -> Var<T> {
        let e = self.params.entry(id);
        self.graph.param_leaf(
            e.value.clone(),
            id,
            e.kind == crate::params::ParamKind::Trainable,
        )
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.graph.constant(value)
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&self, x: &Var<T>, p: f64) -> Var<T> {
        if !self.train || p <= 0.0 {
            return x.clone();
        }
        let keep = 1.0 - p;
        let scale = T::lit(1.0 / keep);
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<T> = (0..x.value().numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let mask = Tensor::from_parts(mask, x.shape().to_vec());
        x.mul(&self.graph.constant(mask))
    }

    pub fn rng(&self) -> std::cell::RefMut<'_, ModelRng> {
        self.rng.borrow_mut()
    }

    pub(crate) fn push_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Running-statistic updates produced during the pass; apply them with
    /// [`ParamStore::set`] once the pass is finished.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }
}
