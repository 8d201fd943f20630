//! Parameterised building blocks and the parameter store they read from.

mod attention;
mod conv;
mod ffn;

pub use attention::{attention_with_weights, cross_attention, self_attention, AttentionParams};
pub use conv::{batch_norm, conv_block, BatchNormParams, ConvBlockParams};
pub use ffn::{ffn, FfnParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Tensor, Var};
use crate::{Result, Scalar};

/// Layer-norm and batch-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum for batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<S> {
    name: String,
    value: Tensor<S>,
    trainable: bool,
}

/// Named learnable tensors plus non-trainable buffers (batch-norm running
/// statistics). Initialisation draws from a ChaCha stream seeded once, so the
/// same registration order and seed always yield identical weights.
#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    entries: Vec<Entry<S>>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, value: Tensor<S>, trainable: bool) -> ParamId {
        self.entries.push(Entry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Weight initialised uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = Tensor::uniform(shape, bound, &mut self.rng);
        self.push(name.into(), value, true)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.push(name.into(), Tensor::zeros(shape), true)
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.push(name.into(), Tensor::ones(shape), true)
    }

    /// Non-trainable state carried alongside the parameters.
    pub fn buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.push(name.into(), value, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<S>) {
        debug_assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    /// Total number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm running-statistic update recorded during a training forward pass.
#[derive(Clone, Debug)]
pub struct StatUpdate<S> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Tensor<S>,
    pub batch_var: Tensor<S>,
}

/// Forward-pass context: a graph, the parameters bound onto it, and the mode.
///
/// Parameters are inserted into the graph lazily on first use, so a block
/// that is never evaluated leaves no trace in the graph.
pub struct Ctx<'a, S: Scalar> {
    pub g: &'a mut Graph<S>,
    store: &'a ParamStore<S>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    updates: Vec<StatUpdate<S>>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(g: &'a mut Graph<S>, store: &'a ParamStore<S>, mode: Mode) -> Self {
        Ctx {
            g,
            store,
            bound: vec![None; store.len()],
            mode,
            updates: Vec::new(),
        }
    }

    /// Context whose parameters are already on the graph, one var per store
    /// entry in id order (used by gradient checks).
    pub fn with_bound(g: &'a mut Graph<S>, store: &'a ParamStore<S>, vars: &[Var], mode: Mode) -> Self {
        assert_eq!(vars.len(), store.len());
        Ctx {
            g,
            store,
            bound: vars.iter().copied().map(Some).collect(),
            mode,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self
            .g
            .leaf(self.store.get(id).clone(), self.store.is_trainable(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn record(&mut self, update: StatUpdate<S>) {
        self.updates.push(update);
    }

    /// Parameters that were touched by the forward pass, and pending
    /// running-statistic updates.
    pub fn finish(self) -> (Vec<(ParamId, Var)>, Vec<StatUpdate<S>>) {
        let bound = self
            .bound
            .into_iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        (bound, self.updates)
    }
}

/// Row-wise layer normalisation over the last axis followed by `gamma`, `beta`.
pub fn layer_norm<S: Scalar>(ctx: &mut Ctx<S>, x: Var, gamma: ParamId, beta: ParamId) -> Result<Var> {
    let axis = ctx.g.shape(x).len() - 1;
    let n = ctx.g.standardize(x, axis, S::of(NORM_EPS))?;
    let (gm, bt) = (ctx.p(gamma), ctx.p(beta));
    let y = ctx.g.mul(n, gm)?;
    ctx.g.add(y, bt)
}

/// Applies accumulated running-statistic updates with momentum [`BN_MOMENTUM`].
pub fn apply_stat_updates<S: Scalar>(store: &mut ParamStore<S>, updates: &[StatUpdate<S>]) {
    let m = S::of(BN_MOMENTUM);
    for u in updates {
        for (id, batch) in [(u.mean, &u.batch_mean), (u.var, &u.batch_var)] {
            let running = store.get_mut(id);
            for (r, &b) in running.data_mut().iter_mut().zip(batch.data()) {
                *r = (S::one() - m) * *r + m * b;
            }
        }
    }
}
