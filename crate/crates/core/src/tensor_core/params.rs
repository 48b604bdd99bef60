//! Named parameter storage and the per-forward [`Session`] that binds it to a
//! [`Graph`].

use std::collections::HashMap;

use super::graph::{BatchNormConfig, Graph, RunningStats, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(usize);

/// Train mode uses batch statistics and records a graph; eval mode uses
/// running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable tensors plus batch-norm running statistics, addressed by id and
/// by unique dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    stats_names: Vec<String>,
    stats: Vec<RunningStats<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            stats_names: Vec::new(),
            stats: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a trainable tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats_names.push(name.into());
        self.stats.push(RunningStats::new(channels));
        StatsId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<T> {
        &self.stats[id.0]
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats<T> {
        &mut self.stats[id.0]
    }

    pub fn stats_iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stats_names.iter().map(String::as_str).zip(&self.stats)
    }

    pub fn stats_iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut RunningStats<T>)> {
        self.stats_names.iter().map(String::as_str).zip(self.stats.iter_mut())
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.shape().numel()).sum()
    }

    /// Removes every stored gradient.
    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            let _ = t.take_grad();
        }
    }

    /// Converts every tensor and running statistic to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast::<U>().with_requires_grad(true)).collect(),
            stats_names: self.stats_names.clone(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.iter().map(|v| U::lit(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Parameters enter the graph once per session as leaves; [`Session::backward`]
/// adds their gradients into the store.
pub struct Session<'s, T: Real> {
    pub graph: Graph<T>,
    store: &'s mut ParamStore<T>,
    mode: Mode,
    leaves: HashMap<ParamId, Var>,
    bn: BatchNormConfig,
}

impl<'s, T: Real> Session<'s, T> {
    /// Train sessions record; eval sessions do not.
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        let graph = match mode {
            Mode::Train => Graph::new(),
            Mode::Eval => Graph::no_grad(),
        };
        Self::with_graph(store, mode, graph)
    }

    /// A session with an explicit graph, e.g. a recording graph in eval mode
    /// for gradient checks through running statistics.
    pub fn with_graph(store: &'s mut ParamStore<T>, mode: Mode, graph: Graph<T>) -> Self {
        Self {
            graph,
            store,
            mode,
            leaves: HashMap::new(),
            bn: BatchNormConfig::default(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.get(&id) {
            return *v;
        }
        let v = self.graph.leaf(self.store.get(id).clone(), true);
        self.leaves.insert(id, v);
        v
    }

    pub fn batch_norm(&mut self, input: Var, gamma: ParamId, beta: ParamId, stats: StatsId) -> Result<Var> {
        let g = self.param(gamma);
        let b = self.param(beta);
        let train = self.mode == Mode::Train;
        self.graph
            .batch_norm(input, g, b, self.store.stats_mut(stats), train, self.bn)
    }

    /// Back-propagates `loss` and accumulates parameter gradients into the store.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        let visited = self.graph.backward(loss)?;
        let mut leaves: Vec<_> = self.leaves.iter().map(|(p, v)| (*p, *v)).collect();
        leaves.sort();
        for (id, var) in leaves {
            let Some(g) = self.graph.grad(var) else {
                continue;
            };
            let t = self.store.get_mut(id);
            if t.grad().is_none() {
                t.set_grad(Some(g.to_vec()))?;
            } else {
                t.grad_or_zeros().iter_mut().zip(g).for_each(|(a, b)| *a += *b);
            }
        }
        Ok(visited)
    }
}
