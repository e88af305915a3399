//! Central parameter storage. Layers hold indices into a [`ParamStore`];
//! each forward pass binds every tensor into the graph (an `Arc` clone), so
//! concurrent per-sample graphs share the same frozen parameters.

use super::graph::{Graph, NodeId};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian scaled by 1/sqrt(fan_in).
    Normal { fan_in: usize },
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Arc<ArrayD<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal { fan_in } => {
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        g * std
                    })
                    .collect()
            }
        };
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Arc::new(ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()),
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, idx: usize) -> &ArrayD<f64> {
        &self.entries[idx].value
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Mutable access for the optimizer; panics if a graph still shares the
    /// tensor (training never overlaps a live forward pass).
    pub fn value_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        Arc::get_mut(&mut self.entries[idx].value)
            .expect("parameter tensor still shared; finish forward passes before stepping")
    }

    /// Binds all parameters into a graph, returning node ids aligned with the
    /// store indices.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|e| g.param(Arc::clone(&e.value)))
            .collect()
    }

    /// Collects parameter gradients (by store index) from a backward sweep.
    /// Parameters the loss does not reach get zero gradients.
    pub fn grads_from(
        &self,
        pids: &[NodeId],
        grads: &mut Vec<Option<ArrayD<f64>>>,
    ) -> Vec<ArrayD<f64>> {
        pids.iter()
            .enumerate()
            .map(|(i, &pid)| {
                grads[pid]
                    .take()
                    .unwrap_or_else(|| ArrayD::zeros(self.entries[i].value.raw_dim()))
            })
            .collect()
    }
}
