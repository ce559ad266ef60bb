//! Action selection with a shared Q-network.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::baselines::Step;
use crate::channel::ResourceId;
use crate::netmodel::{FlowId, NetworkState, NodeId};
use crate::router::{FailureKind, StepError, StepPolicy};
use crate::selection::{select, with_destination, NeighborSet, NeighborStrategy};

use super::features::{featurize, FeatureScaling, FEATURES_PER_NEIGHBOR};
use super::qnet::QNet;
use super::replay::PendingStep;

/// A valid action: resource, neighbor node and the neighbor's slot in the set.
pub type Slot = (ResourceId, NodeId, usize);

/// Exploration rate `max(0, 1 − t/T)`.
pub fn epsilon(t: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (1.0 - t as f64 / total as f64).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub next: NodeId,
    pub resource: ResourceId,
    /// Neighbor slot, i.e. the network output index.
    pub slot: usize,
    /// Normalized state vector on `resource`.
    pub state: Vec<f64>,
    pub explored: bool,
}

/// One row of features per resource, plus the valid `(resource, node, slot)` actions
/// sorted by resource id then node id.
pub fn action_space(
    state: &NetworkState,
    f: FlowId,
    neighbors: &NeighborSet,
    e_nei: usize,
    scaling: &FeatureScaling,
) -> Result<(Array2<f64>, Vec<Slot>), StepError> {
    let n_res = state.resources().len();
    let mut x = Array2::zeros((n_res, FEATURES_PER_NEIGHBOR * e_nei));
    let mut valid = Vec::new();
    for c in 0..n_res {
        let sv = featurize(state, f, neighbors, c, e_nei, scaling)?;
        x.row_mut(c).assign(&ndarray::ArrayView1::from(&sv.values));
        for (slot, &ok) in sv.mask.iter().enumerate() {
            if ok {
                valid.push((c, neighbors.neighbors[slot], slot));
            }
        }
    }
    valid.sort_unstable();
    Ok((x, valid))
}

/// ε-greedy choice of `(neighbor, resource)`: one forward pass scores every
/// neighbor on every resource; exploration is uniform over valid actions.
pub fn act<R: Rng>(
    net: &QNet,
    scaling: &FeatureScaling,
    state: &NetworkState,
    f: FlowId,
    neighbors: &NeighborSet,
    eps: f64,
    rng: &mut R,
) -> Result<Decision, StepError> {
    let e_nei = net.shape().actions;
    let (x, valid) = action_space(state, f, neighbors, e_nei, scaling)?;
    if valid.is_empty() {
        return Err(StepError::Failure(FailureKind::DeadEnd));
    }
    let explore = eps > 0.0 && rng.random::<f64>() < eps;
    let (c, next, slot) = if explore {
        valid[rng.random_range(0..valid.len())]
    } else {
        let q = net.q_values(x.view());
        let mut best = valid[0];
        for &a in &valid[1..] {
            if q[[a.0, a.2]] > q[[best.0, best.2]] {
                best = a;
            }
        }
        best
    };
    Ok(Decision { next, resource: c, slot, state: x.row(c).to_vec(), explored: explore })
}

/// The agent as a routing policy. Optionally records its decisions for replay.
pub struct DqnPolicy<'a> {
    pub net: &'a QNet,
    pub scaling: FeatureScaling,
    pub strategy: NeighborStrategy,
    /// Keep the flow's destination among the candidates.
    pub include_destination: bool,
    pub epsilon: f64,
    pub rng: ChaCha8Rng,
    pub record: bool,
    pub trajectory: Vec<PendingStep>,
}

impl<'a> DqnPolicy<'a> {
    /// Deterministic policy, no exploration or recording.
    pub fn greedy(net: &'a QNet, scaling: FeatureScaling, strategy: NeighborStrategy) -> Self {
        Self {
            net,
            scaling,
            strategy,
            include_destination: true,
            epsilon: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            record: false,
            trajectory: Vec::new(),
        }
    }

    pub fn take_trajectory(&mut self) -> Vec<PendingStep> {
        std::mem::take(&mut self.trajectory)
    }
}

impl StepPolicy for DqnPolicy<'_> {
    fn decide(&mut self, state: &NetworkState, f: FlowId) -> Result<Step, StepError> {
        let e_nei = self.net.shape().actions;
        let mut neighbors = select(state, f, self.strategy, e_nei)?;
        if self.include_destination {
            neighbors = with_destination(state, f, neighbors, e_nei)?;
        }
        let d = act(self.net, &self.scaling, state, f, &neighbors, self.epsilon, &mut self.rng)?;
        if self.record {
            self.trajectory.push(PendingStep { state: d.state, action: d.slot, resource: d.resource });
        }
        Ok(Step { next: d.next, resource: d.resource })
    }
}
