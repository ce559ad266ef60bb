//! Neighbor-set selection at the frontier node.
//!
//! A node is eligible as a next hop of flow `f` when it is not already on
//! the route, is not a dedicated endpoint of another flow, and at least one
//! resource satisfies the half-duplex and shared-relay rules for the hop.
//! The flow's own destination competes like any other eligible node;
//! [`with_destination`] forces it into a set for policies that need it.
//! Ties are broken by ascending node id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{FlowId, NetError, NetworkState, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborStrategy {
    Distance,
    Channel,
    Rate,
}

impl NeighborStrategy {
    pub const ALL: [NeighborStrategy; 3] = [NeighborStrategy::Distance, NeighborStrategy::Channel, NeighborStrategy::Rate];

    pub fn name(&self) -> &'static str {
        match self {
            NeighborStrategy::Distance => "distance",
            NeighborStrategy::Channel => "channel",
            NeighborStrategy::Rate => "rate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub frontier: NodeId,
    pub neighbors: Vec<NodeId>,
    pub strategy: NeighborStrategy,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("dead end: no eligible next hop for flow {flow} at node {frontier}")]
    DeadEnd { flow: FlowId, frontier: NodeId },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Eligible next hops of flow `f`, ascending by node id.
pub fn eligible_candidates(state: &NetworkState, f: FlowId) -> Result<Vec<NodeId>, NetError> {
    state.route(f)?;
    Ok((0..state.node_count()).filter(|&n| !state.valid_hop_resources(f, n).is_empty()).collect())
}

pub fn select(
    state: &NetworkState,
    f: FlowId,
    strategy: NeighborStrategy,
    e_nei: usize,
) -> Result<NeighborSet, SelectionError> {
    match strategy {
        NeighborStrategy::Distance => select_distance(state, f, e_nei),
        NeighborStrategy::Channel => select_channel(state, f, e_nei),
        NeighborStrategy::Rate => select_rate(state, f, e_nei),
    }
}

/// Keeps the `e_nei` best candidates by `key` (smaller is better), ties by id.
fn rank(
    state: &NetworkState,
    f: FlowId,
    e_nei: usize,
    strategy: NeighborStrategy,
    key: impl Fn(NodeId, NodeId) -> Result<f64, NetError>,
) -> Result<NeighborSet, SelectionError> {
    let frontier = state.frontier(f)?;
    let candidates = eligible_candidates(state, f)?;
    if candidates.is_empty() {
        return Err(SelectionError::DeadEnd { flow: f, frontier });
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for n in candidates {
        scored.push((key(frontier, n)?, n));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.truncate(e_nei);
    Ok(NeighborSet { frontier, neighbors: scored.into_iter().map(|(_, n)| n).collect(), strategy })
}

/// Puts the flow's own destination into `ns` if it is eligible but was not
/// selected, in place of the last-ranked neighbor when the set is full.
pub fn with_destination(state: &NetworkState, f: FlowId, mut ns: NeighborSet, e_nei: usize) -> Result<NeighborSet, NetError> {
    let dest = state.flow(f)?.destination;
    if e_nei == 0 || ns.neighbors.contains(&dest) || state.valid_hop_resources(f, dest).is_empty() {
        return Ok(ns);
    }
    if ns.neighbors.len() >= e_nei {
        ns.neighbors.truncate(e_nei - 1);
    }
    ns.neighbors.push(dest);
    Ok(ns)
}

/// The `e_nei` eligible nodes closest to the frontier.
pub fn select_distance(state: &NetworkState, f: FlowId, e_nei: usize) -> Result<NeighborSet, SelectionError> {
    let topo = state.topology();
    rank(state, f, e_nei, NeighborStrategy::Distance, |fr, n| Ok(topo.distance(fr, n)))
}

/// Mean channel amplitude over all resources, `(1/|C|)·Σ_c |h(e, k, c)|`.
pub fn mean_channel_gain(state: &NetworkState, frontier: NodeId, n: NodeId) -> f64 {
    let r = state.resources().len();
    (0..r).map(|c| state.gains().get(frontier, n, c).norm()).sum::<f64>() / r as f64
}

/// Mean link rate over all resources under the current interference.
pub fn mean_link_rate(state: &NetworkState, f: FlowId, frontier: NodeId, n: NodeId) -> Result<f64, NetError> {
    let r = state.resources().len();
    let mut total = 0.0;
    for c in 0..r {
        total += state.link_rate(f, frontier, n, c)?;
    }
    Ok(total / r as f64)
}

/// The `e_nei` eligible nodes with the highest mean channel gain.
pub fn select_channel(state: &NetworkState, f: FlowId, e_nei: usize) -> Result<NeighborSet, SelectionError> {
    rank(state, f, e_nei, NeighborStrategy::Channel, |fr, n| Ok(-mean_channel_gain(state, fr, n)))
}

/// The `e_nei` eligible nodes with the highest mean link rate.
pub fn select_rate(state: &NetworkState, f: FlowId, e_nei: usize) -> Result<NeighborSet, SelectionError> {
    rank(state, f, e_nei, NeighborStrategy::Rate, |fr, n| Ok(-mean_link_rate(state, f, fr, n)?))
}
