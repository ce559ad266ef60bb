//! Benchmark routing schemes.
//!
//! The greedy schemes pick one hop at a time from the frontier's neighbor
//! set. Widest-path plans a maximum-bottleneck route over the full graph,
//! commits only its first hop and re-plans from the next frontier so that
//! later plans see the interference of hops already committed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ResourceId;
use crate::netmodel::{FlowId, NetError, NetworkState, NodeId, Route};
use crate::selection::NeighborSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    BestDirection,
    ClosestToDestination,
    LeastInterfered,
    LargestRate,
    DestinationDirect,
    WidestPath,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [
        Baseline::BestDirection,
        Baseline::ClosestToDestination,
        Baseline::LeastInterfered,
        Baseline::LargestRate,
        Baseline::DestinationDirect,
        Baseline::WidestPath,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::BestDirection => "best_direction",
            Baseline::ClosestToDestination => "closest_to_destination",
            Baseline::LeastInterfered => "least_interfered",
            Baseline::LargestRate => "largest_rate",
            Baseline::DestinationDirect => "destination_direct",
            Baseline::WidestPath => "widest_path",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    /// Whether the scheme consumes the frontier's neighbor set.
    pub fn uses_neighbor_set(&self) -> bool {
        !matches!(self, Baseline::DestinationDirect | Baseline::WidestPath)
    }

    /// One routing decision at the frontier of flow `f`.
    pub fn step(&self, state: &NetworkState, f: FlowId, neighbors: Option<&NeighborSet>) -> Result<Step, BaselineError> {
        let need = || neighbors.ok_or(BaselineError::MissingNeighbors);
        match self {
            Baseline::BestDirection => best_direction_step(state, f, need()?),
            Baseline::ClosestToDestination => closest_to_destination_step(state, f, need()?),
            Baseline::LeastInterfered => least_interfered_step(state, f, need()?),
            Baseline::LargestRate => largest_rate_step(state, f, need()?),
            Baseline::DestinationDirect => destination_direct_step(state, f),
            Baseline::WidestPath => widest_path_step(state, f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub next: NodeId,
    pub resource: ResourceId,
}

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("dead end: no valid (neighbor, resource) for flow {flow} at node {frontier}")]
    DeadEnd { flow: FlowId, frontier: NodeId },
    #[error("disconnected: destination unreachable for flow {flow} from node {frontier}")]
    Disconnected { flow: FlowId, frontier: NodeId },
    #[error("scheme requires a neighbor set")]
    MissingNeighbors,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Highest-rate valid resource from the frontier of `f` to `next`; ties to the lower id.
pub fn best_resource(state: &NetworkState, f: FlowId, next: NodeId) -> Result<Option<(ResourceId, f64)>, NetError> {
    let frontier = state.frontier(f)?;
    let mut best: Option<(ResourceId, f64)> = None;
    for c in state.valid_hop_resources(f, next) {
        let r = state.link_rate(f, frontier, next, c)?;
        if best.is_none_or(|(_, br)| r > br) {
            best = Some((c, r));
        }
    }
    Ok(best)
}

/// Picks the neighbor minimizing `key` (ties to lower id), then its best resource.
fn greedy_by_node(
    state: &NetworkState,
    f: FlowId,
    neighbors: &NeighborSet,
    key: impl Fn(NodeId) -> f64,
) -> Result<Step, BaselineError> {
    let frontier = state.frontier(f)?;
    let mut best: Option<(f64, NodeId, ResourceId)> = None;
    for &n in &neighbors.neighbors {
        let Some((c, _)) = best_resource(state, f, n)? else { continue };
        let k = key(n);
        let better = match best {
            None => true,
            Some((bk, bn, _)) => k < bk || (k == bk && n < bn),
        };
        if better {
            best = Some((k, n, c));
        }
    }
    best.map(|(_, next, resource)| Step { next, resource }).ok_or(BaselineError::DeadEnd { flow: f, frontier })
}

/// Angle at the frontier between the destination and the neighbor.
pub fn direction_angle(state: &NetworkState, f: FlowId, n: NodeId) -> Result<f64, NetError> {
    let topo = state.topology();
    let frontier = state.frontier(f)?;
    let dest = state.flow(f)?.destination;
    Ok(topo.position(frontier).angle_between(&topo.position(dest), &topo.position(n)))
}

pub fn best_direction_step(state: &NetworkState, f: FlowId, neighbors: &NeighborSet) -> Result<Step, BaselineError> {
    let topo = state.topology();
    let frontier = topo.position(state.frontier(f)?);
    let dest = topo.position(state.flow(f)?.destination);
    greedy_by_node(state, f, neighbors, |n| frontier.angle_between(&dest, &topo.position(n)))
}

pub fn closest_to_destination_step(state: &NetworkState, f: FlowId, neighbors: &NeighborSet) -> Result<Step, BaselineError> {
    let dest = state.flow(f)?.destination;
    let topo = state.topology();
    greedy_by_node(state, f, neighbors, |n| topo.distance(n, dest))
}

/// Minimizes `key(node, resource)` over all valid pairs; ties to (node id, resource id).
fn greedy_by_pair(
    state: &NetworkState,
    f: FlowId,
    neighbors: &NeighborSet,
    key: impl Fn(NodeId, ResourceId) -> Result<f64, NetError>,
) -> Result<Step, BaselineError> {
    let frontier = state.frontier(f)?;
    let mut best: Option<(f64, NodeId, ResourceId)> = None;
    for &n in &neighbors.neighbors {
        for c in state.valid_hop_resources(f, n) {
            let k = key(n, c)?;
            let better = match best {
                None => true,
                Some((bk, bn, bc)) => k < bk || (k == bk && (n, c) < (bn, bc)),
            };
            if better {
                best = Some((k, n, c));
            }
        }
    }
    best.map(|(_, next, resource)| Step { next, resource }).ok_or(BaselineError::DeadEnd { flow: f, frontier })
}

pub fn least_interfered_step(state: &NetworkState, f: FlowId, neighbors: &NeighborSet) -> Result<Step, BaselineError> {
    greedy_by_pair(state, f, neighbors, |n, c| Ok(state.interference_at(n, c)))
}

pub fn largest_rate_step(state: &NetworkState, f: FlowId, neighbors: &NeighborSet) -> Result<Step, BaselineError> {
    let frontier = state.frontier(f)?;
    greedy_by_pair(state, f, neighbors, |n, c| Ok(-state.link_rate(f, frontier, n, c)?))
}

pub fn destination_direct_step(state: &NetworkState, f: FlowId) -> Result<Step, BaselineError> {
    let frontier = state.frontier(f)?;
    let dest = state.flow(f)?.destination;
    match best_resource(state, f, dest)? {
        Some((resource, _)) => Ok(Step { next: dest, resource }),
        None => Err(BaselineError::DeadEnd { flow: f, frontier }),
    }
}

/// Single-hop route from the source straight to the destination on the
/// highest-rate resource. Does not modify the state.
pub fn destination_direct(state: &NetworkState, f: FlowId) -> Result<Route, BaselineError> {
    let fl = state.flow(f)?;
    let mut scratch = state.clone();
    scratch.tear_down(f)?;
    let step = destination_direct_step(&scratch, f)?;
    Ok(Route { flow: f, nodes: vec![fl.source, step.next], hop_resources: vec![step.resource] })
}

/// A planned maximum-bottleneck route from the current frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct WidestPlan {
    /// `(node, resource used to reach it)` for every hop after the frontier.
    pub hops: Vec<(NodeId, ResourceId)>,
    pub bottleneck: f64,
}

#[derive(Debug, Clone, Copy)]
struct Label {
    value: f64,
    resource: Option<ResourceId>,
    pred: Option<(NodeId, Option<ResourceId>)>,
    settled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    value: f64,
    node: NodeId,
    resource: Option<ResourceId>,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // max value first, then lower node id, then lower resource id
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.resource.cmp(&self.resource))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Maximum-bottleneck route from the frontier of `f` to its destination.
///
/// Edge `(i, j)` on resource `c` weighs `R^c_{ij}` under the interference of
/// committed hops; a node's plain-graph weight is `max_c R^c_{ij}`. The search
/// runs a modified Dijkstra over (node, arrival resource) so that the plan
/// never transmits on the resource it arrived on. Each node keeps the best
/// label for at most two distinct arrival resources, which is all any
/// outgoing edge can need.
pub fn widest_path_plan(state: &NetworkState, f: FlowId) -> Result<WidestPlan, BaselineError> {
    let frontier = state.frontier(f)?;
    let dest = state.flow(f)?.destination;
    let n_nodes = state.node_count();
    let n_res = state.resources().len();
    if frontier == dest {
        return Ok(WidestPlan { hops: Vec::new(), bottleneck: f64::INFINITY });
    }
    let allowed: Vec<bool> = (0..n_nodes).map(|n| n == frontier || state.is_candidate_node(f, n)).collect();
    let used_by_others: Vec<Vec<ResourceId>> = (0..n_nodes).map(|n| state.resources_used_by_others(n, f)).collect();

    let mut labels: Vec<Vec<Label>> = vec![Vec::new(); n_nodes];
    let incoming = state.route(f)?.hop_resources.last().copied();
    labels[frontier].push(Label { value: f64::INFINITY, resource: incoming, pred: None, settled: false });
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem { value: f64::INFINITY, node: frontier, resource: incoming });

    let on_path = |labels: &Vec<Vec<Label>>, mut node: NodeId, mut res: Option<ResourceId>, target: NodeId| {
        loop {
            if node == target {
                return true;
            }
            let Some(l) = labels[node].iter().find(|l| l.resource == res) else { return false };
            match l.pred {
                Some((p, pr)) => {
                    node = p;
                    res = pr;
                }
                None => return false,
            }
        }
    };

    while let Some(item) = heap.pop() {
        let Some(idx) = labels[item.node].iter().position(|l| l.resource == item.resource) else { continue };
        let label = labels[item.node][idx];
        if label.settled || label.value != item.value {
            continue;
        }
        labels[item.node][idx].settled = true;
        let v = item.node;
        if v == dest {
            let mut hops = Vec::new();
            let (mut node, mut res) = (v, item.resource);
            while node != frontier {
                let l = labels[node].iter().find(|l| l.resource == res).expect("label chain");
                hops.push((node, res.expect("non-frontier labels carry a resource")));
                let (p, pr) = l.pred.expect("non-frontier labels have a predecessor");
                node = p;
                res = pr;
            }
            hops.reverse();
            return Ok(WidestPlan { hops, bottleneck: label.value });
        }
        for w in 0..n_nodes {
            if w == v || w == frontier || !allowed[w] {
                continue;
            }
            let mut candidates: Vec<(f64, ResourceId)> = Vec::new();
            for c in 0..n_res {
                if Some(c) == item.resource || used_by_others[v].contains(&c) || used_by_others[w].contains(&c) {
                    continue;
                }
                let rate = state.link_rate(f, v, w, c)?;
                candidates.push((label.value.min(rate), c));
            }
            if candidates.is_empty() || on_path(&labels, v, item.resource, w) {
                continue;
            }
            for (value, c) in candidates {
                if relax(&mut labels[w], value, c, v, item.resource) {
                    heap.push(HeapItem { value, node: w, resource: Some(c) });
                }
            }
        }
    }
    Err(BaselineError::Disconnected { flow: f, frontier })
}

/// Offers a label to a node's two-slot label set; returns whether it was kept.
fn relax(set: &mut Vec<Label>, value: f64, c: ResourceId, pred: NodeId, pred_res: Option<ResourceId>) -> bool {
    let fresh = Label { value, resource: Some(c), pred: Some((pred, pred_res)), settled: false };
    if let Some(existing) = set.iter_mut().find(|l| l.resource == Some(c)) {
        if !existing.settled && value > existing.value {
            *existing = fresh;
            return true;
        }
        return false;
    }
    if set.len() < 2 {
        set.push(fresh);
        return true;
    }
    let worst = if set[0].value <= set[1].value { 0 } else { 1 };
    if !set[worst].settled && value > set[worst].value {
        set[worst] = fresh;
        return true;
    }
    false
}

/// First hop of the current widest-path plan.
pub fn widest_path_step(state: &NetworkState, f: FlowId) -> Result<Step, BaselineError> {
    let plan = widest_path_plan(state, f)?;
    let &(next, resource) = plan.hops.first().ok_or(BaselineError::Disconnected { flow: f, frontier: state.frontier(f)? })?;
    Ok(Step { next, resource })
}
