//! Hop-by-hop route construction, multi-flow establishment and the
//! exhaustive optimum for tiny instances.

use std::fmt;

use thiserror::Error;

use crate::baselines::{Baseline, BaselineError, Step};
use crate::channel::ResourceId;
use crate::netmodel::{FlowId, NetError, NetworkState, NodeId, Route};
use crate::selection::{select, NeighborStrategy, SelectionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    DeadEnd,
    HopCap,
    Disconnected,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::DeadEnd => "dead end",
            FailureKind::HopCap => "hop cap",
            FailureKind::Disconnected => "disconnected",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("{0}")]
    Failure(FailureKind),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<BaselineError> for StepError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::DeadEnd { .. } | BaselineError::MissingNeighbors => StepError::Failure(FailureKind::DeadEnd),
            BaselineError::Disconnected { .. } => StepError::Failure(FailureKind::Disconnected),
            BaselineError::Net(n) => StepError::Net(n),
        }
    }
}

impl From<SelectionError> for StepError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::DeadEnd { .. } => StepError::Failure(FailureKind::DeadEnd),
            SelectionError::Net(n) => StepError::Net(n),
        }
    }
}

/// Chooses the next hop and resource at the frontier of a flow.
pub trait StepPolicy {
    fn decide(&mut self, state: &NetworkState, f: FlowId) -> Result<Step, StepError>;
}

/// A benchmark scheme with its neighbor-selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselinePolicy {
    pub scheme: Baseline,
    pub strategy: NeighborStrategy,
    pub e_nei: usize,
}

impl StepPolicy for BaselinePolicy {
    fn decide(&mut self, state: &NetworkState, f: FlowId) -> Result<Step, StepError> {
        let neighbors = if self.scheme.uses_neighbor_set() { Some(select(state, f, self.strategy, self.e_nei)?) } else { None };
        Ok(self.scheme.step(state, f, neighbors.as_ref())?)
    }
}

/// Dispatches each flow to its own policy.
pub struct PerFlow<'a> {
    pub policies: Vec<&'a mut dyn StepPolicy>,
}

impl StepPolicy for PerFlow<'_> {
    fn decide(&mut self, state: &NetworkState, f: FlowId) -> Result<Step, StepError> {
        let p = self.policies.get_mut(f).ok_or(StepError::Net(NetError::UnknownFlow(f)))?;
        p.decide(state, f)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("flow {flow} failed: {kind}")]
    Failed { flow: FlowId, kind: FailureKind },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Default hop cap, twice the relay count (at least 2).
pub fn default_hop_cap(state: &NetworkState) -> usize {
    (2 * state.topology().relay_count()).max(2)
}

/// Extends flow `f` from its current frontier until it reaches the
/// destination. On failure the flow is torn down so it neither interferes
/// nor holds resources.
pub fn build_route(
    state: &mut NetworkState,
    f: FlowId,
    policy: &mut dyn StepPolicy,
    hop_cap: usize,
) -> Result<Route, RouteError> {
    let dest = state.flow(f)?.destination;
    let fail = |state: &mut NetworkState, kind| -> Result<Route, RouteError> {
        state.tear_down(f)?;
        Err(RouteError::Failed { flow: f, kind })
    };
    while state.frontier(f)? != dest {
        if state.route(f)?.hop_count() >= hop_cap {
            return fail(state, FailureKind::HopCap);
        }
        let step = match policy.decide(state, f) {
            Ok(s) => s,
            Err(StepError::Failure(kind)) => return fail(state, kind),
            Err(StepError::Net(e)) => return Err(e.into()),
        };
        if let Err(e) = state.commit_hop(f, step.next, step.resource) {
            return match e {
                NetError::InvalidHop { .. } => fail(state, FailureKind::DeadEnd),
                other => Err(other.into()),
            };
        }
    }
    Ok(state.route(f)?.clone())
}

/// Outcome per flow of a routing pass; `None` means success.
pub type Outcomes = Vec<Option<FailureKind>>;

/// Routes the flows of `order` one after another from scratch.
pub fn establish_all(
    state: &mut NetworkState,
    policy: &mut dyn StepPolicy,
    order: &[FlowId],
    hop_cap: usize,
) -> Result<Outcomes, NetError> {
    let mut outcomes = vec![None; state.flow_count()];
    for &f in order {
        state.tear_down(f)?;
        match build_route(state, f, policy, hop_cap) {
            Ok(_) => {}
            Err(RouteError::Failed { kind, .. }) => outcomes[f] = Some(kind),
            Err(RouteError::Net(e)) => return Err(e),
        }
    }
    Ok(outcomes)
}

/// All flows in ascending id order.
pub fn establish_in_order(state: &mut NetworkState, policy: &mut dyn StepPolicy, hop_cap: usize) -> Result<Outcomes, NetError> {
    let order: Vec<FlowId> = (0..state.flow_count()).collect();
    establish_all(state, policy, &order, hop_cap)
}

/// Flows by descending achieved rate, failed flows last, ties by id.
pub fn reestablish_order(state: &NetworkState) -> Vec<FlowId> {
    let rates: Vec<Option<f64>> = (0..state.flow_count()).map(|f| state.route_rate(f).ok()).collect();
    let mut order: Vec<FlowId> = (0..state.flow_count()).collect();
    order.sort_by(|&a, &b| match (rates[a], rates[b]) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.cmp(&b)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    order
}

/// Repeatedly tears down and re-routes each flow, one at a time, in
/// descending order of its current rate.
pub fn reestablish(
    state: &mut NetworkState,
    policy: &mut dyn StepPolicy,
    rounds: usize,
    hop_cap: usize,
) -> Result<Outcomes, NetError> {
    let mut outcomes: Outcomes = (0..state.flow_count()).map(|f| (!state.is_complete(f)).then_some(FailureKind::DeadEnd)).collect();
    for _ in 0..rounds {
        for f in reestablish_order(state) {
            state.tear_down(f)?;
            outcomes[f] = match build_route(state, f, policy, hop_cap) {
                Ok(_) => None,
                Err(RouteError::Failed { kind, .. }) => Some(kind),
                Err(RouteError::Net(e)) => return Err(e),
            };
        }
    }
    Ok(outcomes)
}

/// Initial ascending-id establishment followed by `rounds` re-establishment rounds.
pub fn route_all(state: &mut NetworkState, policy: &mut dyn StepPolicy, rounds: usize, hop_cap: usize) -> Result<Outcomes, NetError> {
    let first = establish_in_order(state, policy, hop_cap)?;
    if rounds == 0 {
        return Ok(first);
    }
    reestablish(state, policy, rounds, hop_cap)
}

/// Upper bound on evaluated route combinations.
pub const BRUTE_FORCE_CAP: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BruteForceError {
    #[error("instance needs {needed} combinations, above the cap of {cap}")]
    TooLarge { needed: u64, cap: u64 },
    #[error("no feasible routes")]
    Infeasible,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Every simple route of flow `f` with a half-duplex resource assignment.
pub fn enumerate_routes(state: &NetworkState, f: FlowId) -> Result<Vec<Route>, NetError> {
    let fl = state.flow(f)?;
    let relays: Vec<NodeId> = (0..state.topology().relay_count()).collect();
    let n_res = state.resources().len();
    let mut out = Vec::new();
    let mut path = vec![fl.source];
    fn paths(relays: &[NodeId], path: &mut Vec<NodeId>, dest: NodeId, n_res: usize, f: FlowId, out: &mut Vec<Route>) {
        path.push(dest);
        assign(path, n_res, f, &mut Vec::new(), out);
        path.pop();
        for &r in relays {
            if !path.contains(&r) {
                path.push(r);
                paths(relays, path, dest, n_res, f, out);
                path.pop();
            }
        }
    }
    fn assign(nodes: &[NodeId], n_res: usize, f: FlowId, res: &mut Vec<ResourceId>, out: &mut Vec<Route>) {
        if res.len() + 1 == nodes.len() {
            out.push(Route { flow: f, nodes: nodes.to_vec(), hop_resources: res.clone() });
            return;
        }
        for c in 0..n_res {
            if res.last() != Some(&c) {
                res.push(c);
                assign(nodes, n_res, f, res, out);
                res.pop();
            }
        }
    }
    paths(&relays, &mut path, fl.destination, n_res, f, &mut out);
    Ok(out)
}

/// Number of routes [`enumerate_routes`] yields for `relays` relays and `resources` resources.
pub fn route_count(relays: usize, resources: usize) -> u64 {
    if resources == 0 {
        return 0;
    }
    let mut total: u64 = 0;
    let mut arrangements: u64 = 1;
    for hops in 1..=relays as u64 + 1 {
        let assignments = resources as u64 * (resources as u64 - 1).saturating_pow(hops as u32 - 1);
        total = total.saturating_add(arrangements.saturating_mul(assignments));
        arrangements = arrangements.saturating_mul(relays as u64 + 1 - hops);
    }
    total
}

/// Maximum sum rate over all feasible route combinations of every flow,
/// under the state's interference mode. The state's committed routes are
/// ignored.
pub fn brute_force_optimal(state: &NetworkState, cap: u64) -> Result<(Vec<Route>, f64), BruteForceError> {
    let per_flow = route_count(state.topology().relay_count(), state.resources().len());
    let needed = (0..state.flow_count()).fold(1u64, |acc, _| acc.saturating_mul(per_flow));
    if needed > cap {
        return Err(BruteForceError::TooLarge { needed, cap });
    }
    let candidates: Vec<Vec<Route>> = (0..state.flow_count()).map(|f| enumerate_routes(state, f)).collect::<Result<_, _>>()?;
    let mut scratch = state.clone();
    scratch.clear_routes();
    let mut best: Option<(Vec<Route>, f64)> = None;
    let mut idx = vec![0usize; candidates.len()];
    if candidates.iter().any(|c| c.is_empty()) {
        return Err(BruteForceError::Infeasible);
    }
    loop {
        for (f, &i) in idx.iter().enumerate() {
            scratch.set_route(candidates[f][i].clone())?;
        }
        if scratch.validate().is_empty() {
            let total = scratch.achieved_sum_rate();
            if best.as_ref().is_none_or(|(_, b)| total > *b) {
                best = Some((scratch.routes().to_vec(), total));
            }
        }
        let mut k = 0;
        while k < idx.len() {
            idx[k] += 1;
            if idx[k] < candidates[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            break;
        }
    }
    best.ok_or(BruteForceError::Infeasible)
}
