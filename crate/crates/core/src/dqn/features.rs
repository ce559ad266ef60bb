//! Per-resource state vectors seen by the agent at a frontier node.

use serde::{Deserialize, Serialize};

use crate::channel::ResourceId;
use crate::netmodel::{watts_to_dbm, FlowId, NetError, NetworkState, NodeId};
use crate::selection::NeighborSet;

pub const FEATURES_PER_NEIGHBOR: usize = 5;

/// Affine normalization of the raw features.
///
/// Distances are divided by the area diagonal and angles by π. Channel gain
/// and interference are taken in the log domain, then shifted and scaled;
/// zero interference maps to the floor. Rates are divided by `rate_scale_bps`
/// and rewards are regressed in units of `reward_scale_bps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureScaling {
    pub gain_offset_db: f64,
    pub gain_scale_db: f64,
    pub gain_floor_db: f64,
    pub interference_offset_dbm: f64,
    pub interference_scale_db: f64,
    pub interference_floor_dbm: f64,
    pub rate_scale_bps: f64,
    pub reward_scale_bps: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self {
            gain_offset_db: -100.0,
            gain_scale_db: 50.0,
            gain_floor_db: -250.0,
            interference_offset_dbm: -110.0,
            interference_scale_db: 50.0,
            interference_floor_dbm: -160.0,
            rate_scale_bps: 10e6,
            reward_scale_bps: 1e6,
        }
    }
}

/// The five raw features of one neighbor on one resource.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFeatures {
    /// Neighbor to destination, meters.
    pub distance_m: f64,
    /// Angle at the frontier between the destination and the neighbor.
    pub angle_rad: f64,
    /// `|h|` between frontier and neighbor.
    pub gain_abs: f64,
    /// Power from all committed transmissions arriving at the neighbor, watts.
    pub interference_w: f64,
    /// Frontier to neighbor rate under current interference, bits/s.
    pub rate_bps: f64,
}

impl RawFeatures {
    pub fn normalize(&self, scaling: &FeatureScaling, diagonal_m: f64) -> [f64; FEATURES_PER_NEIGHBOR] {
        let gain_db = (20.0 * self.gain_abs.log10()).max(scaling.gain_floor_db);
        let intf_dbm = if self.interference_w > 0.0 {
            watts_to_dbm(self.interference_w).max(scaling.interference_floor_dbm)
        } else {
            scaling.interference_floor_dbm
        };
        [
            self.distance_m / diagonal_m,
            self.angle_rad / std::f64::consts::PI,
            (gain_db - scaling.gain_offset_db) / scaling.gain_scale_db,
            (intf_dbm - scaling.interference_offset_dbm) / scaling.interference_scale_db,
            self.rate_bps / scaling.rate_scale_bps,
        ]
    }
}

pub fn raw_features(state: &NetworkState, f: FlowId, n: NodeId, c: ResourceId) -> Result<RawFeatures, NetError> {
    let topo = state.topology();
    let frontier = state.frontier(f)?;
    let dest = state.flow(f)?.destination;
    let fp = topo.position(frontier);
    Ok(RawFeatures {
        distance_m: topo.distance(n, dest),
        angle_rad: fp.angle_between(&topo.position(dest), &topo.position(n)),
        gain_abs: state.gains().get(frontier, n, c).norm(),
        interference_w: state.interference_at(n, c),
        rate_bps: state.link_rate(f, frontier, n, c)?,
    })
}

/// Normalized features of up to `e_nei` neighbors on resource `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub resource: ResourceId,
    /// `5·e_nei` values, neighbor-major; absent neighbors are zero.
    pub values: Vec<f64>,
    /// Whether slot `a` is a neighbor that may be reached on `resource`.
    pub mask: Vec<bool>,
}

pub fn featurize(
    state: &NetworkState,
    f: FlowId,
    neighbors: &NeighborSet,
    c: ResourceId,
    e_nei: usize,
    scaling: &FeatureScaling,
) -> Result<StateVector, NetError> {
    let diagonal = state.topology().area().diagonal();
    let mut values = vec![0.0; FEATURES_PER_NEIGHBOR * e_nei];
    let mut mask = vec![false; e_nei];
    for (slot, &n) in neighbors.neighbors.iter().take(e_nei).enumerate() {
        let raw = raw_features(state, f, n, c)?;
        values[slot * FEATURES_PER_NEIGHBOR..(slot + 1) * FEATURES_PER_NEIGHBOR]
            .copy_from_slice(&raw.normalize(scaling, diagonal));
        mask[slot] = state.valid_hop_resources(f, n).contains(&c);
    }
    Ok(StateVector { resource: c, values, mask })
}
