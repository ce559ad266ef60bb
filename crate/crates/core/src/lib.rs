//! Multi-flow routing for heterogeneous wireless networks.
//!
//! Every node carries several radio technologies, each split into subbands.
//! A route for each source/destination flow is built hop by hop: the frontier
//! node picks a candidate neighbor set, then jointly chooses the next hop and
//! the communication resource. Routes are scored by their bottleneck rate
//! under inter- and intra-flow interference.

pub mod baselines;
pub mod channel;
pub mod dqn;
pub mod experiment;
pub mod geometry;
pub mod mobility;
pub mod netmodel;
pub mod router;
pub mod selection;

pub use channel::{ChannelModel, CommResource, GainGrid, GainTable, PathLoss, ResourceId, ResourceSet, Technology};
pub use geometry::{Area, Point3};
pub use netmodel::{
    FlowId, InterferenceMode, LinkMeasurement, NetError, NetworkState, NodeId, NoiseMode, RadioParams, Route, Topology,
    Violation, ViolationKind,
};
