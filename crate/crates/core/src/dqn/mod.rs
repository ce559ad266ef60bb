//! The routing agent: state features, dueling Q-network, replay memory,
//! ε-greedy action selection, training loop and checkpoints.
//!
//! One network serves every node, resource and flow. For each resource the
//! frontier builds a `5·E_nei` state vector over its neighbor set and the
//! network scores each neighbor; the agent transmits to the best
//! (neighbor, resource) pair overall. The regression target of a decision is
//! the bottleneck rate its completed route achieved, so there is no
//! bootstrapping and no target network.

pub mod agent;
pub mod checkpoint;
pub mod features;
pub mod qnet;
pub mod replay;
pub mod train;

pub use agent::{act, epsilon, Decision, DqnPolicy};
pub use checkpoint::{Checkpoint, CheckpointError, TrainingState};
pub use features::{featurize, raw_features, FeatureScaling, RawFeatures, StateVector};
pub use qnet::{Adam, QNet, QNetShape};
pub use replay::{record_route, Experience, PendingStep, ReplayBuffer};
pub use train::{episode_topology_seed, EpisodeLog, ResumeError, TrainConfig, Trainer};
