//! Episode generation and the training loop.
//!
//! Every episode draws a fresh random network. All flows but the last are
//! routed by closest-to-destination; the last flow is routed by the agent
//! with ε-greedy exploration, and each of its decisions is stored with the
//! route's final bottleneck rate as regression target.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::Baseline;
use crate::channel::mix_seed;
use crate::netmodel::{NetError, NetworkState};
use crate::router::{build_route, default_hop_cap, BaselinePolicy, RouteError};
use crate::selection::NeighborStrategy;

use super::agent::{epsilon, DqnPolicy};
use super::checkpoint::Checkpoint;
use super::features::FeatureScaling;
use super::qnet::{Adam, QNet, QNetShape};
use super::replay::{record_route, ReplayBuffer};

const INIT_STREAM: u64 = 0x1417;
const EPISODE_STREAM: u64 = 0xE915;
const TOPOLOGY_STREAM: u64 = 0x7090;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total episodes `T`; also the length of the ε schedule.
    pub episodes: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    /// Gradient steps per episode once the buffer holds a batch.
    pub steps_per_episode: usize,
    pub seed: u64,
    /// Keep each flow's destination among the agent's candidates.
    pub include_destination: bool,
    pub trunk: Vec<usize>,
    pub value: Vec<usize>,
    pub advantage: Vec<usize>,
    /// Temporal-difference parameters; the regression target does not use them.
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 30_000,
            batch_size: 64,
            replay_capacity: 100_000,
            learning_rate: 1e-4,
            steps_per_episode: 1,
            seed: 0,
            include_destination: true,
            trunk: vec![300, 300, 300],
            value: vec![300, 150],
            advantage: vec![300, 150],
            gamma: 0.0,
            alpha: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self, e_nei: usize) -> QNetShape {
        QNetShape {
            input: 5 * e_nei,
            trunk: self.trunk.clone(),
            value: self.value.clone(),
            advantage: self.advantage.clone(),
            actions: e_nei,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResumeError {
    #[error("checkpoint holds no training state")]
    NoTrainingState,
    #[error("checkpoint {0} differs from the configuration")]
    Mismatch(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub epsilon: f64,
    /// Bottleneck rate of the agent's flow, 0 if it failed.
    pub reward_bps: f64,
    pub hops: usize,
    pub stored: usize,
    /// Loss of each gradient step taken after the episode.
    pub losses: Vec<f64>,
}

/// Network, optimizer and replay memory of an agent under training.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub scaling: FeatureScaling,
    pub strategy: NeighborStrategy,
    pub net: QNet,
    pub opt: Adam,
    pub replay: ReplayBuffer,
    /// Index of the next episode to run.
    pub episode: u64,
}

/// Seed of the network drawn for `episode` of a run seeded with `seed`.
pub fn episode_topology_seed(seed: u64, episode: u64) -> u64 {
    mix_seed(&[seed, TOPOLOGY_STREAM, episode])
}

impl Trainer {
    pub fn new(config: TrainConfig, scaling: FeatureScaling, strategy: NeighborStrategy, e_nei: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, INIT_STREAM]));
        let net = QNet::new(config.shape(e_nei), &mut rng);
        let opt = Adam::new(net.param_count(), config.learning_rate);
        let replay = ReplayBuffer::new(config.replay_capacity);
        Self { config, scaling, strategy, net, opt, replay, episode: 0 }
    }

    /// Continues the run saved in `checkpoint`. The network shape, seed and
    /// episode count of `config` must match the saved run.
    pub fn resume(config: TrainConfig, strategy: NeighborStrategy, checkpoint: Checkpoint) -> Result<Self, ResumeError> {
        let training = checkpoint.training.ok_or(ResumeError::NoTrainingState)?;
        let shape = config.shape(checkpoint.net.shape().actions);
        if &shape != checkpoint.net.shape() {
            return Err(ResumeError::Mismatch("network shape"));
        }
        if training.seed != config.seed {
            return Err(ResumeError::Mismatch("seed"));
        }
        if training.episodes != config.episodes {
            return Err(ResumeError::Mismatch("episode count"));
        }
        if training.replay.capacity() != config.replay_capacity {
            return Err(ResumeError::Mismatch("replay capacity"));
        }
        let mut opt = training.opt;
        opt.lr = config.learning_rate;
        Ok(Self {
            config,
            scaling: checkpoint.scaling,
            strategy,
            net: checkpoint.net,
            opt,
            replay: training.replay,
            episode: training.next_episode,
        })
    }

    pub fn e_nei(&self) -> usize {
        self.net.shape().actions
    }

    /// One gradient step on a uniformly sampled batch. Returns the batch loss.
    pub fn train_step(&mut self, rng: &mut ChaCha8Rng) -> Option<f64> {
        if self.replay.len() < self.config.batch_size || self.replay.is_empty() {
            return None;
        }
        let batch = self.replay.sample(self.config.batch_size, rng);
        let width = self.net.shape().input;
        let mut x = Array2::zeros((batch.len(), width));
        let mut actions = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (b, e) in batch.iter().enumerate() {
            x.row_mut(b).assign(&ndarray::ArrayView1::from(&e.state));
            actions.push(e.action);
            targets.push(e.reward / self.scaling.reward_scale_bps);
        }
        let (loss, grad) = self.net.loss_and_grad(x.view(), &actions, &targets);
        self.opt.step(self.net.params_mut(), &grad);
        Some(loss)
    }

    /// Runs the next episode on the network `env` builds from a topology seed.
    pub fn run_episode<E>(&mut self, env: &E) -> Result<EpisodeLog, NetError>
    where
        E: Fn(u64) -> Result<NetworkState, NetError>,
    {
        let t = self.episode;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, EPISODE_STREAM, t]));
        let mut state = env(episode_topology_seed(self.config.seed, t))?;
        let flows = state.flow_count();
        let hop_cap = default_hop_cap(&state);
        let e_nei = self.e_nei();
        let mut lead = BaselinePolicy { scheme: Baseline::ClosestToDestination, strategy: self.strategy, e_nei };
        for f in 0..flows.saturating_sub(1) {
            match build_route(&mut state, f, &mut lead, hop_cap) {
                Ok(_) | Err(RouteError::Failed { .. }) => {}
                Err(RouteError::Net(e)) => return Err(e),
            }
        }
        let eps = epsilon(t, self.config.episodes);
        let agent_flow = flows - 1;
        let mut policy = DqnPolicy {
            net: &self.net,
            scaling: self.scaling,
            strategy: self.strategy,
            include_destination: self.config.include_destination,
            epsilon: eps,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, EPISODE_STREAM, t, 1])),
            record: true,
            trajectory: Vec::new(),
        };
        let hops = match build_route(&mut state, agent_flow, &mut policy, hop_cap) {
            Ok(route) => route.hop_count(),
            Err(RouteError::Failed { .. }) => 0,
            Err(RouteError::Net(e)) => return Err(e),
        };
        let trajectory = policy.take_trajectory();
        let reward_bps = state.route_rate(agent_flow).unwrap_or(0.0);
        let stored = record_route(&mut self.replay, trajectory, &state, agent_flow, t);
        let losses = (0..self.config.steps_per_episode).filter_map(|_| self.train_step(&mut rng)).collect();
        self.episode += 1;
        Ok(EpisodeLog { episode: t, epsilon: eps, reward_bps, hops, stored, losses })
    }

    /// Runs episodes until `config.episodes` have been played.
    pub fn train<E, L>(&mut self, env: &E, mut log: L) -> Result<(), NetError>
    where
        E: Fn(u64) -> Result<NetworkState, NetError>,
        L: FnMut(&EpisodeLog),
    {
        while self.episode < self.config.episodes {
            let entry = self.run_episode(env)?;
            log(&entry);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, PathLoss, ResourceSet, Technology};
    use crate::geometry::Area;
    use crate::netmodel::{NoiseMode, RadioParams, Topology};
    use std::sync::Arc;

    fn env(seed: u64) -> Result<NetworkState, NetError> {
        let topo = Topology::random(8, 2, Area::new(1500.0, 1500.0), seed);
        let techs = [Technology { center_freq_hz: 80e6, subbands: 1 }, Technology { center_freq_hz: 800e6, subbands: 1 }];
        let set = Arc::new(ResourceSet::from_technologies(&techs).unwrap());
        let model = ChannelModel::uniform(2, PathLoss::free_space(3.0));
        NetworkState::with_model(topo, set, &model, RadioParams::from_dbm(0.0, NoiseMode::Density, -110.0))
    }

    fn tiny_config(episodes: u64) -> TrainConfig {
        TrainConfig {
            episodes,
            batch_size: 8,
            replay_capacity: 500,
            learning_rate: 1e-3,
            trunk: vec![16],
            value: vec![8],
            advantage: vec![8],
            seed: 17,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rewards_match_recomputed_route_rate() {
        let mut t = Trainer::new(tiny_config(20), FeatureScaling::default(), NeighborStrategy::Rate, 4);
        for _ in 0..20 {
            let before = t.replay.len();
            let log = t.run_episode(&env).unwrap();
            assert_eq!(t.replay.len() - before, log.stored);
            for e in &t.replay.items()[before..] {
                assert_eq!(e.reward, log.reward_bps);
                assert_eq!(e.episode, log.episode);
            }
            if log.reward_bps > 0.0 {
                assert_eq!(log.stored, log.hops);
            }
        }
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut t = Trainer::new(tiny_config(30), FeatureScaling::default(), NeighborStrategy::Distance, 4);
            let mut losses = Vec::new();
            t.train(&env, |l| losses.extend(l.losses.iter().map(|x| x.to_bits()))).unwrap();
            (t.net.params().to_vec(), losses)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(la, lb);
        assert!(!la.is_empty());
    }

    #[test]
    fn split_training_equals_continuous() {
        let mut whole = Trainer::new(tiny_config(24), FeatureScaling::default(), NeighborStrategy::Rate, 3);
        whole.train(&env, |_| {}).unwrap();
        let mut part = Trainer::new(tiny_config(24), FeatureScaling::default(), NeighborStrategy::Rate, 3);
        for _ in 0..10 {
            part.run_episode(&env).unwrap();
        }
        let mut resumed = part.clone();
        resumed.train(&env, |_| {}).unwrap();
        assert_eq!(resumed.net.params(), whole.net.params());
    }

    #[test]
    fn resume_from_checkpoint_equals_continuous() {
        let cfg = tiny_config(24);
        let mut whole = Trainer::new(cfg.clone(), FeatureScaling::default(), NeighborStrategy::Rate, 3);
        whole.train(&env, |_| {}).unwrap();
        let mut part = Trainer::new(cfg.clone(), FeatureScaling::default(), NeighborStrategy::Rate, 3);
        for _ in 0..9 {
            part.run_episode(&env).unwrap();
        }
        let mut bytes = Vec::new();
        Checkpoint::from_trainer(&part).write(&mut bytes).unwrap();
        let ck = Checkpoint::read(&mut bytes.as_slice()).unwrap();
        let mut resumed = Trainer::resume(cfg.clone(), NeighborStrategy::Rate, ck.clone()).unwrap();
        assert_eq!(resumed.episode, 9);
        resumed.train(&env, |_| {}).unwrap();
        assert_eq!(resumed.net.params(), whole.net.params());
        assert_eq!(resumed.replay.items(), whole.replay.items());

        let other_seed = TrainConfig { seed: 18, ..cfg.clone() };
        assert_eq!(Trainer::resume(other_seed, NeighborStrategy::Rate, ck.clone()).unwrap_err(), ResumeError::Mismatch("seed"));
        let bare = Checkpoint { training: None, ..ck };
        assert_eq!(Trainer::resume(cfg, NeighborStrategy::Rate, bare).unwrap_err(), ResumeError::NoTrainingState);
    }

    #[test]
    fn one_loss_per_gradient_step() {
        let cfg = TrainConfig { steps_per_episode: 3, ..tiny_config(12) };
        let mut t = Trainer::new(cfg, FeatureScaling::default(), NeighborStrategy::Rate, 3);
        let mut steps = 0;
        t.train(&env, |l| steps += l.losses.len()).unwrap();
        assert_eq!(steps, t.opt.t as usize);
        assert!(steps > 0);
    }
}
