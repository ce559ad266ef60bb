//! Scenario configuration and the train / eval / sweep / mobility commands.
//!
//! A scenario is a TOML file; see `docs/FORMATS.md` for the schema and the
//! CSV files each command writes. Every scheme in a run faces the same
//! topology seeds. Per-seed work runs on a rayon pool and results are
//! gathered in seed order, so the thread count never changes the output.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::Baseline;
use crate::channel::{ChannelModel, GainGrid, GainTable, GridParseError, PathLoss, ResourceSet, Technology};
use crate::dqn::{Checkpoint, CheckpointError, DqnPolicy, EpisodeLog, FeatureScaling, QNet, ResumeError, TrainConfig, Trainer};
use crate::geometry::Area;
use crate::mobility::{run_mobility_experiment, MobilityConfig};
use crate::netmodel::{InterferenceMode, NetError, NetworkState, NoiseMode, RadioParams, Topology};
use crate::router::{default_hop_cap, route_all, BaselinePolicy, StepPolicy};
use crate::selection::NeighborStrategy;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("gain grid: {0}")]
    Grid(#[from] GridParseError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot resume: {0}")]
    Resume(#[from] ResumeError),
    #[error("scheme `dqn` needs a checkpoint")]
    MissingCheckpoint,
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// A routing scheme: the learned agent or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Dqn,
    Baseline(Baseline),
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Dqn => "dqn",
            Scheme::Baseline(b) => b.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        if name == "dqn" {
            return Some(Scheme::Dqn);
        }
        Baseline::from_name(name).map(Scheme::Baseline)
    }
}

impl TryFrom<String> for Scheme {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Scheme::from_name(&s).ok_or_else(|| {
            let names: Vec<&str> = std::iter::once("dqn").chain(Baseline::ALL.iter().map(|b| b.name())).collect();
            format!("unknown scheme `{s}`, expected one of {}", names.join(", "))
        })
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologyConfig {
    pub center_freq_hz: f64,
    #[serde(default = "one")]
    pub subbands: usize,
    pub exponent: f64,
    /// Loss at 1 m; free-space loss at the center frequency when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_loss_db: Option<f64>,
    #[serde(default)]
    pub shadowing_sigma_db: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub relays: usize,
    pub flows: usize,
    pub tx_power_dbm: f64,
    pub noise_mode: NoiseMode,
    /// dBm/MHz in `density` mode, dBm in `total` mode.
    pub noise_dbm: f64,
    pub interference: InterferenceMode,
    /// Gain file replacing the path-loss model; topology node `k` is grid node `k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_grid: Option<PathBuf>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width_m: 2000.0,
            height_m: 2000.0,
            relays: 27,
            flows: 2,
            tx_power_dbm: 0.0,
            noise_mode: NoiseMode::Density,
            noise_dbm: -110.0,
            interference: InterferenceMode::Full,
            gain_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub e_nei: usize,
    pub strategy: NeighborStrategy,
    pub policy: Scheme,
    /// Schemes evaluated next to `policy`.
    pub baselines: Vec<Scheme>,
    /// Re-establishment rounds after the initial pass.
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop_cap: Option<usize>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            e_nei: 10,
            strategy: NeighborStrategy::Rate,
            policy: Scheme::Dqn,
            baselines: Baseline::ALL.iter().copied().map(Scheme::Baseline).collect(),
            rounds: 4,
            hop_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: usize,
    pub first_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: 1000, first_seed: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Subbands per technology, applied to every technology.
    Subbands,
    RelayCount,
    /// Number of technologies kept, from the top of the list.
    ResourceCount,
    FlowCount,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Subbands => "subbands",
            SweepAxis::RelayCount => "relay_count",
            SweepAxis::ResourceCount => "resource_count",
            SweepAxis::FlowCount => "flow_count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    pub technologies: Vec<TechnologyConfig>,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub features: FeatureScaling,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub mobility: MobilityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// The seven technologies of the desk-scale path-loss environment.
pub fn default_technologies() -> Vec<TechnologyConfig> {
    [(40e6, 2.8), (80e6, 2.8), (200e6, 3.0), (400e6, 3.0), (800e6, 3.0), (2e9, 3.2), (3e9, 3.3)]
        .iter()
        .map(|&(f, n)| TechnologyConfig {
            center_freq_hz: f,
            subbands: 1,
            exponent: n,
            ref_loss_db: None,
            shadowing_sigma_db: 0.0,
        })
        .collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            technologies: default_technologies(),
            routing: RoutingConfig::default(),
            features: FeatureScaling::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            mobility: MobilityConfig::default(),
            sweep: None,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ExperimentError::Config(msg()))
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    check(v.is_finite() && v > 0.0, || format!("{what} must be a positive number, got {v}"))
}

fn finite(v: f64, what: &str) -> Result<()> {
    check(v.is_finite(), || format!("{what} must be finite, got {v}"))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text)?;
        if let (Some(grid), Some(dir)) = (cfg.network.gain_grid.as_mut(), path.parent()) {
            if grid.is_relative() {
                *grid = dir.join(&*grid);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        positive(n.width_m, "network.width_m")?;
        positive(n.height_m, "network.height_m")?;
        check(n.flows >= 1, || "network.flows must be at least 1".into())?;
        finite(n.tx_power_dbm, "network.tx_power_dbm")?;
        finite(n.noise_dbm, "network.noise_dbm")?;
        check(!self.technologies.is_empty(), || "at least one [[technologies]] entry is required".into())?;
        for (i, t) in self.technologies.iter().enumerate() {
            positive(t.center_freq_hz, &format!("technologies[{i}].center_freq_hz"))?;
            positive(t.exponent, &format!("technologies[{i}].exponent"))?;
            check(t.subbands >= 1, || format!("technologies[{i}].subbands must be at least 1"))?;
            if let Some(r) = t.ref_loss_db {
                finite(r, &format!("technologies[{i}].ref_loss_db"))?;
            }
            check(t.shadowing_sigma_db.is_finite() && t.shadowing_sigma_db >= 0.0, || {
                format!("technologies[{i}].shadowing_sigma_db must be non-negative")
            })?;
        }
        let r = &self.routing;
        check(r.e_nei >= 1, || "routing.e_nei must be at least 1".into())?;
        if let Some(cap) = r.hop_cap {
            check(cap >= 1, || "routing.hop_cap must be at least 1".into())?;
        }
        let f = &self.features;
        for (v, what) in [
            (f.gain_scale_db, "features.gain_scale_db"),
            (f.interference_scale_db, "features.interference_scale_db"),
            (f.rate_scale_bps, "features.rate_scale_bps"),
            (f.reward_scale_bps, "features.reward_scale_bps"),
        ] {
            positive(v, what)?;
        }
        let t = &self.train;
        check(t.batch_size >= 1, || "train.batch_size must be at least 1".into())?;
        check(t.replay_capacity >= t.batch_size, || "train.replay_capacity must hold at least one batch".into())?;
        positive(t.learning_rate, "train.learning_rate")?;
        check(!t.trunk.is_empty(), || "train.trunk needs at least one layer".into())?;
        check(t.trunk.iter().chain(&t.value).chain(&t.advantage).all(|&w| w > 0), || {
            "train layer widths must be positive".into()
        })?;
        check(self.eval.seeds >= 1, || "eval.seeds must be at least 1".into())?;
        let m = &self.mobility;
        check(m.max_speed.is_finite() && m.max_speed >= 0.0, || "mobility.max_speed must be non-negative".into())?;
        check(m.horizon >= 1, || "mobility.horizon must be at least 1".into())?;
        check(m.interval >= 1, || "mobility.interval must be at least 1".into())?;
        if let Some(s) = &self.sweep {
            check(!s.values.is_empty(), || "sweep.values must not be empty".into())?;
            for &v in &s.values {
                match s.axis {
                    SweepAxis::Subbands | SweepAxis::FlowCount => {
                        check(v >= 1, || format!("sweep value {v} must be at least 1"))?
                    }
                    SweepAxis::ResourceCount => check(v >= 1 && v <= self.technologies.len(), || {
                        format!("resource_count {v} outside 1..={}", self.technologies.len())
                    })?,
                    SweepAxis::RelayCount => {}
                }
            }
        }
        Ok(())
    }

    /// The policy followed by the baselines, without duplicates.
    pub fn schemes(&self) -> Vec<Scheme> {
        let mut out = vec![self.routing.policy];
        for &s in &self.routing.baselines {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.eval.seeds as u64).map(|i| self.eval.first_seed + i).collect()
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: usize) -> Self {
        let mut c = self.clone();
        match axis {
            SweepAxis::Subbands => c.technologies.iter_mut().for_each(|t| t.subbands = value),
            SweepAxis::RelayCount => c.network.relays = value,
            SweepAxis::ResourceCount => c.technologies.truncate(value),
            SweepAxis::FlowCount => c.network.flows = value,
        }
        c
    }
}

/// A validated scenario with its derived radio objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub resources: Arc<ResourceSet>,
    pub model: ChannelModel,
    pub radio: RadioParams,
    pub grid: Option<Arc<GainGrid>>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let techs: Vec<Technology> = config
            .technologies
            .iter()
            .map(|t| Technology { center_freq_hz: t.center_freq_hz, subbands: t.subbands })
            .collect();
        let resources = Arc::new(ResourceSet::from_technologies(&techs).map_err(NetError::from)?);
        let model = ChannelModel::new(
            config
                .technologies
                .iter()
                .map(|t| PathLoss {
                    ref_loss_db: t.ref_loss_db,
                    shadowing_sigma_db: t.shadowing_sigma_db,
                    ..PathLoss::free_space(t.exponent)
                })
                .collect(),
        );
        let n = &config.network;
        let radio = RadioParams::from_dbm(n.tx_power_dbm, n.noise_mode, n.noise_dbm);
        let grid = match &n.gain_grid {
            None => None,
            Some(path) => {
                let g = GainGrid::load(BufReader::new(File::open(path)?))?;
                let needed = n.relays + 2 * n.flows;
                check(g.nodes() >= needed, || format!("gain grid has {} nodes, scenario needs {needed}", g.nodes()))?;
                check(g.resources() == resources.len(), || {
                    format!("gain grid has {} resources, scenario has {}", g.resources(), resources.len())
                })?;
                Some(Arc::new(g))
            }
        };
        Ok(Self { config, resources, model, radio, grid })
    }

    pub fn area(&self) -> Area {
        Area::new(self.config.network.width_m, self.config.network.height_m)
    }

    /// The network drawn for `topology_seed`, with no routes.
    pub fn state(&self, topology_seed: u64) -> std::result::Result<NetworkState, NetError> {
        let n = &self.config.network;
        let topo = Topology::random(n.relays, n.flows, self.area(), topology_seed);
        let mut state = match &self.grid {
            None => NetworkState::with_model(topo, Arc::clone(&self.resources), &self.model, self.radio)?,
            Some(grid) => {
                let map: Vec<usize> = (0..topo.node_count()).collect();
                let gains = GainTable::from_grid(grid, &map, &self.resources)?;
                NetworkState::new(topo, Arc::clone(&self.resources), gains, self.radio)?
            }
        };
        state.set_interference(n.interference);
        Ok(state)
    }

    pub fn hop_cap(&self, state: &NetworkState) -> usize {
        self.config.routing.hop_cap.unwrap_or_else(|| default_hop_cap(state))
    }

    pub fn policy<'a>(&self, scheme: Scheme, net: Option<&'a QNet>) -> Result<Box<dyn StepPolicy + 'a>> {
        let r = &self.config.routing;
        Ok(match scheme {
            Scheme::Baseline(b) => Box::new(BaselinePolicy { scheme: b, strategy: r.strategy, e_nei: r.e_nei }),
            Scheme::Dqn => {
                let net = net.ok_or(ExperimentError::MissingCheckpoint)?;
                let mut p = DqnPolicy::greedy(net, self.config.features, r.strategy);
                p.include_destination = self.config.train.include_destination;
                Box::new(p)
            }
        })
    }

    /// Routes every flow of `topology_seed` with `scheme`; returns the sum rate.
    pub fn sum_rate(&self, scheme: Scheme, net: Option<&QNet>, topology_seed: u64) -> Result<f64> {
        let mut state = self.state(topology_seed)?;
        let cap = self.hop_cap(&state);
        let mut policy = self.policy(scheme, net)?;
        route_all(&mut state, policy.as_mut(), self.config.routing.rounds, cap)?;
        Ok(state.achieved_sum_rate())
    }

    pub fn trainer(&self) -> Trainer {
        Trainer::new(self.config.train.clone(), self.config.features, self.config.routing.strategy, self.config.routing.e_nei)
    }

    /// Trains (or continues) an agent over random topologies of this scenario.
    pub fn train(&self, mut trainer: Trainer, log: impl FnMut(&EpisodeLog)) -> Result<Trainer> {
        trainer.train(&|seed| self.state(seed), log)?;
        Ok(trainer)
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool for `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub topology_seed: u64,
    pub scheme: Scheme,
    pub sum_rate_bps: f64,
}

/// Sum rate of every scheme on every seed, ordered by seed then scheme.
pub fn evaluate(scenario: &Scenario, schemes: &[Scheme], net: Option<&QNet>, seeds: &[u64]) -> Result<Vec<EvalRow>> {
    let per_seed: Vec<Result<Vec<EvalRow>>> = seeds
        .par_iter()
        .map(|&seed| {
            schemes
                .iter()
                .map(|&scheme| {
                    Ok(EvalRow { topology_seed: seed, scheme, sum_rate_bps: scenario.sum_rate(scheme, net, seed)? })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(seeds.len() * schemes.len());
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Rates of one scheme in seed order.
pub fn rates_of(rows: &[EvalRow], scheme: Scheme) -> Vec<f64> {
    rows.iter().filter(|r| r.scheme == scheme).map(|r| r.sum_rate_bps).collect()
}

/// Sorted rates with empirical CDF values `i/n`, `i = 1..=n`.
pub fn cdf(rates: &[f64]) -> Vec<(f64, f64)> {
    let mut v = rates.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, r)| (r, (i + 1) as f64 / n)).collect()
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

pub struct TrainOutput {
    pub trainer: Trainer,
    pub checkpoint: PathBuf,
    pub loss_rows: usize,
}

/// Trains an agent, writing `checkpoint`, `episodes.csv` and `loss.csv` in `out`.
///
/// With `resume`, training continues from that checkpoint and the logs are
/// appended to.
pub fn cmd_train(scenario: &Scenario, out: &Path, checkpoint: &Path, resume: Option<&Path>) -> Result<TrainOutput> {
    let trainer = match resume {
        None => scenario.trainer(),
        Some(p) => Trainer::resume(scenario.config.train.clone(), scenario.config.routing.strategy, Checkpoint::load(p)?)?,
    };
    let open = |name: &str| -> Result<(csv::Writer<File>, bool)> {
        let path = out_file(out, name)?;
        let fresh = resume.is_none() || !path.exists();
        let file = std::fs::OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(path)?;
        Ok((csv::WriterBuilder::new().has_headers(false).from_writer(file), fresh))
    };
    let (mut episodes, fresh) = open("episodes.csv")?;
    if fresh {
        episodes.write_record(["episode", "epsilon", "reward_bps", "hops", "stored"])?;
    }
    let (mut losses, fresh) = open("loss.csv")?;
    if fresh {
        losses.write_record(["episode", "step", "loss"])?;
    }
    let mut loss_rows = 0;
    let mut failure: Option<csv::Error> = None;
    let trainer = scenario.train(trainer, |l| {
        if failure.is_some() {
            return;
        }
        let mut write = || -> std::result::Result<(), csv::Error> {
            episodes.serialize((l.episode, l.epsilon, l.reward_bps, l.hops, l.stored))?;
            for (i, x) in l.losses.iter().enumerate() {
                losses.serialize((l.episode, i, x))?;
            }
            Ok(())
        };
        match write() {
            Ok(()) => loss_rows += l.losses.len(),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    episodes.flush()?;
    losses.flush()?;
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Checkpoint::from_trainer(&trainer).save(checkpoint)?;
    Ok(TrainOutput { trainer, checkpoint: checkpoint.to_path_buf(), loss_rows })
}

pub fn load_net(checkpoint: Option<&Path>, scenario: &Scenario) -> Result<Option<QNet>> {
    let Some(path) = checkpoint else {
        return Ok(None);
    };
    let ck = Checkpoint::load(path)?;
    let actions = ck.net.shape().actions;
    check(actions == scenario.config.routing.e_nei, || {
        format!("checkpoint was trained with e_nei = {actions}, scenario uses {}", scenario.config.routing.e_nei)
    })?;
    Ok(Some(ck.net))
}

fn schemes_for(scenario: &Scenario, net: Option<&QNet>) -> Result<Vec<Scheme>> {
    let schemes = scenario.config.schemes();
    if net.is_none() && schemes.contains(&Scheme::Dqn) {
        return Err(ExperimentError::MissingCheckpoint);
    }
    Ok(schemes)
}

/// Writes `eval.csv` and one `cdf_<scheme>.csv` per scheme.
pub fn cmd_eval(scenario: &Scenario, net: Option<&QNet>, seeds: &[u64], out: &Path) -> Result<Vec<EvalRow>> {
    let schemes = schemes_for(scenario, net)?;
    let rows = evaluate(scenario, &schemes, net, seeds)?;
    let mut w = csv::Writer::from_path(out_file(out, "eval.csv")?)?;
    w.write_record(["topology_seed", "scheme", "sum_rate_bps"])?;
    for r in &rows {
        w.serialize((r.topology_seed, r.scheme.name(), r.sum_rate_bps))?;
    }
    w.flush()?;
    for &s in &schemes {
        let mut w = csv::Writer::from_path(out_file(out, &format!("cdf_{}.csv", s.name()))?)?;
        w.write_record(["sum_rate_bps", "cdf"])?;
        for (r, p) in cdf(&rates_of(&rows, s)) {
            w.serialize((r, p))?;
        }
        w.flush()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub scheme: Scheme,
    pub mean_bps: f64,
    pub stderr_bps: f64,
}

/// One evaluation per axis value on shared seeds; writes `sweep.csv`.
pub fn cmd_sweep(scenario: &Scenario, net: Option<&QNet>, seeds: &[u64], out: &Path) -> Result<Vec<SweepRow>> {
    let sweep = scenario.config.sweep.clone().ok_or_else(|| ExperimentError::Config("no [sweep] section".into()))?;
    let schemes = schemes_for(scenario, net)?;
    let mut table = Vec::new();
    for &value in &sweep.values {
        let sc = Scenario::new(scenario.config.with_axis(sweep.axis, value))?;
        let rows = evaluate(&sc, &schemes, net, seeds)?;
        for &s in &schemes {
            let (mean_bps, stderr_bps) = mean_stderr(&rates_of(&rows, s));
            table.push(SweepRow { value, scheme: s, mean_bps, stderr_bps });
        }
    }
    let mut w = csv::Writer::from_path(out_file(out, "sweep.csv")?)?;
    w.write_record([sweep.axis.name(), "scheme", "mean_sum_rate_bps", "stderr_bps"])?;
    for r in &table {
        w.serialize((r.value, r.scheme.name(), r.mean_bps, r.stderr_bps))?;
    }
    w.flush()?;
    Ok(table)
}

/// Per-second series of one scheme on one topology.
pub fn mobility_series(scenario: &Scenario, scheme: Scheme, net: Option<&QNet>, seed: u64) -> Result<Vec<f64>> {
    let state = scenario.state(seed)?;
    let cap = scenario.hop_cap(&state);
    let mut policy = scenario.policy(scheme, net)?;
    if scenario.grid.is_some() {
        return Err(ExperimentError::Config("mobility needs the path-loss model, not a gain grid".into()));
    }
    let cfg = scenario.config.mobility;
    Ok(run_mobility_experiment(state, &scenario.model, policy.as_mut(), &cfg, seed, scenario.config.routing.rounds, cap)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityRow {
    pub t: usize,
    pub scheme: Scheme,
    pub mean_bps: f64,
    pub stderr_bps: f64,
}

/// Mean sum rate per second across seeds; writes `mobility.csv`.
pub fn cmd_mobility(scenario: &Scenario, net: Option<&QNet>, seeds: &[u64], out: &Path) -> Result<Vec<MobilityRow>> {
    let schemes = schemes_for(scenario, net)?;
    let horizon = scenario.config.mobility.horizon;
    let mut table = Vec::new();
    for &s in &schemes {
        let runs: Vec<Result<Vec<f64>>> = seeds.par_iter().map(|&seed| mobility_series(scenario, s, net, seed)).collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        for t in 0..horizon {
            let at: Vec<f64> = runs.iter().map(|r| r[t]).collect();
            let (mean_bps, stderr_bps) = mean_stderr(&at);
            table.push(MobilityRow { t, scheme: s, mean_bps, stderr_bps });
        }
    }
    let mut w = csv::Writer::from_path(out_file(out, "mobility.csv")?)?;
    w.write_record(["t_s", "scheme", "mean_sum_rate_bps", "stderr_bps"])?;
    for r in &table {
        w.serialize((r.t, r.scheme.name(), r.mean_bps, r.stderr_bps))?;
    }
    w.flush()?;
    Ok(table)
}

/// Writes a summary of means per scheme to `w`.
pub fn print_means(rows: &[EvalRow], schemes: &[Scheme], w: &mut impl Write) -> std::io::Result<()> {
    for &s in schemes {
        let (m, e) = mean_stderr(&rates_of(rows, s));
        writeln!(w, "{:<24} {:>10.3} Mbps  ± {:.3}", s.name(), m / 1e6, e / 1e6)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.network.relays = 8;
        c.network.width_m = 1000.0;
        c.network.height_m = 1000.0;
        c.technologies.truncate(3);
        c.routing.e_nei = 4;
        c.routing.rounds = 1;
        c.routing.policy = Scheme::Baseline(Baseline::BestDirection);
        c.train = TrainConfig {
            episodes: 6,
            batch_size: 4,
            replay_capacity: 64,
            learning_rate: 1e-3,
            trunk: vec![8],
            value: vec![4],
            advantage: vec![4],
            ..TrainConfig::default()
        };
        c.eval.seeds = 4;
        c.mobility.horizon = 3;
        c.mobility.mobile = 4;
        c
    }

    #[test]
    fn config_round_trips() {
        let mut c = small();
        c.sweep = Some(SweepConfig { axis: SweepAxis::Subbands, values: vec![1, 2, 5] });
        c.technologies[1].ref_loss_db = Some(38.5);
        c.technologies[2].shadowing_sigma_db = 4.0;
        c.network.gain_grid = Some(PathBuf::from("grid.txt"));
        let text = c.to_toml();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let d = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c = ScenarioConfig::from_toml(
            "[[technologies]]\ncenter_freq_hz = 4e8\nexponent = 3.0\n[routing]\npolicy = \"widest_path\"\n",
        )
        .unwrap();
        assert_eq!(c.technologies[0].subbands, 1);
        assert_eq!(c.network, NetworkConfig::default());
        assert_eq!(c.routing.policy, Scheme::Baseline(Baseline::WidestPath));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let base = "[[technologies]]\ncenter_freq_hz = 4e8\nexponent = 3.0\n";
        let cases = [
            format!("{base}[routing]\npolicy = \"shortest\"\n"),
            format!("{base}[network]\nwidth_m = -5.0\n"),
            format!("{base}[network]\nnoise_mode = \"loud\"\n"),
            format!("{base}[network]\nrelay = 3\n"),
            format!("{base}[routing]\ne_nei = 0\n"),
            format!("{base}[train]\nlearning_rate = 0.0\n"),
            format!("{base}[mobility]\nmodel = \"teleport\"\n"),
            format!("{base}[sweep]\naxis = \"resource_count\"\nvalues = [2]\n"),
            "[[technologies]]\ncenter_freq_hz = 4e8\nexponent = 3.0\nsubbands = 0\n".to_string(),
            "technologies = []\n".to_string(),
        ];
        for text in &cases {
            assert!(ScenarioConfig::from_toml(text).is_err(), "{text}");
        }
        let err = ScenarioConfig::from_toml(&cases[0]).unwrap_err().to_string();
        assert!(err.contains("unknown scheme `shortest`"), "{err}");
    }

    #[test]
    fn axis_overrides() {
        let c = small();
        assert!(c.with_axis(SweepAxis::Subbands, 5).technologies.iter().all(|t| t.subbands == 5));
        assert_eq!(c.with_axis(SweepAxis::RelayCount, 45).network.relays, 45);
        assert_eq!(c.with_axis(SweepAxis::ResourceCount, 2).technologies.len(), 2);
        assert_eq!(c.with_axis(SweepAxis::FlowCount, 3).network.flows, 3);
    }

    #[test]
    fn eval_is_ordered_and_thread_independent() {
        let sc = Scenario::new(small()).unwrap();
        let seeds = sc.config.seeds();
        let schemes = sc.config.schemes();
        assert_eq!(schemes.len(), 6);
        let one = with_threads(Some(1), || evaluate(&sc, &schemes, None, &seeds)).unwrap().unwrap();
        let many = with_threads(Some(4), || evaluate(&sc, &schemes, None, &seeds)).unwrap().unwrap();
        assert_eq!(one, many);
        for (i, r) in one.iter().enumerate() {
            assert_eq!(r.topology_seed, seeds[i / schemes.len()]);
            assert_eq!(r.scheme, schemes[i % schemes.len()]);
            assert_eq!(r.sum_rate_bps, sc.sum_rate(r.scheme, None, r.topology_seed).unwrap());
        }
    }

    #[test]
    fn dqn_without_checkpoint_is_an_error() {
        let mut c = small();
        c.routing.policy = Scheme::Dqn;
        let sc = Scenario::new(c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_eval(&sc, None, &[1], dir.path()), Err(ExperimentError::MissingCheckpoint)));
    }

    #[test]
    fn cdf_is_sorted_with_unit_top() {
        let c = cdf(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, e) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_grid_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.technologies.truncate(1);
        let n = c.network.relays + 2 * c.network.flows;
        let mut text = format!("nodes={n} resources=1\n");
        for i in 0..n {
            for j in (i + 1)..n {
                text.push_str(&format!("{i} {j} 0 {:e} 0\n", 1e-6 / (1 + i + j) as f64));
            }
        }
        std::fs::write(dir.path().join("g.txt"), text).unwrap();
        c.network.gain_grid = Some(PathBuf::from("g.txt"));
        std::fs::write(dir.path().join("s.toml"), c.to_toml()).unwrap();
        let loaded = ScenarioConfig::load(&dir.path().join("s.toml")).unwrap();
        let sc = Scenario::new(loaded).unwrap();
        let s = sc.state(5).unwrap();
        assert_eq!(s.gains().get(0, 3, 0).norm_sqr(), (1e-6f64 / 4.0).powi(2));
        // too few nodes
        c.network.relays = 40;
        c.network.gain_grid = Some(dir.path().join("g.txt"));
        assert!(Scenario::new(c).is_err());
    }
}
