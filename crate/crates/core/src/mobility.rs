//! Relay mobility and time-stepped evaluation of a fixed routing policy.
//!
//! Time advances in whole seconds. At each decision instant every route is
//! torn down and rebuilt from current positions; between decisions routes
//! stay frozen while their rate is recomputed from the moved nodes.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{mix_seed, ChannelModel, GainTable};
use crate::geometry::{Area, Point3};
use crate::netmodel::{NetError, NetworkState, NodeId, Topology};
use crate::router::{route_all, StepPolicy};

const MOBILE_STREAM: u64 = 0x30B1;
const MOTION_STREAM: u64 = 0x30B2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityModel {
    RandomWalk,
    RandomWaypoint,
}

impl MobilityModel {
    pub const ALL: [MobilityModel; 2] = [MobilityModel::RandomWalk, MobilityModel::RandomWaypoint];

    pub fn name(self) -> &'static str {
        match self {
            MobilityModel::RandomWalk => "random_walk",
            MobilityModel::RandomWaypoint => "random_waypoint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobileNode {
    pub node: NodeId,
    pub position: Point3,
    /// Heading in radians; for the waypoint model, the heading of the last move.
    pub direction: f64,
    /// Speed of the last step in m/s.
    pub speed: f64,
    pub waypoint: Point3,
}

#[derive(Debug, Clone)]
pub struct MobilityState {
    pub model: MobilityModel,
    pub area: Area,
    pub max_speed: f64,
    pub nodes: Vec<MobileNode>,
    rng: ChaCha8Rng,
}

/// `count` relays drawn uniformly without replacement, sorted by id.
pub fn choose_mobile(topology: &Topology, count: usize, seed: u64) -> Vec<NodeId> {
    let relays = topology.relay_count();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, MOBILE_STREAM]));
    let mut ids = sample(&mut rng, relays, count.min(relays)).into_vec();
    ids.sort_unstable();
    ids
}

fn uniform_point<R: Rng>(area: &Area, z: f64, rng: &mut R) -> Point3 {
    Point3::new(rng.random::<f64>() * area.width, rng.random::<f64>() * area.height, z)
}

/// Folds a coordinate back into `[0, len]`; returns whether it was mirrored an odd number of times.
fn reflect(mut v: f64, len: f64) -> (f64, bool) {
    if len <= 0.0 {
        return (0.0, false);
    }
    let period = 2.0 * len;
    v = v.rem_euclid(period);
    if v > len {
        (period - v, true)
    } else {
        (v, false)
    }
}

impl MobilityState {
    pub fn new(model: MobilityModel, topology: &Topology, mobile: &[NodeId], max_speed: f64, seed: u64) -> Self {
        let area = topology.area();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, MOTION_STREAM]));
        let nodes = mobile
            .iter()
            .map(|&node| {
                let position = topology.positions()[node];
                let waypoint = uniform_point(&area, position.z, &mut rng);
                MobileNode { node, position, direction: 0.0, speed: 0.0, waypoint }
            })
            .collect();
        Self { model, area, max_speed, nodes, rng }
    }

    pub fn step(&mut self, dt: f64) {
        match self.model {
            MobilityModel::RandomWalk => step_random_walk(self, dt),
            MobilityModel::RandomWaypoint => step_random_waypoint(self, dt),
        }
    }

    /// `topology` with the mobile nodes moved to their current positions.
    pub fn apply(&self, topology: &Topology) -> Result<Topology, NetError> {
        let mut positions = topology.positions().to_vec();
        for m in &self.nodes {
            positions[m.node] = m.position;
        }
        topology.with_positions(positions)
    }
}

/// Every node draws a fresh heading and speed and moves `speed·dt`,
/// mirroring off the area walls.
pub fn step_random_walk(ms: &mut MobilityState, dt: f64) {
    let area = ms.area;
    for m in &mut ms.nodes {
        let dir = ms.rng.random::<f64>() * TAU;
        let speed = ms.rng.random::<f64>() * ms.max_speed;
        let (x, fx) = reflect(m.position.x + speed * dt * dir.cos(), area.width);
        let (y, fy) = reflect(m.position.y + speed * dt * dir.sin(), area.height);
        let (mut dx, mut dy) = (dir.cos(), dir.sin());
        if fx {
            dx = -dx;
        }
        if fy {
            dy = -dy;
        }
        m.position = Point3::new(x, y, m.position.z);
        m.direction = dy.atan2(dx).rem_euclid(TAU);
        m.speed = speed;
    }
}

/// Every node moves towards its waypoint at a freshly drawn speed. A node
/// that can reach the waypoint this step stops there and draws a new one.
pub fn step_random_waypoint(ms: &mut MobilityState, dt: f64) {
    let area = ms.area;
    for m in &mut ms.nodes {
        let speed = ms.rng.random::<f64>() * ms.max_speed;
        let d = m.waypoint.sub(&m.position);
        let dist = d[0].hypot(d[1]);
        if dist > 0.0 {
            m.direction = d[1].atan2(d[0]).rem_euclid(TAU);
        }
        let reach = speed * dt;
        if reach >= dist {
            m.position = m.waypoint;
            m.waypoint = uniform_point(&area, m.position.z, &mut ms.rng);
        } else {
            let k = reach / dist;
            m.position = Point3::new(m.position.x + k * d[0], m.position.y + k * d[1], m.position.z);
        }
        m.speed = speed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub model: MobilityModel,
    pub mobile: usize,
    pub max_speed: f64,
    pub horizon: usize,
    pub interval: usize,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self { model: MobilityModel::RandomWalk, mobile: 20, max_speed: 5.0, horizon: 60, interval: 1 }
    }
}

/// Sum rate at `t = 0, 1, …, horizon−1` seconds for one topology.
///
/// Routes are (re)built at every multiple of `interval`; `rounds` and
/// `hop_cap` are passed to [`route_all`]. Failed flows count as rate 0.
pub fn run_mobility_experiment(
    mut state: NetworkState,
    model: &ChannelModel,
    policy: &mut dyn StepPolicy,
    cfg: &MobilityConfig,
    seed: u64,
    rounds: usize,
    hop_cap: usize,
) -> Result<Vec<f64>, NetError> {
    let base = state.topology().clone();
    let mobile = choose_mobile(&base, cfg.mobile, seed);
    let mut ms = MobilityState::new(cfg.model, &base, &mobile, cfg.max_speed, seed);
    let interval = cfg.interval.max(1);
    let resources = state.resource_set();
    let mut series = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        if t > 0 && !mobile.is_empty() {
            ms.step(1.0);
            let topo = ms.apply(&base)?;
            let gains = GainTable::from_model(topo.positions(), &resources, model, topo.seed())?;
            state.replace_topology(topo, gains)?;
        }
        if t % interval == 0 {
            state.clear_routes();
            route_all(&mut state, &mut *policy, rounds, hop_cap)?;
        }
        series.push(state.achieved_sum_rate());
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Baseline;
    use crate::channel::{PathLoss, ResourceSet, Technology};
    use crate::netmodel::{NoiseMode, RadioParams};
    use crate::router::{default_hop_cap, BaselinePolicy};
    use crate::selection::NeighborStrategy;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn single(model: MobilityModel, at: Point3, area: Area, seed: u64) -> MobilityState {
        let topo = Topology::new(vec![at], vec![(Point3::planar(0.0, 0.0), Point3::planar(1.0, 1.0))], area, 0).unwrap();
        MobilityState::new(model, &topo, &[0], 5.0, seed)
    }

    #[test]
    fn walk_moves_speed_along_heading() {
        let area = Area::new(1000.0, 1000.0);
        let mut ms = single(MobilityModel::RandomWalk, area.center(), area, 3);
        for _ in 0..5 {
            let before = ms.nodes[0].position;
            ms.step(1.0);
            let m = ms.nodes[0];
            assert!((m.position.distance(&before) - m.speed).abs() < 1e-9);
            assert!((m.position.x - before.x - m.speed * m.direction.cos()).abs() < 1e-9);
            assert!((m.position.y - before.y - m.speed * m.direction.sin()).abs() < 1e-9);
            assert!((0.0..=5.0).contains(&m.speed));
        }
    }

    #[test]
    fn wall_reflection_mirror_law() {
        // heading for the right wall 1 m away; mirrored x, y unchanged
        assert_eq!(reflect(101.5, 100.0), (98.5, true));
        assert_eq!(reflect(-2.0, 100.0), (2.0, true));
        assert_eq!(reflect(50.0, 100.0), (50.0, false));
        let area = Area::new(100.0, 100.0);
        let mut seen = 0;
        for seed in 0..200 {
            let mut ms = single(MobilityModel::RandomWalk, Point3::planar(99.0, 50.0), area, seed);
            ms.step(1.0);
            let m = ms.nodes[0];
            assert!(area.contains(&m.position));
            let (c, sn) = (m.direction.cos(), m.direction.sin());
            assert!((m.position.y - 50.0 - m.speed * sn).abs() < 1e-9);
            if c < 0.0 && (m.position.x - (101.0 - m.speed * c.abs())).abs() < 1e-9 {
                // went 1 m right, hit the wall and came back: cos flipped, sin kept
                seen += 1;
            } else {
                assert!((m.position.x - 99.0 - m.speed * c).abs() < 1e-9);
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn walk_occupancy_is_roughly_uniform() {
        let area = Area::new(50.0, 50.0);
        let mut ms = single(MobilityModel::RandomWalk, area.center(), area, 11);
        ms.max_speed = 40.0;
        let bins = 5;
        let mut counts = vec![0usize; bins * bins];
        let steps = 1_000_000;
        for _ in 0..steps {
            ms.step(1.0);
            let p = ms.nodes[0].position;
            let i = ((p.x / 10.0) as usize).min(bins - 1);
            let j = ((p.y / 10.0) as usize).min(bins - 1);
            counts[i * bins + j] += 1;
        }
        let expected = steps as f64 / (bins * bins) as f64;
        let max_dev = counts.iter().map(|&c| (c as f64 - expected).abs() / expected).fold(0.0, f64::max);
        // successive positions are correlated, so compare bin shares rather than a χ² p-value
        assert!(max_dev < 0.1, "{counts:?}");
    }

    #[test]
    fn waypoint_arrival_draws_new_waypoint() {
        let area = Area::new(1000.0, 1000.0);
        let mut ms = single(MobilityModel::RandomWaypoint, area.center(), area, 0);
        let target = Point3::planar(503.0, 500.0);
        ms.nodes[0].waypoint = target;
        loop {
            let before = ms.nodes[0];
            ms.step(1.0);
            let m = ms.nodes[0];
            if m.speed >= before.position.distance(&target) {
                assert_eq!(m.position, target);
                assert_ne!(m.waypoint, target);
                break;
            }
            assert_eq!(m.waypoint, target);
            assert!((before.position.distance(&target) - m.position.distance(&target) - m.speed).abs() < 1e-9);
        }
    }

    #[test]
    fn waypoint_heads_to_target_within_speed_bound() {
        let area = Area::new(300.0, 200.0);
        let mut ms = single(MobilityModel::RandomWaypoint, Point3::planar(10.0, 10.0), area, 5);
        for _ in 0..20_000 {
            let before = ms.nodes[0];
            ms.step(1.0);
            let m = ms.nodes[0];
            let moved = m.position.sub(&before.position);
            assert!(moved[0].hypot(moved[1]) <= 5.0 + 1e-9);
            let to_wp = before.waypoint.sub(&before.position);
            assert!(moved[0] * to_wp[0] + moved[1] * to_wp[1] >= 0.0);
        }
    }

    #[test]
    fn trajectories_are_seeded() {
        let area = Area::new(400.0, 400.0);
        for model in MobilityModel::ALL {
            let run = |seed| {
                let mut ms = single(model, area.center(), area, seed);
                (0..100).map(|_| {
                    ms.step(1.0);
                    ms.nodes[0].position
                }).collect::<Vec<_>>()
            };
            assert_eq!(run(1), run(1));
            assert_ne!(run(1), run(2));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn positions_stay_in_bounds(seed in any::<u64>(), w in 1.0f64..300.0, h in 1.0f64..300.0, speed in 0.0f64..50.0) {
            let area = Area::new(w, h);
            for model in MobilityModel::ALL {
                let mut ms = single(model, area.center(), area, seed);
                ms.max_speed = speed;
                for _ in 0..25_000 {
                    ms.step(1.0);
                    let m = ms.nodes[0];
                    prop_assert!(area.contains(&m.position));
                    prop_assert!(m.speed >= 0.0 && m.speed <= speed);
                }
            }
        }
    }

    fn scenario(seed: u64) -> (NetworkState, ChannelModel) {
        let topo = Topology::random(12, 2, Area::new(1500.0, 1500.0), seed);
        let techs = [Technology { center_freq_hz: 80e6, subbands: 1 }, Technology { center_freq_hz: 800e6, subbands: 1 }];
        let set = Arc::new(ResourceSet::from_technologies(&techs).unwrap());
        let model = ChannelModel::uniform(2, PathLoss::free_space(3.0));
        let s = NetworkState::with_model(topo, set, &model, RadioParams::from_dbm(0.0, NoiseMode::Density, -110.0)).unwrap();
        (s, model)
    }

    fn policy() -> BaselinePolicy {
        BaselinePolicy { scheme: Baseline::ClosestToDestination, strategy: NeighborStrategy::Rate, e_nei: 5 }
    }

    fn series(seed: u64, cfg: MobilityConfig) -> Vec<f64> {
        let (s, model) = scenario(seed);
        let cap = default_hop_cap(&s);
        run_mobility_experiment(s, &model, &mut policy(), &cfg, seed, 1, cap).unwrap()
    }

    #[test]
    fn static_nodes_give_constant_series() {
        for interval in [1, 7, 100] {
            let cfg = MobilityConfig { mobile: 0, horizon: 30, interval, ..Default::default() };
            let s = series(2, cfg);
            assert_eq!(s.len(), 30);
            assert!(s.iter().all(|&r| r == s[0]));
        }
    }

    #[test]
    fn unit_interval_equals_fresh_decisions() {
        let cfg = MobilityConfig { mobile: 8, horizon: 15, interval: 1, ..Default::default() };
        let got = series(4, cfg);
        // replay the motion and route from scratch on each snapshot
        let (s0, model) = scenario(4);
        let base = s0.topology().clone();
        let mut ms = MobilityState::new(cfg.model, &base, &choose_mobile(&base, 8, 4), 5.0, 4);
        let cap = default_hop_cap(&s0);
        for (t, &rate) in got.iter().enumerate() {
            if t > 0 {
                ms.step(1.0);
            }
            let topo = ms.apply(&base).unwrap();
            let mut fresh = NetworkState::with_model(topo, s0.resource_set(), &model, *s0.radio()).unwrap();
            route_all(&mut fresh, &mut policy(), 1, cap).unwrap();
            assert_eq!(rate, fresh.achieved_sum_rate(), "t = {t}");
        }
    }

    #[test]
    fn frozen_routes_keep_hops_until_refresh() {
        let cfg = MobilityConfig { model: MobilityModel::RandomWaypoint, mobile: 12, horizon: 12, interval: 12, max_speed: 5.0 };
        let mut varied = 0;
        for seed in 0..10 {
            let (mut st, _) = scenario(seed);
            let cap = default_hop_cap(&st);
            route_all(&mut st, &mut policy(), 1, cap).unwrap();
            let relayed = (0..2).any(|f| st.route(f).is_ok_and(|r| r.nodes.len() > 2));
            let s = series(seed, cfg);
            assert_eq!(s.len(), 12);
            if relayed {
                // moving relays change the frozen routes' rates
                varied += usize::from(s.iter().any(|&r| r != s[0]));
            } else {
                assert!(s.iter().all(|&r| r == s[0]));
            }
        }
        assert!(varied > 0);
    }

    #[test]
    fn mobile_subset_is_relays_only() {
        let topo = Topology::random(27, 2, Area::new(2000.0, 2000.0), 3);
        let m = choose_mobile(&topo, 20, 3);
        assert_eq!(m.len(), 20);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
        assert!(m.iter().all(|&n| n < 27));
        assert_eq!(m, choose_mobile(&topo, 20, 3));
        assert_eq!(choose_mobile(&topo, 40, 3).len(), 27);
    }
}
