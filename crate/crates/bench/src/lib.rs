//! Benchmark fixtures shared by the criterion targets.

use hetroute::experiment::{Scenario, ScenarioConfig};
use hetroute::NetworkState;

/// The desk-scale scenario: 27 relays, two flows, seven technologies.
pub fn desk_scenario() -> Scenario {
    Scenario::new(ScenarioConfig::default()).expect("default scenario is valid")
}

pub fn desk_state(seed: u64) -> NetworkState {
    desk_scenario().state(seed).expect("random topology builds")
}
