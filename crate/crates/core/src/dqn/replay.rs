//! Ring-buffer experience replay.

use rand::Rng;

use crate::channel::ResourceId;
use crate::netmodel::{FlowId, NetworkState};

/// One stored decision and the bottleneck rate its route finally achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub resource: ResourceId,
    /// bits/s; 0 when the route was aborted.
    pub reward: f64,
    pub episode: u64,
}

/// A decision taken while building a route, awaiting its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingStep {
    pub state: Vec<f64>,
    pub action: usize,
    pub resource: ResourceId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0 }
    }

    /// Rebuilds a buffer from its parts, oldest-overwrite position included.
    pub fn from_parts(capacity: usize, items: Vec<Experience>, next: usize) -> Option<Self> {
        if capacity == 0 || items.len() > capacity || next >= capacity.max(1) || (items.len() < capacity && next != items.len())
        {
            return None;
        }
        Some(Self { capacity, items, next })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Slot the next push writes to.
    pub fn next_slot(&self) -> usize {
        self.next
    }

    pub fn items(&self) -> &[Experience] {
        &self.items
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `batch` distinct experiences, uniformly at random.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&Experience> {
        let n = batch.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Stores every pending step of flow `f` with the flow's bottleneck rate as
/// reward, or 0 if the route is incomplete. Returns the number stored.
pub fn record_route(
    buffer: &mut ReplayBuffer,
    trajectory: Vec<PendingStep>,
    state: &NetworkState,
    f: FlowId,
    episode: u64,
) -> usize {
    let reward = state.route_rate(f).unwrap_or(0.0);
    let n = trajectory.len();
    for step in trajectory {
        buffer.push(Experience { state: step.state, action: step.action, resource: step.resource, reward, episode });
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(i: usize) -> Experience {
        Experience { state: vec![i as f64], action: 0, resource: 0, reward: i as f64, episode: i as u64 }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(exp(i));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.items().iter().map(|e| e.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
        assert_eq!(b.next_slot(), 2);
        assert_eq!(ReplayBuffer::from_parts(3, b.items().to_vec(), 2), Some(b));
    }

    #[test]
    fn sample_without_replacement() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..70 {
            b.push(exp(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = b.sample(64, &mut rng);
            let mut ids: Vec<u64> = s.iter().map(|e| e.episode).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 64);
        }
    }

    #[test]
    fn sample_is_uniform() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(exp(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            for e in b.sample(3, &mut rng) {
                counts[e.episode as usize] += 1;
            }
        }
        let expected = 3000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }
}
