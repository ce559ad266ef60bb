//! Communication resources, path-loss channel models and gain tables.
//!
//! A communication resource is a (technology, subband) pair. Each technology
//! `m` with center frequency `τ_m` is split into `B_m` subbands of bandwidth
//! `0.01·τ_m / B_m`, so the total bandwidth of a technology is 1% of its
//! center frequency regardless of how it is split.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Fraction of a technology's center frequency available as bandwidth.
pub const BANDWIDTH_FRACTION: f64 = 0.01;

pub type ResourceId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("coincident nodes: gain is undefined at zero distance")]
    CoincidentNodes,
    #[error("invalid technology list: {0}")]
    InvalidTechnologies(String),
    #[error("channel model has no parameters for technology {0}")]
    MissingTechnology(usize),
    #[error("gain grid has {grid} resources but the resource set has {expected}")]
    GridResourceMismatch { grid: usize, expected: usize },
    #[error("gain grid node {0} out of range")]
    GridNodeOutOfRange(usize),
}

/// A radio technology: a center frequency and a subband count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Technology {
    pub center_freq_hz: f64,
    pub subbands: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommResource {
    pub tech_index: usize,
    pub subband_index: usize,
    pub center_freq_hz: f64,
    pub bandwidth_hz: f64,
}

/// All communication resources, ordered by technology then subband.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSet {
    technologies: Vec<Technology>,
    resources: Vec<CommResource>,
}

impl ResourceSet {
    pub fn from_technologies(technologies: &[Technology]) -> Result<Self, ChannelError> {
        if technologies.is_empty() {
            return Err(ChannelError::InvalidTechnologies("no technologies".into()));
        }
        let mut resources = Vec::new();
        for (m, tech) in technologies.iter().enumerate() {
            if !(tech.center_freq_hz.is_finite() && tech.center_freq_hz > 0.0) {
                return Err(ChannelError::InvalidTechnologies(format!(
                    "technology {m} has non-positive center frequency"
                )));
            }
            if tech.subbands == 0 {
                return Err(ChannelError::InvalidTechnologies(format!(
                    "technology {m} has zero subbands"
                )));
            }
            let bandwidth = BANDWIDTH_FRACTION * tech.center_freq_hz / tech.subbands as f64;
            let total = BANDWIDTH_FRACTION * tech.center_freq_hz;
            for j in 0..tech.subbands {
                resources.push(CommResource {
                    tech_index: m,
                    subband_index: j,
                    center_freq_hz: tech.center_freq_hz - total / 2.0 + (j as f64 + 0.5) * bandwidth,
                    bandwidth_hz: bandwidth,
                });
            }
        }
        Ok(Self { technologies: technologies.to_vec(), resources })
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn tech_count(&self) -> usize {
        self.technologies.len()
    }

    pub fn technologies(&self) -> &[Technology] {
        &self.technologies
    }

    pub fn get(&self, id: ResourceId) -> Option<&CommResource> {
        self.resources.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CommResource> {
        self.resources.iter()
    }

    pub fn bandwidth(&self, id: ResourceId) -> f64 {
        self.resources[id].bandwidth_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathLossKind {
    /// `PL(d) = PL(1 m) + 10·n·log10(d / 1 m)`.
    #[default]
    LogDistance,
}

/// Path-loss parameters of one technology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    #[serde(default)]
    pub kind: PathLossKind,
    pub exponent: f64,
    /// Loss at the 1 m reference distance. `None` uses free-space loss at
    /// the resource's center frequency.
    #[serde(default)]
    pub ref_loss_db: Option<f64>,
    /// Log-normal shadowing standard deviation; 0 disables shadowing.
    #[serde(default)]
    pub shadowing_sigma_db: f64,
}

impl PathLoss {
    pub fn free_space(exponent: f64) -> Self {
        Self { kind: PathLossKind::LogDistance, exponent, ref_loss_db: None, shadowing_sigma_db: 0.0 }
    }

    pub fn reference_loss_db(&self, freq_hz: f64) -> f64 {
        self.ref_loss_db.unwrap_or_else(|| free_space_loss_db(1.0, freq_hz))
    }

    /// Deterministic path loss in dB (no shadowing).
    pub fn loss_db(&self, distance_m: f64, freq_hz: f64) -> f64 {
        match self.kind {
            PathLossKind::LogDistance => {
                self.reference_loss_db(freq_hz) + 10.0 * self.exponent * distance_m.log10()
            }
        }
    }
}

/// Friis free-space loss `20·log10(4π·d·f / c)`.
pub fn free_space_loss_db(distance_m: f64, freq_hz: f64) -> f64 {
    20.0 * (4.0 * PI * distance_m * freq_hz / SPEED_OF_LIGHT).log10()
}

/// Per-technology path-loss configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub per_tech: Vec<PathLoss>,
}

impl ChannelModel {
    pub fn new(per_tech: Vec<PathLoss>) -> Self {
        Self { per_tech }
    }

    pub fn uniform(tech_count: usize, params: PathLoss) -> Self {
        Self { per_tech: vec![params; tech_count] }
    }

    pub fn params(&self, tech: usize) -> Result<&PathLoss, ChannelError> {
        self.per_tech.get(tech).ok_or(ChannelError::MissingTechnology(tech))
    }
}

/// Complex channel gain between two positions on one resource.
///
/// `|h|²` is the linear path gain of the model at the link distance and the
/// resource's center frequency, times a log-normal shadowing factor when the
/// technology has one. The phase is uniform in `[0, 2π)`. Shadowing and phase
/// are drawn from `seed`, so identical inputs give bit-identical gains.
pub fn gain(
    model: &ChannelModel,
    pos_a: Point3,
    pos_b: Point3,
    resource: &CommResource,
    seed: u64,
) -> Result<Complex64, ChannelError> {
    let d = pos_a.distance(&pos_b);
    if d == 0.0 {
        return Err(ChannelError::CoincidentNodes);
    }
    let params = model.params(resource.tech_index)?;
    let mut loss_db = params.loss_db(d, resource.center_freq_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if params.shadowing_sigma_db > 0.0 {
        let normal = Normal::new(0.0, params.shadowing_sigma_db)
            .map_err(|e| ChannelError::InvalidTechnologies(e.to_string()))?;
        loss_db += normal.sample(&mut rng);
    }
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let amplitude = 10f64.powf(-loss_db / 20.0);
    Ok(Complex64::from_polar(amplitude, phase))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a list of words into one seed.
pub fn mix_seed(words: &[u64]) -> u64 {
    words.iter().fold(0x5EED_u64, |acc, w| splitmix64(acc ^ splitmix64(*w)))
}

/// Seed for the shadowing/phase draw of a node pair on a resource.
/// Symmetric in the node pair.
pub fn link_seed(base: u64, a: usize, b: usize, resource: ResourceId) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    mix_seed(&[base, lo as u64, hi as u64, resource as u64])
}

/// Dense node-pair × resource gain table for one topology snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    nodes: usize,
    resources: usize,
    gains: Arc<Vec<Complex64>>,
}

impl GainTable {
    /// Evaluates the channel model for every node pair and resource.
    pub fn from_model(
        positions: &[Point3],
        resources: &ResourceSet,
        model: &ChannelModel,
        seed: u64,
    ) -> Result<Self, ChannelError> {
        let n = positions.len();
        let r = resources.len();
        let mut gains = vec![Complex64::new(0.0, 0.0); n * n * r];
        for i in 0..n {
            for j in (i + 1)..n {
                for (c, res) in resources.iter().enumerate() {
                    let h = gain(model, positions[i], positions[j], res, link_seed(seed, i, j, c))?;
                    gains[(i * n + j) * r + c] = h;
                    gains[(j * n + i) * r + c] = h;
                }
            }
        }
        Ok(Self { nodes: n, resources: r, gains: Arc::new(gains) })
    }

    /// Looks up gains from a grid; topology node `k` is grid node `node_map[k]`.
    pub fn from_grid(grid: &GainGrid, node_map: &[usize], resources: &ResourceSet) -> Result<Self, ChannelError> {
        if grid.resources() != resources.len() {
            return Err(ChannelError::GridResourceMismatch { grid: grid.resources(), expected: resources.len() });
        }
        if let Some(&bad) = node_map.iter().find(|&&g| g >= grid.nodes()) {
            return Err(ChannelError::GridNodeOutOfRange(bad));
        }
        let n = node_map.len();
        let r = resources.len();
        let mut gains = vec![Complex64::new(0.0, 0.0); n * n * r];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for c in 0..r {
                    gains[(i * n + j) * r + c] = grid.get(node_map[i], node_map[j], c);
                }
            }
        }
        Ok(Self { nodes: n, resources: r, gains: Arc::new(gains) })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: ResourceId) -> Complex64 {
        self.gains[(a * self.nodes + b) * self.resources + c]
    }

    /// `|h|²`.
    #[inline]
    pub fn power(&self, a: usize, b: usize, c: ResourceId) -> f64 {
        self.get(a, b, c).norm_sqr()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridParseError {
    #[error("line {line}: malformed header (expected `nodes=<N> resources=<R>`): {detail}")]
    Header { line: usize, detail: String },
    #[error("line {line}: malformed entry (expected `i j r re im`): {detail}")]
    Entry { line: usize, detail: String },
    #[error("line {line}: duplicate entry for pair ({i}, {j}) resource {r}")]
    Duplicate { line: usize, i: usize, j: usize, r: usize },
    #[error("incomplete grid: missing entry for pair ({i}, {j}) resource {r}")]
    Incomplete { i: usize, j: usize, r: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// Precomputed, reciprocal gains for every node pair and resource.
#[derive(Debug, Clone, PartialEq)]
pub struct GainGrid {
    nodes: usize,
    resources: usize,
    /// Upper-triangle pairs `i < j`, row-major, then resource.
    entries: Vec<Complex64>,
}

fn pair_index(nodes: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < nodes);
    // Number of pairs in rows before `i`, then offset within the row.
    i * (2 * nodes - i - 1) / 2 + (j - i - 1)
}

impl GainGrid {
    /// Builds a grid from a function of `(i, j, r)` with `i < j`.
    pub fn from_fn(nodes: usize, resources: usize, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut entries = Vec::with_capacity(nodes * nodes.saturating_sub(1) / 2 * resources);
        for i in 0..nodes {
            for j in (i + 1)..nodes {
                for r in 0..resources {
                    entries.push(f(i, j, r));
                }
            }
        }
        Self { nodes, resources, entries }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    /// Reciprocal lookup; the gain from a node to itself is zero.
    pub fn get(&self, i: usize, j: usize, r: usize) -> Complex64 {
        if i == j {
            return Complex64::new(0.0, 0.0);
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        self.entries[pair_index(self.nodes, lo, hi) * self.resources + r]
    }

    /// Parses the text grid format; see `docs/FORMATS.md`.
    pub fn load<R: BufRead>(source: R) -> Result<Self, GridParseError> {
        let mut lines = source.lines().enumerate();
        let (nodes, resources) = loop {
            match lines.next() {
                None => return Err(GridParseError::Header { line: 1, detail: "empty input".into() }),
                Some((idx, line)) => {
                    let line = line.map_err(|e| GridParseError::Io(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break parse_header(&line, idx + 1)?;
                }
            }
        };
        let pairs = nodes * nodes.saturating_sub(1) / 2;
        let mut entries = vec![Complex64::new(0.0, 0.0); pairs * resources];
        let mut seen = vec![false; pairs * resources];
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| GridParseError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry_err = |detail: String| GridParseError::Entry { line: line_no, detail };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(entry_err(format!("expected 5 fields, found {}", fields.len())));
            }
            let parse_idx = |s: &str, what: &str| {
                s.parse::<usize>().map_err(|_| entry_err(format!("invalid {what} `{s}`")))
            };
            let i = parse_idx(fields[0], "node index")?;
            let j = parse_idx(fields[1], "node index")?;
            let r = parse_idx(fields[2], "resource index")?;
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| entry_err(format!("invalid number `{s}`")))
            };
            let re = parse_f(fields[3])?;
            let im = parse_f(fields[4])?;
            if i == j {
                return Err(entry_err(format!("self pair ({i}, {j})")));
            }
            if i >= nodes || j >= nodes {
                return Err(entry_err(format!("node index out of range (nodes={nodes})")));
            }
            if r >= resources {
                return Err(entry_err(format!("resource index {r} out of range (resources={resources})")));
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            let slot = pair_index(nodes, lo, hi) * resources + r;
            if seen[slot] {
                return Err(GridParseError::Duplicate { line: line_no, i: lo, j: hi, r });
            }
            seen[slot] = true;
            entries[slot] = Complex64::new(re, im);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let pair = missing / resources.max(1);
            let r = missing % resources.max(1);
            let (i, j) = unpair(nodes, pair);
            return Err(GridParseError::Incomplete { i, j, r });
        }
        Ok(Self { nodes, resources, entries })
    }

    /// Canonical text form: header, then pairs `i < j` in order, resources ascending.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nodes={} resources={}", self.nodes, self.resources);
        let mut k = 0;
        for i in 0..self.nodes {
            for j in (i + 1)..self.nodes {
                for r in 0..self.resources {
                    let h = self.entries[k];
                    let _ = writeln!(out, "{i} {j} {r} {:e} {:e}", h.re, h.im);
                    k += 1;
                }
            }
        }
        out
    }
}

fn unpair(nodes: usize, mut pair: usize) -> (usize, usize) {
    for i in 0..nodes {
        let row = nodes - i - 1;
        if pair < row {
            return (i, i + 1 + pair);
        }
        pair -= row;
    }
    unreachable!("pair index out of range")
}

fn parse_header(line: &str, line_no: usize) -> Result<(usize, usize), GridParseError> {
    let err = |detail: &str| GridParseError::Header { line: line_no, detail: detail.to_string() };
    let mut parts = line.split_whitespace();
    let nodes = parts
        .next()
        .and_then(|p| p.strip_prefix("nodes="))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| err("missing or invalid `nodes=`"))?;
    let resources = parts
        .next()
        .and_then(|p| p.strip_prefix("resources="))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| err("missing or invalid `resources=`"))?;
    if parts.next().is_some() {
        return Err(err("trailing fields"));
    }
    if nodes < 2 || resources == 0 {
        return Err(err("need at least 2 nodes and 1 resource"));
    }
    Ok((nodes, resources))
}
