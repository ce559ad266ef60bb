//! Binary model checkpoints.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      b"HRQN"
//! version    u32 = 1
//! flags      u32, bit 0 = training section present
//! input      u32
//! actions    u32
//! trunk      u32 count, then u32 widths
//! value      u32 count, then u32 widths
//! advantage  u32 count, then u32 widths
//! scaling    8 × f64 (FeatureScaling fields in declaration order)
//! params     u64 count, then f64 values (layer by layer, weights row-major in × out, then biases)
//! [training]
//!   seed u64, episodes u64, next_episode u64
//!   adam: lr, beta1, beta2, eps f64; t u64; m, v: count f64 each
//!   replay: capacity u64, next u64, len u64, then per item
//!           episode u64, action u32, resource u32, reward f64, state input × f64
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::features::FeatureScaling;
use super::qnet::{Adam, QNet, QNetShape};
use super::replay::{Experience, ReplayBuffer};
use super::train::Trainer;

pub const MAGIC: &[u8; 4] = b"HRQN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Optimizer and replay state needed to continue a run.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub seed: u64,
    pub episodes: u64,
    pub next_episode: u64,
    pub opt: Adam,
    pub replay: ReplayBuffer,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: QNet,
    pub scaling: FeatureScaling,
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            net: t.net.clone(),
            scaling: t.scaling,
            training: Some(TrainingState {
                seed: t.config.seed,
                episodes: t.config.episodes,
                next_episode: t.episode,
                opt: t.opt.clone(),
                replay: t.replay.clone(),
            }),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_u32(w, u32::from(self.training.is_some()))?;
        let shape = self.net.shape();
        put_u32(w, shape.input as u32)?;
        put_u32(w, shape.actions as u32)?;
        for widths in [&shape.trunk, &shape.value, &shape.advantage] {
            put_u32(w, widths.len() as u32)?;
            for &x in widths.iter() {
                put_u32(w, x as u32)?;
            }
        }
        let s = &self.scaling;
        for v in [
            s.gain_offset_db,
            s.gain_scale_db,
            s.gain_floor_db,
            s.interference_offset_dbm,
            s.interference_scale_db,
            s.interference_floor_dbm,
            s.rate_scale_bps,
            s.reward_scale_bps,
        ] {
            put_f64(w, v)?;
        }
        put_u64(w, self.net.param_count() as u64)?;
        put_f64s(w, self.net.params())?;
        if let Some(t) = &self.training {
            put_u64(w, t.seed)?;
            put_u64(w, t.episodes)?;
            put_u64(w, t.next_episode)?;
            for v in [t.opt.lr, t.opt.beta1, t.opt.beta2, t.opt.eps] {
                put_f64(w, v)?;
            }
            put_u64(w, t.opt.t)?;
            put_f64s(w, &t.opt.m)?;
            put_f64s(w, &t.opt.v)?;
            put_u64(w, t.replay.capacity() as u64)?;
            put_u64(w, t.replay.next_slot() as u64)?;
            put_u64(w, t.replay.len() as u64)?;
            for e in t.replay.items() {
                put_u64(w, e.episode)?;
                put_u32(w, e.action as u32)?;
                put_u32(w, e.resource as u32)?;
                put_f64(w, e.reward)?;
                put_f64s(w, &e.state)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let flags = get_u32(r)?;
        let input = get_u32(r)? as usize;
        let actions = get_u32(r)? as usize;
        let mut widths = Vec::new();
        for _ in 0..3 {
            let n = get_u32(r)? as usize;
            if n > 64 {
                return Err(CheckpointError::Corrupt(format!("{n} layers in one block")));
            }
            widths.push((0..n).map(|_| get_u32(r).map(|x| x as usize)).collect::<io::Result<Vec<_>>>()?);
        }
        let advantage = widths.pop().expect("three blocks");
        let value = widths.pop().expect("three blocks");
        let trunk = widths.pop().expect("three blocks");
        let shape = QNetShape { input, trunk, value, advantage, actions };
        let mut sc = [0.0; 8];
        for v in &mut sc {
            *v = get_f64(r)?;
        }
        let scaling = FeatureScaling {
            gain_offset_db: sc[0],
            gain_scale_db: sc[1],
            gain_floor_db: sc[2],
            interference_offset_dbm: sc[3],
            interference_scale_db: sc[4],
            interference_floor_dbm: sc[5],
            rate_scale_bps: sc[6],
            reward_scale_bps: sc[7],
        };
        let count = get_u64(r)? as usize;
        if count != shape.param_count() {
            return Err(CheckpointError::Corrupt(format!("{count} parameters, layer table implies {}", shape.param_count())));
        }
        let net = QNet::from_params(shape, get_f64s(r, count)?).expect("count checked");
        let training = if flags & 1 == 1 {
            let seed = get_u64(r)?;
            let episodes = get_u64(r)?;
            let next_episode = get_u64(r)?;
            let (lr, beta1, beta2, eps) = (get_f64(r)?, get_f64(r)?, get_f64(r)?, get_f64(r)?);
            let t = get_u64(r)?;
            let m = get_f64s(r, count)?;
            let v = get_f64s(r, count)?;
            let opt = Adam { lr, beta1, beta2, eps, t, m, v };
            let capacity = get_u64(r)? as usize;
            let next = get_u64(r)? as usize;
            let len = get_u64(r)? as usize;
            if len > capacity {
                return Err(CheckpointError::Corrupt(format!("replay holds {len} items, capacity {capacity}")));
            }
            let mut items = Vec::with_capacity(len);
            for _ in 0..len {
                let episode = get_u64(r)?;
                let action = get_u32(r)? as usize;
                let resource = get_u32(r)? as usize;
                let reward = get_f64(r)?;
                let state = get_f64s(r, input)?;
                items.push(Experience { state, action, resource, reward, episode });
            }
            let replay = ReplayBuffer::from_parts(capacity, items, next)
                .ok_or_else(|| CheckpointError::Corrupt("inconsistent replay ring".into()))?;
            Some(TrainingState { seed, episodes, next_episode, opt, replay })
        } else {
            None
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { net, scaling, training })
    }

    pub fn save(&self, path: &std::path::Path) -> io::Result<()> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        Self::read(&mut io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> io::Result<()> {
    for &v in vs {
        put_f64(w, v)?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
