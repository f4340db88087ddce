//! Binary training checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "CRITFLOW"
//! version      u32      1
//! n            u64      node count
//! filters      u64
//! hidden       u64
//! iteration    u64      completed updates
//! alpha0       f64
//! decay_every  u64
//! decay_base   f64
//! alpha_min    f64
//! beta         f64
//! seed         u64
//! entries      u64      baseline table size, then per entry:
//!                       state u64, reward sum f64, visits u64
//! groups       6 x (len u64, len x f64) in the order conv_w, conv_b,
//!                       fc1_w, fc1_b, fc2_w, fc2_b
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::policy::{Architecture, PolicyParams, GROUP_NAMES};
use crate::trainer::{BaselineTable, TrainerConfig};

pub const MAGIC: &[u8; 8] = b"CRITFLOW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Learning-rate schedule and entropy weight saved with the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub alpha0: f64,
    pub decay_every: u64,
    pub decay_base: f64,
    pub alpha_min: f64,
    pub beta: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub iteration: u64,
    pub schedule: Schedule,
    pub baseline: BaselineTable,
}

impl Checkpoint {
    pub fn new(params: PolicyParams, iteration: u64, config: &TrainerConfig, baseline: BaselineTable) -> Checkpoint {
        Checkpoint {
            params,
            iteration,
            schedule: Schedule {
                alpha0: config.alpha0,
                decay_every: config.decay_every,
                decay_base: config.decay_base,
                alpha_min: config.alpha_min,
                beta: config.beta,
                seed: config.seed,
            },
            baseline,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let arch = self.params.arch();
        let s = &self.schedule;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [arch.n as u64, arch.filters as u64, arch.hidden as u64, self.iteration] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&s.alpha0.to_le_bytes())?;
        w.write_all(&s.decay_every.to_le_bytes())?;
        for v in [s.decay_base, s.alpha_min, s.beta] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&s.seed.to_le_bytes())?;
        w.write_all(&(self.baseline.len() as u64).to_le_bytes())?;
        for (state, sum, visits) in self.baseline.iter() {
            w.write_all(&(state as u64).to_le_bytes())?;
            w.write_all(&sum.to_le_bytes())?;
            w.write_all(&visits.to_le_bytes())?;
        }
        for g in self.params.groups() {
            w.write_all(&(g.len() as u64).to_le_bytes())?;
            for v in g {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let n = read_u64(r)? as usize;
        let filters = read_u64(r)? as usize;
        let hidden = read_u64(r)? as usize;
        if n < 2 || filters == 0 || hidden == 0 {
            return Err(CheckpointError::Format("bad architecture".into()));
        }
        let iteration = read_u64(r)?;
        let schedule = Schedule {
            alpha0: read_f64(r)?,
            decay_every: read_u64(r)?,
            decay_base: read_f64(r)?,
            alpha_min: read_f64(r)?,
            beta: read_f64(r)?,
            seed: read_u64(r)?,
        };
        let entries = read_u64(r)?;
        let mut table = Vec::new();
        for _ in 0..entries {
            table.push((read_u64(r)? as usize, read_f64(r)?, read_u64(r)?));
        }
        let arch = Architecture {
            n,
            filters,
            hidden,
        };
        let expected = PolicyParams::zeros(arch);
        let mut groups = Vec::with_capacity(6);
        for (name, want) in GROUP_NAMES.iter().zip(expected.groups()) {
            let len = read_u64(r)? as usize;
            if len != want.len() {
                return Err(CheckpointError::Format(format!("group {name} has {len} values, expected {}", want.len())));
            }
            let mut g = Vec::with_capacity(len);
            for _ in 0..len {
                g.push(read_f64(r)?);
            }
            groups.push(g);
        }
        let params = PolicyParams::from_groups(arch, groups).map_err(|e| CheckpointError::Format(e.to_string()))?;
        Ok(Checkpoint {
            params,
            iteration,
            schedule,
            baseline: BaselineTable::from_entries(table),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
        let bytes = fs::read(path)?;
        Checkpoint::read_from(&mut bytes.as_slice())
    }
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    read_u64(r).map(f64::from_bits)
}
