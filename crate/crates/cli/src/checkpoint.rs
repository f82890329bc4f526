//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DRDQ" | version u8 | header_len u32 | header (UTF-8)
//! entry_count u32 | entries
//! entry = name_len u32 | name (UTF-8) | rank u32 | dims u64 * rank | data f64 * prod(dims)
//! ```
//!
//! The header holds the environment, counters, the full config and the
//! network description. Entry names carry an `online/`, `target/` or `opt/`
//! prefix.

use std::fmt::Write as _;
use std::path::Path;

use drdqn_core::nn::{NetworkSpec, ParamSet};
use drdqn_core::{Agent, AgentConfig, EnvKind, Tensor};
use thiserror::Error;

use crate::config::{config_to_text, parse_config, ConfigError};

pub const MAGIC: &[u8; 4] = b"DRDQ";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    Version(u8),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] drdqn_core::Error),
}

/// Everything needed to rebuild a trained agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env: EnvKind,
    pub config: AgentConfig,
    pub spec: NetworkSpec,
    pub step: u64,
    pub online: ParamSet,
    pub target: ParamSet,
    pub optimizer_state: ParamSet,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, env: EnvKind) -> Self {
        Self {
            env,
            config: agent.config().clone(),
            spec: agent.spec().clone(),
            step: agent.step(),
            online: agent.online().clone(),
            target: agent.target().clone(),
            optimizer_state: agent.optimizer().state(),
        }
    }

    pub fn to_agent(&self) -> Result<Agent, CheckpointError> {
        Ok(Agent::from_parts(
            self.spec.clone(),
            self.config.clone(),
            self.online.clone(),
            self.target.clone(),
            self.step,
            Some(&self.optimizer_state),
        )?)
    }

    fn header(&self) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "env = {}", self.env.name());
        let _ = writeln!(h, "step = {}", self.step);
        let _ = writeln!(h, "online_updates = {}", self.online.step_count);
        let _ = writeln!(h, "target_updates = {}", self.target.step_count);
        let _ = writeln!(h, "[config]");
        h.push_str(&config_to_text(&self.config));
        let _ = writeln!(h, "[network]");
        h.push_str(&self.spec.to_text());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let header = self.header();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());

        let groups = [("online/", &self.online), ("target/", &self.target), ("opt/", &self.optimizer_state)];
        let count: usize = groups.iter().map(|(_, set)| set.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, set) in groups {
            for (name, tensor) in set.iter() {
                let full = format!("{prefix}{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
                for &d in tensor.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &x in tensor.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|_| CheckpointError::Corrupt("header is not UTF-8".into()))?;
        let header = Header::parse(header)?;

        let count = r.u32("entry count")?;
        let (mut online, mut target, mut optimizer_state) = (ParamSet::new(), ParamSet::new(), ParamSet::new());
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| CheckpointError::Corrupt("entry name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.u64("dimension").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or(CheckpointError::Truncated("tensor data"))?;
            let data = r
                .take(len * 8, "tensor data")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let tensor = Tensor::new(shape, data)?;
            let (set, rest) = if let Some(rest) = name.strip_prefix("online/") {
                (&mut online, rest)
            } else if let Some(rest) = name.strip_prefix("target/") {
                (&mut target, rest)
            } else if let Some(rest) = name.strip_prefix("opt/") {
                (&mut optimizer_state, rest)
            } else {
                return Err(CheckpointError::Corrupt(format!("entry `{name}` has no known prefix")));
            };
            if set.insert(rest, tensor).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate entry `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        header.spec.check_params(&online)?;
        header.spec.check_params(&target)?;
        online.step_count = header.online_updates;
        target.step_count = header.target_updates;
        Ok(Self {
            env: header.env,
            config: header.config,
            spec: header.spec,
            step: header.step,
            online,
            target,
            optimizer_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Header {
    env: EnvKind,
    step: u64,
    online_updates: u64,
    target_updates: u64,
    config: AgentConfig,
    spec: NetworkSpec,
}

impl Header {
    fn parse(text: &str) -> Result<Self, CheckpointError> {
        let corrupt = |msg: &str| CheckpointError::Corrupt(format!("header: {msg}"));
        let (meta, rest) = text.split_once("[config]\n").ok_or_else(|| corrupt("missing [config]"))?;
        let (config, network) = rest.split_once("[network]\n").ok_or_else(|| corrupt("missing [network]"))?;

        let mut fields = std::collections::BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| corrupt(line))?;
            fields.insert(k, v);
        }
        let get = |key: &str| fields.get(key).copied().ok_or_else(|| corrupt(&format!("missing `{key}`")));
        let int = |key: &str| get(key)?.parse::<u64>().map_err(|_| corrupt(&format!("bad `{key}`")));
        Ok(Self {
            env: get("env")?.parse().map_err(|_| corrupt("bad `env`"))?,
            step: int("step")?,
            online_updates: int("online_updates")?,
            target_updates: int("target_updates")?,
            config: parse_config(config, AgentConfig::paper())?,
            spec: NetworkSpec::from_text(network)?,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use drdqn_core::nn::{Optimizer, OptimizerKind};
    use drdqn_core::AgentKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample(kind: AgentKind, optimizer: OptimizerKind) -> Checkpoint {
        let env = EnvKind::FlickerGrid;
        let e = env.build();
        let cfg = AgentConfig { optimizer, ..kind.configure(AgentConfig::desk()) };
        let spec = NetworkSpec::preset(env.preset(), &e.observation_shape(), e.action_count(), cfg.recurrent).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = Agent::new(spec.clone(), cfg, &mut rng).unwrap();
        // Perturb so online, target and optimizer state all differ.
        let grads: ParamSet = spec.init_params(&mut rng);
        let mut opt = Optimizer::with_defaults(optimizer, 0.01);
        opt.update(agent.online_mut(), &grads).unwrap();
        let mut cp = Checkpoint::from_agent(&agent, env);
        cp.optimizer_state = opt.state();
        cp.step = 1234;
        cp
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (kind, opt) in [(AgentKind::Dqn, OptimizerKind::RmsProp), (AgentKind::Drdqn, OptimizerKind::Adam)] {
            let cp = sample(kind, opt);
            let bytes = cp.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert!(back.online.bit_eq(&cp.online) && back.target.bit_eq(&cp.target));
            assert!(back.optimizer_state.bit_eq(&cp.optimizer_state));
            assert_eq!(back, cp);
            assert_eq!(back.to_bytes(), bytes);
            let agent = back.to_agent().unwrap();
            assert_eq!(agent.updates(), 1);
            assert_eq!(agent.optimizer().state(), cp.optimizer_state);
        }
    }

    #[test]
    fn starts_with_magic_and_version() {
        let bytes = sample(AgentKind::Dqn, OptimizerKind::RmsProp).to_bytes();
        assert_eq!(&bytes[..4], b"DRDQ");
        assert_eq!(bytes[4], 1);
    }

    #[test]
    fn rejects_damaged_input() {
        let bytes = sample(AgentKind::Ddqn, OptimizerKind::RmsProp).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"NOPE\x01"), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version(2))));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::Corrupt(_))));
    }
}
