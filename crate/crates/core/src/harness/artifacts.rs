//! Files of a run directory: the resolved config, metadata, the episode CSV,
//! parameter checkpoints and replays.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ReplayRecord, ReplayWriter};
use crate::trainer::{Episode, EpisodeLog, EvalLog, Model};

pub const CONFIG_FILE: &str = "config.toml";
pub const METADATA_FILE: &str = "metadata.json";
pub const CSV_FILE: &str = "episodes.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPLAY_FILE: &str = "replay.jsonl";

/// Columns of the episode CSV. Training rows leave `return_std` empty,
/// evaluation rows leave the reward and loss columns empty and put the
/// number of episodes in `steps`. Absent levels give empty cells.
pub const CSV_HEADER: &str = "phase,index,update,global_step,steps,team_return,return_std,agent_returns,\
manager_reward,sub_reward,worker_reward,manager_loss,sub_loss,worker_loss,sigma";

/// Shortest round-trip form, always with a decimal point or exponent.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn joined(xs: &[f64]) -> String {
    xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(";")
}

pub fn episode_row(e: &EpisodeLog) -> String {
    let [mr, sr, wr] = e.level_rewards;
    let [ml, sl, wl] = e.level_losses;
    format!(
        "train,{},{},{},{},{},,{},{},{},{},{},{},{},{}",
        e.episode,
        e.update,
        e.global_step,
        e.steps,
        num(e.agent_returns.iter().sum()),
        joined(&e.agent_returns),
        opt(mr),
        opt(sr),
        opt(wr),
        opt(ml),
        opt(sl),
        opt(wl),
        num(e.sigma)
    )
}

pub fn eval_row(e: &EvalLog) -> String {
    format!(
        "eval,{},{},{},{},{},{},{},,,,,,,{}",
        e.index,
        e.update,
        e.global_step,
        e.episodes,
        num(e.mean_return),
        num(e.std_return),
        joined(&e.agent_returns),
        num(0.0)
    )
}

pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    pub fn episode(&mut self, e: &EpisodeLog) -> io::Result<()> {
        writeln!(self.out, "{}", episode_row(e))
    }

    pub fn eval(&mut self, e: &EvalLog) -> io::Result<()> {
        writeln!(self.out, "{}", eval_row(e))
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

pub fn config_hash(resolved_toml: &str) -> String {
    hex::encode(Sha256::digest(resolved_toml.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub wall_time_secs: f64,
    pub version: String,
    pub global_step: u64,
    pub episodes: usize,
    pub updates: usize,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

pub fn write_metadata(path: &Path, m: &Metadata) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint was written for config {found}, this run has {expected}")]
    ConfigHash { expected: String, found: String },
    #[error("checkpoint layout differs from the model at {0}")]
    Layout(String),
}

const MAGIC: &[u8; 8] = b"FEUDALCK";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

/// Little-endian dump of every parameter tensor of every level, tagged with
/// the hash of the resolved config.
pub fn encode_checkpoint(model: &Model, hash: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, hash.len());
    out.extend_from_slice(hash.as_bytes());
    put_u32(&mut out, model.levels.len());
    for slot in &model.levels {
        let params = slot.store.params();
        put_u32(&mut out, params.len());
        for p in params {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.rows);
            put_u32(&mut out, p.cols);
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> io::Result<&[u8]> {
        if self.0.len() < n {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> io::Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> io::Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Loads parameters written by [`encode_checkpoint`] into `model`.
pub fn decode_checkpoint(bytes: &[u8], model: &mut Model, hash: &str) -> Result<(), CheckpointError> {
    let mut c = Cursor(bytes);
    if c.take(8).map_err(|_| CheckpointError::Magic)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let found = c.string()?;
    if found != hash {
        return Err(CheckpointError::ConfigHash {
            expected: hash.to_string(),
            found,
        });
    }
    if c.u32()? != model.levels.len() {
        return Err(CheckpointError::Layout("level count".into()));
    }
    for slot in &mut model.levels {
        let params = slot.store.params_mut();
        if c.u32()? != params.len() {
            return Err(CheckpointError::Layout(format!("{:?} tensor count", slot.level)));
        }
        for p in params {
            let name = c.string()?;
            let (rows, cols) = (c.u32()?, c.u32()?);
            if name != p.name || rows != p.rows || cols != p.cols {
                return Err(CheckpointError::Layout(p.name.clone()));
            }
            for v in &mut p.value {
                *v = c.f64()?;
            }
        }
    }
    if !c.0.is_empty() {
        return Err(CheckpointError::Layout("trailing bytes".into()));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &Model, hash: &str) -> io::Result<()> {
    std::fs::write(path, encode_checkpoint(model, hash))
}

pub fn load_checkpoint(path: &Path, model: &mut Model, hash: &str) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes, model, hash)
}

/// Writes the steps of `episodes` as replay lines.
pub fn write_replay<W: Write>(out: W, episodes: &[Episode]) -> io::Result<W> {
    let mut w = ReplayWriter::new(out);
    for (i, ep) in episodes.iter().enumerate() {
        for t in 0..ep.len() {
            w.write(&ReplayRecord {
                episode: i,
                step: t,
                positions: ep.positions[t].clone(),
                actions: ep.actions[t].clone(),
                rewards: ep.rewards.external[t].clone(),
            })?;
        }
    }
    Ok(w.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{BanditConfig, EnvSpec};
    use crate::hiergraph::HierarchySpec;
    use crate::trainer::{ModelConfig, Variant};

    fn model(seed: u64) -> Model {
        let env = EnvSpec::Bandit(BanditConfig { agents: 2, arms: 3, horizon: 2 }).build().unwrap();
        let cfg = ModelConfig {
            d: 4,
            msg_hidden: 4,
            ..Default::default()
        };
        Model::new(Variant::Himppo, HierarchySpec::two_level(1), &cfg, env.obs_schema(), env.action_space(), seed).unwrap()
    }

    #[test]
    fn zero_return_prints_as_zero_point_zero() {
        let e = EpisodeLog {
            episode: 0,
            update: 0,
            global_step: 3,
            steps: 3,
            agent_returns: vec![0.0, 0.0],
            level_rewards: [Some(0.0), None, Some(0.5)],
            level_losses: [None; 3],
            sigma: 0.5,
        };
        let row = episode_row(&e);
        assert_eq!(row, "train,0,0,3,3,0.0,,0.0;0.0,0.0,,0.5,,,,0.5");
        let cols = CSV_HEADER.split(',').count();
        assert_eq!(row.split(',').count(), cols);
        let ev = EvalLog {
            index: 1,
            update: 2,
            global_step: 9,
            episodes: 10,
            mean_return: 1.5,
            std_return: 0.25,
            agent_returns: vec![1.0, 0.5],
        };
        assert_eq!(eval_row(&ev).split(',').count(), cols);
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = model(1);
        let mut b = model(2);
        assert_ne!(a.levels[0].store.params()[0].value, b.levels[0].store.params()[0].value);
        let bytes = encode_checkpoint(&a, "abc");
        decode_checkpoint(&bytes, &mut b, "abc").unwrap();
        for (x, y) in a.levels.iter().zip(&b.levels) {
            for (p, q) in x.store.params().iter().zip(y.store.params()) {
                assert_eq!(p.value, q.value);
            }
        }
        assert!(matches!(decode_checkpoint(&bytes, &mut b, "abd"), Err(CheckpointError::ConfigHash { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..20], &mut b, "abc"), Err(CheckpointError::Io(_))));
        assert!(matches!(decode_checkpoint(b"nonsense", &mut b, "abc"), Err(CheckpointError::Magic)));
    }
}
