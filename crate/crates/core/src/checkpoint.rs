//! Binary SAC checkpoints with a JSON metadata sidecar.
//!
//! Layout after the 8-byte magic `R2RSAC01`, all little-endian: for each of
//! actor, critic 1, critic 2, target 1, target 2 a `u32` layer count followed
//! per layer by `u32` rows, `u32` cols, `rows * cols` weights (row-major `f64`)
//! and `rows` biases; then `f64` log-temperature, `u64` training step, `u64`
//! seed and the 32-byte SHA-256 of the resolved config.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{hex_string, RunConfig};
use crate::nnet::{Dense, Mlp};
use crate::sac::SacAgent;

pub const MAGIC: &[u8; 8] = b"R2RSAC01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

fn io_err(path: &Path, e: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub log_alpha: f64,
    pub step: u64,
    pub seed: u64,
    pub config_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShapes {
    pub actor: Vec<usize>,
    pub critic: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub shapes: NetworkShapes,
    pub step: u64,
    pub seed: u64,
    pub eval_return: Option<f64>,
    pub alpha: f64,
    /// Actor plus both online critics.
    pub param_count: usize,
    pub actor_param_count: usize,
    pub config_hash: String,
    pub config: RunConfig,
}

impl Checkpoint {
    pub fn from_agent(agent: &SacAgent, step: u64, seed: u64, config_hash: [u8; 32]) -> Self {
        Self {
            actor: agent.actor.clone(),
            critics: [agent.critic1.clone(), agent.critic2.clone()],
            targets: [agent.target1.clone(), agent.target2.clone()],
            log_alpha: agent.log_alpha,
            step,
            seed,
            config_hash,
        }
    }

    /// Agent with these networks and fresh optimizer state.
    pub fn to_agent(&self, config: &RunConfig) -> SacAgent {
        SacAgent::from_parts(
            self.actor.clone(),
            self.critics.clone(),
            self.targets.clone(),
            self.log_alpha,
            config.sac.clone(),
        )
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critics[0].param_count() + self.critics[1].param_count()
    }

    pub fn meta(&self, config: &RunConfig, eval_return: Option<f64>) -> CheckpointMeta {
        CheckpointMeta {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            shapes: NetworkShapes {
                actor: self.actor.sizes(),
                critic: self.critics[0].sizes(),
            },
            step: self.step,
            seed: self.seed,
            eval_return,
            alpha: self.log_alpha.exp(),
            param_count: self.param_count(),
            actor_param_count: self.actor.param_count(),
            config_hash: hex_string(&self.config_hash),
            config: config.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * (self.param_count() * 5 / 3 + 64));
        out.extend_from_slice(MAGIC);
        let nets = [
            &self.actor,
            &self.critics[0],
            &self.critics[1],
            &self.targets[0],
            &self.targets[1],
        ];
        for net in nets {
            out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
            for layer in &net.layers {
                out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
                out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
                // standard layout iterates row-major
                for w in layer.weights.iter() {
                    out.extend_from_slice(&w.to_le_bytes());
                }
                for b in layer.bias.iter() {
                    out.extend_from_slice(&b.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.log_alpha.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut nets = Vec::with_capacity(5);
        for _ in 0..5 {
            nets.push(r.mlp()?);
        }
        let log_alpha = r.f64()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut it = nets.into_iter();
        let mut next = || it.next().expect("five networks");
        let actor = next();
        let critics = [next(), next()];
        let targets = [next(), next()];
        for c in critics.iter().chain(&targets) {
            if !c.is_congruent(&critics[0]) {
                return Err(CheckpointError::Malformed("critic shapes differ".into()));
            }
        }
        if critics[0].output_dim() != 1 || actor.output_dim() % 2 != 0 {
            return Err(CheckpointError::Malformed("unexpected output widths".into()));
        }
        Ok(Self {
            actor,
            critics,
            targets,
            log_alpha,
            step,
            seed,
            config_hash,
        })
    }

    /// Write `path` and its `.json` sidecar.
    pub fn save(
        &self,
        path: &Path,
        config: &RunConfig,
        eval_return: Option<f64>,
    ) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))?;
        let side = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&self.meta(config, eval_return))
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        text.push('\n');
        std::fs::write(&side, text).map_err(|e| io_err(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    serde_json::from_str(&text).map_err(|e| CheckpointError::Metadata(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.pos))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn mlp(&mut self) -> Result<Mlp, CheckpointError> {
        let n_layers = self.u32()? as usize;
        if n_layers == 0 {
            return Err(CheckpointError::Malformed("network without layers".into()));
        }
        let mut layers: Vec<Dense> = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            if let Some(prev) = layers.last() {
                if prev.outputs() != cols {
                    return Err(CheckpointError::Malformed(format!(
                        "layer expects {cols} inputs after a {}-unit layer",
                        prev.outputs()
                    )));
                }
            }
            let w = self.f64s(rows * cols)?;
            let b = self.f64s(rows)?;
            layers.push(Dense {
                weights: Array2::from_shape_vec((rows, cols), w)
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?,
                bias: Array1::from(b),
            });
        }
        Ok(Mlp { layers })
    }
}
