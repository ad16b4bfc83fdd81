//! Binary checkpoints: parameters, Adam moments, history and the RNG position.
//!
//! Layout: the 8-byte magic `SFCKPT01`, a little-endian `u64` header length,
//! the JSON header, then the parameter tensors followed by the Adam first and
//! second moments, all as little-endian `f32` in storage order.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use spectraforge_tensornet::{AdamState, Network, Tensor};

use crate::config::{Stage, TrainConfig};
use crate::error::{Result, TrainError};
use crate::train::{EpochRecord, TrainState};

pub const MAGIC: &[u8; 8] = b"SFCKPT01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    /// 32-byte ChaCha key as hex.
    pub seed: String,
    pub stream: u64,
    /// Word position, decimal (exceeds the JSON integer range).
    pub word_pos: String,
}

impl RngPosition {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngPosition {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        if self.seed.len() != 64 || !self.seed.is_ascii() {
            return None;
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).ok()?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub stage: Stage,
    pub epoch: usize,
    pub adam_step: u64,
    pub rng: RngPosition,
    pub history: Vec<EpochRecord>,
    pub param_shapes: Vec<Vec<usize>>,
    pub config: TrainConfig,
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    let header = CheckpointHeader {
        stage: state.stage,
        epoch: state.epoch,
        adam_step: state.adam.step,
        rng: RngPosition::capture(&state.rng),
        history: state.history.clone(),
        param_shapes: state.network.params().iter().map(|p| p.shape().to_vec()).collect(),
        config: cfg.clone(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let floats = 3 * state.network.param_count();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in state.network.params() {
        put_f32s(&mut out, p.data());
    }
    for m in state.adam.m.iter().chain(&state.adam.v) {
        put_f32s(&mut out, m);
    }
    let mut f = std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
    f.write_all(&out).map_err(|e| TrainError::io(path, e))
}

/// Restores the state and the config it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let bad = |m: &str| TrainError::Checkpoint {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| TrainError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
    if hlen > body.len() {
        return Err(bad("header length exceeds file size"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen]).map_err(|source| TrainError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    header.config.validate()?;
    let expected: Vec<Vec<usize>> = header.config.network.param_shapes().into_iter().map(|(_, s)| s).collect();
    if expected != header.param_shapes {
        return Err(bad("parameter shapes do not match the stored network config"));
    }
    let counts: Vec<usize> = expected.iter().map(|s| s.iter().product()).collect();
    let total: usize = counts.iter().sum();
    let payload = &body[hlen..];
    if payload.len() != 12 * total {
        return Err(bad(&format!("payload has {} bytes, expected {}", payload.len(), 12 * total)));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
    let params = expected
        .iter()
        .zip(&counts)
        .map(|(shape, &n)| Tensor::new(shape.clone(), take(n)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let m = counts.iter().map(|&n| take(n)).collect();
    let v = counts.iter().map(|&n| take(n)).collect();
    let rng = header.rng.restore().ok_or_else(|| bad("unreadable RNG position"))?;
    let state = TrainState {
        stage: header.stage,
        network: Network::from_params(&header.config.network, params)?,
        adam: AdamState {
            step: header.adam_step,
            m,
            v,
        },
        epoch: header.epoch,
        history: header.history,
        rng,
    };
    Ok((state, header.config))
}
