//! The per-stage optimization loop.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spectraforge_core::spectral::spectral_angle;
use spectraforge_core::SpectralCube;
use spectraforge_tensornet::{adam_step, build_network, composite_loss, AdamState, Graph, Network, TensorError};

use crate::checkpoint::save_checkpoint;
use crate::config::{Stage, TrainConfig};
use crate::data::{cube_tensor, epoch_batches, BatchBuilder, Dataset};
use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number within the stage.
    pub epoch: usize,
    /// Mean composite loss over the epoch's batches.
    pub loss: f64,
    /// Mean normalized spectral angle on the validation slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_angle: Option<f64>,
}

/// Everything needed to continue a stage exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub stage: Stage,
    pub network: Network,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Freshly initialized network; the same stream then drives shuffling and augmentation.
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let network = build_network(&cfg.network, &mut rng)?;
        Ok(TrainState {
            stage: cfg.stage,
            adam: AdamState::new(network.params()),
            network,
            epoch: 0,
            history: Vec::new(),
            rng,
        })
    }

    /// Starts a stage from existing weights with a new optimizer state.
    pub fn from_network(network: Network, cfg: &TrainConfig) -> Result<Self> {
        if network.config() != &cfg.network {
            return Err(TrainError::Config("network weights do not match the configured architecture".into()));
        }
        Ok(TrainState {
            stage: cfg.stage,
            adam: AdamState::new(network.params()),
            network,
            epoch: 0,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for periodic checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn checkpoint_name(stage: Stage, epoch: usize) -> String {
    format!("{}-epoch{:05}.ckpt", stage.name(), epoch)
}

/// Training ids minus the trailing validation slice, and that slice.
pub fn split_validation(train_ids: &[String], validation_count: usize) -> Result<(Vec<String>, Vec<String>)> {
    if validation_count > 0 && validation_count >= train_ids.len() {
        return Err(TrainError::Config(format!(
            "validation_count {validation_count} leaves no training samples out of {}",
            train_ids.len()
        )));
    }
    let cut = train_ids.len() - validation_count;
    Ok((train_ids[..cut].to_vec(), train_ids[cut..].to_vec()))
}

/// Network output for one cube, labeled with `wavelengths`.
pub fn predict_cube(network: &Network, input: &SpectralCube, wavelengths: &[f64]) -> Result<SpectralCube> {
    let [h, w, bands] = network.config().output;
    if wavelengths.len() != bands {
        return Err(TrainError::Config(format!(
            "{} output wavelengths for a {bands}-band network",
            wavelengths.len()
        )));
    }
    let out = network.predict(cube_tensor(input))?;
    Ok(SpectralCube::new(w, h, wavelengths.to_vec(), out.into_data())?)
}

fn validation_angle(network: &Network, builder: &BatchBuilder, data: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let s = &data.samples()[i];
        let input = builder.raw_input(&s.input)?;
        let pred = predict_cube(network, &input, s.gt.wavelengths())?;
        total += spectral_angle(&s.gt, &pred)?.mean();
    }
    Ok(total / idx.len() as f64)
}

fn diverged(epoch: usize, batch: usize, ids: Vec<String>, e: TensorError) -> TrainError {
    match e {
        TensorError::NonFinite { .. } => TrainError::NonFiniteLoss {
            epoch,
            batch,
            samples: ids,
            detail: e.to_string(),
        },
        other => other.into(),
    }
}

/// Runs epochs until `state.epoch == cfg.epochs`.
///
/// All randomness comes from `state.rng`, so a state restored from a
/// checkpoint continues the uninterrupted trajectory bit for bit.
pub fn train_stage(
    mut state: TrainState,
    data: &Dataset,
    train_ids: &[String],
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<TrainState> {
    cfg.validate()?;
    if state.stage != cfg.stage {
        return Err(TrainError::Config(format!(
            "state belongs to the {} stage, config to {}",
            state.stage.name(),
            cfg.stage.name()
        )));
    }
    if state.network.config() != &cfg.network {
        return Err(TrainError::Config("network weights do not match the configured architecture".into()));
    }
    let (fit_ids, val_ids) = split_validation(train_ids, cfg.validation_count)?;
    if fit_ids.is_empty() {
        return Err(TrainError::Config("no training samples".into()));
    }
    let pool = data.indices(&fit_ids)?;
    let val = data.indices(&val_ids)?;
    let builder = BatchBuilder::new(data, cfg)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }

    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let plan = epoch_batches(&pool, cfg.batch_size, &mut state.rng);
        let mut sum = 0.0;
        for (b, indices) in plan.iter().enumerate() {
            let batch = builder.make_batch(indices, &mut state.rng)?;
            let ids = batch.ids();
            let (x, y, mask) = batch.tensors()?;
            let mut g = Graph::new();
            let xv = g.input(x);
            let f = state.network.forward(&mut g, xv).map_err(|e| diverged(epoch, b, ids.clone(), e))?;
            let loss = composite_loss(&mut g, f.output, &y, Some(&mask), &cfg.loss)
                .map_err(|e| diverged(epoch, b, ids.clone(), e))?;
            let value = g.scalar(loss)?;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    samples: ids,
                    detail: format!("loss {value}"),
                });
            }
            g.backward(loss).map_err(|e| diverged(epoch, b, ids.clone(), e))?;
            let grads: Vec<_> = f
                .params
                .iter()
                .map(|&p| g.take_grad(p).expect("parameters carry gradients"))
                .collect();
            adam_step(state.network.params_mut(), &grads, &mut state.adam, &cfg.optimizer)
                .map_err(|e| diverged(epoch, b, ids, e))?;
            sum += value;
        }
        let validation_angle = if val.is_empty() {
            None
        } else {
            Some(validation_angle(&state.network, &builder, data, &val)?)
        };
        let record = EpochRecord {
            epoch,
            loss: sum / plan.len() as f64,
            validation_angle,
        };
        log::info!(
            "{} epoch {epoch}/{}: loss {:.6}{}",
            cfg.stage.name(),
            cfg.epochs,
            record.loss,
            validation_angle.map_or(String::new(), |a| format!(", validation angle {a:.4}"))
        );
        state.history.push(record);
        state.epoch = epoch;
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(checkpoint_name(cfg.stage, epoch)), &state, cfg)?;
            }
        }
    }
    Ok(state)
}

/// Writes the final state of a stage as `<dir>/<stage>-final.ckpt`.
pub fn save_final(dir: &Path, state: &TrainState, cfg: &TrainConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    let path = dir.join(format!("{}-final.ckpt", cfg.stage.name()));
    save_checkpoint(&path, state, cfg)?;
    Ok(path)
}
