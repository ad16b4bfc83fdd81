//! In-memory samples and batch assembly for both training stages.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use spectraforge_core::augment::{augment_pair, AffineParams};
use spectraforge_core::hypercube::{load_cube, load_mask_png};
use spectraforge_core::spectral::{build_projection, project_cube, ProjectionMatrix};
use spectraforge_core::spotmask::{inpaint_spectral, spot_mask};
use spectraforge_core::{SpectralCube, ValidityMask};
use spectraforge_tensornet::{LossMask, Tensor};

use crate::config::{Stage, TrainConfig};
use crate::error::{Result, TrainError};
use crate::manifest::DatasetManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Our-camera cube.
    pub input: SpectralCube,
    pub gt: SpectralCube,
    /// Root pixels at ground-truth resolution.
    pub seg: Option<ValidityMask>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if samples[..i].iter().any(|o| o.id == s.id) {
                return Err(TrainError::Manifest(format!("duplicate sample id {:?}", s.id)));
            }
            if let Some(seg) = &s.seg {
                if seg.width() != s.gt.width() || seg.height() != s.gt.height() {
                    return Err(TrainError::Manifest(format!(
                        "{}: segmentation {}x{} vs ground truth {}x{}",
                        s.id,
                        seg.width(),
                        seg.height(),
                        s.gt.width(),
                        s.gt.height()
                    )));
                }
            }
        }
        Ok(Dataset { samples })
    }

    /// Loads every sample listed in the manifest.
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for r in &manifest.samples {
            let seg = match &r.seg_path {
                Some(p) => Some(load_mask_png(p)?),
                None => None,
            };
            samples.push(Sample {
                id: r.id.clone(),
                input: load_cube(&r.input_path)?,
                gt: load_cube(&r.gt_path)?,
                seg,
            });
        }
        Dataset::new(samples)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Indices of `ids`, failing on unknown ids.
    pub fn indices(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.position(id)
                    .ok_or_else(|| TrainError::Manifest(format!("sample {id:?} is not in the dataset")))
            })
            .collect()
    }
}

/// Where a batch item's input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Ground truth projected onto the LED bands and upsampled to input size.
    Projected,
    /// The our-camera capture.
    Raw,
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub id: String,
    pub provenance: Provenance,
    pub input: SpectralCube,
    pub gt: SpectralCube,
    /// Loss validity at ground-truth resolution.
    pub mask: ValidityMask,
    pub params: AffineParams,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.items.iter().filter(|i| i.provenance == p).count()
    }

    /// Stacks the batch into `[N, C, H, W]` input and target tensors and a `[N, 1, h, w]` mask.
    pub fn tensors(&self) -> Result<(Tensor, Tensor, LossMask)> {
        let first = self.items.first().ok_or_else(|| TrainError::Config("empty batch".into()))?;
        let (iw, ih, ib) = first.input.dims();
        let (gw, gh, gb) = first.gt.dims();
        let n = self.items.len();
        let mut x = Vec::with_capacity(n * iw * ih * ib);
        let mut y = Vec::with_capacity(n * gw * gh * gb);
        let mut m = Vec::with_capacity(n * gw * gh);
        for item in &self.items {
            if item.input.dims() != (iw, ih, ib) || item.gt.dims() != (gw, gh, gb) {
                return Err(TrainError::Config(format!("batch item {} has mismatched dimensions", item.id)));
            }
            x.extend_from_slice(item.input.data());
            y.extend_from_slice(item.gt.data());
            m.extend_from_slice(item.mask.bits());
        }
        Ok((
            Tensor::new(vec![n, ib, ih, iw], x)?,
            Tensor::new(vec![n, gb, gh, gw], y)?,
            LossMask::new([n, 1, gh, gw], m)?,
        ))
    }
}

/// Cube as a single-item `[1, C, H, W]` tensor.
pub fn cube_tensor(cube: &SpectralCube) -> Tensor {
    let (w, h, b) = cube.dims();
    Tensor::new(vec![1, b, h, w], cube.data().to_vec()).expect("cube data matches its dimensions")
}

/// Turns a dataset into augmented, provenance-tagged batches.
#[derive(Debug)]
pub struct BatchBuilder<'a> {
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    projection: ProjectionMatrix,
}

impl<'a> BatchBuilder<'a> {
    /// Checks every sample against the network dimensions and builds the LED projection.
    pub fn new(data: &'a Dataset, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = data.samples.first().ok_or_else(|| TrainError::Manifest("dataset is empty".into()))?;
        let grid = first.gt.wavelengths().to_vec();
        let [ih, iw, ic] = cfg.network.input;
        let [oh, ow, ob] = cfg.network.output;
        for s in &data.samples {
            if s.input.dims() != (iw, ih, ic) {
                return Err(TrainError::Manifest(format!(
                    "{}: input {:?} does not match network input {}x{}x{}",
                    s.id,
                    s.input.dims(),
                    iw,
                    ih,
                    ic
                )));
            }
            if s.gt.dims() != (ow, oh, ob) || s.gt.wavelengths() != grid.as_slice() {
                return Err(TrainError::Manifest(format!(
                    "{}: ground truth {:?} does not match network output {}x{}x{} on a shared grid",
                    s.id,
                    s.gt.dims(),
                    ow,
                    oh,
                    ob
                )));
            }
        }
        let projection = build_projection(&cfg.leds, &grid)?;
        Ok(BatchBuilder { data, cfg, projection })
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    /// Network input derived from the ground truth.
    pub fn projected_input(&self, gt: &SpectralCube) -> Result<SpectralCube> {
        let [h, w, _] = self.cfg.network.input;
        Ok(project_cube(gt, &self.projection)?.resize_bilinear(w, h)?)
    }

    /// Raw input after the optional spot inpainting.
    pub fn raw_input(&self, input: &SpectralCube) -> Result<SpectralCube> {
        if self.cfg.inpaint_raw {
            let mask = spot_mask(input, self.cfg.spot_ratio)?;
            Ok(inpaint_spectral(input, &mask)?)
        } else {
            Ok(input.clone())
        }
    }

    pub fn item<R: Rng + ?Sized>(&self, index: usize, provenance: Provenance, rng: &mut R) -> Result<BatchItem> {
        let s = &self.data.samples[index];
        let input = match provenance {
            Provenance::Projected => self.projected_input(&s.gt)?,
            Provenance::Raw => self.raw_input(&s.input)?,
        };
        let aug = &self.cfg.augment;
        if !aug.enabled {
            return Ok(BatchItem {
                id: s.id.clone(),
                provenance,
                mask: ValidityMask::all_valid(s.gt.width(), s.gt.height(), 1),
                gt: s.gt.clone(),
                input,
                params: AffineParams::IDENTITY,
            });
        }
        let pair = augment_pair(&input, None, &s.gt, None, rng, &aug.ranges, aug.warp_gt)?;
        Ok(BatchItem {
            id: s.id.clone(),
            provenance,
            input: pair.input,
            gt: pair.gt,
            mask: pair.mask,
            params: pair.params,
        })
    }

    /// Projected items only, one per index.
    pub fn make_pretrain_batch<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Result<Batch> {
        let items = indices
            .iter()
            .map(|&i| self.item(i, Provenance::Projected, rng))
            .collect::<Result<_>>()?;
        Ok(Batch { items })
    }

    /// The first `projected_per_batch` indices become projected items and the
    /// rest raw items; the item order is then shuffled.
    pub fn make_main_batch<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Result<Batch> {
        if indices.len() != self.cfg.batch_size {
            return Err(TrainError::Config(format!(
                "main batch needs {} samples, got {}",
                self.cfg.batch_size,
                indices.len()
            )));
        }
        let mut items = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            let p = if k < self.cfg.projected_per_batch {
                Provenance::Projected
            } else {
                Provenance::Raw
            };
            items.push(self.item(i, p, rng)?);
        }
        items.shuffle(rng);
        Ok(Batch { items })
    }

    pub fn make_batch<R: Rng + ?Sized>(&self, indices: &[usize], rng: &mut R) -> Result<Batch> {
        match self.cfg.stage {
            Stage::Pretrain => self.make_pretrain_batch(indices, rng),
            Stage::Main => self.make_main_batch(indices, rng),
        }
    }
}

/// One epoch: the pool is reshuffled and cut into `⌈len / batch_size⌉`
/// batches; the last batch wraps around to the start of the shuffled order
/// so every batch is full.
pub fn epoch_batches<R: Rng + ?Sized>(pool: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    if pool.is_empty() || batch_size == 0 {
        return Vec::new();
    }
    let mut order = pool.to_vec();
    order.shuffle(rng);
    let batches = order.len().div_ceil(batch_size);
    (0..batches)
        .map(|b| (0..batch_size).map(|k| order[(b * batch_size + k) % order.len()]).collect())
        .collect()
}
