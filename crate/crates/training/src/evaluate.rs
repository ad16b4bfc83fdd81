//! Test-split metrics: per-sample MAE, MSE and mean normalized spectral angle,
//! with root/soil angle statistics when a segmentation is available.

use serde::{Deserialize, Serialize};
use spectraforge_core::spectral::{class_stats, spectral_angle, AngularErrorMap, ClassStat, ClassStats};
use spectraforge_core::{SpectralCube, ValidityMask};
use spectraforge_tensornet::Network;

use crate::data::{Dataset, Sample};
use crate::error::{Result, TrainError};
use crate::train::predict_cube;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub mae: f64,
    pub mse: f64,
    /// Mean normalized spectral angle.
    pub angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<ClassStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soil: Option<ClassStat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub mae: f64,
    pub mse: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    /// Unweighted means over samples.
    pub mean: MetricMeans,
    /// Angle statistics over the pixels of every segmented sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<ClassStats>,
}

pub fn evaluate_pair(id: &str, gt: &SpectralCube, pred: &SpectralCube, seg: Option<&ValidityMask>) -> Result<SampleMetrics> {
    let err = spectral_angle(gt, pred)?;
    let (mut abs, mut sq) = (0.0f64, 0.0f64);
    for (&a, &b) in gt.data().iter().zip(pred.data()) {
        let d = a as f64 - b as f64;
        abs += d.abs();
        sq += d * d;
    }
    let n = gt.data().len() as f64;
    let classes = seg.map(|s| class_stats(&err, s)).transpose()?;
    Ok(SampleMetrics {
        id: id.to_string(),
        mae: abs / n,
        mse: sq / n,
        angle: err.mean(),
        root: classes.map(|c| c.root),
        soil: classes.map(|c| c.soil),
    })
}

/// Evaluates `predict` on the samples named by `ids`.
pub fn evaluate_with<F>(data: &Dataset, ids: &[String], mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&Sample) -> Result<SpectralCube>,
{
    if ids.is_empty() {
        return Err(TrainError::EmptyTestSplit);
    }
    let mut rows = Vec::with_capacity(ids.len());
    let mut pooled_err = Vec::new();
    let mut pooled_seg = Vec::new();
    let mut pooled_rows = 0;
    let mut pooled_width = None;
    for i in data.indices(ids)? {
        let s = &data.samples()[i];
        let pred = predict(s)?;
        rows.push(evaluate_pair(&s.id, &s.gt, &pred, s.seg.as_ref())?);
        if let Some(seg) = &s.seg {
            if pooled_width.is_none_or(|w| w == seg.width()) {
                pooled_width = Some(seg.width());
                pooled_err.extend(spectral_angle(&s.gt, &pred)?.values);
                pooled_seg.extend_from_slice(seg.bits());
                pooled_rows += seg.height();
            }
        }
    }
    let classes = match pooled_width {
        Some(w) => {
            let err = AngularErrorMap {
                width: w,
                height: pooled_rows,
                values: pooled_err,
            };
            Some(class_stats(&err, &ValidityMask::new(w, pooled_rows, 1, pooled_seg)?)?)
        }
        None => None,
    };
    let n = rows.len() as f64;
    let mean = MetricMeans {
        mae: rows.iter().map(|r| r.mae).sum::<f64>() / n,
        mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
        angle: rows.iter().map(|r| r.angle).sum::<f64>() / n,
    };
    Ok(EvalReport {
        samples: rows,
        mean,
        classes,
    })
}

/// Evaluates the network on the raw inputs of `ids`.
pub fn evaluate(network: &Network, data: &Dataset, ids: &[String]) -> Result<EvalReport> {
    evaluate_with(data, ids, |s| predict_cube(network, &s.input, s.gt.wavelengths()))
}
