//! Masked reconstruction losses with analytic gradients.
//!
//! All losses are means over the contributing entries, accumulated in f64.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_SMOOTH_L1_BETA: f64 = 1.0;

/// Validity of loss entries, shaped `[N, C, H, W]` or `[N, 1, H, W]` (shared across channels).
#[derive(Debug, Clone, PartialEq)]
pub struct LossMask {
    shape: [usize; 4],
    bits: Vec<bool>,
}

impl LossMask {
    pub fn new(shape: [usize; 4], bits: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(TensorError::Shape(format!("mask shape {shape:?} with {} bits", bits.len())));
        }
        Ok(LossMask { shape, bits })
    }

    pub fn all_valid(shape: [usize; 4]) -> Self {
        LossMask {
            shape,
            bits: vec![true; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_valid(&self, n: usize, c: usize, y: usize, x: usize) -> bool {
        let [_, mc, h, w] = self.shape;
        let c = if mc == 1 { 0 } else { c };
        self.bits[((n * mc + c) * h + y) * w + x]
    }

    fn check(&self, dims: (usize, usize, usize, usize)) -> Result<()> {
        let [n, c, h, w] = self.shape;
        if (n, h, w) != (dims.0, dims.2, dims.3) || (c != 1 && c != dims.1) {
            return Err(TensorError::Shape(format!("mask {:?} does not cover {dims:?}", self.shape)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mae: f64,
    pub w_mse: f64,
    pub w_dpix: f64,
    pub w_dband: f64,
    pub w_smoothl1: f64,
}

impl LossWeights {
    /// MAE 1, MSE 1, delta-pixel 4, delta-bands 4.
    pub const PRETRAIN: LossWeights = LossWeights {
        w_mae: 1.0,
        w_mse: 1.0,
        w_dpix: 4.0,
        w_dband: 4.0,
        w_smoothl1: 0.0,
    };

    /// Smooth-L1 only.
    pub const MAIN: LossWeights = LossWeights {
        w_mae: 0.0,
        w_mse: 0.0,
        w_dpix: 0.0,
        w_dband: 0.0,
        w_smoothl1: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_mae, self.w_mse, self.w_dpix, self.w_dband, self.w_smoothl1];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TensorError::InvalidArgument(format!("loss weights must be finite and ≥ 0: {self:?}")));
        }
        if !all.iter().any(|&w| w > 0.0) {
            return Err(TensorError::InvalidArgument("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub beta: f64,
    /// Penalize neighbor differences of `pred − gt` instead of `pred` alone.
    pub delta_vs_gt: bool,
}

impl LossConfig {
    pub fn new(weights: LossWeights) -> Self {
        LossConfig {
            weights,
            beta: DEFAULT_SMOOTH_L1_BETA,
            delta_vs_gt: false,
        }
    }
}

fn check_pair(pred: &Tensor, gt: &Tensor, mask: Option<&LossMask>) -> Result<(usize, usize, usize, usize)> {
    let dims = pred.dims4()?;
    if gt.shape() != pred.shape() {
        return Err(TensorError::Shape(format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    if let Some(m) = mask {
        m.check(dims)?;
    }
    Ok(dims)
}

/// Mean of `f(pred − gt)` over valid entries; `f` returns value and derivative.
fn elementwise(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    mask: Option<&LossMask>,
    name: &'static str,
    f: impl Fn(f64) -> (f64, f64),
) -> Result<Var> {
    let p = g.value(pred);
    let (_, c, h, w) = check_pair(p, gt, mask)?;
    let mut local = vec![0.0f32; p.len()];
    let (mut sum, mut count) = (0.0f64, 0usize);
    for i in 0..p.len() {
        if let Some(m) = mask {
            let (x, y, ch, item) = (i % w, (i / w) % h, (i / (w * h)) % c, i / (w * h * c));
            if !m.is_valid(item, ch, y, x) {
                continue;
            }
        }
        let (v, dv) = f(p.data()[i] as f64 - gt.data()[i] as f64);
        sum += v;
        local[i] = dv as f32;
        count += 1;
    }
    if count == 0 {
        return Err(TensorError::EmptyMask(name));
    }
    let inv = 1.0 / count as f64;
    local.iter_mut().for_each(|l| *l = (*l as f64 * inv) as f32);
    g.reduce(pred, sum * inv, local, name)
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_mae(g: &mut Graph, pred: Var, gt: &Tensor, mask: Option<&LossMask>) -> Result<Var> {
    elementwise(g, pred, gt, mask, "mae", |d| (d.abs(), sign(d)))
}

pub fn loss_mse(g: &mut Graph, pred: Var, gt: &Tensor, mask: Option<&LossMask>) -> Result<Var> {
    elementwise(g, pred, gt, mask, "mse", |d| (d * d, 2.0 * d))
}

pub fn loss_smooth_l1(g: &mut Graph, pred: Var, gt: &Tensor, mask: Option<&LossMask>, beta: f64) -> Result<Var> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(TensorError::InvalidArgument(format!("smooth-L1 beta must be > 0, got {beta}")));
    }
    elementwise(g, pred, gt, mask, "smooth_l1", |d| {
        if d.abs() < beta {
            (0.5 * d * d / beta, d / beta)
        } else {
            (d.abs() - 0.5 * beta, sign(d))
        }
    })
}

/// Shared core of the delta losses: for each valid entry, the max |Δ| over its
/// valid neighbors (visited in scan order, first maximum wins).
fn delta_loss(
    g: &mut Graph,
    pred: Var,
    gt: Option<&Tensor>,
    mask: Option<&LossMask>,
    name: &'static str,
    neighbors: impl Fn(usize, usize, usize) -> Vec<(usize, usize, usize)>,
) -> Result<Var> {
    let p = g.value(pred);
    let (n, c, h, w) = match gt {
        Some(t) => check_pair(p, t, mask)?,
        None => {
            let dims = p.dims4()?;
            if let Some(m) = mask {
                m.check(dims)?;
            }
            dims
        }
    };
    let valid = |i: usize, ch: usize, y: usize, x: usize| mask.is_none_or(|m| m.is_valid(i, ch, y, x));
    let at = |i: usize, ch: usize, y: usize, x: usize| ((i * c + ch) * h + y) * w + x;
    let diff = |a: usize, b: usize| {
        let d = p.data()[a] as f64 - p.data()[b] as f64;
        match gt {
            Some(t) => d - (t.data()[a] as f64 - t.data()[b] as f64),
            None => d,
        }
    };
    // (entry, chosen neighbor, signed difference)
    let mut picks: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if !valid(i, ch, y, x) {
                        continue;
                    }
                    let e = at(i, ch, y, x);
                    let mut best: Option<(usize, f64)> = None;
                    for (nc, ny, nx) in neighbors(ch, y, x) {
                        if !valid(i, nc, ny, nx) {
                            continue;
                        }
                        let u = at(i, nc, ny, nx);
                        let d = diff(e, u);
                        if best.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                            best = Some((u, d));
                        }
                    }
                    if let Some((u, d)) = best {
                        picks.push((e, u, d));
                    }
                }
            }
        }
    }
    if picks.is_empty() {
        return Err(TensorError::EmptyMask(name));
    }
    let inv = 1.0 / picks.len() as f64;
    let mut local = vec![0.0f64; p.len()];
    let mut sum = 0.0;
    for &(e, u, d) in &picks {
        sum += d.abs();
        local[e] += sign(d) * inv;
        local[u] -= sign(d) * inv;
    }
    let local = local.into_iter().map(|v| v as f32).collect();
    g.reduce(pred, sum * inv, local, name)
}

/// Mean over pixels and bands of the max absolute difference to the 4-neighbors.
/// With `gt`, differences are taken on `pred − gt`.
pub fn loss_delta_pixel(g: &mut Graph, pred: Var, gt: Option<&Tensor>, mask: Option<&LossMask>) -> Result<Var> {
    let (_, _, h, w) = g.value(pred).dims4()?;
    if h < 2 && w < 2 {
        return Err(TensorError::Shape(format!("delta_pixel needs more than one pixel, got {h}×{w}")));
    }
    delta_loss(g, pred, gt, mask, "delta_pixel", |c, y, x| {
        let mut v = Vec::with_capacity(4);
        if y > 0 {
            v.push((c, y - 1, x));
        }
        if x > 0 {
            v.push((c, y, x - 1));
        }
        if x + 1 < w {
            v.push((c, y, x + 1));
        }
        if y + 1 < h {
            v.push((c, y + 1, x));
        }
        v
    })
}

/// Mean over pixels and bands of the max absolute difference to the adjacent bands.
pub fn loss_delta_bands(g: &mut Graph, pred: Var, gt: Option<&Tensor>, mask: Option<&LossMask>) -> Result<Var> {
    let (_, c, _, _) = g.value(pred).dims4()?;
    if c < 2 {
        return Err(TensorError::Shape(format!("delta_bands needs ≥ 2 bands, got {c}")));
    }
    delta_loss(g, pred, gt, mask, "delta_bands", |ch, y, x| {
        let mut v = Vec::with_capacity(2);
        if ch > 0 {
            v.push((ch - 1, y, x));
        }
        if ch + 1 < c {
            v.push((ch + 1, y, x));
        }
        v
    })
}

/// Weighted sum of the enabled loss terms; zero-weight terms are skipped.
pub fn composite_loss(g: &mut Graph, pred: Var, gt: &Tensor, mask: Option<&LossMask>, cfg: &LossConfig) -> Result<Var> {
    cfg.weights.validate()?;
    let w = cfg.weights;
    let delta_gt = cfg.delta_vs_gt.then_some(gt);
    let mut terms = Vec::new();
    if w.w_mae > 0.0 {
        terms.push((loss_mae(g, pred, gt, mask)?, w.w_mae));
    }
    if w.w_mse > 0.0 {
        terms.push((loss_mse(g, pred, gt, mask)?, w.w_mse));
    }
    if w.w_dpix > 0.0 {
        terms.push((loss_delta_pixel(g, pred, delta_gt, mask)?, w.w_dpix));
    }
    if w.w_dband > 0.0 {
        terms.push((loss_delta_bands(g, pred, delta_gt, mask)?, w.w_dband));
    }
    if w.w_smoothl1 > 0.0 {
        terms.push((loss_smooth_l1(g, pred, gt, mask, cfg.beta)?, w.w_smoothl1));
    }
    g.combine(&terms)
}
