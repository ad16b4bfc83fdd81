//! Central finite-difference checks of analytic gradients.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default perturbation for 32-bit values.
pub const DEFAULT_EPS: f32 = 1e-3;

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok((g, vars, out))
}

fn scalar_of<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, _, out) = evaluate(inputs, build)?;
    g.scalar(out)
}

/// Analytic gradients of the scalar built by `build` with respect to every input.
pub fn analytic<F>(inputs: &[Tensor], build: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(inputs, build)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Element-wise check of every input; returns the relative error per input tensor.
pub fn check_elementwise<F>(inputs: &[Tensor], eps: f32, build: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, &build)?;
    let mut errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (t, grad) in grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grad.len());
        for j in 0..inputs[t].len() {
            let x = inputs[t].data()[j];
            let (xp, xm) = (x + eps, x - eps);
            work[t].data_mut()[j] = xp;
            let fp = scalar_of(&work, &build)?;
            work[t].data_mut()[j] = xm;
            let fm = scalar_of(&work, &build)?;
            work[t].data_mut()[j] = x;
            numeric.push((fp - fm) / (xp as f64 - xm as f64));
        }
        let a: Vec<f64> = grad.data().iter().map(|&v| v as f64).collect();
        errors.push(relative_error(&a, &numeric));
    }
    Ok(errors)
}

/// Outcome of a kink-aware check on one input tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateReport {
    pub rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a branch even at the smallest step.
    pub skipped: usize,
}

fn signed_scalar<F>(inputs: &[Tensor], build: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, _, out) = evaluate(inputs, build)?;
    Ok((g.scalar(out)?, g.decision_signature()))
}

/// Element-wise check for graphs with many activation kinks. A coordinate whose
/// ±eps evaluation changes the branch signature is retried at eps/4 and eps/16,
/// then skipped. `per_tensor` limits the number of randomly chosen coordinates.
pub fn check_kink_aware<F, R>(
    inputs: &[Tensor],
    eps: f32,
    per_tensor: Option<usize>,
    rng: &mut R,
    build: F,
) -> Result<Vec<CoordinateReport>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let (base_graph, _, _) = evaluate(inputs, &build)?;
    let base = base_graph.decision_signature();
    drop(base_graph);
    let grads = analytic(inputs, &build)?;
    let mut work = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (t, grad) in grads.iter().enumerate() {
        let n = inputs[t].len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < n => rand::seq::index::sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let (mut a, mut num, mut skipped) = (Vec::new(), Vec::new(), 0);
        for &j in &coords {
            let x = inputs[t].data()[j];
            let mut found = None;
            for step in [eps, eps / 4.0, eps / 16.0] {
                let (xp, xm) = (x + step, x - step);
                work[t].data_mut()[j] = xp;
                let (fp, sp) = signed_scalar(&work, &build)?;
                work[t].data_mut()[j] = xm;
                let (fm, sm) = signed_scalar(&work, &build)?;
                work[t].data_mut()[j] = x;
                if sp == base && sm == base {
                    found = Some((fp - fm) / (xp as f64 - xm as f64));
                    break;
                }
            }
            match found {
                Some(d) => {
                    a.push(grad.data()[j] as f64);
                    num.push(d);
                }
                None => skipped += 1,
            }
        }
        reports.push(CoordinateReport {
            rel_err: relative_error(&a, &num),
            checked: a.len(),
            skipped,
        });
    }
    Ok(reports)
}

/// Worst relative error of one op or loss over a number of random cases.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Uniform values with `|v| ≥ margin`, keeping piecewise-linear ops off their kinks.
fn away_from_zero<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], margin: f32) -> Tensor {
    let mut t = uniform(rng, shape, margin, 1.0);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// Distinct values separated by at least `gap`, in random order.
fn distinct<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], gap: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * gap + rng.random_range(0.0..gap / 4.0)).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).expect("sized")
}

/// Smallest distance from a delta-loss decision boundary: either the max |Δ|
/// of an entry is nearly tied with another neighbor, or some Δ is near zero.
fn delta_margin(t: &Tensor, gt: Option<&Tensor>, bands: bool) -> f64 {
    let (_, c, h, w) = t.dims4().expect("rank 4");
    let at = |ch: usize, y: usize, x: usize| (ch * h + y) * w + x;
    let val = |i: usize| t.data()[i] as f64 - gt.map_or(0.0, |g| g.data()[i] as f64);
    let mut margin = f64::INFINITY;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut nb = Vec::new();
                if bands {
                    if ch > 0 {
                        nb.push(at(ch - 1, y, x));
                    }
                    if ch + 1 < c {
                        nb.push(at(ch + 1, y, x));
                    }
                } else {
                    if y > 0 {
                        nb.push(at(ch, y - 1, x));
                    }
                    if x > 0 {
                        nb.push(at(ch, y, x - 1));
                    }
                    if x + 1 < w {
                        nb.push(at(ch, y, x + 1));
                    }
                    if y + 1 < h {
                        nb.push(at(ch, y + 1, x));
                    }
                }
                let e = at(ch, y, x);
                let mut d: Vec<f64> = nb.iter().map(|&u| (val(e) - val(u)).abs()).collect();
                d.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min(d[0]);
                if d.len() > 1 {
                    margin = margin.min(d[0] - d[1]);
                }
            }
        }
    }
    margin
}

fn kink_free<R, G>(rng: &mut R, mut make: G, ok: impl Fn(&Tensor) -> bool) -> Tensor
where
    R: Rng + ?Sized,
    G: FnMut(&mut R) -> Tensor,
{
    loop {
        let t = make(rng);
        if ok(&t) {
            return t;
        }
    }
}

/// Runs `trials` random element-wise checks for every layer op and loss.
pub fn run_suite<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> Result<Vec<SuiteEntry>> {
    use crate::loss::*;

    let eps = DEFAULT_EPS;
    // Perturbations move a difference by up to 2·eps; keep decisions 4·eps away.
    let safe = 4.0 * eps as f64;
    let mut out = Vec::new();
    let mut record = |name: &'static str, errs: Vec<f64>| {
        let worst = errs.into_iter().fold(0.0, f64::max);
        match out.iter_mut().find(|e: &&mut SuiteEntry| e.name == name) {
            Some(e) => {
                e.trials += 1;
                e.max_rel_err = e.max_rel_err.max(worst);
            }
            None => out.push(SuiteEntry {
                name,
                trials: 1,
                max_rel_err: worst,
            }),
        }
    };

    for _ in 0..trials {
        let x = uniform(rng, &[1, 2, 5, 5], -1.0, 1.0);
        let k = uniform(rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(rng, &[3], -1.0, 1.0);
        let wts = uniform(rng, &[75], -1.0, 1.0).into_data();
        record(
            "conv2d",
            check_elementwise(&[x, k, b], eps, |g, v| {
                let y = g.conv2d(v[0], v[1], v[2])?;
                g.sum_weighted(y, &wts)
            })?,
        );

        let x = distinct(rng, &[1, 2, 4, 6], 0.01);
        let wts = uniform(rng, &[12], -1.0, 1.0).into_data();
        record(
            "maxpool2",
            check_elementwise(&[x], eps, |g, v| {
                let y = g.maxpool2(v[0])?;
                g.sum_weighted(y, &wts)
            })?,
        );

        let x = uniform(rng, &[1, 2, 3, 5], -1.0, 1.0);
        let up = uniform(rng, &[2 * 7 * 4], -1.0, 1.0).into_data();
        let down = uniform(rng, &[2 * 2 * 3], -1.0, 1.0).into_data();
        record(
            "bilinear_resize",
            check_elementwise(&[x], eps, |g, v| {
                let a = g.resize(v[0], 7, 4)?;
                let b = g.resize(v[0], 2, 3)?;
                let sa = g.sum_weighted(a, &up)?;
                let sb = g.sum_weighted(b, &down)?;
                g.combine(&[(sa, 1.0), (sb, 1.0)])
            })?,
        );

        let a = uniform(rng, &[2, 2, 3, 3], -1.0, 1.0);
        let b = uniform(rng, &[2, 1, 3, 3], -1.0, 1.0);
        let wts = uniform(rng, &[54], -1.0, 1.0).into_data();
        record(
            "concat_channels",
            check_elementwise(&[a, b], eps, |g, v| {
                let y = g.concat(v[0], v[1])?;
                g.sum_weighted(y, &wts)
            })?,
        );

        let x = away_from_zero(rng, &[1, 2, 4, 4], 0.05);
        let wts = uniform(rng, &[32], -1.0, 1.0).into_data();
        record(
            "leaky_relu",
            check_elementwise(&[x], eps, |g, v| {
                let y = g.leaky_relu(v[0], 0.01)?;
                g.sum_weighted(y, &wts)
            })?,
        );

        let x = uniform(rng, &[1, 2, 4, 4], -3.0, 3.0);
        let wts = uniform(rng, &[32], -1.0, 1.0).into_data();
        record(
            "sigmoid",
            check_elementwise(&[x], eps, |g, v| {
                let y = g.sigmoid(v[0])?;
                g.sum_weighted(y, &wts)
            })?,
        );

        let shape = [2, 3, 3, 4];
        let gt = uniform(rng, &shape, 0.0, 1.0);
        let pred = kink_free(
            rng,
            |r| uniform(r, &shape, 0.0, 1.0),
            |p| p.data().iter().zip(gt.data()).all(|(a, b)| ((a - b) as f64).abs() > safe),
        );
        record("mae", check_elementwise(std::slice::from_ref(&pred), eps, |g, v| loss_mae(g, v[0], &gt, None))?);
        record("mse", check_elementwise(std::slice::from_ref(&pred), eps, |g, v| loss_mse(g, v[0], &gt, None))?);

        let beta = 0.3;
        let pred_s = kink_free(
            rng,
            |r| uniform(r, &shape, 0.0, 1.0),
            |p| p.data().iter().zip(gt.data()).all(|(a, b)| (((a - b) as f64).abs() - beta).abs() > safe),
        );
        record(
            "smooth_l1",
            check_elementwise(&[pred_s], eps, |g, v| loss_smooth_l1(g, v[0], &gt, None, beta))?,
        );

        let shape1 = [1, 3, 3, 4];
        let p = kink_free(rng, |r| uniform(r, &shape1, 0.0, 1.0), |t| delta_margin(t, None, false) > safe);
        record(
            "delta_pixel",
            check_elementwise(&[p], eps, |g, v| loss_delta_pixel(g, v[0], None, None))?,
        );
        let p = kink_free(rng, |r| uniform(r, &shape1, 0.0, 1.0), |t| delta_margin(t, None, true) > safe);
        record(
            "delta_bands",
            check_elementwise(&[p], eps, |g, v| loss_delta_bands(g, v[0], None, None))?,
        );

        let gt1 = uniform(rng, &shape1, 0.0, 1.0);
        let p = kink_free(
            rng,
            |r| uniform(r, &shape1, 0.0, 1.0),
            |t| {
                delta_margin(t, Some(&gt1), false) > safe
                    && delta_margin(t, Some(&gt1), true) > safe
                    && t.data().iter().zip(gt1.data()).all(|(a, b)| ((a - b) as f64).abs() > safe)
            },
        );
        let cfg = LossConfig {
            weights: LossWeights {
                w_mae: 1.0,
                w_mse: 1.0,
                w_dpix: 4.0,
                w_dband: 4.0,
                w_smoothl1: 1.0,
            },
            beta: 2.0,
            delta_vs_gt: true,
        };
        record(
            "composite_delta_vs_gt",
            check_elementwise(&[p], eps, |g, v| composite_loss(g, v[0], &gt1, None, &cfg))?,
        );
    }
    Ok(out)
}
