//! Raw forward/backward kernels on flat `[N, C, H, W]` buffers.

use rayon::prelude::*;

/// Upper bound on im2col buffer size (floats) per row tile.
const IM2COL_TILE_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
}

impl ConvDims {
    fn kk(&self) -> usize {
        self.c * self.k * self.k
    }

    fn tile_rows(&self) -> usize {
        (IM2COL_TILE_ELEMS / (self.kk() * self.w).max(1)).clamp(1, self.h)
    }
}

fn im2col(x: &[f32], d: &ConvDims, y0: usize, rows: usize, col: &mut [f32]) {
    let pad = d.k / 2;
    let p = rows * d.w;
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let r = (c * d.k + ky) * d.k + kx;
                let dst = &mut col[r * p..(r + 1) * p];
                for ty in 0..rows {
                    let sy = (y0 + ty + ky) as isize - pad as isize;
                    let out = &mut dst[ty * d.w..(ty + 1) * d.w];
                    if sy < 0 || sy >= d.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * d.w..(sy as usize + 1) * d.w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = (x + kx) as isize - pad as isize;
                        *o = if sx < 0 || sx >= d.w as isize { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f32], d: &ConvDims, y0: usize, rows: usize, dx: &mut [f32]) {
    let pad = d.k / 2;
    let p = rows * d.w;
    for c in 0..d.c {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let r = (c * d.k + ky) * d.k + kx;
                let src = &col[r * p..(r + 1) * p];
                for ty in 0..rows {
                    let sy = (y0 + ty + ky) as isize - pad as isize;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    let row = &mut plane[sy as usize * d.w..(sy as usize + 1) * d.w];
                    for x in 0..d.w {
                        let sx = (x + kx) as isize - pad as isize;
                        if sx >= 0 && sx < d.w as isize {
                            row[sx as usize] += src[ty * d.w + x];
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,f] = Σ_c k[f,c] ⋆ x[n,c] + bias[f]` with zero "same" padding.
pub(crate) fn conv_forward(x: &[f32], k: &[f32], bias: &[f32], d: &ConvDims) -> Vec<f32> {
    let (hw, kk) = (d.h * d.w, d.kk());
    let mut out = vec![0.0f32; d.n * d.f * hw];
    out.par_chunks_mut(d.f * hw).enumerate().for_each(|(n, out_n)| {
        let x_n = &x[n * d.c * hw..(n + 1) * d.c * hw];
        let tile = d.tile_rows();
        let mut col = vec![0.0f32; kk * tile * d.w];
        let mut y0 = 0;
        while y0 < d.h {
            let rows = tile.min(d.h - y0);
            let p = rows * d.w;
            im2col(x_n, d, y0, rows, &mut col);
            // SAFETY: all strides and extents lie within the slices borrowed above.
            unsafe {
                matrixmultiply::sgemm(
                    d.f,
                    kk,
                    p,
                    1.0,
                    k.as_ptr(),
                    kk as isize,
                    1,
                    col.as_ptr(),
                    p as isize,
                    1,
                    0.0,
                    out_n.as_mut_ptr().add(y0 * d.w),
                    hw as isize,
                    1,
                );
            }
            y0 += rows;
        }
        for (f, plane) in out_n.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v += bias[f]);
        }
    });
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dk: Vec<f32>,
    pub dbias: Vec<f32>,
}

/// Gradients of [`conv_forward`]. Per-item kernel gradients are summed in item order.
pub(crate) fn conv_backward(x: &[f32], k: &[f32], dout: &[f32], d: &ConvDims, need_dx: bool) -> ConvGrads {
    let (hw, kk) = (d.h * d.w, d.kk());
    let per_item: Vec<(Option<Vec<f32>>, Vec<f32>, Vec<f64>)> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let x_n = &x[n * d.c * hw..(n + 1) * d.c * hw];
            let g_n = &dout[n * d.f * hw..(n + 1) * d.f * hw];
            let tile = d.tile_rows();
            let mut col = vec![0.0f32; kk * tile * d.w];
            let mut dcol = vec![0.0f32; if need_dx { kk * tile * d.w } else { 0 }];
            let mut dx = need_dx.then(|| vec![0.0f32; d.c * hw]);
            let mut dk = vec![0.0f32; d.f * kk];
            let mut y0 = 0;
            while y0 < d.h {
                let rows = tile.min(d.h - y0);
                let p = rows * d.w;
                im2col(x_n, d, y0, rows, &mut col);
                // SAFETY: strides describe sub-views of the buffers above.
                unsafe {
                    matrixmultiply::sgemm(
                        d.f,
                        p,
                        kk,
                        1.0,
                        g_n.as_ptr().add(y0 * d.w),
                        hw as isize,
                        1,
                        col.as_ptr(),
                        1,
                        p as isize,
                        1.0,
                        dk.as_mut_ptr(),
                        kk as isize,
                        1,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    // SAFETY: as above.
                    unsafe {
                        matrixmultiply::sgemm(
                            kk,
                            d.f,
                            p,
                            1.0,
                            k.as_ptr(),
                            1,
                            kk as isize,
                            g_n.as_ptr().add(y0 * d.w),
                            hw as isize,
                            1,
                            0.0,
                            dcol.as_mut_ptr(),
                            p as isize,
                            1,
                        );
                    }
                    col2im_add(&dcol, d, y0, rows, dx);
                }
                y0 += rows;
            }
            let db = g_n.chunks(hw).map(|pl| pl.iter().map(|&v| v as f64).sum()).collect();
            (dx, dk, db)
        })
        .collect();

    let mut dk = vec![0.0f32; d.f * kk];
    let mut db = vec![0.0f64; d.f];
    let mut dx = need_dx.then(|| Vec::with_capacity(d.n * d.c * hw));
    for (item_dx, item_dk, item_db) in per_item {
        dk.iter_mut().zip(&item_dk).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&item_db).for_each(|(a, b)| *a += b);
        if let (Some(all), Some(part)) = (dx.as_mut(), item_dx) {
            all.extend_from_slice(&part);
        }
    }
    ConvGrads {
        dx,
        dk,
        dbias: db.into_iter().map(|v| v as f32).collect(),
    }
}

/// 2×2 max pooling, output `floor(H/2) × floor(W/2)`. Returns values and the
/// flat input index of each maximum (first in scan order on ties).
pub(crate) fn maxpool2_forward(x: &[f32], planes: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Half-pixel bilinear taps along one axis: `(i0, i1, t)` with weight `1 − t` on `i0`.
pub(crate) fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

pub(crate) fn resize_forward(x: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let (ty, tx) = (resize_taps(h, oh), resize_taps(w, ow));
    let mut out = vec![0.0f32; planes * oh * ow];
    let mut rows = vec![0.0f32; h * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, &(i0, i1, t)) in tx.iter().enumerate() {
                rows[y * ow + ox] = (1.0 - t) * src[y * w + i0] + t * src[y * w + i1];
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(j0, j1, t)) in ty.iter().enumerate() {
            for ox in 0..ow {
                dst[oy * ow + ox] = (1.0 - t) * rows[j0 * ow + ox] + t * rows[j1 * ow + ox];
            }
        }
    }
    out
}

pub(crate) fn resize_backward(dout: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let (ty, tx) = (resize_taps(h, oh), resize_taps(w, ow));
    let mut dx = vec![0.0f32; planes * h * w];
    let mut rows = vec![0.0f32; h * ow];
    for p in 0..planes {
        rows.fill(0.0);
        let g = &dout[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(j0, j1, t)) in ty.iter().enumerate() {
            for ox in 0..ow {
                let v = g[oy * ow + ox];
                rows[j0 * ow + ox] += (1.0 - t) * v;
                rows[j1 * ow + ox] += t * v;
            }
        }
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, &(i0, i1, t)) in tx.iter().enumerate() {
                let v = rows[y * ow + ox];
                dst[y * w + i0] += (1.0 - t) * v;
                dst[y * w + i1] += t * v;
            }
        }
    }
    dx
}
