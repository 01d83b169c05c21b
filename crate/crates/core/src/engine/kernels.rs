//! Raw forward/backward kernels over flat NCHW buffers.
//!
//! Every output element is produced by exactly one accumulation sequence in a
//! fixed order, so results are bitwise reproducible.

use super::tensor::Shape;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub input: Shape,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_shape(&self) -> Shape {
        let oh = (self.input.h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (self.input.w + 2 * self.pad - self.k) / self.stride + 1;
        Shape::new(self.input.n, self.c_out, oh, ow)
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies
/// inside `0..w`.
fn valid_cols(g: &ConvGeom, kx: usize, ow: usize) -> std::ops::Range<usize> {
    let (s, pad, w) = (g.stride, g.pad, g.input.w);
    let lo = pad.saturating_sub(kx).div_ceil(s);
    if w + pad <= kx {
        return 0..0;
    }
    let hi = ((w - 1 + pad - kx) / s + 1).min(ow);
    lo.min(hi)..hi
}

/// Unrolls one batch item into a (c_in·k·k) × (oh·ow) column matrix.
fn im2col(g: &ConvGeom, src: &[f64], cols: &mut [f64]) {
    let out = g.out_shape();
    let (oh, ow) = (out.h, out.w);
    let (h, w, k, s) = (g.input.h, g.input.w, g.k, g.stride);
    let p = oh * ow;
    for ci in 0..g.input.c {
        let plane = &src[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                let valid = valid_cols(g, kx, ow);
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..][..ow];
                    let iy = (oy * s + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * w..][..w];
                    dst[..valid.start].fill(0.0);
                    dst[valid.end..].fill(0.0);
                    let x0 = valid.start * s + kx - g.pad;
                    let span = &mut dst[valid.clone()];
                    if s == 1 {
                        span.copy_from_slice(&srow[x0..][..span.len()]);
                    } else {
                        for (j, d) in span.iter_mut().enumerate() {
                            *d = srow[x0 + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(g: &ConvGeom, cols: &[f64], dst: &mut [f64]) {
    let out = g.out_shape();
    let (oh, ow) = (out.h, out.w);
    let (h, w, k, s) = (g.input.h, g.input.w, g.k, g.stride);
    let p = oh * ow;
    for ci in 0..g.input.c {
        let plane = &mut dst[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                let valid = valid_cols(g, kx, ow);
                if valid.is_empty() {
                    continue;
                }
                let x0 = valid.start * s + kx - g.pad;
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..][..w];
                    let span = &row[oy * ow..][valid.clone()];
                    if s == 1 {
                        for (d, v) in drow[x0..][..span.len()].iter_mut().zip(span) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in span.iter().enumerate() {
                            drow[x0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Input, weight and bias gradients; `None` where not requested.
type ConvGrads = (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>);

/// Row-major C (m × n) = alpha·op(A)·op(B) + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index touched is inside the slices given the shapes and
    // strides the callers pass; the asserts pin the extents.
    assert!(a.len() >= m * k && b.len() >= k * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

pub(crate) fn conv2d_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let out_shape = g.out_shape();
    let p = out_shape.h * out_shape.w;
    let kk = g.input.c * g.k * g.k;
    let in_len = g.input.c * g.input.h * g.input.w;
    let mut out = vec![0.0; out_shape.numel()];
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![0.0; kk * p] };
    for n in 0..g.input.n {
        let src = &input[n * in_len..][..in_len];
        let dst = &mut out[n * g.c_out * p..][..g.c_out * p];
        for (co, plane) in dst.chunks_mut(p).enumerate() {
            plane.fill(bias[co]);
        }
        let b = if is_pointwise(g) {
            src
        } else {
            im2col(g, src, &mut cols);
            &cols
        };
        gemm(g.c_out, kk, p, weight, (kk as isize, 1), b, (p as isize, 1), 1.0, dst);
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias); `None` entries are skipped.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    want_input: bool,
    want_params: bool,
) -> ConvGrads {
    let out_shape = g.out_shape();
    let p = out_shape.h * out_shape.w;
    let c_out = g.c_out;
    let kk = g.input.c * g.k * g.k;
    let in_len = g.input.c * g.input.h * g.input.w;
    let pointwise = is_pointwise(g);

    let mut gin = want_input.then(|| vec![0.0; g.input.numel()]);
    let mut gw = want_params.then(|| vec![0.0; c_out * kk]);
    let mut gb = want_params.then(|| vec![0.0; c_out]);
    let mut cols = vec![0.0; if pointwise { 0 } else { kk * p }];
    let mut gcols = vec![0.0; if want_input && !pointwise { kk * p } else { 0 }];

    for n in 0..g.input.n {
        let go = &grad_out[n * c_out * p..][..c_out * p];
        if let (Some(gw), Some(gb)) = (gw.as_mut(), gb.as_mut()) {
            for (co, row) in go.chunks(p).enumerate() {
                gb[co] += row.iter().sum::<f64>();
            }
            let src = &input[n * in_len..][..in_len];
            let b = if pointwise {
                src
            } else {
                im2col(g, src, &mut cols);
                &cols
            };
            // gW += gO · colsᵀ
            gemm(c_out, p, kk, go, (p as isize, 1), b, (1, p as isize), 1.0, gw);
        }
        if let Some(gin) = gin.as_mut() {
            let dst = &mut gin[n * in_len..][..in_len];
            // gCols = Wᵀ · gO
            if pointwise {
                gemm(kk, c_out, p, weight, (1, kk as isize), go, (p as isize, 1), 0.0, dst);
            } else {
                gemm(
                    kk,
                    c_out,
                    p,
                    weight,
                    (1, kk as isize),
                    go,
                    (p as isize, 1),
                    0.0,
                    &mut gcols,
                );
                col2im(g, &gcols, dst);
            }
        }
    }
    (gin, gw, gb)
}

/// Clamped sample coordinate along one axis: (lower index, upper index,
/// fractional weight, whether the coordinate was inside the open range).
#[inline]
fn axis_sample(pos: f64, len: usize) -> (usize, usize, f64, bool) {
    let max = (len - 1) as f64;
    let inside = pos > 0.0 && pos < max;
    let p = pos.clamp(0.0, max);
    let i0 = (p.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, p - i0 as f64, inside)
}

/// Warps every channel of `image` by the per-pixel (dx, dy) field in `flow`.
pub(crate) fn bilinear_sample_forward(shape: Shape, image: &[f64], flow: &[f64]) -> Vec<f64> {
    let (c, h, w) = (shape.c, shape.h, shape.w);
    let p = h * w;
    let mut out = vec![0.0; shape.numel()];
    for n in 0..shape.n {
        let fx = &flow[(n * 2) * p..][..p];
        let fy = &flow[(n * 2 + 1) * p..][..p];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (x0, x1, ax, _) = axis_sample(x as f64 + fx[i], w);
                let (y0, y1, ay, _) = axis_sample(y as f64 + fy[i], h);
                for ch in 0..c {
                    let src = &image[(n * c + ch) * p..][..p];
                    let v00 = src[y0 * w + x0];
                    let v01 = src[y0 * w + x1];
                    let v10 = src[y1 * w + x0];
                    let v11 = src[y1 * w + x1];
                    let top = v00 + ax * (v01 - v00);
                    let bot = v10 + ax * (v11 - v10);
                    out[(n * c + ch) * p + i] = top + ay * (bot - top);
                }
            }
        }
    }
    out
}

pub(crate) fn bilinear_sample_backward(
    shape: Shape,
    image: &[f64],
    flow: &[f64],
    grad_out: &[f64],
    want_image: bool,
    want_flow: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (c, h, w) = (shape.c, shape.h, shape.w);
    let p = h * w;
    let mut gimg = want_image.then(|| vec![0.0; shape.numel()]);
    let mut gflow = want_flow.then(|| vec![0.0; shape.n * 2 * p]);
    for n in 0..shape.n {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let dx = flow[(n * 2) * p + i];
                let dy = flow[(n * 2 + 1) * p + i];
                let (x0, x1, ax, in_x) = axis_sample(x as f64 + dx, w);
                let (y0, y1, ay, in_y) = axis_sample(y as f64 + dy, h);
                let mut gdx = 0.0;
                let mut gdy = 0.0;
                for ch in 0..c {
                    let base = (n * c + ch) * p;
                    let go = grad_out[base + i];
                    if let Some(gi) = gimg.as_mut() {
                        gi[base + y0 * w + x0] += go * (1.0 - ax) * (1.0 - ay);
                        gi[base + y0 * w + x1] += go * ax * (1.0 - ay);
                        gi[base + y1 * w + x0] += go * (1.0 - ax) * ay;
                        gi[base + y1 * w + x1] += go * ax * ay;
                    }
                    if gflow.is_some() {
                        let src = &image[base..base + p];
                        let v00 = src[y0 * w + x0];
                        let v01 = src[y0 * w + x1];
                        let v10 = src[y1 * w + x0];
                        let v11 = src[y1 * w + x1];
                        if in_x {
                            gdx += go * ((1.0 - ay) * (v01 - v00) + ay * (v11 - v10));
                        }
                        if in_y {
                            let top = v00 + ax * (v01 - v00);
                            let bot = v10 + ax * (v11 - v10);
                            gdy += go * (bot - top);
                        }
                    }
                }
                if let Some(gf) = gflow.as_mut() {
                    gf[(n * 2) * p + i] = gdx;
                    gf[(n * 2 + 1) * p + i] = gdy;
                }
            }
        }
    }
    (gimg, gflow)
}

pub(crate) fn avg_downsample2_forward(shape: Shape, x: &[f64]) -> Vec<f64> {
    let (h, w) = (shape.h, shape.w);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; shape.n * shape.c * oh * ow];
    for nc in 0..shape.n * shape.c {
        let src = &x[nc * h * w..][..h * w];
        let dst = &mut out[nc * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let a = src[2 * oy * w + 2 * ox];
                let b = src[2 * oy * w + 2 * ox + 1];
                let c = src[(2 * oy + 1) * w + 2 * ox];
                let d = src[(2 * oy + 1) * w + 2 * ox + 1];
                dst[oy * ow + ox] = (a + b + c + d) * 0.25;
            }
        }
    }
    out
}

pub(crate) fn avg_downsample2_backward(shape: Shape, grad_out: &[f64]) -> Vec<f64> {
    let (h, w) = (shape.h, shape.w);
    let (oh, ow) = (h / 2, w / 2);
    let mut gin = vec![0.0; shape.numel()];
    for nc in 0..shape.n * shape.c {
        let go = &grad_out[nc * oh * ow..][..oh * ow];
        let dst = &mut gin[nc * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = go[(y / 2) * ow + x / 2] * 0.25;
            }
        }
    }
    gin
}

/// Source coordinate of fine-grid index `o` with corners aligned.
#[inline]
fn upsample_axis(o: usize, src_len: usize) -> (usize, usize, f64) {
    if src_len == 1 {
        return (0, 0, 0.0);
    }
    let dst_len = 2 * src_len;
    let pos = o as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
    let i0 = (pos.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

pub(crate) fn bilinear_upsample2_forward(shape: Shape, x: &[f64]) -> Vec<f64> {
    let (h, w) = (shape.h, shape.w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; shape.n * shape.c * oh * ow];
    for nc in 0..shape.n * shape.c {
        let src = &x[nc * h * w..][..h * w];
        let dst = &mut out[nc * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let (y0, y1, ay) = upsample_axis(oy, h);
            for ox in 0..ow {
                let (x0, x1, ax) = upsample_axis(ox, w);
                let v00 = src[y0 * w + x0];
                let v01 = src[y0 * w + x1];
                let v10 = src[y1 * w + x0];
                let v11 = src[y1 * w + x1];
                let top = v00 + ax * (v01 - v00);
                let bot = v10 + ax * (v11 - v10);
                dst[oy * ow + ox] = top + ay * (bot - top);
            }
        }
    }
    out
}

pub(crate) fn bilinear_upsample2_backward(shape: Shape, grad_out: &[f64]) -> Vec<f64> {
    let (h, w) = (shape.h, shape.w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut gin = vec![0.0; shape.numel()];
    for nc in 0..shape.n * shape.c {
        let go = &grad_out[nc * oh * ow..][..oh * ow];
        let dst = &mut gin[nc * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1, ay) = upsample_axis(oy, h);
            for ox in 0..ow {
                let (x0, x1, ax) = upsample_axis(ox, w);
                let g = go[oy * ow + ox];
                dst[y0 * w + x0] += g * (1.0 - ax) * (1.0 - ay);
                dst[y0 * w + x1] += g * ax * (1.0 - ay);
                dst[y1 * w + x0] += g * (1.0 - ax) * ay;
                dst[y1 * w + x1] += g * ax * ay;
            }
        }
    }
    gin
}
