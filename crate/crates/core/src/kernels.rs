//! 2D/3D convolution, transposed convolution and max pooling.
//!
//! Everything is computed on the 3D path; a 2D tensor `[C, H, W]` is the same
//! buffer as `[C, 1, H, W]` with a depth-1 kernel. Convolutions lower to
//! im2col + gemm.

use crate::error::{Error, Result};
use crate::graph::{CustomBackward, Graph, NodeId};
use crate::tensor::{Scalar, Tensor};

/// Spatial geometry of a convolution, in `(depth, height, width)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// `floor((in + 2p - k) / s) + 1` per axis.
    pub fn output(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = self.input[a] + 2 * self.pad[a];
            if self.stride[a] == 0 || self.kernel[a] == 0 {
                return Err(Error::invalid("kernel and stride extents must be positive"));
            }
            if padded < self.kernel[a] {
                return Err(Error::shape(format!(
                    "padded extent {padded} smaller than kernel {} on axis {a}",
                    self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Output extent of a transposed convolution: `(in - 1) * s - 2p + k`.
pub fn transpose_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let full = (input - 1) * stride + kernel;
    if input == 0 || full <= 2 * pad {
        return Err(Error::shape(format!(
            "transposed conv extent underflow: in={input} k={kernel} s={stride} p={pad}"
        )));
    }
    Ok(full - 2 * pad)
}

fn vol(d: [usize; 3]) -> usize {
    d[0] * d[1] * d[2]
}

/// Output columns unfolded at a time; keeps the im2col block cache-resident.
const BLOCK: usize = 1024;

/// A run of consecutive output positions along the width axis.
struct Segment {
    od: usize,
    oh: usize,
    ow0: usize,
    ow1: usize,
    /// Offset of `ow0` within the block.
    at: usize,
}

fn segments(out: [usize; 3], o0: usize, o1: usize) -> Vec<Segment> {
    let mut segs = Vec::new();
    let mut o = o0;
    while o < o1 {
        let ow0 = o % out[2];
        let line = o / out[2];
        let ow1 = out[2].min(ow0 + (o1 - o));
        segs.push(Segment { od: line / out[1], oh: line % out[1], ow0, ow1, at: o - o0 });
        o += ow1 - ow0;
    }
    segs
}

/// Valid `ow` range for kernel offset `e`: those with `0 <= ow*s + e - p < n`.
fn valid_range(n: usize, s: usize, e: usize, p: usize, lo: usize, hi: usize) -> (usize, usize) {
    let first = if p > e { (p - e).div_ceil(s) } else { 0 };
    let last = if n + p > e { (n + p - e - 1) / s + 1 } else { 0 };
    (first.max(lo), last.min(hi).max(first.max(lo)))
}

/// Calls `f(row, channel, input_line_base, segment_clip, ...)` for every
/// kernel row and output segment of the block `[o0, o1)`.
#[inline]
fn for_each_line(
    channels: usize,
    geom: &ConvGeom,
    out: [usize; 3],
    segs: &[Segment],
    mut f: impl FnMut(usize, Option<usize>, &Segment, (usize, usize), usize),
) {
    let [id, ih, iw] = geom.input;
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.pad;
    let _ = out;
    let mut row = 0;
    for c in 0..channels {
        let cbase = c * id * ih * iw;
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    for seg in segs {
                        let z = (seg.od * sd + a) as isize - pd as isize;
                        let y = (seg.oh * sh + b) as isize - ph as isize;
                        if z < 0 || z >= id as isize || y < 0 || y >= ih as isize {
                            f(row, None, seg, (seg.ow0, seg.ow0), e);
                        } else {
                            let base = cbase + (z as usize * ih + y as usize) * iw;
                            f(row, Some(base), seg, valid_range(iw, sw, e, pw, seg.ow0, seg.ow1), e);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Unfolds output positions `[o0, o1)` into `dst: [channels * kvol, o1 - o0]`.
fn im2col_block<T: Scalar>(x: &[T], channels: usize, geom: &ConvGeom, o0: usize, o1: usize, dst: &mut [T]) -> Result<()> {
    let out = geom.output()?;
    let n = o1 - o0;
    let (sw, pw) = (geom.stride[2], geom.pad[2]);
    let segs = segments(out, o0, o1);
    for_each_line(channels, geom, out, &segs, |row, base, seg, (v0, v1), e| {
        let d = &mut dst[row * n + seg.at..row * n + seg.at + (seg.ow1 - seg.ow0)];
        let Some(base) = base else {
            d.fill(T::zero());
            return;
        };
        d[..v0 - seg.ow0].fill(T::zero());
        d[v1 - seg.ow0..].fill(T::zero());
        if v1 > v0 {
            let src0 = base + v0 * sw + e - pw;
            if sw == 1 {
                d[v0 - seg.ow0..v1 - seg.ow0].copy_from_slice(&x[src0..src0 + (v1 - v0)]);
            } else {
                for (k, ow) in (v0..v1).enumerate() {
                    d[ow - seg.ow0] = x[src0 + k * sw];
                }
            }
        }
    });
    Ok(())
}

/// Adjoint of [`im2col_block`]: scatter-adds `src` into `x`.
fn col2im_block<T: Scalar>(src: &[T], channels: usize, geom: &ConvGeom, o0: usize, o1: usize, x: &mut [T]) -> Result<()> {
    let out = geom.output()?;
    let n = o1 - o0;
    let (sw, pw) = (geom.stride[2], geom.pad[2]);
    let segs = segments(out, o0, o1);
    for_each_line(channels, geom, out, &segs, |row, base, seg, (v0, v1), e| {
        let Some(base) = base else { return };
        if v1 <= v0 {
            return;
        }
        let s = &src[row * n + seg.at + (v0 - seg.ow0)..row * n + seg.at + (v1 - seg.ow0)];
        let dst0 = base + v0 * sw + e - pw;
        if sw == 1 {
            for (d, &v) in x[dst0..dst0 + s.len()].iter_mut().zip(s) {
                *d = *d + v;
            }
        } else {
            for (k, &v) in s.iter().enumerate() {
                x[dst0 + k * sw] = x[dst0 + k * sw] + v;
            }
        }
    });
    Ok(())
}

/// Unfolds `x: [channels, D, H, W]` into `[channels * kvol, out_vol]`.
pub fn im2col<T: Scalar>(x: &[T], channels: usize, geom: &ConvGeom) -> Result<Vec<T>> {
    let ov = vol(geom.output()?);
    let mut col = vec![T::zero(); channels * geom.kernel_volume() * ov];
    im2col_block(x, channels, geom, 0, ov, &mut col)?;
    Ok(col)
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `[channels, D, H, W]`.
pub fn col2im<T: Scalar>(col: &[T], channels: usize, geom: &ConvGeom) -> Result<Vec<T>> {
    let ov = vol(geom.output()?);
    let mut x = vec![T::zero(); channels * vol(geom.input)];
    col2im_block(col, channels, geom, 0, ov, &mut x)?;
    Ok(x)
}

/// A row-major matrix view: `(data, row_stride, col_stride)`.
type View<'a, T> = (&'a [T], isize, isize);

/// `c[m x n] (row stride ldc) = a . b (+ c if accumulate)`.
fn gemm_v<T: Scalar>(m: usize, k: usize, n: usize, a: View<T>, b: View<T>, c: &mut [T], ldc: usize, accumulate: bool) {
    let reach = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.0.len() >= reach(m, k, a.1, a.2) && b.0.len() >= reach(k, n, b.1, b.2));
    assert!(c.len() >= reach(m, n, ldc as isize, 1));
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: every index reachable through the strides is in bounds (asserted above).
    unsafe {
        T::gemm(m, k, n, T::one(), a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.as_mut_ptr(), ldc as isize, 1);
    }
}

/// Plain convolution of one sample `x: [c_in, D, H, W]` with `w: [c_out, c_in, kd, kh, kw]`.
pub fn conv3d_raw<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    c_in: usize,
    c_out: usize,
    geom: &ConvGeom,
) -> Result<Vec<T>> {
    let ov = vol(geom.output()?);
    let r = c_in * geom.kernel_volume();
    let mut out = vec![T::zero(); c_out * ov];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(ov).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let mut buf = vec![T::zero(); r * BLOCK.min(ov)];
    for o0 in (0..ov).step_by(BLOCK) {
        let n = BLOCK.min(ov - o0);
        let col = &mut buf[..r * n];
        im2col_block(x, c_in, geom, o0, o0 + n, col)?;
        gemm_v(c_out, r, n, (w, r as isize, 1), (col, n as isize, 1), &mut out[o0..], ov, bias.is_some());
    }
    Ok(out)
}

/// Transposed convolution of `x: [c_in, D, H, W]` with `w: [c_in, c_out, kd, kh, kw]`.
/// `geom.input` is the spatial extent of the *output*; `geom.output()` must equal x's extent.
pub fn conv3d_transpose_raw<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    c_in: usize,
    c_out: usize,
    geom: &ConvGeom,
) -> Result<Vec<T>> {
    let iv = vol(geom.output()?);
    let r = c_out * geom.kernel_volume();
    let yv = vol(geom.input);
    let mut y = vec![T::zero(); c_out * yv];
    if let Some(b) = bias {
        for (co, chunk) in y.chunks_mut(yv).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let mut buf = vec![T::zero(); r * BLOCK.min(iv)];
    for o0 in (0..iv).step_by(BLOCK) {
        let n = BLOCK.min(iv - o0);
        let col = &mut buf[..r * n];
        gemm_v(r, c_in, n, (w, 1, r as isize), (&x[o0..], iv as isize, 1), col, n, false);
        col2im_block(col, c_out, geom, o0, o0 + n, &mut y)?;
    }
    Ok(y)
}

fn channel_sums<T: Scalar>(g: &[T], channels: usize) -> Vec<T> {
    let per = g.len() / channels;
    g.chunks(per).map(|c| c.iter().fold(T::zero(), |a, &v| a + v)).collect()
}

struct ConvRule {
    geom: ConvGeom,
    c_in: usize,
    c_out: usize,
    transpose: bool,
}

impl<T: Scalar> CustomBackward<T> for ConvRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let geom = &self.geom;
        let kvol = geom.kernel_volume();
        let mut result: Vec<Option<Tensor<T>>> = vec![None; inputs.len()];
        // Plain conv: `x` is unfolded, `grad` has the output extent.
        // Transposed: `grad` is unfolded, `x` has the geometry's output extent.
        let (unfolded, unfolded_c, flat, flat_c) = if self.transpose {
            (grad.data(), self.c_out, x.data(), self.c_in)
        } else {
            (x.data(), self.c_in, grad.data(), self.c_out)
        };
        let ov = vol(geom.output()?);
        let r = unfolded_c * kvol;
        let mut gw = needs[1].then(|| vec![T::zero(); flat_c * r]);
        let need_gx = needs[0];
        let mut gx_plain = (need_gx && !self.transpose).then(|| vec![T::zero(); self.c_in * vol(geom.input)]);
        let mut gx_t = (need_gx && self.transpose).then(|| vec![T::zero(); self.c_in * ov]);
        let mut buf = vec![T::zero(); r * BLOCK.min(ov)];
        for o0 in (0..ov).step_by(BLOCK) {
            let n = BLOCK.min(ov - o0);
            let col = &mut buf[..r * n];
            let fl = (&flat[o0..], ov as isize, 1);
            if gw.is_some() || self.transpose {
                im2col_block(unfolded, unfolded_c, geom, o0, o0 + n, col)?;
            }
            if let Some(gw) = gw.as_mut() {
                // [flat_c, n] . [n, r]
                gemm_v(flat_c, n, r, fl, (&*col, 1, n as isize), gw, r, o0 > 0);
            }
            if let Some(gx) = gx_t.as_mut() {
                // w: [c_in, r]
                gemm_v(self.c_in, r, n, (w.data(), r as isize, 1), (&*col, n as isize, 1), &mut gx[o0..], ov, false);
            }
            if let Some(gx) = gx_plain.as_mut() {
                // w^T: [r, c_out]
                gemm_v(r, self.c_out, n, (w.data(), 1, r as isize), fl, col, n, false);
                col2im_block(col, self.c_in, geom, o0, o0 + n, gx)?;
            }
        }
        if let Some(gw) = gw {
            result[1] = Some(Tensor::from_parts(w.shape().to_vec(), gw));
        }
        if let Some(gx) = gx_plain.or(gx_t) {
            result[0] = Some(Tensor::from_parts(x.shape().to_vec(), gx));
        }
        if inputs.len() > 2 && needs[2] {
            result[2] = Some(Tensor::from_parts(vec![self.c_out], channel_sums(grad.data(), self.c_out)));
        }
        Ok(result)
    }
}

struct PoolRule {
    argmax: Vec<usize>,
}

impl<T: Scalar> CustomBackward<T> for PoolRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut gx = vec![T::zero(); inputs[0].len()];
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            gx[src] = gx[src] + g;
        }
        Ok(vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))])
    }
}

/// Max pooling of `x: [C, D, H, W]`; returns values and the flat source index
/// of each maximum (first occurrence on ties).
pub fn maxpool3d_raw<T: Scalar>(
    x: &[T],
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
) -> Result<(Vec<T>, [usize; 3], Vec<usize>)> {
    let mut out = [0; 3];
    for a in 0..3 {
        if kernel[a] == 0 || stride[a] == 0 || input[a] < kernel[a] || (input[a] - kernel[a]) % stride[a] != 0 {
            return Err(Error::shape(format!(
                "pool window {kernel:?}/{stride:?} does not tile extent {input:?}"
            )));
        }
        out[a] = (input[a] - kernel[a]) / stride[a] + 1;
    }
    let [id, ih, iw] = input;
    let mut vals = Vec::with_capacity(channels * vol(out));
    let mut arg = Vec::with_capacity(channels * vol(out));
    for c in 0..channels {
        let base = c * id * ih * iw;
        for od in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for a in 0..kernel[0] {
                        for b in 0..kernel[1] {
                            for e in 0..kernel[2] {
                                let i = base
                                    + ((od * stride[0] + a) * ih + oh * stride[1] + b) * iw
                                    + ow * stride[2]
                                    + e;
                                if best_i == usize::MAX || x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    vals.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((vals, out, arg))
}

fn pair<T: Copy>(v: [T; 2], depth: T) -> [T; 3] {
    [depth, v[0], v[1]]
}

impl<T: Scalar> Graph<T> {
    fn conv_common(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spatial_rank: usize,
        stride: [usize; 3],
        pad: [usize; 3],
        transpose: bool,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != spatial_rank + 1 || ws.len() != spatial_rank + 2 {
            return Err(Error::shape(format!("conv input {xs:?} / weight {ws:?} rank mismatch")));
        }
        let lift = |s: &[usize]| -> [usize; 3] {
            if spatial_rank == 2 {
                [1, s[0], s[1]]
            } else {
                [s[0], s[1], s[2]]
            }
        };
        let spatial = lift(&xs[1..]);
        let kernel = lift(&ws[2..]);
        let (c_in, c_out) = if transpose { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
        if xs[0] != c_in {
            return Err(Error::shape(format!("conv expects {c_in} input channels, got {}", xs[0])));
        }
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [c_out] {
                return Err(Error::shape(format!("conv bias must have shape [{c_out}]")));
            }
        }
        let bias = b.map(|b| self.value(b).data().to_vec());
        let (geom, out, out_spatial) = if transpose {
            let mut full = [0; 3];
            for a in 0..3 {
                full[a] = transpose_output_extent(spatial[a], kernel[a], stride[a], pad[a])?;
            }
            let geom = ConvGeom { input: full, kernel, stride, pad };
            if geom.output()? != spatial {
                return Err(Error::shape("transposed conv geometry is not invertible".to_string()));
            }
            let out = conv3d_transpose_raw(self.value(x).data(), self.value(w).data(), bias.as_deref(), c_in, c_out, &geom)?;
            (geom, out, full)
        } else {
            let geom = ConvGeom { input: spatial, kernel, stride, pad };
            let out = conv3d_raw(self.value(x).data(), self.value(w).data(), bias.as_deref(), c_in, c_out, &geom)?;
            let o = geom.output()?;
            (geom, out, o)
        };
        let mut shape = vec![c_out];
        if spatial_rank == 2 {
            shape.extend([out_spatial[1], out_spatial[2]]);
        } else {
            shape.extend(out_spatial);
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rule = ConvRule { geom, c_in, c_out, transpose };
        let name = if transpose { "conv_transpose" } else { "conv" };
        self.push_custom(name, inputs, Tensor::from_parts(shape, out), Box::new(rule))
    }

    /// `x: [C_in, H, W]`, `w: [C_out, C_in, kh, kw]`, `b: [C_out]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: [usize; 2], pad: [usize; 2]) -> Result<NodeId> {
        self.conv_common(x, w, b, 2, pair(stride, 1), pair(pad, 0), false)
    }

    /// `x: [C_in, D, H, W]`, `w: [C_out, C_in, kd, kh, kw]`, `b: [C_out]`.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: [usize; 3], pad: [usize; 3]) -> Result<NodeId> {
        self.conv_common(x, w, b, 3, stride, pad, false)
    }

    /// `x: [C_in, H, W]`, `w: [C_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: [usize; 2], pad: [usize; 2]) -> Result<NodeId> {
        self.conv_common(x, w, b, 2, pair(stride, 1), pair(pad, 0), true)
    }

    /// `x: [C_in, D, H, W]`, `w: [C_in, C_out, kd, kh, kw]`.
    pub fn conv_transpose3d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: [usize; 3], pad: [usize; 3]) -> Result<NodeId> {
        self.conv_common(x, w, b, 3, stride, pad, true)
    }

    fn pool_common(&mut self, x: NodeId, spatial_rank: usize, kernel: [usize; 3], stride: [usize; 3]) -> Result<NodeId> {
        self.check(x)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != spatial_rank + 1 {
            return Err(Error::shape(format!("maxpool input {xs:?} has wrong rank")));
        }
        let spatial = if spatial_rank == 2 { [1, xs[1], xs[2]] } else { [xs[1], xs[2], xs[3]] };
        let (vals, out, argmax) = maxpool3d_raw(self.value(x).data(), xs[0], spatial, kernel, stride)?;
        let mut shape = vec![xs[0]];
        if spatial_rank == 2 {
            shape.extend([out[1], out[2]]);
        } else {
            shape.extend(out);
        }
        self.push_custom("maxpool", vec![x], Tensor::from_parts(shape, vals), Box::new(PoolRule { argmax }))
    }

    pub fn maxpool2d(&mut self, x: NodeId, kernel: [usize; 2], stride: [usize; 2]) -> Result<NodeId> {
        self.pool_common(x, 2, pair(kernel, 1), pair(stride, 1))
    }

    pub fn maxpool3d(&mut self, x: NodeId, kernel: [usize; 3], stride: [usize; 3]) -> Result<NodeId> {
        self.pool_common(x, 3, kernel, stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn shape_formula() {
        let g = ConvGeom { input: [5, 64, 64], kernel: [3, 3, 3], stride: [1, 1, 1], pad: [1, 1, 1] };
        assert_eq!(g.output().unwrap(), [5, 64, 64]);
        let g = ConvGeom { input: [5, 8, 8], kernel: [5, 3, 3], stride: [1, 1, 1], pad: [0, 1, 1] };
        assert_eq!(g.output().unwrap(), [1, 8, 8]);
        assert_eq!(transpose_output_extent(32, 2, 2, 0).unwrap(), 64);
        assert_eq!(transpose_output_extent(5, 1, 1, 0).unwrap(), 5);
        assert!(transpose_output_extent(1, 2, 1, 1).is_err());
    }

    #[test]
    fn conv2d_identity_and_box_filter() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3, 3], (1..=9).map(f64::from).collect()));
        let w = g.constant(t(&[1, 1, 1, 1], vec![1.0]));
        let y = g.conv2d(x, w, None, [1, 1], [0, 0]).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let ones = g.constant(t(&[1, 4, 4], vec![1.0; 16]));
        let k = g.constant(t(&[1, 1, 3, 3], vec![1.0; 9]));
        let y = g.conv2d(ones, k, None, [1, 1], [1, 1]).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[5], 9.0);
        assert_eq!(v[0], 4.0);
        assert_eq!(v[1], 6.0);
    }

    #[test]
    fn conv_shapes_and_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[5, 16, 16]).unwrap());
        let w = g.constant(Tensor::zeros(&[16, 5, 3, 3]).unwrap());
        let y = g.conv2d(x, w, None, [1, 1], [1, 1]).unwrap();
        assert_eq!(g.shape(y), &[16, 16, 16]);
        let w_bad = g.constant(Tensor::zeros(&[16, 4, 3, 3]).unwrap());
        assert!(g.conv2d(x, w_bad, None, [1, 1], [1, 1]).is_err());

        let v = g.constant(Tensor::zeros(&[1, 5, 8, 8]).unwrap());
        let w3 = g.constant(Tensor::zeros(&[4, 1, 3, 3, 3]).unwrap());
        let b = g.constant(Tensor::create(&[4], crate::Init::Constant(0.25)).unwrap());
        let y = g.conv3d(v, w3, Some(b), [1, 1, 1], [1, 1, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 5, 8, 8]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));

        let up = g.constant(Tensor::zeros(&[4, 5, 4, 4]).unwrap());
        let wt = g.constant(Tensor::zeros(&[4, 2, 1, 2, 2]).unwrap());
        let y = g.conv_transpose3d(up, wt, None, [1, 2, 2], [0, 0, 0]).unwrap();
        assert_eq!(g.shape(y), &[2, 5, 8, 8]);
    }

    #[test]
    fn maxpool_window_and_ties() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2, 2], vec![1., 3., 2., 0.]));
        let p = g.maxpool2d(x, [2, 2], [2, 2]).unwrap();
        assert_eq!(g.value(p).data(), &[3.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[1, 2, 2], vec![2.; 4]));
        let p = g.maxpool2d(x, [2, 2], [2, 2]).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1., 0., 0., 0.]);

        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 5, 64, 64]).unwrap());
        let p = g.maxpool3d(x, [1, 2, 2], [1, 2, 2]).unwrap();
        assert_eq!(g.shape(p), &[1, 5, 32, 32]);
        let odd = g.constant(Tensor::zeros(&[1, 5, 7, 8]).unwrap());
        assert!(g.maxpool3d(odd, [1, 2, 2], [1, 2, 2]).is_err());
    }
}
