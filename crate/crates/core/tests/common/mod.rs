//! Naive-loop reference kernels and random shape generation shared by the
//! oracle tests and the acceptance run.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use volperc::{Graph, Scalar, Tensor};

pub const F32_TOL: f64 = 1e-6;
pub const F64_TOL: f64 = 1e-12;
pub const ADJOINT_TOL: f64 = 1e-5;
pub const SHAPES: usize = 200;
pub const MAX_EXTENT: usize = 8;

#[derive(Clone, Debug)]
pub struct ConvCase {
    pub c_in: usize,
    pub c_out: usize,
    /// Input extents `[d, h, w]`; `d == 1` for 2D cases.
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

/// Random plain convolution with every extent ≤ 8. Weights are scaled by
/// `1/sqrt(fan_in)` so outputs stay O(1).
pub fn conv_case(rng: &mut ChaCha8Rng, three_d: bool) -> ConvCase {
    let c_in = rng.gen_range(1..=3);
    let c_out = rng.gen_range(1..=3);
    let mut input = [1; 3];
    let mut kernel = [1; 3];
    let mut stride = [1; 3];
    let mut pad = [0; 3];
    let first = if three_d { 0 } else { 1 };
    for a in first..3 {
        input[a] = rng.gen_range(1..=MAX_EXTENT);
        pad[a] = rng.gen_range(0..=1);
        let k_max = (input[a] + 2 * pad[a]).min(3);
        kernel[a] = rng.gen_range(1..=k_max);
        stride[a] = rng.gen_range(1..=2);
    }
    let kv: usize = kernel.iter().product();
    let fan = (c_in * kv) as f64;
    ConvCase {
        c_in,
        c_out,
        input,
        kernel,
        stride,
        pad,
        x: uniform(rng, c_in * input.iter().product::<usize>(), 1.0),
        w: uniform(rng, c_out * c_in * kv, 1.0 / fan.sqrt()),
        b: uniform(rng, c_out, 1.0),
    }
}

/// Random transposed convolution; `input` is the extent of `x`.
pub fn conv_transpose_case(rng: &mut ChaCha8Rng, three_d: bool) -> ConvCase {
    let c_in = rng.gen_range(1..=3);
    let c_out = rng.gen_range(1..=3);
    let mut input = [1; 3];
    let mut kernel = [1; 3];
    let mut stride = [1; 3];
    let mut pad = [0; 3];
    let first = if three_d { 0 } else { 1 };
    for a in first..3 {
        input[a] = rng.gen_range(1..=MAX_EXTENT);
        kernel[a] = rng.gen_range(1..=3);
        stride[a] = rng.gen_range(1..=2);
        pad[a] = rng.gen_range(0..=(kernel[a] - 1) / 2);
    }
    let kv: usize = kernel.iter().product();
    let fan = (c_in * kv) as f64;
    ConvCase {
        c_in,
        c_out,
        input,
        kernel,
        stride,
        pad,
        x: uniform(rng, c_in * input.iter().product::<usize>(), 1.0),
        w: uniform(rng, c_in * c_out * kv, 1.0 / fan.sqrt()),
        b: uniform(rng, c_out, 1.0),
    }
}

pub fn conv_out(c: &ConvCase) -> [usize; 3] {
    let mut o = [0; 3];
    for a in 0..3 {
        o[a] = (c.input[a] + 2 * c.pad[a] - c.kernel[a]) / c.stride[a] + 1;
    }
    o
}

pub fn conv_transpose_out(c: &ConvCase) -> [usize; 3] {
    let mut o = [0; 3];
    for a in 0..3 {
        o[a] = (c.input[a] - 1) * c.stride[a] + c.kernel[a] - 2 * c.pad[a];
    }
    o
}

pub fn naive_conv(c: &ConvCase) -> Vec<f64> {
    let [id, ih, iw] = c.input;
    let [kd, kh, kw] = c.kernel;
    let [od, oh, ow] = conv_out(c);
    let mut out = vec![0.0; c.c_out * od * oh * ow];
    for co in 0..c.c_out {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = c.b[co];
                    for ci in 0..c.c_in {
                        for dz in 0..kd {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let sz = (z * c.stride[0] + dz) as isize - c.pad[0] as isize;
                                    let sy = (y * c.stride[1] + dy) as isize - c.pad[1] as isize;
                                    let sx = (x * c.stride[2] + dx) as isize - c.pad[2] as isize;
                                    if sz < 0 || sy < 0 || sx < 0 || sz >= id as isize || sy >= ih as isize || sx >= iw as isize {
                                        continue;
                                    }
                                    let xv = c.x[((ci * id + sz as usize) * ih + sy as usize) * iw + sx as usize];
                                    let wv = c.w[(((co * c.c_in + ci) * kd + dz) * kh + dy) * kw + dx];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    out[((co * od + z) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form: every input voxel adds `x * w` into the window it maps to.
pub fn naive_conv_transpose(c: &ConvCase) -> Vec<f64> {
    let [id, ih, iw] = c.input;
    let [kd, kh, kw] = c.kernel;
    let [od, oh, ow] = conv_transpose_out(c);
    let mut out = vec![0.0; c.c_out * od * oh * ow];
    for co in 0..c.c_out {
        out[co * od * oh * ow..(co + 1) * od * oh * ow].fill(c.b[co]);
    }
    for ci in 0..c.c_in {
        for z in 0..id {
            for y in 0..ih {
                for x in 0..iw {
                    let xv = c.x[((ci * id + z) * ih + y) * iw + x];
                    for co in 0..c.c_out {
                        for dz in 0..kd {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let tz = (z * c.stride[0] + dz) as isize - c.pad[0] as isize;
                                    let ty = (y * c.stride[1] + dy) as isize - c.pad[1] as isize;
                                    let tx = (x * c.stride[2] + dx) as isize - c.pad[2] as isize;
                                    if tz < 0 || ty < 0 || tx < 0 || tz >= od as isize || ty >= oh as isize || tx >= ow as isize {
                                        continue;
                                    }
                                    let wv = c.w[(((ci * c.c_out + co) * kd + dz) * kh + dy) * kw + dx];
                                    out[((co * od + tz as usize) * oh + ty as usize) * ow + tx as usize] += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct PoolCase {
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub x: Vec<f64>,
}

/// Random pooling window that tiles its input exactly (`(in - k) % s == 0`).
pub fn pool_case(rng: &mut ChaCha8Rng, three_d: bool) -> PoolCase {
    let channels = rng.gen_range(1..=3);
    let mut input = [1; 3];
    let mut kernel = [1; 3];
    let mut stride = [1; 3];
    let first = if three_d { 0 } else { 1 };
    for a in first..3 {
        kernel[a] = rng.gen_range(1..=3);
        stride[a] = rng.gen_range(1..=3);
        let max_steps = (MAX_EXTENT - kernel[a]) / stride[a];
        input[a] = kernel[a] + stride[a] * rng.gen_range(0..=max_steps);
    }
    PoolCase { channels, input, kernel, stride, x: uniform(rng, channels * input.iter().product::<usize>(), 1.0) }
}

pub fn naive_pool(p: &PoolCase) -> Vec<f64> {
    let [id, ih, iw] = p.input;
    let o: Vec<usize> = (0..3).map(|a| (p.input[a] - p.kernel[a]) / p.stride[a] + 1).collect();
    let mut out = Vec::new();
    for c in 0..p.channels {
        for z in 0..o[0] {
            for y in 0..o[1] {
                for x in 0..o[2] {
                    let mut m = f64::NEG_INFINITY;
                    for dz in 0..p.kernel[0] {
                        for dy in 0..p.kernel[1] {
                            for dx in 0..p.kernel[2] {
                                let (sz, sy, sx) = (z * p.stride[0] + dz, y * p.stride[1] + dy, x * p.stride[2] + dx);
                                m = m.max(p.x[((c * id + sz) * ih + sy) * iw + sx]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

fn tensor<T: Scalar>(shape: &[usize], v: &[f64]) -> Tensor<T> {
    Tensor::from_f64s(shape, v).unwrap()
}

fn spatial_shape(channels: usize, ext: [usize; 3], three_d: bool) -> Vec<usize> {
    if three_d {
        vec![channels, ext[0], ext[1], ext[2]]
    } else {
        vec![channels, ext[1], ext[2]]
    }
}

fn weight_shape(a: usize, b: usize, k: [usize; 3], three_d: bool) -> Vec<usize> {
    if three_d {
        vec![a, b, k[0], k[1], k[2]]
    } else {
        vec![a, b, k[1], k[2]]
    }
}

/// Runs a case through the graph ops (`conv2d`/`conv3d` or their transposes).
pub fn run_conv<T: Scalar>(c: &ConvCase, three_d: bool, transpose: bool) -> Vec<f64> {
    let mut g = Graph::<T>::new();
    let x = g.constant(tensor(&spatial_shape(c.c_in, c.input, three_d), &c.x));
    let ws = if transpose {
        weight_shape(c.c_in, c.c_out, c.kernel, three_d)
    } else {
        weight_shape(c.c_out, c.c_in, c.kernel, three_d)
    };
    let w = g.constant(tensor(&ws, &c.w));
    let b = g.constant(tensor(&[c.c_out], &c.b));
    let y = match (three_d, transpose) {
        (true, false) => g.conv3d(x, w, Some(b), c.stride, c.pad),
        (true, true) => g.conv_transpose3d(x, w, Some(b), c.stride, c.pad),
        (false, false) => g.conv2d(x, w, Some(b), [c.stride[1], c.stride[2]], [c.pad[1], c.pad[2]]),
        (false, true) => g.conv_transpose2d(x, w, Some(b), [c.stride[1], c.stride[2]], [c.pad[1], c.pad[2]]),
    }
    .unwrap();
    g.value(y).to_f64_vec()
}

pub fn run_pool<T: Scalar>(p: &PoolCase, three_d: bool) -> Vec<f64> {
    let mut g = Graph::<T>::new();
    let x = g.constant(tensor(&spatial_shape(p.channels, p.input, three_d), &p.x));
    let y = if three_d {
        g.maxpool3d(x, p.kernel, p.stride)
    } else {
        g.maxpool2d(x, [p.kernel[1], p.kernel[2]], [p.stride[1], p.stride[2]])
    }
    .unwrap();
    g.value(y).to_f64_vec()
}

/// Inputs are rounded through `T` first so the reference sees exactly what
/// the kernel sees.
pub fn round_case<T: Scalar>(c: &ConvCase) -> ConvCase {
    let r = |v: &[f64]| v.iter().map(|&a| T::from_f64(a).as_f64()).collect();
    ConvCase { x: r(&c.x), w: r(&c.w), b: r(&c.b), ..c.clone() }
}

pub fn round_pool<T: Scalar>(p: &PoolCase) -> PoolCase {
    PoolCase { x: p.x.iter().map(|&a| T::from_f64(a).as_f64()).collect(), ..p.clone() }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation from the naive loops over `SHAPES` random cases for
/// each kernel family, in the given precision.
#[derive(Debug, Default)]
pub struct OracleReport {
    pub conv2d: f64,
    pub conv3d: f64,
    pub conv_transpose2d: f64,
    pub conv_transpose3d: f64,
    pub maxpool2d: f64,
    pub maxpool3d: f64,
}

impl OracleReport {
    pub fn worst(&self) -> f64 {
        [self.conv2d, self.conv3d, self.conv_transpose2d, self.conv_transpose3d, self.maxpool2d, self.maxpool3d]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn oracle_sweep<T: Scalar>(rng: &mut ChaCha8Rng) -> OracleReport {
    let mut r = OracleReport::default();
    for i in 0..SHAPES {
        let three_d = i % 2 == 0;
        let c = round_case::<T>(&conv_case(rng, three_d));
        let e = max_abs_diff(&run_conv::<T>(&c, three_d, false), &naive_conv(&c));
        let slot = if three_d { &mut r.conv3d } else { &mut r.conv2d };
        *slot = slot.max(e);

        let c = round_case::<T>(&conv_transpose_case(rng, three_d));
        let e = max_abs_diff(&run_conv::<T>(&c, three_d, true), &naive_conv_transpose(&c));
        let slot = if three_d { &mut r.conv_transpose3d } else { &mut r.conv_transpose2d };
        *slot = slot.max(e);

        let p = round_pool::<T>(&pool_case(rng, three_d));
        let e = max_abs_diff(&run_pool::<T>(&p, three_d), &naive_pool(&p));
        let slot = if three_d { &mut r.maxpool3d } else { &mut r.maxpool2d };
        *slot = slot.max(e);
    }
    r
}

/// `<convT_w(x), y> - <x, conv_w(y)>` relative to the magnitude of the
/// products, with zero bias, worst case over `SHAPES` 3D cases (64-bit).
pub fn adjoint_gap(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..SHAPES {
        let mut c = conv_transpose_case(rng, true);
        c.b = vec![0.0; c.c_out];
        let out = conv_transpose_out(&c);
        let y: Vec<f64> = (0..c.c_out * out.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ty = run_conv::<f64>(&c, true, true);
        let lhs: f64 = ty.iter().zip(&y).map(|(a, b)| a * b).sum();
        // The same weight buffer read as a plain conv maps c_out -> c_in.
        let plain = ConvCase {
            c_in: c.c_out,
            c_out: c.c_in,
            input: out,
            x: y.clone(),
            b: vec![0.0; c.c_in],
            ..c.clone()
        };
        let cy = run_conv::<f64>(&plain, true, false);
        let rhs: f64 = c.x.iter().zip(&cy).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    worst
}
