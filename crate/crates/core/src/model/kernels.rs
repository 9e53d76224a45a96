//! Dense CHW kernels with their adjoints.

use crate::numeric::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_output_size(input: usize, kernel: usize, geom: ConvGeometry) -> usize {
    (input + 2 * geom.pad - kernel) / geom.stride + 1
}

/// Output columns `o` for which `o*stride + k - pad` lands inside `[0, len)`.
fn valid_range(len: usize, out_len: usize, k: usize, geom: ConvGeometry) -> (usize, usize) {
    let (s, p) = (geom.stride as isize, geom.pad as isize);
    let k = k as isize;
    let lo = ((p - k).max(0) + s - 1) / s;
    let hi = ((len as isize - 1 + p - k).div_euclid(s) + 1).clamp(0, out_len as isize);
    (lo.min(hi) as usize, hi as usize)
}

/// `x: [Cin,H,W]`, `w: [Cout,Cin,k,k]`, `b: [Cout]` → `[Cout,Ho,Wo]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, geom: ConvGeometry) -> Tensor<T> {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    debug_assert_eq!(w.shape()[1], cin);
    let ho = conv_output_size(h, k, geom);
    let wo = conv_output_size(wd, k, geom);
    let mut out = Tensor::zeros(vec![cout, ho, wo]);
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let od = out.data_mut();
    for co in 0..cout {
        let oplane = &mut od[co * ho * wo..(co + 1) * ho * wo];
        oplane.iter_mut().for_each(|v| *v = bd[co]);
        for ci in 0..cin {
            let xplane = &xd[ci * h * wd..(ci + 1) * h * wd];
            for ky in 0..k {
                let (y0, y1) = valid_range(h, ho, ky, geom);
                for kx in 0..k {
                    let wv = wdat[((co * cin + ci) * k + ky) * k + kx];
                    let (x0, x1) = valid_range(wd, wo, kx, geom);
                    for oy in y0..y1 {
                        let iy = oy * geom.stride + ky - geom.pad;
                        let orow = &mut oplane[oy * wo..(oy + 1) * wo];
                        let xrow = &xplane[iy * wd..(iy + 1) * wd];
                        for ox in x0..x1 {
                            orow[ox] += wv * xrow[ox * geom.stride + kx - geom.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
) -> ConvGrads<T> {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut gw = Tensor::zeros(w.shape().to_vec());
    let mut gb = Tensor::zeros(vec![cout]);
    let (xd, wdat, gd) = (x.data(), w.data(), grad_out.data());
    for co in 0..cout {
        let gplane = &gd[co * ho * wo..(co + 1) * ho * wo];
        gb.data_mut()[co] = gplane.iter().copied().sum();
        for ci in 0..cin {
            let xoff = ci * h * wd;
            for ky in 0..k {
                let (y0, y1) = valid_range(h, ho, ky, geom);
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = wdat[widx];
                    let (x0, x1) = valid_range(wd, wo, kx, geom);
                    let mut acc = T::zero();
                    let gxd = gx.data_mut();
                    for oy in y0..y1 {
                        let iy = oy * geom.stride + ky - geom.pad;
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        let row = xoff + iy * wd;
                        for ox in x0..x1 {
                            let ix = row + ox * geom.stride + kx - geom.pad;
                            let g = grow[ox];
                            acc += g * xd[ix];
                            gxd[ix] += g * wv;
                        }
                    }
                    gw.data_mut()[widx] = acc;
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

pub fn pooled_size(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2×2 average pooling with ceil-mode edges: border windows average only the
/// cells that exist.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (pooled_size(h), pooled_size(w));
    let mut out = Tensor::zeros(vec![c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut sum = T::zero();
                let mut n = 0usize;
                for iy in 2 * oy..(2 * oy + 2).min(h) {
                    for ix in 2 * ox..(2 * ox + 2).min(w) {
                        sum += xd[(ch * h + iy) * w + ix];
                        n += 1;
                    }
                }
                od[(ch * ho + oy) * wo + ox] = sum / T::of(n as f64);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gd = grad_out.data();
    let gxd = gx.data_mut();
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let ys = 2 * oy..(2 * oy + 2).min(h);
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let n = ys.len() * xs.len();
                let g = gd[(ch * ho + oy) * wo + ox] / T::of(n as f64);
                for iy in ys {
                    for ix in xs.clone() {
                        gxd[(ch * h + iy) * w + ix] += g;
                    }
                }
            }
        }
    }
    gx
}

/// Nearest upsampling to `h×w`: cell `(y, x)` copies `(y/2, x/2)`, the
/// inverse of the pooling windows above.
pub fn upsample2<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, hi, wi) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert!(pooled_size(h) == hi && pooled_size(w) == wi);
    let xd = x.data();
    Tensor::from_fn(vec![c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        let (y, xx) = (rest / w, rest % w);
        xd[(ch * hi + y / 2) * wi + xx / 2]
    })
}

pub fn upsample2_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, hi, wi) = (input_shape[0], input_shape[1], input_shape[2]);
    let (h, w) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gd = grad_out.data();
    let gxd = gx.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gxd[(ch * hi + y / 2) * wi + x / 2] += gd[(ch * h + y) * w + x];
            }
        }
    }
    gx
}

/// Per-position softmax over the leading (class) axis.
pub fn softmax_channels<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.shape()[0];
    let plane = logits.len() / c;
    let ld = logits.data();
    let mut out = Tensor::zeros(logits.shape().to_vec());
    let od = out.data_mut();
    for i in 0..plane {
        let m = (0..c).map(|k| ld[k * plane + i]).fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for k in 0..c {
            let e = (ld[k * plane + i] - m).exp();
            od[k * plane + i] = e;
            z += e;
        }
        for k in 0..c {
            od[k * plane + i] = od[k * plane + i] / z;
        }
    }
    out
}
