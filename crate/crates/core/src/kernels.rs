//! Raw numeric loops shared by the tape and by the non-differentiable test path.
//!
//! All layouts are row-major `N, H, W, C`; convolution kernels are `k, k, Cin, Cout`.

use crate::error::{Error, Result};

/// Spatial padding mode for [`conv2d`](crate::tape::Tape::conv2d).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output keeps the input resolution; stride must be 1.
    Same,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn resolve(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let (n, h, w, cin) = (input[0], input[1], input[2], input[3]);
        let (kh, kw, kcin, cout) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kh != kw || kcin != cin || kh == 0 {
            return Err(Error::shape("conv2d", input, kernel));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        let k = kh;
        match padding {
            Padding::Valid => {
                if h < k || w < k {
                    return Err(Error::shape("conv2d", input, kernel));
                }
                if (h - k) % stride != 0 || (w - k) % stride != 0 {
                    return Err(Error::shape(
                        "conv2d (stride does not tile input)",
                        input,
                        kernel,
                    ));
                }
                Ok(ConvGeom {
                    n,
                    h,
                    w,
                    cin,
                    k,
                    cout,
                    stride,
                    pad_top: 0,
                    pad_left: 0,
                    oh: (h - k) / stride + 1,
                    ow: (w - k) / stride + 1,
                })
            }
            Padding::Same => {
                if stride != 1 {
                    return Err(Error::invalid("same padding requires stride 1"));
                }
                let pad = (k - 1) / 2;
                Ok(ConvGeom {
                    n,
                    h,
                    w,
                    cin,
                    k,
                    cout,
                    stride,
                    pad_top: pad,
                    pad_left: pad,
                    oh: h,
                    ow: w,
                })
            }
        }
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.oh, self.ow, self.cout]
    }

    /// Input coordinate for output row/col `o` and kernel tap `t`, if in bounds.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + t) as isize - pad as isize;
        if pos < 0 || pos as usize >= limit {
            None
        } else {
            Some(pos as usize)
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.oh * g.ow * g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o_off = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let acc = &mut out[o_off..o_off + g.cout];
                if let Some(b) = bias {
                    acc.copy_from_slice(b);
                }
                for ky in 0..g.k {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let i_off = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let k_off = (ky * g.k + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = input[i_off + ci];
                            let krow = &kernel[k_off + ci * g.cout..k_off + (ci + 1) * g.cout];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    mut grad_in: Option<&mut [f64]>,
    mut grad_k: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    if let Some(gb) = grad_b {
        for chunk in grad_out.chunks_exact(g.cout) {
            for (b, &d) in gb.iter_mut().zip(chunk) {
                *b += d;
            }
        }
    }
    if grad_in.is_none() && grad_k.is_none() {
        return;
    }
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o_off = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let dout = &grad_out[o_off..o_off + g.cout];
                for ky in 0..g.k {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let i_off = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let k_off = (ky * g.k + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let krange = k_off + ci * g.cout..k_off + (ci + 1) * g.cout;
                            if let Some(gi) = grad_in.as_deref_mut() {
                                let krow = &kernel[krange.clone()];
                                let dot: f64 = krow.iter().zip(dout).map(|(k, d)| k * d).sum();
                                gi[i_off + ci] += dot;
                            }
                            if let Some(gk) = grad_k.as_deref_mut() {
                                let xv = input[i_off + ci];
                                for (kg, &d) in gk[krange].iter_mut().zip(dout) {
                                    *kg += xv * d;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[m,n] = sum_k a[m,k] * b[k,n]`, summed in increasing `k`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Accumulates `da += dc * b^T` and `db += a^T * dc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let drow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                da[i * k + p] += drow.iter().zip(brow).map(|(d, b)| d * b).sum::<f64>();
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let drow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                for (g, &d) in db[p * n..(p + 1) * n].iter_mut().zip(drow) {
                    *g += av * d;
                }
            }
        }
    }
}

/// `[N,H,W,C*r*r] -> [N,H*r,W*r,C]` with
/// `out[n, h*r+dy, w*r+dx, c] = in[n, h, w, (dy*r+dx)*C + c]`.
pub(crate) fn depth_to_space(x: &[f64], shape: &[usize], r: usize) -> Vec<f64> {
    let (n, h, w, cin) = (shape[0], shape[1], shape[2], shape[3]);
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let i_off = ((b * h + y) * w + xx) * cin;
                for dy in 0..r {
                    for dx in 0..r {
                        let o_off = ((b * oh + y * r + dy) * ow + xx * r + dx) * c;
                        let s = i_off + (dy * r + dx) * c;
                        out[o_off..o_off + c].copy_from_slice(&x[s..s + c]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`depth_to_space`]: `[N,H,W,C] -> [N,H/r,W/r,C*r*r]`.
pub(crate) fn space_to_depth(x: &[f64], shape: &[usize], r: usize) -> Vec<f64> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow, oc) = (h / r, w / r, c * r * r);
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let o_off = ((b * oh + y) * ow + xx) * oc;
                for dy in 0..r {
                    for dx in 0..r {
                        let i_off = ((b * h + y * r + dy) * w + xx * r + dx) * c;
                        let d = o_off + (dy * r + dx) * c;
                        out[d..d + c].copy_from_slice(&x[i_off..i_off + c]);
                    }
                }
            }
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
