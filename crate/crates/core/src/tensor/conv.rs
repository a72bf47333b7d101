//! Strided N-d convolution (N = 1, 2, 3) via im2col + gemm.
//!
//! Both directions share one geometry: "big" position = small·stride −
//! pad + kernel offset. For `conv` the input is big and the output small;
//! `conv_transpose` is the exact adjoint with the roles swapped.

use std::sync::Arc;

use super::linalg::gemm;
use super::{OpKind, Tensor};
use crate::error::{Error, Result};

struct Geometry {
    /// (kernel offset, small position) -> big flat index, or NONE if padded.
    table: Vec<usize>,
    kvol: usize,
    small_vol: usize,
    big_vol: usize,
}

const NONE: usize = usize::MAX;

impl Geometry {
    fn new(big: &[usize], small: &[usize], k: &[usize], s: &[usize], p: &[usize]) -> Self {
        let d = big.len();
        let kvol: usize = k.iter().product();
        let small_vol: usize = small.iter().product();
        let big_vol: usize = big.iter().product();
        let mut table = Vec::with_capacity(kvol * small_vol);
        let mut kidx = vec![0usize; d];
        for _ in 0..kvol {
            let mut oidx = vec![0usize; d];
            for _ in 0..small_vol {
                let mut flat = 0usize;
                let mut inside = true;
                for a in 0..d {
                    let pos = (oidx[a] * s[a] + kidx[a]) as isize - p[a] as isize;
                    if pos < 0 || pos >= big[a] as isize {
                        inside = false;
                        break;
                    }
                    flat = flat * big[a] + pos as usize;
                }
                table.push(if inside { flat } else { NONE });
                increment(&mut oidx, small);
            }
            increment(&mut kidx, k);
        }
        Geometry {
            table,
            kvol,
            small_vol,
            big_vol,
        }
    }

    /// big (C, big_vol) -> cols (C·kvol, small_vol)
    fn im2col(&self, big: &[f64], channels: usize) -> Vec<f64> {
        let mut cols = vec![0.0; channels * self.kvol * self.small_vol];
        for c in 0..channels {
            let src = &big[c * self.big_vol..(c + 1) * self.big_vol];
            let dst = &mut cols[c * self.kvol * self.small_vol..(c + 1) * self.kvol * self.small_vol];
            for (d, &t) in dst.iter_mut().zip(&self.table) {
                if t != NONE {
                    *d = src[t];
                }
            }
        }
        cols
    }

    /// Adjoint of im2col, accumulating into `big`.
    fn col2im(&self, cols: &[f64], channels: usize, big: &mut [f64]) {
        for c in 0..channels {
            let src = &cols[c * self.kvol * self.small_vol..(c + 1) * self.kvol * self.small_vol];
            let dst = &mut big[c * self.big_vol..(c + 1) * self.big_vol];
            for (v, &t) in src.iter().zip(&self.table) {
                if t != NONE {
                    dst[t] += v;
                }
            }
        }
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return;
        }
        idx[a] = 0;
    }
}

fn spatial_args(
    op: &'static str,
    x: &[usize],
    w: &[usize],
    stride: &[usize],
    padding: &[usize],
) -> Result<usize> {
    let d = x.len().saturating_sub(2);
    if !(1..=3).contains(&d) || w.len() != d + 2 || stride.len() != d || padding.len() != d {
        return Err(Error::shape(
            op,
            format!("x {x:?}, w {w:?}, stride {stride:?}, padding {padding:?}"),
        ));
    }
    if stride.contains(&0) {
        return Err(Error::invalid(format!("{op}: zero stride")));
    }
    Ok(d)
}

impl Tensor {
    /// x (B, Cin, S..) ⋆ w (Cout, Cin, K..) with per-axis stride and zero
    /// padding. No bias.
    pub fn conv(&self, w: &Tensor, stride: &[usize], padding: &[usize]) -> Result<Tensor> {
        let d = spatial_args("conv", &self.shape, &w.shape, stride, padding)?;
        let (bsz, cin) = (self.shape[0], self.shape[1]);
        let cout = w.shape[0];
        if w.shape[1] != cin {
            return Err(Error::shape("conv", format!("x {:?}, w {:?}", self.shape, w.shape)));
        }
        let big = &self.shape[2..];
        let k = &w.shape[2..];
        let mut small = Vec::with_capacity(d);
        for a in 0..d {
            let span = big[a] + 2 * padding[a];
            if span < k[a] {
                return Err(Error::shape("conv", format!("kernel {k:?} larger than padded input {big:?}")));
            }
            small.push((span - k[a]) / stride[a] + 1);
        }
        let geo = Arc::new(Geometry::new(big, &small, k, stride, padding));
        let (kvol, ovol, ivol) = (geo.kvol, geo.small_vol, geo.big_vol);
        let ck = cin * kvol;
        let x = self.data_arc();
        let wd = w.data_arc();
        let mut data = vec![0.0; bsz * cout * ovol];
        for b in 0..bsz {
            let cols = geo.im2col(&x[b * cin * ivol..(b + 1) * cin * ivol], cin);
            gemm(cout, ck, ovol, &wd, false, &cols, false, &mut data[b * cout * ovol..(b + 1) * cout * ovol], 0.0);
        }
        let mut shape = vec![bsz, cout];
        shape.extend_from_slice(&small);
        Tensor::from_op(OpKind::Conv, shape, data, &[self, w], move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; bsz * cin * ivol]);
            let mut gw = needs[1].then(|| vec![0.0; cout * ck]);
            let mut gcols = vec![0.0; ck * ovol];
            for b in 0..bsz {
                let gb = &g[b * cout * ovol..(b + 1) * cout * ovol];
                if let Some(gw) = &mut gw {
                    let cols = geo.im2col(&x[b * cin * ivol..(b + 1) * cin * ivol], cin);
                    gemm(cout, ovol, ck, gb, false, &cols, true, gw, 1.0);
                }
                if let Some(gx) = &mut gx {
                    gemm(ck, cout, ovol, &wd, true, gb, false, &mut gcols, 0.0);
                    geo.col2im(&gcols, cin, &mut gx[b * cin * ivol..(b + 1) * cin * ivol]);
                }
            }
            vec![gx, gw]
        })
    }

    /// Transposed convolution: x (B, Cin, S..) with w (Cin, Cout, K..).
    /// `out_size` fixes the spatial output; it must equal
    /// (n−1)·stride − 2·pad + k + op for some output padding 0 ≤ op < stride.
    pub fn conv_transpose(
        &self,
        w: &Tensor,
        stride: &[usize],
        padding: &[usize],
        out_size: &[usize],
    ) -> Result<Tensor> {
        let d = spatial_args("conv_transpose", &self.shape, &w.shape, stride, padding)?;
        let (bsz, cin) = (self.shape[0], self.shape[1]);
        let cout = w.shape[1];
        if w.shape[0] != cin || out_size.len() != d {
            return Err(Error::shape(
                "conv_transpose",
                format!("x {:?}, w {:?}, out {out_size:?}", self.shape, w.shape),
            ));
        }
        let small = &self.shape[2..];
        let k = &w.shape[2..];
        for a in 0..d {
            let base = ((small[a] - 1) * stride[a] + k[a]) as isize - 2 * padding[a] as isize;
            let op = out_size[a] as isize - base;
            if op < 0 || op >= stride[a] as isize {
                return Err(Error::shape(
                    "conv_transpose",
                    format!("output size {} unreachable from input {} (stride {}, kernel {}, pad {})",
                        out_size[a], small[a], stride[a], k[a], padding[a]),
                ));
            }
        }
        let geo = Arc::new(Geometry::new(out_size, small, k, stride, padding));
        let (kvol, ivol, ovol) = (geo.kvol, geo.small_vol, geo.big_vol);
        let ck = cout * kvol;
        let x = self.data_arc();
        let wd = w.data_arc();
        let mut data = vec![0.0; bsz * cout * ovol];
        let mut cols = vec![0.0; ck * ivol];
        for b in 0..bsz {
            gemm(ck, cin, ivol, &wd, true, &x[b * cin * ivol..(b + 1) * cin * ivol], false, &mut cols, 0.0);
            geo.col2im(&cols, cout, &mut data[b * cout * ovol..(b + 1) * cout * ovol]);
        }
        let mut shape = vec![bsz, cout];
        shape.extend_from_slice(out_size);
        Tensor::from_op(OpKind::ConvTranspose, shape, data, &[self, w], move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; bsz * cin * ivol]);
            let mut gw = needs[1].then(|| vec![0.0; cin * ck]);
            for b in 0..bsz {
                let gcols = geo.im2col(&g[b * cout * ovol..(b + 1) * cout * ovol], cout);
                if let Some(gx) = &mut gx {
                    gemm(cin, ck, ivol, &wd, false, &gcols, false, &mut gx[b * cin * ivol..(b + 1) * cin * ivol], 0.0);
                }
                if let Some(gw) = &mut gw {
                    gemm(cin, ivol, ck, &x[b * cin * ivol..(b + 1) * cin * ivol], false, &gcols, true, gw, 1.0);
                }
            }
            vec![gx, gw]
        })
    }
}
