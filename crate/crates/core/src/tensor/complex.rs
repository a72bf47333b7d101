use super::{OpKind, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Elementwise complex product of two same-shape complex tensors.
    pub fn complex_mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape || self.shape.last() != Some(&2) {
            return Err(Error::shape(
                "complex_mul",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let a = self.data_arc();
        let b = other.data_arc();
        let mut data = vec![0.0; a.len()];
        for i in (0..a.len()).step_by(2) {
            data[i] = a[i] * b[i] - a[i + 1] * b[i + 1];
            data[i + 1] = a[i] * b[i + 1] + a[i + 1] * b[i];
        }
        Tensor::from_op(OpKind::ComplexMul, self.shape.clone(), data, &[self, other], move |g, needs| {
            // adjoint of z -> z·c is g·conj(c)
            let conj_mul = |c: &[f64]| {
                let mut out = vec![0.0; g.len()];
                for i in (0..g.len()).step_by(2) {
                    out[i] = g[i] * c[i] + g[i + 1] * c[i + 1];
                    out[i + 1] = g[i + 1] * c[i] - g[i] * c[i + 1];
                }
                out
            };
            vec![needs[0].then(|| conj_mul(&b)), needs[1].then(|| conj_mul(&a))]
        })
    }

    /// Per-mode channel mixing: x (B, I, K.., 2) and w (I, O, K.., 2) give
    /// out[b, o, k] = Σ_i x[b, i, k]·w[i, o, k] (complex products).
    pub fn spectral_mix(&self, w: &Tensor) -> Result<Tensor> {
        let ok = self.ndim() >= 3
            && w.ndim() == self.ndim()
            && self.shape[1] == w.shape[0]
            && self.shape[2..] == w.shape[2..]
            && self.shape.last() == Some(&2);
        if !ok {
            return Err(Error::shape(
                "spectral_mix",
                format!("x {:?}, w {:?}", self.shape, w.shape),
            ));
        }
        let (bsz, ci, co) = (self.shape[0], self.shape[1], w.shape[1]);
        let km: usize = self.shape[2..self.ndim() - 1].iter().product();
        let x = self.data_arc();
        let wd = w.data_arc();
        let mut data = vec![0.0; bsz * co * km * 2];
        for b in 0..bsz {
            for i in 0..ci {
                let xb = (b * ci + i) * km * 2;
                for o in 0..co {
                    let wb = (i * co + o) * km * 2;
                    let ob = (b * co + o) * km * 2;
                    for k in 0..km {
                        let (xr, xi) = (x[xb + 2 * k], x[xb + 2 * k + 1]);
                        let (wr, wi) = (wd[wb + 2 * k], wd[wb + 2 * k + 1]);
                        data[ob + 2 * k] += xr * wr - xi * wi;
                        data[ob + 2 * k + 1] += xr * wi + xi * wr;
                    }
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[1] = co;
        Tensor::from_op(OpKind::SpectralMix, shape, data, &[self, w], move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; bsz * ci * km * 2]);
            let mut gw = needs[1].then(|| vec![0.0; ci * co * km * 2]);
            for b in 0..bsz {
                for i in 0..ci {
                    let xb = (b * ci + i) * km * 2;
                    for o in 0..co {
                        let wb = (i * co + o) * km * 2;
                        let gb = (b * co + o) * km * 2;
                        for k in 0..km {
                            let (gr, gi) = (g[gb + 2 * k], g[gb + 2 * k + 1]);
                            if let Some(gx) = &mut gx {
                                let (wr, wi) = (wd[wb + 2 * k], wd[wb + 2 * k + 1]);
                                gx[xb + 2 * k] += gr * wr + gi * wi;
                                gx[xb + 2 * k + 1] += gi * wr - gr * wi;
                            }
                            if let Some(gw) = &mut gw {
                                let (xr, xi) = (x[xb + 2 * k], x[xb + 2 * k + 1]);
                                gw[wb + 2 * k] += gr * xr + gi * xi;
                                gw[wb + 2 * k + 1] += gi * xr - gr * xi;
                            }
                        }
                    }
                }
            }
            vec![gx, gw]
        })
    }
}
