use super::{OpKind, Tensor};
use crate::error::{Error, Result};

/// c (m×n) = beta·c + op(a)·op(b), row-major storage. `ta`/`tb` select
/// the transpose of the stored matrix; `a` stores m×k (or k×m when `ta`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are exactly the sizes implied by the strides above.
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

impl Tensor {
    /// (m, k) @ (k, n) -> (m, n)
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (a, b) => {
                return Err(Error::shape("matmul", format!("{a:?} @ {b:?}")));
            }
        };
        let a = self.data_arc();
        let b = other.data_arc();
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut data, 0.0);
        Tensor::from_op(OpKind::MatMul, vec![m, n], data, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut out = vec![0.0; m * k];
                gemm(m, n, k, g, false, &b, true, &mut out, 0.0);
                out
            });
            let gb = needs[1].then(|| {
                let mut out = vec![0.0; k * n];
                gemm(k, m, n, &a, true, g, false, &mut out, 0.0);
                out
            });
            vec![ga, gb]
        })
    }

    /// Pointwise linear map over the channel axis: x (B, Cin, S..) with
    /// w (Cout, Cin) gives (B, Cout, S..). No bias.
    pub fn channel_linear(&self, w: &Tensor) -> Result<Tensor> {
        if self.ndim() < 2 || w.ndim() != 2 || w.shape[1] != self.shape[1] {
            return Err(Error::shape(
                "channel_linear",
                format!("x {:?}, w {:?}", self.shape, w.shape),
            ));
        }
        let bsz = self.shape[0];
        let cin = self.shape[1];
        let cout = w.shape[0];
        let s: usize = self.shape[2..].iter().product();
        let x = self.data_arc();
        let wd = w.data_arc();
        let mut data = vec![0.0; bsz * cout * s];
        for b in 0..bsz {
            gemm(
                cout,
                cin,
                s,
                &wd,
                false,
                &x[b * cin * s..(b + 1) * cin * s],
                false,
                &mut data[b * cout * s..(b + 1) * cout * s],
                0.0,
            );
        }
        let mut shape = self.shape.clone();
        shape[1] = cout;
        Tensor::from_op(OpKind::ChannelLinear, shape, data, &[self, w], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut out = vec![0.0; bsz * cin * s];
                for b in 0..bsz {
                    gemm(
                        cin,
                        cout,
                        s,
                        &wd,
                        true,
                        &g[b * cout * s..(b + 1) * cout * s],
                        false,
                        &mut out[b * cin * s..(b + 1) * cin * s],
                        0.0,
                    );
                }
                out
            });
            let gw = needs[1].then(|| {
                let mut out = vec![0.0; cout * cin];
                for b in 0..bsz {
                    gemm(
                        cout,
                        s,
                        cin,
                        &g[b * cout * s..(b + 1) * cout * s],
                        false,
                        &x[b * cin * s..(b + 1) * cin * s],
                        true,
                        &mut out,
                        1.0,
                    );
                }
                out
            });
            vec![gx, gw]
        })
    }
}
