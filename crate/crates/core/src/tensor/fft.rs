//! Real and complex FFTs along one axis.
//!
//! Complex tensors carry a trailing axis of length 2 (re, im). `rfft`
//! appends that axis; `irfft` removes it. Forward transforms are
//! unnormalized, inverse transforms scale by 1/n.

use std::cell::RefCell;

use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{axis_split, OpKind, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static REAL_PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Weight of mode k in the half-spectrum sum: 1 for DC and (even n) the
/// Nyquist mode, 2 otherwise.
fn half_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

/// Real -> half complex spectrum along `axis` of a real array.
fn rfft_raw(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let h = n / 2 + 1;
    let r2c = REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    let mut input = r2c.make_input_vec();
    let mut spec = r2c.make_output_vec();
    let mut out = vec![0.0; outer * h * inner * 2];
    for o in 0..outer {
        for t in 0..inner {
            for j in 0..n {
                input[j] = x[(o * n + j) * inner + t];
            }
            r2c.process(&mut input, &mut spec).expect("r2c buffer sizes");
            for (k, c) in spec.iter().enumerate() {
                let b = ((o * h + k) * inner + t) * 2;
                out[b] = c.re;
                out[b + 1] = c.im;
            }
        }
    }
    out
}

/// Half complex spectrum -> real along `axis`, normalized by 1/n. The
/// imaginary parts of the DC and Nyquist modes are ignored.
fn irfft_raw(z: &[f64], cshape: &[usize], axis: usize, n: usize) -> Vec<f64> {
    let (outer, h, inner) = axis_split(&cshape[..cshape.len() - 1], axis);
    let c2r = REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    let mut spec = c2r.make_input_vec();
    let mut output = c2r.make_output_vec();
    let scale = 1.0 / n as f64;
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for t in 0..inner {
            for (k, c) in spec.iter_mut().enumerate() {
                let b = ((o * h + k) * inner + t) * 2;
                *c = Complex64::new(z[b], z[b + 1]);
            }
            spec[0].im = 0.0;
            if n % 2 == 0 {
                spec[h - 1].im = 0.0;
            }
            c2r.process(&mut spec, &mut output).expect("c2r buffer sizes");
            for j in 0..n {
                out[(o * n + j) * inner + t] = output[j] * scale;
            }
        }
    }
    out
}

/// Complex FFT along `axis` of a complex array (trailing 2 not counted in
/// `axis`). `inverse` uses the positive exponent; the result is multiplied
/// by `scale`.
fn cfft_raw(z: &[f64], cshape: &[usize], axis: usize, inverse: bool, scale: f64) -> Vec<f64> {
    let (outer, n, inner) = axis_split(&cshape[..cshape.len() - 1], axis);
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut buf = vec![Complex64::default(); n];
    let mut out = vec![0.0; z.len()];
    for o in 0..outer {
        for t in 0..inner {
            for (j, c) in buf.iter_mut().enumerate() {
                let b = ((o * n + j) * inner + t) * 2;
                *c = Complex64::new(z[b], z[b + 1]);
            }
            plan.process(&mut buf);
            for (j, c) in buf.iter().enumerate() {
                let b = ((o * n + j) * inner + t) * 2;
                out[b] = c.re * scale;
                out[b + 1] = c.im * scale;
            }
        }
    }
    out
}

/// Multiplies each complex entry at position k along `axis` by `w(k)`.
fn scale_modes(z: &mut [f64], cshape: &[usize], axis: usize, w: impl Fn(usize) -> f64) {
    let (outer, h, inner) = axis_split(&cshape[..cshape.len() - 1], axis);
    for o in 0..outer {
        for k in 0..h {
            let f = w(k);
            let b = (o * h + k) * inner * 2;
            z[b..b + inner * 2].iter_mut().for_each(|v| *v *= f);
        }
    }
}

pub(crate) fn check_complex(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if shape.last() != Some(&2) || axis + 1 >= shape.len() {
        return Err(Error::shape(
            op,
            format!("expected complex tensor (trailing axis 2) with axis {axis}, got {shape:?}"),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Real FFT along `axis`: length n becomes n/2+1 complex modes.
    pub fn rfft(&self, axis: usize) -> Result<Tensor> {
        super::check_axis("rfft", &self.shape, axis)?;
        let n = self.shape[axis];
        if n == 0 {
            return Err(Error::shape("rfft", "empty axis"));
        }
        let data = rfft_raw(&self.data, &self.shape, axis);
        let mut shape = self.shape.clone();
        shape[axis] = n / 2 + 1;
        shape.push(2);
        let cshape = shape.clone();
        let nf = n as f64;
        Tensor::from_op(OpKind::Rfft, shape, data, &[self], move |g, _| {
            let mut z = g.to_vec();
            scale_modes(&mut z, &cshape, axis, |k| nf / half_weight(k, n));
            vec![Some(irfft_raw(&z, &cshape, axis, n))]
        })
    }

    /// Inverse of [`Tensor::rfft`], producing `n` real samples along `axis`.
    pub fn irfft(&self, axis: usize, n: usize) -> Result<Tensor> {
        check_complex("irfft", &self.shape, axis)?;
        if n == 0 || self.shape[axis] != n / 2 + 1 {
            return Err(Error::shape(
                "irfft",
                format!("{} modes cannot produce {n} samples", self.shape[axis]),
            ));
        }
        let data = irfft_raw(&self.data, &self.shape, axis, n);
        let mut shape = self.shape.clone();
        shape.pop();
        shape[axis] = n;
        let rshape = shape.clone();
        let cshape = self.shape.clone();
        let nf = n as f64;
        Tensor::from_op(OpKind::Irfft, shape, data, &[self], move |g, _| {
            let mut z = rfft_raw(g, &rshape, axis);
            scale_modes(&mut z, &cshape, axis, |k| half_weight(k, n) / nf);
            vec![Some(z)]
        })
    }

    /// Complex FFT along `axis` (unnormalized).
    pub fn fft(&self, axis: usize) -> Result<Tensor> {
        self.cfft(axis, false)
    }

    /// Inverse complex FFT along `axis`, normalized by 1/n.
    pub fn ifft(&self, axis: usize) -> Result<Tensor> {
        self.cfft(axis, true)
    }

    fn cfft(&self, axis: usize, inverse: bool) -> Result<Tensor> {
        let (kind, name) = if inverse {
            (OpKind::Ifft, "ifft")
        } else {
            (OpKind::Fft, "fft")
        };
        check_complex(name, &self.shape, axis)?;
        let n = self.shape[axis] as f64;
        let fwd_scale = if inverse { 1.0 / n } else { 1.0 };
        let data = cfft_raw(&self.data, &self.shape, axis, inverse, fwd_scale);
        let shape = self.shape.clone();
        let cshape = shape.clone();
        // adjoint of unnormalized F is n·ifft = unnormalized inverse; of ifft is F/n
        Tensor::from_op(kind, shape, data, &[self], move |g, _| {
            vec![Some(cfft_raw(g, &cshape, axis, !inverse, fwd_scale))]
        })
    }
}
