use std::sync::Arc;

use super::{OpKind, Tensor};
use crate::error::{Error, Result};

/// Result shape of broadcasting `a` against `b` with trailing-axis alignment.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index into a tensor of shape
/// `src` broadcast to it.
fn broadcast_index(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n = out_shape.len();
    let offset = n - src.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[offset + i] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; n];
    let mut out = Vec::with_capacity(total);
    let mut flat = 0usize;
    for _ in 0..total {
        out.push(flat);
        for a in (0..n).rev() {
            idx[a] += 1;
            flat += strides[a];
            if idx[a] < out_shape[a] {
                break;
            }
            flat -= strides[a] * idx[a];
            idx[a] = 0;
        }
    }
    out
}

fn reduce_to(map: &Option<Arc<Vec<usize>>>, len: usize, per_elem: Vec<f64>) -> Vec<f64> {
    match map {
        None => per_elem,
        Some(m) => {
            let mut out = vec![0.0; len];
            for (i, v) in per_elem.into_iter().enumerate() {
                out[m[i]] += v;
            }
            out
        }
    }
}

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        kind: OpKind,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (shape, amap, bmap) = if self.shape == other.shape {
            (self.shape.clone(), None, None)
        } else {
            let shape = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| {
                Error::shape(
                    "broadcast",
                    format!("{:?} vs {:?} in {kind:?}", self.shape, other.shape),
                )
            })?;
            let amap = (self.shape != shape).then(|| Arc::new(broadcast_index(&self.shape, &shape)));
            let bmap = (other.shape != shape).then(|| Arc::new(broadcast_index(&other.shape, &shape)));
            (shape, amap, bmap)
        };
        let a = self.data_arc();
        let b = other.data_arc();
        let n: usize = shape.iter().product();
        let at = |m: &Option<Arc<Vec<usize>>>, i: usize| m.as_ref().map_or(i, |m| m[i]);
        let data: Vec<f64> = match (&amap, &bmap) {
            (None, None) => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(a[at(&amap, i)], b[at(&bmap, i)])).collect(),
        };
        let (alen, blen) = (a.len(), b.len());
        Tensor::from_op(kind, shape, data, &[self, other], move |g, needs| {
            let av = |i: usize| a[amap.as_ref().map_or(i, |m| m[i])];
            let bv = |i: usize| b[bmap.as_ref().map_or(i, |m| m[i])];
            let ga = needs[0].then(|| {
                let per: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| da(av(i), bv(i), gi)).collect();
                reduce_to(&amap, alen, per)
            });
            let gb = needs[1].then(|| {
                let per: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| db(av(i), bv(i), gi)).collect();
                reduce_to(&bmap, blen, per)
            });
            vec![ga, gb]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, OpKind::Add, |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, OpKind::Sub, |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, OpKind::Mul, |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(
            other,
            OpKind::Div,
            |x, y| x / y,
            |_, y, g| g / y,
            |x, y, g| -g * x / (y * y),
        )
    }

    fn unary<F, D>(&self, kind: OpKind, f: F, df: D) -> Result<Tensor>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64 + Send + 'static,
    {
        let x = self.data_arc();
        let data = x.iter().map(|&v| f(v)).collect();
        Tensor::from_op(kind, self.shape.clone(), data, &[self], move |g, _| {
            vec![Some(g.iter().zip(x.iter()).map(|(&gi, &xi)| gi * df(xi)).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(OpKind::AddScalar, move |v| v + c, |_| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(OpKind::MulScalar, move |v| v * c, move |_| c)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(OpKind::Neg, |v| -v, |_| -1.0)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(OpKind::Square, |v| v * v, |v| 2.0 * v)
    }

    pub fn sin(&self) -> Result<Tensor> {
        self.unary(OpKind::Sin, f64::sin, f64::cos)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(OpKind::Exp, f64::exp, f64::exp)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(
            OpKind::Relu,
            |v| v.max(0.0),
            |v| if v > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// x * sigmoid(x)
    pub fn silu(&self) -> Result<Tensor> {
        self.unary(
            OpKind::Silu,
            |v| v * sigmoid(v),
            |v| {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Tensor> {
        self.unary(
            OpKind::Gelu,
            |v| 0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)),
            |v| {
                let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + v * pdf
            },
        )
    }

    /// Sum of all elements, as a shape-`[]` tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let n = self.numel();
        let s = self.data.iter().sum();
        Tensor::from_op(OpKind::Sum, vec![], vec![s], &[self], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s: f64 = self.data.iter().sum::<f64>() / n as f64;
        Tensor::from_op(OpKind::Mean, vec![], vec![s], &[self], move |g, _| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
