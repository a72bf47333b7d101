use super::{axis_split, check_axis, OpKind, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Tensor::from_op(
            OpKind::Reshape,
            shape.to_vec(),
            self.to_vec(),
            &[self],
            |g, _| vec![Some(g.to_vec())],
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", &self.shape, axis)?;
        if start > end || end > self.shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on axis of length {}", self.shape[axis]),
            ));
        }
        let indices: Vec<usize> = (start..end).collect();
        self.gather(OpKind::Slice, axis, &indices)
    }

    /// Zero padding of `before`/`after` entries along `axis`.
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Tensor> {
        check_axis("pad", &self.shape, axis)?;
        let n = self.shape[axis];
        let indices: Vec<usize> = (before..before + n).collect();
        self.scatter_kind(OpKind::Pad, axis, &indices, before + n + after)
    }

    /// Selects `indices` along `axis` (repeats allowed).
    pub fn take(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis("take", &self.shape, axis)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape[axis]) {
            return Err(Error::shape(
                "take",
                format!("index {bad} on axis of length {}", self.shape[axis]),
            ));
        }
        self.gather(OpKind::Take, axis, indices)
    }

    /// Places slice `j` of `self` along `axis` at position `indices[j]` of a
    /// zero tensor whose `axis` has length `len`. Indices must be distinct.
    pub fn scatter(&self, axis: usize, indices: &[usize], len: usize) -> Result<Tensor> {
        check_axis("scatter", &self.shape, axis)?;
        self.scatter_kind(OpKind::Scatter, axis, indices, len)
    }

    fn gather(&self, kind: OpKind, axis: usize, indices: &[usize]) -> Result<Tensor> {
        let (outer, n, inner) = axis_split(&self.shape, axis);
        let k = indices.len();
        let src = self.data_arc();
        let mut data = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = k;
        let idx = indices.to_vec();
        Tensor::from_op(kind, shape, data, &[self], move |g, _| {
            let mut out = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for (j, &i) in idx.iter().enumerate() {
                    let gb = (o * k + j) * inner;
                    let ob = (o * n + i) * inner;
                    for t in 0..inner {
                        out[ob + t] += g[gb + t];
                    }
                }
            }
            vec![Some(out)]
        })
    }

    fn scatter_kind(
        &self,
        kind: OpKind,
        axis: usize,
        indices: &[usize],
        len: usize,
    ) -> Result<Tensor> {
        let (outer, k, inner) = axis_split(&self.shape, axis);
        if indices.len() != k {
            return Err(Error::shape(
                "scatter",
                format!("{} indices for axis of length {k}", indices.len()),
            ));
        }
        let mut seen = vec![false; len];
        for &i in indices {
            if i >= len || seen[i] {
                return Err(Error::shape(
                    "scatter",
                    format!("index {i} out of range or repeated (target length {len})"),
                ));
            }
            seen[i] = true;
        }
        let src = self.data_arc();
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for (j, &i) in indices.iter().enumerate() {
                let sb = (o * k + j) * inner;
                let db = (o * len + i) * inner;
                data[db..db + inner].copy_from_slice(&src[sb..sb + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let idx = indices.to_vec();
        Tensor::from_op(kind, shape, data, &[self], move |g, _| {
            let mut out = Vec::with_capacity(outer * k * inner);
            for o in 0..outer {
                for &i in &idx {
                    let gb = (o * len + i) * inner;
                    out.extend_from_slice(&g[gb..gb + inner]);
                }
            }
            vec![Some(out)]
        })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        check_axis("concat", &first.shape, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let same = p.ndim() == first.ndim()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(a, (x, y))| a == axis || x == y);
            if !same {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} on axis {axis}", p.shape, first.shape),
                ));
            }
            lens.push(p.shape[axis]);
        }
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = axis_split(&first.shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                let b = o * l * inner;
                data.extend_from_slice(&p.data[b..b + l * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::from_op(OpKind::Concat, shape, data, &refs, move |g, needs| {
            let mut out: Vec<Option<Vec<f64>>> = lens
                .iter()
                .zip(needs)
                .map(|(&l, &need)| need.then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (slot, &l) in out.iter_mut().zip(&lens) {
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[off..off + l * inner]);
                    }
                    off += l * inner;
                }
            }
            out
        })
    }
}
