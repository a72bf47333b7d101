//! Finite-difference operators on uniform grids, all recorded on the tape.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{axis_split, OpKind, Tensor};

/// A tensor whose trailing axes are sampled on a uniform grid. Leading axes
/// (batch, channel) are carried along untouched.
#[derive(Debug, Clone)]
pub struct GridField {
    values: Tensor,
    extents: Vec<(f64, f64)>,
}

impl GridField {
    pub fn new(values: Tensor, extents: Vec<(f64, f64)>) -> Result<Self> {
        if extents.is_empty() || extents.len() > values.ndim() {
            return Err(Error::shape(
                "grid_field",
                format!("{} extents for values {:?}", extents.len(), values.shape()),
            ));
        }
        let lead = values.ndim() - extents.len();
        for (a, &(lo, hi)) in extents.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("bad extent ({lo}, {hi}) on axis {a}")));
            }
            if values.shape()[lead + a] < 2 {
                return Err(Error::shape("grid_field", format!("axis {a} needs at least 2 points")));
            }
        }
        Ok(GridField { values, extents })
    }

    /// Unit extents `[0, 1]` on every trailing axis.
    pub fn unit(values: Tensor, n_spatial: usize) -> Result<Self> {
        Self::new(values, vec![(0.0, 1.0); n_spatial])
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents
    }

    pub fn n_spatial(&self) -> usize {
        self.extents.len()
    }

    /// Index into `values.shape()` of spatial axis `a`.
    pub fn tensor_axis(&self, a: usize) -> usize {
        self.values.ndim() - self.extents.len() + a
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.values.shape()[self.values.ndim() - self.extents.len()..]
    }

    pub fn spacing(&self, a: usize) -> f64 {
        let (lo, hi) = self.extents[a];
        (hi - lo) / (self.spatial_shape()[a] - 1) as f64
    }

    /// Grid coordinate of index `i` on spatial axis `a`.
    pub fn coord(&self, a: usize, i: usize) -> f64 {
        self.extents[a].0 + i as f64 * self.spacing(a)
    }

    /// Same extents, new values (spatial sizes may change, e.g. after pooling).
    pub fn with_values(&self, values: Tensor) -> Result<Self> {
        Self::new(values, self.extents.clone())
    }

    /// Applies `f` to the values, keeping extents.
    pub fn map(&self, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Self> {
        self.with_values(f(&self.values)?)
    }

    fn check_axis(&self, op: &'static str, a: usize, min_points: usize) -> Result<usize> {
        if a >= self.n_spatial() {
            return Err(Error::shape(op, format!("spatial axis {a} of a {}D field", self.n_spatial())));
        }
        let n = self.spatial_shape()[a];
        if n < min_points {
            return Err(Error::shape(op, format!("{n} points on axis {a}, need {min_points}")));
        }
        Ok(self.tensor_axis(a))
    }
}

/// Coefficients of an implicit (compact) first-derivative scheme
/// `al·f'_{i-1} + f'_i + au·f'_{i+1} = Σ_j q_j f_{i+j} / Δ`, j = −2..=2,
/// written for positive advection. Negative advection mirrors them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactCoeffs {
    pub alpha_lower: f64,
    pub alpha_upper: f64,
    pub q: [f64; 5],
}

impl CompactCoeffs {
    /// Fourth-order Padé scheme (symmetric).
    pub fn pade4() -> Self {
        CompactCoeffs {
            alpha_lower: 0.25,
            alpha_upper: 0.25,
            q: [0.0, -0.75, 0.0, 0.75, 0.0],
        }
    }

    fn mirrored(&self) -> Self {
        let q = self.q;
        CompactCoeffs {
            alpha_lower: self.alpha_upper,
            alpha_upper: self.alpha_lower,
            q: [-q[4], -q[3], -q[2], -q[1], -q[0]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Upwind3,
    Central2,
    Central4,
    Compact(CompactCoeffs),
}

/// First-derivative scheme along one spatial axis. `positive` is the sign of
/// the advection velocity (used only by biased schemes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilScheme {
    pub kind: SchemeKind,
    pub axis: usize,
    pub positive: bool,
}

impl StencilScheme {
    pub fn new(kind: SchemeKind, axis: usize) -> Self {
        StencilScheme { kind, axis, positive: true }
    }

    pub fn upwind(axis: usize, velocity_sign: f64) -> Self {
        if velocity_sign == 0.0 {
            StencilScheme::new(SchemeKind::Central4, axis)
        } else {
            StencilScheme {
                kind: SchemeKind::Upwind3,
                axis,
                positive: velocity_sign > 0.0,
            }
        }
    }

    fn min_points(&self) -> usize {
        match self.kind {
            SchemeKind::Central2 => 3,
            _ => 5,
        }
    }
}

/// Sparse row `i` of a linear operator along one axis: (column, weight).
pub(crate) type Rows = Vec<Vec<(usize, f64)>>;

fn one_sided(i: usize, n: usize, inv: f64) -> Vec<(usize, f64)> {
    if i < n / 2 {
        vec![(i, -1.5 * inv), (i + 1, 2.0 * inv), (i + 2, -0.5 * inv)]
    } else {
        vec![(i, 1.5 * inv), (i - 1, -2.0 * inv), (i - 2, 0.5 * inv)]
    }
}

/// Rows of an explicit stencil with offsets/weights (in units of 1/Δ),
/// falling back to one-sided second-order rows where it does not fit.
fn explicit_rows(n: usize, dx: f64, stencil: &[(isize, f64)]) -> Rows {
    let inv = 1.0 / dx;
    let lo = stencil.iter().map(|s| s.0).min().unwrap_or(0);
    let hi = stencil.iter().map(|s| s.0).max().unwrap_or(0);
    (0..n)
        .map(|i| {
            let ii = i as isize;
            if ii + lo >= 0 && ii + hi < n as isize {
                stencil
                    .iter()
                    .map(|&(o, c)| ((ii + o) as usize, c * inv))
                    .collect()
            } else {
                one_sided(i, n, inv)
            }
        })
        .collect()
}

fn first_derivative_rows(kind: SchemeKind, positive: bool, n: usize, dx: f64) -> Rows {
    match kind {
        SchemeKind::Central2 => explicit_rows(n, dx, &[(-1, -0.5), (1, 0.5)]),
        SchemeKind::Central4 => explicit_rows(
            n,
            dx,
            &[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)],
        ),
        SchemeKind::Upwind3 if positive => explicit_rows(
            n,
            dx,
            &[(-2, 1.0 / 6.0), (-1, -1.0), (0, 0.5), (1, 1.0 / 3.0)],
        ),
        SchemeKind::Upwind3 => explicit_rows(
            n,
            dx,
            &[(-1, -1.0 / 3.0), (0, -0.5), (1, 1.0), (2, -1.0 / 6.0)],
        ),
        SchemeKind::Compact(_) => unreachable!("compact schemes are implicit"),
    }
}

fn second_derivative_rows(n: usize, dx: f64) -> Rows {
    let inv = 1.0 / (dx * dx);
    (0..n)
        .map(|i| {
            if i == 0 {
                vec![(0, 2.0 * inv), (1, -5.0 * inv), (2, 4.0 * inv), (3, -inv)]
            } else if i == n - 1 {
                vec![(i, 2.0 * inv), (i - 1, -5.0 * inv), (i - 2, 4.0 * inv), (i - 3, -inv)]
            } else {
                vec![(i - 1, inv), (i, -2.0 * inv), (i + 1, inv)]
            }
        })
        .collect()
}

/// Applies a sparse linear operator along `axis` of `x`.
pub(crate) fn apply_rows(x: &Tensor, axis: usize, rows: Arc<Rows>) -> Result<Tensor> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    if rows.len() != n {
        return Err(Error::shape("stencil", format!("{} rows for axis of length {n}", rows.len())));
    }
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        let base = o * n * inner;
        for (i, row) in rows.iter().enumerate() {
            let dst = &mut out[base + i * inner..base + (i + 1) * inner];
            for &(j, c) in row {
                let s = &src[base + j * inner..base + (j + 1) * inner];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += c * v;
                }
            }
        }
    }
    let len = src.len();
    Tensor::from_op(OpKind::Stencil, x.shape().to_vec(), out, &[x], move |g, _| {
        let mut gx = vec![0.0; len];
        for o in 0..outer {
            let base = o * n * inner;
            for (i, row) in rows.iter().enumerate() {
                let gi = &g[base + i * inner..base + (i + 1) * inner];
                for &(j, c) in row {
                    let d = &mut gx[base + j * inner..base + (j + 1) * inner];
                    for (dv, gv) in d.iter_mut().zip(gi) {
                        *dv += c * gv;
                    }
                }
            }
        }
        vec![Some(gx)]
    })
}

/// First derivative along `scheme.axis`.
pub fn ddx(f: &GridField, scheme: &StencilScheme) -> Result<GridField> {
    let axis = f.check_axis("ddx", scheme.axis, scheme.min_points())?;
    let n = f.spatial_shape()[scheme.axis];
    let dx = f.spacing(scheme.axis);
    let values = match scheme.kind {
        SchemeKind::Compact(c) => {
            let c = if scheme.positive { c } else { c.mirrored() };
            compact_derivative(f.values(), axis, n, dx, &c)?
        }
        kind => apply_rows(f.values(), axis, Arc::new(first_derivative_rows(kind, scheme.positive, n, dx)))?,
    };
    f.with_values(values)
}

fn compact_derivative(x: &Tensor, axis: usize, n: usize, dx: f64, c: &CompactCoeffs) -> Result<Tensor> {
    let inv = 1.0 / dx;
    let reach = (0..5).filter(|&j| c.q[j] != 0.0).map(|j| (j as isize - 2).abs()).max().unwrap_or(0).max(1);
    let mut lower = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let ii = i as isize;
        if ii - reach >= 0 && ii + reach < n as isize {
            lower[i] = c.alpha_lower;
            upper[i] = c.alpha_upper;
            rows.push(
                (0..5)
                    .filter(|&j| c.q[j] != 0.0)
                    .map(|j| ((ii + j as isize - 2) as usize, c.q[j] * inv))
                    .collect(),
            );
        } else {
            diag[i] = 1.0;
            rows.push(one_sided(i, n, inv));
        }
    }
    let rhs = apply_rows(x, axis, Arc::new(rows))?;
    thomas_solve(&lower, &diag, &upper, &rhs, axis)
}

/// Second derivative along spatial axis `a`: 3-point central interior,
/// one-sided second-order at both ends.
pub fn d2dx(f: &GridField, a: usize) -> Result<GridField> {
    let axis = f.check_axis("d2dx", a, 4)?;
    let n = f.spatial_shape()[a];
    let dx = f.spacing(a);
    f.with_values(apply_rows(f.values(), axis, Arc::new(second_derivative_rows(n, dx)))?)
}

fn thomas_raw(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], shape: &[usize], axis: usize) -> Result<Vec<f64>> {
    let (outer, n, inner) = axis_split(shape, axis);
    // forward elimination coefficients shared by every line
    let mut cp = vec![0.0; n];
    let mut denom = vec![0.0; n];
    for i in 0..n {
        let d = diag[i] - if i > 0 { lower[i] * cp[i - 1] } else { 0.0 };
        if d == 0.0 || !d.is_finite() {
            return Err(Error::ZeroPivot(i));
        }
        denom[i] = d;
        cp[i] = if i + 1 < n { upper[i] / d } else { 0.0 };
    }
    let mut out = vec![0.0; rhs.len()];
    let mut dp = vec![0.0; n];
    for o in 0..outer {
        for t in 0..inner {
            let at = |i: usize| (o * n + i) * inner + t;
            for i in 0..n {
                let prev = if i > 0 { lower[i] * dp[i - 1] } else { 0.0 };
                dp[i] = (rhs[at(i)] - prev) / denom[i];
            }
            let mut x = dp[n - 1];
            out[at(n - 1)] = x;
            for i in (0..n - 1).rev() {
                x = dp[i] - cp[i] * x;
                out[at(i)] = x;
            }
        }
    }
    Ok(out)
}

/// Solves the tridiagonal system `lower[i]·x[i-1] + diag[i]·x[i] +
/// upper[i]·x[i+1] = rhs[i]` along `axis` of `rhs` (`lower[0]` and
/// `upper[n-1]` are ignored). Differentiable with respect to `rhs`.
pub fn thomas_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &Tensor, axis: usize) -> Result<Tensor> {
    crate::tensor::check_axis("thomas_solve", rhs.shape(), axis)?;
    let n = rhs.shape()[axis];
    if lower.len() != n || diag.len() != n || upper.len() != n {
        return Err(Error::shape("thomas_solve", format!("bands of length {}/{}/{} for n = {n}", lower.len(), diag.len(), upper.len())));
    }
    let shape = rhs.shape().to_vec();
    let data = thomas_raw(lower, diag, upper, rhs.data(), &shape, axis)?;
    // transposed system: sub-diagonal of Aᵀ is the shifted super-diagonal
    let mut lt = vec![0.0; n];
    let mut ut = vec![0.0; n];
    for i in 0..n {
        if i > 0 {
            lt[i] = upper[i - 1];
        }
        if i + 1 < n {
            ut[i] = lower[i + 1];
        }
    }
    let dt = diag.to_vec();
    // Aᵀ has the same pivots as A up to ordering; check it now so backward cannot fail.
    thomas_raw(&lt, &dt, &ut, &vec![0.0; n], &[n], 0)?;
    let bshape = shape.clone();
    Tensor::from_op(OpKind::Tridiagonal, shape, data, &[rhs], move |g, _| {
        vec![Some(thomas_raw(&lt, &dt, &ut, g, &bshape, axis).expect("pivots checked in forward"))]
    })
}

/// One classical RK4 step `y + dt/6·(k1 + 2k2 + 2k3 + k4)`.
pub fn rk4_step<F>(mut rhs: F, state: &GridField, dt: f64) -> Result<GridField>
where
    F: FnMut(&GridField) -> Result<GridField>,
{
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("rk4 time step must be a finite non-negative number, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let y = state.values();
    let stage = |k: &GridField, c: f64| state.with_values(y.add(&k.values().mul_scalar(c)?)?);
    let k1 = rhs(state)?;
    let k2 = rhs(&stage(&k1, 0.5 * dt)?)?;
    let k3 = rhs(&stage(&k2, 0.5 * dt)?)?;
    let k4 = rhs(&stage(&k3, dt)?)?;
    let sum = k1
        .values()
        .add(&k2.values().mul_scalar(2.0)?)?
        .add(&k3.values().mul_scalar(2.0)?)?
        .add(k4.values())?;
    state.with_values(y.add(&sum.mul_scalar(dt / 6.0)?)?)
}

/// Neighbour offsets of the central Laplacian on a grid of `dims`:
/// (flat stride, axis length, axis index, 1/Δ²).
fn laplacian_axes(f: &GridField) -> Vec<(usize, usize, f64)> {
    let dims = f.spatial_shape();
    let mut out = Vec::new();
    let mut stride = 1;
    for a in (0..dims.len()).rev() {
        let h = f.spacing(a);
        out.push((stride, dims[a], 1.0 / (h * h)));
        stride *= dims[a];
    }
    out.reverse();
    out
}

/// Σ of neighbour values weighted by 1/Δ², with zero outside the grid.
fn neighbour_sum(p: &[f64], axes: &[(usize, usize, f64)], dims_total: usize, out: &mut [f64]) {
    for (idx, o) in out.iter_mut().enumerate().take(dims_total) {
        let mut s = 0.0;
        for &(stride, len, w) in axes {
            let pos = (idx / stride) % len;
            if pos > 0 {
                s += w * p[idx - stride];
            }
            if pos + 1 < len {
                s += w * p[idx + stride];
            }
        }
        *o = s;
    }
}

/// One Point-Jacobi sweep for `∇²p = rhs` on points where `mask` is 1.
/// Points with mask 0 keep their input value and act as Dirichlet data;
/// neighbours beyond the grid count as zero. Returns the updated field and
/// the L∞ residual `|∇²p − rhs|` of the updated field over masked-in points.
pub fn jacobi_sweep(p: &GridField, rhs: &GridField, mask: &GridField) -> Result<(GridField, f64)> {
    if p.values().shape() != rhs.values().shape() || p.spatial_shape() != mask.values().shape() || p.extents() != rhs.extents() {
        return Err(Error::shape(
            "jacobi_sweep",
            format!("p {:?}, rhs {:?}, mask {:?}", p.values().shape(), rhs.values().shape(), mask.values().shape()),
        ));
    }
    let m: Arc<Vec<f64>> = Arc::new(mask.values().to_vec());
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("mask must be binary"));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyMask);
    }
    let axes = laplacian_axes(p);
    let d: f64 = axes.iter().map(|a| 2.0 * a.2).sum();
    let vol = m.len();
    let batches = p.values().numel() / vol;
    let pv = p.values().data();
    let rv = rhs.values().data();
    let mut out = vec![0.0; pv.len()];
    let mut nb = vec![0.0; vol];
    for b in 0..batches {
        let r = b * vol..(b + 1) * vol;
        neighbour_sum(&pv[r.clone()], &axes, vol, &mut nb);
        for i in 0..vol {
            let k = b * vol + i;
            out[k] = if m[i] == 1.0 { (nb[i] - rv[k]) / d } else { pv[k] };
        }
    }
    let mut residual = 0.0f64;
    for b in 0..batches {
        let r = b * vol..(b + 1) * vol;
        neighbour_sum(&out[r], &axes, vol, &mut nb);
        for i in 0..vol {
            if m[i] == 1.0 {
                let k = b * vol + i;
                residual = residual.max((nb[i] - d * out[k] - rv[k]).abs());
            }
        }
    }
    let shape = p.values().shape().to_vec();
    let values = Tensor::from_op(OpKind::JacobiSweep, shape, out, &[p.values(), rhs.values()], move |g, needs| {
        let mut gp = needs[0].then(|| vec![0.0; g.len()]);
        let mut gr = needs[1].then(|| vec![0.0; g.len()]);
        let mut scaled = vec![0.0; vol];
        let mut nb = vec![0.0; vol];
        for b in 0..batches {
            let gb = &g[b * vol..(b + 1) * vol];
            for i in 0..vol {
                scaled[i] = m[i] * gb[i] / d;
            }
            if let Some(gp) = &mut gp {
                // the neighbour operator is symmetric
                neighbour_sum(&scaled, &axes, vol, &mut nb);
                for i in 0..vol {
                    gp[b * vol + i] = nb[i] + (1.0 - m[i]) * gb[i];
                }
            }
            if let Some(gr) = &mut gr {
                for i in 0..vol {
                    gr[b * vol + i] = -scaled[i];
                }
            }
        }
        vec![gp, gr]
    })?;
    Ok((p.with_values(values)?, residual))
}
