//! In-memory datasets, normalization, resampling and the synthetic
//! generators standing in for CFD data.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::GridField;
use crate::pde::{advance_vte, ppe_rhs, iterate_poisson, PdeConfig, PdeModel, PdeParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Vorticity,
    U,
    V,
    W,
    Pressure,
    Mask,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Vorticity => "vorticity",
            Role::U => "u",
            Role::V => "v",
            Role::W => "w",
            Role::Pressure => "pressure",
            Role::Mask => "mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Divide by max |x| so values lie in [−1, 1].
    MaxAbs,
    /// Map [min, max] onto [0, 1].
    MinMax,
}

/// `normalized = (x − offset) / scale`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kind: NormKind,
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub fn identity(kind: NormKind) -> Self {
        Normalization { kind, offset: 0.0, scale: 1.0 }
    }

    /// Constants fitted over every value of every field given.
    pub fn fit<'a>(kind: NormKind, fields: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut lo, mut hi, mut amax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        let mut any = false;
        for f in fields {
            for &v in f {
                lo = lo.min(v);
                hi = hi.max(v);
                amax = amax.max(v.abs());
                any = true;
            }
        }
        if !any {
            return Self::identity(kind);
        }
        match kind {
            NormKind::MaxAbs if amax > 0.0 => Normalization { kind, offset: 0.0, scale: amax },
            NormKind::MaxAbs => Self::identity(kind),
            NormKind::MinMax if hi > lo => Normalization { kind, offset: lo, scale: hi - lo },
            NormKind::MinMax if lo == 0.0 => Self::identity(kind),
            NormKind::MinMax => Normalization { kind, offset: lo, scale: 1.0 },
        }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for v in x {
            *v = (*v - self.offset) / self.scale;
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        for v in x {
            *v = *v * self.scale + self.offset;
        }
    }
}

/// Normalizes every field with constants shared across all of them.
pub fn normalize(fields: &mut [Vec<f64>], kind: NormKind) -> Normalization {
    let n = Normalization::fit(kind, fields.iter().map(|f| f.as_slice()));
    for f in fields.iter_mut() {
        n.apply(f);
    }
    n
}

pub fn denormalize(fields: &mut [Vec<f64>], n: &Normalization) {
    for f in fields.iter_mut() {
        n.invert(f);
    }
}

/// Ordered snapshots on one uniform grid. Every frame carries one array per
/// entry of `roles`; the optional fluid mask is shared by all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
    /// Time between consecutive snapshots.
    pub dt: f64,
    pub roles: Vec<Role>,
    /// `frames[i][r]` holds role `roles[r]` of snapshot i, row-major.
    pub frames: Vec<Vec<Vec<f64>>>,
    /// Per-role normalization constants (same order as `roles`).
    pub norms: Vec<Normalization>,
    pub mask: Option<Vec<f64>>,
    /// Inflow waveform sampled at each snapshot (empty when not pulsatile).
    pub inflow: Vec<f64>,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn role_index(&self, role: Role) -> Result<usize> {
        self.roles
            .iter()
            .position(|&r| r == role)
            .ok_or_else(|| Error::invalid(format!("dataset has no {} field", role.name())))
    }

    pub fn field(&self, i: usize, role: Role) -> Result<&[f64]> {
        let r = self.role_index(role)?;
        self.frames
            .get(i)
            .map(|f| f[r].as_slice())
            .ok_or_else(|| Error::invalid(format!("snapshot {i} out of range ({} snapshots)", self.len())))
    }

    /// Snapshots `indices` of `role` stacked as (B, 1, S..).
    pub fn batch(&self, indices: &[usize], role: Role) -> Result<GridField> {
        let vol: usize = self.grid.iter().product();
        let mut data = Vec::with_capacity(indices.len() * vol);
        for &i in indices {
            data.extend_from_slice(self.field(i, role)?);
        }
        let mut shape = vec![indices.len(), 1];
        shape.extend_from_slice(&self.grid);
        GridField::new(Tensor::new(shape, data)?, self.extents.clone())
    }

    /// The fluid mask as a spatial-shaped field.
    pub fn mask_field(&self) -> Result<GridField> {
        let m = self.mask.as_ref().ok_or_else(|| Error::invalid("dataset has no mask"))?;
        GridField::new(Tensor::new(self.grid.clone(), m.clone())?, self.extents.clone())
    }

    /// All snapshots resampled onto `target` sizes. The mask is
    /// resampled and re-thresholded at 0.5.
    pub fn resampled(&self, target: &[usize]) -> Result<Dataset> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.iter().map(|v| resample_values(v, &self.grid, target)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mask = match &self.mask {
            Some(m) => Some(
                resample_values(m, &self.grid, target)?
                    .into_iter()
                    .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
                    .collect(),
            ),
            None => None,
        };
        Ok(Dataset { grid: target.to_vec(), frames, mask, ..self.clone() })
    }
}

/// Keys cubic convolution weights (a = −1/2) for fractional offset t.
fn cubic_weights(t: f64) -> [f64; 4] {
    let w = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (1.5 * x - 2.5) * x * x + 1.0
        } else if x < 2.0 {
            ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
        } else {
            0.0
        }
    };
    [w(1.0 + t), w(t), w(1.0 - t), w(2.0 - t)]
}

fn interp_axis(values: &[f64], shape: &[usize], axis: usize, m: usize) -> Vec<f64> {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * m * inner];
    for j in 0..m {
        // same extents: target point j sits at source position j(n−1)/(m−1)
        let s = j as f64 * (n - 1) as f64 / (m - 1) as f64;
        let i0 = (s.floor() as usize).min(n - 2);
        let t = s - i0 as f64;
        let taps: Vec<(usize, f64)> = if n < 4 {
            vec![(i0, 1.0 - t), (i0 + 1, t)]
        } else {
            // linear extrapolation of ghost points keeps linear fields exact
            let cw = cubic_weights(t);
            let mut taps = Vec::with_capacity(6);
            for (o, &w) in cw.iter().enumerate() {
                let i = i0 as isize - 1 + o as isize;
                if i < 0 {
                    taps.push((0, 2.0 * w));
                    taps.push((1, -w));
                } else if i as usize >= n {
                    taps.push((n - 1, 2.0 * w));
                    taps.push((n - 2, -w));
                } else {
                    taps.push((i as usize, w));
                }
            }
            taps
        };
        for o in 0..outer {
            for k in 0..inner {
                out[(o * m + j) * inner + k] = taps.iter().map(|&(i, w)| w * values[(o * n + i) * inner + k]).sum();
            }
        }
    }
    out
}

fn resample_values(values: &[f64], grid: &[usize], target: &[usize]) -> Result<Vec<f64>> {
    if target.len() != grid.len() || target.iter().any(|&m| m < 2) {
        return Err(Error::invalid(format!("cannot resample {grid:?} onto {target:?}")));
    }
    let lead = values.len() / grid.iter().product::<usize>();
    let mut shape = vec![lead];
    shape.extend_from_slice(grid);
    let mut v = values.to_vec();
    for (a, &m) in target.iter().enumerate() {
        if shape[a + 1] != m {
            v = interp_axis(&v, &shape, a + 1, m);
            shape[a + 1] = m;
        }
    }
    Ok(v)
}

/// Separable cubic interpolation of the trailing spatial axes onto `target`
/// sizes, keeping extents. Leading axes are carried along.
pub fn resample(field: &GridField, target: &[usize]) -> Result<GridField> {
    let grid = field.spatial_shape().to_vec();
    let v = resample_values(field.values().data(), &grid, target)?;
    let mut shape = field.values().shape()[..field.values().ndim() - grid.len()].to_vec();
    shape.extend_from_slice(target);
    field.with_values(Tensor::new(shape, v)?)
}

/// Periodic inflow profile `mean + Σ_k amp_k sin(2πk t/period + phase_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Waveform {
    pub mean: f64,
    /// (amplitude, phase) of harmonic k = 1, 2, ...
    pub harmonics: Vec<(f64, f64)>,
    pub period: f64,
}

impl Default for Waveform {
    /// Two-harmonic pulsatile profile.
    fn default() -> Self {
        Waveform { mean: 1.0, harmonics: vec![(0.5, 0.0), (0.25, 0.8)], period: 1.0 }
    }
}

impl Waveform {
    pub fn constant(value: f64) -> Self {
        Waveform { mean: value, harmonics: Vec::new(), period: 1.0 }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.harmonics
            .iter()
            .enumerate()
            .map(|(k, &(a, ph))| a * (2.0 * PI * (k + 1) as f64 * t / self.period + ph).sin())
            .sum::<f64>()
            + self.mean
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::invalid(format!("waveform period must be positive, got {}", self.period)));
        }
        Ok(())
    }
}

/// A train of staggered, counter-rotating Gaussian vortices advected through
/// the window by the nonlinear vorticity transport equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VortexStreetConfig {
    pub n: usize,
    pub domain: [(f64, f64); 2],
    pub re: f64,
    pub n_snapshots: usize,
    pub dt: f64,
    /// Mean advection velocity V.
    pub velocity: f64,
    /// Streamwise distance between same-sign vortices.
    pub wavelength: f64,
    /// Cross-stream distance between the two rows.
    pub row_gap: f64,
    /// Gaussian core radius.
    pub core: f64,
    /// Amplitude of the cross-stream wake oscillation, relative to V.
    pub wake: f64,
}

impl Default for VortexStreetConfig {
    fn default() -> Self {
        VortexStreetConfig {
            n: 64,
            domain: [(0.0, 2.0), (0.0, 1.0)],
            re: 200.0,
            n_snapshots: 50,
            dt: 0.01,
            velocity: 1.0,
            wavelength: 0.5,
            row_gap: 0.3,
            core: 0.06,
            wake: 0.1,
        }
    }
}

fn grid_field_2d(nx: usize, ny: usize, ext: [(f64, f64); 2], f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
    let hx = (ext[0].1 - ext[0].0) / (nx - 1) as f64;
    let hy = (ext[1].1 - ext[1].0) / (ny - 1) as f64;
    let t = Tensor::from_fn(&[nx, ny], |i| f(ext[0].0 + i[0] as f64 * hx, ext[1].0 + i[1] as f64 * hy));
    GridField::new(t, ext.to_vec())
}

fn crop_x(values: &[f64], ny: usize, start: usize, nx: usize) -> Vec<f64> {
    values[start * ny..(start + nx) * ny].to_vec()
}

pub fn gen_vortex_street(cfg: &VortexStreetConfig) -> Result<Dataset> {
    let n = cfg.n;
    if n < 8 {
        return Err(Error::invalid(format!("grid too small: {n}")));
    }
    if !(cfg.re > 0.0) || !(cfg.dt > 0.0) || !(cfg.core > 0.0) || !(cfg.wavelength > 0.0) {
        return Err(Error::invalid("re, dt, core and wavelength must be positive"));
    }
    let [(x0, x1), (y0, y1)] = cfg.domain;
    let hx = (x1 - x0) / (n - 1) as f64;
    let cfl = cfg.dt * cfg.velocity.abs() / hx;
    if cfl > 0.8 {
        return Err(Error::invalid(format!("CFL number {cfl:.3} exceeds 0.8 (dt·V/Δx)")));
    }
    let norms = vec![Normalization::identity(NormKind::MaxAbs)];
    let mut ds = Dataset {
        grid: vec![n, n],
        extents: cfg.domain.to_vec(),
        dt: cfg.dt,
        roles: vec![Role::Vorticity],
        frames: Vec::new(),
        norms,
        mask: None,
        inflow: Vec::new(),
        provenance: format!("vortex_street n={n} re={} dt={} V={}", cfg.re, cfg.dt, cfg.velocity),
    };
    if cfg.n_snapshots == 0 {
        return Ok(ds);
    }
    // Integrate on a domain extended upstream so that the open inflow edge
    // never reaches the window during the run.
    let travel = cfg.velocity.abs() * cfg.dt * cfg.n_snapshots as f64;
    let pad = ((travel + 4.0 * cfg.core) / hx).ceil() as usize + 4;
    let (pad_lo, pad_hi) = if cfg.velocity >= 0.0 { (pad, 4) } else { (4, pad) };
    let nx = n + pad_lo + pad_hi;
    let ext = [(x0 - pad_lo as f64 * hx, x1 + pad_hi as f64 * hx), (y0, y1)];
    let yc = 0.5 * (y0 + y1);
    let (lam, gap, core) = (cfg.wavelength, cfg.row_gap, cfg.core);
    let omega0 = grid_field_2d(nx, n, ext, |x, y| {
        let k0 = ((ext[0].0 - x0) / (0.5 * lam)).floor() as i64 - 2;
        let k1 = ((ext[0].1 - x0) / (0.5 * lam)).ceil() as i64 + 2;
        (k0..=k1)
            .map(|k| {
                let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let cx = x0 + 0.25 * lam + 0.5 * lam * k as f64;
                let cy = yc + sign * 0.5 * gap;
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                sign * (-r2 / (2.0 * core * core)).exp()
            })
            .sum()
    })?;
    let v_amp = cfg.wake * cfg.velocity;
    let u = grid_field_2d(nx, n, ext, |_, _| cfg.velocity)?;
    let v = grid_field_2d(nx, n, ext, |x, y| {
        let env = (-((y - yc) / (gap + 2.0 * core)).powi(2)).exp();
        v_amp * (2.0 * PI * x / lam).sin() * env
    })?;
    let substeps = ((cfl / 0.4).ceil() as usize).max(1);
    let pde = PdeConfig {
        nu: 1.0 / cfg.re,
        v: cfg.velocity,
        dt: cfg.dt / substeps as f64,
        n_steps: substeps,
        ..PdeConfig::vte(PdeModel::VteNonlinear)
    };
    let params = PdeParams::from_config(&pde);
    let mut omega = omega0;
    let mut raw = Vec::with_capacity(cfg.n_snapshots);
    for s in 0..cfg.n_snapshots {
        if s > 0 {
            omega = advance_vte(&omega, &pde, &params, Some((&u, &v)))?;
        }
        raw.push(crop_x(omega.values().data(), n, pad_lo, n));
    }
    let norm = normalize(&mut raw, NormKind::MaxAbs);
    ds.frames = raw.into_iter().map(|f| vec![f]).collect();
    ds.norms = vec![norm];
    Ok(ds)
}

/// Two counter-rotating shear-layer lobes downstream of a throat whose
/// strength and length follow a periodic inflow waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StenosisConfig {
    pub n: usize,
    pub domain: [(f64, f64); 2],
    pub waveform: Waveform,
    pub n_snapshots: usize,
    pub snapshots_per_cycle: usize,
}

impl Default for StenosisConfig {
    fn default() -> Self {
        StenosisConfig {
            n: 64,
            domain: [(0.0, 4.0), (-1.0, 1.0)],
            waveform: Waveform::default(),
            n_snapshots: 100,
            snapshots_per_cycle: 100,
        }
    }
}

pub fn gen_stenosis_like(cfg: &StenosisConfig) -> Result<Dataset> {
    cfg.waveform.validate()?;
    if cfg.n < 8 || cfg.snapshots_per_cycle == 0 {
        return Err(Error::invalid("stenosis generator needs n >= 8 and snapshots_per_cycle >= 1"));
    }
    let [(x0, x1), (y0, y1)] = cfg.domain;
    let dt = cfg.waveform.period / cfg.snapshots_per_cycle as f64;
    let qmax = (0..cfg.snapshots_per_cycle)
        .map(|s| cfg.waveform.at(s as f64 * dt).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let (len, wid) = (x1 - x0, y1 - y0);
    let throat = x0 + 0.2 * len;
    let offset = 0.18 * wid;
    let mut raw = Vec::with_capacity(cfg.n_snapshots);
    let mut inflow = Vec::with_capacity(cfg.n_snapshots);
    for s in 0..cfg.n_snapshots {
        let q = cfg.waveform.at(s as f64 * dt);
        inflow.push(q);
        // jet length grows with the instantaneous flow rate
        let reach = 0.15 * len + 0.35 * len * (q.abs() / qmax);
        let f = grid_field_2d(cfg.n, cfg.n, cfg.domain, |x, y| {
            let xi = (x - throat) / reach;
            let along = if xi < 0.0 { (-xi * xi * 40.0).exp() } else { (-xi * xi).exp() };
            let lobe = |yc: f64| (-((y - yc) / (0.08 * wid)).powi(2)).exp();
            q * along * (lobe(0.5 * (y0 + y1) + offset) - lobe(0.5 * (y0 + y1) - offset))
        })?;
        raw.push(f.values().to_vec());
    }
    let norm = normalize(&mut raw, NormKind::MaxAbs);
    Ok(Dataset {
        grid: vec![cfg.n, cfg.n],
        extents: cfg.domain.to_vec(),
        dt,
        roles: vec![Role::Vorticity],
        frames: raw.into_iter().map(|f| vec![f]).collect(),
        norms: vec![norm],
        mask: None,
        inflow,
        provenance: format!("stenosis_like n={} per_cycle={}", cfg.n, cfg.snapshots_per_cycle),
    })
}

/// Pulsatile flow through a circular channel along x with a spherical
/// obstruction; pressure from the full-resolution pressure Poisson solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Channel3dConfig {
    pub n: usize,
    pub waveform: Waveform,
    pub n_snapshots: usize,
    pub snapshots_per_cycle: usize,
    /// Channel radius in the unit cube.
    pub radius: f64,
    pub obstruction: f64,
    pub rho: f64,
    pub jacobi_tol: f64,
    pub jacobi_max_iter: usize,
}

impl Default for Channel3dConfig {
    fn default() -> Self {
        Channel3dConfig {
            n: 32,
            waveform: Waveform::default(),
            n_snapshots: 20,
            snapshots_per_cycle: 20,
            radius: 0.42,
            obstruction: 0.16,
            rho: 1.06,
            jacobi_tol: 1e-7,
            jacobi_max_iter: 20_000,
        }
    }
}

/// Raw (unnormalized) channel fields of one snapshot at unit flow rate.
pub struct ChannelBase {
    pub mask: GridField,
    pub velocity: [GridField; 3],
    pub pressure: GridField,
    pub residuals: Vec<f64>,
}

/// Geometry, unit-rate velocity and its pressure. Velocity scales with the
/// flow rate q and the quadratic right-hand side with q², so every snapshot
/// is a rescaling of this solve.
pub fn channel3d_base(cfg: &Channel3dConfig) -> Result<ChannelBase> {
    let n = cfg.n;
    if n < 5 {
        return Err(Error::invalid(format!("grid too small: {n}")));
    }
    if !(cfg.radius > 0.0 && cfg.radius < 0.5) {
        return Err(Error::invalid(format!("channel radius {} must lie in (0, 0.5)", cfg.radius)));
    }
    if !(cfg.obstruction >= 0.0) || cfg.obstruction >= cfg.radius {
        return Err(Error::invalid(format!(
            "obstruction radius {} must be below the channel radius {}",
            cfg.obstruction, cfg.radius
        )));
    }
    let h = 1.0 / (n - 1) as f64;
    let (r, a) = (cfg.radius, cfg.obstruction);
    let c = 0.5;
    let shape = [1, 1, n, n, n];
    let inside = |x: f64, y: f64, z: f64| {
        let rho2 = (y - c).powi(2) + (z - c).powi(2);
        let d2 = (x - c).powi(2) + rho2;
        rho2 < r * r && d2 > a * a
    };
    // Potential flow past a sphere of radius a, shaped by a Poiseuille envelope.
    let vel = |x: f64, y: f64, z: f64| -> [f64; 3] {
        if !inside(x, y, z) {
            return [0.0; 3];
        }
        let (dx, dy, dz) = (x - c, y - c, z - c);
        let env = 1.0 - (dy * dy + dz * dz) / (r * r);
        let r2 = dx * dx + dy * dy + dz * dz;
        let (a3, r3, r5) = (a.powi(3), r2 * r2.sqrt(), r2 * r2 * r2.sqrt());
        let u = 1.0 + a3 / (2.0 * r3) - 1.5 * a3 * dx * dx / r5;
        [env * u, -env * 1.5 * a3 * dx * dy / r5, -env * 1.5 * a3 * dx * dz / r5]
    };
    let ext = vec![(0.0, 1.0); 3];
    let at = |i: &[usize]| (i[2] as f64 * h, i[3] as f64 * h, i[4] as f64 * h);
    let mk = |k: usize| -> Result<GridField> {
        GridField::new(
            Tensor::from_fn(&shape, |i| {
                let (x, y, z) = at(i);
                vel(x, y, z)[k]
            }),
            ext.clone(),
        )
    };
    let velocity = [mk(0)?, mk(1)?, mk(2)?];
    let mask = GridField::new(
        Tensor::from_fn(&[n, n, n], |i| {
            let (x, y, z) = (i[0] as f64 * h, i[1] as f64 * h, i[2] as f64 * h);
            if inside(x, y, z) {
                1.0
            } else {
                0.0
            }
        }),
        ext.clone(),
    )?;
    let pde = PdeConfig { rho: cfg.rho, ..PdeConfig::ppe() };
    let params = PdeParams::from_config(&pde);
    let rhs = ppe_rhs(&velocity[0], &velocity[1], &velocity[2], &mask, &pde, &params)?;
    let sol = iterate_poisson(&rhs, &mask, cfg.jacobi_tol, cfg.jacobi_max_iter)?;
    Ok(ChannelBase { mask, velocity, pressure: sol.pressure, residuals: sol.residuals })
}

pub fn gen_channel3d(cfg: &Channel3dConfig) -> Result<Dataset> {
    cfg.waveform.validate()?;
    if cfg.snapshots_per_cycle == 0 {
        return Err(Error::invalid("snapshots_per_cycle must be >= 1"));
    }
    let base = channel3d_base(cfg)?;
    let dt = cfg.waveform.period / cfg.snapshots_per_cycle as f64;
    let mut series: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
    let mut inflow = Vec::new();
    for s in 0..cfg.n_snapshots {
        let q = cfg.waveform.at(s as f64 * dt);
        inflow.push(q);
        for k in 0..3 {
            series[k].push(base.velocity[k].values().data().iter().map(|v| v * q).collect());
        }
        series[3].push(base.pressure.values().data().iter().map(|p| p * q * q).collect());
    }
    let mask = base.mask.values().to_vec();
    let mut norms = Vec::new();
    for fields in series.iter_mut() {
        // fit on fluid points only, ghost points are zero afterwards
        let fluid: Vec<Vec<f64>> = fields
            .iter()
            .map(|f| f.iter().zip(&mask).filter(|(_, &m)| m == 1.0).map(|(v, _)| *v).collect())
            .collect();
        let norm = Normalization::fit(NormKind::MinMax, fluid.iter().map(|f| f.as_slice()));
        for f in fields.iter_mut() {
            norm.apply(f);
            for (v, &m) in f.iter_mut().zip(&mask) {
                if m == 0.0 {
                    *v = 0.0;
                }
            }
        }
        norms.push(norm);
    }
    let roles = vec![Role::U, Role::V, Role::W, Role::Pressure];
    let frames = (0..cfg.n_snapshots).map(|s| series.iter().map(|f| f[s].clone()).collect()).collect();
    Ok(Dataset {
        grid: vec![cfg.n; 3],
        extents: vec![(0.0, 1.0); 3],
        dt,
        roles,
        frames,
        norms,
        mask: Some(mask),
        inflow,
        provenance: format!("channel3d n={} radius={} obstruction={}", cfg.n, cfg.radius, cfg.obstruction),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_contracts() {
        let mut f = vec![vec![1.0, -5.0, 2.5]];
        let n = normalize(&mut f, NormKind::MaxAbs);
        assert_eq!(f[0], vec![0.2, -1.0, 0.5]);
        denormalize(&mut f, &n);
        assert_eq!(f[0], vec![1.0, -5.0, 2.5]);
        let mut g = vec![vec![2.0, 6.0, 10.0]];
        normalize(&mut g, NormKind::MinMax);
        assert_eq!(g[0], vec![0.0, 0.5, 1.0]);
        let mut z = vec![vec![0.0; 4]];
        let n = normalize(&mut z, NormKind::MaxAbs);
        assert_eq!((n.offset, n.scale), (0.0, 1.0));
        assert_eq!(z[0], vec![0.0; 4]);
    }

    #[test]
    fn resample_same_size_and_bilinear_exactness() {
        let f = grid_field_2d(9, 7, [(0.0, 2.0), (-1.0, 1.0)], |x, y| 3.0 * x - 2.0 * y + 0.5).unwrap();
        let same = resample(&f, &[9, 7]).unwrap();
        assert_eq!(same.values().data(), f.values().data());
        let g = resample(&f, &[13, 4]).unwrap();
        assert_eq!(g.extents(), f.extents());
        for i in 0..13 {
            for j in 0..4 {
                let (x, y) = (g.coord(0, i), g.coord(1, j));
                assert!((g.values().data()[i * 4 + j] - (3.0 * x - 2.0 * y + 0.5)).abs() < 1e-12);
            }
        }
        assert!(resample(&f, &[1, 4]).is_err());
    }

    #[test]
    fn resample_round_trip_error() {
        for k in [1.0, 4.0, 8.0] {
            let f = grid_field_2d(128, 128, [(0.0, 1.0), (0.0, 1.0)], |x, y| (2.0 * PI * k * x).sin() * (2.0 * PI * k * y).cos()).unwrap();
            let back = resample(&resample(&f, &[64, 64]).unwrap(), &[128, 128]).unwrap();
            let num: f64 = f.values().data().iter().zip(back.values().data()).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = f.values().data().iter().map(|a| a * a).sum();
            assert!((num / den).sqrt() < 0.02, "k={k}: {}", (num / den).sqrt());
        }
    }

    #[test]
    fn vortex_street_contracts() {
        let empty = gen_vortex_street(&VortexStreetConfig { n_snapshots: 0, ..Default::default() }).unwrap();
        assert!(empty.is_empty());
        let cfg = VortexStreetConfig { n_snapshots: 6, ..Default::default() };
        let ds = gen_vortex_street(&cfg).unwrap();
        assert_eq!(ds.len(), 6);
        let m = ds.frames.iter().flat_map(|f| f[0].iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((m - 1.0).abs() < 1e-12);
        let fast = VortexStreetConfig { dt: 0.03, ..cfg };
        assert!(gen_vortex_street(&fast).is_err());
    }

    /// Integer shift along x maximizing the correlation of the centerline rows.
    fn xcorr_shift(a: &[f64], b: &[f64], n: usize, max: usize) -> usize {
        let row = |f: &[f64], j: usize| (0..n).map(|i| f[i * n + j]).collect::<Vec<_>>();
        (0..=max)
            .max_by(|&s, &t| {
                let score = |s: usize| -> f64 {
                    (0..n).map(|j| {
                        let (ra, rb) = (row(a, j), row(b, j));
                        (0..n - s).map(|i| ra[i] * rb[i + s]).sum::<f64>()
                    }).sum()
                };
                score(s).partial_cmp(&score(t)).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn vortex_train_advects_at_v() {
        let cfg = VortexStreetConfig { n: 64, n_snapshots: 9, dt: 0.025, ..Default::default() };
        let ds = gen_vortex_street(&cfg).unwrap();
        let h = (cfg.domain[0].1 - cfg.domain[0].0) / 63.0;
        let per_step = (cfg.velocity * cfg.dt / h).round() as i64;
        for s in 0..8 {
            let shift = xcorr_shift(&ds.frames[s][0], &ds.frames[s + 1][0], 64, 6) as i64;
            assert!((shift - per_step).abs() <= 1, "step {s}: shift {shift}");
        }
        let total = (8.0 * cfg.velocity * cfg.dt / h).round() as i64;
        let shift = xcorr_shift(&ds.frames[0][0], &ds.frames[8][0], 64, 12) as i64;
        assert!((shift - total).abs() <= 1, "shift {shift} vs {total}");
    }

    #[test]
    fn stenosis_contracts() {
        let flat = StenosisConfig { waveform: Waveform::constant(1.0), n_snapshots: 5, n: 16, ..Default::default() };
        let ds = gen_stenosis_like(&flat).unwrap();
        for f in &ds.frames {
            assert_eq!(f[0], ds.frames[0][0]);
        }
        let ds = gen_stenosis_like(&StenosisConfig { n: 32, ..Default::default() }).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.inflow.len(), 100);
        // peak lobe amplitude follows the waveform
        let amp: Vec<f64> = ds.frames.iter().map(|f| f[0].iter().fold(f64::MIN, |a, &v| a.max(v))).collect();
        let r = pearson(&amp, &ds.inflow);
        assert!(r > 0.99, "r = {r}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn channel_contracts() {
        let cfg = Channel3dConfig { n: 12, n_snapshots: 3, jacobi_tol: 1e-9, ..Default::default() };
        let ds = gen_channel3d(&cfg).unwrap();
        let mask = ds.mask.as_ref().unwrap();
        let fluid = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!(fluid > 0.0 && fluid < 1.0);
        for f in &ds.frames {
            for field in f {
                for (v, m) in field.iter().zip(mask) {
                    if *m == 0.0 {
                        assert_eq!(*v, 0.0);
                    }
                    assert!((-1e-12..=1.0 + 1e-12).contains(v));
                }
            }
        }
        let base = channel3d_base(&cfg).unwrap();
        assert!(*base.residuals.last().unwrap() < 1e-6);
        let zero = Channel3dConfig { waveform: Waveform::constant(0.0), ..cfg.clone() };
        let ds = gen_channel3d(&zero).unwrap();
        assert!(ds.frames.iter().flatten().flatten().all(|&v| v == 0.0));
        let bad = Channel3dConfig { obstruction: 0.5, ..cfg };
        assert!(gen_channel3d(&bad).is_err());
    }
}
