//! PDE models solved on latent grid fields: vorticity transport variants
//! (time-marched with RK4) and the 3D pressure Poisson equation (Point-Jacobi).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{d2dx, ddx, jacobi_sweep, rk4_step, CompactCoeffs, GridField, SchemeKind, StencilScheme};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeModel {
    VteNonlinear,
    #[serde(rename = "vte_linear_2d")]
    VteLinear2d,
    #[serde(rename = "vte_stokes_2d")]
    VteStokes2d,
    #[serde(rename = "vte_inviscid_2d")]
    VteInviscid2d,
    #[serde(rename = "vte_linear_1d_x")]
    VteLinear1dX,
    #[serde(rename = "vte_linear_1d_y")]
    VteLinear1dY,
    #[serde(rename = "ppe_3d")]
    Ppe3d,
}

impl PdeModel {
    pub fn is_vte(self) -> bool {
        self != PdeModel::Ppe3d
    }

    /// Spatial axis a 1D model acts along, if it is one.
    pub fn axis_1d(self) -> Option<usize> {
        match self {
            PdeModel::VteLinear1dX => Some(0),
            PdeModel::VteLinear1dY => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeConfig {
    pub model: PdeModel,
    pub nu: f64,
    pub v: f64,
    pub rho: f64,
    pub dt: f64,
    /// RK4 steps of size `dt` per latent advance.
    pub n_steps: usize,
    pub jacobi_tol: f64,
    pub jacobi_max_iter: usize,
    /// Advance fails when max |ω| grows by more than this factor.
    pub instability_factor: f64,
    /// PPE only: skip the Jacobi iteration and use the masked right-hand side.
    pub ppe_rhs_only: bool,
    /// Implicit first-derivative scheme for advection; explicit upwind when absent.
    pub compact: Option<CompactCoeffs>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            model: PdeModel::VteLinear2d,
            nu: 0.01,
            v: 1.0,
            rho: 1.06,
            dt: 0.01,
            n_steps: 1,
            jacobi_tol: 1e-6,
            jacobi_max_iter: 150,
            instability_factor: 1e3,
            ppe_rhs_only: false,
            compact: None,
        }
    }
}

impl PdeConfig {
    pub fn vte(model: PdeModel) -> Self {
        PdeConfig { model, ..Default::default() }
    }

    pub fn ppe() -> Self {
        PdeConfig { model: PdeModel::Ppe3d, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0) {
            return Err(Error::invalid(format!("nu must be >= 0, got {}", self.nu)));
        }
        if !self.v.is_finite() || !self.rho.is_finite() {
            return Err(Error::invalid("V and rho must be finite"));
        }
        if self.model.is_vte() {
            if !(self.dt >= 0.0) || !self.dt.is_finite() {
                return Err(Error::invalid(format!("dt must be finite and >= 0, got {}", self.dt)));
            }
            if self.n_steps == 0 {
                return Err(Error::invalid("n_steps must be >= 1"));
            }
            if !(self.instability_factor > 1.0) {
                return Err(Error::invalid("instability_factor must exceed 1"));
            }
        } else if !(self.jacobi_tol > 0.0) || self.jacobi_max_iter == 0 {
            return Err(Error::invalid("PPE needs jacobi_tol > 0 and jacobi_max_iter >= 1"));
        }
        Ok(())
    }
}

/// Physical parameters as scalar tensors so that gradients with respect to
/// them can be taken.
#[derive(Debug, Clone)]
pub struct PdeParams {
    pub nu: Tensor,
    pub v: Tensor,
    pub rho: Tensor,
}

impl PdeParams {
    pub fn from_config(cfg: &PdeConfig) -> Self {
        PdeParams {
            nu: Tensor::scalar(cfg.nu),
            v: Tensor::scalar(cfg.v),
            rho: Tensor::scalar(cfg.rho),
        }
    }

    /// Parameters registered as leaves on `tape`.
    pub fn leaves(cfg: &PdeConfig, tape: &Tape) -> Self {
        let p = Self::from_config(cfg);
        PdeParams {
            nu: tape.leaf(&p.nu),
            v: tape.leaf(&p.v),
            rho: tape.leaf(&p.rho),
        }
    }

    fn v_sign(&self) -> f64 {
        let v = self.v.item();
        if v == 0.0 {
            0.0
        } else {
            v.signum()
        }
    }
}

fn advection_scheme(cfg: &PdeConfig, axis: usize, sign: f64) -> StencilScheme {
    match cfg.compact {
        Some(c) if sign != 0.0 => StencilScheme {
            kind: SchemeKind::Compact(c),
            axis,
            positive: sign > 0.0,
        },
        _ => StencilScheme::upwind(axis, sign),
    }
}

/// ∂f/∂x_axis upwinded point by point by the sign of `vel`.
fn upwind_by_field(f: &GridField, vel: &Tensor, axis: usize, cfg: &PdeConfig) -> Result<Tensor> {
    let plus = ddx(f, &advection_scheme(cfg, axis, 1.0))?.into_values();
    let minus = ddx(f, &advection_scheme(cfg, axis, -1.0))?.into_values();
    let m = Tensor::new(
        vel.shape().to_vec(),
        vel.data().iter().map(|&u| if u >= 0.0 { 1.0 } else { 0.0 }).collect(),
    )?;
    let not_m = m.neg()?.add_scalar(1.0)?;
    plus.mul(&m)?.add(&minus.mul(&not_m)?)
}

fn laplacian(f: &GridField, axes: &[usize]) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for &a in axes {
        let d = d2dx(f, a)?.into_values();
        acc = Some(match acc {
            None => d,
            Some(s) => s.add(&d)?,
        });
    }
    acc.ok_or_else(|| Error::invalid("laplacian over no axes"))
}

fn first_derivative_sum(f: &GridField, axes: &[usize], cfg: &PdeConfig, sign: f64) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for &a in axes {
        let d = ddx(f, &advection_scheme(cfg, a, sign))?.into_values();
        acc = Some(match acc {
            None => d,
            Some(s) => s.add(&d)?,
        });
    }
    acc.ok_or_else(|| Error::invalid("derivative over no axes"))
}

/// Axes a VTE model acts on for a field with `n_spatial` spatial axes.
fn model_axes(model: PdeModel, n_spatial: usize) -> Result<Vec<usize>> {
    match (model, n_spatial) {
        (PdeModel::VteLinear1dX | PdeModel::VteLinear1dY, 1) => Ok(vec![0]),
        (PdeModel::VteLinear1dX | PdeModel::VteLinear1dY, 2) => Ok(vec![model.axis_1d().unwrap()]),
        (PdeModel::Ppe3d, _) => Err(Error::invalid("PPE is not a time-marching model")),
        (_, 2) => Ok(vec![0, 1]),
        (m, n) => Err(Error::shape("vte_rhs", format!("{m:?} needs a 2D field, got {n}D"))),
    }
}

/// Velocity field pair for the nonlinear model.
pub type Velocity<'a> = (&'a GridField, &'a GridField);

/// Time derivative ∂ω/∂t of the selected vorticity transport model.
pub fn vte_rhs(omega: &GridField, cfg: &PdeConfig, params: &PdeParams, vel: Option<Velocity>) -> Result<GridField> {
    let axes = model_axes(cfg.model, omega.n_spatial())?;
    let diffusion = || laplacian(omega, &axes)?.mul(&params.nu);
    let linear_advection = || first_derivative_sum(omega, &axes, cfg, params.v_sign())?.mul(&params.v);
    let values = match cfg.model {
        PdeModel::VteNonlinear => {
            let (u, v) = vel.ok_or_else(|| Error::invalid("nonlinear VTE needs a velocity field"))?;
            if u.spatial_shape() != omega.spatial_shape() || v.spatial_shape() != omega.spatial_shape() {
                return Err(Error::shape("vte_rhs", "velocity grid differs from vorticity grid"));
            }
            let adv_x = upwind_by_field(omega, u.values(), 0, cfg)?.mul(u.values())?;
            let adv_y = upwind_by_field(omega, v.values(), 1, cfg)?.mul(v.values())?;
            diffusion()?.sub(&adv_x.add(&adv_y)?)?
        }
        PdeModel::VteStokes2d => diffusion()?,
        PdeModel::VteInviscid2d => linear_advection()?.neg()?,
        PdeModel::VteLinear2d | PdeModel::VteLinear1dX | PdeModel::VteLinear1dY => {
            diffusion()?.sub(&linear_advection()?)?
        }
        PdeModel::Ppe3d => unreachable!("rejected by model_axes"),
    };
    omega.with_values(values)
}

/// `n_steps` RK4 steps of size `dt`, entirely on the tape.
pub fn advance_vte(omega: &GridField, cfg: &PdeConfig, params: &PdeParams, vel: Option<Velocity>) -> Result<GridField> {
    if !cfg.model.is_vte() {
        return Err(Error::invalid("advance_vte needs a VTE model"));
    }
    cfg.validate()?;
    let before = omega.values().max_abs();
    let mut state = omega.clone();
    for _ in 0..cfg.n_steps {
        state = rk4_step(|w| vte_rhs(w, cfg, params, vel), &state, cfg.dt)?;
    }
    let after = state.values().max_abs();
    if after > cfg.instability_factor * before.max(f64::MIN_POSITIVE) {
        return Err(Error::Unstable { before, after });
    }
    Ok(state)
}

fn check_mask(mask: &GridField) -> Result<()> {
    if mask.values().data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid("geometry mask must be binary"));
    }
    if mask.values().data().iter().all(|&m| m == 0.0) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Masked right-hand side −ρ[(u_x)² + (v_y)² + (w_z)² + 2(u_y v_x + u_z w_x + v_z w_y)].
/// Each derivative along axis a is upwinded by the local velocity component a.
pub fn ppe_rhs(u: &GridField, v: &GridField, w: &GridField, mask: &GridField, cfg: &PdeConfig, params: &PdeParams) -> Result<GridField> {
    for f in [u, v, w] {
        if f.n_spatial() != 3 {
            return Err(Error::shape("ppe", format!("expected 3D fields, got {}D", f.n_spatial())));
        }
        if f.values().shape() != u.values().shape() {
            return Err(Error::shape("ppe", "velocity components differ in shape"));
        }
    }
    if mask.values().shape() != u.spatial_shape() {
        return Err(Error::shape("ppe", format!("mask {:?} vs grid {:?}", mask.values().shape(), u.spatial_shape())));
    }
    check_mask(mask)?;
    let comps = [u, v, w];
    let d = |f: &GridField, axis: usize| upwind_by_field(f, comps[axis].values(), axis, cfg);
    let ux = d(u, 0)?;
    let vy = d(v, 1)?;
    let wz = d(w, 2)?;
    let cross = d(u, 1)?
        .mul(&d(v, 0)?)?
        .add(&d(u, 2)?.mul(&d(w, 0)?)?)?
        .add(&d(v, 2)?.mul(&d(w, 1)?)?)?;
    let s = ux.square()?.add(&vy.square()?)?.add(&wz.square()?)?.add(&cross.mul_scalar(2.0)?)?;
    let rhs = s.mul(&params.rho)?.neg()?.mul(mask.values())?;
    u.with_values(rhs)
}

/// Result of a Point-Jacobi pressure solve.
#[derive(Debug, Clone)]
pub struct PpeSolution {
    pub pressure: GridField,
    /// L∞ residual after each sweep.
    pub residuals: Vec<f64>,
}

/// Solves ∇²p = rhs from p = 0 by Jacobi sweeps until the residual drops
/// below `jacobi_tol` or `jacobi_max_iter` sweeps have run.
pub fn solve_ppe(u: &GridField, v: &GridField, w: &GridField, mask: &GridField, cfg: &PdeConfig, params: &PdeParams) -> Result<PpeSolution> {
    cfg.validate()?;
    let rhs = ppe_rhs(u, v, w, mask, cfg, params)?;
    iterate_poisson(&rhs, mask, cfg.jacobi_tol, cfg.jacobi_max_iter)
}

/// Jacobi iteration for ∇²p = rhs from p = 0.
pub fn iterate_poisson(rhs: &GridField, mask: &GridField, tol: f64, max_iter: usize) -> Result<PpeSolution> {
    let mut p = rhs.with_values(Tensor::zeros(rhs.values().shape()))?;
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let (next, r) = jacobi_sweep(&p, rhs, mask)?;
        p = next;
        residuals.push(r);
        if r < tol {
            break;
        }
    }
    Ok(PpeSolution { pressure: p, residuals })
}

/// The `ppe_rhs_only` flag picks the masked right-hand side, otherwise the
/// Jacobi solution.
pub fn ppe_forward(u: &GridField, v: &GridField, w: &GridField, mask: &GridField, cfg: &PdeConfig, params: &PdeParams) -> Result<GridField> {
    if cfg.ppe_rhs_only {
        ppe_rhs(u, v, w, mask, cfg, params)
    } else {
        Ok(solve_ppe(u, v, w, mask, cfg, params)?.pressure)
    }
}

/// Block-average a binary mask by `factor` on every axis and threshold at 0.5.
pub fn downsample_mask(mask: &GridField, factor: usize) -> Result<GridField> {
    let d = mask.n_spatial();
    let pooled = mask.values().detach().avg_pool(&vec![factor; d])?;
    let bin = pooled.data().iter().map(|&m| if m >= 0.5 { 1.0 } else { 0.0 }).collect();
    mask.with_values(Tensor::new(pooled.shape().to_vec(), bin)?)
}
