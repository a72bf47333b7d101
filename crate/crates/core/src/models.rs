//! DIANO variants and the two autoencoder baselines, assembled from
//! [`crate::layers`] and [`crate::pde`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::GridField;
use crate::layers::{Activation, Conv, ConvTranspose, Dense, FourierBlock, ParamStore, Pointwise, PointwiseMlp};
use crate::pde::{advance_vte, downsample_mask, ppe_forward, PdeConfig, PdeModel, PdeParams};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Static,
    Temporal,
    Geometric,
    Fusion,
    NnAe,
    CnnAe,
}

impl Variant {
    /// Variants that map snapshot n to snapshot n+1.
    pub fn is_temporal(self) -> bool {
        matches!(self, Variant::Temporal | Variant::Geometric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Spatial size of the inputs the model is built for.
    pub grid: Vec<usize>,
    pub fourier_modes: usize,
    pub compression_ratio: usize,
    pub width: usize,
    /// Bottleneck length of the NN-AE.
    pub latent_modes: usize,
    pub pde: Option<PdeConfig>,
    /// Spatial axis averaged away by the geometric variant.
    pub collapse_axis: Option<usize>,
    /// Fourier blocks at full resolution on each side of the geometric variant.
    pub geometric_blocks: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            variant: Variant::Static,
            grid: vec![64, 64],
            fourier_modes: 8,
            compression_ratio: 4,
            width: 32,
            latent_modes: 8,
            pde: None,
            collapse_axis: None,
            geometric_blocks: 1,
            activation: Activation::Gelu,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn n_stages(&self) -> usize {
        self.compression_ratio.trailing_zeros() as usize
    }

    /// Number of spatial axes the inputs carry.
    pub fn n_spatial(&self) -> usize {
        self.grid.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = match self.variant {
            Variant::Fusion => 3,
            _ => 2,
        };
        if self.grid.len() != dims {
            return Err(Error::invalid(format!("{:?} needs a {dims}D grid, got {:?}", self.variant, self.grid)));
        }
        if self.width == 0 || self.fourier_modes == 0 {
            return Err(Error::invalid("width and fourier_modes must be positive"));
        }
        match self.variant {
            Variant::Static | Variant::Temporal | Variant::Fusion => {
                let cr = self.compression_ratio;
                if cr < 2 || !cr.is_power_of_two() {
                    return Err(Error::invalid(format!("compression ratio must be a power of 2 >= 2, got {cr}")));
                }
                if let Some(&n) = self.grid.iter().find(|&&n| n % cr != 0 || n / cr < 2) {
                    return Err(Error::invalid(format!("grid size {n} is not divisible by CR={cr}")));
                }
            }
            Variant::CnnAe => {
                if self.grid.iter().any(|&n| n % 8 != 0) {
                    return Err(Error::invalid(format!("CNN-AE needs sizes divisible by 8, got {:?}", self.grid)));
                }
            }
            Variant::NnAe => {
                if self.latent_modes == 0 {
                    return Err(Error::invalid("latent_modes must be positive"));
                }
            }
            Variant::Geometric => {}
        }
        let pde = self.pde.as_ref();
        match self.variant {
            Variant::Temporal => {
                let cfg = pde.ok_or_else(|| Error::invalid("temporal variant needs a pde config"))?;
                if !cfg.model.is_vte() || cfg.model == PdeModel::VteNonlinear {
                    return Err(Error::invalid(format!("temporal variant needs a linear VTE model, got {:?}", cfg.model)));
                }
                cfg.validate()?;
            }
            Variant::Geometric => {
                let cfg = pde.ok_or_else(|| Error::invalid("geometric variant needs a pde config"))?;
                let c = self.collapse_axis.ok_or_else(|| Error::invalid("geometric variant needs collapse_axis"))?;
                if c > 1 {
                    return Err(Error::invalid(format!("collapse_axis {c} out of range")));
                }
                match cfg.model.axis_1d() {
                    Some(kept) if kept != c => {}
                    _ => {
                        return Err(Error::invalid(format!(
                            "pde model {:?} is inconsistent with collapse_axis {c}",
                            cfg.model
                        )))
                    }
                }
                if self.geometric_blocks == 0 {
                    return Err(Error::invalid("geometric_blocks must be >= 1"));
                }
                cfg.validate()?;
            }
            Variant::Fusion => {
                let cfg = pde.ok_or_else(|| Error::invalid("fusion variant needs a pde config"))?;
                if cfg.model != PdeModel::Ppe3d {
                    return Err(Error::invalid("fusion variant needs the ppe_3d model"));
                }
                cfg.validate()?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    lift: PointwiseMlp,
    blocks: Vec<FourierBlock>,
    collapse: Pointwise,
}

impl Encoder {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &ModelSpec) -> Self {
        let w = spec.width;
        let lift = PointwiseMlp::new(store, rng, &format!("{name}.lift"), 1, w, w, spec.activation);
        let blocks = (0..spec.n_stages())
            .map(|s| {
                let grid: Vec<usize> = spec.grid.iter().map(|&n| n >> s).collect();
                FourierBlock::new(store, rng, &format!("{name}.block{s}"), w, spec.fourier_modes, &grid, spec.activation)
            })
            .collect();
        let collapse = Pointwise::new(store, rng, &format!("{name}.collapse"), w, 1, true);
        Encoder { lift, blocks, collapse }
    }

    fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let d = x.ndim() - 2;
        let mut h = self.lift.forward(p, x)?;
        for b in &self.blocks {
            h = b.forward(p, &h)?.avg_pool(&vec![2; d])?;
        }
        self.collapse.forward(p, &h)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    expand: Pointwise,
    blocks: Vec<FourierBlock>,
    ups: Vec<ConvTranspose>,
    project: PointwiseMlp,
}

impl Decoder {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &ModelSpec) -> Self {
        let w = spec.width;
        let d = spec.n_spatial();
        let stages = spec.n_stages();
        let expand = Pointwise::new(store, rng, &format!("{name}.expand"), 1, w, true);
        let mut blocks = Vec::new();
        let mut ups = Vec::new();
        for s in 0..stages {
            let grid: Vec<usize> = spec.grid.iter().map(|&n| n >> (stages - s)).collect();
            blocks.push(FourierBlock::new(store, rng, &format!("{name}.block{s}"), w, spec.fourier_modes, &grid, spec.activation));
            ups.push(ConvTranspose::upsample(store, rng, &format!("{name}.up{s}"), w, w, &vec![2; d]));
        }
        let project = PointwiseMlp::new(store, rng, &format!("{name}.project"), w, w, 1, spec.activation);
        Decoder { expand, blocks, ups, project }
    }

    fn forward(&self, p: &[Tensor], z: &Tensor) -> Result<Tensor> {
        let mut h = self.expand.forward(p, z)?;
        for (b, up) in self.blocks.iter().zip(&self.ups) {
            h = b.forward(p, &h)?;
            let size: Vec<usize> = h.shape()[2..].iter().map(|&n| 2 * n).collect();
            h = up.forward(p, &h, &size)?;
        }
        self.project.forward(p, &h)
    }
}

#[derive(Debug, Clone)]
struct Geometric {
    lift: PointwiseMlp,
    enc_blocks: Vec<FourierBlock>,
    collapse: Pointwise,
    expand: Pointwise,
    restore: ConvTranspose,
    dec_blocks: Vec<FourierBlock>,
    project: PointwiseMlp,
    axis: usize,
}

impl Geometric {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, spec: &ModelSpec) -> Self {
        let w = spec.width;
        let axis = spec.collapse_axis.unwrap_or(1);
        let blocks = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| -> Vec<FourierBlock> {
            (0..spec.geometric_blocks)
                .map(|i| FourierBlock::new(store, rng, &format!("{name}{i}"), w, spec.fourier_modes, &spec.grid, spec.activation))
                .collect()
        };
        let lift = PointwiseMlp::new(store, rng, "enc.lift", 1, w, w, spec.activation);
        let enc_blocks = blocks(store, rng, "enc.block");
        let collapse = Pointwise::new(store, rng, "enc.collapse", w, 1, true);
        let expand = Pointwise::new(store, rng, "dec.expand", 1, w, true);
        let n = spec.grid[axis];
        let mut kernel = vec![1, 1];
        kernel[axis] = n;
        let restore = ConvTranspose::new(store, rng, "dec.restore", w, w, &kernel, &kernel, &[0, 0]);
        let dec_blocks = blocks(store, rng, "dec.block");
        let project = PointwiseMlp::new(store, rng, "dec.project", w, w, 1, spec.activation);
        Geometric { lift, enc_blocks, collapse, expand, restore, dec_blocks, project, axis }
    }

    fn encode(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let mut h = self.lift.forward(p, x)?;
        for b in &self.enc_blocks {
            h = b.forward(p, &h)?;
        }
        let mut factors = vec![1, 1];
        factors[self.axis] = x.shape()[2 + self.axis];
        let h = self.collapse.forward(p, &h.avg_pool(&factors)?)?;
        let kept = x.shape()[3 - self.axis];
        h.reshape(&[x.shape()[0], 1, kept])
    }

    fn decode(&self, p: &[Tensor], z: &Tensor, out: &[usize]) -> Result<Tensor> {
        let h = self.expand.forward(p, z)?;
        let mut shape = h.shape().to_vec();
        shape.insert(2 + self.axis, 1);
        let mut h = self.restore.forward(p, &h.reshape(&shape)?, out)?;
        for b in &self.dec_blocks {
            h = b.forward(p, &h)?;
        }
        self.project.forward(p, &h)
    }
}

#[derive(Debug, Clone)]
struct NnAe {
    enc: Vec<Dense>,
    dec: Vec<Dense>,
}

#[derive(Debug, Clone)]
struct CnnAe {
    enc: Vec<Conv>,
    dec: Vec<ConvTranspose>,
}

#[derive(Debug, Clone)]
enum Arch {
    Diano { enc: Encoder, dec: Decoder },
    Geometric(Geometric),
    Fusion { encs: Vec<Encoder>, dec: Decoder },
    NnAe(NnAe),
    CnnAe(CnnAe),
}

/// Inputs to one forward pass, batched along axis 0 with one channel.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Field(&'a GridField),
    /// Velocity components and the full-resolution fluid mask (fusion).
    Velocity { u: &'a GridField, v: &'a GridField, w: &'a GridField, mask: &'a GridField },
}

/// A built model: spec, parameters, and the layer graph indexing into them.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    arch: Arch,
}

pub const NN_AE_WIDTHS: [usize; 3] = [2048, 512, 128];

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let arch = match spec.variant {
            Variant::Static | Variant::Temporal => Arch::Diano {
                enc: Encoder::new(&mut store, &mut rng, "enc", &spec),
                dec: Decoder::new(&mut store, &mut rng, "dec", &spec),
            },
            Variant::Geometric => Arch::Geometric(Geometric::new(&mut store, &mut rng, &spec)),
            Variant::Fusion => Arch::Fusion {
                encs: ["enc_u", "enc_v", "enc_w"].iter().map(|n| Encoder::new(&mut store, &mut rng, n, &spec)).collect(),
                dec: Decoder::new(&mut store, &mut rng, "dec", &spec),
            },
            Variant::NnAe => {
                let n: usize = spec.grid.iter().product();
                let mut sizes = vec![n];
                sizes.extend(NN_AE_WIDTHS);
                sizes.push(spec.latent_modes);
                let enc = sizes.windows(2).enumerate().map(|(i, s)| Dense::new(&mut store, &mut rng, &format!("enc.{i}"), s[0], s[1])).collect();
                sizes.reverse();
                let dec = sizes.windows(2).enumerate().map(|(i, s)| Dense::new(&mut store, &mut rng, &format!("dec.{i}"), s[0], s[1])).collect();
                Arch::NnAe(NnAe { enc, dec })
            }
            Variant::CnnAe => {
                let (k, s1, s2, pad) = ([3, 3], [1, 1], [2, 2], [1, 1]);
                let down = [(1, 64), (64, 128), (128, 256)];
                let flat = [(256, 128), (128, 64), (64, 1)];
                let mut enc = Vec::new();
                for (i, &(a, b)) in down.iter().enumerate() {
                    enc.push(Conv::new(&mut store, &mut rng, &format!("enc.down{i}"), a, b, &k, &s2, &pad));
                }
                for (i, &(a, b)) in flat.iter().enumerate() {
                    enc.push(Conv::new(&mut store, &mut rng, &format!("enc.conv{i}"), a, b, &k, &s1, &pad));
                }
                let mut dec = Vec::new();
                for (i, &(b, a)) in flat.iter().rev().enumerate() {
                    dec.push(ConvTranspose::new(&mut store, &mut rng, &format!("dec.conv{i}"), a, b, &k, &s1, &pad));
                }
                for (i, &(b, a)) in down.iter().rev().enumerate() {
                    dec.push(ConvTranspose::new(&mut store, &mut rng, &format!("dec.up{i}"), a, b, &k, &s2, &pad));
                }
                Arch::CnnAe(CnnAe { enc, dec })
            }
        };
        Ok(Model { spec, params: store, arch })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// PDE parameters from the spec, detached.
    pub fn pde_params(&self) -> Option<PdeParams> {
        self.spec.pde.as_ref().map(PdeParams::from_config)
    }

    fn check_field(&self, x: &GridField) -> Result<()> {
        let d = self.spec.n_spatial();
        let s = x.values().shape();
        if x.n_spatial() != d || s.len() != d + 2 || s[1] != 1 {
            return Err(Error::shape("model", format!("expected (B, 1, {d} spatial axes), got {s:?}")));
        }
        let sizes = x.spatial_shape();
        match self.spec.variant {
            Variant::Static | Variant::Temporal | Variant::Fusion => {
                let cr = self.spec.compression_ratio;
                if sizes.iter().any(|&n| n % cr != 0) {
                    return Err(Error::shape("encode", format!("{sizes:?} not divisible by CR={cr}")));
                }
            }
            Variant::NnAe | Variant::CnnAe | Variant::Geometric => {
                if sizes != self.spec.grid.as_slice() {
                    return Err(Error::shape("model", format!("{:?} model built for {:?}, got {sizes:?}", self.spec.variant, self.spec.grid)));
                }
            }
        }
        Ok(())
    }

    /// Latent field of a single-input variant: (B, 1, S/CR) for the
    /// symmetric variants, (B, 1, n_kept) for the geometric one, (B, 1, d)
    /// (unit extent) for the NN-AE.
    pub fn encode(&self, p: &[Tensor], x: &GridField) -> Result<GridField> {
        self.check_field(x)?;
        let xv = x.values();
        match &self.arch {
            Arch::Diano { enc, .. } => x.with_values(enc.forward(p, xv)?),
            Arch::Geometric(g) => {
                let kept = 1 - g.axis;
                GridField::new(g.encode(p, xv)?, vec![x.extents()[kept]])
            }
            Arch::NnAe(ae) => {
                let b = xv.shape()[0];
                let mut h = xv.reshape(&[b, xv.numel() / b])?;
                let last = ae.enc.len() - 1;
                for (i, l) in ae.enc.iter().enumerate() {
                    h = l.forward(p, &h)?;
                    if i != last {
                        h = h.relu()?;
                    }
                }
                let d = h.shape()[1];
                GridField::unit(h.reshape(&[b, 1, d])?, 1)
            }
            Arch::CnnAe(ae) => {
                let mut h = xv.clone();
                for l in &ae.enc {
                    h = l.forward(p, &h)?.silu()?;
                }
                x.with_values(h)
            }
            Arch::Fusion { .. } => Err(Error::invalid("fusion encodes velocity triples; use forward")),
        }
    }

    /// Inverse of [`Model::encode`]; `out` is the full-resolution spatial size.
    pub fn decode(&self, p: &[Tensor], z: &GridField, out: &[usize], extents: &[(f64, f64)]) -> Result<GridField> {
        let zv = z.values();
        let values = match &self.arch {
            Arch::Diano { dec, .. } | Arch::Fusion { dec, .. } => dec.forward(p, zv)?,
            Arch::Geometric(g) => g.decode(p, zv, out)?,
            Arch::NnAe(ae) => {
                let b = zv.shape()[0];
                let mut h = zv.reshape(&[b, zv.numel() / b])?;
                let last = ae.dec.len() - 1;
                for (i, l) in ae.dec.iter().enumerate() {
                    h = l.forward(p, &h)?;
                    if i != last {
                        h = h.relu()?;
                    }
                }
                let mut shape = vec![b, 1];
                shape.extend_from_slice(out);
                h.reshape(&shape)?
            }
            Arch::CnnAe(ae) => {
                let mut h = zv.clone();
                let last = ae.dec.len() - 1;
                for (i, l) in ae.dec.iter().enumerate() {
                    let size: Vec<usize> = h.shape()[2..].iter().map(|&n| n * l.stride[0]).collect();
                    h = l.forward(p, &h, &size)?;
                    if i != last {
                        h = h.silu()?;
                    }
                }
                h
            }
        };
        if &values.shape()[2..] != out {
            return Err(Error::shape("decode", format!("decoded {:?}, expected spatial {out:?}", values.shape())));
        }
        GridField::new(values, extents.to_vec())
    }

    /// One latent PDE advance (temporal and geometric variants).
    pub fn advance(&self, z: &GridField, pde: &PdeParams) -> Result<GridField> {
        let cfg = match (self.spec.variant, &self.spec.pde) {
            (Variant::Temporal | Variant::Geometric, Some(cfg)) => cfg,
            _ => return Err(Error::invalid(format!("{:?} variant has no latent time marching", self.spec.variant))),
        };
        advance_vte(z, cfg, pde, None)
    }

    /// Latent (u, v, w) of the fusion variant.
    pub fn encode_velocity(&self, p: &[Tensor], u: &GridField, v: &GridField, w: &GridField) -> Result<[GridField; 3]> {
        let Arch::Fusion { encs, .. } = &self.arch else {
            return Err(Error::invalid("encode_velocity needs the fusion variant"));
        };
        for f in [u, v, w] {
            self.check_field(f)?;
            if f.values().shape() != u.values().shape() {
                return Err(Error::shape("fusion", "velocity components differ in shape"));
            }
        }
        Ok([
            u.with_values(encs[0].forward(p, u.values())?)?,
            v.with_values(encs[1].forward(p, v.values())?)?,
            w.with_values(encs[2].forward(p, w.values())?)?,
        ])
    }

    /// Latent pressure of the fusion variant from full-resolution inputs.
    pub fn latent_pressure(&self, p: &[Tensor], pde: &PdeParams, u: &GridField, v: &GridField, w: &GridField, mask: &GridField) -> Result<GridField> {
        let cfg = self.spec.pde.as_ref().ok_or_else(|| Error::invalid("fusion variant needs a pde config"))?;
        if mask.values().shape() != u.spatial_shape() {
            return Err(Error::shape("fusion", format!("mask {:?} vs grid {:?}", mask.values().shape(), u.spatial_shape())));
        }
        let [lu, lv, lw] = self.encode_velocity(p, u, v, w)?;
        let coarse = downsample_mask(mask, self.spec.compression_ratio)?;
        ppe_forward(&lu, &lv, &lw, &coarse, cfg, pde)
    }

    /// Full forward pass with the spec's PDE parameters.
    pub fn forward(&self, p: &[Tensor], input: ModelInput) -> Result<GridField> {
        let pde = self.pde_params();
        self.forward_with(p, pde.as_ref(), input)
    }

    /// Full forward pass with explicit (possibly tape-attached) PDE parameters.
    pub fn forward_with(&self, p: &[Tensor], pde: Option<&PdeParams>, input: ModelInput) -> Result<GridField> {
        match (self.spec.variant, input) {
            (Variant::Fusion, ModelInput::Velocity { u, v, w, mask }) => {
                let pde = pde.ok_or_else(|| Error::invalid("fusion forward needs pde parameters"))?;
                let z = self.latent_pressure(p, pde, u, v, w, mask)?;
                self.decode(p, &z, u.spatial_shape(), u.extents())
            }
            (Variant::Fusion, ModelInput::Field(_)) => Err(Error::invalid("fusion variant needs velocity inputs and a mask")),
            (_, ModelInput::Velocity { .. }) => Err(Error::invalid("only the fusion variant takes velocity inputs")),
            (variant, ModelInput::Field(x)) => {
                let mut z = self.encode(p, x)?;
                if variant.is_temporal() {
                    let pde = pde.ok_or_else(|| Error::invalid("temporal forward needs pde parameters"))?;
                    z = self.advance(&z, pde)?;
                }
                self.decode(p, &z, x.spatial_shape(), x.extents())
            }
        }
    }

    /// Parameters as tape leaves (or detached when `tape` is None).
    pub fn bind(&self, tape: Option<&Tape>) -> Vec<Tensor> {
        self.params.bind(tape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::PdeConfig;
    use crate::tensor::gradcheck::grad_check_high_order;

    fn field(b: usize, grid: &[usize], f: f64) -> GridField {
        let mut shape = vec![b, 1];
        shape.extend_from_slice(grid);
        let mut k = 0.0;
        let t = Tensor::from_fn(&shape, |_| {
            k += 1.0;
            (k * f).sin() * 0.8
        });
        GridField::unit(t, grid.len()).unwrap()
    }

    fn noise(b: usize, grid: &[usize], seed: u64) -> GridField {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = vec![b, 1];
        shape.extend_from_slice(grid);
        GridField::unit(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)), grid.len()).unwrap()
    }

    fn zero_biases(model: &Model) -> Vec<Tensor> {
        model
            .params()
            .names()
            .iter()
            .zip(model.params().values())
            .map(|(n, t)| if n.ends_with(".bias") { Tensor::zeros(t.shape()) } else { t.clone() })
            .collect()
    }

    fn spec(variant: Variant, grid: &[usize]) -> ModelSpec {
        ModelSpec { variant, grid: grid.to_vec(), width: 4, fourier_modes: 3, ..Default::default() }
    }

    #[test]
    fn encode_decode_shapes() {
        for (cr, latent) in [(4, 64), (16, 16)] {
            let s = ModelSpec { grid: vec![256, 256], width: 2, fourier_modes: 2, compression_ratio: cr, ..Default::default() };
            let m = Model::new(s).unwrap();
            let p = m.bind(None);
            let x = field(1, &[256, 256], 0.01);
            let z = m.encode(&p, &x).unwrap();
            assert_eq!(z.values().shape(), &[1, 1, latent, latent]);
            assert_eq!(z.extents(), x.extents());
            let y = m.decode(&p, &z, &[256, 256], x.extents()).unwrap();
            assert_eq!(y.values().shape(), &[1, 1, 256, 256]);
        }
    }

    #[test]
    fn zero_input_gives_zero_latent_and_output() {
        let m = Model::new(spec(Variant::Static, &[16, 16])).unwrap();
        let p = zero_biases(&m);
        let x = GridField::unit(Tensor::zeros(&[2, 1, 16, 16]), 2).unwrap();
        assert_eq!(m.encode(&p, &x).unwrap().values().max_abs(), 0.0);
        assert_eq!(m.forward(&p, ModelInput::Field(&x)).unwrap().values().max_abs(), 0.0);
    }

    #[test]
    fn parameter_count_at_full_scale() {
        let m = Model::new(ModelSpec { grid: vec![256, 256], ..Default::default() }).unwrap();
        let n = m.param_count() as f64;
        assert!((n - 1.2e6).abs() <= 0.2 * 1.2e6, "{n}");
    }

    #[test]
    fn deterministic_initialization() {
        let a = Model::new(spec(Variant::Static, &[16, 16])).unwrap();
        let b = Model::new(spec(Variant::Static, &[16, 16])).unwrap();
        for (x, y) in a.params().values().iter().zip(b.params().values()) {
            assert_eq!(x.data(), y.data());
        }
        let c = Model::new(ModelSpec { seed: 1, ..spec(Variant::Static, &[16, 16]) }).unwrap();
        assert_ne!(a.params().values()[0].data(), c.params().values()[0].data());
    }

    fn temporal(model: PdeModel, dt: f64) -> ModelSpec {
        ModelSpec {
            pde: Some(PdeConfig { dt, ..PdeConfig::vte(model) }),
            compression_ratio: 2,
            ..spec(Variant::Temporal, &[16, 16])
        }
    }

    #[test]
    fn temporal_with_zero_dt_is_static() {
        let t = Model::new(temporal(PdeModel::VteLinear2d, 0.0)).unwrap();
        let s = Model::new(ModelSpec { compression_ratio: 2, ..spec(Variant::Static, &[16, 16]) }).unwrap();
        let x = field(2, &[16, 16], 0.3);
        let a = t.forward(&t.bind(None), ModelInput::Field(&x)).unwrap();
        let b = s.forward(&t.bind(None), ModelInput::Field(&x)).unwrap();
        assert_eq!(a.values().data(), b.values().data());
    }

    #[test]
    fn geometric_shapes_and_axis_check() {
        let mut s = ModelSpec {
            variant: Variant::Geometric,
            grid: vec![16, 12],
            width: 3,
            fourier_modes: 3,
            collapse_axis: Some(1),
            pde: Some(PdeConfig::vte(PdeModel::VteLinear1dX)),
            ..Default::default()
        };
        let m = Model::new(s.clone()).unwrap();
        let p = zero_biases(&m);
        let x = field(2, &[16, 12], 0.2);
        let z = m.encode(&p, &x).unwrap();
        assert_eq!(z.values().shape(), &[2, 1, 16]);
        assert_eq!(m.forward(&p, ModelInput::Field(&x)).unwrap().values().shape(), &[2, 1, 16, 12]);
        let zero = GridField::unit(Tensor::zeros(&[1, 1, 16, 12]), 2).unwrap();
        assert_eq!(m.encode(&p, &zero).unwrap().values().max_abs(), 0.0);
        assert_eq!(m.forward(&p, ModelInput::Field(&zero)).unwrap().values().max_abs(), 0.0);
        s.pde = Some(PdeConfig::vte(PdeModel::VteLinear1dY));
        assert!(Model::new(s).is_err());
    }

    fn fusion_spec(sweeps: usize) -> ModelSpec {
        ModelSpec {
            variant: Variant::Fusion,
            grid: vec![10, 10, 10],
            width: 2,
            fourier_modes: 2,
            compression_ratio: 2,
            pde: Some(PdeConfig { jacobi_max_iter: sweeps, ..PdeConfig::ppe() }),
            ..Default::default()
        }
    }

    #[test]
    fn fusion_shapes_and_zero_velocity() {
        let m = Model::new(fusion_spec(5)).unwrap();
        let p = zero_biases(&m);
        let mask = GridField::unit(Tensor::ones(&[10, 10, 10]), 3).unwrap();
        let z = GridField::unit(Tensor::zeros(&[1, 1, 10, 10, 10]), 3).unwrap();
        let pde = m.pde_params().unwrap();
        let lp = m.latent_pressure(&p, &pde, &z, &z, &z, &mask).unwrap();
        assert_eq!(lp.values().shape(), &[1, 1, 5, 5, 5]);
        assert_eq!(lp.values().max_abs(), 0.0);
        let out = m.forward(&p, ModelInput::Velocity { u: &z, v: &z, w: &z, mask: &mask }).unwrap();
        let dec0 = m.decode(&p, &lp, &[10, 10, 10], z.extents()).unwrap();
        assert_eq!(out.values().data(), dec0.values().data());
        let u = field(1, &[10, 10, 10], 0.1);
        let out = m.forward(&m.bind(None), ModelInput::Velocity { u: &u, v: &u, w: &u, mask: &mask }).unwrap();
        assert_eq!(out.values().shape(), &[1, 1, 10, 10, 10]);
        assert!(m.forward(&p, ModelInput::Field(&u)).is_err());
    }

    #[test]
    fn baselines_shapes() {
        let m = Model::new(ModelSpec { latent_modes: 8, ..spec(Variant::NnAe, &[8, 8]) }).unwrap();
        let p = zero_biases(&m);
        let x = field(3, &[8, 8], 0.3);
        assert_eq!(m.encode(&p, &x).unwrap().values().shape(), &[3, 1, 8]);
        assert_eq!(m.forward(&p, ModelInput::Field(&x)).unwrap().values().shape(), &[3, 1, 8, 8]);
        let zero = GridField::unit(Tensor::zeros(&[1, 1, 8, 8]), 2).unwrap();
        assert_eq!(m.forward(&p, ModelInput::Field(&zero)).unwrap().values().max_abs(), 0.0);

        let m = Model::new(spec(Variant::CnnAe, &[16, 16])).unwrap();
        let p = m.bind(None);
        let x = field(1, &[16, 16], 0.3);
        assert_eq!(m.encode(&p, &x).unwrap().values().shape(), &[1, 1, 2, 2]);
        assert_eq!(m.forward(&p, ModelInput::Field(&x)).unwrap().values().shape(), &[1, 1, 16, 16]);
        assert!(Model::new(spec(Variant::CnnAe, &[12, 12])).is_err());
    }

    /// Parameter point with uniform entries in ±amp, chosen so that every
    /// parameter visibly moves the output.
    fn probe_params(model: &Model, amp: f64) -> Vec<Tensor> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        model.params().values().iter().map(|v| Tensor::from_fn(v.shape(), |_| rng.gen_range(-amp..amp))).collect()
    }

    fn objective_check(model: &Model, input: ModelInput, amp: f64, sample: Option<usize>) {
        let params = probe_params(model, amp);
        let target = model.forward(&params, input).unwrap().values().mul_scalar(0.0).unwrap().add_scalar(0.1).unwrap();
        let r = grad_check_high_order(
            |ps| model.forward(ps, input)?.values().sub(&target)?.square()?.mean(),
            &params,
            3e-3,
            1e-5,
            sample,
            3,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn static_objective_gradient() {
        let m = Model::new(spec(Variant::Static, &[16, 16])).unwrap();
        objective_check(&m, ModelInput::Field(&noise(2, &[16, 16], 5)), 0.6, Some(12));
    }

    #[test]
    fn temporal_and_geometric_objective_gradients() {
        let m = Model::new(temporal(PdeModel::VteLinear2d, 0.01)).unwrap();
        objective_check(&m, ModelInput::Field(&noise(1, &[16, 16], 5)), 0.6, Some(8));
        let g = ModelSpec {
            variant: Variant::Geometric,
            grid: vec![16, 16],
            width: 3,
            fourier_modes: 3,
            collapse_axis: Some(0),
            pde: Some(PdeConfig::vte(PdeModel::VteLinear1dY)),
            ..Default::default()
        };
        let m = Model::new(g).unwrap();
        objective_check(&m, ModelInput::Field(&noise(1, &[16, 16], 5)), 0.6, Some(8));
    }

    #[test]
    fn fusion_objective_gradient() {
        let m = Model::new(fusion_spec(12)).unwrap();
        let mask = GridField::unit(Tensor::from_fn(&[10, 10, 10], |i| if i[0] == 0 || i[1] == 9 { 0.0 } else { 1.0 }), 3).unwrap();
        let (u, v, w) = (noise(1, &[10, 10, 10], 1), noise(1, &[10, 10, 10], 2), noise(1, &[10, 10, 10], 3));
        objective_check(&m, ModelInput::Velocity { u: &u, v: &v, w: &w, mask: &mask }, 1.0, Some(4));
    }

    #[test]
    fn baseline_objective_gradients() {
        let m = Model::new(spec(Variant::CnnAe, &[16, 16])).unwrap();
        objective_check(&m, ModelInput::Field(&noise(1, &[16, 16], 5)), 0.08, Some(4));
    }
}
