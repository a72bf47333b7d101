//! Neural-operator building blocks. Layers hold indices into a
//! [`ParamStore`]; forward passes take the bound parameter list so the same
//! layer runs detached (evaluation) or on a tape (training).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Named, ordered parameter tensors (always detached).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value.detach());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value; shapes must match.
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::shape("params", format!("{} tensors for {} parameters", values.len(), self.values.len())));
        }
        for (i, (new, old)) in values.iter().zip(&self.values).enumerate() {
            if new.shape() != old.shape() {
                return Err(Error::shape(
                    "params",
                    format!("{}: {:?} vs {:?}", self.names[i], new.shape(), old.shape()),
                ));
            }
        }
        self.values = values.into_iter().map(|t| t.detach()).collect();
        Ok(())
    }

    /// Parameters ready for a forward pass: leaves on `tape`, or detached.
    pub fn bind(&self, tape: Option<&Tape>) -> Vec<Tensor> {
        match tape {
            Some(t) => self.values.iter().map(|v| t.leaf(v)).collect(),
            None => self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Silu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
            Activation::Silu => x.silu(),
            Activation::Identity => Ok(x.clone()),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn bias_view(b: &Tensor, ndim: usize) -> Result<Tensor> {
    let mut shape = vec![b.numel()];
    shape.resize(ndim - 1, 1);
    b.reshape(&shape)
}

/// Pointwise linear map over channels with optional bias.
#[derive(Debug, Clone)]
pub struct Pointwise {
    pub w: usize,
    pub b: Option<usize>,
    pub cin: usize,
    pub cout: usize,
}

impl Pointwise {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        let k = 1.0 / (cin as f64).sqrt();
        let w = store.push(format!("{name}.weight"), uniform(rng, &[cout, cin], -k, k));
        let b = bias.then(|| store.push(format!("{name}.bias"), uniform(rng, &[cout], -k, k)));
        Pointwise { w, b, cin, cout }
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let y = x.channel_linear(&p[self.w])?;
        match self.b {
            Some(b) => y.add(&bias_view(&p[b], x.ndim())?),
            None => Ok(y),
        }
    }
}

/// Two pointwise layers with an activation in between (lifting/projection).
#[derive(Debug, Clone)]
pub struct PointwiseMlp {
    pub first: Pointwise,
    pub second: Pointwise,
    pub act: Activation,
}

impl PointwiseMlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, hidden: usize, cout: usize, act: Activation) -> Self {
        PointwiseMlp {
            first: Pointwise::new(store, rng, &format!("{name}.0"), cin, hidden, true),
            second: Pointwise::new(store, rng, &format!("{name}.1"), hidden, cout, true),
            act,
        }
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        if x.ndim() < 2 || x.shape()[1] != self.first.cin {
            return Err(Error::shape("pointwise_mlp", format!("expected {} channels, got {:?}", self.first.cin, x.shape())));
        }
        let h = self.act.apply(&self.first.forward(p, x)?)?;
        self.second.forward(p, &h)
    }
}

/// Retained-mode counts for a grid: the last axis keeps `m` half-spectrum
/// modes, every other axis keeps frequencies |k| ≤ m−1 (2m−1 entries).
/// `m` is clamped so that the modes exist on the grid.
pub fn clamp_modes(modes: usize, grid: &[usize]) -> Vec<usize> {
    let d = grid.len();
    grid.iter()
        .enumerate()
        .map(|(a, &n)| if a + 1 == d { modes.min(n / 2 + 1) } else { modes.min(n.div_ceil(2)) })
        .map(|m| m.max(1))
        .collect()
}

fn kept_full(m: usize, n: usize) -> Vec<usize> {
    (0..m).chain(n + 1 - m..n).collect()
}

/// Spectral convolution with learned complex weights on the retained modes.
#[derive(Debug, Clone)]
pub struct SpectralConv {
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub modes: Vec<usize>,
}

impl SpectralConv {
    /// `grid` is the spatial size the layer is built for (modes are clamped to it).
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, modes: usize, grid: &[usize]) -> Self {
        let modes = clamp_modes(modes, grid);
        let scale = 1.0 / (cin * cout) as f64;
        let w = store.push(format!("{name}.weight"), uniform(rng, &Self::weight_shape(cin, cout, &modes), 0.0, scale));
        SpectralConv { w, cin, cout, modes }
    }

    pub fn weight_shape(cin: usize, cout: usize, modes: &[usize]) -> Vec<usize> {
        let d = modes.len();
        let mut shape = vec![cin, cout];
        shape.extend(modes.iter().enumerate().map(|(a, &m)| if a + 1 == d { m } else { 2 * m - 1 }));
        shape.push(2);
        shape
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        spectral_conv(x, &p[self.w], &self.modes)
    }
}

/// rFFT over the spatial axes of x (B, Cin, S..), multiply the retained
/// modes by `w` (Cin, Cout, K.., 2) summing over input channels, drop the
/// rest, inverse transform.
pub fn spectral_conv(x: &Tensor, w: &Tensor, modes: &[usize]) -> Result<Tensor> {
    let d = modes.len();
    if x.ndim() != d + 2 || w.shape() != SpectralConv::weight_shape(w.shape()[0], w.shape()[1], modes) || x.shape()[1] != w.shape()[0] {
        return Err(Error::shape("spectral_conv", format!("x {:?}, w {:?}, modes {modes:?}", x.shape(), w.shape())));
    }
    let grid = &x.shape()[2..];
    for (a, (&n, &m)) in grid.iter().zip(modes).enumerate() {
        let fits = if a + 1 == d { m <= n / 2 + 1 } else { 2 * m - 1 <= n };
        if !fits {
            return Err(Error::shape("spectral_conv", format!("{m} modes do not fit axis of length {n}")));
        }
    }
    let last = d + 1;
    let n_last = grid[d - 1];
    let mut z = x.rfft(last)?.slice(last, 0, modes[d - 1])?;
    for a in 0..d - 1 {
        z = z.fft(a + 2)?.take(a + 2, &kept_full(modes[a], grid[a]))?;
    }
    let mut y = z.spectral_mix(w)?;
    for a in (0..d - 1).rev() {
        y = y.scatter(a + 2, &kept_full(modes[a], grid[a]), grid[a])?.ifft(a + 2)?;
    }
    let h = n_last / 2 + 1;
    y.pad(last, 0, h - modes[d - 1])?.irfft(last, n_last)
}

/// act(spectral_conv(x) + pointwise(x))
#[derive(Debug, Clone)]
pub struct FourierBlock {
    pub spectral: SpectralConv,
    pub skip: Pointwise,
    pub act: Activation,
}

impl FourierBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, modes: usize, grid: &[usize], act: Activation) -> Self {
        FourierBlock {
            spectral: SpectralConv::new(store, rng, &format!("{name}.spectral"), width, width, modes, grid),
            skip: Pointwise::new(store, rng, &format!("{name}.skip"), width, width, true),
            act,
        }
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let s = self.spectral.forward(p, x)?;
        self.act.apply(&s.add(&self.skip.forward(p, x)?)?)
    }
}

/// Strided convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, kernel: &[usize], stride: &[usize], padding: &[usize]) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let k = 1.0 / (fan_in as f64).sqrt();
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(kernel);
        let w = store.push(format!("{name}.weight"), uniform(rng, &shape, -k, k));
        let b = store.push(format!("{name}.bias"), uniform(rng, &[cout], -k, k));
        Conv { w, b, stride: stride.to_vec(), padding: padding.to_vec() }
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let y = x.conv(&p[self.w], &self.stride, &self.padding)?;
        y.add(&bias_view(&p[self.b], y.ndim())?)
    }
}

/// Transposed convolution with bias, producing an exact target size.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    pub w: usize,
    pub b: usize,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, kernel: &[usize], stride: &[usize], padding: &[usize]) -> Self {
        let fan_in = cout * kernel.iter().product::<usize>();
        let k = 1.0 / (fan_in as f64).sqrt();
        let mut shape = vec![cin, cout];
        shape.extend_from_slice(kernel);
        let w = store.push(format!("{name}.weight"), uniform(rng, &shape, -k, k));
        let b = store.push(format!("{name}.bias"), uniform(rng, &[cout], -k, k));
        ConvTranspose { w, b, stride: stride.to_vec(), padding: padding.to_vec() }
    }

    /// Upsampling by integer `factors`: kernel 2·f, stride f, padding ⌈f/2⌉.
    /// A factor of 1 leaves that axis alone (kernel 1).
    pub fn upsample(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, factors: &[usize]) -> Self {
        let kernel: Vec<usize> = factors.iter().map(|&f| if f == 1 { 1 } else { 2 * f }).collect();
        let padding: Vec<usize> = factors.iter().map(|&f| if f == 1 { 0 } else { f.div_ceil(2) }).collect();
        Self::new(store, rng, name, cin, cout, &kernel, factors, &padding)
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor, out_size: &[usize]) -> Result<Tensor> {
        let y = x.conv_transpose(&p[self.w], &self.stride, &self.padding, out_size)?;
        y.add(&bias_view(&p[self.b], y.ndim())?)
    }
}

/// Fully connected layer on (B, in) inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, nin: usize, nout: usize) -> Self {
        let k = 1.0 / (nin as f64).sqrt();
        let w = store.push(format!("{name}.weight"), uniform(rng, &[nin, nout], -k, k));
        let b = store.push(format!("{name}.bias"), uniform(rng, &[nout], -k, k));
        Dense { w, b }
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        x.matmul(&p[self.w])?.add(&p[self.b])
    }
}
