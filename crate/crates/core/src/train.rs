//! Objectives, Adam, the step-decay schedule, dataset splits, the training
//! loop and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::fdm::GridField;
use crate::models::{Model, ModelInput, ModelSpec, Variant};
use crate::tensor::gradcheck::{grad_check_high_order, GradReport};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeDtype {
    #[default]
    Float64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub step_epoch: usize,
    pub decay_rate: f64,
    pub seed: u64,
    pub dtype: ComputeDtype,
    /// Global gradient-norm clip, off when absent.
    pub clip: Option<f64>,
    /// Also record the test loss after every epoch.
    pub track_test: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 30,
            lr0: 1e-2,
            step_epoch: 5,
            decay_rate: 0.75,
            seed: 0,
            dtype: ComputeDtype::Float64,
            clip: None,
            track_test: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::invalid(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate)));
        }
        if self.batch_size == 0 || self.step_epoch == 0 {
            return Err(Error::invalid("batch_size and step_epoch must be >= 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `lr0 · decay^floor(epoch / step_epoch)`
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_rate.powi((epoch / cfg.step_epoch.max(1)) as i32)
}

/// Mean squared difference over every element, on the tape when either
/// input is.
pub fn mse_loss(pred: &GridField, target: &GridField) -> Result<Tensor> {
    if pred.values().shape() != target.values().shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", pred.values().shape(), target.values().shape()),
        ));
    }
    pred.values().sub(target.values())?.square()?.mean()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Returns the new (detached) parameters;
/// a non-finite gradient leaves `state` untouched.
pub fn adam_step(params: &[Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<Vec<Tensor>> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::shape("adam", format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite gradient at param {i}, element {j}: {}", g.data()[j])));
        }
    }
    let (b1, b2) = ADAM_BETAS;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    params
        .iter()
        .zip(grads)
        .enumerate()
        .map(|(i, (p, g))| {
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(k, (&x, &gk))| {
                    m[k] = b1 * m[k] + (1.0 - b1) * gk;
                    v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                    x - lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS)
                })
                .collect();
            Tensor::new(p.shape().to_vec(), data)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 80/20 split of `n` samples.
pub fn split_dataset(n: usize, seed: u64) -> Result<SplitIndex> {
    if n < 5 {
        return Err(Error::invalid(format!("need at least 5 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.8 * n as f64).round() as usize;
    let test = idx.split_off(n_train);
    Ok(SplitIndex { train: idx, test })
}

/// Number of training samples a dataset offers to a variant: snapshots, or
/// consecutive pairs for the time-marching variants.
pub fn sample_count(variant: Variant, ds: &Dataset) -> usize {
    if variant.is_temporal() {
        ds.len().saturating_sub(1)
    } else {
        ds.len()
    }
}

/// The role a single-field variant reads and reconstructs.
pub fn field_role(ds: &Dataset) -> Role {
    [Role::Vorticity, Role::Pressure]
        .into_iter()
        .find(|r| ds.roles.contains(r))
        .unwrap_or(ds.roles[0])
}

/// Owned inputs of one batch.
#[derive(Debug, Clone)]
pub enum Inputs {
    Field(GridField),
    Velocity { u: GridField, v: GridField, w: GridField, mask: GridField },
}

impl Inputs {
    pub fn as_input(&self) -> ModelInput<'_> {
        match self {
            Inputs::Field(f) => ModelInput::Field(f),
            Inputs::Velocity { u, v, w, mask } => ModelInput::Velocity { u, v, w, mask },
        }
    }
}

/// Inputs and targets for samples `indices`.
pub fn assemble(variant: Variant, ds: &Dataset, indices: &[usize]) -> Result<(Inputs, GridField)> {
    match variant {
        Variant::Fusion => {
            let target = ds.batch(indices, Role::Pressure)?;
            let inputs = Inputs::Velocity {
                u: ds.batch(indices, Role::U)?,
                v: ds.batch(indices, Role::V)?,
                w: ds.batch(indices, Role::W)?,
                mask: ds.mask_field()?,
            };
            Ok((inputs, target))
        }
        v if v.is_temporal() => {
            let role = field_role(ds);
            let next: Vec<usize> = indices.iter().map(|i| i + 1).collect();
            Ok((Inputs::Field(ds.batch(indices, role)?), ds.batch(&next, role)?))
        }
        _ => {
            let x = ds.batch(indices, field_role(ds))?;
            Ok((Inputs::Field(x.clone()), x))
        }
    }
}

/// Training objective and its parameter gradients at `params`.
pub fn loss_and_grads(model: &Model, params: &[Tensor], inputs: &Inputs, target: &GridField) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let p: Vec<Tensor> = params.iter().map(|t| tape.leaf(t)).collect();
    let pred = model.forward(&p, inputs.as_input())?;
    let loss = mse_loss(&pred, target)?;
    let grads = loss.backward()?;
    Ok((loss.item(), p.iter().map(|t| grads.get_or_zeros(t)).collect()))
}

/// Fusion probe point. The encoder output layers are rescaled so each latent
/// velocity spans about ±2, otherwise the latent pressure is small and the
/// encoder gradients drown in round-off. The latent PPE also upwinds by the
/// sign of the local latent velocity, so the objective has kinks where a
/// component crosses zero: the output biases are shifted to make latent u and
/// w positive and v negative with a clear margin.
fn fusion_probe(model: &Model, mut params: Vec<Tensor>, vel: [&GridField; 3]) -> Result<Vec<Tensor>> {
    let latent = model.encode_velocity(&params, vel[0], vel[1], vel[2])?;
    let names = model.params().names();
    for (k, (name, z)) in ["u", "v", "w"].iter().zip(&latent).enumerate() {
        let find = |p: &str| names.iter().position(|n| *n == format!("enc_{name}.collapse.{p}"));
        let (Some(wi), Some(bi)) = (find("weight"), find("bias")) else {
            continue;
        };
        let z = z.values().data();
        let lo = z.iter().cloned().fold(f64::MAX, f64::min);
        let hi = z.iter().cloned().fold(f64::MIN, f64::max);
        let scale = 4.0 / (hi - lo).max(1e-12);
        let shift = if k == 1 { -0.5 - scale * hi } else { 0.5 - scale * lo };
        params[wi] = params[wi].mul_scalar(scale)?;
        params[bi] = params[bi].mul_scalar(scale)?.add_scalar(shift)?;
    }
    Ok(params)
}

/// Settings of a whole-objective gradient check for one variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    /// Probe parameters are drawn from U(±amp). At the initialization the
    /// decoder output is nearly constant and inner-layer gradients sit at
    /// round-off level, so checks run at random parameters of this size.
    pub amp: f64,
    /// Finite-difference step.
    pub eps: f64,
    /// Scale of the target offset from the prediction at the probe point.
    pub offset: f64,
}

/// The ReLU network needs a step small enough not to straddle kinks, and
/// then a small residual so that round-off in the loss stays below the
/// gradient signal. The fusion objective runs through the PPE, whose
/// quadratic source term wants a smaller step than the other variants.
pub fn probe_settings(variant: Variant) -> ProbeSettings {
    match variant {
        Variant::Static | Variant::Temporal | Variant::Geometric => ProbeSettings { amp: 0.6, eps: 3e-3, offset: 0.1 },
        Variant::Fusion => ProbeSettings { amp: 1.0, eps: 1e-4, offset: 0.1 },
        Variant::CnnAe => ProbeSettings { amp: 0.08, eps: 3e-3, offset: 0.1 },
        Variant::NnAe => ProbeSettings { amp: 0.05, eps: 1e-6, offset: 1e-3 },
    }
}

/// Broadband inputs and target on the spec's grid for a gradient check. The
/// fusion mask is a solid block with a one-cell wall.
pub fn check_problem(spec: &ModelSpec, batch: usize, seed: u64) -> Result<(Inputs, GridField)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![batch, 1];
    shape.extend_from_slice(&spec.grid);
    let d = spec.grid.len();
    let mut noise = || GridField::unit(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)), d);
    let target = noise()?;
    let inputs = if spec.variant == Variant::Fusion {
        let grid = spec.grid.clone();
        let mask = Tensor::from_fn(&grid, |i| {
            if i.iter().zip(&grid).all(|(&k, &n)| k > 0 && k + 1 < n) {
                1.0
            } else {
                0.0
            }
        });
        Inputs::Velocity { u: noise()?, v: noise()?, w: noise()?, mask: GridField::unit(mask, d)? }
    } else {
        Inputs::Field(noise()?)
    };
    Ok((inputs, target))
}

/// Five-point finite-difference check of the full training objective
/// (model, latent PDE and loss) at random probe parameters. The loss is
/// taken against the prediction at the probe point plus `offset · target`,
/// which keeps the loss small and with it the round-off in the difference
/// quotients.
pub fn objective_grad_check(model: &Model, inputs: &Inputs, target: &GridField, probe: ProbeSettings, sample: Option<usize>, seed: u64) -> Result<GradReport> {
    let amp = probe.amp;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Tensor> = model
        .params()
        .values()
        .iter()
        .map(|v| Tensor::from_fn(v.shape(), |_| rng.gen_range(-amp..amp)))
        .collect();
    let params = match inputs {
        Inputs::Velocity { u, v, w, .. } => fusion_probe(model, params, [u, v, w])?,
        Inputs::Field(_) => params,
    };
    let pred = model.forward(&params, inputs.as_input())?;
    let target = pred.with_values(pred.values().add(&target.values().mul_scalar(probe.offset)?)?)?;
    let target = &target;
    grad_check_high_order(|ps| mse_loss(&model.forward(ps, inputs.as_input())?, target), &params, probe.eps, 1e-5, sample, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub per_snapshot: Vec<f64>,
    pub max_abs: f64,
}

/// Tape-free forward pass over `indices`, one sample at a time.
pub fn evaluate(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<Metrics> {
    let p = model.bind(None);
    let mut per_snapshot = Vec::with_capacity(indices.len());
    let mut max_abs = 0.0f64;
    for &i in indices {
        let (inputs, target) = assemble(model.spec().variant, ds, &[i])?;
        let pred = model.forward(&p, inputs.as_input())?;
        let mut se = 0.0;
        for (a, b) in pred.values().data().iter().zip(target.values().data()) {
            se += (a - b) * (a - b);
            max_abs = max_abs.max((a - b).abs());
        }
        per_snapshot.push(se / target.values().numel() as f64);
    }
    let mse = if per_snapshot.is_empty() { 0.0 } else { per_snapshot.iter().sum::<f64>() / per_snapshot.len() as f64 };
    Ok(Metrics { mse, per_snapshot, max_abs })
}

/// Loss history as CSV with header `epoch,lr,train_loss,test_loss`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,test_loss\n");
    for r in history {
        let test = r.test_loss.map(|t| format!("{t:e}")).unwrap_or_default();
        s.push_str(&format!("{},{:e},{:e},{}\n", r.epoch, r.lr, r.train_loss, test));
    }
    s
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub params: Vec<Tensor>,
    pub adam: AdamState,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub history: Vec<EpochRecord>,
    pub split: SplitIndex,
}

pub struct Trainer<'a> {
    model: Model,
    data: &'a Dataset,
    cfg: TrainConfig,
    split: SplitIndex,
    adam: AdamState,
    rng: ChaCha8Rng,
    history: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, data: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let split = split_dataset(sample_count(model.spec().variant, data), cfg.seed)?;
        let adam = AdamState::new(model.params().values());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { model, data, cfg, split, adam, rng, history: Vec::new() })
    }

    /// Continues from a saved state; the model must match the one trained.
    pub fn resume(mut model: Model, data: &'a Dataset, cfg: TrainConfig, state: TrainerState) -> Result<Self> {
        cfg.validate()?;
        model.params_mut().set_values(state.params)?;
        let n = sample_count(model.spec().variant, data);
        if state.split.train.iter().chain(&state.split.test).any(|&i| i >= n) {
            return Err(Error::invalid("checkpoint split does not fit this dataset"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        rng.set_word_pos(state.rng_word_pos);
        Ok(Trainer { model, data, cfg, split: state.split, adam: state.adam, rng, history: state.history })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn split(&self) -> &SplitIndex {
        &self.split
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            params: self.model.params().values().to_vec(),
            adam: self.adam.clone(),
            rng_seed: self.cfg.seed,
            rng_word_pos: self.rng.get_word_pos(),
            history: self.history.clone(),
            split: self.split.clone(),
        }
    }

    fn batches(&mut self) -> Vec<Vec<usize>> {
        let mut order = self.split.train.clone();
        order.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(self.cfg.batch_size).map(|c| c.to_vec()).collect();
        if batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
            batches.pop();
        }
        batches
    }

    /// One pass over the shuffled training split. On a non-finite loss or
    /// gradient the parameters and optimizer state of the last completed
    /// epoch are restored and `Error::Diverged` is returned.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.history.len();
        let lr = lr_schedule(epoch, &self.cfg);
        let saved = self.state();
        let result = self.epoch_inner(lr);
        match result {
            Ok(train_loss) => {
                let test_loss = if self.cfg.track_test { Some(self.evaluate_test()?.mse) } else { None };
                let rec = EpochRecord { epoch, lr, train_loss, test_loss };
                self.history.push(rec.clone());
                Ok(rec)
            }
            Err(e) => {
                self.model.params_mut().set_values(saved.params)?;
                self.adam = saved.adam;
                self.rng.set_word_pos(saved.rng_word_pos);
                Err(Error::Diverged { epoch, reason: e.to_string() })
            }
        }
    }

    fn epoch_inner(&mut self, lr: f64) -> Result<f64> {
        let variant = self.model.spec().variant;
        let (mut total, mut count) = (0.0, 0usize);
        for batch in self.batches() {
            let (inputs, target) = assemble(variant, self.data, &batch)?;
            let params = self.model.params().values().to_vec();
            let (loss, mut grads) = loss_and_grads(&self.model, &params, &inputs, &target)?;
            if !loss.is_finite() {
                return Err(Error::invalid(format!("loss became {loss}")));
            }
            if let Some(c) = self.cfg.clip {
                let norm = grads.iter().flat_map(|g| g.data().iter()).map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    grads = grads.iter().map(|g| g.mul_scalar(c / norm)).collect::<Result<_>>()?;
                }
            }
            let next = adam_step(&params, &grads, &mut self.adam, lr)?;
            self.model.params_mut().set_values(next)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Self, &EpochRecord) -> Result<()>) -> Result<()> {
        while self.history.len() < self.cfg.epochs {
            let rec = self.run_epoch()?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }

    pub fn evaluate_train(&self) -> Result<Metrics> {
        evaluate(&self.model, self.data, &self.split.train)
    }

    pub fn evaluate_test(&self) -> Result<Metrics> {
        evaluate(&self.model, self.data, &self.split.test)
    }
}

/// Trains a fresh model from `spec` for `cfg.epochs` epochs.
pub fn train(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<EpochRecord>, Metrics)> {
    let mut t = Trainer::new(model, data, cfg.clone())?;
    t.run(|_, _| Ok(()))?;
    let test = t.evaluate_test()?;
    let history = t.history().to_vec();
    Ok((t.into_model(), history, test))
}
