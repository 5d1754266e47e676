//! Mini-batch training with Adam, global-norm gradient clipping, the
//! loss-gated regularizer and stall-triggered reinitialization.

mod adam;
mod gradcheck;

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{CellHyper, CellParams, CellVariant, Network};
use crate::datagen::{build_dataset, build_extrapolation, Dataset, Split, TaskSpec};
use crate::error::{config, Error, Result};
use crate::regularization::{reg_active, record_total_reg, RegConfig};
use crate::tensor::Tensor;

pub use adam::{clip_gradients, Adam};
pub use gradcheck::{gradient_check, gradient_check_network, BoundaryEntry, GradCheckReport};

/// Losses averaged for the "current loss" of the reinitialization rule.
pub const SMOOTHING_STEPS: usize = 100;

const STREAM_INIT: u64 = 100;
const STREAM_SHUFFLE: u64 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalInit {
    pub mean: f64,
    pub std: f64,
}

/// Normal initialization per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub gate: NormalInit,
    pub m_hat: NormalInit,
    pub w_hat: NormalInit,
}

impl InitSpec {
    /// Same `std` for all groups; means given as `(gate, M̂, Ŵ)`.
    pub fn with_means(gate: f64, m_hat: f64, w_hat: f64, std: f64) -> Self {
        Self {
            gate: NormalInit { mean: gate, std },
            m_hat: NormalInit { mean: m_hat, std },
            w_hat: NormalInit { mean: w_hat, std },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gate", self.gate), ("m_hat", self.m_hat), ("w_hat", self.w_hat)] {
            if !(g.std > 0.0) || !g.mean.is_finite() || !g.std.is_finite() {
                return config(format!("{name} init needs finite mean and std > 0, got ({}, {})", g.mean, g.std));
            }
        }
        Ok(())
    }

    fn group(&self, param_name: &str) -> NormalInit {
        if param_name == "g" {
            self.gate
        } else if param_name.starts_with("m_hat") {
            self.m_hat
        } else {
            self.w_hat
        }
    }
}

impl Default for InitSpec {
    fn default() -> Self {
        Self::with_means(0.0, -1.0, 1.0, 0.5)
    }
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "g=N({},{});m=N({},{});w=N({},{})",
            self.gate.mean, self.gate.std, self.m_hat.mean, self.m_hat.std, self.w_hat.mean, self.w_hat.std
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub reinit_check_every_epochs: usize,
    pub reinit_stale_steps: usize,
    pub reinit_loss_threshold: f64,
    pub max_reinits: usize,
    pub init: InitSpec,
    pub hyper: CellHyper,
    pub reg: RegConfig,
    /// Off for the ablation runs.
    pub regularize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 0.1,
            reinit_check_every_epochs: 10,
            reinit_stale_steps: 10_000,
            reinit_loss_threshold: 1.0,
            max_reinits: 9,
            init: InitSpec::default(),
            hyper: CellHyper::default(),
            reg: RegConfig::default(),
            regularize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return config(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.reinit_check_every_epochs == 0 || self.reinit_stale_steps == 0 {
            return config("batch size, reinit cadence and stale window must be at least 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return config("gradient clipping norm must be positive");
        }
        if self.max_reinits > 9 {
            return config("at most nine reinitializations are allowed");
        }
        self.init.validate()?;
        self.reg.validate()?;
        CellHyper::new(self.hyper.epsilon, self.hyper.omega).map(|_| ())
    }

    fn optimizer(&self) -> Adam {
        Adam::new(self.learning_rate, self.beta1, self.beta2, self.adam_eps)
    }
}

/// Variant plus layer widths `[in, hidden…, out]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: CellVariant,
    pub widths: Vec<usize>,
}

impl ModelSpec {
    pub fn new(variant: CellVariant, widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return config(format!("need at least input and output widths > 0, got {widths:?}"));
        }
        Ok(Self { variant, widths })
    }

    pub fn single(variant: CellVariant, in_dim: usize, out_dim: usize) -> Self {
        Self { variant, widths: vec![in_dim, out_dim] }
    }
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws every entry of one layer from its group's normal.
pub fn init_params_with<R: Rng + ?Sized>(
    variant: CellVariant,
    dims: (usize, usize),
    init: &InitSpec,
    rng: &mut R,
) -> Result<CellParams> {
    init.validate()?;
    let tensors = CellParams::names(variant)
        .iter()
        .map(|&name| {
            let (r, c) = if name == "g" { variant.gate_shape(dims.0, dims.1) } else { dims };
            let g = init.group(name);
            let normal = Normal::new(g.mean, g.std).map_err(|e| Error::Config(e.to_string()))?;
            Tensor::new(r, c, (0..r * c).map(|_| normal.sample(rng)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    CellParams::from_tensors(variant, tensors)
}

pub fn init_params(variant: CellVariant, dims: (usize, usize), init: &InitSpec, seed: u64) -> Result<CellParams> {
    init_params_with(variant, dims, init, &mut init_rng(seed, STREAM_INIT))
}

pub fn init_network_with<R: Rng + ?Sized>(model: &ModelSpec, init: &InitSpec, rng: &mut R) -> Result<Network> {
    let layers = model
        .widths
        .windows(2)
        .map(|w| init_params_with(model.variant, (w[0], w[1]), init, rng))
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

pub fn init_network(model: &ModelSpec, init: &InitSpec, seed: u64) -> Result<Network> {
    init_network_with(model, init, &mut init_rng(seed, STREAM_INIT))
}

/// Stall test applied at epoch checkpoints.
///
/// Fires when `epoch` is a checkpoint, the best loss of the last
/// `reinit_stale_steps` steps is no better than the best loss before them
/// (or than the first recorded loss when nothing precedes the window), and the
/// mean of the latest [`SMOOTHING_STEPS`] losses exceeds the threshold.
pub fn should_reinitialize(epoch: usize, loss_history: &[f64], cfg: &TrainConfig) -> bool {
    if epoch == 0 || epoch % cfg.reinit_check_every_epochs != 0 || loss_history.len() < 2 {
        return false;
    }
    let window = cfg.reinit_stale_steps.min(loss_history.len() - 1);
    let split = loss_history.len() - window;
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let before = min(&loss_history[..split]);
    let recent = min(&loss_history[split..]);
    let tail = &loss_history[loss_history.len().saturating_sub(SMOOTHING_STEPS)..];
    let smoothed = tail.iter().sum::<f64>() / tail.len() as f64;
    recent >= before && smoothed > cfg.reinit_loss_threshold
}

/// MSE of the network's predictions over the whole dataset.
pub fn evaluate(net: &Network, hyper: &CellHyper, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 4096;
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let pred = net.predict(hyper, &data.x.gather_rows(&idx))?;
        for (p, r) in pred.data().iter().zip(&data.y.data()[start..end]) {
            total += (p - r) * (p - r);
        }
        start = end;
    }
    Ok(total / n as f64)
}

/// Snapshot handed to progress observers after every epoch.
pub struct Progress<'a> {
    pub epoch: usize,
    pub step: u64,
    /// Mean data loss over the epoch's mini-batches.
    pub loss: f64,
    pub reg_active: bool,
    pub reinit_count: usize,
    pub network: &'a Network,
}

impl Progress<'_> {
    /// `epoch=<e> step=<s> loss=<mse> reg=<0|1> reinit=<n>`
    pub fn line(&self) -> String {
        format!(
            "epoch={} step={} loss={:.6e} reg={} reinit={}",
            self.epoch, self.step, self.loss, self.reg_active as u8, self.reinit_count
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub interp_mse: f64,
    /// MSE over the union of all extrapolation sets.
    pub extrap_mse: f64,
    /// MSE per extrapolation distribution, in task order.
    pub extrap_parts: Vec<f64>,
    pub reinit_count: usize,
    pub epochs_run: usize,
    pub reg_activation_epoch: Option<usize>,
    /// Updates dropped because the loss or a gradient was not finite (NALU only).
    pub skipped_steps: u64,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub network: Network,
}

/// Datasets of one run.
pub struct TrainData {
    pub train: Dataset,
    pub interp: Dataset,
    pub extrap: Vec<Dataset>,
}

impl TrainData {
    pub fn build(task: &TaskSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            train: build_dataset(task, Split::Train, seed)?,
            interp: build_dataset(task, Split::Interpolation, seed)?,
            extrap: build_extrapolation(task, seed)?,
        })
    }
}

pub fn train(model: &ModelSpec, task: &TaskSpec, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with_observer(model, task, cfg, seed, &mut |_| {})
}

pub fn train_with_observer(
    model: &ModelSpec,
    task: &TaskSpec,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&Progress),
) -> Result<TrainOutcome> {
    if model.widths[0] != task.input_dim() || model.widths[model.widths.len() - 1] != 1 {
        return config(format!(
            "model widths {:?} do not fit a task with {} inputs and one output",
            model.widths,
            task.input_dim()
        ));
    }
    let data = TrainData::build(task, seed)?;
    let mut init = init_rng(seed, STREAM_INIT);
    let net = init_network_with(model, &cfg.init, &mut init)?;
    train_from(net, &data, cfg, seed, observer)
}

/// Trains a given network; reinitializations draw from `seed`'s init stream
/// after skipping the draws used for the starting network.
pub fn train_from(
    net: Network,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&Progress),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let variant = net.layers()[0].variant();
    let model = ModelSpec {
        variant,
        widths: std::iter::once(net.in_dim()).chain(net.layers().iter().map(|l| l.out_dim())).collect(),
    };
    // Advance the init stream past the starting draw so reinit weights are fresh.
    let mut init = init_rng(seed, STREAM_INIT);
    init_network_with(&model, &cfg.init, &mut init)?;
    let mut shuffle = init_rng(seed, STREAM_SHUFFLE);

    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let stale_window = cfg.reinit_stale_steps.min(cfg.reinit_check_every_epochs * steps_per_epoch);
    let policy = TrainConfig { reinit_stale_steps: stale_window.max(1), ..cfg.clone() };

    let mut state = RunState {
        net,
        opt: cfg.optimizer(),
        history: Vec::new(),
        step: 0,
        skipped: 0,
    };
    let initial_train_loss = evaluate(&state.net, &cfg.hyper, &data.train)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut reinit_count = 0;
    let mut reg_activation_epoch = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut last_reg = false;
        for batch in order.chunks(cfg.batch_size) {
            let out = state.step(batch, data, cfg, epoch).map_err(|e| match e {
                Error::Invariant(msg) => Error::Invariant(format!(
                    "{variant} run (seed {seed}) failed at epoch {epoch}, step {}: {msg}",
                    state.step
                )),
                other => other,
            })?;
            epoch_loss += out.loss;
            last_reg = out.reg_active;
            if out.reg_active && reg_activation_epoch.is_none() {
                reg_activation_epoch = Some(epoch);
            }
        }
        observer(&Progress {
            epoch,
            step: state.step,
            loss: epoch_loss / steps_per_epoch as f64,
            reg_active: last_reg,
            reinit_count,
            network: &state.net,
        });
        if epoch < cfg.epochs
            && reinit_count < cfg.max_reinits
            && should_reinitialize(epoch, &state.history, &policy)
        {
            state.net = init_network_with(&model, &cfg.init, &mut init)?;
            state.opt.reset();
            state.history.clear();
            reinit_count += 1;
        }
    }

    let final_train_loss = evaluate(&state.net, &cfg.hyper, &data.train)?;
    let interp_mse = evaluate(&state.net, &cfg.hyper, &data.interp)?;
    let extrap_parts = data
        .extrap
        .iter()
        .map(|d| evaluate(&state.net, &cfg.hyper, d))
        .collect::<Result<Vec<_>>>()?;
    let total_rows: usize = data.extrap.iter().map(|d| d.len()).sum();
    let extrap_mse = data
        .extrap
        .iter()
        .zip(&extrap_parts)
        .map(|(d, m)| m * d.len() as f64)
        .sum::<f64>()
        / total_rows as f64;

    Ok(TrainOutcome {
        report: TrainReport {
            initial_train_loss,
            final_train_loss,
            interp_mse,
            extrap_mse,
            extrap_parts,
            reinit_count,
            epochs_run: cfg.epochs,
            reg_activation_epoch,
            skipped_steps: state.skipped,
            seed,
        },
        network: state.net,
    })
}

struct RunState {
    net: Network,
    opt: Adam,
    history: Vec<f64>,
    step: u64,
    skipped: u64,
}

struct StepOutcome {
    loss: f64,
    reg_active: bool,
}

impl RunState {
    fn step(&mut self, batch: &[usize], data: &TrainData, cfg: &TrainConfig, epoch: usize) -> Result<StepOutcome> {
        self.step += 1;
        let inalu = self.net.layers()[0].variant().is_inalu();
        let mut tape = Tape::with_capacity(64 * self.net.layers().len());
        let bound = self.net.bind(&mut tape);
        let leaves: Vec<Var> = bound.iter().flat_map(|b| b.vars()).collect();
        let x = tape.constant(data.train.x.gather_rows(batch));
        let y = tape.constant(data.train.y.gather_rows(batch));
        let traces = self.net.forward(&mut tape, &bound, &cfg.hyper, x)?;
        let pred = traces.last().expect("at least one layer").y;
        let mse = tape.mse_loss(pred, y)?;
        let data_loss = tape.value(mse).item().expect("scalar loss");

        if !data_loss.is_finite() {
            if inalu {
                return Err(Error::Invariant(format!("non-finite training loss {data_loss}")));
            }
            self.skipped += 1;
            self.history.push(f64::INFINITY);
            return Ok(StepOutcome { loss: f64::INFINITY, reg_active: false });
        }

        let active = cfg.regularize && reg_active(epoch, data_loss, &cfg.reg);
        let loss = if active {
            let reg = record_total_reg(&mut tape, &leaves, &cfg.reg)?;
            tape.add(mse, reg)?
        } else {
            mse
        };
        let mut grads_by_var = tape.backward(loss)?;
        let mut grads: Vec<Tensor> = leaves
            .iter()
            .map(|&v| {
                grads_by_var.take(v).unwrap_or_else(|| {
                    let (r, c) = tape.shape(v);
                    Tensor::zeros(r, c)
                })
            })
            .collect();
        if grads.iter().any(|g| !g.all_finite()) {
            if inalu {
                return Err(Error::Invariant("non-finite gradient".into()));
            }
            self.skipped += 1;
            self.history.push(data_loss);
            return Ok(StepOutcome { loss: data_loss, reg_active: active });
        }
        clip_gradients(&mut grads, cfg.grad_clip_norm);
        self.opt.step(&mut self.net.tensors_mut(), &grads);
        if inalu && !self.net.layers().iter().all(|l| l.all_finite()) {
            return Err(Error::Invariant("parameters became non-finite".into()));
        }
        self.history.push(data_loss);
        Ok(StepOutcome { loss: data_loss, reg_active: active })
    }
}
