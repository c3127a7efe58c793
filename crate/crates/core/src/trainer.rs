//! Training loop: mini-batched data loss, per-epoch collocation resampling,
//! global-norm gradient clipping, AdamW and reduce-on-plateau scheduling.
//!
//! All randomness (initialization, shuffling, dropout, collocation draws)
//! comes from named sub-streams of `TrainConfig::seed` indexed by epoch, so a
//! run resumed from a saved [`TrainState`] continues bit-for-bit.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignedSample, TrainingSet};
use crate::error::{Error, Result};
use crate::loss::{
    charts, data_loss_and_grad, physics_loss_and_grad, sample_collocation, total_loss, LossBreakdown, LossWeights,
    PhysicsLoss,
};
use crate::network::{substream, Network, NetworkParams, INPUT_DIM, OUTPUT_DIM};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub n_collocation: usize,
    pub grad_clip_max: f64,
    pub scheduler_factor: f64,
    /// Epochs without relative improvement before the rate is reduced.
    pub scheduler_patience: usize,
    /// Minimum relative improvement that resets the patience counter.
    pub scheduler_threshold: f64,
    pub min_learning_rate: f64,
    /// Training stops once the epoch total loss falls below this.
    pub epsilon_converge: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub dropout: f64,
    /// Mask vertical channels of the physics residuals.
    pub mode_2d: bool,
    /// Write a checkpoint every this many epochs; 0 writes only at stop.
    pub checkpoint_every: usize,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 512,
            n_collocation: 2000,
            grad_clip_max: 1.0,
            scheduler_factor: 0.1,
            scheduler_patience: 50,
            scheduler_threshold: 1e-8,
            min_learning_rate: 1e-7,
            epsilon_converge: 1e-6,
            max_epochs: 20_000,
            seed: 0,
            hidden_layers: 4,
            hidden_width: 128,
            dropout: 0.1,
            mode_2d: false,
            checkpoint_every: 0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("grad_clip_max", self.grad_clip_max)?;
        positive("min_learning_rate", self.min_learning_rate)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("n_collocation", self.n_collocation),
            ("scheduler_patience", self.scheduler_patience),
            ("max_epochs", self.max_epochs),
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(Error::config("scheduler_factor", "must lie in (0, 1)"));
        }
        if !(self.scheduler_threshold >= 0.0) {
            return Err(Error::config("scheduler_threshold", "must be non-negative"));
        }
        if !(self.epsilon_converge >= 0.0) {
            return Err(Error::config("epsilon_converge", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        self.loss.validate()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![INPUT_DIM];
        s.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        s.push(OUTPUT_DIM);
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// First and second moment estimates of AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
pub fn adamw_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.n_params() != grads.n_params() || params.n_params() != state.m.n_params() {
        return Err(Error::input("parameter, gradient and optimizer shapes differ"));
    }
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient passed to AdamW".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let decay = 1.0 - lr * weight_decay;
    for (((p, g), m), v) in params
        .slices_mut()
        .zip(grads.slices())
        .zip(state.m.slices_mut())
        .zip(state.v.slices_mut())
    {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales `grads` onto the ball of radius `max_norm` when outside it and
/// returns the norm before clipping.
pub fn clip_gradients(grads: &mut NetworkParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.slices_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
}

impl PlateauScheduler {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            best: None,
            bad_epochs: 0,
            factor: config.scheduler_factor,
            patience: config.scheduler_patience,
            threshold: config.scheduler_threshold,
            min_lr: config.min_learning_rate,
        }
    }

    /// Records an epoch loss and returns the learning rate for the next one.
    pub fn step(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(best) if !(loss < best - self.threshold * best.abs()) => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// CSV with columns `epoch,total,data,phys,lr`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,total,data,phys,lr\n");
        for r in &self.history {
            s.push_str(&log_line(r));
        }
        s
    }
}

pub fn log_line(r: &EpochRecord) -> String {
    format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        r.epoch, r.loss.total, r.loss.data, r.loss.phys, r.lr
    )
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub network: Network,
    pub adam: AdamState,
    pub scheduler: PlateauScheduler,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, set: &TrainingSet) -> Result<Self> {
        config.validate()?;
        let mut params = NetworkParams::init_with_sizes(&config.layer_sizes(), config.seed);
        params.dropout_rate = config.dropout;
        Ok(Self {
            config: *config,
            adam: AdamState::new(&params),
            network: Network {
                params,
                stats: set.stats.clone(),
                seed: config.seed,
            },
            scheduler: PlateauScheduler::new(config),
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            reason: e.to_string(),
        })
    }
}

/// Hooks invoked by [`train_from`].
pub trait TrainObserver {
    fn epoch_end(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Trains a fresh network on `set`.
pub fn train(config: &TrainConfig, set: &TrainingSet) -> Result<(Network, TrainReport)> {
    let mut state = TrainState::new(config, set)?;
    let report = train_from(&mut state, set, &mut ())?;
    Ok((state.network, report))
}

/// Continues `state` until convergence or `state.config.max_epochs`.
///
/// On a non-finite loss or gradient the run aborts with
/// [`Error::Numerical`], leaving `state` at the last completed epoch.
pub fn train_from(state: &mut TrainState, set: &TrainingSet, observer: &mut dyn TrainObserver) -> Result<TrainReport> {
    let config = state.config;
    config.validate()?;
    if state.network.params.sizes() != config.layer_sizes() {
        return Err(Error::config("hidden_width", "network shape does not match the configuration"));
    }
    let pool: Vec<(usize, AlignedSample)> = set
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.aligned.iter().map(move |a| (k, *a)))
        .collect();
    if pool.is_empty() {
        return Err(Error::input("training set has no aligned samples"));
    }
    let charts = charts(set)?;
    let use_phys = config.loss.lambda_phys > 0.0;
    let started = Instant::now();
    let mut stop = StopReason::MaxEpochs;

    if state.history.last().is_some_and(|r| r.loss.total.abs() < config.epsilon_converge) {
        stop = StopReason::Converged;
    }
    while stop != StopReason::Converged && state.epoch < config.max_epochs {
        let epoch = state.epoch + 1;
        let mut next = state.clone();
        let record = run_epoch(&mut next, set, &pool, &charts, use_phys, epoch)?;
        next.epoch = epoch;
        next.history.push(record);
        next.scheduler.step(record.loss.total);
        *state = next;
        observer.epoch_end(state)?;
        if record.loss.total.abs() < config.epsilon_converge {
            stop = StopReason::Converged;
        }
    }
    Ok(TrainReport {
        history: state.history.clone(),
        stop,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn run_epoch(
    state: &mut TrainState,
    set: &TrainingSet,
    pool: &[(usize, AlignedSample)],
    charts: &[crate::frames::LocalChart],
    use_phys: bool,
    epoch: usize,
) -> Result<EpochRecord> {
    let config = state.config;
    let seed = config.seed;
    let e = epoch as u64;
    let lr = state.scheduler.lr;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut substream(seed, "shuffle", e));
    let n_batches = pool.len().div_ceil(config.batch_size);
    let colloc = if use_phys {
        sample_collocation(set, config.n_collocation, &mut substream(seed, "collocation", e))?.points
    } else {
        Vec::new()
    };
    let mut dropout_rng = substream(seed, "dropout", e);

    let mut data_sum = 0.0;
    let mut phys_sum = [0.0; 3];
    let mut phys_count = 0usize;
    let mut grads = state.network.params.zeros_like();
    for b in 0..n_batches {
        let idx = &order[b * config.batch_size..((b + 1) * config.batch_size).min(pool.len())];
        let batch: Vec<(usize, AlignedSample)> = idx.iter().map(|&i| pool[i]).collect();
        grads.fill(0.0);
        let masks = state.network.params.dropout_masks(batch.len(), &mut dropout_rng);
        let data = data_loss_and_grad(
            &state.network,
            set,
            &batch,
            Some(&masks),
            &config.loss,
            config.loss.lambda_data,
            &mut grads,
        )?;
        data_sum += data * batch.len() as f64;

        // Collocation points are split as evenly as possible across batches.
        let lo = b * colloc.len() / n_batches;
        let hi = (b + 1) * colloc.len() / n_batches;
        if use_phys && hi > lo {
            let phys = physics_loss_and_grad(
                &state.network,
                set,
                charts,
                &colloc[lo..hi],
                config.mode_2d,
                config.loss.lambda_phys,
                &mut grads,
            )?;
            let n = (hi - lo) as f64;
            phys_sum[0] += phys.r_p * n;
            phys_sum[1] += phys.r_v * n;
            phys_sum[2] += phys.r_eta * n;
            phys_count += hi - lo;
        }
        if !grads.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient in epoch {epoch}, batch {b}")));
        }
        clip_gradients(&mut grads, config.grad_clip_max);
        adamw_step(&mut state.network.params, &grads, &mut state.adam, lr, config.weight_decay)?;
    }
    let phys = if phys_count > 0 {
        let n = phys_count as f64;
        PhysicsLoss {
            r_p: phys_sum[0] / n,
            r_v: phys_sum[1] / n,
            r_eta: phys_sum[2] / n,
        }
    } else {
        PhysicsLoss::default()
    };
    let loss = total_loss(data_sum / pool.len() as f64, phys, &config.loss);
    if !loss.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss in epoch {epoch}")));
    }
    if !state.network.params.is_finite() {
        return Err(Error::Numerical(format!("non-finite parameters after epoch {epoch}")));
    }
    Ok(EpochRecord { epoch, loss, lr })
}
