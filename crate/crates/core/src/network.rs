//! Fully connected ReLU network with exact time derivatives and a reverse
//! pass that differentiates through them.
//!
//! A batch forward pass carries two matrices per layer: activations `A` and
//! their tangents `Ȧ` with respect to physical time. Because ReLU and
//! dropout act through a piecewise-constant diagonal factor `D`, the
//! tangent propagates as `Ż = Ȧ Wᵀ`, `Ȧ' = Ż ⊙ D`, and the reverse pass for
//! a loss depending on both outputs and output tangents is
//!
//! ```text
//! W̄ += Z̄ᵀA + Ż̄ᵀȦ,   b̄ += Σ Z̄,   Ā = Z̄W,   Ǡ = Ż̄W,   Z̄ = Ā ⊙ D,   Ż̄ = Ǡ ⊙ D
//! ```
//!
//! which is exact wherever no pre-activation sits on a kink. At a kink the
//! slope is taken as zero.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, TrajectoryData};
use crate::error::{Error, Result};
use crate::mechanization::ImuSample;

pub const INPUT_DIM: usize = 7;
pub const OUTPUT_DIM: usize = 9;
pub const DEFAULT_SIZES: [usize; 6] = [INPUT_DIM, 128, 128, 128, 128, OUTPUT_DIM];
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Deterministic RNG for the named sub-stream `name` of `seed`, instance
/// `index` (an epoch number, say). Distinct names never share a stream.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a over the name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
}

impl NetworkParams {
    /// Default architecture with He-normal weights and zero biases.
    pub fn init(seed: u64) -> Self {
        Self::init_with_sizes(&DEFAULT_SIZES, seed)
    }

    pub fn init_with_sizes(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        let mut rng = substream(seed, "init", 0);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Layer {
                    w: Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self {
            layers,
            dropout_rate: DEFAULT_DROPOUT,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
            dropout_rate: self.dropout_rate,
        }
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Visits every parameter slice in a fixed order.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.w.as_slice().expect("standard layout"),
                l.b.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.w.as_slice_mut().expect("standard layout"),
                l.b.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn fill(&mut self, v: f64) {
        self.slices_mut().for_each(|s| s.fill(v));
    }

    fn check_shape(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].w.nrows() != pair[1].w.ncols() {
                return Err(Error::input(format!("layer {} output does not feed layer {}", i, i + 1)));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() || !l.w.is_standard_layout() {
                return Err(Error::input(format!("layer {i} has inconsistent bias or layout")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::input("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Per-row inverted-dropout factors (`0` or `1/(1−p)`) for every hidden
    /// layer of a batch with `rows` rows.
    pub fn dropout_masks(&self, rows: usize, rng: &mut impl Rng) -> Vec<Array2<f64>> {
        let keep = 1.0 - self.dropout_rate;
        let scale = 1.0 / keep;
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| {
                Array2::from_shape_simple_fn((rows, l.w.nrows()), || {
                    if rng.gen::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    /// Batched forward pass over the rows of `x`.
    ///
    /// `tangent` holds `du/dt` for each row (the same shape as `x`); when
    /// present, output tangents are propagated too. `masks` applies
    /// dropout; `None` is eval mode.
    pub fn forward_batch(
        &self,
        x: ArrayView2<f64>,
        tangent: Option<ArrayView2<f64>>,
        masks: Option<&[Array2<f64>]>,
    ) -> Result<Tape> {
        if x.ncols() != self.layers[0].w.ncols() {
            return Err(Error::input(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.layers[0].w.ncols()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite network input".into()));
        }
        if let Some(t) = &tangent {
            if t.dim() != x.dim() {
                return Err(Error::input("tangent and input shapes differ"));
            }
        }
        let n_layers = self.layers.len();
        let mut a = x.to_owned();
        let mut a_dot = tangent.map(|t| t.to_owned());
        let mut inputs = Vec::with_capacity(n_layers);
        let mut gates = Vec::with_capacity(n_layers - 1);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            let z_dot = a_dot.as_ref().map(|ad| ad.dot(&layer.w.t()));
            inputs.push((a, a_dot));
            if l + 1 == n_layers {
                return Ok(Tape {
                    inputs,
                    gates,
                    output: z,
                    output_dot: z_dot,
                });
            }
            let mut gate = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if let Some(m) = masks {
                gate *= &m[l];
            }
            a = &z * &gate;
            a_dot = z_dot.map(|zd| zd * &gate);
            gates.push(gate);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Single-input forward pass on normalized inputs.
    pub fn forward(&self, u: &[f64; INPUT_DIM], mode: Mode, dropout_seed: u64) -> Result<[f64; OUTPUT_DIM]> {
        self.check_shape()?;
        let x = Array2::from_shape_vec((1, INPUT_DIM), u.to_vec()).expect("row shape");
        let masks = match mode {
            Mode::Eval => None,
            Mode::Train => Some(self.dropout_masks(1, &mut substream(dropout_seed, "dropout", 0))),
        };
        let tape = self.forward_batch(x.view(), None, masks.as_deref())?;
        Ok(std::array::from_fn(|i| tape.output[[0, i]]))
    }

    /// Eval-mode output and its derivative with respect to physical time,
    /// where `time_scale = du₀/dt` is the reciprocal trajectory duration.
    pub fn forward_with_time_derivative(
        &self,
        u: &[f64; INPUT_DIM],
        time_scale: f64,
    ) -> Result<([f64; OUTPUT_DIM], [f64; OUTPUT_DIM])> {
        let x = Array2::from_shape_vec((1, INPUT_DIM), u.to_vec()).expect("row shape");
        let mut t = Array2::zeros((1, INPUT_DIM));
        t[[0, 0]] = time_scale;
        let tape = self.forward_batch(x.view(), Some(t.view()), None)?;
        let zd = tape.output_dot.as_ref().expect("tangent requested");
        Ok((
            std::array::from_fn(|i| tape.output[[0, i]]),
            std::array::from_fn(|i| zd[[0, i]]),
        ))
    }
}

/// Intermediate values of a batch forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input of every layer and its tangent.
    inputs: Vec<(Array2<f64>, Option<Array2<f64>>)>,
    /// `relu'(Z) ⊙ dropout` of every hidden layer.
    gates: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    pub output_dot: Option<Array2<f64>>,
}

impl Tape {
    /// Accumulates into `grads` the parameter gradient of a loss whose
    /// adjoints with respect to the outputs and output tangents are
    /// `g_out` and `g_out_dot`.
    pub fn backward(
        &self,
        params: &NetworkParams,
        g_out: ArrayView2<f64>,
        g_out_dot: Option<ArrayView2<f64>>,
        grads: &mut NetworkParams,
    ) -> Result<()> {
        if g_out.dim() != self.output.dim() {
            return Err(Error::input("output adjoint shape mismatch"));
        }
        if g_out_dot.is_some() && self.output_dot.is_none() {
            return Err(Error::input("tangent adjoint given but no tangent was recorded"));
        }
        if let Some(g) = &g_out_dot {
            if g.dim() != self.output.dim() {
                return Err(Error::input("tangent adjoint shape mismatch"));
            }
        }
        let mut gz = g_out.to_owned();
        let mut gz_dot = g_out_dot.map(|g| g.to_owned());
        for l in (0..params.layers.len()).rev() {
            let (a, a_dot) = &self.inputs[l];
            let layer = &params.layers[l];
            let grad = &mut grads.layers[l];
            grad.w += &gz.t().dot(a);
            grad.b += &gz.sum_axis(Axis(0));
            if let (Some(gd), Some(ad)) = (&gz_dot, a_dot) {
                grad.w += &gd.t().dot(ad);
            }
            if l == 0 {
                break;
            }
            let gate = &self.gates[l - 1];
            gz = gz.dot(&layer.w) * gate;
            gz_dot = gz_dot.map(|gd| gd.dot(&layer.w) * gate);
        }
        Ok(())
    }
}

/// Trained network together with the normalization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub params: NetworkParams,
    pub stats: NormStats,
    pub seed: u64,
}

/// Physical-unit prediction `(p, v, η)` and its time derivative.
pub type StatePrediction = ([f64; OUTPUT_DIM], [f64; OUTPUT_DIM]);

impl Network {
    /// Eval-mode physical state at `t` for a trajectory spanning
    /// `[start, start + duration]`.
    pub fn predict(&self, t: f64, start: f64, duration: f64, imu: &ImuSample) -> Result<[f64; OUTPUT_DIM]> {
        let u = self.stats.input(t, start, duration, imu);
        Ok(self.stats.denormalize(&self.params.forward(&u, Mode::Eval, 0)?))
    }

    /// Eval-mode physical state and its exact time derivative.
    pub fn predict_with_rate(&self, t: f64, start: f64, duration: f64, imu: &ImuSample) -> Result<StatePrediction> {
        let u = self.stats.input(t, start, duration, imu);
        let (z, zd) = self.params.forward_with_time_derivative(&u, 1.0 / duration)?;
        Ok((
            self.stats.denormalize(&z),
            std::array::from_fn(|i| self.stats.output_std[i] * zd[i]),
        ))
    }

    /// Eval-mode prediction at every IMU timestamp of `traj`.
    pub fn predict_trajectory(&self, traj: &TrajectoryData) -> Result<Vec<(f64, [f64; OUTPUT_DIM])>> {
        let (start, duration) = (traj.start(), traj.duration());
        let rows: Vec<f64> = traj
            .imu
            .iter()
            .flat_map(|s| self.stats.input(s.t, start, duration, s))
            .collect();
        let x = Array2::from_shape_vec((traj.imu.len(), INPUT_DIM), rows).expect("row-major inputs");
        let tape = self.params.forward_batch(x.view(), None, None)?;
        Ok(traj
            .imu
            .iter()
            .zip(tape.output.rows())
            .map(|(s, z)| (s.t, self.stats.denormalize(&std::array::from_fn(|i| z[i]))))
            .collect())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_sizes: self.params.sizes(),
            seed: self.seed,
            network: self.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Loads a checkpoint and checks it against `expected_sizes` when given.
    pub fn load(path: &Path, expected_sizes: Option<&[usize]>) -> Result<Self> {
        let c = Checkpoint::load(path)?;
        if let Some(expected) = expected_sizes {
            if c.layer_sizes != expected {
                return Err(Error::config(
                    "checkpoint",
                    format!("layer sizes {:?} do not match expected {:?}", c.layer_sizes, expected),
                ));
            }
        }
        Ok(c.network)
    }
}

/// Versioned JSON checkpoint. Floats are written in shortest round-trip
/// form and parsed exactly, so save/load is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub network: Network,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(
                "checkpoint",
                format!("unsupported version {}", self.version),
            ));
        }
        self.network
            .params
            .check_shape()
            .map_err(|e| Error::config("checkpoint", e.to_string()))?;
        if self.network.params.sizes() != self.layer_sizes {
            return Err(Error::config("checkpoint", "recorded layer sizes disagree with the weights"));
        }
        if *self.layer_sizes.first().unwrap_or(&0) != INPUT_DIM || *self.layer_sizes.last().unwrap_or(&0) != OUTPUT_DIM {
            return Err(Error::config("checkpoint", "network must map 7 inputs to 9 outputs"));
        }
        if !self.network.params.is_finite() || !self.network.stats.is_finite() {
            return Err(Error::config("checkpoint", "non-finite parameters or statistics"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            reason: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }
}
