//! Composite training objective: weighted data misfit plus strapdown
//! residuals at collocation times.
//!
//! Network positions live in each trajectory's local NED chart, so the
//! position residual compares `dp̂/dt` with the chart image of the NED
//! velocity rather than with geodetic rates. Latitude and height entering
//! the radii, gravity, earth rate and transport rate are those of the
//! predicted position, which keeps every residual a smooth function of the
//! network output.
//!
//! Residuals are written once over [`Real`]. Evaluated on `Dual<18>` seeded
//! with the nine outputs and their nine time derivatives, one pass yields a
//! point's loss and its adjoints for the reverse pass.

use std::cell::Cell;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignedSample, GtSample, TrainingSet, TrajectoryData};
use crate::dual::v3::{self, M3, V3};
use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::frames::{
    dcm_generic, dcm_partials_generic, earth_rate_generic, gravity_generic, transport_rate_generic,
    wrap_angle, LocalChart,
};
use crate::mechanization::ImuSample;
use crate::network::{Network, NetworkParams, StatePrediction, INPUT_DIM, OUTPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_p: f64,
    pub w_v: f64,
    pub w_eta: f64,
    pub lambda_data: f64,
    pub lambda_phys: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_p: 1.0,
            w_v: 1.0,
            w_eta: 1.0,
            lambda_data: 1.0,
            lambda_phys: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_p", self.w_p),
            ("w_v", self.w_v),
            ("w_eta", self.w_eta),
            ("lambda_data", self.lambda_data),
            ("lambda_phys", self.lambda_phys),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        if self.lambda_data == 0.0 && self.lambda_phys == 0.0 {
            return Err(Error::config("lambda_data", "lambda_data and lambda_phys cannot both be zero"));
        }
        if self.lambda_data > 0.0 && self.w_p == 0.0 && self.w_v == 0.0 && self.w_eta == 0.0 {
            return Err(Error::config("w_p", "data weights cannot all be zero"));
        }
        Ok(())
    }
}

/// Data misfit of one prediction and its gradient with respect to the
/// prediction. Angle errors are wrapped to `(−π, π]`.
pub fn data_point(pred: &[f64; OUTPUT_DIM], gt: &GtSample, w: &LossWeights) -> (f64, [f64; OUTPUT_DIM]) {
    let target = gt.state_vector();
    let mut loss = 0.0;
    let mut grad = [0.0; OUTPUT_DIM];
    for i in 0..OUTPUT_DIM {
        let (weight, e) = match i {
            0..=2 => (w.w_p, pred[i] - target[i]),
            3..=5 => (w.w_v, pred[i] - target[i]),
            _ => (w.w_eta, wrap_angle(pred[i] - target[i])),
        };
        loss += weight * e * e;
        grad[i] = 2.0 * weight * e;
    }
    (loss, grad)
}

/// `(1/N) Σ [w_p‖p̂−p‖² + w_v‖v̂−v‖² + w_η‖wrap(η̂−η)‖²]`.
pub fn data_loss(pred: &[[f64; OUTPUT_DIM]], gt: &[GtSample], w: &LossWeights) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::input("data loss over an empty batch"));
    }
    if pred.len() != gt.len() {
        return Err(Error::input(format!(
            "{} predictions for {} ground-truth samples",
            pred.len(),
            gt.len()
        )));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| data_point(p, g, w).0).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocationPoint {
    /// Index into [`TrainingSet::trajectories`].
    pub trajectory: usize,
    pub t: f64,
    /// IMU linearly interpolated at `t`.
    pub imu: ImuSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub points: Vec<CollocationPoint>,
}

/// Draws `n_p` times uniformly over the concatenated spans of all
/// trajectories.
pub fn sample_collocation(set: &TrainingSet, n_p: usize, rng: &mut impl Rng) -> Result<CollocationBatch> {
    if n_p == 0 {
        return Err(Error::config("n_collocation", "must be at least 1"));
    }
    let durations: Vec<f64> = set.trajectories.iter().map(TrajectoryData::duration).collect();
    let total: f64 = durations.iter().sum();
    let points = (0..n_p)
        .map(|_| {
            let mut s = rng.gen::<f64>() * total;
            let mut k = 0;
            while k + 1 < durations.len() && s >= durations[k] {
                s -= durations[k];
                k += 1;
            }
            let tr = &set.trajectories[k];
            let t = (tr.start() + s).min(tr.end());
            CollocationPoint {
                trajectory: k,
                t,
                imu: tr.imu_at(t),
            }
        })
        .collect();
    Ok(CollocationBatch { points })
}

/// The three strapdown residuals at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals<T> {
    pub r_p: V3<T>,
    pub r_v: V3<T>,
    pub r_eta: M3<T>,
}

impl<T: Real> Residuals<T> {
    /// `‖r_p‖²`, `‖r_v‖²`, `‖r_η‖²_F`.
    pub fn squared_norms(&self) -> [T; 3] {
        [v3::norm_sq(self.r_p), v3::norm_sq(self.r_v), v3::frob_sq(&self.r_eta)]
    }
}

thread_local! {
    static RESIDUAL_EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of residual evaluations performed on the calling thread.
pub fn residual_evaluations() -> u64 {
    RESIDUAL_EVALUATIONS.with(Cell::get)
}

/// Residuals of a predicted state `y = (p, v, η)` with time derivative
/// `y_dot` against the IMU sample at the same time.
///
/// In 2D mode the down channels of `r_p` and `r_v` and the row and column of
/// `r_η` that involve the vertical axis are zeroed.
pub fn residuals<T: Real>(
    y: &[T; OUTPUT_DIM],
    y_dot: &[T; OUTPUT_DIM],
    imu: &ImuSample,
    chart: &LocalChart,
    mode_2d: bool,
) -> Residuals<T> {
    RESIDUAL_EVALUATIONS.with(|c| c.set(c.get() + 1));
    let p = [y[0], y[1], y[2]];
    let v = [y[3], y[4], y[5]];
    let eta = [y[6], y[7], y[8]];
    let p_dot = [y_dot[0], y_dot[1], y_dot[2]];
    let v_dot = [y_dot[3], y_dot[4], y_dot[5]];
    let eta_dot = [y_dot[6], y_dot[7], y_dot[8]];
    let model = chart.model();
    let (lat, h) = chart.lat_height(&p);

    let mut r_p = v3::sub(p_dot, chart.position_rate(&p, &v));

    let c = dcm_generic(eta);
    let w_ie = earth_rate_generic(lat, model);
    let w_en = transport_rate_generic(v, lat, h, model);
    let w_in = v3::add(w_ie, w_en);
    let g = [T::cst(0.0), T::cst(0.0), gravity_generic(lat, h, model)];
    let f_n = v3::mat_cvec(&c, imu.specific_force.into());
    let coriolis = v3::cross(v3::add(v3::add(w_ie, w_ie), w_en), v);
    let mut r_v = v3::sub(v_dot, v3::add(v3::sub(f_n, coriolis), g));

    let partials = dcm_partials_generic(eta);
    let mut r_eta = [[T::cst(0.0); 3]; 3];
    let w_b: [f64; 3] = imu.angular_rate.into();
    let omega_ib = v3::skew(w_b.map(T::cst));
    let c_omega = v3::mat_mul(&c, &omega_ib);
    let omega_c = v3::mat_mul(&v3::skew(w_in), &c);
    for i in 0..3 {
        for j in 0..3 {
            let c_dot = partials[0][i][j] * eta_dot[0] + partials[1][i][j] * eta_dot[1] + partials[2][i][j] * eta_dot[2];
            r_eta[i][j] = c_dot - (c_omega[i][j] - omega_c[i][j]);
        }
    }

    if mode_2d {
        let z = T::cst(0.0);
        r_p[2] = z;
        r_v[2] = z;
        for k in 0..3 {
            r_eta[2][k] = z;
            r_eta[k][2] = z;
        }
    }
    Residuals { r_p, r_v, r_eta }
}

/// `r_p` alone for NED velocity `v` at chart point `p`.
pub fn position_residual(p_dot: &[f64; 3], v: &[f64; 3], p: &[f64; 3], chart: &LocalChart) -> [f64; 3] {
    v3::sub(*p_dot, chart.position_rate(p, v))
}

fn join(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; OUTPUT_DIM] {
    [a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2]]
}

/// `r_v` for state `(p, v, η)` with velocity rate `v_dot` and measured
/// specific force `imu.specific_force`.
pub fn velocity_residual(
    v_dot: &[f64; 3],
    p: &[f64; 3],
    v: &[f64; 3],
    eta: &[f64; 3],
    imu: &ImuSample,
    chart: &LocalChart,
) -> [f64; 3] {
    let r = residuals(&join(*p, *v, *eta), &join([0.0; 3], *v_dot, [0.0; 3]), imu, chart, false);
    r.r_v
}

/// `r_η` for state `(p, v, η)` with Euler rates `eta_dot` and measured
/// angular rate `imu.angular_rate`.
pub fn orientation_residual(
    eta_dot: &[f64; 3],
    p: &[f64; 3],
    v: &[f64; 3],
    eta: &[f64; 3],
    imu: &ImuSample,
    chart: &LocalChart,
) -> [[f64; 3]; 3] {
    let r = residuals(&join(*p, *v, *eta), &join([0.0; 3], [0.0; 3], *eta_dot), imu, chart, false);
    r.r_eta
}

/// Physics loss of one point: per-term squared norms and the gradient of
/// their sum with respect to the state and its time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPhysics {
    pub terms: [f64; 3],
    pub grad_y: [f64; OUTPUT_DIM],
    pub grad_y_dot: [f64; OUTPUT_DIM],
}

pub fn physics_point(
    y: &[f64; OUTPUT_DIM],
    y_dot: &[f64; OUTPUT_DIM],
    imu: &ImuSample,
    chart: &LocalChart,
    mode_2d: bool,
) -> PointPhysics {
    let yd: [Dual<18>; OUTPUT_DIM] = std::array::from_fn(|i| Dual::variable(y[i], i));
    let ydd: [Dual<18>; OUTPUT_DIM] = std::array::from_fn(|i| Dual::variable(y_dot[i], OUTPUT_DIM + i));
    let norms = residuals(&yd, &ydd, imu, chart, mode_2d).squared_norms();
    let total = norms[0] + norms[1] + norms[2];
    PointPhysics {
        terms: norms.map(|n| n.re),
        grad_y: std::array::from_fn(|i| total.eps[i]),
        grad_y_dot: std::array::from_fn(|i| total.eps[OUTPUT_DIM + i]),
    }
}

/// Anything that yields a physical state and its time derivative at a time
/// of a trajectory.
pub trait StateModel {
    fn state_with_rate(&self, trajectory: &TrajectoryData, t: f64, imu: &ImuSample) -> Result<StatePrediction>;
}

impl StateModel for Network {
    fn state_with_rate(&self, trajectory: &TrajectoryData, t: f64, imu: &ImuSample) -> Result<StatePrediction> {
        self.predict_with_rate(t, trajectory.start(), trajectory.duration(), imu)
    }
}

/// Mean residual energies over a collocation batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicsLoss {
    pub r_p: f64,
    pub r_v: f64,
    pub r_eta: f64,
}

impl PhysicsLoss {
    pub fn total(&self) -> f64 {
        self.r_p + self.r_v + self.r_eta
    }
}

/// Per-trajectory charts, with the origin of each trajectory's GT frame.
pub fn charts(set: &TrainingSet) -> Result<Vec<LocalChart>> {
    set.trajectories
        .iter()
        .map(|t| LocalChart::new(t.origin, &crate::frames::EarthModel::wgs84()))
        .collect()
}

/// `(1/N_p) Σ (‖r_p‖² + ‖r_v‖² + ‖r_η‖²_F)` with each term reported.
pub fn physics_loss(model: &impl StateModel, set: &TrainingSet, batch: &CollocationBatch, mode_2d: bool) -> Result<PhysicsLoss> {
    if batch.points.is_empty() {
        return Err(Error::input("physics loss over an empty batch"));
    }
    let charts = charts(set)?;
    let mut acc = [0.0; 3];
    for pt in &batch.points {
        let tr = set
            .trajectories
            .get(pt.trajectory)
            .ok_or_else(|| Error::input(format!("collocation point names trajectory {}", pt.trajectory)))?;
        let (y, y_dot) = model.state_with_rate(tr, pt.t, &pt.imu)?;
        let r = residuals(&y, &y_dot, &pt.imu, &charts[pt.trajectory], mode_2d).squared_norms();
        for k in 0..3 {
            acc[k] += r[k];
        }
    }
    let n = batch.points.len() as f64;
    let out = PhysicsLoss {
        r_p: acc[0] / n,
        r_v: acc[1] / n,
        r_eta: acc[2] / n,
    };
    if !out.total().is_finite() {
        return Err(Error::Numerical("non-finite physics loss".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub phys: f64,
    pub phys_terms: PhysicsLoss,
    pub total: f64,
}

pub fn total_loss(data: f64, phys: PhysicsLoss, w: &LossWeights) -> LossBreakdown {
    let p = phys.total();
    LossBreakdown {
        data,
        phys: p,
        phys_terms: phys,
        total: w.lambda_data * data + w.lambda_phys * p,
    }
}

/// Network inputs and time tangents for a list of `(trajectory, t, imu)`.
fn inputs(
    net: &Network,
    set: &TrainingSet,
    rows: impl ExactSizeIterator<Item = (usize, f64, ImuSample)>,
) -> (Array2<f64>, Array2<f64>) {
    let n = rows.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut tangent = Array2::zeros((n, INPUT_DIM));
    for (r, (k, t, imu)) in rows.enumerate() {
        let tr = &set.trajectories[k];
        let u = net.stats.input(t, tr.start(), tr.duration(), &imu);
        for (c, v) in u.iter().enumerate() {
            x[[r, c]] = *v;
        }
        tangent[[r, 0]] = 1.0 / tr.duration();
    }
    (x, tangent)
}

/// Mean data loss over `samples` and its parameter gradient scaled by
/// `scale`, accumulated into `grads`. `masks` applies dropout.
pub fn data_loss_and_grad(
    net: &Network,
    set: &TrainingSet,
    samples: &[(usize, AlignedSample)],
    masks: Option<&[Array2<f64>]>,
    w: &LossWeights,
    scale: f64,
    grads: &mut NetworkParams,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("data loss over an empty batch"));
    }
    let (x, _) = inputs(net, set, samples.iter().map(|(k, a)| (*k, a.t, a.imu)));
    let tape = net.params.forward_batch(x.view(), None, masks)?;
    let n = samples.len() as f64;
    let mut g = Array2::zeros(tape.output.raw_dim());
    let mut sum = 0.0;
    for (r, (_, a)) in samples.iter().enumerate() {
        let z: [f64; OUTPUT_DIM] = std::array::from_fn(|i| tape.output[[r, i]]);
        let (l, gy) = data_point(&net.stats.denormalize(&z), &a.gt, w);
        sum += l;
        for i in 0..OUTPUT_DIM {
            g[[r, i]] = scale / n * gy[i] * net.stats.output_std[i];
        }
    }
    let loss = sum / n;
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite data loss".into()));
    }
    if scale != 0.0 {
        tape.backward(&net.params, g.view(), None, grads)?;
    }
    Ok(loss)
}

/// Mean physics loss over `points` (eval-mode network) and its parameter
/// gradient scaled by `scale`, accumulated into `grads`.
pub fn physics_loss_and_grad(
    net: &Network,
    set: &TrainingSet,
    charts: &[LocalChart],
    points: &[CollocationPoint],
    mode_2d: bool,
    scale: f64,
    grads: &mut NetworkParams,
) -> Result<PhysicsLoss> {
    if points.is_empty() {
        return Err(Error::input("physics loss over an empty batch"));
    }
    let (x, tangent) = inputs(net, set, points.iter().map(|p| (p.trajectory, p.t, p.imu)));
    let tape = net.params.forward_batch(x.view(), Some(tangent.view()), None)?;
    let z_dot = tape.output_dot.as_ref().expect("tangent requested");
    let std = &net.stats.output_std;
    let n = points.len() as f64;
    let mut g = Array2::zeros(tape.output.raw_dim());
    let mut g_dot = Array2::zeros(tape.output.raw_dim());
    let mut acc = [0.0; 3];
    for (r, pt) in points.iter().enumerate() {
        let z: [f64; OUTPUT_DIM] = std::array::from_fn(|i| tape.output[[r, i]]);
        let y = net.stats.denormalize(&z);
        let y_dot: [f64; OUTPUT_DIM] = std::array::from_fn(|i| std[i] * z_dot[[r, i]]);
        let pp = physics_point(&y, &y_dot, &pt.imu, &charts[pt.trajectory], mode_2d);
        for k in 0..3 {
            acc[k] += pp.terms[k];
        }
        for i in 0..OUTPUT_DIM {
            g[[r, i]] = scale / n * pp.grad_y[i] * std[i];
            g_dot[[r, i]] = scale / n * pp.grad_y_dot[i] * std[i];
        }
    }
    let out = PhysicsLoss {
        r_p: acc[0] / n,
        r_v: acc[1] / n,
        r_eta: acc[2] / n,
    };
    if !out.total().is_finite() {
        return Err(Error::Numerical("non-finite physics loss".into()));
    }
    if scale != 0.0 {
        tape.backward(&net.params, g.view(), Some(g_dot.view()), grads)?;
    }
    Ok(out)
}
