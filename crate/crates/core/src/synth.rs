//! Analytic ground-truth trajectories, inverse mechanization into ideal IMU
//! streams, and additive sensor error models.
//!
//! A profile is a constant-speed path whose heading and dive angle are
//! piecewise-smooth functions of time. Turns and dive transitions blend in
//! with a degree-11 polynomial whose rate profile `x⁵(1−x)⁵` is C⁴ at the
//! joins, so the generated IMU signals are smooth enough for fourth-order
//! integration.
//!
//! The profile geometry lives in the local tangent-plane chart (NED meters
//! about the origin). The NED velocity reported as ground truth is the one
//! consistent with the geodetic kinematics, i.e. the chart rate mapped back
//! through the radii of curvature, so forward mechanization of the
//! generated IMU reproduces the chart path without a modelling floor.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, GtSample};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::frames::{
    dcm_from_euler, earth_rate_n, gravity_n, transport_rate, Dcm, EarthModel, EulerAngles,
    GeodeticPosition, LocalChart,
};
use crate::mechanization::{ImuSample, NavState};

/// Standard gravity used to convert `mg`/`µg` specifications.
pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Constant turn rate `speed / radius`.
    Circle { radius: f64 },
    /// Straight legs joined by smooth 90° turns lasting `turn_time` seconds.
    RoundedRectangle {
        length: f64,
        width: f64,
        turn_time: f64,
    },
    /// Parallel legs joined by alternating smooth 180° turns.
    Lawnmower { leg_length: f64, turn_time: f64 },
    /// Level run, then a smooth transition to a constant dive angle
    /// (radians, positive nose-down).
    StraightDive {
        level_time: f64,
        dive_angle: f64,
        transition_time: f64,
    },
    /// Platform at rest.
    Static,
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Circle { .. } => "circle",
            Shape::RoundedRectangle { .. } => "rounded_rectangle",
            Shape::Lawnmower { .. } => "lawnmower",
            Shape::StraightDive { .. } => "straight_dive",
            Shape::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub shape: Shape,
    /// m/s; ignored for [`Shape::Static`].
    pub speed: f64,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub imu_rate: f64,
    /// Hz.
    pub gt_rate: f64,
    /// Heading at `t = 0`, radians.
    #[serde(default)]
    pub initial_heading: f64,
    pub origin: GeodeticPosition,
}

impl MotionProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        positive("duration", self.duration)?;
        positive("imu_rate", self.imu_rate)?;
        positive("gt_rate", self.gt_rate)?;
        if self.imu_rate < self.gt_rate {
            return Err(Error::config("gt_rate", "must not exceed imu_rate"));
        }
        if !self.initial_heading.is_finite() {
            return Err(Error::config("initial_heading", "must be finite"));
        }
        match self.shape {
            Shape::Static => {}
            Shape::Circle { radius } => {
                positive("speed", self.speed)?;
                positive("radius", radius)?;
            }
            Shape::RoundedRectangle {
                length,
                width,
                turn_time,
            } => {
                positive("speed", self.speed)?;
                positive("length", length)?;
                positive("width", width)?;
                positive("turn_time", turn_time)?;
            }
            Shape::Lawnmower {
                leg_length,
                turn_time,
            } => {
                positive("speed", self.speed)?;
                positive("leg_length", leg_length)?;
                positive("turn_time", turn_time)?;
            }
            Shape::StraightDive {
                level_time,
                dive_angle,
                transition_time,
            } => {
                positive("speed", self.speed)?;
                positive("level_time", level_time)?;
                positive("transition_time", transition_time)?;
                if !(dive_angle.abs() < 1.4) {
                    return Err(Error::config("dive_angle", "must lie within ±1.4 rad"));
                }
            }
        }
        LocalChart::new(self.origin, &EarthModel::wgs84())?;
        Ok(())
    }

    fn speed(&self) -> f64 {
        match self.shape {
            Shape::Static => 0.0,
            _ => self.speed,
        }
    }
}

/// Closed-form navigation state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticState {
    pub t: f64,
    /// Local NED chart position, meters.
    pub position: Vector3<f64>,
    /// Chart position rate, m/s.
    pub position_rate: Vector3<f64>,
    /// NED velocity, m/s.
    pub velocity: Vector3<f64>,
    /// NED acceleration `dv/dt`, m/s².
    pub acceleration: Vector3<f64>,
    pub euler: EulerAngles,
    /// `d(roll, pitch, yaw)/dt`, rad/s.
    pub euler_rate: Vector3<f64>,
}

impl AnalyticState {
    pub fn gt_sample(&self) -> GtSample {
        GtSample {
            t: self.t,
            position: self.position,
            velocity: self.velocity,
            euler: self.euler,
        }
    }
}

/// Rate profile of smooth blends; integrates to one over `[0, 1]`.
fn blend_rate(x: f64) -> f64 {
    2772.0 * (x * (1.0 - x)).powi(5)
}

/// `∫₀ˣ blend_rate`, expanded as `2772 Σ C(5,k)(−1)ᵏ x^{6+k} / (6+k)`.
fn blend(x: f64) -> f64 {
    const BINOM: [f64; 6] = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0];
    let mut acc = 0.0;
    for (k, c) in BINOM.iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * c * x.powi(6 + k as i32) / (6 + k) as f64;
    }
    2772.0 * acc
}

#[derive(Debug, Clone, Copy)]
enum AngleLaw {
    Hold,
    Rate(f64),
    Blend(f64),
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    duration: f64,
    heading0: f64,
    dive0: f64,
    heading: AngleLaw,
    dive: AngleLaw,
}

impl Segment {
    fn law(law: AngleLaw, start: f64, tau: f64, duration: f64) -> (f64, f64) {
        match law {
            AngleLaw::Hold => (start, 0.0),
            AngleLaw::Rate(r) => (start + r * tau, r),
            AngleLaw::Blend(delta) => {
                let x = (tau / duration).clamp(0.0, 1.0);
                (start + delta * blend(x), delta / duration * blend_rate(x))
            }
        }
    }

    /// Heading, heading rate, dive angle, dive rate at `t`.
    fn angles(&self, t: f64) -> [f64; 4] {
        let tau = t - self.t0;
        let (h, hr) = Self::law(self.heading, self.heading0, tau, self.duration);
        let (d, dr) = Self::law(self.dive, self.dive0, tau, self.duration);
        [h, hr, d, dr]
    }

    fn end_angles(&self) -> (f64, f64) {
        let a = self.angles(self.t0 + self.duration);
        (a[0], a[2])
    }
}

// 10-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// Knot spacing for cached chart positions.
const KNOT_SPACING: f64 = 0.25;

/// A profile compiled into segments with cached positions, ready for
/// repeated evaluation.
#[derive(Debug, Clone)]
pub struct TruthPath {
    profile: MotionProfile,
    chart: LocalChart,
    model: EarthModel,
    segments: Vec<Segment>,
    /// `(t, chart position, segment index)`.
    knots: Vec<(f64, Vector3<f64>, usize)>,
}

impl TruthPath {
    pub fn new(profile: &MotionProfile, model: &EarthModel) -> Result<Self> {
        profile.validate()?;
        let segments = build_segments(profile);
        let chart = LocalChart::new(profile.origin, model)?;
        let mut path = TruthPath {
            profile: *profile,
            chart,
            model: *model,
            segments,
            knots: Vec::new(),
        };
        path.build_knots();
        Ok(path)
    }

    pub fn profile(&self) -> &MotionProfile {
        &self.profile
    }

    pub fn chart(&self) -> &LocalChart {
        &self.chart
    }

    fn segment_index(&self, t: f64) -> usize {
        match self
            .segments
            .binary_search_by(|s| s.t0.partial_cmp(&t).expect("finite time"))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    fn chart_rate(&self, seg: usize, t: f64) -> Vector3<f64> {
        let [h, _, d, _] = self.segments[seg].angles(t);
        self.profile.speed() * Vector3::new(d.cos() * h.cos(), d.cos() * h.sin(), d.sin())
    }

    fn integrate(&self, seg: usize, a: f64, b: f64) -> Vector3<f64> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = Vector3::zeros();
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            acc += w * (self.chart_rate(seg, mid - half * x) + self.chart_rate(seg, mid + half * x));
        }
        acc * half
    }

    fn build_knots(&mut self) {
        let mut knots = Vec::new();
        let mut pos = Vector3::zeros();
        for (i, seg) in self.segments.iter().enumerate() {
            let end = seg.t0 + seg.duration;
            let mut t = seg.t0;
            knots.push((t, pos, i));
            while t < end {
                let next = (t + KNOT_SPACING).min(end);
                pos += self.integrate(i, t, next);
                t = next;
                if t < end {
                    knots.push((t, pos, i));
                }
            }
        }
        self.knots = knots;
    }

    fn chart_position(&self, t: f64) -> Vector3<f64> {
        let k = match self
            .knots
            .binary_search_by(|k| k.0.partial_cmp(&t).expect("finite time"))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let (t0, p0, seg) = self.knots[k];
        if t == t0 {
            p0
        } else {
            p0 + self.integrate(seg, t0, t)
        }
    }

    /// Exact state at time `t ∈ [0, duration]`.
    pub fn state(&self, t: f64) -> Result<AnalyticState> {
        if !(t >= 0.0 && t <= self.profile.duration) {
            return Err(Error::domain(format!(
                "time {t} outside profile span [0, {}]",
                self.profile.duration
            )));
        }
        let seg = self.segment_index(t);
        let [h, hr, d, dr] = self.segments[seg].angles(t);
        let s = self.profile.speed();
        let position = self.chart_position(t);
        let rate = s * Vector3::new(d.cos() * h.cos(), d.cos() * h.sin(), d.sin());
        let rate_dot = s * Vector3::new(
            -d.sin() * dr * h.cos() - d.cos() * h.sin() * hr,
            -d.sin() * dr * h.sin() + d.cos() * h.cos() * hr,
            d.cos() * dr,
        );

        // Push the time tangent through the chart-to-NED velocity map.
        let p: [Dual<1>; 3] = std::array::from_fn(|i| Dual {
            re: position[i],
            eps: [rate[i]],
        });
        let pd: [Dual<1>; 3] = std::array::from_fn(|i| Dual {
            re: rate[i],
            eps: [rate_dot[i]],
        });
        let v = self.chart.velocity_from_rate(&p, &pd);
        let velocity = Vector3::new(v[0].re, v[1].re, v[2].re);
        let acceleration = Vector3::new(v[0].eps[0], v[1].eps[0], v[2].eps[0]);

        let (euler, euler_rate) = if s == 0.0 {
            (
                EulerAngles::new(0.0, 0.0, self.profile.initial_heading),
                Vector3::zeros(),
            )
        } else {
            attitude_from_velocity(&velocity, &acceleration)
        };
        Ok(AnalyticState {
            t,
            position,
            position_rate: rate,
            velocity,
            acceleration,
            euler,
            euler_rate,
        })
    }

    pub fn nav_state(&self, t: f64) -> Result<NavState> {
        let st = self.state(t)?;
        Ok(NavState {
            position: self.chart.to_geodetic(&st.position)?,
            velocity: st.velocity,
            attitude: dcm_from_euler(&st.euler)?,
        })
    }

    /// Ideal IMU measurement at `t` (inverse mechanization).
    pub fn imu_at(&self, t: f64) -> Result<ImuSample> {
        let st = self.state(t)?;
        let geo = self.chart.to_geodetic(&st.position)?;
        let c = dcm_from_euler(&st.euler)?;
        Ok(inverse_mechanization_at(&st, &geo, &c, &self.model)?)
    }

    fn sample_times(&self, rate: f64) -> Vec<f64> {
        let n = (self.profile.duration * rate + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 / rate).collect()
    }

    pub fn imu_times(&self) -> Vec<f64> {
        self.sample_times(self.profile.imu_rate)
    }

    pub fn gt_times(&self) -> Vec<f64> {
        self.sample_times(self.profile.gt_rate)
    }

    pub fn imu(&self) -> Result<Vec<ImuSample>> {
        self.imu_times().into_iter().map(|t| self.imu_at(t)).collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<GtSample>> {
        self.gt_times()
            .into_iter()
            .map(|t| Ok(self.state(t)?.gt_sample()))
            .collect()
    }
}

/// Yaw follows the horizontal velocity heading, pitch the flight-path angle,
/// roll is zero.
fn attitude_from_velocity(v: &Vector3<f64>, a: &Vector3<f64>) -> (EulerAngles, Vector3<f64>) {
    let vh2 = v.x * v.x + v.y * v.y;
    let vh = vh2.sqrt();
    let yaw = v.y.atan2(v.x);
    let yaw_rate = (v.x * a.y - v.y * a.x) / vh2;
    let pitch = (-v.z).atan2(vh);
    let vh_dot = (v.x * a.x + v.y * a.y) / vh;
    let pitch_rate = (-a.z * vh + v.z * vh_dot) / (vh2 + v.z * v.z);
    (
        EulerAngles::new(0.0, pitch, yaw),
        Vector3::new(0.0, pitch_rate, yaw_rate),
    )
}

/// Body angular rate relative to the navigation frame from Euler rates.
pub fn body_rate_from_euler_rate(euler: &EulerAngles, rate: &Vector3<f64>) -> Vector3<f64> {
    let (sr, cr) = euler.roll.sin_cos();
    let (sp, cp) = euler.pitch.sin_cos();
    Vector3::new(
        rate.x - rate.z * sp,
        rate.y * cr + rate.z * sr * cp,
        -rate.y * sr + rate.z * cr * cp,
    )
}

fn inverse_mechanization_at(
    st: &AnalyticState,
    geo: &GeodeticPosition,
    c: &Dcm,
    model: &EarthModel,
) -> Result<ImuSample> {
    let w_ie = earth_rate_n(geo.lat, model);
    let w_en = transport_rate(&st.velocity, geo.lat, geo.height, model)?;
    let g = gravity_n(geo.lat, geo.height, model);
    let ct = c.transpose();
    let f = ct * (st.acceleration + (2.0 * w_ie + w_en).cross(&st.velocity) - g);
    let w = ct * (w_ie + w_en) + body_rate_from_euler_rate(&st.euler, &st.euler_rate);
    Ok(ImuSample::new(st.t, f, w))
}

fn build_segments(profile: &MotionProfile) -> Vec<Segment> {
    let total = profile.duration;
    let s = profile.speed();
    let mut out: Vec<Segment> = Vec::new();
    let push = |out: &mut Vec<Segment>, duration: f64, heading: AngleLaw, dive: AngleLaw| -> bool {
        let (t0, h0, d0) = match out.last() {
            Some(last) => {
                let (h, d) = last.end_angles();
                (last.t0 + last.duration, h, d)
            }
            None => (0.0, profile.initial_heading, 0.0),
        };
        if t0 >= total {
            return false;
        }
        out.push(Segment {
            t0,
            duration: duration.min(total - t0),
            heading0: h0,
            dive0: d0,
            heading,
            dive,
        });
        true
    };
    match profile.shape {
        Shape::Static => {
            push(&mut out, total, AngleLaw::Hold, AngleLaw::Hold);
        }
        Shape::Circle { radius } => {
            push(&mut out, total, AngleLaw::Rate(s / radius), AngleLaw::Hold);
        }
        Shape::RoundedRectangle {
            length,
            width,
            turn_time,
        } => {
            let quarter = std::f64::consts::FRAC_PI_2;
            'laps: loop {
                for leg in [length, width] {
                    if !push(&mut out, leg / s, AngleLaw::Hold, AngleLaw::Hold) {
                        break 'laps;
                    }
                    if !push(&mut out, turn_time, AngleLaw::Blend(quarter), AngleLaw::Hold) {
                        break 'laps;
                    }
                }
            }
        }
        Shape::Lawnmower {
            leg_length,
            turn_time,
        } => {
            let mut sign = 1.0;
            loop {
                if !push(&mut out, leg_length / s, AngleLaw::Hold, AngleLaw::Hold) {
                    break;
                }
                let turn = AngleLaw::Blend(sign * std::f64::consts::PI);
                if !push(&mut out, turn_time, turn, AngleLaw::Hold) {
                    break;
                }
                sign = -sign;
            }
        }
        Shape::StraightDive {
            level_time,
            dive_angle,
            transition_time,
        } => {
            push(&mut out, level_time, AngleLaw::Hold, AngleLaw::Hold);
            push(&mut out, transition_time, AngleLaw::Hold, AngleLaw::Blend(dive_angle));
            push(&mut out, f64::INFINITY, AngleLaw::Hold, AngleLaw::Hold);
        }
    }
    // A segment that fills the horizon must not end exactly on it twice.
    out.retain(|s| s.duration > 0.0);
    out
}

/// Closed-form state of `profile` at `t`.
pub fn analytic_state(profile: &MotionProfile, t: f64) -> Result<AnalyticState> {
    TruthPath::new(profile, &EarthModel::wgs84())?.state(t)
}

/// Ideal IMU stream along `profile` at its IMU rate.
pub fn inverse_mechanization(profile: &MotionProfile) -> Result<Vec<ImuSample>> {
    TruthPath::new(profile, &EarthModel::wgs84())?.imu()
}

/// Additive constant bias plus white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorErrorModel {
    /// m/s².
    pub accel_bias: Vector3<f64>,
    /// rad/s.
    pub gyro_bias: Vector3<f64>,
    /// m/s²/√Hz.
    pub accel_noise_density: f64,
    /// rad/s/√Hz.
    pub gyro_noise_density: f64,
    pub seed: u64,
}

impl SensorErrorModel {
    pub fn none() -> Self {
        Self {
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_noise_density: 0.0,
            gyro_noise_density: 0.0,
            seed: 0,
        }
    }

    /// Magnitudes of a consumer-grade wearable IMU: 0.03 mg and 10 °/h
    /// in-run bias, 120 µg/√Hz and 0.007 °/s/√Hz noise density.
    pub fn xsens_dot(seed: u64) -> Self {
        let accel_bias = 0.03e-3 * STANDARD_GRAVITY;
        let gyro_bias = (10.0f64 / 3600.0).to_radians();
        Self {
            accel_bias: Vector3::repeat(accel_bias),
            gyro_bias: Vector3::repeat(gyro_bias),
            accel_noise_density: 120e-6 * STANDARD_GRAVITY,
            gyro_noise_density: 0.007f64.to_radians(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accel_noise_density >= 0.0 && self.accel_noise_density.is_finite()) {
            return Err(Error::config("accel_noise_density", "must be non-negative"));
        }
        if !(self.gyro_noise_density >= 0.0 && self.gyro_noise_density.is_finite()) {
            return Err(Error::config("gyro_noise_density", "must be non-negative"));
        }
        if !(self.accel_bias.iter().chain(self.gyro_bias.iter()).all(|x| x.is_finite())) {
            return Err(Error::config("bias", "must be finite"));
        }
        Ok(())
    }
}

/// Adds bias and white noise with per-axis `σ = density·√rate`, where the
/// rate is the mean sample rate of `imu`.
pub fn corrupt(imu: &[ImuSample], model: &SensorErrorModel) -> Result<Vec<ImuSample>> {
    model.validate()?;
    if imu.len() < 2 {
        return Ok(imu.to_vec());
    }
    let span = imu[imu.len() - 1].t - imu[0].t;
    let rate = (imu.len() - 1) as f64 / span;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::input("IMU timestamps must span a positive interval"));
    }
    let sigma_a = model.accel_noise_density * rate.sqrt();
    let sigma_g = model.gyro_noise_density * rate.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut out = Vec::with_capacity(imu.len());
    for s in imu {
        let mut c = s.channels();
        for (i, x) in c.iter_mut().enumerate() {
            let (bias, sigma) = if i < 3 {
                (model.accel_bias[i], sigma_a)
            } else {
                (model.gyro_bias[i - 3], sigma_g)
            };
            // Draw unconditionally so the noise stream does not depend on
            // which axes are switched on.
            let n: f64 = StandardNormal.sample(&mut rng);
            if bias != 0.0 {
                *x += bias;
            }
            if sigma > 0.0 {
                *x += sigma * n;
            }
        }
        out.push(ImuSample::from_channels(s.t, c));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub imu: PathBuf,
    pub gt: PathBuf,
    pub metadata: PathBuf,
}

/// Writes `imu.csv`, `gt.csv` and `metadata.txt` for `profile` into `dir`.
pub fn emit_dataset(profile: &MotionProfile, errors: &SensorErrorModel, dir: &Path) -> Result<DatasetPaths> {
    let path = TruthPath::new(profile, &EarthModel::wgs84())?;
    let imu = corrupt(&path.imu()?, errors)?;
    let gt = path.ground_truth()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths {
        imu: dir.join(dataset::IMU_FILE),
        gt: dir.join(dataset::GT_FILE),
        metadata: dir.join(dataset::METADATA_FILE),
    };
    dataset::write_imu_csv(&paths.imu, &imu)?;
    dataset::write_gt_csv(&paths.gt, &gt)?;
    dataset::write_metadata(&paths.metadata, &profile.origin)?;
    Ok(paths)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::euler_from_dcm;

    fn origin() -> GeodeticPosition {
        GeodeticPosition::new(32.8f64.to_radians(), 35.0f64.to_radians(), 20.0).unwrap()
    }

    #[test]
    fn quadrature_is_exact_for_degree_19() {
        // Symmetric rule on [-1, 1]; the integral of x^k is 2/(k+1) for even k.
        for k in (0..20).step_by(2) {
            let sum: f64 = GL_NODES
                .iter()
                .zip(GL_WEIGHTS)
                .map(|(x, w)| 2.0 * w * x.powi(k))
                .sum();
            assert!((sum - 2.0 / (k as f64 + 1.0)).abs() < 1e-15, "degree {k}: {sum}");
        }
    }

    #[test]
    fn straight_leg_position_matches_rate() {
        let p = MotionProfile {
            shape: Shape::Lawnmower {
                leg_length: 40.0,
                turn_time: 6.0,
            },
            duration: 10.0,
            ..circle()
        };
        let path = TruthPath::new(&p, &EarthModel::wgs84()).unwrap();
        let s = path.state(10.0).unwrap();
        assert!((s.position - 10.0 * s.position_rate).norm() < 1e-12);
    }

    fn circle() -> MotionProfile {
        MotionProfile {
            shape: Shape::Circle { radius: 25.0 },
            speed: 2.5,
            duration: 60.0,
            imu_rate: 120.0,
            gt_rate: 5.0,
            initial_heading: 0.3,
            origin: origin(),
        }
    }

    fn all_profiles() -> Vec<MotionProfile> {
        let base = circle();
        vec![
            base,
            MotionProfile {
                shape: Shape::RoundedRectangle {
                    length: 30.0,
                    width: 15.0,
                    turn_time: 4.0,
                },
                ..base
            },
            MotionProfile {
                shape: Shape::Lawnmower {
                    leg_length: 40.0,
                    turn_time: 6.0,
                },
                ..base
            },
            MotionProfile {
                shape: Shape::StraightDive {
                    level_time: 10.0,
                    dive_angle: 0.3,
                    transition_time: 5.0,
                },
                ..base
            },
        ]
    }

    #[test]
    fn blend_integrates_blend_rate() {
        assert!((blend(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(blend(0.0), 0.0);
        let h = 1e-6;
        for x in [0.1, 0.37, 0.5, 0.9] {
            let fd = (blend(x + h) - blend(x - h)) / (2.0 * h);
            assert!((fd - blend_rate(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn circle_speed_and_centripetal_acceleration() {
        let p = circle();
        let path = TruthPath::new(&p, &EarthModel::wgs84()).unwrap();
        for k in 0..=60 {
            let st = path.state(k as f64).unwrap();
            assert!((st.position_rate.norm() - 2.5).abs() < 1e-12);
            assert!((st.velocity.norm() - 2.5).abs() < 1e-5);
            let a_h = st.acceleration.xy().norm();
            assert!((a_h - 2.5 * 2.5 / 25.0).abs() < 1e-6, "{a_h}");
        }
    }

    #[test]
    fn starts_at_origin() {
        for p in all_profiles() {
            let st = analytic_state(&p, 0.0).unwrap();
            assert_eq!(st.position, Vector3::zeros());
        }
    }

    #[test]
    fn time_outside_span_is_rejected() {
        assert!(analytic_state(&circle(), -0.1).is_err());
        assert!(analytic_state(&circle(), 60.5).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let dt = 1e-4;
        for p in all_profiles() {
            let path = TruthPath::new(&p, &EarthModel::wgs84()).unwrap();
            for &t in &[1.3, 9.99, 12.5, 17.2, 33.3, 47.0, 58.0] {
                let (a, b, c) = (
                    path.state(t - dt).unwrap(),
                    path.state(t).unwrap(),
                    path.state(t + dt).unwrap(),
                );
                let fd_p = (c.position - a.position) / (2.0 * dt);
                assert!((fd_p - b.position_rate).amax() < 1e-6, "{} p at {t}", p.shape.name());
                let fd_v = (c.velocity - a.velocity) / (2.0 * dt);
                assert!((fd_v - b.acceleration).amax() < 1e-6, "{} v at {t}", p.shape.name());
                let eu = |s: &AnalyticState| Vector3::new(s.euler.roll, s.euler.pitch, s.euler.yaw);
                let d = eu(&c) - eu(&a);
                let d = d.map(crate::frames::wrap_angle) / (2.0 * dt);
                assert!((d - b.euler_rate).amax() < 1e-6, "{} eta at {t}", p.shape.name());
            }
        }
    }

    #[test]
    fn rectangle_closes_after_one_lap() {
        let p = MotionProfile {
            shape: Shape::RoundedRectangle {
                length: 30.0,
                width: 15.0,
                turn_time: 4.0,
            },
            speed: 2.5,
            duration: 2.0 * (30.0 + 15.0) / 2.5 + 16.0,
            ..circle()
        };
        let path = TruthPath::new(&p, &EarthModel::wgs84()).unwrap();
        let end = path.state(p.duration).unwrap();
        // Each smooth quarter turn is symmetric, so a full lap returns to the start.
        assert!(end.position.norm() < 1e-9, "{:?}", end.position);
    }

    #[test]
    fn static_profile_measures_gravity_and_earth_rate() {
        let p = MotionProfile {
            shape: Shape::Static,
            speed: 0.0,
            ..circle()
        };
        let path = TruthPath::new(&p, &EarthModel::wgs84()).unwrap();
        let imu = path.imu_at(3.0).unwrap();
        let g = gravity_n(p.origin.lat, p.origin.height, &EarthModel::wgs84()).z;
        assert!((imu.specific_force - Vector3::new(0.0, 0.0, -g)).amax() < 1e-12);
        let c = dcm_from_euler(&EulerAngles::new(0.0, 0.0, 0.3)).unwrap();
        let expected = c.transpose() * earth_rate_n(p.origin.lat, &EarthModel::wgs84());
        assert!((imu.angular_rate - expected).amax() < 1e-18);
    }

    #[test]
    fn level_circle_specific_force_has_centripetal_term() {
        let path = TruthPath::new(&circle(), &EarthModel::wgs84()).unwrap();
        let imu = path.imu_at(10.0).unwrap();
        assert!((imu.specific_force.xy().norm() - 0.25).abs() < 1e-3);
        // Vertical channel balances gravity in the navigation frame.
        let st = path.state(10.0).unwrap();
        let geo = path.chart().to_geodetic(&st.position).unwrap();
        let c = dcm_from_euler(&st.euler).unwrap();
        let f_n = c.matrix() * imu.specific_force;
        let model = EarthModel::wgs84();
        let w_ie = earth_rate_n(geo.lat, &model);
        let w_en = transport_rate(&st.velocity, geo.lat, geo.height, &model).unwrap();
        let expected =
            st.acceleration.z + (2.0 * w_ie + w_en).cross(&st.velocity).z - gravity_n(geo.lat, geo.height, &model).z;
        assert!((f_n.z - expected).abs() < 1e-9);
        assert!(st.velocity.z.abs() < 1e-15);
    }

    #[test]
    fn nav_state_matches_analytic_attitude() {
        let p = &all_profiles()[3];
        let path = TruthPath::new(p, &EarthModel::wgs84()).unwrap();
        let ns = path.nav_state(30.0).unwrap();
        let e = euler_from_dcm(&ns.attitude).unwrap();
        assert!((e.pitch + 0.3).abs() < 1e-6);
    }

    #[test]
    fn zero_error_model_is_identity() {
        let imu = inverse_mechanization(&circle()).unwrap();
        let out = corrupt(&imu, &SensorErrorModel::none()).unwrap();
        for (a, b) in imu.iter().zip(&out) {
            for (x, y) in a.channels().iter().zip(b.channels()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn gyro_bias_shifts_the_mean_exactly() {
        let imu = inverse_mechanization(&circle()).unwrap();
        let b = 4.85e-5;
        let model = SensorErrorModel {
            gyro_bias: Vector3::new(0.0, 0.0, b),
            ..SensorErrorModel::none()
        };
        let out = corrupt(&imu, &model).unwrap();
        let mean: f64 = imu
            .iter()
            .zip(&out)
            .map(|(a, o)| o.angular_rate.z - a.angular_rate.z)
            .sum::<f64>()
            / imu.len() as f64;
        assert!((mean - b).abs() < 1e-15);
    }

    #[test]
    fn noise_standard_deviation_matches_density() {
        let rate = 100.0;
        let z = Vector3::zeros();
        let imu: Vec<_> = (0..100_000).map(|k| ImuSample::new(k as f64 / rate, z, z)).collect();
        let d = 1.2e-3;
        let model = SensorErrorModel {
            accel_noise_density: d,
            seed: 11,
            ..SensorErrorModel::none()
        };
        let out = corrupt(&imu, &model).unwrap();
        let xs: Vec<f64> = out.iter().map(|s| s.specific_force.x).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let expected = d * rate.sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.02);
        assert_eq!(out, corrupt(&imu, &model).unwrap());
    }

    #[test]
    fn xsens_conversions() {
        let m = SensorErrorModel::xsens_dot(0);
        assert!((m.accel_bias.x - 2.94e-4).abs() < 1e-6);
        assert!((m.gyro_bias.x - 4.85e-5).abs() < 1e-7);
        assert!((m.gyro_noise_density - 1.22e-4).abs() < 1e-6);
        assert!((m.accel_noise_density - 1.18e-3).abs() < 1e-5);
    }

    #[test]
    fn row_counts() {
        let p = MotionProfile {
            imu_rate: 120.0,
            gt_rate: 5.0,
            duration: 60.0,
            ..circle()
        };
        let path = TruthPath::new(&p, &EarthModel::wgs84()).unwrap();
        assert_eq!(path.imu_times().len(), 7201);
        assert_eq!(path.gt_times().len(), 301);
    }

    #[test]
    fn invalid_profiles_name_the_field() {
        let bad = MotionProfile {
            gt_rate: 500.0,
            ..circle()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("gt_rate"));
        let bad = MotionProfile {
            shape: Shape::Circle { radius: -1.0 },
            ..circle()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("radius"));
    }
}
