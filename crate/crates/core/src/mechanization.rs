//! Strapdown mechanization in the local-level NED frame and the pure
//! inertial dead-reckoning baseline built on it.

use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{
    d_matrix, earth_rate_n, gravity_n, skew, transport_rate, Dcm, EarthModel, GeodeticPosition,
    LocalChart,
};

/// Largest integration step accepted by [`integrate_step`].
pub const MAX_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// Specific force in the body frame, m/s².
    pub specific_force: Vector3<f64>,
    /// Angular rate of the body w.r.t. inertial space, body frame, rad/s.
    pub angular_rate: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, specific_force: Vector3<f64>, angular_rate: Vector3<f64>) -> Self {
        Self {
            t,
            specific_force,
            angular_rate,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.specific_force.iter().all(|x| x.is_finite())
            && self.angular_rate.iter().all(|x| x.is_finite())
    }

    /// `[fx, fy, fz, wx, wy, wz]`.
    pub fn channels(&self) -> [f64; 6] {
        let (f, w) = (&self.specific_force, &self.angular_rate);
        [f.x, f.y, f.z, w.x, w.y, w.z]
    }

    pub fn from_channels(t: f64, c: [f64; 6]) -> Self {
        Self::new(t, Vector3::new(c[0], c[1], c[2]), Vector3::new(c[3], c[4], c[5]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub position: GeodeticPosition,
    /// NED velocity, m/s.
    pub velocity: Vector3<f64>,
    pub attitude: Dcm,
}

/// Time derivative of a [`NavState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavDerivative {
    /// `(φ̇, λ̇, ḣ)` in rad/s, rad/s, m/s.
    pub position_rate: Vector3<f64>,
    pub velocity_rate: Vector3<f64>,
    pub attitude_rate: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::config("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        })
    }
}

/// Right-hand side of the strapdown equations.
pub fn nav_derivative(state: &NavState, imu: &ImuSample, model: &EarthModel) -> Result<NavDerivative> {
    let lat = state.position.lat;
    let h = state.position.height;
    let v = &state.velocity;
    let c = state.attitude.matrix();

    let w_ie = earth_rate_n(lat, model);
    let w_en = transport_rate(v, lat, h, model)?;
    let position_rate = d_matrix(lat, h, model)? * v;
    let velocity_rate =
        c * imu.specific_force - (2.0 * w_ie + w_en).cross(v) + gravity_n(lat, h, model);
    let attitude_rate = c * skew(&imu.angular_rate) - skew(&(w_ie + w_en)) * c;

    Ok(NavDerivative {
        position_rate,
        velocity_rate,
        attitude_rate,
    })
}

fn advance(state: &NavState, d: &NavDerivative, dt: f64) -> Result<NavState> {
    let p = &state.position;
    Ok(NavState {
        position: GeodeticPosition::new(
            p.lat + d.position_rate.x * dt,
            p.lon + d.position_rate.y * dt,
            p.height + d.position_rate.z * dt,
        )?,
        velocity: state.velocity + d.velocity_rate * dt,
        attitude: Dcm::from_matrix_unchecked(state.attitude.matrix() + d.attitude_rate * dt),
    })
}

fn check_step(dt: f64) -> Result<()> {
    // Timestamps like k / 10 differ by slightly more than 0.1 in floating
    // point; such steps are still nominally at the limit.
    if !(dt > 0.0 && dt <= MAX_STEP * (1.0 + 1e-9)) {
        return Err(Error::domain(format!(
            "integration step {dt} outside (0, {MAX_STEP}]"
        )));
    }
    Ok(())
}

/// One step with the IMU given at the start, midpoint and end of the
/// interval. Euler uses only the start sample.
fn step_with_samples(
    state: &NavState,
    dt: f64,
    scheme: Scheme,
    start: &ImuSample,
    mid: &ImuSample,
    end: &ImuSample,
    model: &EarthModel,
) -> Result<NavState> {
    check_step(dt)?;
    let next = match scheme {
        Scheme::Euler => {
            let k1 = nav_derivative(state, start, model)?;
            advance(state, &k1, dt)?
        }
        Scheme::Rk4 => {
            let k1 = nav_derivative(state, start, model)?;
            let k2 = nav_derivative(&advance(state, &k1, dt / 2.0)?, mid, model)?;
            let k3 = nav_derivative(&advance(state, &k2, dt / 2.0)?, mid, model)?;
            let k4 = nav_derivative(&advance(state, &k3, dt)?, end, model)?;
            let blend = NavDerivative {
                position_rate: (k1.position_rate
                    + 2.0 * k2.position_rate
                    + 2.0 * k3.position_rate
                    + k4.position_rate)
                    / 6.0,
                velocity_rate: (k1.velocity_rate
                    + 2.0 * k2.velocity_rate
                    + 2.0 * k3.velocity_rate
                    + k4.velocity_rate)
                    / 6.0,
                attitude_rate: (k1.attitude_rate
                    + 2.0 * k2.attitude_rate
                    + 2.0 * k3.attitude_rate
                    + k4.attitude_rate)
                    / 6.0,
            };
            advance(state, &blend, dt)?
        }
    };
    Ok(NavState {
        attitude: next.attitude.orthonormalized(),
        ..next
    })
}

/// Advances `state` by `dt` holding `imu` constant over the step.
pub fn integrate_step(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    scheme: Scheme,
    model: &EarthModel,
) -> Result<NavState> {
    step_with_samples(state, dt, scheme, imu, imu, imu, model)
}

/// Lagrange interpolation of the IMU channels at `t` through up to four
/// samples bracketing interval `k` (`samples[k].t ≤ t ≤ samples[k+1].t`).
fn interpolate_imu(samples: &[ImuSample], k: usize, t: f64) -> ImuSample {
    let lo = k.saturating_sub(1).min(samples.len().saturating_sub(4));
    let hi = (lo + 3).min(samples.len() - 1);
    let window = &samples[lo..=hi];
    let mut acc = [0.0; 6];
    for (i, si) in window.iter().enumerate() {
        let mut weight = 1.0;
        for (j, sj) in window.iter().enumerate() {
            if i != j {
                weight *= (t - sj.t) / (si.t - sj.t);
            }
        }
        for (a, c) in acc.iter_mut().zip(si.channels()) {
            *a += weight * c;
        }
    }
    ImuSample::from_channels(t, acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadReckonOptions {
    pub scheme: Scheme,
    /// Planar vehicle: vertical velocity forced to zero, height held.
    pub mode_2d: bool,
    pub model: EarthModel,
}

impl Default for DeadReckonOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk4,
            mode_2d: false,
            model: EarthModel::wgs84(),
        }
    }
}

/// Frame in which trajectory positions are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// `(lat rad, lon rad, h m)`.
    Geodetic,
    /// `(north m, east m, down m)` relative to the trajectory origin.
    LocalNed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// Interpreted according to [`Trajectory::frame`].
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Dcm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    frame: Frame,
    origin: GeodeticPosition,
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(frame: Frame, origin: GeodeticPosition, points: Vec<TrajectoryPoint>) -> Result<Self> {
        if let Some(i) = points.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(Error::input(format!(
                "trajectory timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self {
            frame,
            origin,
            points,
        })
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn origin(&self) -> &GeodeticPosition {
        &self.origin
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Horizontal positions in NED meters.
    fn horizontal_ned(&self, model: &EarthModel) -> Result<Vec<[f64; 2]>> {
        match self.frame {
            Frame::LocalNed => Ok(self.points.iter().map(|p| [p.position.x, p.position.y]).collect()),
            Frame::Geodetic => {
                let chart = LocalChart::new(self.origin, model)?;
                self.points
                    .iter()
                    .map(|p| {
                        let g = GeodeticPosition::new(p.position.x, p.position.y, p.position.z)?;
                        let n = chart.to_ned(&g);
                        Ok([n.x, n.y])
                    })
                    .collect()
            }
        }
    }

    /// Distance travelled `D`: sum of horizontal increments, meters.
    pub fn path_length(&self) -> Result<f64> {
        let xy = self.horizontal_ned(&EarthModel::wgs84())?;
        Ok(xy
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum())
    }

    /// Nav state at index `i` (geodetic frame only).
    pub fn nav_state(&self, i: usize) -> Result<NavState> {
        if self.frame != Frame::Geodetic {
            return Err(Error::input("nav_state requires a geodetic trajectory"));
        }
        let p = &self.points[i];
        Ok(NavState {
            position: GeodeticPosition::new(p.position.x, p.position.y, p.position.z)?,
            velocity: p.velocity,
            attitude: p.attitude,
        })
    }
}

/// Integrates an IMU stream from `init`; one output state per IMU timestamp.
///
/// With RK4 the IMU is interpolated at the half step with a cubic through
/// the four neighbouring samples, so time-varying inputs keep fourth-order
/// accuracy.
pub fn dead_reckon(init: &NavState, imu: &[ImuSample], options: &DeadReckonOptions) -> Result<Trajectory> {
    if imu.len() < 2 {
        return Err(Error::input("dead reckoning needs at least two IMU samples"));
    }
    if let Some(i) = imu.iter().position(|s| !s.is_finite()) {
        return Err(Error::input(format!("IMU sample {i} is not finite")));
    }
    if let Some(i) = imu.windows(2).position(|w| !(w[1].t > w[0].t)) {
        return Err(Error::input(format!(
            "IMU timestamps not strictly increasing at sample {}",
            i + 1
        )));
    }
    let model = &options.model;
    let mut state = *init;
    if options.mode_2d {
        state.velocity.z = 0.0;
    }
    let point = |t: f64, s: &NavState| TrajectoryPoint {
        t,
        position: Vector3::new(s.position.lat, s.position.lon, s.position.height),
        velocity: s.velocity,
        attitude: s.attitude,
    };
    let mut points = Vec::with_capacity(imu.len());
    points.push(point(imu[0].t, &state));
    for k in 0..imu.len() - 1 {
        let dt = imu[k + 1].t - imu[k].t;
        let mid = match options.scheme {
            Scheme::Rk4 => interpolate_imu(imu, k, imu[k].t + dt / 2.0),
            Scheme::Euler => imu[k],
        };
        state = step_with_samples(&state, dt, options.scheme, &imu[k], &mid, &imu[k + 1], model)?;
        if options.mode_2d {
            state.velocity.z = 0.0;
            state.position.height = init.position.height;
        }
        points.push(point(imu[k + 1].t, &state));
    }
    Trajectory::new(Frame::Geodetic, init.position, points)
}

/// Re-expresses a geodetic trajectory in NED meters about `origin`.
pub fn geodetic_to_local_ned(traj: &Trajectory, origin: &GeodeticPosition, model: &EarthModel) -> Result<Trajectory> {
    if traj.frame != Frame::Geodetic {
        return Err(Error::input("expected a geodetic trajectory"));
    }
    let chart = LocalChart::new(*origin, model)?;
    let points = traj
        .points
        .iter()
        .map(|p| {
            let g = GeodeticPosition::new(p.position.x, p.position.y, p.position.z)?;
            Ok(TrajectoryPoint {
                position: chart.to_ned(&g),
                ..*p
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(Frame::LocalNed, *origin, points)
}

/// Inverse of [`geodetic_to_local_ned`] using the trajectory's own origin.
pub fn local_ned_to_geodetic(traj: &Trajectory, model: &EarthModel) -> Result<Trajectory> {
    if traj.frame != Frame::LocalNed {
        return Err(Error::input("expected a local-NED trajectory"));
    }
    let chart = LocalChart::new(traj.origin, model)?;
    let points = traj
        .points
        .iter()
        .map(|p| {
            let g = chart.to_geodetic(&p.position)?;
            Ok(TrajectoryPoint {
                position: Vector3::new(g.lat, g.lon, g.height),
                ..*p
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(Frame::Geodetic, traj.origin, points)
}
