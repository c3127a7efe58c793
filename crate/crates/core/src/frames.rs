//! Reference frames, WGS84 geodesy and rotation algebra.
//!
//! Navigation frame is local-level North-East-Down. Attitude is carried as
//! the body-to-navigation direction cosine matrix `C_b^n`, built from ZYX
//! (yaw, pitch, roll) Euler angles.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dual::v3::M3;
use crate::dual::Real;
use crate::error::{Error, Result};

/// Pitch must stay this far away from ±π/2.
pub const GIMBAL_MARGIN: f64 = 1e-6;
/// Latitude must stay this far away from the poles wherever `tan φ` or
/// `1 / cos φ` appears.
pub const POLAR_MARGIN: f64 = 1e-6;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; this guards against rounding to -π.
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    /// Latitude, radians.
    pub lat: f64,
    /// Longitude, radians, in `(-π, π]`.
    pub lon: f64,
    /// Ellipsoidal height, meters.
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(lat: f64, lon: f64, height: f64) -> Result<Self> {
        if !(lat.is_finite() && lon.is_finite() && height.is_finite()) {
            return Err(Error::domain("geodetic position must be finite"));
        }
        if lat.abs() > FRAC_PI_2 {
            return Err(Error::domain(format!("latitude {lat} outside [-π/2, π/2]")));
        }
        Ok(Self {
            lat,
            lon: wrap_angle(lon),
            height,
        })
    }
}

/// ZYX Euler angles, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    /// Roll and yaw are wrapped to `(-π, π]`; pitch is kept as given and is
    /// checked where a rotation is built from it.
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            roll: wrap_angle(roll),
            pitch,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Body-to-navigation direction cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dcm(Matrix3<f64>);

impl Dcm {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Dcm(Matrix3::identity())
    }

    /// Validates orthonormality and a positive determinant.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let dcm = Dcm(m);
        let err = dcm.orthonormality_error();
        if !(err < Self::ORTHONORMAL_TOL) || (m.determinant() - 1.0).abs() >= Self::ORTHONORMAL_TOL
        {
            return Err(Error::domain(format!(
                "matrix is not a proper rotation (‖CᵀC−I‖max = {err:e})"
            )));
        }
        Ok(dcm)
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Dcm(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Max-abs entry of `CᵀC − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    /// Gram–Schmidt on the columns, keeping the first column's direction.
    pub fn orthonormalized(&self) -> Self {
        let c0 = self.0.column(0).into_owned();
        let c1 = self.0.column(1).into_owned();
        let x = c0.normalize();
        let y = (c1 - x * x.dot(&c1)).normalize();
        let z = x.cross(&y);
        Dcm(Matrix3::from_columns(&[x, y, z]))
    }

    pub fn transpose(&self) -> Matrix3<f64> {
        self.0.transpose()
    }
}

/// Ellipsoid, rotation rate and normal-gravity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    /// Semi-major axis `a`, meters.
    pub semi_major_axis: f64,
    /// First eccentricity squared `e²`.
    pub eccentricity_sq: f64,
    /// Earth rotation rate `ω_e`, rad/s.
    pub earth_rate: f64,
    /// Normal gravity on the equator, m/s².
    pub gravity_equator: f64,
    /// Normal gravity at the poles, m/s².
    pub gravity_pole: f64,
    /// Linear free-air decrease of gravity with height, (m/s²)/m.
    pub free_air_gradient: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self::wgs84()
    }
}

impl EarthModel {
    pub const fn wgs84() -> Self {
        Self {
            semi_major_axis: 6_378_137.0,
            eccentricity_sq: 0.006_694_379_990_14,
            earth_rate: 7.292_115_8e-5,
            gravity_equator: 9.780_325_335_9,
            gravity_pole: 9.832_184_937_8,
            free_air_gradient: 3.0877e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.semi_major_axis > 0.0 && self.semi_major_axis.is_finite()) {
            return Err(Error::domain("semi-major axis must be positive"));
        }
        if !(0.0..1.0).contains(&self.eccentricity_sq) {
            return Err(Error::domain("eccentricity must lie in [0, 1)"));
        }
        if !(self.earth_rate > 0.0 && self.earth_rate.is_finite()) {
            return Err(Error::domain("earth rate must be positive"));
        }
        Ok(())
    }

    pub fn eccentricity(&self) -> f64 {
        self.eccentricity_sq.sqrt()
    }

    pub fn semi_minor_axis(&self) -> f64 {
        self.semi_major_axis * (1.0 - self.eccentricity_sq).sqrt()
    }

    /// Somigliana constant `k = (b·g_p − a·g_e) / (a·g_e)`.
    fn somigliana_k(&self) -> f64 {
        let a = self.semi_major_axis;
        (self.semi_minor_axis() * self.gravity_pole - a * self.gravity_equator)
            / (a * self.gravity_equator)
    }
}

// Generic formulas, shared by the f64 API and by the differentiable residuals.

pub(crate) fn radii_generic<T: Real>(lat: T, model: &EarthModel) -> (T, T) {
    let s = lat.sin();
    let w = T::cst(1.0) - s * s * model.eccentricity_sq;
    let sw = w.sqrt();
    let rn = T::cst(model.semi_major_axis) / sw;
    let rm = T::cst(model.semi_major_axis * (1.0 - model.eccentricity_sq)) / (w * sw);
    (rm, rn)
}

pub(crate) fn gravity_generic<T: Real>(lat: T, h: T, model: &EarthModel) -> T {
    let s2 = lat.sin() * lat.sin();
    let g0 = (s2 * model.somigliana_k() + 1.0) * model.gravity_equator
        / (T::cst(1.0) - s2 * model.eccentricity_sq).sqrt();
    g0 - h * model.free_air_gradient
}

pub(crate) fn earth_rate_generic<T: Real>(lat: T, model: &EarthModel) -> [T; 3] {
    [
        lat.cos() * model.earth_rate,
        T::cst(0.0),
        -(lat.sin() * model.earth_rate),
    ]
}

pub(crate) fn transport_rate_generic<T: Real>(v: [T; 3], lat: T, h: T, model: &EarthModel) -> [T; 3] {
    let (rm, rn) = radii_generic(lat, model);
    [
        v[1] / (rn + h),
        -(v[0] / (rm + h)),
        -(v[1] * lat.tan() / (rn + h)),
    ]
}

/// ZYX Euler angles to `C_b^n`.
pub(crate) fn dcm_generic<T: Real>(eta: [T; 3]) -> M3<T> {
    let (sr, cr) = (eta[0].sin(), eta[0].cos());
    let (sp, cp) = (eta[1].sin(), eta[1].cos());
    let (sy, cy) = (eta[2].sin(), eta[2].cos());
    [
        [cp * cy, sr * sp * cy - cr * sy, cr * sp * cy + sr * sy],
        [cp * sy, sr * sp * sy + cr * cy, cr * sp * sy - sr * cy],
        [-sp, sr * cp, cr * cp],
    ]
}

/// Partial derivatives of [`dcm_generic`] with respect to roll, pitch, yaw.
pub(crate) fn dcm_partials_generic<T: Real>(eta: [T; 3]) -> [M3<T>; 3] {
    let z = T::cst(0.0);
    let (sr, cr) = (eta[0].sin(), eta[0].cos());
    let (sp, cp) = (eta[1].sin(), eta[1].cos());
    let (sy, cy) = (eta[2].sin(), eta[2].cos());
    let d_roll = [
        [z, cr * sp * cy + sr * sy, -(sr * sp * cy) + cr * sy],
        [z, cr * sp * sy - sr * cy, -(sr * sp * sy) - cr * cy],
        [z, cr * cp, -(sr * cp)],
    ];
    let d_pitch = [
        [-(sp * cy), sr * cp * cy, cr * cp * cy],
        [-(sp * sy), sr * cp * sy, cr * cp * sy],
        [-cp, -(sr * sp), -(cr * sp)],
    ];
    let d_yaw = [
        [-(cp * sy), -(sr * sp * sy) - cr * cy, -(cr * sp * sy) + sr * cy],
        [cp * cy, sr * sp * cy - cr * sy, cr * sp * cy + sr * sy],
        [z, z, z],
    ];
    [d_roll, d_pitch, d_yaw]
}

fn check_lat(lat: f64) -> Result<()> {
    if !lat.is_finite() {
        return Err(Error::domain("latitude is not finite"));
    }
    if lat.abs() > FRAC_PI_2 {
        return Err(Error::domain(format!("latitude {lat} outside [-π/2, π/2]")));
    }
    Ok(())
}

fn check_non_polar(lat: f64) -> Result<()> {
    check_lat(lat)?;
    if lat.abs() >= FRAC_PI_2 - POLAR_MARGIN {
        return Err(Error::domain(format!(
            "latitude {lat} inside the polar singularity zone"
        )));
    }
    Ok(())
}

/// Meridian (`R_M`) and transverse (`R_N`) radii of curvature, meters.
pub fn radii_of_curvature(lat: f64, model: &EarthModel) -> Result<(f64, f64)> {
    check_lat(lat)?;
    Ok(radii_generic(lat, model))
}

/// `skew(ω)·v = ω × v`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn dcm_from_euler(eta: &EulerAngles) -> Result<Dcm> {
    if !(eta.roll.is_finite() && eta.pitch.is_finite() && eta.yaw.is_finite()) {
        return Err(Error::domain("Euler angles must be finite"));
    }
    if eta.pitch.abs() >= FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(Error::domain(format!(
            "pitch {} inside the gimbal-lock exclusion zone",
            eta.pitch
        )));
    }
    let c = dcm_generic(eta.as_array());
    Ok(Dcm(Matrix3::from_fn(|r, k| c[r][k])))
}

pub fn euler_from_dcm(c: &Dcm) -> Result<EulerAngles> {
    let m = c.matrix();
    let s = -m[(2, 0)];
    if !s.is_finite() || s.abs() >= 1.0 - 1e-9 {
        return Err(Error::domain("attitude too close to gimbal lock"));
    }
    let pitch = s.asin();
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Ok(EulerAngles::new(roll, pitch, yaw))
}

/// Earth rotation rate resolved in NED, rad/s.
pub fn earth_rate_n(lat: f64, model: &EarthModel) -> Vector3<f64> {
    Vector3::from(earth_rate_generic(lat, model))
}

/// Rotation rate of the NED frame with respect to the Earth, rad/s.
pub fn transport_rate(v: &Vector3<f64>, lat: f64, h: f64, model: &EarthModel) -> Result<Vector3<f64>> {
    check_non_polar(lat)?;
    Ok(Vector3::from(transport_rate_generic(
        [v.x, v.y, v.z],
        lat,
        h,
        model,
    )))
}

/// Normal gravity vector in NED: Somigliana plus linear free-air term.
pub fn gravity_n(lat: f64, h: f64, model: &EarthModel) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, gravity_generic(lat, h, model))
}

/// Maps NED velocity to geodetic rates `(φ̇, λ̇, ḣ)`.
pub fn d_matrix(lat: f64, h: f64, model: &EarthModel) -> Result<Matrix3<f64>> {
    check_non_polar(lat)?;
    let (rm, rn) = radii_generic(lat, model);
    Ok(Matrix3::from_diagonal(&Vector3::new(
        1.0 / (rm + h),
        1.0 / ((rn + h) * lat.cos()),
        -1.0,
    )))
}

/// Small-area tangent-plane chart around an origin: geodetic offsets map
/// linearly to NED meters using the radii of curvature at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalChart {
    pub origin: GeodeticPosition,
    /// `R_M(φ₀) + h₀`, meters per radian of latitude.
    north_scale: f64,
    /// `(R_N(φ₀) + h₀)·cos φ₀`, meters per radian of longitude.
    east_scale: f64,
    model: EarthModel,
}

impl LocalChart {
    pub fn new(origin: GeodeticPosition, model: &EarthModel) -> Result<Self> {
        check_non_polar(origin.lat)?;
        let (rm, rn) = radii_generic(origin.lat, model);
        Ok(Self {
            origin,
            north_scale: rm + origin.height,
            east_scale: (rn + origin.height) * origin.lat.cos(),
            model: *model,
        })
    }

    pub fn model(&self) -> &EarthModel {
        &self.model
    }

    pub fn to_ned(&self, p: &GeodeticPosition) -> Vector3<f64> {
        Vector3::new(
            (p.lat - self.origin.lat) * self.north_scale,
            wrap_angle(p.lon - self.origin.lon) * self.east_scale,
            -(p.height - self.origin.height),
        )
    }

    pub fn to_geodetic(&self, ned: &Vector3<f64>) -> Result<GeodeticPosition> {
        let (lat, h) = self.lat_height(&[ned.x, ned.y, ned.z]);
        GeodeticPosition::new(lat, self.origin.lon + ned.y / self.east_scale, h)
    }

    /// Latitude and height of a chart point.
    pub(crate) fn lat_height<T: Real>(&self, ned: &[T; 3]) -> (T, T) {
        (
            ned[0] / self.north_scale + self.origin.lat,
            -ned[2] + self.origin.height,
        )
    }

    /// Time derivative of the chart position for NED velocity `v` at chart
    /// point `ned`; the image of `D(φ,h)·v` under the chart.
    pub(crate) fn position_rate<T: Real>(&self, ned: &[T; 3], v: &[T; 3]) -> [T; 3] {
        let (lat, h) = self.lat_height(ned);
        let (rm, rn) = radii_generic(lat, &self.model);
        [
            v[0] * self.north_scale / (rm + h),
            v[1] * self.east_scale / ((rn + h) * lat.cos()),
            v[2],
        ]
    }

    /// Inverse of [`LocalChart::position_rate`]: NED velocity producing the
    /// chart rate `rate` at chart point `ned`.
    pub(crate) fn velocity_from_rate<T: Real>(&self, ned: &[T; 3], rate: &[T; 3]) -> [T; 3] {
        let (lat, h) = self.lat_height(ned);
        let (rm, rn) = radii_generic(lat, &self.model);
        [
            rate[0] * (rm + h) / self.north_scale,
            rate[1] * ((rn + h) * lat.cos()) / self.east_scale,
            rate[2],
        ]
    }
}
