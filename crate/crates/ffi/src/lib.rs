//! C ABI for the pidr toolkit.
//!
//! All functions return a [`PidrStatus`]. On failure a description of the
//! error is kept per thread and can be read with [`pidr_last_error`].
//! Networks are exposed as opaque handles created by
//! [`pidr_network_load`] and released with [`pidr_network_free`].
//! Panics never cross the boundary; they are reported as
//! [`PidrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Vector3;
use pidr::frames::{dcm_from_euler, euler_from_dcm, EarthModel, EulerAngles, GeodeticPosition};
use pidr::mechanization::{dead_reckon, DeadReckonOptions, ImuSample, NavState, Scheme};
use pidr::metrics;
use pidr::network::{Network, OUTPUT_DIM};
use pidr::Error;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PidrStatus {
    Ok = 0,
    /// Invalid argument, configuration or input data.
    Invalid = 2,
    Io = 3,
    Numerical = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Opaque trained network.
pub struct PidrNetwork {
    inner: Network,
}

/// One IMU sample: time (s), specific force (m/s²) and angular rate
/// (rad/s) in the body frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidrImuSample {
    pub t: f64,
    pub specific_force: [f64; 3],
    pub angular_rate: [f64; 3],
}

/// Navigation state: geodetic position (rad, rad, m), NED velocity (m/s)
/// and roll, pitch, yaw (rad).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidrNavState {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub height: f64,
    pub velocity: [f64; 3],
    pub euler: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidrMetrics {
    pub prmse: f64,
    pub mate: f64,
    pub tde: f64,
    pub fde: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PidrScheme {
    Euler = 0,
    Rk4 = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PidrStatus {
    match e {
        Error::Io { .. } => PidrStatus::Io,
        Error::Numerical(_) => PidrStatus::Numerical,
        _ => PidrStatus::Invalid,
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PidrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PidrStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer passed as `{what}`"));
            PidrStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            PidrStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(non_null(p, what)?, n))
}

/// # Safety
/// `p` must be null or point to `n` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    Ok(std::slice::from_raw_parts_mut(non_null(p, what)? as *mut T, n))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pidr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pidr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a model checkpoint written by `pidr train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pidr_network_load(path: *const c_char, out: *mut *mut PidrNetwork) -> PidrStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut *mut PidrNetwork;
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(non_null(path, "path")?);
        let path = path
            .to_str()
            .map_err(|_| Error::Config {
                field: "path".into(),
                reason: "not valid UTF-8".into(),
            })?;
        let inner = Network::load(Path::new(path), None)?;
        *out = Box::into_raw(Box::new(PidrNetwork { inner }));
        Ok(())
    })
}

/// Releases a network; null is ignored.
///
/// # Safety
/// `net` must come from [`pidr_network_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pidr_network_free(net: *mut PidrNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of parameters of a loaded network, or 0 for null.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pidr_network_param_count(net: *const PidrNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.params.n_params())
}

/// Predicts the local-NED state `(pn, pe, pd, vn, ve, vd, roll, pitch,
/// yaw)` at `imu.t` for a trajectory spanning `[start, start + duration]`.
/// When `rate` is non-null its nine entries receive the time derivative.
///
/// # Safety
/// `net` must be a live handle, `state` must hold 9 writable doubles and
/// `rate` must be null or hold 9 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pidr_network_predict(
    net: *const PidrNetwork,
    imu: PidrImuSample,
    start: f64,
    duration: f64,
    state: *mut f64,
    rate: *mut f64,
) -> PidrStatus {
    guard(|| {
        let net = &non_null(net, "net")?.as_ref().expect("checked").inner;
        let state = slice_mut(state, OUTPUT_DIM, "state")?;
        if !(duration > 0.0) {
            return Err(Error::Input("duration must be positive".into()).into());
        }
        let sample = to_imu(&imu);
        if rate.is_null() {
            state.copy_from_slice(&net.predict(imu.t, start, duration, &sample)?);
        } else {
            let (y, y_dot) = net.predict_with_rate(imu.t, start, duration, &sample)?;
            state.copy_from_slice(&y);
            slice_mut(rate, OUTPUT_DIM, "rate")?.copy_from_slice(&y_dot);
        }
        Ok(())
    })
}

fn to_imu(s: &PidrImuSample) -> ImuSample {
    ImuSample::new(s.t, Vector3::from(s.specific_force), Vector3::from(s.angular_rate))
}

/// Integrates `n_imu` IMU samples from `init` (whose `t` is ignored) and
/// writes one state per sample into `out`.
///
/// # Safety
/// `imu` must hold `n_imu` samples and `out` room for `n_imu` states.
#[no_mangle]
pub unsafe extern "C" fn pidr_dead_reckon(
    init: PidrNavState,
    imu: *const PidrImuSample,
    n_imu: usize,
    scheme: PidrScheme,
    mode_2d: bool,
    out: *mut PidrNavState,
) -> PidrStatus {
    guard(|| {
        let samples: Vec<ImuSample> = slice(imu, n_imu, "imu")?.iter().map(to_imu).collect();
        let out = slice_mut(out, n_imu, "out")?;
        let state = NavState {
            position: GeodeticPosition::new(init.lat, init.lon, init.height)?,
            velocity: Vector3::from(init.velocity),
            attitude: dcm_from_euler(&EulerAngles::new(init.euler[0], init.euler[1], init.euler[2]))?,
        };
        let options = DeadReckonOptions {
            scheme: match scheme {
                PidrScheme::Euler => Scheme::Euler,
                PidrScheme::Rk4 => Scheme::Rk4,
            },
            mode_2d,
            model: EarthModel::wgs84(),
        };
        let traj = dead_reckon(&state, &samples, &options)?;
        for (o, p) in out.iter_mut().zip(traj.points()) {
            let e = euler_from_dcm(&p.attitude)?;
            *o = PidrNavState {
                t: p.t,
                lat: p.position.x,
                lon: p.position.y,
                height: p.position.z,
                velocity: p.velocity.into(),
                euler: [e.roll, e.pitch, e.yaw],
            };
        }
        Ok(())
    })
}

/// PRMSE, MATE, TDE and FDE of a predicted local-NED track against GT.
/// Times are in seconds and positions are `n × 3` row-major NED meters.
///
/// # Safety
/// Each time array must hold its count of doubles and each position
/// array three times that.
#[no_mangle]
pub unsafe extern "C" fn pidr_trajectory_metrics(
    pred_t: *const f64,
    pred_ned: *const f64,
    n_pred: usize,
    gt_t: *const f64,
    gt_ned: *const f64,
    n_gt: usize,
    out: *mut PidrMetrics,
) -> PidrStatus {
    guard(|| {
        let track = |t: &[f64], p: &[f64]| -> metrics::Track {
            t.iter()
                .zip(p.chunks_exact(3))
                .map(|(&t, p)| (t, Vector3::new(p[0], p[1], p[2])))
                .collect()
        };
        let pred = track(slice(pred_t, n_pred, "pred_t")?, slice(pred_ned, 3 * n_pred, "pred_ned")?);
        let gt = track(slice(gt_t, n_gt, "gt_t")?, slice(gt_ned, 3 * n_gt, "gt_ned")?);
        let out = non_null(out, "out")? as *mut PidrMetrics;
        let (m, _) = metrics::evaluate_tracks("ffi", &pred, &gt)?;
        *out = PidrMetrics {
            prmse: m.prmse,
            mate: m.mate,
            tde: m.tde,
            fde: m.fde,
        };
        Ok(())
    })
}
