use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::Vector3;
use pidr::dataset::NormStats;
use pidr::frames::{EarthModel, EulerAngles};
use pidr::mechanization::ImuSample;
use pidr::network::{Network, NetworkParams};
use pidr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pidr_last_error()) }.to_string_lossy().into_owned()
}

fn saved_network(dir: &Path) -> (Network, CString) {
    let net = Network {
        params: NetworkParams::init_with_sizes(&[7, 8, 8, 9], 3),
        stats: NormStats::identity(),
        seed: 3,
    };
    let path = dir.join("model.json");
    net.save(&path).unwrap();
    (net, CString::new(path.to_str().unwrap()).unwrap())
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(pidr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn network_handle_round_trip_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let (net, path) = saved_network(dir.path());
    let mut handle = std::ptr::null_mut();
    assert_eq!(unsafe { pidr_network_load(path.as_ptr(), &mut handle) }, PidrStatus::Ok);
    assert!(!handle.is_null());
    assert_eq!(unsafe { pidr_network_param_count(handle) }, net.params.n_params());

    let imu = PidrImuSample {
        t: 3.0,
        specific_force: [0.1, -0.2, -9.8],
        angular_rate: [0.01, 0.0, 0.2],
    };
    let mut y = [0.0; 9];
    let mut y_dot = [0.0; 9];
    let st = unsafe { pidr_network_predict(handle, imu, 1.0, 10.0, y.as_mut_ptr(), y_dot.as_mut_ptr()) };
    assert_eq!(st, PidrStatus::Ok);
    let sample = ImuSample::new(3.0, Vector3::new(0.1, -0.2, -9.8), Vector3::new(0.01, 0.0, 0.2));
    let (expect, expect_dot) = net.predict_with_rate(3.0, 1.0, 10.0, &sample).unwrap();
    assert_eq!(y, expect);
    assert_eq!(y_dot, expect_dot);

    let mut y2 = [0.0; 9];
    let st = unsafe { pidr_network_predict(handle, imu, 1.0, 10.0, y2.as_mut_ptr(), std::ptr::null_mut()) };
    assert_eq!(st, PidrStatus::Ok);
    assert_eq!(y2, expect);

    let st = unsafe { pidr_network_predict(handle, imu, 1.0, 0.0, y2.as_mut_ptr(), std::ptr::null_mut()) };
    assert_eq!(st, PidrStatus::Invalid);
    assert!(last_error().contains("duration"));
    unsafe { pidr_network_free(handle) };
    unsafe { pidr_network_free(std::ptr::null_mut()) };
}

#[test]
fn load_errors_map_to_status_codes() {
    let mut handle = std::ptr::null_mut();
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { pidr_network_load(missing.as_ptr(), &mut handle) }, PidrStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/model.json"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pidr_network_load(bad.as_ptr(), &mut handle) }, PidrStatus::Invalid);

    assert_eq!(unsafe { pidr_network_load(std::ptr::null(), &mut handle) }, PidrStatus::NullPointer);
    assert!(last_error().contains("path"));
    assert_eq!(
        unsafe { pidr_network_load(missing.as_ptr(), std::ptr::null_mut()) },
        PidrStatus::NullPointer
    );
}

#[test]
fn success_clears_the_error_message() {
    let mut handle = std::ptr::null_mut();
    unsafe { pidr_network_load(std::ptr::null(), &mut handle) };
    assert!(!last_error().is_empty());
    let mut m = PidrMetrics::default();
    let t = [0.0, 1.0];
    let p = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    assert_eq!(
        unsafe { pidr_trajectory_metrics(t.as_ptr(), p.as_ptr(), 2, t.as_ptr(), p.as_ptr(), 2, &mut m) },
        PidrStatus::Ok
    );
    assert_eq!(last_error(), "");
}

#[test]
fn metrics_of_a_constant_offset() {
    let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.2).collect();
    let gt: Vec<f64> = t.iter().flat_map(|&s| [s, 0.0, 0.0]).collect();
    let pred: Vec<f64> = t.iter().flat_map(|&s| [s + 3.0, 4.0, 0.0]).collect();
    let mut m = PidrMetrics::default();
    let st = unsafe { pidr_trajectory_metrics(t.as_ptr(), pred.as_ptr(), 20, t.as_ptr(), gt.as_ptr(), 20, &mut m) };
    assert_eq!(st, PidrStatus::Ok);
    assert!((m.prmse - 5.0).abs() < 1e-12 && (m.mate - 5.0).abs() < 1e-12 && (m.fde - 5.0).abs() < 1e-12);
    let d = 19.0 * 0.2;
    assert!((m.tde - 5.0 / d * 100.0).abs() < 1e-9);

    let st = unsafe { pidr_trajectory_metrics(t.as_ptr(), pred.as_ptr(), 0, t.as_ptr(), gt.as_ptr(), 20, &mut m) };
    assert_eq!(st, PidrStatus::Invalid);
    let st = unsafe { pidr_trajectory_metrics(std::ptr::null(), pred.as_ptr(), 20, t.as_ptr(), gt.as_ptr(), 20, &mut m) };
    assert_eq!(st, PidrStatus::NullPointer);
}

#[test]
fn dead_reckoning_matches_core() {
    let g = pidr::frames::gravity_n(0.5, 10.0, &EarthModel::wgs84()).z;
    let imu: Vec<PidrImuSample> = (0..200)
        .map(|k| PidrImuSample {
            t: k as f64 * 0.01,
            specific_force: [0.2, 0.0, -g],
            angular_rate: [0.0, 0.0, 0.05],
        })
        .collect();
    let init = PidrNavState {
        t: 0.0,
        lat: 0.5,
        lon: 0.6,
        height: 10.0,
        velocity: [1.0, 0.0, 0.0],
        euler: [0.0, 0.0, 0.0],
    };
    let mut out = vec![PidrNavState::default(); imu.len()];
    let st = unsafe { pidr_dead_reckon(init, imu.as_ptr(), imu.len(), PidrScheme::Rk4, false, out.as_mut_ptr()) };
    assert_eq!(st, PidrStatus::Ok, "{}", last_error());

    let state = pidr::mechanization::NavState {
        position: pidr::frames::GeodeticPosition::new(0.5, 0.6, 10.0).unwrap(),
        velocity: Vector3::new(1.0, 0.0, 0.0),
        attitude: pidr::frames::dcm_from_euler(&EulerAngles::zero()).unwrap(),
    };
    let samples: Vec<ImuSample> = imu
        .iter()
        .map(|s| ImuSample::new(s.t, s.specific_force.into(), s.angular_rate.into()))
        .collect();
    let traj = pidr::mechanization::dead_reckon(&state, &samples, &Default::default()).unwrap();
    for (o, p) in out.iter().zip(traj.points()) {
        assert_eq!([o.lat, o.lon, o.height], [p.position.x, p.position.y, p.position.z]);
        assert_eq!(o.t, p.t);
    }
    assert!(out.last().unwrap().euler[2] > 0.09);

    let bad = PidrNavState { lat: 3.0, ..init };
    let st = unsafe { pidr_dead_reckon(bad, imu.as_ptr(), imu.len(), PidrScheme::Euler, false, out.as_mut_ptr()) };
    assert_eq!(st, PidrStatus::Invalid);
    assert!(last_error().contains("latitude"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("pidr.h")
}

#[test]
fn generated_header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "pidr_last_error",
        "pidr_version",
        "pidr_network_load",
        "pidr_network_free",
        "pidr_network_predict",
        "pidr_network_param_count",
        "pidr_dead_reckon",
        "pidr_trajectory_metrics",
        "typedef struct PidrNetwork PidrNetwork",
        "PIDR_STATUS_OK = 0",
        "PIDR_STATUS_NUMERICAL = 4",
    ] {
        assert!(h.contains(name), "header lacks `{name}`");
    }
}

/// Builds and runs a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    // `cargo test` leaves the static library next to the test binary in
    // `deps/`; `cargo build` puts it one level up.
    let deps = exe.parent().unwrap();
    let lib = [deps.to_path_buf(), deps.parent().unwrap().to_path_buf()]
        .into_iter()
        .map(|d| d.join("libpidr_ffi.a"))
        .find(|p| p.exists())
        .expect("static library built alongside the tests");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "pidr.h"
int main(void) {
    double t[2] = {0.0, 1.0};
    double gt[6] = {0, 0, 0, 1, 0, 0};
    double pred[6] = {3, 4, 0, 4, 4, 0};
    PidrMetrics m;
    if (pidr_trajectory_metrics(t, pred, 2, t, gt, 2, &m) != PIDR_STATUS_OK) return 1;
    PidrNetwork *net = NULL;
    PidrStatus s = pidr_network_load("/nonexistent.json", &net);
    if (s != PIDR_STATUS_IO || net != NULL || strlen(pidr_last_error()) == 0) return 2;
    pidr_network_free(NULL);
    printf("%s %.6f %.6f\n", pidr_version(), m.prmse, m.fde);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler is available");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("{} 5.000000 5.000000", env!("CARGO_PKG_VERSION")));
}
