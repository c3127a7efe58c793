//! CSV ingestion and emission, GT/IMU time alignment and assembly of
//! normalized multi-trajectory training sets.
//!
//! File layout of one trajectory directory:
//!
//! * `imu.csv` with header `t,fx,fy,fz,wx,wy,wz` (s, m/s², rad/s)
//! * `gt.csv` with header `t,pn,pe,pd,vn,ve,vd,roll,pitch,yaw` (s, local NED m, m/s, rad)
//! * `metadata.txt` with `origin_lat`, `origin_lon` (rad) and `origin_h` (m)
//!   as `key=value` lines

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{dcm_from_euler, EulerAngles, GeodeticPosition};
use crate::mechanization::{Frame, ImuSample, Trajectory, TrajectoryPoint};

pub const IMU_FILE: &str = "imu.csv";
pub const GT_FILE: &str = "gt.csv";
pub const METADATA_FILE: &str = "metadata.txt";

pub const IMU_HEADER: [&str; 7] = ["t", "fx", "fy", "fz", "wx", "wy", "wz"];
pub const GT_HEADER: [&str; 10] = ["t", "pn", "pe", "pd", "vn", "ve", "vd", "roll", "pitch", "yaw"];

/// One ground-truth record in the local NED frame of its dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub euler: EulerAngles,
}

impl GtSample {
    /// `(pn, pe, pd, vn, ve, vd, roll, pitch, yaw)`.
    pub fn state_vector(&self) -> [f64; 9] {
        let p = &self.position;
        let v = &self.velocity;
        let e = &self.euler;
        [p.x, p.y, p.z, v.x, v.y, v.z, e.roll, e.pitch, e.yaw]
    }

    fn from_row(r: [f64; 10]) -> Self {
        Self {
            t: r[0],
            position: Vector3::new(r[1], r[2], r[3]),
            velocity: Vector3::new(r[4], r[5], r[6]),
            euler: EulerAngles {
                roll: r[7],
                pitch: r[8],
                yaw: r[9],
            },
        }
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows<const N: usize>(
    path: &Path,
    header: &[&str; N],
    rows: impl Iterator<Item = [f64; N]>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|&x| fmt(x)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_rows<const N: usize>(path: &Path, header: &[&str; N]) -> Result<Vec<[f64; N]>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let found = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if found.len() != N || found.iter().zip(header).any(|(a, b)| a != *b) {
        return Err(parse_err(
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != N {
            return Err(parse_err(line, format!("expected {N} fields, found {}", record.len())));
        }
        let mut row = [0.0; N];
        for (i, (cell, field)) in row.iter_mut().zip(record.iter()).enumerate() {
            *cell = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(line, format!("column `{}`: `{field}` is not a finite number", header[i])))?;
        }
        if !(row[0] > last_t) {
            return Err(parse_err(line, format!("timestamp {} does not increase", row[0])));
        }
        last_t = row[0];
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    Ok(read_rows(path, &IMU_HEADER)?
        .into_iter()
        .map(|r| ImuSample::from_channels(r[0], [r[1], r[2], r[3], r[4], r[5], r[6]]))
        .collect())
}

pub fn write_imu_csv(path: &Path, imu: &[ImuSample]) -> Result<()> {
    write_rows(
        path,
        &IMU_HEADER,
        imu.iter().map(|s| {
            let c = s.channels();
            [s.t, c[0], c[1], c[2], c[3], c[4], c[5]]
        }),
    )
}

pub fn load_gt_csv(path: &Path) -> Result<Vec<GtSample>> {
    Ok(read_rows(path, &GT_HEADER)?.into_iter().map(GtSample::from_row).collect())
}

pub fn write_gt_csv(path: &Path, gt: &[GtSample]) -> Result<()> {
    write_rows(
        path,
        &GT_HEADER,
        gt.iter().map(|g| {
            let s = g.state_vector();
            [g.t, s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8]]
        }),
    )
}

pub fn write_metadata(path: &Path, origin: &GeodeticPosition) -> Result<()> {
    let text = format!(
        "# local NED origin; angles in radians, height in meters\norigin_lat={}\norigin_lon={}\norigin_h={}\n",
        fmt(origin.lat),
        fmt(origin.lon),
        fmt(origin.height)
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metadata(path: &Path) -> Result<GeodeticPosition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            reason,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found `{line}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| err(format!("`{}` is not a number", v.trim())))?;
        values.insert(k.trim().to_string(), v);
    }
    let get = |key: &str| {
        values.get(key).copied().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("missing key `{key}`"),
        })
    };
    GeodeticPosition::new(get("origin_lat")?, get("origin_lon")?, get("origin_h")?)
}

/// A GT record paired with the nearest IMU sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedSample {
    /// GT timestamp.
    pub t: f64,
    pub imu: ImuSample,
    pub gt: GtSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub samples: Vec<AlignedSample>,
    /// GT rows outside the IMU time range.
    pub dropped: usize,
}

/// Index of the IMU sample nearest to `t`; exact ties go to the earlier one.
fn nearest_index(imu: &[ImuSample], t: f64) -> usize {
    let k = imu.partition_point(|s| s.t < t);
    if k == 0 {
        return 0;
    }
    if k == imu.len() {
        return k - 1;
    }
    if t - imu[k - 1].t <= imu[k].t - t {
        k - 1
    } else {
        k
    }
}

/// Pairs every GT row inside the IMU span with its nearest IMU sample.
pub fn align(imu: &[ImuSample], gt: &[GtSample]) -> Result<Alignment> {
    let (Some(first), Some(last)) = (imu.first(), imu.last()) else {
        return Err(Error::input("cannot align against an empty IMU stream"));
    };
    let mut samples = Vec::with_capacity(gt.len());
    let mut dropped = 0;
    for g in gt {
        if g.t < first.t || g.t > last.t {
            dropped += 1;
            continue;
        }
        samples.push(AlignedSample {
            t: g.t,
            imu: imu[nearest_index(imu, g.t)],
            gt: *g,
        });
    }
    if samples.is_empty() {
        return Err(Error::input("GT and IMU time ranges do not overlap"));
    }
    if dropped > 0 {
        log::warn!("alignment dropped {dropped} GT rows outside the IMU time range");
    }
    Ok(Alignment { samples, dropped })
}

/// One trajectory: raw IMU stream, GT and their alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub id: String,
    pub origin: GeodeticPosition,
    pub imu: Vec<ImuSample>,
    pub gt: Vec<GtSample>,
    pub aligned: Vec<AlignedSample>,
}

impl TrajectoryData {
    pub fn new(id: impl Into<String>, origin: GeodeticPosition, imu: Vec<ImuSample>, gt: Vec<GtSample>) -> Result<Self> {
        if imu.len() < 2 {
            return Err(Error::input("a trajectory needs at least two IMU samples"));
        }
        if let Some(i) = imu.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(Error::input(format!("IMU timestamps not increasing at index {}", i + 1)));
        }
        let aligned = align(&imu, &gt)?.samples;
        Ok(Self {
            id: id.into(),
            origin,
            imu,
            gt,
            aligned,
        })
    }

    /// Reads `imu.csv`, `gt.csv` and `metadata.txt` from `dir`; the id is
    /// the directory name.
    pub fn load(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let origin = read_metadata(&dir.join(METADATA_FILE))?;
        let imu = load_imu_csv(&dir.join(IMU_FILE))?;
        let gt = load_gt_csv(&dir.join(GT_FILE))?;
        Self::new(id, origin, imu, gt)
    }

    pub fn start(&self) -> f64 {
        self.imu[0].t
    }

    pub fn end(&self) -> f64 {
        self.imu[self.imu.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// IMU linearly interpolated per channel at `t` (clamped to the span).
    pub fn imu_at(&self, t: f64) -> ImuSample {
        let t = t.clamp(self.start(), self.end());
        let k = self.imu.partition_point(|s| s.t <= t).clamp(1, self.imu.len() - 1);
        let (a, b) = (&self.imu[k - 1], &self.imu[k]);
        let w = (t - a.t) / (b.t - a.t);
        let (ca, cb) = (a.channels(), b.channels());
        ImuSample::from_channels(t, std::array::from_fn(|i| ca[i] + w * (cb[i] - ca[i])))
    }

    /// Keeps only GT rows whose timestamps lie on a `period`-second grid
    /// from the first GT row, within half an IMU period.
    pub fn sparsify_gt(&self, period: f64) -> Result<Self> {
        let Some(t0) = self.gt.first().map(|g| g.t) else {
            return Err(Error::input("no GT to sparsify"));
        };
        let tol = 0.5 * self.duration() / (self.imu.len() - 1) as f64;
        let gt = self
            .gt
            .iter()
            .filter(|g| {
                let k = ((g.t - t0) / period).round();
                (g.t - t0 - k * period).abs() <= tol
            })
            .copied()
            .collect();
        Self::new(self.id.clone(), self.origin, self.imu.clone(), gt)
    }

    /// GT as a local-NED [`Trajectory`].
    pub fn gt_trajectory(&self) -> Result<Trajectory> {
        gt_to_trajectory(&self.gt, &self.origin)
    }
}

pub fn gt_to_trajectory(gt: &[GtSample], origin: &GeodeticPosition) -> Result<Trajectory> {
    let points = gt
        .iter()
        .map(|g| {
            Ok(TrajectoryPoint {
                t: g.t,
                position: g.position,
                velocity: g.velocity,
                attitude: dcm_from_euler(&g.euler)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(Frame::LocalNed, *origin, points)
}

/// Affine maps applied to network inputs and outputs.
///
/// IMU channels are z-scored with statistics of the training trajectories,
/// with the scale floored at [`ACCEL_SCALE_FLOOR`] / [`GYRO_SCALE_FLOOR`];
/// the time channel maps each trajectory's span to `[0, 1]`. Network
/// outputs are produced in normalized units and mapped back with
/// `mean + std·z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: [f64; 6],
    pub input_std: [f64; 6],
    pub output_mean: [f64; 9],
    pub output_std: [f64; 9],
}

/// Smallest scale used for accelerometer inputs, m/s².
pub const ACCEL_SCALE_FLOOR: f64 = 1.0;
/// Smallest scale used for gyroscope inputs, rad/s.
pub const GYRO_SCALE_FLOOR: f64 = 0.1;

/// Per-channel mean and scale. A channel whose spread is below `floor`
/// is scaled by `floor` instead (unit scale when `floor` is 0).
fn mean_std<const N: usize>(
    rows: impl Iterator<Item = [f64; N]> + Clone,
    floor: [f64; N],
    what: &str,
) -> ([f64; N], [f64; N]) {
    let mut n = 0usize;
    let mut mean = [0.0; N];
    let mut lo = [f64::INFINITY; N];
    let mut hi = [f64::NEG_INFINITY; N];
    for r in rows.clone() {
        n += 1;
        for i in 0..N {
            mean[i] += r[i];
            lo[i] = lo[i].min(r[i]);
            hi[i] = hi[i].max(r[i]);
        }
    }
    let n = n.max(1) as f64;
    for i in 0..N {
        // A constant channel gets its exact value as mean so it maps to 0.
        mean[i] = if lo[i] == hi[i] { lo[i] } else { mean[i] / n };
    }
    let mut var = [0.0; N];
    for r in rows {
        for i in 0..N {
            var[i] += (r[i] - mean[i]).powi(2);
        }
    }
    let mut std = [1.0; N];
    for i in 0..N {
        let s = (var[i] / n).sqrt();
        if floor[i] > 0.0 {
            std[i] = s.max(floor[i]);
        } else if s > 1e-12 * (1.0 + mean[i].abs()) {
            std[i] = s;
        } else {
            log::warn!("{what} channel {i} has zero variance; using unit scale");
        }
    }
    (mean, std)
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            input_mean: [0.0; 6],
            input_std: [1.0; 6],
            output_mean: [0.0; 9],
            output_std: [1.0; 9],
        }
    }

    /// Fits input statistics over every IMU sample and output statistics
    /// over every aligned GT record of `trajectories`.
    pub fn fit(trajectories: &[TrajectoryData]) -> Self {
        let imu = trajectories.iter().flat_map(|t| t.imu.iter().map(|s| s.channels()));
        // On near-constant channels the spread is sensor noise; scaling it
        // up to unit variance hands the network random features that it
        // can memorize samples by.
        let (a, g) = (ACCEL_SCALE_FLOOR, GYRO_SCALE_FLOOR);
        let (input_mean, input_std) = mean_std(imu, [a, a, a, g, g, g], "input");
        let gt = trajectories
            .iter()
            .flat_map(|t| t.aligned.iter().map(|a| a.gt.state_vector()));
        let (output_mean, output_std) = mean_std(gt, [0.0; 9], "output");
        Self {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }

    /// Normalized network input for a sample at time `t` of a trajectory
    /// spanning `[start, start + duration]`.
    pub fn input(&self, t: f64, start: f64, duration: f64, imu: &ImuSample) -> [f64; 7] {
        let c = imu.channels();
        let mut u = [0.0; 7];
        u[0] = (t - start) / duration;
        for i in 0..6 {
            u[i + 1] = (c[i] - self.input_mean[i]) / self.input_std[i];
        }
        u
    }

    pub fn denormalize(&self, z: &[f64; 9]) -> [f64; 9] {
        std::array::from_fn(|i| self.output_mean[i] + self.output_std[i] * z[i])
    }

    pub fn normalize_output(&self, y: &[f64; 9]) -> [f64; 9] {
        std::array::from_fn(|i| (y[i] - self.output_mean[i]) / self.output_std[i])
    }

    pub fn is_finite(&self) -> bool {
        self.input_mean
            .iter()
            .chain(&self.input_std)
            .chain(&self.output_mean)
            .chain(&self.output_std)
            .all(|x| x.is_finite())
            && self.input_std.iter().chain(&self.output_std).all(|&s| s > 0.0)
    }
}

/// Trajectories used for training together with their normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub trajectories: Vec<TrajectoryData>,
    pub stats: NormStats,
}

impl TrainingSet {
    /// Sorts trajectories by id, so insertion order never matters, and fits
    /// the normalization.
    pub fn new(mut trajectories: Vec<TrajectoryData>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::input("training set has no trajectories"));
        }
        trajectories.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = trajectories.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::input(format!("duplicate trajectory id `{}`", w[0].id)));
        }
        let stats = NormStats::fit(&trajectories);
        Ok(Self { trajectories, stats })
    }

    pub fn n_aligned(&self) -> usize {
        self.trajectories.iter().map(|t| t.aligned.len()).sum()
    }

    /// Normalized inputs of every IMU sample, per trajectory.
    pub fn normalized_inputs(&self) -> Vec<Vec<[f64; 7]>> {
        self.trajectories
            .iter()
            .map(|tr| {
                tr.imu
                    .iter()
                    .map(|s| self.stats.input(s.t, tr.start(), tr.duration(), s))
                    .collect()
            })
            .collect()
    }
}

/// Returns `set` with statistics fitted to its own trajectories.
pub fn normalize_inputs(set: TrainingSet) -> TrainingSet {
    let stats = NormStats::fit(&set.trajectories);
    TrainingSet { stats, ..set }
}
