//! Trajectory error metrics and multi-method comparison reports.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::EarthModel;
use crate::mechanization::{geodetic_to_local_ned, Frame, Trajectory};

/// Timestamped local-NED positions.
pub type Track = Vec<(f64, Vector3<f64>)>;

/// Local-NED positions of `traj`, converting geodetic tracks about the
/// trajectory origin.
pub fn local_track(traj: &Trajectory) -> Result<Track> {
    let local = match traj.frame() {
        Frame::LocalNed => traj.clone(),
        Frame::Geodetic => geodetic_to_local_ned(traj, traj.origin(), &EarthModel::wgs84())?,
    };
    Ok(local.points().iter().map(|p| (p.t, p.position)).collect())
}

/// Index of the sample of `track` nearest to `t` (ties to the earlier).
fn nearest(track: &[(f64, Vector3<f64>)], t: f64) -> usize {
    let k = track.partition_point(|s| s.0 < t);
    if k == 0 {
        0
    } else if k == track.len() || t - track[k - 1].0 <= track[k].0 - t {
        k - 1
    } else {
        k
    }
}

/// Per-GT-timestamp position error `‖p̂(tᵢ) − p(tᵢ)‖`, with predictions
/// resampled to GT times by nearest neighbour. GT rows outside the
/// prediction's time span are skipped.
pub fn ate_series(pred: &[(f64, Vector3<f64>)], gt: &[(f64, Vector3<f64>)]) -> Result<Vec<(f64, f64)>> {
    let (Some(first), Some(last)) = (pred.first(), pred.last()) else {
        return Err(Error::input("empty predicted trajectory"));
    };
    // Half a nominal prediction period of slack at each end.
    let slack = if pred.len() > 1 {
        0.5 * (last.0 - first.0) / (pred.len() - 1) as f64
    } else {
        0.0
    };
    let out: Vec<(f64, f64)> = gt
        .iter()
        .filter(|g| g.0 >= first.0 - slack && g.0 <= last.0 + slack)
        .map(|g| (g.0, (pred[nearest(pred, g.0)].1 - g.1).norm()))
        .collect();
    if out.is_empty() {
        return Err(Error::input("predicted and GT trajectories do not overlap in time"));
    }
    Ok(out)
}

pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<Vec<(f64, f64)>> {
    ate_series(&local_track(pred)?, &local_track(gt)?)
}

fn values(series: &[(f64, f64)]) -> impl Iterator<Item = f64> + '_ {
    series.iter().map(|x| x.1)
}

pub fn prmse(series: &[(f64, f64)]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::input("PRMSE of an empty series"));
    }
    Ok((values(series).map(|e| e * e).sum::<f64>() / series.len() as f64).sqrt())
}

pub fn mate(series: &[(f64, f64)]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::input("MATE of an empty series"));
    }
    Ok(values(series).sum::<f64>() / series.len() as f64)
}

/// Horizontal polyline length of a track.
pub fn path_length(track: &[(f64, Vector3<f64>)]) -> f64 {
    track
        .windows(2)
        .map(|w| (w[1].1.x - w[0].1.x).hypot(w[1].1.y - w[0].1.y))
        .sum()
}

/// PRMSE as a percentage of the distance travelled `d`.
pub fn tde(prmse: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::input("total distance must be positive"));
    }
    Ok(prmse / d * 100.0)
}

/// Error at the last GT timestamp covered by the prediction.
pub fn fde(series: &[(f64, f64)]) -> Result<f64> {
    series
        .last()
        .map(|x| x.1)
        .ok_or_else(|| Error::input("FDE of an empty series"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub trajectory: String,
    pub prmse: f64,
    pub mate: f64,
    pub tde: f64,
    pub fde: f64,
}

impl TrajectoryMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Prmse => self.prmse,
            Metric::Mate => self.mate,
            Metric::Tde => self.tde,
            Metric::Fde => self.fde,
        }
    }
}

/// All metrics of `pred` against `gt`, plus the ATE series.
pub fn evaluate_tracks(
    id: &str,
    pred: &[(f64, Vector3<f64>)],
    gt: &[(f64, Vector3<f64>)],
) -> Result<(TrajectoryMetrics, Vec<(f64, f64)>)> {
    let series = ate_series(pred, gt)?;
    let p = prmse(&series)?;
    let m = TrajectoryMetrics {
        trajectory: id.to_string(),
        prmse: p,
        mate: mate(&series)?,
        tde: tde(p, path_length(gt))?,
        fde: fde(&series)?,
    };
    Ok((m, series))
}

pub fn evaluate(id: &str, pred: &Trajectory, gt: &Trajectory) -> Result<(TrajectoryMetrics, Vec<(f64, f64)>)> {
    evaluate_tracks(id, &local_track(pred)?, &local_track(gt)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Prmse,
    Mate,
    Tde,
    Fde,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Prmse, Metric::Mate, Metric::Tde, Metric::Fde];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Prmse => "PRMSE",
            Metric::Mate => "MATE",
            Metric::Tde => "TDE",
            Metric::Fde => "FDE",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Tde => "%",
            _ => "m",
        }
    }
}

pub const METRICS_HEADER: &str = "trajectory,PRMSE,MATE,TDE,FDE";

pub fn metrics_csv(rows: &[TrajectoryMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.16e},{:.16e},{:.16e},{:.16e}", r.trajectory, r.prmse, r.mate, r.tde, r.fde);
    }
    s
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<TrajectoryMetrics>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let header = reader.headers().map_err(|e| parse(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(parse(1, format!("expected header `{METRICS_HEADER}`")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return Err(parse(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| parse(line, format!("`{}` is not a number", &rec[i])))
        };
        rows.push(TrajectoryMetrics {
            trajectory: rec[0].to_string(),
            prmse: num(1)?,
            mate: num(2)?,
            tde: num(3)?,
            fde: num(4)?,
        });
    }
    Ok(rows)
}

/// `(baseline − ours) / baseline × 100`.
pub fn improvement(baseline: f64, ours: f64) -> f64 {
    (baseline - ours) / baseline * 100.0
}

/// Metrics of several methods on a common trajectory set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub trajectories: Vec<String>,
    /// `values[method][trajectory]`.
    pub values: Vec<Vec<TrajectoryMetrics>>,
    /// Index of the method the others are compared against.
    pub ours: usize,
}

impl Comparison {
    pub fn average(&self, method: usize, metric: Metric) -> f64 {
        let v = &self.values[method];
        v.iter().map(|m| m.get(metric)).sum::<f64>() / v.len() as f64
    }

    /// Improvement of the reference method over `method`; `None` for the
    /// reference itself.
    pub fn improvement(&self, method: usize, metric: Metric) -> Option<f64> {
        (method != self.ours).then(|| improvement(self.average(method, metric), self.average(self.ours, metric)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,method");
        for t in &self.trajectories {
            s.push(',');
            s.push_str(t);
        }
        s.push_str(",average");
        let with_improvement = self.methods.len() > 1;
        if with_improvement {
            s.push_str(",improvement_percent");
        }
        s.push('\n');
        for metric in Metric::ALL {
            for (k, method) in self.methods.iter().enumerate() {
                let _ = write!(s, "{},{}", metric.name(), method);
                for m in &self.values[k] {
                    let _ = write!(s, ",{:.16e}", m.get(metric));
                }
                let _ = write!(s, ",{:.16e}", self.average(k, metric));
                if with_improvement {
                    match self.improvement(k, metric) {
                        Some(i) => {
                            let _ = write!(s, ",{i:.16e}");
                        }
                        None => s.push(','),
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    /// Fixed-width table in the layout metric × method × trajectory, with
    /// averages and integer improvement percentages.
    pub fn to_table(&self) -> String {
        let with_improvement = self.methods.len() > 1;
        let mw = self.methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
        let mut header = format!("{:<10} {:<mw$}", "Metric", "Method");
        for t in &self.trajectories {
            let _ = write!(header, " {:>10}", t);
        }
        let _ = write!(header, " {:>10}", "Average");
        if with_improvement {
            let _ = write!(header, " {:>15}", "Improvement[%]");
        }
        let rule = "-".repeat(header.len());
        let mut s = format!("{header}\n{rule}\n");
        for metric in Metric::ALL {
            let label = format!("{} [{}]", metric.name(), metric.unit());
            for (k, method) in self.methods.iter().enumerate() {
                let first = if k == 0 { label.as_str() } else { "" };
                let _ = write!(s, "{first:<10} {method:<mw$}");
                for m in &self.values[k] {
                    let _ = write!(s, " {:>10.3}", m.get(metric));
                }
                let _ = write!(s, " {:>10.3}", self.average(k, metric));
                if with_improvement {
                    match self.improvement(k, metric) {
                        Some(i) => {
                            let _ = write!(s, " {:>15.0}", i);
                        }
                        None => {
                            let _ = write!(s, " {:>15}", "--");
                        }
                    }
                }
                s.push('\n');
            }
            s.push_str(&rule);
            s.push('\n');
        }
        s
    }
}

/// Assembles a comparison. Every method must report the same trajectory
/// ids; rows are matched by id and ordered as in the first method.
pub fn compare(methods: &[(String, Vec<TrajectoryMetrics>)], ours: usize) -> Result<Comparison> {
    let Some((_, first)) = methods.first() else {
        return Err(Error::input("no methods to compare"));
    };
    if ours >= methods.len() {
        return Err(Error::input("reference method index out of range"));
    }
    if first.is_empty() {
        return Err(Error::input("no trajectories to compare"));
    }
    let ids: Vec<String> = first.iter().map(|m| m.trajectory.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input("duplicate trajectory id"));
    }
    let mut values = Vec::with_capacity(methods.len());
    for (label, rows) in methods {
        let mut ordered = Vec::with_capacity(ids.len());
        for id in &ids {
            let row = rows
                .iter()
                .find(|m| &m.trajectory == id)
                .ok_or_else(|| Error::input(format!("method `{label}` has no trajectory `{id}`")))?;
            ordered.push(row.clone());
        }
        if rows.len() != ids.len() {
            return Err(Error::input(format!("method `{label}` reports a different trajectory set")));
        }
        values.push(ordered);
    }
    Ok(Comparison {
        methods: methods.iter().map(|m| m.0.clone()).collect(),
        trajectories: ids,
        values,
        ours,
    })
}

pub fn ate_csv(series: &[(f64, f64)]) -> String {
    let mut s = String::from("t,ate\n");
    for (t, e) in series {
        let _ = writeln!(s, "{t:.16e},{e:.16e}");
    }
    s
}

pub fn track_csv(track: &[(f64, Vector3<f64>)]) -> String {
    let mut s = String::from("t,n,e\n");
    for (t, p) in track {
        let _ = writeln!(s, "{t:.16e},{:.16e},{:.16e}", p.x, p.y);
    }
    s
}

const PALETTE: [&str; 6] = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Self-contained SVG of horizontal tracks, east to the right and north up.
pub fn svg_tracks(title: &str, tracks: &[(String, Vec<(f64, Vector3<f64>)>)]) -> String {
    let (w, h, pad) = (640.0, 640.0, 40.0);
    let pts = tracks.iter().flat_map(|t| t.1.iter().map(|p| (p.1.y, p.1.x)));
    let (mut e0, mut e1, mut n0, mut n1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (e, n) in pts {
        e0 = e0.min(e);
        e1 = e1.max(e);
        n0 = n0.min(n);
        n1 = n1.max(n);
    }
    if e0 > e1 {
        (e0, e1, n0, n1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = (e1 - e0).max(n1 - n0).max(1e-9);
    let scale = (w - 2.0 * pad) / span;
    let x = |e: f64| pad + (e - e0) * scale;
    let y = |n: f64| h - pad - (n - n0) * scale;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
    for (i, (label, track)) in tracks.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (_, p) in track {
            let _ = write!(points, "{:.2},{:.2} ", x(p.y), y(p.x));
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            w - 160.0,
            44.0 + 16.0 * i as f64,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, offset: Vector3<f64>, drift: f64) -> Track {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.2;
                (t, Vector3::new(t, 0.5 * t, 0.0) + offset + Vector3::new(drift * t, 0.0, 0.0))
            })
            .collect()
    }

    #[test]
    fn ate_examples() {
        let gt = line(50, Vector3::zeros(), 0.0);
        assert!(ate_series(&gt, &gt).unwrap().iter().all(|x| x.1 == 0.0));
        let off = line(50, Vector3::new(3.0, 4.0, 0.0), 0.0);
        assert!(ate_series(&off, &gt).unwrap().iter().all(|x| (x.1 - 5.0).abs() < 1e-12));
        let r = 0.3;
        let drift = line(50, Vector3::zeros(), r);
        let s = ate_series(&drift, &gt).unwrap();
        for (t, e) in &s {
            assert!((e - r * t).abs() < 1e-12);
        }
        let total = gt.last().unwrap().0;
        assert!((fde(&s).unwrap() - r * total).abs() < 1e-12);
        let late: Track = gt.iter().map(|(t, p)| (t + 100.0, *p)).collect();
        assert!(ate_series(&late, &gt).is_err());
    }

    #[test]
    fn scalar_metric_examples() {
        let c = vec![(0.0, 5.0); 4];
        assert_eq!(prmse(&c).unwrap(), 5.0);
        assert_eq!(mate(&c).unwrap(), 5.0);
        let s = vec![(0.0, 0.0), (1.0, 2.0)];
        assert!((prmse(&s).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mate(&s).unwrap(), 1.0);
        assert_eq!(tde(5.0, 100.0).unwrap(), 5.0);
        assert_eq!(tde(5.0, 200.0).unwrap(), 2.5);
        assert!(tde(5.0, 0.0).is_err());
        assert!(prmse(&[]).is_err());
    }

    #[test]
    fn circle_path_length_is_circumference() {
        let r = 10.0;
        let track: Track = (0..=3000)
            .map(|k| {
                let a = k as f64 / 3000.0 * std::f64::consts::TAU;
                (k as f64, Vector3::new(r * a.cos(), r * a.sin(), 0.0))
            })
            .collect();
        let d = path_length(&track);
        assert!((d / (std::f64::consts::TAU * r) - 1.0).abs() < 1e-3);
    }

    fn row(id: &str, p: f64) -> TrajectoryMetrics {
        TrajectoryMetrics {
            trajectory: id.into(),
            prmse: p,
            mate: p,
            tde: p,
            fde: p,
        }
    }

    #[test]
    fn compare_examples() {
        let c = compare(
            &[
                ("base".into(), vec![row("a", 8.1)]),
                ("ours".into(), vec![row("a", 2.1)]),
            ],
            1,
        )
        .unwrap();
        assert_eq!(c.improvement(0, Metric::Prmse).unwrap().round(), 74.0);
        assert_eq!(c.improvement(1, Metric::Prmse), None);
        let c = compare(
            &[
                ("base".into(), vec![row("a", 528.3)]),
                ("ours".into(), vec![row("a", 14.5)]),
            ],
            1,
        )
        .unwrap();
        assert_eq!(c.improvement(0, Metric::Prmse).unwrap().round(), 97.0);
        let same = compare(&[("x".into(), vec![row("a", 3.0)]), ("y".into(), vec![row("a", 3.0)])], 1).unwrap();
        assert_eq!(same.improvement(0, Metric::Fde).unwrap(), 0.0);
    }

    #[test]
    fn compare_rejects_mismatched_sets_and_keeps_label_order() {
        assert!(compare(&[("x".into(), vec![row("a", 1.0)]), ("y".into(), vec![row("b", 1.0)])], 0).is_err());
        assert!(compare(
            &[
                ("x".into(), vec![row("a", 1.0)]),
                ("y".into(), vec![row("a", 1.0), row("b", 1.0)])
            ],
            0
        )
        .is_err());
        let c = compare(
            &[
                ("zeta".into(), vec![row("b", 1.0), row("a", 2.0)]),
                ("alpha".into(), vec![row("a", 1.0), row("b", 1.0)]),
            ],
            1,
        )
        .unwrap();
        assert_eq!(c.methods, vec!["zeta", "alpha"]);
        assert_eq!(c.trajectories, vec!["b", "a"]);
        let table = c.to_table();
        assert!(table.find("zeta").unwrap() < table.find("alpha").unwrap());
        let single = compare(&[("only".into(), vec![row("a", 1.0)])], 0).unwrap();
        assert!(!single.to_csv().contains("improvement"));
        assert!(!single.to_table().contains("Improvement"));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("a", 0.1), row("b", 2.0 / 3.0)];
        let p = dir.path().join("m.csv");
        std::fs::write(&p, metrics_csv(&rows)).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = svg_tracks("a < b", &[("gt".into(), line(5, Vector3::zeros(), 0.0))]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
    }

    proptest! {
        #[test]
        fn prmse_dominates_mate(v in prop::collection::vec(0.0..100.0f64, 1..50)) {
            let s: Vec<(f64, f64)> = v.iter().enumerate().map(|(i, &e)| (i as f64, e)).collect();
            prop_assert!(prmse(&s).unwrap() >= mate(&s).unwrap() - 1e-12);
            prop_assert!(fde(&s).unwrap() <= v.iter().cloned().fold(0.0, f64::max));
        }

        #[test]
        fn metrics_are_translation_and_time_shift_invariant(
            dx in -50.0..50.0f64, dy in -50.0..50.0f64, dt in -20.0..20.0f64, drift in 0.0..1.0f64
        ) {
            let gt = line(40, Vector3::zeros(), 0.0);
            let pred = line(40, Vector3::new(0.5, -0.2, 0.0), drift);
            let (base, _) = evaluate_tracks("x", &pred, &gt).unwrap();
            let shift = |t: &Track| -> Track { t.iter().map(|(s, p)| (s + dt, p + Vector3::new(dx, dy, 0.0))).collect() };
            let (moved, _) = evaluate_tracks("x", &shift(&pred), &shift(&gt)).unwrap();
            prop_assert!((base.prmse - moved.prmse).abs() < 1e-9);
            prop_assert!((base.mate - moved.mate).abs() < 1e-9);
            prop_assert!((base.fde - moved.fde).abs() < 1e-9);
            prop_assert!((base.tde - moved.tde).abs() < 1e-9);
        }
    }
}
