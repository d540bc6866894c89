//! CSV and JSON formats.
//!
//! Trajectory files hold one row per event. The initial count is not part
//! of the file and is supplied by the caller (normally from the params
//! sidecar written next to the data).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::MomentCurve;
use crate::sim::{EventKind, PartialRecord, PartialTrajectory, Trajectory};
use crate::stats::{EmpiricalMoments, RatioCurves};

pub const FULL_HEADER: [&str; 4] = ["t", "dx", "dy", "dz"];
pub const PARTIAL_HEADER: [&str; 3] = ["t", "m", "y"];
pub const MISSING: &str = "NA";

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| x.to_string())
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if got.iter().map(String::as_str).eq(want.iter().copied()) {
        return Ok(());
    }
    let hint = if got.iter().map(String::as_str).eq(FULL_HEADER) {
        " (this is a full-data file)"
    } else if got.iter().map(String::as_str).eq(PARTIAL_HEADER) {
        " (this is a partial-data file)"
    } else {
        ""
    };
    Err(Error::Format(format!("expected header `{}`, found `{}`{hint}", want.join(","), got.join(","))))
}

fn parse<T: std::str::FromStr>(field: &str, row: usize, name: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("row {row}: cannot parse {name} = `{field}`")))
}

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(FULL_HEADER).map_err(csv_err)?;
    for e in &traj.events {
        let (dx, dy, dz) = e.kind.delta();
        wtr.write_record([e.t.to_string(), dx.to_string(), dy.to_string(), dz.to_string()])
            .map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

pub fn read_trajectory<R: Read>(r: R, s0: u64) -> Result<Trajectory> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &FULL_HEADER)?;
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let t: f64 = parse(&rec[0], row, "t")?;
        let d: [i64; 3] =
            [parse(&rec[1], row, "dx")?, parse(&rec[2], row, "dy")?, parse(&rec[3], row, "dz")?];
        let kind = EventKind::from_delta(d[0], d[1], d[2]).ok_or_else(|| {
            Error::Format(format!("row {row}: ({}, {}, {}) is not a valid event", d[0], d[1], d[2]))
        })?;
        events.push((t, kind));
    }
    Trajectory::from_events(s0, &events)
}

pub fn write_partial<W: Write>(w: W, ptraj: &PartialTrajectory) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PARTIAL_HEADER).map_err(csv_err)?;
    for r in &ptraj.records {
        wtr.write_record([r.t.to_string(), r.m.to_string(), r.y.to_string()]).map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// Reads a partial trajectory and checks every step.
pub fn read_partial<R: Read>(r: R, m0: u64) -> Result<PartialTrajectory> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &PARTIAL_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        records.push(PartialRecord {
            t: parse(&rec[0], row, "t")?,
            m: parse(&rec[1], row, "m")?,
            y: parse(&rec[2], row, "y")?,
        });
    }
    let ptraj = PartialTrajectory { m0, records, t_end: None };
    ptraj.steps()?;
    Ok(ptraj)
}

pub fn write_moment_curve<W: Write>(w: W, curve: &MomentCurve) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "mean", "variance"]).map_err(csv_err)?;
    for i in 0..curve.times.len() {
        wtr.write_record([curve.times[i].to_string(), curve.mean[i].to_string(), curve.variance[i].to_string()])
            .map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// Empirical and theoretical moments side by side on the same grid.
pub fn write_moment_comparison<W: Write>(w: W, emp: &EmpiricalMoments, theo: &MomentCurve) -> Result<()> {
    if emp.times != theo.times {
        return Err(Error::InvalidInput("empirical and theoretical grids differ".into()));
    }
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "emp_mean", "emp_var", "theo_mean", "theo_var"]).map_err(csv_err)?;
    for i in 0..emp.times.len() {
        wtr.write_record([
            emp.times[i].to_string(),
            emp.mean[i].to_string(),
            emp.variance[i].to_string(),
            theo.mean[i].to_string(),
            theo.variance[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// Square grid with the time labels as the first row and column.
pub fn write_correlation_grid<W: Write>(w: W, times: &[f64], matrix: &[Vec<Option<f64>>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain(times.iter().map(f64::to_string)).collect();
    wtr.write_record(&header).map_err(csv_err)?;
    for (t, row) in times.iter().zip(matrix) {
        let rec: Vec<String> =
            std::iter::once(t.to_string()).chain(row.iter().map(|&v| fmt_opt(v))).collect();
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// Long format `replicate,t,series,ratio`, missing ratios written as `NA`.
pub fn write_ratios<W: Write>(w: W, curves: &[RatioCurves]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["replicate", "t", "series", "ratio"]).map_err(csv_err)?;
    for (rep, c) in curves.iter().enumerate() {
        for (name, values) in c.series() {
            for (t, &v) in c.times.iter().zip(values) {
                wtr.write_record([rep.to_string(), t.to_string(), name.to_string(), fmt_opt(v)])
                    .map_err(csv_err)?;
            }
        }
    }
    wtr.flush().map_err(io_err)
}

pub fn write_trace<W: Write>(w: W, trace: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["generation", "best_loglik"]).map_err(csv_err)?;
    for (g, v) in trace.iter().enumerate() {
        wtr.write_record([g.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// One column of values under a single header.
pub fn write_column<W: Write>(w: W, name: &str, values: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([name]).map_err(csv_err)?;
    for v in values {
        wtr.write_record([v.to_string()]).map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::sim::{project_partial, simulate};

    #[test]
    fn trajectory_round_trip_is_exact() {
        let p = ModelParams::config1().with_s0(20);
        let tr = simulate(&p, 11, None);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr).unwrap();
        let back = read_trajectory(buf.as_slice(), 20).unwrap();
        assert_eq!(back.events, tr.events);

        let pt = project_partial(&tr);
        let mut buf = Vec::new();
        write_partial(&mut buf, &pt).unwrap();
        let back = read_partial(buf.as_slice(), 20).unwrap();
        assert_eq!(back.records, pt.records);
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let tr = Trajectory::from_events(0, &[]).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,dx,dy,dz\n");
    }

    #[test]
    fn schema_mismatch_names_the_other_schema() {
        let err = read_partial("t,dx,dy,dz\n1,1,0,0\n".as_bytes(), 1).unwrap_err();
        assert!(err.to_string().contains("full-data"), "{err}");
        let err = read_trajectory("t,m,y\n1,2,0\n".as_bytes(), 1).unwrap_err();
        assert!(err.to_string().contains("partial-data"), "{err}");
    }

    #[test]
    fn bad_rows_are_reported() {
        assert!(read_trajectory("t,dx,dy,dz\n1,1,1,0\n".as_bytes(), 1).is_err());
        assert!(read_trajectory("t,dx,dy,dz\nx,1,0,0\n".as_bytes(), 1).is_err());
        let err = read_partial("t,m,y\n1,3,0\n".as_bytes(), 1).unwrap_err();
        assert!(matches!(err, Error::MalformedObservation { step: 1, .. }));
    }

    #[test]
    fn ratio_rows_mark_missing() {
        let c = RatioCurves { times: vec![1.0], x: None, z: None, m: vec![None], y: vec![Some(0.5)] };
        let mut buf = Vec::new();
        write_ratios(&mut buf, &[c]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "replicate,t,series,ratio\n0,1,m,NA\n0,1,y,0.5\n");
    }
}
