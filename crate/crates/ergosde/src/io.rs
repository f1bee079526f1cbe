//! CSV persistence for trajectories, training sets, and statistics
//! reports.
//!
//! Data files carry a single metadata header line `# d=<d> delta=<δ>
//! n=<N>` followed by one row per sample. Values print as `{:.16e}` (17
//! significant digits), so every float survives a save/load round trip
//! bit for bit and repeated runs produce byte-identical files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::sde::{TrainingSet, Trajectory};
use crate::stats::{ScalingReport, TwoPointReport};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(token: &str, context: &str) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| {
        Error::Configuration(format!("{context}: cannot parse `{token}` as a number"))
    })
}

/// Parses `# d=<d> delta=<δ> n=<N>` into `(d, delta, n)`.
fn parse_header(line: &str) -> Result<(usize, f64, usize)> {
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Configuration("data file must start with a `#` header".into()))?;
    let mut d = None;
    let mut delta = None;
    let mut n = None;
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("malformed header token `{token}`")))?;
        match key {
            "d" => {
                d = Some(value.parse::<usize>().map_err(|_| {
                    Error::Configuration(format!("header d=`{value}` is not a count"))
                })?)
            }
            "delta" => delta = Some(parse_f64(value, "header delta")?),
            "n" => {
                n = Some(value.parse::<usize>().map_err(|_| {
                    Error::Configuration(format!("header n=`{value}` is not a count"))
                })?)
            }
            other => {
                return Err(Error::Configuration(format!("unknown header key `{other}`")));
            }
        }
    }
    match (d, delta, n) {
        (Some(d), Some(delta), Some(n)) => Ok((d, delta, n)),
        _ => Err(Error::Configuration(
            "header must provide d=<d> delta=<δ> n=<N>".into(),
        )),
    }
}

/// Renders a trajectory as CSV: header line, then one row of `d` state
/// coordinates per stored state.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let d = traj.dim();
    let mut out = String::with_capacity(traj.n_states() * d * 24);
    out.push_str(&format!("# d={} delta={} n={}\n", d, fmt(traj.delta()), traj.n_states()));
    for state in traj.iter_states() {
        let row: Vec<String> = state.iter().map(|&v| fmt(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a trajectory written by [`trajectory_to_csv`]. The seed is not
/// persisted; loaded trajectories carry seed 0.
pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Configuration("empty data file".into()))?;
    let (d, delta, n) = parse_header(header)?;
    let mut states = Vec::with_capacity(n * d);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::Configuration(format!(
                "row {} has {} columns, expected {d}",
                i + 1,
                fields.len()
            )));
        }
        for f in fields {
            states.push(parse_f64(f, "state value")?);
        }
    }
    if states.len() != n * d {
        return Err(Error::Configuration(format!(
            "header promises {n} states but file has {}",
            states.len() / d.max(1)
        )));
    }
    Trajectory::from_states(states, d, delta, 0)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, trajectory_to_csv(traj))?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_csv(&std::fs::read_to_string(path)?)
}

/// Renders a training set as CSV: header line, then rows
/// `x_1,…,x_d,y_1,…,y_d`.
pub fn training_to_csv(ts: &TrainingSet) -> String {
    let d = ts.dim();
    let mut out = String::with_capacity(ts.len() * d * 48);
    out.push_str(&format!("# d={} delta={} n={}\n", d, fmt(ts.delta()), ts.len()));
    for i in 0..ts.len() {
        let row: Vec<String> = ts
            .point(i)
            .iter()
            .chain(ts.label(i))
            .map(|&v| fmt(v))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a training set written by [`training_to_csv`].
pub fn training_from_csv(text: &str) -> Result<TrainingSet> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Configuration("empty data file".into()))?;
    let (d, delta, n) = parse_header(header)?;
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n * d);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * d {
            return Err(Error::Configuration(format!(
                "row {} has {} columns, expected {}",
                i + 1,
                fields.len(),
                2 * d
            )));
        }
        for f in &fields[..d] {
            points.push(parse_f64(f, "training point")?);
        }
        for f in &fields[d..] {
            labels.push(parse_f64(f, "training label")?);
        }
    }
    if points.len() != n * d {
        return Err(Error::Configuration(format!(
            "header promises {n} samples but file has {}",
            points.len() / d.max(1)
        )));
    }
    TrainingSet::from_rows(points, labels, d, delta)
}

pub fn write_training(ts: &TrainingSet, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, training_to_csv(ts))?)
}

pub fn read_training(path: &Path) -> Result<TrainingSet> {
    training_from_csv(&std::fs::read_to_string(path)?)
}

/// Renders a lagged-correlation report as CSV with a metadata comment and
/// columns `lag,time,value,std_error`.
pub fn two_point_to_csv(report: &TwoPointReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# model={} a={} b={} delta={} n_steps={} burn_in={} seed={}\n",
        report.model_name,
        report.observable_a,
        report.observable_b,
        fmt(report.delta),
        report.n_steps,
        report.burn_in,
        report.seed
    ));
    out.push_str("lag,time,value,std_error\n");
    for (i, &lag) in report.lags.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            lag,
            fmt(lag as f64 * report.delta),
            fmt(report.values[i]),
            fmt(report.std_errors[i])
        ));
    }
    out
}

pub fn write_two_point_csv(report: &TwoPointReport, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, two_point_to_csv(report))?)
}

/// Renders sweep reports as CSV with one row per (ε, lag) and columns
/// `eps,lag,error,std_error`; the lag field is empty for one-point
/// reports.
pub fn scaling_to_csv(reports: &[ScalingReport]) -> String {
    let mut out = String::from("eps,lag,error,std_error\n");
    for report in reports {
        let lag_field = report.lag.map(|l| l.to_string()).unwrap_or_default();
        for (i, &eps) in report.epsilons.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt(eps),
                lag_field,
                fmt(report.errors[i]),
                fmt(report.std_errors[i])
            ));
        }
    }
    out
}

pub fn write_scaling_csv(reports: &[ScalingReport], path: &Path) -> Result<()> {
    Ok(std::fs::write(path, scaling_to_csv(reports))?)
}

/// Renders the fitted-slope summary of sweep reports as a JSON array of
/// `{lag, slope, intercept, points_used}` objects.
pub fn scaling_summary_json(reports: &[ScalingReport]) -> String {
    let summary: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "lag": r.lag,
                "slope": r.slope,
                "intercept": r.intercept,
                "points_used": r.points_used,
            })
        })
        .collect();
    serde_json::to_string_pretty(&summary).expect("summary serializes")
}
