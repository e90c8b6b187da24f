//! CSV series for plotting experiment reports.

use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ConvergenceReport, HarnessError, LlnReport, StationarityReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentReport {
    Convergence(ConvergenceReport),
    Lln(LlnReport),
    Stationarity(StationarityReport),
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    let wrap = |source| HarnessError::Output { path: path.display().to_string(), source };
    let mut out = BufWriter::new(File::create(&path).map_err(wrap)?);
    writeln!(out, "{}", header.join(",")).map_err(wrap)?;
    for row in rows {
        writeln!(out, "{}", row.join(",")).map_err(wrap)?;
    }
    out.flush().map_err(wrap)?;
    Ok(path)
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Writes the report's CSV series into `dir` (created if missing) and
/// returns the paths written.
pub fn emit_plots(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Output { path: dir.display().to_string(), source })?;
    match report {
        ExperimentReport::Convergence(r) => {
            let summary: Vec<Vec<String>> = r
                .rows
                .iter()
                .map(|row| vec![fmt(row.r), fmt(row.median_sup_distance), fmt(row.max_sup_distance)])
                .collect();
            let mut raw = Vec::new();
            for row in &r.rows {
                for (rep, ds) in row.distances.iter().enumerate() {
                    for (t, d) in r.sample_times.iter().zip(ds) {
                        raw.push(vec![fmt(row.r), rep.to_string(), fmt(*t), fmt(*d)]);
                    }
                }
            }
            let routes = r.trajectory.fluid_z.first().map_or(0, |z| z.len());
            let mut header = vec!["time".to_string()];
            header.extend((0..routes).map(|i| format!("fluid_z_{i}")));
            header.extend((0..routes).map(|i| format!("sim_z_{i}")));
            let overlay: Vec<Vec<String>> = r
                .trajectory
                .times
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let mut row = vec![fmt(*t)];
                    row.extend(r.trajectory.fluid_z[k].iter().map(|v| fmt(*v)));
                    row.extend(r.trajectory.sim_z[k].iter().map(|v| fmt(*v)));
                    row
                })
                .collect();
            Ok(vec![
                write_csv(dir, "convergence.csv", &names(&["r", "median_sup_distance", "max_sup_distance"]), &summary)?,
                write_csv(dir, "distances.csv", &names(&["r", "replication", "time", "distance"]), &raw)?,
                write_csv(dir, "trajectory.csv", &header, &overlay)?,
            ])
        }
        ExperimentReport::Lln(r) => {
            let rows: Vec<Vec<String>> =
                r.rows.iter().map(|row| vec![fmt(row.r), fmt(row.median_discrepancy), fmt(row.max_discrepancy)]).collect();
            Ok(vec![write_csv(dir, "lln.csv", &names(&["r", "median_discrepancy", "max_discrepancy"]), &rows)?])
        }
        ExperimentReport::Stationarity(r) => {
            let rows: Vec<Vec<String>> = r.series.iter().map(|(t, a, b)| vec![fmt(*t), fmt(*a), fmt(*b)]).collect();
            Ok(vec![write_csv(dir, "stationarity.csv", &names(&["time", "distance", "perturbed_distance"]), &rows)?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::experiments::{assess_convergence, Trajectory};
    use super::*;

    #[test]
    fn empty_convergence_report_gives_headers_only() {
        let report = assess_convergence(0, vec![], None, vec![], Trajectory::default());
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plots(&ExperimentReport::Convergence(report), dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert_eq!(text, "r,median_sup_distance,max_sup_distance\n");
        let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(text, "time\n");
    }

    #[test]
    fn trajectory_columns() {
        let t = Trajectory { r: 10.0, times: vec![0.0], fluid_z: vec![vec![1.0, 2.0]], sim_z: vec![vec![1.1, 1.9]] };
        let report = assess_convergence(0, vec![0.0], None, vec![], t);
        let dir = tempfile::tempdir().unwrap();
        emit_plots(&ExperimentReport::Convergence(report), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert!(text.starts_with("time,fluid_z_0,fluid_z_1,sim_z_0,sim_z_1\n0.0000000000000000e0,"));
    }
}
