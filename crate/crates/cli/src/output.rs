//! CSV artifacts. Floats are written with 17 significant digits so that
//! reading a file back reproduces the stored values exactly.

use std::path::Path;

use beamvi_core::diagnostics::{ConservationReport, Direction};
use beamvi_core::grid::{DiscreteField, GridError};
use beamvi_core::liegroup::Rotation;
use beamvi_core::GroupElement;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}, record {record}: {message}")]
    Format {
        path: String,
        record: usize,
        message: String,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, OutputError> {
    csv::Writer::from_path(path).map_err(|source| OutputError::Csv {
        path: path.display().to_string(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.display().to_string(),
        source,
    }
}

pub const TRAJECTORY_HEADER: [&str; 28] = [
    "j", "t", "a", "s", "R11", "R12", "R13", "R21", "R22", "R23", "R31", "R32", "R33", "x", "y",
    "z", "xi1", "xi2", "xi3", "xi4", "xi5", "xi6", "eta1", "eta2", "eta3", "eta4", "eta5", "eta6",
];

/// One row per node `(j, a)`, row-major. `ξ`, `η` use the field's edge
/// convention and are `NaN` where undefined.
pub fn write_trajectory(path: &Path, field: &DiscreteField) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(TRAJECTORY_HEADER).map_err(&err)?;
    let nan6 = [f64::NAN; 6];
    for j in 0..field.n_time() {
        for a in 0..field.n_space() {
            let g = field.at(j, a);
            let xi = field
                .xi_with_edge(j, a)
                .ok()
                .flatten()
                .map_or(nan6, |v| v.to_array());
            let eta = field
                .eta_with_edge(j, a)
                .ok()
                .flatten()
                .map_or(nan6, |v| v.to_array());
            let mut rec = Vec::with_capacity(28);
            rec.push(j.to_string());
            rec.push(fmt_f64(j as f64 * field.dt()));
            rec.push(a.to_string());
            rec.push(fmt_f64(a as f64 * field.ds()));
            let r = g.rot.matrix();
            for row in 0..3 {
                for col in 0..3 {
                    rec.push(fmt_f64(r[(row, col)]));
                }
            }
            rec.extend(g.pos.iter().map(|v| fmt_f64(*v)));
            rec.extend(xi.iter().map(|v| fmt_f64(*v)));
            rec.extend(eta.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec).map_err(&err)?;
        }
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a trajectory written by [`write_trajectory`]. The step sizes are
/// taken from the `t` and `s` columns; the edge convention is not stored
/// and comes back as the default.
pub fn read_trajectory(path: &Path) -> Result<DiscreteField, OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let format = |record: usize, message: String| OutputError::Format {
        path: path.display().to_string(),
        record,
        message,
    };
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.len() < 16
        || header
            .iter()
            .take(16)
            .ne(TRAJECTORY_HEADER.iter().take(16).copied())
    {
        return Err(format(
            0,
            "header does not start with j,t,a,s,R11..R33,x,y,z".into(),
        ));
    }
    let mut rows: Vec<(usize, usize, f64, f64, GroupElement)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |k: usize| -> Result<f64, OutputError> {
            rec.get(k)
                .ok_or_else(|| format(i + 1, format!("missing column {k}")))?
                .parse::<f64>()
                .map_err(|e| format(i + 1, format!("column {}: {e}", TRAJECTORY_HEADER[k])))
        };
        let idx = |k: usize| -> Result<usize, OutputError> {
            rec.get(k)
                .ok_or_else(|| format(i + 1, format!("missing column {k}")))?
                .parse::<usize>()
                .map_err(|e| format(i + 1, format!("column {}: {e}", TRAJECTORY_HEADER[k])))
        };
        let mut m = Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = num(4 + 3 * row + col)?;
            }
        }
        let pos = Vector3::new(num(13)?, num(14)?, num(15)?);
        rows.push((
            idx(0)?,
            idx(2)?,
            num(1)?,
            num(3)?,
            GroupElement::new(Rotation::from_matrix_unchecked(m), pos),
        ));
    }
    let n_time = rows.iter().map(|r| r.0).max().map_or(0, |j| j + 1);
    let n_space = rows.iter().map(|r| r.1).max().map_or(0, |a| a + 1);
    if n_time < 2 || n_space < 2 || rows.len() != n_time * n_space {
        return Err(format(
            rows.len(),
            format!(
                "expected a full grid, got {} records for {n_time}x{n_space}",
                rows.len()
            ),
        ));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    for (k, r) in rows.iter().enumerate() {
        if (r.0, r.1) != (k / n_space, k % n_space) {
            return Err(format(k + 1, format!("duplicate node ({}, {})", r.0, r.1)));
        }
    }
    let dt = rows[n_space].2 - rows[0].2;
    let ds = rows[1].3 - rows[0].3;
    if !(dt > 0.0 && ds > 0.0) {
        return Err(format(1, "t and s must increase".into()));
    }
    let nodes = rows.into_iter().map(|r| r.4).collect();
    Ok(DiscreteField::new(n_time, n_space, dt, ds, nodes)?)
}

/// One row per slice. `limit` keeps only the first `limit` slices.
pub fn write_diagnostics(
    path: &Path,
    report: &ConservationReport,
    step: f64,
    limit: Option<usize>,
) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let coord = match report.direction {
        Direction::Time => "t",
        Direction::Space => "s",
    };
    w.write_record([
        "index",
        coord,
        "energy",
        "J1",
        "J2",
        "J3",
        "J4",
        "J5",
        "J6",
        "energy_drift",
        "momentum_drift",
    ])
    .map_err(&err)?;
    let n = limit.unwrap_or(usize::MAX).min(report.energy.len());
    for i in 0..n {
        let mut rec = vec![
            i.to_string(),
            fmt_f64(i as f64 * step),
            fmt_f64(report.energy[i]),
        ];
        rec.extend(report.momentum[i].to_array().iter().map(|v| fmt_f64(*v)));
        rec.push(fmt_f64(report.energy_drift[i]));
        rec.push(fmt_f64(report.momentum_drift[i]));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A two-line CSV: header and one row of named values.
pub fn write_summary(path: &Path, entries: &[(String, String)]) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(entries.iter().map(|e| e.0.as_str()))
        .map_err(&err)?;
    w.write_record(entries.iter().map(|e| e.1.as_str()))
        .map_err(&err)?;
    w.flush().map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(header).map_err(&err)?;
    for row in rows {
        w.write_record(row).map_err(&err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use beamvi_core::grid::EdgeConvention;
    use beamvi_core::liegroup::cay_so3;

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut nodes = Vec::new();
        for j in 0..3 {
            for a in 0..4 {
                let w = Vector3::new(0.1 * j as f64, -0.2, 0.3 * a as f64);
                nodes.push(GroupElement::new(
                    cay_so3(&w),
                    Vector3::new(0.01 * j as f64, 1.0 / 3.0, 0.1 * a as f64),
                ));
            }
        }
        let field = DiscreteField::new(3, 4, 0.5, 0.1, nodes)
            .unwrap()
            .with_edge(EdgeConvention::ZeroTraction);
        write_trajectory(&path, &field).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.nodes(), field.nodes());
        assert_eq!((back.n_time(), back.n_space()), (3, 4));
        assert!((back.dt() - 0.5).abs() < 1e-15 && (back.ds() - 0.1).abs() < 1e-15);
        let text = std::fs::read_to_string(&path).unwrap();
        // Last row has no ξ under zero traction.
        assert!(text.lines().last().unwrap().contains("NaN"));
    }

    #[test]
    fn truncated_trajectory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, TRAJECTORY_HEADER.join(",") + "\n").unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(OutputError::Format { .. })
        ));
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(OutputError::Format { .. })
        ));
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }
}
