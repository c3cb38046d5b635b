//! File formats: trajectory CSV, parameter/fit JSON, statistics dumps.
//!
//! Trajectory CSV columns: `subject_id,t,x_1..x_r,d_1..d_s`, one row per
//! observation time, one file per run. Floats use shortest-round-trip
//! formatting, so rewriting identical data yields identical bytes.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::MleFit;
use crate::model::{Theta, Trajectory};
use crate::suffstats::{GeneralSuffStats, SuffStats};

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidInput("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// JSON mirror of [`Theta`]: `{"mu": [...], "omega": [[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaJson {
    pub mu: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
}

impl From<&Theta> for ThetaJson {
    fn from(t: &Theta) -> Self {
        ThetaJson {
            mu: t.mu.iter().copied().collect(),
            omega: matrix_to_rows(&t.omega),
        }
    }
}

impl ThetaJson {
    pub fn to_theta(&self) -> Result<Theta> {
        let omega = rows_to_matrix(&self.omega)?;
        if omega.nrows() != omega.ncols() {
            return Err(Error::InvalidInput("omega must be square".into()));
        }
        Ok(Theta::new(DVector::from_vec(self.mu.clone()), omega))
    }
}

pub fn read_theta_json(path: &Path) -> Result<Theta> {
    let text = std::fs::read_to_string(path)?;
    let parsed: ThetaJson = serde_json::from_str(&text)?;
    parsed.to_theta()
}

pub fn write_theta_json(path: &Path, theta: &Theta) -> Result<()> {
    let json = serde_json::to_string_pretty(&ThetaJson::from(theta))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// JSON mirror of a fit result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitJson {
    pub theta_hat: ThetaJson,
    pub loglik: f64,
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_information: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl From<&MleFit> for FitJson {
    fn from(fit: &MleFit) -> Self {
        FitJson {
            theta_hat: ThetaJson::from(&fit.theta_hat),
            loglik: fit.loglik,
            score_norm: fit.score_norm,
            iterations: fit.iterations,
            converged: fit.converged,
            observed_information: fit.observed_information.as_ref().map(matrix_to_rows),
            warnings: fit.warnings.clone(),
        }
    }
}

impl FitJson {
    pub fn to_fit(&self) -> Result<MleFit> {
        Ok(MleFit {
            theta_hat: self.theta_hat.to_theta()?,
            loglik: self.loglik,
            score_norm: self.score_norm,
            iterations: self.iterations,
            converged: self.converged,
            observed_information: match &self.observed_information {
                Some(rows) => Some(rows_to_matrix(rows)?),
                None => None,
            },
            trace: Vec::new(),
            warnings: self.warnings.clone(),
        })
    }
}

pub fn write_fit_json(path: &Path, fit: &MleFit) -> Result<()> {
    let json = serde_json::to_string_pretty(&FitJson::from(fit))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_fit_json(path: &Path) -> Result<MleFit> {
    let text = std::fs::read_to_string(path)?;
    let parsed: FitJson = serde_json::from_str(&text)?;
    parsed.to_fit()
}

/// Write trajectories as one CSV: subject_id, t, x_1..x_r, d_1..d_s.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let r = trajectories
        .first()
        .map(|t| t.states[0].len())
        .unwrap_or(0);
    let s = trajectories
        .first()
        .map(|t| t.covariates[0].len())
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["subject_id".to_string(), "t".to_string()];
    header.extend((1..=r).map(|j| format!("x_{j}")));
    header.extend((1..=s).map(|j| format!("d_{j}")));
    w.write_record(&header)?;
    for traj in trajectories {
        for k in 0..traj.len() {
            let mut rec = vec![traj.subject_id.clone(), format_float(traj.times[k])];
            rec.extend(traj.states[k].iter().map(|&v| format_float(v)));
            rec.extend(traj.covariates[k].iter().map(|&v| format_float(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal representation.
pub fn format_float(v: f64) -> String {
    let mut buf = ryu_format(v);
    // Trim a trailing ".0" for integral values to keep files compact.
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // f64 Display in Rust is already shortest-round-trip.
    format!("{v}")
}

/// Read a trajectory CSV written by [`write_trajectories_csv`] (or produced
/// externally with the same header).
pub fn read_trajectories_csv(path: &Path) -> Result<Vec<Trajectory>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut d_cols = Vec::new();
    let mut id_col = None;
    let mut t_col = None;
    for (j, name) in header.iter().enumerate() {
        if name == "subject_id" {
            id_col = Some(j);
        } else if name == "t" {
            t_col = Some(j);
        } else if name.starts_with("x_") {
            x_cols.push(j);
        } else if name.starts_with("d_") {
            d_cols.push(j);
        }
    }
    let (id_col, t_col) = match (id_col, t_col) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidInput(
                "trajectory CSV needs subject_id and t columns".into(),
            ))
        }
    };
    if x_cols.is_empty() {
        return Err(Error::InvalidInput(
            "trajectory CSV needs at least one x_ column".into(),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut map: std::collections::HashMap<String, Trajectory> = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record?;
        let id = record
            .get(id_col)
            .ok_or_else(|| Error::InvalidInput("short row".into()))?
            .to_string();
        let parse = |j: usize| -> Result<f64> {
            record
                .get(j)
                .ok_or_else(|| Error::InvalidInput("short row".into()))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("bad float: {e}")))
        };
        let t = parse(t_col)?;
        let state = DVector::from_vec(x_cols.iter().map(|&j| parse(j)).collect::<Result<_>>()?);
        let cov = DVector::from_vec(d_cols.iter().map(|&j| parse(j)).collect::<Result<_>>()?);
        let entry = map.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Trajectory {
                subject_id: id,
                times: Vec::new(),
                states: Vec::new(),
                covariates: Vec::new(),
            }
        });
        entry.times.push(t);
        entry.states.push(state);
        entry.covariates.push(cov);
    }
    let out: Vec<Trajectory> = order.into_iter().map(|id| map.remove(&id).unwrap()).collect();
    for t in &out {
        t.validate()?;
    }
    Ok(out)
}

/// Debug dump of per-subject statistics.
#[derive(Debug, Serialize, Deserialize)]
pub struct PairStatsJson {
    pub subject_id: String,
    pub u: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GeneralStatsJson {
    pub subject_id: String,
    pub u1: Vec<f64>,
    pub v1: Vec<Vec<f64>>,
    pub u2: Vec<f64>,
    pub v2: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

pub fn write_pair_stats_json(path: &Path, stats: &[SuffStats]) -> Result<()> {
    let rows: Vec<PairStatsJson> = stats
        .iter()
        .map(|s| PairStatsJson {
            subject_id: s.subject_id.clone(),
            u: s.u.iter().copied().collect(),
            v: matrix_to_rows(&s.v),
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

pub fn write_general_stats_json(path: &Path, stats: &[GeneralSuffStats]) -> Result<()> {
    let rows: Vec<GeneralStatsJson> = stats
        .iter()
        .map(|s| GeneralStatsJson {
            subject_id: s.subject_id.clone(),
            u1: s.u1.iter().copied().collect(),
            v1: matrix_to_rows(&s.v1),
            u2: s.u2.iter().copied().collect(),
            v2: matrix_to_rows(&s.v2),
            s: matrix_to_rows(&s.s),
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

/// Append per-iteration loglik and score norms as CSV.
pub fn write_trace_csv(path: &Path, trace: &[crate::estimate::TraceRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iteration,loglik,score_norm")?;
    for row in trace {
        writeln!(
            f,
            "{},{},{}",
            row.iteration,
            format_float(row.loglik),
            format_float(row.score_norm)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trajectory_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let trajs = vec![
            Trajectory {
                subject_id: "0".into(),
                times: vec![0.0, 0.5, 1.0],
                states: vec![
                    DVector::from_vec(vec![1.0, 2.0]),
                    DVector::from_vec(vec![1.5, 2.5]),
                    DVector::from_vec(vec![0.25, -3.125]),
                ],
                covariates: vec![DVector::from_element(1, 1.0); 3],
            },
            Trajectory {
                subject_id: "1".into(),
                times: vec![0.0, 0.5],
                states: vec![
                    DVector::from_vec(vec![0.1, 0.2]),
                    DVector::from_vec(vec![0.3, 0.4]),
                ],
                covariates: vec![DVector::from_element(1, 0.0); 2],
            },
        ];
        write_trajectories_csv(&path, &trajs).unwrap();
        let back = read_trajectories_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].subject_id, "0");
        assert_eq!(back[0].times, trajs[0].times);
        for (a, b) in back[1].states.iter().zip(&trajs[1].states) {
            assert_eq!(a, b);
        }
        assert_eq!(back[0].covariates[0][0], 1.0);
    }

    #[test]
    fn theta_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.json");
        let theta = Theta::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]),
        );
        write_theta_json(&path, &theta).unwrap();
        let back = read_theta_json(&path).unwrap();
        assert_relative_eq!(back.mu, theta.mu, epsilon = 0.0);
        assert_relative_eq!(back.omega, theta.omega, epsilon = 0.0);
    }
}
