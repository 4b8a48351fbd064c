//! Run reports (JSON) and trajectory dumps (CSV).

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::DatasetMeta;
use crate::diagnostics::{EnsembleEval, ModeReport};
use crate::engine::{Snapshot, Trajectory};
use crate::error::{Error, FormatError, FormatErrorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub step: usize,
    pub beta: Option<f64>,
    pub modes: Option<ModeReport>,
    pub mmd2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub modes: Option<ModeReport>,
    pub mmd2: Option<f64>,
    pub ensemble: Option<EnsembleEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// Fully resolved config; re-running it reproduces this report.
    pub config: RunConfig,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub data: Vec<DatasetMeta>,
    pub snapshots: Vec<SnapshotDiagnostics>,
    pub final_metrics: FinalMetrics,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// The report with timing zeroed, for comparing reruns.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report is serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        message: e.to_string(),
        location: Some((e.line(), e.column())),
    })
}

/// Renders a trajectory as CSV: `step,particle_index,x_0..x_{d-1},beta`.
///
/// Floats use the shortest representation that parses back to the same bits.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let d = traj.snapshots.first().map_or(0, |s| s.particles.ncols());
    let mut out = String::from("step,particle_index");
    for k in 0..d {
        out.push_str(&format!(",x_{k}"));
    }
    out.push_str(",beta\n");
    for s in &traj.snapshots {
        let beta = s.beta.map(|b| b.to_string()).unwrap_or_default();
        for (i, row) in s.particles.rows().into_iter().enumerate() {
            out.push_str(&format!("{},{i}", s.step));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{beta}\n"));
        }
    }
    out
}

pub fn dump_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_csv(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory_csv(&bytes).map_err(|err| Error::Format {
        source_name: path.display().to_string(),
        err,
    })
}

/// Inverse of [`trajectory_csv`]. Rows of one snapshot must be contiguous,
/// indexed `0..n` in order, and share a β.
pub fn parse_trajectory_csv(bytes: &[u8]) -> std::result::Result<Trajectory, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes);
    let mut records = rdr.records();
    let malformed =
        |off: usize, msg: String| FormatError::new(off, FormatErrorKind::Malformed(msg));
    let located = |e: csv::Error| {
        let off = e.position().map_or(0, |p| p.byte() as usize);
        malformed(off, e.to_string())
    };

    let header = match records.next() {
        None => {
            return Err(FormatError::new(
                0,
                FormatErrorKind::Truncated {
                    needed: 1,
                    available: 0,
                },
            ))
        }
        Some(h) => h.map_err(located)?,
    };
    let hlen = header.len();
    let well_formed = hlen >= 3
        && &header[0] == "step"
        && &header[1] == "particle_index"
        && &header[hlen - 1] == "beta"
        && (0..hlen - 3).all(|k| header[k + 2] == format!("x_{k}"));
    if !well_formed {
        return Err(malformed(
            0,
            "expected header step,particle_index,x_0..x_{d-1},beta".into(),
        ));
    }
    let d = hlen - 3;

    let mut traj = Trajectory::default();
    let mut cur: Option<(usize, Option<f64>, Vec<f64>)> = None;
    let mut width: Option<usize> = None;
    let mut finish =
        |cur: Option<(usize, Option<f64>, Vec<f64>)>, off: usize, traj: &mut Trajectory| {
            if let Some((step, beta, vals)) = cur {
                let n = vals.len() / d.max(1);
                if *width.get_or_insert(n) != n {
                    return Err(malformed(
                        off,
                        format!(
                            "snapshot at step {step} has {n} particles, expected {}",
                            width.unwrap_or(0)
                        ),
                    ));
                }
                let particles = Array2::from_shape_vec((n, d), vals).expect("rows have d columns");
                traj.snapshots.push(Snapshot {
                    step,
                    beta,
                    particles,
                });
            }
            Ok(())
        };

    for rec in records {
        let rec = rec.map_err(located)?;
        let off = rec.position().map_or(0, |p| p.byte() as usize);
        let bad = |msg: String| malformed(off, msg);
        if rec.len() != hlen {
            return Err(bad(format!(
                "record has {} fields, expected {hlen}",
                rec.len()
            )));
        }
        let step: usize = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad step {:?}", &rec[0])))?;
        let idx: usize = rec[1]
            .parse()
            .map_err(|_| bad(format!("bad particle index {:?}", &rec[1])))?;
        let beta = match &rec[hlen - 1] {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad beta {s:?}")))?,
            ),
        };
        let mut row = Vec::with_capacity(d);
        for k in 0..d {
            let s = &rec[k + 2];
            row.push(
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad coordinate {s:?}")))?,
            );
        }
        let continues = matches!(&cur, Some((s, _, _)) if *s == step);
        if !continues {
            if let Some((prev, _, _)) = &cur {
                if step <= *prev {
                    return Err(bad(format!("step {step} does not follow step {prev}")));
                }
            }
            finish(cur.take(), off, &mut traj)?;
            cur = Some((step, beta, Vec::new()));
        }
        let (_, cur_beta, vals) = cur.as_mut().expect("snapshot open");
        let expected = vals.len() / d.max(1);
        if d == 0 {
            return Err(bad("trajectory has no coordinate columns".into()));
        }
        if idx != expected {
            return Err(bad(format!("particle index {idx}, expected {expected}")));
        }
        if cur_beta.map(f64::to_bits) != beta.map(f64::to_bits) {
            return Err(bad("beta changes within a snapshot".into()));
        }
        vals.extend(row);
    }
    finish(cur, bytes.len(), &mut traj)?;
    Ok(traj)
}
