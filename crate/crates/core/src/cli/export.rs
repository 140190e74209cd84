//! Per-candidate cluster data of a run, as CSV.
//!
//! Columns:
//!
//! | column | meaning |
//! |---|---|
//! | `iteration` | iteration number, from 1 |
//! | `candidate` | candidate id |
//! | `x`, `y` | embedding projected onto two seeded Gaussian directions |
//! | `cluster` | cluster label within the iteration |
//! | `score` | rubric score of the candidate's image |
//! | `cluster_posterior` | posterior weight of the candidate's cluster |
//! | `sampled` | whether the candidate was sampled into memory |

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::optimizer::{IterationRecord, RunEvent};

pub const HEADER: [&str; 8] =
    ["iteration", "candidate", "x", "y", "cluster", "score", "cluster_posterior", "sampled"];

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("run log has no iteration events")]
    EmptyRun,
    #[error("iteration {iteration}: {message}")]
    Inconsistent { iteration: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    pub iteration: usize,
    pub candidate: usize,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    pub score: f64,
    pub cluster_posterior: f64,
    pub sampled: bool,
}

/// A `dim x 2` matrix of standard normal entries scaled by `1/sqrt(dim)`.
pub fn projection(dim: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim.max(1) as f64).sqrt();
    (0..dim)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a * scale, b * scale]
        })
        .collect()
}

fn project(v: &[f64], matrix: &[[f64; 2]]) -> (f64, f64) {
    v.iter().zip(matrix).fold((0.0, 0.0), |(x, y), (a, m)| (x + a * m[0], y + a * m[1]))
}

fn rows_of(record: &IterationRecord, matrix: &mut Vec<[f64; 2]>, seed: u64) -> Result<Vec<ClusterRow>, ExportError> {
    let fail = |message: String| ExportError::Inconsistent { iteration: record.iteration, message };
    if record.embeddings.len() != record.reports.len() {
        return Err(fail("embeddings and reports differ in length".into()));
    }
    let mut rows = Vec::with_capacity(record.reports.len());
    for (report, emb) in record.reports.iter().zip(&record.embeddings) {
        if matrix.len() != emb.len() {
            *matrix = projection(emb.len(), seed);
        }
        let cluster = record
            .label_of(report.candidate)
            .ok_or_else(|| fail(format!("candidate {} has no cluster", report.candidate)))?;
        let (x, y) = project(emb, matrix);
        rows.push(ClusterRow {
            iteration: record.iteration,
            candidate: report.candidate,
            x,
            y,
            cluster,
            score: report.average,
            cluster_posterior: record.posterior.posteriors.get(cluster).copied().unwrap_or(0.0),
            sampled: record.sampled.contains(&report.candidate),
        });
    }
    Ok(rows)
}

/// One row per scored candidate of every iteration event.
pub fn cluster_rows(events: &[RunEvent], seed: u64) -> Result<Vec<ClusterRow>, ExportError> {
    let mut matrix = Vec::new();
    let mut rows = Vec::new();
    let mut any = false;
    for e in events {
        if let RunEvent::Iteration(record) = e {
            any = true;
            rows.extend(rows_of(record, &mut matrix, seed)?);
        }
    }
    if !any {
        return Err(ExportError::EmptyRun);
    }
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[ClusterRow]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_seeded() {
        assert_eq!(projection(8, 3), projection(8, 3));
        assert_ne!(projection(8, 3), projection(8, 4));
        assert_eq!(projection(8, 3).len(), 8);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(cluster_rows(&[], 0), Err(ExportError::EmptyRun)));
    }
}
