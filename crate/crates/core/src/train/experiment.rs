//! Seeded sweeps over training configurations.

use rayon::prelude::*;

use super::metrics::{evaluate, Metrics};
use super::scene::gen_synthetic;
use super::trainer::{train, TrainConfig};
use crate::error::{LabError, Result};

/// A named configuration in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub config: TrainConfig,
}

impl Cell {
    pub fn new(id: impl Into<String>, config: TrainConfig) -> Self {
        Cell {
            id: id.into(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n - 1) standard deviation; a single value has
    /// zero spread.
    ///
    /// Uses a running (Welford) update, which keeps repeated values exact.
    pub fn of(values: &[f64]) -> Self {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let delta = v - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (v - mean);
        }
        if values.is_empty() {
            mean = f64::NAN;
        }
        let std = if values.len() < 2 {
            0.0
        } else {
            (m2 / (values.len() - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub id: String,
    pub miou: MeanStd,
    pub mean_pseudo_entropy: MeanStd,
    pub final_loss: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub cells: Vec<Cell>,
    /// One record per (cell, seed), cell-major in input order.
    pub runs: Vec<RunRecord>,
}

/// Column header of [`Report::to_csv`].
pub const REPORT_HEADER: &str =
    "config_id,pl_mode,kind,lambda,alpha,seed,miou,mean_pseudo_entropy,final_loss";

impl Report {
    pub fn summaries(&self) -> Vec<CellSummary> {
        self.cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let runs: Vec<&RunRecord> = self.runs.iter().filter(|r| r.cell == c).collect();
                let col = |f: fn(&Metrics) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r.metrics)).collect() };
                CellSummary {
                    id: cell.id.clone(),
                    miou: MeanStd::of(&col(|m| m.miou)),
                    mean_pseudo_entropy: MeanStd::of(&col(|m| m.mean_pseudo_entropy)),
                    final_loss: MeanStd::of(&col(Metrics::final_loss)),
                }
            })
            .collect()
    }

    pub fn summary(&self, id: &str) -> Option<CellSummary> {
        self.summaries().into_iter().find(|s| s.id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.runs {
            let cell = &self.cells[r.cell];
            let c = &cell.config;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                cell.id,
                c.pl_mode,
                c.erda.kind,
                c.erda.lambda,
                c.erda.alpha,
                r.seed,
                r.metrics.miou,
                r.metrics.mean_pseudo_entropy,
                r.metrics.final_loss()
            ));
        }
        out
    }
}

/// Generates the cell's scene and trains on it, both from `seed`.
pub fn run_single(config: &TrainConfig, seed: u64) -> Result<Metrics> {
    let config = TrainConfig {
        seed,
        ..config.clone()
    };
    let scene = gen_synthetic(seed, &config.scene)?;
    let state = train(&config, &scene)?;
    evaluate(&state, &scene, &config)
}

/// Trains every (cell, seed) pair independently, in parallel on the
/// current rayon pool. Results do not depend on the schedule.
pub fn run_experiment(cells: &[Cell], seeds: &[u64]) -> Result<Report> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(LabError::invalid("an experiment needs at least one cell and one seed"));
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(c, seed)| {
            run_single(&cells[c].config, seed)
                .map(|metrics| RunRecord { cell: c, seed, metrics })
                .map_err(|e| match e {
                    LabError::TrainingDiverged { step } => LabError::CellDiverged {
                        cell: cells[c].id.clone(),
                        seed,
                        step,
                    },
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Report {
        cells: cells.to_vec(),
        runs,
    })
}
