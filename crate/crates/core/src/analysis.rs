//! Gradient-behavior study of the loss family: limit situations, the
//! closed-form update table, binary contour grids and the near-uniform
//! plateau metric.

use std::fmt;

use crate::error::{LabError, Result};
use crate::loss::{grad_pseudo_scores, DivergenceKind, ErdaConfig};
use crate::prob::{ProbVector, ScoreVector};

/// Residual mass used to approximate a one-hot limit.
pub const ONE_HOT_RESIDUAL: f64 = 1e-9;

pub const MIN_RESOLUTION: usize = 16;
pub const MAX_RESOLUTION: usize = 2048;

/// Resolution of the pseudo-label axis used by [`plateau_metric`].
pub const PLATEAU_P_POINTS: usize = 64;
/// Number of prediction samples spanning `[1/2 - eps, 1/2 + eps]`.
pub const PLATEAU_Q_POINTS: usize = 65;

/// Limit cases of the gradient table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Situation {
    /// Pseudo-label approaches one-hot at `k`; `q` is free.
    POneHot,
    /// Prediction is uniform; `p` is free.
    QUniform,
    /// Prediction approaches one-hot at `k`; read at coordinate `k`.
    QOneHotSame,
    /// Prediction approaches one-hot at `k`; read at coordinates `i != k`.
    QOneHotOther,
}

impl Situation {
    pub const ALL: [Situation; 4] = [
        Situation::POneHot,
        Situation::QUniform,
        Situation::QOneHotSame,
        Situation::QOneHotOther,
    ];
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Situation::POneHot => "p_onehot",
            Situation::QUniform => "q_uniform",
            Situation::QOneHotSame => "q_onehot_same",
            Situation::QOneHotOther => "q_onehot_other",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SituationReport {
    pub kind: DivergenceKind,
    pub lambda: f64,
    pub situation: Situation,
    /// The pseudo-label and prediction the update was evaluated at.
    pub p: ProbVector,
    pub q: ProbVector,
    /// `-g` over all classes.
    pub update: Vec<f64>,
    pub clipped: bool,
}

impl SituationReport {
    /// Coordinates the situation's table row speaks about.
    pub fn coordinates(&self, k: usize) -> Vec<usize> {
        match self.situation {
            Situation::POneHot | Situation::QUniform => (0..self.update.len()).collect(),
            Situation::QOneHotSame => vec![k],
            Situation::QOneHotOther => (0..self.update.len()).filter(|&i| i != k).collect(),
        }
    }
}

fn situation_inputs(
    situation: Situation,
    free: &ProbVector,
    k: usize,
) -> Result<(ProbVector, ProbVector)> {
    let classes = free.len();
    if k >= classes {
        return Err(LabError::IndexOutOfRange { index: k, len: classes });
    }
    Ok(match situation {
        Situation::POneHot => (
            ProbVector::near_one_hot(classes, k, ONE_HOT_RESIDUAL)?,
            free.clone(),
        ),
        Situation::QUniform => (free.clone(), ProbVector::uniform(classes)?),
        Situation::QOneHotSame | Situation::QOneHotOther => (
            free.clone(),
            ProbVector::near_one_hot(classes, k, ONE_HOT_RESIDUAL)?,
        ),
    })
}

/// Evaluates the pseudo-label-branch update `-g` in a limit situation.
///
/// `free` is `q` for [`Situation::POneHot`] and `p` otherwise; `k` is the
/// class the limiting vector concentrates on (ignored for `QUniform`
/// beyond range checking).
pub fn eval_situation(
    kind: DivergenceKind,
    lambda: f64,
    situation: Situation,
    free: &ProbVector,
    k: usize,
) -> Result<SituationReport> {
    let cfg = ErdaConfig::new(kind, lambda, 0.0)?;
    let (p, q) = situation_inputs(situation, free, k)?;
    let grad = grad_pseudo_scores(&ScoreVector::from_probs(&p), &q, &cfg)?;
    Ok(SituationReport {
        kind,
        lambda,
        situation,
        update: grad.update(),
        clipped: grad.clipped,
        p,
        q,
    })
}

/// Closed-form table cell for coordinate `i`, evaluated directly on the
/// probabilities. `None` marks cells that diverge to infinity.
///
/// This is a separate algebraic route from [`eval_situation`]; the two are
/// compared in tests.
pub fn closed_form_update(
    kind: DivergenceKind,
    lambda: f64,
    situation: Situation,
    p: &[f64],
    q: &[f64],
    k: usize,
    i: usize,
) -> Option<f64> {
    let classes = p.len() as f64;
    // sum_j p_j ln(p_i / p_j)
    let ent_pull = |i: usize| -> f64 {
        p.iter()
            .map(|&pj| if pj > 0.0 { pj * (p[i] / pj).ln() } else { 0.0 })
            .sum()
    };
    let pi = p[i];
    let sum_sq: f64 = p.iter().map(|v| v * v).sum();
    use DivergenceKind::*;
    use Situation::*;
    match (situation, kind) {
        (POneHot, KlQp) => Some(q[i] - if i == k { 1.0 } else { 0.0 }),
        (POneHot, _) => Some(0.0),

        (QUniform, KlPq) => Some((lambda - 1.0) * pi * ent_pull(i)),
        (QUniform, KlQp) => Some(1.0 / classes - pi + lambda * pi * ent_pull(i)),
        (QUniform, Js) => Some(
            pi * (0..p.len())
                .filter(|&j| j != i)
                .map(|j| {
                    p[j] * (0.5 * ((classes * pi + 1.0) / (classes * p[j] + 1.0)).ln()
                        + (lambda - 0.5) * (pi / p[j]).ln())
                })
                .sum::<f64>(),
        ),
        (QUniform, Mse) => Some(-pi * pi + pi * sum_sq + lambda * pi * ent_pull(i)),

        (QOneHotSame, KlPq) | (QOneHotOther, KlPq) => None,
        (QOneHotSame, KlQp) => Some(1.0 - pi + lambda * pi * ent_pull(i)),
        (QOneHotSame, Js) => Some(
            pi * (0..p.len())
                .filter(|&j| j != i)
                .map(|j| {
                    p[j] * (0.5 * ((pi + 1.0) / p[j]).ln() + (lambda - 0.5) * (pi / p[j]).ln())
                })
                .sum::<f64>(),
        ),
        (QOneHotSame, Mse) => {
            Some(-pi * pi + pi * (1.0 - pi) + pi * sum_sq + lambda * pi * ent_pull(i))
        }
        (QOneHotOther, KlQp) => Some(-pi + lambda * pi * ent_pull(i)),
        (QOneHotOther, Js) => Some(
            pi * (0..p.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let onehot = if j == k { 1.0 } else { 0.0 };
                    p[j] * (0.5 * (pi / (p[j] + onehot)).ln() + (lambda - 0.5) * (pi / p[j]).ln())
                })
                .sum::<f64>(),
        ),
        (QOneHotOther, Mse) => {
            Some(-pi * pi - pi * p[k] + pi * sum_sq + lambda * pi * ent_pull(i))
        }
    }
}

/// Binary-class update on `s_1` of the pseudo-label branch over a grid of
/// `(p_1, q_1)` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub kind: DivergenceKind,
    pub lambda: f64,
    pub resolution: usize,
    pub p_axis: Vec<f64>,
    pub q_axis: Vec<f64>,
    /// `update_p1[a][b]` is the update at `(p_axis[a], q_axis[b])`.
    pub update_p1: Vec<Vec<f64>>,
    pub clipped: Vec<Vec<bool>>,
    /// The update along the `q_1 = 1/2` line, at each `p_axis` value.
    pub midline: Vec<f64>,
}

impl ContourGrid {
    pub fn has_nan(&self) -> bool {
        self.update_p1.iter().flatten().any(|v| v.is_nan()) || self.midline.iter().any(|v| v.is_nan())
    }

    /// `kind,lambda,p1,q1,update_s1,clipped` rows in row-major order
    /// (outer loop over `p1`).
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.resolution * self.resolution * 48);
        out.push_str("kind,lambda,p1,q1,update_s1,clipped\n");
        for (a, p1) in self.p_axis.iter().enumerate() {
            for (b, q1) in self.q_axis.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    self.kind, self.lambda, p1, q1, self.update_p1[a][b], self.clipped[a][b]
                ));
            }
        }
        out
    }
}

fn binary_update(cfg: &ErdaConfig, p1: f64, q1: f64) -> Result<(f64, bool)> {
    let p = ProbVector::new(vec![p1, 1.0 - p1])?;
    let q = ProbVector::new(vec![q1, 1.0 - q1])?;
    let g = grad_pseudo_scores(&ScoreVector::from_probs(&p), &q, cfg)?;
    Ok((-g.values[0], g.clipped))
}

/// Cell-centered axis: `(i + 1/2) / n` for `i in 0..n`.
pub fn cell_axis(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

pub fn contour_grid(kind: DivergenceKind, lambda: f64, resolution: usize) -> Result<ContourGrid> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(LabError::invalid(format!(
            "resolution {resolution} outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]"
        )));
    }
    let cfg = ErdaConfig::new(kind, lambda, 0.0)?;
    let axis = cell_axis(resolution);
    let mut update_p1 = Vec::with_capacity(resolution);
    let mut clipped = Vec::with_capacity(resolution);
    for &p1 in &axis {
        let mut row = Vec::with_capacity(resolution);
        let mut flags = Vec::with_capacity(resolution);
        for &q1 in &axis {
            let (u, c) = binary_update(&cfg, p1, q1)?;
            row.push(u);
            flags.push(c);
        }
        update_p1.push(row);
        clipped.push(flags);
    }
    let midline = axis
        .iter()
        .map(|&p1| binary_update(&cfg, p1, 0.5).map(|(u, _)| u))
        .collect::<Result<Vec<_>>>()?;
    Ok(ContourGrid {
        kind,
        lambda,
        resolution,
        p_axis: axis.clone(),
        q_axis: axis,
        update_p1,
        clipped,
        midline,
    })
}

/// Largest `|g|_inf` of the pseudo-label-branch gradient over binary
/// pseudo-labels on a 64-point grid and predictions within `epsilon` of
/// uniform.
pub fn plateau_metric(kind: DivergenceKind, lambda: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..=0.2).contains(&epsilon) {
        return Err(LabError::invalid(format!("epsilon {epsilon} outside [0, 0.2]")));
    }
    let cfg = ErdaConfig::new(kind, lambda, 0.0)?;
    let qs: Vec<f64> = if epsilon == 0.0 {
        vec![0.5]
    } else {
        let n = PLATEAU_Q_POINTS - 1;
        (0..=n)
            .map(|i| 0.5 - epsilon + 2.0 * epsilon * i as f64 / n as f64)
            .collect()
    };
    let mut worst = 0.0f64;
    for p1 in cell_axis(PLATEAU_P_POINTS) {
        for &q1 in &qs {
            let p = ProbVector::new(vec![p1, 1.0 - p1])?;
            let q = ProbVector::new(vec![q1, 1.0 - q1])?;
            let g = grad_pseudo_scores(&ScoreVector::from_probs(&p), &q, &cfg)?;
            worst = g.values.iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    Ok(worst)
}
