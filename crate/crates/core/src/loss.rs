//! The pseudo-label loss family `L_p = lambda * H(p) + D(p, q)` and its
//! analytic score-space gradients.
//!
//! Gradients are written in the pairwise form
//! `g_i = p_i * sum_j p_j (dL/dp_i - dL/dp_j)`, with `ln(p_i / p_j)` taken
//! as a score difference. Identical per-class terms therefore cancel
//! exactly instead of up to rounding.

use std::fmt;
use std::str::FromStr;

use crate::error::{LabError, Result};
use crate::prob::{
    clamped_ln, cross_entropy_raw, entropy_raw, js_raw, kl_raw, mse_raw, softmax_vec, ProbVector,
    ScoreVector,
};

/// Gradients whose infinity norm exceeds this are rescaled down to it.
pub const GRAD_CLIP: f64 = 1e6;

/// Distance used for the distribution-alignment term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DivergenceKind {
    /// `KL(p || q)`.
    #[default]
    KlPq,
    /// `KL(q || p)`.
    KlQp,
    /// Jensen-Shannon.
    Js,
    /// Half squared error.
    Mse,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 4] = [
        DivergenceKind::KlPq,
        DivergenceKind::KlQp,
        DivergenceKind::Js,
        DivergenceKind::Mse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::KlPq => "kl_pq",
            DivergenceKind::KlQp => "kl_qp",
            DivergenceKind::Js => "js",
            DivergenceKind::Mse => "mse",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kl_pq" | "klpq" | "kl" => Ok(DivergenceKind::KlPq),
            "kl_qp" | "klqp" => Ok(DivergenceKind::KlQp),
            "js" => Ok(DivergenceKind::Js),
            "mse" => Ok(DivergenceKind::Mse),
            other => Err(LabError::invalid(format!("unknown divergence kind `{other}`"))),
        }
    }
}

/// Divergence kind, entropy weight and unlabeled-term weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErdaConfig {
    pub kind: DivergenceKind,
    pub lambda: f64,
    pub alpha: f64,
}

impl ErdaConfig {
    pub fn new(kind: DivergenceKind, lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(LabError::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(LabError::invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(ErdaConfig { kind, lambda, alpha })
    }
}

impl Default for ErdaConfig {
    fn default() -> Self {
        ErdaConfig {
            kind: DivergenceKind::KlPq,
            lambda: 1.0,
            alpha: 0.1,
        }
    }
}

/// A score-space gradient, possibly rescaled to `GRAD_CLIP`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub clipped: bool,
}

impl Gradient {
    fn finish(mut values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NumericalOverflow { index });
        }
        let norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let clipped = norm > GRAD_CLIP;
        if clipped {
            let scale = GRAD_CLIP / norm;
            values.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(Gradient { values, clipped })
    }

    /// The update `-g`.
    pub fn update(&self) -> Vec<f64> {
        self.values.iter().map(|v| -v).collect()
    }
}

pub(crate) fn divergence_raw(kind: DivergenceKind, p: &[f64], q: &[f64]) -> f64 {
    match kind {
        DivergenceKind::KlPq => kl_raw(p, q),
        DivergenceKind::KlQp => kl_raw(q, p),
        DivergenceKind::Js => js_raw(p, q),
        DivergenceKind::Mse => mse_raw(p, q),
    }
}

/// The alignment term `D(p, q)` selected by `kind`.
pub fn divergence(kind: DivergenceKind, p: &ProbVector, q: &ProbVector) -> f64 {
    assert_eq!(p.len(), q.len(), "class count mismatch");
    divergence_raw(kind, p.as_slice(), q.as_slice())
}

pub(crate) fn loss_p_raw(p: &[f64], q: &[f64], cfg: &ErdaConfig) -> f64 {
    cfg.lambda * entropy_raw(p) + divergence_raw(cfg.kind, p, q)
}

/// `lambda * H(p) + D(p, q)`.
pub fn loss_p(p: &ProbVector, q: &ProbVector, cfg: &ErdaConfig) -> f64 {
    assert_eq!(p.len(), q.len(), "class count mismatch");
    loss_p_raw(p.as_slice(), q.as_slice(), cfg)
}

/// Gradient of `L_p` w.r.t. the pseudo-label scores, `p = softmax(s_p)`.
/// `q` is a constant. Slices must have equal length.
pub(crate) fn pseudo_grad_raw(s_p: &[f64], q: &[f64], cfg: &ErdaConfig) -> Vec<f64> {
    let k = s_p.len();
    let p = softmax_vec(s_p);
    let lambda = cfg.lambda;
    // Per-pair term t(i, j) with g_i = p_i * sum_j p_j t(i, j).
    let pair: Box<dyn Fn(usize, usize) -> f64> = match cfg.kind {
        DivergenceKind::KlPq => {
            let lq: Vec<f64> = q.iter().map(|&v| clamped_ln(v)).collect();
            let w = 1.0 - lambda;
            Box::new(move |i, j| -(lq[i] - lq[j]) + w * (s_p[i] - s_p[j]))
        }
        DivergenceKind::KlQp => {
            // dL/dp_i = -q_i / p_i collapses to p_i - q_i outside the sum.
            Box::new(move |i, j| -lambda * (s_p[i] - s_p[j]))
        }
        DivergenceKind::Js => {
            let lm: Vec<f64> = p.iter().zip(q).map(|(a, b)| clamped_ln(a + b)).collect();
            let w = 0.5 - lambda;
            Box::new(move |i, j| -0.5 * (lm[i] - lm[j]) + w * (s_p[i] - s_p[j]))
        }
        DivergenceKind::Mse => {
            let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
            Box::new(move |i, j| (d[i] - d[j]) - lambda * (s_p[i] - s_p[j]))
        }
    };
    let mut g: Vec<f64> = (0..k)
        .map(|i| {
            let inner: f64 = (0..k).filter(|&j| j != i).map(|j| p[j] * pair(i, j)).sum();
            p[i] * inner
        })
        .collect();
    if cfg.kind == DivergenceKind::KlQp {
        for i in 0..k {
            g[i] += p[i] - q[i];
        }
    }
    g
}

/// Gradient of `L_p` w.r.t. the prediction scores, `q = softmax(s_q)`.
/// `p` is a constant.
pub(crate) fn prediction_grad_raw(p: &[f64], s_q: &[f64], cfg: &ErdaConfig) -> Vec<f64> {
    let k = s_q.len();
    let q = softmax_vec(s_q);
    match cfg.kind {
        DivergenceKind::KlPq => q.iter().zip(p).map(|(a, b)| a - b).collect(),
        kind => {
            let pair: Box<dyn Fn(usize, usize) -> f64> = match kind {
                DivergenceKind::KlQp => {
                    let lp: Vec<f64> = p.iter().map(|&v| clamped_ln(v)).collect();
                    Box::new(move |i, j| (s_q[i] - s_q[j]) - (lp[i] - lp[j]))
                }
                DivergenceKind::Js => {
                    let lm: Vec<f64> = p.iter().zip(&q).map(|(a, b)| clamped_ln(a + b)).collect();
                    Box::new(move |i, j| 0.5 * ((s_q[i] - s_q[j]) - (lm[i] - lm[j])))
                }
                DivergenceKind::Mse => {
                    let d: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
                    Box::new(move |i, j| d[i] - d[j])
                }
                DivergenceKind::KlPq => unreachable!(),
            };
            (0..k)
                .map(|i| {
                    let inner: f64 = (0..k).filter(|&j| j != i).map(|j| q[j] * pair(i, j)).sum();
                    q[i] * inner
                })
                .collect()
        }
    }
}

/// `dL_p / ds_p` with `p = softmax(s_p)` and `q` held fixed.
pub fn grad_pseudo_scores(s_p: &ScoreVector, q: &ProbVector, cfg: &ErdaConfig) -> Result<Gradient> {
    if s_p.len() != q.len() {
        return Err(LabError::invalid(format!(
            "score length {} != distribution length {}",
            s_p.len(),
            q.len()
        )));
    }
    Gradient::finish(pseudo_grad_raw(s_p.as_slice(), q.as_slice(), cfg))
}

/// `dL_p / ds_q` with `q = softmax(s_q)` and `p` held fixed.
pub fn grad_prediction_scores(
    p: &ProbVector,
    s_q: &ScoreVector,
    cfg: &ErdaConfig,
) -> Result<Gradient> {
    if s_q.len() != p.len() {
        return Err(LabError::invalid(format!(
            "score length {} != distribution length {}",
            s_q.len(),
            p.len()
        )));
    }
    Gradient::finish(prediction_grad_raw(p.as_slice(), s_q.as_slice(), cfg))
}

/// Mean labeled cross-entropy plus `alpha` times the mean unlabeled `L_p`.
///
/// Labeled targets are exact one-hot vectors, so the labeled term is
/// `-ln q_y` with the usual log floor.
pub fn total_objective(
    labeled: &[(ProbVector, usize)],
    unlabeled: &[(ProbVector, ProbVector)],
    cfg: &ErdaConfig,
) -> Result<f64> {
    if labeled.is_empty() {
        return Err(LabError::invalid("total objective needs at least one labeled point"));
    }
    let mut sup = 0.0;
    for (q, y) in labeled {
        if *y >= q.len() {
            return Err(LabError::IndexOutOfRange { index: *y, len: q.len() });
        }
        sup -= clamped_ln(q.as_slice()[*y]);
    }
    sup /= labeled.len() as f64;
    if unlabeled.is_empty() {
        return Ok(sup);
    }
    let mut unsup = 0.0;
    for (p, q) in unlabeled {
        if p.len() != q.len() {
            return Err(LabError::invalid("class count mismatch in unlabeled pair"));
        }
        unsup += loss_p(p, q, cfg);
    }
    Ok(sup + cfg.alpha * unsup / unlabeled.len() as f64)
}

/// Cross-entropy with a hard target; shared with the trainer.
pub(crate) fn hard_cross_entropy(q: &[f64], class: usize) -> f64 {
    -clamped_ln(q[class])
}

/// `H(p, q)` on raw slices; shared with the trainer.
pub(crate) fn soft_cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    cross_entropy_raw(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{cross_entropy, entropy, js, kl, mse, softmax};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn cfg(kind: DivergenceKind, lambda: f64) -> ErdaConfig {
        ErdaConfig::new(kind, lambda, 0.1).unwrap()
    }

    fn random_scores(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn config_rejects_negative_weights() {
        assert!(ErdaConfig::new(DivergenceKind::Js, -0.1, 0.1).is_err());
        assert!(ErdaConfig::new(DivergenceKind::Js, 0.1, -1.0).is_err());
        assert!(ErdaConfig::new(DivergenceKind::Js, f64::NAN, 0.1).is_err());
    }

    #[test]
    fn kind_round_trips_through_text() {
        for kind in DivergenceKind::ALL {
            assert_eq!(kind.as_str().parse::<DivergenceKind>().unwrap(), kind);
        }
        assert!("hellinger".parse::<DivergenceKind>().is_err());
    }

    #[test]
    fn loss_examples() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let q = pv(&[0.6, 0.1, 0.3]);
        let l = loss_p(&p, &q, &cfg(DivergenceKind::KlPq, 1.0));
        assert!((l - cross_entropy(&p, &q)).abs() < 1e-12);

        let l = loss_p(&pv(&[0.5, 0.5]), &pv(&[1.0, 0.0]), &cfg(DivergenceKind::Mse, 0.0));
        assert_eq!(l, 0.25);

        let u = ProbVector::uniform(2).unwrap();
        let l = loss_p(&u, &u, &cfg(DivergenceKind::Js, 0.5));
        assert!((l - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.346574).abs() < 1e-6);
    }

    #[test]
    fn loss_matches_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(2..=10);
            let p = softmax(&ScoreVector::new(random_scores(&mut rng, k)).unwrap());
            let q = softmax(&ScoreVector::new(random_scores(&mut rng, k)).unwrap());
            let lambda = [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)];
            let hp = entropy(&p);
            let hq = entropy(&q);
            let mid = pv(&p
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(a, b)| 0.5 * (a + b))
                .collect::<Vec<_>>());
            let expected = [
                cross_entropy(&p, &q) - (1.0 - lambda) * hp,
                cross_entropy(&q, &p) - hq + lambda * hp,
                entropy(&mid) - (0.5 - lambda) * hp - 0.5 * hq,
                mse(&p, &q) + lambda * hp,
            ];
            for (kind, want) in DivergenceKind::ALL.into_iter().zip(expected) {
                let got = loss_p(&p, &q, &cfg(kind, lambda));
                assert!((got - want).abs() < 1e-12, "{kind} lambda={lambda}");
                let d = match kind {
                    DivergenceKind::KlPq => kl(&p, &q),
                    DivergenceKind::KlQp => kl(&q, &p),
                    DivergenceKind::Js => js(&p, &q),
                    DivergenceKind::Mse => mse(&p, &q),
                };
                assert!((got - lambda * hp - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pseudo_gradient_vanishes_for_uniform_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 2..=10 {
            let s = ScoreVector::new(random_scores(&mut rng, k)).unwrap();
            let q = ProbVector::uniform(k).unwrap();
            let g = grad_pseudo_scores(&s, &q, &cfg(DivergenceKind::KlPq, 1.0)).unwrap();
            assert!(g.values.iter().all(|&v| v == 0.0), "{:?}", g.values);
            assert!(!g.clipped);
        }
    }

    #[test]
    fn kl_qp_confident_pseudo_label_update() {
        let p = ProbVector::near_one_hot(2, 0, 1e-9).unwrap();
        let s = ScoreVector::from_probs(&p);
        let q = pv(&[0.7, 0.3]);
        let g = grad_pseudo_scores(&s, &q, &cfg(DivergenceKind::KlQp, 0.0)).unwrap();
        let upd = g.update();
        assert!((upd[0] + 0.3).abs() < 1e-8);
        assert!((upd[1] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn prediction_gradient_examples() {
        let c = cfg(DivergenceKind::KlPq, 0.7);
        let p = pv(&[0.3, 0.7]);
        let s = ScoreVector::from_probs(&p);
        let g = grad_prediction_scores(&p, &s, &c).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-12));

        let g = grad_prediction_scores(
            &pv(&[1.0, 0.0]),
            &ScoreVector::new(vec![0.0, 0.0]).unwrap(),
            &c,
        )
        .unwrap();
        assert_eq!(g.values, vec![-0.5, 0.5]);
    }

    #[test]
    fn gradients_clip_and_flag() {
        let g = Gradient::finish(vec![3e6, -1.5e6]).unwrap();
        assert!(g.clipped);
        assert_eq!(g.values, vec![1e6, -0.5e6]);
        assert_eq!(
            Gradient::finish(vec![0.0, f64::NAN]),
            Err(LabError::NumericalOverflow { index: 1 })
        );
    }

    #[test]
    fn total_objective_examples() {
        let c = ErdaConfig::default();
        let q = pv(&[1.0, 0.0]);
        let v = total_objective(&[(q, 0)], &[], &c).unwrap();
        assert!(v.abs() < 1e-15);

        let labeled = vec![(pv(&[0.7, 0.3]), 0), (pv(&[0.4, 0.6]), 0)];
        let v = total_objective(&labeled, &[], &c).unwrap();
        assert!((v - 0.5 * (-(0.7f64.ln()) - 0.4f64.ln())).abs() < 1e-15);

        // Independent re-summation.
        let unlabeled = vec![
            (pv(&[0.9, 0.1]), pv(&[0.6, 0.4])),
            (pv(&[0.25, 0.75]), pv(&[0.5, 0.5])),
        ];
        let c = ErdaConfig::new(DivergenceKind::KlPq, 1.0, 0.1).unwrap();
        let sup = (-(0.7f64.ln()) - 0.4f64.ln()) / 2.0;
        let h = |p: [f64; 2], q: [f64; 2]| -(p[0] * q[0].ln() + p[1] * q[1].ln());
        let unsup = (h([0.9, 0.1], [0.6, 0.4]) + h([0.25, 0.75], [0.5, 0.5])) / 2.0;
        let v = total_objective(&labeled, &unlabeled, &c).unwrap();
        assert!((v - (sup + 0.1 * unsup)).abs() < 1e-12);

        assert!(total_objective(&[], &unlabeled, &c).is_err());
        assert!(total_objective(&[(pv(&[0.5, 0.5]), 2)], &[], &c).is_err());
    }
}
