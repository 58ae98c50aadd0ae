//! Central finite-difference checks for the analytic gradients: the loss
//! family with respect to both score vectors, and the whole training
//! objective with respect to every network parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LabError, Result};
use crate::loss::{grad_prediction_scores, grad_pseudo_scores, loss_p_raw, DivergenceKind, ErdaConfig};
use crate::prob::{softmax_vec, ProbVector, ScoreVector};
use crate::train::net::TENSOR_NAMES;
use crate::train::scene::{gen_synthetic, SceneSpec, SyntheticScene};
use crate::train::trainer::{batch_loss, batch_objective, init_state, sample_batch, TrainConfig};

/// Step used by every central difference here.
pub const FD_STEP: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let mut xm = x.to_vec();
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// `max|a - n| / max(max|a|, max|n|)`; zero when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative errors over a batch of random trials for one
/// (kind, lambda) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGradReport {
    pub kind: DivergenceKind,
    pub lambda: f64,
    pub trials: usize,
    pub pseudo_max_err: f64,
    pub prediction_max_err: f64,
}

impl LossGradReport {
    pub fn max_err(&self) -> f64 {
        self.pseudo_max_err.max(self.prediction_max_err)
    }
}

/// Compares both analytic score gradients against central differences on
/// `trials` random problems with `K` in `2..=10` and scores drawn from
/// `N(0, 2^2)`.
pub fn check_loss_gradients(kind: DivergenceKind, lambda: f64, trials: usize, seed: u64) -> Result<LossGradReport> {
    let cfg = ErdaConfig::new(kind, lambda, 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 2.0).expect("valid normal");
    let mut pseudo_max_err = 0.0_f64;
    let mut prediction_max_err = 0.0_f64;
    for _ in 0..trials {
        let k = rng.random_range(2..=10);
        let s_p: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
        let s_q: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
        let p = softmax_vec(&s_p);
        let q = softmax_vec(&s_q);

        let gp = grad_pseudo_scores(&ScoreVector::new(s_p.clone())?, &ProbVector::new(q.clone())?, &cfg)?;
        let np: Vec<f64> = (0..k)
            .map(|i| central_difference(|s| loss_p_raw(&softmax_vec(s), &q, &cfg), &s_p, i, FD_STEP))
            .collect();
        pseudo_max_err = pseudo_max_err.max(relative_error(&gp.values, &np));

        let gq = grad_prediction_scores(&ProbVector::new(p.clone())?, &ScoreVector::new(s_q.clone())?, &cfg)?;
        let nq: Vec<f64> = (0..k)
            .map(|i| central_difference(|s| loss_p_raw(&p, &softmax_vec(s), &cfg), &s_q, i, FD_STEP))
            .collect();
        prediction_max_err = prediction_max_err.max(relative_error(&gq.values, &nq));
    }
    Ok(LossGradReport {
        kind,
        lambda,
        trials,
        pseudo_max_err,
        prediction_max_err,
    })
}

/// Relative error of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub len: usize,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineGradReport {
    pub tensors: Vec<TensorError>,
}

impl PipelineGradReport {
    pub fn max_err(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.rel_err))
    }

    pub fn worst(&self) -> Option<&TensorError> {
        self.tensors.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// A 10-point, 3-class scene with one labeled point per class: the three
/// labeled points and the first seven unlabeled points of a minimal
/// generated scene.
pub fn gradcheck_scene(seed: u64) -> Result<SyntheticScene> {
    let spec = SceneSpec {
        num_classes: 3,
        num_points: 30,
        dim: 3,
        spread: 0.6,
        label_ratio: 0.1,
    };
    let full = gen_synthetic(seed, &spec)?;
    let mut rows = full.labeled_indices();
    rows.extend(full.unlabeled_indices().into_iter().take(10 - rows.len()));
    full.subset(&rows)
}

/// Checks the gradient of the training objective on one fixed batch,
/// tensor by tensor, for every network parameter and (in query mode) every
/// query-bank parameter. Prototypes are constants of the objective.
pub fn check_pipeline_gradients(config: &TrainConfig, scene: &SyntheticScene) -> Result<PipelineGradReport> {
    let mut state = init_state(config, scene)?;
    let batch = sample_batch(&mut state, scene, config);
    let bank = state.bank.clone();
    let out = batch_objective(&state.params, &bank, state.queries.as_ref(), &batch, config)?;
    if out.clipped {
        return Err(LabError::invalid("gradient clipping fired; the check would be meaningless"));
    }
    let mut tensors = Vec::new();

    let mut params = state.params.clone();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let analytic = out.grads.tensors()[t].to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for e in 0..analytic.len() {
            let x = params.tensors()[t][e];
            let mut eval = |v: f64| -> Result<f64> {
                params.tensors_mut()[t][e] = v;
                batch_loss(&params, &bank, state.queries.as_ref(), &batch, config)
            };
            let d = (eval(x + FD_STEP)? - eval(x - FD_STEP)?) / (2.0 * FD_STEP);
            params.tensors_mut()[t][e] = x;
            numeric.push(d);
        }
        tensors.push(TensorError {
            name: (*name).to_string(),
            len: analytic.len(),
            rel_err: relative_error(&analytic, &numeric),
        });
    }

    if let (Some(queries), Some(grads)) = (state.queries.as_ref(), out.query_grads.as_ref()) {
        for (t, name) in ["queries", "key_proj", "value_proj"].iter().enumerate() {
            let analytic = grads.tensors()[t].to_vec();
            let mut numeric = Vec::with_capacity(analytic.len());
            let mut qb = queries.clone();
            for e in 0..analytic.len() {
                let x = qb.tensors()[t][e];
                let mut eval = |v: f64| -> Result<f64> {
                    qb.tensors_mut()[t][e] = v;
                    batch_loss(&state.params, &bank, Some(&qb), &batch, config)
                };
                let d = (eval(x + FD_STEP)? - eval(x - FD_STEP)?) / (2.0 * FD_STEP);
                qb.tensors_mut()[t][e] = x;
                numeric.push(d);
            }
            tensors.push(TensorError {
                name: (*name).to_string(),
                len: analytic.len(),
                rel_err: relative_error(&analytic, &numeric),
            });
        }
    }
    Ok(PipelineGradReport { tensors })
}
