//! The label-efficient training loop: supervised cross-entropy on labeled
//! points plus an `alpha`-weighted pseudo-label term on unlabeled points,
//! with gradients flowing into both the prediction and the pseudo-label
//! branch.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{augment_inputs, AugmentSpec};
use super::net::{backward, forward_cached, NetShape, SegNetParams};
use super::scene::{SceneSpec, SyntheticScene};
use crate::error::{LabError, Result};
use crate::labeler::{
    cosine_scores, cosine_scores_backward, proto_update, query_refine_backward,
    query_refine_with_cache, BaselineSelector, PrototypeBank, QueryBank, DEFAULT_HEADS,
    DEFAULT_QUERY_DIM, DEFAULT_TEMPERATURE,
};
use crate::linalg::{axpy, Matrix};
use crate::loss::{
    grad_prediction_scores, grad_pseudo_scores, hard_cross_entropy, loss_p_raw,
    soft_cross_entropy, ErdaConfig,
};
use crate::prob::{argmax, entropy_raw, softmax_vec, ProbVector, ScoreVector};

/// Prototype momentum for desk-scale runs. The bank's own default of 0.999
/// averages over ~1000 updates, longer than a whole toy run; 0.99 keeps the
/// same role on a ~100-step horizon.
pub const TRAIN_MOMENTUM: f64 = 0.99;

/// Source and treatment of the unlabeled-point targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PseudoLabelMode {
    /// Prototype pseudo-labels trained jointly through the loss.
    Proto,
    /// Query-refined pseudo-labels trained jointly, weak-to-strong views.
    Query,
    /// Prototype pseudo-labels, selected and converted to one-hot constants.
    BaselineOneHot,
    /// Prototype pseudo-labels used as constant soft targets.
    SoftNoErda,
    /// Labeled points only.
    None,
}

impl PseudoLabelMode {
    pub const ALL: [PseudoLabelMode; 5] = [
        PseudoLabelMode::Proto,
        PseudoLabelMode::Query,
        PseudoLabelMode::BaselineOneHot,
        PseudoLabelMode::SoftNoErda,
        PseudoLabelMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PseudoLabelMode::Proto => "proto",
            PseudoLabelMode::Query => "query",
            PseudoLabelMode::BaselineOneHot => "baseline_onehot",
            PseudoLabelMode::SoftNoErda => "soft_no_erda",
            PseudoLabelMode::None => "none",
        }
    }

    /// Whether gradients reach the pseudo-label generator.
    pub fn is_erda(self) -> bool {
        matches!(self, PseudoLabelMode::Proto | PseudoLabelMode::Query)
    }
}

impl fmt::Display for PseudoLabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PseudoLabelMode {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        PseudoLabelMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LabError::invalid(format!("unknown pseudo-label mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub erda: ErdaConfig,
    pub pl_mode: PseudoLabelMode,
    /// Required for `BaselineOneHot`. For `Proto`/`Query` it restricts the
    /// pseudo-label term to the selected points (targets stay soft).
    pub selector: Option<BaselineSelector>,
    pub lr: f64,
    pub steps: usize,
    /// Unlabeled points sampled per step.
    pub batch: usize,
    pub seed: u64,
    pub scene: SceneSpec,
    pub temperature: f64,
    pub momentum: f64,
    pub proj_dim: usize,
    pub heads: usize,
    /// Also apply the pseudo-label term to labeled points.
    pub include_labeled_in_pseudo: bool,
    pub weak: AugmentSpec,
    pub strong: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            erda: ErdaConfig::default(),
            pl_mode: PseudoLabelMode::Proto,
            selector: None,
            lr: 0.05,
            steps: 300,
            batch: 256,
            seed: 0,
            scene: SceneSpec::default(),
            temperature: DEFAULT_TEMPERATURE,
            momentum: TRAIN_MOMENTUM,
            proj_dim: DEFAULT_QUERY_DIM,
            heads: DEFAULT_HEADS,
            include_labeled_in_pseudo: false,
            weak: AugmentSpec::weak(0.05, 0),
            strong: AugmentSpec::strong(0.1, 0.1, (0.8, 1.2), 0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ErdaConfig::new(self.erda.kind, self.erda.lambda, self.erda.alpha)?;
        match (self.pl_mode, &self.selector) {
            (PseudoLabelMode::BaselineOneHot, None) => {
                return Err(LabError::invalid("baseline_onehot needs a selector"))
            }
            (PseudoLabelMode::SoftNoErda | PseudoLabelMode::None, Some(_)) => {
                return Err(LabError::invalid(format!(
                    "a selector is not meaningful for pl_mode {}",
                    self.pl_mode
                )))
            }
            _ => {}
        }
        if let Some(BaselineSelector::Threshold(t)) = self.selector {
            if !(0.0..=1.0).contains(&t) {
                return Err(LabError::invalid(format!("threshold {t} not in [0, 1]")));
            }
        }
        if let Some(BaselineSelector::TopK(0)) = self.selector {
            return Err(LabError::invalid("top-k needs k >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(LabError::invalid(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(LabError::invalid("steps and batch must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LabError::invalid("temperature must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LabError::invalid("momentum must be in [0, 1)"));
        }
        if self.proj_dim == 0 || self.heads == 0 || !self.proj_dim.is_multiple_of(self.heads) {
            return Err(LabError::invalid(format!(
                "{} heads do not divide projection dimension {}",
                self.heads, self.proj_dim
            )));
        }
        self.weak.validate()?;
        self.strong.validate()
    }

    fn shape(&self, scene: &SyntheticScene) -> NetShape {
        NetShape {
            input_dim: scene.dim(),
            num_classes: scene.num_classes,
            proj_dim: self.proj_dim,
        }
    }
}

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: SegNetParams,
    pub bank: PrototypeBank,
    pub queries: Option<QueryBank>,
    pub step: usize,
    pub loss_curve: Vec<f64>,
    pub pseudo_entropy_curve: Vec<f64>,
    rng: ChaCha8Rng,
}

pub fn init_state(config: &TrainConfig, scene: &SyntheticScene) -> Result<TrainState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_7a11);
    let shape = config.shape(scene);
    let params = SegNetParams::random(shape, &mut rng);
    let bank = labeled_mean_bank(&params, scene, config.momentum)?;
    let queries = if config.pl_mode == PseudoLabelMode::Query {
        Some(QueryBank::random(shape.num_classes, shape.proj_dim, config.heads, &mut rng)?)
    } else {
        None
    };
    Ok(TrainState {
        params,
        bank,
        queries,
        step: 0,
        loss_curve: Vec::new(),
        pseudo_entropy_curve: Vec::new(),
        rng,
    })
}

/// Prototypes start at the per-class mean projection of the clean labeled
/// points under the initial network, so the momentum update refines a
/// meaningful estimate instead of averaging away a random one.
fn labeled_mean_bank(params: &SegNetParams, scene: &SyntheticScene, momentum: f64) -> Result<PrototypeBank> {
    let labeled = scene.labeled_indices();
    let (_, proj, _) = forward_cached(params, &scene.inputs.select_rows(&labeled));
    let mut centroids = Matrix::zeros(scene.num_classes, proj.cols());
    let mut counts = vec![0usize; scene.num_classes];
    for (r, &i) in labeled.iter().enumerate() {
        let y = scene.labels[i];
        counts[y] += 1;
        axpy(1.0, proj.row(r), centroids.row_mut(y));
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            centroids.row_mut(k).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    PrototypeBank::new(centroids, momentum)
}

/// One step's worth of points and their augmented views.
///
/// Labeled rows come first, in scene order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub rows: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    /// Batch positions entering the pseudo-label term.
    pub pseudo_rows: Vec<usize>,
    /// View seen by the segmentation head.
    pub x_pred: Matrix,
    /// View seen by the pseudo-label branch when it differs.
    pub x_pseudo: Option<Matrix>,
}

impl StepBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn sample_batch(state: &mut TrainState, scene: &SyntheticScene, config: &TrainConfig) -> StepBatch {
    let labeled = scene.labeled_indices();
    let unlabeled = scene.unlabeled_indices();
    let take = config.batch.min(unlabeled.len());
    let mut picked: Vec<usize> = index::sample(&mut state.rng, unlabeled.len(), take)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect();
    picked.sort_unstable();

    let mut rows = labeled.clone();
    rows.extend_from_slice(&picked);
    let labels = rows
        .iter()
        .enumerate()
        .map(|(pos, &i)| (pos < labeled.len()).then_some(scene.labels[i]))
        .collect();
    let pseudo_rows = if config.pl_mode == PseudoLabelMode::None {
        Vec::new()
    } else if config.include_labeled_in_pseudo {
        (0..rows.len()).collect()
    } else {
        (labeled.len()..rows.len()).collect()
    };

    let clean = scene.inputs.select_rows(&rows);
    let weak = augment_inputs(&clean, &config.weak.with_seed(state.rng.next_u64()));
    let (x_pred, x_pseudo) = if config.pl_mode == PseudoLabelMode::Query {
        let strong = augment_inputs(&clean, &config.strong.with_seed(state.rng.next_u64()));
        (strong, Some(weak))
    } else {
        (weak, None)
    };
    StepBatch {
        rows,
        labels,
        pseudo_rows,
        x_pred,
        x_pseudo,
    }
}

/// Loss, parameter gradients and side products of one batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: SegNetParams,
    pub query_grads: Option<QueryBank>,
    /// Pseudo-branch projections of labeled rows, for the momentum update.
    pub labeled_proj: Vec<(Vec<f64>, usize)>,
    pub mean_pseudo_entropy: f64,
    /// Any pseudo-label gradient was clipped.
    pub clipped: bool,
}

/// Evaluates the training objective on a fixed batch and its gradient
/// with respect to the network (and query) parameters. Prototypes are
/// treated as constants.
pub fn batch_objective(
    params: &SegNetParams,
    bank: &PrototypeBank,
    queries: Option<&QueryBank>,
    batch: &StepBatch,
    config: &TrainConfig,
) -> Result<StepOutput> {
    objective(params, bank, queries, batch, config, true)
}

/// The loss of [`batch_objective`] without the backward pass.
pub fn batch_loss(
    params: &SegNetParams,
    bank: &PrototypeBank,
    queries: Option<&QueryBank>,
    batch: &StepBatch,
    config: &TrainConfig,
) -> Result<f64> {
    Ok(objective(params, bank, queries, batch, config, false)?.loss)
}

fn objective(
    params: &SegNetParams,
    bank: &PrototypeBank,
    queries: Option<&QueryBank>,
    batch: &StepBatch,
    config: &TrainConfig,
    with_grads: bool,
) -> Result<StepOutput> {
    let m = batch.len();
    let k = params.shape().num_classes;
    let d = params.shape().proj_dim;
    let (scores, proj_pred, cache_pred) = forward_cached(params, &batch.x_pred);
    let separate = batch
        .x_pseudo
        .as_ref()
        .map(|x| forward_cached(params, x));
    let proj_pseudo = separate.as_ref().map_or(&proj_pred, |(_, p, _)| p);

    let mut grad_scores = Matrix::zeros(m, k);
    let mut grad_proj_pred = Matrix::zeros(m, d);
    let mut grad_proj_pseudo = Matrix::zeros(m, d);
    let mut loss = 0.0;

    let n_l = batch.labels.iter().filter(|y| y.is_some()).count();
    let mut labeled_proj = Vec::with_capacity(n_l);
    for (row, y) in batch.labels.iter().enumerate() {
        let Some(y) = *y else { continue };
        let q = softmax_vec(scores.row(row));
        loss += hard_cross_entropy(&q, y) / n_l as f64;
        let g = grad_scores.row_mut(row);
        axpy(1.0 / n_l as f64, &q, g);
        g[y] -= 1.0 / n_l as f64;
        labeled_proj.push((proj_pseudo.row(row).to_vec(), y));
    }

    let mut mean_pseudo_entropy = 0.0;
    let mut clipped = false;
    let mut query_grads = None;
    let n_u = batch.pseudo_rows.len();
    if n_u > 0 && config.pl_mode != PseudoLabelMode::None {
        let weight = config.erda.alpha / n_u as f64;
        let tau = config.temperature;
        let pseudo_feats = proj_pseudo.select_rows(&batch.pseudo_rows);
        let attention = match config.pl_mode {
            PseudoLabelMode::Query => {
                let qb = queries.ok_or_else(|| LabError::invalid("query mode without a query bank"))?;
                Some((qb, query_refine_with_cache(qb, &pseudo_feats)))
            }
            _ => None,
        };
        let centers = attention
            .as_ref()
            .map_or(bank.centroids(), |(_, (refined, _))| refined);

        let pseudo_scores: Vec<Vec<f64>> = (0..n_u)
            .map(|u| cosine_scores(pseudo_feats.row(u), centers, tau))
            .collect();
        let pseudo: Vec<Vec<f64>> = pseudo_scores.iter().map(|s| softmax_vec(s)).collect();
        mean_pseudo_entropy = pseudo.iter().map(|p| entropy_raw(p)).sum::<f64>() / n_u as f64;

        let active: Vec<usize> = match config.selector {
            Some(sel) => sel.select_indices(&pseudo),
            None => (0..n_u).collect(),
        };
        let mut grad_centers = Matrix::zeros(centers.rows(), d);
        let mut grad_feats = Matrix::zeros(n_u, d);
        for &u in &active {
            let row = batch.pseudo_rows[u];
            let s_q = scores.row(row);
            let q = softmax_vec(s_q);
            let p = &pseudo[u];
            match config.pl_mode {
                PseudoLabelMode::Proto | PseudoLabelMode::Query => {
                    loss += weight * loss_p_raw(p, &q, &config.erda);
                    let pv = ProbVector::from_raw(p.clone());
                    let gq = grad_prediction_scores(&pv, &ScoreVector::new(s_q.to_vec())?, &config.erda)?;
                    let qv = ProbVector::from_raw(q);
                    let gp = grad_pseudo_scores(&ScoreVector::new(pseudo_scores[u].clone())?, &qv, &config.erda)?;
                    clipped |= gq.clipped || gp.clipped;
                    axpy(weight, &gq.values, grad_scores.row_mut(row));
                    let gp: Vec<f64> = gp.values.iter().map(|v| v * weight).collect();
                    let gc = attention.is_some().then_some(&mut grad_centers);
                    cosine_scores_backward(pseudo_feats.row(u), centers, tau, &gp, grad_feats.row_mut(u), gc);
                }
                PseudoLabelMode::SoftNoErda => {
                    loss += weight * soft_cross_entropy(p, &q);
                    let g = grad_scores.row_mut(row);
                    for c in 0..k {
                        g[c] += weight * (q[c] - p[c]);
                    }
                }
                PseudoLabelMode::BaselineOneHot => {
                    let y = argmax(p);
                    loss += weight * hard_cross_entropy(&q, y);
                    let g = grad_scores.row_mut(row);
                    axpy(weight, &q, g);
                    g[y] -= weight;
                }
                PseudoLabelMode::None => unreachable!(),
            }
        }
        if let (true, Some((qb, (_, cache)))) = (with_grads, &attention) {
            let mut gq = qb.zeros_like();
            query_refine_backward(qb, &pseudo_feats, cache, &grad_centers, &mut gq, &mut grad_feats);
            query_grads = Some(gq);
        }
        let target = if separate.is_some() {
            &mut grad_proj_pseudo
        } else {
            &mut grad_proj_pred
        };
        for (u, &row) in batch.pseudo_rows.iter().enumerate() {
            axpy(1.0, grad_feats.row(u), target.row_mut(row));
        }
    }

    let mut grads = params.zeros_like();
    if with_grads {
        backward(params, &cache_pred, &grad_scores, &grad_proj_pred, &mut grads);
        if let Some((_, _, cache)) = &separate {
            backward(params, cache, &Matrix::zeros(m, k), &grad_proj_pseudo, &mut grads);
        }
    }
    Ok(StepOutput {
        loss,
        grads,
        query_grads,
        labeled_proj,
        mean_pseudo_entropy,
        clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub mean_pseudo_entropy: f64,
}

/// One gradient-descent step followed by the prototype momentum update.
pub fn train_step(
    state: &mut TrainState,
    scene: &SyntheticScene,
    config: &TrainConfig,
) -> Result<StepMetrics> {
    let step = state.step;
    let batch = sample_batch(state, scene, config);
    let out = batch_objective(&state.params, &state.bank, state.queries.as_ref(), &batch, config)
        .map_err(|e| match e {
            LabError::NumericalOverflow { .. } => LabError::TrainingDiverged { step },
            other => other,
        })?;
    if !out.loss.is_finite() {
        return Err(LabError::TrainingDiverged { step });
    }
    if config.lr > 0.0 {
        state.params.scaled_add(-config.lr, &out.grads);
        if let (Some(qb), Some(g)) = (state.queries.as_mut(), out.query_grads.as_ref()) {
            for (dst, src) in qb.tensors_mut().into_iter().zip(g.tensors()) {
                axpy(-config.lr, src, dst);
            }
        }
    }
    if config.pl_mode != PseudoLabelMode::Query {
        proto_update(&mut state.bank, &out.labeled_proj)?;
    }
    if !state.params.is_finite() || state.queries.as_ref().is_some_and(|q| !q.is_finite()) {
        return Err(LabError::TrainingDiverged { step });
    }
    state.step += 1;
    state.loss_curve.push(out.loss);
    state.pseudo_entropy_curve.push(out.mean_pseudo_entropy);
    Ok(StepMetrics {
        step,
        loss: out.loss,
        mean_pseudo_entropy: out.mean_pseudo_entropy,
    })
}

/// Runs `config.steps` steps from a fresh state.
pub fn train(config: &TrainConfig, scene: &SyntheticScene) -> Result<TrainState> {
    let mut state = init_state(config, scene)?;
    for _ in 0..config.steps {
        train_step(&mut state, scene, config)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::DivergenceKind;
    use crate::train::scene::gen_synthetic;

    fn small() -> (TrainConfig, SyntheticScene) {
        let scene_spec = SceneSpec {
            num_classes: 3,
            num_points: 60,
            dim: 3,
            spread: 0.4,
            label_ratio: 0.1,
        };
        let config = TrainConfig {
            scene: scene_spec,
            steps: 5,
            batch: 16,
            proj_dim: 8,
            heads: 2,
            ..TrainConfig::default()
        };
        let scene = gen_synthetic(1, &scene_spec).unwrap();
        (config, scene)
    }

    #[test]
    fn mode_names_round_trip() {
        for m in PseudoLabelMode::ALL {
            assert_eq!(m.as_str().parse::<PseudoLabelMode>().unwrap(), m);
        }
        assert!("teacher".parse::<PseudoLabelMode>().is_err());
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::default();
        assert!(base.validate().is_ok());
        let bad = TrainConfig {
            pl_mode: PseudoLabelMode::BaselineOneHot,
            ..base.clone()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            selector: Some(BaselineSelector::TopK(1)),
            pl_mode: PseudoLabelMode::None,
            ..base.clone()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            heads: 7,
            ..base.clone()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { steps: 0, ..base };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn supervised_mode_is_plain_cross_entropy() {
        let (mut config, scene) = small();
        config.pl_mode = PseudoLabelMode::None;
        let mut state = init_state(&config, &scene).unwrap();
        let batch = sample_batch(&mut state, &scene, &config);
        assert!(batch.pseudo_rows.is_empty());
        let out = batch_objective(&state.params, &state.bank, None, &batch, &config).unwrap();

        let (scores, _) = crate::train::net::forward(&state.params, &batch.x_pred);
        let labeled: Vec<(ProbVector, usize)> = batch
            .labels
            .iter()
            .enumerate()
            .filter_map(|(r, y)| y.map(|y| (ProbVector::new(softmax_vec(scores.row(r))).unwrap(), y)))
            .collect();
        let expected = crate::loss::total_objective(&labeled, &[], &config.erda).unwrap();
        assert!((out.loss - expected).abs() < 1e-12);

        // The same step with any alpha is identical.
        let mut other = config.clone();
        other.erda.alpha = 5.0;
        let out2 = batch_objective(&state.params, &state.bank, None, &batch, &other).unwrap();
        assert_eq!(out.loss, out2.loss);
        assert_eq!(out.grads, out2.grads);
    }

    #[test]
    fn proto_objective_matches_total_objective() {
        let (config, scene) = small();
        let mut state = init_state(&config, &scene).unwrap();
        let batch = sample_batch(&mut state, &scene, &config);
        let out = batch_objective(&state.params, &state.bank, None, &batch, &config).unwrap();
        let (scores, proj) = crate::train::net::forward(&state.params, &batch.x_pred);
        let q = |r: usize| ProbVector::new(softmax_vec(scores.row(r))).unwrap();
        let labeled: Vec<_> = batch
            .labels
            .iter()
            .enumerate()
            .filter_map(|(r, y)| y.map(|y| (q(r), y)))
            .collect();
        let unlabeled: Vec<_> = batch
            .pseudo_rows
            .iter()
            .map(|&r| {
                let p = crate::labeler::proto_pseudo_label(proj.row(r), &state.bank, config.temperature)
                    .unwrap();
                (p, q(r))
            })
            .collect();
        let expected = crate::loss::total_objective(&labeled, &unlabeled, &config.erda).unwrap();
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_only_moves_prototypes() {
        let (mut config, scene) = small();
        config.lr = 0.0;
        let mut state = init_state(&config, &scene).unwrap();
        let before = state.clone();
        train_step(&mut state, &scene, &config).unwrap();
        assert_eq!(state.params, before.params);
        assert_ne!(state.bank, before.bank);
    }

    #[test]
    fn training_is_deterministic() {
        let (config, scene) = small();
        for mode in [PseudoLabelMode::Proto, PseudoLabelMode::Query] {
            let config = TrainConfig {
                pl_mode: mode,
                ..config.clone()
            };
            let a = train(&config, &scene).unwrap();
            let b = train(&config, &scene).unwrap();
            assert_eq!(a.loss_curve, b.loss_curve);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn every_mode_runs() {
        let (config, scene) = small();
        for mode in PseudoLabelMode::ALL {
            let selector = (mode == PseudoLabelMode::BaselineOneHot)
                .then_some(BaselineSelector::Threshold(0.5));
            for kind in DivergenceKind::ALL {
                let config = TrainConfig {
                    pl_mode: mode,
                    selector,
                    erda: ErdaConfig::new(kind, 1.0, 0.1).unwrap(),
                    ..config.clone()
                };
                let state = train(&config, &scene).unwrap();
                assert_eq!(state.loss_curve.len(), config.steps);
            }
        }
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let (mut config, scene) = small();
        config.lr = 1e300;
        config.steps = 20;
        match train(&config, &scene) {
            Err(LabError::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
