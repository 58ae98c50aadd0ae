//! Segmentation quality and pseudo-label entropy on a whole scene.

use super::net::forward;
use super::scene::SyntheticScene;
use super::trainer::{PseudoLabelMode, TrainConfig, TrainState};
use crate::error::Result;
use crate::labeler::{cosine_scores, query_refine};
use crate::prob::{argmax, entropy_raw, softmax_vec};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub miou: f64,
    pub per_class_iou: Vec<f64>,
    pub mean_pseudo_entropy: f64,
    pub loss_curve: Vec<f64>,
}

impl Metrics {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(f64::NAN)
    }
}

/// Per-class IoU and their mean over the classes present in `labels`.
/// Absent classes report an IoU of zero and are excluded from the mean.
pub fn miou_from_predictions(pred: &[usize], labels: &[usize], num_classes: usize) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), labels.len(), "prediction/label length mismatch");
    let mut inter = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    for (&p, &y) in pred.iter().zip(labels) {
        pred_count[p] += 1;
        true_count[y] += 1;
        if p == y {
            inter[p] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let union = pred_count[c] + true_count[c] - inter[c];
            if union == 0 {
                0.0
            } else {
                inter[c] as f64 / union as f64
            }
        })
        .collect();
    let present: Vec<usize> = (0..num_classes).filter(|&c| true_count[c] > 0).collect();
    let miou = present.iter().map(|&c| per_class[c]).sum::<f64>() / present.len().max(1) as f64;
    (miou, per_class)
}

/// Pseudo-labels of the configured generator for the given scene rows,
/// computed on clean inputs.
pub fn pseudo_labels(
    state: &TrainState,
    scene: &SyntheticScene,
    config: &TrainConfig,
    rows: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let (_, proj) = forward(&state.params, &scene.inputs.select_rows(rows));
    let centers = match (&state.queries, config.pl_mode) {
        (Some(qb), PseudoLabelMode::Query) => query_refine(qb, &proj)?,
        _ => state.bank.centroids().clone(),
    };
    Ok((0..rows.len())
        .map(|i| softmax_vec(&cosine_scores(proj.row(i), &centers, config.temperature)))
        .collect())
}

/// mIoU over all points and mean pseudo-label entropy over unlabeled ones.
pub fn evaluate(state: &TrainState, scene: &SyntheticScene, config: &TrainConfig) -> Result<Metrics> {
    let (scores, _) = forward(&state.params, &scene.inputs);
    let pred: Vec<usize> = (0..scene.len()).map(|i| argmax(scores.row(i))).collect();
    let (miou, per_class_iou) = miou_from_predictions(&pred, &scene.labels, scene.num_classes);

    let unlabeled = scene.unlabeled_indices();
    let mean_pseudo_entropy = if unlabeled.is_empty() {
        0.0
    } else {
        let pseudo = pseudo_labels(state, scene, config, &unlabeled)?;
        pseudo.iter().map(|p| entropy_raw(p)).sum::<f64>() / pseudo.len() as f64
    };
    Ok(Metrics {
        miou,
        per_class_iou,
        mean_pseudo_entropy,
        loss_curve: state.loss_curve.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::train::scene::{gen_synthetic, SceneSpec};
    use crate::train::trainer::init_state;

    #[test]
    fn perfect_predictions() {
        let labels = vec![0, 1, 2, 3, 1, 0];
        let (miou, per) = miou_from_predictions(&labels, &labels, 4);
        assert_eq!(miou, 1.0);
        assert_eq!(per, vec![1.0; 4]);
    }

    #[test]
    fn constant_prediction_on_balanced_classes() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let pred = vec![0; 400];
        let (miou, per) = miou_from_predictions(&pred, &labels, 4);
        assert_eq!(per, vec![0.25, 0.0, 0.0, 0.0]);
        assert_eq!(miou, 0.0625);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let (miou, _) = miou_from_predictions(&[0, 0, 1], &[0, 0, 1], 5);
        assert_eq!(miou, 1.0);
    }

    #[test]
    fn uniform_pseudo_labels_have_maximal_entropy() {
        let spec = SceneSpec {
            num_points: 120,
            ..SceneSpec::default()
        };
        let scene = gen_synthetic(2, &spec).unwrap();
        let config = TrainConfig {
            scene: spec,
            ..TrainConfig::default()
        };
        let mut state = init_state(&config, &scene).unwrap();
        // Identical centroids make every cosine score equal.
        let d = state.bank.dim();
        let mut same = Matrix::zeros(spec.num_classes, d);
        for k in 0..spec.num_classes {
            same.row_mut(k)[0] = 1.0;
        }
        state.bank = crate::labeler::PrototypeBank::new(same, 0.9).unwrap();
        let m = evaluate(&state, &scene, &config).unwrap();
        assert!((m.mean_pseudo_entropy - (spec.num_classes as f64).ln()).abs() < 1e-12);
    }
}
