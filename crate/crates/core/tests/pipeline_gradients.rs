use erda_lab::gradcheck::{check_pipeline_gradients, gradcheck_scene};
use erda_lab::train::{PseudoLabelMode, TrainConfig};
use erda_lab::{DivergenceKind, ErdaConfig};

fn config(mode: PseudoLabelMode, kind: DivergenceKind, lambda: f64) -> TrainConfig {
    TrainConfig {
        pl_mode: mode,
        erda: ErdaConfig::new(kind, lambda, 0.5).unwrap(),
        batch: 10,
        proj_dim: 16,
        heads: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn proto_mode_gradients_match_finite_differences() {
    let cases = DivergenceKind::ALL
        .into_iter()
        .map(|kind| (kind, 0))
        .chain([(DivergenceKind::KlPq, 1)]);
    for (kind, seed) in cases {
        let scene = gradcheck_scene(seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..config(PseudoLabelMode::Proto, kind, 1.0)
        };
        let report = check_pipeline_gradients(&cfg, &scene).unwrap();
        assert!(report.max_err() < 1e-4, "{kind} seed {seed}: {:?}", report.worst());
    }
}

#[test]
fn query_mode_gradients_match_finite_differences() {
    let scene = gradcheck_scene(4).unwrap();
    for lambda in [0.0, 1.0, 2.0] {
        let cfg = config(PseudoLabelMode::Query, DivergenceKind::KlPq, lambda);
        let report = check_pipeline_gradients(&cfg, &scene).unwrap();
        assert_eq!(report.tensors.len(), 13);
        assert!(report.max_err() < 1e-4, "lambda {lambda}: {:?}", report.worst());
    }
}

#[test]
fn supervised_gradients_match_finite_differences() {
    // Constant-target modes stop gradients at the pseudo-labels, so only
    // the purely supervised objective is a plain function of the weights.
    let scene = gradcheck_scene(5).unwrap();
    let cfg = config(PseudoLabelMode::None, DivergenceKind::KlPq, 1.0);
    let report = check_pipeline_gradients(&cfg, &scene).unwrap();
    assert!(report.max_err() < 1e-4, "{:?}", report.worst());
}
