//! A desk-scale laboratory for pseudo-label learning with entropy
//! regularization and distribution alignment.
//!
//! * [`prob`]: softmax, entropies and divergences on small distributions.
//! * [`loss`]: the `lambda * H(p) + D(p, q)` loss family and its analytic
//!   gradients with respect to both score vectors.
//! * [`analysis`]: limit-situation updates, binary contour grids and the
//!   near-uniform plateau metric.
//! * [`gradcheck`]: finite-difference checks of the analytic gradients.
//! * [`labeler`]: prototypical and query-based pseudo-label generators and
//!   the thresholding / top-k baselines.
//! * [`train`]: synthetic scenes, a small hand-differentiated network and
//!   the label-efficient training loop with its ablation sweeps.

pub mod analysis;
pub mod error;
pub mod gradcheck;
pub mod labeler;
pub mod linalg;
pub mod loss;
pub mod prob;
pub mod train;

pub use error::{LabError, Result};
pub use loss::{DivergenceKind, ErdaConfig, Gradient};
pub use prob::{ProbVector, ScoreVector};
