//! Pseudo-label generators.
//!
//! Prototypical labels are a softmax over temperature-scaled cosine
//! similarities to momentum-averaged class centroids. Query-based labels
//! use the same cosine head against class queries refined by multi-head
//! cross-attention over the current features. Thresholding and per-class
//! top-k selection with one-hot conversion are provided as baselines.

use rand::Rng;

use crate::error::{LabError, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::prob::{argmax, softmax_vec, ProbVector};

/// Norm floor for cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.999;
pub const DEFAULT_QUERY_DIM: usize = 64;
pub const DEFAULT_HEADS: usize = 8;

/// Class centroids in projection space, updated by momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    centroids: Matrix,
    momentum: f64,
}

impl PrototypeBank {
    pub fn new(centroids: Matrix, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(LabError::invalid(format!("momentum {momentum} not in [0, 1)")));
        }
        if centroids.rows() < 2 || centroids.cols() == 0 {
            return Err(LabError::invalid("need at least 2 centroids of positive dimension"));
        }
        if !centroids.is_finite() {
            return Err(LabError::invalid("centroids must be finite"));
        }
        Ok(PrototypeBank {
            centroids,
            momentum,
        })
    }

    /// Unit-normalized Gaussian centroids.
    pub fn random<R: Rng + ?Sized>(
        num_classes: usize,
        dim: usize,
        momentum: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut c = Matrix::random_normal(num_classes, dim, 1.0, rng);
        for k in 0..num_classes {
            let row = c.row_mut(k);
            let n = norm(row).max(NORM_FLOOR);
            row.iter_mut().for_each(|v| *v /= n);
        }
        PrototypeBank::new(c, momentum)
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(LabError::invalid(format!("temperature must be > 0, got {temperature}")))
    }
}

/// `cos(feature, c_k) / temperature` for every row `c_k`.
pub(crate) fn cosine_scores(feature: &[f64], centroids: &Matrix, temperature: f64) -> Vec<f64> {
    let nf = norm(feature).max(NORM_FLOOR);
    (0..centroids.rows())
        .map(|k| {
            let c = centroids.row(k);
            dot(feature, c) / (nf * norm(c).max(NORM_FLOOR)) / temperature
        })
        .collect()
}

/// Back-propagates `grad_scores` (w.r.t. the output of [`cosine_scores`])
/// into the feature and, optionally, the centroids.
pub(crate) fn cosine_scores_backward(
    feature: &[f64],
    centroids: &Matrix,
    temperature: f64,
    grad_scores: &[f64],
    grad_feature: &mut [f64],
    mut grad_centroids: Option<&mut Matrix>,
) {
    let nf_raw = norm(feature);
    let nf = nf_raw.max(NORM_FLOOR);
    for (k, &gs) in grad_scores.iter().enumerate() {
        if gs == 0.0 {
            continue;
        }
        let c = centroids.row(k);
        let nc_raw = norm(c);
        let nc = nc_raw.max(NORM_FLOOR);
        let cos = dot(feature, c) / (nf * nc);
        let g = gs / temperature;
        // d cos / d f = c / (|f||c|) - cos f / |f|^2, floor regions are flat in the norm.
        axpy(g / (nf * nc), c, grad_feature);
        if nf_raw > NORM_FLOOR {
            axpy(-g * cos / (nf * nf), feature, grad_feature);
        }
        if let Some(gc) = grad_centroids.as_deref_mut() {
            let row = gc.row_mut(k);
            axpy(g / (nf * nc), feature, row);
            if nc_raw > NORM_FLOOR {
                axpy(-g * cos / (nc * nc), c, row);
            }
        }
    }
}

/// Softmax over temperature-scaled cosine similarities to the centroids.
pub fn proto_pseudo_label(
    feature: &[f64],
    bank: &PrototypeBank,
    temperature: f64,
) -> Result<ProbVector> {
    cosine_pseudo_label(feature, bank.centroids(), temperature)
}

fn cosine_pseudo_label(feature: &[f64], centroids: &Matrix, temperature: f64) -> Result<ProbVector> {
    check_temperature(temperature)?;
    if feature.len() != centroids.cols() {
        return Err(LabError::invalid(format!(
            "feature dimension {} != centroid dimension {}",
            feature.len(),
            centroids.cols()
        )));
    }
    if norm(feature) <= NORM_FLOOR {
        return Err(LabError::DegenerateFeature);
    }
    ProbVector::new(softmax_vec(&cosine_scores(feature, centroids, temperature)))
}

/// Momentum update of every class that appears in `labeled_features`
/// towards its batch mean. Other classes are left untouched.
pub fn proto_update(bank: &mut PrototypeBank, labeled_features: &[(Vec<f64>, usize)]) -> Result<()> {
    let (k, d) = (bank.num_classes(), bank.dim());
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (f, y) in labeled_features {
        if *y >= k {
            return Err(LabError::IndexOutOfRange { index: *y, len: k });
        }
        if f.len() != d {
            return Err(LabError::invalid(format!("feature dimension {} != {d}", f.len())));
        }
        axpy(1.0, f, sums.row_mut(*y));
        counts[*y] += 1;
    }
    let m = bank.momentum;
    for (class, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let inv = 1.0 / n as f64;
        let mean = sums.row(class).to_vec();
        for (c, s) in bank.centroids.row_mut(class).iter_mut().zip(mean) {
            *c = m * *c + (1.0 - m) * (s * inv);
        }
    }
    Ok(())
}

/// Learnable class queries with key and value projections.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBank {
    pub queries: Matrix,
    pub key_proj: Matrix,
    pub value_proj: Matrix,
    heads: usize,
    residual: bool,
}

impl QueryBank {
    pub fn new(queries: Matrix, key_proj: Matrix, value_proj: Matrix, heads: usize) -> Result<Self> {
        let d = queries.cols();
        if queries.rows() < 2 || d == 0 {
            return Err(LabError::invalid("need at least 2 queries of positive dimension"));
        }
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(LabError::invalid(format!("{heads} heads do not divide dimension {d}")));
        }
        for (name, m) in [("key", &key_proj), ("value", &value_proj)] {
            if m.rows() != d || m.cols() != d {
                return Err(LabError::invalid(format!("{name} projection must be {d}x{d}")));
            }
        }
        if !(queries.is_finite() && key_proj.is_finite() && value_proj.is_finite()) {
            return Err(LabError::invalid("query parameters must be finite"));
        }
        Ok(QueryBank {
            queries,
            key_proj,
            value_proj,
            heads,
            residual: true,
        })
    }

    /// Unit-norm Gaussian queries and `N(0, 1/d)` projections.
    pub fn random<R: Rng + ?Sized>(
        num_classes: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = 1.0 / (dim as f64).sqrt();
        let queries = Matrix::random_normal(num_classes, dim, scale, rng);
        let key_proj = Matrix::random_normal(dim, dim, scale, rng);
        let value_proj = Matrix::random_normal(dim, dim, scale, rng);
        QueryBank::new(queries, key_proj, value_proj, heads)
    }

    /// Whether the refined embedding adds the query back onto the
    /// attention output. On by default.
    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.queries.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.queries.rows()
    }

    pub fn zeros_like(&self) -> QueryBank {
        let d = self.dim();
        QueryBank {
            queries: Matrix::zeros(self.num_classes(), d),
            key_proj: Matrix::zeros(d, d),
            value_proj: Matrix::zeros(d, d),
            heads: self.heads,
            residual: self.residual,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.queries.is_finite() && self.key_proj.is_finite() && self.value_proj.is_finite()
    }

    /// Flat views of every parameter tensor, in a fixed order.
    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.queries.as_mut_slice(),
            self.key_proj.as_mut_slice(),
            self.value_proj.as_mut_slice(),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [
            self.queries.as_slice(),
            self.key_proj.as_slice(),
            self.value_proj.as_slice(),
        ]
    }
}

/// Intermediate values kept for the backward pass.
pub(crate) struct AttentionCache {
    keys: Matrix,
    values: Matrix,
    /// One `K x N` row-stochastic matrix per head.
    weights: Vec<Matrix>,
}

pub(crate) fn query_refine_with_cache(bank: &QueryBank, features: &Matrix) -> (Matrix, AttentionCache) {
    let (k, d, h) = (bank.num_classes(), bank.dim(), bank.heads);
    let dh = d / h;
    let n = features.rows();
    let keys = features.matmul_t(&bank.key_proj);
    let values = features.matmul_t(&bank.value_proj);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = if bank.residual {
        bank.queries.clone()
    } else {
        Matrix::zeros(k, d)
    };
    let mut weights = Vec::with_capacity(h);
    for head in 0..h {
        let cols = head * dh..(head + 1) * dh;
        let mut w = Matrix::zeros(k, n);
        for c in 0..k {
            let q = &bank.queries.row(c)[cols.clone()];
            let logits: Vec<f64> = (0..n)
                .map(|m| dot(q, &keys.row(m)[cols.clone()]) * scale)
                .collect();
            let a = softmax_vec(&logits);
            let dst = &mut out.row_mut(c)[cols.clone()];
            for (m, &am) in a.iter().enumerate() {
                axpy(am, &values.row(m)[cols.clone()], dst);
            }
            w.row_mut(c).copy_from_slice(&a);
        }
        weights.push(w);
    }
    (out, AttentionCache { keys, values, weights })
}

/// Back-propagates `grad_out` (w.r.t. the refined embeddings) into the
/// bank parameters and the attended features.
pub(crate) fn query_refine_backward(
    bank: &QueryBank,
    features: &Matrix,
    cache: &AttentionCache,
    grad_out: &Matrix,
    grad_bank: &mut QueryBank,
    grad_features: &mut Matrix,
) {
    let (k, d, h) = (bank.num_classes(), bank.dim(), bank.heads);
    let dh = d / h;
    let n = features.rows();
    let scale = 1.0 / (dh as f64).sqrt();
    if bank.residual {
        grad_bank.queries.add_assign(grad_out);
    }
    let mut grad_keys = Matrix::zeros(n, d);
    let mut grad_values = Matrix::zeros(n, d);
    for head in 0..h {
        let cols = head * dh..(head + 1) * dh;
        let w = &cache.weights[head];
        for c in 0..k {
            let go = &grad_out.row(c)[cols.clone()];
            let a = w.row(c);
            let da: Vec<f64> = (0..n)
                .map(|m| dot(go, &cache.values.row(m)[cols.clone()]))
                .collect();
            let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            let q = &bank.queries.row(c)[cols.clone()];
            for m in 0..n {
                axpy(a[m], go, &mut grad_values.row_mut(m)[cols.clone()]);
                let dl = a[m] * (da[m] - mean) * scale;
                if dl == 0.0 {
                    continue;
                }
                axpy(dl, &cache.keys.row(m)[cols.clone()], &mut grad_bank.queries.row_mut(c)[cols.clone()]);
                axpy(dl, q, &mut grad_keys.row_mut(m)[cols.clone()]);
            }
        }
    }
    // keys = X Wk^T: dWk = dKeys^T X, dX = dKeys Wk.
    grad_bank.key_proj.add_assign(&grad_keys.t_matmul(features));
    grad_bank.value_proj.add_assign(&grad_values.t_matmul(features));
    grad_features.add_assign(&grad_keys.matmul(&bank.key_proj));
    grad_features.add_assign(&grad_values.matmul(&bank.value_proj));
}

/// Refines the class queries against `features` (one row per point) with
/// multi-head cross-attention. Returns one embedding per class.
pub fn query_refine(bank: &QueryBank, features: &Matrix) -> Result<Matrix> {
    if features.rows() == 0 {
        return Err(LabError::invalid("query refinement needs at least one feature"));
    }
    if features.cols() != bank.dim() {
        return Err(LabError::invalid(format!(
            "feature dimension {} != query dimension {}",
            features.cols(),
            bank.dim()
        )));
    }
    Ok(query_refine_with_cache(bank, features).0)
}

/// Cosine pseudo-label against refined query embeddings.
pub fn query_pseudo_label(feature: &[f64], refined: &Matrix, temperature: f64) -> Result<ProbVector> {
    cosine_pseudo_label(feature, refined, temperature)
}

/// How the baseline keeps confident pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineSelector {
    /// Keep points whose largest probability reaches the threshold.
    Threshold(f64),
    /// Keep, for every class, the `k` points most confident in it.
    TopK(usize),
}

impl BaselineSelector {
    /// Indices kept by the selector, ascending.
    pub fn select_indices<P: AsRef<[f64]>>(&self, pseudo: &[P]) -> Vec<usize> {
        match *self {
            BaselineSelector::Threshold(t) => pseudo
                .iter()
                .enumerate()
                .filter(|(_, p)| p.as_ref().iter().copied().fold(f64::NEG_INFINITY, f64::max) >= t)
                .map(|(i, _)| i)
                .collect(),
            BaselineSelector::TopK(k) => {
                let classes = pseudo.first().map_or(0, |p| p.as_ref().len());
                let mut keep = vec![false; pseudo.len()];
                let mut order: Vec<usize> = (0..pseudo.len()).collect();
                for c in 0..classes {
                    // Stable sort keeps lower indices first among ties.
                    order.sort_by(|&a, &b| {
                        pseudo[b].as_ref()[c].total_cmp(&pseudo[a].as_ref()[c])
                    });
                    for &i in order.iter().take(k) {
                        keep[i] = true;
                    }
                    order.sort_unstable();
                }
                keep.iter()
                    .enumerate()
                    .filter(|(_, &k)| k)
                    .map(|(i, _)| i)
                    .collect()
            }
        }
    }
}

/// Keeps confident pseudo-labels and converts them to one-hot at their
/// argmax.
pub fn baseline_select(
    pseudo: &[ProbVector],
    sel: BaselineSelector,
) -> Result<Vec<(usize, ProbVector)>> {
    if pseudo.is_empty() {
        return Err(LabError::invalid("nothing to select from"));
    }
    sel.select_indices(pseudo)
        .into_iter()
        .map(|i| {
            let p = &pseudo[i];
            Ok((i, ProbVector::one_hot(p.len(), argmax(p.as_slice()))?))
        })
        .collect()
}
