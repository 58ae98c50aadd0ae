//! Synthetic labeled/unlabeled point scenes drawn from Gaussian clusters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LabError, Result};
use crate::linalg::Matrix;

/// Distance between neighbouring cluster means.
pub const SEPARATION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub num_classes: usize,
    pub num_points: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation as a multiple of [`SEPARATION`].
    pub spread: f64,
    pub label_ratio: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_classes: 6,
            num_points: 3000,
            dim: 3,
            spread: 0.6,
            label_ratio: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub labeled_mask: Vec<bool>,
    pub num_classes: usize,
    pub means: Matrix,
    /// Fraction of points actually labeled.
    pub effective_ratio: f64,
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled_mask[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    /// The scene restricted to `rows`, in the given order. Useful for
    /// scenes smaller than [`gen_synthetic`] allows, e.g. gradient checks.
    pub fn subset(&self, rows: &[usize]) -> Result<SyntheticScene> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.len()) {
            return Err(LabError::IndexOutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        let labeled_mask: Vec<bool> = rows.iter().map(|&i| self.labeled_mask[i]).collect();
        if !labeled_mask.contains(&true) {
            return Err(LabError::invalid("a subset needs at least one labeled point"));
        }
        let effective_ratio = labeled_mask.iter().filter(|&&m| m).count() as f64 / rows.len() as f64;
        Ok(SyntheticScene {
            inputs: self.inputs.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            labeled_mask,
            num_classes: self.num_classes,
            means: self.means.clone(),
            effective_ratio,
        })
    }
}

/// Cluster means whose closest pairs sit exactly `SEPARATION` apart.
///
/// A regular simplex when `k <= dim + 1`, otherwise a regular polygon in
/// the first two coordinates.
pub fn cluster_means(k: usize, dim: usize) -> Matrix {
    let mut means = Matrix::zeros(k, dim);
    if k <= dim + 1 {
        // e_1..e_{k-1} plus a*(1,..,1) is regular with edge sqrt(2) in R^{k-1}.
        let n = k - 1;
        let a = (1.0 - (k as f64).sqrt()) / n as f64;
        let mut verts = vec![vec![0.0; n]; k];
        for (i, v) in verts.iter_mut().enumerate().take(n) {
            v[i] = 1.0;
        }
        verts[n] = vec![a; n];
        let centroid: Vec<f64> = (0..n)
            .map(|j| verts.iter().map(|v| v[j]).sum::<f64>() / k as f64)
            .collect();
        let scale = SEPARATION / 2f64.sqrt();
        for (i, v) in verts.iter().enumerate() {
            for j in 0..n {
                means[(i, j)] = scale * (v[j] - centroid[j]);
            }
        }
    } else {
        let radius = SEPARATION / (2.0 * (std::f64::consts::PI / k as f64).sin());
        for i in 0..k {
            let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            means[(i, 0)] = radius * t.cos();
            means[(i, 1)] = radius * t.sin();
        }
    }
    means
}

/// Draws a balanced scene and a class-stratified labeled subset.
///
/// When `ceil(label_ratio * N) < K` exactly one point per class is
/// labeled and `effective_ratio` reports the realized fraction.
pub fn gen_synthetic(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    let SceneSpec {
        num_classes: k,
        num_points: n,
        dim,
        spread,
        label_ratio,
    } = *spec;
    if k < 2 {
        return Err(LabError::invalid("a scene needs at least 2 classes"));
    }
    if dim < 2 {
        return Err(LabError::invalid("a scene needs at least 2 input dimensions"));
    }
    if n < 10 * k {
        return Err(LabError::invalid(format!("{n} points is fewer than 10 per class")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(LabError::invalid(format!("spread must be >= 0, got {spread}")));
    }
    if !(label_ratio > 0.0 && label_ratio <= 1.0) {
        return Err(LabError::invalid(format!("label ratio {label_ratio} not in (0, 1]")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = cluster_means(k, dim);
    let sigma = spread * SEPARATION;

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut inputs = Matrix::zeros(n, dim);
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            inputs[(i, j)] = means[(y, j)] + sigma * z;
        }
    }

    let wanted = ((label_ratio * n as f64).ceil() as usize).clamp(k, n);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut labeled_mask = vec![false; n];
    for members in &by_class {
        let pick = members[rand::Rng::random_range(&mut rng, 0..members.len())];
        labeled_mask[pick] = true;
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !labeled_mask[i]).collect();
    rest.shuffle(&mut rng);
    for &i in rest.iter().take(wanted - k) {
        labeled_mask[i] = true;
    }

    Ok(SyntheticScene {
        inputs,
        labels,
        labeled_mask,
        num_classes: k,
        means,
        effective_ratio: wanted as f64 / n as f64,
    })
}
