//! Probability-vector kernels: softmax, entropies and the divergences
//! compared by the loss family.
//!
//! All logarithms are natural. Arguments of `log` on the `q` side of a
//! divergence are clamped to [`LOG_FLOOR`]; the `p log p` terms of an
//! entropy use the `0 log 0 = 0` convention instead.

use crate::error::{LabError, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Inputs whose sum deviates from one by less than this are renormalized.
pub const NORMALIZE_TOLERANCE: f64 = 1e-6;

/// A discrete distribution over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates and (if slightly off) renormalizes `values`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(LabError::invalid(format!(
                "a distribution needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::invalid(format!(
                "entry {i} = {} is not a probability",
                values[i]
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() >= NORMALIZE_TOLERANCE {
            return Err(LabError::invalid(format!("entries sum to {sum}, not 1")));
        }
        if sum == 1.0 {
            return Ok(ProbVector(values));
        }
        Ok(ProbVector(values.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(LabError::invalid("a distribution needs at least 2 classes"));
        }
        Ok(ProbVector(vec![1.0 / k as f64; k]))
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if k < 2 {
            return Err(LabError::invalid("a distribution needs at least 2 classes"));
        }
        if class >= k {
            return Err(LabError::IndexOutOfRange { index: class, len: k });
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Ok(ProbVector(v))
    }

    /// A distribution with mass `1 - rest` on `class` and `rest` spread
    /// evenly over the other classes.
    pub fn near_one_hot(k: usize, class: usize, rest: f64) -> Result<Self> {
        if class >= k {
            return Err(LabError::IndexOutOfRange { index: class, len: k });
        }
        if !(0.0..1.0).contains(&rest) {
            return Err(LabError::invalid(format!("residual mass {rest} not in [0, 1)")));
        }
        let mut v = vec![rest / (k - 1) as f64; k];
        v[class] = 1.0 - rest;
        ProbVector::new(v)
    }

    /// Wraps values already known to form a distribution.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.len() >= 2);
        ProbVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Per-class natural logs with the zero floor applied.
    pub fn log_clamped(&self) -> Vec<f64> {
        self.0.iter().map(|&v| clamped_ln(v)).collect()
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Unnormalized class scores (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(LabError::invalid("empty score vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::invalid(format!("score {i} is not finite")));
        }
        Ok(ScoreVector(values))
    }

    /// Log-probabilities as scores, so that `softmax(from_probs(p)) == p`
    /// up to rounding. Zero entries map to `ln(LOG_FLOOR)`.
    pub fn from_probs(p: &ProbVector) -> Self {
        ScoreVector(p.log_clamped())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for ScoreVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub(crate) fn clamped_ln(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// Max-shifted softmax written into `out`.
pub(crate) fn softmax_into(s: &[f64], out: &mut [f64]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(s) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn softmax_vec(s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    softmax_into(s, &mut out);
    out
}

/// Numerically stable softmax.
pub fn softmax(s: &ScoreVector) -> ProbVector {
    ProbVector::from_raw(softmax_vec(&s.0))
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    p.iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum()
}

pub(crate) fn cross_entropy_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { -pi * clamped_ln(qi) })
        .sum()
}

/// Shannon entropy `H(p)` in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_raw(&p.0)
}

/// Cross-entropy `H(p, q) = -sum p_i ln q_i`.
pub fn cross_entropy(p: &ProbVector, q: &ProbVector) -> f64 {
    assert_eq!(p.len(), q.len(), "class count mismatch");
    cross_entropy_raw(&p.0, &q.0)
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    (cross_entropy_raw(p, q) - entropy_raw(p)).max(0.0)
}

/// `KL(p || q) = H(p, q) - H(p)`.
pub fn kl(p: &ProbVector, q: &ProbVector) -> f64 {
    assert_eq!(p.len(), q.len(), "class count mismatch");
    kl_raw(&p.0, &q.0)
}

pub(crate) fn js_raw(p: &[f64], q: &[f64]) -> f64 {
    let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (entropy_raw(&mid) - 0.5 * (entropy_raw(p) + entropy_raw(q))).max(0.0)
}

/// Jensen-Shannon divergence `H((p+q)/2) - H(p)/2 - H(q)/2`.
pub fn js(p: &ProbVector, q: &ProbVector) -> f64 {
    assert_eq!(p.len(), q.len(), "class count mismatch");
    js_raw(&p.0, &q.0)
}

pub(crate) fn mse_raw(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Half squared Euclidean distance.
pub fn mse(p: &ProbVector, q: &ProbVector) -> f64 {
    assert_eq!(p.len(), q.len(), "class count mismatch");
    mse_raw(&p.0, &q.0)
}

/// `J[i][j] = d p_j / d s_i = 1(i=j) p_i - p_i p_j`.
pub fn softmax_jacobian(s: &ScoreVector) -> Vec<Vec<f64>> {
    let p = softmax_vec(&s.0);
    let k = p.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { p[i] - p[i] * p[j] } else { -p[i] * p[j] })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_prob(rng: &mut ChaCha8Rng, k: usize) -> ProbVector {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        ProbVector::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
    }

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&ScoreVector::new(vec![0.0, 0.0]).unwrap());
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let p = softmax(&ScoreVector::new(vec![1000.0, 0.0]).unwrap());
        assert!((p.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!(p.as_slice()[1] >= 0.0 && p.as_slice()[1] < 1e-300);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let s: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..20.0)).collect();
            let p = softmax(&ScoreVector::new(s).unwrap());
            let total: f64 = p.as_slice().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_reject_non_finite() {
        assert!(ScoreVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(ScoreVector::new(vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        let p = ProbVector::new(vec![0.5 + 4e-7, 0.5]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        let u = ProbVector::uniform(4).unwrap();
        assert!((entropy(&u) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&ProbVector::one_hot(3, 1).unwrap()), 0.0);
        let h = entropy(&pv(&[0.9, 0.1]));
        let direct = -0.9 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
        assert!((h - direct).abs() < 1e-15);
        assert!((h - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_examples() {
        let q = pv(&[0.2, 0.5, 0.3]);
        let p = ProbVector::one_hot(3, 1).unwrap();
        assert_eq!(cross_entropy(&p, &q), -(0.5f64.ln()));

        let p = pv(&[0.3, 0.3, 0.4]);
        assert!((cross_entropy(&p, &p) - entropy(&p)).abs() < 1e-15);

        let ce = cross_entropy(&pv(&[0.5, 0.5]), &pv(&[0.9, 0.1]));
        assert!((ce - (-0.5 * (0.9f64.ln() + 0.1f64.ln()))).abs() < 1e-15);
        assert!((ce - 1.203973).abs() < 1e-6);
    }

    #[test]
    fn divergence_examples() {
        let p = pv(&[0.2, 0.8]);
        assert_eq!(kl(&p, &p), 0.0);
        assert_eq!(js(&p, &p), 0.0);
        assert_eq!(mse(&p, &p), 0.0);

        let kl_val = kl(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5]));
        assert!((kl_val - 2f64.ln()).abs() < 1e-15);

        let js_val = js(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]));
        assert!((js_val - 2f64.ln()).abs() < 1e-15);

        assert_eq!(mse(&pv(&[0.5, 0.5]), &pv(&[1.0, 0.0])), 0.25);
        assert_eq!(mse(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_prob(&mut rng, 6);
            let q = random_prob(&mut rng, 6);
            assert!((kl(&p, &q) - (cross_entropy(&p, &q) - entropy(&p))).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_examples() {
        let j = softmax_jacobian(&ScoreVector::new(vec![0.0, 0.0]).unwrap());
        assert_eq!(j, vec![vec![0.25, -0.25], vec![-0.25, 0.25]]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-6;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(2..=7);
            let s: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let jac = softmax_jacobian(&ScoreVector::new(s.clone()).unwrap());
            for i in 0..k {
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus[i] += h;
                minus[i] -= h;
                let (pp, pm) = (softmax_vec(&plus), softmax_vec(&minus));
                for j in 0..k {
                    let fd = (pp[j] - pm[j]) / (2.0 * h);
                    assert!((fd - jac[i][j]).abs() < 1e-8, "seed {seed} ({i},{j})");
                }
            }
            for (r, jr) in jac.iter().enumerate() {
                let row: f64 = jr.iter().sum();
                let col: f64 = (0..k).map(|c| jac[c][r]).sum();
                assert!(row.abs() < 1e-12 && col.abs() < 1e-12);
            }
        }
    }

    fn prob_strategy() -> impl Strategy<Value = ProbVector> {
        (2usize..=10)
            .prop_flat_map(|k| prop::collection::vec(0.0f64..1.0, k))
            .prop_filter("non-zero mass", |v| v.iter().sum::<f64>() > 1e-3)
            .prop_map(|v| {
                let s: f64 = v.iter().sum();
                ProbVector::new(v.into_iter().map(|x| x / s).collect()).unwrap()
            })
    }

    fn pair_strategy() -> impl Strategy<Value = (ProbVector, ProbVector)> {
        (2usize..=10).prop_flat_map(|k| {
            let v = prop::collection::vec(0.001f64..1.0, k);
            (v.clone(), v).prop_map(|(a, b)| {
                let norm = |v: Vec<f64>| {
                    let s: f64 = v.iter().sum();
                    ProbVector::new(v.into_iter().map(|x| x / s).collect()).unwrap()
                };
                (norm(a), norm(b))
            })
        })
    }

    proptest! {
        #[test]
        fn entropy_bounds(p in prob_strategy()) {
            let h = entropy(&p);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn divergence_identities((p, q) in pair_strategy()) {
            let k = kl(&p, &q);
            prop_assert!(k >= 0.0);
            prop_assert!((cross_entropy(&p, &q) - entropy(&p) - k).abs() < 1e-12);
            if p.as_slice().iter().zip(q.as_slice()).any(|(a, b)| (a - b).abs() >= 1e-9) {
                prop_assert!(k > 0.0);
            }
            prop_assert_eq!(js(&p, &q), js(&q, &p));
            let j = js(&p, &q);
            prop_assert!((0.0..=2f64.ln() + 1e-15).contains(&j));
            prop_assert!(mse(&p, &q) >= 0.0);
        }

        #[test]
        fn softmax_shift_invariant(
            s in prop::collection::vec(-30.0f64..30.0, 2..10),
            c in -100.0f64..100.0,
        ) {
            let a = softmax_vec(&s);
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let b = softmax_vec(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
