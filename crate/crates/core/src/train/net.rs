//! A pointwise segmentation network with a shared two-layer tanh backbone,
//! a linear segmentation head and a two-layer projection head, with
//! hand-written reverse-mode gradients.

use rand::Rng;

use crate::linalg::{axpy, Matrix};

pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub input_dim: usize,
    pub num_classes: usize,
    pub proj_dim: usize,
}

/// Weights are stored `out x in`; a layer computes `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNetParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub seg_w: Matrix,
    pub seg_b: Vec<f64>,
    pub proj_w1: Matrix,
    pub proj_b1: Vec<f64>,
    pub proj_w2: Matrix,
    pub proj_b2: Vec<f64>,
}

/// Names of the parameter tensors, in [`SegNetParams::tensors`] order.
pub const TENSOR_NAMES: [&str; 10] = [
    "w1", "b1", "w2", "b2", "seg_w", "seg_b", "proj_w1", "proj_b1", "proj_w2", "proj_b2",
];

impl SegNetParams {
    pub fn zeros(shape: NetShape) -> Self {
        let NetShape {
            input_dim: d,
            num_classes: k,
            proj_dim: p,
        } = shape;
        SegNetParams {
            w1: Matrix::zeros(HIDDEN, d),
            b1: vec![0.0; HIDDEN],
            w2: Matrix::zeros(HIDDEN, HIDDEN),
            b2: vec![0.0; HIDDEN],
            seg_w: Matrix::zeros(k, HIDDEN),
            seg_b: vec![0.0; k],
            proj_w1: Matrix::zeros(HIDDEN, HIDDEN),
            proj_b1: vec![0.0; HIDDEN],
            proj_w2: Matrix::zeros(p, HIDDEN),
            proj_b2: vec![0.0; p],
        }
    }

    /// `N(0, 1/fan_in)` weights and zero biases.
    pub fn random<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let mut p = SegNetParams::zeros(shape);
        let init = |m: &mut Matrix, rng: &mut R| {
            *m = Matrix::random_normal(m.rows(), m.cols(), 1.0 / (m.cols() as f64).sqrt(), rng);
        };
        init(&mut p.w1, rng);
        init(&mut p.w2, rng);
        init(&mut p.seg_w, rng);
        init(&mut p.proj_w1, rng);
        init(&mut p.proj_w2, rng);
        p
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            input_dim: self.w1.cols(),
            num_classes: self.seg_w.rows(),
            proj_dim: self.proj_w2.rows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        SegNetParams::zeros(self.shape())
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.seg_w.as_slice(),
            &self.seg_b,
            self.proj_w1.as_slice(),
            &self.proj_b1,
            self.proj_w2.as_slice(),
            &self.proj_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.seg_w.as_mut_slice(),
            &mut self.seg_b,
            self.proj_w1.as_mut_slice(),
            &mut self.proj_b1,
            self.proj_w2.as_mut_slice(),
            &mut self.proj_b2,
        ]
    }

    /// `self += scale * other`.
    pub fn scaled_add(&mut self, scale: f64, other: &SegNetParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(scale, src, dst);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations kept for the backward pass.
pub(crate) struct ForwardCache {
    inputs: Matrix,
    h1: Matrix,
    h2: Matrix,
    u: Matrix,
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = x.matmul_t(w);
    for i in 0..out.rows() {
        axpy(1.0, b, out.row_mut(i));
    }
    out
}

fn tanh_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
}

pub(crate) fn forward_cached(params: &SegNetParams, inputs: &Matrix) -> (Matrix, Matrix, ForwardCache) {
    let mut h1 = affine(inputs, &params.w1, &params.b1);
    tanh_in_place(&mut h1);
    let mut h2 = affine(&h1, &params.w2, &params.b2);
    tanh_in_place(&mut h2);
    let scores = affine(&h2, &params.seg_w, &params.seg_b);
    let mut u = affine(&h2, &params.proj_w1, &params.proj_b1);
    tanh_in_place(&mut u);
    let proj = affine(&u, &params.proj_w2, &params.proj_b2);
    (
        scores,
        proj,
        ForwardCache {
            inputs: inputs.clone(),
            h1,
            h2,
            u,
        },
    )
}

/// Class scores (`N x K`) and projection features (`N x d`) per point.
pub fn forward(params: &SegNetParams, inputs: &Matrix) -> (Matrix, Matrix) {
    let (scores, proj, _) = forward_cached(params, inputs);
    (scores, proj)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        axpy(1.0, m.row(i), &mut out);
    }
    out
}

/// Through `tanh`: `d pre = d post * (1 - post^2)`.
fn tanh_backward(grad_post: &mut Matrix, post: &Matrix) {
    for (g, y) in grad_post.as_mut_slice().iter_mut().zip(post.as_slice()) {
        *g *= 1.0 - y * y;
    }
}

/// Accumulates parameter gradients for upstream gradients on the scores
/// and the projection features.
pub(crate) fn backward(
    params: &SegNetParams,
    cache: &ForwardCache,
    grad_scores: &Matrix,
    grad_proj: &Matrix,
    grads: &mut SegNetParams,
) {
    // Heads.
    grads.seg_w.add_assign(&grad_scores.t_matmul(&cache.h2));
    axpy(1.0, &column_sums(grad_scores), &mut grads.seg_b);
    grads.proj_w2.add_assign(&grad_proj.t_matmul(&cache.u));
    axpy(1.0, &column_sums(grad_proj), &mut grads.proj_b2);

    let mut grad_u = grad_proj.matmul(&params.proj_w2);
    tanh_backward(&mut grad_u, &cache.u);
    grads.proj_w1.add_assign(&grad_u.t_matmul(&cache.h2));
    axpy(1.0, &column_sums(&grad_u), &mut grads.proj_b1);

    // Backbone.
    let mut grad_h2 = grad_scores.matmul(&params.seg_w);
    grad_h2.add_assign(&grad_u.matmul(&params.proj_w1));
    tanh_backward(&mut grad_h2, &cache.h2);
    grads.w2.add_assign(&grad_h2.t_matmul(&cache.h1));
    axpy(1.0, &column_sums(&grad_h2), &mut grads.b2);

    let mut grad_h1 = grad_h2.matmul(&params.w2);
    tanh_backward(&mut grad_h1, &cache.h1);
    grads.w1.add_assign(&grad_h1.t_matmul(&cache.inputs));
    axpy(1.0, &column_sums(&grad_h1), &mut grads.b1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: NetShape = NetShape {
        input_dim: 3,
        num_classes: 4,
        proj_dim: 8,
    };

    #[test]
    fn zero_weights_give_zero_scores() {
        let p = SegNetParams::zeros(SHAPE);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]);
        let (s, f) = forward(&p, &x);
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_outputs_do_not_depend_on_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SegNetParams::random(SHAPE, &mut rng);
        let x = Matrix::random_normal(5, 3, 1.0, &mut rng);
        let (s1, f1) = forward(&p, &x);
        let (s2, f2) = forward(&p, &x.stack(&x));
        for i in 0..5 {
            assert_eq!(s1.row(i), s2.row(i));
            assert_eq!(s1.row(i), s2.row(i + 5));
            assert_eq!(f1.row(i), f2.row(i + 5));
        }
    }

    #[test]
    fn outputs_are_finite_under_fuzzing() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SegNetParams::random(SHAPE, &mut rng);
            let scale = rng.random_range(0.1..100.0);
            let x = Matrix::random_normal(7, 3, scale, &mut rng);
            let (s, f) = forward(&p, &x);
            assert!(s.is_finite() && f.is_finite(), "seed {seed}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = SegNetParams::random(SHAPE, &mut rng);
        let x = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let ws = Matrix::random_normal(4, 4, 1.0, &mut rng);
        let wp = Matrix::random_normal(4, 8, 1.0, &mut rng);
        let objective = |p: &SegNetParams| {
            let (s, f) = forward(p, &x);
            crate::linalg::dot(s.as_slice(), ws.as_slice()) + crate::linalg::dot(f.as_slice(), wp.as_slice())
        };
        let (_, _, cache) = forward_cached(&params, &x);
        let mut grads = params.zeros_like();
        backward(&params, &cache, &ws, &wp, &mut grads);
        let h = 1e-6;
        for (t, name) in TENSOR_NAMES.iter().enumerate() {
            for e in 0..params.tensors()[t].len() {
                let mut plus = params.clone();
                plus.tensors_mut()[t][e] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[t][e] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = grads.tensors()[t][e];
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{name} [{e}]");
            }
        }
    }
}
