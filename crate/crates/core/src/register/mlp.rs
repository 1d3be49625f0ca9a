//! Small fully-connected tanh network with hand-written backpropagation.
//!
//! Parameters live in one flat vector so the optimizer and finite-difference
//! checks can treat them uniformly. Batches are row-per-sample matrices.

use nalgebra::{DMatrix, DMatrixView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::Vec3;

pub const HIDDEN: usize = 64;
/// Encoded input width: `[p, sin(f p), cos(f p)]` for a 3-vector `p`.
pub const ENCODED: usize = 9;

/// Sinusoidal encoding at frequency `2^level * π`.
pub fn encode(p: &Vec3, level: usize) -> [f64; ENCODED] {
    let f = (1u64 << level) as f64 * std::f64::consts::PI;
    let mut out = [0.0; ENCODED];
    for a in 0..3 {
        let (s, c) = (f * p[a]).sin_cos();
        out[a] = p[a];
        out[3 + a] = s;
        out[6 + a] = c;
    }
    out
}

/// `ENCODED → HIDDEN → HIDDEN → outputs`, tanh on both hidden layers,
/// linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    outputs: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
}

struct Layout {
    a1: usize,
    b1: usize,
    a2: usize,
    b2: usize,
    a3: usize,
    b3: usize,
    len: usize,
}

fn layout(outputs: usize) -> Layout {
    let a1 = 0;
    let b1 = a1 + ENCODED * HIDDEN;
    let a2 = b1 + HIDDEN;
    let b2 = a2 + HIDDEN * HIDDEN;
    let a3 = b2 + HIDDEN;
    let b3 = a3 + HIDDEN * outputs;
    Layout { a1, b1, a2, b2, a3, b3, len: b3 + outputs }
}

fn add_bias(m: &mut DMatrix<f64>, b: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[j]);
    }
}

fn column_sums(m: &DMatrix<f64>, out: &mut [f64]) {
    for (j, col) in m.column_iter().enumerate() {
        out[j] = col.sum();
    }
}

impl Mlp {
    /// All parameters drawn from `N(0, std²)`.
    pub fn new(outputs: usize, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        let params = (0..layout(outputs).len).map(|_| normal.sample(&mut rng)).collect();
        Mlp { outputs, params }
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn view(&self, offset: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[offset..offset + rows * cols], rows, cols)
    }

    /// Row-per-sample input matrix from encoded features.
    pub fn input_matrix(rows: &[[f64; ENCODED]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), ENCODED, |i, j| rows[i][j])
    }

    /// Outputs (`n × outputs`) and the cache needed by [`Mlp::backward`].
    pub fn forward(&self, input: DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let l = layout(self.outputs);
        let mut h1 = &input * self.view(l.a1, ENCODED, HIDDEN);
        add_bias(&mut h1, &self.params[l.b1..l.a2]);
        h1.apply(|v| *v = v.tanh());
        let mut h2 = &h1 * self.view(l.a2, HIDDEN, HIDDEN);
        add_bias(&mut h2, &self.params[l.b2..l.a3]);
        h2.apply(|v| *v = v.tanh());
        let mut out = &h2 * self.view(l.a3, HIDDEN, self.outputs);
        add_bias(&mut out, &self.params[l.b3..l.len]);
        (out, MlpCache { input, h1, h2 })
    }

    /// Parameter gradient given `d_out = ∂L/∂outputs` (`n × outputs`).
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> Vec<f64> {
        let l = layout(self.outputs);
        let mut grad = vec![0.0; l.len];
        let d_a3 = cache.h2.tr_mul(d_out);
        grad[l.a3..l.b3].copy_from_slice(d_a3.as_slice());
        column_sums(d_out, &mut grad[l.b3..l.len]);

        let mut dz2 = d_out * self.view(l.a3, HIDDEN, self.outputs).transpose();
        dz2.zip_apply(&cache.h2, |d, h| *d *= 1.0 - h * h);
        let d_a2 = cache.h1.tr_mul(&dz2);
        grad[l.a2..l.b2].copy_from_slice(d_a2.as_slice());
        column_sums(&dz2, &mut grad[l.b2..l.a3]);

        let mut dz1 = &dz2 * self.view(l.a2, HIDDEN, HIDDEN).transpose();
        dz1.zip_apply(&cache.h1, |d, h| *d *= 1.0 - h * h);
        let d_a1 = cache.input.tr_mul(&dz1);
        grad[l.a1..l.b1].copy_from_slice(d_a1.as_slice());
        column_sums(&dz1, &mut grad[l.b1..l.a2]);
        grad
    }
}
