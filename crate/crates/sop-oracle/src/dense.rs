//! Dense whole-data reference computations.
//!
//! Everything here goes through the n-by-n marginal covariance
//! `V = R + Z G Z'` and its residual projection
//! `P = V^-1 - V^-1 X (X' V^-1 X)^-1 X' V^-1`, with explicit inverses and no
//! reuse of the production solver's coefficient-system factorization. Slow
//! on purpose; meant for instances with n up to a few hundred.

use nalgebra::{DMatrix, DVector};
use sop_core::{MixedModelSpec, RandomBlock, VarianceState};

/// Covariance of one random block: the inverse of the atom combination,
/// assembled and inverted directly.
pub fn block_g(block: &RandomBlock, sigma2: &[f64]) -> DMatrix<f64> {
    let q = block.q();
    let mut g_inv = DMatrix::<f64>::zeros(q, q);
    for (l, atom) in block.atoms().iter().enumerate() {
        g_inv += atom / sigma2[l];
    }
    g_inv
        .lu()
        .try_inverse()
        .expect("block precision must be invertible")
}

/// Dense model pieces shared by the reference computations.
pub struct DenseModel {
    /// Marginal covariance of the working response, n by n.
    pub v: DMatrix<f64>,
    /// Its inverse.
    pub v_inv: DMatrix<f64>,
    /// Residual projection sweeping out the fixed effects.
    pub p: DMatrix<f64>,
    /// Per-block covariance matrices.
    pub g_blocks: Vec<DMatrix<f64>>,
    /// log det V and log det X' V^-1 X, for the restricted likelihood.
    pub log_det_v: f64,
    pub log_det_xvx: f64,
}

/// Build the dense pieces at a given state and weight vector.
pub fn dense_model(spec: &MixedModelSpec, state: &VarianceState, w: &DVector<f64>) -> DenseModel {
    let n = spec.n();
    let phi = state.phi;
    let g_blocks: Vec<DMatrix<f64>> = spec
        .blocks()
        .iter()
        .enumerate()
        .map(|(k, b)| block_g(b, state.block(k)))
        .collect();

    let mut v = DMatrix::<f64>::zeros(n, n);
    for (block, g) in spec.blocks().iter().zip(&g_blocks) {
        v += block.z() * g * block.z().transpose();
    }
    for i in 0..n {
        v[(i, i)] += phi / w[i];
    }
    let chol = nalgebra::Cholesky::new(v.clone()).expect("V must be positive definite");
    let log_det_v = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let v_inv = chol.inverse();

    let vx = &v_inv * spec.x();
    let xvx = spec.x().transpose() * &vx;
    let log_det_xvx = xvx.clone().lu().determinant().ln();
    let xvx_inv = xvx.try_inverse().expect("X' V^-1 X must be invertible");
    let p = &v_inv - &vx * (&xvx_inv * vx.transpose());

    DenseModel {
        v,
        v_inv,
        p,
        g_blocks,
        log_det_v,
        log_det_xvx,
    }
}

impl DenseModel {
    /// Generalized least squares fixed effects `(X'V^-1X)^-1 X'V^-1 z`.
    pub fn beta_hat(&self, spec: &MixedModelSpec, z: &DVector<f64>) -> DVector<f64> {
        let vx = &self.v_inv * spec.x();
        let xvx = spec.x().transpose() * &vx;
        xvx.lu().solve(&(vx.transpose() * z)).expect("GLS solve")
    }

    /// Random-effect predictions `G_k Z_k' P z`, one vector per block.
    pub fn alpha_hat(&self, spec: &MixedModelSpec, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let pz = &self.p * z;
        spec.blocks()
            .iter()
            .zip(&self.g_blocks)
            .map(|(block, g)| g * (block.z().transpose() * &pz))
            .collect()
    }

    /// Fitted working response from the closed-form estimates.
    pub fn fitted(&self, spec: &MixedModelSpec, z: &DVector<f64>) -> DVector<f64> {
        let beta = self.beta_hat(spec, z);
        let mut fit = spec.x() * beta;
        for (block, alpha) in spec.blocks().iter().zip(self.alpha_hat(spec, z)) {
            fit += block.z() * alpha;
        }
        fit
    }

    /// Whole-block trace `trace(Z_k G_k Z_k' P)`.
    pub fn block_ed_total(&self, spec: &MixedModelSpec, k: usize) -> f64 {
        let block = spec.block(k);
        let m = block.z() * &self.g_blocks[k] * block.z().transpose() * &self.p;
        m.trace()
    }

    /// Per-parameter effective dimension evaluated directly:
    /// `trace(Z_k' P Z_k G_k (Lambda_l / sigma2_l) G_k)`.
    pub fn direct_ed(
        &self,
        spec: &MixedModelSpec,
        state: &VarianceState,
        k: usize,
        l: usize,
    ) -> f64 {
        let block = spec.block(k);
        let g = &self.g_blocks[k];
        let zpz = block.z().transpose() * &self.p * block.z();
        let m = zpz * g * (block.atom(l) / state.block(k)[l]) * g;
        m.trace()
    }

    /// Minus twice the restricted log-likelihood in its marginal form,
    /// including the `(n - rank X) log 2 pi` constant.
    pub fn reml(&self, spec: &MixedModelSpec, z: &DVector<f64>) -> f64 {
        let quad = (z.transpose() * &self.p * z)[(0, 0)];
        let nr = (spec.n() - spec.rank_x()) as f64;
        self.log_det_v + self.log_det_xvx + quad + nr * (2.0 * std::f64::consts::PI).ln()
    }
}

/// The fixed-effect-adjusted weight matrix
/// `S = R^-1 - R^-1 X (X' R^-1 X)^-1 X' R^-1`.
pub fn s_matrix(spec: &MixedModelSpec, phi: f64, w: &DVector<f64>) -> DMatrix<f64> {
    let n = spec.n();
    let rinv_x = DMatrix::from_fn(n, spec.rank_x(), |i, j| spec.x()[(i, j)] * w[i] / phi);
    let xrx = spec.x().transpose() * &rinv_x;
    let xrx_inv = xrx.try_inverse().expect("X' R^-1 X must be invertible");
    let mut s = -(&rinv_x * (xrx_inv * rinv_x.transpose()));
    for i in 0..n {
        s[(i, i)] += w[i] / phi;
    }
    s
}

/// The matrix `T = (I + Z' S Z G)^-1` over all blocks jointly, plus the
/// blocks' index ranges for extracting diagonal blocks.
pub fn t_matrix(
    spec: &MixedModelSpec,
    state: &VarianceState,
    w: &DVector<f64>,
) -> (DMatrix<f64>, Vec<std::ops::Range<usize>>) {
    let n = spec.n();
    let q_total = spec.q_total();
    let mut zfull = DMatrix::<f64>::zeros(n, q_total);
    let mut g = DMatrix::<f64>::zeros(q_total, q_total);
    let mut ranges = Vec::with_capacity(spec.n_blocks());
    let mut at = 0;
    for (k, block) in spec.blocks().iter().enumerate() {
        let q = block.q();
        zfull.view_mut((0, at), (n, q)).copy_from(block.z());
        g.view_mut((at, at), (q, q))
            .copy_from(&block_g(block, state.block(k)));
        ranges.push(at..at + q);
        at += q;
    }
    let s = s_matrix(spec, state.phi, w);
    let t = (DMatrix::identity(q_total, q_total) + zfull.transpose() * s * zfull * g)
        .lu()
        .try_inverse()
        .expect("I + Z'SZG must be invertible");
    (t, ranges)
}
