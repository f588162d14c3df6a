//! Variance-parameter estimation: per-parameter effective dimensions, the
//! multiplicative update rules, dispersion estimates, restricted-likelihood
//! evaluation, and the two-level fitting loop.
//!
//! The central quantity is the effective dimension attached to each variance
//! parameter. Writing `C*` for the inverse of the coefficient matrix and
//! `C*_kk` for its block belonging to random block `k`, the parameter for
//! atom `l` of block `k` carries
//!
//! ```text
//! ED_{k_l} = trace((G_k - C*_kk) Lambda_{k_l}) / sigma2_{k_l}
//! ```
//!
//! and is updated by `sigma2_{k_l} <- alpha_k' Lambda_{k_l} alpha_k / ED_{k_l}`.
//! When every atom of a block is diagonal, only the diagonals of `G_k` and
//! `C*_kk` enter, which is what makes large adaptive models cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SopError};
use crate::family::{FamilyKind, Link};
use crate::henderson::{solve_with, CoefficientEstimates, CstarBlock, Layout, WorkingSystem};
use crate::model::{
    assemble_all_precisions, numeric_rank, working_response, BlockPrecision, MixedModelSpec,
    RandomBlock, VarianceState,
};

/// Updates landing below `VARIANCE_FLOOR_FACTOR * phi` are clamped there and
/// flagged instead of failing the fit.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-10;
/// An effective dimension at or below this is treated as a degenerate
/// component (a positivity condition is violated).
pub const DEGENERATE_ED_TOL: f64 = 1e-12;
/// Largest instance for which the dense-projection diagnostic will build the
/// full n-by-n matrices.
const DENSE_CHECK_MAX_N: usize = 200;

/// Effective dimensions per variance parameter and per block.
#[derive(Debug, Clone)]
pub struct EffectiveDims {
    pub per_atom: Vec<Vec<f64>>,
    pub per_block: Vec<f64>,
}

impl EffectiveDims {
    pub fn get(&self, block: usize, atom: usize) -> f64 {
        self.per_atom[block][atom]
    }

    /// Sum over every variance parameter (the random-effect part of the
    /// model's total effective dimension).
    pub fn random_total(&self) -> f64 {
        self.per_block.iter().sum()
    }
}

fn check_layout(spec: &MixedModelSpec, estimates: &CoefficientEstimates) -> Result<()> {
    if *estimates.layout() != Layout::of(spec) {
        return Err(SopError::DimensionMismatch(
            "coefficient estimates do not match this model's layout".into(),
        ));
    }
    Ok(())
}

pub(crate) fn compute_ed_with(
    spec: &MixedModelSpec,
    precisions: &[BlockPrecision],
    estimates: &CoefficientEstimates,
    state: &VarianceState,
) -> Result<EffectiveDims> {
    check_layout(spec, estimates)?;
    let mut per_atom = Vec::with_capacity(spec.n_blocks());
    let mut per_block = Vec::with_capacity(spec.n_blocks());
    for (k, block) in spec.blocks().iter().enumerate() {
        let bp = &precisions[k];
        let q = block.q();
        let mut eds = Vec::with_capacity(block.p());
        match estimates.cstar_block(k) {
            CstarBlock::Diagonal(cd) => {
                let gd = bp.g.diagonal();
                for (l, atom) in block.atoms().iter().enumerate() {
                    let s2 = state.block(k)[l];
                    let mut acc = 0.0;
                    for j in 0..q {
                        acc += (gd[j] - cd[j]) * atom[(j, j)];
                    }
                    eds.push(acc / s2);
                }
            }
            CstarBlock::Dense(cm) => {
                let diff = &bp.g - cm;
                for (l, atom) in block.atoms().iter().enumerate() {
                    let s2 = state.block(k)[l];
                    let mut acc = 0.0;
                    for j in 0..q {
                        for i in 0..q {
                            acc += diff[(i, j)] * atom[(i, j)];
                        }
                    }
                    eds.push(acc / s2);
                }
            }
        }
        per_block.push(eds.iter().sum());
        per_atom.push(eds);
    }
    Ok(EffectiveDims {
        per_atom,
        per_block,
    })
}

/// Effective dimensions at the given state and solved coefficients.
pub fn compute_ed(
    spec: &MixedModelSpec,
    state: &VarianceState,
    estimates: &CoefficientEstimates,
) -> Result<EffectiveDims> {
    let precisions = assemble_all_precisions(spec, state)?;
    compute_ed_with(spec, &precisions, estimates, state)
}

/// Result of one variance update: the new state (dispersion carried over
/// unchanged) and which parameters were clamped at the floor.
#[derive(Debug, Clone)]
pub struct VarianceUpdate {
    pub state: VarianceState,
    pub floored: Vec<(usize, usize)>,
}

fn atom_quadratic(block: &RandomBlock, l: usize, alpha: &DVector<f64>) -> f64 {
    let atom = block.atom(l);
    if block.atom_is_diagonal(l) {
        let mut acc = 0.0;
        for j in 0..block.q() {
            acc += atom[(j, j)] * alpha[j] * alpha[j];
        }
        acc
    } else {
        alpha.dot(&(atom * alpha))
    }
}

pub(crate) fn update_sigma_with(
    spec: &MixedModelSpec,
    state: &VarianceState,
    estimates: &CoefficientEstimates,
    eds: &EffectiveDims,
) -> Result<VarianceUpdate> {
    let floor = VARIANCE_FLOOR_FACTOR * state.phi;
    let mut sigma2 = Vec::with_capacity(spec.n_blocks());
    let mut floored = Vec::new();
    for (k, block) in spec.blocks().iter().enumerate() {
        let alpha = estimates.alpha_block(k).into_owned();
        let mut vals = Vec::with_capacity(block.p());
        for l in 0..block.p() {
            let ed = eds.get(k, l);
            if !ed.is_finite() {
                return Err(SopError::NonFinite(format!(
                    "effective dimension of ({k}, {l})"
                )));
            }
            if ed <= DEGENERATE_ED_TOL {
                return Err(SopError::DegenerateComponent {
                    block: k,
                    atom: l,
                    ed,
                    condition: format!(
                        "the columns of Z_{k} G_{k} {} must extend the fixed-effect \
                         column space for this update to stay positive",
                        block.label(l)
                    ),
                });
            }
            let num = atom_quadratic(block, l, &alpha);
            let mut new = num / ed;
            if !new.is_finite() {
                return Err(SopError::NonFinite(format!(
                    "variance update of ({k}, {l})"
                )));
            }
            if new < floor {
                new = floor;
                floored.push((k, l));
            }
            vals.push(new);
        }
        sigma2.push(vals);
    }
    Ok(VarianceUpdate {
        state: VarianceState {
            sigma2,
            phi: state.phi,
        },
        floored,
    })
}

/// One multiplicative update of every variance parameter,
/// `sigma2 <- alpha' Lambda alpha / ED`, with flooring at
/// `VARIANCE_FLOOR_FACTOR * phi`.
pub fn update_variances(
    spec: &MixedModelSpec,
    state: &VarianceState,
    estimates: &CoefficientEstimates,
) -> Result<VarianceUpdate> {
    let eds = compute_ed(spec, state, estimates)?;
    update_sigma_with(spec, state, estimates, &eds)
}

fn phi_from_residual(rss: f64, n: usize, r: usize, ed_total: f64) -> Result<f64> {
    let denom = n as f64 - r as f64 - ed_total;
    if denom <= 0.0 {
        return Err(SopError::OverparameterizedModel { denom });
    }
    let phi = rss / denom;
    if !phi.is_finite() || phi <= 0.0 {
        return Err(SopError::NonFinite("dispersion update".into()));
    }
    Ok(phi)
}

fn weighted_rss(
    spec: &MixedModelSpec,
    estimates: &CoefficientEstimates,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let resid = z - estimates.eta(spec);
    let rss = resid
        .iter()
        .zip(w.iter())
        .map(|(r, wi)| wi * r * r)
        .sum::<f64>();
    (resid, rss)
}

pub(crate) fn phi_update_with(
    spec: &MixedModelSpec,
    estimates: &CoefficientEstimates,
    eds: &EffectiveDims,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    let (_, rss) = weighted_rss(spec, estimates, z, w);
    phi_from_residual(rss, spec.n(), spec.rank_x(), eds.random_total())
}

/// Dispersion update `(z - z_hat)' W (z - z_hat) / (n - rank X - total ED)`.
pub fn phi_update(
    spec: &MixedModelSpec,
    state: &VarianceState,
    estimates: &CoefficientEstimates,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    if !spec.family().estimates_phi() {
        return Err(SopError::InvalidArgument(
            "dispersion is fixed for this family".into(),
        ));
    }
    let eds = compute_ed(spec, state, estimates)?;
    phi_update_with(spec, estimates, &eds, z, w)
}

/// The alternative dispersion estimate `z' W (z - z_hat) / (n - rank X)`.
/// At a converged fit it agrees with [`phi_update`] because the omitted
/// cross term equals the total effective dimension times the dispersion.
pub fn phi_update_uncorrected(
    spec: &MixedModelSpec,
    estimates: &CoefficientEstimates,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    check_layout(spec, estimates)?;
    let resid = z - estimates.eta(spec);
    let num = z
        .iter()
        .zip(resid.iter())
        .zip(w.iter())
        .map(|((zi, ri), wi)| wi * zi * ri)
        .sum::<f64>();
    let phi = num / (spec.n() - spec.rank_x()) as f64;
    if !phi.is_finite() {
        return Err(SopError::NonFinite("dispersion estimate".into()));
    }
    Ok(phi)
}

/// Minus twice the restricted log-likelihood of the working model at the
/// given state, computed through the coefficient-system factorization rather
/// than any n-by-n covariance. The additive constant is fixed at
/// `(n - rank X) log(2 pi)`, so only differences are meaningful.
pub fn reml_deviance(
    spec: &MixedModelSpec,
    state: &VarianceState,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    let precisions = assemble_all_precisions(spec, state)?;
    let ws = WorkingSystem::build(spec, z, w)?;
    let (_, pieces) = solve_with(spec, &ws, &precisions, state.phi)?;
    Ok(pieces.deviance(spec.rank_x()))
}

/// Iteration controls for [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Cap on variance-update iterations within one working-response cycle;
    /// exhausting it ends the fit with `converged = false`.
    pub max_inner: usize,
    /// Cap on working-response (scoring) cycles.
    pub max_outer: usize,
    /// Relative tolerance, used both for the deviance change in the inner
    /// loop and the sup-norm change of the linear predictor in the outer.
    pub tol: f64,
    /// Record the variance state ahead of every inner solve (diagnostic).
    pub track_states: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_inner: 200,
            max_outer: 100,
            tol: 1e-6,
            track_states: false,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(SopError::InvalidArgument(
                "iteration limits must be at least 1".into(),
            ));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(SopError::InvalidArgument(
                "tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A completed (or halted) fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimates: CoefficientEstimates,
    pub state: VarianceState,
    pub ed: EffectiveDims,
    /// Restricted deviance after every inner solve, across all outer cycles.
    pub deviance_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub fitted_mu: DVector<f64>,
    /// Variance parameters sitting at the floor in the final state.
    pub floored: Vec<(usize, usize)>,
    /// Variance states ahead of each inner solve; empty unless
    /// `FitOptions::track_states` was set.
    pub state_trace: Vec<VarianceState>,
}

impl FitResult {
    /// Total effective model dimension: fixed-effect rank plus the summed
    /// per-parameter effective dimensions.
    pub fn total_ed(&self, spec: &MixedModelSpec) -> f64 {
        spec.rank_x() as f64 + self.ed.random_total()
    }

    pub fn final_deviance(&self) -> f64 {
        *self
            .deviance_trace
            .last()
            .expect("a fit always records at least one deviance")
    }
}

/// Estimate all variance parameters, the dispersion (when the family leaves
/// it free), and the coefficients.
///
/// Structure: an outer scoring loop refreshes the working response and
/// weights at the current means; an inner loop alternates coefficient solves
/// with variance updates until the restricted deviance stabilizes. Models
/// with Gaussian response and identity link skip the outer refresh because
/// their working response is the data itself.
pub fn fit(spec: &MixedModelSpec, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let mut state = VarianceState::initial(spec);
    let direct_gaussian = spec.family().kind == FamilyKind::Gaussian
        && spec.family().link == Link::Identity;
    let max_outer = if direct_gaussian { 1 } else { options.max_outer };

    let mut mu = spec.initial_means()?;
    let mut eta_prev: Option<DVector<f64>> = None;
    let mut deviance_trace = Vec::new();
    let mut state_trace = Vec::new();
    let mut inner_total = 0usize;
    let mut outer_count = 0usize;
    let mut converged = false;

    let mut final_est;
    let mut final_eds;
    loop {
        outer_count += 1;
        let (z, w) = working_response(spec, &mu)?;
        let ws = WorkingSystem::build(spec, &z, &w)?;
        let mut prev_dev: Option<f64> = None;
        let mut inner_cycle = 0usize;
        let mut inner_converged = false;

        let (est, eds) = loop {
            let precisions = assemble_all_precisions(spec, &state)?;
            if options.track_states {
                state_trace.push(state.clone());
            }
            let (est, pieces) = solve_with(spec, &ws, &precisions, state.phi)?;
            let dev = pieces.deviance(spec.rank_x());
            deviance_trace.push(dev);
            inner_cycle += 1;
            inner_total += 1;
            log::trace!(
                "outer {outer_count} inner {inner_cycle}: restricted deviance {dev:.10e}"
            );

            if let Some(pd) = prev_dev {
                if dev > pd + 1e-6 * (1.0 + pd.abs()) {
                    log::warn!(
                        "restricted deviance rose from {pd:.10e} to {dev:.10e}; \
                         the monotone decrease is observed, not guaranteed"
                    );
                }
                if (pd - dev).abs() <= options.tol * (1.0 + dev.abs()) {
                    inner_converged = true;
                    let eds = compute_ed_with(spec, &precisions, &est, &state)?;
                    break (est, eds);
                }
            }
            if inner_cycle >= options.max_inner {
                let eds = compute_ed_with(spec, &precisions, &est, &state)?;
                break (est, eds);
            }

            let eds = compute_ed_with(spec, &precisions, &est, &state)?;
            let update = update_sigma_with(spec, &state, &est, &eds)?;
            state = update.state;
            if spec.family().estimates_phi() {
                state.phi = phi_update_with(spec, &est, &eds, &z, &w)?;
            }
            prev_dev = Some(dev);
        };

        let eta = est.eta(spec);
        final_est = est;
        final_eds = eds;

        if direct_gaussian {
            let mut fitted = eta;
            if let Some(o) = spec.offset() {
                fitted += o;
            }
            mu = fitted;
            converged = inner_converged;
            break;
        }

        if !inner_converged {
            mu = spec.mean_from_eta(&eta)?;
            break;
        }
        let eta_settled = eta_prev
            .as_ref()
            .map(|prev| {
                (0..eta.len())
                    .map(|i| (eta[i] - prev[i]).abs())
                    .fold(0.0f64, f64::max)
                    < options.tol
            })
            .unwrap_or(false);
        mu = spec.mean_from_eta(&eta)?;
        eta_prev = Some(eta);
        if eta_settled {
            converged = true;
            break;
        }
        if outer_count >= max_outer {
            break;
        }
        log::info!(
            "outer cycle {outer_count} done: deviance {:.6e}, refreshing working response",
            deviance_trace.last().unwrap()
        );
    }

    let floor = VARIANCE_FLOOR_FACTOR * state.phi;
    let floored = state
        .sigma2
        .iter()
        .enumerate()
        .flat_map(|(k, vals)| {
            vals.iter()
                .enumerate()
                .filter(move |(_, &v)| v <= floor * (1.0 + 1e-7))
                .map(move |(l, _)| (k, l))
        })
        .collect();

    Ok(FitResult {
        estimates: final_est,
        state,
        ed: final_eds,
        deviance_trace,
        outer_iterations: outer_count,
        inner_iterations: inner_total,
        converged,
        fitted_mu: mu,
        floored,
        state_trace,
    })
}

/// Upper bounds on the effective dimensions: per parameter
/// `rank(X, Z_k G_k Lambda_{k_l}) - rank(X)`, per block
/// `rank(X, Z_k) - rank(X)`.
#[derive(Debug, Clone)]
pub struct EdBounds {
    pub per_atom: Vec<Vec<f64>>,
    pub per_block: Vec<f64>,
}

pub fn ed_upper_bounds(spec: &MixedModelSpec, state: &VarianceState) -> Result<EdBounds> {
    let precisions = assemble_all_precisions(spec, state)?;
    let rank_x = numeric_rank(spec.x());
    let mut per_atom = Vec::with_capacity(spec.n_blocks());
    let mut per_block = Vec::with_capacity(spec.n_blocks());
    for (k, block) in spec.blocks().iter().enumerate() {
        let bp = &precisions[k];
        let aug = augment(spec.x(), block.z());
        per_block.push((numeric_rank(&aug) - rank_x) as f64);
        let mut bounds = Vec::with_capacity(block.p());
        for (l, atom) in block.atoms().iter().enumerate() {
            let weighted = if bp.diagonal && block.atom_is_diagonal(l) {
                // Columns of Z scaled by the diagonal of G Lambda; zero
                // entries drop the column entirely.
                let gd = bp.g.diagonal();
                let cols: Vec<DVector<f64>> = (0..block.q())
                    .filter(|&j| atom[(j, j)] != 0.0)
                    .map(|j| block.z().column(j) * (gd[j] * atom[(j, j)]))
                    .collect();
                DMatrix::from_columns(&cols)
            } else {
                let gl = &bp.g * atom;
                let keep: Vec<usize> = (0..block.q())
                    .filter(|&j| gl.column(j).amax() > 0.0)
                    .collect();
                let cols: Vec<DVector<f64>> = keep
                    .iter()
                    .map(|&j| block.z() * gl.column(j))
                    .collect();
                DMatrix::from_columns(&cols)
            };
            let aug = augment(spec.x(), &weighted);
            bounds.push((numeric_rank(&aug) - rank_x) as f64);
        }
        per_atom.push(bounds);
    }
    Ok(EdBounds {
        per_atom,
        per_block,
    })
}

fn augment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// Diagnostic check of the block identity `Z_k' P Z_k G_k = I - T_kk`, where
/// `P` is the residual projection of the whole-data covariance and `T` is
/// built from the fixed-effect-adjusted weight matrix. Returns the largest
/// absolute residual over blocks. Builds dense n-by-n matrices, so it is
/// restricted to small instances.
pub fn t_identity_check(
    spec: &MixedModelSpec,
    state: &VarianceState,
    estimates: &CoefficientEstimates,
) -> Result<f64> {
    let n = spec.n();
    if n > DENSE_CHECK_MAX_N {
        return Err(SopError::InvalidArgument(format!(
            "dense identity check is limited to n <= {DENSE_CHECK_MAX_N}, got {n}"
        )));
    }
    check_layout(spec, estimates)?;
    state.validate(spec)?;
    let w = if spec.family().kind == FamilyKind::Gaussian
        && spec.family().link == Link::Identity
    {
        DVector::from_element(n, 1.0)
    } else {
        let mu = spec.mean_from_eta(&estimates.eta(spec))?;
        working_response(spec, &mu)?.1
    };
    let phi = state.phi;
    let precisions = assemble_all_precisions(spec, state)?;

    let q_total = spec.q_total();
    let mut zfull = DMatrix::<f64>::zeros(n, q_total);
    let mut g = DMatrix::<f64>::zeros(q_total, q_total);
    let mut at = 0;
    for (block, bp) in spec.blocks().iter().zip(&precisions) {
        let q = block.q();
        zfull.view_mut((0, at), (n, q)).copy_from(block.z());
        g.view_mut((at, at), (q, q)).copy_from(&bp.g);
        at += q;
    }

    // S: the weight matrix with the fixed effects swept out.
    let rinv_x = DMatrix::from_fn(n, spec.rank_x(), |i, j| spec.x()[(i, j)] * w[i] / phi);
    let xrx = spec.x().transpose() * &rinv_x;
    let xrx_inv = xrx
        .try_inverse()
        .ok_or_else(|| SopError::SingularSystem {
            context: "X' R^-1 X is singular".into(),
        })?;
    let mut s = &rinv_x * (xrx_inv * rinv_x.transpose());
    s.neg_mut();
    for i in 0..n {
        s[(i, i)] += w[i] / phi;
    }
    let t = (DMatrix::identity(q_total, q_total)
        + zfull.transpose() * &s * &zfull * &g)
        .lu()
        .try_inverse()
        .ok_or_else(|| SopError::SingularSystem {
            context: "I + Z' S Z G is singular".into(),
        })?;

    // P: residual projection of V = R + Z G Z'.
    let mut v = &zfull * &g * zfull.transpose();
    for i in 0..n {
        v[(i, i)] += phi / w[i];
    }
    let v_inv = nalgebra::Cholesky::new(v)
        .ok_or_else(|| SopError::SingularSystem {
            context: "whole-data covariance is not positive definite".into(),
        })?
        .inverse();
    let vx = &v_inv * spec.x();
    let xvx_inv = (spec.x().transpose() * &vx)
        .try_inverse()
        .ok_or_else(|| SopError::SingularSystem {
            context: "X' V^-1 X is singular".into(),
        })?;
    let p = &v_inv - &vx * (xvx_inv * vx.transpose());

    let mut worst = 0.0f64;
    let mut at = 0;
    for (block, bp) in spec.blocks().iter().zip(&precisions) {
        let q = block.q();
        let lhs = block.z().transpose() * &p * block.z() * &bp.g;
        let tkk = t.view((at, at), (q, q));
        let mut resid = -tkk.into_owned();
        for j in 0..q {
            resid[(j, j)] += 1.0;
        }
        resid -= &lhs;
        worst = worst.max(resid.iter().fold(0.0f64, |a, x| a.max(x.abs())));
        at += q;
    }
    Ok(worst)
}
