//! Assembly and solution of the mixed-model coefficient equations.
//!
//! With working response `z`, weights `W`, residual covariance `R = phi W^-1`
//! and random-effect covariance `G`, the joint estimates of the fixed and
//! random coefficients solve
//!
//! ```text
//! [ X'R^-1 X          X'R^-1 Z        ] [beta ]   [ X'R^-1 z ]
//! [ Z'R^-1 X          Z'R^-1 Z + G^-1 ] [alpha] = [ Z'R^-1 z ]
//! ```
//!
//! The weighted cross-products are cached once per working response, so each
//! variance iteration only rescales them by `1/phi`, adds the block
//! precisions and factors the result. One Cholesky factorization per
//! iteration also yields the blocks of the inverse coefficient matrix needed
//! by the effective-dimension updates: for a block whose atoms are all
//! diagonal only the diagonal of that inverse block is formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SopError};
use crate::model::{
    assemble_all_precisions, BlockPrecision, MixedModelSpec, VarianceState,
};

/// Positions of the coefficient groups inside the stacked solution vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    r: usize,
    starts: Vec<usize>,
    sizes: Vec<usize>,
    dim: usize,
}

impl Layout {
    pub fn of(spec: &MixedModelSpec) -> Self {
        let r = spec.rank_x();
        let mut starts = Vec::with_capacity(spec.n_blocks());
        let mut sizes = Vec::with_capacity(spec.n_blocks());
        let mut at = r;
        for block in spec.blocks() {
            starts.push(at);
            sizes.push(block.q());
            at += block.q();
        }
        Layout {
            r,
            starts,
            sizes,
            dim: at,
        }
    }

    /// Columns of the fixed effects.
    pub fn r(&self) -> usize {
        self.r
    }

    /// Total stacked dimension r + q.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_blocks(&self) -> usize {
        self.starts.len()
    }

    /// Absolute index range of block `k` inside the stacked vector.
    pub fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        self.starts[k]..self.starts[k] + self.sizes[k]
    }

    /// Index range of block `k` inside the concatenated alpha vector.
    pub fn alpha_range(&self, k: usize) -> std::ops::Range<usize> {
        self.starts[k] - self.r..self.starts[k] - self.r + self.sizes[k]
    }
}

/// Weighted cross-products of the stacked design `[X Z]`, cached per working
/// response.
#[derive(Debug, Clone)]
pub struct WorkingSystem {
    cross: DMatrix<f64>,
    rhs: DVector<f64>,
    zwz: f64,
    log_w_sum: f64,
    n: usize,
    layout: Layout,
}

impl WorkingSystem {
    pub fn build(spec: &MixedModelSpec, z: &DVector<f64>, w: &DVector<f64>) -> Result<Self> {
        let n = spec.n();
        if z.len() != n || w.len() != n {
            return Err(SopError::DimensionMismatch(format!(
                "working response/weights have lengths {} and {} for {} observations",
                z.len(),
                w.len(),
                n
            )));
        }
        if w.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(SopError::InvalidArgument(
                "working weights must be positive and finite".into(),
            ));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SopError::NonFinite("working response".into()));
        }
        let layout = Layout::of(spec);
        let mut design = DMatrix::<f64>::zeros(n, layout.dim());
        design
            .view_mut((0, 0), (n, layout.r()))
            .copy_from(spec.x());
        for (k, block) in spec.blocks().iter().enumerate() {
            design
                .view_mut((0, layout.block_range(k).start), (n, block.q()))
                .copy_from(block.z());
        }
        let sqrt_w = w.map(f64::sqrt);
        for i in 0..n {
            let s = sqrt_w[i];
            design.row_mut(i).scale_mut(s);
        }
        let cross = design.transpose() * &design;
        let zs = z.component_mul(&sqrt_w);
        let rhs = design.transpose() * &zs;
        let zwz = zs.dot(&zs);
        let log_w_sum = w.iter().map(|v| v.ln()).sum();
        Ok(WorkingSystem {
            cross,
            rhs,
            zwz,
            log_w_sum,
            n,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Coefficient matrix and right-hand side at the given precisions.
    fn materialize(
        &self,
        precisions: &[BlockPrecision],
        phi: f64,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut c = &self.cross / phi;
        for (k, bp) in precisions.iter().enumerate() {
            let range = self.layout.block_range(k);
            let q = range.len();
            if bp.diagonal {
                for (j, idx) in range.clone().enumerate() {
                    c[(idx, idx)] += bp.g_inv[(j, j)];
                }
            } else {
                let mut view = c.view_mut((range.start, range.start), (q, q));
                view += &bp.g_inv;
            }
        }
        (c, &self.rhs / phi)
    }
}

/// Explicit coefficient system, mainly for inspection and testing; fitting
/// uses the cached cross-product path instead.
#[derive(Debug, Clone)]
pub struct HendersonSystem {
    pub c: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub layout: Layout,
}

/// Build the explicit coefficient matrix and right-hand side.
pub fn assemble_henderson(
    spec: &MixedModelSpec,
    state: &VarianceState,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<HendersonSystem> {
    let precisions = assemble_all_precisions(spec, state)?;
    let ws = WorkingSystem::build(spec, z, w)?;
    let (c, rhs) = ws.materialize(&precisions, state.phi);
    Ok(HendersonSystem {
        c,
        rhs,
        layout: ws.layout,
    })
}

/// Block of the inverse coefficient matrix belonging to one random block.
/// Only the diagonal is stored when every atom of the block is diagonal.
#[derive(Debug, Clone)]
pub enum CstarBlock {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl CstarBlock {
    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            CstarBlock::Diagonal(d) => d.clone(),
            CstarBlock::Dense(m) => m.diagonal(),
        }
    }
}

/// Joint coefficient estimates with the inverse-matrix blocks and
/// factorization state needed by the variance updates and by prediction.
#[derive(Debug, Clone)]
pub struct CoefficientEstimates {
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    cstar: Vec<CstarBlock>,
    layout: Layout,
    l_factor: DMatrix<f64>,
}

impl CoefficientEstimates {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn alpha_block(&self, k: usize) -> nalgebra::DVectorView<'_, f64> {
        self.alpha.rows_range(self.layout.alpha_range(k))
    }

    pub fn cstar_block(&self, k: usize) -> &CstarBlock {
        &self.cstar[k]
    }

    /// Linear predictor `X beta + Z alpha` (offset not included).
    pub fn eta(&self, spec: &MixedModelSpec) -> DVector<f64> {
        let mut eta = spec.x() * &self.beta;
        for (k, block) in spec.blocks().iter().enumerate() {
            eta += block.z() * self.alpha_block(k);
        }
        eta
    }

    /// Quadratic form `v' C^-1 v` through the stored factor; this is the
    /// estimated variance of the linear combination `v' (beta, alpha)`.
    pub fn coefficient_variance(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.layout.dim() {
            return Err(SopError::DimensionMismatch(format!(
                "vector of length {} against a system of dimension {}",
                v.len(),
                self.layout.dim()
            )));
        }
        let y = self
            .l_factor
            .solve_lower_triangular(v)
            .ok_or_else(|| SopError::SingularSystem {
                context: "stored factor is singular".into(),
            })?;
        Ok(y.dot(&y))
    }
}

/// Deviance bookkeeping produced alongside a solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SolvePieces {
    pub log_det_c: f64,
    pub log_det_g: f64,
    pub log_det_r: f64,
    /// z' R^-1 (z - z_hat), the weighted residual inner product.
    pub resid_quad: f64,
    pub n: usize,
}

impl SolvePieces {
    /// Minus twice the restricted log-likelihood. The additive constant is
    /// fixed at (n - r) log(2 pi), so only differences are meaningful.
    pub fn deviance(&self, r: usize) -> f64 {
        self.log_det_r
            + self.log_det_g
            + self.log_det_c
            + self.resid_quad
            + (self.n - r) as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Factor the coefficient matrix and extract estimates plus the inverse
/// blocks. Shared by the public solver and the fitting loop.
pub(crate) fn solve_with(
    spec: &MixedModelSpec,
    ws: &WorkingSystem,
    precisions: &[BlockPrecision],
    phi: f64,
) -> Result<(CoefficientEstimates, SolvePieces)> {
    let layout = ws.layout().clone();
    let (c, rhs) = ws.materialize(precisions, phi);
    let chol = match nalgebra::Cholesky::new(c) {
        Some(ch) => ch,
        None => {
            // Refactor progressively only to name the first failing block in
            // the error; this path is outside the iteration hot loop.
            let (c2, _) = ws.materialize(precisions, phi);
            return Err(SopError::SingularSystem {
                context: diagnose_failure(&c2, &layout, spec),
            });
        }
    };
    let l = chol.l();
    let log_det_c = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let sol = chol.solve(&rhs);

    let mut cstar = Vec::with_capacity(spec.n_blocks());
    for (k, block) in spec.blocks().iter().enumerate() {
        let range = layout.block_range(k);
        let q = range.len();
        let mut unit_cols = DMatrix::<f64>::zeros(layout.dim(), q);
        for (j, idx) in range.clone().enumerate() {
            unit_cols[(idx, j)] = 1.0;
        }
        let half = l
            .solve_lower_triangular(&unit_cols)
            .ok_or_else(|| SopError::SingularSystem {
                context: format!("triangular solve failed for block {k}"),
            })?;
        if block.all_diagonal() {
            let diag = DVector::from_iterator(
                q,
                half.column_iter().map(|col| col.dot(&col)),
            );
            cstar.push(CstarBlock::Diagonal(diag));
        } else {
            cstar.push(CstarBlock::Dense(half.transpose() * &half));
        }
    }

    let beta = sol.rows(0, layout.r()).into_owned();
    let alpha = sol.rows(layout.r(), layout.dim() - layout.r()).into_owned();
    let resid_quad = (ws.zwz - ws.rhs.dot(&sol)) / phi;
    let pieces = SolvePieces {
        log_det_c,
        log_det_g: precisions.iter().map(|bp| bp.log_det_g).sum(),
        log_det_r: ws.n as f64 * phi.ln() - ws.log_w_sum,
        resid_quad,
        n: ws.n,
    };
    let estimates = CoefficientEstimates {
        beta,
        alpha,
        cstar,
        layout,
        l_factor: l,
    };
    Ok((estimates, pieces))
}

/// Solve the coefficient equations at a given state and working data.
pub fn solve_henderson(
    spec: &MixedModelSpec,
    state: &VarianceState,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<CoefficientEstimates> {
    let precisions = assemble_all_precisions(spec, state)?;
    let ws = WorkingSystem::build(spec, z, w)?;
    solve_with(spec, &ws, &precisions, state.phi).map(|(est, _)| est)
}

/// Find the first leading block whose pivot goes nonpositive, to give the
/// factorization error a useful name.
fn diagnose_failure(c: &DMatrix<f64>, layout: &Layout, spec: &MixedModelSpec) -> String {
    let dim = c.nrows();
    let mut a = c.clone();
    for j in 0..dim {
        let mut d = a[(j, j)];
        for t in 0..j {
            d -= a[(j, t)] * a[(j, t)];
        }
        if d <= 0.0 || !d.is_finite() {
            let where_ = if j < layout.r() {
                format!("fixed-effect column {j}")
            } else {
                let k = (0..layout.n_blocks())
                    .find(|&k| layout.block_range(k).contains(&j))
                    .unwrap_or(0);
                let local = j - layout.block_range(k).start;
                format!(
                    "random block {k} (coefficient {local}, atoms: {})",
                    spec.block(k).labels().join(", ")
                )
            };
            return format!("pivot {j} not positive while factorizing {where_}");
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..dim {
            let mut v = a[(i, j)];
            for t in 0..j {
                v -= a[(i, t)] * a[(j, t)];
            }
            a[(i, j)] = v / d;
        }
    }
    "factorization failed without a nonpositive pivot".into()
}
