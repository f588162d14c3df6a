//! Model representation: fixed and random designs, overlapping precision
//! atoms, variance parameters, and rank diagnostics for the update theory.
//!
//! A model couples a full-rank fixed design `X` with a list of random blocks.
//! Block `k` contributes a design `Z_k` and a precision that is linear in the
//! inverse variance parameters,
//!
//! ```text
//! G_k^{-1} = sum_l sigma_{k_l}^{-2} Lambda_{k_l},
//! ```
//!
//! where the atoms `Lambda_{k_l}` are known symmetric positive semi-definite
//! matrices. Several atoms may act on the same coefficients, which is what
//! makes the penalties overlap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SopError};
use crate::family::{Family, FamilyKind};

/// Relative tolerance for numeric rank: singular values above
/// `RANK_TOL_REL * max_sv` count toward the rank.
pub const RANK_TOL_REL: f64 = 1e-10;
/// Absolute tolerance on atom symmetry.
const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues of an atom may be negative only down to this fraction of the
/// largest magnitude before the atom is rejected as indefinite.
const PSD_TOL_REL: f64 = 1e-10;
/// Condition-number ceiling for an assembled block precision.
const CONDITION_LIMIT: f64 = 1e14;
/// Relative tolerance for the commutation test between `G_k` and an atom.
const COMMUTE_TOL_REL: f64 = 1e-10;
/// Relative residual above which the response is considered outside the
/// fixed-effect column space.
const RESPONSE_SPAN_TOL: f64 = 1e-8;

/// One random-effect block: design columns plus the precision atoms that act
/// on its coefficients.
#[derive(Debug, Clone)]
pub struct RandomBlock {
    z: DMatrix<f64>,
    atoms: Vec<DMatrix<f64>>,
    labels: Vec<String>,
    diagonal_flags: Vec<bool>,
}

impl RandomBlock {
    /// Validate and build a block. Each atom must be symmetric and positive
    /// semi-definite, and the atoms must sum to a positive definite matrix so
    /// that the assembled precision is invertible for any positive variances.
    pub fn new(
        z: DMatrix<f64>,
        atoms: Vec<DMatrix<f64>>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let q = z.ncols();
        if q == 0 || z.nrows() == 0 {
            return Err(SopError::InvalidArgument(
                "random block design must have at least one row and column".into(),
            ));
        }
        if atoms.is_empty() {
            return Err(SopError::InvalidArgument(
                "random block needs at least one precision atom".into(),
            ));
        }
        if labels.len() != atoms.len() {
            return Err(SopError::DimensionMismatch(format!(
                "{} atoms but {} labels",
                atoms.len(),
                labels.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SopError::NonFinite("random block design".into()));
        }

        let mut diagonal_flags = Vec::with_capacity(atoms.len());
        for (l, atom) in atoms.iter().enumerate() {
            if atom.nrows() != q || atom.ncols() != q {
                return Err(SopError::DimensionMismatch(format!(
                    "atom '{}' is {}x{} but the block has {} columns",
                    labels[l],
                    atom.nrows(),
                    atom.ncols(),
                    q
                )));
            }
            if atom.iter().any(|v| !v.is_finite()) {
                return Err(SopError::NonFinite(format!("precision atom '{}'", labels[l])));
            }
            let asym = (0..q)
                .flat_map(|j| (0..j).map(move |i| (i, j)))
                .map(|(i, j)| (atom[(i, j)] - atom[(j, i)]).abs())
                .fold(0.0f64, f64::max);
            if asym > SYMMETRY_TOL {
                return Err(SopError::InvalidArgument(format!(
                    "precision atom '{}' is not symmetric (max asymmetry {asym:.3e})",
                    labels[l]
                )));
            }
            let diagonal = is_diagonal(atom);
            check_psd(atom, diagonal, &labels[l])?;
            diagonal_flags.push(diagonal);
        }

        // With unit variances the assembled precision is the plain atom sum;
        // it must be positive definite or no variance state can be valid.
        let mut sum = DMatrix::<f64>::zeros(q, q);
        for atom in &atoms {
            sum += atom;
        }
        let sum_pd = if diagonal_flags.iter().all(|&d| d) {
            sum.diagonal().iter().all(|&v| v > 0.0)
        } else {
            let bw = bandwidth(&sum);
            if 8 * (bw + 1) < q {
                banded_cholesky_succeeds(&sum, bw)
            } else {
                nalgebra::Cholesky::new(sum).is_some()
            }
        };
        if !sum_pd {
            return Err(SopError::InvalidArgument(
                "precision atoms do not sum to a positive definite matrix".into(),
            ));
        }

        Ok(RandomBlock {
            z,
            atoms,
            labels,
            diagonal_flags,
        })
    }

    /// Convenience constructor for the classical single-variance block with an
    /// identity precision atom.
    pub fn isotropic(z: DMatrix<f64>, label: &str) -> Result<Self> {
        let q = z.ncols();
        RandomBlock::new(z, vec![DMatrix::identity(q, q)], vec![label.to_string()])
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Number of coefficients in this block.
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Number of precision atoms (variance parameters).
    pub fn p(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[DMatrix<f64>] {
        &self.atoms
    }

    pub fn atom(&self, l: usize) -> &DMatrix<f64> {
        &self.atoms[l]
    }

    pub fn label(&self, l: usize) -> &str {
        &self.labels[l]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn atom_is_diagonal(&self, l: usize) -> bool {
        self.diagonal_flags[l]
    }

    /// True when every atom is diagonal, in which case the assembled
    /// precision, its inverse, and all trace work stay on the diagonal.
    pub fn all_diagonal(&self) -> bool {
        self.diagonal_flags.iter().all(|&d| d)
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == 0.0))
}

fn check_psd(atom: &DMatrix<f64>, diagonal: bool, label: &str) -> Result<()> {
    let max_abs = atom.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_abs == 0.0 {
        return Err(SopError::InvalidArgument(format!(
            "precision atom '{label}' is identically zero"
        )));
    }
    if diagonal {
        let min = atom.diagonal().min();
        if min < -PSD_TOL_REL * max_abs {
            return Err(SopError::InvalidArgument(format!(
                "precision atom '{label}' has negative diagonal entry {min:.3e}"
            )));
        }
        return Ok(());
    }
    // Symmetrize so tolerated asymmetry in the last bits cannot leak into
    // the definiteness test. Small atoms get an exact eigenvalue check; for
    // large ones a Cholesky attempt after a tolerance-sized diagonal shift
    // decides the same question, in banded form when the sparsity allows.
    let sym = (atom + atom.transpose()) * 0.5;
    let n = sym.nrows();
    if n <= 256 {
        let eigs = sym.symmetric_eigenvalues();
        let max_eig = eigs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min_eig = eigs.min();
        if min_eig < -PSD_TOL_REL * max_eig {
            return Err(SopError::InvalidArgument(format!(
                "precision atom '{label}' is indefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        return Ok(());
    }
    let largest = sym.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let shift = PSD_TOL_REL * largest * n as f64;
    let mut shifted = sym;
    for j in 0..n {
        shifted[(j, j)] += shift;
    }
    let bw = bandwidth(&shifted);
    let ok = if 8 * (bw + 1) < n {
        banded_cholesky_succeeds(&shifted, bw)
    } else {
        nalgebra::Cholesky::new(shifted).is_some()
    };
    if !ok {
        return Err(SopError::InvalidArgument(format!(
            "precision atom '{label}' is indefinite"
        )));
    }
    Ok(())
}

/// Largest `|i - j|` over the nonzero entries.
fn bandwidth(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    let mut bw = 0usize;
    for j in 0..n {
        for i in 0..n {
            if m[(i, j)] != 0.0 {
                bw = bw.max(i.abs_diff(j));
            }
        }
    }
    bw
}

/// Cholesky attempt restricted to a band, O(n * bw^2). Returns whether every
/// pivot stayed positive, which for a symmetric banded matrix is exactly
/// positive definiteness.
fn banded_cholesky_succeeds(m: &DMatrix<f64>, bw: usize) -> bool {
    let n = m.nrows();
    let w = bw + 1;
    // band[(i, w - 1 - (i - j))] holds entry (i, j) of the lower triangle.
    let mut band = DMatrix::<f64>::zeros(n, w);
    for i in 0..n {
        for j in i.saturating_sub(bw)..=i {
            band[(i, w - 1 - (i - j))] = m[(i, j)];
        }
    }
    for i in 0..n {
        let j0 = i.saturating_sub(bw);
        for j in j0..i {
            let mut sum = band[(i, w - 1 - (i - j))];
            for k in j.saturating_sub(bw).max(j0)..j {
                sum -= band[(i, w - 1 - (i - k))] * band[(j, w - 1 - (j - k))];
            }
            band[(i, w - 1 - (i - j))] = sum / band[(j, w - 1)];
        }
        let mut pivot = band[(i, w - 1)];
        for k in j0..i {
            let v = band[(i, w - 1 - (i - k))];
            pivot -= v * v;
        }
        if !pivot.is_finite() || pivot <= 0.0 {
            return false;
        }
        band[(i, w - 1)] = pivot.sqrt();
    }
    true
}

/// Current values of all variance parameters: `sigma2[k][l]` for atom `l` of
/// block `k`, plus the dispersion `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceState {
    pub sigma2: Vec<Vec<f64>>,
    pub phi: f64,
}

impl VarianceState {
    /// Unit starting values: every variance 1, dispersion from the family.
    pub fn initial(spec: &MixedModelSpec) -> Self {
        VarianceState {
            sigma2: spec.blocks.iter().map(|b| vec![1.0; b.p()]).collect(),
            phi: spec.family.initial_phi(),
        }
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.sigma2[k]
    }

    /// Check shape agreement with a model and strict positivity.
    pub fn validate(&self, spec: &MixedModelSpec) -> Result<()> {
        if self.sigma2.len() != spec.blocks.len() {
            return Err(SopError::DimensionMismatch(format!(
                "state has {} blocks, model has {}",
                self.sigma2.len(),
                spec.blocks.len()
            )));
        }
        for (k, (vals, block)) in self.sigma2.iter().zip(&spec.blocks).enumerate() {
            if vals.len() != block.p() {
                return Err(SopError::DimensionMismatch(format!(
                    "state block {k} has {} entries, model block has {} atoms",
                    vals.len(),
                    block.p()
                )));
            }
            if let Some(&bad) = vals.iter().find(|v| !v.is_finite() || **v <= 0.0) {
                return Err(SopError::InvalidArgument(format!(
                    "variance parameter in block {k} must be positive and finite, got {bad}"
                )));
            }
        }
        if !self.phi.is_finite() || self.phi <= 0.0 {
            return Err(SopError::InvalidArgument(format!(
                "dispersion must be positive and finite, got {}",
                self.phi
            )));
        }
        Ok(())
    }

    /// All variance parameters in block-major order with their atom labels.
    pub fn flattened<'a>(&'a self, spec: &'a MixedModelSpec) -> Vec<(&'a str, f64)> {
        self.sigma2
            .iter()
            .zip(&spec.blocks)
            .flat_map(|(vals, block)| {
                vals.iter()
                    .enumerate()
                    .map(|(l, &v)| (block.label(l), v))
            })
            .collect()
    }
}

/// A complete model: fixed design, random blocks, response, and family.
#[derive(Debug, Clone)]
pub struct MixedModelSpec {
    x: DMatrix<f64>,
    blocks: Vec<RandomBlock>,
    family: Family,
    y: DVector<f64>,
    trials: Option<DVector<f64>>,
    offset: Option<DVector<f64>>,
}

impl MixedModelSpec {
    pub fn new(
        x: DMatrix<f64>,
        blocks: Vec<RandomBlock>,
        family: Family,
        y: DVector<f64>,
    ) -> Result<Self> {
        let n = x.nrows();
        let r = x.ncols();
        if n == 0 || r == 0 {
            return Err(SopError::InvalidArgument(
                "fixed design must be non-empty".into(),
            ));
        }
        if n <= r {
            return Err(SopError::InvalidArgument(format!(
                "need more observations ({n}) than fixed-effect columns ({r})"
            )));
        }
        if y.len() != n {
            return Err(SopError::DimensionMismatch(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SopError::NonFinite("fixed design".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SopError::NonFinite("response".into()));
        }
        let sv = x.clone().singular_values();
        let (max_sv, min_sv) = (sv.max(), sv.min());
        if min_sv <= RANK_TOL_REL * max_sv {
            return Err(SopError::InvalidArgument(format!(
                "fixed design is rank deficient (singular value ratio {:.3e})",
                min_sv / max_sv
            )));
        }
        for (k, block) in blocks.iter().enumerate() {
            if block.z().nrows() != n {
                return Err(SopError::DimensionMismatch(format!(
                    "random block {k} has {} rows, expected {n}",
                    block.z().nrows()
                )));
            }
        }
        match family.kind {
            FamilyKind::Poisson => {
                if y.iter().any(|&v| v < 0.0) {
                    return Err(SopError::InvalidArgument(
                        "count responses must be nonnegative".into(),
                    ));
                }
            }
            FamilyKind::Binomial => {
                if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(SopError::InvalidArgument(
                        "binomial responses must be proportions in [0, 1]".into(),
                    ));
                }
            }
            FamilyKind::Gaussian => {}
        }
        let trials = match family.kind {
            FamilyKind::Binomial => Some(DVector::from_element(n, 1.0)),
            _ => None,
        };
        Ok(MixedModelSpec {
            x,
            blocks,
            family,
            y,
            trials,
            offset: None,
        })
    }

    /// Attach binomial trial counts (the response stays on the proportion
    /// scale; trials enter through the working weights).
    pub fn with_trials(mut self, trials: DVector<f64>) -> Result<Self> {
        if self.family.kind != FamilyKind::Binomial {
            return Err(SopError::InvalidArgument(
                "trial counts only apply to binomial models".into(),
            ));
        }
        if trials.len() != self.n() {
            return Err(SopError::DimensionMismatch(format!(
                "{} trial counts for {} observations",
                trials.len(),
                self.n()
            )));
        }
        if trials.iter().any(|&m| !m.is_finite() || m < 1.0) {
            return Err(SopError::InvalidArgument(
                "trial counts must be finite and at least 1".into(),
            ));
        }
        self.trials = Some(trials);
        Ok(self)
    }

    /// Attach an offset on the linear-predictor scale.
    pub fn with_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != self.n() {
            return Err(SopError::DimensionMismatch(format!(
                "offset has {} entries for {} observations",
                offset.len(),
                self.n()
            )));
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(SopError::NonFinite("offset".into()));
        }
        self.offset = Some(offset);
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn blocks(&self) -> &[RandomBlock] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &RandomBlock {
        &self.blocks[k]
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Column count of the fixed design; equals its rank by construction.
    pub fn rank_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn q_total(&self) -> usize {
        self.blocks.iter().map(|b| b.q()).sum()
    }

    pub fn p_total(&self) -> usize {
        self.blocks.iter().map(|b| b.p()).sum()
    }

    pub fn offset(&self) -> Option<&DVector<f64>> {
        self.offset.as_ref()
    }

    pub fn trials(&self) -> Option<&DVector<f64>> {
        self.trials.as_ref()
    }

    /// Prior weight of each observation (binomial trials; 1 otherwise).
    pub fn prior_weight(&self, i: usize) -> f64 {
        self.trials.as_ref().map_or(1.0, |t| t[i])
    }

    /// Map a linear predictor to means, applying the offset and validating
    /// that every mean is inside the family's range.
    pub fn mean_from_eta(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let mut mu = DVector::zeros(self.n());
        for i in 0..self.n() {
            let shift = self.offset.as_ref().map_or(0.0, |o| o[i]);
            mu[i] = self.family.inv_link(eta[i] + shift);
            self.family.check_mean(i, mu[i])?;
        }
        Ok(mu)
    }

    /// Family-specific starting means for the fitting loop.
    pub fn initial_means(&self) -> Result<DVector<f64>> {
        let mut mu = DVector::zeros(self.n());
        for i in 0..self.n() {
            mu[i] = self.family.initial_mean(self.y[i], self.prior_weight(i));
            self.family.check_mean(i, mu[i])?;
        }
        Ok(mu)
    }
}

/// Assembled precision of one block at given variances.
#[derive(Debug, Clone)]
pub struct BlockPrecision {
    /// `G_k^{-1} = sum_l sigma_{k_l}^{-2} Lambda_{k_l}`.
    pub g_inv: DMatrix<f64>,
    /// Its inverse `G_k`.
    pub g: DMatrix<f64>,
    /// True when the block's atoms are all diagonal, so both matrices are too.
    pub diagonal: bool,
    /// `log det G_k`, needed by the restricted-likelihood evaluation.
    pub log_det_g: f64,
}

/// Build `G_k^{-1}` and `G_k` for one block.
///
/// `sigma2` holds the block's variance parameters in atom order. Fails when
/// the assembled matrix is numerically singular (condition number beyond
/// 1e14) so that downstream factorizations cannot quietly lose all precision.
pub fn assemble_precision(
    block: &RandomBlock,
    block_index: usize,
    sigma2: &[f64],
) -> Result<BlockPrecision> {
    if sigma2.len() != block.p() {
        return Err(SopError::DimensionMismatch(format!(
            "block {block_index} has {} atoms but {} variances were supplied",
            block.p(),
            sigma2.len()
        )));
    }
    if let Some(&bad) = sigma2.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(SopError::InvalidArgument(format!(
            "variance parameters must be positive and finite, got {bad}"
        )));
    }
    let q = block.q();
    let mut g_inv = DMatrix::<f64>::zeros(q, q);
    for (atom, &s2) in block.atoms().iter().zip(sigma2) {
        g_inv.zip_apply(atom, |g, a| *g += a / s2);
    }

    if block.all_diagonal() {
        let diag = g_inv.diagonal();
        let (max_d, min_d) = (diag.max(), diag.min());
        if min_d <= 0.0 || max_d / min_d > CONDITION_LIMIT {
            return Err(SopError::SingularPrecision {
                block: block_index,
                detail: format!("diagonal range [{min_d:.3e}, {max_d:.3e}]"),
            });
        }
        let g = DMatrix::from_diagonal(&diag.map(|v| 1.0 / v));
        let log_det_g = -diag.iter().map(|v| v.ln()).sum::<f64>();
        return Ok(BlockPrecision {
            g_inv,
            g,
            diagonal: true,
            log_det_g,
        });
    }

    let chol = nalgebra::Cholesky::new(g_inv.clone()).ok_or_else(|| {
        SopError::SingularPrecision {
            block: block_index,
            detail: "factorization failed".into(),
        }
    })?;
    let ldiag = chol.l_dirty().diagonal();
    let (max_l, min_l) = (ldiag.max(), ldiag.min());
    if min_l <= 0.0 || (max_l / min_l).powi(2) > CONDITION_LIMIT {
        return Err(SopError::SingularPrecision {
            block: block_index,
            detail: format!("condition estimate {:.3e}", (max_l / min_l).powi(2)),
        });
    }
    let log_det_g = -2.0 * ldiag.iter().map(|v| v.ln()).sum::<f64>();
    Ok(BlockPrecision {
        g_inv,
        g: chol.inverse(),
        diagonal: false,
        log_det_g,
    })
}

/// Assemble every block of a model at the given state.
pub fn assemble_all_precisions(
    spec: &MixedModelSpec,
    state: &VarianceState,
) -> Result<Vec<BlockPrecision>> {
    state.validate(spec)?;
    spec.blocks
        .iter()
        .enumerate()
        .map(|(k, b)| assemble_precision(b, k, state.block(k)))
        .collect()
}

/// Linearized response and weights for one scoring step.
///
/// Returns `z` with `z_i = g(mu_i) + (y_i - mu_i) g'(mu_i) - offset_i` and
/// weights `w_i = m_i / (g'(mu_i)^2 nu(mu_i))` where `m_i` is the prior
/// (trials) weight.
pub fn working_response(
    spec: &MixedModelSpec,
    mu: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = spec.n();
    if mu.len() != n {
        return Err(SopError::DimensionMismatch(format!(
            "mean vector has {} entries for {} observations",
            mu.len(),
            n
        )));
    }
    let fam = spec.family();
    let mut z = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    for i in 0..n {
        fam.check_mean(i, mu[i])?;
        let d = fam.d_link(mu[i]);
        let offset = spec.offset().map_or(0.0, |o| o[i]);
        z[i] = fam.link(mu[i]) + (spec.y()[i] - mu[i]) * d - offset;
        w[i] = spec.prior_weight(i) / (d * d * fam.variance(mu[i]));
        if !z[i].is_finite() || !w[i].is_finite() || w[i] <= 0.0 {
            return Err(SopError::NonFinite(format!(
                "working response at observation {i}"
            )));
        }
    }
    Ok((z, w))
}

/// Which simplification of the first positivity condition applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankShortcut {
    /// Atom has full rank: test rank(X, Z_k) > rank(X).
    FullRankAtom,
    /// `G_k` and the atom commute: test rank(X, Z_k Lambda) > rank(X).
    Commuting,
    /// General case: test rank(X, Z_k G_k Lambda) > rank(X).
    General,
}

/// Positivity diagnostics for one variance parameter.
#[derive(Debug, Clone)]
pub struct RankCondition {
    pub block: usize,
    pub atom: usize,
    /// Column space of the block's weighted design extends that of `X`.
    pub condition_i: bool,
    /// Response is not fully explained by the fixed effects.
    pub condition_ii: bool,
    pub shortcut: RankShortcut,
}

/// Report of the positivity conditions for every variance parameter.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub conditions: Vec<RankCondition>,
    pub rank_x: usize,
    /// True when the working response lies in the fixed-effect column space.
    pub response_in_fixed_span: bool,
}

impl RankReport {
    /// True when both conditions hold for every variance parameter, so all
    /// updates are guaranteed strictly positive.
    pub fn all_hold(&self) -> bool {
        self.conditions
            .iter()
            .all(|c| c.condition_i && c.condition_ii)
    }

    pub fn condition(&self, block: usize, atom: usize) -> Option<&RankCondition> {
        self.conditions
            .iter()
            .find(|c| c.block == block && c.atom == atom)
    }
}

/// Numeric rank: count of singular values above `RANK_TOL_REL` times the
/// largest.
pub fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL_REL * max).count()
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Evaluate the positivity conditions of the variance updates.
///
/// For each variance parameter, condition (i) asks that the columns of
/// `Z_k G_k Lambda_{k_l}` extend the fixed-effect column space; when the atom
/// has full rank this reduces to testing `Z_k` itself, and when `G_k` and the
/// atom commute to testing `Z_k Lambda_{k_l}`. Condition (ii) asks that the
/// working response is not already in the fixed-effect span. Both are
/// evaluated numerically with a relative singular-value tolerance.
pub fn check_rank_conditions(
    spec: &MixedModelSpec,
    state: &VarianceState,
    z: &DVector<f64>,
) -> Result<RankReport> {
    if z.len() != spec.n() {
        return Err(SopError::DimensionMismatch(format!(
            "response has {} entries for {} observations",
            z.len(),
            spec.n()
        )));
    }
    let rank_x = numeric_rank(spec.x());

    // Condition (ii): residual of projecting z onto the fixed columns.
    let qr = spec.x().clone().qr();
    let qmat = qr.q();
    let resid = z - &qmat * (qmat.transpose() * z);
    let in_span = resid.norm() <= RESPONSE_SPAN_TOL * z.norm();
    let condition_ii = !in_span;

    let precisions = assemble_all_precisions(spec, state)?;
    let mut conditions = Vec::with_capacity(spec.p_total());
    for (k, block) in spec.blocks().iter().enumerate() {
        let bp = &precisions[k];
        let mut rank_xz: Option<usize> = None;
        for l in 0..block.p() {
            let atom = block.atom(l);
            let full_rank_atom = if block.atom_is_diagonal(l) {
                let d = atom.diagonal();
                let max = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                d.iter().all(|&v| v.abs() > RANK_TOL_REL * max)
            } else {
                numeric_rank(atom) == block.q()
            };
            let (shortcut, rank_aug) = if full_rank_atom {
                let r = *rank_xz
                    .get_or_insert_with(|| numeric_rank(&hcat(spec.x(), block.z())));
                (RankShortcut::FullRankAtom, r)
            } else {
                let commutes = if bp.diagonal && block.atom_is_diagonal(l) {
                    true
                } else {
                    let gl = &bp.g * atom;
                    let lg = atom * &bp.g;
                    max_abs(&(gl - lg)) <= COMMUTE_TOL_REL * max_abs(&bp.g) * max_abs(atom)
                };
                if commutes {
                    let m = block.z() * atom;
                    (RankShortcut::Commuting, numeric_rank(&hcat(spec.x(), &m)))
                } else {
                    let m = block.z() * (&bp.g * atom);
                    (RankShortcut::General, numeric_rank(&hcat(spec.x(), &m)))
                }
            };
            conditions.push(RankCondition {
                block: k,
                atom: l,
                condition_i: rank_aug > rank_x,
                condition_ii,
            shortcut,
            });
        }
    }
    Ok(RankReport {
        conditions,
        rank_x,
        response_in_fixed_span: in_span,
    })
}
