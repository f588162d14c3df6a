//! Builder for adaptively penalized spline models.
//!
//! A curve `B theta` with a q-th order difference penalty whose weight varies
//! along the coefficient index is recast as a mixed model. The coefficient
//! vector splits into a polynomial part (the penalty null space) and
//! differences: with `F = D_q' (D_q D_q')^{-1}` the random design is
//! `Z = B F`, the fixed design is the polynomial basis `[1, x, .., x^(q-1)]`,
//! and the precision of the random part is a nonnegative combination of
//! diagonal atoms `diag(psi_l)` built from a small B-spline basis over the
//! difference index. One variance parameter per atom yields a local
//! smoothing-parameter field; a single atom collapses to the ordinary
//! P-spline mixed model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SopError};
use crate::family::Family;
use crate::model::{MixedModelSpec, RandomBlock, VarianceState};
use crate::predict::CurveDesign;
use crate::splines::{diff_matrix, eval_basis, make_knots, KnotVector};

/// Tolerance for the defensive partition-of-unity check on the
/// smoothing-parameter basis.
const PARTITION_TOL: f64 = 1e-10;

/// Geometry of an adaptive P-spline model, kept alongside the assembled
/// [`MixedModelSpec`] for prediction and for mapping variance parameters
/// back to a local smoothing field.
#[derive(Debug, Clone)]
pub struct AdaptiveSpec {
    d: usize,
    q: usize,
    p: usize,
    degree: usize,
    kv_main: KnotVector,
    kv_psi: KnotVector,
    f: DMatrix<f64>,
    psi: DMatrix<f64>,
    x_poly: DMatrix<f64>,
}

impl AdaptiveSpec {
    /// Number of basis functions of the main curve.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Penalty order.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of smoothing-parameter basis functions (variance parameters).
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn kv_main(&self) -> &KnotVector {
        &self.kv_main
    }

    pub fn kv_psi(&self) -> &KnotVector {
        &self.kv_psi
    }

    /// The d-by-(d-q) transform `D_q' (D_q D_q')^{-1}` from differences back
    /// to coefficients.
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// The (d-q)-by-p smoothing-parameter basis evaluated at the difference
    /// indices.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// Polynomial fixed design of the training data.
    pub fn x_poly(&self) -> &DMatrix<f64> {
        &self.x_poly
    }
}

fn polynomial_design(x: &[f64], q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), q, |i, j| x[i].powi(j as i32))
}

/// Assemble an adaptive P-spline model for data `(x, y)`.
///
/// `nseg` segments of B-splines of the given `degree` form the curve basis
/// (`d = nseg + degree` functions), penalized by `q`-th differences whose
/// local weight is spanned by `p` B-spline functions of the difference
/// index. Requires `q <= degree + 1` so the polynomial fixed part is exactly
/// representable by the basis, and `p < d - q` so there are fewer smoothing
/// parameters than penalized differences.
pub fn adaptive_pspline_spec(
    x: &[f64],
    y: &[f64],
    family: Family,
    nseg: usize,
    degree: usize,
    q: usize,
    p: usize,
) -> Result<(MixedModelSpec, AdaptiveSpec)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(SopError::DimensionMismatch(format!(
            "x has {} entries, y has {}",
            x.len(),
            y.len()
        )));
    }
    if q == 0 {
        return Err(SopError::InvalidArgument(
            "penalty order must be at least 1".into(),
        ));
    }
    if q > degree + 1 {
        return Err(SopError::InvalidArgument(format!(
            "penalty order {q} exceeds degree + 1 = {}; the polynomial part \
             of the curve would not be representable",
            degree + 1
        )));
    }
    let d = nseg + degree;
    if q >= d {
        return Err(SopError::InvalidArgument(format!(
            "penalty order {q} requires more than {d} basis functions"
        )));
    }
    let n_diff = d - q;
    if p == 0 || p >= n_diff {
        return Err(SopError::InvalidArgument(format!(
            "{p} smoothing parameters for {n_diff} coefficient differences; \
             the count must be positive and strictly smaller"
        )));
    }
    let (x_min, x_max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let kv_main = make_knots(x_min, x_max, nseg, degree)?;
    let b = eval_basis(x, &kv_main)?;

    let dm = diff_matrix(q, d)?;
    let ddt = dm.values() * dm.values().transpose();
    let f = nalgebra::Cholesky::new(ddt)
        .ok_or_else(|| SopError::SingularSystem {
            context: "difference-matrix Gram factor".into(),
        })?
        .solve(dm.values())
        .transpose();
    let z = b.values() * &f;
    let x_poly = polynomial_design(x, q);

    // Smoothing-parameter basis over the difference index 1..n_diff. Low
    // requested counts drop the degree so the basis stays well defined; a
    // single function is the constant, recovering the non-adaptive model.
    let psi_degree = (p - 1).min(3);
    let kv_psi = make_knots(1.0, n_diff as f64, p - psi_degree, psi_degree)?;
    let positions: Vec<f64> = (1..=n_diff).map(|k| k as f64).collect();
    let psi = eval_basis(&positions, &kv_psi)?.into_values();
    for i in 0..n_diff {
        let s: f64 = psi.row(i).iter().sum();
        if (s - 1.0).abs() > PARTITION_TOL {
            return Err(SopError::InvalidArgument(format!(
                "smoothing-parameter basis rows must sum to one, row {i} sums to {s}"
            )));
        }
    }

    let atoms: Vec<DMatrix<f64>> = (0..p)
        .map(|l| DMatrix::from_diagonal(&DVector::from(psi.column(l).into_owned())))
        .collect();
    let labels: Vec<String> = if p == 1 {
        vec!["smooth".into()]
    } else {
        (1..=p).map(|l| format!("psi_{l}")).collect()
    };
    let block = RandomBlock::new(z, atoms, labels)?;
    let spec = MixedModelSpec::new(
        x_poly.clone(),
        vec![block],
        family,
        DVector::from_column_slice(y),
    )?;
    Ok((
        spec,
        AdaptiveSpec {
            d,
            q,
            p,
            degree,
            kv_main,
            kv_psi,
            f,
            psi,
            x_poly,
        },
    ))
}

/// Local smoothing parameters along the difference index: each variance maps
/// to a precision weight `xi_l = phi / sigma2_l`, and the field is the basis
/// expansion of those weights.
pub fn lambda_field(spec: &AdaptiveSpec, state: &VarianceState) -> Result<DVector<f64>> {
    let sig = state.sigma2.first().ok_or_else(|| {
        SopError::DimensionMismatch("variance state has no random block".into())
    })?;
    if sig.len() != spec.p {
        return Err(SopError::DimensionMismatch(format!(
            "state carries {} variance parameters, model has {}",
            sig.len(),
            spec.p
        )));
    }
    if !state.phi.is_finite() || state.phi <= 0.0 {
        return Err(SopError::InvalidArgument(
            "dispersion must be positive".into(),
        ));
    }
    let mut xi = DVector::zeros(spec.p);
    for (l, &s2) in sig.iter().enumerate() {
        if !s2.is_finite() || s2 <= 0.0 {
            return Err(SopError::InvalidArgument(format!(
                "variance parameter {l} must be positive, got {s2}"
            )));
        }
        xi[l] = state.phi / s2;
    }
    Ok(&spec.psi * xi)
}

impl CurveDesign for AdaptiveSpec {
    fn design_rows(&self, x: f64) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let b_row = eval_basis(&[x], &self.kv_main)?.into_values();
        let fixed = DVector::from_fn(self.q, |j, _| x.powi(j as i32));
        let z_row = b_row * &self.f;
        Ok((fixed, vec![DVector::from_column_slice(z_row.as_slice())]))
    }
}
