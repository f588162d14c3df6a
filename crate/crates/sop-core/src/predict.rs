//! Pointwise curve prediction with approximate confidence bands.
//!
//! A curve is described by its design rows: one fixed-effect row and one row
//! per random block at each evaluation point. The point estimate is the
//! linear predictor of those rows; its variance is the quadratic form of the
//! full row in the inverse coefficient matrix, which already carries the
//! dispersion. Bands are formed on the link scale and transformed through
//! the inverse link, so they respect the response range. Observation-level
//! offsets are not part of a curve and are ignored here.

use nalgebra::DVector;

use crate::error::{Result, SopError};
use crate::estimate::FitResult;
use crate::henderson::Layout;
use crate::model::MixedModelSpec;

/// Central 95% normal quantile used for the bands.
pub const Z_95: f64 = 1.959963984540054;

/// A curve that knows its design rows at any in-domain point.
pub trait CurveDesign {
    /// Fixed-effect row and one row per random block at `x`.
    fn design_rows(&self, x: f64) -> Result<(DVector<f64>, Vec<DVector<f64>>)>;
}

/// A predicted curve on a grid: link-scale estimate and standard error,
/// response-scale fit, and a 95% band.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub eta: DVector<f64>,
    pub se_eta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Evaluate a fitted curve on new points.
pub fn predict_curve<D: CurveDesign + ?Sized>(
    design: &D,
    spec: &MixedModelSpec,
    fit: &FitResult,
    x_new: &[f64],
) -> Result<Prediction> {
    let layout = Layout::of(spec);
    if *fit.estimates.layout() != layout {
        return Err(SopError::DimensionMismatch(
            "fit does not belong to this model specification".into(),
        ));
    }
    let r = layout.r();
    let dim = layout.dim();
    let mut coef = DVector::zeros(dim);
    coef.rows_mut(0, r).copy_from(&fit.estimates.beta);
    coef.rows_mut(r, dim - r).copy_from(&fit.estimates.alpha);

    let n = x_new.len();
    let mut eta = DVector::zeros(n);
    let mut se = DVector::zeros(n);
    let mut row = DVector::zeros(dim);
    for (i, &x) in x_new.iter().enumerate() {
        let (fixed, random) = design.design_rows(x)?;
        if fixed.len() != r || random.len() != layout.n_blocks() {
            return Err(SopError::DimensionMismatch(format!(
                "curve produced {} fixed entries and {} random rows; the model \
                 expects {} and {}",
                fixed.len(),
                random.len(),
                r,
                layout.n_blocks()
            )));
        }
        row.fill(0.0);
        row.rows_mut(0, r).copy_from(&fixed);
        for (k, rk) in random.iter().enumerate() {
            let range = layout.block_range(k);
            if rk.len() != range.len() {
                return Err(SopError::DimensionMismatch(format!(
                    "random row {k} has {} entries, block has {}",
                    rk.len(),
                    range.len()
                )));
            }
            row.rows_mut(range.start, range.len()).copy_from(rk);
        }
        eta[i] = row.dot(&coef);
        let var = fit.estimates.coefficient_variance(&row)?;
        se[i] = var.max(0.0).sqrt();
    }

    let family = spec.family();
    let fitted = DVector::from_fn(n, |i, _| family.inv_link(eta[i]));
    let lower = DVector::from_fn(n, |i, _| family.inv_link(eta[i] - Z_95 * se[i]));
    let upper = DVector::from_fn(n, |i, _| family.inv_link(eta[i] + Z_95 * se[i]));
    Ok(Prediction {
        eta,
        se_eta: se,
        fitted,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::adaptive_pspline_spec;
    use crate::estimate::{compute_ed, fit, FitOptions, FitResult};
    use crate::family::Family;
    use crate::henderson::solve_henderson;
    use crate::model::{working_response, MixedModelSpec, RandomBlock, VarianceState};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn toy_xy(n: usize) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y = x
            .iter()
            .map(|&v| (5.0 * v).sin() + 0.2 * (17.0 * v).cos())
            .collect();
        (x, y)
    }

    #[test]
    fn training_points_reproduce_the_in_sample_fit() {
        let (x, y) = toy_xy(90);
        let (spec, aspec) =
            adaptive_pspline_spec(&x, &y, Family::gaussian(), 15, 3, 2, 4).unwrap();
        let res = fit(&spec, &FitOptions::default()).unwrap();
        let pred = predict_curve(&aspec, &spec, &res, &x).unwrap();
        assert_abs_diff_eq!(pred.eta, res.estimates.eta(&spec), epsilon = 1e-10);
        assert_abs_diff_eq!(pred.fitted, res.fitted_mu, epsilon = 1e-10);
        for i in 0..x.len() {
            assert!(pred.se_eta[i] > 0.0);
            assert!(pred.lower[i] <= pred.fitted[i] && pred.fitted[i] <= pred.upper[i]);
        }
    }

    #[test]
    fn out_of_domain_points_error() {
        let (x, y) = toy_xy(40);
        let (spec, aspec) =
            adaptive_pspline_spec(&x, &y, Family::gaussian(), 8, 3, 2, 2).unwrap();
        let res = fit(&spec, &FitOptions::default()).unwrap();
        assert!(predict_curve(&aspec, &spec, &res, &[1.7]).is_err());
        assert!(predict_curve(&aspec, &spec, &res, &[-0.1]).is_err());
    }

    #[test]
    fn negligible_variance_reduces_to_fixed_part_standard_errors() {
        // Data close to a straight line with a manually pinned tiny variance:
        // the band must match weighted least squares on the fixed part alone.
        let n = 40;
        let (x, yy) = toy_xy(n);
        let y: Vec<f64> = x
            .iter()
            .zip(&yy)
            .map(|(&xv, &w)| 0.4 + 0.9 * xv + 1e-9 * w)
            .collect();
        let (spec, aspec) =
            adaptive_pspline_spec(&x, &y, Family::gaussian(), 8, 3, 2, 2).unwrap();
        let phi = 0.03;
        let state = VarianceState {
            sigma2: vec![vec![1e-12 * phi; 2]],
            phi,
        };
        let (z, w) = working_response(&spec, spec.y()).unwrap();
        let est = solve_henderson(&spec, &state, &z, &w).unwrap();
        let ed = compute_ed(&spec, &state, &est).unwrap();
        let fitted_mu = est.eta(&spec);
        let res = FitResult {
            estimates: est,
            state: state.clone(),
            ed,
            deviance_trace: vec![0.0],
            outer_iterations: 1,
            inner_iterations: 1,
            converged: true,
            fitted_mu,
            floored: vec![(0, 0), (0, 1)],
            state_trace: vec![],
        };
        let grid: Vec<f64> = (0..9).map(|i| 0.05 + 0.1 * i as f64).collect();
        let pred = predict_curve(&aspec, &spec, &res, &grid).unwrap();

        let xtx_inv = (spec.x().transpose() * spec.x()).try_inverse().unwrap();
        for (i, &g) in grid.iter().enumerate() {
            let row = nalgebra::dvector![1.0, g];
            let ols_var = phi * (row.transpose() * &xtx_inv * &row)[(0, 0)];
            assert_abs_diff_eq!(pred.se_eta[i], ols_var.sqrt(), epsilon = 1e-4 * ols_var.sqrt());
        }
    }

    #[test]
    fn mismatched_fit_and_spec_are_rejected() {
        let (x, y) = toy_xy(50);
        let (spec_a, aspec) =
            adaptive_pspline_spec(&x, &y, Family::gaussian(), 8, 3, 2, 2).unwrap();
        let res = fit(&spec_a, &FitOptions::default()).unwrap();
        // A different model shape.
        let x2 = DMatrix::from_fn(50, 3, |i, j| (i as f64 / 49.0).powi(j as i32));
        let block = RandomBlock::isotropic(
            DMatrix::from_fn(50, 4, |i, j| ((i * (j + 2)) as f64 * 0.17).sin()),
            "u",
        )
        .unwrap();
        let other = MixedModelSpec::new(
            x2,
            vec![block],
            Family::gaussian(),
            nalgebra::DVector::from_column_slice(&y),
        )
        .unwrap();
        assert!(predict_curve(&aspec, &other, &res, &x[..3]).is_err());
    }
}
