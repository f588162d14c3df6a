//! B-spline regression matrices and difference-penalty matrices.
//!
//! Bases are built on equally spaced knots: `n_seg` interior segments over
//! the data range, extended by `degree` extra knots on each side so that the
//! basis functions sum to one everywhere inside the domain.

use nalgebra::DMatrix;

use crate::error::{Result, SopError};

/// Domain-relative slack when deciding whether a point lies inside the basis
/// domain. Points within this tolerance of the boundary are clamped.
const DOMAIN_EPS_REL: f64 = 1e-10;

/// Equally spaced knot sequence for a B-spline basis of a given degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
    n_seg: usize,
}

impl KnotVector {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_seg(&self) -> usize {
        self.n_seg
    }

    /// Number of basis functions spanned by this knot sequence.
    pub fn n_basis(&self) -> usize {
        self.n_seg + self.degree
    }

    /// Left end of the data domain (first interior knot).
    pub fn domain_min(&self) -> f64 {
        self.knots[self.degree]
    }

    /// Right end of the data domain (last interior knot).
    pub fn domain_max(&self) -> f64 {
        self.knots[self.knots.len() - 1 - self.degree]
    }

    fn segment_width(&self) -> f64 {
        (self.domain_max() - self.domain_min()) / self.n_seg as f64
    }
}

/// B-spline basis evaluated at a set of points; one row per point, one
/// column per basis function. Rows sum to one and hold at most
/// `degree + 1` nonzero entries.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    values: DMatrix<f64>,
    knots: KnotVector,
}

impl BasisMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }
}

/// Matrix form of the q-th order forward-difference operator on d
/// coefficients: (d - q) rows of alternating binomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    order: usize,
    dim: usize,
    values: DMatrix<f64>,
}

impl DifferenceMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Build an equally spaced knot sequence covering `[x_min, x_max]` with
/// `n_seg` interior segments and `degree` extension knots on each side.
pub fn make_knots(x_min: f64, x_max: f64, n_seg: usize, degree: usize) -> Result<KnotVector> {
    if !x_min.is_finite() || !x_max.is_finite() {
        return Err(SopError::InvalidArgument(format!(
            "knot bounds must be finite, got [{x_min}, {x_max}]"
        )));
    }
    if x_min >= x_max {
        return Err(SopError::InvalidArgument(format!(
            "knot range must satisfy x_min < x_max, got [{x_min}, {x_max}]"
        )));
    }
    if n_seg < 1 {
        return Err(SopError::InvalidArgument(
            "number of segments must be at least 1".into(),
        ));
    }
    let h = (x_max - x_min) / n_seg as f64;
    let total = n_seg + 1 + 2 * degree;
    let mut knots = Vec::with_capacity(total);
    for i in 0..total {
        let offset = i as isize - degree as isize;
        knots.push(x_min + offset as f64 * h);
    }
    Ok(KnotVector {
        knots,
        degree,
        n_seg,
    })
}

/// Evaluate all B-spline basis functions at the given points.
///
/// Points must lie inside the knot domain; evaluation never extrapolates.
pub fn eval_basis(x: &[f64], kv: &KnotVector) -> Result<BasisMatrix> {
    let d = kv.n_basis();
    let degree = kv.degree();
    let min = kv.domain_min();
    let max = kv.domain_max();
    let eps = DOMAIN_EPS_REL * (max - min);
    let width = kv.segment_width();

    let mut values = DMatrix::zeros(x.len(), d);
    let mut local = vec![0.0; degree + 1];
    for (row, &xi) in x.iter().enumerate() {
        if !xi.is_finite() || xi < min - eps || xi > max + eps {
            return Err(SopError::OutOfDomain { x: xi, min, max });
        }
        let xi = xi.clamp(min, max);
        // Segment index; the right boundary belongs to the last segment.
        let mut seg = ((xi - min) / width).floor() as usize;
        if seg >= kv.n_seg() {
            seg = kv.n_seg() - 1;
        }
        // Index into the full knot list of the segment's left knot.
        let k = seg + degree;
        cox_de_boor(&kv.knots, k, degree, xi, &mut local);
        for (j, &v) in local.iter().enumerate() {
            // Nonzero basis functions over segment `seg` are seg .. seg+degree.
            values[(row, seg + j)] = v;
        }
    }
    Ok(BasisMatrix {
        values,
        knots: kv.clone(),
    })
}

/// Values of the `degree + 1` B-splines that are nonzero on the knot span
/// `[knots[k], knots[k+1])`, by the Cox–de Boor recursion.
fn cox_de_boor(knots: &[f64], k: usize, degree: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    for r in 1..=degree {
        // Raise the degree from r-1 to r; out[0..r] holds the lower-degree values.
        let mut saved = 0.0;
        for j in 0..r {
            let left = knots[k + 1 + j - r];
            let right = knots[k + 1 + j];
            let term = out[j] / (right - left);
            out[j] = saved + (right - x) * term;
            saved = (x - left) * term;
        }
        out[r] = saved;
    }
}

/// Matrix of q-th order differences on d coefficients.
pub fn diff_matrix(q: usize, d: usize) -> Result<DifferenceMatrix> {
    if q < 1 {
        return Err(SopError::InvalidArgument(
            "difference order must be at least 1".into(),
        ));
    }
    if q >= d {
        return Err(SopError::InvalidArgument(format!(
            "difference order {q} must be smaller than the coefficient count {d}"
        )));
    }
    // Signed binomial stencil (-1)^(q-j) C(q, j) placed at each row offset.
    let mut stencil = vec![0.0_f64; q + 1];
    for (j, s) in stencil.iter_mut().enumerate() {
        let sign = if (q - j) % 2 == 0 { 1.0 } else { -1.0 };
        *s = sign * binomial(q, j);
    }
    let mut values = DMatrix::zeros(d - q, d);
    for i in 0..d - q {
        for j in 0..=q {
            values[(i, i + j)] = stencil[j];
        }
    }
    Ok(DifferenceMatrix {
        order: q,
        dim: d,
        values,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Coefficient vectors that reproduce the monomials `x^0 .. x^(q-1)` in a
/// B-spline basis, valid for `q <= degree + 1` on equally spaced knots.
///
/// Column j holds coefficients c with `B c = x^j` exactly. Built from the
/// symmetric power sums of the interior knots of each basis function
/// (Marsden's identity).
pub fn polynomial_coefficients(kv: &KnotVector, q: usize) -> Result<DMatrix<f64>> {
    if q > kv.degree() + 1 {
        return Err(SopError::InvalidArgument(format!(
            "a degree-{} basis reproduces polynomials only up to degree {}, requested {}",
            kv.degree(),
            kv.degree(),
            q.saturating_sub(1)
        )));
    }
    let d = kv.n_basis();
    let degree = kv.degree();
    let mut coeffs = DMatrix::zeros(d, q);
    for i in 0..d {
        // Interior knots of basis function i: knots[i+1 .. i+degree].
        let interior: Vec<f64> = (1..=degree).map(|j| kv.knots[i + j]).collect();
        // Elementary symmetric means e_j(interior) / C(degree, j) give the
        // coefficients of x^j via Marsden's identity.
        let esp = elementary_symmetric(&interior, q.saturating_sub(1));
        for j in 0..q {
            coeffs[(i, j)] = esp[j] / binomial(degree, j);
        }
    }
    Ok(coeffs)
}

/// Elementary symmetric polynomials e_0..e_max of the given values.
fn elementary_symmetric(values: &[f64], max: usize) -> Vec<f64> {
    let mut e = vec![0.0; max + 1];
    e[0] = 1.0;
    for &v in values {
        for j in (1..=max).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e
}
