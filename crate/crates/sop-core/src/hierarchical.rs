//! Builders for hierarchical curve models on balanced panels: a population
//! (or per-group) curve plus a smooth deviation per subject.
//!
//! The population curve `B theta` carries a q-th order difference penalty.
//! Eigendecomposing the penalty `D_q' D_q = U Sigma U'` splits the
//! coefficients into an unpenalized polynomial part (fixed effects through
//! `B U_0`) and penalized directions (a random block through `B U_+` with
//! diagonal precision atom `Sigma_+`). Subject deviations get their own
//! B-spline basis per subject with a two-atom precision, a difference
//! penalty plus a ridge, which keeps each deviation identifiable against
//! the population curve. The factor-by-curve variant fits one curve per
//! group (contrast `Q`, controls first) over shared subject deviations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SopError};
use crate::family::Family;
use crate::model::{MixedModelSpec, RandomBlock};
use crate::predict::CurveDesign;
use crate::splines::{diff_matrix, eval_basis, make_knots, KnotVector};

/// Relative threshold classifying penalty eigenvalues as zero.
const NULL_EIG_TOL: f64 = 1e-10;

/// Geometry of a hierarchical curve model, kept alongside the assembled
/// [`MixedModelSpec`] for prediction.
#[derive(Debug, Clone)]
pub struct HierarchicalSpec {
    d: usize,
    d_subj: usize,
    q: usize,
    q_subj: usize,
    m: usize,
    s: usize,
    kv_pop: KnotVector,
    kv_subj: KnotVector,
    u0: DMatrix<f64>,
    u_plus: DMatrix<f64>,
    sigma_plus: DVector<f64>,
    groups: Option<Vec<u8>>,
}

impl HierarchicalSpec {
    /// Population basis size.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Subject basis size.
    pub fn d_subj(&self) -> usize {
        self.d_subj
    }

    /// Population penalty order.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Subject penalty order.
    pub fn q_subj(&self) -> usize {
        self.q_subj
    }

    /// Number of subjects.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Observations per subject.
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn kv_pop(&self) -> &KnotVector {
        &self.kv_pop
    }

    pub fn kv_subj(&self) -> &KnotVector {
        &self.kv_subj
    }

    /// Null-space eigenvectors of the population penalty (d by q).
    pub fn u0(&self) -> &DMatrix<f64> {
        &self.u0
    }

    /// Range-space eigenvectors (d by d-q).
    pub fn u_plus(&self) -> &DMatrix<f64> {
        &self.u_plus
    }

    /// Positive penalty eigenvalues, ascending (length d-q).
    pub fn sigma_plus(&self) -> &DVector<f64> {
        &self.sigma_plus
    }

    /// Group label per subject when built by the factor variant.
    pub fn groups(&self) -> Option<&[u8]> {
        self.groups.as_deref()
    }

    /// The single shared curve of a plain hierarchical model.
    pub fn population_curve(&self) -> Result<PopulationCurve<'_>> {
        if self.groups.is_some() {
            return Err(SopError::InvalidArgument(
                "this model has one curve per group; request a group curve".into(),
            ));
        }
        Ok(PopulationCurve { spec: self })
    }

    /// The curve of one group of a factor-by-curve model.
    pub fn group_curve(&self, group: u8) -> Result<GroupCurve<'_>> {
        if self.groups.is_none() {
            return Err(SopError::InvalidArgument(
                "this model has a single population curve, not group curves".into(),
            ));
        }
        if group > 1 {
            return Err(SopError::InvalidArgument(format!(
                "group must be 0 or 1, got {group}"
            )));
        }
        Ok(GroupCurve { spec: self, group })
    }

    /// The full curve of one subject: population (or group) plus deviation.
    pub fn subject_curve(&self, subject: usize) -> Result<SubjectCurve<'_>> {
        if subject >= self.m {
            return Err(SopError::InvalidArgument(format!(
                "subject {subject} out of range for {} subjects",
                self.m
            )));
        }
        Ok(SubjectCurve {
            spec: self,
            subject,
        })
    }

    fn pop_rows(&self, x: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let b = eval_basis(&[x], &self.kv_pop)?.into_values();
        let fixed = &b * &self.u0;
        let random = &b * &self.u_plus;
        Ok((
            DVector::from_column_slice(fixed.as_slice()),
            DVector::from_column_slice(random.as_slice()),
        ))
    }

    fn subj_row(&self, x: f64, subject: usize) -> Result<DVector<f64>> {
        let b = eval_basis(&[x], &self.kv_subj)?.into_values();
        let mut row = DVector::zeros(self.m * self.d_subj);
        row.rows_mut(subject * self.d_subj, self.d_subj)
            .copy_from(&b.transpose());
        Ok(row)
    }
}

/// Eigendecomposition split of the difference penalty `D_q' D_q`.
pub(crate) struct PenaltySplit {
    pub u0: DMatrix<f64>,
    pub u_plus: DMatrix<f64>,
    pub sigma_plus: DVector<f64>,
}

pub(crate) fn penalty_split(q: usize, d: usize) -> Result<PenaltySplit> {
    let dm = diff_matrix(q, d)?;
    let gram = dm.values().transpose() * dm.values();
    let se = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let max_eig = se.eigenvalues[order[d - 1]];
    let n_null = order
        .iter()
        .filter(|&&i| se.eigenvalues[i] <= NULL_EIG_TOL * max_eig)
        .count();
    if n_null != q {
        return Err(SopError::SingularSystem {
            context: format!(
                "difference penalty of order {q} on {d} coefficients produced a \
                 null space of dimension {n_null}"
            ),
        });
    }
    let mut u = DMatrix::zeros(d, d);
    let mut vals = DVector::zeros(d);
    for (pos, &i) in order.iter().enumerate() {
        let mut col = se.eigenvectors.column(i).into_owned();
        let mut arg = 0;
        for r in 1..d {
            if col[r].abs() > col[arg].abs() {
                arg = r;
            }
        }
        if col[arg] < 0.0 {
            col.neg_mut();
        }
        u.set_column(pos, &col);
        vals[pos] = se.eigenvalues[i];
    }
    Ok(PenaltySplit {
        u0: u.columns(0, q).into_owned(),
        u_plus: u.columns(q, d - q).into_owned(),
        sigma_plus: DVector::from_fn(d - q, |i, _| vals[q + i]),
    })
}

struct PanelParts {
    s: usize,
    m: usize,
    kv_pop: KnotVector,
    kv_subj: KnotVector,
    bu0: DMatrix<f64>,
    bup: DMatrix<f64>,
    b_subj: DMatrix<f64>,
    split: PenaltySplit,
}

fn panel_parts(
    t: &[f64],
    y_panel: &DMatrix<f64>,
    d: usize,
    d_subj: usize,
    q: usize,
    q_subj: usize,
) -> Result<PanelParts> {
    let s = t.len();
    if y_panel.nrows() != s {
        return Err(SopError::DimensionMismatch(format!(
            "panel has {} rows for {} time points",
            y_panel.nrows(),
            s
        )));
    }
    let m = y_panel.ncols();
    if m < 2 {
        return Err(SopError::InvalidArgument(
            "at least two subjects are required to separate the shared curve \
             from subject deviations"
                .into(),
        ));
    }
    for (name, basis, order) in [("population", d, q), ("subject", d_subj, q_subj)] {
        if basis < 4 {
            return Err(SopError::InvalidArgument(format!(
                "{name} basis needs at least 4 functions for a cubic basis, got {basis}"
            )));
        }
        if order == 0 || order >= basis {
            return Err(SopError::InvalidArgument(format!(
                "{name} penalty order {order} is out of range for {basis} basis functions"
            )));
        }
    }
    let (t_min, t_max) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let kv_pop = make_knots(t_min, t_max, d - 3, 3)?;
    let kv_subj = make_knots(t_min, t_max, d_subj - 3, 3)?;
    let b_pop = eval_basis(t, &kv_pop)?.into_values();
    let b_subj = eval_basis(t, &kv_subj)?.into_values();
    let split = penalty_split(q, d)?;
    let bu0 = &b_pop * &split.u0;
    let bup = &b_pop * &split.u_plus;
    Ok(PanelParts {
        s,
        m,
        kv_pop,
        kv_subj,
        bu0,
        bup,
        b_subj,
        split,
    })
}

/// Stack `m` copies of a per-subject matrix, subjects outermost.
fn stack_subjects(base: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let s = base.nrows();
    DMatrix::from_fn(s * m, base.ncols(), |i, j| base[(i % s, j)])
}

/// Rows of subjects in the given group get the base matrix, others zero.
fn spread_group(base: &DMatrix<f64>, groups: &[u8], group: u8) -> DMatrix<f64> {
    let s = base.nrows();
    DMatrix::from_fn(s * groups.len(), base.ncols(), |i, j| {
        if groups[i / s] == group {
            base[(i % s, j)]
        } else {
            0.0
        }
    })
}

fn subject_block(b_subj: &DMatrix<f64>, m: usize, q_subj: usize) -> Result<RandomBlock> {
    let s = b_subj.nrows();
    let dd = b_subj.ncols();
    let z = DMatrix::from_fn(s * m, m * dd, |i, j| {
        if i / s == j / dd {
            b_subj[(i % s, j % dd)]
        } else {
            0.0
        }
    });
    let pen = diff_matrix(q_subj, dd)?;
    let gram = pen.values().transpose() * pen.values();
    let smooth = DMatrix::from_fn(m * dd, m * dd, |i, j| {
        if i / dd == j / dd {
            gram[(i % dd, j % dd)]
        } else {
            0.0
        }
    });
    let ridge = DMatrix::identity(m * dd, m * dd);
    RandomBlock::new(
        z,
        vec![smooth, ridge],
        vec!["subject_smooth".into(), "subject_ridge".into()],
    )
}

fn panel_response(y_panel: &DMatrix<f64>) -> DVector<f64> {
    // Column-major storage matches subject-major stacking.
    DVector::from_column_slice(y_panel.as_slice())
}

/// Assemble the shared-curve hierarchical model for a balanced panel.
///
/// `t` is the common time grid; column `j` of `y_panel` holds subject `j`.
/// `d` and `d_subj` are the population and subject cubic basis sizes, `q`
/// and `q_subj` the difference-penalty orders. Produces one fixed block of
/// dimension `q` and two random blocks: the penalized population directions
/// (single atom) and the per-subject deviations (difference atom plus
/// ridge atom).
pub fn hierarchical_m0_spec(
    t: &[f64],
    y_panel: &DMatrix<f64>,
    family: Family,
    d: usize,
    d_subj: usize,
    q: usize,
    q_subj: usize,
) -> Result<(MixedModelSpec, HierarchicalSpec)> {
    let parts = panel_parts(t, y_panel, d, d_subj, q, q_subj)?;
    let x = stack_subjects(&parts.bu0, parts.m);
    let z1 = stack_subjects(&parts.bup, parts.m);
    let pop_block = RandomBlock::new(
        z1,
        vec![DMatrix::from_diagonal(&parts.split.sigma_plus)],
        vec!["population".into()],
    )?;
    let subj_block = subject_block(&parts.b_subj, parts.m, q_subj)?;
    let spec = MixedModelSpec::new(
        x,
        vec![pop_block, subj_block],
        family,
        panel_response(y_panel),
    )?;
    Ok((
        spec,
        HierarchicalSpec {
            d,
            d_subj,
            q,
            q_subj,
            m: parts.m,
            s: parts.s,
            kv_pop: parts.kv_pop,
            kv_subj: parts.kv_subj,
            u0: parts.split.u0,
            u_plus: parts.split.u_plus,
            sigma_plus: parts.split.sigma_plus,
            groups: None,
        },
    ))
}

/// Assemble the factor-by-curve model: one curve per group (labels 0/1,
/// group-0 subjects first) plus per-subject deviations shared across groups.
pub fn factor_by_curve_spec(
    t: &[f64],
    y_panel: &DMatrix<f64>,
    groups: &[u8],
    family: Family,
    d: usize,
    d_subj: usize,
    q: usize,
    q_subj: usize,
) -> Result<(MixedModelSpec, HierarchicalSpec)> {
    let parts = panel_parts(t, y_panel, d, d_subj, q, q_subj)?;
    if groups.len() != parts.m {
        return Err(SopError::DimensionMismatch(format!(
            "{} group labels for {} subjects",
            groups.len(),
            parts.m
        )));
    }
    if let Some(bad) = groups.iter().find(|&&g| g > 1) {
        return Err(SopError::InvalidArgument(format!(
            "group labels must be 0 or 1, found {bad}"
        )));
    }
    let m0 = groups.iter().filter(|&&g| g == 0).count();
    let m1 = parts.m - m0;
    if m0 == 0 || m1 == 0 {
        return Err(SopError::InvalidArgument(
            "both groups must contain at least one subject".into(),
        ));
    }
    if groups.windows(2).any(|w| w[0] > w[1]) {
        return Err(SopError::InvalidArgument(
            "subjects must be ordered with every group-0 subject before group-1; \
             sort the panel columns first"
                .into(),
        ));
    }

    let q_dim = parts.bu0.ncols();
    // Fixed design: the group contrast places each subject's polynomial
    // rows in its own column block (controls in the first).
    let x = DMatrix::from_fn(parts.s * parts.m, 2 * q_dim, |i, j| {
        let g = groups[i / parts.s] as usize;
        if j / q_dim == g {
            parts.bu0[(i % parts.s, j % q_dim)]
        } else {
            0.0
        }
    });
    let atom = DMatrix::from_diagonal(&parts.split.sigma_plus);
    let block_g0 = RandomBlock::new(
        spread_group(&parts.bup, groups, 0),
        vec![atom.clone()],
        vec!["group0".into()],
    )?;
    let block_g1 = RandomBlock::new(
        spread_group(&parts.bup, groups, 1),
        vec![atom],
        vec!["group1".into()],
    )?;
    let subj_block = subject_block(&parts.b_subj, parts.m, q_subj)?;
    let spec = MixedModelSpec::new(
        x,
        vec![block_g0, block_g1, subj_block],
        family,
        panel_response(y_panel),
    )?;
    Ok((
        spec,
        HierarchicalSpec {
            d,
            d_subj,
            q,
            q_subj,
            m: parts.m,
            s: parts.s,
            kv_pop: parts.kv_pop,
            kv_subj: parts.kv_subj,
            u0: parts.split.u0,
            u_plus: parts.split.u_plus,
            sigma_plus: parts.split.sigma_plus,
            groups: Some(groups.to_vec()),
        },
    ))
}

/// The shared curve of a plain hierarchical model.
pub struct PopulationCurve<'a> {
    spec: &'a HierarchicalSpec,
}

impl CurveDesign for PopulationCurve<'_> {
    fn design_rows(&self, x: f64) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let (fixed, pop) = self.spec.pop_rows(x)?;
        let subj = DVector::zeros(self.spec.m * self.spec.d_subj);
        Ok((fixed, vec![pop, subj]))
    }
}

/// One group's curve of a factor-by-curve model.
pub struct GroupCurve<'a> {
    spec: &'a HierarchicalSpec,
    group: u8,
}

impl CurveDesign for GroupCurve<'_> {
    fn design_rows(&self, x: f64) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let (bu0, bup) = self.spec.pop_rows(x)?;
        let q = bu0.len();
        let mut fixed = DVector::zeros(2 * q);
        fixed
            .rows_mut(self.group as usize * q, q)
            .copy_from(&bu0);
        let zero = DVector::zeros(bup.len());
        let (r0, r1) = if self.group == 0 {
            (bup, zero)
        } else {
            (zero, bup)
        };
        let subj = DVector::zeros(self.spec.m * self.spec.d_subj);
        Ok((fixed, vec![r0, r1, subj]))
    }
}

/// One subject's full curve: its population or group curve plus deviation.
pub struct SubjectCurve<'a> {
    spec: &'a HierarchicalSpec,
    subject: usize,
}

impl CurveDesign for SubjectCurve<'_> {
    fn design_rows(&self, x: f64) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let subj = self.spec.subj_row(x, self.subject)?;
        match &self.spec.groups {
            None => {
                let (fixed, pop) = self.spec.pop_rows(x)?;
                Ok((fixed, vec![pop, subj]))
            }
            Some(groups) => {
                let g = groups[self.subject];
                let (fixed, mut rows) = GroupCurve {
                    spec: self.spec,
                    group: g,
                }
                .design_rows(x)?;
                rows[2] = subj;
                Ok((fixed, rows))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linspace(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn toy_panel(s: usize, m: usize) -> (Vec<f64>, DMatrix<f64>) {
        let t = linspace(s);
        let y = DMatrix::from_fn(s, m, |i, j| {
            let ti = t[i];
            (2.0 * std::f64::consts::PI * ti).sin()
                + 0.3 * ((j + 1) as f64 * 0.7).sin() * (4.0 * ti).cos()
                + 0.05 * ((i * 7 + j * 3) % 11) as f64
        });
        (t, y)
    }

    #[test]
    fn penalty_split_separates_the_null_space() {
        for (q, d) in [(1usize, 8usize), (2, 12), (3, 9)] {
            let split = penalty_split(q, d).unwrap();
            let dm = diff_matrix(q, d).unwrap();
            let gram = dm.values().transpose() * dm.values();
            let null_image = &gram * &split.u0;
            assert_abs_diff_eq!(null_image, DMatrix::zeros(d, q), epsilon = 1e-10);
            let orth = split.u_plus.transpose() * &split.u_plus;
            assert_abs_diff_eq!(orth, DMatrix::identity(d - q, d - q), epsilon = 1e-10);
            assert!(split.sigma_plus.iter().all(|&v| v > 0.0));
            // Reconstruction of the full penalty from the split.
            let rebuilt = &split.u_plus
                * DMatrix::from_diagonal(&split.sigma_plus)
                * split.u_plus.transpose();
            assert_abs_diff_eq!(rebuilt, gram, epsilon = 1e-8);
        }
    }

    #[test]
    fn shared_curve_model_has_the_documented_shape() {
        let (t, y) = toy_panel(25, 6);
        let (spec, hspec) =
            hierarchical_m0_spec(&t, &y, Family::gaussian(), 11, 7, 2, 2).unwrap();
        assert_eq!(spec.rank_x(), 2);
        assert_eq!(spec.n_blocks(), 2);
        assert_eq!(spec.block(0).q(), 9);
        assert_eq!(spec.block(0).p(), 1);
        assert!(spec.block(0).all_diagonal());
        assert_eq!(spec.block(1).q(), 42);
        assert_eq!(spec.block(1).p(), 2);
        assert_eq!(spec.n(), 150);
        assert_eq!(hspec.m(), 6);
        assert_eq!(hspec.s(), 25);

        // Subject-major stacking: the first subject occupies the first s rows.
        for i in 0..25 {
            assert_eq!(spec.y()[i], y[(i, 0)]);
            assert_eq!(spec.y()[25 + i], y[(i, 1)]);
        }
        // The subject design is block diagonal.
        let z2 = spec.block(1).z();
        assert_eq!(z2[(0, 0 + 3)], z2[(25, 7 + 3)]);
        assert_eq!(z2[(0, 7)], 0.0);
    }

    #[test]
    fn dti_scale_coefficient_count() {
        let (t, y) = toy_panel(93, 99);
        let (spec, _) = hierarchical_m0_spec(&t, &y, Family::gaussian(), 43, 23, 2, 2).unwrap();
        assert_eq!(spec.rank_x() + spec.q_total(), 2320);
        assert_eq!(spec.q_total(), 41 + 23 * 99);
    }

    #[test]
    fn factor_scale_coefficient_count() {
        let (t, y) = toy_panel(12, 141);
        let groups: Vec<u8> = (0..141).map(|j| u8::from(j >= 42)).collect();
        let (spec, hspec) =
            factor_by_curve_spec(&t, &y, &groups, Family::gaussian(), 43, 23, 2, 2).unwrap();
        assert_eq!(spec.rank_x() + spec.q_total(), 3329);
        assert_eq!(spec.rank_x(), 4);
        assert_eq!(spec.n_blocks(), 3);
        assert_eq!(hspec.groups().unwrap().len(), 141);
    }

    #[test]
    fn group_rows_partition_the_fixed_design() {
        let (t, y) = toy_panel(15, 5);
        let groups = [0u8, 0, 1, 1, 1];
        let (spec, _) =
            factor_by_curve_spec(&t, &y, &groups, Family::gaussian(), 9, 6, 2, 2).unwrap();
        let x = spec.x();
        // Control rows live in the first column block only.
        for i in 0..30 {
            assert_eq!(x[(i, 2)], 0.0);
            assert_eq!(x[(i, 3)], 0.0);
        }
        // Case rows live in the second block only.
        for i in 30..75 {
            assert_eq!(x[(i, 0)], 0.0);
            assert_eq!(x[(i, 1)], 0.0);
        }
        // Group design blocks are complementary.
        let z0 = spec.block(0).z();
        let z1 = spec.block(1).z();
        for i in 0..75 {
            let r0: f64 = z0.row(i).amax();
            let r1: f64 = z1.row(i).amax();
            if i < 30 {
                assert!(r0 > 0.0 && r1 == 0.0);
            } else {
                assert!(r0 == 0.0 && r1 > 0.0);
            }
        }
    }

    #[test]
    fn bad_panels_are_rejected() {
        let (t, y) = toy_panel(15, 5);
        // One subject.
        let single = y.columns(0, 1).into_owned();
        assert!(hierarchical_m0_spec(&t, &single, Family::gaussian(), 9, 6, 2, 2).is_err());
        // Unsorted groups.
        let unsorted = [0u8, 1, 0, 1, 1];
        assert!(
            factor_by_curve_spec(&t, &y, &unsorted, Family::gaussian(), 9, 6, 2, 2).is_err()
        );
        // Bad label value.
        let bad = [0u8, 0, 1, 1, 2];
        assert!(factor_by_curve_spec(&t, &y, &bad, Family::gaussian(), 9, 6, 2, 2).is_err());
        // Empty group.
        let empty = [0u8, 0, 0, 0, 0];
        assert!(factor_by_curve_spec(&t, &y, &empty, Family::gaussian(), 9, 6, 2, 2).is_err());
        // Wrong panel height.
        assert!(hierarchical_m0_spec(&t[..14], &y, Family::gaussian(), 9, 6, 2, 2).is_err());
    }

    #[test]
    fn design_rows_match_training_rows() {
        let (t, y) = toy_panel(20, 4);
        let (spec, hspec) =
            hierarchical_m0_spec(&t, &y, Family::gaussian(), 10, 6, 2, 2).unwrap();
        // Subject 2's curve rows at training point 5 equal design row 2*s+5.
        let subject = hspec.subject_curve(2).unwrap();
        let (fixed, random) = subject.design_rows(t[5]).unwrap();
        let row = 2 * 20 + 5;
        assert_abs_diff_eq!(
            fixed,
            spec.x().row(row).transpose().into_owned(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            random[0],
            spec.block(0).z().row(row).transpose().into_owned(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            random[1],
            spec.block(1).z().row(row).transpose().into_owned(),
            epsilon = 1e-12
        );
        // The population curve shares the fixed and first random rows.
        let pop = hspec.population_curve().unwrap();
        let (pf, pr) = pop.design_rows(t[5]).unwrap();
        assert_abs_diff_eq!(pf, fixed, epsilon = 1e-12);
        assert_abs_diff_eq!(pr[0], random[0], epsilon = 1e-12);
        assert_eq!(pr[1].amax(), 0.0);
    }

    #[test]
    fn factor_design_rows_match_training_rows() {
        let (t, y) = toy_panel(15, 5);
        let groups = [0u8, 0, 1, 1, 1];
        let (spec, hspec) =
            factor_by_curve_spec(&t, &y, &groups, Family::gaussian(), 9, 6, 2, 2).unwrap();
        // Subject 3 belongs to group 1; check at training point 7.
        let subject = hspec.subject_curve(3).unwrap();
        let (fixed, random) = subject.design_rows(t[7]).unwrap();
        let row = 3 * 15 + 7;
        assert_abs_diff_eq!(
            fixed,
            spec.x().row(row).transpose().into_owned(),
            epsilon = 1e-12
        );
        for k in 0..3 {
            assert_abs_diff_eq!(
                random[k],
                spec.block(k).z().row(row).transpose().into_owned(),
                epsilon = 1e-12
            );
        }
        let wrong_way = hspec.population_curve();
        assert!(wrong_way.is_err());
        assert!(hspec.group_curve(2).is_err());
        assert!(hspec.group_curve(1).is_ok());
    }
}
