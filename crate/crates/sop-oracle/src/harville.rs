//! Literal transcription of the classic one-variance-per-block REML
//! iteration for Gaussian identity-link models.
//!
//! Every quantity is evaluated through dense n-by-n or q-by-q matrices:
//! closed-form GLS coefficients, effective dimensions via
//! `ED_k = q_k - trace(T_kk)` with `T = (I + Z'SZG)^-1`, and the marginal
//! restricted deviance. The update ordering and stopping rule are the same
//! as the production loop so the two iterate sequences can be compared
//! entry by entry.

use nalgebra::DVector;
use sop_core::{FamilyKind, Link, MixedModelSpec, VarianceState};

use crate::dense::{dense_model, t_matrix};

/// Per-iteration record of the literal algorithm.
pub struct HarvilleTrace {
    /// State ahead of each solve, starting from the all-ones initial state.
    pub states: Vec<VarianceState>,
    /// Restricted deviance at each of those states.
    pub deviances: Vec<f64>,
    pub converged: bool,
}

/// Run the literal iteration. The model must be Gaussian with identity link,
/// estimated dispersion, no offset, and every block isotropic with a single
/// identity atom.
pub fn harville_iterates(spec: &MixedModelSpec, max_iter: usize, tol: f64) -> HarvilleTrace {
    assert!(
        spec.family().kind == FamilyKind::Gaussian && spec.family().link == Link::Identity,
        "the literal iteration is defined for Gaussian identity models"
    );
    assert!(spec.offset().is_none(), "offsets are not handled here");
    for block in spec.blocks() {
        assert_eq!(block.p(), 1, "every block must carry a single variance");
    }

    let n = spec.n();
    let r = spec.rank_x();
    let z_resp = spec.y().clone();
    let w = DVector::<f64>::repeat(n, 1.0);

    let mut state = VarianceState::initial(spec);
    let mut states = Vec::new();
    let mut deviances = Vec::new();
    let mut prev_dev: Option<f64> = None;
    let mut converged = false;

    for _ in 0..max_iter {
        states.push(state.clone());
        let dm = dense_model(spec, &state, &w);
        let dev = dm.reml(spec, &z_resp);
        deviances.push(dev);
        if let Some(pd) = prev_dev {
            if (pd - dev).abs() <= tol * (1.0 + dev.abs()) {
                converged = true;
                break;
            }
        }

        let alpha = dm.alpha_hat(spec, &z_resp);
        let fitted = dm.fitted(spec, &z_resp);
        let (t, ranges) = t_matrix(spec, &state, &w);

        let mut ed_total = 0.0;
        let mut next = state.clone();
        for (k, block) in spec.blocks().iter().enumerate() {
            let tr_tkk = ranges[k].clone().map(|i| t[(i, i)]).sum::<f64>();
            let ed = block.q() as f64 - tr_tkk;
            ed_total += ed;
            next.sigma2[k][0] = alpha[k].dot(&alpha[k]) / ed;
        }
        let resid = &z_resp - fitted;
        next.phi = resid.dot(&resid) / (n as f64 - r as f64 - ed_total);
        state = next;
        prev_dev = Some(dev);
    }

    HarvilleTrace {
        states,
        deviances,
        converged,
    }
}
