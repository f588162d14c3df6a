//! Response distributions, link functions and dispersion handling.

use crate::error::{Result, SopError};

/// Margin kept between a mean and the boundary of its valid range.
const MEAN_BOUNDARY_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Gaussian,
    Poisson,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Log,
    Logit,
}

/// Whether the dispersion parameter is fixed or estimated alongside the
/// variance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiSpec {
    Known(f64),
    Estimated,
}

/// Distribution, link and dispersion handling for one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family {
    pub kind: FamilyKind,
    pub link: Link,
    pub phi: PhiSpec,
}

impl Family {
    /// Gaussian response with identity link; dispersion estimated.
    pub fn gaussian() -> Self {
        Family {
            kind: FamilyKind::Gaussian,
            link: Link::Identity,
            phi: PhiSpec::Estimated,
        }
    }

    /// Poisson counts with log link; dispersion fixed at 1.
    pub fn poisson() -> Self {
        Family {
            kind: FamilyKind::Poisson,
            link: Link::Log,
            phi: PhiSpec::Known(1.0),
        }
    }

    /// Binomial proportions with logit link; dispersion fixed at 1.
    pub fn binomial() -> Self {
        Family {
            kind: FamilyKind::Binomial,
            link: Link::Logit,
            phi: PhiSpec::Known(1.0),
        }
    }

    pub fn with_phi(mut self, phi: PhiSpec) -> Self {
        self.phi = phi;
        self
    }

    pub fn estimates_phi(&self) -> bool {
        matches!(self.phi, PhiSpec::Estimated)
    }

    pub fn initial_phi(&self) -> f64 {
        match self.phi {
            PhiSpec::Known(v) => v,
            PhiSpec::Estimated => 1.0,
        }
    }

    /// g(mu).
    pub fn link(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
        }
    }

    /// g^{-1}(eta).
    pub fn inv_link(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    /// g'(mu).
    pub fn d_link(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => 1.0,
            Link::Log => 1.0 / mu,
            Link::Logit => 1.0 / (mu * (1.0 - mu)),
        }
    }

    /// Variance function nu(mu).
    pub fn variance(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Poisson => mu,
            FamilyKind::Binomial => mu * (1.0 - mu),
        }
    }

    /// Check that a mean lies strictly inside the family's valid range.
    pub fn check_mean(&self, index: usize, mu: f64) -> Result<()> {
        let valid = match self.kind {
            FamilyKind::Gaussian => mu.is_finite(),
            FamilyKind::Poisson => mu.is_finite() && mu > MEAN_BOUNDARY_EPS,
            FamilyKind::Binomial => {
                mu.is_finite() && mu > MEAN_BOUNDARY_EPS && mu < 1.0 - MEAN_BOUNDARY_EPS
            }
        };
        // Links require their own positivity regardless of distribution.
        let valid = valid
            && match self.link {
                Link::Identity => true,
                Link::Log => mu > MEAN_BOUNDARY_EPS,
                Link::Logit => mu > MEAN_BOUNDARY_EPS && mu < 1.0 - MEAN_BOUNDARY_EPS,
            };
        if valid {
            Ok(())
        } else {
            Err(SopError::DegenerateMean { index, mu })
        }
    }

    /// Starting means for the outer fitting loop.
    ///
    /// Gaussian starts at the data, Poisson shifts counts off zero, and
    /// Binomial shrinks proportions toward one half.
    pub fn initial_mean(&self, y: f64, trials: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => y,
            FamilyKind::Poisson => y + 0.1,
            FamilyKind::Binomial => (y * trials + 0.5) / (trials + 1.0),
        }
    }
}
