//! Material parameters and the scalar functions derived from the bulk
//! potential.
//!
//! Everything downstream is driven by the triple (a², b², c²) and the four
//! scalars F, f, f̂, f̃ built from it.  The rescaling map exposes the fact
//! that only one parameter is independent: fixing the pair (b², c²) by a
//! rescaling of amplitude and length turns a² into the single scan knob
//! (a reduced temperature).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter {name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("parameter {name} must be nonnegative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("parameter c2 must be strictly positive, got {0}")]
    NonPositiveC2(f64),
}

/// Material constants of the bulk potential, dimensionless.
///
/// `a2 = 0` is allowed and flags the reference profile; `b2 = 0` is allowed
/// as the limit case discussed alongside the deep-nematic regime; `c2` must
/// be strictly positive for the potential to be bounded below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    a2: f64,
    b2: f64,
    c2: f64,
}

impl Params {
    pub fn new(a2: f64, b2: f64, c2: f64) -> Result<Self, ModelError> {
        for (name, value) in [("a2", a2), ("b2", b2), ("c2", c2)] {
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name, value });
            }
        }
        if a2 < 0.0 {
            return Err(ModelError::Negative { name: "a2", value: a2 });
        }
        if b2 < 0.0 {
            return Err(ModelError::Negative { name: "b2", value: b2 });
        }
        if c2 <= 0.0 {
            return Err(ModelError::NonPositiveC2(c2));
        }
        Ok(Params { a2, b2, c2 })
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `a2 == 0` solves the reference equation whose profile bounds every
    /// other profile from below.
    pub fn is_reference_mode(&self) -> bool {
        self.a2 == 0.0
    }

    /// s₊ = (b² + √(b⁴ + 24 a² c²)) / (4c²), the amplitude of the uniaxial
    /// minimizers of the bulk potential; the boundary value at infinity.
    pub fn s_plus(&self) -> f64 {
        (self.b2 + (self.b2 * self.b2 + 24.0 * self.a2 * self.c2).sqrt()) / (4.0 * self.c2)
    }

    /// Right-hand side of the profile equation:
    /// F(u) = −a²u − (b²/3)u² + (2c²/3)u³.
    pub fn bulk_big_f(&self, u: f64) -> f64 {
        u * self.bulk_f(u)
    }

    /// f(u) = F(u)/u, extended through u = 0 by its polynomial value −a²
    /// (F is divisible by u, so no special-casing is needed numerically).
    pub fn bulk_f(&self, u: f64) -> f64 {
        -self.a2 - self.b2 / 3.0 * u + 2.0 * self.c2 / 3.0 * u * u
    }

    /// f̂(u) = F′(u) = −a² − (2b²/3)u + 2c²u².
    pub fn bulk_f_hat(&self, u: f64) -> f64 {
        -self.a2 - 2.0 * self.b2 / 3.0 * u + 2.0 * self.c2 * u * u
    }

    /// f̃(u) = −a² + (2b²/3)u + (2c²/3)u².
    pub fn bulk_f_tilde(&self, u: f64) -> f64 {
        -self.a2 + 2.0 * self.b2 / 3.0 * u + 2.0 * self.c2 / 3.0 * u * u
    }

    /// Linearized decay rate of s₊ − u(r) at infinity, √f̂(s₊).
    pub fn decay_rate(&self) -> f64 {
        self.bulk_f_hat(self.s_plus()).max(0.0).sqrt()
    }
}

/// Output of [`rescale_params`]: the new parameter triple together with the
/// amplitude factor λ and length factor μ of the map Q ↦ λ Q(·/μ).
#[derive(Debug, Clone, Copy)]
pub struct Rescaling {
    pub params: Params,
    pub lambda: f64,
    pub mu: f64,
}

/// Rescale (a², b², c²) so that the quadratic and quartic coefficients become
/// (target_b2, target_c2).
///
/// If u solves the profile equation for the original parameters then
/// λ·u(r/μ) solves it for the returned ones, with
/// λ = c²·target_b2 / (b²·target_c2) and μ² = b² / (λ·target_b2).
/// The new reduced temperature is a²/μ².
pub fn rescale_params(p: &Params, target_b2: f64, target_c2: f64) -> Result<Rescaling, ModelError> {
    if !(target_b2 > 0.0) {
        return Err(ModelError::Negative { name: "target_b2", value: target_b2 });
    }
    if !(target_c2 > 0.0) {
        return Err(ModelError::NonPositiveC2(target_c2));
    }
    if p.b2 == 0.0 {
        // the two constraint equations degenerate; the b² = 0 limit family
        // only admits rescalings with target_b2 = 0, which we do not expose
        return Err(ModelError::Negative { name: "b2 (rescaling requires b2 > 0)", value: 0.0 });
    }
    let lambda = p.c2 * target_b2 / (p.b2 * target_c2);
    let mu2 = p.b2 / (lambda * target_b2);
    let mu = mu2.sqrt();
    let params = Params::new(p.a2 / mu2, target_b2, target_c2)?;
    Ok(Rescaling { params, lambda, mu })
}
