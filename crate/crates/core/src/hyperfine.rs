//! Hole-spin dephasing from frozen Gaussian nuclear-field fluctuations.
//!
//! Only the isotropic M1 part of the dipole-dipole hyperfine coupling is
//! kept, and B^2 corrections to the nuclear Larmor shift are dropped. The
//! variance has two pieces: one set by the f^2 g^2 overlap of the acceptor
//! envelope (present without strain) and one set by the strain-induced
//! heavy/light mixing, proportional to (Delta1/Delta0)^2.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{HyperfineParams, PhysicalConstants, ELEMENTARY_CHARGE};

/// Gaussian decay time of the transverse pseudospin, or no decay at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum T2Star {
    /// Seconds.
    Finite(f64),
    /// Zero fluctuation variance.
    NoDephasing,
}

impl T2Star {
    pub fn seconds(self) -> Option<f64> {
        match self {
            T2Star::Finite(t) => Some(t),
            T2Star::NoDephasing => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfineResult {
    /// (rad/s)^2 from the f^2 g^2 term.
    pub term_mixing_free: f64,
    /// (rad/s)^2 from the (Delta1/Delta0)^2 f^4 term.
    pub term_strain: f64,
    pub sigma_sq_total: f64,
    /// T2* from each term alone: (mixing-free, strain).
    pub t2_star_each: (T2Star, T2Star),
    pub t2_star_total: T2Star,
}

/// Variance of the nuclear contribution to the hole Larmor frequency,
/// <Omega^2> = v0 I(I+1)(C_As^2 + C_Ga^2)/(9 pi hbar^2)
///             * int dr r^2 [2 f^2 g^2 / 5 + 3 (Delta1/Delta0)^2 f^4 / 4].
pub fn omega_sq(h: &HyperfineParams, c: &PhysicalConstants) -> Result<HyperfineResult> {
    if !(h.bohr_radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "acceptor Bohr radius must be > 0, got {}",
            h.bohr_radius
        )));
    }
    let c_as = h.c_as * ELEMENTARY_CHARGE;
    let c_ga = h.c_ga * ELEMENTARY_CHARGE;
    let i = h.nuclear_spin;
    let prefactor =
        c.v0() * i * (i + 1.0) * (c_as * c_as + c_ga * c_ga) / (9.0 * PI * c.hbar * c.hbar);
    let term_mixing_free = prefactor * 0.4 * h.int_f2g2_si();
    let term_strain = prefactor * 0.75 * h.mixing_ratio * h.mixing_ratio * h.int_f4_si();
    let sigma_sq_total = term_mixing_free + term_strain;
    Ok(HyperfineResult {
        term_mixing_free,
        term_strain,
        sigma_sq_total,
        t2_star_each: (t2_star(term_mixing_free)?, t2_star(term_strain)?),
        t2_star_total: t2_star(sigma_sq_total)?,
    })
}

/// T2* = sqrt(2) / sqrt(<Omega^2>) for a Gaussian nuclear field.
pub fn t2_star(sigma_sq: f64) -> Result<T2Star> {
    if sigma_sq < 0.0 || !sigma_sq.is_finite() {
        return Err(Error::InvalidInput(format!(
            "fluctuation variance must be finite and >= 0, got {sigma_sq}"
        )));
    }
    if sigma_sq == 0.0 {
        return Ok(T2Star::NoDephasing);
    }
    Ok(T2Star::Finite((2.0 / sigma_sq).sqrt()))
}

/// Bohr radius at which the mixing-free term alone gives `target` T2* (s).
///
/// T2* scales as a_B^{3/2}, so this inverts directly.
pub fn bohr_radius_for_t2_star(
    h: &HyperfineParams,
    c: &PhysicalConstants,
    target: f64,
) -> Result<f64> {
    let probe = HyperfineParams {
        bohr_radius: 1.0,
        ..*h
    };
    let at_unit = omega_sq(&probe, c)?.term_mixing_free;
    if at_unit == 0.0 {
        return Err(Error::InvalidInput("hyperfine constants are zero".into()));
    }
    // sigma^2 = at_unit / a^3 = 2 / target^2
    Ok((at_unit * target * target / 2.0).cbrt())
}
