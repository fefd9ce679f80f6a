//! Strained acceptor-bound hole: the F = 3/2 ground quadruplet under biaxial
//! strain, in-plane strain anisotropy and an in-plane field B || x.
//!
//! Everything here uses the hole representation. The basis order is fixed as
//! |+3/2>, |+1/2>, |-1/2>, |-3/2> with standard angular-momentum matrices.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::{MaterialParams, PhysicalConstants};

/// Largest |Delta1|/Delta0 and |g0 mu_B B|/Delta0 accepted by the doublet
/// extraction.
pub const REGIME_RATIO: f64 = 0.25;

/// Minimum |+-3/2> weight for a state to count as heavy-hole like.
pub const HEAVY_WEIGHT_THRESHOLD: f64 = 0.6;

const SMALL_STRAIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainState {
    pub u_xx: f64,
    pub u_yy: f64,
    pub u_xy: f64,
    /// Band-gap shift the strain was inferred from, eV.
    pub delta_e: Option<f64>,
}

impl StrainState {
    pub fn new(u_xx: f64, u_yy: f64, u_xy: f64) -> Result<Self> {
        for (key, u) in [("u_xx", u_xx), ("u_yy", u_yy), ("u_xy", u_xy)] {
            if !u.is_finite() || u.abs() >= SMALL_STRAIN {
                return Err(Error::validation(
                    key,
                    format!("|{key}| must be below {SMALL_STRAIN} (small-strain regime), got {u}"),
                ));
            }
        }
        Ok(StrainState {
            u_xx,
            u_yy,
            u_xy,
            delta_e: None,
        })
    }

    /// Isotropic biaxial strain u_xx = u_yy inferred from a band-gap shift.
    pub fn from_shift(delta_e: f64, m: &MaterialParams) -> Result<Self> {
        let u = strain_from_shift(delta_e, m)?;
        let mut s = StrainState::new(u, u, 0.0)?;
        s.delta_e = Some(delta_e);
        Ok(s)
    }
}

/// In-plane strain from the band-gap shift,
/// dE = 2 (a_c - a_v)(1 - C12/C11) u_xx.
pub fn strain_from_shift(delta_e: f64, m: &MaterialParams) -> Result<f64> {
    if m.a_c == m.a_v {
        return Err(Error::DegenerateCoefficient("a_c equals a_v"));
    }
    if m.c_ratio == 1.0 {
        return Err(Error::DegenerateCoefficient("C12/C11 equals 1"));
    }
    Ok(delta_e / (2.0 * (m.a_c - m.a_v) * (1.0 - m.c_ratio)))
}

/// Heavy/light hole splitting E_hh - E_lh = 2 b (1 + 2 C12/C11) u_xx, eV.
pub fn hh_lh_splitting(u_xx: f64, m: &MaterialParams) -> f64 {
    2.0 * m.b * (1.0 + 2.0 * m.c_ratio) * u_xx
}

/// Anisotropic coupling Delta1 = -b' (u_xx - u_yy), eV.
pub fn delta1_from_strain(u_xx: f64, u_yy: f64, b_prime: f64) -> f64 {
    -b_prime * (u_xx - u_yy)
}

/// Perturbative in-plane heavy-hole g-factor, -3 Delta1 g0 / Delta0.
pub fn g_perp_perturbative(delta0: f64, delta1: f64, g0: f64) -> Result<f64> {
    if delta0 == 0.0 {
        return Err(Error::InvalidInput(
            "Delta0 = 0: transverse g-factor undefined".into(),
        ));
    }
    Ok(-3.0 * delta1 * g0 / delta0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleLevelStructure {
    /// hh-lh splitting, eV.
    pub delta0: f64,
    /// Anisotropic in-plane strain coupling, eV.
    pub delta1: f64,
    /// Bare acceptor hole g-factor.
    pub g0: f64,
    /// Field along x, T.
    pub field: f64,
}

impl HoleLevelStructure {
    fn check_regime(&self, consts: &PhysicalConstants) -> Result<()> {
        if !(self.delta0 > 0.0) {
            return Err(Error::Regime(format!(
                "Delta0 must be positive, got {}",
                self.delta0
            )));
        }
        if self.delta1.abs() > REGIME_RATIO * self.delta0 {
            return Err(Error::Regime(format!(
                "|Delta1|/Delta0 = {:.3} exceeds {REGIME_RATIO}",
                self.delta1.abs() / self.delta0
            )));
        }
        let zeeman = (self.g0 * consts.mu_b * self.field).abs();
        if zeeman > REGIME_RATIO * self.delta0 {
            return Err(Error::Regime(format!(
                "|g0 mu_B B|/Delta0 = {:.3} exceeds {REGIME_RATIO}",
                zeeman / self.delta0
            )));
        }
        Ok(())
    }
}

pub type Matrix4c = Matrix4<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Angular momentum matrices (F_x, F_y, F_z) for F = 3/2.
pub fn spin_three_halves() -> [Matrix4c; 3] {
    let s3 = 3f64.sqrt();
    // <m+1|F+|m>, basis index 0 = +3/2
    let mut fp = Matrix4c::zeros();
    fp[(0, 1)] = c(s3);
    fp[(1, 2)] = c(2.0);
    fp[(2, 3)] = c(s3);
    let fm = fp.adjoint();
    let fx = (fp + fm) * c(0.5);
    let fy = (fp - fm) * Complex64::new(0.0, -0.5);
    let fz = Matrix4c::from_diagonal(&Vector4::new(c(1.5), c(0.5), c(-0.5), c(-1.5)));
    [fx, fy, fz]
}

/// H = -(Delta0/2) F_z^2 + g0 mu_B B F_x + (Delta1/2)(F_x^2 - F_y^2), in eV.
pub fn build_hamiltonian(h: &HoleLevelStructure, consts: &PhysicalConstants) -> Matrix4c {
    let [fx, fy, fz] = spin_three_halves();
    fz * fz * c(-h.delta0 / 2.0)
        + fx * c(h.g0 * consts.mu_b * h.field)
        + (fx * fx - fy * fy) * c(h.delta1 / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinorState {
    /// Amplitudes on |+3/2>, |+1/2>, |-1/2>, |-3/2>.
    pub amplitudes: [Complex64; 4],
    /// eV.
    pub energy: f64,
}

impl SpinorState {
    pub fn heavy_weight(&self) -> f64 {
        self.amplitudes[0].norm_sqr() + self.amplitudes[3].norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    fn from_vector(v: Vector4<Complex64>, energy: f64) -> Self {
        // fix the global phase: first non-negligible amplitude real and >= 0,
        // starting from |+3/2>
        let pivot = v
            .iter()
            .copied()
            .find(|a| a.norm() > 1e-10)
            .unwrap_or(c(1.0));
        let phase = pivot.conj() / pivot.norm();
        let v = v * phase;
        SpinorState {
            amplitudes: [v[0], v[1], v[2], v[3]],
            energy,
        }
    }
}

/// The two Zeeman sublevels of the heavy-hole doublet.
///
/// `up` is the state whose |+3/2> and |-3/2> amplitudes enter with the same
/// sign, `down` the one where they enter with opposite signs. Their energies
/// satisfy `up.energy - down.energy = g_hh_perp mu_B B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavyDoublet {
    pub up: SpinorState,
    pub down: SpinorState,
}

impl HeavyDoublet {
    /// eps_up - eps_down, eV.
    pub fn splitting(&self) -> f64 {
        self.up.energy - self.down.energy
    }

    /// The pair ordered by energy, lower first.
    pub fn by_energy(&self) -> (SpinorState, SpinorState) {
        if self.up.energy <= self.down.energy {
            (self.up, self.down)
        } else {
            (self.down, self.up)
        }
    }
}

/// Diagonalizes the quadruplet Hamiltonian and returns the heavy-hole doublet.
pub fn heavy_hole_doublet(
    h: &HoleLevelStructure,
    consts: &PhysicalConstants,
) -> Result<HeavyDoublet> {
    h.check_regime(consts)?;
    let ham = build_hamiltonian(h, consts);
    let eig = SymmetricEigen::new(ham);

    let mut idx: Vec<usize> = (0..4).collect();
    let weight = |i: usize| {
        let col = eig.eigenvectors.column(i);
        col[0].norm_sqr() + col[3].norm_sqr()
    };
    idx.sort_by(|&a, &b| weight(b).total_cmp(&weight(a)));
    let (i, j) = (idx[0], idx[1]);
    for k in [i, j] {
        if weight(k) < HEAVY_WEIGHT_THRESHOLD {
            return Err(Error::Regime(format!(
                "heavy/light character ambiguous (|3/2| weight {:.3})",
                weight(k)
            )));
        }
    }

    let mut vi: Vector4<Complex64> = eig.eigenvectors.column(i).into();
    let mut vj: Vector4<Complex64> = eig.eigenvectors.column(j).into();
    let (ei, ej) = (eig.eigenvalues[i], eig.eigenvalues[j]);

    if (ei - ej).abs() <= 1e-12 * h.delta0 {
        // Degenerate pair: any basis of the span is an eigenbasis. Pick the
        // one diagonalizing |+3/2><-3/2| + h.c., i.e. symmetric and
        // antisymmetric heavy combinations.
        let parity = |a: &Vector4<Complex64>, b: &Vector4<Complex64>| {
            a[0].conj() * b[3] + a[3].conj() * b[0]
        };
        let m = Matrix2::new(
            parity(&vi, &vi),
            parity(&vi, &vj),
            parity(&vj, &vi),
            parity(&vj, &vj),
        );
        let e2 = SymmetricEigen::new(m);
        let rot = e2.eigenvectors;
        let ni = vi * rot[(0, 0)] + vj * rot[(1, 0)];
        let nj = vi * rot[(0, 1)] + vj * rot[(1, 1)];
        vi = ni;
        vj = nj;
    }

    let si = SpinorState::from_vector(vi, ei);
    let sj = SpinorState::from_vector(vj, ej);
    let sym = |s: &SpinorState| (s.amplitudes[0].conj() * s.amplitudes[3]).re;
    let (up, down) = if sym(&si) >= sym(&sj) {
        (si, sj)
    } else {
        (sj, si)
    };
    Ok(HeavyDoublet { up, down })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table() -> MaterialParams {
        MaterialParams::default()
    }

    #[test]
    fn strain_from_reference_shift() {
        let u = strain_from_shift(3.7e-3, &table()).unwrap();
        assert_relative_eq!(u, -4.06e-4, max_relative = 2e-3);
        assert_eq!(strain_from_shift(0.0, &table()).unwrap(), 0.0);
        // 2 (a_c - a_v)(1 - c) = -9.11968 eV
        let u = strain_from_shift(-9.1197e-3, &table()).unwrap();
        assert_relative_eq!(u, 1.000e-3, max_relative = 1e-4);
    }

    #[test]
    fn strain_degenerate_coefficients() {
        let mut m = table();
        m.a_v = m.a_c;
        assert!(matches!(
            strain_from_shift(1e-3, &m),
            Err(Error::DegenerateCoefficient(_))
        ));
        let mut m = table();
        m.c_ratio = 1.0;
        assert!(strain_from_shift(1e-3, &m).is_err());
    }

    #[test]
    fn splitting_values() {
        assert_relative_eq!(
            hh_lh_splitting(-4.06e-4, &table()),
            2.6e-3,
            max_relative = 0.02
        );
        assert_eq!(hh_lh_splitting(0.0, &table()), 0.0);
        // 2 (-1.7)(1.9052)(-1e-3) = 6.47768e-3
        assert_relative_eq!(
            hh_lh_splitting(-1e-3, &table()),
            6.478e-3,
            max_relative = 1e-4
        );
    }

    #[test]
    fn delta1_values() {
        assert_eq!(delta1_from_strain(1e-4, 1e-4, -1.7), 0.0);
        assert_relative_eq!(
            delta1_from_strain(-8e-5, 0.0, -1.7),
            -1.36e-4,
            max_relative = 1e-12
        );
        assert_eq!(delta1_from_strain(-8e-5, 0.0, 0.0), 0.0);
        let ratio = 1.36e-4 / hh_lh_splitting(-4.06e-4, &table());
        assert!((ratio - 0.05).abs() < 0.003, "{ratio}");
    }

    #[test]
    fn small_strain_regime_enforced() {
        assert!(StrainState::new(2e-2, 0.0, 0.0).is_err());
        let s = StrainState::from_shift(3.7e-3, &table()).unwrap();
        assert_eq!(s.u_xx, s.u_yy);
        assert_eq!(s.delta_e, Some(3.7e-3));
    }

    #[test]
    fn g_perp_examples() {
        assert_relative_eq!(
            g_perp_perturbative(1.0, 0.05, 1.0).unwrap(),
            -0.15,
            max_relative = 1e-14
        );
        assert_eq!(g_perp_perturbative(1.0, 0.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            g_perp_perturbative(1.0, -0.05, 1.0).unwrap(),
            0.15,
            max_relative = 1e-14
        );
        assert!(g_perp_perturbative(0.0, 0.05, 1.0).is_err());
    }

    #[test]
    fn angular_momentum_algebra() {
        let [fx, fy, fz] = spin_three_halves();
        let i = Complex64::new(0.0, 1.0);
        let comm = fx * fy - fy * fx - fz * i;
        assert!(comm.norm() < 1e-14);
        let casimir = fx * fx + fy * fy + fz * fz - Matrix4c::identity() * c(15.0 / 4.0);
        assert!(casimir.norm() < 1e-14);
        // F_x^2 - F_y^2 couples |+3/2> with |-1/2> and |-3/2> with |+1/2>
        let d = fx * fx - fy * fy;
        assert_relative_eq!(d[(0, 2)].re, 3f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(d[(1, 3)].re, 3f64.sqrt(), max_relative = 1e-14);
        assert!(d[(0, 3)].norm() < 1e-14 && d[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn zero_field_zero_anisotropy_spectrum() {
        let k = PhysicalConstants::default();
        let h = HoleLevelStructure {
            delta0: 2.6e-3,
            delta1: 0.0,
            g0: 1.0,
            field: 0.0,
        };
        let eig = SymmetricEigen::new(build_hamiltonian(&h, &k));
        let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        let d = h.delta0;
        for (got, want) in e
            .iter()
            .zip([-9.0 * d / 8.0, -9.0 * d / 8.0, -d / 8.0, -d / 8.0])
        {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        let pair = heavy_hole_doublet(&h, &k).unwrap();
        for s in [pair.up, pair.down] {
            assert!((s.heavy_weight() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isotropic_strain_splits_only_at_higher_order() {
        let k = PhysicalConstants::default();
        let h = HoleLevelStructure {
            delta0: 2.6e-3,
            delta1: 0.0,
            g0: 1.0,
            field: 7.0,
        };
        let pair = heavy_hole_doublet(&h, &k).unwrap();
        let zeeman = k.mu_b * 7.0;
        // no linear-in-B splitting; anything left is at most (g0 mu_B B)^2/Delta0
        assert!(pair.splitting().abs() < zeeman * zeeman / h.delta0);
        assert!(pair.splitting().abs() < 0.05 * zeeman);
    }

    /// Exact doublet energies from the two 2x2 blocks the Hamiltonian splits
    /// into under a pi rotation about x: {|3/2>+|-3/2>, |1/2>+|-1/2>} and the
    /// antisymmetric pair.
    fn doublet_closed_form(d0: f64, d1: f64, z: f64) -> (f64, f64) {
        let lower =
            |a: f64, b: f64, off: f64| 0.5 * (a + b) - (0.25 * (a - b).powi(2) + off * off).sqrt();
        let s = 3f64.sqrt() / 2.0;
        let up = lower(-9.0 * d0 / 8.0, -d0 / 8.0 + z, s * (z + d1));
        let down = lower(-9.0 * d0 / 8.0, -d0 / 8.0 - z, s * (z - d1));
        (up, down)
    }

    #[test]
    fn doublet_matches_block_closed_form() {
        let k = PhysicalConstants::default();
        let h = HoleLevelStructure {
            delta0: 2.6e-3,
            delta1: 1.3e-4,
            g0: 1.0,
            field: 7.0,
        };
        let pair = heavy_hole_doublet(&h, &k).unwrap();
        let z = h.g0 * k.mu_b * h.field;
        let (up, down) = doublet_closed_form(h.delta0, h.delta1, z);
        assert!((pair.up.energy - up).abs() < 1e-12 * h.delta0);
        assert!((pair.down.energy - down).abs() < 1e-12 * h.delta0);
    }

    #[test]
    fn anisotropy_gives_linear_zeeman_splitting() {
        let k = PhysicalConstants::default();
        let h = HoleLevelStructure {
            delta0: 2.6e-3,
            delta1: 1.3e-4,
            g0: 1.0,
            field: 7.0,
        };
        let pair = heavy_hole_doublet(&h, &k).unwrap();
        let g = g_perp_perturbative(h.delta0, h.delta1, h.g0).unwrap();
        let predicted = g * k.mu_b * h.field;
        let zeeman = h.g0 * k.mu_b * h.field;
        // beyond first order the splitting picks up 3 z^3 / (2 Delta0^2), which
        // is not small against 3 Delta1 z / Delta0 when z >> Delta1
        let bound = 2.0 * ((h.delta1.abs() + zeeman.abs()) / h.delta0).powi(2) * zeeman.abs();
        assert!((pair.splitting() - predicted).abs() < bound);
        assert_eq!(pair.splitting().signum(), predicted.signum());
        // g_perp < 0 here, so the symmetric state lies lower
        assert!(pair.up.energy < pair.down.energy);
        assert_eq!(pair.by_energy().0, pair.up);
    }

    proptest! {
        #[test]
        fn perturbative_consistency(
            r1 in -0.05..0.05f64,
            rz in 0.0..0.05f64,
        ) {
            let k = PhysicalConstants::default();
            let d0 = 2.6e-3;
            let field = rz * d0 / k.mu_b;
            let h = HoleLevelStructure { delta0: d0, delta1: r1 * d0, g0: 1.0, field };
            let pair = heavy_hole_doublet(&h, &k).unwrap();
            let predicted = g_perp_perturbative(d0, h.delta1, 1.0).unwrap() * k.mu_b * field;
            let z = k.mu_b * field;
            let bound = 2.0 * ((h.delta1.abs() + z) / d0).powi(2) * z + 1e-12 * d0;
            prop_assert!((pair.splitting() - predicted).abs() <= bound);
        }

        #[test]
        fn hermitian_with_fixed_trace(
            d0 in 1e-4..1e-2f64,
            r1 in -0.25..0.25f64,
            g0 in -2.0..2.0f64,
            field in 0.0..10.0f64,
        ) {
            let k = PhysicalConstants::default();
            let h = HoleLevelStructure { delta0: d0, delta1: r1 * d0, g0, field };
            let m = build_hamiltonian(&h, &k);
            prop_assert!((m - m.adjoint()).norm() <= 1e-14 * d0.max(1e-3));
            let tr = m.trace();
            prop_assert!((tr.re + 2.5 * d0).abs() < 1e-15 && tr.im.abs() < 1e-18);
        }

        #[test]
        fn kramers_degeneracy_at_zero_field(d0 in 1e-4..1e-2f64, r1 in -0.25..0.25f64) {
            let k = PhysicalConstants::default();
            let h = HoleLevelStructure { delta0: d0, delta1: r1 * d0, g0: 1.0, field: 0.0 };
            let pair = heavy_hole_doublet(&h, &k).unwrap();
            prop_assert!(pair.splitting().abs() <= 1e-12 * d0);
        }
    }

    #[test]
    fn amplitudes_match_first_order_mixing() {
        let k = PhysicalConstants::default();
        let h = HoleLevelStructure {
            delta0: 2.6e-3,
            delta1: 6.5e-5,
            g0: 1.0,
            field: 3.0,
        };
        let pair = heavy_hole_doublet(&h, &k).unwrap();
        let z = h.g0 * k.mu_b * h.field;
        let s = 3f64.sqrt() / (2.0 * h.delta0);
        let r = 0.5f64.sqrt();
        let up = [r, -r * s * (h.delta1 + z), -r * s * (h.delta1 + z), r];
        let down = [r, r * s * (h.delta1 - z), -r * s * (h.delta1 - z), -r];
        let eps = ((h.delta1.abs() + z.abs()) / h.delta0).powi(2);
        for (state, want) in [(pair.up, up), (pair.down, down)] {
            assert!((state.norm() - 1.0).abs() < 1e-12);
            for (a, w) in state.amplitudes.iter().zip(want) {
                assert!((a - c(w)).norm() < 2.0 * eps, "{a} vs {w}");
            }
        }
    }

    #[test]
    fn regime_errors() {
        let k = PhysicalConstants::default();
        let h = HoleLevelStructure {
            delta0: 1e-3,
            delta1: 3e-4,
            g0: 1.0,
            field: 0.0,
        };
        assert!(matches!(heavy_hole_doublet(&h, &k), Err(Error::Regime(_))));
        let h = HoleLevelStructure {
            delta0: -1e-3,
            delta1: 0.0,
            g0: 1.0,
            field: 0.0,
        };
        assert!(matches!(heavy_hole_doublet(&h, &k), Err(Error::Regime(_))));
        let h = HoleLevelStructure {
            delta0: 1e-4,
            delta1: 0.0,
            g0: 2.0,
            field: 7.0,
        };
        assert!(matches!(heavy_hole_doublet(&h, &k), Err(Error::Regime(_))));
    }
}
