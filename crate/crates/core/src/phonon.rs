//! Phonon-mediated heavy-hole spin flips and the resulting T1(B, T).
//!
//! The in-plane field admixes light holes into the heavy doublet, so the
//! Bir-Pikus deformation coupling (spherical approximation b' = d'/sqrt 3,
//! long-wavelength limit) flips the spin while emitting one acoustic phonon.
//! The rate is available as the closed-form angular integral and as an
//! explicit Gauss-Legendre quadrature of the golden-rule sum over phonon
//! directions and branches.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::{MaterialParams, PhysicalConstants, ELEMENTARY_CHARGE};
use crate::quadrature::gauss_legendre_on;

/// Smallest quadrature order accepted by [`gamma_quadrature`].
pub const MIN_QUADRATURE_NODES: usize = 8;

/// Default order of the (cos theta, phi) product grid.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Longitudinal, e = q / q.
    La,
    /// Transverse, e = (q_y, -q_x, 0) / q_perp.
    Ta1,
    /// Transverse, e = (q_x q_z, q_y q_z, -q_perp^2) / (q q_perp).
    Ta2,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::La, Branch::Ta1, Branch::Ta2];

    pub fn speed(self, m: &MaterialParams) -> f64 {
        match self {
            Branch::La => m.s_l,
            Branch::Ta1 | Branch::Ta2 => m.s_t,
        }
    }

    fn index(self) -> usize {
        match self {
            Branch::La => 0,
            Branch::Ta1 => 1,
            Branch::Ta2 => 2,
        }
    }

    /// Solid-angle integral of |i q_x e_z + i q_z e_x + q_x e_y + q_y e_x|^2 / q^2.
    fn angular_integral(self) -> f64 {
        match self {
            Branch::La => 32.0 * PI / 15.0,
            Branch::Ta1 => 2.0 * PI,
            Branch::Ta2 => 6.0 * PI / 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhononMode {
    pub branch: Branch,
    pub q_dir: [f64; 3],
    pub e_vec: [f64; 3],
    /// m/s.
    pub speed: f64,
}

impl PhononMode {
    pub fn new(branch: Branch, q_dir: [f64; 3], m: &MaterialParams) -> PhononMode {
        let e = polarization_vectors(q_dir);
        PhononMode {
            branch,
            q_dir,
            e_vec: e[branch.index()],
            speed: branch.speed(m),
        }
    }
}

/// Polarization vectors {LA, TA1, TA2} for a unit propagation direction.
///
/// Along the z axis (q_perp = 0) the transverse pair is taken as {x, y}.
pub fn polarization_vectors(q_dir: [f64; 3]) -> [[f64; 3]; 3] {
    let [x, y, z] = q_dir;
    let q_perp = x.hypot(y);
    if q_perp < 1e-12 {
        return [[0.0, 0.0, z.signum()], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    }
    [
        [x, y, z],
        [y / q_perp, -x / q_perp, 0.0],
        [x * z / q_perp, y * z / q_perp, -q_perp],
    ]
}

/// Spin-flip matrix element <down| H_BP |up> for emission of one phonon with
/// wave vector `q` (1/m) into `mode`.
///
/// Returned in J m^{3/2}: the phonon amplitude is normalized to unit volume,
/// so |M|^2 carries the 1/V that the sum over q removes.
#[allow(clippy::too_many_arguments)]
pub fn spin_flip_me(
    q: [f64; 3],
    mode: &PhononMode,
    field: f64,
    m: &MaterialParams,
    consts: &PhysicalConstants,
    g0: f64,
    delta0: f64,
    b_prime: f64,
) -> Result<Complex64> {
    let q_norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    if q_norm == 0.0 {
        return Err(Error::InvalidInput(
            "phonon wave vector must be nonzero".into(),
        ));
    }
    if delta0 == 0.0 {
        return Err(Error::InvalidInput("Delta0 must be nonzero".into()));
    }
    let omega = q_norm * mode.speed;
    let prefactor = 3.0 * g0 * consts.mu_b_joule() * field * b_prime / (2.0 * delta0)
        * (consts.hbar / (2.0 * m.rho * omega)).sqrt();
    let e = mode.e_vec;
    let i = Complex64::i();
    let k = i * (q[0] * e[2] + q[2] * e[0]) + (q[0] * e[1] + q[1] * e[0]);
    Ok(k * prefactor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMethod {
    ClosedForm,
    Quadrature { nodes: usize },
}

/// Inputs shared by the rate and T1 calculations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationParams {
    pub consts: PhysicalConstants,
    /// Supplies rho, sound speeds, g_hh_perp and b'.
    pub material: MaterialParams,
    /// u_xx - u_yy.
    pub anisotropy: f64,
    /// hh-lh splitting used to express g0 through g_hh_perp in the
    /// quadrature route, eV. The rate does not depend on it.
    pub delta0: f64,
}

impl RelaxationParams {
    pub fn new(consts: PhysicalConstants, material: MaterialParams, anisotropy: f64) -> Self {
        RelaxationParams {
            consts,
            material,
            anisotropy,
            delta0: 2.6e-3,
        }
    }

    /// Hole Zeeman energy |g_hh_perp mu_B B| in J.
    fn zeeman_joule(&self, field: f64) -> f64 {
        self.consts.zeeman_ev(self.material.g_hh_perp, field) * ELEMENTARY_CHARGE
    }

    fn check(&self, field: f64) -> Result<()> {
        if self.anisotropy == 0.0 {
            return Err(Error::SingularAnisotropy);
        }
        if !(field > 0.0) || !field.is_finite() {
            return Err(Error::InvalidInput(format!(
                "field must be > 0, got {field}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    /// Total spin-flip rate, 1/s.
    pub gamma: f64,
    /// LA, TA1, TA2 contributions, 1/s.
    pub per_branch: [f64; 3],
    pub field: f64,
    pub method: RateMethod,
}

/// Zero-temperature spin-flip rate,
/// (g mu_B B)^5 / (10 pi rho hbar^4 (u_xx - u_yy)^2) (1/s_t^5 + 2/(3 s_l^5)),
/// split over branches by their exact angular weights.
pub fn gamma_closed(field: f64, p: &RelaxationParams) -> Result<RateResult> {
    p.check(field)?;
    let e = p.zeeman_joule(field);
    let m = &p.material;
    let common =
        e.powi(5) / (32.0 * PI * PI * m.rho * p.consts.hbar.powi(4) * p.anisotropy * p.anisotropy);
    let per_branch = Branch::ALL.map(|b| common * b.angular_integral() / b.speed(m).powi(5));
    Ok(RateResult {
        gamma: per_branch.iter().sum(),
        per_branch,
        field,
        method: RateMethod::ClosedForm,
    })
}

/// Golden-rule rate evaluated by quadrature over phonon directions on an
/// `nodes` x `nodes` Gauss-Legendre grid in (cos theta, phi). The energy
/// delta function fixes |q| = |g mu_B B| / (hbar s) per branch.
pub fn gamma_quadrature(field: f64, p: &RelaxationParams, nodes: usize) -> Result<RateResult> {
    p.check(field)?;
    if nodes < MIN_QUADRATURE_NODES {
        return Err(Error::InvalidInput(format!(
            "quadrature needs at least {MIN_QUADRATURE_NODES} nodes, got {nodes}"
        )));
    }
    let m = &p.material;
    let b_prime = m.b_prime();
    if b_prime == 0.0 {
        return Err(Error::InvalidInput(
            "b' = 0: no deformation coupling".into(),
        ));
    }
    // g_perp = 3 b' (u_xx - u_yy) g0 / Delta0
    let g0 = m.g_hh_perp * p.delta0 / (3.0 * b_prime * p.anisotropy);
    let hbar = p.consts.hbar;
    let e = p.zeeman_joule(field);

    let (cos_t, w_t) = gauss_legendre_on(nodes, -1.0, 1.0);
    let (phi, w_p) = gauss_legendre_on(nodes, 0.0, 2.0 * PI);

    let mut per_branch = [0.0; 3];
    for branch in Branch::ALL {
        let s = branch.speed(m);
        let q0 = e / (hbar * s);
        let mut angular = 0.0;
        for (ct, wt) in cos_t.iter().zip(&w_t) {
            let st = (1.0 - ct * ct).sqrt();
            for (ph, wp) in phi.iter().zip(&w_p) {
                let dir = [st * ph.cos(), st * ph.sin(), *ct];
                let mode = PhononMode::new(branch, dir, m);
                let q = dir.map(|c| c * q0);
                let me = spin_flip_me(q, &mode, field, m, &p.consts, g0, p.delta0, b_prime)?;
                angular += wt * wp * me.norm_sqr();
            }
        }
        // (2 pi / hbar) * 1/(2 pi)^3 * q^2 dq, with dq = d(hbar s q) / (hbar s)
        per_branch[branch.index()] =
            2.0 * PI / hbar / (8.0 * PI.powi(3)) * q0 * q0 / (hbar * s) * angular;
    }
    Ok(RateResult {
        gamma: per_branch.iter().sum(),
        per_branch,
        field,
        method: RateMethod::Quadrature { nodes },
    })
}

pub fn gamma(field: f64, p: &RelaxationParams, method: RateMethod) -> Result<RateResult> {
    match method {
        RateMethod::ClosedForm => gamma_closed(field, p),
        RateMethod::Quadrature { nodes } => gamma_quadrature(field, p, nodes),
    }
}

/// Measured relaxation time T1 = (e^beta - 1) / (Gamma (e^beta + 1)),
/// beta = |g mu_B B| / k_B T, in seconds.
pub fn t1_theory(field: f64, temperature: f64, p: &RelaxationParams) -> Result<f64> {
    t1_theory_with(field, temperature, p, RateMethod::ClosedForm)
}

pub fn t1_theory_with(
    field: f64,
    temperature: f64,
    p: &RelaxationParams,
    method: RateMethod,
) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let rate = gamma(field, p, method)?;
    let beta = p.consts.zeeman_ev(p.material.g_hh_perp, field) / (p.consts.k_b * temperature);
    // (e^b - 1)/(e^b + 1) = tanh(b/2)
    Ok((0.5 * beta).tanh() / rate.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> RelaxationParams {
        RelaxationParams::new(
            PhysicalConstants::default(),
            MaterialParams::default(),
            8e-5,
        )
    }

    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[test]
    fn polarization_examples() {
        let e = polarization_vectors([0.0, 0.0, 1.0]);
        assert_eq!(e, [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let e = polarization_vectors([1.0, 0.0, 0.0]);
        assert_eq!(e[0], [1.0, 0.0, 0.0]);
        assert_eq!(e[1], [0.0, -1.0, 0.0]);
        assert_eq!(e[2], [0.0, 0.0, -1.0]);
        let n = [0.3f64, -0.5, 0.7];
        let l = dot(n, n).sqrt();
        let e = polarization_vectors(n.map(|c| c / l));
        for i in 0..3 {
            assert!((dot(e[i], e[i]) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(dot(e[i], e[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_element_structure() {
        let p = reference();
        let m = &p.material;
        let mode = PhononMode::new(Branch::La, [0.0, 1.0, 0.0], m);
        let me = |field: f64, mode: &PhononMode, q: [f64; 3]| {
            spin_flip_me(q, mode, field, m, &p.consts, 1.0, 2.6e-3, -1.7).unwrap()
        };
        assert_eq!(me(7.0, &mode, [0.0, 1e8, 0.0]), Complex64::new(0.0, 0.0));
        let dir = [0.6, 0.0, 0.8];
        let mode = PhononMode::new(Branch::La, dir, m);
        let q = dir.map(|c| c * 1e8);
        assert_eq!(me(0.0, &mode, q).norm(), 0.0);
        let a = me(3.0, &mode, q);
        let b = me(6.0, &mode, q);
        assert_relative_eq!(b.norm(), 2.0 * a.norm(), max_relative = 1e-15);
        assert!(spin_flip_me([0.0; 3], &mode, 1.0, m, &p.consts, 1.0, 2.6e-3, -1.7).is_err());
    }

    #[test]
    fn closed_form_value_at_7t() {
        let r = gamma_closed(7.0, &reference()).unwrap();
        assert_relative_eq!(r.gamma, 1.76e6, max_relative = 0.02);
        let ta = r.per_branch[1] + r.per_branch[2];
        let la = r.per_branch[0];
        let m = MaterialParams::default();
        let want = (1.0 / m.s_t.powi(5)) / (2.0 / (3.0 * m.s_l.powi(5)));
        assert_relative_eq!(ta / la, want, max_relative = 1e-12);
        assert!((want - 8.4).abs() < 0.1);
    }

    #[test]
    fn closed_form_matches_literal_expression() {
        let p = reference();
        let m = &p.material;
        let e = p.consts.zeeman_ev(m.g_hh_perp, 5.0) * ELEMENTARY_CHARGE;
        let literal = e.powi(5) / (10.0 * PI * m.rho * p.consts.hbar.powi(4) * 8e-5f64.powi(2))
            * (1.0 / m.s_t.powi(5) + 2.0 / (3.0 * m.s_l.powi(5)));
        assert_relative_eq!(
            gamma_closed(5.0, &p).unwrap().gamma,
            literal,
            max_relative = 1e-13
        );
    }

    #[test]
    fn power_laws() {
        let p = reference();
        let g1 = gamma_closed(1.3, &p).unwrap().gamma;
        let g2 = gamma_closed(2.6, &p).unwrap().gamma;
        assert_relative_eq!(g2 / g1, 32.0, max_relative = 1e-12);
        let mut q = p;
        q.anisotropy = p.anisotropy / 4.0;
        let g3 = gamma_closed(1.3, &q).unwrap().gamma;
        assert_relative_eq!(g3 / g1, 16.0, max_relative = 1e-12);
    }

    #[test]
    fn singular_anisotropy_and_bad_inputs() {
        let mut p = reference();
        p.anisotropy = 0.0;
        assert_eq!(gamma_closed(7.0, &p), Err(Error::SingularAnisotropy));
        assert_eq!(
            gamma_quadrature(7.0, &p, 64),
            Err(Error::SingularAnisotropy)
        );
        assert!(gamma_closed(0.0, &reference()).is_err());
        assert!(gamma_quadrature(7.0, &reference(), 4).is_err());
        assert!(t1_theory(7.0, 0.0, &reference()).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form_per_branch() {
        let p = reference();
        let c = gamma_closed(7.0, &p).unwrap();
        let q = gamma_quadrature(7.0, &p, DEFAULT_QUADRATURE_NODES).unwrap();
        for (a, b) in c.per_branch.iter().zip(q.per_branch) {
            assert_relative_eq!(*a, b, max_relative = 1e-10);
        }
        let q2 = gamma_quadrature(7.0, &p, 2 * DEFAULT_QUADRATURE_NODES).unwrap();
        assert!((q2.gamma - q.gamma).abs() / q.gamma < 1e-4);
        assert!(q.per_branch[1] + q.per_branch[2] > q.per_branch[0]);
    }

    #[test]
    fn quadrature_independent_of_delta0() {
        let mut p = reference();
        let a = gamma_quadrature(5.0, &p, 32).unwrap().gamma;
        p.delta0 = 5e-3;
        let b = gamma_quadrature(5.0, &p, 32).unwrap().gamma;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn t1_values() {
        let p = reference();
        assert_relative_eq!(
            t1_theory(5.0, 1.5, &p).unwrap(),
            0.51e-6,
            max_relative = 0.05
        );
        assert_relative_eq!(
            t1_theory(7.0, 1.5, &p).unwrap(),
            0.13e-6,
            max_relative = 0.05
        );
    }

    #[test]
    fn t1_high_temperature_limit() {
        let p = reference();
        let b = 2.0;
        let z = p.consts.zeeman_ev(p.material.g_hh_perp, 2.0 * b);
        let temp = 100.0 * z / p.consts.k_b;
        let r = t1_theory(2.0 * b, temp, &p).unwrap() / t1_theory(b, temp, &p).unwrap();
        assert!((r - 1.0 / 16.0).abs() / (1.0 / 16.0) < 5e-3, "{r}");
    }
}
