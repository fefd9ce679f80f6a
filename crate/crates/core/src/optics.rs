//! Dipole selection rules of the A0 - A0X system in Voigt geometry (B || x).
//!
//! This module uses the electron representation. Dipole matrix elements are
//! evaluated exactly: states are written over spin (up/down along z) times
//! orbital (S, X, Y, Z) with Gaussian-rational coefficients and a common
//! power of 1/sqrt(2), and the only nonzero orbital integrals are
//! <X|e x|S> = <Y|e y|S> = <Z|e z|S> = mu0.

use std::fmt;
use std::str::FromStr;

use num_complex::{Complex, Complex64};
use num_rational::Rational64;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::params::PhysicalConstants;

/// Exact complex rational number.
pub type Gaussian = Complex<Rational64>;

/// Planck constant in eV s.
const PLANCK_EV_S: f64 = 4.135_667_696e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrainCase {
    /// u_xx != u_yy, u_xy = 0.
    Anisotropic,
    /// u_xx = u_yy, u_xy != 0.
    Shear,
}

impl FromStr for StrainCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uxx_minus_uyy" => Ok(StrainCase::Anisotropic),
            "uxy" => Ok(StrainCase::Shear),
            other => Err(Error::InvalidInput(format!(
                "unknown strain case `{other}` (expected `uxx_minus_uyy` or `uxy`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElectronState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HoleState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    X,
    Y,
    /// +45 degrees, along x + y.
    Diagonal,
    /// -45 degrees, along x - y.
    AntiDiagonal,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::X => "x",
            Polarization::Y => "y",
            Polarization::Diagonal => "+45",
            Polarization::AntiDiagonal => "-45",
        })
    }
}

impl FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Polarization::X),
            "y" => Ok(Polarization::Y),
            "+45" => Ok(Polarization::Diagonal),
            "-45" => Ok(Polarization::AntiDiagonal),
            other => Err(Error::InvalidInput(format!(
                "unknown polarization `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    fn value(self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Positive => 1.0,
        }
    }
}

// orbital slots
const S: usize = 0;
const X: usize = 1;
const Y: usize = 2;

/// A state written as coeffs / sqrt(2)^depth; coeffs indexed [spin_z][orbital],
/// spin 0 = up_z, 1 = down_z; orbital S, X, Y, Z.
#[derive(Debug, Clone, Copy)]
struct Ket {
    coeffs: [[Gaussian; 4]; 2],
    depth: u32,
}

fn g(re: i64, im: i64) -> Gaussian {
    Complex::new(Rational64::from_integer(re), Rational64::from_integer(im))
}

impl Ket {
    fn empty(depth: u32) -> Ket {
        Ket {
            coeffs: [[Gaussian::zero(); 4]; 2],
            depth,
        }
    }
}

fn electron_ket(e: ElectronState) -> Ket {
    // (|up_z, S> +- |down_z, S>) / sqrt(2)
    let mut k = Ket::empty(1);
    k.coeffs[0][S] = g(1, 0);
    k.coeffs[1][S] = match e {
        ElectronState::Up => g(1, 0),
        ElectronState::Down => g(-1, 0),
    };
    k
}

fn hole_ket(h: HoleState, case: StrainCase) -> Ket {
    // (|down_z, (X - iY)/sqrt2> + w |up_z, (X + iY)/sqrt2>) / sqrt(2),
    // w = +-1 for anisotropic strain, +-i for shear strain
    let sign = match h {
        HoleState::Up => 1,
        HoleState::Down => -1,
    };
    let w = match case {
        StrainCase::Anisotropic => g(sign, 0),
        StrainCase::Shear => g(0, sign),
    };
    let mut k = Ket::empty(2);
    k.coeffs[1][X] = g(1, 0);
    k.coeffs[1][Y] = g(0, -1);
    k.coeffs[0][X] = w;
    k.coeffs[0][Y] = w * g(0, 1);
    k
}

/// <hole| e r |electron> as (numerator vector, sqrt2 depth).
fn dipole(hole: &Ket, electron: &Ket) -> ([Gaussian; 3], u32) {
    let mut v = [Gaussian::zero(); 3];
    for (axis, slot) in v.iter_mut().enumerate() {
        for spin in 0..2 {
            *slot = *slot + hole.coeffs[spin][axis + 1].conj() * electron.coeffs[spin][S];
        }
    }
    (v, hole.depth + electron.depth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleElement {
    pub electron: ElectronState,
    pub hole: HoleState,
    /// Components along x, y, z in units of mu0 / sqrt(2).
    pub vector: [Gaussian; 3],
}

impl DipoleElement {
    /// Components in units of mu0.
    pub fn vector_f64(&self) -> [Complex64; 3] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.vector.map(|c| {
            Complex64::new(
                *c.re.numer() as f64 / *c.re.denom() as f64 * s,
                *c.im.numer() as f64 / *c.im.denom() as f64 * s,
            )
        })
    }

    /// |p|^2 in units of mu0^2, exact.
    pub fn strength(&self) -> Rational64 {
        let sum = self
            .vector
            .iter()
            .fold(Rational64::zero(), |acc, c| acc + c.re * c.re + c.im * c.im);
        sum / Rational64::from_integer(2)
    }

    /// |eps . p|^2 for a real unit polarization vector, in units of mu0^2.
    pub fn intensity(&self, eps: [f64; 3]) -> f64 {
        let p = self.vector_f64();
        let amp: Complex64 = p.iter().zip(eps).map(|(c, e)| c * e).sum();
        amp.norm_sqr()
    }

    /// The linear polarization this transition couples to, if it is pure.
    pub fn polarization(&self) -> Option<Polarization> {
        let [x, y, z] = self.vector;
        if !z.is_zero() {
            return None;
        }
        match (x.is_zero(), y.is_zero()) {
            (false, true) => Some(Polarization::X),
            (true, false) => Some(Polarization::Y),
            (false, false) if x == y => Some(Polarization::Diagonal),
            (false, false) if x == -y => Some(Polarization::AntiDiagonal),
            _ => None,
        }
    }
}

/// The four dipole matrix elements <hole| mu |electron> for the given strain
/// symmetry, ordered (up, up), (up, down), (down, up), (down, down).
pub fn dipole_elements(case: StrainCase) -> [DipoleElement; 4] {
    let pairs = [
        (HoleState::Up, ElectronState::Up),
        (HoleState::Up, ElectronState::Down),
        (HoleState::Down, ElectronState::Up),
        (HoleState::Down, ElectronState::Down),
    ];
    pairs.map(|(h, e)| {
        let (num, depth) = dipole(&hole_ket(h, case), &electron_ket(e));
        // bring to units of mu0/sqrt(2): divide by 2 for every extra pair of sqrt2
        debug_assert!(depth % 2 == 1);
        let scale = Rational64::one() / Rational64::from_integer(1 << ((depth - 1) / 2));
        DipoleElement {
            electron: e,
            hole: h,
            vector: num.map(|c| c * scale),
        }
    })
}

/// Transition number (1..=4) for the recombination of `hole` with
/// `electron`. Recombining hole |up> with electron |up> is the transition
/// |up down, up> <-> |down>, which is transition 1.
pub fn transition_id(hole: HoleState, electron: ElectronState) -> u8 {
    match (hole, electron) {
        (HoleState::Up, ElectronState::Up) => 1,
        (HoleState::Down, ElectronState::Up) => 2,
        (HoleState::Up, ElectronState::Down) => 3,
        (HoleState::Down, ElectronState::Down) => 4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub id: u8,
    /// Energy relative to E0, eV.
    pub energy_offset: f64,
    pub polarization: Polarization,
}

impl Transition {
    pub fn frequency_ghz(&self) -> f64 {
        self.energy_offset / PLANCK_EV_S * 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub e0: f64,
    pub g_e: f64,
    pub g_hh: f64,
    pub field: f64,
    pub transitions: [Transition; 4],
}

impl TransitionTable {
    pub fn energy(&self, id: u8) -> f64 {
        self.e0 + self.transitions[(id - 1) as usize].energy_offset
    }
}

/// Four-line spectrum built from the electron splitting |g_e| mu_B B and the
/// hole splitting |g_hh| mu_B B. Lines 1 and 4 are the outer pair.
pub fn transition_table(
    e0: f64,
    g_e: f64,
    g_hh: f64,
    field: f64,
    consts: &PhysicalConstants,
) -> Result<TransitionTable> {
    if !(field >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "field must be >= 0, got {field}"
        )));
    }
    let de = consts.zeeman_ev(g_e, field);
    let dh = consts.zeeman_ev(g_hh, field);
    let offsets = [
        0.5 * (de + dh),
        0.5 * (de - dh),
        -0.5 * (de - dh),
        -0.5 * (de + dh),
    ];
    let mut pol = [Polarization::X; 4];
    for d in dipole_elements(StrainCase::Anisotropic) {
        let id = transition_id(d.hole, d.electron);
        pol[(id - 1) as usize] = d.polarization().expect("anisotropic case is x/y pure");
    }
    let transitions = [1u8, 2, 3, 4].map(|id| Transition {
        id,
        energy_offset: offsets[(id - 1) as usize],
        polarization: pol[(id - 1) as usize],
    });
    Ok(TransitionTable {
        e0,
        g_e,
        g_hh,
        field,
        transitions,
    })
}

/// Sign of the hole g-factor implied by the polarization of the outermost
/// (highest and lowest energy) lines, given the electron g-factor sign.
///
/// Lines are placed with signed Zeeman energies: electron sublevels at
/// +-g_e mu_B B / 2, hole sublevels at +-g_hh mu_B B / 2, and a line's photon
/// energy is that of the excited electron minus the hole state left behind.
/// Only the relative sign of the g-factors decides which pair ends up outside.
pub fn infer_g_hh_sign(outer: Polarization, sign_g_e: Sign) -> Result<Sign> {
    if !matches!(outer, Polarization::X | Polarization::Y) {
        return Err(Error::InvalidInput(format!(
            "outer lines must be x or y polarized in the anisotropic case, got {outer}"
        )));
    }
    let g_e = sign_g_e.value();
    for candidate in [Sign::Negative, Sign::Positive] {
        let g_h = 0.5 * candidate.value();
        if outer_polarization(g_e, g_h) == outer {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidInput(format!(
        "no hole g-factor sign gives {outer}-polarized outer lines"
    )))
}

fn outer_polarization(g_e: f64, g_h: f64) -> Polarization {
    let electron = |e: ElectronState| match e {
        ElectronState::Up => 0.5 * g_e,
        ElectronState::Down => -0.5 * g_e,
    };
    let hole = |h: HoleState| match h {
        HoleState::Up => 0.5 * g_h,
        HoleState::Down => -0.5 * g_h,
    };
    let other = |h: HoleState| match h {
        HoleState::Up => HoleState::Down,
        HoleState::Down => HoleState::Up,
    };
    let lines: Vec<(f64, Polarization)> = dipole_elements(StrainCase::Anisotropic)
        .iter()
        .map(|d| {
            let e = electron(d.electron) - hole(other(d.hole));
            (e, d.polarization().expect("pure polarization"))
        })
        .collect();
    let top = lines
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("four lines");
    top.1
}
