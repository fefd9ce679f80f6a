//! Physical constants, GaAs material parameters and the plain-text config.
//!
//! The config is TOML with lower_snake_case keys grouped in sections. Every
//! key is optional; missing keys fall back to the GaAs defaults below.
//!
//! ```toml
//! [constants]
//! hbar = 1.054571817e-34       # J s
//! mu_b = 5.7883818060e-5       # eV/T
//! k_b = 8.617333262e-5         # eV/K
//! lattice_constant = 5.653e-10 # m; v0 = lattice_constant^3 / 4 (one nucleus per sublattice)
//!
//! [material]
//! a_c = -7.17        # eV
//! a_v = 1.16         # eV
//! c_ratio = 0.4526   # C12/C11
//! b = -1.7           # eV
//! # b_prime = -1.7   # eV, acceptor-renormalized b; defaults to b
//! rho = 5320.0       # kg/m^3
//! s_l = 4730.0       # m/s
//! s_t = 3350.0       # m/s
//! g_hh_perp = -0.15
//! g_e_perp = -0.43
//!
//! [hyperfine]
//! c_as = 4.4e-6           # eV
//! c_ga = 3.0e-6           # eV
//! nuclear_spin = 1.5
//! bohr_radius = 5.0904e-9 # m
//! int_f2g2 = 0.5          # in units of 1/a_B^3
//! int_f4 = 7.9            # in units of 1/a_B^3
//! mixing_ratio = 0.05     # Delta1/Delta0
//! ```
//!
//! The `[sample]` and `[cpt]` sections carry experiment settings used by the
//! command-line front end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electron charge, used to convert eV to J.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Acceptor Bohr radius at which the strain-free hyperfine term alone gives
/// T2* = 58 ns with the default hyperfine constants.
pub const CALIBRATED_BOHR_RADIUS: f64 = 5.090_364e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J s.
    pub hbar: f64,
    /// Bohr magneton, eV/T.
    pub mu_b: f64,
    /// Boltzmann constant, eV/K.
    pub k_b: f64,
    /// Cubic lattice constant, m.
    pub lattice_constant: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            hbar: 1.054_571_817e-34,
            mu_b: 5.788_381_806_0e-5,
            k_b: 8.617_333_262e-5,
            lattice_constant: 5.653e-10,
        }
    }
}

impl PhysicalConstants {
    /// Bohr magneton in J/T.
    pub fn mu_b_joule(&self) -> f64 {
        self.mu_b * ELEMENTARY_CHARGE
    }

    /// Volume per nucleus of one sublattice (a^3 / 4 for zinc blende), m^3.
    pub fn v0(&self) -> f64 {
        self.lattice_constant.powi(3) / 4.0
    }

    /// Zeeman energy |g| mu_B B in eV.
    pub fn zeeman_ev(&self, g: f64, field: f64) -> f64 {
        (g * self.mu_b * field).abs()
    }

    fn validate(&self) -> Result<()> {
        positive("constants.hbar", self.hbar)?;
        positive("constants.mu_b", self.mu_b)?;
        positive("constants.k_b", self.k_b)?;
        positive("constants.lattice_constant", self.lattice_constant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialParams {
    /// Conduction-band deformation potential, eV.
    pub a_c: f64,
    /// Valence-band hydrostatic deformation potential, eV.
    pub a_v: f64,
    /// Elastic stiffness ratio C12/C11.
    pub c_ratio: f64,
    /// Valence-band shear deformation potential, eV.
    pub b: f64,
    /// Coulomb-renormalized shear potential b' for the bound hole, eV.
    /// Falls back to `b` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_prime: Option<f64>,
    /// Mass density, kg/m^3.
    pub rho: f64,
    /// Longitudinal sound speed, m/s.
    pub s_l: f64,
    /// Transverse sound speed, m/s.
    pub s_t: f64,
    /// In-plane heavy-hole g-factor.
    pub g_hh_perp: f64,
    /// In-plane electron g-factor.
    pub g_e_perp: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            a_c: -7.17,
            a_v: 1.16,
            c_ratio: 0.4526,
            b: -1.7,
            b_prime: None,
            rho: 5.32e3,
            s_l: 4.73e3,
            s_t: 3.35e3,
            g_hh_perp: -0.15,
            g_e_perp: -0.43,
        }
    }
}

impl MaterialParams {
    pub fn b_prime(&self) -> f64 {
        self.b_prime.unwrap_or(self.b)
    }

    fn validate(&self) -> Result<()> {
        finite("material.a_c", self.a_c)?;
        finite("material.a_v", self.a_v)?;
        finite("material.b", self.b)?;
        if let Some(bp) = self.b_prime {
            finite("material.b_prime", bp)?;
        }
        if !(self.c_ratio > 0.0 && self.c_ratio < 1.0) {
            return Err(Error::validation(
                "material.c_ratio",
                format!("must lie in (0, 1), got {}", self.c_ratio),
            ));
        }
        positive("material.rho", self.rho)?;
        positive("material.s_l", self.s_l)?;
        positive("material.s_t", self.s_t)?;
        finite("material.g_hh_perp", self.g_hh_perp)?;
        finite("material.g_e_perp", self.g_e_perp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperfineParams {
    /// As-sublattice hole hyperfine constant C = 3 A M1 / 2, eV.
    pub c_as: f64,
    /// Ga-sublattice hole hyperfine constant, eV.
    pub c_ga: f64,
    pub nuclear_spin: f64,
    /// Acceptor Bohr radius, m.
    pub bohr_radius: f64,
    /// Radial integral of r^2 f^2 g^2, in units of 1/a_B^3.
    pub int_f2g2: f64,
    /// Radial integral of r^2 f^4, in units of 1/a_B^3.
    pub int_f4: f64,
    /// Delta1 / Delta0.
    pub mixing_ratio: f64,
}

impl Default for HyperfineParams {
    fn default() -> Self {
        HyperfineParams {
            c_as: 4.4e-6,
            c_ga: 3.0e-6,
            nuclear_spin: 1.5,
            bohr_radius: CALIBRATED_BOHR_RADIUS,
            int_f2g2: 0.5,
            int_f4: 7.9,
            mixing_ratio: 0.05,
        }
    }
}

impl HyperfineParams {
    /// Integral of r^2 f^2 g^2 in m^-3.
    pub fn int_f2g2_si(&self) -> f64 {
        self.int_f2g2 / self.bohr_radius.powi(3)
    }

    /// Integral of r^2 f^4 in m^-3.
    pub fn int_f4_si(&self) -> f64 {
        self.int_f4 / self.bohr_radius.powi(3)
    }

    fn validate(&self) -> Result<()> {
        positive("hyperfine.c_as", self.c_as)?;
        positive("hyperfine.c_ga", self.c_ga)?;
        positive("hyperfine.nuclear_spin", self.nuclear_spin)?;
        positive("hyperfine.bohr_radius", self.bohr_radius)?;
        positive("hyperfine.int_f2g2", self.int_f2g2)?;
        positive("hyperfine.int_f4", self.int_f4)?;
        finite("hyperfine.mixing_ratio", self.mixing_ratio)
    }
}

/// Measurement conditions of the strained sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleParams {
    /// Blue shift of the acceptor line relative to unstrained GaAs, meV.
    pub delta_e_mev: f64,
    /// |u_xx - u_yy|.
    pub anisotropy: f64,
    /// Bath temperature, K.
    pub temperature: f64,
    /// In-plane magnetic field, T.
    pub field: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            delta_e_mev: 3.7,
            anisotropy: 8e-5,
            temperature: 1.5,
            field: 7.0,
        }
    }
}

impl SampleParams {
    fn validate(&self) -> Result<()> {
        finite("sample.delta_e_mev", self.delta_e_mev)?;
        finite("sample.anisotropy", self.anisotropy)?;
        positive("sample.temperature", self.temperature)?;
        if !(self.field >= 0.0) {
            return Err(Error::validation("sample.field", "must be >= 0"));
        }
        Ok(())
    }
}

/// How frequencies labelled "GHz" are mapped onto the model's rad/ns unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyConvention {
    /// Values are already angular frequencies (rad/ns); used as read.
    #[default]
    Angular,
    /// Values are ordinary frequencies; multiplied by 2 pi.
    Ordinary,
}

impl FrequencyConvention {
    /// Converts a GHz-labelled quantity to rad/ns.
    pub fn to_rad_per_ns(self, ghz: f64) -> f64 {
        match self {
            FrequencyConvention::Angular => ghz,
            FrequencyConvention::Ordinary => ghz * std::f64::consts::TAU,
        }
    }

    pub fn from_rad_per_ns(self, w: f64) -> f64 {
        match self {
            FrequencyConvention::Angular => w,
            FrequencyConvention::Ordinary => w / std::f64::consts::TAU,
        }
    }
}

impl std::str::FromStr for FrequencyConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angular" => Ok(FrequencyConvention::Angular),
            "ordinary" => Ok(FrequencyConvention::Ordinary),
            other => Err(Error::validation(
                "frequency_convention",
                format!("expected `angular` or `ordinary`, got `{other}`"),
            )),
        }
    }
}

/// Three-level CPT model settings. Defaults are the published fit values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CptParams {
    pub t2_star_ns: f64,
    pub t1_us: f64,
    pub gamma3_ghz: f64,
    pub gamma3_deph_ghz: f64,
    /// Rabi frequency squared per unit laser power, GHz^2/uW.
    pub rabi_sq_per_power: f64,
    pub control_detuning_ghz: f64,
    pub control_power_uw: f64,
    pub frequency_convention: FrequencyConvention,
}

impl Default for CptParams {
    fn default() -> Self {
        CptParams {
            t2_star_ns: 6.8,
            t1_us: 0.09,
            gamma3_ghz: 0.63,
            gamma3_deph_ghz: 0.64,
            rabi_sq_per_power: 0.046,
            control_detuning_ghz: 0.215,
            control_power_uw: 3.0,
            frequency_convention: FrequencyConvention::Angular,
        }
    }
}

impl CptParams {
    fn validate(&self) -> Result<()> {
        positive("cpt.t2_star_ns", self.t2_star_ns)?;
        positive("cpt.t1_us", self.t1_us)?;
        non_negative("cpt.gamma3_ghz", self.gamma3_ghz)?;
        non_negative("cpt.gamma3_deph_ghz", self.gamma3_deph_ghz)?;
        positive("cpt.rabi_sq_per_power", self.rabi_sq_per_power)?;
        finite("cpt.control_detuning_ghz", self.control_detuning_ghz)?;
        non_negative("cpt.control_power_uw", self.control_power_uw)
    }
}

/// The full configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub constants: PhysicalConstants,
    pub material: MaterialParams,
    pub hyperfine: HyperfineParams,
    pub sample: SampleParams,
    pub cpt: CptParams,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.material.validate()?;
        self.hyperfine.validate()?;
        self.sample.validate()?;
        self.cpt.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }
}

/// Parses config text into validated parameter sets; unspecified keys take
/// the GaAs defaults.
pub fn load_params(text: &str) -> Result<(PhysicalConstants, MaterialParams, HyperfineParams)> {
    let c = Config::parse(text)?;
    Ok((c.constants, c.material, c.hyperfine))
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(key, format!("must be finite, got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(key, format!("must be > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(key, format!("must be >= 0, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_config_gives_table_defaults() {
        let (c, m, h) = load_params("").unwrap();
        assert_eq!(m.a_c, -7.17);
        assert_eq!(m.a_v, 1.16);
        assert_eq!(m.c_ratio, 0.4526);
        assert_eq!(m.b, -1.7);
        assert_eq!(m.b_prime(), -1.7);
        assert_eq!(m.rho, 5.32e3);
        assert_eq!(m.s_l, 4.73e3);
        assert_eq!(m.s_t, 3.35e3);
        assert_eq!(m.g_hh_perp.abs(), 0.15);
        assert_eq!(m.g_e_perp, -0.43);
        assert_eq!(h.c_as, 4.4e-6);
        assert_eq!(h.c_ga, 3.0e-6);
        assert_eq!(h.nuclear_spin, 1.5);
        assert_eq!(h.int_f2g2, 0.5);
        assert_eq!(h.int_f4, 7.9);
        let a: f64 = 5.653e-10;
        assert!((c.v0() - a.powi(3) / 4.0).abs() < 1e-40);
    }

    #[test]
    fn negative_density_names_the_key() {
        let err = load_params("[material]\nrho = -1\n").unwrap_err();
        match err {
            Error::Validation { key, .. } => assert!(key.ends_with("rho"), "{key}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn override_electron_g_factor() {
        let (_, m, _) = load_params("[material]\ng_e_perp = -0.43\n").unwrap();
        assert_eq!(m.g_e_perp, -0.43);
        let (_, m, _) = load_params("[material]\ng_e_perp = 0.5\n").unwrap();
        assert_eq!(m.g_e_perp, 0.5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_syntax() {
        assert!(matches!(
            load_params("[material]\nrh0 = 1\n"),
            Err(Error::ConfigParse(_))
        ));
        assert!(matches!(
            load_params("[material\n"),
            Err(Error::ConfigParse(_))
        ));
    }

    #[test]
    fn c_ratio_bounds() {
        assert!(load_params("[material]\nc_ratio = 1.0\n").is_err());
        assert!(load_params("[material]\nc_ratio = 0.0\n").is_err());
    }

    #[test]
    fn frequency_convention_parses() {
        let c = Config::parse("[cpt]\nfrequency_convention = \"ordinary\"\n").unwrap();
        assert_eq!(c.cpt.frequency_convention, FrequencyConvention::Ordinary);
        assert!(
            (FrequencyConvention::Ordinary.to_rad_per_ns(1.0) - std::f64::consts::TAU).abs()
                < 1e-15
        );
    }

    proptest! {
        #[test]
        fn serialize_round_trip(
            rho in 1.0e3..1.0e4f64,
            c_ratio in 0.01..0.99f64,
            b in -5.0..-0.1f64,
            bp in proptest::option::of(-5.0..-0.1f64),
            c_as in 1e-7..1e-5f64,
            a_b in 5e-10..5e-9f64,
            temp in 0.1..300.0f64,
        ) {
            let mut cfg = Config::default();
            cfg.material.rho = rho;
            cfg.material.c_ratio = c_ratio;
            cfg.material.b = b;
            cfg.material.b_prime = bp;
            cfg.hyperfine.c_as = c_as;
            cfg.hyperfine.bohr_radius = a_b;
            cfg.sample.temperature = temp;
            let text = cfg.to_toml();
            let back = Config::parse(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
