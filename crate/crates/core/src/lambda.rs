//! Three-level Λ system: two hole spin states sharing one trion level.
//!
//! Basis order is {|⇓⟩, |⇑⟩, |exc⟩}. The control laser couples |⇓⟩ to the
//! excited state and the probe couples |⇑⟩. Every frequency, rate and Rabi
//! amplitude is in rad/ns, times are in ns.

use nalgebra::{Matrix3, SMatrix, SVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ode::{self, Tolerance};
use crate::params::{CptParams, PhysicalConstants};
use crate::series::DataSeries;

pub type Matrix9 = SMatrix<Complex64, 9, 9>;
type Vector9 = SVector<Complex64, 9>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative pivot size below which the stationarity system counts as singular.
const SINGULAR_PIVOT: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaParams {
    /// Control Rabi amplitude (|⇓⟩ ↔ |exc⟩).
    pub omega_c: Complex64,
    /// Probe Rabi amplitude (|⇑⟩ ↔ |exc⟩).
    pub omega_p: Complex64,
    pub delta_c: f64,
    pub delta_p: f64,
    /// Population flow |⇓⟩ → |⇑⟩.
    pub gamma12_rate: f64,
    /// Population flow |⇑⟩ → |⇓⟩.
    pub gamma21_rate: f64,
    /// Pure ground-state dephasing.
    pub gamma12_deph: f64,
    /// Excited-state decay into each ground state.
    pub gamma3_relax: f64,
    pub gamma3_deph: f64,
}

impl Default for LambdaParams {
    fn default() -> Self {
        LambdaParams {
            omega_c: Complex64::new(0.0, 0.0),
            omega_p: Complex64::new(0.0, 0.0),
            delta_c: 0.0,
            delta_p: 0.0,
            gamma12_rate: 0.0,
            gamma21_rate: 0.0,
            gamma12_deph: 0.0,
            gamma3_relax: 0.0,
            gamma3_deph: 0.0,
        }
    }
}

/// Which leg of the Λ carries a laser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveLeg {
    Control,
    Probe,
}

impl std::str::FromStr for DriveLeg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(DriveLeg::Control),
            "probe" => Ok(DriveLeg::Probe),
            other => Err(Error::InvalidInput(format!(
                "drive leg must be `control` or `probe`, got `{other}`"
            ))),
        }
    }
}

impl LambdaParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("gamma12_rate", self.gamma12_rate),
            ("gamma21_rate", self.gamma21_rate),
            ("gamma12_deph", self.gamma12_deph),
            ("gamma3_relax", self.gamma3_relax),
            ("gamma3_deph", self.gamma3_deph),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(
                    name,
                    format!("rate must be finite and >= 0, got {v}"),
                ));
            }
        }
        let fields = [
            self.omega_c.re,
            self.omega_c.im,
            self.omega_p.re,
            self.omega_p.im,
            self.delta_c,
            self.delta_p,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "Rabi amplitudes and detunings must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Same relaxation, both lasers off.
    pub fn dark(&self) -> Self {
        LambdaParams {
            omega_c: Complex64::new(0.0, 0.0),
            omega_p: Complex64::new(0.0, 0.0),
            ..*self
        }
    }

    /// Same relaxation with a single laser on the chosen leg.
    pub fn single_drive(&self, leg: DriveLeg, rabi: f64, detuning: f64) -> Self {
        let mut p = self.dark();
        match leg {
            DriveLeg::Control => {
                p.omega_c = Complex64::new(rabi, 0.0);
                p.delta_c = detuning;
            }
            DriveLeg::Probe => {
                p.omega_p = Complex64::new(rabi, 0.0);
                p.delta_p = detuning;
            }
        }
        p
    }

    /// Largest rate or frequency scale in the model.
    pub fn max_rate(&self) -> f64 {
        [
            self.omega_c.norm(),
            self.omega_p.norm(),
            self.delta_c.abs(),
            self.delta_p.abs(),
            self.gamma12_rate,
            self.gamma21_rate,
            self.gamma12_deph,
            2.0 * self.gamma3_relax,
            self.gamma3_deph,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Smallest nonzero relaxation or dephasing rate, if any.
    pub fn min_nonzero_rate(&self) -> Option<f64> {
        [
            self.gamma12_rate + self.gamma21_rate,
            self.gamma12_deph,
            self.gamma3_relax,
            self.gamma3_deph,
        ]
        .into_iter()
        .filter(|r| *r > 0.0)
        .reduce(f64::min)
    }
}

/// Published-style CPT settings mapped onto model parameters: ground-state
/// dephasing 1/T2*, Boltzmann-split 1/T1, control power converted with the
/// shared Ω²/power coefficient. The probe is left off.
pub fn cpt_base(cpt: &CptParams, beta: f64) -> Result<LambdaParams> {
    let conv = cpt.frequency_convention;
    let (g12, g21) = boltzmann_split_beta(cpt.t1_us * 1e3, beta)?;
    let rabi_c = conv.to_rad_per_ns((cpt.rabi_sq_per_power * cpt.control_power_uw).sqrt());
    Ok(LambdaParams {
        omega_c: Complex64::new(rabi_c, 0.0),
        omega_p: Complex64::new(0.0, 0.0),
        delta_c: conv.to_rad_per_ns(cpt.control_detuning_ghz),
        delta_p: 0.0,
        gamma12_rate: g12,
        gamma21_rate: g21,
        gamma12_deph: 1.0 / cpt.t2_star_ns,
        gamma3_relax: conv.to_rad_per_ns(cpt.gamma3_ghz),
        gamma3_deph: conv.to_rad_per_ns(cpt.gamma3_deph_ghz),
    })
}

/// A validated 3×3 density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix3(Matrix3<Complex64>);

impl DensityMatrix3 {
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-9;
    pub const POSITIVITY_TOL: f64 = 1e-9;

    /// Checks Hermiticity, unit trace and positivity.
    pub fn new(m: Matrix3<Complex64>) -> Result<Self> {
        let rho = DensityMatrix3(m);
        if rho.hermiticity_error() > Self::HERMITIAN_TOL {
            return Err(Error::InvalidInput(
                "density matrix is not Hermitian".into(),
            ));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::InvalidInput(format!(
                "density matrix trace is {tr}, expected 1"
            )));
        }
        if rho.min_eigenvalue() < -Self::POSITIVITY_TOL {
            return Err(Error::InvalidInput(
                "density matrix has a negative eigenvalue".into(),
            ));
        }
        Ok(rho)
    }

    /// Diagonal (incoherent) state with the given populations.
    pub fn diagonal(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let c = |v: f64| Complex64::new(v, 0.0);
        Self::new(Matrix3::from_diagonal(&nalgebra::Vector3::new(
            c(p1),
            c(p2),
            c(p3),
        )))
    }

    /// Wraps without validation; numerical outputs go through here.
    pub(crate) fn from_raw(m: Matrix3<Complex64>) -> Self {
        DensityMatrix3(m)
    }

    pub fn matrix(&self) -> &Matrix3<Complex64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    /// Diagonal entry i (0-based), real part.
    pub fn population(&self, i: usize) -> f64 {
        self.0[(i, i)].re
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Largest |ρ - ρ†| entry.
    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    fn to_vec(self) -> Vector9 {
        Vector9::from_fn(|k, _| self.0[(k / 3, k % 3)])
    }

    fn from_vec(v: &Vector9) -> Self {
        DensityMatrix3(Matrix3::from_fn(|i, j| v[3 * i + j]))
    }
}

/// H/ħ = -[[Δc, 0, Ωc*/2], [0, Δp, Ωp*/2], [Ωc/2, Ωp/2, 0]].
pub fn build_h(p: &LambdaParams) -> Matrix3<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    let half = 0.5;
    -Matrix3::new(
        Complex64::new(p.delta_c, 0.0),
        z,
        p.omega_c.conj() * half,
        z,
        Complex64::new(p.delta_p, 0.0),
        p.omega_p.conj() * half,
        p.omega_c * half,
        p.omega_p * half,
        z,
    )
}

/// Relaxation part L(ρ).
fn dissipator(rho: &Matrix3<Complex64>, p: &LambdaParams) -> Matrix3<Complex64> {
    let (g12, g21, g3) = (p.gamma12_rate, p.gamma21_rate, p.gamma3_relax);
    let d12 = 0.5 * (g12 + g21) + p.gamma12_deph;
    let d13 = 0.5 * (g12 + 2.0 * g3) + p.gamma3_deph;
    let d23 = 0.5 * (g21 + 2.0 * g3) + p.gamma3_deph;
    let r = |i: usize, j: usize| rho[(i, j)];
    Matrix3::new(
        r(0, 0) * -g12 + r(1, 1) * g21 + r(2, 2) * g3,
        r(0, 1) * -d12,
        r(0, 2) * -d13,
        r(1, 0) * -d12,
        r(0, 0) * g12 - r(1, 1) * g21 + r(2, 2) * g3,
        r(1, 2) * -d23,
        r(2, 0) * -d13,
        r(2, 1) * -d23,
        r(2, 2) * (-2.0 * g3),
    )
}

/// dρ/dt = -i[H, ρ] + L(ρ).
pub fn lindblad_rhs(rho: &DensityMatrix3, p: &LambdaParams) -> Matrix3<Complex64> {
    let h = build_h(p);
    let m = rho.matrix();
    (h * m - m * h) * -I + dissipator(m, p)
}

/// Row-major vectorized generator: vec(dρ/dt) = L vec(ρ).
pub fn liouvillian(p: &LambdaParams) -> Matrix9 {
    let h = build_h(p);
    let mut l = Matrix9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let row = 3 * i + j;
            for k in 0..3 {
                l[(row, 3 * k + j)] += -I * h[(i, k)];
                l[(row, 3 * i + k)] += I * h[(k, j)];
            }
        }
    }
    for col in 0..9 {
        let mut e = Matrix3::zeros();
        e[(col / 3, col % 3)] = Complex64::new(1.0, 0.0);
        let d = dissipator(&e, p);
        for row in 0..9 {
            l[(row, col)] += d[(row / 3, row % 3)];
        }
    }
    l
}

/// Splits 1/T1 into upward and downward flows with detailed balance
/// Γ21/Γ12 = exp(-β), β = ħω/kBT. `splitting` is in rad/ns.
pub fn boltzmann_split(
    t1: f64,
    splitting: f64,
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<(f64, f64)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let beta = if temperature.is_infinite() {
        0.0
    } else {
        let energy = splitting * 1e9 * consts.hbar / crate::params::ELEMENTARY_CHARGE;
        energy.abs() / (consts.k_b * temperature)
    };
    boltzmann_split_beta(t1, beta)
}

/// Boltzmann split with β given directly.
pub fn boltzmann_split_beta(t1: f64, beta: f64) -> Result<(f64, f64)> {
    if !(t1 > 0.0) {
        return Err(Error::InvalidInput(format!("T1 must be > 0, got {t1}")));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidInput(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    let rate = 1.0 / t1;
    let w = (-beta).exp();
    let g21 = rate * w / (1.0 + w);
    // subtracting keeps the sum exact
    Ok((rate - g21, g21))
}

/// Zeeman splitting |gμB B| as an angular frequency in rad/ns.
pub fn splitting_rad_per_ns(g: f64, field: f64, consts: &PhysicalConstants) -> f64 {
    consts.zeeman_ev(g, field) * crate::params::ELEMENTARY_CHARGE / consts.hbar * 1e-9
}

/// Stationary state of the master equation. The ρ11 equation, redundant
/// because the generator is trace-free, is replaced by tr ρ = 1.
pub fn steady_state(p: &LambdaParams) -> Result<DensityMatrix3> {
    p.validate()?;
    let mut a = liouvillian(p);
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::NonUniqueSteadyState);
    }
    for k in 0..9 {
        a[(0, k)] = Complex64::new(0.0, 0.0);
    }
    for d in [0, 4, 8] {
        a[(0, d)] = Complex64::new(scale, 0.0);
    }
    let mut b = Vector9::zeros();
    b[0] = Complex64::new(scale, 0.0);

    let lu = a.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..9).map(|k| u[(k, k)].norm()).collect();
    let max_pivot = pivots.iter().copied().fold(0.0, f64::max);
    let min_pivot = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_pivot > SINGULAR_PIVOT * max_pivot) {
        return Err(Error::NonUniqueSteadyState);
    }
    let x = lu.solve(&b).ok_or(Error::NonUniqueSteadyState)?;
    let m = DensityMatrix3::from_vec(&x).0;
    Ok(DensityMatrix3::from_raw(
        (m + m.adjoint()) * Complex64::new(0.5, 0.0),
    ))
}

/// Integrates the master equation and returns ρ at each grid time, the
/// first entry being `rho0` itself.
pub fn time_evolve(
    rho0: &DensityMatrix3,
    p: &LambdaParams,
    t_grid: &[f64],
    tol: Tolerance,
) -> Result<Vec<DensityMatrix3>> {
    p.validate()?;
    let l = liouvillian(p);
    let traj = ode::integrate(|_t, y: &Vector9| l * y, rho0.to_vec(), t_grid, tol)?;
    Ok(traj.iter().map(DensityMatrix3::from_vec).collect())
}

/// One CPT trace: excited-state population against probe detuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// (probe detuning in rad/ns, ρ33).
    pub points: Vec<(f64, f64)>,
    /// Probe power, µW.
    pub power: f64,
    /// Parameters with the probe Rabi amplitude set for this power.
    pub params: LambdaParams,
}

impl Spectrum {
    pub fn detunings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Probe amplitude for a given power: Ωp² = coefficient × power.
pub fn probe_rabi(power_to_rabi_sq: f64, power: f64) -> f64 {
    (power_to_rabi_sq * power).sqrt()
}

/// ρ33 against probe detuning at each probe power. `power_to_rabi_sq`
/// converts µW to (rad/ns)².
pub fn cpt_spectrum(
    base: &LambdaParams,
    probe_detunings: &[f64],
    probe_powers: &[f64],
    power_to_rabi_sq: f64,
) -> Result<Vec<Spectrum>> {
    if probe_detunings.is_empty() || probe_powers.is_empty() {
        return Err(Error::InvalidInput(
            "detuning and power grids must be non-empty".into(),
        ));
    }
    if !(power_to_rabi_sq > 0.0) {
        return Err(Error::InvalidInput(format!(
            "power-to-Rabi coefficient must be > 0, got {power_to_rabi_sq}"
        )));
    }
    if probe_detunings.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "probe detunings must be strictly increasing".into(),
        ));
    }
    if let Some(bad) = probe_powers.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "probe power must be >= 0, got {bad}"
        )));
    }
    probe_powers
        .iter()
        .map(|&power| {
            let mut params = *base;
            params.omega_p = Complex64::new(probe_rabi(power_to_rabi_sq, power), 0.0);
            let points = probe_detunings
                .iter()
                .map(|&d| {
                    let mut q = params;
                    q.delta_p = d;
                    Ok((d, steady_state(&q)?.population(2)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Spectrum {
                points,
                power,
                params,
            })
        })
        .collect()
}

/// Thermal (lasers off) state for the given relaxation rates.
pub fn thermal_state(p: &LambdaParams) -> Result<DensityMatrix3> {
    steady_state(&p.dark())
}

fn uniform_grid(duration: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|k| duration * k as f64 / (samples - 1) as f64)
        .collect()
}

/// Emission Γ3·ρ33 (ns⁻¹) during a drive pulse that starts from the thermal
/// state. Which leg is driven is whatever `p` has switched on.
pub fn pumping_signal(p: &LambdaParams, duration: f64, samples: usize) -> Result<DataSeries> {
    if !(duration > 0.0) {
        return Err(Error::InvalidInput(format!(
            "pulse duration must be > 0, got {duration}"
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let rho0 = thermal_state(p)?;
    let t = uniform_grid(duration, samples);
    let traj = time_evolve(&rho0, p, &t, Tolerance::default())?;
    let y = traj
        .iter()
        .map(|r| p.gamma3_relax * r.population(2))
        .collect();
    DataSeries::new(t, y, None).map(|s| s.with_label("pump"))
}

/// Readout settings for the recovery sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Readout {
    /// Length of the readout pulse (ns); the signal is the mean Γ3·ρ33 over it.
    pub window: f64,
    /// Time samples used to average over the window.
    pub samples: usize,
}

impl Default for Readout {
    fn default() -> Self {
        Readout {
            window: 20.0,
            samples: 81,
        }
    }
}

/// Pump → dark τ → readout. The drive configured in `p` is used for both
/// pump and readout pulses; during the dark interval the lasers are off and
/// the spin relaxes with 1/T1 = Γ12 + Γ21.
pub fn recovery_curve(
    p: &LambdaParams,
    pump_duration: f64,
    dark_times: &[f64],
    readout: Readout,
) -> Result<DataSeries> {
    if !(pump_duration > 0.0) {
        return Err(Error::InvalidInput(format!(
            "pump duration must be > 0, got {pump_duration}"
        )));
    }
    if dark_times.is_empty() || dark_times[0] < 0.0 {
        return Err(Error::InvalidInput(
            "dark times must be non-empty and >= 0".into(),
        ));
    }
    if dark_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "dark times must be strictly increasing".into(),
        ));
    }
    if !(readout.window > 0.0) || readout.samples < 2 {
        return Err(Error::InvalidInput(
            "readout window must be > 0 with >= 2 samples".into(),
        ));
    }
    let tol = Tolerance::default();
    let thermal = thermal_state(p)?;
    let pumped = *time_evolve(&thermal, p, &[0.0, pump_duration], tol)?
        .last()
        .expect("two grid points");

    let mut grid = Vec::with_capacity(dark_times.len() + 1);
    if dark_times[0] > 0.0 {
        grid.push(0.0);
    }
    grid.extend_from_slice(dark_times);
    let dark = time_evolve(&pumped, &p.dark(), &grid, tol)?;
    let offset = grid.len() - dark_times.len();

    let read_grid = uniform_grid(readout.window, readout.samples);
    let y = dark[offset..]
        .iter()
        .map(|rho| {
            let tr = time_evolve(rho, p, &read_grid, tol)?;
            let v: Vec<f64> = tr
                .iter()
                .map(|r| p.gamma3_relax * r.population(2))
                .collect();
            Ok(trapezoid_mean(&read_grid, &v))
        })
        .collect::<Result<Vec<_>>>()?;
    DataSeries::new(dark_times.to_vec(), y, None).map(|s| s.with_label("recovery"))
}

fn trapezoid_mean(x: &[f64], y: &[f64]) -> f64 {
    let area: f64 = x
        .windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum();
    area / (x[x.len() - 1] - x[0])
}
