//! Least-squares analysis: background removal, single-exponential T1 fits
//! and the simultaneous multi-power CPT fit.
//!
//! The optimizer is a bounded Levenberg-Marquardt loop with Marquardt
//! diagonal scaling. Uncertainties come from (JᵀJ)⁻¹ at the optimum scaled
//! by the reduced chi-square and are reported as 2σ. Without a sigma column
//! every point has unit weight.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lambda::{self, LambdaParams};
use crate::params::CptParams;
use crate::series::DataSeries;

/// Condition number of the scaled normal matrix above which the fit is
/// reported as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease regarded as no progress.
    pub ftol: f64,
    /// Relative step length regarded as no progress.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Names of the free parameters, in covariance order.
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub two_sigma: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Euclidean norm of the (weighted) residual vector.
    pub residual_norm: f64,
    pub reduced_chi_sq: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Condition number of the column-scaled JᵀJ.
    pub condition_number: f64,
    pub ill_conditioned: bool,
    /// Free parameters that ended on a bound.
    pub at_bound: Vec<String>,
    /// Parameters held fixed during the fit.
    pub fixed: Vec<(String, f64)>,
    pub diagnostics: Vec<String>,
    /// Objective after each accepted iteration, starting with the initial one.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name)
            .map(|i| self.values[i])
            .or_else(|| self.fixed.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
    }

    pub fn two_sigma_of(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.two_sigma[i])
    }
}

/// Indices of the outermost points: `tail_fraction` of the series split
/// evenly between both ends, at least one point per end.
pub fn tail_indices(n: usize, tail_fraction: f64) -> Vec<usize> {
    let per_side = ((tail_fraction * n as f64 / 2.0).floor() as usize).max(1);
    (0..per_side).chain(n - per_side..n).collect()
}

/// Subtracts the mean of the outermost points.
pub fn subtract_background(series: &DataSeries, tail_fraction: f64) -> Result<DataSeries> {
    if !(tail_fraction > 0.0 && tail_fraction <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "tail fraction must be in (0, 0.5], got {tail_fraction}"
        )));
    }
    if series.len() < 4 {
        return Err(Error::InvalidInput(
            "background subtraction needs at least 4 points".into(),
        ));
    }
    let idx = tail_indices(series.len(), tail_fraction);
    let bg = idx.iter().map(|&i| series.y[i]).sum::<f64>() / idx.len() as f64;
    let mut out = series.clone();
    out.y.iter_mut().for_each(|v| *v -= bg);
    Ok(out)
}

struct LmOutcome {
    x: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
    message: String,
    cost_history: Vec<f64>,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Finite-difference Jacobian. `typical` sets the step scale for parameters
/// sitting at or near zero, where a purely relative step drowns in rounding.
fn jacobian<F>(
    f: &mut F,
    x: &[f64],
    r0: &[f64],
    lower: &[f64],
    upper: &[f64],
    typical: &[f64],
    central: bool,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let eps = if central { 6e-6 } else { 1.5e-8 };
    for j in 0..n {
        let h = eps * x[j].abs().max(typical[j]);
        let mut xp = x.to_vec();
        if central && x[j] - h >= lower[j] && x[j] + h <= upper[j] {
            xp[j] = x[j] + h;
            let rp = f(&xp)?;
            xp[j] = x[j] - h;
            let rm = f(&xp)?;
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        } else {
            let step = if x[j] + h <= upper[j] { h } else { -h };
            xp[j] = x[j] + step;
            let rp = f(&xp)?;
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r0[i]) / step;
            }
        }
    }
    Ok(jac)
}

fn typical_scales(x0: &[f64]) -> Vec<f64> {
    x0.iter().map(|v| v.abs().max(1e-6)).collect()
}

/// Bounded Levenberg-Marquardt. Only steps that lower the cost are accepted,
/// so the objective history is monotone.
fn levenberg_marquardt<F>(
    f: &mut F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> Result<LmOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x: Vec<f64> = x0
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect();
    let mut r = f(&x)?;
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::Fit(
            "objective is not finite at the starting point".into(),
        ));
    }
    let typical = typical_scales(x0);
    let mut history = vec![cost];
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(f, &x, &r, lower, upper, &typical, false)?;
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let dmax = a.diagonal().max();
        let diag: Vec<f64> = a
            .diagonal()
            .iter()
            .map(|d| d.max(1e-12 * dmax).max(f64::MIN_POSITIVE))
            .collect();
        // variables held at a bound by the gradient are left out of the step
        let active: Vec<bool> = (0..n)
            .map(|k| (x[k] <= lower[k] && g[k] > 0.0) || (x[k] >= upper[k] && g[k] < 0.0))
            .collect();
        let gscaled = (0..n)
            .filter(|&k| !active[k])
            .map(|k| g[k].abs() / diag[k].sqrt())
            .fold(0.0, f64::max);
        let mut a = a;
        let mut g = g;
        for k in (0..n).filter(|&k| active[k]) {
            a.row_mut(k).fill(0.0);
            a.column_mut(k).fill(0.0);
            a[(k, k)] = diag[k];
            g[k] = 0.0;
        }
        if gscaled <= 1e-14 * (2.0 * cost).sqrt().max(f64::MIN_POSITIVE) {
            return Ok(LmOutcome {
                x,
                cost,
                iterations,
                converged: true,
                message: "gradient vanished".into(),
                cost_history: history,
            });
        }

        loop {
            let mut aug = a.clone();
            for k in 0..n {
                aug[(k, k)] += lambda * diag[k];
            }
            let step = aug.cholesky().map(|c| c.solve(&(-&g)));
            let Some(delta) = step else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    return Ok(LmOutcome {
                        x,
                        cost,
                        iterations,
                        converged: false,
                        message: "normal equations singular".into(),
                        cost_history: history,
                    });
                }
                continue;
            };
            let trial: Vec<f64> = (0..n)
                .map(|k| (x[k] + delta[k]).clamp(lower[k], upper[k]))
                .collect();
            let rt = f(&trial);
            let ct = rt.as_ref().map(|v| cost_of(v)).unwrap_or(f64::INFINITY);
            if ct.is_finite() && ct < cost {
                let step_len: f64 = (0..n)
                    .map(|k| ((trial[k] - x[k]) / x[k].abs().max(1e-12)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let decrease = cost - ct;
                x = trial;
                r = rt.expect("finite cost implies a residual vector");
                cost = ct;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-15);
                if decrease <= opts.ftol * cost || step_len <= opts.xtol {
                    return Ok(LmOutcome {
                        x,
                        cost,
                        iterations,
                        converged: true,
                        message: "relative change below tolerance".into(),
                        cost_history: history,
                    });
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // no downhill step at any damping: a minimum to working precision
                let stationary = gscaled <= 1e-6 * (2.0 * cost).sqrt().max(1e-300);
                let message = if stationary {
                    "no further decrease possible"
                } else {
                    "damping overflow away from a stationary point"
                };
                return Ok(LmOutcome {
                    x,
                    cost,
                    iterations,
                    converged: stationary,
                    message: message.into(),
                    cost_history: history,
                });
            }
        }
    }
    Ok(LmOutcome {
        x,
        cost,
        iterations,
        converged: false,
        message: format!("iteration budget of {} exhausted", opts.max_iter),
        cost_history: history,
    })
}

struct Covariance {
    cov: DMatrix<f64>,
    condition: f64,
}

/// (JᵀJ)⁻¹ s² via the column-scaled normal matrix; a pseudo-inverse is used
/// when that matrix is numerically singular.
fn covariance(jac: &DMatrix<f64>, reduced_chi_sq: f64) -> Covariance {
    let n = jac.ncols();
    let a = jac.transpose() * jac;
    let d: Vec<f64> = (0..n).map(|k| a[(k, k)].sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| {
        if d[i] > 0.0 && d[j] > 0.0 {
            a[(i, j)] / (d[i] * d[j])
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    let eig = scaled.clone().symmetric_eigen();
    let emax = eig.eigenvalues.max();
    let emin = eig.eigenvalues.min();
    let condition = if emin > 0.0 {
        emax / emin
    } else {
        f64::INFINITY
    };
    let cutoff = emax * 1e-15;
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let e = eig.eigenvalues[k];
        let w = if e > cutoff { 1.0 / e } else { 1.0 / cutoff };
        let v = eig.eigenvectors.column(k);
        inv += v * v.transpose() * w;
    }
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let s = if d[i] > 0.0 && d[j] > 0.0 {
            d[i] * d[j]
        } else {
            f64::MIN_POSITIVE
        };
        inv[(i, j)] / s * reduced_chi_sq
    });
    Covariance { cov, condition }
}

struct Problem<'a> {
    names: Vec<String>,
    x0: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    residuals: Box<dyn FnMut(&[f64]) -> Result<Vec<f64>> + 'a>,
}

fn solve(mut p: Problem<'_>, opts: LmOptions, fixed: Vec<(String, f64)>) -> Result<FitResult> {
    let out = levenberg_marquardt(&mut p.residuals, &p.x0, &p.lower, &p.upper, opts)?;
    let r = (p.residuals)(&out.x)?;
    let jac = jacobian(
        &mut p.residuals,
        &out.x,
        &r,
        &p.lower,
        &p.upper,
        &typical_scales(&p.x0),
        true,
    )?;
    let m = r.len();
    let n = out.x.len();
    let dof = m.saturating_sub(n).max(1);
    let reduced_chi_sq = 2.0 * out.cost / dof as f64;
    let Covariance { cov, condition } = covariance(&jac, reduced_chi_sq);
    let two_sigma = (0..n).map(|k| 2.0 * cov[(k, k)].max(0.0).sqrt()).collect();
    let at_bound = (0..n)
        .filter(|&k| {
            let tol = 1e-9 * out.x[k].abs().max(1e-12);
            (out.x[k] - p.lower[k]).abs() <= tol || (p.upper[k] - out.x[k]).abs() <= tol
        })
        .map(|k| p.names[k].clone())
        .collect::<Vec<_>>();
    let ill_conditioned = !(condition <= ILL_CONDITIONED);
    let mut diagnostics = vec![out.message];
    if ill_conditioned {
        diagnostics.push(format!("scaled normal matrix condition number {condition:.3e}; parameters are not jointly identifiable"));
    }
    if !at_bound.is_empty() {
        diagnostics.push(format!("at bound: {}", at_bound.join(", ")));
    }
    Ok(FitResult {
        names: p.names,
        values: out.x,
        two_sigma,
        covariance: cov,
        residual_norm: (2.0 * out.cost).sqrt(),
        reduced_chi_sq,
        converged: out.converged,
        iterations: out.iterations,
        condition_number: condition,
        ill_conditioned,
        at_bound,
        fixed,
        diagnostics,
        cost_history: out.cost_history,
    })
}

fn weights(series: &DataSeries) -> Vec<f64> {
    match &series.sigma {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; series.len()],
    }
}

/// Shape of the single-exponential model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpForm {
    /// y = offset + amplitude (1 - exp(-x/τ))
    Recovery,
    /// y = offset + amplitude exp(-x/τ)
    Decay,
}

impl std::str::FromStr for ExpForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recovery" => Ok(ExpForm::Recovery),
            "decay" => Ok(ExpForm::Decay),
            other => Err(Error::InvalidInput(format!(
                "form must be `recovery` or `decay`, got `{other}`"
            ))),
        }
    }
}

impl ExpForm {
    fn basis(self, x: f64, tau: f64) -> f64 {
        match self {
            ExpForm::Recovery => -(-x / tau).exp_m1(),
            ExpForm::Decay => (-x / tau).exp(),
        }
    }

    pub fn eval(self, x: f64, amplitude: f64, tau: f64, offset: f64) -> f64 {
        offset + amplitude * self.basis(x, tau)
    }
}

/// Weighted linear least squares for (offset, amplitude) at fixed τ.
fn linear_for_tau(series: &DataSeries, w: &[f64], form: ExpForm, tau: f64) -> (f64, f64, f64) {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..series.len() {
        let w2 = w[i] * w[i];
        let e = form.basis(series.x[i], tau);
        s11 += w2;
        s12 += w2 * e;
        s22 += w2 * e * e;
        b1 += w2 * series.y[i];
        b2 += w2 * e * series.y[i];
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-14 * s11 * s22 {
        return (b1 / s11, 0.0, f64::INFINITY);
    }
    let offset = (s22 * b1 - s12 * b2) / det;
    let amp = (s11 * b2 - s12 * b1) / det;
    let cost: f64 = (0..series.len())
        .map(|i| (w[i] * (series.y[i] - form.eval(series.x[i], amp, tau, offset))).powi(2))
        .sum();
    (offset, amp, cost)
}

/// Fits a single exponential; parameter names are `amplitude`, `tau`,
/// `offset`, with τ in the units of x.
pub fn fit_exponential(series: &DataSeries, form: ExpForm) -> Result<FitResult> {
    fit_exponential_with(series, form, LmOptions::default())
}

pub fn fit_exponential_with(
    series: &DataSeries,
    form: ExpForm,
    opts: LmOptions,
) -> Result<FitResult> {
    if series.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "exponential fit needs >= 5 points, got {}",
            series.len()
        )));
    }
    let names = vec![
        "amplitude".to_string(),
        "tau".to_string(),
        "offset".to_string(),
    ];
    let ymin = series.y.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = series.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > ymin) {
        return Ok(FitResult {
            names,
            values: vec![0.0, f64::NAN, ymin],
            two_sigma: vec![f64::NAN; 3],
            covariance: DMatrix::from_element(3, 3, f64::NAN),
            residual_norm: 0.0,
            reduced_chi_sq: 0.0,
            converged: false,
            iterations: 0,
            condition_number: f64::INFINITY,
            ill_conditioned: true,
            at_bound: Vec::new(),
            fixed: Vec::new(),
            diagnostics: vec!["degenerate: zero dynamic range, amplitude and tau undefined".into()],
            cost_history: Vec::new(),
        });
    }
    let w = weights(series);
    let span = series.x[series.len() - 1] - series.x[0];
    let dx_min = series
        .x
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(f64::INFINITY, f64::min);
    // coarse log scan over τ with the linear parameters eliminated
    let (lo, hi) = ((0.3 * dx_min).ln(), (10.0 * span).ln());
    let best_tau = (0..=120)
        .map(|k| (lo + (hi - lo) * k as f64 / 120.0).exp())
        .map(|tau| (tau, linear_for_tau(series, &w, form, tau).2))
        .fold(
            (span / 3.0, f64::INFINITY),
            |a, b| if b.1 < a.1 { b } else { a },
        )
        .0;
    let (offset0, amp0, _) = linear_for_tau(series, &w, form, best_tau);

    let x = &series.x;
    let y = &series.y;
    let residuals = move |p: &[f64]| -> Result<Vec<f64>> {
        Ok((0..x.len())
            .map(|i| w[i] * (y[i] - form.eval(x[i], p[0], p[1], p[2])))
            .collect())
    };
    let problem = Problem {
        names,
        x0: vec![amp0, best_tau, offset0],
        lower: vec![f64::NEG_INFINITY, 1e-9 * dx_min, f64::NEG_INFINITY],
        upper: vec![f64::INFINITY, 1e6 * span, f64::INFINITY],
        residuals: Box::new(residuals),
    };
    let mut fit = solve(problem, opts, Vec::new())?;
    let rel_amp = fit.values[0].abs() / (ymax - ymin);
    if rel_amp < 1e-6 {
        fit.converged = false;
        fit.diagnostics
            .push("degenerate: amplitude is negligible".into());
    }
    Ok(fit)
}

/// Shared CPT-model parameters, named after the matching config fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CptParam {
    T2Star,
    T1,
    Gamma3,
    Gamma3Deph,
    RabiSqPerPower,
    ControlDetuning,
}

impl CptParam {
    pub const ALL: [CptParam; 6] = [
        CptParam::T2Star,
        CptParam::T1,
        CptParam::Gamma3,
        CptParam::Gamma3Deph,
        CptParam::RabiSqPerPower,
        CptParam::ControlDetuning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CptParam::T2Star => "t2_star_ns",
            CptParam::T1 => "t1_us",
            CptParam::Gamma3 => "gamma3_ghz",
            CptParam::Gamma3Deph => "gamma3_deph_ghz",
            CptParam::RabiSqPerPower => "rabi_sq_per_power",
            CptParam::ControlDetuning => "control_detuning_ghz",
        }
    }

    fn get(self, c: &CptParams) -> f64 {
        match self {
            CptParam::T2Star => c.t2_star_ns,
            CptParam::T1 => c.t1_us,
            CptParam::Gamma3 => c.gamma3_ghz,
            CptParam::Gamma3Deph => c.gamma3_deph_ghz,
            CptParam::RabiSqPerPower => c.rabi_sq_per_power,
            CptParam::ControlDetuning => c.control_detuning_ghz,
        }
    }

    fn set(self, c: &mut CptParams, v: f64) {
        match self {
            CptParam::T2Star => c.t2_star_ns = v,
            CptParam::T1 => c.t1_us = v,
            CptParam::Gamma3 => c.gamma3_ghz = v,
            CptParam::Gamma3Deph => c.gamma3_deph_ghz = v,
            CptParam::RabiSqPerPower => c.rabi_sq_per_power = v,
            CptParam::ControlDetuning => c.control_detuning_ghz = v,
        }
    }

    fn lower(self) -> f64 {
        match self {
            CptParam::ControlDetuning => f64::NEG_INFINITY,
            CptParam::Gamma3Deph => 0.0,
            _ => 1e-9,
        }
    }
}

impl std::str::FromStr for CptParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CptParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown CPT parameter `{s}`")))
    }
}

/// How the control laser strength is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlDrive {
    /// Control power in µW, converted with the shared Ω²/power coefficient.
    Power(f64),
    /// Fixed control Ω² in GHz², independent of the coefficient.
    RabiSq(f64),
}

/// Amplitude nuisance parameters of the CPT fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// One free scale per spectrum (`scale_k`).
    PerCurve,
    /// One detection scale shared by all spectra (`scale`).
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CptFitConfig {
    /// Starting values for the shared parameters; also carries the
    /// frequency convention.
    pub initial: CptParams,
    pub control: ControlDrive,
    /// Zeeman splitting over kBT for the Boltzmann split of 1/T1.
    pub beta: f64,
    pub frozen: Vec<CptParam>,
    /// Tail fraction for background subtraction of data and model; `None`
    /// fits raw spectra.
    pub background_tail: Option<f64>,
    pub scales: ScaleMode,
    pub lm: LmOptions,
}

impl CptFitConfig {
    pub fn new(initial: CptParams, beta: f64) -> Self {
        CptFitConfig {
            initial,
            control: ControlDrive::Power(initial.control_power_uw),
            beta,
            frozen: Vec::new(),
            background_tail: Some(0.2),
            scales: ScaleMode::PerCurve,
            lm: LmOptions::default(),
        }
    }
}

/// Model parameters for one probe power; detunings and rates in the config
/// frequency convention.
pub fn cpt_model_params(
    c: &CptParams,
    control: ControlDrive,
    beta: f64,
    power: f64,
) -> Result<LambdaParams> {
    let conv = c.frequency_convention;
    let mut p = lambda::cpt_base(c, beta)?;
    let rabi_sq_c = match control {
        ControlDrive::Power(pw) => c.rabi_sq_per_power * pw,
        ControlDrive::RabiSq(v) => v,
    };
    p.omega_c = Complex64::new(conv.to_rad_per_ns(rabi_sq_c.max(0.0).sqrt()), 0.0);
    p.omega_p = Complex64::new(
        conv.to_rad_per_ns(lambda::probe_rabi(c.rabi_sq_per_power, power)),
        0.0,
    );
    Ok(p)
}

/// Unscaled ρ33 at each probe detuning (GHz-labelled) for one power.
pub fn cpt_model_curve(
    c: &CptParams,
    control: ControlDrive,
    beta: f64,
    power: f64,
    detunings_ghz: &[f64],
) -> Result<Vec<f64>> {
    let base = cpt_model_params(c, control, beta, power)?;
    let conv = c.frequency_convention;
    detunings_ghz
        .iter()
        .map(|&d| {
            let mut q = base;
            q.delta_p = conv.to_rad_per_ns(d);
            Ok(lambda::steady_state(&q)?.population(2))
        })
        .collect()
}

/// Simultaneous fit of CPT spectra taken at different probe powers. Shared
/// parameters are the six [`CptParam`]s (minus frozen ones); each spectrum
/// gets its own amplitude scale `scale_k`. Spectrum x values are probe
/// detunings labelled GHz.
pub fn fit_cpt_global(spectra: &[DataSeries], cfg: &CptFitConfig) -> Result<FitResult> {
    if spectra.is_empty() {
        return Err(Error::InvalidInput("no spectra to fit".into()));
    }
    let mut powers = Vec::with_capacity(spectra.len());
    for (k, s) in spectra.iter().enumerate() {
        let p = s
            .power
            .ok_or_else(|| Error::InvalidInput(format!("spectrum {k} has no probe power")))?;
        if !(p >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "spectrum {k} has invalid power {p}"
            )));
        }
        powers.push(p);
    }
    let frozen_all = CptParam::ALL.iter().all(|p| cfg.frozen.contains(p));
    if spectra.len() < 2 && !frozen_all && !cfg.frozen.contains(&CptParam::RabiSqPerPower) {
        return Err(Error::InvalidInput(
            "a global fit needs >= 2 spectra unless Ω²/power is frozen".into(),
        ));
    }
    let mut distinct = powers.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < spectra.len().min(2) {
        return Err(Error::InvalidInput(
            "spectra must have distinct probe powers".into(),
        ));
    }
    cfg.initial.validate_for_fit()?;

    let data: Vec<DataSeries> = match cfg.background_tail {
        Some(t) => spectra
            .iter()
            .map(|s| subtract_background(s, t))
            .collect::<Result<_>>()?,
        None => spectra.to_vec(),
    };
    let tails: Vec<Option<Vec<usize>>> = data
        .iter()
        .map(|s| cfg.background_tail.map(|t| tail_indices(s.len(), t)))
        .collect();
    let w: Vec<Vec<f64>> = data.iter().map(weights).collect();

    let free: Vec<CptParam> = CptParam::ALL
        .into_iter()
        .filter(|p| !cfg.frozen.contains(p))
        .collect();
    let fixed = cfg
        .frozen
        .iter()
        .map(|p| (p.name().to_string(), p.get(&cfg.initial)))
        .collect();
    let nshared = free.len();

    let model = |x: &[f64]| -> Result<Vec<Vec<f64>>> {
        let mut c = cfg.initial;
        for (p, v) in free.iter().zip(x) {
            p.set(&mut c, *v);
        }
        data.iter()
            .zip(&powers)
            .zip(&tails)
            .map(|((s, &pw), tail)| {
                let mut m = cpt_model_curve(&c, cfg.control, cfg.beta, pw, &s.x)?;
                if let Some(idx) = tail {
                    let bg = idx.iter().map(|&i| m[i]).sum::<f64>() / idx.len() as f64;
                    m.iter_mut().for_each(|v| *v -= bg);
                }
                Ok(m)
            })
            .collect()
    };

    // scales start from the linear optimum at the initial shared values
    let x_shared: Vec<f64> = free.iter().map(|p| p.get(&cfg.initial)).collect();
    let m0 = model(&x_shared)?;
    let linear_scale = |ks: &[usize]| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &k in ks {
            for i in 0..data[k].len() {
                let w2 = w[k][i] * w[k][i];
                num += w2 * data[k].y[i] * m0[k][i];
                den += w2 * m0[k][i] * m0[k][i];
            }
        }
        if den > 0.0 {
            num / den
        } else {
            1.0
        }
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let (scale_names, scales0): (Vec<String>, Vec<f64>) = match cfg.scales {
        ScaleMode::PerCurve => (0..data.len())
            .map(|k| (format!("scale_{k}"), linear_scale(&[k])))
            .unzip(),
        ScaleMode::Shared => (vec!["scale".to_string()], vec![linear_scale(&all)]),
    };

    let mut names: Vec<String> = free.iter().map(|p| p.name().to_string()).collect();
    names.extend(scale_names);
    let mut x0 = x_shared;
    x0.extend(&scales0);
    let mut lower: Vec<f64> = free.iter().map(|p| p.lower()).collect();
    lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, scales0.len()));
    let upper = vec![f64::INFINITY; x0.len()];
    let shared_scale = cfg.scales == ScaleMode::Shared;

    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let m = model(&x[..nshared])?;
        let mut r = Vec::new();
        for (k, s) in data.iter().enumerate() {
            let scale = if shared_scale {
                x[nshared]
            } else {
                x[nshared + k]
            };
            r.extend((0..s.len()).map(|i| w[k][i] * (s.y[i] - scale * m[k][i])));
        }
        Ok(r)
    };
    let problem = Problem {
        names,
        x0,
        lower,
        upper,
        residuals: Box::new(residuals),
    };
    solve(problem, cfg.lm, fixed)
}

impl CptParams {
    fn validate_for_fit(&self) -> Result<()> {
        for p in CptParam::ALL {
            let v = p.get(self);
            if !v.is_finite() || v < p.lower() {
                return Err(Error::InvalidInput(format!(
                    "starting value of {} is invalid: {v}",
                    p.name()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(x: Vec<f64>, y: Vec<f64>) -> DataSeries {
        DataSeries::new(x, y, None).unwrap()
    }

    #[test]
    fn optimum_on_a_bound_is_converged() {
        let mut f =
            |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0] + 1.0, x[1] - 2.0, 0.1 * x[0] * x[1]]) };
        let out = levenberg_marquardt(
            &mut f,
            &[0.5, 0.0],
            &[0.0, f64::NEG_INFINITY],
            &[f64::INFINITY; 2],
            LmOptions::default(),
        )
        .unwrap();
        assert!(out.converged, "{}", out.message);
        assert_eq!(out.x[0], 0.0);
        assert!((out.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn background_examples() {
        let s = series((0..10).map(f64::from).collect(), vec![3.5; 10]);
        assert!(subtract_background(&s, 0.2)
            .unwrap()
            .y
            .iter()
            .all(|v| *v == 0.0));
        let y: Vec<f64> = (0..20)
            .map(|i| 100.0 + 5.0 * (-((i as f64 - 10.0) / 2.0).powi(2)).exp())
            .collect();
        let s2 =
            subtract_background(&series((0..20).map(f64::from).collect(), y.clone()), 0.2).unwrap();
        assert_relative_eq!(s2.y[10], 5.0, max_relative = 1e-6);
        assert!(subtract_background(&s, 0.0).is_err());
        assert!(subtract_background(&s, 0.6).is_err());
        assert!(subtract_background(&series(vec![0.0, 1.0, 2.0], vec![1.0; 3]), 0.5).is_err());
        // idempotent
        let again = subtract_background(&s2, 0.2).unwrap();
        for (a, b) in again.y.iter().zip(&s2.y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_indices_cover_both_ends() {
        assert_eq!(tail_indices(10, 0.2), vec![0, 9]);
        assert_eq!(tail_indices(10, 0.5), vec![0, 1, 8, 9]);
        assert_eq!(tail_indices(4, 0.1), vec![0, 3]);
    }

    #[test]
    fn noiseless_recovery_exact() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|t| ExpForm::Recovery.eval(*t, 2.0, 0.51, 0.3))
            .collect();
        let fit = fit_exponential(&series(x, y), ExpForm::Recovery).unwrap();
        assert!(fit.converged, "{:?}", fit.diagnostics);
        assert_relative_eq!(fit.value("tau").unwrap(), 0.51, max_relative = 1e-6);
        assert_relative_eq!(fit.value("amplitude").unwrap(), 2.0, max_relative = 1e-6);
        assert!(fit.cost_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noiseless_decay_exact() {
        let x: Vec<f64> = (0..30).map(|i| 10.0 + i as f64 * 40.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|t| ExpForm::Decay.eval(*t, -4.0, 180.0, 7.0))
            .collect();
        let fit = fit_exponential(&series(x, y), ExpForm::Decay).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.value("tau").unwrap(), 180.0, max_relative = 1e-6);
        assert_relative_eq!(fit.value("offset").unwrap(), 7.0, max_relative = 1e-6);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let fit = fit_exponential(
            &series((0..10).map(f64::from).collect(), vec![1.0; 10]),
            ExpForm::Recovery,
        )
        .unwrap();
        assert!(!fit.converged);
        assert!(fit.diagnostics[0].contains("degenerate"));
        assert!(fit_exponential(
            &series(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]),
            ExpForm::Recovery
        )
        .is_err());
    }

    #[test]
    fn noisy_recovery_within_two_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.06).collect();
        let mut hits = 0;
        for _ in 0..100 {
            let y: Vec<f64> = x
                .iter()
                .map(|t| ExpForm::Recovery.eval(*t, 1.0, 0.51, 0.0) + noise.sample(&mut rng))
                .collect();
            let fit = fit_exponential(&series(x.clone(), y), ExpForm::Recovery).unwrap();
            assert!(fit.converged);
            let (tau, ts) = (fit.value("tau").unwrap(), fit.two_sigma_of("tau").unwrap());
            if (tau - 0.51).abs() <= ts {
                hits += 1;
            }
        }
        assert!(hits >= 90, "{hits}");
    }

    #[test]
    fn covariance_matches_two_sigma() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, t)| {
                ExpForm::Decay.eval(*t, 1.0, 1.3, 0.1) + if i % 2 == 0 { 0.01 } else { -0.01 }
            })
            .collect();
        let fit = fit_exponential(&series(x, y), ExpForm::Decay).unwrap();
        for k in 0..3 {
            assert_relative_eq!(
                fit.two_sigma[k],
                2.0 * fit.covariance[(k, k)].sqrt(),
                max_relative = 1e-14
            );
        }
        assert!(fit.residual_norm.is_finite());
    }

    fn table_spectra(powers: &[f64], noise: f64, seed: u64) -> Vec<DataSeries> {
        let c = CptParams::default();
        let det: Vec<f64> = (-30..=30).map(|k| k as f64 * 0.1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        powers
            .iter()
            .map(|&p| {
                let m = cpt_model_curve(&c, ControlDrive::Power(3.0), 0.4702, p, &det).unwrap();
                let peak = m.iter().copied().fold(0.0, f64::max);
                let n = Normal::new(0.0, noise * peak).unwrap();
                let y = m.iter().map(|v| v + n.sample(&mut rng)).collect();
                series(det.clone(), y).with_power(p)
            })
            .collect()
    }

    #[test]
    fn single_free_parameter_recovered_exactly() {
        let spectra = table_spectra(&[1.0], 0.0, 0);
        let mut cfg = CptFitConfig::new(
            CptParams {
                t2_star_ns: 9.0,
                ..Default::default()
            },
            0.4702,
        );
        cfg.frozen = CptParam::ALL
            .iter()
            .copied()
            .filter(|p| *p != CptParam::T2Star)
            .collect();
        cfg.background_tail = None;
        let fit = fit_cpt_global(&spectra, &cfg).unwrap();
        assert!(fit.converged, "{:?}", fit.diagnostics);
        assert_relative_eq!(fit.value("t2_star_ns").unwrap(), 6.8, max_relative = 1e-4);
        assert_relative_eq!(fit.value("scale_0").unwrap(), 1.0, max_relative = 1e-4);
        assert_eq!(fit.value("t1_us"), Some(0.09));
    }

    #[test]
    fn global_fit_rejects_bad_input() {
        let cfg = CptFitConfig::new(CptParams::default(), 0.4702);
        assert!(fit_cpt_global(&[], &cfg).is_err());
        let one = table_spectra(&[1.0], 0.0, 0);
        assert!(fit_cpt_global(&one, &cfg).is_err());
        let mut same = table_spectra(&[1.0, 1.0], 0.0, 0);
        assert!(fit_cpt_global(&same, &cfg).is_err());
        same[1].power = None;
        assert!(fit_cpt_global(&same, &cfg).is_err());
    }

    #[test]
    fn identical_spectra_make_coefficient_unidentifiable() {
        let c = CptParams::default();
        let det: Vec<f64> = (-30..=30).map(|k| k as f64 * 0.1).collect();
        let m = cpt_model_curve(&c, ControlDrive::Power(3.0), 0.4702, 1.0, &det).unwrap();
        let cfg = CptFitConfig::new(c, 0.4702);
        let copies: Vec<DataSeries> = [1.0, 2.0]
            .iter()
            .map(|&p| series(det.clone(), m.clone()).with_power(p))
            .collect();
        let fit = fit_cpt_global(&copies, &cfg).unwrap();
        assert!(fit.ill_conditioned, "condition {:e}", fit.condition_number);
        let genuine = table_spectra(&[1.0, 2.0], 0.0, 0);
        let fit = fit_cpt_global(&genuine, &cfg).unwrap();
        assert!(!fit.ill_conditioned, "condition {:e}", fit.condition_number);
    }

    #[test]
    fn shared_scale_names() {
        let spectra = table_spectra(&[1.0, 2.0], 0.0, 0);
        let mut cfg = CptFitConfig::new(CptParams::default(), 0.4702);
        cfg.scales = ScaleMode::Shared;
        cfg.background_tail = None;
        cfg.frozen = vec![CptParam::T1, CptParam::Gamma3Deph];
        let fit = fit_cpt_global(&spectra, &cfg).unwrap();
        assert_eq!(
            fit.names,
            [
                "t2_star_ns",
                "gamma3_ghz",
                "rabi_sq_per_power",
                "control_detuning_ghz",
                "scale"
            ]
        );
        assert_relative_eq!(fit.value("scale").unwrap(), 1.0, max_relative = 1e-6);
        assert_eq!(fit.value("gamma3_deph_ghz"), Some(0.64));
    }

    #[test]
    fn baseline_recovered_within_tail_noise() {
        let c = CptParams::default();
        // wide scan so the line wings are negligible in the tails
        let det: Vec<f64> = (-100..=100).map(|k| k as f64 * 0.6).collect();
        let m = cpt_model_curve(&c, ControlDrive::Power(3.0), 0.4702, 1.0, &det).unwrap();
        let peak = m.iter().copied().fold(0.0, f64::max);
        let (baseline, sigma) = (0.4 * peak, 0.03 * peak);
        let tails = tail_indices(det.len(), 0.2);
        let n_tail = tails.len() as f64;
        // far from the probe line the control alone leaves a flat ρ33 floor
        let floor = tails.iter().map(|&i| m[i]).sum::<f64>() / n_tail;
        assert!((m[0] - m[m.len() / 4]).abs() < 0.02 * floor);
        let limit = sigma / n_tail.sqrt();
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut errs = Vec::new();
        for _ in 0..100 {
            let y: Vec<f64> = m
                .iter()
                .map(|v| v + baseline + noise.sample(&mut rng))
                .collect();
            let s = series(det.clone(), y.clone());
            let out = subtract_background(&s, 0.2).unwrap();
            errs.push(y[0] - out.y[0] - baseline - floor);
        }
        let within = errs.iter().filter(|e| e.abs() <= 2.0 * limit).count();
        assert!(within >= 90, "{within}");
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        assert!((rms / limit - 1.0).abs() < 0.2, "{rms} vs {limit}");
    }

    #[test]
    fn cpt_param_names_round_trip() {
        for p in CptParam::ALL {
            assert_eq!(p.name().parse::<CptParam>().unwrap(), p);
        }
        assert!("bogus".parse::<CptParam>().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn objective_decreases_monotonically(
            tau in 0.1f64..3.0,
            amp in 0.2f64..5.0,
            offset in -2.0f64..2.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.05 * amp).unwrap();
            let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
            let y: Vec<f64> = x.iter().map(|t| ExpForm::Recovery.eval(*t, amp, tau, offset) + noise.sample(&mut rng)).collect();
            let fit = fit_exponential(&series(x, y), ExpForm::Recovery).unwrap();
            proptest::prop_assert!(fit.cost_history.windows(2).all(|w| w[1] < w[0]));
            for k in 0..3 {
                proptest::prop_assert!((fit.two_sigma[k] - 2.0 * fit.covariance[(k, k)].sqrt()).abs() <= 1e-12 * fit.two_sigma[k]);
            }
        }
    }
}
