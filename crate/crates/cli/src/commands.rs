use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use acceptor_spin::fitting::{
    cpt_model_curve, cpt_model_params, fit_cpt_global, fit_exponential, subtract_background,
    tail_indices, ControlDrive, CptFitConfig, CptParam, FitResult, ScaleMode,
};
use acceptor_spin::hamiltonian::{
    delta1_from_strain, g_perp_perturbative, heavy_hole_doublet, hh_lh_splitting,
    strain_from_shift, HoleLevelStructure,
};
use acceptor_spin::hyperfine::{bohr_radius_for_t2_star, omega_sq};
use acceptor_spin::lambda::{probe_rabi, pumping_signal, recovery_curve, Readout};
use acceptor_spin::optics::transition_table;
use acceptor_spin::params::{Config, CptParams};
use acceptor_spin::phonon::{gamma, t1_theory_with, RateMethod, RelaxationParams};
use acceptor_spin::series::DataSeries;

use crate::args::*;
use crate::input::read_curves;
use crate::output::{fmt_num, render_table, Quantities, Table};
use crate::{resolve_config, CliError, CliResult};

pub(crate) fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let config = cli.config.as_deref();
    let primary = Sink::new(cli.output.as_deref(), out);
    let plot = cli.emit_plot_data.as_deref();
    match &cli.command {
        Command::Strain(c) => {
            let cfg = resolve_config(config, Some(&c.sample), None)?;
            let q = strain(&cfg)?;
            primary.write(|w| q.write_csv(w))?;
            emit(plot, |w| q.write_csv(w))
        }
        Command::Levels(c) => {
            let cfg = resolve_config(config, Some(&c.sample), None)?;
            let fields = match (c.bmin, c.bmax) {
                (Some(a), Some(b)) => linspace(a, b, c.points)?,
                _ => vec![cfg.sample.field],
            };
            let t = levels(&cfg, &fields, c.g0)?;
            primary.write(|w| t.write_csv(w))?;
            emit(plot, |w| t.write_long(w))
        }
        Command::T1Curve(c) => {
            let cfg = resolve_config(config, Some(&c.sample), None)?;
            let method = match c.method {
                Method::Closed => RateMethod::ClosedForm,
                Method::Quadrature => RateMethod::Quadrature { nodes: c.nodes },
            };
            let t = t1_curve(&cfg, &linspace(c.bmin, c.bmax, c.points)?, method)?;
            primary.write(|w| t.write_csv(w))?;
            emit(plot, |w| t.write_long(w))
        }
        Command::T2star(c) => {
            let cfg = resolve_config(config, None, None)?;
            let q = t2star(&cfg, c)?;
            primary.write(|w| q.write_csv(w))?;
            emit(plot, |w| q.write_csv(w))
        }
        Command::Cpt(c) => {
            let cfg = resolve_config(config, Some(&c.sample), Some(&c.cpt))?;
            let t = cpt(&cfg, c)?;
            primary.write(|w| t.write_csv(w))?;
            emit(plot, |w| t.write_long(w))
        }
        Command::Pump(c) => {
            let cfg = resolve_config(config, Some(&c.sample), Some(&c.cpt))?;
            let p = driven(&cfg, &c.drive)?;
            let s = pumping_signal(&p, c.duration_ns, c.points)?;
            let t = series_table(&s, "time_ns", "signal");
            primary.write(|w| t.write_csv(w))?;
            emit(plot, |w| t.write_long(w))
        }
        Command::Recover(c) => {
            let cfg = resolve_config(config, Some(&c.sample), Some(&c.cpt))?;
            let p = driven(&cfg, &c.drive)?;
            let delays = linspace(0.0, c.tmax_ns, c.points)?;
            let readout = Readout {
                window: c.readout_ns,
                ..Readout::default()
            };
            let s = recovery_curve(&p, c.pump_ns, &delays, readout)?;
            let t = series_table(&s, "dark_time_ns", "signal");
            primary.write(|w| t.write_csv(w))?;
            emit(plot, |w| t.write_long(w))
        }
        Command::FitT1(c) => fit_t1(c, primary, plot, err),
        Command::FitCpt(c) => {
            let cfg = resolve_config(config, Some(&c.sample), Some(&c.cpt))?;
            fit_cpt(&cfg, c, primary, plot, err)
        }
    }
}

/// Standard output or the `--output` file.
struct Sink<'a> {
    path: Option<&'a Path>,
    out: &'a mut dyn Write,
}

impl<'a> Sink<'a> {
    fn new(path: Option<&'a Path>, out: &'a mut dyn Write) -> Self {
        Sink { path, out }
    }

    fn write<F>(self, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut dyn Write) -> csv::Result<()>,
    {
        match self.path {
            Some(p) => to_file(p, f),
            None => {
                f(self.out)?;
                self.out
                    .flush()
                    .map_err(|e| CliError::io(Path::new("<stdout>"), e))
            }
        }
    }

    fn write_text(self, text: &str) -> CliResult<()> {
        self.write(|w| w.write_all(text.as_bytes()).map_err(csv::Error::from))
    }
}

fn to_file<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> csv::Result<()>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn emit<F>(path: Option<&Path>, f: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> csv::Result<()>,
{
    match path {
        Some(p) => to_file(p, f),
        None => Ok(()),
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> CliResult<Vec<f64>> {
    if !a.is_finite() || !b.is_finite() {
        return Err(CliError::Usage(format!(
            "range bounds must be finite, got {a}..{b}"
        )));
    }
    match n {
        0 => Err(CliError::Usage("need at least one point".into())),
        1 if a == b => Ok(vec![a]),
        1 => Err(CliError::Usage("a range needs at least two points".into())),
        _ if !(b > a) => Err(CliError::Usage(format!(
            "range end {b} must exceed start {a}"
        ))),
        _ => Ok((0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect()),
    }
}

struct Strain {
    u_xx: f64,
    delta0: f64,
    delta1: f64,
}

fn strain_state(cfg: &Config) -> CliResult<Strain> {
    let u_xx = strain_from_shift(cfg.sample.delta_e_mev * 1e-3, &cfg.material)?;
    let delta0 = hh_lh_splitting(u_xx, &cfg.material);
    let delta1 = delta1_from_strain(u_xx, u_xx - cfg.sample.anisotropy, cfg.material.b_prime());
    Ok(Strain {
        u_xx,
        delta0,
        delta1,
    })
}

/// g0 that reproduces the configured g_hh_perp through -3 Δ1 g0 / Δ0.
fn inferred_g0(cfg: &Config, s: &Strain) -> CliResult<f64> {
    if s.delta1 == 0.0 {
        return Err(CliError::Usage(
            "zero strain anisotropy: g0 cannot be inferred, pass --g0".into(),
        ));
    }
    Ok(-cfg.material.g_hh_perp * s.delta0 / (3.0 * s.delta1))
}

fn strain(cfg: &Config) -> CliResult<Quantities> {
    let s = strain_state(cfg)?;
    let mut q = Quantities::default();
    q.add("delta_e", cfg.sample.delta_e_mev, "meV");
    q.add("u_xx", s.u_xx, "");
    q.add("u_xx_percent", 100.0 * s.u_xx, "%");
    q.add("delta0", 1e3 * s.delta0, "meV");
    q.add("anisotropy", cfg.sample.anisotropy, "");
    q.add("delta1", 1e3 * s.delta1, "meV");
    q.add("mixing_ratio", s.delta1 / s.delta0, "");
    if s.delta1 != 0.0 {
        q.add("g0_inferred", inferred_g0(cfg, &s)?, "");
    }
    Ok(q)
}

fn levels(cfg: &Config, fields: &[f64], g0: Option<f64>) -> CliResult<Table> {
    let s = strain_state(cfg)?;
    let g0 = match g0 {
        Some(g) => g,
        None => inferred_g0(cfg, &s)?,
    };
    let g_pert = g_perp_perturbative(s.delta0, s.delta1, g0)?;
    let k = &cfg.constants;
    let mut t = Table::new([
        "field_T",
        "lower_uev",
        "upper_uev",
        "splitting_uev",
        "g_perp",
        "g_perp_perturbative",
        "heavy_weight",
        "line1_ghz",
        "line2_ghz",
        "line3_ghz",
        "line4_ghz",
    ]);
    for &field in fields {
        let h = HoleLevelStructure {
            delta0: s.delta0,
            delta1: s.delta1,
            g0,
            field,
        };
        let d = heavy_hole_doublet(&h, k)?;
        let (lo, hi) = d.by_energy();
        // at zero field the exact g is 0/0; its limit is the perturbative value
        let g = if field > 0.0 {
            d.splitting() / (k.mu_b * field)
        } else {
            g_pert
        };
        let lines = transition_table(0.0, cfg.material.g_e_perp, g, field, k)?;
        let mut row = vec![
            field,
            1e6 * lo.energy,
            1e6 * hi.energy,
            1e6 * d.splitting(),
            g,
            g_pert,
            lo.heavy_weight().min(hi.heavy_weight()),
        ];
        row.extend(lines.transitions.iter().map(|l| l.frequency_ghz()));
        t.push(row);
    }
    Ok(t)
}

fn t1_curve(cfg: &Config, fields: &[f64], method: RateMethod) -> CliResult<Table> {
    let s = strain_state(cfg)?;
    let mut p = RelaxationParams::new(cfg.constants, cfg.material, cfg.sample.anisotropy);
    p.delta0 = s.delta0;
    let temp = cfg.sample.temperature;
    let mut t = Table::new(["field_T", "gamma_per_s", "beta", "t1_us"]);
    for &b in fields {
        let rate = gamma(b, &p, method)?;
        let beta = cfg.constants.zeeman_ev(cfg.material.g_hh_perp, b) / (cfg.constants.k_b * temp);
        let t1 = t1_theory_with(b, temp, &p, method)?;
        t.push(vec![b, rate.gamma, beta, 1e6 * t1]);
    }
    Ok(t)
}

fn t2star(cfg: &Config, c: &T2StarCmd) -> CliResult<Quantities> {
    let mut h = cfg.hyperfine;
    if let Some(a) = c.bohr_radius_nm {
        h.bohr_radius = a * 1e-9;
    }
    if let Some(m) = c.mixing_ratio {
        h.mixing_ratio = m;
    }
    if let Some(ns) = c.calibrate_ns {
        if !(ns > 0.0) || !ns.is_finite() {
            return Err(CliError::Usage(format!(
                "--calibrate-ns must be > 0, got {ns}"
            )));
        }
        h.bohr_radius = bohr_radius_for_t2_star(&h, &cfg.constants, ns * 1e-9)?;
    }
    let r = omega_sq(&h, &cfg.constants)?;
    let ns = |t: acceptor_spin::hyperfine::T2Star| t.seconds().map_or(f64::INFINITY, |s| 1e9 * s);
    let mut q = Quantities::default();
    q.add("bohr_radius", 1e9 * h.bohr_radius, "nm");
    q.add("mixing_ratio", h.mixing_ratio, "");
    q.add("sigma_sq_mixing_free", r.term_mixing_free, "rad^2/s^2");
    q.add("sigma_sq_strain", r.term_strain, "rad^2/s^2");
    q.add("t2_star_mixing_free", ns(r.t2_star_each.0), "ns");
    q.add("t2_star_strain", ns(r.t2_star_each.1), "ns");
    q.add("t2_star_total", ns(r.t2_star_total), "ns");
    q.add(
        "t2_star_ratio",
        ns(r.t2_star_each.1) / ns(r.t2_star_each.0),
        "",
    );
    Ok(q)
}

/// Zeeman energy over kT for the Boltzmann split of the ground-state rates.
fn beta(cfg: &Config) -> f64 {
    let k = &cfg.constants;
    k.zeeman_ev(cfg.material.g_hh_perp, cfg.sample.field) / (k.k_b * cfg.sample.temperature)
}

fn cpt(cfg: &Config, c: &CptCmd) -> CliResult<Table> {
    if c.powers.is_empty() {
        return Err(CliError::Usage("need at least one probe power".into()));
    }
    let grid = linspace(c.dmin, c.dmax, c.points)?;
    let control = ControlDrive::Power(cfg.cpt.control_power_uw);
    let mut headers = vec!["detuning_ghz".to_string()];
    headers.extend(c.powers.iter().map(|p| format!("rho33_{}uw", fmt_num(*p))));
    let mut cols = Vec::with_capacity(c.powers.len());
    for &p in &c.powers {
        if !(p >= 0.0) {
            return Err(CliError::Usage(format!(
                "probe power must be >= 0, got {p}"
            )));
        }
        cols.push(cpt_model_curve(&cfg.cpt, control, beta(cfg), p, &grid)?);
    }
    let mut t = Table::new(headers);
    for (i, d) in grid.iter().enumerate() {
        let mut row = vec![*d];
        row.extend(cols.iter().map(|col| col[i]));
        t.push(row);
    }
    Ok(t)
}

/// Λ parameters with only the chosen leg driven.
fn driven(cfg: &Config, d: &DriveArgs) -> CliResult<acceptor_spin::lambda::LambdaParams> {
    let c = &cfg.cpt;
    let conv = c.frequency_convention;
    let power = d.power_uw.unwrap_or(c.control_power_uw);
    if !(power >= 0.0) {
        return Err(CliError::Usage(format!(
            "--power-uw must be >= 0, got {power}"
        )));
    }
    if !d.detuning_ghz.is_finite() {
        return Err(CliError::Usage("--detuning-ghz must be finite".into()));
    }
    let base = cpt_model_params(c, ControlDrive::Power(c.control_power_uw), beta(cfg), 0.0)?;
    let rabi = conv.to_rad_per_ns(probe_rabi(c.rabi_sq_per_power, power));
    Ok(base.single_drive(d.drive, rabi, conv.to_rad_per_ns(d.detuning_ghz)))
}

fn series_table(s: &DataSeries, x: &str, y: &str) -> Table {
    let mut t = Table::new([x, y]);
    for (a, b) in s.x.iter().zip(&s.y) {
        t.push(vec![*a, *b]);
    }
    t
}

fn fit_rows(fit: &FitResult) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = fit
        .names
        .iter()
        .zip(fit.values.iter().zip(&fit.two_sigma))
        .map(|(n, (v, s))| vec![n.clone(), fmt_num(*v), fmt_num(*s)])
        .collect();
    rows.extend(
        fit.fixed
            .iter()
            .map(|(n, v)| vec![n.clone(), fmt_num(*v), "fixed".into()]),
    );
    rows
}

fn fit_report(fit: &FitResult) -> String {
    let mut s = render_table(&["parameter", "value", "2sigma"], &fit_rows(fit));
    s.push('\n');
    s.push_str(&format!("converged        {}\n", fit.converged));
    s.push_str(&format!("iterations       {}\n", fit.iterations));
    s.push_str(&format!(
        "reduced_chi_sq   {}\n",
        fmt_num(fit.reduced_chi_sq)
    ));
    s.push_str(&format!(
        "condition_number {}\n",
        fmt_num(fit.condition_number)
    ));
    s
}

fn fit_kv(fit: &FitResult, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in extra {
        s.push_str(&format!("{k}={v}\n"));
    }
    for (n, (v, e)) in fit.names.iter().zip(fit.values.iter().zip(&fit.two_sigma)) {
        s.push_str(&format!(
            "{n}={}\n{n}_2sigma={}\n",
            fmt_num(*v),
            fmt_num(*e)
        ));
    }
    for (n, v) in &fit.fixed {
        s.push_str(&format!("{n}={}\n{n}_fixed=true\n", fmt_num(*v)));
    }
    s.push_str(&format!("converged={}\n", fit.converged));
    s.push_str(&format!("iterations={}\n", fit.iterations));
    s.push_str(&format!("residual_norm={}\n", fmt_num(fit.residual_norm)));
    s.push_str(&format!("reduced_chi_sq={}\n", fmt_num(fit.reduced_chi_sq)));
    s.push_str(&format!(
        "condition_number={}\n",
        fmt_num(fit.condition_number)
    ));
    s.push_str(&format!("ill_conditioned={}\n", fit.ill_conditioned));
    s
}

/// Warnings go to the diagnostic stream; non-convergence becomes exit 2.
fn finish_fit(fit: &FitResult, err: &mut dyn Write) -> CliResult<()> {
    for d in &fit.diagnostics {
        let _ = writeln!(err, "warning: {d}");
    }
    if fit.ill_conditioned {
        let _ = writeln!(
            err,
            "warning: parameters are poorly identified (condition number {})",
            fmt_num(fit.condition_number)
        );
    }
    if !fit.at_bound.is_empty() {
        let _ = writeln!(err, "warning: at bound: {}", fit.at_bound.join(", "));
    }
    if fit.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(
            fit.diagnostics
                .last()
                .cloned()
                .unwrap_or_else(|| "no further progress".into()),
        ))
    }
}

fn long_rows<'a>(
    rows: &'a [(String, f64, f64)],
    x: &str,
) -> impl FnOnce(&mut dyn Write) -> csv::Result<()> + 'a {
    let x = x.to_string();
    move |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", x.as_str(), "value"])?;
        for (s, a, b) in rows {
            csv.write_record([s.clone(), fmt_num(*a), fmt_num(*b)])?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn fit_t1(c: &FitT1Cmd, primary: Sink, plot: Option<&Path>, err: &mut dyn Write) -> CliResult<()> {
    let curves = read_curves(&c.input)?;
    if curves.len() != 1 || curves[0].power.is_some() {
        return Err(CliError::Input(
            "fit-t1 expects a single curve without a power column".into(),
        ));
    }
    let series = curves
        .into_iter()
        .next()
        .expect("one curve")
        .into_series()?;
    let fit = fit_exponential(&series, c.form)?;
    primary.write_text(&fit_report(&fit))?;
    if let Some(kv) = &c.kv {
        let form = match c.form {
            acceptor_spin::fitting::ExpForm::Recovery => "recovery",
            acceptor_spin::fitting::ExpForm::Decay => "decay",
        };
        let text = fit_kv(&fit, &[("form", form.to_string())]);
        to_file(kv, |w| {
            w.write_all(text.as_bytes()).map_err(csv::Error::from)
        })?;
    }
    if fit.converged {
        let (a, tau, off) = (fit.values[0], fit.values[1], fit.values[2]);
        let mut rows = Vec::with_capacity(2 * series.len());
        rows.extend(
            series
                .x
                .iter()
                .zip(&series.y)
                .map(|(x, y)| ("data".to_string(), *x, *y)),
        );
        rows.extend(
            series
                .x
                .iter()
                .map(|x| ("model".to_string(), *x, c.form.eval(*x, a, tau, off))),
        );
        emit(plot, long_rows(&rows, "x"))?;
    }
    finish_fit(&fit, err)
}

fn set_param(c: &mut CptParams, p: CptParam, v: f64) {
    match p {
        CptParam::T2Star => c.t2_star_ns = v,
        CptParam::T1 => c.t1_us = v,
        CptParam::Gamma3 => c.gamma3_ghz = v,
        CptParam::Gamma3Deph => c.gamma3_deph_ghz = v,
        CptParam::RabiSqPerPower => c.rabi_sq_per_power = v,
        CptParam::ControlDetuning => c.control_detuning_ghz = v,
    }
}

fn fit_cpt(
    cfg: &Config,
    c: &FitCptCmd,
    primary: Sink,
    plot: Option<&Path>,
    err: &mut dyn Write,
) -> CliResult<()> {
    let mut spare = c.power.iter();
    let mut spectra = Vec::new();
    for path in &c.input {
        for mut curve in read_curves(path)? {
            if curve.power.is_none() {
                curve.power = Some(*spare.next().ok_or_else(|| {
                    CliError::Usage(format!(
                        "{} has no power column; pass one --power per such file",
                        path.display()
                    ))
                })?);
            }
            spectra.push(curve.into_series()?);
        }
    }
    if spare.next().is_some() {
        return Err(CliError::Usage(
            "more --power values than input files without a power column".into(),
        ));
    }

    let mut fc = CptFitConfig::new(cfg.cpt, beta(cfg));
    if let Some(v) = c.control_rabi_sq {
        fc.control = ControlDrive::RabiSq(v);
    }
    fc.frozen = c.freeze.clone();
    fc.background_tail = if c.no_background {
        None
    } else {
        Some(c.tail_fraction)
    };
    fc.scales = if c.shared_scale {
        ScaleMode::Shared
    } else {
        ScaleMode::PerCurve
    };
    let fit = fit_cpt_global(&spectra, &fc)?;

    primary.write_text(&fit_report(&fit))?;
    if let Some(kv) = &c.kv {
        let text = fit_kv(&fit, &[("spectra", spectra.len().to_string())]);
        to_file(kv, |w| {
            w.write_all(text.as_bytes()).map_err(csv::Error::from)
        })?;
    }
    if fit.converged && plot.is_some() {
        let mut best = cfg.cpt;
        for p in CptParam::ALL {
            if let Some(v) = fit.value(p.name()) {
                set_param(&mut best, p, v);
            }
        }
        let mut rows = Vec::new();
        for (k, s) in spectra.iter().enumerate() {
            let power = s.power.expect("power assigned above");
            let data = match fc.background_tail {
                Some(t) => subtract_background(s, t)?,
                None => s.clone(),
            };
            let mut m = cpt_model_curve(&best, fc.control, fc.beta, power, &s.x)?;
            if let Some(t) = fc.background_tail {
                let idx = tail_indices(m.len(), t);
                let bg = idx.iter().map(|&i| m[i]).sum::<f64>() / idx.len() as f64;
                m.iter_mut().for_each(|v| *v -= bg);
            }
            let scale = fit
                .value(&format!("scale_{k}"))
                .or_else(|| fit.value("scale"))
                .unwrap_or(1.0);
            let tag = format!("{}uw", fmt_num(power));
            rows.extend(
                data.x
                    .iter()
                    .zip(&data.y)
                    .map(|(x, y)| (format!("data_{tag}"), *x, *y)),
            );
            rows.extend(
                s.x.iter()
                    .zip(&m)
                    .map(|(x, v)| (format!("model_{tag}"), *x, scale * v)),
            );
        }
        emit(plot, long_rows(&rows, "detuning_ghz"))?;
    }
    finish_fit(&fit, err)
}
