use std::path::PathBuf;

use acceptor_spin::fitting::{CptParam, ExpForm};
use acceptor_spin::lambda::DriveLeg;
use acceptor_spin::params::FrequencyConvention;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "acceptor-spin",
    version,
    about = "Spin physics of strained acceptor-bound holes: levels, relaxation, dephasing, CPT spectra and fits",
    arg_required_else_help = true
)]
pub struct Cli {
    /// TOML file with parameter defaults; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Write the primary CSV here instead of standard output.
    #[arg(long, short = 'o', global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,

    /// Also write tidy long-format CSV (series,x,value) for plotting.
    #[arg(long, global = true, value_name = "PATH")]
    pub emit_plot_data: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strain and hh-lh splitting from the measured band-gap shift.
    Strain(StrainCmd),
    /// Heavy-hole doublet and optical line offsets versus field.
    Levels(LevelsCmd),
    /// Phonon-limited T1 versus field.
    T1Curve(T1CurveCmd),
    /// Hyperfine-limited T2*.
    T2star(T2StarCmd),
    /// Steady-state CPT spectra at several probe powers.
    Cpt(CptCmd),
    /// Optical pumping transient under a single drive.
    Pump(PumpCmd),
    /// Pump / dark delay / readout recovery curve.
    Recover(RecoverCmd),
    /// Exponential fit of a recovery or decay curve.
    FitT1(FitT1Cmd),
    /// Global fit of CPT spectra taken at several probe powers.
    FitCpt(FitCptCmd),
}

/// Sample overrides shared by several subcommands.
#[derive(Debug, Clone, Args, Default)]
pub struct SampleArgs {
    /// Band-gap shift of the acceptor line relative to unstrained GaAs, meV.
    #[arg(long)]
    pub delta_e_mev: Option<f64>,
    /// In-plane strain anisotropy u_xx - u_yy.
    #[arg(long, allow_negative_numbers = true)]
    pub anisotropy: Option<f64>,
    /// Lattice temperature, K.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// In-plane magnetic field, T.
    #[arg(long)]
    pub field: Option<f64>,
    /// Heavy-hole transverse g-factor.
    #[arg(long, allow_negative_numbers = true)]
    pub g_hh_perp: Option<f64>,
}

/// Λ-system overrides; rates and detunings in GHz under the chosen convention.
#[derive(Debug, Clone, Args, Default)]
pub struct CptArgs {
    #[arg(long)]
    pub t2_star_ns: Option<f64>,
    #[arg(long)]
    pub t1_us: Option<f64>,
    /// Excited-state population decay rate.
    #[arg(long)]
    pub gamma3_ghz: Option<f64>,
    /// Extra optical dephasing rate.
    #[arg(long)]
    pub gamma3_deph_ghz: Option<f64>,
    /// Ω² per µW, GHz²/µW.
    #[arg(long)]
    pub rabi_sq_per_power: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub control_detuning_ghz: Option<f64>,
    #[arg(long)]
    pub control_power_uw: Option<f64>,
    /// Whether GHz values are angular (rad/ns) or ordinary (cycles/ns).
    #[arg(long, value_parser = parse_convention)]
    pub frequency_convention: Option<FrequencyConvention>,
}

fn parse_convention(s: &str) -> Result<FrequencyConvention, String> {
    s.parse().map_err(|e: acceptor_spin::Error| e.to_string())
}

fn parse_drive(s: &str) -> Result<DriveLeg, String> {
    s.parse().map_err(|e: acceptor_spin::Error| e.to_string())
}

fn parse_form(s: &str) -> Result<ExpForm, String> {
    s.parse().map_err(|e: acceptor_spin::Error| e.to_string())
}

fn parse_param(s: &str) -> Result<CptParam, String> {
    s.parse().map_err(|e: acceptor_spin::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct StrainCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Args)]
pub struct LevelsCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Sweep start, T; without a sweep the single `--field` is used.
    #[arg(long, requires = "bmax")]
    pub bmin: Option<f64>,
    #[arg(long, requires = "bmin")]
    pub bmax: Option<f64>,
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    /// Bare hole g-factor; by default inferred from g_hh_perp, Δ0 and Δ1.
    #[arg(long, allow_negative_numbers = true)]
    pub g0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Closed,
    Quadrature,
}

#[derive(Debug, Args)]
pub struct T1CurveCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long, default_value_t = 1.0)]
    pub bmin: f64,
    #[arg(long, default_value_t = 10.0)]
    pub bmax: f64,
    #[arg(long, default_value_t = 21)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = Method::Closed)]
    pub method: Method,
    /// Gauss-Legendre nodes per angular axis for the quadrature method.
    #[arg(long, default_value_t = 48)]
    pub nodes: usize,
}

#[derive(Debug, Args)]
pub struct T2StarCmd {
    /// Acceptor Bohr radius, nm.
    #[arg(long)]
    pub bohr_radius_nm: Option<f64>,
    /// Δ1/Δ0.
    #[arg(long, allow_negative_numbers = true)]
    pub mixing_ratio: Option<f64>,
    /// Choose the Bohr radius so the mixing-free term alone gives this T2* (ns).
    #[arg(long, conflicts_with = "bohr_radius_nm")]
    pub calibrate_ns: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CptCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub cpt: CptArgs,
    /// Probe powers, µW.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    pub powers: Vec<f64>,
    /// Lowest probe detuning, GHz.
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub dmin: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub dmax: f64,
    #[arg(long, default_value_t = 121)]
    pub points: usize,
}

/// Which laser drives the transition and how hard.
#[derive(Debug, Clone, Args)]
pub struct DriveArgs {
    #[arg(long, value_parser = parse_drive, default_value = "control")]
    pub drive: DriveLeg,
    /// Laser power, µW; defaults to the configured control power.
    #[arg(long)]
    pub power_uw: Option<f64>,
    /// Laser detuning, GHz.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub detuning_ghz: f64,
}

#[derive(Debug, Args)]
pub struct PumpCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub cpt: CptArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    /// Pulse length, ns.
    #[arg(long, default_value_t = 200.0)]
    pub duration_ns: f64,
    #[arg(long, default_value_t = 201)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct RecoverCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub cpt: CptArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    /// Pump pulse length, ns.
    #[arg(long, default_value_t = 200.0)]
    pub pump_ns: f64,
    /// Longest dark delay, ns; delays run from 0.
    #[arg(long, default_value_t = 500.0)]
    pub tmax_ns: f64,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    /// Readout window, ns.
    #[arg(long, default_value_t = 20.0)]
    pub readout_ns: f64,
}

#[derive(Debug, Args)]
pub struct FitT1Cmd {
    /// CSV with header; columns x, y and optionally `sigma`.
    #[arg(long, short = 'i', value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_form, default_value = "recovery")]
    pub form: ExpForm,
    /// Write fitted values as key=value lines here.
    #[arg(long, value_name = "PATH")]
    pub kv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitCptCmd {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub cpt: CptArgs,
    /// CSV spectra (detuning, signal, optional `sigma` and `power` columns).
    /// Repeat for several files.
    #[arg(long, short = 'i', value_name = "PATH", required = true)]
    pub input: Vec<PathBuf>,
    /// Probe power (µW) of each input file without a `power` column, in order.
    #[arg(long)]
    pub power: Vec<f64>,
    /// Hold a parameter at its starting value; repeatable.
    #[arg(long, value_parser = parse_param)]
    pub freeze: Vec<CptParam>,
    /// Fraction of points (both tails together) used for background subtraction.
    #[arg(long, default_value_t = 0.2)]
    pub tail_fraction: f64,
    /// Fit raw spectra without background subtraction.
    #[arg(long)]
    pub no_background: bool,
    /// One amplitude scale for all spectra instead of one per spectrum.
    #[arg(long)]
    pub shared_scale: bool,
    /// Fix the control Ω² (GHz²) instead of deriving it from the control power.
    #[arg(long)]
    pub control_rabi_sq: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub kv: Option<PathBuf>,
}
