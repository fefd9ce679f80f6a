//! Command-line front end: argument parsing, config precedence, CSV I/O and
//! exit codes. Everything numerical lives in the library crate.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure
//! (including fits that do not converge).

pub mod args;
mod commands;
pub mod input;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use acceptor_spin::params::Config;
use clap::Parser;

use crate::args::{Cli, CptArgs, SampleArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] acceptor_spin::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error("fit did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::NotConverged(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Runs the tool with real standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the tool writing primary output to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match commands::dispatch(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Config from `--config` (or defaults) with explicit flags layered on top.
pub fn resolve_config(
    path: Option<&Path>,
    sample: Option<&SampleArgs>,
    cpt: Option<&CptArgs>,
) -> CliResult<Config> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    if let Some(s) = sample {
        let t = &mut cfg.sample;
        set(&mut t.delta_e_mev, s.delta_e_mev);
        set(&mut t.anisotropy, s.anisotropy);
        set(&mut t.temperature, s.temperature);
        set(&mut t.field, s.field);
        set(&mut cfg.material.g_hh_perp, s.g_hh_perp);
    }
    if let Some(c) = cpt {
        let t = &mut cfg.cpt;
        set(&mut t.t2_star_ns, c.t2_star_ns);
        set(&mut t.t1_us, c.t1_us);
        set(&mut t.gamma3_ghz, c.gamma3_ghz);
        set(&mut t.gamma3_deph_ghz, c.gamma3_deph_ghz);
        set(&mut t.rabi_sq_per_power, c.rabi_sq_per_power);
        set(&mut t.control_detuning_ghz, c.control_detuning_ghz);
        set(&mut t.control_power_uw, c.control_power_uw);
        set(&mut t.frequency_convention, c.frequency_convention);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[sample]\ntemperature = 4.0\nfield = 3.0\n").unwrap();
        let sample = SampleArgs {
            temperature: Some(1.5),
            ..Default::default()
        };
        let cfg = resolve_config(Some(&path), Some(&sample), None).unwrap();
        assert_eq!(cfg.sample.temperature, 1.5);
        assert_eq!(cfg.sample.field, 3.0);
    }

    #[test]
    fn invalid_override_is_rejected() {
        let sample = SampleArgs {
            temperature: Some(-1.0),
            ..Default::default()
        };
        let e = resolve_config(None, Some(&sample), None).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::NotConverged("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Core(acceptor_spin::Error::NonUniqueSteadyState).exit_code(),
            2
        );
        assert_eq!(
            CliError::Core(acceptor_spin::Error::InvalidInput("x".into())).exit_code(),
            1
        );
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }
}
