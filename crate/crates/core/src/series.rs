//! Plain x/y data carrier shared by the simulations and the fitters.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Per-point 1σ uncertainty.
    pub sigma: Option<Vec<f64>>,
    pub label: Option<String>,
    /// Probe power (µW) for spectra.
    pub power: Option<f64>,
}

impl DataSeries {
    /// Validated constructor: equal lengths, strictly increasing finite x,
    /// finite y, positive sigma.
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "x has {} points but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "series contains non-finite values".into(),
            ));
        }
        if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!(
                "x must be strictly increasing (index {})",
                i + 1
            )));
        }
        if let Some(s) = &sigma {
            if s.len() != x.len() {
                return Err(Error::InvalidInput("sigma length differs from x".into()));
            }
            if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidInput(
                    "sigma entries must be finite and > 0".into(),
                ));
            }
        }
        Ok(DataSeries {
            x,
            y,
            sigma,
            label: None,
            power: None,
        })
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = Some(power);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}
