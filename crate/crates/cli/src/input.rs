//! Reading measured curves from CSV.
//!
//! The first column is x and the second y. A column headed `sigma` holds 1σ
//! errors and one headed `power` (or `power_uw`) the probe power. A
//! three-column file with an unnamed third column treats it as sigma.

use std::path::Path;

use acceptor_spin::series::DataSeries;

use crate::{CliError, CliResult};

/// One measured curve, plus its power if the file carried one.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    pub power: Option<f64>,
}

impl Curve {
    pub fn into_series(self) -> CliResult<DataSeries> {
        let s = DataSeries::new(self.x, self.y, self.sigma)?;
        Ok(match self.power {
            Some(p) => s.with_power(p),
            None => s,
        })
    }
}

pub fn read_curves(path: &Path) -> CliResult<Vec<Curve>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_curves(&text).map_err(|e| match e {
        CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Splits the rows by power, in order of first appearance.
pub fn parse_curves(text: &str) -> CliResult<Vec<Curve>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if headers.len() < 2 {
        return Err(CliError::Input("need at least two columns (x, y)".into()));
    }
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let power_col = find(&["power", "power_uw"]);
    let sigma_col = find(&["sigma"]).or(if headers.len() == 3 && power_col.is_none() {
        Some(2)
    } else {
        None
    });
    if matches!(sigma_col, Some(0 | 1)) || matches!(power_col, Some(0 | 1)) {
        return Err(CliError::Input(
            "the first two columns must be x and y".into(),
        ));
    }

    let mut curves: Vec<Curve> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> CliResult<f64> {
            let field = rec.get(i).unwrap_or("");
            field.parse::<f64>().map_err(|_| {
                CliError::Input(format!("row {}: `{field}` is not a number", line + 2))
            })
        };
        let x = num(0)?;
        let y = num(1)?;
        let sigma = sigma_col.map(num).transpose()?;
        let power = power_col.map(num).transpose()?;
        let k = match curves.iter().position(|c| c.power == power) {
            Some(k) => k,
            None => {
                curves.push(Curve {
                    x: Vec::new(),
                    y: Vec::new(),
                    sigma: sigma.map(|_| Vec::new()),
                    power,
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[k];
        c.x.push(x);
        c.y.push(y);
        if let (Some(s), Some(v)) = (c.sigma.as_mut(), sigma) {
            s.push(v);
        }
    }
    if curves.is_empty() {
        return Err(CliError::Input("no data rows".into()));
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_two_columns() {
        let c = parse_curves("t,signal\n0,1\n1, 2.5\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].x, vec![0.0, 1.0]);
        assert_eq!(c[0].y, vec![1.0, 2.5]);
        assert!(c[0].sigma.is_none() && c[0].power.is_none());
    }

    #[test]
    fn unnamed_third_column_is_sigma() {
        let c = parse_curves("x,y,err\n0,1,0.1\n1,2,0.2\n").unwrap();
        assert_eq!(c[0].sigma, Some(vec![0.1, 0.2]));
    }

    #[test]
    fn grouped_by_power() {
        let text = "detuning,y,power,sigma\n-1,1,0.5,0.1\n0,2,0.5,0.1\n-1,3,2,0.1\n0,4,2,0.1\n";
        let c = parse_curves(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].power, Some(2.0));
        assert_eq!(c[1].y, vec![3.0, 4.0]);
        assert_eq!(c[0].sigma, Some(vec![0.1, 0.1]));
    }

    #[test]
    fn bad_cells_are_reported() {
        assert!(matches!(
            parse_curves("x,y\n0,abc\n"),
            Err(CliError::Input(_))
        ));
        assert!(matches!(parse_curves("x\n0\n"), Err(CliError::Input(_))));
        assert!(matches!(parse_curves("x,y\n"), Err(CliError::Input(_))));
        assert!(matches!(
            parse_curves("sigma,y\n1,1\n"),
            Err(CliError::Input(_))
        ));
    }
}
