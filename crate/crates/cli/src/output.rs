//! CSV tables, key/value blocks and number formatting.

use std::fmt::Write as _;
use std::io::Write;

/// Shortest round-trip decimal, switching to scientific notation outside
/// [1e-3, 1e4).
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string().to_lowercase();
    }
    let a = x.abs();
    if (1e-3..1e4).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Wide table with one numeric column per header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| fmt_num(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format: one row per (series, x, y), with the first column as x.
    pub fn write_long<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["series", self.headers[0].as_str(), "value"])?;
        for (j, name) in self.headers.iter().enumerate().skip(1) {
            for row in &self.rows {
                w.write_record([name.clone(), fmt_num(row[0]), fmt_num(row[j])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Named scalar results with units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Quantities(pub Vec<(String, f64, &'static str)>);

impl Quantities {
    pub fn add(&mut self, name: &str, value: f64, unit: &'static str) {
        self.0.push((name.to_string(), value, unit));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _, _)| n == name).map(|q| q.1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "value", "unit"])?;
        for (name, v, unit) in &self.0 {
            w.write_record([name.as_str(), &fmt_num(*v), unit])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed-width table for people; the key/value file is for machines.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(&mut s, headers);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(s, "{}", rule.join("  "));
    for r in rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&mut s, &cells);
    }
    s
}
