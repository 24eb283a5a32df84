//! Observed multivariate time series and its CSV form.
//!
//! The CSV layout is one row per time point with `p` numeric columns, an
//! optional single header row, and an optional leading date column that is
//! ignored for the numerics but preserved in outputs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A `p`-dimensional series of length `n`, stored column-major by time:
/// `values` is `p x n` and column `t` is the observation at time `t`.
#[derive(Clone, Debug)]
pub struct TimePanel {
    values: Matrix,
    names: Option<Vec<String>>,
    dates: Option<Vec<String>>,
}

impl TimePanel {
    pub fn new(values: Matrix) -> Self {
        Self {
            values,
            names: None,
            dates: None,
        }
    }

    /// Builds a panel from observation columns `y_0, y_1, ..`.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Panel("empty panel".into()));
        }
        let p = cols[0].len();
        if !cols.iter().all(|c| c.len() == p) {
            return Err(Error::Panel("ragged observation columns".into()));
        }
        let n = cols.len();
        let values = Matrix::from_fn(p, n, |i, t| cols[t][i]);
        if !values.is_finite() {
            return Err(Error::NonFinite("TimePanel::from_columns"));
        }
        Ok(Self::new(values))
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn observation(&self, t: usize) -> Vec<f64> {
        self.values.column(t)
    }

    /// Panel restricted to times `0 .. end` (exclusive).
    pub fn prefix(&self, end: usize) -> TimePanel {
        assert!(end <= self.len());
        TimePanel {
            values: self.values.columns(0, end),
            names: self.names.clone(),
            dates: self
                .dates
                .as_ref()
                .map(|d| d[..end].to_vec()),
        }
    }

    /// Response and stacked-lag predictor matrices for a VAR(`lag`) fit.
    ///
    /// `Y` is `p x T` with columns `y_lag .. y_{n-1}`; `X` is `p lag x T`
    /// where column `t` stacks `(y_{t-1}, .., y_{t-lag})`.
    pub fn design(&self, lag: usize) -> Result<(Matrix, Matrix)> {
        let p = self.dim();
        let n = self.len();
        if lag == 0 {
            return Err(Error::InvalidArg("design: lag must be >= 1".into()));
        }
        if n < lag + 2 {
            return Err(Error::Panel(format!(
                "panel too short: {n} observations for lag {lag} (need at least {})",
                lag + 2
            )));
        }
        let t_len = n - lag;
        let mut y = Matrix::zeros(p, t_len);
        let mut x = Matrix::zeros(p * lag, t_len);
        for t in 0..t_len {
            let now = lag + t;
            for i in 0..p {
                y.set(i, t, self.values.get(i, now));
            }
            for k in 0..lag {
                for i in 0..p {
                    x.set(k * p + i, t, self.values.get(i, now - 1 - k));
                }
            }
        }
        Ok((y, x))
    }

    /// Last `lag` observations ordered oldest to newest, as forecast history.
    pub fn tail(&self, lag: usize) -> Result<Matrix> {
        let n = self.len();
        if n < lag {
            return Err(Error::Panel(format!(
                "panel too short for {lag} lags of history"
            )));
        }
        Ok(self.values.columns(n - lag, n))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<csv::StringRecord> = Vec::new();
        for rec in reader.records() {
            rows.push(rec?);
        }
        if rows.is_empty() {
            return Err(Error::Panel("empty CSV".into()));
        }

        // A leading date column exists when any field of the first column
        // past the (potential) header fails to parse as a float.
        let header_present = rows[0].iter().any(|f| f.parse::<f64>().is_err());
        let body_start = usize::from(header_present);
        if rows.len() <= body_start {
            return Err(Error::Panel("CSV has a header but no data rows".into()));
        }
        let date_col = rows[body_start..]
            .iter()
            .any(|r| r.get(0).is_none_or(|f| f.parse::<f64>().is_err()));
        let first_num_col = usize::from(date_col);

        let width = rows[0].len();
        if width <= first_num_col {
            return Err(Error::Panel("no numeric columns".into()));
        }
        let p = width - first_num_col;
        let names = if header_present {
            Some(
                rows[0]
                    .iter()
                    .skip(first_num_col)
                    .map(str::to_string)
                    .collect(),
            )
        } else {
            None
        };
        let mut dates = if date_col { Some(Vec::new()) } else { None };
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(rows.len() - body_start);
        for (idx, row) in rows[body_start..].iter().enumerate() {
            if row.len() != width {
                return Err(Error::Panel(format!(
                    "row {} has {} fields, expected {width}",
                    idx + body_start + 1,
                    row.len()
                )));
            }
            if let Some(d) = dates.as_mut() {
                d.push(row.get(0).unwrap_or("").to_string());
            }
            let mut obs = Vec::with_capacity(p);
            for (j, field) in row.iter().enumerate().skip(first_num_col) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Panel(format!(
                        "row {}, column {}: cannot parse {field:?} as a number",
                        idx + body_start + 1,
                        j + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite("TimePanel::read_csv"));
                }
                obs.push(v);
            }
            cols.push(obs);
        }
        let mut panel = TimePanel::from_columns(&cols)?;
        panel.names = names;
        panel.dates = dates;
        Ok(panel)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let p = self.dim();
        if let Some(names) = &self.names {
            let mut rec = Vec::new();
            if self.dates.is_some() {
                rec.push("date".to_string());
            }
            rec.extend(names.iter().cloned());
            w.write_record(&rec)?;
        }
        for t in 0..self.len() {
            let mut rec = Vec::with_capacity(p + 1);
            if let Some(dates) = &self.dates {
                rec.push(dates[t].clone());
            }
            for i in 0..p {
                rec.push(format_f64(self.values.get(i, t)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Round-trip-stable decimal form (17 significant digits).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
