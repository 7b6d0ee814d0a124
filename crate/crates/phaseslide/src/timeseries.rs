//! Per-step diagnostics rows and their CSV form.
//!
//! The column order is fixed:
//! `step,t,sup_dev,l2_dev,mu_inf,sigma_min,sigma_max,energy,newton_iters,w_bound,max_principle_margin`.
//! Floats are written with 17 significant digits, so a read-back is
//! bit-exact. `w_bound` is empty when no certificate was in force.

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "step,t,sup_dev,l2_dev,mu_inf,sigma_min,sigma_max,energy,newton_iters,w_bound,max_principle_margin";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub step: usize,
    pub t: f64,
    /// `|phi - phi_star|_inf`.
    pub sup_dev: f64,
    /// `|phi - phi_star|_{L2}`.
    pub l2_dev: f64,
    /// `|mu|_inf`.
    pub mu_inf: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub energy: f64,
    pub newton_iters: usize,
    /// Comparison envelope `w(t)` when a certificate with `T*` is in force.
    pub w_bound: Option<f64>,
    /// `sigma_star - max |sigma|`.
    pub max_principle_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    rows: Vec<Row>,
    has_w_bound: bool,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

impl TimeSeries {
    pub fn new(has_w_bound: bool) -> Self {
        TimeSeries {
            rows: Vec::new(),
            has_w_bound,
        }
    }

    pub fn push(&mut self, row: Row) {
        debug_assert!(
            self.rows.last().map_or(true, |last| row.t > last.t),
            "time must increase strictly"
        );
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [Row] {
        &mut self.rows
    }

    pub fn has_w_bound(&self) -> bool {
        self.has_w_bound
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                fmt(r.t),
                fmt(r.sup_dev),
                fmt(r.l2_dev),
                fmt(r.mu_inf),
                fmt(r.sigma_min),
                fmt(r.sigma_max),
                fmt(r.energy),
                r.newton_iters,
                r.w_bound.map_or(String::new(), fmt),
                fmt(r.max_principle_margin),
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TimeSeries> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("timeseries csv: empty file".into()))?;
        if header.trim() != CSV_HEADER {
            return Err(Error::Config(format!(
                "timeseries csv: unexpected header {header:?}"
            )));
        }
        let mut series = TimeSeries::new(false);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 11 {
                return Err(Error::Config(format!(
                    "timeseries csv line {}: expected 11 columns, got {}",
                    lineno + 2,
                    cols.len()
                )));
            }
            let f = |s: &str, name: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "timeseries csv line {}: bad {name} value {s:?}",
                        lineno + 2
                    ))
                })
            };
            let w_bound = if cols[9].is_empty() {
                None
            } else {
                Some(f(cols[9], "w_bound")?)
            };
            if w_bound.is_some() {
                series.has_w_bound = true;
            }
            series.rows.push(Row {
                step: cols[0].parse().map_err(|_| {
                    Error::Config(format!("timeseries csv line {}: bad step", lineno + 2))
                })?,
                t: f(cols[1], "t")?,
                sup_dev: f(cols[2], "sup_dev")?,
                l2_dev: f(cols[3], "l2_dev")?,
                mu_inf: f(cols[4], "mu_inf")?,
                sigma_min: f(cols[5], "sigma_min")?,
                sigma_max: f(cols[6], "sigma_max")?,
                energy: f(cols[7], "energy")?,
                newton_iters: cols[8].parse().map_err(|_| {
                    Error::Config(format!(
                        "timeseries csv line {}: bad newton_iters",
                        lineno + 2
                    ))
                })?,
                w_bound,
                max_principle_margin: f(cols[10], "max_principle_margin")?,
            });
        }
        Ok(series)
    }
}
