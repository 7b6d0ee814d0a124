//! On-disk emission: time series CSV, field snapshots (CSV and P2 PGM), and
//! the matching readers. Floats carry 17 significant digits so every emitted
//! file re-reads losslessly.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::timeseries::TimeSeries;

pub fn emit_timeseries(series: &TimeSeries, path: &Path) -> Result<()> {
    fs::write(path, series.to_csv())?;
    Ok(())
}

pub fn read_timeseries(path: &Path) -> Result<TimeSeries> {
    TimeSeries::from_csv(&fs::read_to_string(path)?)
}

/// Snapshot CSV: 1d fields as `x,value` rows with a header; 2d fields as a
/// bare row-major matrix (one text row per grid row).
pub fn emit_snapshot(field: &ScalarField, path: &Path) -> Result<()> {
    let grid = field.grid();
    let mut out = String::new();
    if grid.dim() == 1 {
        out.push_str("x,value\n");
        for i in 0..grid.node_count() {
            out.push_str(&format!(
                "{:.16e},{:.16e}\n",
                grid.node_position(i)[0],
                field.values()[i]
            ));
        }
    } else {
        let nx = grid.nodes_along(0);
        let ny = grid.nodes_along(1);
        for j in 0..ny {
            let cells: Vec<String> = (0..nx)
                .map(|i| format!("{:.16e}", field.values()[j * nx + i]))
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_snapshot(grid: &Arc<Grid>, path: &Path) -> Result<ScalarField> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(grid.node_count());
    let mut lines = text.lines();
    if grid.dim() == 1 {
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("snapshot csv: empty file".into()))?;
        if header.trim() != "x,value" {
            return Err(Error::Config(format!(
                "snapshot csv: unexpected header {header:?}"
            )));
        }
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (_, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Config("snapshot csv: missing comma".into()))?;
            values.push(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("snapshot csv: bad value {v:?}")))?,
            );
        }
    } else {
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            for v in line.split(',') {
                values.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Config(format!("snapshot csv: bad value {v:?}")))?,
                );
            }
        }
    }
    ScalarField::from_values(grid, values)
}

/// 8-bit grayscale P2 (ASCII) PGM mapping `[min, max]` linearly to
/// `[0, 255]`; the comment line records the mapping. A constant field
/// (degenerate range) maps to 0 everywhere.
pub fn emit_pgm(field: &ScalarField, path: &Path) -> Result<()> {
    let grid = field.grid();
    let (w, h) = if grid.dim() == 1 {
        (grid.nodes_along(0), 1)
    } else {
        (grid.nodes_along(0), grid.nodes_along(1))
    };
    let lo = field.min_value();
    let hi = field.max_value();
    let span = hi - lo;
    let mut out = String::from("P2\n");
    out.push_str(&format!("# min={lo:.16e} max={hi:.16e}\n"));
    out.push_str(&format!("{w} {h}\n255\n"));
    for row in 0..h {
        let mut cells = Vec::with_capacity(w);
        for col in 0..w {
            let v = field.values()[row * w + col];
            let pix = if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            cells.push(pix.to_string());
        }
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
