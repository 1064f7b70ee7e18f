//! Plain-text grids: a header `nx ny Lx Ly`, then `ny` rows of `nx` values, southernmost row first.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, RegionMask};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// 1-based line number and cells of one value row.
type Row = (usize, Vec<String>);

/// Header and value rows of a grid file.
fn read_rows(path: &Path) -> Result<(GridSpec, Vec<Row>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header `nx ny Lx Ly`"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(parse_err(path, hline, "header must be `nx ny Lx Ly`"));
    }
    let nx: usize = parts[0]
        .parse()
        .map_err(|_| parse_err(path, hline, "nx is not an integer"))?;
    let ny: usize = parts[1]
        .parse()
        .map_err(|_| parse_err(path, hline, "ny is not an integer"))?;
    let lx: f64 = parts[2]
        .parse()
        .map_err(|_| parse_err(path, hline, "Lx is not a number"))?;
    let ly: f64 = parts[3]
        .parse()
        .map_err(|_| parse_err(path, hline, "Ly is not a number"))?;
    let grid = GridSpec::new(nx, ny, lx, ly).map_err(|e| parse_err(path, hline, e.to_string()))?;
    let rows: Vec<(usize, Vec<String>)> = lines
        .map(|(k, l)| (k, l.split_whitespace().map(str::to_string).collect()))
        .collect();
    if rows.len() != ny {
        return Err(parse_err(
            path,
            hline,
            format!("expected {ny} rows, found {}", rows.len()),
        ));
    }
    for (k, row) in &rows {
        if row.len() != nx {
            return Err(parse_err(
                path,
                *k,
                format!("expected {nx} values, found {}", row.len()),
            ));
        }
    }
    Ok((grid, rows))
}

pub fn read_mask(path: &Path, name: &str) -> Result<(GridSpec, RegionMask)> {
    let (grid, rows) = read_rows(path)?;
    let mut cells = Array2::from_elem(grid.shape(), false);
    for (j, (line, row)) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            cells[[j, i]] = match v.as_str() {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(path, *line, format!("mask value `{other}` is not 0 or 1"))),
            };
        }
    }
    Ok((grid, RegionMask::new(name, cells)))
}

pub fn read_field(path: &Path) -> Result<(GridSpec, Array2<f64>)> {
    let (grid, rows) = read_rows(path)?;
    let mut field = grid.zeros();
    for (j, (line, row)) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            field[[j, i]] = v
                .parse()
                .map_err(|_| parse_err(path, *line, format!("`{v}` is not a number")))?;
        }
    }
    Ok((grid, field))
}

fn header(grid: &GridSpec) -> String {
    format!("{} {} {} {}\n", grid.nx, grid.ny, grid.lx, grid.ly)
}

pub fn mask_to_string(grid: &GridSpec, mask: &RegionMask) -> String {
    let mut s = header(grid);
    for row in mask.cells.rows() {
        let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn field_to_string(grid: &GridSpec, field: &Array2<f64>, comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        for l in c.lines() {
            let _ = writeln!(s, "# {l}");
        }
    }
    s.push_str(&header(grid));
    for row in field.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_mask(path: &Path, grid: &GridSpec, mask: &RegionMask) -> Result<()> {
    fs::write(path, mask_to_string(grid, mask)).map_err(|e| Error::io(path, e))
}

pub fn write_field(path: &Path, grid: &GridSpec, field: &Array2<f64>, comment: Option<&str>) -> Result<()> {
    fs::write(path, field_to_string(grid, field, comment)).map_err(|e| Error::io(path, e))
}

/// Nodes inside a polygon (even-odd rule), vertices in km from the south-west corner.
pub fn rasterize_polygon(name: &str, grid: &GridSpec, vertices: &[(f64, f64)]) -> RegionMask {
    let inside = |x: f64, y: f64| {
        let mut c = false;
        let n = vertices.len();
        for k in 0..n {
            let (xa, ya) = vertices[k];
            let (xb, yb) = vertices[(k + 1) % n];
            if (ya > y) != (yb > y) && x < xa + (y - ya) * (xb - xa) / (yb - ya) {
                c = !c;
            }
        }
        c
    };
    let cells = Array2::from_shape_fn(grid.shape(), |(j, i)| {
        let (x, y) = grid.node_position(i, j);
        inside(x, y)
    });
    RegionMask::new(name, cells)
}
