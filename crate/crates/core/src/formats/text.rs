//! CSV grids and flat `key = value` files.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// One CSV line per row. `None` is an empty field. Values use Rust's
/// shortest round-trip formatting, so decoding is exact.
pub fn encode_csv_grid(grid: &Grid<Option<f64>>) -> String {
    let mut out = String::new();
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            if x > 0 {
                out.push(',');
            }
            if let Some(v) = grid.get(x, y) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv_grid(text: &str, name: &str) -> Result<Grid<Option<f64>>> {
    let mut width = None;
    let mut data = Vec::new();
    let mut offset = 0u64;
    let mut rows = 0;
    for line in text.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::format(
                    name,
                    offset,
                    format!("row {rows} has {} fields, expected {w}", fields.len()),
                ))
            }
            _ => {}
        }
        for f in fields {
            let f = f.trim();
            data.push(if f.is_empty() {
                None
            } else {
                Some(
                    f.parse::<f64>().map_err(|_| {
                        Error::format(name, offset, format!("`{f}` is not a number"))
                    })?,
                )
            });
        }
        offset += line.len() as u64 + 1;
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::format(name, 0, "empty CSV"))?;
    Ok(Grid::from_vec(width, rows, data).expect("rows have equal width"))
}

pub fn encode_key_values(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
/// Duplicate keys are rejected.
pub fn decode_key_values(text: &str, name: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let (k, v) = trimmed.split_once('=').ok_or_else(|| {
                Error::format(
                    name,
                    offset,
                    format!("expected `key = value`, got `{trimmed}`"),
                )
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::format(name, offset, "empty key"));
            }
            if out.iter().any(|(e, _)| e == k) {
                return Err(Error::format(name, offset, format!("duplicate key `{k}`")));
            }
            out.push((k.to_string(), v.to_string()));
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}
