//! Field files.
//!
//! CSV layout: a header line `nx,ny,lx,ly`, one line with those values, then
//! `ny` rows of `nx` comma-separated values, row `j = 0` (bottom) first.
//! Values are written in Rust's shortest round-trip notation, so a save and
//! load reproduces every bit.
//!
//! PGM previews are binary 16-bit (`P5`, maxval 65535, big-endian), scaled
//! linearly from the field minimum to its maximum, top image row `j = ny − 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::grid::Grid2D;

const HEADER: &str = "nx,ny,lx,ly";

fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// CSV text for `field` on `grid`.
pub fn field_to_csv(field: &Field2, grid: &Grid2D) -> Result<String> {
    field.check_shape(grid.nx(), grid.ny())?;
    let mut s = String::with_capacity(field.len() * 20);
    s.push_str(HEADER);
    s.push('\n');
    let _ = writeln!(s, "{},{},{},{}", grid.nx(), grid.ny(), fmt_f64(grid.lx()), fmt_f64(grid.ly()));
    for j in 0..grid.ny() {
        let row: Vec<String> = (0..grid.nx()).map(|i| fmt_f64(field.get(i, j))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn save_field(path: &Path, field: &Field2, grid: &Grid2D) -> Result<()> {
    fs::write(path, field_to_csv(field, grid)?)?;
    Ok(())
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::FieldFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a field together with the grid stored in its header.
pub fn load_field_with_grid(path: &Path) -> Result<(Grid2D, Field2)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(format_error(path, format!("first line must be `{HEADER}`")));
    }
    let meta: Vec<&str> = lines
        .next()
        .ok_or_else(|| format_error(path, "missing grid line"))?
        .split(',')
        .map(str::trim)
        .collect();
    if meta.len() != 4 {
        return Err(format_error(path, "grid line must hold four values"));
    }
    let parse_count = |s: &str| s.parse::<usize>().map_err(|_| format_error(path, format!("bad cell count `{s}`")));
    let parse_len = |s: &str| s.parse::<f64>().map_err(|_| format_error(path, format!("bad length `{s}`")));
    let grid = Grid2D::new(parse_count(meta[0])?, parse_count(meta[1])?, parse_len(meta[2])?, parse_len(meta[3])?)
        .map_err(|e| format_error(path, e.to_string()))?;
    let mut data = Vec::with_capacity(grid.cells());
    let mut rows = 0;
    for (r, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split(',') {
            let v = tok
                .trim()
                .parse::<f64>()
                .map_err(|_| format_error(path, format!("row {r}: bad value `{}`", tok.trim())))?;
            data.push(v);
        }
        if data.len() - before != grid.nx() {
            return Err(format_error(
                path,
                format!("row {r}: expected {} values, found {}", grid.nx(), data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != grid.ny() {
        return Err(format_error(path, format!("expected {} rows, found {rows}", grid.ny())));
    }
    let field = Field2::from_vec(grid.nx(), grid.ny(), data)?;
    Ok((grid, field))
}

/// Reads a field and checks that its header matches `grid`.
pub fn load_field(path: &Path, grid: &Grid2D) -> Result<Field2> {
    let (g, f) = load_field_with_grid(path)?;
    if g.nx() != grid.nx() || g.ny() != grid.ny() {
        return Err(format_error(
            path,
            format!("header says {}x{}, expected {}x{}", g.nx(), g.ny(), grid.nx(), grid.ny()),
        ));
    }
    if g.lx() != grid.lx() || g.ly() != grid.ly() {
        return Err(format_error(
            path,
            format!("header says domain {}x{}, expected {}x{}", g.lx(), g.ly(), grid.lx(), grid.ly()),
        ));
    }
    Ok(f)
}

/// Binary PGM bytes for a preview of `field`. A constant field maps to 0.
pub fn field_to_pgm(field: &Field2) -> Vec<u8> {
    let (nx, ny) = (field.nx(), field.ny());
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let lo = field.as_slice().iter().copied().map(finite).fold(f64::INFINITY, f64::min);
    let hi = field.as_slice().iter().copied().map(finite).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    out.reserve(2 * nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let v = finite(field.get(i, j));
            let level = if span > 0.0 {
                ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

pub fn write_pgm(path: &Path, field: &Field2) -> Result<()> {
    fs::write(path, field_to_pgm(field))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::new(5, 3, 1.0, 0.7).unwrap();
        let vals = vec![
            0.1, -1.0 / 3.0, 1e-300, 5e300, 0.0, -0.0, 2.0f64.sqrt(), 123456.789, 1e-5, 7.0, f64::MIN_POSITIVE, 9.99e14,
            1e15, -2.5e-7, 3.0,
        ];
        let f = Field2::from_vec(5, 3, vals).unwrap();
        let path = dir.path().join("f.csv");
        save_field(&path, &f, &g).unwrap();
        let back = load_field(&path, &g).unwrap();
        for (a, b) in f.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let path = dir.path().join("f.csv");
        save_field(&path, &Field2::zeros(4, 4), &g).unwrap();
        assert!(load_field(&path, &Grid2D::new(5, 4, 1.0, 1.0).unwrap()).is_err());
        fs::write(&path, "nx,ny,lx,ly\n2,2,1,1\n1,2\n3\n").unwrap();
        assert!(load_field_with_grid(&path).is_err());
        fs::write(&path, "nx,ny,lx,ly\n2,2,1,1\n1,2\n3,x\n").unwrap();
        assert!(load_field_with_grid(&path).is_err());
        fs::write(&path, "nx,ny,lx,ly\n2,2,1,1\n1,2\n").unwrap();
        assert!(load_field_with_grid(&path).is_err());
    }

    #[test]
    fn pgm_of_constant_field() {
        let bytes = field_to_pgm(&Field2::constant(3, 2, 4.5));
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 12);
        assert!(body.iter().all(|&b| b == 0));
    }

    #[test]
    fn pgm_orientation_and_scaling() {
        let f = Field2::from_vec(2, 2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let bytes = field_to_pgm(&f);
        let body = &bytes[b"P5\n2 2\n65535\n".len()..];
        let px: Vec<u16> = body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        assert_eq!(px, vec![32768, 65535, 0, 16384]);
    }
}
