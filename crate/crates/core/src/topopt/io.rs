//! Plain-text, VTK and CSV output for design fields and histories.

use std::io::{BufRead, Write};

use super::TopoHistoryRow;
use crate::error::{Error, Result};

/// One grid row per line, `y` increasing downward in the file, values with
/// 17 significant digits.
pub fn write_grid<W: Write>(field: &[f64], n: usize, mut out: W) -> Result<()> {
    if field.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: field.len(),
        });
    }
    for row in field.chunks(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a square grid written by [`write_grid`]; returns `(n, values)`.
pub fn read_grid<R: BufRead>(input: R) -> Result<(usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut rows = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Io(format!("line {}: bad number {tok:?}", rows + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows * rows != values.len() {
        return Err(Error::Io(format!(
            "{} values in {rows} rows is not a square grid",
            values.len()
        )));
    }
    Ok((rows, values))
}

/// Legacy VTK structured-points file with one cell scalar per field.
pub fn write_vtk<W: Write>(fields: &[(&str, &[f64])], n: usize, mut out: W) -> Result<()> {
    let h = 1.0 / n as f64;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "topology design")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {} {} 1", n + 1, n + 1)?;
    writeln!(out, "ORIGIN 0 0 0")?;
    writeln!(out, "SPACING {h:.16e} {h:.16e} 1")?;
    writeln!(out, "CELL_DATA {}", n * n)?;
    for (name, data) in fields {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in data.iter() {
            writeln!(out, "{v:.16e}")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_history_csv<W: Write>(rows: &[TopoHistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip_is_exact() {
        let field: Vec<f64> = (0..9).map(|i| (i as f64).sqrt() / 7.0).collect();
        let mut buf = Vec::new();
        write_grid(&field, 3, &mut buf).unwrap();
        let (n, back) = read_grid(buf.as_slice()).unwrap();
        assert_eq!(n, 3);
        assert_eq!(back, field);
    }

    #[test]
    fn grid_rejects_ragged_input() {
        assert!(read_grid("1 2\n3\n".as_bytes()).is_err());
        assert!(read_grid("1 x\n3 4\n".as_bytes()).is_err());
    }

    #[test]
    fn vtk_header_and_count() {
        let w = vec![0.5; 4];
        let mut buf = Vec::new();
        write_vtk(&[("w", &w), ("theta", &w)], 2, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile"));
        assert!(s.contains("DIMENSIONS 3 3 1"));
        assert!(s.contains("CELL_DATA 4"));
        assert_eq!(s.matches("SCALARS").count(), 2);
    }

    #[test]
    fn history_csv_has_header() {
        let rows = vec![TopoHistoryRow {
            iter: 0,
            j: 1.5,
            rel_change: f64::NAN,
            volume_residual: 0.0,
            norm_d1: 0.1,
        }];
        let mut buf = Vec::new();
        write_history_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iter,j,rel_change,volume_residual,norm_d1\n"));
    }
}
