//! Trajectory CSV: header `t,j0_x,j0_y,j0_z,j1_x,...`, one row per timestep,
//! the first column the integer time index. An empty cell is a missing value.
//! Values are written in shortest round-trip decimal form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::Sequence;
use crate::error::{Error, Result};

const AXES: [&str; 3] = ["x", "y", "z"];

fn header(joints: usize) -> String {
    let mut h = String::from("t");
    for j in 0..joints {
        for a in AXES {
            h.push_str(&format!(",j{j}_{a}"));
        }
    }
    h
}

pub fn write_csv<W: Write>(mut w: W, seq: &Sequence) -> Result<()> {
    writeln!(w, "{}", header(seq.joints()))?;
    for t in 0..seq.len() {
        write!(w, "{t}")?;
        for c in 0..seq.values.ncols() {
            if seq.mask[(t, c)] {
                write!(w, ",{}", seq.values[(t, c)])?;
            } else {
                write!(w, ",")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, seq: &Sequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(&mut w, seq)?;
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R, name: &str, dt: f64) -> Result<Sequence> {
    let mut lines = BufReader::new(r).lines();
    let head = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file".into() })??;
    let cols: Vec<&str> = head.trim_end().split(',').collect();
    let width = cols.len() - 1;
    if width == 0 || !width.is_multiple_of(3) || head.trim_end() != header(width / 3) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `t,j0_x,j0_y,j0_z,...`, got `{}`", head.trim_end()),
        });
    }
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != width + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} cells, found {}", width + 1, cells.len()),
            });
        }
        cells[0].trim().parse::<f64>().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad time index `{}`", cells[0]),
        })?;
        for cell in &cells[1..] {
            let cell = cell.trim();
            if cell.is_empty() {
                data.push(f64::NAN);
                mask.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("non-numeric cell `{cell}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("non-finite cell `{cell}`"),
                    });
                }
                data.push(v);
                mask.push(true);
            }
        }
        rows += 1;
    }
    let values = DMatrix::from_row_slice(rows, width, &data);
    let mask = DMatrix::from_row_slice(rows, width, &mask);
    Sequence::with_mask(name, dt, values, mask)
}

/// Loads a trajectory; the sequence is named after the file stem.
pub fn load_csv(path: impl AsRef<Path>, dt: f64) -> Result<Sequence> {
    let path = path.as_ref();
    let name = path.file_stem().map_or("sequence".into(), |s| s.to_string_lossy().into_owned());
    read_csv(File::open(path)?, &name, dt)
}
