use std::io::{BufRead, Write};

use super::GeometricRoughPath;
use crate::error::{Error, Result};

/// Writes `t,W1..Wm,WW11..WWmm` with 17 significant digits.
pub fn write_csv<W: Write>(path: &GeometricRoughPath, mut out: W) -> Result<()> {
    let m = path.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("W{i}")));
    for i in 1..=m {
        for j in 1..=m {
            header.push(format!("WW{i}{j}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for k in 0..path.len() {
        let mut row = vec![format!("{:.16e}", path.times()[k])];
        row.extend(path.value(k).iter().map(|v| format!("{v:.16e}")));
        row.extend(path.cumulative_second(k).iter().map(|v| format!("{v:.16e}")));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a lift written by [`write_csv`] (or produced elsewhere) and
/// validates it at [`super::EXTERNAL_LIFT_TOL`].
pub fn read_csv<R: BufRead>(input: R, alpha: f64) -> Result<GeometricRoughPath> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty file".into() })??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Parse { line: 1, message: "first column must be `t`".into() });
    }
    let m = cols.iter().filter(|c| c.starts_with('W') && !c.starts_with("WW")).count();
    if m == 0 || cols.len() != 1 + m + m * m {
        return Err(Error::Parse { line: 1, message: format!("header `{header}` does not describe a lift") });
    }
    let (mut times, mut values, mut second) = (Vec::new(), Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: k + 2, message: e.to_string() })?;
        if nums.len() != cols.len() {
            return Err(Error::Parse { line: k + 2, message: format!("expected {} fields", cols.len()) });
        }
        times.push(nums[0]);
        values.push(nums[1..=m].to_vec());
        second.push(nums[1 + m..].to_vec());
    }
    GeometricRoughPath::from_parts(times, values, second, alpha)
}
