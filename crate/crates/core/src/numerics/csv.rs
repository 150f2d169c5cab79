//! Text serialization of tensors: a `# shape: d0,d1,...` header, then one row
//! per slice along the last axis, values written with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_tensor_csv(t: &Tensor) -> String {
    let mut out = String::new();
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "# shape: {}", dims.join(","));
    let width = t.shape().last().copied().unwrap_or(1).max(1);
    if t.shape().last() == Some(&0) {
        return out;
    }
    for row in t.data().chunks(width) {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_tensor_csv(text: &str, path: &Path) -> Result<Tensor> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let dims = header
        .strip_prefix("# shape:")
        .ok_or_else(|| err(1, "missing `# shape:` header".into()))?;
    let shape = dims
        .split(',')
        .map(|d| d.trim())
        .filter(|d| !d.is_empty())
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(1, format!("bad shape: {e}")))?;
    let width = shape.last().copied().unwrap_or(1);
    let expected: usize = shape.iter().product();
    let mut data = Vec::with_capacity(expected);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(lineno, format!("bad value: {e}")))?;
        if row.len() != width {
            return Err(err(
                lineno,
                format!("expected {width} values, found {}", row.len()),
            ));
        }
        data.extend(row);
    }
    if data.len() != expected {
        return Err(err(
            text.lines().count(),
            format!("expected {expected} values, found {}", data.len()),
        ));
    }
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let rng = Rng::new(1);
        let t = Tensor::from_fn(&[3, 2, 5], |i| (rng.uniform(i as u64) - 0.5) * 1e-3 / 7.0);
        let text = write_tensor_csv(&t);
        assert!(text.starts_with("# shape: 3,2,5\n"));
        assert_eq!(text.lines().count(), 1 + 6);
        let back = read_tensor_csv(&text, Path::new("t.csv")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_rejected_with_line() {
        let p = Path::new("x.csv");
        assert!(matches!(read_tensor_csv("", p), Err(Error::Parse { line: 1, .. })));
        let short = "# shape: 2,1,2\n1,2\n3\n";
        assert!(matches!(read_tensor_csv(short, p), Err(Error::Parse { line: 3, .. })));
        let junk = "# shape: 1,1,2\n1,abc\n";
        assert!(matches!(read_tensor_csv(junk, p), Err(Error::Parse { line: 2, .. })));
    }
}
