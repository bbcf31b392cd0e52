//! Plain-text tensor fixtures.
//!
//! ```text
//! B N D
//! <D values>      # row (b=0, n=0)
//! <D values>      # row (b=0, n=1)
//! ...             # B*N rows in total
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a write/read cycle is bitwise lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub fn to_fixture_string(t: &Tensor3) -> String {
    let [b, n, d] = t.dims();
    let mut out = format!("{b} {n} {d}\n");
    for row in t.data().chunks_exact(d) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_fixture(text: &str) -> Result<Tensor3> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("fixture is empty".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|e| Error::Parse(format!("bad header field {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let [b, n, d]: [usize; 3] = dims
        .try_into()
        .map_err(|_| Error::Parse(format!("header must be `B N D`, got {header:?}")))?;

    let mut data = Vec::with_capacity(b * n * d);
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("row {lineno}: bad value {tok:?}: {e}")))?;
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::Parse(format!(
                "row {lineno} has {} values, expected {d}",
                data.len() - before
            )));
        }
        rows += 1;
    }
    if rows != b * n {
        return Err(Error::Parse(format!(
            "expected {} rows, found {rows}",
            b * n
        )));
    }
    Tensor3::new([b, n, d], data)
}

pub fn write_fixture(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_fixture_string(t)).map_err(|e| Error::io(path, e))
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixture(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_random_tensor;

    #[test]
    fn text_layout() {
        let t = Tensor3::new([1, 2, 2], vec![1.0, -0.5, 0.25, 3.0]).unwrap();
        assert_eq!(to_fixture_string(&t), "1 2 2\n1.0 -0.5\n0.25 3.0\n");
    }

    #[test]
    fn bitwise_round_trip() {
        let t = seeded_random_tensor([2, 5, 3], 9).unwrap();
        assert_eq!(parse_fixture(&to_fixture_string(&t)).unwrap(), t);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_fixture("").is_err());
        assert!(parse_fixture("1 2\n0 0\n").is_err());
        assert!(parse_fixture("1 2 2\n0 0\n").is_err());
        assert!(parse_fixture("1 1 2\n0 x\n").is_err());
        assert!(parse_fixture("1 1 2\n0 1 2\n").is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_fixture("/nonexistent/fixture.txt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/fixture.txt"));
    }
}
