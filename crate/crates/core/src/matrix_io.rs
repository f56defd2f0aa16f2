//! Plain-text matrix format shared by codebooks, received signals and
//! detector output.
//!
//! ```text
//! # optional comment lines
//! <rows> <cols>
//! <row 0: cols whitespace-separated decimal floats>
//! ...
//! <row rows-1>
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the identical `f64`, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn to_string(m: &Matrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:?}", m.get(r, c));
        }
        out.push('\n');
    }
    out
}

pub fn parse(text: &str, source_name: &str) -> Result<Matrix> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing header line \"<rows> <cols>\"".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(err(hline, format!("expected header \"<rows> <cols>\", got {header:?}")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| err(hline, format!("header dimension {s:?} is not a non-negative integer")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;

    let mut m = Matrix::zeros(rows, cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(err(lineno, format!("more than {rows} data rows")));
        }
        let mut count = 0;
        for (c, tok) in line.split_whitespace().enumerate() {
            if c >= cols {
                return Err(err(lineno, format!("more than {cols} values in row")));
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| err(lineno, format!("cannot parse {tok:?} as a number")))?;
            m.set(seen, c, v);
            count += 1;
        }
        if count != cols {
            return Err(err(lineno, format!("expected {cols} values, found {count}")));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(err(
            text.lines().count().max(1),
            format!("expected {rows} data rows, found {seen}"),
        ));
    }
    Ok(m)
}

pub fn read(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    parse(&text, &path.display().to_string())
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partially written matrix.
pub fn write(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, to_string(m).as_bytes())?;
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Matrix::from_rows(&[[0.1, -2.5e-300, 1.0 / 3.0], [7.0, 1e17, -0.0]]).unwrap();
        let back = parse(&to_string(&m), "mem").unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let m = parse("# P\n\n2 1\n1.5\n\n-2\n", "mem").unwrap();
        assert_eq!(m.col(0), &[1.5, -2.0]);
    }

    #[test]
    fn malformed_header_names_line() {
        match parse("\n2 x\n1 2\n", "Y.txt") {
            Err(Error::Parse { source_name, line, .. }) => {
                assert_eq!(source_name, "Y.txt");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_is_rejected_with_line() {
        match parse("2 2\n1 2\n3\n", "m") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_rows_rejected() {
        assert!(parse("3 1\n1\n2\n", "m").is_err());
    }
}
