//! Delimited-text matrices and float formatting.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DelimitedOptions {
    pub delimiter: char,
    /// Skip this many leading non-comment lines.
    pub header_lines: usize,
}

impl Default for DelimitedOptions {
    fn default() -> Self {
        Self { delimiter: ',', header_lines: 0 }
    }
}

/// Parses a row-major delimited matrix. Blank lines and lines starting with `#` are skipped.
/// Errors name `source` and the 1-based line number.
pub fn parse_matrix(text: &str, opts: &DelimitedOptions, source: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skipped = 0;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if skipped < opts.header_lines {
            skipped += 1;
            continue;
        }
        let split: Box<dyn Iterator<Item = &str>> = if opts.delimiter.is_whitespace() {
            Box::new(trimmed.split_whitespace())
        } else {
            Box::new(trimmed.split(opts.delimiter))
        };
        let row = split
            .enumerate()
            .map(|(col, cell)| {
                let cell = cell.trim();
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "{source}:{}: column {}: cannot parse '{cell}' as a number",
                        lineno + 1,
                        col + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{source}:{}: column {}: non-finite value",
                        lineno + 1,
                        col + 1
                    )));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Data(format!(
                    "{source}:{}: ragged row with {} cells, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

pub fn read_matrix(path: &Path, opts: &DelimitedOptions) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_matrix(&text, opts, &path.display().to_string())
}

/// Seventeen significant digits, round-trip exact.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-major delimited rendering.
pub fn format_matrix(m: &DMatrix<f64>, delimiter: char) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format_float(*v)).collect();
        out.push_str(&row.join(&delimiter.to_string()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_with_comments_and_header() {
        let text = "# comment\nx,y\n1,2\n\n3,4\n";
        let opts = DelimitedOptions { delimiter: ',', header_lines: 1 };
        let m = parse_matrix(text, &opts, "t").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn ragged_and_non_numeric_rows_name_the_line() {
        let opts = DelimitedOptions::default();
        let e = parse_matrix("1,2\n3\n", &opts, "a.csv").unwrap_err();
        assert!(e.to_string().contains("a.csv:2"), "{e}");
        let e = parse_matrix("1,2\n3,x\n", &opts, "b.csv").unwrap_err();
        assert!(e.to_string().contains("b.csv:2"), "{e}");
    }

    #[test]
    fn whitespace_delimiter() {
        let opts = DelimitedOptions { delimiter: ' ', header_lines: 0 };
        let m = parse_matrix("1  2\n3 4", &opts, "t").unwrap();
        assert_eq!(m.shape(), (2, 2));
    }

    proptest! {
        #[test]
        fn format_and_parse_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 1..12), cols in 1usize..4) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let m = DMatrix::from_row_slice(rows, cols, &values[..rows * cols]);
            let back = parse_matrix(&format_matrix(&m, ';'), &DelimitedOptions { delimiter: ';', header_lines: 0 }, "p").unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
