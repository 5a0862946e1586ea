//! Plain-text matrix format: a `rows cols` header line followed by one line
//! per row with space-separated entries at full round-trip precision. Lines
//! starting with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{from_row_major, Matrix};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::with_capacity(24 * m.len() + 16);
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn is_blank_or_comment(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('#')
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().enumerate();
    let (rows, cols) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                msg: "missing `rows cols` header".into(),
            });
        };
        if is_blank_or_comment(line) {
            continue;
        }
        let dims: Vec<&str> = line.split_whitespace().collect();
        let parse_dim = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("invalid dimension `{s}`"),
            })
        };
        if dims.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: "header must be `rows cols`".into(),
            });
        }
        break (parse_dim(dims[0])?, parse_dim(dims[1])?);
    };
    if rows == 0 || cols == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("empty shape {rows}x{cols}"),
        });
    }

    let mut entries = Vec::with_capacity(rows * cols);
    let mut read_rows = 0;
    for (idx, line) in lines {
        if is_blank_or_comment(line) {
            continue;
        }
        if read_rows == rows {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("more than {rows} data rows"),
            });
        }
        let before = entries.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("invalid number `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("non-finite value `{tok}`"),
                });
            }
            entries.push(v);
        }
        if entries.len() - before != cols {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {cols} values, found {}", entries.len() - before),
            });
        }
        read_rows += 1;
    }
    if read_rows != rows {
        return Err(Error::Parse {
            line: text.lines().count() + 1,
            msg: format!("expected {rows} data rows, found {read_rows}"),
        });
    }
    from_row_major(rows, cols, &entries)
}

pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_matrix(&text)
}

pub fn write_text_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_matrix_file(path: &Path, m: &Matrix) -> Result<()> {
    write_text_file(path, &format_matrix(m))
}

/// Writes a matrix preceded by `# key: value` comment lines.
pub fn write_annotated_matrix(path: &Path, m: &Matrix, notes: &[(&str, &str)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in notes {
        let _ = writeln!(text, "# {k}: {v}");
    }
    text.push_str(&format_matrix(m));
    write_text_file(path, &text)
}
