//! Matrix Market coordinate format (`real general`) for [`TripletMatrix`].

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::matrix::TripletMatrix;
use crate::scalar::Scalar;

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

pub fn read_matrix_market<T: Scalar, R: BufRead>(reader: R) -> Result<TripletMatrix<T>> {
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty input".into(),
    })?;
    let first = first?;
    let banner: Vec<String> = first.split_whitespace().map(str::to_lowercase).collect();
    if banner.len() != 5
        || banner[0] != "%%matrixmarket"
        || banner[1] != "matrix"
        || banner[2] != "coordinate"
        || banner[3] != "real"
        || banner[4] != "general"
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported header `{first}`"),
        });
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets: Option<TripletMatrix<T>> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("expected an integer, found `{s}`"),
            })
        };
        match &mut triplets {
            None => {
                if tok.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "size line must be `rows cols nnz`".into(),
                    });
                }
                let s = (parse_usize(tok[0])?, parse_usize(tok[1])?, parse_usize(tok[2])?);
                size = Some(s);
                triplets = Some(TripletMatrix::new(s.0, s.1));
            }
            Some(t) => {
                if tok.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "entry line must be `row col value`".into(),
                    });
                }
                let (i, j) = (parse_usize(tok[0])?, parse_usize(tok[1])?);
                let v: f64 = tok[2].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("malformed value `{}`", tok[2]),
                })?;
                if i == 0 || j == 0 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "indices are 1-based".into(),
                    });
                }
                t.push(i - 1, j - 1, T::of(v)).map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
            }
        }
    }
    let (size, t) = match (size, triplets) {
        (Some(s), Some(t)) => (s, t),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing size line".into(),
            })
        }
    };
    if t.entries().len() != size.2 {
        return Err(Error::Parse {
            line: 0,
            message: format!("header declares {} entries, found {}", size.2, t.entries().len()),
        });
    }
    Ok(t)
}

pub fn write_matrix_market<T: Scalar, W: Write>(m: &TripletMatrix<T>, mut w: W) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(w, "{} {} {}", m.rows(), m.cols(), m.entries().len())?;
    for &(i, j, v) in m.entries() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v.as_f64())?;
    }
    Ok(())
}
