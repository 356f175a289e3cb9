//! Text grid and CSV formats.
//!
//! A grid file has `ncols`, `nrows` and an optional `nodata_value` header,
//! one `key value` pair per line, followed by `nrows` lines of `ncols`
//! whitespace-separated numbers. Values are written with the shortest digit
//! string that parses back to the same double.

use std::fmt::Write;

use semdtm_core::num::{fmt_real, parse_real, same_value};
use semdtm_core::{ArrayError, NdArray};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    /// `line` and `column` are 1-based.
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Array(#[from] ArrayError),
}

fn syntax<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, GridError> {
    Err(GridError::Syntax {
        line,
        column,
        message: message.into(),
    })
}

/// Whitespace-separated tokens with their 1-based character columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut col = 0;
    for (byte, ch) in line.char_indices() {
        col += 1;
        if ch.is_whitespace() {
            if let Some((b, c)) = start.take() {
                out.push((c, &line[b..byte]));
            }
        } else if start.is_none() {
            start = Some((byte, col));
        }
    }
    if let Some((b, c)) = start {
        out.push((c, &line[b..]));
    }
    out
}

fn header_count(line_no: usize, toks: &[(usize, &str)], key: &str) -> Result<usize, GridError> {
    let Some(&(col, tok)) = toks.get(1) else {
        return syntax(
            line_no,
            toks[0].0 + toks[0].1.len(),
            format!("{key} needs a value"),
        );
    };
    if toks.len() > 2 {
        return syntax(
            line_no,
            toks[2].0,
            format!("unexpected token after {key} value"),
        );
    }
    match tok.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => syntax(
            line_no,
            col,
            format!("{key} must be an integer >= 1, got '{tok}'"),
        ),
    }
}

/// Parses the grid text format into a 2-D array.
pub fn parse_grid(text: &str) -> Result<NdArray, GridError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut ncols = None;
    let mut nrows = None;
    let mut nodata = None;
    let mut pending = None;
    for (no, line) in lines.by_ref() {
        let toks = tokens(line);
        let Some(&(col, key)) = toks.first() else {
            continue;
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" if ncols.is_none() => ncols = Some(header_count(no, &toks, "ncols")?),
            "nrows" if nrows.is_none() => nrows = Some(header_count(no, &toks, "nrows")?),
            "nodata_value" if nodata.is_none() => {
                let Some(&(vcol, tok)) = toks.get(1) else {
                    return syntax(no, col + key.len(), "nodata_value needs a value");
                };
                if toks.len() > 2 {
                    return syntax(no, toks[2].0, "unexpected token after nodata_value value");
                }
                nodata =
                    Some(parse_real(tok).map_or_else(
                        || syntax(no, vcol, format!("malformed number '{tok}'")),
                        Ok,
                    )?);
            }
            "ncols" | "nrows" | "nodata_value" => {
                return syntax(no, col, format!("duplicate header key '{key}'"))
            }
            k if k.starts_with(|c: char| c.is_ascii_alphabetic()) && parse_real(key).is_none() => {
                return syntax(no, col, format!("unknown header key '{key}'"))
            }
            _ => {
                pending = Some((no, toks));
                break;
            }
        }
    }
    let Some(ncols) = ncols else {
        return syntax(1, 1, "missing ncols header");
    };
    let Some(nrows) = nrows else {
        return syntax(1, 1, "missing nrows header");
    };
    let mut data = Vec::with_capacity(ncols * nrows);
    let mut last_line = 0;
    let rows = pending
        .into_iter()
        .chain(lines.map(|(no, l)| (no, tokens(l))))
        .filter(|(_, t)| !t.is_empty());
    let mut seen = 0;
    for (no, toks) in rows {
        last_line = no;
        if seen == nrows {
            return syntax(
                no,
                toks[0].0,
                format!("expected {nrows} data rows, found more"),
            );
        }
        if toks.len() != ncols {
            let col = toks.get(ncols).map_or(toks[toks.len() - 1].0, |t| t.0);
            return syntax(
                no,
                col,
                format!("expected {ncols} values, got {}", toks.len()),
            );
        }
        for (col, tok) in toks {
            match parse_real(tok) {
                Some(v) => data.push(v),
                None => return syntax(no, col, format!("malformed number '{tok}'")),
            }
        }
        seen += 1;
    }
    if seen < nrows {
        return syntax(
            last_line + 1,
            1,
            format!("expected {nrows} data rows, got {seen}"),
        );
    }
    let mut a = NdArray::new(vec![nrows, ncols], data)?;
    if let Some(nd) = nodata {
        let mask = a.data().iter().map(|&v| same_value(v, nd)).collect();
        a = a.with_mask(mask)?;
    }
    Ok(a)
}

/// Parses comma-separated rows without a header. Empty fields are masked.
pub fn parse_csv(text: &str) -> Result<NdArray, GridError> {
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut col = 1;
        let mut count = 0;
        for field in line.split(',') {
            let tok = field.trim();
            if tok.is_empty() {
                data.push(0.0);
                mask.push(true);
            } else {
                let lead = field.len() - field.trim_start().len();
                match parse_real(tok) {
                    Some(v) => {
                        data.push(v);
                        mask.push(false);
                    }
                    None => return syntax(no, col + lead, format!("malformed number '{tok}'")),
                }
            }
            col += field.chars().count() + 1;
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return syntax(no, 1, format!("expected {w} values, got {count}"))
            }
            _ => {}
        }
        rows += 1;
    }
    let Some(cols) = width else {
        return syntax(1, 1, "empty CSV input");
    };
    Ok(NdArray::new(vec![rows, cols], data)?.with_mask(mask)?)
}

/// A sentinel that no unmasked cell equals: -9999, -99999, ...
fn sentinel(a: &NdArray) -> f64 {
    let mut s = -9999.0;
    while a.unmasked().any(|(_, v)| v == s) {
        s = s * 10.0 - 9.0;
    }
    s
}

/// Renders a 2-D array in the grid format. Masked cells are written as a
/// `nodata_value` sentinel that collides with no unmasked value.
pub fn render_grid(a: &NdArray) -> Result<String, GridError> {
    let &[rows, cols] = a.shape() else {
        return Err(ArrayError::NotTwoD {
            op: "render_grid",
            rank: a.rank(),
        }
        .into());
    };
    let mut s = String::new();
    let _ = writeln!(s, "ncols {cols}");
    let _ = writeln!(s, "nrows {rows}");
    let nodata = (a.masked_count() > 0).then(|| sentinel(a));
    if let Some(nd) = nodata {
        let _ = writeln!(s, "nodata_value {}", fmt_real(nd));
    }
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c > 0 {
                s.push(' ');
            }
            let v = match nodata {
                Some(nd) if a.is_masked(i) => nd,
                _ => a.data()[i],
            };
            s.push_str(&fmt_real(v));
        }
        s.push('\n');
    }
    Ok(s)
}

/// A 2-D view for persistence: vectors become one row, higher ranks fold
/// their leading axes into rows.
pub fn as_two_d(a: &NdArray) -> NdArray {
    match a.rank() {
        2 => a.clone(),
        1 => a.reshape(vec![1, a.len()]).expect("same size"),
        _ => {
            let cols = *a.shape().last().expect("rank >= 1");
            a.reshape(vec![a.len() / cols, cols]).expect("same size")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic() {
        let a = parse_grid("ncols 2\nnrows 1\n3 4\n").unwrap();
        assert_eq!(a.shape(), &[1, 2]);
        assert_eq!(a.data(), &[3.0, 4.0]);
        assert!(a.mask().is_none());
    }

    #[test]
    fn nodata() {
        let a = parse_grid("ncols 2\nnrows 1\nnodata_value -9999\n-9999 4\n").unwrap();
        assert!(a.is_masked(0));
        assert!(!a.is_masked(1));
    }

    #[test]
    fn short_row() {
        let e = parse_grid("ncols 2\nnrows 2\n1 2\n3\n").unwrap_err();
        assert_eq!(e.to_string(), "line 4, column 1: expected 2 values, got 1");
    }

    #[test]
    fn errors_have_positions() {
        let e = |t: &str| match parse_grid(t).unwrap_err() {
            GridError::Syntax { line, column, .. } => (line, column),
            other => panic!("{other}"),
        };
        assert_eq!(e("ncols 2\nnrows 1\n3 x4\n"), (3, 3));
        assert_eq!(e("ncols two\nnrows 1\n3 4\n"), (1, 7));
        assert_eq!(e("NCOLS 2\nbogus 1\n"), (2, 1));
        assert_eq!(e("ncols 2\nnrows 2\n1 2\n"), (4, 1));
        assert_eq!(e("ncols 1\nnrows 1\n1\n2\n"), (4, 1));
        assert_eq!(e("nrows 1\n1\n"), (1, 1));
    }

    #[test]
    fn header_keys_are_case_insensitive() {
        let a = parse_grid("NCOLS 1\nNRows 2\nNODATA_value 0\n0\n5\n").unwrap();
        assert_eq!(a.shape(), &[2, 1]);
        assert!(a.is_masked(0));
    }

    #[test]
    fn round_trip_with_collision() {
        let a = NdArray::from_rows(&[[-9999.0, 0.1], [f64::NAN, 1e300]])
            .unwrap()
            .with_mask(vec![false, false, false, true])
            .unwrap();
        let text = render_grid(&a).unwrap();
        assert!(text.contains("nodata_value -99999"));
        assert_eq!(parse_grid(&text).unwrap(), a);
    }

    #[test]
    fn precision() {
        let a = NdArray::from_rows(&[[0.1]]).unwrap();
        let b = parse_grid(&render_grid(&a).unwrap()).unwrap();
        assert_eq!(b.data()[0].to_bits(), 0.1f64.to_bits());
    }

    #[test]
    fn three_d_rejected() {
        let a = NdArray::filled(vec![2, 2, 2], 0.0).unwrap();
        assert!(render_grid(&a)
            .unwrap_err()
            .to_string()
            .starts_with("render_grid requires 2-D"));
    }

    #[test]
    fn csv() {
        let a = parse_csv("1, 2,\n3,,4\n").unwrap();
        assert_eq!(a.shape(), &[2, 3]);
        assert_eq!(a.mask().unwrap(), &[false, false, true, false, true, false]);
        let e = parse_csv("1,2\n3\n").unwrap_err();
        assert_eq!(e.to_string(), "line 2, column 1: expected 2 values, got 1");
        let e = parse_csv("1, zz\n").unwrap_err();
        assert_eq!(e.to_string(), "line 1, column 4: malformed number 'zz'");
    }
}
