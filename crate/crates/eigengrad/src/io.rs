//! Text formats: `%g`-style number formatting, the square-matrix exchange
//! format, and the named-array format used for layer-state checkpoints.
//!
//! Matrix exchange format: first line is the dimension `n`, followed by `n`
//! lines of `n` whitespace-separated decimal values, written with 17
//! significant digits so `f64` round-trips exactly.

use std::io::{BufRead, Write};

use crate::error::LinalgError;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::symmetric::SymmetricMatrix;

/// Formats like C's `%.<precision>g`: `precision` significant digits,
/// trailing zeros stripped, scientific notation when the decimal exponent is
/// below -4 or at least `precision`.
pub fn fmt_g(value: f64, precision: usize) -> String {
    if value.is_nan() {
        return "nan".to_string();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if value == 0.0 {
        return "0".to_string();
    }
    let p = precision.max(1);
    // Exponent of the value after rounding to p significant digits.
    let sci = format!("{:.*e}", p - 1, value);
    let (mantissa, exp_str) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp_str.parse().expect("exponent parses");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_trailing_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", mantissa, sign, exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, value);
        strip_trailing_zeros(&fixed).to_string()
    }
}

fn strip_trailing_zeros(s: &str) -> &str {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.')
}

/// Writes a symmetric matrix in the text exchange format.
pub fn write_matrix<F: Scalar, W: Write>(
    w: &mut W,
    m: &SymmetricMatrix<F>,
) -> Result<(), LinalgError> {
    writeln!(w, "{}", m.dim())?;
    write_rows(w, m.as_matrix())?;
    Ok(())
}

fn write_rows<F: Scalar, W: Write>(w: &mut W, m: &Matrix<F>) -> Result<(), LinalgError> {
    for i in 0..m.rows() {
        let line: Vec<String> = m
            .row(i)
            .iter()
            .map(|&x| fmt_g(x.to_f64().unwrap_or(f64::NAN), 17))
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads a symmetric matrix from the text exchange format.
pub fn read_matrix<F: Scalar, R: BufRead>(r: &mut R) -> Result<SymmetricMatrix<F>, LinalgError> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let n: usize = first
        .trim()
        .parse()
        .map_err(|_| LinalgError::Parse(format!("bad dimension line: {first:?}")))?;
    let m = read_rows(r, n, n)?;
    SymmetricMatrix::new(m)
}

fn read_rows<F: Scalar, R: BufRead>(
    r: &mut R,
    rows: usize,
    cols: usize,
) -> Result<Matrix<F>, LinalgError> {
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(LinalgError::Parse(format!("unexpected end of input at row {i}")));
        }
        let mut count = 0;
        for (j, tok) in line.split_whitespace().enumerate() {
            if j >= cols {
                return Err(LinalgError::Parse(format!("row {i} has more than {cols} values")));
            }
            let x: f64 = tok
                .parse()
                .map_err(|_| LinalgError::Parse(format!("bad value {tok:?} at ({i}, {j})")))?;
            out.set(i, j, F::from_f64(x).ok_or_else(|| {
                LinalgError::Parse(format!("value {x} not representable in scalar type"))
            })?);
            count += 1;
        }
        if count != cols {
            return Err(LinalgError::Parse(format!(
                "row {i} has {count} values, expected {cols}"
            )));
        }
    }
    Ok(out)
}

/// Writes one named array: a `name rows cols` header line followed by the
/// rows. Scalars go out as 1x1 arrays.
pub fn write_named_array<F: Scalar, W: Write>(
    w: &mut W,
    name: &str,
    m: &Matrix<F>,
) -> Result<(), LinalgError> {
    writeln!(w, "{} {} {}", name, m.rows(), m.cols())?;
    write_rows(w, m)?;
    Ok(())
}

/// Reads the next named array, or `None` at end of input.
pub fn read_named_array<F: Scalar, R: BufRead>(
    r: &mut R,
) -> Result<Option<(String, Matrix<F>)>, LinalgError> {
    let mut header = String::new();
    loop {
        header.clear();
        if r.read_line(&mut header)? == 0 {
            return Ok(None);
        }
        if !header.trim().is_empty() {
            break;
        }
    }
    let mut parts = header.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| LinalgError::Parse("empty array header".into()))?
        .to_string();
    let rows: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| LinalgError::Parse(format!("bad array header: {header:?}")))?;
    let cols: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| LinalgError::Parse(format!("bad array header: {header:?}")))?;
    let m = read_rows(r, rows, cols)?;
    Ok(Some((name, m)))
}
