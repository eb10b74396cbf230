//! Exact rationals, decimal-string parsing and the scalar abstraction used by
//! the tree solver so that one elimination routine serves integer, float and
//! rational callers.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number.
pub type Q = BigRational;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed decimal literal {0:?}")]
pub struct ParseDecimalError(pub String);

/// Parses a decimal literal (`-12.5`, `3e-2`, `7/2`) into an exact rational.
pub fn parse_decimal(s: &str) -> Result<Q, ParseDecimalError> {
    let err = || ParseDecimalError(s.to_string());
    let t = s.trim();
    if t.is_empty() {
        return Err(err());
    }
    if let Some((num, den)) = t.split_once('/') {
        let num = parse_decimal(num).map_err(|_| err())?;
        let den = parse_decimal(den).map_err(|_| err())?;
        if den.is_zero() {
            return Err(err());
        }
        return Ok(num / den);
    }
    let (mantissa, exponent) = match t.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = t[pos + 1..].parse().map_err(|_| err())?;
            (&t[..pos], exp)
        }
        None => (t, 0),
    };
    let (negative, digits) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let joined = format!("{int_part}{frac_part}");
    let mut numer: BigInt = joined.parse().map_err(|_| err())?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        Q::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Q::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

pub fn q(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

pub fn q_ratio(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Renders a rational as a short decimal when it has a finite expansion,
/// otherwise as `p/q`.
pub fn display_q(v: &Q) -> String {
    if v.is_integer() {
        return v.numer().to_string();
    }
    let mut den = v.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut digits = 0usize;
    while (&den % &two).is_zero() || (&den % &five).is_zero() {
        if (&den % &two).is_zero() {
            den /= &two;
        }
        if (&den % &five).is_zero() {
            den /= &five;
        }
        digits += 1;
    }
    if !den.is_one() || digits > 18 {
        return format!("{}/{}", v.numer(), v.denom());
    }
    let scaled = v * Q::from_integer(num_traits::pow(BigInt::from(10), digits));
    let mut s = scaled.to_integer().abs().to_string();
    while s.len() <= digits {
        s.insert(0, '0');
    }
    s.insert(s.len() - digits, '.');
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if v.is_negative() {
        format!("-{trimmed}")
    } else {
        trimmed.to_string()
    }
}

/// Arithmetic needed by the spanning-tree solver.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    /// Whether `value` is zero relative to the magnitude `scale` of the data
    /// it was computed from. Exact types ignore `scale`.
    fn negligible(value: &Self, scale: &Self) -> bool;
    fn magnitude(&self) -> Self;
}

impl Scalar for f64 {
    fn negligible(value: &Self, scale: &Self) -> bool {
        value.abs() <= 1e-9 * (1.0 + scale.abs())
    }
    fn magnitude(&self) -> Self {
        self.abs()
    }
}

impl Scalar for i64 {
    fn negligible(value: &Self, _scale: &Self) -> bool {
        *value == 0
    }
    fn magnitude(&self) -> Self {
        self.abs()
    }
}

impl Scalar for Q {
    fn negligible(value: &Self, _scale: &Self) -> bool {
        value.is_zero()
    }
    fn magnitude(&self) -> Self {
        self.abs()
    }
}

/// Dense row-major matrix with `rows x cols` entries.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix");
        Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// ℓ¹ norm.
pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn dot_e(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Running sum with Kahan compensation.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(parse_decimal("7.5").unwrap(), q_ratio(15, 2));
        assert_eq!(parse_decimal("-0.125").unwrap(), q_ratio(-1, 8));
        assert_eq!(parse_decimal("3e2").unwrap(), q(300));
        assert_eq!(parse_decimal("25E-2").unwrap(), q_ratio(1, 4));
        assert_eq!(parse_decimal("7/3").unwrap(), q_ratio(7, 3));
        assert_eq!(parse_decimal(".5").unwrap(), q_ratio(1, 2));
        assert_eq!(parse_decimal("+4").unwrap(), q(4));
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "abc", "1.2.3", "--1", "1/0", "1e", "."] {
            assert!(parse_decimal(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn displays_short_decimals() {
        assert_eq!(display_q(&q_ratio(1, 2)), "0.5");
        assert_eq!(display_q(&q_ratio(-15, 2)), "-7.5");
        assert_eq!(display_q(&q(3)), "3");
        assert_eq!(display_q(&q_ratio(1, 3)), "1/3");
        assert_eq!(display_q(&q_ratio(1, 40)), "0.025");
    }

    #[test]
    fn kahan_beats_naive_on_many_small_terms() {
        let mut k = KahanSum::default();
        let mut naive = 0.0;
        for _ in 0..1_000_000 {
            k.add(0.1);
            naive += 0.1;
        }
        assert!((k.value() - 100_000.0).abs() < (naive - 100_000.0f64).abs());
        assert!((k.value() - 100_000.0).abs() < 1e-8);
    }
}
