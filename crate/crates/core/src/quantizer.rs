//! Asymmetric mid-rise quantization `q(b) = floor(b / delta)`.
//!
//! The level is held as an exact rational. Decimal strings such as `"1e-4"`
//! parse to the exact decimal value, and every finite `f64` is itself a
//! dyadic rational, so the floor is always computed without rounding. All
//! protocol arithmetic after this boundary is integer arithmetic.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuantizeError {
    #[error("non-finite input component at index {index}")]
    NonFiniteInput { index: usize },
    #[error("quantized component at index {index} does not fit in 64 bits")]
    Overflow { index: usize },
    #[error("invalid quantization level {0:?}")]
    InvalidLevel(String),
}

/// Quantization level `delta > 0`. Equality compares exact values.
#[derive(Clone)]
pub struct QuantizationLevel {
    exact: BigRational,
    approx: f64,
    label: String,
    // numerator/denominator when both fit comfortably in f64 integers
    small: Option<(i64, i64)>,
}

const F64_EXACT_INT: i64 = 1 << 53;

impl QuantizationLevel {
    fn from_exact(exact: BigRational, label: String) -> Result<Self, QuantizeError> {
        if !exact.is_positive() {
            return Err(QuantizeError::InvalidLevel(label));
        }
        let approx = exact
            .to_f64()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| QuantizeError::InvalidLevel(label.clone()))?;
        let small = match (exact.numer().to_i64(), exact.denom().to_i64()) {
            (Some(n), Some(d)) if n < F64_EXACT_INT && d < F64_EXACT_INT => Some((n, d)),
            _ => None,
        };
        Ok(Self {
            exact,
            approx,
            label,
            small,
        })
    }

    /// Exact value of a finite positive float.
    pub fn from_f64(delta: f64) -> Result<Self, QuantizeError> {
        let exact = BigRational::from_float(delta)
            .ok_or_else(|| QuantizeError::InvalidLevel(delta.to_string()))?;
        Self::from_exact(exact, format!("{delta:e}"))
    }

    /// Exact ratio `numer / denom`.
    pub fn from_ratio(numer: i64, denom: i64) -> Result<Self, QuantizeError> {
        if denom == 0 {
            return Err(QuantizeError::InvalidLevel(format!("{numer}/{denom}")));
        }
        let exact = BigRational::new(BigInt::from(numer), BigInt::from(denom));
        Self::from_exact(exact, format!("{numer}/{denom}"))
    }

    pub fn as_f64(&self) -> f64 {
        self.approx
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.exact
    }

    /// The text the level was created from (or a canonical rendering).
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Element-wise `floor(b / delta)`.
    pub fn quantize(&self, b: &[f64]) -> Result<Vec<i64>, QuantizeError> {
        b.iter()
            .enumerate()
            .map(|(index, &v)| self.quantize_scalar(v, index))
            .collect()
    }

    fn quantize_scalar(&self, v: f64, index: usize) -> Result<i64, QuantizeError> {
        if !v.is_finite() {
            return Err(QuantizeError::NonFiniteInput { index });
        }
        if let Some(q) = self.quantize_small(v) {
            return i64::try_from(q).map_err(|_| QuantizeError::Overflow { index });
        }
        self.quantize_big(v, index)
    }

    // v / delta = sign * mant * den * 2^exp / num, floored in i128 when it fits
    fn quantize_small(&self, v: f64) -> Option<i128> {
        let (num, den) = self.small?;
        let (mant, exp, sign) = num_traits::Float::integer_decode(v);
        let top = i128::from(sign) * i128::from(mant) * i128::from(den);
        let (top, bottom) = if exp >= 0 {
            if exp > 20 {
                return None;
            }
            (top << exp, i128::from(num))
        } else {
            if exp < -73 {
                return None;
            }
            (top, i128::from(num) << -exp)
        };
        Some(Integer::div_floor(&top, &bottom))
    }

    fn quantize_big(&self, v: f64, index: usize) -> Result<i64, QuantizeError> {
        let exact = BigRational::from_float(v).ok_or(QuantizeError::NonFiniteInput { index })?;
        let ratio = exact / &self.exact;
        ratio
            .floor()
            .to_integer()
            .to_i64()
            .ok_or(QuantizeError::Overflow { index })
    }

    /// Element-wise `k * delta`, correctly rounded to the nearest `f64`.
    pub fn dequantize(&self, k: &[i64]) -> Vec<f64> {
        k.iter().map(|&v| self.dequantize_scalar(v)).collect()
    }

    fn dequantize_scalar(&self, k: i64) -> f64 {
        if let Some((n, d)) = self.small {
            if let Some(prod) = k.checked_mul(n) {
                if prod.abs() < F64_EXACT_INT {
                    // both operands exact, so the division rounds once
                    return prod as f64 / d as f64;
                }
            }
        }
        (&self.exact * BigInt::from(k)).to_f64().unwrap_or(f64::NAN)
    }
}

impl PartialEq for QuantizationLevel {
    fn eq(&self, other: &Self) -> bool {
        self.exact == other.exact
    }
}

impl Eq for QuantizationLevel {}

impl fmt::Debug for QuantizationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QuantizationLevel({} = {})", self.label, self.exact)
    }
}

impl fmt::Display for QuantizationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for QuantizationLevel {
    type Err = QuantizeError;

    /// Parses a decimal literal (`"0.001"`, `"1e-4"`, `"2.5E-3"`) exactly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let exact = parse_decimal(s).ok_or_else(|| QuantizeError::InvalidLevel(s.to_string()))?;
        Self::from_exact(exact, s.trim().to_string())
    }
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: BigInt = digits.parse().ok()?;
    if negative {
        numer = -numer;
    }
    let scale = exponent.checked_sub(i32::try_from(frac_part.len()).ok()?)?;
    if scale.unsigned_abs() > 4000 {
        return None;
    }
    let ten = BigInt::from(10);
    let pow = num_traits::pow(ten, scale.unsigned_abs() as usize);
    let value = if scale >= 0 {
        BigRational::new(numer * pow, BigInt::one())
    } else {
        BigRational::new(numer, pow)
    };
    Some(value)
}

/// Integer division rounding toward negative infinity.
pub fn floor_div(a: i64, b: i64) -> i64 {
    Integer::div_floor(&a, &b)
}

/// Integer division rounding toward positive infinity.
pub fn ceil_div(a: i64, b: i64) -> i64 {
    Integer::div_ceil(&a, &b)
}

/// `true` when `q` is `floor(b / delta)`, checked in exact rational arithmetic.
pub fn sandwich_holds(b: f64, q: i64, level: &QuantizationLevel) -> bool {
    let Some(b) = BigRational::from_float(b) else {
        return false;
    };
    let lower = level.as_rational() * BigInt::from(q);
    let residual = b - lower;
    !residual.is_negative() && residual < *level.as_rational()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn level(s: &str) -> QuantizationLevel {
        s.parse().unwrap()
    }

    proptest! {
        #[test]
        fn fast_path_matches_rational(
            mant in -(1i64 << 53)..(1i64 << 53),
            exp in -80i32..25,
            which in 0usize..5,
        ) {
            let lv = level(["1e-4", "0.3", "7", "0.0009765625", "123456.789"][which]);
            let v = mant as f64 * 2f64.powi(exp);
            if let Some(fast) = lv.quantize_small(v) {
                let slow = lv.quantize_big(v, 0);
                match slow {
                    Ok(q) => prop_assert_eq!(fast, i128::from(q)),
                    Err(_) => prop_assert!(i64::try_from(fast).is_err()),
                }
            }
        }
    }

    #[test]
    fn floor_examples() {
        assert_eq!(level("0.5").quantize(&[1.2, 0.0]).unwrap(), vec![2, 0]);
        assert_eq!(level("0.5").quantize(&[-1.2]).unwrap(), vec![-3]);
        assert_eq!(level("0.25").quantize(&[-0.25, 0.75]).unwrap(), vec![-1, 3]);
    }

    #[test]
    fn decimal_levels_are_exact() {
        let l = level("1e-4");
        assert_eq!(l.as_rational(), &BigRational::new(1.into(), 10_000.into()));
        assert_eq!(level("0.001").as_rational(), &BigRational::new(1.into(), 1000.into()));
        assert_eq!(level("2.5E-3").as_rational(), &BigRational::new(1.into(), 400.into()));
        assert_eq!(level("3").as_rational(), &BigRational::new(3.into(), 1.into()));
        // 0.3 / 0.1 is 2.9999999999999996 in floating point; exact floor of the
        // f64 0.3 (slightly below 3/10) over 1/10 is 2
        assert_eq!(level("0.1").quantize(&[0.3]).unwrap(), vec![2]);
        assert_eq!(level("0.1").quantize(&[0.5]).unwrap(), vec![5]);
    }

    #[test]
    fn invalid_levels() {
        for s in ["0", "-1e-3", "abc", "", ".", "1e", "1.2.3"] {
            assert!(s.parse::<QuantizationLevel>().is_err(), "{s}");
        }
        assert!(QuantizationLevel::from_f64(f64::NAN).is_err());
        assert!(QuantizationLevel::from_f64(0.0).is_err());
        assert!(QuantizationLevel::from_ratio(1, 0).is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let l = level("0.5");
        assert_eq!(
            l.quantize(&[1.0, f64::NAN]),
            Err(QuantizeError::NonFiniteInput { index: 1 })
        );
        assert!(l.quantize(&[f64::INFINITY]).is_err());
        assert_eq!(
            level("1e-300").quantize(&[1.0]),
            Err(QuantizeError::Overflow { index: 0 })
        );
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(level("0.25").dequantize(&[4]), vec![1.0]);
        assert_eq!(level("1e-4").dequantize(&[0, 0, 0]), vec![0.0; 3]);
        assert_eq!(level("1e-4").dequantize(&[3]), vec![0.0003]);
        assert_eq!(level("0.001").dequantize(&[-1234]), vec![-1.234]);
    }

    #[test]
    fn lattice_points_are_fixed() {
        let l = level("0.25");
        for k in -50..50 {
            let b = k as f64 * 0.25;
            assert_eq!(l.quantize(&[b]).unwrap(), vec![k]);
        }
    }

    proptest! {
        #[test]
        fn sandwich_and_round_trip(b in -1e4f64..1e4, pick in 0usize..4) {
            let l = level(["1e-2", "1e-3", "0.37", "1e-5"][pick]);
            let q = l.quantize(&[b]).unwrap()[0];
            prop_assert!(sandwich_holds(b, q, &l));
            let back = l.dequantize(&[q])[0];
            prop_assert!((back - b).abs() <= l.as_f64());
        }

        #[test]
        fn monotone(a in -1e3f64..1e3, d in 0f64..10.0) {
            let l = level("1e-3");
            let qa = l.quantize(&[a]).unwrap()[0];
            let qb = l.quantize(&[a + d]).unwrap()[0];
            prop_assert!(qa <= qb);
        }

        #[test]
        fn shift_by_lattice_multiple(a in -100f64..100.0, m in -1000i64..1000) {
            // 1/4 makes m * delta exactly representable
            let l = level("0.25");
            let shifted = a + m as f64 * 0.25;
            prop_assume!(shifted - m as f64 * 0.25 == a);
            let q = l.quantize(&[a]).unwrap()[0];
            prop_assert_eq!(l.quantize(&[shifted]).unwrap()[0], q + m);
        }
    }
}
