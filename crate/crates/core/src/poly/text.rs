//! Plain-text polynomial format: `coeff * x1^a * x2^b + ...`.
//!
//! Whitespace is ignored, multiplication (`*`) and powers (`^`) are always
//! explicit, coefficients may use decimal or scientific notation.

use super::{Monomial, Poly, PolyError};
use crate::Scalar;

/// Parses `text` with variables resolved against `names`.
pub fn parse_poly<S: Scalar>(text: &str, names: &[&str]) -> Result<Poly<S>, PolyError> {
    let src: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if src.is_empty() {
        return Err(PolyError::Parse {
            input: text.to_string(),
            reason: "empty expression".into(),
        });
    }
    let err = |reason: String| PolyError::Parse {
        input: text.to_string(),
        reason,
    };
    let bytes = src.as_bytes();
    let mut terms: Vec<(Monomial, S)> = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let mut sign = S::one();
        let mut signed = false;
        while pos < bytes.len() && (bytes[pos] == b'+' || bytes[pos] == b'-') {
            if bytes[pos] == b'-' {
                sign = -sign;
            }
            signed = true;
            pos += 1;
        }
        if !signed && !terms.is_empty() {
            return Err(err(format!("expected '+' or '-' at offset {pos}")));
        }
        // term: factor ('*' factor)*
        let mut coeff = sign;
        let mut pairs: Vec<(usize, u32)> = Vec::new();
        loop {
            if pos >= bytes.len() {
                return Err(err("dangling operator".into()));
            }
            let c = bytes[pos] as char;
            if c.is_ascii_digit() || c == '.' {
                let start = pos;
                pos = scan_number(bytes, pos);
                let lit = &src[start..pos];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| err(format!("bad number '{lit}'")))?;
                if pos < bytes.len() && bytes[pos] == b'^' {
                    return Err(err("powers of numeric literals are not supported".into()));
                }
                coeff = coeff * S::from_f64_lossy(v);
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = pos;
                while pos < bytes.len()
                    && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_')
                {
                    pos += 1;
                }
                let name = &src[start..pos];
                if pos < bytes.len() && bytes[pos] == b'(' {
                    return Err(err(format!("function '{name}' is not polynomial")));
                }
                let idx = names
                    .iter()
                    .position(|n| *n == name)
                    .ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
                let mut power = 1u32;
                if pos < bytes.len() && bytes[pos] == b'^' {
                    pos += 1;
                    let start = pos;
                    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                        pos += 1;
                    }
                    power = src[start..pos]
                        .parse()
                        .map_err(|_| err("exponent must be a nonnegative integer".into()))?;
                }
                pairs.push((idx, power));
            } else {
                return Err(err(format!("unexpected character '{c}'")));
            }
            if pos < bytes.len() && bytes[pos] == b'*' {
                pos += 1;
                continue;
            }
            break;
        }
        if pos < bytes.len() && bytes[pos] != b'+' && bytes[pos] != b'-' {
            return Err(err(format!(
                "unexpected '{}' (multiplication must be explicit)",
                bytes[pos] as char
            )));
        }
        terms.push((Monomial::from_pairs(pairs), coeff));
    }
    Ok(Poly::from_terms(names.len(), terms))
}

fn scan_number(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && (bytes[pos].is_ascii_digit() || bytes[pos] == b'.') {
        pos += 1;
    }
    if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
        let mut look = pos + 1;
        if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
            look += 1;
        }
        if look < bytes.len() && bytes[look].is_ascii_digit() {
            pos = look;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
        }
    }
    pos
}

/// Canonical text form: terms in graded-lex order, shortest round-trip
/// coefficient representation.
pub fn format_poly<S: Scalar>(p: &Poly<S>, names: &[&str]) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, (m, c)) in p.terms().enumerate() {
        let neg = c < S::zero();
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        out.push_str(&format!("{}", c.abs()));
        for &(v, e) in m.powers() {
            out.push('*');
            out.push_str(names[v]);
            if e != 1 {
                out.push_str(&format!("^{e}"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example_strings() {
        let names = ["x1", "x2", "u1", "t"];
        let p: Poly<f64> = parse_poly("100 - x1^2 - 1*x2^2", &names).unwrap();
        assert_eq!(p.num_terms(), 3);
        assert_eq!(p.eval(&[3.0, 4.0, 0.0, 0.0]), 75.0);
        let q: Poly<f64> = parse_poly(" 2.5e-1 * x1 * t ^ 2 ", &names).unwrap();
        assert_eq!(q.eval(&[2.0, 0.0, 0.0, 2.0]), 2.0);
    }

    #[test]
    fn rejects_non_polynomial() {
        let names = ["x"];
        assert!(parse_poly::<f64>("sin(x)", &names).is_err());
        assert!(parse_poly::<f64>("2x", &names).is_err());
        assert!(parse_poly::<f64>("x^-1", &names).is_err());
        assert!(matches!(
            parse_poly::<f64>("y", &names),
            Err(PolyError::UnknownVariable(_))
        ));
    }

    #[test]
    fn format_then_parse_is_identity() {
        let names = ["x", "t"];
        let p: Poly<f64> =
            parse_poly("-0.1 + 3*x^2*t - 1e-3*t + 0.3333333333333333*x", &names).unwrap();
        let text = format_poly(&p, &names);
        let q: Poly<f64> = parse_poly(&text, &names).unwrap();
        assert_eq!(p, q);
        assert_eq!(format_poly(&Poly::<f64>::zero(2), &names), "0");
    }
}
