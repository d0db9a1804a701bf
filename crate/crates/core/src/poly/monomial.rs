use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// A monomial stored as sorted `(variable, power)` pairs with no zero powers.
///
/// Ordering is graded lexicographic: lower total degree first, and within
/// a degree the monomial with the larger power of the lowest-indexed
/// differing variable comes first (`x1^2 < x1*x2 < x2^2`).
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Monomial {
    powers: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn var(index: usize) -> Self {
        Self {
            powers: vec![(index, 1)],
        }
    }

    /// Builds a monomial from a dense exponent vector.
    pub fn from_exponents(exponents: &[u32]) -> Self {
        let powers = exponents
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| (i, e))
            .collect();
        Self { powers }
    }

    /// Builds a monomial from arbitrary `(variable, power)` pairs, merging
    /// repeated variables.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut powers: Vec<(usize, u32)> = Vec::new();
        let mut raw: Vec<(usize, u32)> = pairs.into_iter().filter(|p| p.1 > 0).collect();
        raw.sort_by_key(|p| p.0);
        for (v, e) in raw {
            match powers.last_mut() {
                Some(last) if last.0 == v => last.1 += e,
                _ => powers.push((v, e)),
            }
        }
        Self { powers }
    }

    pub fn powers(&self) -> &[(usize, u32)] {
        &self.powers
    }

    pub fn is_one(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|p| p.1).sum()
    }

    pub fn exponent(&self, var: usize) -> u32 {
        self.powers
            .iter()
            .find(|p| p.0 == var)
            .map(|p| p.1)
            .unwrap_or(0)
    }

    /// Highest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.powers.last().map(|p| p.0)
    }

    pub fn to_exponents(&self, nvars: usize) -> Vec<u32> {
        let mut out = vec![0; nvars];
        for &(v, e) in &self.powers {
            out[v] = e;
        }
        out
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut powers = Vec::with_capacity(self.powers.len() + other.powers.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.powers, &other.powers);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    powers.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    powers.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    powers.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        powers.extend_from_slice(&a[i..]);
        powers.extend_from_slice(&b[j..]);
        Monomial { powers }
    }

    /// Returns `(k, m / x_var)` where `k` is the exponent of `var`, or
    /// `None` when `var` does not occur.
    pub fn derivative(&self, var: usize) -> Option<(u32, Monomial)> {
        let pos = self.powers.iter().position(|p| p.0 == var)?;
        let k = self.powers[pos].1;
        let mut powers = self.powers.clone();
        if k == 1 {
            powers.remove(pos);
        } else {
            powers[pos].1 -= 1;
        }
        Some((k, Monomial { powers }))
    }

    /// Evaluates the monomial at `point`.
    pub fn eval<S: crate::Scalar>(&self, point: &[S]) -> S {
        self.powers
            .iter()
            .fold(S::one(), |acc, &(v, e)| acc * point[v].powi(e as i32))
    }

    /// Renames variables through `map` (old index -> new index).
    pub fn remap(&self, map: &[usize]) -> Monomial {
        Monomial::from_pairs(self.powers.iter().map(|&(v, e)| (map[v], e)))
    }

    /// Removes variable `var` and returns its exponent with the remainder.
    pub fn split_off(&self, var: usize) -> (u32, Monomial) {
        match self.derivative(var) {
            None => (0, self.clone()),
            Some((k, _)) => (
                k,
                Monomial {
                    powers: self.powers.iter().copied().filter(|p| p.0 != var).collect(),
                },
            ),
        }
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        // Same degree: walk variables in index order; larger power first.
        let (a, b) = (&self.powers, &other.powers);
        let (mut i, mut j) = (0, 0);
        loop {
            match (a.get(i), b.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Less,
                (None, Some(_)) => return Ordering::Greater,
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va < vb {
                        return Ordering::Less;
                    }
                    if vb < va {
                        return Ordering::Greater;
                    }
                    if ea != eb {
                        return eb.cmp(&ea);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Debug for Monomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.powers.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .powers
            .iter()
            .map(|&(v, e)| {
                if e == 1 {
                    format!("z{v}")
                } else {
                    format!("z{v}^{e}")
                }
            })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_lex_order() {
        let one = Monomial::one();
        let x = Monomial::var(0);
        let y = Monomial::var(1);
        let xx = Monomial::from_exponents(&[2, 0]);
        let xy = Monomial::from_exponents(&[1, 1]);
        let yy = Monomial::from_exponents(&[0, 2]);
        let mut v = vec![
            yy.clone(),
            xy.clone(),
            y.clone(),
            one.clone(),
            xx.clone(),
            x.clone(),
        ];
        v.sort();
        assert_eq!(v, vec![one, x, y, xx, xy, yy]);
    }

    #[test]
    fn zero_powers_are_not_stored() {
        let m = Monomial::from_exponents(&[0, 3, 0]);
        assert_eq!(m.powers(), &[(1, 3)]);
        let m = Monomial::from_pairs([(2, 0), (1, 1), (1, 2)]);
        assert_eq!(m.powers(), &[(1, 3)]);
    }

    #[test]
    fn product_and_derivative() {
        let a = Monomial::from_exponents(&[1, 2]);
        let b = Monomial::from_exponents(&[2, 0, 1]);
        let p = a.mul(&b);
        assert_eq!(p.to_exponents(3), vec![3, 2, 1]);
        let (k, d) = p.derivative(1).unwrap();
        assert_eq!(k, 2);
        assert_eq!(d.to_exponents(3), vec![3, 1, 1]);
        assert!(Monomial::var(0).derivative(1).is_none());
    }
}
