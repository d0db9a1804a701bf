use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use super::{Monomial, PolyError};
use crate::Scalar;

/// Sparse multivariate polynomial over a fixed universe of `nvars` variables.
///
/// Terms are kept in graded-lex order and coefficients below
/// [`Scalar::CANONICAL_ZERO`] are never stored.
#[derive(Clone, PartialEq)]
pub struct Poly<S: Scalar> {
    nvars: usize,
    terms: BTreeMap<Monomial, S>,
}

impl<S: Scalar> Poly<S> {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: S) -> Self {
        Self::from_terms(nvars, [(Monomial::one(), c)])
    }

    /// The polynomial `z_index`.
    pub fn var(nvars: usize, index: usize) -> Self {
        assert!(
            index < nvars,
            "variable {index} outside universe of {nvars}"
        );
        Self::from_terms(nvars, [(Monomial::var(index), S::one())])
    }

    /// Sums the given terms; repeated monomials are accumulated.
    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Monomial, S)>) -> Self {
        let mut p = Self::zero(nvars);
        for (m, c) in terms {
            debug_assert!(m.max_var().is_none_or(|v| v < nvars));
            p.add_term(m, c);
        }
        p.canonicalize();
        p
    }

    fn add_term(&mut self, m: Monomial, c: S) {
        let e = self.terms.entry(m).or_insert_with(S::zero);
        *e = *e + c;
    }

    fn canonicalize(&mut self) {
        self.terms.retain(|_, c| c.abs() >= S::CANONICAL_ZERO);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, S)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> S {
        self.terms.get(m).copied().unwrap_or_else(S::zero)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest total power of the listed variables in any term.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms
            .keys()
            .map(|m| vars.iter().map(|&v| m.exponent(v)).sum())
            .max()
            .unwrap_or(0)
    }

    /// Indices of variables that occur with a nonzero power.
    pub fn used_vars(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .terms
            .keys()
            .flat_map(|m| m.powers().iter().map(|p| p.0))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn max_abs_coeff(&self) -> S {
        self.terms
            .values()
            .fold(S::zero(), |acc, c| acc.max(c.abs()))
    }

    fn check_universe(&self, other: &Self) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::UniverseMismatch {
                left: self.nvars,
                right: other.nvars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_universe(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out.canonicalize();
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.try_add(&other.scale(-S::one()))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_universe(other)?;
        let mut acc: BTreeMap<Monomial, S> = BTreeMap::new();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let e = acc.entry(ma.mul(mb)).or_insert_with(S::zero);
                *e = *e + ca * cb;
            }
        }
        let mut out = Self {
            nvars: self.nvars,
            terms: acc,
        };
        out.canonicalize();
        Ok(out)
    }

    pub fn scale(&self, k: S) -> Self {
        let mut out = Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| (m.clone(), c * k))
                .collect(),
        };
        out.canonicalize();
        out
    }

    pub fn add_constant(&self, k: S) -> Self {
        self.try_add(&Self::constant(self.nvars, k))
            .expect("same universe")
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.nvars, S::one());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Exact partial derivative with respect to `var`.
    pub fn differentiate(&self, var: usize) -> Self {
        let mut acc: BTreeMap<Monomial, S> = BTreeMap::new();
        for (m, &c) in &self.terms {
            if let Some((k, dm)) = m.derivative(var) {
                let e = acc.entry(dm).or_insert_with(S::zero);
                *e = *e + c * S::from_f64_lossy(k as f64);
            }
        }
        let mut out = Self {
            nvars: self.nvars,
            terms: acc,
        };
        out.canonicalize();
        out
    }

    pub fn gradient(&self, vars: &[usize]) -> Vec<Self> {
        vars.iter().map(|&v| self.differentiate(v)).collect()
    }

    /// Evaluates at `point`, which must have length `nvars`.
    pub fn evaluate(&self, point: &[S]) -> Result<S, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: point.len(),
            });
        }
        Ok(self.eval(point))
    }

    /// Unchecked evaluation; panics on a short point.
    pub fn eval(&self, point: &[S]) -> S {
        let deg = self.degree() as usize;
        if deg <= 1 {
            return self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum();
        }
        // Power table: pw[v * (deg+1) + k] = point[v]^k.
        let stride = deg + 1;
        let mut pw = vec![S::one(); self.nvars * stride];
        for (v, &x) in point.iter().enumerate().take(self.nvars) {
            for k in 1..stride {
                pw[v * stride + k] = pw[v * stride + k - 1] * x;
            }
        }
        self.terms
            .iter()
            .map(|(m, &c)| {
                m.powers()
                    .iter()
                    .fold(c, |acc, &(v, e)| acc * pw[v * stride + e as usize])
            })
            .sum()
    }

    /// Batched evaluation over many points.
    pub fn eval_many(&self, points: &[Vec<S>]) -> Vec<S> {
        points.iter().map(|p| self.eval(p)).collect()
    }

    /// Integrates over the box `bounds[v] = (lo, hi)` for every variable.
    pub fn integrate_box(&self, bounds: &[(S, S)]) -> Result<S, PolyError> {
        if bounds.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: bounds.len(),
            });
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(PolyError::MalformedBox { var: i });
            }
        }
        Ok(self
            .terms
            .iter()
            .map(|(m, &c)| c * integrate_monomial(m, bounds))
            .sum())
    }

    /// Substitutes each variable `v` by the polynomial `subs[v]`.
    ///
    /// The result lives in the universe of the substituted polynomials.
    pub fn compose(&self, subs: &[Self]) -> Result<Self, PolyError> {
        if subs.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: subs.len(),
            });
        }
        let target = subs.first().map(|s| s.nvars).unwrap_or(0);
        if let Some(bad) = subs.iter().find(|s| s.nvars != target) {
            return Err(PolyError::UniverseMismatch {
                left: target,
                right: bad.nvars,
            });
        }
        let mut cache: BTreeMap<(usize, u32), Self> = BTreeMap::new();
        let mut out = Self::zero(target);
        for (m, &c) in &self.terms {
            let mut term = Self::constant(target, c);
            for &(v, e) in m.powers() {
                let pw = cache
                    .entry((v, e))
                    .or_insert_with(|| subs[v].pow(e))
                    .clone();
                term = &term * &pw;
            }
            out = &out + &term;
        }
        Ok(out)
    }

    /// Substitutes `z_v -> scale[v] * z_v + offset[v]` for every variable.
    pub fn affine_substitute(&self, scale: &[S], offset: &[S]) -> Result<Self, PolyError> {
        if scale.len() != self.nvars || offset.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: scale.len().min(offset.len()),
            });
        }
        let subs: Vec<Self> = (0..self.nvars)
            .map(|v| {
                Self::var(self.nvars, v)
                    .scale(scale[v])
                    .add_constant(offset[v])
            })
            .collect();
        self.compose(&subs)
    }

    /// Moves the polynomial into a universe of `new_nvars` variables with
    /// old variable `v` renamed to `map[v]`.
    pub fn remap(&self, map: &[usize], new_nvars: usize) -> Self {
        let terms = self.terms.iter().map(|(m, &c)| (m.remap(map), c));
        Self::from_terms(new_nvars, terms)
    }

    /// Fixes variable `var` to `value`, keeping the universe unchanged.
    pub fn fix_var(&self, var: usize, value: S) -> Self {
        let terms = self.terms.iter().map(|(m, &c)| {
            let (k, rest) = m.split_off(var);
            (rest, c * value.powi(k as i32))
        });
        Self::from_terms(self.nvars, terms)
    }

    /// Coefficients listed against `monomials`; terms outside the list are
    /// reported through the second return value.
    pub fn coefficients_against(&self, monomials: &[Monomial]) -> (Vec<S>, Vec<Monomial>) {
        let coeffs = monomials.iter().map(|m| self.coeff(m)).collect();
        let known: std::collections::BTreeSet<&Monomial> = monomials.iter().collect();
        let stray = self
            .terms
            .keys()
            .filter(|m| !known.contains(m))
            .cloned()
            .collect();
        (coeffs, stray)
    }

    pub fn cast<T: Scalar>(&self) -> Poly<T> {
        Poly::from_terms(
            self.nvars,
            self.terms
                .iter()
                .map(|(m, &c)| (m.clone(), T::from_f64_lossy(c.to_f64_lossy()))),
        )
    }
}

fn integrate_monomial<S: Scalar>(m: &Monomial, bounds: &[(S, S)]) -> S {
    let mut acc = S::one();
    let mut seen = vec![false; bounds.len()];
    for &(v, e) in m.powers() {
        seen[v] = true;
        let (lo, hi) = bounds[v];
        let k = (e + 1) as i32;
        acc = acc * (hi.powi(k) - lo.powi(k)) / S::from_f64_lossy(k as f64);
    }
    for (v, &(lo, hi)) in bounds.iter().enumerate() {
        if !seen[v] {
            acc = acc * (hi - lo);
        }
    }
    acc
}

impl<S: Scalar> std::fmt::Debug for Poly<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<String> = (0..self.nvars).map(|i| format!("z{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        write!(f, "{}", super::text::format_poly(self, &names))
    }
}

impl<'a, S: Scalar> Add<&'a Poly<S>> for &'a Poly<S> {
    type Output = Poly<S>;
    fn add(self, rhs: &'a Poly<S>) -> Poly<S> {
        self.try_add(rhs).expect("polynomial universe mismatch")
    }
}

impl<'a, S: Scalar> Sub<&'a Poly<S>> for &'a Poly<S> {
    type Output = Poly<S>;
    fn sub(self, rhs: &'a Poly<S>) -> Poly<S> {
        self.try_sub(rhs).expect("polynomial universe mismatch")
    }
}

impl<'a, S: Scalar> Mul<&'a Poly<S>> for &'a Poly<S> {
    type Output = Poly<S>;
    fn mul(self, rhs: &'a Poly<S>) -> Poly<S> {
        self.try_mul(rhs).expect("polynomial universe mismatch")
    }
}

impl<S: Scalar> Add for Poly<S> {
    type Output = Poly<S>;
    fn add(self, rhs: Poly<S>) -> Poly<S> {
        &self + &rhs
    }
}

impl<S: Scalar> Sub for Poly<S> {
    type Output = Poly<S>;
    fn sub(self, rhs: Poly<S>) -> Poly<S> {
        &self - &rhs
    }
}

impl<S: Scalar> Mul for Poly<S> {
    type Output = Poly<S>;
    fn mul(self, rhs: Poly<S>) -> Poly<S> {
        &self * &rhs
    }
}

impl<S: Scalar> Neg for Poly<S> {
    type Output = Poly<S>;
    fn neg(self) -> Poly<S> {
        self.scale(-S::one())
    }
}

impl<S: Scalar> Neg for &Poly<S> {
    type Output = Poly<S>;
    fn neg(self) -> Poly<S> {
        self.scale(-S::one())
    }
}
