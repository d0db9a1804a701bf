//! Gram-matrix parameterization of SOS and Putinar-type constraints.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{Monomial, MonomialBasis, PolyError};
use crate::sdp::SdpBuilder;
use crate::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("degree bookkeeping: multiplier for `{label}` of degree {multiplier} times domain degree {domain} exceeds representable degree {cap}")]
    DegreeBookkeeping {
        label: String,
        multiplier: u32,
        domain: u32,
        cap: u32,
    },
    #[error("multiplier degree for `{0}` must be even")]
    OddMultiplier(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Polynomial whose coefficients are affine in the free decision variables:
/// `constant + sum_k x_k * linear[k]`.
#[derive(Clone, Debug)]
pub struct AffinePoly {
    pub constant: Polynomial,
    pub linear: Vec<(usize, Polynomial)>,
}

impl AffinePoly {
    pub fn constant(p: Polynomial) -> Self {
        Self {
            constant: p,
            linear: Vec::new(),
        }
    }

    pub fn degree(&self) -> u32 {
        self.linear
            .iter()
            .map(|(_, p)| p.degree())
            .chain(std::iter::once(self.constant.degree()))
            .max()
            .unwrap_or(0)
    }

    pub fn nvars(&self) -> usize {
        self.constant.nvars()
    }

    /// Substitutes values for the decision variables.
    pub fn evaluate(&self, free: &[f64]) -> Polynomial {
        let mut terms: BTreeMap<Monomial, f64> =
            self.constant.terms().map(|(m, c)| (m.clone(), c)).collect();
        for (k, p) in &self.linear {
            for (m, c) in p.terms() {
                *terms.entry(m.clone()).or_insert(0.0) += free[*k] * c;
            }
        }
        Polynomial::from_terms(self.nvars(), terms)
    }

    fn used_vars(&self) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.constant.used_vars().into_iter().collect();
        for (_, p) in &self.linear {
            out.extend(p.used_vars());
        }
        out
    }
}

/// A PSD block `Q` standing for the polynomial `Z^T Q Z`.
#[derive(Clone, Debug)]
pub struct GramBlock {
    pub basis: MonomialBasis,
    /// Index of the block in the SDP.
    pub block: usize,
}

impl GramBlock {
    /// `Z^T Q Z` for a concrete matrix.
    pub fn polynomial(&self, nvars: usize, q: &DMatrix<f64>) -> Polynomial {
        gram_polynomial(&self.basis, nvars, q)
    }
}

/// Linear map from Gram entries to polynomial coefficients: for each product
/// monomial, the upper-triangle pairs `(p, q)` with `Z_p Z_q` equal to it.
///
/// With the symmetric-entry convention (an entry `(p, q)` stands for both
/// `Q[p][q]` and `Q[q][p]`), the coefficient of the monomial is
/// `<A, Q>` where `A` has unit weight on each listed pair.
pub fn gram_map(basis: &MonomialBasis) -> BTreeMap<Monomial, Vec<(usize, usize)>> {
    let z = basis.entries();
    let mut map: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for q in 0..z.len() {
        for p in 0..=q {
            map.entry(z[p].mul(&z[q])).or_default().push((p, q));
        }
    }
    map
}

/// Declares a PSD block for an SOS polynomial over `vars` of degree `2 * half`
/// and returns it with its coefficient map.
pub fn gram_parameterize(
    builder: &mut SdpBuilder,
    vars: &[usize],
    half: u32,
) -> (GramBlock, BTreeMap<Monomial, Vec<(usize, usize)>>) {
    let basis = MonomialBasis::over(vars, half);
    let block = builder.add_block(basis.len());
    let map = gram_map(&basis);
    (GramBlock { basis, block }, map)
}

pub fn gram_polynomial(basis: &MonomialBasis, nvars: usize, q: &DMatrix<f64>) -> Polynomial {
    gram_expand(basis.entries(), nvars, q)
}

/// `Z^T Q Z` for an explicit monomial vector `Z`.
pub fn gram_expand(z: &[Monomial], nvars: usize, q: &DMatrix<f64>) -> Polynomial {
    let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
    for j in 0..z.len() {
        for i in 0..=j {
            let w = if i == j { q[(i, i)] } else { q[(i, j)] + q[(j, i)] };
            if w != 0.0 {
                *terms.entry(z[i].mul(&z[j])).or_insert(0.0) += w;
            }
        }
    }
    Polynomial::from_terms(nvars, terms)
}

/// A domain inequality `h >= 0` paired with its SOS multiplier.
#[derive(Clone, Debug)]
pub struct Multiplier {
    pub label: String,
    pub domain: Polynomial,
    pub gram: GramBlock,
}

/// Emitted constraint `target - sum_i s_i h_i = sigma_0` with SOS `s_i`, `sigma_0`.
#[derive(Clone, Debug)]
pub struct SosConstraint {
    pub label: String,
    pub target: AffinePoly,
    pub multipliers: Vec<Multiplier>,
    pub residual: GramBlock,
    /// Matched monomials with their SDP rows, in graded-lex order.
    pub rows: Vec<(Monomial, usize)>,
    /// Even degree the identity is matched at.
    pub matched_degree: u32,
}

/// Degree choices for [`compile_putinar`].
#[derive(Clone, Debug, Default)]
pub struct PutinarDegrees {
    /// Lower bound on the matched degree (the decision polynomial's degree).
    pub min_degree: u32,
    /// Explicit multiplier degrees, one per domain polynomial; `None` uses
    /// the largest even degree that fits.
    pub multipliers: Option<Vec<u32>>,
}

/// Matched degree: the smallest even number at least `max(deg target, min)`.
pub fn matched_degree(target_degree: u32, min_degree: u32) -> u32 {
    let d = target_degree.max(min_degree);
    d + d % 2
}

/// Default multiplier degree `2 * floor((cap - deg h) / 2)`, if nonnegative.
pub fn default_multiplier_degree(cap: u32, domain_degree: u32) -> Option<u32> {
    (cap >= domain_degree).then(|| 2 * ((cap - domain_degree) / 2))
}

/// Compiles `target - sum_i s_i h_i` is SOS into `builder`.
///
/// Emits one PSD block per domain polynomial, one residual block, and one
/// equality row per monomial of the matched identity.
pub fn compile_putinar(
    builder: &mut SdpBuilder,
    label: &str,
    target: &AffinePoly,
    domains: &[(String, Polynomial)],
    degrees: &PutinarDegrees,
) -> Result<SosConstraint, SosError> {
    let nvars = target.nvars();
    let cap = matched_degree(target.degree(), degrees.min_degree);
    let mut vars = target.used_vars();
    for (_, h) in domains {
        if h.nvars() != nvars {
            return Err(PolyError::UniverseMismatch {
                left: nvars,
                right: h.nvars(),
            }
            .into());
        }
        vars.extend(h.used_vars());
    }
    let vars: Vec<usize> = vars.into_iter().collect();

    // Contributions per monomial: free terms, block terms and constant.
    #[derive(Default)]
    struct Row {
        constant: f64,
        free: Vec<(usize, f64)>,
        block: Vec<(usize, usize, usize, f64)>,
    }
    let mut rows: BTreeMap<Monomial, Row> = BTreeMap::new();
    for (m, c) in target.constant.terms() {
        rows.entry(m.clone()).or_default().constant += c;
    }
    for (k, p) in &target.linear {
        for (m, c) in p.terms() {
            rows.entry(m.clone()).or_default().free.push((*k, c));
        }
    }

    let mut multipliers = Vec::new();
    for (i, (hl, h)) in domains.iter().enumerate() {
        let dh = h.degree();
        let ds = match &degrees.multipliers {
            Some(list) => {
                let ds = list[i];
                if ds % 2 == 1 {
                    return Err(SosError::OddMultiplier(hl.clone()));
                }
                if ds + dh > cap {
                    return Err(SosError::DegreeBookkeeping {
                        label: hl.clone(),
                        multiplier: ds,
                        domain: dh,
                        cap,
                    });
                }
                ds
            }
            None => {
                default_multiplier_degree(cap, dh).ok_or_else(|| SosError::DegreeBookkeeping {
                    label: hl.clone(),
                    multiplier: 0,
                    domain: dh,
                    cap,
                })?
            }
        };
        let (gram, map) = gram_parameterize(builder, &vars, ds / 2);
        for (m, pairs) in &map {
            for (hm, hc) in h.terms() {
                let row = rows.entry(m.mul(hm)).or_default();
                for &(p, q) in pairs {
                    row.block.push((gram.block, p, q, -hc));
                }
            }
        }
        multipliers.push(Multiplier {
            label: hl.clone(),
            domain: h.clone(),
            gram,
        });
    }
    let (residual, map) = gram_parameterize(builder, &vars, cap / 2);
    for (m, pairs) in &map {
        let row = rows.entry(m.clone()).or_default();
        for &(p, q) in pairs {
            row.block.push((residual.block, p, q, -1.0));
        }
    }

    let mut emitted = Vec::with_capacity(rows.len());
    for (m, row) in rows {
        let r = builder.add_row(-row.constant);
        for (k, c) in row.free {
            builder.free_coeff(r, k, c);
        }
        for (b, p, q, v) in row.block {
            builder.block_coeff(r, b, p, q, v);
        }
        emitted.push((m, r));
    }
    Ok(SosConstraint {
        label: label.to_string(),
        target: target.clone(),
        multipliers,
        residual,
        rows: emitted,
        matched_degree: cap,
    })
}

/// Outcome of re-deriving one constraint from solved values.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ConstraintCheck {
    pub label: String,
    /// Smallest eigenvalue over the constraint's Gram blocks.
    pub min_eigenvalue: f64,
    /// Sup-norm of the coefficients of `target - sum s_i h_i - sigma_0`.
    pub identity_residual: f64,
    /// Sup-norm of the target's coefficients.
    pub target_norm: f64,
}

/// Multipliers and residual as explicit polynomials.
pub struct Reconstruction {
    pub target: Polynomial,
    pub multipliers: Vec<Polynomial>,
    pub residual: Polynomial,
}

impl SosConstraint {
    pub fn reconstruct(&self, free: &[f64], blocks: &[DMatrix<f64>]) -> Reconstruction {
        let n = self.target.nvars();
        Reconstruction {
            target: self.target.evaluate(free),
            multipliers: self
                .multipliers
                .iter()
                .map(|m| m.gram.polynomial(n, &blocks[m.gram.block]))
                .collect(),
            residual: self.residual.polynomial(n, &blocks[self.residual.block]),
        }
    }

    /// Checks the identity against an explicitly supplied target polynomial.
    pub fn check_against(&self, target: &Polynomial, blocks: &[DMatrix<f64>]) -> ConstraintCheck {
        let n = self.target.nvars();
        let mut diff = target.clone();
        let mut min_eig = min_eig(&blocks[self.residual.block]);
        for m in &self.multipliers {
            let q = &blocks[m.gram.block];
            min_eig = min_eig.min(self::min_eig(q));
            let s = m.gram.polynomial(n, q);
            diff = &diff - &(&s * &m.domain);
        }
        diff = &diff - &self.residual.polynomial(n, &blocks[self.residual.block]);
        ConstraintCheck {
            label: self.label.clone(),
            min_eigenvalue: min_eig,
            identity_residual: diff.max_abs_coeff(),
            target_norm: target.max_abs_coeff(),
        }
    }

    pub fn check(&self, free: &[f64], blocks: &[DMatrix<f64>]) -> ConstraintCheck {
        self.check_against(&self.target.evaluate(free), blocks)
    }
}

pub(crate) fn min_eig(q: &DMatrix<f64>) -> f64 {
    if q.nrows() == 0 {
        return f64::INFINITY;
    }
    nalgebra::SymmetricEigen::new(q.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests;
