//! Dense linear algebra shared by the interior-point backends.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use rayon::prelude::*;

/// Constraint entries of one PSD block grouped by row.
#[derive(Clone, Debug)]
pub(crate) struct BlockRows {
    pub size: usize,
    /// `(row, entries)` with entries `(i, j, val)`, `i <= j`.
    pub rows: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl BlockRows {
    /// `<A_r, X>` contribution of this block for every row it touches.
    pub fn inner(&self, x: &DMatrix<f64>, out: &mut [f64]) {
        for (r, entries) in &self.rows {
            out[*r] += entry_inner(entries, x);
        }
    }

    /// Adds `sum_r y_r A_r` into `acc`.
    pub fn adjoint_into(&self, y: &[f64], acc: &mut DMatrix<f64>) {
        for (r, entries) in &self.rows {
            let yr = y[*r];
            if yr == 0.0 {
                continue;
            }
            for &(i, j, v) in entries {
                acc[(i, j)] += yr * v;
                if i != j {
                    acc[(j, i)] += yr * v;
                }
            }
        }
    }
}

/// `<A, X>` for a symmetric sparse `A` given by upper-triangle entries.
pub(crate) fn entry_inner(entries: &[(usize, usize, f64)], x: &DMatrix<f64>) -> f64 {
    entries
        .iter()
        .map(|&(i, j, v)| {
            if i == j {
                v * x[(i, i)]
            } else {
                v * (x[(i, j)] + x[(j, i)])
            }
        })
        .sum()
}

/// Accumulates `M[i][j] += <A_i, L A_j R>` over the rows of one block.
///
/// Columns are computed in parallel and summed in row order, so the result
/// does not depend on thread scheduling.
pub(crate) fn add_schur_block(
    m: &mut DMatrix<f64>,
    block: &BlockRows,
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
) {
    let n = block.size;
    let cols: Vec<Vec<(usize, f64)>> = block
        .rows
        .par_iter()
        .map(|(_, entries_j)| {
            let b = sandwich(left, right, entries_j, n);
            block
                .rows
                .iter()
                .map(|(ri, entries_i)| (*ri, entry_inner(entries_i, &b)))
                .collect()
        })
        .collect();
    for ((rj, _), col) in block.rows.iter().zip(cols) {
        for (ri, v) in col {
            m[(ri, *rj)] += v;
        }
    }
}

/// `L A R` for sparse symmetric `A`.
fn sandwich(
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    entries: &[(usize, usize, f64)],
    n: usize,
) -> DMatrix<f64> {
    if 2 * entries.len() >= n {
        let mut ar = DMatrix::zeros(n, n);
        for &(i, j, v) in entries {
            for c in 0..n {
                ar[(i, c)] += v * right[(j, c)];
            }
            if i != j {
                for c in 0..n {
                    ar[(j, c)] += v * right[(i, c)];
                }
            }
        }
        return left * ar;
    }
    let mut out = DMatrix::zeros(n, n);
    for &(i, j, v) in entries {
        rank_one(&mut out, left, right, i, j, v);
        if i != j {
            rank_one(&mut out, left, right, j, i, v);
        }
    }
    out
}

/// `out += v * L[:, p] * R[q, :]`.
fn rank_one(
    out: &mut DMatrix<f64>,
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    p: usize,
    q: usize,
    v: f64,
) {
    let n = out.nrows();
    let lp = left.column(p);
    for c in 0..n {
        let rv = v * right[(q, c)];
        if rv == 0.0 {
            continue;
        }
        let mut col = out.column_mut(c);
        col.axpy(rv, &lp, 1.0);
    }
}

/// Nesterov-Todd scaling of a primal-dual pair of PD matrices.
///
/// `R^{-1} X R^{-T} = R^T Z R = diag(lambda)`, and `G = R R^T`.
#[derive(Clone, Debug)]
pub(crate) struct NtScaling {
    pub r: DMatrix<f64>,
    pub rinv: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl NtScaling {
    pub fn new(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let l1 = robust_cholesky(x)?;
        let l2 = robust_cholesky(z)?;
        let prod = l2.transpose() * &l1;
        let svd = SVD::new(prod, false, true);
        let v_t = svd.v_t?;
        let sv = svd.singular_values;
        if sv.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return None;
        }
        let v = v_t.transpose();
        let n = x.nrows();
        let mut r = &l1 * &v;
        for c in 0..n {
            let s = 1.0 / sv[c].sqrt();
            r.column_mut(c).scale_mut(s);
        }
        // R^{-1} = diag(sqrt(sv)) V^T L1^{-1}
        let l1_inv = l1.clone().try_inverse()?;
        let mut rinv = v_t * l1_inv;
        for rr in 0..n {
            let s = sv[rr].sqrt();
            rinv.row_mut(rr).scale_mut(s);
        }
        let g = &r * r.transpose();
        Some(Self {
            r,
            rinv,
            g: symmetrize(g),
            lambda: sv,
        })
    }
}

/// Lower Cholesky factor; retries with a tiny diagonal shift.
pub(crate) fn robust_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c.l());
    }
    let scale = a.diagonal().amax().max(1e-300);
    let mut shift = scale * 1e-15;
    for _ in 0..6 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(b) {
            return Some(c.l());
        }
        shift *= 100.0;
    }
    None
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Largest `alpha <= cap` with `diag(lambda) + alpha * d` PSD.
pub(crate) fn max_step_scaled(lambda: &DVector<f64>, d: &DMatrix<f64>, cap: f64) -> f64 {
    let n = lambda.len();
    let mut s = d.clone();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
        }
    }
    let min_eig = min_eigenvalue(&symmetrize(s));
    if min_eig >= 0.0 {
        cap
    } else {
        cap.min(-1.0 / min_eig)
    }
}

/// Largest `alpha <= cap` with `X + alpha * dX` PSD, for PD `X`.
pub(crate) fn max_step_general(x: &DMatrix<f64>, dx: &DMatrix<f64>, cap: f64) -> f64 {
    let Some(l) = robust_cholesky(x) else {
        return 0.0;
    };
    let Some(linv) = l.try_inverse() else {
        return 0.0;
    };
    let s = &linv * dx * linv.transpose();
    let min_eig = min_eigenvalue(&symmetrize(s));
    if min_eig >= 0.0 {
        cap
    } else {
        cap.min(-1.0 / min_eig)
    }
}

pub(crate) fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Factorization of the saddle system `[M A_f; A_f^T 0]`.
///
/// `M` is factored after a symmetric Jacobi scaling to unit diagonal, so any
/// regularizing shift is relative to each row's own magnitude.
pub(crate) struct SchurFactor {
    m: DMatrix<f64>,
    jac: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    af: DMatrix<f64>,
    minv_af: DMatrix<f64>,
    sf: Option<Cholesky<f64, nalgebra::Dyn>>,
}

/// Cholesky with an escalating diagonal shift relative to `scale`.
fn shifted_cholesky(a: &DMatrix<f64>, scale: f64) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let mut reg = scale * 1e-14;
    while reg <= scale * 1e-4 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(b) {
            return Some(c);
        }
        reg *= 10.0;
    }
    None
}

impl SchurFactor {
    pub fn new(m: DMatrix<f64>, af: &DMatrix<f64>) -> Option<Self> {
        let dim = m.nrows();
        let jac = DVector::from_fn(dim, |i, _| {
            let d = m[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        });
        let mut scaled = m.clone();
        for j in 0..dim {
            for i in 0..dim {
                scaled[(i, j)] *= jac[i] * jac[j];
            }
        }
        let chol = shifted_cholesky(&scaled, 1.0)?;
        let mut factor = Self {
            m,
            jac,
            chol,
            af: af.clone(),
            minv_af: DMatrix::zeros(0, 0),
            sf: None,
        };
        factor.minv_af = factor.m_solve_mat(af);
        if af.ncols() > 0 {
            let s = symmetrize(af.transpose() * &factor.minv_af);
            let smax = (0..s.nrows())
                .map(|i| s[(i, i)].abs())
                .fold(0.0f64, f64::max)
                .max(1e-300);
            factor.sf = Some(shifted_cholesky(&s, smax)?);
        }
        Some(factor)
    }

    fn m_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut v = r.component_mul(&self.jac);
        self.chol.solve_mut(&mut v);
        v.component_mul(&self.jac)
    }

    fn m_solve_mat(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut v = r.clone();
        for mut col in v.column_iter_mut() {
            col.component_mul_assign(&self.jac);
        }
        self.chol.solve_mut(&mut v);
        for mut col in v.column_iter_mut() {
            col.component_mul_assign(&self.jac);
        }
        v
    }

    fn solve_once(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let minv_r1 = self.m_solve(r1);
        match &self.sf {
            None => (minv_r1, DVector::zeros(0)),
            Some(sf) => {
                let rhs = self.af.transpose() * &minv_r1 - r2;
                let dxf = sf.solve(&rhs);
                let dy = minv_r1 - &self.minv_af * &dxf;
                (dy, dxf)
            }
        }
    }

    /// Solves `M dy + A_f dxf = r1`, `A_f^T dy = r2` with two refinement steps.
    pub fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dy, mut dxf) = self.solve_once(r1, r2);
        for _ in 0..2 {
            let e1 = r1 - (&self.m * &dy + &self.af * &dxf);
            let e2 = if self.af.ncols() > 0 {
                r2 - self.af.transpose() * &dy
            } else {
                DVector::zeros(0)
            };
            let (cy, cf) = self.solve_once(&e1, &e2);
            dy += cy;
            if self.af.ncols() > 0 {
                dxf += cf;
            }
        }
        (dy, dxf)
    }
}
