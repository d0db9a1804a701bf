use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SdpError;

/// One coefficient of a symmetric constraint or objective matrix.
///
/// Stands for both `A[i][j]` and `A[j][i]`; only `i <= j` is stored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymEntry {
    pub row: usize,
    pub i: usize,
    pub j: usize,
    pub val: f64,
}

/// Linear conic program in standard primal form:
///
/// ```text
/// minimize   sum_b <C_b, X_b> + c_f . x_f
/// subject to sum_b <A_{r,b}, X_b> + a_{r,f} . x_f = b_r   for every row r
///            X_b positive semidefinite, x_f free
/// ```
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    pub n_free: usize,
    pub rhs: Vec<f64>,
    /// Constraint coefficients per PSD block (`row` is the constraint index).
    pub block_entries: Vec<Vec<SymEntry>>,
    /// Constraint coefficients of free variables as `(row, col, val)`.
    pub free_entries: Vec<(usize, usize, f64)>,
    /// Objective matrix entries per block (`row` unused).
    pub block_objective: Vec<Vec<SymEntry>>,
    pub free_objective: Vec<f64>,
}

impl SdpProblem {
    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    /// Barrier degree: total side length of all PSD blocks.
    pub fn cone_degree(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let m = self.n_rows();
        let nb = self.n_blocks();
        if self.block_entries.len() != nb || self.block_objective.len() != nb {
            return Err(SdpError::Malformed("block data length mismatch".into()));
        }
        if self.free_objective.len() != self.n_free {
            return Err(SdpError::Malformed("free objective length mismatch".into()));
        }
        if self.rhs.iter().any(|v| !v.is_finite())
            || self.free_objective.iter().any(|v| !v.is_finite())
        {
            return Err(SdpError::Malformed("non-finite data".into()));
        }
        for (b, entries) in self.block_entries.iter().enumerate() {
            let n = self.block_sizes[b];
            for e in entries {
                if e.row >= m || e.i > e.j || e.j >= n || !e.val.is_finite() {
                    return Err(SdpError::Malformed(format!("bad entry {e:?} in block {b}")));
                }
            }
            for e in &self.block_objective[b] {
                if e.i > e.j || e.j >= n || !e.val.is_finite() {
                    return Err(SdpError::Malformed(format!(
                        "bad objective entry in block {b}"
                    )));
                }
            }
        }
        for &(r, c, v) in &self.free_entries {
            if r >= m || c >= self.n_free || !v.is_finite() {
                return Err(SdpError::Malformed(format!("bad free entry ({r},{c})")));
            }
        }
        Ok(())
    }

    /// `A(X) + A_f x_f`.
    pub fn apply(&self, blocks: &[DMatrix<f64>], free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for (b, entries) in self.block_entries.iter().enumerate() {
            let x = &blocks[b];
            for e in entries {
                let w = if e.i == e.j { 1.0 } else { 2.0 };
                out[e.row] += w * e.val * x[(e.i, e.j)];
            }
        }
        for &(r, c, v) in &self.free_entries {
            out[r] += v * free[c];
        }
        out
    }

    /// Adjoint: per-block `sum_r y_r A_{r,b}` and free part `A_f^T y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let blocks = self
            .block_entries
            .iter()
            .zip(&self.block_sizes)
            .map(|(entries, &n)| {
                let mut m = DMatrix::zeros(n, n);
                for e in entries {
                    let v = y[e.row] * e.val;
                    m[(e.i, e.j)] += v;
                    if e.i != e.j {
                        m[(e.j, e.i)] += v;
                    }
                }
                m
            })
            .collect();
        let mut free = vec![0.0; self.n_free];
        for &(r, c, v) in &self.free_entries {
            free[c] += v * y[r];
        }
        (blocks, free)
    }

    /// Objective matrices as dense blocks.
    pub fn objective_blocks(&self) -> Vec<DMatrix<f64>> {
        self.block_objective
            .iter()
            .zip(&self.block_sizes)
            .map(|(entries, &n)| sym_from_entries(n, entries))
            .collect()
    }

    pub fn primal_objective(&self, blocks: &[DMatrix<f64>], free: &[f64]) -> f64 {
        let mut v: f64 = self
            .block_objective
            .iter()
            .zip(blocks)
            .map(|(entries, x)| {
                entries
                    .iter()
                    .map(|e| {
                        if e.i == e.j {
                            e.val * x[(e.i, e.i)]
                        } else {
                            2.0 * e.val * x[(e.i, e.j)]
                        }
                    })
                    .sum::<f64>()
            })
            .sum();
        v += self
            .free_objective
            .iter()
            .zip(free)
            .map(|(c, x)| c * x)
            .sum::<f64>();
        v
    }

    pub fn dual_objective(&self, y: &[f64]) -> f64 {
        self.rhs.iter().zip(y).map(|(b, y)| b * y).sum()
    }

    /// Returns the problem with the right-hand side multiplied by `k`.
    pub fn with_scaled_rhs(&self, k: f64) -> SdpProblem {
        let mut out = self.clone();
        out.rhs.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Returns the problem with the objective multiplied by `k`.
    pub fn with_scaled_objective(&self, k: f64) -> SdpProblem {
        let mut out = self.clone();
        out.free_objective.iter_mut().for_each(|v| *v *= k);
        for blk in &mut out.block_objective {
            blk.iter_mut().for_each(|e| e.val *= k);
        }
        out
    }
}

pub(crate) fn sym_from_entries(n: usize, entries: &[SymEntry]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for e in entries {
        m[(e.i, e.j)] += e.val;
        if e.i != e.j {
            m[(e.j, e.i)] += e.val;
        }
    }
    m
}

/// Incremental construction of an [`SdpProblem`].
#[derive(Clone, Debug, Default)]
pub struct SdpBuilder {
    problem: SdpProblem,
}

impl SdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares `count` free variables and returns the index of the first.
    pub fn add_free(&mut self, count: usize) -> usize {
        let first = self.problem.n_free;
        self.problem.n_free += count;
        self.problem.free_objective.resize(self.problem.n_free, 0.0);
        first
    }

    /// Declares a PSD block of side `size` and returns its index.
    pub fn add_block(&mut self, size: usize) -> usize {
        self.problem.block_sizes.push(size);
        self.problem.block_entries.push(Vec::new());
        self.problem.block_objective.push(Vec::new());
        self.problem.block_sizes.len() - 1
    }

    /// Adds a constraint row with right-hand side `rhs`.
    pub fn add_row(&mut self, rhs: f64) -> usize {
        self.problem.rhs.push(rhs);
        self.problem.rhs.len() - 1
    }

    pub fn add_to_rhs(&mut self, row: usize, v: f64) {
        self.problem.rhs[row] += v;
    }

    /// Adds `val` to the symmetric coefficient `(i, j)` of block `block` in `row`.
    pub fn block_coeff(&mut self, row: usize, block: usize, i: usize, j: usize, val: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.problem.block_entries[block].push(SymEntry { row, i, j, val });
    }

    pub fn free_coeff(&mut self, row: usize, col: usize, val: f64) {
        self.problem.free_entries.push((row, col, val));
    }

    pub fn free_objective(&mut self, col: usize, val: f64) {
        self.problem.free_objective[col] += val;
    }

    pub fn block_objective(&mut self, block: usize, i: usize, j: usize, val: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.problem.block_objective[block].push(SymEntry { row: 0, i, j, val });
    }

    pub fn n_rows(&self) -> usize {
        self.problem.n_rows()
    }

    /// Finalizes: merges duplicate coefficients and sorts entries.
    pub fn build(mut self) -> SdpProblem {
        for entries in self.problem.block_entries.iter_mut() {
            merge_entries(entries);
        }
        for entries in self.problem.block_objective.iter_mut() {
            merge_entries(entries);
        }
        let fe = &mut self.problem.free_entries;
        fe.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(fe.len());
        for &(r, c, v) in fe.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        *fe = merged;
        self.problem
    }
}

fn merge_entries(entries: &mut Vec<SymEntry>) {
    entries.sort_by(|a, b| (a.row, a.i, a.j).cmp(&(b.row, b.i, b.j)));
    let mut merged: Vec<SymEntry> = Vec::with_capacity(entries.len());
    for e in entries.iter() {
        match merged.last_mut() {
            Some(last) if last.row == e.row && last.i == e.i && last.j == e.j => last.val += e.val,
            _ => merged.push(*e),
        }
    }
    merged.retain(|e| e.val != 0.0);
    *entries = merged;
}

/// Scaled upper-triangle vectorization: off-diagonal entries carry a
/// factor of `sqrt(2)` so that `svec(A) . svec(B) = <A, B>`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    let r2 = std::f64::consts::SQRT_2;
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { r2 * m[(i, j)] });
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> DMatrix<f64> {
    let n = ((((8 * v.len() + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    assert_eq!(n * (n + 1) / 2, v.len(), "length is not triangular");
    let mut m = DMatrix::zeros(n, n);
    let r2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let val = if i == j { v[k] } else { v[k] / r2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_preserves_inner_products() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 1.0, 3.0, 0.5, -1.0, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.0, -2.0, 1.0, 4.0, 0.0, 4.0, 2.0]);
        let ip: f64 = a.component_mul(&b).sum();
        let sv: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((ip - sv).abs() < 1e-12);
        assert_eq!(smat(&svec(&a)), a);
    }

    #[test]
    fn adjoint_matches_apply() {
        let mut bld = SdpBuilder::new();
        let blk = bld.add_block(2);
        let f = bld.add_free(1);
        let r0 = bld.add_row(1.0);
        let r1 = bld.add_row(0.0);
        bld.block_coeff(r0, blk, 0, 1, 1.5);
        bld.block_coeff(r1, blk, 1, 1, -1.0);
        bld.free_coeff(r1, f, 2.0);
        let p = bld.build();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let ax = p.apply(std::slice::from_ref(&x), &[0.7]);
        let y = [0.4, -1.1];
        let (aty, atf) = p.apply_adjoint(&y);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs = aty[0].component_mul(&x).sum() + atf[0] * 0.7;
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
