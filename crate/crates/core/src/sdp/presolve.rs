//! Row cleanup and Ruiz equilibration.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::problem::{SdpProblem, SymEntry};
use super::{inf_norm, InfeasibilityRay};

const RUIZ_PASSES: usize = 10;

/// A scaled, row-compacted copy of a problem plus the maps back.
#[derive(Clone, Debug)]
pub(crate) struct Presolved {
    pub problem: SdpProblem,
    /// Compact row -> original row.
    pub row_map: Vec<usize>,
    /// Kept free column -> original free column.
    pub free_map: Vec<usize>,
    pub row_scale: Vec<f64>,
    pub block_scale: Vec<f64>,
    pub free_scale: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    orig_rows: usize,
    orig_free: usize,
}

pub(crate) enum PresolveOutcome {
    Ready(Presolved),
    Infeasible(InfeasibilityRay),
}

pub(crate) fn presolve(p: &SdpProblem) -> PresolveOutcome {
    let m = p.n_rows();
    // Row signatures for zero/duplicate detection.
    let mut sig: Vec<Vec<(usize, usize, usize, u64)>> = vec![Vec::new(); m];
    for (b, entries) in p.block_entries.iter().enumerate() {
        for e in entries {
            sig[e.row].push((b, e.i, e.j, e.val.to_bits()));
        }
    }
    let nb = p.n_blocks();
    for &(r, c, v) in &p.free_entries {
        sig[r].push((nb, c, 0, v.to_bits()));
    }
    for s in &mut sig {
        s.sort_unstable();
    }
    let mut seen: HashMap<&[(usize, usize, usize, u64)], usize> = HashMap::new();
    let mut keep = Vec::new();
    for r in 0..m {
        if sig[r].is_empty() {
            if p.rhs[r] != 0.0 {
                let mut y = vec![0.0; m];
                y[r] = 1.0 / p.rhs[r];
                return PresolveOutcome::Infeasible(InfeasibilityRay::Primal { y });
            }
            continue;
        }
        match seen.get(sig[r].as_slice()) {
            Some(&first) => {
                let diff = p.rhs[r] - p.rhs[first];
                if diff != 0.0 {
                    let mut y = vec![0.0; m];
                    y[r] = 1.0 / diff;
                    y[first] = -1.0 / diff;
                    return PresolveOutcome::Infeasible(InfeasibilityRay::Primal { y });
                }
            }
            None => {
                seen.insert(sig[r].as_slice(), r);
                keep.push(r);
            }
        }
    }

    // Free columns that appear in no kept row.
    let mut col_used = vec![false; p.n_free];
    let mut row_new = vec![usize::MAX; m];
    for (k, &r) in keep.iter().enumerate() {
        row_new[r] = k;
    }
    for &(r, c, _) in &p.free_entries {
        if row_new[r] != usize::MAX {
            col_used[c] = true;
        }
    }
    for c in 0..p.n_free {
        if !col_used[c] && p.free_objective[c] != 0.0 {
            let mut free = vec![0.0; p.n_free];
            free[c] = -1.0 / p.free_objective[c];
            let blocks = p
                .block_sizes
                .iter()
                .map(|&n| DMatrix::zeros(n, n))
                .collect();
            return PresolveOutcome::Infeasible(InfeasibilityRay::Dual { blocks, free });
        }
    }
    let free_map: Vec<usize> = (0..p.n_free).filter(|&c| col_used[c]).collect();
    let mut col_new = vec![usize::MAX; p.n_free];
    for (k, &c) in free_map.iter().enumerate() {
        col_new[c] = k;
    }

    let mut q = SdpProblem {
        block_sizes: p.block_sizes.clone(),
        n_free: free_map.len(),
        rhs: keep.iter().map(|&r| p.rhs[r]).collect(),
        block_entries: p
            .block_entries
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .filter(|e| row_new[e.row] != usize::MAX)
                    .map(|e| SymEntry {
                        row: row_new[e.row],
                        ..*e
                    })
                    .collect()
            })
            .collect(),
        free_entries: p
            .free_entries
            .iter()
            .filter(|e| row_new[e.0] != usize::MAX)
            .map(|&(r, c, v)| (row_new[r], col_new[c], v))
            .collect(),
        block_objective: p.block_objective.clone(),
        free_objective: free_map.iter().map(|&c| p.free_objective[c]).collect(),
    };

    let mk = q.n_rows();
    let mut row_scale = vec![1.0; mk];
    let mut block_scale = vec![1.0; nb];
    let mut free_scale = vec![1.0; q.n_free];
    for _ in 0..RUIZ_PASSES {
        let mut rn = vec![0.0f64; mk];
        let mut bn = vec![0.0f64; nb];
        let mut fnorm = vec![0.0f64; q.n_free];
        for (b, entries) in q.block_entries.iter().enumerate() {
            for e in entries {
                let a = (e.val * row_scale[e.row] * block_scale[b]).abs();
                rn[e.row] = rn[e.row].max(a);
                bn[b] = bn[b].max(a);
            }
        }
        for &(r, c, v) in &q.free_entries {
            let a = (v * row_scale[r] * free_scale[c]).abs();
            rn[r] = rn[r].max(a);
            fnorm[c] = fnorm[c].max(a);
        }
        let mut change: f64 = 0.0;
        for (s, n) in row_scale.iter_mut().zip(&rn) {
            if *n > 0.0 {
                *s /= n.sqrt();
                change = change.max((1.0 - n).abs());
            }
        }
        for (s, n) in block_scale.iter_mut().zip(&bn) {
            if *n > 0.0 {
                *s /= n.sqrt();
                change = change.max((1.0 - n).abs());
            }
        }
        for (s, n) in free_scale.iter_mut().zip(&fnorm) {
            if *n > 0.0 {
                *s /= n.sqrt();
                change = change.max((1.0 - n).abs());
            }
        }
        if change < 1e-3 {
            break;
        }
    }

    for (b, entries) in q.block_entries.iter_mut().enumerate() {
        for e in entries {
            e.val *= row_scale[e.row] * block_scale[b];
        }
    }
    for e in &mut q.free_entries {
        e.2 *= row_scale[e.0] * free_scale[e.1];
    }
    for (v, s) in q.rhs.iter_mut().zip(&row_scale) {
        *v *= s;
    }
    for (b, entries) in q.block_objective.iter_mut().enumerate() {
        for e in entries {
            e.val *= block_scale[b];
        }
    }
    for (v, s) in q.free_objective.iter_mut().zip(&free_scale) {
        *v *= s;
    }
    let beta = inf_norm(&q.rhs).max(1.0);
    let c_max = q
        .block_objective
        .iter()
        .flatten()
        .map(|e| e.val.abs())
        .chain(q.free_objective.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let gamma = c_max.max(1.0);
    q.rhs.iter_mut().for_each(|v| *v /= beta);
    q.block_objective
        .iter_mut()
        .flatten()
        .for_each(|e| e.val /= gamma);
    q.free_objective.iter_mut().for_each(|v| *v /= gamma);

    PresolveOutcome::Ready(Presolved {
        problem: q,
        row_map: keep,
        free_map,
        row_scale,
        block_scale,
        free_scale,
        beta,
        gamma,
        orig_rows: m,
        orig_free: p.n_free,
    })
}

impl Presolved {
    /// Maps a scaled primal point back to original units.
    pub fn unscale_primal(
        &self,
        blocks: &[DMatrix<f64>],
        free: &[f64],
    ) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let x = blocks
            .iter()
            .zip(&self.block_scale)
            .map(|(x, s)| x * (s * self.beta))
            .collect();
        let mut f = vec![0.0; self.orig_free];
        for (k, &c) in self.free_map.iter().enumerate() {
            f[c] = free[k] * self.free_scale[k] * self.beta;
        }
        (x, f)
    }

    /// Maps a scaled dual point back to original units.
    pub fn unscale_dual(&self, y: &[f64], z: &[DMatrix<f64>]) -> (Vec<f64>, Vec<DMatrix<f64>>) {
        let mut yo = vec![0.0; self.orig_rows];
        for (k, &r) in self.row_map.iter().enumerate() {
            yo[r] = y[k] * self.row_scale[k] * self.gamma;
        }
        let zo = z
            .iter()
            .zip(&self.block_scale)
            .map(|(z, s)| z * (self.gamma / s))
            .collect();
        (yo, zo)
    }
}

#[cfg(test)]
mod tests {
    use super::super::SdpBuilder;
    use super::*;

    #[test]
    fn drops_zero_and_duplicate_rows() {
        let mut b = SdpBuilder::new();
        let blk = b.add_block(1);
        let r0 = b.add_row(2.0);
        let _r1 = b.add_row(0.0);
        let r2 = b.add_row(2.0);
        b.block_coeff(r0, blk, 0, 0, 4.0);
        b.block_coeff(r2, blk, 0, 0, 4.0);
        match presolve(&b.build()) {
            PresolveOutcome::Ready(p) => {
                assert_eq!(p.row_map, vec![0]);
                // entry scaled to unit size
                let e = p.problem.block_entries[0][0].val;
                assert!((e - 1.0).abs() < 1e-12);
            }
            PresolveOutcome::Infeasible(_) => panic!("feasible rows"),
        }
    }

    #[test]
    fn conflicting_duplicates_give_a_ray() {
        let mut b = SdpBuilder::new();
        let blk = b.add_block(1);
        let r0 = b.add_row(1.0);
        let r1 = b.add_row(3.0);
        b.block_coeff(r0, blk, 0, 0, 1.0);
        b.block_coeff(r1, blk, 0, 0, 1.0);
        let p = b.build();
        match presolve(&p) {
            PresolveOutcome::Infeasible(ray) => {
                assert!(super::super::ray_violation(&p, &ray) < 1e-12)
            }
            PresolveOutcome::Ready(_) => panic!("should be infeasible"),
        }
    }
}
