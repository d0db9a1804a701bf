//! Homogeneous self-dual embedding with NT scaling and Mehrotra correction.

use nalgebra::{DMatrix, DVector};

use super::linalg::{
    add_schur_block, max_step_scaled, symmetrize, BlockRows, NtScaling, SchurFactor,
};
use super::presolve::{presolve, PresolveOutcome, Presolved};
use super::problem::SdpProblem;
use super::{
    kkt_residuals, ray_violation, InfeasibilityRay, IterationRecord, SdpSolution, SolveStatus,
    SolverSettings,
};

const STEP_FACTOR: f64 = 0.95;

/// Sparse data of the scaled problem in the layout the iterations use.
pub(crate) struct Data {
    pub blocks: Vec<BlockRows>,
    pub c: Vec<DMatrix<f64>>,
    pub cf: DVector<f64>,
    pub b: DVector<f64>,
    pub af: DMatrix<f64>,
    pub m: usize,
}

impl Data {
    pub fn new(p: &SdpProblem) -> Self {
        let m = p.n_rows();
        let blocks = p
            .block_entries
            .iter()
            .zip(&p.block_sizes)
            .map(|(entries, &n)| {
                let mut rows: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
                for e in entries {
                    match rows.last_mut() {
                        Some((r, v)) if *r == e.row => v.push((e.i, e.j, e.val)),
                        _ => rows.push((e.row, vec![(e.i, e.j, e.val)])),
                    }
                }
                BlockRows { size: n, rows }
            })
            .collect();
        let mut af = DMatrix::zeros(m, p.n_free);
        for &(r, c, v) in &p.free_entries {
            af[(r, c)] += v;
        }
        Self {
            blocks,
            c: p.objective_blocks(),
            cf: DVector::from_column_slice(&p.free_objective),
            b: DVector::from_column_slice(&p.rhs),
            af,
            m,
        }
    }

    pub fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, xb) in self.blocks.iter().zip(x) {
            blk.inner(xb, &mut out);
        }
        DVector::from_vec(out)
    }

    pub fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut acc = DMatrix::zeros(blk.size, blk.size);
                blk.adjoint_into(y.as_slice(), &mut acc);
                acc
            })
            .collect()
    }

    pub fn nu(&self) -> f64 {
        self.blocks.iter().map(|b| b.size).sum::<usize>() as f64
    }
}

pub(crate) fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    xf: DVector<f64>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    rdf: DVector<f64>,
    rg: f64,
    mu: f64,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dxf: DVector<f64>,
    dy: DVector<f64>,
    dz: Vec<DMatrix<f64>>,
    dtau: f64,
    dkappa: f64,
}

impl Direction {
    fn zero() -> Self {
        Self {
            dx: Vec::new(),
            dxf: DVector::zeros(0),
            dy: DVector::zeros(0),
            dz: Vec::new(),
            dtau: 0.0,
            dkappa: 0.0,
        }
    }
}

/// Per-iteration factorization shared by predictor and corrector.
struct Newton<'a> {
    data: &'a Data,
    nt: Vec<NtScaling>,
    factor: SchurFactor,
    /// Direction per unit `dtau` with zero residual right-hand side.
    unit: Direction,
    /// `b'dy - <C, dX> - c_f'dxf` of `unit`.
    unit_gap: f64,
}

/// A direction with `dtau = 0` that satisfies the linear rows up to
/// `primal_rhs`, `free_rhs` and `dz = dz_base - A^T dy`.
struct Partial {
    dx: Vec<DMatrix<f64>>,
    dxf: DVector<f64>,
    dy: DVector<f64>,
    dz: Vec<DMatrix<f64>>,
}

impl<'a> Newton<'a> {
    fn new(data: &'a Data, it: &Iterate) -> Option<Self> {
        let nt: Vec<NtScaling> =
            it.x.iter()
                .zip(&it.z)
                .map(|(x, z)| NtScaling::new(x, z))
                .collect::<Option<_>>()?;
        let mut m = DMatrix::zeros(data.m, data.m);
        for (blk, s) in data.blocks.iter().zip(&nt) {
            add_schur_block(&mut m, blk, &s.g, &s.g);
        }
        let m = symmetrize(m);
        let factor = SchurFactor::new(m, &data.af)?;
        let mut newton = Self {
            data,
            nt,
            factor,
            unit: Direction::zero(),
            unit_gap: 0.0,
        };
        // dtau = 1: dZ = C - A^T dy, dX = -G dZ G, A dX + A_f dxf = b, A_f^T dy = c_f.
        let zeros: Vec<DMatrix<f64>> = data.c.iter().map(|c| c * 0.0).collect();
        let p = newton.partial(&zeros, &data.c, &data.b, &data.cf);
        let gap = data.b.dot(&p.dy) - dot(&data.c, &p.dx) - data.cf.dot(&p.dxf);
        if !gap.is_finite() {
            return None;
        }
        newton.unit_gap = gap;
        newton.unit = Direction {
            dx: p.dx,
            dxf: p.dxf,
            dy: p.dy,
            dz: p.dz,
            dtau: 1.0,
            dkappa: 0.0,
        };
        Some(newton)
    }

    /// Solves `dX = w - G dZ G`, `dZ = dz_base - A^T dy`,
    /// `A dX + A_f dxf = primal_rhs`, `A_f^T dy = free_rhs`, then refines the
    /// two linear rows against the directions actually formed, since near the
    /// boundary `dX` loses accuracy to cancellation.
    fn partial(
        &self,
        w: &[DMatrix<f64>],
        dz_base: &[DMatrix<f64>],
        primal_rhs: &DVector<f64>,
        free_rhs: &DVector<f64>,
    ) -> Partial {
        let d = self.data;
        let gzg: Vec<DMatrix<f64>> = self
            .nt
            .iter()
            .zip(dz_base)
            .map(|(s, z)| &s.g * z * &s.g)
            .collect();
        let shifted: Vec<DMatrix<f64>> = w.iter().zip(&gzg).map(|(a, b)| a - b).collect();
        let r1 = primal_rhs - d.apply(&shifted);
        let (mut dy, mut dxf) = self.factor.solve(&r1, free_rhs);
        let aty = d.adjoint(&dy);
        let mut dz: Vec<DMatrix<f64>> = dz_base.iter().zip(&aty).map(|(z, a)| symmetrize(z - a)).collect();
        let mut dx: Vec<DMatrix<f64>> = w
            .iter()
            .zip(&self.nt)
            .zip(&dz)
            .map(|((w, s), dz)| symmetrize(w - &s.g * dz * &s.g))
            .collect();
        for _ in 0..2 {
            let e = primal_rhs - (d.apply(&dx) + &d.af * &dxf);
            let ef = if d.af.ncols() > 0 {
                free_rhs - d.af.transpose() * &dy
            } else {
                DVector::zeros(0)
            };
            let (cy, cf) = self.factor.solve(&e, &ef);
            dy += &cy;
            if d.af.ncols() > 0 {
                dxf += cf;
            }
            for ((a, s), (dz, dx)) in d
                .adjoint(&cy)
                .iter()
                .zip(&self.nt)
                .zip(dz.iter_mut().zip(dx.iter_mut()))
            {
                *dz -= a;
                *dx += symmetrize(&s.g * a * &s.g);
            }
        }
        Partial { dx, dxf, dy, dz }
    }

    fn direction(
        &self,
        it: &Iterate,
        res: &Residuals,
        q: &[DMatrix<f64>],
        eta: f64,
        r_tau: f64,
    ) -> Direction {
        let d = self.data;
        let w: Vec<DMatrix<f64>> = self
            .nt
            .iter()
            .zip(q)
            .map(|(s, q)| &s.r * q * s.r.transpose())
            .collect();
        let dz_base: Vec<DMatrix<f64>> = res.rd.iter().map(|rd| rd * -eta).collect();
        let p = self.partial(&w, &dz_base, &(-&res.rp * eta), &(-&res.rdf * eta));
        // Gap row: b'dy - <C, dX> - c_f'dxf - dkappa = -eta r_g with
        // dkappa = (r_tau - kappa dtau) / tau, solved for dtau on the
        // directions actually formed.
        let g1 = d.b.dot(&p.dy) - dot(&d.c, &p.dx) - d.cf.dot(&p.dxf);
        let dtau = (-eta * res.rg - g1 + r_tau / it.tau) / (self.unit_gap + it.kappa / it.tau);
        let u = &self.unit;
        let dx = p.dx.iter().zip(&u.dx).map(|(a, b)| a + b * dtau).collect();
        let dz = p.dz.iter().zip(&u.dz).map(|(a, b)| a + b * dtau).collect();
        let dkappa = (r_tau - it.kappa * dtau) / it.tau;
        Direction {
            dx,
            dxf: p.dxf + &u.dxf * dtau,
            dy: p.dy + &u.dy * dtau,
            dz,
            dtau,
            dkappa,
        }
    }

    /// Scaled directions `(R^{-1} dX R^{-T}, R^T dZ R)`.
    fn scaled(&self, dir: &Direction) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let dxs = self
            .nt
            .iter()
            .zip(&dir.dx)
            .map(|(s, dx)| symmetrize(&s.rinv * dx * s.rinv.transpose()))
            .collect();
        let dzs = self
            .nt
            .iter()
            .zip(&dir.dz)
            .map(|(s, dz)| symmetrize(s.r.transpose() * dz * &s.r))
            .collect();
        (dxs, dzs)
    }

    fn max_step(
        &self,
        it: &Iterate,
        dir: &Direction,
        dxs: &[DMatrix<f64>],
        dzs: &[DMatrix<f64>],
    ) -> f64 {
        let mut a: f64 = f64::INFINITY;
        for ((s, dx), dz) in self.nt.iter().zip(dxs).zip(dzs) {
            a = a.min(max_step_scaled(&s.lambda, dx, a));
            a = a.min(max_step_scaled(&s.lambda, dz, a));
        }
        if dir.dtau < 0.0 {
            a = a.min(-it.tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            a = a.min(-it.kappa / dir.dkappa);
        }
        a
    }
}

fn residuals(d: &Data, it: &Iterate, nu: f64) -> Residuals {
    let rp = d.apply(&it.x) + &d.af * &it.xf - &d.b * it.tau;
    let aty = d.adjoint(&it.y);
    let rd = aty
        .iter()
        .zip(&it.z)
        .zip(&d.c)
        .map(|((a, z), c)| a + z - c * it.tau)
        .collect();
    let rdf = d.af.transpose() * &it.y - &d.cf * it.tau;
    let rg = d.b.dot(&it.y) - dot(&d.c, &it.x) - d.cf.dot(&it.xf) - it.kappa;
    let mu = (dot(&it.x, &it.z) + it.tau * it.kappa) / (nu + 1.0);
    Residuals {
        rp,
        rd,
        rdf,
        rg,
        mu,
    }
}

pub(crate) fn solve_hsd(problem: &SdpProblem, settings: &SolverSettings) -> SdpSolution {
    let pre = match presolve(problem) {
        PresolveOutcome::Ready(p) => p,
        PresolveOutcome::Infeasible(ray) => return infeasible_from_presolve(problem, ray),
    };
    let data = Data::new(&pre.problem);
    let nu = data.nu();
    let mut it = Iterate {
        x: pre
            .problem
            .block_sizes
            .iter()
            .map(|&n| DMatrix::identity(n, n))
            .collect(),
        xf: DVector::zeros(pre.problem.n_free),
        y: DVector::zeros(data.m),
        z: pre
            .problem
            .block_sizes
            .iter()
            .map(|&n| DMatrix::identity(n, n))
            .collect(),
        tau: 1.0,
        kappa: 1.0,
    };
    let mut log = Vec::new();
    let mut stalls = 0;
    let mut iter = 0;
    loop {
        let res = residuals(&data, &it, nu);
        let sol = Candidate::new(problem, &pre, &it);
        log.push(sol.record(iter, res.mu));
        if sol.converged(settings) {
            return sol.finish(SolveStatus::Optimal, None, iter, log);
        }
        if it.tau <= it.kappa {
            if let Some(ray) = primal_ray(problem, &pre, it.y.as_slice(), settings.tol_infeas) {
                return sol.finish(SolveStatus::PrimalInfeasible, Some(ray), iter, log);
            }
            if let Some(ray) = dual_ray(problem, &pre, &it.x, it.xf.as_slice(), settings.tol_infeas)
            {
                return sol.finish(SolveStatus::DualInfeasible, Some(ray), iter, log);
            }
        }
        if iter >= settings.max_iter {
            return sol.finish(SolveStatus::MaxIter, None, iter, log);
        }
        if stalls >= 5 || !res.mu.is_finite() {
            return sol.finish(SolveStatus::NumericalFailure, None, iter, log);
        }
        let Some(newton) = Newton::new(&data, &it) else {
            return sol.finish(SolveStatus::NumericalFailure, None, iter, log);
        };

        // Predictor.
        let q_aff: Vec<DMatrix<f64>> = newton
            .nt
            .iter()
            .map(|s| DMatrix::from_diagonal(&(-&s.lambda)))
            .collect();
        let aff = newton.direction(&it, &res, &q_aff, 1.0, -it.tau * it.kappa);
        let (dxa, dza) = newton.scaled(&aff);
        let alpha_a = newton.max_step(&it, &aff, &dxa, &dza).min(1.0);
        let mu_aff = {
            let mut s = (it.tau + alpha_a * aff.dtau) * (it.kappa + alpha_a * aff.dkappa);
            for ((nt, dx), dz) in newton.nt.iter().zip(&dxa).zip(&dza) {
                let mut xa = DMatrix::from_diagonal(&nt.lambda);
                let mut za = xa.clone();
                xa += dx * alpha_a;
                za += dz * alpha_a;
                s += xa.dot(&za);
            }
            s / (nu + 1.0)
        };
        let sigma = (mu_aff / res.mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let smu = sigma * res.mu;
        let q: Vec<DMatrix<f64>> = newton
            .nt
            .iter()
            .zip(dxa.iter().zip(&dza))
            .map(|(nt, (dx, dz))| {
                let lam = &nt.lambda;
                let n = lam.len();
                let prod = dx * dz;
                let mut h = -(&prod + prod.transpose()) * 0.5;
                for i in 0..n {
                    h[(i, i)] += smu - lam[i] * lam[i];
                }
                for i in 0..n {
                    for j in 0..n {
                        h[(i, j)] *= 2.0 / (lam[i] + lam[j]);
                    }
                }
                h
            })
            .collect();
        let r_tau = smu - it.tau * it.kappa - aff.dtau * aff.dkappa;
        let dir = newton.direction(&it, &res, &q, 1.0 - sigma, r_tau);
        let (dxs, dzs) = newton.scaled(&dir);
        let alpha = (STEP_FACTOR * newton.max_step(&it, &dir, &dxs, &dzs)).min(1.0);
        if !(alpha.is_finite()) || alpha < 1e-10 {
            stalls += 1;
        } else {
            stalls = 0;
        }
        let alpha = if alpha.is_finite() { alpha } else { 0.0 };

        for (x, d) in it.x.iter_mut().zip(&dir.dx) {
            *x += d * alpha;
        }
        for (z, d) in it.z.iter_mut().zip(&dir.dz) {
            *z += d * alpha;
        }
        it.xf += &dir.dxf * alpha;
        it.y += &dir.dy * alpha;
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
        iter += 1;
    }
}

/// Current iterate mapped to original units.
pub(crate) struct Candidate {
    blocks: Vec<DMatrix<f64>>,
    free: Vec<f64>,
    y: Vec<f64>,
    z: Vec<DMatrix<f64>>,
    pub kkt: super::KktReport,
}

impl Candidate {
    fn new(problem: &SdpProblem, pre: &Presolved, it: &Iterate) -> Self {
        let inv = 1.0 / it.tau;
        let xs: Vec<DMatrix<f64>> = it.x.iter().map(|x| x * inv).collect();
        let zs: Vec<DMatrix<f64>> = it.z.iter().map(|z| z * inv).collect();
        let xf: Vec<f64> = it.xf.iter().map(|v| v * inv).collect();
        let y: Vec<f64> = it.y.iter().map(|v| v * inv).collect();
        Self::from_scaled(problem, pre, &xs, &xf, &y, &zs)
    }

    pub fn from_scaled(
        problem: &SdpProblem,
        pre: &Presolved,
        x: &[DMatrix<f64>],
        xf: &[f64],
        y: &[f64],
        z: &[DMatrix<f64>],
    ) -> Self {
        let (blocks, free) = pre.unscale_primal(x, xf);
        let (y, z) = pre.unscale_dual(y, z);
        let kkt = kkt_residuals(problem, &blocks, &free, &y, &z);
        Self {
            blocks,
            free,
            y,
            z,
            kkt,
        }
    }

    pub fn converged(&self, settings: &SolverSettings) -> bool {
        self.kkt.primal_res <= settings.tol_feas
            && self.kkt.dual_res <= settings.tol_feas
            && self.kkt.gap <= settings.tol_gap
    }

    pub fn record(&self, iter: usize, mu: f64) -> IterationRecord {
        IterationRecord {
            iter,
            mu,
            primal_res: self.kkt.primal_res,
            dual_res: self.kkt.dual_res,
            gap: self.kkt.gap,
        }
    }

    pub fn finish(
        self,
        status: SolveStatus,
        ray: Option<InfeasibilityRay>,
        iterations: usize,
        log: Vec<IterationRecord>,
    ) -> SdpSolution {
        SdpSolution {
            status,
            blocks: self.blocks,
            free: self.free,
            y: self.y,
            dual_blocks: self.z,
            primal_objective: self.kkt.primal_objective,
            dual_objective: self.kkt.dual_objective,
            primal_residual: self.kkt.primal_res,
            dual_residual: self.kkt.dual_res,
            gap: self.kkt.gap,
            iterations,
            ray,
            log,
        }
    }
}

/// Primal infeasibility ray from a scaled dual direction, if it checks out.
pub(crate) fn primal_ray(
    problem: &SdpProblem,
    pre: &Presolved,
    y: &[f64],
    tol: f64,
) -> Option<InfeasibilityRay> {
    let (y, _) = pre.unscale_dual(y, &[]);
    let by = problem.dual_objective(&y);
    if !(by > 0.0) {
        return None;
    }
    let y: Vec<f64> = y.iter().map(|v| v / by).collect();
    let ray = InfeasibilityRay::Primal { y };
    (ray_violation(problem, &ray) <= tol).then_some(ray)
}

/// Dual infeasibility ray from a scaled primal direction, if it checks out.
pub(crate) fn dual_ray(
    problem: &SdpProblem,
    pre: &Presolved,
    x: &[DMatrix<f64>],
    xf: &[f64],
    tol: f64,
) -> Option<InfeasibilityRay> {
    let (blocks, free) = pre.unscale_primal(x, xf);
    let cx = problem.primal_objective(&blocks, &free);
    if !(cx < 0.0) {
        return None;
    }
    let s = -1.0 / cx;
    let ray = InfeasibilityRay::Dual {
        blocks: blocks.iter().map(|x| x * s).collect(),
        free: free.iter().map(|v| v * s).collect(),
    };
    (ray_violation(problem, &ray) <= tol).then_some(ray)
}

pub(crate) fn infeasible_from_presolve(problem: &SdpProblem, ray: InfeasibilityRay) -> SdpSolution {
    let status = match ray {
        InfeasibilityRay::Primal { .. } => SolveStatus::PrimalInfeasible,
        InfeasibilityRay::Dual { .. } => SolveStatus::DualInfeasible,
    };
    let zeros: Vec<DMatrix<f64>> = problem
        .block_sizes
        .iter()
        .map(|&n| DMatrix::zeros(n, n))
        .collect();
    let free = vec![0.0; problem.n_free];
    let y = vec![0.0; problem.n_rows()];
    let kkt = kkt_residuals(problem, &zeros, &free, &y, &zeros);
    SdpSolution {
        status,
        blocks: zeros.clone(),
        free,
        y,
        dual_blocks: zeros,
        primal_objective: kkt.primal_objective,
        dual_objective: kkt.dual_objective,
        primal_residual: kkt.primal_res,
        dual_residual: kkt.dual_res,
        gap: kkt.gap,
        iterations: 0,
        ray: Some(ray),
        log: Vec::new(),
    }
}
