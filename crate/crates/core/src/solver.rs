//! Solver for the discrete regularized problem: minimize
//! `½uᵀPu − Fᵀu + J_ε(u)` subject to `(u·n)(P_i) ≤ g` at the contact nodes,
//! through its first-order system.
//!
//! Each contact node is rotated into normal/tangential coordinates so the
//! constraints become upper bounds; all coordinates that neither carry a bound
//! nor enter `J_ε` are condensed out. The small remaining system is solved by a
//! semismooth Newton (primal–dual active set) method with backtracking on the
//! natural residual, with a projected Newton method on the energy as fallback.

use crate::geometry::Vec2;
use crate::mesh::{constraint_node_set, BoundaryMesh, ConstraintNode, DofMap};
use crate::regularization::{ContactQuadrature, RegularizedLaw};
use crate::steklov::{LoadFunctional, SteklovOperator};
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::io::Write;

/// `J(x) = Σ_q w_q S(c_qᵀ x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPoint {
    pub weight: f64,
    pub coeffs: Vec<(usize, f64)>,
}

/// `min ½xᵀPx − fᵀx + Σ_q w_q S(c_qᵀx)` subject to `x_k ≤ g_k`.
#[derive(Debug, Clone)]
pub struct BoundProblem {
    pub p: DMatrix<f64>,
    pub f: DVector<f64>,
    pub points: Vec<PotentialPoint>,
    pub bounds: Vec<Option<f64>>,
}

impl BoundProblem {
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    fn trace(&self, q: usize, x: &DVector<f64>) -> f64 {
        self.points[q].coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    pub fn energy(&self, x: &DVector<f64>, law: &RegularizedLaw) -> f64 {
        let j: f64 = (0..self.points.len())
            .map(|q| self.points[q].weight * law.value(self.trace(q, x)))
            .sum();
        0.5 * x.dot(&(&self.p * x)) - self.f.dot(x) + j
    }

    /// `∇J(x)`.
    pub fn potential_gradient(&self, x: &DVector<f64>, law: &RegularizedLaw) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for (q, pt) in self.points.iter().enumerate() {
            let sx = law.deriv(self.trace(q, x));
            for &(i, c) in &pt.coeffs {
                g[i] += pt.weight * sx * c;
            }
        }
        g
    }

    pub fn gradient(&self, x: &DVector<f64>, law: &RegularizedLaw) -> DVector<f64> {
        &self.p * x - &self.f + self.potential_gradient(x, law)
    }

    pub fn hessian(&self, x: &DVector<f64>, law: &RegularizedLaw) -> DMatrix<f64> {
        let mut h = self.p.clone();
        for (q, pt) in self.points.iter().enumerate() {
            let sxx = law.eval(self.trace(q, x)).2;
            if sxx == 0.0 {
                continue;
            }
            let ws = pt.weight * sxx;
            for &(i, ci) in &pt.coeffs {
                for &(j, cj) in &pt.coeffs {
                    h[(i, j)] += ws * (ci * cj);
                }
            }
        }
        h
    }

    /// Multipliers `μ_k = −r_k` on coordinates at their bound, zero elsewhere.
    pub fn multipliers(&self, x: &DVector<f64>, law: &RegularizedLaw, active: &[bool]) -> DVector<f64> {
        let r = self.gradient(x, law);
        DVector::from_fn(self.dim(), |k, _| if active[k] { -r[k] } else { 0.0 })
    }

    /// Max of relative stationarity, feasibility, sign and complementarity residuals.
    pub fn kkt_residual(&self, x: &DVector<f64>, mu: &DVector<f64>, law: &RegularizedLaw) -> f64 {
        let px = &self.p * x;
        let dj = self.potential_gradient(x, law);
        let scale = self.f.amax().max(px.amax()).max(dj.amax());
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let stat = (px - &self.f + dj + mu).amax() / scale;
        let mut feas: f64 = 0.0;
        let mut sign: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for k in 0..self.dim() {
            match self.bounds[k] {
                Some(g) => {
                    feas = feas.max(x[k] - g);
                    sign = sign.max(-mu[k] / scale);
                    comp = comp.max((mu[k] * (x[k] - g)).abs() / scale);
                }
                None => sign = sign.max(mu[k].abs() / scale),
            }
        }
        stat.max(feas).max(sign).max(comp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Solve at ε = 1e−2, 1e−3 first when no initial guess is given.
    pub continuation: bool,
    /// Newton steps without merit decrease before switching to the fallback.
    pub stall_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            continuation: true,
            stall_limit: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct BoundSolution {
    pub x: DVector<f64>,
    pub mu: DVector<f64>,
    pub active: Vec<bool>,
    pub iterations: usize,
    pub residual: f64,
    pub trace: Vec<TraceRow>,
    pub used_fallback: bool,
}

/// Natural residual `max(x_k − g_k, r_k / c_k)` on bounded, `r_k / c_k` on free coordinates.
fn natural_residual(prob: &BoundProblem, x: &DVector<f64>, r: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(prob.dim(), |k, _| match prob.bounds[k] {
        Some(g) => (x[k] - g).max(r[k] / c[k]),
        None => r[k] / c[k],
    })
}

fn solve_symmetric(h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Some(ch.solve(rhs));
    }
    h.lu().solve(rhs)
}

/// Semismooth Newton with a projected-Newton fallback, from `x0`.
pub fn solve_bound_problem(
    prob: &BoundProblem,
    law: &RegularizedLaw,
    opts: &SolverOptions,
    x0: &DVector<f64>,
) -> Result<BoundSolution> {
    let n = prob.dim();
    let c = DVector::from_fn(n, |k, _| prob.p[(k, k)].abs().max(1e-300));
    let mut x = x0.clone();
    for k in 0..n {
        if let Some(g) = prob.bounds[k] {
            x[k] = x[k].min(g);
        }
    }
    let mut trace = Vec::new();
    let mut stall = 0;
    let mut used_fallback = false;
    for it in 0..opts.max_iter {
        let r = prob.gradient(&x, law);
        let active: Vec<bool> = (0..n)
            .map(|k| prob.bounds[k].is_some_and(|g| c[k] * (x[k] - g) - r[k] >= 0.0 && x[k] >= g))
            .collect();
        let mu = DVector::from_fn(n, |k, _| if active[k] { -r[k] } else { 0.0 });
        let kkt = prob.kkt_residual(&x, &mu, law);
        let n_active = active.iter().filter(|&&a| a).count();
        trace.push(TraceRow { iteration: it, residual: kkt, active: n_active });
        if kkt <= opts.tol {
            return Ok(BoundSolution { x, mu, active, iterations: it, residual: kkt, trace, used_fallback });
        }
        if stall >= opts.stall_limit {
            used_fallback = true;
            stall = 0;
            x = projected_newton_step(prob, law, &x);
            continue;
        }
        let h = prob.hessian(&x, law);
        // semismooth Newton direction
        let set: Vec<bool> = (0..n)
            .map(|k| prob.bounds[k].is_some_and(|g| x[k] - g >= r[k] / c[k]))
            .collect();
        let inactive: Vec<usize> = (0..n).filter(|&k| !set[k]).collect();
        let mut d = DVector::zeros(n);
        for k in 0..n {
            if set[k] {
                d[k] = prob.bounds[k].unwrap() - x[k];
            }
        }
        if !inactive.is_empty() {
            let hd = &h * &d;
            let rhs = DVector::from_iterator(inactive.len(), inactive.iter().map(|&k| -r[k] - hd[k]));
            let hii = h.select_rows(inactive.iter()).select_columns(inactive.iter());
            match solve_symmetric(hii, &rhs) {
                Some(sol) => {
                    for (i, &k) in inactive.iter().enumerate() {
                        d[k] = sol[i];
                    }
                }
                None => {
                    stall = opts.stall_limit;
                    continue;
                }
            }
        }
        let merit = |x: &DVector<f64>| natural_residual(prob, x, &prob.gradient(x, law), &c).norm();
        let m0 = merit(&x);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &x + &d * alpha;
            if merit(&trial) <= (1.0 - 1e-4 * alpha) * m0 {
                x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if accepted && alpha == 1.0 {
            stall = 0;
        } else if accepted {
            stall += 1;
        } else {
            stall = opts.stall_limit;
        }
    }
    let r = prob.gradient(&x, law);
    let residual = trace.last().map(|t| t.residual).unwrap_or(f64::NAN);
    let _ = r;
    Err(Error::NonConvergence { iterations: opts.max_iter, residual })
}

/// One projected Newton step on the energy (Bertsekas), Armijo along the projection arc.
fn projected_newton_step(prob: &BoundProblem, law: &RegularizedLaw, x: &DVector<f64>) -> DVector<f64> {
    let n = prob.dim();
    let r = prob.gradient(x, law);
    let rnorm = r.amax();
    let project = |v: &DVector<f64>| {
        DVector::from_fn(n, |k, _| match prob.bounds[k] {
            Some(g) => v[k].min(g),
            None => v[k],
        })
    };
    // binding: at (or very near) the bound with the gradient pushing outward
    let near = |k: usize| {
        prob.bounds[k].is_some_and(|g| x[k] >= g - 1e-12f64.max(1e-3 * rnorm) && r[k] < 0.0)
    };
    let free: Vec<usize> = (0..n).filter(|&k| !near(k)).collect();
    let h = prob.hessian(x, law);
    let mut d = DVector::from_fn(n, |k, _| if near(k) { -r[k] / h[(k, k)].abs().max(1e-300) } else { 0.0 });
    if !free.is_empty() {
        let mut hff = h.select_rows(free.iter()).select_columns(free.iter());
        let rf = DVector::from_iterator(free.len(), free.iter().map(|&k| -r[k]));
        let mut shift = 0.0;
        let diag_scale = (0..free.len()).map(|i| hff[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let sol = loop {
            if let Some(ch) = Cholesky::new(hff.clone()) {
                break ch.solve(&rf);
            }
            let new_shift: f64 = if shift == 0.0 { 1e-8 * diag_scale } else { shift * 10.0 };
            for i in 0..free.len() {
                hff[(i, i)] += new_shift - shift;
            }
            shift = new_shift;
        };
        for (i, &k) in free.iter().enumerate() {
            d[k] = sol[i];
        }
    }
    let e0 = prob.energy(x, law);
    let mut alpha = 1.0;
    for _ in 0..60 {
        let trial = project(&(x + &d * alpha));
        let step = &trial - x;
        if prob.energy(&trial, law) <= e0 + 1e-4 * r.dot(&step) {
            return trial;
        }
        alpha *= 0.5;
    }
    // gradient projection fallback with a tiny step
    project(&(x - &r * (1e-3 / h.diagonal().amax().max(1e-300))))
}

/// Solves with ε-continuation (1e−2 → 1e−3 → target) when requested.
pub fn solve_with_continuation(
    prob: &BoundProblem,
    law: &RegularizedLaw,
    opts: &SolverOptions,
    x0: Option<&DVector<f64>>,
) -> Result<BoundSolution> {
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(prob.dim()));
    let mut stages = Vec::new();
    if opts.continuation && x0.is_none() {
        for eps in [1e-2, 1e-3] {
            if eps > law.eps {
                stages.push(eps);
            }
        }
    }
    let mut total = 0;
    let mut trace = Vec::new();
    let mut fallback = false;
    for eps in stages {
        let stage = solve_bound_problem(prob, &law.with_eps(eps)?, opts, &x)?;
        total += stage.iterations;
        fallback |= stage.used_fallback;
        trace.extend(stage.trace);
        x = stage.x;
    }
    let mut sol = solve_bound_problem(prob, law, opts, &x)?;
    sol.iterations += total;
    sol.used_fallback |= fallback;
    trace.extend(sol.trace);
    for (i, t) in trace.iter_mut().enumerate() {
        t.iteration = i;
    }
    sol.trace = trace;
    Ok(sol)
}

/// Writes the solver trace as CSV `iteration, residual, active`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "residual", "active"])?;
    for t in trace {
        w.write_record([t.iteration.to_string(), format!("{:e}", t.residual), t.active.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Contact constraints of a mesh: constraint nodes, their outward normals
/// and the gap, plus the contact quadrature for `J_ε`.
#[derive(Debug, Clone)]
pub struct ContactSetup {
    pub nodes: Vec<ConstraintNode>,
    pub normals: Vec<Vec2>,
    pub gap: f64,
    pub quadrature: ContactQuadrature,
}

impl ContactSetup {
    pub fn new(mesh: &BoundaryMesh, dofs: &DofMap, gap: f64, quad_extra: usize) -> Self {
        let nodes = constraint_node_set(mesh, dofs);
        let normals = nodes.iter().map(|n| mesh.panel(n.element).normal()).collect();
        Self {
            nodes,
            normals,
            gap,
            quadrature: ContactQuadrature::new(mesh, dofs, quad_extra),
        }
    }
}

/// Solution of the discrete regularized problem on the reduced dofs.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub u: DVector<f64>,
    pub u_full: DVector<f64>,
    /// Per constraint node: at its bound.
    pub active: Vec<bool>,
    /// Per constraint node, `μ_i ≥ 0`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub trace: Vec<TraceRow>,
    pub used_fallback: bool,
}

/// The BEM problem in rotated coordinates `u = Qξ`.
struct Rotated {
    prob: BoundProblem,
    /// Per constraint node: reduced indices `(normal, tangential)` (or `None` on Γ̄_D).
    node_coords: Vec<Option<(usize, usize)>>,
    rot: Vec<(usize, usize, Vec2, Vec2)>,
}

fn rotate(op: &SteklovOperator, load: &LoadFunctional, setup: &ContactSetup, dofs: &DofMap) -> Result<Rotated> {
    let n = op.n_reduced();
    let mut p = op.p.clone();
    let mut f = load.f.clone();
    let mut bounds = vec![None; n];
    let mut rot = Vec::new();
    let mut node_coords = Vec::with_capacity(setup.nodes.len());
    let mut coord_map: Vec<Option<(usize, f64, usize, f64)>> = vec![None; n];
    for (node, normal) in setup.nodes.iter().zip(&setup.normals) {
        let ix = dofs.reduced_of_full[2 * node.node];
        let iy = dofs.reduced_of_full[2 * node.node + 1];
        let (Some(ix), Some(iy)) = (ix, iy) else {
            if setup.gap < 0.0 {
                return Err(Error::InvalidInput("clamped contact node violates a negative gap".into()));
            }
            node_coords.push(None);
            continue;
        };
        let t = Vec2::new(-normal.y, normal.x);
        // u_x = n_x ξ_n + t_x ξ_t, u_y = n_y ξ_n + t_y ξ_t; ξ stored at (ix, iy)
        let b = nalgebra::Matrix2::new(normal.x, t.x, normal.y, t.y);
        let cols = p.select_columns([ix, iy].iter()) * b;
        p.set_column(ix, &cols.column(0));
        p.set_column(iy, &cols.column(1));
        let rows = b.transpose() * p.select_rows([ix, iy].iter());
        p.set_row(ix, &rows.row(0));
        p.set_row(iy, &rows.row(1));
        let (fx, fy) = (f[ix], f[iy]);
        f[ix] = normal.x * fx + normal.y * fy;
        f[iy] = t.x * fx + t.y * fy;
        bounds[ix] = Some(setup.gap);
        coord_map[ix] = Some((ix, normal.x, iy, t.x));
        coord_map[iy] = Some((ix, normal.y, iy, t.y));
        node_coords.push(Some((ix, iy)));
        rot.push((ix, iy, *normal, t));
    }
    let p = (&p + p.transpose()) * 0.5;
    // potential coefficients c' = Qᵀc on reduced coordinates
    let points = setup
        .quadrature
        .points
        .iter()
        .map(|pt| {
            let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
            for &(full, c) in &pt.coeffs {
                let Some(red) = dofs.reduced_of_full[full] else { continue };
                match coord_map[red] {
                    Some((ixn, cn, ixt, ct)) => {
                        *acc.entry(ixn).or_default() += c * cn;
                        *acc.entry(ixt).or_default() += c * ct;
                    }
                    None => *acc.entry(red).or_default() += c,
                }
            }
            PotentialPoint {
                weight: pt.weight,
                coeffs: acc.into_iter().filter(|&(_, v)| v.abs() > 1e-15).collect(),
            }
        })
        .collect();
    Ok(Rotated {
        prob: BoundProblem { p, f, points, bounds },
        node_coords,
        rot,
    })
}

/// Static condensation onto the coordinates that carry bounds or enter `J`.
pub struct Condensed {
    pub small: BoundProblem,
    keep: Vec<usize>,
    other: Vec<usize>,
    chol_oo: Option<Cholesky<f64, nalgebra::Dyn>>,
    p_oc: DMatrix<f64>,
    f_o: DVector<f64>,
}

impl Condensed {
    pub fn new(prob: &BoundProblem) -> Result<Self> {
        let n = prob.dim();
        let mut is_keep = vec![false; n];
        for k in 0..n {
            if prob.bounds[k].is_some() {
                is_keep[k] = true;
            }
        }
        for pt in &prob.points {
            for &(i, _) in &pt.coeffs {
                is_keep[i] = true;
            }
        }
        let keep: Vec<usize> = (0..n).filter(|&k| is_keep[k]).collect();
        let other: Vec<usize> = (0..n).filter(|&k| !is_keep[k]).collect();
        let mut pos = vec![usize::MAX; n];
        for (i, &k) in keep.iter().enumerate() {
            pos[k] = i;
        }
        let p_cc = prob.p.select_rows(keep.iter()).select_columns(keep.iter());
        let f_c = DVector::from_iterator(keep.len(), keep.iter().map(|&k| prob.f[k]));
        let points = prob
            .points
            .iter()
            .map(|pt| PotentialPoint {
                weight: pt.weight,
                coeffs: pt.coeffs.iter().map(|&(i, c)| (pos[i], c)).collect(),
            })
            .collect();
        let bounds = keep.iter().map(|&k| prob.bounds[k]).collect();
        if other.is_empty() {
            return Ok(Self {
                small: BoundProblem { p: p_cc, f: f_c, points, bounds },
                keep,
                other,
                chol_oo: None,
                p_oc: DMatrix::zeros(0, 0),
                f_o: DVector::zeros(0),
            });
        }
        let p_oo = prob.p.select_rows(other.iter()).select_columns(other.iter());
        let p_oc = prob.p.select_rows(other.iter()).select_columns(keep.iter());
        let f_o = DVector::from_iterator(other.len(), other.iter().map(|&k| prob.f[k]));
        let chol = Cholesky::new(p_oo).ok_or_else(|| Error::Numerical("Steklov block not positive definite".into()))?;
        let x_oc = chol.solve(&p_oc);
        let x_of = chol.solve(&f_o);
        let s = &p_cc - p_oc.tr_mul(&x_oc);
        let s = (&s + s.transpose()) * 0.5;
        let f_t = &f_c - p_oc.tr_mul(&x_of);
        Ok(Self {
            small: BoundProblem { p: s, f: f_t, points, bounds },
            keep,
            other,
            chol_oo: Some(chol),
            p_oc,
            f_o,
        })
    }

    /// Full coordinates from the condensed ones.
    pub fn expand(&self, xc: &DVector<f64>) -> DVector<f64> {
        let n = self.keep.len() + self.other.len();
        let mut x = DVector::zeros(n);
        for (i, &k) in self.keep.iter().enumerate() {
            x[k] = xc[i];
        }
        if let Some(ch) = &self.chol_oo {
            let xo = ch.solve(&(&self.f_o - &self.p_oc * xc));
            for (i, &k) in self.other.iter().enumerate() {
                x[k] = xo[i];
            }
        }
        x
    }

    pub fn restrict(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.keep.len(), self.keep.iter().map(|&k| x[k]))
    }
}

/// Solves the discrete regularized contact problem.
pub fn solve_regularized(
    op: &SteklovOperator,
    load: &LoadFunctional,
    law: &RegularizedLaw,
    setup: &ContactSetup,
    dofs: &DofMap,
    opts: &SolverOptions,
    initial: Option<&DVector<f64>>,
) -> Result<DiscreteSolution> {
    let rotated = rotate(op, load, setup, dofs)?;
    let cond = Condensed::new(&rotated.prob)?;
    let to_rotated = |u: &DVector<f64>| {
        let mut x = u.clone();
        for &(ix, iy, n, t) in &rotated.rot {
            let (ux, uy) = (u[ix], u[iy]);
            x[ix] = n.x * ux + n.y * uy;
            x[iy] = t.x * ux + t.y * uy;
        }
        x
    };
    let x0 = initial.map(|u| cond.restrict(&to_rotated(u)));
    if let Some(x0) = &x0 {
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite initial guess".into()));
        }
    }
    let sol = solve_with_continuation(&cond.small, law, opts, x0.as_ref())?;
    if sol.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite iterate in law evaluation".into()));
    }
    let x = cond.expand(&sol.x);
    let mut u = x.clone();
    for &(ix, iy, n, t) in &rotated.rot {
        let (xn, xt) = (x[ix], x[iy]);
        u[ix] = n.x * xn + t.x * xt;
        u[iy] = n.y * xn + t.y * xt;
    }
    let mut pos = vec![usize::MAX; rotated.prob.dim()];
    for (i, &k) in cond.keep.iter().enumerate() {
        pos[k] = i;
    }
    let mut active = Vec::with_capacity(setup.nodes.len());
    let mut multipliers = Vec::with_capacity(setup.nodes.len());
    for coords in &rotated.node_coords {
        match coords {
            Some((ixn, _)) => {
                let i = pos[*ixn];
                active.push(sol.active[i]);
                multipliers.push(sol.mu[i]);
            }
            None => {
                active.push(false);
                multipliers.push(0.0);
            }
        }
    }
    let u_full = dofs.expand(&u);
    Ok(DiscreteSolution {
        u,
        u_full,
        active,
        multipliers,
        iterations: sol.iterations,
        residual: sol.residual,
        trace: sol.trace,
        used_fallback: sol.used_fallback,
    })
}

/// KKT residual of a BEM solution in the original coordinates: relative
/// stationarity `‖Pu + DJ(u) + Bᵀμ − F‖∞`, feasibility, sign and complementarity.
pub fn kkt_residual(
    op: &SteklovOperator,
    load: &LoadFunctional,
    law: &RegularizedLaw,
    setup: &ContactSetup,
    dofs: &DofMap,
    u: &DVector<f64>,
    mu: &[f64],
) -> f64 {
    let u_full = dofs.expand(u);
    let pu = &op.p * u;
    let dj = dofs.restrict(&setup.quadrature.gradient(&u_full, law));
    let mut btmu = DVector::zeros(u.len());
    let mut feas: f64 = 0.0;
    let mut sign: f64 = 0.0;
    let mut comp_raw = Vec::new();
    for ((node, n), &m) in setup.nodes.iter().zip(&setup.normals).zip(mu) {
        let ix = dofs.reduced_of_full[2 * node.node];
        let iy = dofs.reduced_of_full[2 * node.node + 1];
        let un = n.x * u_full[2 * node.node] + n.y * u_full[2 * node.node + 1];
        feas = feas.max(un - setup.gap);
        if let (Some(ix), Some(iy)) = (ix, iy) {
            btmu[ix] += m * n.x;
            btmu[iy] += m * n.y;
        }
        sign = sign.max(-m);
        comp_raw.push((m * (un - setup.gap)).abs());
    }
    let scale = load.f.amax().max(pu.amax()).max(dj.amax());
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let stat = (pu + dj + btmu - &load.f).amax() / scale;
    let comp = comp_raw.into_iter().fold(0.0, f64::max) / scale;
    stat.max(feas).max(sign / scale).max(comp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularization::{LawSpec, SawtoothParams};

    fn bench(eps: f64) -> RegularizedLaw {
        RegularizedLaw::new(LawSpec::benchmark(SawtoothParams::default(), 0.0), eps).unwrap()
    }

    #[test]
    fn unconstrained_quadratic() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = DVector::from_vec(vec![1.0, -1.0]);
        let prob = BoundProblem { p: p.clone(), f: f.clone(), points: vec![], bounds: vec![None, None] };
        let law = RegularizedLaw::new(LawSpec::zero(), 1e-3).unwrap();
        let sol = solve_bound_problem(&prob, &law, &SolverOptions::default(), &DVector::zeros(2)).unwrap();
        let exact = p.lu().solve(&f).unwrap();
        assert!((sol.x - exact).amax() < 1e-12);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn one_bound_two_dofs_against_grid() {
        // P = [[1, .2], [.2, 1]], pull x₀ beyond its bound 0, benchmark law on x₁
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let f = DVector::from_vec(vec![0.05, -0.03]);
        let prob = BoundProblem {
            p,
            f,
            points: vec![PotentialPoint { weight: 1.0, coeffs: vec![(1, 1.0)] }],
            bounds: vec![Some(0.0), None],
        };
        let law = bench(1e-3);
        let sol = solve_with_continuation(&prob, &law, &SolverOptions::default(), None).unwrap();
        // brute force over a 1000 × 1000 grid, then local refinement
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let m = 1000;
        for i in 0..=m {
            let x0 = -0.2 * i as f64 / m as f64;
            for j in 0..=m {
                let x1 = -0.2 + 0.4 * j as f64 / m as f64;
                let e = prob.energy(&DVector::from_vec(vec![x0, x1]), &law);
                if e < best.0 {
                    best = (e, x0, x1);
                }
            }
        }
        assert!((sol.x[0] - best.1).abs() <= 2e-4 + 1e-12);
        assert!((sol.x[1] - best.2).abs() <= 4e-4 + 1e-12);
        assert!(prob.energy(&sol.x, &law) <= best.0 + 1e-12);
        assert!(sol.x[0] <= 1e-12);
    }

    #[test]
    fn fixed_point_property() {
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let f = DVector::from_vec(vec![-0.04, 0.02, 0.06]);
        let prob = BoundProblem {
            p,
            f,
            points: vec![
                PotentialPoint { weight: 0.5, coeffs: vec![(0, 1.0)] },
                PotentialPoint { weight: 0.5, coeffs: vec![(0, 0.5), (2, 0.5)] },
            ],
            bounds: vec![Some(0.0), None, Some(0.0)],
        };
        let law = bench(1e-4);
        let sol = solve_with_continuation(&prob, &law, &SolverOptions::default(), None).unwrap();
        let again = solve_with_continuation(&prob, &law, &SolverOptions::default(), Some(&sol.x)).unwrap();
        assert!(again.iterations <= 2);
        assert!((again.x - sol.x).amax() < 1e-12);
    }

    #[test]
    fn kkt_residual_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let f = DVector::from_vec(vec![1.0, 1.0]);
        let prob = BoundProblem { p, f, points: vec![], bounds: vec![None, Some(0.5)] };
        let law = RegularizedLaw::new(LawSpec::zero(), 1e-3).unwrap();
        let exact = DVector::from_vec(vec![0.5, 0.5]);
        let mu = DVector::from_vec(vec![0.0, 0.5]);
        assert!(prob.kkt_residual(&exact, &mu, &law) <= 1e-12);
        let pert = DVector::from_vec(vec![0.5 + 1e-3, 0.5]);
        let r = prob.kkt_residual(&pert, &mu, &law);
        assert!(r > 5e-4 && r < 5e-3);
        let infeasible = DVector::from_vec(vec![0.5, 0.7]);
        assert!(prob.kkt_residual(&infeasible, &DVector::zeros(2), &law) >= 0.2 - 1e-15);
    }

    #[test]
    fn trace_csv() {
        let rows = [TraceRow { iteration: 0, residual: 1.5, active: 3 }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iteration,residual,active");
        assert_eq!(text.lines().nth(1).unwrap(), "0,1.5e0,3");
    }
}
