//! Reconstruction of the discrete contact multiplier λ from the equilibrium
//! defect `⟨λ, v_n⟩ = ⟨F, v⟩ − ⟨Pu, v⟩` on the coarsened multiplier space.
//!
//! The over-determined system is solved in the discrete L² dual norm of the
//! normal traces on Γ_C, i.e. rows are weighted with the inverse Cholesky
//! factor of their Gram matrix.

use crate::kernels::{displacement_at, Shape, ShapeTable};
use crate::mesh::{coarsen_multiplier_space, BoundaryMesh, DofMap, MultiplierMesh, Part};
use crate::polynomial::{gauss_legendre, legendre_values};
use crate::regularization::RegularizedLaw;
use crate::steklov::{LoadFunctional, SteklovOperator};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiplierOptions {
    /// Keep test functions without normal trace on Γ_C (zero rows of `M`).
    pub all_rows: bool,
}

impl Default for MultiplierOptions {
    fn default() -> Self {
        Self { all_rows: true }
    }
}

#[derive(Debug, Clone)]
pub struct MultiplierSolution {
    pub space: MultiplierMesh,
    pub coeffs: DVector<f64>,
    /// Weighted residual on the Γ_C rows; with `all_rows` the remaining
    /// rows enter unweighted.
    pub residual: f64,
    /// Per mesh element: multiplier element and parameter sub-interval.
    pub location: Vec<Option<(usize, f64, f64)>>,
}

impl MultiplierSolution {
    /// λ on mesh element `e` at reference point `ξ` (zero off Γ_C).
    pub fn value(&self, e: usize, xi: f64) -> f64 {
        let Some((m, s0, s1)) = self.location[e] else {
            return 0.0;
        };
        let eta = s0 + 0.5 * (xi + 1.0) * (s1 - s0);
        let deg = self.space.elements[m].degree;
        let off = self.space.offsets[m];
        legendre_values(deg, eta)
            .iter()
            .enumerate()
            .map(|(k, l)| self.coeffs[off + k] * l)
            .sum()
    }
}

pub fn locate_all(mesh: &BoundaryMesh, space: &MultiplierMesh) -> Vec<Option<(usize, f64, f64)>> {
    let mut out = vec![None; mesh.len()];
    for (m, me) in space.elements.iter().enumerate() {
        let mut start = 0.0;
        for &c in &me.children {
            let len = mesh.length(c);
            out[c] = Some((m, -1.0 + 2.0 * start / me.length, -1.0 + 2.0 * (start + len) / me.length));
            start += len;
        }
    }
    out
}

/// `M_{j,i} = ⟨ψ_i, (φ_j)_n⟩_{Γ_C}` over the reduced displacement dofs.
pub fn multiplier_matrix(mesh: &BoundaryMesh, dofs: &DofMap, space: &MultiplierMesh) -> DMatrix<f64> {
    let location = locate_all(mesh, space);
    let max_p = mesh.elements.iter().map(|e| e.degree).max().unwrap_or(1);
    let table = ShapeTable::new(max_p);
    let mut m = DMatrix::zeros(dofs.n_reduced(), space.n_dofs);
    for (e, el) in mesh.elements.iter().enumerate() {
        let Some((me, s0, s1)) = location[e] else { continue };
        let q = space.elements[me].degree;
        let off = space.offsets[me];
        let panel = mesh.panel(e);
        let n = panel.normal();
        let rule = gauss_legendre(el.degree + q + 2);
        for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
            let eta = s0 + 0.5 * (xi + 1.0) * (s1 - s0);
            let psi = legendre_values(q, eta);
            let wj = w * panel.jacobian();
            for (j, &node) in dofs.element_nodes[e].iter().enumerate() {
                let phi = table.eval(Shape::Lagrange { degree: el.degree, node: j }, xi).0;
                for c in 0..2 {
                    let Some(row) = dofs.reduced_of_full[2 * node + c] else { continue };
                    let t = wj * phi * n[c];
                    for (k, pk) in psi.iter().enumerate() {
                        m[(row, off + k)] += t * pk;
                    }
                }
            }
        }
    }
    m
}

/// Reduced rows with a nonzero normal trace on Γ_C and their Gram matrix
/// `G_{jk} = ⟨(φ_j)_n, (φ_k)_n⟩_{Γ_C}`.
pub fn normal_trace_gram(mesh: &BoundaryMesh, dofs: &DofMap) -> (Vec<usize>, DMatrix<f64>) {
    let max_p = mesh.elements.iter().map(|e| e.degree).max().unwrap_or(1);
    let table = ShapeTable::new(max_p);
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut index: Vec<Option<usize>> = vec![None; dofs.n_reduced()];
    let mut rows = Vec::new();
    for (e, el) in mesh.elements.iter().enumerate() {
        if el.part != Part::Contact {
            continue;
        }
        let panel = mesh.panel(e);
        let n = panel.normal();
        let rule = gauss_legendre(el.degree + 2);
        for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
            let mut vals: Vec<(usize, f64)> = Vec::new();
            for (j, &node) in dofs.element_nodes[e].iter().enumerate() {
                let phi = table.eval(Shape::Lagrange { degree: el.degree, node: j }, xi).0;
                for c in 0..2 {
                    let Some(row) = dofs.reduced_of_full[2 * node + c] else { continue };
                    if n[c] == 0.0 {
                        continue;
                    }
                    let k = *index[row].get_or_insert_with(|| {
                        rows.push(row);
                        rows.len() - 1
                    });
                    vals.push((k, phi * n[c]));
                }
            }
            let wj = w * panel.jacobian();
            for &(a, va) in &vals {
                for &(b, vb) in &vals {
                    entries.push((a, b, wj * va * vb));
                }
            }
        }
    }
    let mut g = DMatrix::zeros(rows.len(), rows.len());
    for (a, b, v) in entries {
        g[(a, b)] += v;
    }
    (rows, g)
}

/// Minimum-norm least-squares solution by SVD.
pub fn least_squares(m: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax.max(f64::MIN_POSITIVE);
    svd.solve(r, tol).expect("SVD computed with both factors")
}

/// Weighted least-squares fit of `⟨λ, φ_n⟩ = r` on `space`; returns the
/// coefficients and the residual.
pub fn fit_multiplier(
    mesh: &BoundaryMesh,
    dofs: &DofMap,
    space: &MultiplierMesh,
    r: &DVector<f64>,
    opts: &MultiplierOptions,
) -> Result<(DVector<f64>, f64)> {
    let m = multiplier_matrix(mesh, dofs, space);
    let (rows, gram) = normal_trace_gram(mesh, dofs);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("Gram matrix of the normal traces is not positive definite".into()))?;
    let l = chol.l();
    let mw = l.solve_lower_triangular(&m.select_rows(rows.iter())).expect("Cholesky factor is nonsingular");
    let rr = DVector::from_iterator(rows.len(), rows.iter().map(|&j| r[j]));
    let rw = l.solve_lower_triangular(&rr).expect("Cholesky factor is nonsingular");
    let coeffs = least_squares(&mw, &rw);
    let mut residual2 = (&mw * &coeffs - &rw).norm_squared();
    if opts.all_rows {
        let mut on = vec![false; m.nrows()];
        rows.iter().for_each(|&j| on[j] = true);
        residual2 += (0..m.nrows()).filter(|&j| !on[j]).map(|j| r[j] * r[j]).sum::<f64>();
    }
    Ok((coeffs, residual2.sqrt()))
}

/// Reconstructs λ from a displacement `u` on the reduced dofs.
pub fn reconstruct_multiplier(
    mesh: &BoundaryMesh,
    dofs: &DofMap,
    op: &SteklovOperator,
    load: &LoadFunctional,
    u: &DVector<f64>,
    opts: &MultiplierOptions,
) -> Result<MultiplierSolution> {
    let space = coarsen_multiplier_space(mesh)?;
    reconstruct_on(mesh, dofs, space, op, load, u, opts)
}

/// As [`reconstruct_multiplier`] on a given multiplier space.
pub fn reconstruct_on(
    mesh: &BoundaryMesh,
    dofs: &DofMap,
    space: MultiplierMesh,
    op: &SteklovOperator,
    load: &LoadFunctional,
    u: &DVector<f64>,
    opts: &MultiplierOptions,
) -> Result<MultiplierSolution> {
    let r = &load.f - op.apply(u);
    let (coeffs, residual) = fit_multiplier(mesh, dofs, &space, &r, opts)?;
    let location = locate_all(mesh, &space);
    Ok(MultiplierSolution { space, coeffs, residual, location })
}

/// Contact-line trace CSV `s, u_n, gap, S_x, lambda`, `samples` midpoints per element.
#[allow(clippy::too_many_arguments)]
pub fn write_contact_trace_csv<W: Write>(
    mesh: &BoundaryMesh,
    dofs: &DofMap,
    u_full: &DVector<f64>,
    law: &RegularizedLaw,
    gap: f64,
    lambda: &MultiplierSolution,
    samples: usize,
    out: W,
) -> Result<()> {
    let table = ShapeTable::new(mesh.elements.iter().map(|e| e.degree).max().unwrap_or(1));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "u_n", "gap", "S_x", "lambda"])?;
    let mut s = 0.0;
    for (e, el) in mesh.elements.iter().enumerate() {
        if el.part != Part::Contact {
            continue;
        }
        let panel = mesh.panel(e);
        for i in 0..samples {
            let xi = -1.0 + (2 * i + 1) as f64 / samples as f64;
            let un = displacement_at(&table, mesh, dofs, u_full, e, xi).dot(&panel.normal());
            let pos = s + 0.5 * (xi + 1.0) * panel.length();
            w.write_record([
                format!("{pos:e}"),
                format!("{un:e}"),
                format!("{gap:e}"),
                format!("{:e}", law.deriv(un)),
                format!("{:e}", lambda.value(e, xi)),
            ])?;
        }
        s += panel.length();
    }
    w.flush()?;
    Ok(())
}
