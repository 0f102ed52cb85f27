//! Navier–Lamé fundamental solution, traction kernel and Galerkin assembly of
//! the single layer (V), double layer (K), hypersingular (W) and identity
//! matrices on the hp boundary spaces.
//!
//! `W` uses the integration-by-parts representation
//! `⟨Wu, v⟩ = κ ∫∫ v'(x)ᵀ [−log|x−y| I + r̂r̂ᵀ] u'(y)` with tangential
//! derivatives, so only weakly singular integrals are evaluated.

use crate::geometry::{Contact, Panel, Vec2};
use crate::mesh::{BoundaryMesh, DofMap};
use crate::polynomial::{gauss_legendre, legendre, lobatto_bubble, LagrangeBasis};
use crate::quadrature::{PairQuadrature, QuadratureOptions};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub e: f64,
    pub nu: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Material {
    /// `λ = Eν/(1−ν²)`, `μ = E/(1+ν)`.
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        if !(e > 0.0) || !(nu > 0.0 && nu < 0.5) {
            return Err(Error::InvalidInput(format!(
                "material needs E > 0 and 0 < nu < 0.5 (got E={e}, nu={nu})"
            )));
        }
        Ok(Self {
            e,
            nu,
            lambda: e * nu / (1.0 - nu * nu),
            mu: e / (1.0 + nu),
        })
    }

    pub fn c1(&self) -> f64 {
        let (l, m) = (self.lambda, self.mu);
        (l + 3.0 * m) / (4.0 * PI * m * (l + 2.0 * m))
    }

    pub fn c2(&self) -> f64 {
        let (l, m) = (self.lambda, self.mu);
        (l + m) / (l + 3.0 * m)
    }

    /// Prefactor of the hypersingular bilinear form, `μ(λ+μ)/(π(λ+2μ))`.
    pub fn kappa_w(&self) -> f64 {
        let (l, m) = (self.lambda, self.mu);
        m * (l + m) / (PI * (l + 2.0 * m))
    }

    /// Cauchy stress of a displacement gradient `grad[i][j] = ∂u_i/∂x_j`.
    pub fn stress(&self, grad: &Matrix2<f64>) -> Matrix2<f64> {
        let eps = 0.5 * (grad + grad.transpose());
        Matrix2::identity() * (self.lambda * eps.trace()) + eps * (2.0 * self.mu)
    }
}

/// `G(x,y) = c₁[−log|x−y| I + c₂ r̂r̂ᵀ]`, `r = x − y`.
pub fn fundamental_solution(x: &Vec2, y: &Vec2, mat: &Material) -> Result<Matrix2<f64>> {
    let r = x - y;
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::Domain("fundamental solution at coincident points".into()));
    }
    Ok(kelvin(&r, d, mat))
}

#[inline]
fn kelvin(r: &Vec2, d: f64, mat: &Material) -> Matrix2<f64> {
    let c1 = mat.c1();
    let c2 = mat.c2();
    let d2 = d * d;
    let l = -d.ln();
    Matrix2::new(
        c1 * (l + c2 * r.x * r.x / d2),
        c1 * c2 * r.x * r.y / d2,
        c1 * c2 * r.x * r.y / d2,
        c1 * (l + c2 * r.y * r.y / d2),
    )
}

/// Traction at `y` (normal `n_y`) of the displacement field `G(·, x)`:
/// entry `(i, j)` is traction component `i` caused by a unit point force in
/// direction `j` at `x`.
pub fn traction_kernel(x: &Vec2, y: &Vec2, n_y: &Vec2, mat: &Material) -> Result<Matrix2<f64>> {
    let r = y - x;
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::Domain("traction kernel at coincident points".into()));
    }
    Ok(traction(&r, d, n_y, mat))
}

#[inline]
fn traction(r: &Vec2, d: f64, n: &Vec2, mat: &Material) -> Matrix2<f64> {
    let (l, m) = (mat.lambda, mat.mu);
    let a = m / (2.0 * PI * (l + 2.0 * m) * d * d);
    let b = (l + m) / (PI * (l + 2.0 * m)) / (d * d * d * d);
    let rn = r.dot(n);
    let rv = [r.x, r.y];
    let nv = [n.x, n.y];
    Matrix2::from_fn(|i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        a * (nv[i] * rv[j] - delta * rn - nv[j] * rv[i]) - b * rv[i] * rv[j] * rn
    })
}

/// Kernel of the integrated-by-parts hypersingular form (without `κ`).
#[inline]
fn hypersingular(r: &Vec2, d: f64) -> Matrix2<f64> {
    let l = -d.ln();
    let d2 = d * d;
    Matrix2::new(
        l + r.x * r.x / d2,
        r.x * r.y / d2,
        r.x * r.y / d2,
        l + r.y * r.y / d2,
    )
}

/// Scalar shape functions on the reference interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Gauss–Lobatto Lagrange function `node` of the given degree.
    Lagrange { degree: usize, node: usize },
    Legendre(usize),
    /// Lobatto bubble of degree ≥ 2.
    Bubble(usize),
}

impl Shape {
    pub fn degree(&self) -> usize {
        match *self {
            Shape::Lagrange { degree, .. } => degree,
            Shape::Legendre(k) | Shape::Bubble(k) => k,
        }
    }
}

/// Lagrange bases cached by degree.
#[derive(Debug, Clone, Default)]
pub struct ShapeTable {
    lagrange: Vec<Option<LagrangeBasis>>,
}

impl ShapeTable {
    pub fn new(max_degree: usize) -> Self {
        let lagrange = (0..=max_degree)
            .map(|p| LagrangeBasis::gauss_lobatto(p).ok())
            .collect();
        Self { lagrange }
    }

    /// Value and derivative with respect to the reference coordinate.
    pub fn eval(&self, shape: Shape, x: f64) -> (f64, f64) {
        match shape {
            Shape::Lagrange { degree, node } => match self.lagrange.get(degree) {
                Some(Some(b)) => b.eval(node, x),
                _ => LagrangeBasis::gauss_lobatto(degree)
                    .expect("degree >= 1")
                    .eval(node, x),
            },
            Shape::Legendre(k) => legendre(k, x),
            Shape::Bubble(k) => lobatto_bubble(k, x),
        }
    }
}

/// A vector-valued basis function restricted to one panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFunction {
    /// Index into [`PanelBasis::shapes`].
    pub shape: usize,
    pub dir: Vec2,
    pub index: usize,
}

/// Basis functions supported on a panel. Shapes are evaluated at
/// `x = s0 + (ξ + 1)(s1 − s0)/2` so that a panel can carry a piece of a
/// function defined on a larger element.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelBasis {
    pub panel: Panel,
    pub range: (f64, f64),
    pub shapes: Vec<Shape>,
    pub functions: Vec<LocalFunction>,
}

impl PanelBasis {
    pub fn degree(&self) -> usize {
        self.shapes.iter().map(|s| s.degree()).max().unwrap_or(0)
    }

    fn local(&self, xi: f64) -> f64 {
        let (s0, s1) = self.range;
        s0 + 0.5 * (xi + 1.0) * (s1 - s0)
    }

    /// Values and arc-length derivatives of all shapes at `ξ`.
    fn eval_into(&self, table: &ShapeTable, xi: f64, val: &mut Vec<f64>, der: &mut Vec<f64>) {
        val.clear();
        der.clear();
        let (s0, s1) = self.range;
        let chain = 0.5 * (s1 - s0) / self.panel.jacobian();
        let x = self.local(xi);
        for &s in &self.shapes {
            let (v, d) = table.eval(s, x);
            val.push(v);
            der.push(d * chain);
        }
    }
}

/// A discrete space given panel by panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    pub dim: usize,
    pub panels: Vec<PanelBasis>,
}

impl Space {
    pub fn max_degree(&self) -> usize {
        self.panels.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    /// Continuous vector Gauss–Lobatto Lagrange space over the full trace.
    pub fn displacement(mesh: &BoundaryMesh, dofs: &DofMap) -> Self {
        let panels = mesh
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let p = el.degree;
                let shapes = (0..=p).map(|node| Shape::Lagrange { degree: p, node }).collect();
                let mut functions = Vec::with_capacity(2 * (p + 1));
                for (j, &node) in dofs.element_nodes[e].iter().enumerate() {
                    for c in 0..2 {
                        functions.push(LocalFunction {
                            shape: j,
                            dir: unit(c),
                            index: 2 * node + c,
                        });
                    }
                }
                PanelBasis {
                    panel: mesh.panel(e),
                    range: (-1.0, 1.0),
                    shapes,
                    functions,
                }
            })
            .collect();
        Self {
            dim: dofs.n_full(),
            panels,
        }
    }

    /// Discontinuous vector Legendre space of degree `p_T − 1`.
    pub fn density(mesh: &BoundaryMesh, dofs: &DofMap) -> Self {
        let panels = mesh
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let p = el.degree;
                let shapes = (0..p).map(Shape::Legendre).collect();
                let mut functions = Vec::with_capacity(2 * p);
                for c in 0..2 {
                    for k in 0..p {
                        functions.push(LocalFunction {
                            shape: k,
                            dir: unit(c),
                            index: dofs.density_index(mesh, e, c, k),
                        });
                    }
                }
                PanelBasis {
                    panel: mesh.panel(e),
                    range: (-1.0, 1.0),
                    shapes,
                    functions,
                }
            })
            .collect();
        Self {
            dim: dofs.n_density,
            panels,
        }
    }
}

pub(crate) fn unit(c: usize) -> Vec2 {
    if c == 0 {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    SingleLayer,
    DoubleLayer,
    Hypersingular,
}

/// Galerkin matrix `A[i, j] = ⟨op φ_j, ψ_i⟩` with `ψ_i` from `test`, `φ_j` from `trial`.
pub fn assemble(
    op: Operator,
    test: &Space,
    trial: &Space,
    mat: &Material,
    quad: &PairQuadrature,
) -> DMatrix<f64> {
    let max_degree = test.max_degree().max(trial.max_degree());
    let table = ShapeTable::new(max_degree + 1);
    let symmetric = op != Operator::DoubleLayer && test == trial;
    let mut a = DMatrix::zeros(test.dim, trial.dim);
    let (mut tv, mut td, mut sv, mut sd) = (vec![], vec![], vec![], vec![]);
    let kappa = mat.kappa_w();
    for (pi, tp) in test.panels.iter().enumerate() {
        let start = if symmetric { pi } else { 0 };
        for (pj, sp) in trial.panels.iter().enumerate().skip(start) {
            let degree = tp.degree().max(sp.degree());
            let rule = quad.rule(&tp.panel, &sp.panel, degree);
            let jac = tp.panel.jacobian() * sp.panel.jacobian();
            let n_y = sp.panel.normal();
            let (na, nb) = (tp.shapes.len(), sp.shapes.len());
            // accumulated 2×2 kernel moments per shape pair
            let mut moments = vec![Matrix2::<f64>::zeros(); na * nb];
            for q in 0..rule.len() {
                let r = rule.offset(q, &tp.panel, &sp.panel);
                let d = r.norm();
                let k = match op {
                    Operator::SingleLayer => kelvin(&r, d, mat),
                    Operator::DoubleLayer => traction(&r, d, &n_y, mat).transpose(),
                    Operator::Hypersingular => hypersingular(&r, d) * kappa,
                } * (rule.w[q] * jac);
                tp.eval_into(&table, rule.xi[q], &mut tv, &mut td);
                sp.eval_into(&table, rule.eta[q], &mut sv, &mut sd);
                let (tvals, svals) = if op == Operator::Hypersingular {
                    (&td, &sd)
                } else {
                    (&tv, &sv)
                };
                for ia in 0..na {
                    let fa = tvals[ia];
                    if fa == 0.0 {
                        continue;
                    }
                    for ib in 0..nb {
                        moments[ia * nb + ib] += k * (fa * svals[ib]);
                    }
                }
            }
            let same = pi == pj;
            for f in &tp.functions {
                for g in &sp.functions {
                    let m = &moments[f.shape * nb + g.shape];
                    let v = f.dir.dot(&(m * g.dir));
                    a[(f.index, g.index)] += v;
                    if symmetric && !same {
                        a[(g.index, f.index)] += v;
                    }
                }
            }
        }
    }
    a
}

/// Mass matrix `⟨φ_j, ψ_i⟩` between two spaces on identical panels.
pub fn assemble_identity(test: &Space, trial: &Space) -> DMatrix<f64> {
    let max_degree = test.max_degree().max(trial.max_degree());
    let table = ShapeTable::new(max_degree + 1);
    let rule = gauss_legendre(max_degree + 2);
    let mut a = DMatrix::zeros(test.dim, trial.dim);
    let (mut tv, mut td, mut sv, mut sd) = (vec![], vec![], vec![], vec![]);
    for tp in &test.panels {
        for sp in &trial.panels {
            if tp.panel.classify(&sp.panel) != Contact::Identical {
                continue;
            }
            let jac = tp.panel.jacobian();
            for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
                tp.eval_into(&table, xi, &mut tv, &mut td);
                sp.eval_into(&table, xi, &mut sv, &mut sd);
                for f in &tp.functions {
                    for g in &sp.functions {
                        a[(f.index, g.index)] += w * jac * tv[f.shape] * sv[g.shape] * f.dir.dot(&g.dir);
                    }
                }
            }
        }
    }
    a
}

/// Dense Galerkin matrices of one mesh.
#[derive(Debug, Clone)]
pub struct BemMatrices {
    /// Density × density.
    pub v: DMatrix<f64>,
    /// Density × full trace.
    pub k: DMatrix<f64>,
    /// Full trace × full trace.
    pub w: DMatrix<f64>,
    /// Density × full trace.
    pub i: DMatrix<f64>,
    pub scale: f64,
}

impl BemMatrices {
    /// Assembles all four matrices; the mesh must lie in a disc of radius < 1.
    pub fn assemble(mesh: &BoundaryMesh, dofs: &DofMap, mat: &Material, opts: &QuadratureOptions) -> Result<Self> {
        if mesh.radius() >= 1.0 {
            return Err(Error::Config(format!(
                "boundary must lie in a disc of radius < 1 (radius {:.3}); rescale the geometry",
                mesh.radius()
            )));
        }
        let density = Space::density(mesh, dofs);
        let disp = Space::displacement(mesh, dofs);
        let max_degree = disp.max_degree() + 1;
        let quad = PairQuadrature::new(opts.clone()).with_max_degree(max_degree);
        Ok(Self {
            v: assemble(Operator::SingleLayer, &density, &density, mat, &quad),
            k: assemble(Operator::DoubleLayer, &density, &disp, mat, &quad),
            w: assemble(Operator::Hypersingular, &disp, &disp, mat, &quad),
            i: assemble_identity(&density, &disp),
            scale: 1.0,
        })
    }
}

/// Nodal interpolant of a vector field in the full-trace displacement space.
pub fn interpolate(dofs: &DofMap, f: impl Fn(&Vec2) -> Vec2) -> DVector<f64> {
    let mut v = DVector::zeros(dofs.n_full());
    for (k, p) in dofs.node_points.iter().enumerate() {
        let val = f(p);
        v[2 * k] = val.x;
        v[2 * k + 1] = val.y;
    }
    v
}

/// Value of a full-trace displacement on element `e` at reference point `ξ`.
pub fn displacement_at(
    table: &ShapeTable,
    mesh: &BoundaryMesh,
    dofs: &DofMap,
    u_full: &DVector<f64>,
    e: usize,
    xi: f64,
) -> Vec2 {
    let degree = mesh.elements[e].degree;
    let mut u = Vec2::zeros();
    for (j, &node) in dofs.element_nodes[e].iter().enumerate() {
        let phi = table.eval(Shape::Lagrange { degree, node: j }, xi).0;
        u.x += phi * u_full[2 * node];
        u.y += phi * u_full[2 * node + 1];
    }
    u
}

/// The three rigid motions `(1,0)`, `(0,1)`, `(−y,x)` as full-trace vectors.
pub fn rigid_motions(dofs: &DofMap) -> [DVector<f64>; 3] {
    [
        interpolate(dofs, |_| Vec2::new(1.0, 0.0)),
        interpolate(dofs, |_| Vec2::new(0.0, 1.0)),
        interpolate(dofs, |p| Vec2::new(-p.y, p.x)),
    ]
}

/// Binary dump: `u64` rows, `u64` cols (little endian), then row-major `f64`.
pub fn write_matrix<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let word = |k: usize| -> Result<[u8; 8]> {
        bytes
            .get(8 * k..8 * k + 8)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| Error::InvalidInput("truncated matrix dump".into()))
    };
    let rows = u64::from_le_bytes(word(0)?) as usize;
    let cols = u64::from_le_bytes(word(1)?) as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = f64::from_le_bytes(word(2 + i * cols + j)?);
        }
    }
    Ok(m)
}
