//! Discrete symmetric Poincaré–Steklov operator
//! `P = W + (K + ½I)ᵀ V⁻¹ (K + ½I)` and the Neumann load.

use crate::geometry::{Panel, Vec2};
use crate::kernels::{BemMatrices, Shape, ShapeTable};
use crate::mesh::{BoundaryMesh, DofMap, Part};
use crate::polynomial::gauss_legendre;
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone)]
pub struct SteklovOperator {
    /// `P` on the Dirichlet-reduced dofs.
    pub p: DMatrix<f64>,
    /// `P` on the full trace space (before Dirichlet elimination).
    pub full: DMatrix<f64>,
    /// Cholesky factor of `V`.
    pub chol_v: Cholesky<f64, Dyn>,
    /// `K + ½I` on the full trace space.
    pub b: DMatrix<f64>,
    /// `L⁻¹(K + ½I)` with `V = LLᵀ`.
    pub z: DMatrix<f64>,
}

impl SteklovOperator {
    pub fn assemble(bem: &BemMatrices, dofs: &DofMap) -> Result<Self> {
        let chol_v = Cholesky::new(bem.v.clone()).ok_or(Error::SingularV)?;
        let b = &bem.k + &bem.i * 0.5;
        let z = chol_v
            .l_dirty()
            .solve_lower_triangular(&b)
            .ok_or(Error::SingularV)?;
        let mut full = z.tr_mul(&z);
        full += &bem.w;
        let full = (&full + full.transpose()) * 0.5;
        let idx = &dofs.full_of_reduced;
        let p = full.select_rows(idx.iter()).select_columns(idx.iter());
        Ok(Self {
            p,
            full,
            chol_v,
            b,
            z,
        })
    }

    pub fn n_reduced(&self) -> usize {
        self.p.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p * v
    }

    /// Density `ψ = V⁻¹(K + ½I)u` of a full-trace displacement.
    pub fn density(&self, u_full: &DVector<f64>) -> DVector<f64> {
        self.chol_v.solve(&(&self.b * u_full))
    }
}

/// `‖v‖_P = √(vᵀPv)`.
pub fn energy_norm(p: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let q = v.dot(&(p * v));
    if q < -1e-12 {
        return Err(Error::Diagnostics(format!("negative quadratic form {q:.3e}")));
    }
    Ok(q.max(0.0).sqrt())
}

/// Piecewise constant traction on straight segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Traction {
    pub segments: Vec<(Panel, Vec2)>,
}

impl Traction {
    pub fn zero() -> Self {
        Self { segments: vec![] }
    }

    /// `(0, 0.25)` on the top edge `x ∈ [1/4, 1/2]`, `y = 1/2`.
    pub fn benchmark() -> Self {
        Self {
            segments: vec![(
                Panel::new(Vec2::new(0.5, 0.5), Vec2::new(0.25, 0.5)),
                Vec2::new(0.0, 0.25),
            )],
        }
    }

    /// Traction value on an element: `Ok(None)` outside the support, an error
    /// if the element straddles a support boundary.
    pub(crate) fn on_panel(&self, panel: &Panel) -> Result<Option<Vec2>> {
        let tol = 1e-12 * panel.length();
        let mut value: Option<Vec2> = None;
        for (seg, t) in &self.segments {
            let d = seg.tangent();
            let normal_offset = |p: &Vec2| {
                let q = p - seg.a;
                (q.x * d.y - q.y * d.x).abs()
            };
            if normal_offset(&panel.a) > tol || normal_offset(&panel.b) > tol {
                continue;
            }
            let s0 = (panel.a - seg.a).dot(&d);
            let s1 = (panel.b - seg.a).dot(&d);
            let (lo, hi) = (s0.min(s1), s0.max(s1));
            let overlap = hi.min(seg.length()) - lo.max(0.0);
            if overlap <= tol {
                continue;
            }
            if overlap < panel.length() - tol {
                return Err(Error::Config(
                    "traction support is not resolved by the mesh".into(),
                ));
            }
            value = Some(value.unwrap_or_else(Vec2::zeros) + t);
        }
        Ok(value)
    }
}

#[derive(Debug, Clone)]
pub struct LoadFunctional {
    /// On the Dirichlet-reduced dofs.
    pub f: DVector<f64>,
    pub full: DVector<f64>,
    pub traction: Traction,
}

/// `⟨F, v⟩ = ∫_{Γ_N} t·v ds`, Gauss order `p + 1`.
pub fn assemble_load(mesh: &BoundaryMesh, dofs: &DofMap, traction: &Traction) -> Result<LoadFunctional> {
    let mut full = DVector::zeros(dofs.n_full());
    let table = ShapeTable::new(mesh.elements.iter().map(|e| e.degree).max().unwrap_or(1));
    for (e, el) in mesh.elements.iter().enumerate() {
        let panel = mesh.panel(e);
        let Some(t) = traction.on_panel(&panel)? else {
            continue;
        };
        if el.part != Part::Neumann {
            return Err(Error::Config(format!(
                "traction applied on non-Neumann element {e}"
            )));
        }
        let rule = gauss_legendre(el.degree + 1);
        for (j, &node) in dofs.element_nodes[e].iter().enumerate() {
            let shape = Shape::Lagrange { degree: el.degree, node: j };
            let integral: f64 = rule.integrate(|x| table.eval(shape, x).0) * panel.jacobian();
            full[2 * node] += t.x * integral;
            full[2 * node + 1] += t.y * integral;
        }
    }
    Ok(LoadFunctional {
        f: dofs.restrict(&full),
        full,
        traction: traction.clone(),
    })
}
