//! Piecewise-quadratic adhesion laws `f = max/min g_i`, their smoothing
//! `S(·, ε)` by nested Zang plus-functions, and the contact functional
//! `J_ε(u) = ∫_{Γ_C} S(u_n, ε) ds` with its gradient and Jacobian.

use crate::geometry::Vec2;
use crate::kernels::{Shape, ShapeTable};
use crate::mesh::{BoundaryMesh, DofMap, Part};
use crate::polynomial::gauss_legendre;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Zang smoothing of `max(t, 0)`.
pub fn plus_smooth(t: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(plus(t, eps))
}

/// Derivative of [`plus_smooth`], in `[0, 1]`.
pub fn plus_smooth_deriv(t: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(plus_d(t, eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("regularization parameter must be positive, got {eps}")))
    }
}

#[inline]
fn plus(t: f64, eps: f64) -> f64 {
    if t < -0.5 * eps {
        0.0
    } else if t <= 0.5 * eps {
        (t + 0.5 * eps).powi(2) / (2.0 * eps)
    } else {
        t
    }
}

#[inline]
fn plus_d(t: f64, eps: f64) -> f64 {
    if t < -0.5 * eps {
        0.0
    } else if t <= 0.5 * eps {
        t / eps + 0.5
    } else {
        1.0
    }
}

/// Second derivative, right-branch value at the kinks.
#[inline]
fn plus_dd(t: f64, eps: f64) -> f64 {
    if (-0.5 * eps..0.5 * eps).contains(&t) {
        1.0 / eps
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawMode {
    Max,
    Min,
}

/// `g(y) = (a/2) y² + c y + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl Quadratic {
    pub fn value(&self, y: f64) -> f64 {
        0.5 * self.a * y * y + self.c * y + self.d
    }

    pub fn deriv(&self, y: f64) -> f64 {
        self.a * y + self.c
    }

    fn neg(&self) -> Self {
        Self {
            a: -self.a,
            c: -self.c,
            d: -self.d,
        }
    }
}

/// `f(x) = mode_i g_i(y)` with `y = offset + sign · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSpec {
    pub mode: LawMode,
    pub pieces: Vec<Quadratic>,
    pub offset: f64,
    pub sign: f64,
}

/// Sawtooth parameters of the benchmark law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SawtoothParams {
    pub a1: f64,
    pub a2: f64,
    pub t1: f64,
    pub t2: f64,
}

impl Default for SawtoothParams {
    fn default() -> Self {
        Self {
            a1: 0.05,
            a2: 0.03,
            t1: 0.02,
            t2: 0.04,
        }
    }
}

impl LawSpec {
    pub fn new(mode: LawMode, pieces: Vec<Quadratic>, offset: f64, sign: f64) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidInput("law needs at least one piece".into()));
        }
        let finite = pieces.iter().all(|q| q.a.is_finite() && q.c.is_finite() && q.d.is_finite());
        if !finite || !offset.is_finite() || !(sign == 1.0 || sign == -1.0) {
            return Err(Error::InvalidInput("law coefficients must be finite, sign ±1".into()));
        }
        Ok(Self {
            mode,
            pieces,
            offset,
            sign,
        })
    }

    /// `min{g₁, g₂, g₃}` evaluated at the opening `y = gap − u_n`.
    pub fn benchmark(params: SawtoothParams, gap: f64) -> Self {
        let SawtoothParams { a1, a2, t1, t2 } = params;
        let b2 = a2 / (2.0 * t2);
        let d2 = a1 * t1 / 2.0;
        let d3 = b2 * (t2 * t2 - t1 * t1) + d2;
        let pieces = vec![
            Quadratic { a: a1 / t1, c: 0.0, d: 0.0 },
            Quadratic { a: 2.0 * b2, c: 0.0, d: d2 - b2 * t1 * t1 },
            Quadratic { a: 0.0, c: 0.0, d: d3 },
        ];
        Self {
            mode: LawMode::Min,
            pieces,
            offset: gap,
            sign: -1.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            mode: LawMode::Max,
            pieces: vec![Quadratic { a: 0.0, c: 0.0, d: 0.0 }],
            offset: 0.0,
            sign: 1.0,
        }
    }

    pub fn argument(&self, x: f64) -> f64 {
        self.offset + self.sign * x
    }

    /// The nonsmooth law `f(x)`.
    pub fn exact(&self, x: f64) -> f64 {
        let y = self.argument(x);
        let vals = self.pieces.iter().map(|g| g.value(y));
        match self.mode {
            LawMode::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            LawMode::Min => vals.fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_curvature(&self) -> f64 {
        self.pieces.iter().map(|g| g.a.abs()).fold(0.0, f64::max)
    }
}

/// Value, first and second derivative and chain-rule weights of the nested
/// smoothing of `max g_i` at `y`.
fn nested_max(pieces: &[Quadratic], y: f64, eps: f64) -> (f64, f64, f64, Vec<f64>) {
    let m = pieces.len();
    // A_k = p̂(g_{k+1} − g_k + A_{k+1}), evaluated from the inside out.
    let (mut a, mut ad, mut add) = (0.0, 0.0, 0.0);
    let mut w = vec![0.0; m.saturating_sub(1)];
    for k in (0..m.saturating_sub(1)).rev() {
        let (g0, g1) = (&pieces[k], &pieces[k + 1]);
        let arg = g1.value(y) - g0.value(y) + a;
        let arg_d = g1.deriv(y) - g0.deriv(y) + ad;
        let arg_dd = g1.a - g0.a + add;
        let wk = plus_d(arg, eps);
        w[k] = wk;
        add = plus_dd(arg, eps) * arg_d * arg_d + wk * arg_dd;
        ad = wk * arg_d;
        a = plus(arg, eps);
    }
    let s = pieces[0].value(y) + a;
    let sd = pieces[0].deriv(y) + ad;
    let sdd = pieces[0].a + add;
    // Λ_1 = 1 − w_1, Λ_i = w_1⋯w_{i−1}(1 − w_i), Λ_m = w_1⋯w_{m−1}
    let mut lambda = Vec::with_capacity(m);
    let mut prod = 1.0;
    for k in 0..m {
        let wk = if k + 1 < m { w[k] } else { 1.0 };
        lambda.push(prod * (1.0 - if k + 1 < m { wk } else { 0.0 }));
        prod *= wk;
    }
    (s, sd, sdd, lambda)
}

/// A law together with its regularization parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedLaw {
    pub law: LawSpec,
    pub eps: f64,
    neg: Vec<Quadratic>,
}

impl RegularizedLaw {
    pub fn new(law: LawSpec, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let neg = law.pieces.iter().map(Quadratic::neg).collect();
        Ok(Self { law, eps, neg })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.law.clone(), eps)
    }

    /// `(S, S_x, S_xx)` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let y = self.law.argument(x);
        let sign = self.law.sign;
        match self.law.mode {
            LawMode::Max => {
                let (s, sd, sdd, _) = nested_max(&self.law.pieces, y, self.eps);
                (s, sign * sd, sdd)
            }
            LawMode::Min => {
                let (s, sd, sdd, _) = nested_max(&self.neg, y, self.eps);
                (-s, -sign * sd, -sdd)
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    /// Weights `Λ_i ≥ 0`, `Σ Λ_i = 1`, with `S_x = sign · Σ Λ_i g_i'(y)`.
    pub fn weights(&self, x: f64) -> Vec<f64> {
        let y = self.law.argument(x);
        let pieces = match self.law.mode {
            LawMode::Max => &self.law.pieces,
            LawMode::Min => &self.neg,
        };
        nested_max(pieces, y, self.eps).3
    }
}

/// `smooth_value` of the law at `x`.
pub fn smooth_value(law: &RegularizedLaw, x: f64) -> f64 {
    law.value(x)
}

/// `smooth_deriv` of the law at `x`.
pub fn smooth_deriv(law: &RegularizedLaw, x: f64) -> f64 {
    law.deriv(x)
}

/// Smallest sampled `(S_x(x₁) − S_x(x₂))(x₁ − x₂)/|x₁ − x₂|²` over pairs
/// drawn uniformly from `[−radius, radius]`.
pub fn check_uniqueness_bound(law: &LawSpec, eps: f64, n_samples: usize, radius: f64, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let reg = RegularizedLaw::new(law.clone(), eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut drawn = 0;
    while drawn < n_samples {
        let x1: f64 = rng.gen_range(-radius..=radius);
        let x2: f64 = rng.gen_range(-radius..=radius);
        if x1 == x2 {
            continue;
        }
        drawn += 1;
        let ratio = (reg.deriv(x1) - reg.deriv(x2)) / (x1 - x2);
        worst = worst.min(ratio);
    }
    Ok(worst)
}

/// CSV `x, S, S_x` over openings `x ∈ [0, max_opening]`; `S` and `S_x` are taken
/// at the displacement producing that opening.
pub fn write_law_csv<W: Write>(law: &RegularizedLaw, max_opening: f64, samples: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "S", "S_x"])?;
    for i in 0..samples {
        let y = max_opening * i as f64 / (samples - 1).max(1) as f64;
        let x = (y - law.law.offset) / law.law.sign;
        let (s, sx, _) = law.eval(x);
        w.write_record([y.to_string(), s.to_string(), sx.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One quadrature point on the contact boundary with the normal traces of
/// all full-trace basis functions that do not vanish there.
#[derive(Debug, Clone)]
pub struct ContactPoint {
    pub element: usize,
    pub xi: f64,
    pub point: Vec2,
    pub weight: f64,
    /// `(full dof, (φ_dof · n)(point))`.
    pub coeffs: Vec<(usize, f64)>,
}

/// Composite Gauss rule on Γ_C with `⌈p⌉ + extra` points per element.
#[derive(Debug, Clone)]
pub struct ContactQuadrature {
    pub points: Vec<ContactPoint>,
    pub n_full: usize,
}

impl ContactQuadrature {
    pub fn new(mesh: &BoundaryMesh, dofs: &DofMap, extra: usize) -> Self {
        let max_p = mesh.elements.iter().map(|e| e.degree).max().unwrap_or(1);
        let table = ShapeTable::new(max_p);
        let mut points = Vec::new();
        for (e, el) in mesh.elements.iter().enumerate() {
            if el.part != Part::Contact {
                continue;
            }
            let panel = mesh.panel(e);
            let n = panel.normal();
            let rule = gauss_legendre(el.degree + extra);
            for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
                let mut coeffs = Vec::with_capacity(2 * (el.degree + 1));
                for (j, &node) in dofs.element_nodes[e].iter().enumerate() {
                    let phi = table.eval(Shape::Lagrange { degree: el.degree, node: j }, xi).0;
                    for c in 0..2 {
                        let v = phi * n[c];
                        if v != 0.0 {
                            coeffs.push((2 * node + c, v));
                        }
                    }
                }
                points.push(ContactPoint {
                    element: e,
                    xi,
                    point: panel.point(xi),
                    weight: w * panel.jacobian(),
                    coeffs,
                });
            }
        }
        Self {
            points,
            n_full: dofs.n_full(),
        }
    }

    pub fn normal_trace(&self, q: usize, u_full: &DVector<f64>) -> f64 {
        self.points[q].coeffs.iter().map(|&(i, c)| c * u_full[i]).sum()
    }

    /// `J_ε(u) = ∫ S(u_n)`.
    pub fn energy(&self, u_full: &DVector<f64>, law: &RegularizedLaw) -> f64 {
        (0..self.points.len())
            .map(|q| self.points[q].weight * law.value(self.normal_trace(q, u_full)))
            .sum()
    }

    /// `⟨DJ_ε(u), φ_j⟩ = ∫ S_x(u_n) (φ_j)_n`.
    pub fn gradient(&self, u_full: &DVector<f64>, law: &RegularizedLaw) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_full);
        for (q, p) in self.points.iter().enumerate() {
            let sx = law.deriv(self.normal_trace(q, u_full));
            for &(i, c) in &p.coeffs {
                g[i] += p.weight * sx * c;
            }
        }
        g
    }

    /// `∫ S_xx(u_n) (φ_i)_n (φ_j)_n`.
    pub fn jacobian(&self, u_full: &DVector<f64>, law: &RegularizedLaw) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_full, self.n_full);
        for (q, p) in self.points.iter().enumerate() {
            let sxx = law.eval(self.normal_trace(q, u_full)).2;
            if sxx == 0.0 {
                continue;
            }
            let ws = p.weight * sxx;
            for &(i, ci) in &p.coeffs {
                for &(j, cj) in &p.coeffs {
                    h[(i, j)] += ws * (ci * cj);
                }
            }
        }
        h
    }
}

/// `DJ_ε(u)` on the full trace space.
pub fn assemble_dj(u_full: &DVector<f64>, mesh: &BoundaryMesh, dofs: &DofMap, law: &RegularizedLaw) -> DVector<f64> {
    ContactQuadrature::new(mesh, dofs, 17).gradient(u_full, law)
}

/// Generalized Jacobian of `DJ_ε` on the full trace space.
pub fn assemble_dj_jacobian(u_full: &DVector<f64>, mesh: &BoundaryMesh, dofs: &DofMap, law: &RegularizedLaw) -> DMatrix<f64> {
    ContactQuadrature::new(mesh, dofs, 17).jacobian(u_full, law)
}
