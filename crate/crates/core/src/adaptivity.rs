//! Solve–mark–refine: Dörfler marking and the Legendre-decay h/p decision.

use crate::experiments::{solve_level, Level, Problem};
use crate::kernels::{displacement_at, ShapeTable};
use crate::mesh::{BoundaryMesh, DofMap, Part, Refinement};
use crate::steklov::SteklovOperator;
use crate::polynomial::{gauss_legendre, legendre_values};
use crate::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Uniform,
    H,
    Hp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub theta: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub max_dof: usize,
    pub mode: Mode,
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta = {} not in (0, 1)", self.theta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta = {} not in (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Minimal set carrying `θ·Σ` of the indicators: descending sort (ties by
/// lower id) and shortest prefix. `None` when all indicators vanish.
pub fn doerfler_mark(indicators: &[f64], theta: f64) -> Option<Vec<usize>> {
    let total: f64 = indicators.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| indicators[b].total_cmp(&indicators[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for e in order {
        if acc >= theta * total {
            break;
        }
        acc += indicators[e];
        marked.push(e);
    }
    Some(marked)
}

/// `a_i = (2i+1)/2 ∫ v L_i`, Gauss with `p + 9` points.
pub fn legendre_coefficients(v: impl Fn(f64) -> f64, p: usize) -> Vec<f64> {
    let rule = gauss_legendre(p + 9);
    let mut a = vec![0.0; p + 1];
    for (&x, &w) in rule.points.iter().zip(&rule.weights) {
        let fx = v(x);
        for (i, l) in legendre_values(p, x).iter().enumerate() {
            a[i] += w * fx * l;
        }
    }
    for (i, ai) in a.iter_mut().enumerate() {
        *ai *= (2 * i + 1) as f64 / 2.0;
    }
    a
}

/// Least-squares slope of `log|a_i|` over `i` with `|a_i| > 1e−14`;
/// `None` with fewer than two usable coefficients.
pub fn decay_slope(a: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = a
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-14)
        .map(|(i, v)| (i as f64, v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// P when every direction decays with `e^{m} ≤ δ` (or lacks data), else H.
pub fn decide_refinement(slopes: &[Option<f64>], delta: f64) -> Refinement {
    if slopes.iter().all(|m| m.is_none_or(|m| m.exp() <= delta)) {
        Refinement::P
    } else {
        Refinement::H
    }
}

/// Decay slopes of both displacement components on Γ_N ∪ Γ_C elements and of
/// both density components on Γ_D elements.
pub fn element_slopes(mesh: &BoundaryMesh, dofs: &DofMap, u_full: &DVector<f64>, psi: &DVector<f64>, e: usize) -> Vec<Option<f64>> {
    let el = &mesh.elements[e];
    if el.part == Part::Dirichlet {
        let q = el.degree - 1;
        (0..2)
            .map(|c| {
                let a: Vec<f64> = (0..=q).map(|k| psi[dofs.density_index(mesh, e, c, k)]).collect();
                decay_slope(&a)
            })
            .collect()
    } else {
        let table = ShapeTable::new(el.degree);
        (0..2)
            .map(|c| {
                let a = legendre_coefficients(|x| displacement_at(&table, mesh, dofs, u_full, e, x)[c], el.degree);
                decay_slope(&a)
            })
            .collect()
    }
}

/// Refinement decisions for the marked elements.
pub fn decisions(level: &Level, marked: &[usize], mode: Mode, delta: f64) -> Vec<(usize, Refinement)> {
    let psi = &level.psi;
    marked
        .iter()
        .map(|&e| {
            let r = match mode {
                Mode::Hp => decide_refinement(
                    &element_slopes(&level.mesh, &level.dofs, &level.u_full, psi, e),
                    delta,
                ),
                _ => Refinement::H,
            };
            (e, r)
        })
        .collect()
}

/// Levels of an adaptive run; `fine_op` belongs to the last level.
pub struct LoopOutput {
    pub levels: Vec<Level>,
    pub fine_op: Option<SteklovOperator>,
    /// Set when the loop ended early; the levels so far are kept.
    pub error: Option<Error>,
}

/// Runs solve–estimate–mark–refine from `problem.initial_mesh()`; `on_level`
/// sees every solved level.
pub fn adaptive_loop(
    problem: &Problem,
    cfg: &AdaptiveConfig,
    mut on_level: impl FnMut(&Level) -> Result<()>,
) -> LoopOutput {
    let mut out = LoopOutput { levels: Vec::new(), fine_op: None, error: None };
    if let Err(e) = cfg.validate() {
        out.error = Some(e);
        return out;
    }
    let mut mesh = match problem.initial_mesh() {
        Ok(m) => m,
        Err(e) => {
            out.error = Some(e);
            return out;
        }
    };
    for it in 0..cfg.max_iter {
        let (level, op) = match solve_level(problem, mesh.clone(), it) {
            Ok(l) => l,
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        };
        out.fine_op = Some(op);
        let hook = on_level(&level);
        let next = match cfg.mode {
            Mode::Uniform => Some(mesh.refine_uniform()),
            Mode::H | Mode::Hp => {
                let eta: Vec<f64> = level.indicators.iter().map(|r| r.total()).collect();
                doerfler_mark(&eta, cfg.theta).map(|marked| mesh.refine(&decisions(&level, &marked, cfg.mode, cfg.delta)))
            }
        };
        out.levels.push(level);
        if let Err(e) = hook {
            out.error = Some(e);
            return out;
        }
        let Some(next) = next else { break };
        mesh = match next {
            Ok(m) => m,
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        };
        let next_dof = DofMap::new(&mesh).map(|d| d.n_reduced());
        if it + 1 == cfg.max_iter || next_dof.map_or(true, |n| n > cfg.max_dof) {
            break;
        }
    }
    out
}
