//! hp boundary meshes of polygonal domains, their refinement, the dof maps of
//! the displacement space (continuous Gauss–Lobatto Lagrange) and the density
//! space (discontinuous Legendre), contact constraint nodes and the coarsened
//! multiplier mesh.

use crate::geometry::{Panel, Vec2};
use crate::polynomial::gauss_lobatto_nodes;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Part {
    Dirichlet,
    Neumann,
    Contact,
}

impl Part {
    pub fn label(self) -> &'static str {
        match self {
            Part::Dirichlet => "D",
            Part::Neumann => "N",
            Part::Contact => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub v0: usize,
    pub v1: usize,
    pub part: Part,
    pub degree: usize,
    pub level: u32,
    /// Index of the parent in the mesh this one was refined from.
    pub parent: Option<usize>,
    /// Index of the initial-mesh ancestor.
    pub origin: usize,
    /// Bisection path from the ancestor, one bit per level (1 = second half).
    pub path: u64,
}

impl Element {
    fn is_sibling_of(&self, other: &Element) -> bool {
        self.level > 0
            && self.level == other.level
            && self.origin == other.origin
            && self.path >> 1 == other.path >> 1
            && self.path != other.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    H,
    P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMesh {
    pub vertices: Vec<Vec2>,
    /// Elements in loop order, counterclockwise.
    pub elements: Vec<Element>,
}

impl BoundaryMesh {
    /// Closed polygon with corners in counterclockwise order; side `i` runs from
    /// corner `i` to corner `i+1`, is split into `n[i]` equal elements of degree `p`.
    pub fn polygon(corners: &[Vec2], parts: &[Part], n: &[usize], p: usize) -> Result<Self> {
        if corners.len() < 3 || parts.len() != corners.len() || n.len() != corners.len() {
            return Err(Error::InvalidInput("polygon needs matching corners/parts/counts".into()));
        }
        if n.contains(&0) || p == 0 {
            return Err(Error::InvalidInput("element counts and degree must be positive".into()));
        }
        let mut vertices = Vec::new();
        let mut sides = Vec::new();
        for i in 0..corners.len() {
            let a = corners[i];
            let b = corners[(i + 1) % corners.len()];
            let start = vertices.len();
            for k in 0..n[i] {
                vertices.push(a + (b - a) * (k as f64 / n[i] as f64));
            }
            sides.push(start);
        }
        let nv = vertices.len();
        let mut elements = Vec::with_capacity(nv);
        for i in 0..corners.len() {
            for k in 0..n[i] {
                let v0 = sides[i] + k;
                let idx = elements.len();
                elements.push(Element {
                    v0,
                    v1: (v0 + 1) % nv,
                    part: parts[i],
                    degree: p,
                    level: 0,
                    parent: None,
                    origin: idx,
                    path: 0,
                });
            }
        }
        let mesh = Self { vertices, elements };
        mesh.validate()?;
        Ok(mesh)
    }

    /// The square `(0, 1/2)²`: bottom contact, right and top Neumann, left Dirichlet.
    pub fn benchmark(n0: usize) -> Result<Self> {
        if n0 == 0 {
            return Err(Error::InvalidInput("n0 must be at least 1".into()));
        }
        let c = [
            Vec2::new(0.0, 0.0),
            Vec2::new(0.5, 0.0),
            Vec2::new(0.5, 0.5),
            Vec2::new(0.0, 0.5),
        ];
        let parts = [Part::Contact, Part::Neumann, Part::Neumann, Part::Dirichlet];
        Self::polygon(&c, &parts, &[n0; 4], 1)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn panel(&self, e: usize) -> Panel {
        let el = &self.elements[e];
        Panel::new(self.vertices[el.v0], self.vertices[el.v1])
    }

    pub fn length(&self, e: usize) -> f64 {
        self.panel(e).length()
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.len()).map(|e| self.length(e)).sum()
    }

    pub fn part_measure(&self, part: Part) -> f64 {
        (0..self.len())
            .filter(|&e| self.elements[e].part == part)
            .map(|e| self.length(e))
            .sum()
    }

    /// Signed area (positive for counterclockwise loops).
    pub fn signed_area(&self) -> f64 {
        self.elements
            .iter()
            .map(|el| {
                let a = self.vertices[el.v0];
                let b = self.vertices[el.v1];
                0.5 * (a.x * b.y - b.x * a.y)
            })
            .sum()
    }

    /// Radius of the smallest origin-centred disc containing the boundary.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Checks the loop is closed, simple, counterclockwise, has nondegenerate
    /// elements and positive Dirichlet and contact measures.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 3 {
            return Err(Error::InvalidInput("boundary needs at least 3 elements".into()));
        }
        for (i, el) in self.elements.iter().enumerate() {
            let next = &self.elements[(i + 1) % n];
            if el.v1 != next.v0 {
                return Err(Error::InvalidInput(format!("loop broken after element {i}")));
            }
            if el.degree == 0 {
                return Err(Error::InvalidInput(format!("element {i} has degree 0")));
            }
            if self.length(i) <= 0.0 {
                return Err(Error::InvalidInput(format!("element {i} is degenerate")));
            }
        }
        let mut seen = vec![false; self.vertices.len()];
        for el in &self.elements {
            if std::mem::replace(&mut seen[el.v0], true) {
                return Err(Error::InvalidInput("vertex visited twice".into()));
            }
        }
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if self.panel(i).distance(&self.panel(j)) <= 1e-14 {
                    return Err(Error::InvalidInput(format!(
                        "elements {i} and {j} intersect"
                    )));
                }
            }
        }
        if self.signed_area() <= 0.0 {
            return Err(Error::InvalidInput("boundary must be counterclockwise".into()));
        }
        if self.part_measure(Part::Dirichlet) <= 0.0 || self.part_measure(Part::Contact) <= 0.0 {
            return Err(Error::InvalidInput(
                "Dirichlet and contact parts need positive measure".into(),
            ));
        }
        Ok(())
    }

    /// Applies H (bisection) / P (degree + 1) decisions; unmarked elements are kept.
    pub fn refine(&self, decisions: &[(usize, Refinement)]) -> Result<Self> {
        let mut action: Vec<Option<Refinement>> = vec![None; self.len()];
        for &(e, r) in decisions {
            if e >= self.len() {
                return Err(Error::InvalidInput(format!("no element {e} to refine")));
            }
            action[e] = match (action[e], r) {
                (Some(Refinement::H), _) | (_, Refinement::H) => Some(Refinement::H),
                _ => Some(Refinement::P),
            };
        }
        let mut vertices = self.vertices.clone();
        let mut elements = Vec::with_capacity(self.len() + decisions.len());
        for (i, el) in self.elements.iter().enumerate() {
            let keep = Element {
                parent: None,
                ..el.clone()
            };
            match action[i] {
                None => elements.push(keep),
                Some(Refinement::P) => elements.push(Element {
                    degree: el.degree + 1,
                    ..keep
                }),
                Some(Refinement::H) => {
                    if el.level >= 62 {
                        return Err(Error::InvalidInput("refinement depth exhausted".into()));
                    }
                    let mid = vertices.len();
                    vertices.push(0.5 * (self.vertices[el.v0] + self.vertices[el.v1]));
                    for (half, (v0, v1)) in [(el.v0, mid), (mid, el.v1)].into_iter().enumerate() {
                        elements.push(Element {
                            v0,
                            v1,
                            part: el.part,
                            degree: el.degree,
                            level: el.level + 1,
                            parent: Some(i),
                            origin: el.origin,
                            path: (el.path << 1) | half as u64,
                        });
                    }
                }
            }
        }
        Ok(Self { vertices, elements })
    }

    /// Bisects every element.
    pub fn refine_uniform(&self) -> Result<Self> {
        let all: Vec<_> = (0..self.len()).map(|e| (e, Refinement::H)).collect();
        self.refine(&all)
    }

    /// One JSON object per element: `{id, v0:[x,y], v1:[x,y], part, p, level}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Record {
            id: usize,
            v0: [f64; 2],
            v1: [f64; 2],
            part: &'static str,
            p: usize,
            level: u32,
        }
        for (id, el) in self.elements.iter().enumerate() {
            let a = self.vertices[el.v0];
            let b = self.vertices[el.v1];
            let rec = Record {
                id,
                v0: [a.x, a.y],
                v1: [b.x, b.y],
                part: el.part.label(),
                p: el.degree,
                level: el.level,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Dof numbering of the continuous displacement space (full trace and
/// Dirichlet-reduced) and of the discontinuous density space.
///
/// Scalar nodes: vertex nodes take the vertex index, element-interior
/// Gauss–Lobatto nodes follow in element order. Vector dof of node `k`,
/// component `c` is `2k + c`.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_nodes: usize,
    /// Per element, the scalar node of each local Gauss–Lobatto node (local 0 = `v0`).
    pub element_nodes: Vec<Vec<usize>>,
    pub node_points: Vec<Vec2>,
    /// Reduced index of every full vector dof, `None` on the closed Dirichlet part.
    pub reduced_of_full: Vec<Option<usize>>,
    pub full_of_reduced: Vec<usize>,
    /// First density dof of each element; element `e`, component `c`, mode `k`
    /// is `density_offsets[e] + c·p_e + k`.
    pub density_offsets: Vec<usize>,
    pub n_density: usize,
}

impl DofMap {
    pub fn new(mesh: &BoundaryMesh) -> Result<Self> {
        let nv = mesh.vertices.len();
        let mut node_points: Vec<Vec2> = mesh.vertices.clone();
        let mut element_nodes = Vec::with_capacity(mesh.len());
        for (e, el) in mesh.elements.iter().enumerate() {
            let xs = gauss_lobatto_nodes(el.degree)?;
            let panel = mesh.panel(e);
            let mut nodes = vec![el.v0];
            for &x in &xs[1..el.degree] {
                nodes.push(node_points.len());
                node_points.push(panel.point(x));
            }
            nodes.push(el.v1);
            element_nodes.push(nodes);
        }
        let n_nodes = node_points.len();
        let mut dirichlet = vec![false; n_nodes];
        for (e, el) in mesh.elements.iter().enumerate() {
            if el.part == Part::Dirichlet {
                for &k in &element_nodes[e] {
                    dirichlet[k] = true;
                }
            }
        }
        let mut reduced_of_full = vec![None; 2 * n_nodes];
        let mut full_of_reduced = Vec::new();
        for k in 0..n_nodes {
            if !dirichlet[k] {
                for c in 0..2 {
                    reduced_of_full[2 * k + c] = Some(full_of_reduced.len());
                    full_of_reduced.push(2 * k + c);
                }
            }
        }
        let mut density_offsets = Vec::with_capacity(mesh.len());
        let mut n_density = 0;
        for el in &mesh.elements {
            density_offsets.push(n_density);
            n_density += 2 * el.degree;
        }
        debug_assert!(nv <= n_nodes);
        Ok(Self {
            n_nodes,
            element_nodes,
            node_points,
            reduced_of_full,
            full_of_reduced,
            density_offsets,
            n_density,
        })
    }

    /// Full-trace vector dof count.
    pub fn n_full(&self) -> usize {
        2 * self.n_nodes
    }

    /// Dirichlet-reduced dof count N_D.
    pub fn n_reduced(&self) -> usize {
        self.full_of_reduced.len()
    }

    pub fn density_index(&self, mesh: &BoundaryMesh, e: usize, c: usize, k: usize) -> usize {
        self.density_offsets[e] + c * mesh.elements[e].degree + k
    }

    /// Extends a reduced vector by zero on the Dirichlet part.
    pub fn expand(&self, reduced: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        let mut full = nalgebra::DVector::zeros(self.n_full());
        for (r, &f) in self.full_of_reduced.iter().enumerate() {
            full[f] = reduced[r];
        }
        full
    }

    pub fn restrict(&self, full: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.n_reduced(),
            self.full_of_reduced.iter().map(|&f| full[f]),
        )
    }
}

/// For every element of `fine`, the element of `coarse` containing it and the
/// parameter sub-interval `[s0, s1] ⊂ [−1, 1]` it occupies there. Both meshes
/// must stem from the same initial mesh by bisection.
pub fn nested_location(fine: &BoundaryMesh, coarse: &BoundaryMesh) -> Result<Vec<(usize, f64, f64)>> {
    let index: HashMap<(usize, u32, u64), usize> = coarse
        .elements
        .iter()
        .enumerate()
        .map(|(i, el)| ((el.origin, el.level, el.path), i))
        .collect();
    fine.elements
        .iter()
        .enumerate()
        .map(|(e, el)| {
            for up in 0..=el.level {
                let level = el.level - up;
                if let Some(&c) = index.get(&(el.origin, level, el.path >> up)) {
                    let n = (1u64 << up) as f64;
                    let k = (el.path & ((1u64 << up) - 1)) as f64;
                    return Ok((c, -1.0 + 2.0 * k / n, -1.0 + 2.0 * (k + 1.0) / n));
                }
            }
            Err(Error::InvalidInput(format!("element {e} has no ancestor in the coarse mesh")))
        })
        .collect()
}

/// A Gauss–Lobatto point on the contact boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintNode {
    pub point: Vec2,
    pub element: usize,
    /// Scalar node of the displacement space located here.
    pub node: usize,
}

/// Gauss–Lobatto nodes of all contact elements, shared endpoints once, in loop order.
pub fn constraint_node_set(mesh: &BoundaryMesh, dofs: &DofMap) -> Vec<ConstraintNode> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (e, el) in mesh.elements.iter().enumerate() {
        if el.part != Part::Contact {
            continue;
        }
        for &k in &dofs.element_nodes[e] {
            if seen.insert(k, ()).is_none() {
                out.push(ConstraintNode {
                    point: dofs.node_points[k],
                    element: e,
                    node: k,
                });
            }
        }
    }
    out
}

/// One element of the coarsened multiplier mesh: a run of consecutive contact
/// elements carrying one scalar Legendre expansion of degree `degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierElement {
    /// Mesh elements covered, in loop order.
    pub children: Vec<usize>,
    pub degree: usize,
    pub length: f64,
}

impl MultiplierElement {
    pub fn n_modes(&self) -> usize {
        self.degree + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierMesh {
    pub elements: Vec<MultiplierElement>,
    pub offsets: Vec<usize>,
    pub n_dofs: usize,
}

impl MultiplierMesh {
    fn from_elements(elements: Vec<MultiplierElement>) -> Self {
        let mut offsets = Vec::with_capacity(elements.len());
        let mut n = 0;
        for m in &elements {
            offsets.push(n);
            n += m.n_modes();
        }
        Self {
            elements,
            offsets,
            n_dofs: n,
        }
    }

    /// The multiplier element containing mesh element `e` and the parameter
    /// sub-interval `[s0, s1] ⊂ [−1, 1]` it occupies there.
    pub fn locate(&self, mesh: &BoundaryMesh, e: usize) -> Option<(usize, f64, f64)> {
        for (m, me) in self.elements.iter().enumerate() {
            let mut start = 0.0;
            for &c in &me.children {
                let len = mesh.length(c);
                if c == e {
                    let s0 = -1.0 + 2.0 * start / me.length;
                    let s1 = -1.0 + 2.0 * (start + len) / me.length;
                    return Some((m, s0, s1));
                }
                start += len;
            }
        }
        None
    }
}

/// Merges contact elements pairwise one level back (bisection siblings first,
/// the remaining ones consecutively in loop order) with degree `max(p − 1, 0)`.
/// Only elements of equal degree are merged; an element left on its own gets
/// `max(p − 2, 0)`.
pub fn coarsen_multiplier_space(mesh: &BoundaryMesh) -> Result<MultiplierMesh> {
    let contact: Vec<usize> = (0..mesh.len())
        .filter(|&e| mesh.elements[e].part == Part::Contact)
        .collect();
    if contact.is_empty() {
        return Err(Error::Config("no contact elements for the multiplier space".into()));
    }
    let consecutive = |a: usize, b: usize| {
        let ea = &mesh.elements[a];
        let eb = &mesh.elements[b];
        ea.v1 == eb.v0
            && ea.degree == eb.degree
            && (mesh.panel(a).tangent() - mesh.panel(b).tangent()).norm() < 1e-12
    };
    let m = contact.len();
    let mut group: Vec<Option<usize>> = vec![None; m];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..m.saturating_sub(1) {
        let (a, b) = (contact[i], contact[i + 1]);
        if group[i].is_none()
            && consecutive(a, b)
            && mesh.elements[a].is_sibling_of(&mesh.elements[b])
        {
            group[i] = Some(groups.len());
            group[i + 1] = Some(groups.len());
            groups.push(vec![i, i + 1]);
        }
    }
    let mut i = 0;
    while i < m {
        if group[i].is_none() {
            if i + 1 < m && group[i + 1].is_none() && consecutive(contact[i], contact[i + 1]) {
                group[i] = Some(groups.len());
                group[i + 1] = Some(groups.len());
                groups.push(vec![i, i + 1]);
                i += 2;
                continue;
            }
            group[i] = Some(groups.len());
            groups.push(vec![i]);
        }
        i += 1;
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&g| groups[g][0]);
    let elements = order
        .into_iter()
        .map(|g| {
            let children: Vec<usize> = groups[g].iter().map(|&i| contact[i]).collect();
            // a single element has only p − 1 interior test functions of its own
            let drop = if children.len() == 1 { 2 } else { 1 };
            let degree = children
                .iter()
                .map(|&c| mesh.elements[c].degree.saturating_sub(drop))
                .max()
                .unwrap_or(0);
            let length = children.iter().map(|&c| mesh.length(c)).sum();
            MultiplierElement {
                children,
                degree,
                length,
            }
        })
        .collect();
    Ok(MultiplierMesh::from_elements(elements))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn benchmark_single_element_per_side() {
        let m = BoundaryMesh::benchmark(1).unwrap();
        let parts: Vec<_> = m.elements.iter().map(|e| e.part).collect();
        assert_eq!(
            parts,
            vec![Part::Contact, Part::Neumann, Part::Neumann, Part::Dirichlet]
        );
        assert!(m.elements.iter().all(|e| e.degree == 1));
        assert!(BoundaryMesh::benchmark(0).is_err());
    }

    #[test]
    fn benchmark_perimeter_and_normals() {
        let m = BoundaryMesh::benchmark(2).unwrap();
        assert_eq!(m.len(), 8);
        assert_abs_diff_eq!(m.perimeter(), 2.0, epsilon = 1e-15);
        let m = BoundaryMesh::benchmark(4).unwrap();
        for e in 0..m.len() {
            let panel = m.panel(e);
            if m.elements[e].part == Part::Contact {
                assert_eq!(panel.normal(), Vec2::new(0.0, -1.0));
            }
            // the normal points away from the centre of the square
            let c = Vec2::new(0.25, 0.25);
            assert!((panel.midpoint() - c).dot(&panel.normal()) > 0.0);
        }
    }

    #[test]
    fn constraint_nodes() {
        let m = BoundaryMesh::benchmark(1).unwrap();
        let d = DofMap::new(&m).unwrap();
        assert_eq!(constraint_node_set(&m, &d).len(), 2);
        let m2 = BoundaryMesh::benchmark(2).unwrap();
        let d2 = DofMap::new(&m2).unwrap();
        assert_eq!(constraint_node_set(&m2, &d2).len(), 3);
        // element [0, 1/4]×{0} with p = 2
        let m3 = m2.refine(&[(0, Refinement::P)]).unwrap();
        let d3 = DofMap::new(&m3).unwrap();
        let pts: Vec<_> = constraint_node_set(&m3, &d3)
            .into_iter()
            .filter(|c| c.element == 0)
            .map(|c| c.point)
            .collect();
        assert_eq!(pts.len(), 3);
        let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 0.125, 0.25]);
        assert!(pts.iter().all(|p| p.y == 0.0));
    }

    #[test]
    fn refine_examples() {
        let m = BoundaryMesh::benchmark(1).unwrap();
        let h = m.refine(&[(2, Refinement::H)]).unwrap();
        assert_eq!(h.len(), 5);
        h.validate().unwrap();
        let p = m.refine(&[(0, Refinement::P)]).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.elements[0].degree, 2);
        let hh = h.refine(&[(2, Refinement::H), (3, Refinement::H)]).unwrap();
        assert_eq!(hh.len(), 7);
        let total: f64 = (2..6).map(|e| hh.length(e)).sum();
        assert_abs_diff_eq!(total, m.length(2), epsilon = 1e-15);
        assert!((2..6).all(|e| hh.elements[e].level == 2 && hh.elements[e].origin == 2));
    }

    #[test]
    fn multiplier_coarsening_examples() {
        // 4 uniform contact elements, p = 1 → 2 elements, q = 0
        let m = BoundaryMesh::benchmark(2).unwrap().refine_uniform().unwrap();
        let mm = coarsen_multiplier_space(&m).unwrap();
        assert_eq!(mm.elements.len(), 2);
        assert!(mm.elements.iter().all(|e| e.degree == 0));
        assert_eq!(mm.n_dofs, 2);
        // 2 elements with p = 3 → 1 element, q = 2
        let m = BoundaryMesh::benchmark(1).unwrap();
        let m = m.refine(&[(0, Refinement::H)]).unwrap();
        let m = m.refine(&[(0, Refinement::P), (1, Refinement::P)]).unwrap();
        let m = m.refine(&[(0, Refinement::P), (1, Refinement::P)]).unwrap();
        let mm = coarsen_multiplier_space(&m).unwrap();
        assert_eq!(mm.elements.len(), 1);
        assert_eq!(mm.elements[0].degree, 2);
        // unrefined contact side with 2 elements pairs by position
        let m = BoundaryMesh::benchmark(2).unwrap();
        let mm = coarsen_multiplier_space(&m).unwrap();
        assert_eq!(mm.elements.len(), 1);
        assert_eq!(mm.elements[0].children, vec![0, 1]);
    }

    #[test]
    fn coarsening_prefers_siblings() {
        // [A | B1 B2 | C] with B bisected: siblings merge, A and C stay apart
        let m = BoundaryMesh::benchmark(3).unwrap();
        let m = m.refine(&[(1, Refinement::H)]).unwrap();
        let mm = coarsen_multiplier_space(&m).unwrap();
        let kids: Vec<_> = mm.elements.iter().map(|e| e.children.clone()).collect();
        assert_eq!(kids, vec![vec![0], vec![1, 2], vec![3]]);
        let (g, s0, s1) = mm.locate(&m, 2).unwrap();
        assert_eq!(g, 1);
        assert_abs_diff_eq!(s0, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s1, 1.0, epsilon = 1e-15);
        // siblings of different degree stay apart; single elements drop two degrees
        let m = m.refine(&[(1, Refinement::P)]).unwrap();
        let m = m.refine(&[(1, Refinement::P)]).unwrap();
        let mm = coarsen_multiplier_space(&m).unwrap();
        let kids: Vec<_> = mm.elements.iter().map(|e| (e.children.clone(), e.degree)).collect();
        assert_eq!(kids, vec![(vec![0], 0), (vec![1], 1), (vec![2, 3], 0)]);
    }

    #[test]
    fn dof_counts() {
        let m = BoundaryMesh::benchmark(4).unwrap();
        let m = m.refine(&[(0, Refinement::P), (5, Refinement::P), (5, Refinement::P), (15, Refinement::P)]).unwrap();
        let d = DofMap::new(&m).unwrap();
        let sum_p: usize = m.elements.iter().map(|e| e.degree).sum();
        assert_eq!(d.n_density, 2 * sum_p);
        assert_eq!(d.n_full(), 2 * sum_p);
        // closed Dirichlet side: 4 elements, one of degree 2 → 6 nodes
        assert_eq!(d.n_reduced(), 2 * (d.n_nodes - 6));
    }

    #[test]
    fn jsonl_dump() {
        let m = BoundaryMesh::benchmark(1).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["part"], "C");
        assert_eq!(first["v1"], serde_json::json!([0.5, 0.0]));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn invalid_meshes_rejected() {
        let c = [Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)];
        let parts = [Part::Contact, Part::Neumann, Part::Dirichlet];
        assert!(BoundaryMesh::polygon(&c, &parts, &[1, 1, 1], 1).is_err());
        let c = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let parts = [Part::Neumann, Part::Neumann, Part::Dirichlet];
        assert!(BoundaryMesh::polygon(&c, &parts, &[1, 1, 1], 1).is_err());
    }

    proptest! {
        #[test]
        fn random_refinement_preserves_invariants(seq in proptest::collection::vec((0usize..1000, any::<bool>()), 1..30)) {
            let mut m = BoundaryMesh::benchmark(1).unwrap();
            for (pick, h) in seq {
                let e = pick % m.len();
                let before = DofMap::new(&m).unwrap();
                let r = if h { Refinement::H } else { Refinement::P };
                m = m.refine(&[(e, r)]).unwrap();
                m.validate().unwrap();
                let after = DofMap::new(&m).unwrap();
                prop_assert!(after.n_full() > before.n_full());
                prop_assert!((m.perimeter() - 2.0).abs() < 1e-13);
                let contact_p: usize = m.elements.iter().filter(|e| e.part == Part::Contact).map(|e| e.degree).sum();
                prop_assert_eq!(constraint_node_set(&m, &after).len(), 1 + contact_p);
                // independent count of non-Dirichlet Gauss–Lobatto points
                let mut pts: Vec<(i64, i64)> = vec![];
                let mut dpts: Vec<(i64, i64)> = vec![];
                for (i, el) in m.elements.iter().enumerate() {
                    let panel = m.panel(i);
                    for x in gauss_lobatto_nodes(el.degree).unwrap() {
                        let q = panel.point(x);
                        let key = ((q.x * 1e12).round() as i64, (q.y * 1e12).round() as i64);
                        pts.push(key);
                        if el.part == Part::Dirichlet { dpts.push(key); }
                    }
                }
                pts.sort(); pts.dedup(); dpts.sort(); dpts.dedup();
                prop_assert_eq!(after.n_reduced(), 2 * (pts.len() - dpts.len()));
                prop_assert_eq!(after.n_density, 2 * m.elements.iter().map(|e| e.degree).sum::<usize>());
            }
        }
    }
}
