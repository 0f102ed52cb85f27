//! Quadrature rules for double integrals over pairs of straight panels.
//!
//! Identical panels use the substitution `z = |s − t|` and adjacent panels a
//! polar (Duffy) substitution about the shared vertex, both with geometrically
//! graded composite Gauss rules towards the singular point. Disjoint panels use
//! tensor Gauss rules, subdivided until the sub-panels are well separated.

use crate::geometry::{Contact, Panel, Vec2};
use crate::polynomial::{gauss_legendre, Rule1d};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureOptions {
    /// Regular pairs use `p + regular_extra` Gauss points per direction.
    pub regular_extra: usize,
    /// Sub-panels are integrated directly once `dist ≥ admissibility · max(len)`.
    pub admissibility: f64,
    pub max_depth: usize,
    /// Geometric grading ratio of the composite rule towards the singularity.
    pub grading: f64,
    pub levels: usize,
    /// Points on the outermost graded interval, beyond the polynomial degree.
    pub singular_extra: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            regular_extra: 4,
            admissibility: 3.0,
            max_depth: 40,
            grading: 0.15,
            levels: 16,
            singular_extra: 16,
        }
    }
}

/// Points `(ξ, η)` in the reference coordinates of the test and trial panel,
/// weights for `dξ dη`.
#[derive(Debug, Clone)]
pub struct PairRule {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub w: Vec<f64>,
    pub contact: Contact,
}

impl Default for PairRule {
    fn default() -> Self {
        Self {
            xi: vec![],
            eta: vec![],
            w: vec![],
            contact: Contact::Disjoint,
        }
    }
}

impl PairRule {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `y(η) − x(ξ)` for point `q`, computed without cancellation near the
    /// singular point of identical and touching panels.
    pub fn offset(&self, q: usize, test: &Panel, trial: &Panel) -> Vec2 {
        let (xi, eta) = (self.xi[q], self.eta[q]);
        match self.contact {
            Contact::Identical => (test.b - test.a) * (0.5 * (eta - xi)),
            Contact::Vertex(ea, eb) => {
                let (far_a, sa) = if ea { (test.a, 0.5 * (1.0 - xi)) } else { (test.b, 0.5 * (1.0 + xi)) };
                let (v, far_b, sb) = if eb {
                    (trial.b, trial.a, 0.5 * (1.0 - eta))
                } else {
                    (trial.a, trial.b, 0.5 * (1.0 + eta))
                };
                (far_b - v) * sb - (far_a - v) * sa
            }
            Contact::Disjoint => trial.point(eta) - test.point(xi),
        }
    }

    fn push(&mut self, xi: f64, eta: f64, w: f64) {
        self.xi.push(xi);
        self.eta.push(eta);
        self.w.push(w);
    }
}

/// Composite Gauss rule on `[0, 1]`, graded geometrically towards 0, with
/// point counts increasing linearly away from the singular end.
pub fn graded_rule(grading: f64, levels: usize, n_min: usize, n_max: usize) -> Rule1d {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut push = |a: f64, b: f64, n: usize| {
        let r = gauss_legendre(n).mapped(a, b);
        points.extend(r.points);
        weights.extend(r.weights);
    };
    let slope = (n_max.saturating_sub(n_min)) as f64 / levels.max(1) as f64;
    let count = |j: usize| n_min + (slope * j as f64).round() as usize;
    push(0.0, grading.powi(levels as i32), count(0));
    for j in 1..=levels {
        let k = levels - j;
        push(grading.powi(k as i32 + 1), grading.powi(k as i32), count(j));
    }
    Rule1d { points, weights }
}

/// Rules for all panel pairs, with the 1D ingredients precomputed.
#[derive(Debug, Clone)]
pub struct PairQuadrature {
    pub opts: QuadratureOptions,
    gauss: Vec<Rule1d>,
    graded: Vec<Rule1d>,
}

impl PairQuadrature {
    pub fn new(opts: QuadratureOptions) -> Self {
        let gauss = (0..=64).map(|n| gauss_legendre(n.max(1))).collect();
        Self {
            opts,
            gauss,
            graded: Vec::new(),
        }
    }

    fn gauss(&self, n: usize) -> Rule1d {
        if n < self.gauss.len() {
            self.gauss[n].clone()
        } else {
            gauss_legendre(n)
        }
    }

    fn graded(&self, degree: usize) -> Rule1d {
        if let Some(r) = self.graded.get(degree) {
            return r.clone();
        }
        let o = &self.opts;
        graded_rule(o.grading, o.levels, 4, degree + o.singular_extra)
    }

    /// Prepares graded rules for all degrees up to `max_degree`.
    pub fn with_max_degree(mut self, max_degree: usize) -> Self {
        let o = self.opts.clone();
        self.graded = (0..=max_degree)
            .map(|d| graded_rule(o.grading, o.levels, 4, d + o.singular_extra))
            .collect();
        self
    }

    /// Rule for `∫∫ f(ξ, η) dξ dη` on the pair; `degree` is the highest
    /// polynomial degree of the shape functions involved.
    pub fn rule(&self, test: &Panel, trial: &Panel, degree: usize) -> PairRule {
        match test.classify(trial) {
            Contact::Identical => self.identical(degree),
            Contact::Vertex(ea, eb) => self.vertex(ea, eb, degree),
            Contact::Disjoint => {
                let mut rule = PairRule::default();
                let n = degree + self.opts.regular_extra;
                self.regular(test, trial, (-1.0, 1.0), (-1.0, 1.0), n, 0, &mut rule);
                rule
            }
        }
    }

    /// `s, t ∈ [0, 1]`: `s = t + z` and `t = s + z`, `t = (1 − z) w`.
    fn identical(&self, degree: usize) -> PairRule {
        let zr = self.graded(degree);
        let wr = self.gauss(degree + 3).mapped(0.0, 1.0);
        let mut rule = PairRule {
            contact: Contact::Identical,
            ..Default::default()
        };
        for (&z, &wz) in zr.points.iter().zip(&zr.weights) {
            for (&w, &ww) in wr.points.iter().zip(&wr.weights) {
                let t = (1.0 - z) * w;
                let s = t + z;
                let weight = 4.0 * wz * ww * (1.0 - z);
                rule.push(2.0 * s - 1.0, 2.0 * t - 1.0, weight);
                rule.push(2.0 * t - 1.0, 2.0 * s - 1.0, weight);
            }
        }
        rule
    }

    /// Polar substitution about the shared vertex: `(s, t) = (ρ, ρw)` and `(ρw, ρ)`,
    /// with `s`, `t` the distances (in parameter) from the shared vertex.
    fn vertex(&self, end_test: bool, end_trial: bool, degree: usize) -> PairRule {
        let rr = self.graded(degree);
        let wr = self.gauss(degree + 10).mapped(0.0, 1.0);
        let to_ref = |end: bool, s: f64| if end { 1.0 - 2.0 * s } else { 2.0 * s - 1.0 };
        let mut rule = PairRule {
            contact: Contact::Vertex(end_test, end_trial),
            ..Default::default()
        };
        for (&rho, &wrho) in rr.points.iter().zip(&rr.weights) {
            for (&w, &ww) in wr.points.iter().zip(&wr.weights) {
                let weight = 4.0 * wrho * ww * rho;
                rule.push(to_ref(end_test, rho), to_ref(end_trial, rho * w), weight);
                rule.push(to_ref(end_test, rho * w), to_ref(end_trial, rho), weight);
            }
        }
        rule
    }

    #[allow(clippy::too_many_arguments)]
    fn regular(
        &self,
        test: &Panel,
        trial: &Panel,
        (a0, a1): (f64, f64),
        (b0, b1): (f64, f64),
        n: usize,
        depth: usize,
        rule: &mut PairRule,
    ) {
        let pa = test.sub(a0, a1);
        let pb = trial.sub(b0, b1);
        let la = pa.length();
        let lb = pb.length();
        let dist = pa.distance(&pb);
        if dist >= self.opts.admissibility * la.max(lb) || depth >= self.opts.max_depth {
            let ra = self.gauss(n).mapped(a0, a1);
            let rb = self.gauss(n).mapped(b0, b1);
            for (&x, &wx) in ra.points.iter().zip(&ra.weights) {
                for (&y, &wy) in rb.points.iter().zip(&rb.weights) {
                    rule.push(x, y, wx * wy);
                }
            }
            return;
        }
        let am = 0.5 * (a0 + a1);
        let bm = 0.5 * (b0 + b1);
        let split_a = la >= 0.5 * lb;
        let split_b = lb >= 0.5 * la;
        let aparts: &[(f64, f64)] = if split_a { &[(a0, am), (am, a1)] } else { &[(a0, a1)] };
        let bparts: &[(f64, f64)] = if split_b { &[(b0, bm), (bm, b1)] } else { &[(b0, b1)] };
        for &ai in aparts {
            for &bi in bparts {
                self.regular(test, trial, ai, bi, n, depth + 1, rule);
            }
        }
    }
}
