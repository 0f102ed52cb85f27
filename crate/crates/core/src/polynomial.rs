//! One-dimensional polynomial bases on the reference interval [−1, 1]:
//! Legendre polynomials, integrated Legendre (Lobatto) bubbles, Gauss–Legendre
//! and Gauss–Lobatto point sets, and Lagrange interpolation on Gauss–Lobatto nodes.

use crate::{Error, Result};
use std::f64::consts::PI;

/// Values `L_0(x), …, L_n(x)` of the Legendre polynomials.
pub fn legendre_values(n: usize, x: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 1);
    v.push(1.0);
    if n >= 1 {
        v.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * v[k] - kf * v[k - 1]) / (kf + 1.0);
        v.push(next);
    }
    v
}

/// `(L_n(x), L_n'(x))`.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        // L'_{k+1} = L'_{k-1} + (2k+1) L_k
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// Lobatto bubble of degree `k ≥ 2`, `β_k = (L_k − L_{k−2}) / sqrt(2(2k−1))`,
/// together with its derivative `sqrt((2k−1)/2) L_{k−1}`. Vanishes at ±1.
pub fn lobatto_bubble(k: usize, x: f64) -> (f64, f64) {
    assert!(k >= 2, "bubble degree must be at least 2");
    let (lk, _) = legendre(k, x);
    let (lkm2, _) = legendre(k - 2, x);
    let (lkm1, _) = legendre(k - 1, x);
    let kf = k as f64;
    (
        (lk - lkm2) / (2.0 * (2.0 * kf - 1.0)).sqrt(),
        ((2.0 * kf - 1.0) / 2.0).sqrt() * lkm1,
    )
}

/// A quadrature rule on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    /// Affine image of this rule (given on [−1,1]) on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Rule1d {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Rule1d {
            points: self.points.iter().map(|&x| mid + half * x).collect(),
            weights: self.weights.iter().map(|&w| half * w).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `n`-point Gauss–Legendre rule on [−1, 1] (Newton iteration on `L_n`).
pub fn gauss_legendre(n: usize) -> Rule1d {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * d * d);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    Rule1d { points, weights }
}

/// Gauss–Lobatto nodes of degree `p` on [−1, 1]: `±1` and the roots of `L_p'`.
pub fn gauss_lobatto_nodes(p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::InvalidInput(
            "Gauss-Lobatto nodes need degree p >= 1".into(),
        ));
    }
    let mut nodes = vec![0.0; p + 1];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    let pf = p as f64;
    for i in 1..p {
        // Chebyshev–Lobatto initial guess, Newton on L_p' using the Legendre ODE for L_p''.
        let mut x = -(PI * i as f64 / pf).cos();
        for _ in 0..100 {
            let (l, d) = legendre(p, x);
            let dd = (2.0 * x * d - pf * (pf + 1.0) * l) / (1.0 - x * x);
            let dx = d / dd;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
    }
    // exact symmetry
    for i in 0..p.div_ceil(2) {
        let s = 0.5 * (nodes[p - i] - nodes[i]);
        nodes[i] = -s;
        nodes[p - i] = s;
    }
    if p.is_multiple_of(2) {
        nodes[p / 2] = 0.0;
    }
    Ok(nodes)
}

/// Lagrange basis on a fixed node set, evaluated via barycentric weights.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: Vec<f64>) -> Self {
        let n = nodes.len();
        let bary = (0..n)
            .map(|j| {
                let prod: f64 = (0..n)
                    .filter(|&k| k != j)
                    .map(|k| nodes[j] - nodes[k])
                    .product();
                1.0 / prod
            })
            .collect();
        Self { nodes, bary }
    }

    /// Basis on the Gauss–Lobatto nodes of degree `p`.
    pub fn gauss_lobatto(p: usize) -> Result<Self> {
        Ok(Self::new(gauss_lobatto_nodes(p)?))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Value and derivative of the `j`-th basis function at `x`.
    pub fn eval(&self, j: usize, x: f64) -> (f64, f64) {
        let n = self.nodes.len();
        // ℓ_j(x) = Π_{k≠j} (x − x_k)/(x_j − x_k); derivative by the product rule.
        let mut val = self.bary[j];
        let mut der = 0.0;
        for k in 0..n {
            if k == j {
                continue;
            }
            let f = x - self.nodes[k];
            der = der * f + val;
            val *= f;
        }
        (val, der)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_rule_integrates_monomials_exactly() {
        for n in 1..=30 {
            let rule = gauss_legendre(n);
            for k in 0..2 * n {
                let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                let q = rule.integrate(|x| x.powi(k as i32));
                assert_abs_diff_eq!(q, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn lobatto_nodes_small_degrees() {
        assert_eq!(gauss_lobatto_nodes(1).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(gauss_lobatto_nodes(2).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(gauss_lobatto_nodes(0).is_err());
    }

    /// Bisection on (1−x²)L_4'(x) as an independent root oracle.
    #[test]
    fn lobatto_nodes_degree_four_match_bisection() {
        let f = |x: f64| legendre(4, x).1;
        let mut roots = vec![];
        let m = 2000;
        for i in 0..m {
            let (mut a, mut b) = (-1.0 + 2.0 * i as f64 / m as f64, -1.0 + 2.0 * (i + 1) as f64 / m as f64);
            if f(a) == 0.0 {
                roots.push(a);
                continue;
            }
            if f(a) * f(b) < 0.0 {
                for _ in 0..200 {
                    let c = 0.5 * (a + b);
                    if f(a) * f(c) <= 0.0 {
                        b = c
                    } else {
                        a = c
                    }
                }
                roots.push(0.5 * (a + b));
            }
        }
        let nodes = gauss_lobatto_nodes(4).unwrap();
        assert_eq!(roots.len(), 3);
        for (r, n) in roots.iter().zip(&nodes[1..4]) {
            assert_abs_diff_eq!(r, n, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(nodes[3], (3.0f64 / 7.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn lobatto_nodes_symmetric_increasing() {
        for p in 1..=20 {
            let x = gauss_lobatto_nodes(p).unwrap();
            assert_eq!(x.len(), p + 1);
            assert_eq!(x[0], -1.0);
            assert_eq!(x[p], 1.0);
            for i in 0..p {
                assert!(x[i] < x[i + 1]);
                assert_abs_diff_eq!(x[i], -x[p - i], epsilon = 0.0);
            }
        }
    }

    #[test]
    fn lagrange_basis_is_cardinal_and_differentiates() {
        let basis = LagrangeBasis::gauss_lobatto(5).unwrap();
        for j in 0..6 {
            for (k, &xk) in basis.nodes().iter().enumerate() {
                let (v, _) = basis.eval(j, xk);
                assert_abs_diff_eq!(v, if j == k { 1.0 } else { 0.0 }, epsilon = 1e-13);
            }
            let x = 0.3137;
            let h = 1e-6;
            let fd = (basis.eval(j, x + h).0 - basis.eval(j, x - h).0) / (2.0 * h);
            assert_abs_diff_eq!(basis.eval(j, x).1, fd, epsilon = 1e-7);
        }
        let sum: f64 = (0..6).map(|j| basis.eval(j, 0.77).0).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn bubbles_vanish_at_endpoints() {
        for k in 2..8 {
            assert_abs_diff_eq!(lobatto_bubble(k, 1.0).0, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(lobatto_bubble(k, -1.0).0, 0.0, epsilon = 1e-15);
            let x = -0.41;
            let h = 1e-6;
            let fd = (lobatto_bubble(k, x + h).0 - lobatto_bubble(k, x - h).0) / (2.0 * h);
            assert_abs_diff_eq!(lobatto_bubble(k, x).1, fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn legendre_derivative_matches_values() {
        let x = 0.23;
        let v = legendre_values(7, x);
        for n in 0..=7 {
            assert_abs_diff_eq!(legendre(n, x).0, v[n], epsilon = 1e-15);
        }
    }
}
