//! One-dimensional Legendre–Gauss–Lobatto (LGL) machinery.
//!
//! A [`BasisSet`] holds the nodal set of the degree-`P` Lagrange basis on the
//! reference interval `[-1, 1]`, the matching Gauss–Lobatto quadrature weights
//! and the nodal differentiation matrix. Two-dimensional element operators are
//! tensor products of these 1D factors and are never stored explicitly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    bary: Vec<f64>,
    diff: DMatrix<f64>,
}

/// Legendre polynomials `P_{n}(x)` and `P_{n-1}(x)` by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * cur - (kf - 1.0) * prev) / kf;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Builds the LGL basis of polynomial degree `order`.
///
/// Interior nodes are the roots of `P'_order`, found by Newton iteration on
/// `x P_N - P_{N-1}` seeded with Chebyshev–Gauss–Lobatto points.
pub fn lgl_basis(order: usize) -> Result<BasisSet> {
    if order == 0 {
        return Err(Error::InvalidOrder(order));
    }
    let n = order;
    let nf = n as f64;
    let mut nodes: Vec<f64> = (0..=n)
        .map(|j| -(std::f64::consts::PI * j as f64 / nf).cos())
        .collect();
    for x in nodes.iter_mut().take(n).skip(1) {
        for _ in 0..NEWTON_MAX_ITER {
            let (pn, pn1) = legendre_pair(n, *x);
            let dx = (*x * pn - pn1) / ((nf + 1.0) * pn);
            *x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
    }
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    // Enforce exact symmetry about the origin.
    for j in 0..=n / 2 {
        let m = 0.5 * (nodes[n - j] - nodes[j]);
        nodes[j] = -m;
        nodes[n - j] = m;
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (pn, _) = legendre_pair(n, x);
            2.0 / (nf * (nf + 1.0) * pn * pn)
        })
        .collect();
    for j in 0..=n / 2 {
        let w = 0.5 * (weights[j] + weights[n - j]);
        weights[j] = w;
        weights[n - j] = w;
    }

    let bary = barycentric_weights(&nodes);
    let diff = differentiation_matrix(&nodes, &bary);
    Ok(BasisSet {
        order,
        nodes,
        weights,
        bary,
        diff,
    })
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(j, &xj)| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| xj - xk)
                .product();
            1.0 / prod
        })
        .collect()
}

fn differentiation_matrix(nodes: &[f64], bary: &[f64]) -> DMatrix<f64> {
    let m = nodes.len();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut row_sum = 0.0;
        for j in 0..m {
            if i != j {
                let v = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        // Negative-sum trick: rows annihilate constants exactly.
        d[(i, i)] = -row_sum;
    }
    d
}

impl BasisSet {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Derivative of the Lagrange cardinal functions at the nodes:
    /// `diff[(i, j)] = l_j'(x_i)`.
    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// Values of all cardinal functions at an arbitrary point `x`
    /// (barycentric formula of the second kind).
    pub fn cardinal_values(&self, x: f64) -> Vec<f64> {
        if let Some(k) = self.nodes.iter().position(|&xn| xn == x) {
            let mut row = vec![0.0; self.len()];
            row[k] = 1.0;
            return row;
        }
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.bary)
            .map(|(&xn, &b)| b / (x - xn))
            .collect();
        let denom: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / denom).collect()
    }

    /// Evaluates the interpolant of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        self.cardinal_values(x)
            .iter()
            .zip(values)
            .map(|(l, v)| l * v)
            .sum()
    }

    /// Nodal derivative of the interpolant of `values` (reference coordinates).
    pub fn differentiate(&self, values: &[f64]) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| (0..m).map(|j| self.diff[(i, j)] * values[j]).sum())
            .collect()
    }
}

/// Matrix whose entry `(i, j)` is the `j`-th cardinal function of `from`
/// evaluated at node `i` of `to`.
pub fn interpolation_matrix(from: &BasisSet, to: &BasisSet) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(to.len(), from.len());
    for (i, &x) in to.nodes().iter().enumerate() {
        for (j, v) in from.cardinal_values(x).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bisection root finder on `(1 - x^2) P'_n(x)` used as an independent
    /// oracle for the node positions.
    fn lgl_nodes_by_bisection(n: usize) -> Vec<f64> {
        let dp = |x: f64| {
            // P'_n(x) = n (x P_n - P_{n-1}) / (x^2 - 1) away from the endpoints
            let (pn, pn1) = legendre_pair(n, x);
            n as f64 * (pn1 - x * pn)
        };
        let samples = 20_000;
        let mut roots = vec![-1.0];
        let mut prev_x = -1.0 + 1e-12;
        let mut prev_f = dp(prev_x);
        for s in 1..=samples {
            let x = -1.0 + 1e-12 + (2.0 - 2e-12) * s as f64 / samples as f64;
            let f = dp(x);
            if prev_f == 0.0 || prev_f.signum() != f.signum() {
                let (mut a, mut b) = (prev_x, x);
                for _ in 0..200 {
                    let c = 0.5 * (a + b);
                    if dp(a).signum() == dp(c).signum() {
                        a = c;
                    } else {
                        b = c;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev_x = x;
            prev_f = f;
        }
        roots.push(1.0);
        roots
    }

    /// Weights from exactness on monomials x^0..x^n (Vandermonde solve).
    fn weights_from_monomials(nodes: &[f64]) -> Vec<f64> {
        let m = nodes.len();
        let v = DMatrix::from_fn(m, m, |k, j| nodes[j].powi(k as i32));
        let rhs = nalgebra::DVector::from_fn(m, |k, _| {
            if k % 2 == 0 {
                2.0 / (k as f64 + 1.0)
            } else {
                0.0
            }
        });
        v.lu().solve(&rhs).unwrap().iter().copied().collect()
    }

    #[test]
    fn order_zero_is_rejected() {
        assert!(matches!(lgl_basis(0), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn linear_element_endpoints() {
        let b = lgl_basis(1).unwrap();
        assert_eq!(b.nodes(), &[-1.0, 1.0]);
        assert_eq!(b.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn quadratic_and_cubic_match_bisection_oracle() {
        // Frozen from the bisection/monomial oracle below.
        let b2 = lgl_basis(2).unwrap();
        let expect2 = [(-1.0, 1.0 / 3.0), (0.0, 4.0 / 3.0), (1.0, 1.0 / 3.0)];
        for (k, (x, w)) in expect2.iter().enumerate() {
            assert!((b2.nodes()[k] - x).abs() < 1e-14);
            assert!((b2.weights()[k] - w).abs() < 1e-14);
        }
        let s = 1.0 / 5f64.sqrt();
        let b3 = lgl_basis(3).unwrap();
        let expect3 = [(-1.0, 1.0 / 6.0), (-s, 5.0 / 6.0), (s, 5.0 / 6.0), (1.0, 1.0 / 6.0)];
        for (k, (x, w)) in expect3.iter().enumerate() {
            assert!((b3.nodes()[k] - x).abs() < 1e-14);
            assert!((b3.weights()[k] - w).abs() < 1e-14);
        }
        for n in 2..=3 {
            let oracle = lgl_nodes_by_bisection(n);
            let ow = weights_from_monomials(&oracle);
            let b = lgl_basis(n).unwrap();
            for k in 0..=n {
                assert!((b.nodes()[k] - oracle[k]).abs() < 1e-12);
                assert!((b.weights()[k] - ow[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn high_orders_agree_with_bisection_oracle() {
        for n in [6, 9, 14, 20] {
            let oracle = lgl_nodes_by_bisection(n);
            let b = lgl_basis(n).unwrap();
            assert_eq!(oracle.len(), n + 1, "oracle root count at P={n}");
            for k in 0..=n {
                assert!((b.nodes()[k] - oracle[k]).abs() < 1e-12, "P={n} node {k}");
            }
        }
    }

    #[test]
    fn structural_invariants() {
        for n in 1..=20 {
            let b = lgl_basis(n).unwrap();
            let x = b.nodes();
            assert_eq!(x[0], -1.0);
            assert_eq!(x[n], 1.0);
            for k in 0..n {
                assert!(x[k] < x[k + 1]);
            }
            for k in 0..=n {
                assert!((x[k] + x[n - k]).abs() < 1e-13);
            }
            let wsum: f64 = b.weights().iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "P={n}: {wsum}");
            assert!(b.weights().iter().all(|&w| w > 0.0));
            let ones = vec![1.0; n + 1];
            assert!(b.differentiate(&ones).iter().all(|v| v.abs() < 1e-12));
            assert!(b
                .differentiate(x)
                .iter()
                .all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(lgl_basis(11).unwrap(), lgl_basis(11).unwrap());
    }

    #[test]
    fn interpolation_identity_and_partition_of_unity() {
        let b1 = lgl_basis(1).unwrap();
        let b2 = lgl_basis(2).unwrap();
        let b5 = lgl_basis(5).unwrap();
        let id = interpolation_matrix(&b5, &b5);
        assert!((id - DMatrix::<f64>::identity(6, 6)).amax() < 1e-15);
        let m = interpolation_matrix(&b1, &b2);
        assert!((m[(1, 0)] - 0.5).abs() < 1e-15 && (m[(1, 1)] - 0.5).abs() < 1e-15);
        let m = interpolation_matrix(&b2, &b5);
        for i in 0..m.nrows() {
            assert!((m.row(i).sum() - 1.0).abs() < 1e-13);
        }
    }

    fn poly_eval(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
    }

    proptest! {
        #[test]
        fn quadrature_exact_to_degree_2p_minus_1(n in 1usize..16, seed in proptest::collection::vec(-1.0f64..1.0, 32)) {
            let b = lgl_basis(n).unwrap();
            let deg = 2 * n - 1;
            let c = &seed[..=deg];
            let quad: f64 = b.nodes().iter().zip(b.weights()).map(|(&x, &w)| w * poly_eval(c, x)).sum();
            let exact: f64 = c.iter().enumerate()
                .map(|(k, &ck)| if k % 2 == 0 { 2.0 * ck / (k as f64 + 1.0) } else { 0.0 })
                .sum();
            prop_assert!((quad - exact).abs() < 1e-12);
        }

        #[test]
        fn differentiation_exact_on_degree_p(n in 1usize..16, c in proptest::collection::vec(-1.0f64..1.0, 17)) {
            let b = lgl_basis(n).unwrap();
            let c = &c[..=n];
            let vals: Vec<f64> = b.nodes().iter().map(|&x| poly_eval(c, x)).collect();
            let dc: Vec<f64> = c.iter().enumerate().skip(1).map(|(k, &ck)| k as f64 * ck).collect();
            for (i, d) in b.differentiate(&vals).iter().enumerate() {
                prop_assert!((d - poly_eval(&dc, b.nodes()[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn interpolation_round_trip(lo in 1usize..8, extra in 0usize..8, c in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let a = lgl_basis(lo).unwrap();
            let b = lgl_basis(lo + extra).unwrap();
            let v = nalgebra::DVector::from_iterator(lo + 1, a.nodes().iter().map(|&x| poly_eval(&c[..=lo], x)));
            let back = interpolation_matrix(&b, &a) * (interpolation_matrix(&a, &b) * &v);
            prop_assert!((back - v).amax() < 1e-11);
        }
    }
}
