use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::AssembledSystem;
use crate::error::{Error, Result};
use crate::mesh::DofMap;
use crate::sparse::CsrMatrix;

/// Overlap of the element subdomains, in node layers per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Fixed(usize),
    /// `min(cap, ceil((P + 1) / 2))` layers, with `P` the level order in
    /// each direction.
    Refined { cap: usize },
}

impl Default for Overlap {
    fn default() -> Self {
        Overlap::Fixed(1)
    }
}

impl Overlap {
    pub fn layers(self, p: usize) -> usize {
        match self {
            Overlap::Fixed(n) => n,
            Overlap::Refined { cap } => cap.min((p + 1).div_ceil(2)),
        }
    }
}

impl std::str::FromStr for Overlap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "refined" {
            return Ok(Overlap::Refined { cap: 5 });
        }
        if let Some(cap) = s.strip_prefix("refined:") {
            return cap
                .parse()
                .map(|cap| Overlap::Refined { cap })
                .map_err(|_| Error::Config(format!("invalid overlap cap `{cap}`")));
        }
        if let Some(n) = s.strip_prefix("fixed:") {
            return n
                .parse()
                .map(Overlap::Fixed)
                .map_err(|_| Error::Config(format!("invalid overlap `{n}`")));
        }
        Err(Error::Config(format!(
            "overlap must be `fixed:N`, `refined` or `refined:CAP`, got `{s}`"
        )))
    }
}

impl std::fmt::Display for Overlap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Overlap::Fixed(n) => write!(f, "fixed:{n}"),
            Overlap::Refined { cap } => write!(f, "refined:{cap}"),
        }
    }
}

/// Weighted additive Schwarz smoother with one overlapping subdomain per
/// element.
#[derive(Debug, Clone)]
pub struct SchwarzSmoother {
    n: usize,
    subdomains: Vec<Vec<usize>>,
    // Inverse of each local block, column-major (the blocks are symmetric).
    inverses: Vec<Vec<f64>>,
    weights: Vec<f64>,
    parallel: bool,
}

/// Node range `[lo, hi]` of element `e` along one direction, widened by
/// `layers` and clipped to `[0, last]`.
fn widened(e: usize, p: usize, layers: usize, last: usize) -> (usize, usize) {
    ((e * p).saturating_sub(layers), ((e + 1) * p + layers).min(last))
}

pub fn build_schwarz(system: &AssembledSystem, dofmap: &DofMap, overlap: (usize, usize)) -> Result<SchwarzSmoother> {
    let (px, ps) = dofmap.orders();
    let n = dofmap.n_dofs();
    if system.matrix.nrows() != n {
        return Err(Error::Dimension("system does not match the discretisation".into()));
    }
    let subdomains: Vec<Vec<usize>> = (0..dofmap.n_elements())
        .map(|e| {
            let (ex, es) = dofmap.element_position(e);
            let (x0, x1) = widened(ex, px, overlap.0, dofmap.nx_nodes() - 1);
            let (s0, s1) = widened(es, ps, overlap.1, dofmap.ns_nodes() - 1);
            (x0..=x1).flat_map(|ix| (s0..=s1).map(move |is| dofmap.global(ix, is))).collect()
        })
        .collect();
    let mut count = vec![0usize; n];
    for s in &subdomains {
        for &g in s {
            count[g] += 1;
        }
    }
    let weights = count.iter().map(|&c| 1.0 / c as f64).collect();
    let inverses = subdomains
        .par_iter()
        .enumerate()
        .map_init(
            || vec![usize::MAX; n],
            |lookup, (e, idx)| {
                let block = system.matrix.principal_submatrix(idx, lookup);
                let chol = block.cholesky().ok_or(Error::SmootherBuild { element: e })?;
                let inv = chol.inverse();
                if inv.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SmootherBuild { element: e });
                }
                Ok(inv.as_slice().to_vec())
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let work: usize = subdomains.iter().map(|s| s.len() * s.len()).sum();
    Ok(SchwarzSmoother {
        n,
        subdomains,
        inverses,
        weights,
        parallel: work > 50_000 && rayon::current_num_threads() > 1,
    })
}

impl SchwarzSmoother {
    pub fn subdomains(&self) -> &[Vec<usize>] {
        &self.subdomains
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn local_solve(&self, k: usize, r: &[f64]) -> Vec<f64> {
        let idx = &self.subdomains[k];
        let m = idx.len();
        let rl: Vec<f64> = idx.iter().map(|&g| r[g]).collect();
        let inv = &self.inverses[k];
        (0..m)
            .map(|i| inv[i * m..(i + 1) * m].iter().zip(&rl).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `out = Σ_k R_kᵀ B_k⁻¹ R_k r`, summed in element order.
    pub fn apply_sum(&self, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let locals: Vec<Vec<f64>> = if self.parallel {
            (0..self.subdomains.len()).into_par_iter().map(|k| self.local_solve(k, r)).collect()
        } else {
            (0..self.subdomains.len()).map(|k| self.local_solve(k, r)).collect()
        };
        for (idx, z) in self.subdomains.iter().zip(&locals) {
            for (&g, v) in idx.iter().zip(z) {
                out[g] += v;
            }
        }
    }

    /// `out = S⁻¹ r = W Σ_k R_kᵀ B_k⁻¹ R_k r`.
    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        self.apply_sum(r, out);
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o *= w;
        }
    }

    /// `out = S⁻ᵀ r = Σ_k R_kᵀ B_k⁻¹ R_k W r`.
    pub fn apply_transpose(&self, r: &[f64], out: &mut [f64]) {
        let wr: Vec<f64> = r.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        self.apply_sum(&wr, out);
    }

    /// `sweeps` steps of `u ← u + S⁻¹(f − A u)`.
    pub fn smooth(&self, a: &CsrMatrix, u: &mut [f64], f: &[f64], sweeps: usize) {
        self.sweep(a, u, f, sweeps, false);
    }

    /// As [`smooth`](Self::smooth) with `S⁻ᵀ`.
    pub fn smooth_transpose(&self, a: &CsrMatrix, u: &mut [f64], f: &[f64], sweeps: usize) {
        self.sweep(a, u, f, sweeps, true);
    }

    fn sweep(&self, a: &CsrMatrix, u: &mut [f64], f: &[f64], sweeps: usize, transpose: bool) {
        debug_assert_eq!(u.len(), self.n);
        let mut r = vec![0.0; self.n];
        let mut z = vec![0.0; self.n];
        for _ in 0..sweeps {
            a.residual(u, f, &mut r);
            if transpose {
                self.apply_transpose(&r, &mut z);
            } else {
                self.apply(&r, &mut z);
            }
            for (ui, zi) in u.iter_mut().zip(&z) {
                *ui += zi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{compute_metric, Assembler, SurfaceField};
    use crate::mesh::{build_dofmap, build_structured, Bathymetry, BoundaryTag};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn system(nx: usize, ns: usize, px: usize, ps: usize) -> (AssembledSystem, DofMap) {
        let bathy = Bathymetry::Piecewise { points: vec![[0.0, 1.0], [3.0, 0.7]] };
        let m = build_structured(0.0, 3.0, nx, ns, &bathy).unwrap();
        let d = build_dofmap(&m, px, ps).unwrap();
        let eta = SurfaceField::new(px, d.x_coords().iter().map(|x| 0.05 * x.sin()).collect());
        let k = compute_metric(&m, &d, &bathy, Some(&eta)).unwrap();
        let g: Vec<f64> = d.x_coords().iter().map(|x| x.cos()).collect();
        let sys = Assembler::new(&m, &d).unwrap().system(&k).impose_boundary_conditions(&d, &g).unwrap();
        (sys, d)
    }

    fn dense_operator(s: &SchwarzSmoother, a: &CsrMatrix) -> DMatrix<f64> {
        let n = a.nrows();
        let mut m = DMatrix::zeros(n, n);
        for (k, idx) in s.subdomains().iter().enumerate() {
            let mut lookup = vec![usize::MAX; n];
            let b = a.principal_submatrix(idx, &mut lookup);
            let inv = b.try_inverse().unwrap();
            for (i, &gi) in idx.iter().enumerate() {
                for (j, &gj) in idx.iter().enumerate() {
                    m[(gi, gj)] += inv[(i, j)];
                }
            }
            let _ = k;
        }
        DMatrix::from_diagonal(&DVector::from_vec(s.weights().to_vec())) * m
    }

    #[test]
    fn single_element_without_overlap_is_exact() {
        let (sys, d) = system(1, 1, 4, 3);
        let s = build_schwarz(&sys, &d, (0, 0)).unwrap();
        let mut u = vec![0.0; d.n_dofs()];
        s.smooth(&sys.matrix, &mut u, &sys.rhs, 1);
        let exact = crate::direct::SparseCholesky::factor(&sys.matrix).unwrap().solve(&sys.rhs);
        assert!(u.iter().zip(&exact).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_overlap_is_block_jacobi_with_weights() {
        let (sys, d) = system(2, 2, 3, 3);
        let s = build_schwarz(&sys, &d, (0, 0)).unwrap();
        let oracle = dense_operator(&s, &sys.matrix);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let r: Vec<f64> = (0..d.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = vec![0.0; r.len()];
        s.apply(&r, &mut z);
        let expect = &oracle * DVector::from_vec(r);
        assert!(z.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn weights_count_subdomains() {
        let (sys, d) = system(3, 1, 2, 2);
        let s = build_schwarz(&sys, &d, (1, 1)).unwrap();
        // Element spans are [0..2], [2..4], [4..6] widened by one node layer.
        let w = |ix: usize| s.weights()[d.global(ix, 1)];
        assert_eq!(w(0), 1.0);
        assert_eq!(w(1), 0.5);
        assert_eq!(w(2), 0.5);
        assert_eq!(w(3), 1.0 / 3.0);
        assert_eq!(w(5), 0.5);
        assert_eq!(w(6), 1.0);
        assert!(s.weights().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn exact_solution_is_fixed_point() {
        let (sys, d) = system(3, 2, 3, 2);
        let exact = crate::direct::SparseCholesky::factor(&sys.matrix).unwrap().solve(&sys.rhs);
        let s = build_schwarz(&sys, &d, (1, 1)).unwrap();
        let mut u = exact.clone();
        s.smooth(&sys.matrix, &mut u, &sys.rhs, 2);
        let scale = crate::sparse::norm_inf(&exact);
        assert!(u.iter().zip(&exact).all(|(a, b)| (a - b).abs() < 1e-12 * scale));
    }

    #[test]
    fn transpose_application_is_adjoint() {
        let (sys, d) = system(3, 2, 3, 2);
        let s = build_schwarz(&sys, &d, (1, 1)).unwrap();
        let dense = dense_operator(&s, &sys.matrix);
        let n = d.n_dofs();
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = vec![0.0; n];
        s.apply_transpose(&r, &mut z);
        let expect = dense.transpose() * DVector::from_vec(r);
        assert!(z.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn smoothing_contracts_error() {
        let (mut sys, d) = system(4, 2, 4, 3);
        sys.rhs.iter_mut().for_each(|v| *v = 0.0);
        let s = build_schwarz(&sys, &d, (1, 1)).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let mut u: Vec<f64> = (0..d.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for g in d.boundary_nodes(BoundaryTag::FreeSurface) {
            u[g] = 0.0;
        }
        let energy = |u: &[f64]| crate::sparse::dot(u, &sys.matrix.mul_vec(u));
        let n0 = crate::sparse::norm2(&u);
        let mut last = energy(&u);
        for _ in 0..50 {
            s.smooth(&sys.matrix, &mut u, &sys.rhs, 1);
            let e = energy(&u);
            assert!(e <= last * (1.0 + 1e-12));
            last = e;
        }
        assert!(crate::sparse::norm2(&u) < 0.1 * n0);
    }

    #[test]
    fn singular_block_reported() {
        let (mut sys, d) = system(2, 1, 2, 2);
        // A node with zero row and column makes every block containing it singular.
        let g = d.global(1, 1);
        let (rp, ci) = (sys.matrix.row_ptr().to_vec(), sys.matrix.col_idx().to_vec());
        let v = sys.matrix.values_mut();
        for k in rp[g]..rp[g + 1] {
            v[k] = 0.0;
        }
        for i in 0..rp.len() - 1 {
            for k in rp[i]..rp[i + 1] {
                if ci[k] == g {
                    v[k] = 0.0;
                }
            }
        }
        assert!(matches!(build_schwarz(&sys, &d, (1, 1)), Err(Error::SmootherBuild { .. })));
    }

    #[test]
    fn overlap_parsing() {
        assert_eq!("fixed:2".parse::<Overlap>().unwrap(), Overlap::Fixed(2));
        assert_eq!("refined".parse::<Overlap>().unwrap(), Overlap::Refined { cap: 5 });
        assert!("wide".parse::<Overlap>().is_err());
        assert_eq!(Overlap::Refined { cap: 5 }.layers(9), 5);
        assert_eq!(Overlap::Refined { cap: 5 }.layers(3), 2);
        assert_eq!(Overlap::Refined { cap: 2 }.layers(9), 2);
    }
}
