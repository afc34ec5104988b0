//! Metric terms of the `σ`-transform and assembly of the variable-coefficient
//! Laplace operator `∇·(K∇φ)` on a [`DofMap`].
//!
//! Element integrals use the collocated Legendre–Gauss–Lobatto rule of the
//! nodal basis. The assembled stiffness is `A = ∫ (K∇N_j)·∇N_i`, symmetric and
//! positive semi-definite before Dirichlet data is imposed.

use rayon::prelude::*;

use crate::basis::{interpolation_matrix, lgl_basis, BasisSet};
use crate::error::{Error, Result};
use crate::mesh::{Bathymetry, BoundaryTag, DofMap, LayeredMesh};
use crate::sparse::CsrMatrix;

/// Nodal free-surface elevation on the surface nodes of an order-`order`
/// discretisation (`n_x * order + 1` values).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceField {
    pub order: usize,
    pub values: Vec<f64>,
}

impl SurfaceField {
    pub fn new(order: usize, values: Vec<f64>) -> Self {
        Self { order, values }
    }

    pub fn zeros(order: usize, n_x: usize) -> Self {
        Self {
            order,
            values: vec![0.0; n_x * order + 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPoint {
    pub depth: f64,
    pub sigma_x: f64,
    pub k11: f64,
    pub k12: f64,
    pub k22: f64,
}

impl MetricPoint {
    /// Metric of the map `(x, z) -> (x, σ)` with `σ = (z + h) / d`, `d = h + η`.
    pub fn new(depth: f64, h_x: f64, d_x: f64, sigma: f64) -> Self {
        let sigma_x = h_x / depth - sigma * d_x / depth;
        Self {
            depth,
            sigma_x,
            k11: depth,
            k12: depth * sigma_x,
            k22: depth * sigma_x * sigma_x + 1.0 / depth,
        }
    }

    /// Jacobian determinant `∂σ/∂z = 1/d` of the transform.
    pub fn det_j(&self) -> f64 {
        1.0 / self.depth
    }
}

/// Metric values at every quadrature (= nodal) point of every element, in
/// element-local node order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    px: usize,
    ps: usize,
    points: Vec<MetricPoint>,
}

impl MetricField {
    pub fn orders(&self) -> (usize, usize) {
        (self.px, self.ps)
    }

    pub fn element(&self, e: usize) -> &[MetricPoint] {
        let n = (self.px + 1) * (self.ps + 1);
        &self.points[e * n..(e + 1) * n]
    }

    pub fn point(&self, e: usize, a: usize, b: usize) -> &MetricPoint {
        &self.element(e)[a * (self.ps + 1) + b]
    }

    pub fn points(&self) -> &[MetricPoint] {
        &self.points
    }
}

/// Evaluates the metric on `dofmap` for surface elevation `eta`. Without an
/// elevation the still-water (linear) geometry is used. The elevation may
/// live on a different polynomial order; it is evaluated, together with its
/// element-wise derivative, at this discretisation's nodes.
pub fn compute_metric(
    mesh: &LayeredMesh,
    dofmap: &DofMap,
    bathymetry: &Bathymetry,
    eta: Option<&SurfaceField>,
) -> Result<MetricField> {
    let (px, ps) = dofmap.orders();
    let (n_x, n_s) = dofmap.element_grid();
    let bx = lgl_basis(px)?;
    let xs = dofmap.x_coords();
    let ss = dofmap.sigma_coords();
    let nloc = (px + 1) * (ps + 1);

    // Element-wise η and ∂η/∂x at this level's x-nodes.
    let mut eta_at = vec![0.0; n_x * (px + 1)];
    let mut eta_x_at = vec![0.0; n_x * (px + 1)];
    if let Some(field) = eta {
        if field.values.len() != n_x * field.order + 1 {
            return Err(Error::Dimension(format!(
                "surface field has {} values, expected {}",
                field.values.len(),
                n_x * field.order + 1
            )));
        }
        let src = lgl_basis(field.order)?;
        let interp = interpolation_matrix(&src, &bx);
        let dsrc = src.diff_matrix();
        let q = field.order;
        for ex in 0..n_x {
            let (x0, x1) = mesh.surface().element_bounds(ex);
            let scale = 2.0 / (x1 - x0);
            let v = &field.values[ex * q..=(ex + 1) * q];
            let dv: Vec<f64> = (0..=q).map(|i| scale * (0..=q).map(|j| dsrc[(i, j)] * v[j]).sum::<f64>()).collect();
            for a in 0..=px {
                let mut e = 0.0;
                let mut de = 0.0;
                for j in 0..=q {
                    e += interp[(a, j)] * v[j];
                    de += interp[(a, j)] * dv[j];
                }
                eta_at[ex * (px + 1) + a] = e;
                eta_x_at[ex * (px + 1) + a] = de;
            }
        }
    }

    let mut points = Vec::with_capacity(n_x * n_s * nloc);
    for ex in 0..n_x {
        for es in 0..n_s {
            for a in 0..=px {
                let x = xs[ex * px + a];
                let h = bathymetry.depth(x);
                let h_x = slope_inside(bathymetry, x, mesh.surface().element_bounds(ex));
                let k = ex * (px + 1) + a;
                let d = h + eta_at[k];
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::DepthCollapse { x, depth: d });
                }
                let d_x = h_x + eta_x_at[k];
                for b in 0..=ps {
                    points.push(MetricPoint::new(d, h_x, d_x, ss[es * ps + b]));
                }
            }
        }
    }
    Ok(MetricField { px, ps, points })
}

// At element end points the slope is taken from inside the element, so that
// the element sees a smooth profile when its edge sits on a bathymetry kink.
fn slope_inside(b: &Bathymetry, x: f64, (x0, x1): (f64, f64)) -> f64 {
    let eps = 1e-9 * (x1 - x0);
    if x >= x1 {
        b.slope(x1 - eps)
    } else {
        b.slope(x.max(x0))
    }
}

/// Laplace operator, optionally with Dirichlet data imposed.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Constrained nodes, ascending.
    pub dirichlet: Vec<usize>,
    pub is_dirichlet: Vec<bool>,
}

impl AssembledSystem {
    pub fn n(&self) -> usize {
        self.rhs.len()
    }

    /// Imposes `φ = values` on the free surface by symmetric elimination:
    /// known values are moved to the right-hand side and the constrained rows
    /// and columns are replaced by the identity. The sparsity pattern keeps
    /// the eliminated entries as explicit zeros.
    pub fn impose_boundary_conditions(mut self, dofmap: &DofMap, surface_values: &[f64]) -> Result<Self> {
        let nodes = dofmap.boundary_nodes(BoundaryTag::FreeSurface);
        if surface_values.len() != nodes.len() {
            return Err(Error::Dimension(format!(
                "{} surface values for {} surface nodes",
                surface_values.len(),
                nodes.len()
            )));
        }
        let n = self.matrix.nrows();
        let mut g = vec![0.0; n];
        let mut mask = vec![false; n];
        for (&node, &v) in nodes.iter().zip(surface_values) {
            g[node] = v;
            mask[node] = true;
        }
        let mut rhs = vec![0.0; n];
        let rp = self.matrix.row_ptr().to_vec();
        let ci = self.matrix.col_idx().to_vec();
        let vals = self.matrix.values_mut();
        for i in 0..n {
            if mask[i] {
                for k in rp[i]..rp[i + 1] {
                    vals[k] = if ci[k] == i { 1.0 } else { 0.0 };
                }
                rhs[i] = g[i];
            } else {
                let mut s = 0.0;
                for k in rp[i]..rp[i + 1] {
                    if mask[ci[k]] {
                        s += vals[k] * g[ci[k]];
                        vals[k] = 0.0;
                    }
                }
                rhs[i] = self.rhs[i] - s;
            }
        }
        let mut dirichlet = nodes;
        dirichlet.sort_unstable();
        self.rhs = rhs;
        self.dirichlet = dirichlet;
        self.is_dirichlet = mask;
        Ok(self)
    }
}

/// Cached sparsity pattern and scatter map for repeated assembly on one
/// discretisation.
#[derive(Debug, Clone)]
pub struct Assembler {
    dofmap: DofMap,
    wx: Vec<f64>,
    ws: Vec<f64>,
    dx: Vec<f64>,
    ds: Vec<f64>,
    hx: Vec<f64>,
    hs: Vec<f64>,
    pattern: CsrMatrix,
    positions: Vec<usize>,
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

impl Assembler {
    pub fn new(mesh: &LayeredMesh, dofmap: &DofMap) -> Result<Self> {
        let (px, ps) = dofmap.orders();
        let bx: BasisSet = lgl_basis(px)?;
        let bs: BasisSet = lgl_basis(ps)?;
        let ne = dofmap.n_elements();
        let mut hx = Vec::with_capacity(ne);
        let mut hs = Vec::with_capacity(ne);
        for e in 0..ne {
            let (ex, es) = dofmap.element_position(e);
            let (x0, x1) = mesh.surface().element_bounds(ex);
            let s = mesh.sigma_levels();
            let (dxe, dse) = (x1 - x0, s[es + 1] - s[es]);
            if !(dxe > 0.0 && dse > 0.0) {
                return Err(Error::InvalidElement(e));
            }
            hx.push(dxe);
            hs.push(dse);
        }
        let nloc = (px + 1) * (ps + 1);
        let mut triplets = Vec::with_capacity(ne * nloc * nloc);
        for e in 0..ne {
            let nodes = dofmap.element_nodes(e);
            for &i in &nodes {
                for &j in &nodes {
                    triplets.push((i, j, 0.0));
                }
            }
        }
        let n = dofmap.n_dofs();
        let pattern = CsrMatrix::from_triplets(n, n, &triplets);
        let mut positions = Vec::with_capacity(ne * nloc * nloc);
        for e in 0..ne {
            let nodes = dofmap.element_nodes(e);
            for &i in &nodes {
                for &j in &nodes {
                    positions.push(pattern.find(i, j).expect("pattern covers element couplings"));
                }
            }
        }
        Ok(Self {
            dofmap: dofmap.clone(),
            wx: bx.weights().to_vec(),
            ws: bs.weights().to_vec(),
            dx: row_major(bx.diff_matrix()),
            ds: row_major(bs.diff_matrix()),
            hx,
            hs,
            pattern,
            positions,
        })
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// Dense element stiffness of element `e`, row-major in local node order.
    pub fn element_matrix(&self, e: usize, metric: &MetricField, out: &mut [f64]) {
        let (px, ps) = self.dofmap.orders();
        let (nx, ns) = (px + 1, ps + 1);
        let nloc = nx * ns;
        debug_assert_eq!(out.len(), nloc * nloc);
        out.iter_mut().for_each(|v| *v = 0.0);
        let k = metric.element(e);
        let (wx, ws, dx, ds) = (&self.wx, &self.ws, &self.dx, &self.ds);
        let sx = 2.0 / self.hx[e];
        let ss = 2.0 / self.hs[e];
        let jac = self.hx[e] * self.hs[e] / 4.0;
        let c11 = sx * sx * jac;
        let c22 = ss * ss * jac;
        let c12 = sx * ss * jac;
        let loc = |a: usize, b: usize| a * ns + b;

        for b in 0..ns {
            for a in 0..nx {
                for c in 0..nx {
                    let mut v = 0.0;
                    for i in 0..nx {
                        v += wx[i] * k[loc(i, b)].k11 * dx[i * nx + a] * dx[i * nx + c];
                    }
                    out[loc(a, b) * nloc + loc(c, b)] += v * ws[b] * c11;
                }
            }
        }
        for a in 0..nx {
            for b in 0..ns {
                for d in 0..ns {
                    let mut v = 0.0;
                    for j in 0..ns {
                        v += ws[j] * k[loc(a, j)].k22 * ds[j * ns + b] * ds[j * ns + d];
                    }
                    out[loc(a, b) * nloc + loc(a, d)] += v * wx[a] * c22;
                }
            }
        }
        for a in 0..nx {
            for b in 0..ns {
                let row = loc(a, b) * nloc;
                for c in 0..nx {
                    for d in 0..ns {
                        let t1 = wx[a] * ws[d] * k[loc(a, d)].k12 * dx[a * nx + c] * ds[d * ns + b];
                        let t2 = wx[c] * ws[b] * k[loc(c, b)].k12 * ds[b * ns + d] * dx[c * nx + a];
                        out[row + loc(c, d)] += (t1 + t2) * c12;
                    }
                }
            }
        }
    }

    /// Assembles the stiffness matrix (no boundary conditions).
    pub fn assemble(&self, metric: &MetricField) -> CsrMatrix {
        let (px, ps) = self.dofmap.orders();
        let nloc = (px + 1) * (ps + 1);
        let block = nloc * nloc;
        let ne = self.dofmap.n_elements();
        let mut local = vec![0.0; ne * block];
        local
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(e, out)| self.element_matrix(e, metric, out));
        let mut a = self.pattern.clone();
        let vals = a.values_mut();
        for (pos, v) in self.positions.iter().zip(&local) {
            vals[*pos] += v;
        }
        a
    }

    pub fn system(&self, metric: &MetricField) -> AssembledSystem {
        let n = self.dofmap.n_dofs();
        AssembledSystem {
            matrix: self.assemble(metric),
            rhs: vec![0.0; n],
            dirichlet: Vec::new(),
            is_dirichlet: vec![false; n],
        }
    }
}

/// Assembles the Laplace operator on `dofmap` with the given metric.
pub fn assemble_laplace(mesh: &LayeredMesh, dofmap: &DofMap, metric: &MetricField) -> Result<AssembledSystem> {
    if metric.orders() != dofmap.orders() || metric.points().len() != dofmap.n_elements() * {
        let (px, ps) = dofmap.orders();
        (px + 1) * (ps + 1)
    } {
        return Err(Error::Dimension("metric does not match the discretisation".into()));
    }
    Ok(Assembler::new(mesh, dofmap)?.system(metric))
}

/// Surface vertical velocity `w̃ = (1/d) ∂φ/∂σ` at `σ = 1`, evaluated with the
/// `σ`-derivative of the top element of every column.
pub fn vertical_velocity(mesh: &LayeredMesh, dofmap: &DofMap, metric: &MetricField, phi: &[f64]) -> Result<Vec<f64>> {
    let (px, ps) = dofmap.orders();
    let (n_x, n_s) = dofmap.element_grid();
    let bs = lgl_basis(ps)?;
    let ds = bs.diff_matrix();
    let levels = mesh.sigma_levels();
    let scale = 2.0 / (levels[n_s] - levels[n_s - 1]);
    let top = dofmap.ns_nodes() - 1;
    let mut w = vec![0.0; dofmap.nx_nodes()];
    for (ix, out) in w.iter_mut().enumerate() {
        let mut dphi = 0.0;
        for j in 0..=ps {
            dphi += ds[(ps, j)] * phi[dofmap.global(ix, top - ps + j)];
        }
        let ex = (ix / px).min(n_x - 1);
        let a = ix - ex * px;
        let d = metric.point(ex * n_s + n_s - 1, a, ps).depth;
        *out = scale * dphi / d;
    }
    Ok(w)
}
