use serde::{Deserialize, Serialize};

use super::plan::CoarseningPlan;
use super::schwarz::{build_schwarz, Overlap, SchwarzSmoother};
use super::transfer::{build_transfer, TransferPair};
use crate::assembly::{compute_metric, Assembler, AssembledSystem, MetricField, SurfaceField};
use crate::direct::SparseCholesky;
use crate::error::{Error, Result};
use crate::mesh::{build_dofmap, Bathymetry, DofMap, LayeredMesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseOperator {
    /// Coarse operators assembled from the coarse basis.
    #[default]
    Direct,
    /// `R A P` from the next finer level.
    Galerkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyOptions {
    pub nu1: usize,
    pub nu2: usize,
    pub overlap: Overlap,
    pub coarse_operator: CoarseOperator,
    /// Post-smooth with the adjoint `S⁻ᵀ` instead of `S⁻¹`, which makes the
    /// V-cycle a symmetric operator.
    #[serde(default)]
    pub adjoint_post_smoothing: bool,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        Self {
            nu1: 3,
            nu2: 3,
            overlap: Overlap::Fixed(1),
            coarse_operator: CoarseOperator::Direct,
            adjoint_post_smoothing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    pub dofmap: DofMap,
    assembler: Assembler,
    /// Directly assembled stiffness without boundary conditions.
    pub raw: CsrMatrix,
    /// Operator with homogeneous Dirichlet rows on the free surface.
    pub system: AssembledSystem,
    pub metric: MetricField,
    pub smoother: Option<SchwarzSmoother>,
    /// Transfer between this level and the next coarser one.
    pub transfer: Option<TransferPair>,
}

/// Geometric p-multigrid hierarchy on one mesh, finest level first.
#[derive(Debug, Clone)]
pub struct MGHierarchy {
    levels: Vec<Level>,
    coarse: SparseCholesky,
    options: HierarchyOptions,
    plan: CoarseningPlan,
    mesh: LayeredMesh,
    bathymetry: Bathymetry,
}

impl MGHierarchy {
    /// Builds every level with the metric of `eta` (still water if `None`).
    pub fn build(
        mesh: &LayeredMesh,
        bathymetry: &Bathymetry,
        plan: &CoarseningPlan,
        eta: Option<&SurfaceField>,
        options: HierarchyOptions,
    ) -> Result<Self> {
        Self::build_split(mesh, bathymetry, plan, eta, eta, options)
    }

    /// Builds the finest level with `fine_eta` and all coarser levels with
    /// `coarse_eta`.
    pub fn build_split(
        mesh: &LayeredMesh,
        bathymetry: &Bathymetry,
        plan: &CoarseningPlan,
        fine_eta: Option<&SurfaceField>,
        coarse_eta: Option<&SurfaceField>,
        options: HierarchyOptions,
    ) -> Result<Self> {
        let mut levels = Vec::with_capacity(plan.len());
        for (l, &(px, ps)) in plan.levels().iter().enumerate() {
            let dofmap = build_dofmap(mesh, px, ps)?;
            let assembler = Assembler::new(mesh, &dofmap)?;
            let eta = if l == 0 { fine_eta } else { coarse_eta };
            let metric = compute_metric(mesh, &dofmap, bathymetry, eta)?;
            let raw = assembler.assemble(&metric);
            let system = homogeneous(raw.clone(), &dofmap)?;
            levels.push(Level {
                dofmap,
                assembler,
                raw,
                system,
                metric,
                smoother: None,
                transfer: None,
            });
        }
        for l in 0..levels.len() - 1 {
            let t = build_transfer(&levels[l + 1].dofmap, &levels[l].dofmap)?;
            levels[l].transfer = Some(t);
        }
        let mut h = Self {
            coarse: SparseCholesky::factor(&CsrMatrix::identity(1))?,
            levels,
            options,
            plan: plan.clone(),
            mesh: mesh.clone(),
            bathymetry: bathymetry.clone(),
        };
        if options.coarse_operator == CoarseOperator::Galerkin {
            for l in 1..h.levels.len() {
                h.galerkin_level(l)?;
            }
        }
        for l in 0..h.levels.len() {
            h.rebuild_smoother(l)?;
        }
        h.coarse = SparseCholesky::factor(&h.levels.last().unwrap().system.matrix)?;
        Ok(h)
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn options(&self) -> &HierarchyOptions {
        &self.options
    }

    pub fn plan(&self) -> &CoarseningPlan {
        &self.plan
    }

    pub fn fine(&self) -> &Level {
        &self.levels[0]
    }

    pub fn coarse_factor(&self) -> &SparseCholesky {
        &self.coarse
    }

    /// Stiffness of the finest level without boundary conditions.
    pub fn fine_raw_matrix(&self) -> CsrMatrix {
        self.levels[0].raw.clone()
    }

    pub fn set_smoothing(&mut self, nu1: usize, nu2: usize) {
        self.options.nu1 = nu1;
        self.options.nu2 = nu2;
    }

    /// Re-assembles the levels in `range` with the metric of `eta`, rebuilding
    /// their smoothers (and the coarse factorization if the coarsest level is
    /// included). Galerkin coarse levels are recomputed from the finer level.
    pub fn update_levels(&mut self, range: std::ops::Range<usize>, eta: Option<&SurfaceField>) -> Result<()> {
        let end = range.end.min(self.levels.len());
        for l in range.start..end {
            if l > 0 && self.options.coarse_operator == CoarseOperator::Galerkin {
                self.galerkin_level(l)?;
            } else {
                let lev = &mut self.levels[l];
                lev.metric = compute_metric(&self.mesh, &lev.dofmap, &self.bathymetry, eta)?;
                lev.raw = lev.assembler.assemble(&lev.metric);
                lev.system = homogeneous(lev.raw.clone(), &lev.dofmap)?;
            }
            self.rebuild_smoother(l)?;
        }
        if range.start < end && end == self.levels.len() {
            self.coarse = SparseCholesky::factor(&self.levels.last().unwrap().system.matrix)?;
        }
        Ok(())
    }

    fn galerkin_level(&mut self, l: usize) -> Result<()> {
        let t = self.levels[l - 1].transfer.as_ref().expect("transfer to coarser level");
        let rap = t.restriction.matmul(&self.levels[l - 1].system.matrix.matmul(&t.prolongation));
        let lev = &mut self.levels[l];
        lev.system = homogeneous(rap, &lev.dofmap)?;
        Ok(())
    }

    fn rebuild_smoother(&mut self, l: usize) -> Result<()> {
        let last = self.levels.len() - 1;
        let lev = &mut self.levels[l];
        lev.smoother = if l == last {
            None
        } else {
            let (px, ps) = lev.dofmap.orders();
            let ov = (self.options.overlap.layers(px), self.options.overlap.layers(ps));
            Some(build_schwarz(&lev.system, &lev.dofmap, ov)?)
        };
        Ok(())
    }

    /// One V-cycle on the finest level, updating `u` in place.
    pub fn v_cycle(&self, u: &mut [f64], f: &[f64]) {
        self.cycle(0, u, f);
    }

    /// `B r`: one V-cycle from a zero initial guess.
    pub fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        self.cycle(0, &mut z, r);
        z
    }

    fn cycle(&self, l: usize, u: &mut [f64], f: &[f64]) {
        let lev = &self.levels[l];
        if l + 1 == self.levels.len() {
            u.copy_from_slice(&self.coarse.solve(f));
            return;
        }
        let a = &lev.system.matrix;
        let smoother = lev.smoother.as_ref().expect("smoother on non-coarsest level");
        smoother.smooth(a, u, f, self.options.nu1);
        let mut r = vec![0.0; u.len()];
        a.residual(u, f, &mut r);
        let t = lev.transfer.as_ref().expect("transfer on non-coarsest level");
        let mut rc = t.restriction.mul_vec(&r);
        // Coarse Dirichlet nodes carry no correction.
        for (v, &d) in rc.iter_mut().zip(&self.levels[l + 1].system.is_dirichlet) {
            if d {
                *v = 0.0;
            }
        }
        let mut ec = vec![0.0; rc.len()];
        self.cycle(l + 1, &mut ec, &rc);
        let e = t.prolongation.mul_vec(&ec);
        for (ui, ei) in u.iter_mut().zip(&e) {
            *ui += ei;
        }
        if self.options.adjoint_post_smoothing {
            smoother.smooth_transpose(a, u, f, self.options.nu2);
        } else {
            smoother.smooth(a, u, f, self.options.nu2);
        }
    }
}

fn homogeneous(matrix: CsrMatrix, dofmap: &DofMap) -> Result<AssembledSystem> {
    let n = matrix.nrows();
    let sys = AssembledSystem {
        matrix,
        rhs: vec![0.0; n],
        dirichlet: Vec::new(),
        is_dirichlet: vec![false; n],
    };
    let zeros = vec![0.0; dofmap.n_surface()];
    let mut s = sys.impose_boundary_conditions(dofmap, &zeros)?;
    s.rhs.iter_mut().for_each(|v| *v = 0.0);
    if s.matrix.nrows() != dofmap.n_dofs() {
        return Err(Error::Dimension("level operator does not match its discretisation".into()));
    }
    Ok(s)
}
