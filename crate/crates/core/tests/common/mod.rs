#![allow(dead_code)]

use wavemg::assembly::{compute_metric, AssembledSystem, Assembler, SurfaceField};
use wavemg::mesh::{build_dofmap, build_structured, Bathymetry, DofMap, LayeredMesh};
use wavemg::multigrid::{make_coarsening_plan, HierarchyOptions, MGHierarchy};
use wavemg::solvers::{solve_direct, solve_pcg, Method, SolverConfig};

/// Laplace problem on a structured mesh with surface data `phi_s(x)`.
pub struct Problem {
    pub mesh: LayeredMesh,
    pub bathy: Bathymetry,
    pub dofmap: DofMap,
    pub eta: Option<SurfaceField>,
    pub system: AssembledSystem,
}

pub fn problem(
    len: f64,
    nx: usize,
    ns: usize,
    (px, ps): (usize, usize),
    bathy: Bathymetry,
    eta: impl Fn(f64) -> f64,
    phi_s: impl Fn(f64) -> f64,
) -> Problem {
    let mesh = build_structured(0.0, len, nx, ns, &bathy).unwrap();
    let dofmap = build_dofmap(&mesh, px, ps).unwrap();
    let x = dofmap.x_coords().to_vec();
    let eta = SurfaceField::new(px, x.iter().map(|&x| eta(x)).collect());
    let eta = eta.values.iter().any(|v| *v != 0.0).then_some(eta);
    let metric = compute_metric(&mesh, &dofmap, &bathy, eta.as_ref()).unwrap();
    let system = Assembler::new(&mesh, &dofmap)
        .unwrap()
        .system(&metric)
        .impose_boundary_conditions(&dofmap, &x.iter().map(|&x| phi_s(x)).collect::<Vec<_>>())
        .unwrap();
    Problem { mesh, bathy, dofmap, eta, system }
}

impl Problem {
    pub fn hierarchy(&self, plan: Option<&[(usize, usize)]>, opts: HierarchyOptions) -> MGHierarchy {
        let (px, ps) = self.dofmap.orders();
        let plan = make_coarsening_plan(px, ps, plan).unwrap();
        MGHierarchy::build(&self.mesh, &self.bathy, &plan, self.eta.as_ref(), opts).unwrap()
    }

    pub fn initial_guess(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.system.n()];
        for &g in &self.system.dirichlet {
            u[g] = self.system.rhs[g];
        }
        u
    }
}

pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    d / b.iter().fold(0.0f64, |m, y| m.max(y.abs()))
}

/// `cosh(k(z + h)) cos(kx) / cosh(kh)` in a flat tank of length `2π/k`:
/// satisfies every boundary condition of the tank exactly.
pub fn cosh_mode_error(p: usize, nx: usize, ns: usize) -> f64 {
    let (len, h) = (2.0, 1.0);
    let k = 2.0 * std::f64::consts::PI / len;
    let pr = problem(len, nx, ns, (p, p), Bathymetry::Flat { depth: h }, |_| 0.0, |x| (k * x).cos());
    let u = solve_direct(&pr.system).unwrap();
    (0..u.len())
        .map(|g| {
            let (x, s) = pr.dofmap.coords(g);
            let z = s * h - h;
            let exact = (k * (z + h)).cosh() * (k * x).cos() / (k * h).cosh();
            (u[g] - exact).abs()
        })
        .fold(0.0, f64::max)
}

/// PCG-p-MG at `rtol` against the direct solution.
pub fn pcg_vs_direct(pr: &Problem, plan: Option<&[(usize, usize)]>, rtol: f64) -> f64 {
    let h = pr.hierarchy(plan, HierarchyOptions::default());
    let cfg = SolverConfig {
        method: Method::Pcg,
        rtol,
        i_max: 200,
        ..SolverConfig::default()
    };
    let (u, rep) = solve_pcg(&pr.system, &h, &cfg, &pr.initial_guess()).unwrap();
    assert!(rep.converged);
    rel_inf(&u, &solve_direct(&pr.system).unwrap())
}
