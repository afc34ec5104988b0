//! Outer iterations for the Laplace system: stand-alone multigrid, multigrid
//! preconditioned defect correction (PDC), multigrid preconditioned conjugate
//! gradients (PCG), and a sparse direct reference solver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::AssembledSystem;
use crate::direct::SparseCholesky;
use crate::error::{Error, Result};
use crate::multigrid::MGHierarchy;
use crate::sparse::{dot, norm2, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mg,
    Pdc,
    Pcg,
    Direct,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mg" => Ok(Method::Mg),
            "pdc" => Ok(Method::Pdc),
            "pcg" => Ok(Method::Pcg),
            "direct" => Ok(Method::Direct),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected mg, pdc, pcg or direct)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mg => "mg",
            Method::Pdc => "pdc",
            Method::Pcg => "pcg",
            Method::Direct => "direct",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub i_max: usize,
    pub nu1: usize,
    pub nu2: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Pcg,
            rtol: 1e-7,
            atol: 0.0,
            i_max: 100,
            nu1: 3,
            nu2: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol >= 0.0 && self.atol >= 0.0) || !(self.rtol + self.atol > 0.0) {
            return Err(Error::Config(format!(
                "tolerances must be non-negative with rtol + atol > 0 (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        if self.i_max == 0 {
            return Err(Error::Config("i_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn stop(&self) -> StopCriterion {
        StopCriterion {
            rtol: self.rtol,
            atol: self.atol,
        }
    }
}

/// `‖r‖₂ ≤ rtol ‖f‖₂ + atol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriterion {
    pub rtol: f64,
    pub atol: f64,
}

impl StopCriterion {
    pub fn threshold(&self, f_norm: f64) -> f64 {
        self.rtol * f_norm + self.atol
    }

    /// Index of the first residual norm meeting the criterion.
    pub fn first_met(&self, history: &[f64], f_norm: f64) -> Option<usize> {
        let t = self.threshold(f_norm);
        history.iter().position(|&r| r <= t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    /// `‖r⁽ᵐ⁾‖₂` for `m = 0..=iterations`.
    pub residual_history: Vec<f64>,
    /// `‖r⁽ᵐ⁾‖ / ‖r⁽ᵐ⁻¹⁾‖` for `m = 1..=iterations`.
    pub q: Vec<f64>,
    pub rhs_norm: f64,
    pub threshold: f64,
    pub wall_time: f64,
    pub work_units: Option<f64>,
}

impl SolveReport {
    fn new(method: Method, history: Vec<f64>, rhs_norm: f64, threshold: f64, converged: bool, wall_time: f64) -> Self {
        let q = history.windows(2).map(|w| w[1] / w[0]).collect();
        Self {
            method,
            iterations: history.len() - 1,
            converged,
            residual_history: history,
            q,
            rhs_norm,
            threshold,
            wall_time,
            work_units: None,
        }
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap()
    }

    /// Geometric mean of the per-iteration `q` over iterations `from..=to`
    /// (1-based, clipped to the available iterations).
    pub fn mean_q(&self, from: usize, to: usize) -> Option<f64> {
        let lo = from.max(1) - 1;
        let hi = to.min(self.q.len());
        if lo >= hi {
            return None;
        }
        let s: f64 = self.q[lo..hi].iter().map(|q| q.ln()).sum();
        Some((s / (hi - lo) as f64).exp())
    }
}

fn check_dims(system: &AssembledSystem, u0: &[f64]) -> Result<()> {
    let n = system.matrix.nrows();
    if system.rhs.len() != n || u0.len() != n {
        return Err(Error::Dimension(format!(
            "matrix is {n}x{n}, rhs has {}, initial guess has {}",
            system.rhs.len(),
            u0.len()
        )));
    }
    Ok(())
}

fn check_hierarchy(system: &AssembledSystem, h: &MGHierarchy) -> Result<()> {
    if h.fine().dofmap.n_dofs() != system.matrix.nrows() {
        return Err(Error::Dimension("hierarchy does not match the system".into()));
    }
    Ok(())
}

// Shared loop of the stationary iterations: `step` maps the current iterate
// to the next one.
fn stationary(
    method: Method,
    system: &AssembledSystem,
    config: &SolverConfig,
    u0: &[f64],
    mut step: impl FnMut(&mut [f64], &[f64]),
) -> (Vec<f64>, SolveReport) {
    let start = Instant::now();
    let a = &system.matrix;
    let f = &system.rhs;
    let f_norm = norm2(f);
    let stop = config.stop();
    let threshold = stop.threshold(f_norm);
    let mut u = u0.to_vec();
    let mut r = vec![0.0; u.len()];
    a.residual(&u, f, &mut r);
    let mut history = vec![norm2(&r)];
    let mut converged = history[0] <= threshold;
    while !converged && history.len() <= config.i_max {
        step(&mut u, &r);
        a.residual(&u, f, &mut r);
        let rn = norm2(&r);
        history.push(rn);
        if !rn.is_finite() {
            break;
        }
        converged = rn <= threshold;
    }
    let report = SolveReport::new(method, history, f_norm, threshold, converged, start.elapsed().as_secs_f64());
    (u, report)
}

/// Stand-alone multigrid: V-cycles on `A u = f` until the stop criterion.
pub fn solve_mg(
    system: &AssembledSystem,
    hierarchy: &MGHierarchy,
    config: &SolverConfig,
    u0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(system, u0)?;
    check_hierarchy(system, hierarchy)?;
    let f = system.rhs.clone();
    Ok(stationary(Method::Mg, system, config, u0, |u, _| hierarchy.v_cycle(u, &f)))
}

/// Defect correction `u ← u − δ` with `δ` one V-cycle on `A δ = −r` from zero.
pub fn solve_pdc(
    system: &AssembledSystem,
    hierarchy: &MGHierarchy,
    config: &SolverConfig,
    u0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(system, u0)?;
    check_hierarchy(system, hierarchy)?;
    Ok(stationary(Method::Pdc, system, config, u0, |u, r| {
        // `r` holds f − A u, so the defect is −r.
        let defect: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = hierarchy.precondition(&defect);
        for (ui, di) in u.iter_mut().zip(&delta) {
            *ui -= di;
        }
    }))
}

/// Conjugate gradients preconditioned by one V-cycle per iteration.
pub fn solve_pcg(
    system: &AssembledSystem,
    hierarchy: &MGHierarchy,
    config: &SolverConfig,
    u0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(system, u0)?;
    check_hierarchy(system, hierarchy)?;
    pcg_with(&system.matrix, &system.rhs, config, u0, |r| hierarchy.precondition(r))
}

/// Preconditioned conjugate gradients with an arbitrary preconditioner `z = B r`.
pub fn pcg_with(
    a: &CsrMatrix,
    f: &[f64],
    config: &SolverConfig,
    u0: &[f64],
    precondition: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let n = a.nrows();
    let f_norm = norm2(f);
    let threshold = config.stop().threshold(f_norm);
    let mut u = u0.to_vec();
    let mut r = vec![0.0; n];
    a.residual(&u, f, &mut r);
    let mut history = vec![norm2(&r)];
    let mut converged = history[0] <= threshold;
    if !converged {
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut delta = dot(&z, &r);
        let mut q = vec![0.0; n];
        while history.len() <= config.i_max {
            a.spmv(&p, &mut q);
            let curvature = dot(&p, &q);
            if !(curvature > 0.0) {
                return Err(Error::Breakdown {
                    iteration: history.len(),
                    curvature,
                });
            }
            let alpha = delta / curvature;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            let rn = norm2(&r);
            history.push(rn);
            if !rn.is_finite() {
                break;
            }
            if rn <= threshold {
                converged = true;
                break;
            }
            z = precondition(&r);
            let delta_new = dot(&z, &r);
            let beta = delta_new / delta;
            delta = delta_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    let report = SolveReport::new(Method::Pcg, history, f_norm, threshold, converged, start.elapsed().as_secs_f64());
    Ok((u, report))
}

/// Sparse Cholesky solve with reverse Cuthill–McKee ordering.
pub fn solve_direct(system: &AssembledSystem) -> Result<Vec<f64>> {
    Ok(SparseCholesky::factor(&system.matrix)?.solve(&system.rhs))
}

/// [`solve_direct`] with a report (one "iteration", factorization included
/// in the wall time).
pub fn solve_direct_report(system: &AssembledSystem) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let u = solve_direct(system)?;
    let wall = start.elapsed().as_secs_f64();
    let f_norm = norm2(&system.rhs);
    let mut r = vec![0.0; u.len()];
    system.matrix.residual(&u, &system.rhs, &mut r);
    let history = vec![f_norm, norm2(&r)];
    Ok((u, SolveReport::new(Method::Direct, history, f_norm, f64::NAN, true, wall)))
}

/// Dispatches on `config.method`; iterative methods require a hierarchy.
pub fn solve(
    system: &AssembledSystem,
    hierarchy: Option<&MGHierarchy>,
    config: &SolverConfig,
    u0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    config.validate()?;
    let need = || hierarchy.ok_or_else(|| Error::Config(format!("method {} needs a multigrid hierarchy", config.method)));
    match config.method {
        Method::Mg => solve_mg(system, need()?, config, u0),
        Method::Pdc => solve_pdc(system, need()?, config, u0),
        Method::Pcg => solve_pcg(system, need()?, config, u0),
        Method::Direct => solve_direct_report(system),
    }
}

/// Median wall time of one fine-grid SpMV, the unit of work.
#[derive(Debug, Clone, Copy)]
pub struct SpmvTimer {
    pub median: f64,
}

impl SpmvTimer {
    pub fn calibrate(a: &CsrMatrix, samples: usize) -> Self {
        let x: Vec<f64> = (0..a.ncols()).map(|i| 1.0 + (i % 7) as f64).collect();
        let mut y = vec![0.0; a.nrows()];
        a.spmv(&x, &mut y);
        let mut t: Vec<f64> = (0..samples.max(20))
            .map(|_| {
                let s = Instant::now();
                a.spmv(&x, &mut y);
                std::hint::black_box(&y);
                s.elapsed().as_secs_f64()
            })
            .collect();
        t.sort_by(f64::total_cmp);
        Self { median: t[t.len() / 2] }
    }

    pub fn work_units(&self, seconds: f64) -> f64 {
        seconds / self.median
    }
}

/// Work units of a solve: its wall time over the median SpMV time of the
/// system matrix (21 samples).
pub fn work_units(report: &SolveReport, system: &AssembledSystem) -> f64 {
    SpmvTimer::calibrate(&system.matrix, 21).work_units(report.wall_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{compute_metric, Assembler, SurfaceField};
    use crate::mesh::{build_dofmap, build_structured, Bathymetry};
    use crate::multigrid::{make_coarsening_plan, HierarchyOptions};
    use proptest::prelude::*;

    struct Problem {
        system: AssembledSystem,
        hierarchy: MGHierarchy,
    }

    fn problem(nx: usize, ns: usize, p: usize) -> Problem {
        let bathy = Bathymetry::Piecewise { points: vec![[0.0, 1.0], [4.0, 0.4]] };
        let mesh = build_structured(0.0, 4.0, nx, ns, &bathy).unwrap();
        let d = build_dofmap(&mesh, p, p).unwrap();
        let eta = SurfaceField::new(p, d.x_coords().iter().map(|x| 0.05 * (1.5 * x).cos()).collect());
        let k = compute_metric(&mesh, &d, &bathy, Some(&eta)).unwrap();
        let g: Vec<f64> = d.x_coords().iter().map(|x| (1.5 * x).sin()).collect();
        let system = Assembler::new(&mesh, &d).unwrap().system(&k).impose_boundary_conditions(&d, &g).unwrap();
        let plan = make_coarsening_plan(p, p, None).unwrap();
        let hierarchy = MGHierarchy::build(&mesh, &bathy, &plan, Some(&eta), HierarchyOptions::default()).unwrap();
        Problem { system, hierarchy }
    }

    fn cfg(method: Method, rtol: f64) -> SolverConfig {
        SolverConfig { method, rtol, ..Default::default() }
    }

    fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        d / b.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_recovered() {
        let mut pb = problem(4, 2, 4);
        let n = pb.system.n();
        let exact: Vec<f64> = (0..n).map(|i| (i * 37 % 101) as f64 / 50.0 - 1.0).collect();
        pb.system.rhs = pb.system.matrix.mul_vec(&exact);
        for m in [Method::Mg, Method::Pdc, Method::Pcg] {
            let (u, rep) = solve(&pb.system, Some(&pb.hierarchy), &cfg(m, 1e-10), &vec![0.0; n]).unwrap();
            assert!(rep.converged);
            assert!(rel_inf(&u, &exact) < 1e-8, "{m}");
        }
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let mut pb = problem(2, 1, 3);
        pb.system.rhs.iter_mut().for_each(|v| *v = 0.0);
        let n = pb.system.n();
        for m in [Method::Mg, Method::Pdc, Method::Pcg] {
            let (_, rep) = solve(&pb.system, Some(&pb.hierarchy), &cfg(m, 1e-8), &vec![0.0; n]).unwrap();
            assert_eq!(rep.iterations, 0);
            assert!(rep.converged);
        }
    }

    #[test]
    fn pdc_reproduces_mg_iterates() {
        let pb = problem(4, 2, 4);
        let n = pb.system.n();
        let c = SolverConfig { i_max: 6, rtol: 1e-30, atol: 1e-300, ..cfg(Method::Mg, 1e-30) };
        let (u1, r1) = solve_mg(&pb.system, &pb.hierarchy, &c, &vec![0.0; n]).unwrap();
        let (u2, r2) = solve_pdc(&pb.system, &pb.hierarchy, &c, &vec![0.0; n]).unwrap();
        assert_eq!(r1.iterations, r2.iterations);
        for (a, b) in r1.residual_history.iter().zip(&r2.residual_history).take(4) {
            assert!((a - b).abs() <= 1e-10 * a.max(1e-300) + 1e-14);
        }
        assert!(rel_inf(&u1, &u2) < 1e-12);
    }

    #[test]
    fn inconsistent_neumann_system_does_not_converge() {
        let pb = problem(3, 1, 2);
        let n = pb.system.n();
        let raw = pb.hierarchy.fine_raw_matrix();
        let singular = AssembledSystem {
            matrix: raw,
            rhs: vec![1.0; n],
            dirichlet: Vec::new(),
            is_dirichlet: vec![false; n],
        };
        let c = SolverConfig { i_max: 20, ..cfg(Method::Pdc, 1e-8) };
        let (_, rep) = solve_pdc(&singular, &pb.hierarchy, &c, &vec![0.0; n]).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 20);
    }

    #[test]
    fn plain_cg_on_diagonal_matrix() {
        let n = 12;
        let t: Vec<_> = (0..n).map(|i| (i, i, (i + 1) as f64)).collect();
        let a = CsrMatrix::from_triplets(n, n, &t);
        let f = vec![1.0; n];
        let c = SolverConfig { rtol: 1e-12, ..Default::default() };
        let (u, rep) = pcg_with(&a, &f, &c, &vec![0.0; n], |r| r.to_vec()).unwrap();
        assert!(rep.converged && rep.iterations <= n);
        assert!(u.iter().enumerate().all(|(i, v)| (v * (i + 1) as f64 - 1.0).abs() < 1e-10));
    }

    #[test]
    fn breakdown_on_indefinite_matrix() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        let c = SolverConfig { rtol: 1e-12, ..Default::default() };
        let res = pcg_with(&a, &[1.0, 1.0], &c, &[0.0, 0.0], |r| r.to_vec());
        assert!(matches!(res, Err(Error::Breakdown { .. })));
    }

    #[test]
    fn pcg_matches_direct_on_small_mesh() {
        let pb = problem(2, 2, 3);
        let n = pb.system.n();
        let direct = solve_direct(&pb.system).unwrap();
        let (u, _) = solve_pcg(&pb.system, &pb.hierarchy, &cfg(Method::Pcg, 1e-12), &vec![0.0; n]).unwrap();
        assert!(rel_inf(&u, &direct) < 1e-9);
    }

    #[test]
    fn pcg_error_energy_decreases() {
        let pb = problem(6, 2, 4);
        let n = pb.system.n();
        let exact = solve_direct(&pb.system).unwrap();
        let a = &pb.system.matrix;
        let mut last = f64::INFINITY;
        for it in 1..6 {
            let c = SolverConfig { i_max: it, rtol: 1e-30, ..Default::default() };
            let (u, _) = solve_pcg(&pb.system, &pb.hierarchy, &c, &vec![0.0; n]).unwrap();
            let e: Vec<f64> = u.iter().zip(&exact).map(|(x, y)| x - y).collect();
            let en = dot(&e, &a.mul_vec(&e)).sqrt();
            assert!(en <= last * (1.0 + 1e-9) + 1e-13, "iteration {it}: {en} > {last}");
            last = en;
        }
    }

    #[test]
    fn identity_direct_solve() {
        let n = 5;
        let f = vec![0.5, -2.0, 3.0, 1e-3, 7.0];
        let sys = AssembledSystem {
            matrix: CsrMatrix::identity(n),
            rhs: f.clone(),
            dirichlet: Vec::new(),
            is_dirichlet: vec![false; n],
        };
        assert_eq!(solve_direct(&sys).unwrap(), f);
        let (_, rep) = solve_direct_report(&sys).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn reports_are_deterministic() {
        let pb = problem(4, 2, 4);
        let n = pb.system.n();
        for m in [Method::Mg, Method::Pcg] {
            let (_, a) = solve(&pb.system, Some(&pb.hierarchy), &cfg(m, 1e-9), &vec![0.0; n]).unwrap();
            let (_, b) = solve(&pb.system, Some(&pb.hierarchy), &cfg(m, 1e-9), &vec![0.0; n]).unwrap();
            assert_eq!(a.residual_history, b.residual_history);
        }
    }

    #[test]
    fn q_from_history() {
        let r = SolveReport::new(Method::Mg, vec![1.0, 0.1, 0.01], 1.0, 0.0, false, 0.0);
        assert!((r.q[0] - 0.1).abs() < 1e-15 && (r.q[1] - 0.1).abs() < 1e-15);
        assert!((r.mean_q(1, 2).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_tolerances_rejected() {
        let c = SolverConfig { rtol: 0.0, atol: 0.0, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = SolverConfig { i_max: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn reports_serialize() {
        let r = SolveReport::new(Method::Pcg, vec![1.0, 0.5], 1.0, 0.1, false, 0.0);
        let s = serde_json::to_string(&r).unwrap();
        let back: SolveReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn one_spmv_is_one_work_unit() {
        let pb = problem(16, 2, 6);
        let a = &pb.system.matrix;
        let x = vec![1.0; a.ncols()];
        let mut y = vec![0.0; a.nrows()];
        // Timing noise: accept if any of a few attempts lands within 20 %.
        let ok = (0..5).any(|_| {
            let timer = SpmvTimer::calibrate(a, 21);
            let mut t: Vec<f64> = (0..21)
                .map(|_| {
                    let s = Instant::now();
                    a.spmv(&x, &mut y);
                    std::hint::black_box(&y);
                    s.elapsed().as_secs_f64()
                })
                .collect();
            t.sort_by(f64::total_cmp);
            (timer.work_units(t[10]) - 1.0).abs() <= 0.2
        });
        assert!(ok);
    }

    proptest! {
        #[test]
        fn first_met_is_first_index_below_threshold(h in proptest::collection::vec(1e-12f64..10.0, 1..30),
                                                    rtol in 1e-8f64..1.0, f in 0.0f64..10.0) {
            let s = StopCriterion { rtol, atol: 1e-10 };
            let t = s.threshold(f);
            match s.first_met(&h, f) {
                Some(m) => {
                    prop_assert!(h[m] <= t);
                    prop_assert!(h[..m].iter().all(|&r| r > t));
                }
                None => prop_assert!(h.iter().all(|&r| r > t)),
            }
        }
    }
}
