//! Time-domain free-surface model: the kinematic and dynamic free-surface
//! conditions advanced with classical RK4, one Laplace solve per stage,
//! relaxation zones for wave generation and absorption, and the operator
//! update strategies of the multigrid hierarchy.

use serde::{Deserialize, Serialize};

use crate::assembly::{compute_metric, vertical_velocity, AssembledSystem, Assembler, MetricField, SurfaceField};
use crate::basis::{lgl_basis, BasisSet};
use crate::error::{Error, Result};
use crate::mesh::{Bathymetry, BoundaryTag, DofMap, LayeredMesh};
use crate::sparse::CsrMatrix;
use crate::multigrid::{CoarseningPlan, HierarchyOptions, MGHierarchy};
use crate::solvers::{self, Method, SolveReport, SolverConfig, SpmvTimer};

pub const GRAVITY: f64 = 9.81;

/// When the multigrid operators follow the moving free surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateStrategy {
    /// Preconditioner (smoothers, transfers, coarse operators) frozen at
    /// `t = 0`; the fine operator still follows `η`.
    #[serde(rename = "I", alias = "1")]
    Frozen,
    /// Finest level follows `η`; coarse levels use the still-water metric.
    #[serde(rename = "II", alias = "2")]
    LinearCoarse,
    /// Every level follows `η`.
    #[serde(rename = "III", alias = "3")]
    Nonlinear,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 3] = [UpdateStrategy::Frozen, UpdateStrategy::LinearCoarse, UpdateStrategy::Nonlinear];

    pub fn label(self) -> &'static str {
        match self {
            UpdateStrategy::Frozen => "I",
            UpdateStrategy::LinearCoarse => "II",
            UpdateStrategy::Nonlinear => "III",
        }
    }
}

impl std::str::FromStr for UpdateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "I" | "i" => Ok(UpdateStrategy::Frozen),
            "2" | "II" | "ii" => Ok(UpdateStrategy::LinearCoarse),
            "3" | "III" | "iii" => Ok(UpdateStrategy::Nonlinear),
            _ => Err(Error::Config(format!("unknown strategy `{s}` (expected 1, 2 or 3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Small-amplitude model: still-water geometry and linearized surface
    /// conditions.
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnpfState {
    pub t: f64,
    pub eta: Vec<f64>,
    pub phi_tilde: Vec<f64>,
    /// Surface vertical velocity of the last solve on this state.
    pub w_tilde: Option<Vec<f64>>,
}

impl FnpfState {
    pub fn still(n: usize) -> Self {
        Self {
            t: 0.0,
            eta: vec![0.0; n],
            phi_tilde: vec![0.0; n],
            w_tilde: None,
        }
    }
}

/// Differentiation, integration and point evaluation of nodal fields on the
/// free-surface line.
#[derive(Debug, Clone)]
pub struct SurfaceOps {
    basis: BasisSet,
    bounds: Vec<(f64, f64)>,
    x: Vec<f64>,
    mass: Vec<f64>,
}

impl SurfaceOps {
    pub fn new(mesh: &LayeredMesh, dofmap: &DofMap) -> Result<Self> {
        let (px, _) = dofmap.orders();
        let basis = lgl_basis(px)?;
        let bounds: Vec<_> = (0..mesh.n_x()).map(|e| mesh.surface().element_bounds(e)).collect();
        let mut mass = vec![0.0; dofmap.nx_nodes()];
        for (e, &(a, b)) in bounds.iter().enumerate() {
            for (k, w) in basis.weights().iter().enumerate() {
                mass[e * px + k] += w * (b - a) / 2.0;
            }
        }
        Ok(Self {
            basis,
            bounds,
            x: dofmap.x_coords().to_vec(),
            mass,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Lumped (LGL) mass of every surface node.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `∂f/∂x` element by element; values at shared nodes are averaged with
    /// the lumped-mass contributions of the two elements.
    pub fn gradient(&self, f: &[f64]) -> Vec<f64> {
        let p = self.basis.order();
        let d = self.basis.diff_matrix();
        let w = self.basis.weights();
        let mut out = vec![0.0; f.len()];
        for (e, &(a, b)) in self.bounds.iter().enumerate() {
            let scale = 2.0 / (b - a);
            let fe = &f[e * p..=(e + 1) * p];
            for i in 0..=p {
                let g: f64 = (0..=p).map(|j| d[(i, j)] * fe[j]).sum::<f64>() * scale;
                out[e * p + i] += g * w[i] * (b - a) / 2.0;
            }
        }
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o /= m;
        }
        out
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.mass).map(|(a, b)| a * b).sum()
    }

    pub fn evaluate(&self, f: &[f64], x: f64) -> Option<f64> {
        let p = self.basis.order();
        let e = self.bounds.partition_point(|&(_, b)| b < x).min(self.bounds.len() - 1);
        let (a, b) = self.bounds[e];
        if x < a || x > b {
            return None;
        }
        let xi = 2.0 * (x - a) / (b - a) - 1.0;
        Some(self.basis.interpolate(&f[e * p..=(e + 1) * p], xi))
    }
}

/// Free-surface rates `(∂η/∂t, ∂φ̃/∂t)` given the surface vertical velocity.
pub fn surface_rhs(model: Model, eta: &[f64], phi: &[f64], w: &[f64], ops: &SurfaceOps) -> (Vec<f64>, Vec<f64>) {
    match model {
        Model::Linear => (w.to_vec(), eta.iter().map(|e| -GRAVITY * e).collect()),
        Model::Nonlinear => {
            let ex = ops.gradient(eta);
            let px = ops.gradient(phi);
            let mut de = Vec::with_capacity(eta.len());
            let mut dp = Vec::with_capacity(eta.len());
            for i in 0..eta.len() {
                let s = 1.0 + ex[i] * ex[i];
                de.push(-ex[i] * px[i] + w[i] * s);
                dp.push(-GRAVITY * eta[i] - 0.5 * (px[i] * px[i] - w[i] * w[i] * s));
            }
            (de, dp)
        }
    }
}

/// One classical RK4 step of `y' = f(t, y)`.
pub fn rk4_step<F>(t: f64, y: &[f64], dt: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k2))?;
    let k4 = f(t + dt, &axpy(dt, &k3))?;
    Ok((0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// RK4 step of the free-surface state; `solve(t, η, φ̃)` returns `w̃`.
pub fn erk4_step<S>(state: &FnpfState, dt: f64, model: Model, ops: &SurfaceOps, mut solve: S) -> Result<FnpfState>
where
    S: FnMut(f64, &[f64], &[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let n = state.eta.len();
    let y: Vec<f64> = state.eta.iter().chain(&state.phi_tilde).copied().collect();
    let y1 = rk4_step(state.t, &y, dt, |t, y| {
        let (eta, phi) = y.split_at(n);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { t });
        }
        let w = solve(t, eta, phi)?;
        let (de, dp) = surface_rhs(model, eta, phi, &w, ops);
        Ok(de.into_iter().chain(dp).collect())
    })?;
    if y1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { t: state.t + dt });
    }
    Ok(FnpfState {
        t: state.t + dt,
        eta: y1[..n].to_vec(),
        phi_tilde: y1[n..].to_vec(),
        w_tilde: None,
    })
}

/// Angular frequency to wavenumber through `ω² = g k tanh(k h)`.
pub fn wavenumber(omega: f64, depth: f64) -> f64 {
    let lo0 = omega * omega / GRAVITY;
    let (mut lo, mut hi) = (lo0, lo0 / (lo0 * depth).tanh());
    let f = |k: f64| GRAVITY * k * (k * depth).tanh() - omega * omega;
    let mut k = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fk = f(k);
        if fk > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        let t = (k * depth).tanh();
        let df = GRAVITY * (t + k * depth * (1.0 - t * t));
        let newton = k - fk / df;
        k = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo) <= 1e-15 * k || fk == 0.0 {
            break;
        }
    }
    k
}

/// Linear dispersion period of wavenumber `k` in depth `h`.
pub fn linear_period(k: f64, depth: f64) -> f64 {
    2.0 * std::f64::consts::PI / (GRAVITY * k * (k * depth).tanh()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IncidentWave {
    /// Linear Airy wave `η = a cos(kx − ωt)` ramped up over `ramp_periods`.
    LinearMonochromatic {
        amplitude: f64,
        period: f64,
        depth: f64,
        #[serde(default = "default_ramp")]
        ramp_periods: f64,
    },
    /// Reserved for steep-wave generation; not available.
    StreamFunctionPlaceholder {},
}

fn default_ramp() -> f64 {
    2.0
}

impl IncidentWave {
    pub fn validate(&self) -> Result<()> {
        match self {
            IncidentWave::LinearMonochromatic {
                amplitude,
                period,
                depth,
                ramp_periods,
            } => {
                if !(amplitude.is_finite() && *period > 0.0 && *depth > 0.0 && *ramp_periods >= 0.0) {
                    return Err(Error::Config("invalid linear_monochromatic wave parameters".into()));
                }
                Ok(())
            }
            IncidentWave::StreamFunctionPlaceholder {} => {
                Err(Error::Config("incident wave kind `stream_function_placeholder` is not supported".into()))
            }
        }
    }

    pub fn wavenumber(&self) -> Option<f64> {
        match self {
            IncidentWave::LinearMonochromatic { period, depth, .. } => {
                Some(wavenumber(2.0 * std::f64::consts::PI / period, *depth))
            }
            IncidentWave::StreamFunctionPlaceholder {} => None,
        }
    }
}

/// Target `(η, φ̃)` of the incident wave at `(t, x)`.
pub fn incident_wave(wave: &IncidentWave, t: f64, x: f64) -> Result<(f64, f64)> {
    wave.validate()?;
    let IncidentWave::LinearMonochromatic {
        amplitude,
        period,
        depth,
        ramp_periods,
    } = *wave
    else {
        unreachable!()
    };
    let omega = 2.0 * std::f64::consts::PI / period;
    let k = wavenumber(omega, depth);
    let t_ramp = ramp_periods * period;
    let ramp = if t < t_ramp {
        0.5 * (1.0 - (std::f64::consts::PI * t / t_ramp).cos())
    } else {
        1.0
    };
    let theta = k * x - omega * t;
    let eta = ramp * amplitude * theta.cos();
    let phi = ramp * GRAVITY * amplitude / omega * (k * (depth + eta)).cosh() / (k * depth).cosh() * theta.sin();
    Ok((eta, phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneTarget {
    Incident,
    StillWater,
}

/// Relaxation zone between `outer` (where the target is imposed) and
/// `interface` (where the computed solution is left untouched).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationZone {
    pub outer: f64,
    pub interface: f64,
    pub target: ZoneTarget,
}

impl RelaxationZone {
    /// Blending weight `Γ = 1 − (1 − ξ)³`, `ξ` the normalized distance from
    /// the outer end; `None` outside the zone.
    pub fn gamma(&self, x: f64) -> Option<f64> {
        let (lo, hi) = (self.outer.min(self.interface), self.outer.max(self.interface));
        if x < lo || x > hi {
            return None;
        }
        let xi = ((x - self.outer) / (self.interface - self.outer)).clamp(0.0, 1.0);
        Some(1.0 - (1.0 - xi).powi(3))
    }
}

/// Blends `η` and `φ̃` toward the zone targets at `state.t`.
pub fn apply_relaxation(
    state: &mut FnpfState,
    x: &[f64],
    zones: &[RelaxationZone],
    wave: Option<&IncidentWave>,
) -> Result<()> {
    for z in zones {
        for (i, &xi) in x.iter().enumerate() {
            let Some(g) = z.gamma(xi) else { continue };
            let (te, tp) = match z.target {
                ZoneTarget::StillWater => (0.0, 0.0),
                ZoneTarget::Incident => {
                    let w = wave.ok_or_else(|| Error::Config("incident-wave zone without a wave".into()))?;
                    incident_wave(w, state.t, xi)?
                }
            };
            state.eta[i] = g * state.eta[i] + (1.0 - g) * te;
            state.phi_tilde[i] = g * state.phi_tilde[i] + (1.0 - g) * tp;
        }
    }
    state.w_tilde = None;
    Ok(())
}

/// Initial guess of each Laplace solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    Zero,
    /// Previous solution with the new surface values.
    Previous,
    /// Previous solution shifted in every column by the change of the
    /// surface potential.
    #[default]
    ColumnShift,
    /// Quadratic extrapolation in time of the solutions of the same RK stage
    /// in earlier steps, column-shifted to the new surface values.
    Extrapolate,
}

/// Statistics of one Laplace solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStat {
    pub t: f64,
    /// RK stage 1..=4, or 0 for the post-step solve.
    pub stage: usize,
    pub iterations: usize,
    pub q: Option<f64>,
    pub work_units: f64,
    pub converged: bool,
    /// `‖r⁽⁰⁾‖ / ‖f‖` of the warm start.
    pub initial_residual: f64,
}

/// Laplace solver of the time loop: owns the hierarchy and applies the
/// operator-update strategy before every solve.
#[derive(Debug)]
pub struct LaplaceStage {
    mesh: LayeredMesh,
    bathymetry: Bathymetry,
    hierarchy: MGHierarchy,
    /// Fine operator and metric of the current surface when the hierarchy
    /// does not carry them (strategy I).
    assembler: Option<Assembler>,
    current: Option<(CsrMatrix, MetricField)>,
    strategy: UpdateStrategy,
    model: Model,
    solver: SolverConfig,
    warm_start: WarmStart,
    last: Option<Vec<f64>>,
    /// Up to three most recent solutions per stage slot, newest first.
    history: Vec<std::collections::VecDeque<Vec<f64>>>,
    timer: SpmvTimer,
    pub stats: Vec<SolveStat>,
    pub last_report: Option<SolveReport>,
}

impl LaplaceStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &LayeredMesh,
        bathymetry: &Bathymetry,
        plan: &CoarseningPlan,
        options: HierarchyOptions,
        strategy: UpdateStrategy,
        model: Model,
        solver: SolverConfig,
        warm_start: WarmStart,
        eta0: &[f64],
    ) -> Result<Self> {
        solver.validate()?;
        let (px, _) = plan.finest();
        let eta = SurfaceField::new(px, eta0.to_vec());
        let options = HierarchyOptions {
            nu1: solver.nu1,
            nu2: solver.nu2,
            ..options
        };
        let hierarchy = match (model, strategy) {
            (Model::Linear, _) => MGHierarchy::build(mesh, bathymetry, plan, None, options)?,
            (Model::Nonlinear, UpdateStrategy::LinearCoarse) => {
                MGHierarchy::build_split(mesh, bathymetry, plan, Some(&eta), None, options)?
            }
            (Model::Nonlinear, _) => MGHierarchy::build(mesh, bathymetry, plan, Some(&eta), options)?,
        };
        let timer = SpmvTimer::calibrate(&hierarchy.fine().system.matrix, 21);
        let assembler = match (model, strategy) {
            (Model::Nonlinear, UpdateStrategy::Frozen) => Some(Assembler::new(mesh, &hierarchy.fine().dofmap)?),
            _ => None,
        };
        Ok(Self {
            mesh: mesh.clone(),
            bathymetry: bathymetry.clone(),
            hierarchy,
            assembler,
            current: None,
            strategy,
            model,
            solver,
            warm_start,
            last: None,
            history: vec![Default::default(); 5],
            timer,
            stats: Vec::new(),
            last_report: None,
        })
    }

    pub fn hierarchy(&self) -> &MGHierarchy {
        &self.hierarchy
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.hierarchy.fine().dofmap
    }

    pub fn solver_config(&self) -> &SolverConfig {
        &self.solver
    }

    /// Last full-volume potential.
    pub fn potential(&self) -> Option<&[f64]> {
        self.last.as_deref()
    }

    fn update_operators(&mut self, eta: &[f64]) -> Result<()> {
        if self.model == Model::Linear {
            return Ok(());
        }
        let (px, _) = self.hierarchy.plan().finest();
        let field = SurfaceField::new(px, eta.to_vec());
        match self.strategy {
            UpdateStrategy::Frozen => {
                let assembler = self.assembler.as_ref().expect("fine assembler");
                let metric = compute_metric(&self.mesh, assembler.dofmap(), &self.bathymetry, Some(&field))?;
                self.current = Some((assembler.assemble(&metric), metric));
                Ok(())
            }
            UpdateStrategy::LinearCoarse => self.hierarchy.update_levels(0..1, Some(&field)),
            UpdateStrategy::Nonlinear => self.hierarchy.update_levels(0..self.hierarchy.n_levels(), Some(&field)),
        }
    }

    fn fine_operator(&self) -> (&CsrMatrix, &MetricField) {
        match &self.current {
            Some((a, m)) => (a, m),
            None => (&self.hierarchy.fine().raw, &self.hierarchy.fine().metric),
        }
    }

    /// Fine-level system of the last updated surface with surface potential
    /// `phi`.
    pub fn system(&self, phi: &[f64]) -> Result<AssembledSystem> {
        let fine = self.hierarchy.fine();
        let n = fine.dofmap.n_dofs();
        AssembledSystem {
            matrix: self.fine_operator().0.clone(),
            rhs: vec![0.0; n],
            dirichlet: Vec::new(),
            is_dirichlet: vec![false; n],
        }
        .impose_boundary_conditions(&fine.dofmap, phi)
    }

    fn initial_guess(&self, stage: usize, phi: &[f64]) -> Vec<f64> {
        let d = self.dofmap();
        let (n, top) = (d.n_dofs(), d.ns_nodes() - 1);
        let hist = &self.history[stage.min(4)];
        let (mut u, shift) = match (&self.last, self.warm_start) {
            (None, _) | (_, WarmStart::Zero) => (vec![0.0; n], false),
            (Some(u), WarmStart::Previous) => (u.clone(), false),
            (Some(u), WarmStart::ColumnShift) => (u.clone(), true),
            // Stage 1 directly follows the post-step solve of the same state.
            (Some(u), WarmStart::Extrapolate) if stage == 1 || hist.is_empty() => (u.clone(), true),
            (Some(_), WarmStart::Extrapolate) => {
                let c: &[f64] = match hist.len() {
                    1 => &[1.0],
                    2 => &[2.0, -1.0],
                    _ => &[3.0, -3.0, 1.0],
                };
                let mut u = vec![0.0; n];
                for (w, v) in c.iter().zip(hist) {
                    u.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
                }
                (u, true)
            }
        };
        if shift {
            for (ix, &v) in phi.iter().enumerate() {
                let s = v - u[d.global(ix, top)];
                for is in 0..top {
                    u[d.global(ix, is)] += s;
                }
            }
        }
        for (ix, &v) in phi.iter().enumerate() {
            u[d.global(ix, top)] = v;
        }
        u
    }

    /// Solves the Laplace problem for surface state `(η, φ̃)` and returns `w̃`.
    pub fn solve(&mut self, t: f64, stage: usize, eta: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        self.update_operators(eta)?;
        let system = self.system(phi)?;
        let u0 = self.initial_guess(stage, phi);
        let (u, mut report) = match self.solver.method {
            Method::Direct => solvers::solve_direct_report(&system)?,
            _ => solvers::solve(&system, Some(&self.hierarchy), &self.solver, &u0)?,
        };
        let w = vertical_velocity(&self.mesh, self.dofmap(), self.fine_operator().1, &u)?;
        report.work_units = Some(self.timer.work_units(report.wall_time));
        self.stats.push(SolveStat {
            t,
            stage,
            iterations: report.iterations,
            q: report.mean_q(1, report.iterations),
            work_units: report.work_units.unwrap_or(f64::NAN),
            converged: report.converged,
            initial_residual: report.residual_history[0] / report.rhs_norm,
        });
        let hist = &mut self.history[stage.min(4)];
        if hist.len() == 3 {
            hist.pop_back();
        }
        hist.push_front(u.clone());
        self.last = Some(u);
        self.last_report = Some(report);
        Ok(w)
    }
}

/// Per-step diagnostics of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub gauges: Vec<f64>,
    pub mass: f64,
    /// `∫|η| dx`.
    pub abs_mass: f64,
    pub energy: f64,
    pub max_abs_eta: f64,
}

/// `max |M_n − M_0|` relative to the largest `∫|η| dx` of the run.
pub fn mass_drift(records: &[StepRecord]) -> f64 {
    let Some(first) = records.first() else { return 0.0 };
    let scale = records.iter().fold(0.0f64, |m, r| m.max(r.abs_mass));
    let drift = records.iter().fold(0.0f64, |m, r| m.max((r.mass - first.mass).abs()));
    if scale > 0.0 {
        drift / scale
    } else {
        drift
    }
}

/// `max |E_n − E_0| / E_0`, zero for a run starting at rest.
pub fn energy_drift(records: &[StepRecord]) -> f64 {
    let Some(first) = records.first() else { return 0.0 };
    if first.energy <= 0.0 {
        return 0.0;
    }
    records.iter().fold(0.0f64, |m, r| m.max((r.energy - first.energy).abs())) / first.energy
}

/// Time-domain driver.
#[derive(Debug)]
pub struct Simulation {
    pub state: FnpfState,
    pub laplace: LaplaceStage,
    pub ops: SurfaceOps,
    pub model: Model,
    pub dt: f64,
    pub zones: Vec<RelaxationZone>,
    pub wave: Option<IncidentWave>,
    pub gauges: Vec<f64>,
    pub records: Vec<StepRecord>,
}

impl Simulation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &LayeredMesh,
        laplace: LaplaceStage,
        model: Model,
        dt: f64,
        zones: Vec<RelaxationZone>,
        wave: Option<IncidentWave>,
        gauges: Vec<f64>,
        initial: FnpfState,
    ) -> Result<Self> {
        let ops = SurfaceOps::new(mesh, laplace.dofmap())?;
        if initial.eta.len() != ops.len() || initial.phi_tilde.len() != ops.len() {
            return Err(Error::Dimension("initial state does not match the surface nodes".into()));
        }
        for &g in &gauges {
            if ops.evaluate(&initial.eta, g).is_none() {
                return Err(Error::Config(format!("gauge at x = {g} lies outside the domain")));
            }
        }
        if let Some(w) = &wave {
            w.validate()?;
        }
        let mut sim = Self {
            state: initial,
            laplace,
            ops,
            model,
            dt,
            zones,
            wave,
            gauges,
            records: Vec::new(),
        };
        let t = sim.state.t;
        let w = sim.laplace.solve(t, 0, &sim.state.eta.clone(), &sim.state.phi_tilde.clone())?;
        sim.record(&w);
        Ok(sim)
    }

    fn record(&mut self, w: &[f64]) {
        let s = &self.state;
        let (de, _) = surface_rhs(self.model, &s.eta, &s.phi_tilde, w, &self.ops);
        let density: Vec<f64> = (0..s.eta.len())
            .map(|i| 0.5 * (GRAVITY * s.eta[i] * s.eta[i] + s.phi_tilde[i] * de[i]))
            .collect();
        self.records.push(StepRecord {
            t: s.t,
            gauges: self.gauges.iter().map(|&g| self.ops.evaluate(&s.eta, g).unwrap_or(f64::NAN)).collect(),
            mass: self.ops.integrate(&s.eta),
            abs_mass: self.ops.integrate(&s.eta.iter().map(|v| v.abs()).collect::<Vec<_>>()),
            energy: self.ops.integrate(&density),
            max_abs_eta: s.eta.iter().fold(0.0, |m, v| m.max(v.abs())),
        });
    }

    /// Four stage solves, the post-step solve (diagnostics), then relaxation.
    pub fn step(&mut self) -> Result<()> {
        let mut stage = 0;
        let laplace = &mut self.laplace;
        let next = erk4_step(&self.state, self.dt, self.model, &self.ops, |t, eta, phi| {
            stage += 1;
            laplace.solve(t, stage, eta, phi)
        })?;
        self.state = next;
        let w = self.laplace.solve(self.state.t, 0, &self.state.eta.clone(), &self.state.phi_tilde.clone())?;
        self.record(&w);
        self.state.w_tilde = Some(w);
        if !self.zones.is_empty() {
            apply_relaxation(&mut self.state, self.ops.x(), &self.zones, self.wave.as_ref())?;
            if let Some(r) = self.records.last_mut() {
                r.gauges = self.gauges.iter().map(|&g| self.ops.evaluate(&self.state.eta, g).unwrap_or(f64::NAN)).collect();
            }
        }
        Ok(())
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Surface node indices of `dofmap` on the free surface, in `x` order.
pub fn surface_nodes(dofmap: &DofMap) -> Vec<usize> {
    dofmap.boundary_nodes(BoundaryTag::FreeSurface)
}
