//! Benchmark presets and drivers: the submerged-bar propagation case, the
//! closed-tank standing wave, single steady Laplace solves and the
//! O(n) scaling sweep.

use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::assembly::{AssembledSystem, SurfaceField};
use crate::error::{Error, Result};
use crate::fnpf::{
    incident_wave, linear_period, FnpfState, IncidentWave, LaplaceStage, Model, RelaxationZone, Simulation,
    UpdateStrategy, WarmStart, ZoneTarget, GRAVITY,
};
use crate::mesh::{build_dofmap, build_structured, Bathymetry, DofMap, LayeredMesh};
use crate::multigrid::{make_coarsening_plan, CoarseningPlan, HierarchyOptions, MGHierarchy, Overlap};
use crate::solvers::{self, Method, SolveReport, SolverConfig};

pub const PRESET_NAMES: [&str; 4] = ["bar2d", "standing-linear", "standing-nonlinear", "standing-still"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub n_sigma: usize,
    pub bathymetry: Bathymetry,
}

impl MeshSpec {
    pub fn build(&self) -> Result<LayeredMesh> {
        build_structured(self.x_min, self.x_max, self.n_x, self.n_sigma, &self.bathymetry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Still,
    /// `η₀ = a cos(k (x − x_min))`, `φ̃₀ = 0`.
    StandingWave { amplitude: f64, wavenumber: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasePreset {
    pub name: String,
    pub mesh: MeshSpec,
    pub orders: (usize, usize),
    /// Explicit coarsening plan; the default rule when absent.
    #[serde(default)]
    pub plan: Option<Vec<(usize, usize)>>,
    pub model: Model,
    pub strategy: UpdateStrategy,
    pub solver: SolverConfig,
    #[serde(default)]
    pub hierarchy: HierarchyOptions,
    #[serde(default)]
    pub warm_start: WarmStart,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub gauges: Vec<f64>,
    #[serde(default)]
    pub zones: Vec<RelaxationZone>,
    #[serde(default)]
    pub wave: Option<IncidentWave>,
    pub initial: InitialCondition,
}

/// Still-water depth of the bar tank.
pub const BAR_DEPTH: f64 = 0.4;

/// Submerged-bar propagation: 0.02 m high, 2.02 s waves over a trapezoidal
/// bar in a 29 m flume.
pub fn preset_submerged_bar() -> CasePreset {
    CasePreset {
        name: "bar2d".into(),
        mesh: MeshSpec {
            x_min: 0.0,
            x_max: 29.0,
            n_x: 103,
            n_sigma: 1,
            bathymetry: Bathymetry::Piecewise {
                points: vec![[6.0, BAR_DEPTH], [12.0, 0.1], [14.0, 0.1], [17.0, BAR_DEPTH]],
            },
        },
        orders: (6, 6),
        plan: Some(vec![(6, 6), (3, 3), (1, 1)]),
        model: Model::Nonlinear,
        strategy: UpdateStrategy::Nonlinear,
        solver: SolverConfig::default(),
        hierarchy: HierarchyOptions::default(),
        warm_start: WarmStart::default(),
        dt: 0.0736,
        t_end: 82.8,
        gauges: vec![4.0, 14.5, 17.3, 21.0],
        zones: vec![
            RelaxationZone {
                outer: 0.0,
                interface: 3.7,
                target: ZoneTarget::Incident,
            },
            RelaxationZone {
                outer: 29.0,
                interface: 22.0,
                target: ZoneTarget::StillWater,
            },
        ],
        wave: Some(IncidentWave::LinearMonochromatic {
            amplitude: 0.01,
            period: 2.02,
            depth: BAR_DEPTH,
            ramp_periods: 2.0,
        }),
        initial: InitialCondition::Still,
    }
}

/// Closed tank holding one wavelength (L = 2 m) of a deep-water standing
/// wave, `kh = 2π`, height 0.089 m.
pub fn preset_standing_wave(model: Model) -> CasePreset {
    let k = std::f64::consts::PI;
    let depth = 2.0;
    let period = linear_period(k, depth);
    CasePreset {
        name: match model {
            Model::Linear => "standing-linear",
            Model::Nonlinear => "standing-nonlinear",
        }
        .into(),
        mesh: MeshSpec {
            x_min: 0.0,
            x_max: 2.0,
            n_x: 8,
            n_sigma: 2,
            bathymetry: Bathymetry::Flat { depth },
        },
        orders: (6, 6),
        plan: None,
        model,
        strategy: UpdateStrategy::Nonlinear,
        solver: SolverConfig::default(),
        hierarchy: HierarchyOptions::default(),
        warm_start: WarmStart::default(),
        dt: period / 40.0,
        t_end: 10.0 * period,
        gauges: vec![0.0, 0.5, 1.0],
        zones: Vec::new(),
        wave: None,
        initial: InitialCondition::StandingWave {
            amplitude: 0.089 / 2.0,
            wavenumber: k,
        },
    }
}

pub fn preset_still_water() -> CasePreset {
    CasePreset {
        name: "standing-still".into(),
        initial: InitialCondition::Still,
        ..preset_standing_wave(Model::Nonlinear)
    }
}

pub fn preset(name: &str) -> Result<CasePreset> {
    match name {
        "bar2d" => Ok(preset_submerged_bar()),
        "standing-linear" => Ok(preset_standing_wave(Model::Linear)),
        "standing-nonlinear" => Ok(preset_standing_wave(Model::Nonlinear)),
        "standing-still" => Ok(preset_still_water()),
        _ => Err(Error::Config(format!(
            "unknown case `{name}` (available: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

impl CasePreset {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.mesh.bathymetry.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_end >= 0.0) {
            return Err(Error::Config(format!("invalid time window dt = {}, t_end = {}", self.dt, self.t_end)));
        }
        if let Some(w) = &self.wave {
            w.validate()?;
        }
        if self.zones.iter().any(|z| z.target == ZoneTarget::Incident) && self.wave.is_none() {
            return Err(Error::Config("an incident relaxation zone needs `wave`".into()));
        }
        self.coarsening_plan()?;
        Ok(())
    }

    /// Number of time steps, `round(t_end / dt)`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn coarsening_plan(&self) -> Result<CoarseningPlan> {
        make_coarsening_plan(self.orders.0, self.orders.1, self.plan.as_deref())
    }

    pub fn build_mesh(&self) -> Result<LayeredMesh> {
        self.mesh.build()
    }

    pub fn dofmap(&self, mesh: &LayeredMesh) -> Result<DofMap> {
        build_dofmap(mesh, self.orders.0, self.orders.1)
    }

    pub fn hierarchy_options(&self) -> HierarchyOptions {
        HierarchyOptions {
            nu1: self.solver.nu1,
            nu2: self.solver.nu2,
            ..self.hierarchy
        }
    }

    pub fn initial_state(&self, dofmap: &DofMap) -> FnpfState {
        let x = dofmap.x_coords();
        let mut s = FnpfState::still(x.len());
        if let InitialCondition::StandingWave { amplitude, wavenumber } = self.initial {
            s.eta = x.iter().map(|x| amplitude * (wavenumber * (x - self.mesh.x_min)).cos()).collect();
        }
        s
    }

    pub fn build_simulation(&self) -> Result<Simulation> {
        self.validate()?;
        let mesh = self.build_mesh()?;
        let dofmap = self.dofmap(&mesh)?;
        let init = self.initial_state(&dofmap);
        let stage = LaplaceStage::new(
            &mesh,
            &self.mesh.bathymetry,
            &self.coarsening_plan()?,
            self.hierarchy_options(),
            self.strategy,
            self.model,
            self.solver,
            self.warm_start,
            &init.eta,
        )?;
        Simulation::new(
            &mesh,
            stage,
            self.model,
            self.dt,
            self.zones.clone(),
            self.wave.clone(),
            self.gauges.clone(),
            init,
        )
    }

    /// Representative nontrivial free-surface state for steady solves.
    ///
    /// Wave cases use the fully ramped incident wave at `t = 0` over the whole
    /// tank; standing-wave cases a quarter period into the linear motion.
    pub fn benchmark_state(&self, dofmap: &DofMap) -> Result<FnpfState> {
        let x = dofmap.x_coords();
        let mut s = self.initial_state(dofmap);
        match (&self.wave, &self.initial) {
            (Some(IncidentWave::LinearMonochromatic { amplitude, period, depth, .. }), _) => {
                let w = IncidentWave::LinearMonochromatic {
                    amplitude: *amplitude,
                    period: *period,
                    depth: *depth,
                    ramp_periods: 0.0,
                };
                for (i, &xi) in x.iter().enumerate() {
                    let (e, p) = incident_wave(&w, 0.0, xi)?;
                    s.eta[i] = e;
                    s.phi_tilde[i] = p;
                }
            }
            (_, InitialCondition::StandingWave { amplitude, wavenumber }) => {
                let depth = self.mesh.bathymetry.depth(self.mesh.x_min);
                let omega = (GRAVITY * wavenumber * (wavenumber * depth).tanh()).sqrt();
                for (i, &xi) in x.iter().enumerate() {
                    let c = (wavenumber * (xi - self.mesh.x_min)).cos();
                    s.eta[i] = 0.0;
                    s.phi_tilde[i] = -GRAVITY * amplitude / omega * c;
                }
            }
            _ => {}
        }
        Ok(s)
    }

    /// Hierarchy and fine system of the steady Laplace problem on
    /// [`CasePreset::benchmark_state`].
    pub fn steady_problem(&self) -> Result<SteadyProblem> {
        self.validate()?;
        let mesh = self.build_mesh()?;
        let dofmap = self.dofmap(&mesh)?;
        let state = self.benchmark_state(&dofmap)?;
        let eta = SurfaceField::new(self.orders.0, state.eta.clone());
        let eta = (self.model == Model::Nonlinear).then_some(&eta);
        let hierarchy = MGHierarchy::build(
            &mesh,
            &self.mesh.bathymetry,
            &self.coarsening_plan()?,
            eta,
            self.hierarchy_options(),
        )?;
        let fine = hierarchy.fine();
        let n = fine.dofmap.n_dofs();
        let system = AssembledSystem {
            matrix: fine.raw.clone(),
            rhs: vec![0.0; n],
            dirichlet: Vec::new(),
            is_dirichlet: vec![false; n],
        }
        .impose_boundary_conditions(&fine.dofmap, &state.phi_tilde)?;
        Ok(SteadyProblem {
            mesh,
            hierarchy,
            system,
            state,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SteadyProblem {
    pub mesh: LayeredMesh,
    pub hierarchy: MGHierarchy,
    pub system: AssembledSystem,
    pub state: FnpfState,
}

impl SteadyProblem {
    /// Solves from a zero interior guess.
    pub fn solve(&self, config: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
        let u0 = self.initial_guess();
        solvers::solve(&self.system, Some(&self.hierarchy), config, &u0)
    }

    pub fn initial_guess(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.system.n()];
        for &g in &self.system.dirichlet {
            u[g] = self.system.rhs[g];
        }
        u
    }

    /// Surface values with interior values uniform in `±scale` from `seed`.
    pub fn random_guess(&self, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut u = self.initial_guess();
        for (v, &d) in u.iter_mut().zip(&self.system.is_dirichlet) {
            if !d {
                *v = scale * rng.random_range(-1.0..1.0);
            }
        }
        u
    }
}

/// One configuration of the scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_x: usize,
    pub n_sigma: usize,
    pub px: usize,
    pub ps: usize,
    pub overlap: Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub dof: usize,
    pub seconds: f64,
    pub setup_seconds: f64,
    pub q: f64,
    pub iterations: usize,
    pub px: usize,
    pub ps: usize,
    pub n_elements: usize,
    pub overlap_mode: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub solver: SolverConfig,
    pub depth: f64,
    /// Element width over element height, `d_x / d_σ`.
    pub aspect: f64,
    pub wave_height: f64,
    pub wavelength: f64,
    /// Timed repetitions per point; the median is reported.
    pub repeats: usize,
    /// Worker threads of the timed solves.
    pub threads: usize,
    /// Seed of the random interior initial guess.
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig {
                method: Method::Mg,
                rtol: 1e-10,
                ..SolverConfig::default()
            },
            depth: 1.0,
            aspect: 3.0,
            wave_height: 0.089,
            wavelength: 2.0,
            repeats: 3,
            threads: 1,
            seed: 7,
        }
    }
}

/// Element series of the sweep: `n_x` doubles at fixed `n_sigma`.
pub fn scaling_series(n_x0: usize, n_sigma: usize, points: usize, px: usize, ps: usize, overlap: Overlap) -> Vec<ScalingPoint> {
    (0..points)
        .map(|i| ScalingPoint {
            n_x: n_x0 << i,
            n_sigma,
            px,
            ps,
            overlap,
        })
        .collect()
}

/// Steady nonlinear Laplace problem of one sweep point: a flat tank with
/// elements of aspect `config.aspect` under a standing-wave surface.
pub fn scaling_problem(point: &ScalingPoint, config: &ScalingConfig) -> Result<SteadyProblem> {
    let dx = config.aspect * config.depth / point.n_sigma as f64;
    let k = 2.0 * std::f64::consts::PI / config.wavelength;
    let preset = CasePreset {
        name: "scaling".into(),
        mesh: MeshSpec {
            x_min: 0.0,
            x_max: dx * point.n_x as f64,
            n_x: point.n_x,
            n_sigma: point.n_sigma,
            bathymetry: Bathymetry::Flat { depth: config.depth },
        },
        orders: (point.px, point.ps),
        plan: None,
        model: Model::Nonlinear,
        strategy: UpdateStrategy::Nonlinear,
        solver: config.solver,
        hierarchy: HierarchyOptions {
            overlap: point.overlap,
            ..HierarchyOptions::default()
        },
        warm_start: WarmStart::Zero,
        dt: 1.0,
        t_end: 0.0,
        gauges: Vec::new(),
        zones: Vec::new(),
        wave: None,
        initial: InitialCondition::StandingWave {
            amplitude: config.wave_height / 2.0,
            wavenumber: k,
        },
    };
    preset.validate()?;
    let mesh = preset.build_mesh()?;
    let dofmap = preset.dofmap(&mesh)?;
    let mut state = preset.initial_state(&dofmap);
    // Surface potential a quarter period before the crest, on the crest profile.
    let omega = (GRAVITY * k * (k * config.depth).tanh()).sqrt();
    state.phi_tilde = dofmap
        .x_coords()
        .iter()
        .map(|x| GRAVITY * config.wave_height / 2.0 / omega * (k * x).sin())
        .collect();
    let eta = SurfaceField::new(point.px, state.eta.clone());
    let hierarchy = MGHierarchy::build(
        &mesh,
        &preset.mesh.bathymetry,
        &preset.coarsening_plan()?,
        Some(&eta),
        preset.hierarchy_options(),
    )?;
    let fine = hierarchy.fine();
    let n = fine.dofmap.n_dofs();
    let system = AssembledSystem {
        matrix: fine.raw.clone(),
        rhs: vec![0.0; n],
        dirichlet: Vec::new(),
        is_dirichlet: vec![false; n],
    }
    .impose_boundary_conditions(&fine.dofmap, &state.phi_tilde)?;
    Ok(SteadyProblem {
        mesh,
        hierarchy,
        system,
        state,
    })
}

/// Times one steady solve per point (median over `config.repeats`) from a
/// seeded random interior guess and reports the geometric-mean convergence
/// factor over iterations 2..=6.
pub fn run_scaling_sweep(points: &[ScalingPoint], config: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    config.solver.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        points
            .iter()
            .map(|p| {
                let start = Instant::now();
                let problem = scaling_problem(p, config)?;
                let setup = start.elapsed().as_secs_f64();
                let scale = problem.state.phi_tilde.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let u0 = problem.random_guess(config.seed, scale);
                let mut times = Vec::new();
                let mut report = None;
                for _ in 0..config.repeats.max(1) {
                    let (_, r) = solvers::solve(&problem.system, Some(&problem.hierarchy), &config.solver, &u0)?;
                    times.push(r.wall_time);
                    report = Some(r);
                }
                let report = report.unwrap();
                times.sort_by(f64::total_cmp);
                Ok(ScalingRow {
                    dof: problem.system.n(),
                    seconds: times[times.len() / 2],
                    setup_seconds: setup,
                    q: report.mean_q(2, 6).unwrap_or(f64::NAN),
                    iterations: report.iterations,
                    px: p.px,
                    ps: p.ps,
                    n_elements: problem.mesh.n_elements(),
                    overlap_mode: p.overlap.to_string(),
                })
            })
            .collect()
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
