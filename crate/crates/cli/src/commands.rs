use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use wavemg::cases::{self, CasePreset, ScalingConfig, ScalingPoint};
use wavemg::fnpf::{energy_drift, mass_drift, Simulation};
use wavemg::mesh::{mesh_to_string, read_mesh, write_mesh};
use wavemg::multigrid::Overlap;
use wavemg::solvers::work_units;
use wavemg::{Error, Result};

use crate::config::{RunConfig, ScalingSpec};
use crate::output::{float, write_csv, write_json};
use crate::{MeshArgs, ScalingArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
}

fn out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn solve(preset: &CasePreset, out: &Path) -> Result<Outcome> {
    out_dir(out)?;
    let problem = preset.steady_problem()?;
    let (u, mut report) = problem.solve(&preset.solver)?;
    report.work_units = Some(work_units(&report, &problem.system));
    write_json(&out.join("report.json"), &report)?;
    let dofmap = &problem.hierarchy.fine().dofmap;
    write_csv(
        &out.join("solution.csv"),
        &["node", "x", "sigma", "phi"],
        u.iter().enumerate().map(|(g, v)| {
            let (x, s) = dofmap.coords(g);
            vec![g.to_string(), float(x), float(s), float(*v)]
        }),
    )?;
    println!(
        "{}: {} iterations, residual {:.3e} (threshold {:.3e})",
        report.method,
        report.iterations,
        report.final_residual(),
        report.threshold
    );
    Ok(if report.converged { Outcome::Converged } else { Outcome::NotConverged })
}

#[derive(Debug, Serialize)]
struct ToleranceRun {
    rtol: f64,
    solves: usize,
    mean_iterations: f64,
    /// Mean over the RK stage solves only.
    mean_iterations_stages: f64,
    mean_q: Option<f64>,
    mean_work_units: f64,
    all_converged: bool,
    mass_drift: f64,
    energy_drift: f64,
    max_abs_eta: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    case: String,
    model: String,
    strategy: String,
    method: String,
    steps: usize,
    dt: f64,
    final_time: f64,
    /// Mean iterations per Laplace solve keyed by relative tolerance.
    mean_iterations: BTreeMap<String, f64>,
    runs: Vec<ToleranceRun>,
}

fn summarize(sim: &Simulation, rtol: f64) -> ToleranceRun {
    let st = &sim.laplace.stats;
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    };
    let qs: Vec<f64> = st.iter().filter_map(|s| s.q).filter(|q| *q > 0.0).collect();
    ToleranceRun {
        rtol,
        solves: st.len(),
        mean_iterations: mean(&mut st.iter().map(|s| s.iterations as f64)),
        mean_iterations_stages: mean(&mut st.iter().filter(|s| s.stage > 0).map(|s| s.iterations as f64)),
        mean_q: (!qs.is_empty()).then(|| (qs.iter().map(|q| q.ln()).sum::<f64>() / qs.len() as f64).exp()),
        mean_work_units: mean(&mut st.iter().map(|s| s.work_units)),
        all_converged: st.iter().all(|s| s.converged),
        mass_drift: mass_drift(&sim.records),
        energy_drift: energy_drift(&sim.records),
        max_abs_eta: sim.records.iter().fold(0.0, |m, r| m.max(r.max_abs_eta)),
    }
}

pub fn simulate(preset: &CasePreset, tolerances: Option<&[f64]>, out: &Path) -> Result<Outcome> {
    out_dir(out)?;
    let tolerances = tolerances.map(<[f64]>::to_vec).unwrap_or_else(|| vec![preset.solver.rtol]);
    let steps = preset.steps();
    let mut runs = Vec::new();
    let mut stats_rows = Vec::new();
    let mut outcome = Outcome::Converged;
    let mut final_time = 0.0;
    for (k, &rtol) in tolerances.iter().enumerate() {
        let mut p = preset.clone();
        p.solver.rtol = rtol;
        p.validate()?;
        let mut sim = p.build_simulation()?;
        sim.run(steps)?;
        final_time = sim.state.t;
        if k == 0 {
            let mut header = vec!["t".to_string()];
            header.extend(p.gauges.iter().map(|g| format!("eta_x{g}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(
                &out.join("gauges.csv"),
                &header,
                sim.records.iter().map(|r| std::iter::once(r.t).chain(r.gauges.iter().copied()).map(float).collect()),
            )?;
        }
        for (i, s) in sim.laplace.stats.iter().enumerate() {
            stats_rows.push(vec![
                float(rtol),
                i.to_string(),
                float(s.t),
                s.stage.to_string(),
                s.iterations.to_string(),
                s.q.map(float).unwrap_or_default(),
                float(s.initial_residual),
                s.converged.to_string(),
                float(s.work_units),
            ]);
        }
        let run = summarize(&sim, rtol);
        if !run.all_converged {
            outcome = Outcome::NotConverged;
        }
        println!(
            "rtol {:e}: {} solves, mean iterations {:.3}, mass drift {:.3e}, energy drift {:.3e}",
            rtol, run.solves, run.mean_iterations, run.mass_drift, run.energy_drift
        );
        runs.push(run);
    }
    write_csv(
        &out.join("solver_stats.csv"),
        &["rtol", "solve", "t", "stage", "iterations", "q", "initial_residual", "converged", "work_units"],
        stats_rows,
    )?;
    let summary = Summary {
        case: preset.name.clone(),
        model: format!("{:?}", preset.model).to_lowercase(),
        strategy: preset.strategy.label().to_string(),
        method: preset.solver.method.to_string(),
        steps,
        dt: preset.dt,
        final_time,
        mean_iterations: runs.iter().map(|r| (format!("{:e}", r.rtol), r.mean_iterations)).collect(),
        runs,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(outcome)
}

fn parse_order(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("order pair must look like `5x3`, got `{s}`"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn scaling(a: &ScalingArgs) -> Result<Outcome> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut spec = cfg.scaling.clone().unwrap_or_default();
    if let Some(v) = a.n_x0 {
        spec.n_x0 = v;
    }
    if let Some(v) = a.n_sigma {
        spec.n_sigma = v;
    }
    if let Some(v) = a.points {
        spec.points = v;
    }
    if let Some(v) = &a.orders {
        spec.orders = v.iter().map(|s| parse_order(s)).collect::<Result<_>>()?;
    }
    if let Some(v) = &a.overlaps {
        spec.overlaps = v.clone();
    }
    if let Some(v) = a.repeats {
        spec.repeats = v;
    }
    let ScalingSpec {
        n_x0,
        n_sigma,
        points,
        orders,
        overlaps,
        repeats,
        threads,
    } = spec;
    if n_x0 == 0 || n_sigma == 0 || points == 0 || orders.is_empty() || overlaps.is_empty() {
        return Err(Error::Config("scaling sweep needs positive sizes and at least one order and overlap".into()));
    }
    let overlaps: Vec<Overlap> = overlaps.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let mut sc = ScalingConfig {
        repeats,
        threads,
        ..ScalingConfig::default()
    };
    if let Some(r) = a.rtol.or(cfg.overrides.rtol) {
        sc.solver.rtol = r;
    }
    if let Some(s) = a.seed.or(cfg.seed) {
        sc.seed = s;
    }
    let pts: Vec<ScalingPoint> = orders
        .iter()
        .flat_map(|&(px, ps)| {
            overlaps
                .iter()
                .flat_map(move |&ov| cases::scaling_series(n_x0, n_sigma, points, px, ps, ov))
        })
        .collect();
    let out = a.out.clone();
    out_dir(&out)?;
    let rows = cases::run_scaling_sweep(&pts, &sc)?;
    write_csv(
        &out.join("scaling.csv"),
        &["dof", "seconds", "q", "P_x", "P_sigma", "n_elements", "overlap_mode", "iterations", "setup_seconds"],
        rows.iter().map(|r| {
            vec![
                r.dof.to_string(),
                float(r.seconds),
                float(r.q),
                r.px.to_string(),
                r.ps.to_string(),
                r.n_elements.to_string(),
                r.overlap_mode.clone(),
                r.iterations.to_string(),
                float(r.setup_seconds),
            ]
        }),
    )?;
    for (&(px, ps), chunk) in orders.iter().zip(rows.chunks(points * overlaps.len())) {
        for series in chunk.chunks(points) {
            if series.len() > 1 {
                let x: Vec<f64> = series.iter().map(|r| r.dof as f64).collect();
                let y: Vec<f64> = series.iter().map(|r| r.seconds).collect();
                println!(
                    "P = ({px},{ps}) {}: time slope {:.3}",
                    series[0].overlap_mode,
                    cases::loglog_slope(&x, &y)
                );
            }
        }
    }
    Ok(Outcome::Converged)
}

pub fn mesh(a: &MeshArgs) -> Result<Outcome> {
    if let Some(path) = &a.check {
        let m = read_mesh(path)?;
        println!("{}: {} elements ({} x {})", path.display(), m.n_elements(), m.n_x(), m.n_sigma());
        return Ok(Outcome::Converged);
    }
    let name = a.case.as_deref().ok_or_else(|| Error::Config("mesh needs --case or --check".into()))?;
    let m = cases::preset(name)?.build_mesh()?;
    match &a.out {
        Some(p) => write_mesh(&m, p)?,
        None => print!("{}", mesh_to_string(&m)),
    }
    Ok(Outcome::Converged)
}
