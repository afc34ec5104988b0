use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavemg::cases::{self, CasePreset};
use wavemg::fnpf::UpdateStrategy;
use wavemg::multigrid::Overlap;
use wavemg::solvers::Method;
use wavemg::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Per-run overrides applied on top of the case preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub method: Option<Method>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub imax: Option<usize>,
    pub strategy: Option<UpdateStrategy>,
    pub overlap: Option<String>,
    pub nu1: Option<usize>,
    pub nu2: Option<usize>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    /// Tolerances of a simulate sweep (one run per entry).
    pub tolerances: Option<Vec<f64>>,
}

impl Overrides {
    /// `other` wins where both are set.
    pub fn merge(self, other: Overrides) -> Overrides {
        Overrides {
            method: other.method.or(self.method),
            rtol: other.rtol.or(self.rtol),
            atol: other.atol.or(self.atol),
            imax: other.imax.or(self.imax),
            strategy: other.strategy.or(self.strategy),
            overlap: other.overlap.or(self.overlap),
            nu1: other.nu1.or(self.nu1),
            nu2: other.nu2.or(self.nu2),
            dt: other.dt.or(self.dt),
            steps: other.steps.or(self.steps),
            tolerances: other.tolerances.or(self.tolerances),
        }
    }

    pub fn apply(&self, p: &mut CasePreset) -> Result<()> {
        if let Some(m) = self.method {
            p.solver.method = m;
        }
        if let Some(v) = self.rtol {
            p.solver.rtol = v;
        }
        if let Some(v) = self.atol {
            p.solver.atol = v;
        }
        if let Some(v) = self.imax {
            p.solver.i_max = v;
        }
        if let Some(s) = self.strategy {
            p.strategy = s;
        }
        if let Some(o) = &self.overlap {
            p.hierarchy.overlap = o.parse::<Overlap>()?;
        }
        if let Some(v) = self.nu1 {
            p.solver.nu1 = v;
        }
        if let Some(v) = self.nu2 {
            p.solver.nu2 = v;
        }
        if let Some(dt) = self.dt {
            let steps = p.steps();
            p.dt = dt;
            p.t_end = dt * steps as f64;
        }
        if let Some(n) = self.steps {
            p.t_end = p.dt * n as f64;
        }
        if let Some(t) = &self.tolerances {
            if t.is_empty() || t.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("`tolerances` must be a non-empty list of positive numbers".into()));
            }
        }
        p.validate()
    }
}

/// Settings of the `scaling` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub n_x0: usize,
    pub n_sigma: usize,
    pub points: usize,
    pub orders: Vec<(usize, usize)>,
    pub overlaps: Vec<String>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_repeats() -> usize {
    3
}

fn default_threads() -> usize {
    1
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            n_x0: 64,
            n_sigma: 2,
            points: 5,
            orders: vec![(5, 3), (9, 7)],
            overlaps: vec!["fixed:1".into(), "refined".into()],
            repeats: default_repeats(),
            threads: default_threads(),
        }
    }
}

/// Versioned run description read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Name of a built-in case.
    pub case: Option<String>,
    /// Full case description, used instead of `case`.
    pub preset: Option<CasePreset>,
    #[serde(default)]
    pub overrides: Overrides,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scaling: Option<ScalingSpec>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported config version {} (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        if cfg.case.is_some() && cfg.preset.is_some() {
            return Err(Error::Config(format!("{}: give either `case` or `preset`, not both", path.display())));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Resolves the case: `case_flag` (preset name or config path) wins over
    /// the config file contents.
    pub fn case(&self, case_flag: Option<&str>) -> Result<CasePreset> {
        let mut preset = match (case_flag, &self.case, &self.preset) {
            (Some(name), _, _) => resolve_case(name)?,
            (None, Some(name), _) => resolve_case(name)?,
            (None, None, Some(p)) => p.clone(),
            (None, None, None) => return Err(Error::Config("no case given (use --case or `case = ...`)".into())),
        };
        self.overrides.apply(&mut preset)?;
        Ok(preset)
    }
}

/// A preset name or the path of a config file holding a `preset` table.
fn resolve_case(name: &str) -> Result<CasePreset> {
    let path = Path::new(name);
    if cases::PRESET_NAMES.contains(&name) || !path.exists() {
        return cases::preset(name);
    }
    let cfg = RunConfig::load(path)?;
    let mut p = cfg.case(None)?;
    cfg.overrides.apply(&mut p)?;
    Ok(p)
}
