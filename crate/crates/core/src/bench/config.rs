use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{Component, Model, SceneSpec};
use crate::dictionary::{uniform_grid, GridPoint, Rsf};
use crate::error::{Error, Result};
use crate::ije::IjeConfig;
use num_complex::Complex64;
use crate::solvers::StopRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Harmonic,
    Rsf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub amp_re: f64,
    #[serde(default)]
    pub amp_im: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Uniform grid with this many points per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    /// Explicit grid points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
}

impl GridConfig {
    pub fn counts(counts: &[usize]) -> Self {
        Self { counts: Some(counts.to_vec()), points: None }
    }

    pub fn points(points: Vec<Vec<f64>>) -> Self {
        Self { counts: None, points: Some(points) }
    }

    pub fn build(&self, arity: usize) -> Result<Vec<GridPoint>> {
        let grid = match (&self.counts, &self.points) {
            (Some(counts), None) => uniform_grid(counts)?,
            (None, Some(points)) => points.iter().map(|p| GridPoint::new(p.clone())).collect(),
            _ => return Err(Error::Config("grid needs exactly one of `counts` or `points`".into())),
        };
        if grid.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        if grid.iter().any(|p| p.arity() != arity || !p.is_finite()) {
            return Err(Error::Config(format!("grid points must have {arity} finite coordinates")));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    AmpCtls,
    Omp,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Inferred from the name prefix (`AMP-CTLS…` or `OMP…`) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SolverKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// `k=K`, `res=δ` or `rel=δ`; defaults to the component count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ije_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_residual_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub name: String,
    #[serde(default)]
    pub options: SolverOptions,
}

impl SolverConfig {
    pub fn new(name: &str, options: SolverOptions) -> Self {
        Self { name: name.to_string(), options }
    }

    pub fn kind(&self) -> Result<SolverKind> {
        if let Some(kind) = self.options.kind {
            return Ok(kind);
        }
        let upper = self.name.to_ascii_uppercase();
        if upper.starts_with("AMP-CTLS") || upper.starts_with("AMP_CTLS") {
            Ok(SolverKind::AmpCtls)
        } else if upper.starts_with("OMP") {
            Ok(SolverKind::Omp)
        } else {
            Err(Error::Config(format!("cannot infer solver kind from name {:?}", self.name)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Sweep {
    /// `SNR = |α_ref|²/σ²` in dB, `α_ref` the weakest component unless set.
    SnrDb {
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<usize>,
    },
    /// True value of one coordinate of one component.
    Param {
        component: usize,
        axis: usize,
        values: Vec<f64>,
        /// Reported sweep values; defaults to `values`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<f64>>,
    },
    /// Assumed sparsity `K′`; every solver runs once to the largest value.
    Sparsity { values: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsfOptions {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_seed: Option<u64>,
}

fn default_ratio() -> f64 {
    Rsf::DEFAULT_RATIO
}

impl Default for RsfOptions {
    fn default() -> Self {
        Self { ratio: default_ratio(), code: None, code_seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaOptions {
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelKind,
    #[serde(rename = "M")]
    pub m: usize,
    pub components: Vec<ComponentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Default grid for solvers that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub solvers: Vec<SolverConfig>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsf: Option<RsfOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doa: Option<DoaOptions>,
    /// Measurements to use instead of synthesizing, as `[re, im]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<[f64; 2]>>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_trials() -> usize {
    1
}

/// Solver settings after defaults are applied.
#[derive(Debug, Clone)]
pub struct ResolvedSolver {
    pub name: String,
    pub kind: SolverKind,
    pub grid: Vec<GridPoint>,
    pub stop: StopRule,
    pub ije: IjeConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Sets the given options on every solver.
    pub fn override_solvers(&mut self, ije_max_iters: Option<usize>, sigma_delta: Option<f64>, stop: Option<StopRule>) {
        for s in &mut self.solvers {
            if let Some(n) = ije_max_iters {
                s.options.ije_max_iters = Some(n);
            }
            if let Some(sd) = sigma_delta {
                s.options.sigma_delta = Some(sd);
            }
            if let Some(stop) = stop {
                s.options.stop = Some(stop.to_string());
            }
        }
    }

    pub fn arity(&self) -> usize {
        match self.model {
            ModelKind::Harmonic => 1,
            ModelKind::Rsf => 2,
        }
    }

    pub fn default_sigma_delta(&self) -> f64 {
        match self.model {
            ModelKind::Harmonic => 0.005,
            ModelKind::Rsf => 0.025,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.components.is_empty() {
            return Err(Error::Config("at least one component is required".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config("at least one solver is required".into()));
        }
        if self.sigma.is_some() && self.snr_db.is_some() {
            return Err(Error::Config("give either `sigma` or `snr_db`, not both".into()));
        }
        if let Some(doa) = &self.doa {
            if self.model != ModelKind::Harmonic || !(doa.spacing.is_finite() && doa.spacing > 0.0) {
                return Err(Error::Config("`doa` needs a harmonic model and spacing > 0".into()));
            }
        }
        if let Some(y) = &self.y {
            if y.len() != self.m {
                return Err(Error::Config(format!("`y` must have M = {} entries", self.m)));
            }
        }
        match &self.sweep {
            Some(Sweep::SnrDb { values, reference }) => {
                if values.is_empty() {
                    return Err(Error::Config("sweep values are empty".into()));
                }
                if reference.is_some_and(|r| r >= self.components.len()) {
                    return Err(Error::Config("SNR reference component out of range".into()));
                }
            }
            Some(Sweep::Param { component, axis, values, labels }) => {
                if values.is_empty() || *component >= self.components.len() || *axis >= self.arity() {
                    return Err(Error::Config("parameter sweep out of range".into()));
                }
                if labels.as_ref().is_some_and(|l| l.len() != values.len()) {
                    return Err(Error::Config("sweep labels must match values".into()));
                }
            }
            Some(Sweep::Sparsity { values }) if values.is_empty() || values.contains(&0) => {
                return Err(Error::Config("sparsity sweep values must be ≥ 1".into()));
            }
            Some(Sweep::Sparsity { .. }) | None => {}
        }
        self.base_scene()?.validate()?;
        for s in &self.solvers {
            self.resolve_solver(s)?;
        }
        Ok(())
    }

    fn model(&self) -> Model {
        match self.model {
            ModelKind::Harmonic => Model::Harmonic,
            ModelKind::Rsf => {
                let rsf = self.rsf.clone().unwrap_or_default();
                Model::Rsf { ratio: rsf.ratio, code: rsf.code, code_seed: rsf.code_seed }
            }
        }
    }

    fn components(&self) -> Vec<Component> {
        self.components
            .iter()
            .map(|c| Component {
                amplitude: Complex64::new(c.amp_re, c.amp_im),
                params: GridPoint::new(c.params.clone()),
            })
            .collect()
    }

    /// Scene before any sweep is applied. Without `sigma` or `snr_db` the
    /// scene is noiseless.
    pub fn base_scene(&self) -> Result<SceneSpec> {
        let mut scene = SceneSpec {
            model: self.model(),
            m: self.m,
            components: self.components(),
            noise_sigma: 0.0,
        };
        scene.noise_sigma = match (self.sigma, self.snr_db) {
            (Some(s), _) => s,
            (None, Some(snr)) => SceneSpec::sigma_for_snr(scene.weakest_amplitude(), snr),
            (None, None) => 0.0,
        };
        Ok(scene)
    }

    /// `(reported value, scene)` per sweep point.
    pub fn sweep_points(&self) -> Result<Vec<(f64, SceneSpec)>> {
        let base = self.base_scene()?;
        Ok(match &self.sweep {
            None | Some(Sweep::Sparsity { .. }) => vec![(f64::NAN, base)],
            Some(Sweep::SnrDb { values, reference }) => values
                .iter()
                .map(|&snr| {
                    let amp = match reference {
                        Some(r) => base.components[*r].amplitude.norm(),
                        None => base.weakest_amplitude(),
                    };
                    let scene = SceneSpec { noise_sigma: SceneSpec::sigma_for_snr(amp, snr), ..base.clone() };
                    (snr, scene)
                })
                .collect(),
            Some(Sweep::Param { component, axis, values, labels }) => values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let mut scene = base.clone();
                    scene.components[*component].params.coords[*axis] = v;
                    (labels.as_ref().map_or(v, |l| l[i]), scene)
                })
                .collect(),
        })
    }

    pub fn resolve_solver(&self, s: &SolverConfig) -> Result<ResolvedSolver> {
        let kind = s.kind()?;
        let grid_cfg = s
            .options
            .grid
            .as_ref()
            .or(self.grid.as_ref())
            .ok_or_else(|| Error::Config(format!("solver {:?} has no grid", s.name)))?;
        let grid = grid_cfg.build(self.arity())?;
        let mut stop = match &s.options.stop {
            Some(text) => text.parse()?,
            None => StopRule::Sparsity(self.components.len()),
        };
        if let Some(Sweep::Sparsity { values }) = &self.sweep {
            stop = StopRule::Sparsity(*values.iter().max().unwrap());
        }
        let ije = IjeConfig {
            max_iters: s.options.ije_max_iters.unwrap_or(14),
            rel_residual_tol: s.options.rel_residual_tol.unwrap_or(1e-6),
            sigma_delta: s.options.sigma_delta.unwrap_or(self.default_sigma_delta()),
            sigma_w: s.options.sigma_w.unwrap_or(1.0),
            ..IjeConfig::default()
        };
        ije.validate()?;
        Ok(ResolvedSolver { name: s.name.clone(), kind, grid, stop, ije })
    }
}
