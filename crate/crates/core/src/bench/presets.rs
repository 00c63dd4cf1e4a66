use std::path::{Path, PathBuf};

use super::config::{
    ComponentConfig, DoaOptions, ExperimentConfig, GridConfig, ModelKind, RsfOptions, SolverConfig, SolverOptions,
    Sweep,
};
use super::doa::angle_to_frequency;
use super::experiment::run_experiment;
use crate::dictionary::{GridPoint, Harmonic};
use crate::error::{Error, Result};
use crate::ije::{ije_refine, IjeConfig};
use num_complex::Complex64;
use crate::solvers::StopRule;

pub const PRESETS: [&str; 7] = ["fig1", "fig2", "fig3", "fig4-7", "fig8", "fig9", "fig10"];

#[derive(Debug, Clone)]
pub struct PresetOptions {
    pub trials: usize,
    pub seed: u64,
    /// Overrides the preset's IJE loop limit.
    pub ije_max_iters: Option<usize>,
    /// Overrides the model default (0.005 harmonic, 0.025 RSF).
    pub sigma_delta: Option<f64>,
    /// Replaces every solver's stop rule, except in sparsity sweeps.
    pub stop: Option<StopRule>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self { trials: 200, seed: 1, ije_max_iters: None, sigma_delta: None, stop: None }
    }
}

fn tone(amp: f64, f: f64) -> ComponentConfig {
    ComponentConfig { amp_re: amp, amp_im: 0.0, params: vec![f] }
}

fn base(name: &str, m: usize, components: Vec<ComponentConfig>, opts: &PresetOptions) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        model: ModelKind::Harmonic,
        m,
        components,
        sigma: None,
        snr_db: None,
        grid: None,
        solvers: Vec::new(),
        trials: opts.trials,
        seed: opts.seed,
        sweep: None,
        rsf: None,
        doa: None,
        y: None,
    }
}

fn omp(name: &str, counts: &[usize]) -> SolverConfig {
    SolverConfig::new(name, SolverOptions { grid: Some(GridConfig::counts(counts)), ..SolverOptions::default() })
}

fn amp(name: &str, grid: GridConfig, k: usize, ije_max_iters: usize) -> SolverConfig {
    SolverConfig::new(
        name,
        SolverOptions {
            grid: Some(grid),
            stop: Some(format!("k={k}")),
            ije_max_iters: Some(ije_max_iters),
            ..SolverOptions::default()
        },
    )
}

fn apply_overrides(mut cfg: ExperimentConfig, opts: &PresetOptions) -> ExperimentConfig {
    cfg.override_solvers(opts.ije_max_iters, opts.sigma_delta, opts.stop);
    cfg
}

pub fn fig1(opts: &PresetOptions) -> ExperimentConfig {
    let m = 32;
    let offsets: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut cfg = base("fig1", m, vec![tone(1.0, 9.0 / 32.0)], opts);
    cfg.snr_db = Some(5.0);
    cfg.sweep = Some(Sweep::Param {
        component: 0,
        axis: 0,
        values: offsets.iter().map(|o| (9.0 + o) / m as f64).collect(),
        labels: Some(offsets),
    });
    cfg.solvers = vec![
        omp("OMP_M", &[m]),
        omp("OMP_10M", &[10 * m]),
        amp("AMP-CTLS", GridConfig::counts(&[m]), 1, 14),
    ];
    cfg
}

pub fn fig3(opts: &PresetOptions) -> ExperimentConfig {
    let m = 32;
    let distances: Vec<f64> = (0..=20).map(|i| i as f64 / 10.0).collect();
    let mut cfg = base("fig3", m, vec![tone(1.0, 9.0 / 32.0)], opts);
    cfg.snr_db = Some(5.0);
    cfg.sweep = Some(Sweep::Param {
        component: 0,
        axis: 0,
        values: distances.iter().map(|d| (9.0 + d) / m as f64).collect(),
        labels: Some(distances),
    });
    cfg.solvers = vec![amp("AMP-CTLS", GridConfig::points(vec![vec![9.0 / m as f64]]), 1, 14)];
    cfg
}

fn three_tone(name: &str, freqs: [f64; 3], opts: &PresetOptions) -> ExperimentConfig {
    let comps = [20.0, 15.0, 1.0]
        .iter()
        .zip(freqs)
        .map(|(&a, f)| tone(a, f / 32.0))
        .collect();
    base(name, 32, comps, opts)
}

/// Residual, spurious amplitude and `f₃` error versus assumed sparsity.
pub fn fig4_6(opts: &PresetOptions) -> ExperimentConfig {
    let mut cfg = three_tone("fig4-6", [3.15, 4.2, 7.25], opts);
    cfg.snr_db = Some(10.0);
    cfg.sweep = Some(Sweep::Sparsity { values: (1..=6).collect() });
    cfg.solvers = vec![amp("AMP-CTLS", GridConfig::counts(&[64]), 6, 14)];
    cfg
}

/// `f₃` error versus SNR₃ for `K′ = 3` and `K′ = 6`.
pub fn fig7(opts: &PresetOptions) -> ExperimentConfig {
    let mut cfg = three_tone("fig7", [3.15, 4.2, 7.25], opts);
    cfg.sweep = Some(Sweep::SnrDb { values: (0..=10).map(|i| 2.0 * i as f64).collect(), reference: None });
    cfg.solvers = vec![
        amp("AMP-CTLS K'=3", GridConfig::counts(&[64]), 3, 14),
        amp("AMP-CTLS K'=6", GridConfig::counts(&[64]), 6, 14),
    ];
    cfg
}

pub fn fig8(opts: &PresetOptions) -> ExperimentConfig {
    let mut cfg = three_tone("fig8", [3.15, 5.2, 3.95], opts);
    cfg.snr_db = Some(5.0);
    cfg.solvers = vec![
        amp("AMP-CTLS", GridConfig::counts(&[64]), 3, 14),
        omp("OMP_2M", &[64]),
        omp("OMP_100M", &[3200]),
    ];
    cfg
}

pub fn fig9(opts: &PresetOptions) -> ExperimentConfig {
    let m = 32;
    let mf = m as f64;
    let comps = [(10.0, 10.1, 19.4), (10.0, 10.7, 10.2), (1.0, 20.0, 15.2)]
        .iter()
        .map(|&(a, p, q)| ComponentConfig { amp_re: a, amp_im: 0.0, params: vec![p / mf, q / mf] })
        .collect();
    let mut cfg = base("fig9", m, comps, opts);
    cfg.model = ModelKind::Rsf;
    // One radar: a single code drawn from the master seed serves every trial.
    cfg.rsf = Some(RsfOptions { code_seed: Some(opts.seed), ..RsfOptions::default() });
    cfg.sweep = Some(Sweep::SnrDb { values: vec![2.0, 4.0, 6.0, 8.0, 10.0], reference: None });
    cfg.solvers = vec![
        amp("AMP-CTLS", GridConfig::counts(&[m, m]), 3, 14),
        omp("OMP_M", &[m, m]),
        omp("OMP_10M", &[10 * m, 10 * m]),
    ];
    cfg
}

pub fn fig10(opts: &PresetOptions) -> ExperimentConfig {
    let d = 0.5;
    let comps = vec![tone(1.0, angle_to_frequency(-29.0, d)), tone(1.0, angle_to_frequency(13.0, d))];
    let mut cfg = base("fig10", 8, comps, opts);
    cfg.doa = Some(DoaOptions { spacing: d });
    cfg.sweep = Some(Sweep::SnrDb { values: (0..=6).map(|i| 5.0 * i as f64).collect(), reference: None });
    let grid = (0..90).map(|n| vec![angle_to_frequency(-90.0 + 2.0 * n as f64, d)]).collect();
    cfg.solvers = vec![amp("AMP-CTLS", GridConfig::points(grid), 2, 50)];
    cfg
}

/// Experiment configurations behind a preset; empty for `fig2`.
pub fn preset_configs(name: &str, opts: &PresetOptions) -> Result<Vec<ExperimentConfig>> {
    let cfgs = match name {
        "fig1" => vec![fig1(opts)],
        "fig2" => Vec::new(),
        "fig3" => vec![fig3(opts)],
        "fig4-7" => vec![fig4_6(opts), fig7(opts)],
        "fig8" => vec![fig8(opts)],
        "fig9" => vec![fig9(opts)],
        "fig10" => vec![fig10(opts)],
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; choose one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfgs.into_iter().map(|c| apply_overrides(c, opts)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub loop_index: usize,
    pub residual_norm: f64,
    pub normalized_residual: f64,
    pub grid_estimate: f64,
    pub normalized_grid_error: f64,
}

/// Noiseless single-tone IJE trace: `f = 9.5/32` refined from `9/32`.
pub fn fig2_trace(opts: &PresetOptions) -> Result<Vec<ConvergenceRow>> {
    let m = 32;
    let f = 9.5 / m as f64;
    let g0 = 9.0 / m as f64;
    let dict = Harmonic::new(m);
    let y = crate::dictionary::Dictionary::atom(&dict, &GridPoint::scalar(f)) * Complex64::new(1.0, 0.0);
    let cfg = IjeConfig {
        max_iters: opts.ije_max_iters.unwrap_or(14),
        sigma_delta: opts.sigma_delta.unwrap_or(0.005),
        ..IjeConfig::default()
    };
    let res = ije_refine(&y, &dict, &[GridPoint::scalar(g0)], &cfg)?;
    let r0 = res.residual_norm_trace[0];
    let e0 = (g0 - f).abs();
    Ok(res
        .residual_norm_trace
        .iter()
        .zip(&res.grid_trace)
        .enumerate()
        .map(|(l, (r, g))| ConvergenceRow {
            loop_index: l,
            residual_norm: *r,
            normalized_residual: r / r0,
            grid_estimate: g[0].coords[0],
            normalized_grid_error: (g[0].coords[0] - f).abs() / e0,
        })
        .collect())
}

fn write_fig2(dir: &Path, rows: &[ConvergenceRow]) -> Result<PathBuf> {
    let path = dir.join("fig2_trace.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["loop", "residual_norm", "normalized_residual", "grid_estimate", "normalized_grid_error"])?;
    for r in rows {
        w.write_record([
            r.loop_index.to_string(),
            r.residual_norm.to_string(),
            r.normalized_residual.to_string(),
            r.grid_estimate.to_string(),
            r.normalized_grid_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

/// Runs a preset and writes its CSV files (and the configs used) to `dir`.
pub fn run_preset(name: &str, opts: &PresetOptions, dir: &Path) -> Result<Vec<PathBuf>> {
    if opts.trials < 1 {
        return Err(Error::Config("trial count must be at least 1".into()));
    }
    let cfgs = preset_configs(name, opts)?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    if name == "fig2" {
        files.push(write_fig2(dir, &fig2_trace(opts)?)?);
    }
    for cfg in cfgs {
        let cfg_path = dir.join(format!("{}_config.json", cfg.name));
        std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?)?;
        files.push(cfg_path);
        files.extend(run_experiment(&cfg)?.write(dir)?);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_valid_configs() {
        let opts = PresetOptions { trials: 3, ..PresetOptions::default() };
        for name in PRESETS {
            for cfg in preset_configs(name, &opts).unwrap() {
                cfg.validate().unwrap();
                let text = serde_json::to_string(&cfg).unwrap();
                assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
            }
        }
        assert!(preset_configs("fig99", &opts).is_err());
    }

    #[test]
    fn overrides_apply() {
        let opts = PresetOptions {
            ije_max_iters: Some(3),
            sigma_delta: Some(0.01),
            stop: Some(StopRule::Residual(0.5)),
            ..PresetOptions::default()
        };
        let cfg = &preset_configs("fig8", &opts).unwrap()[0];
        let s = cfg.resolve_solver(&cfg.solvers[0]).unwrap();
        assert_eq!(s.ije.max_iters, 3);
        assert_eq!(s.ije.sigma_delta, 0.01);
        assert_eq!(s.stop, StopRule::Residual(0.5));
    }

    #[test]
    fn fig2_converges() {
        let rows = fig2_trace(&PresetOptions::default()).unwrap();
        assert_eq!(rows[0].normalized_residual, 1.0);
        let hit = rows.iter().position(|r| r.normalized_residual < 1e-3 && r.normalized_grid_error < 1e-3);
        assert!(hit.is_some_and(|l| l <= 10), "{rows:?}");
    }

    #[test]
    fn doa_grid_covers_half_circle() {
        let cfg = fig10(&PresetOptions::default());
        let s = cfg.resolve_solver(&cfg.solvers[0]).unwrap();
        assert_eq!(s.grid.len(), 90);
        assert_eq!(s.ije.max_iters, 50);
        assert!(s.grid.iter().all(|p| (0.0..1.0).contains(&p.coords[0])));
    }
}
