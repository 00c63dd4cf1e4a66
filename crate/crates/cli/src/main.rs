use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ampctls::bench::{
    crb_with_dictionary, run_experiment, run_preset, synthesize, ExperimentConfig, PresetOptions, SolverKind, PRESETS,
};
use ampctls::solvers::{amp_ctls, omp, StopRule};

#[derive(Parser)]
#[command(name = "ampctls", version, about = "Off-grid sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverFlags {
    /// IJE loop limit (presets default to 14, fig10 to 50).
    #[arg(long)]
    ije_max_iters: Option<usize>,
    /// Prior std of grid mismatch (default 0.005 harmonic, 0.025 RSF).
    #[arg(long)]
    sigma_delta: Option<f64>,
    /// Stop rule: k=K, res=δ or rel=δ.
    #[arg(long)]
    stop: Option<StopRule>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every solver of a scene file on one measurement and print the estimates.
    Recover {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Run an experiment config and write trial and summary CSV files.
    Bench {
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Print the Cramér-Rao bounds of a scene file.
    Crb {
        config: PathBuf,
        /// Seed used to draw the RSF code when the scene does not fix one.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a named figure preset.
    Preset {
        /// One of fig1, fig2, fig3, fig4-7, fig8, fig9, fig10.
        name: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (default results/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: SolverFlags,
    },
}

fn load(path: &Path, flags: Option<&SolverFlags>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(f) = flags {
        cfg.override_solvers(f.ije_max_iters, f.sigma_delta, f.stop);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn recover(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value> {
    let scene = cfg.base_scene()?;
    let model = scene.trial_model(seed)?;
    let y = match &cfg.y {
        Some(v) => ampctls::CVector::from_iterator(v.len(), v.iter().map(|p| ampctls::Complex64::new(p[0], p[1]))),
        None => synthesize(&scene, seed)?,
    };
    let mut out = Vec::new();
    for s in &cfg.solvers {
        let s = cfg.resolve_solver(s)?;
        let state = match s.kind {
            SolverKind::AmpCtls => amp_ctls(&y, model.dict.as_ref(), &s.grid, s.stop, &s.ije),
            SolverKind::Omp => omp(&y, model.dict.as_ref(), &s.grid, s.stop),
        }?;
        let estimates: Vec<_> = state
            .grid_estimates
            .iter()
            .zip(state.x.iter())
            .map(|(g, a)| json!({"params": g.coords, "amp_re": a.re, "amp_im": a.im}))
            .collect();
        out.push(json!({
            "solver": s.name,
            "estimates": estimates,
            "residual_norm": state.residual_norm(),
            "iterations": state.k,
            "stop": format!("{:?}", state.stop),
        }));
    }
    Ok(json!({"seed": seed, "code": model.code, "results": out}))
}

fn crb_table(cfg: &ExperimentConfig, seed: u64) -> Result<String> {
    let scene = cfg.base_scene()?;
    if scene.noise_sigma <= 0.0 {
        bail!("the scene needs `sigma` or `snr_db` for a bound");
    }
    let model = scene.trial_model(seed)?;
    let bound = crb_with_dictionary(model.dict.as_ref(), &scene.components, scene.noise_sigma)?;
    let names: &[&str] = if bound.arity == 1 { &["f"] } else { &["p", "q"] };
    let mut text = String::from("component,param,crb,crb_db\n");
    for k in 0..bound.components() {
        for (axis, name) in names.iter().enumerate() {
            let v = bound.param(k, axis);
            text.push_str(&format!("{k},{name},{v},{}\n", 10.0 * v.log10()));
        }
        let v = bound.amplitude(k);
        text.push_str(&format!("{k},amp,{v},{}\n", 10.0 * v.log10()));
    }
    Ok(text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Recover { config, seed, flags } => {
            let cfg = load(&config, Some(&flags))?;
            println!("{}", serde_json::to_string_pretty(&recover(&cfg, seed)?)?);
        }
        Command::Bench { config, trials, seed, out, flags } => {
            let mut cfg = load(&config, Some(&flags))?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            for path in run_experiment(&cfg)?.write(&out)? {
                println!("{}", path.display());
            }
        }
        Command::Crb { config, seed } => {
            print!("{}", crb_table(&load(&config, None)?, seed)?);
        }
        Command::Preset { name, trials, seed, out, flags } => {
            if !PRESETS.contains(&name.as_str()) {
                bail!("unknown preset {name:?}; choose one of {}", PRESETS.join(", "));
            }
            let opts = PresetOptions {
                trials,
                seed,
                ije_max_iters: flags.ije_max_iters,
                sigma_delta: flags.sigma_delta,
                stop: flags.stop,
            };
            let dir = out.unwrap_or_else(|| PathBuf::from("results").join(&name));
            for path in run_preset(&name, &opts, &dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
