//! Monte-Carlo experiment layer: scene synthesis, bounds, solver runs and
//! CSV output.

mod config;
mod crb;
mod doa;
mod experiment;
mod presets;
mod scene;

pub use config::{
    ComponentConfig, DoaOptions, ExperimentConfig, GridConfig, ModelKind, ResolvedSolver, RsfOptions, SolverConfig,
    SolverKind, SolverOptions, Sweep,
};
pub use crb::{crb, crb_with_dictionary, Crb};
pub use doa::{angle_to_frequency, doa_map};
pub use experiment::{
    magnitude_order, match_nearest, run_experiment, spurious_ratio, write_summary_csv, write_trials_csv, Estimate,
    ExperimentOutput, SummaryRow, TrialRow,
};
pub use presets::{
    fig10, fig1, fig2_trace, fig3, fig4_6, fig7, fig8, fig9, preset_configs, run_preset, ConvergenceRow,
    PresetOptions, PRESETS,
};
pub use scene::{complex_noise, synthesize, trial_seed, Component, Model, SceneSpec, TrialModel};
