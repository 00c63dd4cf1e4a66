use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, ResolvedSolver, SolverKind, Sweep};
use super::crb::{crb_with_dictionary, Crb};
use super::doa::doa_map;
use super::scene::{synthesize_with, trial_seed, SceneSpec};
use crate::dictionary::{wrapped_difference, GridPoint};
use crate::error::{Error, Result};
use crate::numerics::CVector;
use num_complex::Complex64;
use crate::solvers::{amp_ctls, omp, SolverState};

/// One estimated component.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub params: GridPoint,
    pub amplitude: Complex64,
}

/// Greedy nearest assignment by wrapped distance: repeatedly pair the
/// closest remaining (truth, estimate). Entry `k` is the estimate matched
/// to truth `k`.
pub fn match_nearest(truth: &[GridPoint], estimates: &[GridPoint]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(truth.len() * estimates.len());
    for (k, t) in truth.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            pairs.push((t.wrapped_distance(e), k, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned = vec![None; truth.len()];
    let mut used = vec![false; estimates.len()];
    for (_, k, j) in pairs {
        if assigned[k].is_none() && !used[j] {
            assigned[k] = Some(j);
            used[j] = true;
        }
    }
    assigned
}

/// Indices sorted by decreasing magnitude; ties keep index order.
pub fn magnitude_order(amplitudes: &[Complex64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..amplitudes.len()).collect();
    idx.sort_by(|&a, &b| amplitudes[b].norm().total_cmp(&amplitudes[a].norm()).then(a.cmp(&b)));
    idx
}

/// `|α̂_{K+1}| / |α_K|` with estimates and truths both in decreasing
/// magnitude; `None` unless there are more estimates than truths.
pub fn spurious_ratio(truth: &[Complex64], estimates: &[Complex64]) -> Option<f64> {
    let k = truth.len();
    if estimates.len() <= k || k == 0 {
        return None;
    }
    let t = magnitude_order(truth);
    let e = magnitude_order(estimates);
    Some(estimates[e[k]].norm() / truth[t[k - 1]].norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub solver: String,
    pub component: usize,
    pub truth: Vec<f64>,
    pub truth_amp: Complex64,
    pub estimate: Option<Vec<f64>>,
    pub est_amp: Option<Complex64>,
    /// Per reported parameter; `NaN` when unmatched.
    pub sq_errors: Vec<f64>,
    pub amp_sq_error: f64,
    /// Wrapped distance of the match is within `0.5/M` on every axis.
    pub recovered: bool,
    pub mag_rank: Option<usize>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub ije_loops: usize,
    pub spurious_ratio: Option<f64>,
    pub status: String,
    pub code: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub solver: String,
    pub mse_db: f64,
    pub crb_db: f64,
    pub n_trials: usize,
    pub component: usize,
    pub param: String,
    pub mean_residual_norm: f64,
    pub mean_spurious_ratio: f64,
    pub recovery_rate: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub name: String,
    pub param_names: Vec<String>,
    pub trials: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutput {
    pub fn find(&self, sweep_value: f64, solver: &str, component: usize, param: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| {
            r.solver == solver
                && r.component == component
                && r.param == param
                && (r.sweep_value == sweep_value || (r.sweep_value.is_nan() && sweep_value.is_nan()))
        })
    }

    /// Writes `<name>_trials.csv` and `<name>_summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let trials = dir.join(format!("{}_trials.csv", self.name));
        let summary = dir.join(format!("{}_summary.csv", self.name));
        write_trials_csv(&trials, &self.param_names, &self.trials)?;
        write_summary_csv(&summary, &self.summary)?;
        Ok(vec![trials, summary])
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_trials_csv(path: &Path, params: &[String], rows: &[TrialRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "sweep_value", "trial", "seed", "solver", "component", "truth", "estimate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(params.iter().map(|p| format!("sq_err_{p}")));
    header.extend(
        [
            "amp_true_re", "amp_true_im", "amp_est_re", "amp_est_im", "amp_sq_err", "recovered",
            "mag_rank", "residual_norm", "iterations", "ije_loops", "spurious_ratio", "status", "code",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.sweep_value.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.solver.clone(),
            r.component.to_string(),
            join(&r.truth),
            r.estimate.as_deref().map(join).unwrap_or_default(),
        ];
        rec.extend(r.sq_errors.iter().map(|v| v.to_string()));
        rec.extend([
            r.truth_amp.re.to_string(),
            r.truth_amp.im.to_string(),
            opt(&r.est_amp.map(|a| a.re)),
            opt(&r.est_amp.map(|a| a.im)),
            r.amp_sq_error.to_string(),
            r.recovered.to_string(),
            opt(&r.mag_rank),
            r.residual_norm.to_string(),
            r.iterations.to_string(),
            r.ije_loops.to_string(),
            opt(&r.spurious_ratio),
            r.status.clone(),
            r.code.as_deref().map(join).unwrap_or_default(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sweep_value", "solver", "mse_db", "crb_db", "n_trials", "component", "param",
        "mean_residual_norm", "mean_spurious_ratio", "recovery_rate", "failures",
    ])?;
    for r in rows {
        w.write_record([
            r.sweep_value.to_string(),
            r.solver.clone(),
            r.mse_db.to_string(),
            r.crb_db.to_string(),
            r.n_trials.to_string(),
            r.component.to_string(),
            r.param.clone(),
            r.mean_residual_norm.to_string(),
            r.mean_spurious_ratio.to_string(),
            r.recovery_rate.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one solver on one trial.
struct SolverRun {
    state: std::result::Result<SolverState, String>,
}

struct TrialOutcome {
    trial: usize,
    seed: u64,
    code: Option<Vec<usize>>,
    crb: Option<Crb>,
    runs: Vec<SolverRun>,
}

fn y_override(cfg: &ExperimentConfig) -> Option<CVector> {
    cfg.y
        .as_ref()
        .map(|v| CVector::from_iterator(v.len(), v.iter().map(|p| Complex64::new(p[0], p[1]))))
}

fn run_trial(
    cfg: &ExperimentConfig,
    scene: &SceneSpec,
    solvers: &[ResolvedSolver],
    point: usize,
    trial: usize,
) -> Result<TrialOutcome> {
    let seed = trial_seed(cfg.seed, point, trial);
    let model = scene.trial_model(seed)?;
    let dict = model.dict.as_ref();
    let y = y_override(cfg).unwrap_or_else(|| synthesize_with(scene, dict, seed));
    let crb = if !scene.model.is_fixed() && scene.noise_sigma > 0.0 {
        crb_with_dictionary(dict, &scene.components, scene.noise_sigma).ok()
    } else {
        None
    };
    let runs = solvers
        .iter()
        .map(|s| {
            let state = match s.kind {
                SolverKind::AmpCtls => amp_ctls(&y, dict, &s.grid, s.stop, &s.ije),
                SolverKind::Omp => omp(&y, dict, &s.grid, s.stop),
            };
            SolverRun { state: state.map_err(|e| e.to_string()) }
        })
        .collect();
    Ok(TrialOutcome { trial, seed, code: model.code, crb, runs })
}

/// Converts one coordinate set into the reported parameters.
struct Reporter {
    doa: Option<f64>,
    m: usize,
}

impl Reporter {
    fn names(&self, arity: usize) -> Vec<String> {
        match (self.doa, arity) {
            (Some(_), _) => vec!["theta".into()],
            (None, 1) => vec!["f".into()],
            (None, _) => vec!["p".into(), "q".into()],
        }
    }

    /// Squared error per reported parameter.
    fn sq_errors(&self, truth: &GridPoint, est: &GridPoint) -> Vec<f64> {
        match self.doa {
            Some(d) => {
                let t = doa_map(truth.wrapped().coords[0], d);
                let e = doa_map(est.wrapped().coords[0], d);
                match (t, e) {
                    (Ok(t), Ok(e)) => vec![(e - t).powi(2)],
                    _ => vec![f64::NAN],
                }
            }
            None => truth
                .coords
                .iter()
                .zip(&est.coords)
                .map(|(t, e)| wrapped_difference(*e, *t).powi(2))
                .collect(),
        }
    }

    fn recovered(&self, truth: &GridPoint, est: &GridPoint) -> bool {
        let tol = 0.5 / self.m as f64;
        truth
            .coords
            .iter()
            .zip(&est.coords)
            .all(|(t, e)| wrapped_difference(*e, *t).abs() <= tol)
    }

    /// Bound for reported parameter `axis` of `component`.
    fn bound(&self, crb: &Crb, truth: &GridPoint, component: usize, axis: usize) -> f64 {
        match self.doa {
            Some(d) => {
                let theta = doa_map(truth.wrapped().coords[0], d).unwrap_or(f64::NAN).to_radians();
                let slope = d * theta.cos();
                crb.param(component, 0) / (slope * slope) * (180.0 / std::f64::consts::PI).powi(2)
            }
            None => crb.param(component, axis),
        }
    }
}

fn snapshot_estimates(state: &SolverState, k: Option<usize>) -> (Vec<Estimate>, f64, usize, usize) {
    let (grid, x, residual, iters) = match k {
        Some(k) if !state.history.is_empty() => {
            let idx = k.min(state.history.len()) - 1;
            let snap = &state.history[idx];
            (&snap.grid_estimates, &snap.x, snap.residual_norm, idx + 1)
        }
        _ => (&state.grid_estimates, &state.x, state.residual_norm(), state.k),
    };
    let estimates = grid
        .iter()
        .zip(x.iter())
        .map(|(g, a)| Estimate { params: g.clone(), amplitude: *a })
        .collect();
    let loops = state.ije_loops.iter().take(iters).sum();
    (estimates, residual, iters, loops)
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0);
    for v in values {
        if v.is_finite() {
            sum += v;
            n += 1;
        }
    }
    (if n > 0 { sum / n as f64 } else { f64::NAN }, n)
}

fn db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Runs every trial of every sweep point and aggregates the results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let solvers: Vec<ResolvedSolver> = cfg.solvers.iter().map(|s| cfg.resolve_solver(s)).collect::<Result<_>>()?;
    let reporter = Reporter { doa: cfg.doa.map(|d| d.spacing), m: cfg.m };
    let param_names = reporter.names(cfg.arity());
    let k_values: Vec<Option<usize>> = match &cfg.sweep {
        Some(Sweep::Sparsity { values }) => values.iter().map(|&k| Some(k)).collect(),
        _ => vec![None],
    };

    let mut trials_out = Vec::new();
    let mut summary = Vec::new();
    for (point, (label, scene)) in cfg.sweep_points()?.into_iter().enumerate() {
        scene.validate()?;
        let fixed_crb = if scene.model.is_fixed() && scene.noise_sigma > 0.0 {
            let model = scene.trial_model(0)?;
            crb_with_dictionary(model.dict.as_ref(), &scene.components, scene.noise_sigma).ok()
        } else {
            None
        };
        let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &scene, &solvers, point, t))
            .collect::<Result<_>>()?;

        let truth_points: Vec<GridPoint> = scene.components.iter().map(|c| c.params.clone()).collect();
        let truth_amps: Vec<Complex64> = scene.components.iter().map(|c| c.amplitude).collect();
        for k in &k_values {
            let sweep_value = k.map_or(label, |k| k as f64);
            for (si, solver) in solvers.iter().enumerate() {
                let mut rows: Vec<TrialRow> = Vec::new();
                let mut residuals = Vec::new();
                let mut spurious = Vec::new();
                let mut failures = 0;
                for o in &outcomes {
                    let run = &o.runs[si];
                    let (estimates, residual_norm, iterations, ije_loops, status) = match &run.state {
                        Ok(state) => {
                            let (e, r, i, l) = snapshot_estimates(state, *k);
                            (e, r, i, l, format!("{:?}", state.stop))
                        }
                        Err(msg) => {
                            failures += 1;
                            (Vec::new(), f64::NAN, 0, 0, format!("error: {msg}"))
                        }
                    };
                    residuals.push(residual_norm);
                    let est_points: Vec<GridPoint> = estimates.iter().map(|e| e.params.clone()).collect();
                    let est_amps: Vec<Complex64> = estimates.iter().map(|e| e.amplitude).collect();
                    let matching = match_nearest(&truth_points, &est_points);
                    let order = magnitude_order(&est_amps);
                    let ratio = spurious_ratio(&truth_amps, &est_amps);
                    if let Some(r) = ratio {
                        spurious.push(r);
                    }
                    for (ci, comp) in scene.components.iter().enumerate() {
                        let matched = matching[ci].map(|j| &estimates[j]);
                        let sq_errors = match matched {
                            Some(e) => reporter.sq_errors(&comp.params, &e.params),
                            None => vec![f64::NAN; param_names.len()],
                        };
                        rows.push(TrialRow {
                            sweep_value,
                            trial: o.trial,
                            seed: o.seed,
                            solver: solver.name.clone(),
                            component: ci,
                            truth: comp.params.coords.clone(),
                            truth_amp: comp.amplitude,
                            estimate: matched.map(|e| e.params.coords.clone()),
                            est_amp: matched.map(|e| e.amplitude),
                            sq_errors,
                            amp_sq_error: matched.map_or(f64::NAN, |e| (e.amplitude - comp.amplitude).norm_sqr()),
                            recovered: matched.is_some_and(|e| reporter.recovered(&comp.params, &e.params)),
                            mag_rank: matching[ci].map(|j| order.iter().position(|&i| i == j).unwrap()),
                            residual_norm,
                            iterations,
                            ije_loops,
                            spurious_ratio: ratio,
                            status: status.clone(),
                            code: o.code.clone(),
                        });
                    }
                }
                let (mean_residual, _) = mean(residuals.into_iter());
                let (mean_spurious, _) = mean(spurious.into_iter());
                let ncomp = scene.components.len();
                for (ci, comp) in scene.components.iter().enumerate() {
                    let comp_rows = || rows.iter().skip(ci).step_by(ncomp);
                    let recovery = comp_rows().filter(|r| r.recovered).count() as f64 / cfg.trials as f64;
                    let crb_for = |f: &dyn Fn(&Crb) -> f64| -> f64 {
                        match &fixed_crb {
                            Some(c) => f(c),
                            None => mean(outcomes.iter().filter_map(|o| o.crb.as_ref()).map(f)).0,
                        }
                    };
                    for (axis, name) in param_names.iter().enumerate() {
                        let (mse, n) = mean(comp_rows().map(|r| r.sq_errors[axis]));
                        let bound = crb_for(&|c: &Crb| reporter.bound(c, &comp.params, ci, axis));
                        summary.push(SummaryRow {
                            sweep_value,
                            solver: solver.name.clone(),
                            mse_db: db(mse),
                            crb_db: db(bound),
                            n_trials: n,
                            component: ci,
                            param: name.clone(),
                            mean_residual_norm: mean_residual,
                            mean_spurious_ratio: mean_spurious,
                            recovery_rate: recovery,
                            failures,
                        });
                    }
                    let (mse, n) = mean(comp_rows().map(|r| r.amp_sq_error));
                    summary.push(SummaryRow {
                        sweep_value,
                        solver: solver.name.clone(),
                        mse_db: db(mse),
                        crb_db: db(crb_for(&|c: &Crb| c.amplitude(ci))),
                        n_trials: n,
                        component: ci,
                        param: "amp".into(),
                        mean_residual_norm: mean_residual,
                        mean_spurious_ratio: mean_spurious,
                        recovery_rate: recovery,
                        failures,
                    });
                }
                trials_out.extend(rows);
            }
        }
    }
    if trials_out.is_empty() {
        return Err(Error::Config("experiment produced no trials".into()));
    }
    Ok(ExperimentOutput { name: cfg.name.clone(), param_names, trials: trials_out, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::{ComponentConfig, GridConfig, ModelKind, SolverConfig, SolverOptions};
    use crate::numerics::c;

    fn on_grid_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            model: ModelKind::Harmonic,
            m: 16,
            components: vec![ComponentConfig { amp_re: 1.0, amp_im: 0.5, params: vec![3.0 / 16.0] }],
            sigma: None,
            snr_db: None,
            grid: Some(GridConfig::counts(&[16])),
            solvers: vec![
                SolverConfig::new("OMP_M", SolverOptions::default()),
                SolverConfig::new("AMP-CTLS", SolverOptions::default()),
            ],
            trials: 1,
            seed: 3,
            sweep: None,
            rsf: None,
            doa: None,
            y: None,
        }
    }

    #[test]
    fn matching_is_bijective() {
        let truth = [GridPoint::scalar(0.1), GridPoint::scalar(0.5), GridPoint::scalar(0.95)];
        let est = [GridPoint::scalar(0.02), GridPoint::scalar(0.49), GridPoint::scalar(0.12)];
        let m = match_nearest(&truth, &est);
        assert_eq!(m, vec![Some(2), Some(1), Some(0)]);
        let short = match_nearest(&truth, &est[..1]);
        assert_eq!(short.iter().filter(|v| v.is_some()).count(), 1);
        assert_eq!(short[2], Some(0));
    }

    #[test]
    fn magnitude_helpers() {
        let amps = [c(1.0, 0.0), c(0.0, 3.0), c(-2.0, 0.0), c(0.1, 0.0)];
        assert_eq!(magnitude_order(&amps), vec![1, 2, 0, 3]);
        let truth = [c(20.0, 0.0), c(15.0, 0.0), c(1.0, 0.0)];
        let est = [c(19.0, 0.0), c(0.3, 0.0), c(1.1, 0.0), c(15.0, 0.0)];
        assert!((spurious_ratio(&truth, &est).unwrap() - 0.3).abs() < 1e-15);
        assert!(spurious_ratio(&truth, &est[..3]).is_none());
    }

    #[test]
    fn noiseless_on_grid_gives_zero_error() {
        let out = run_experiment(&on_grid_config()).unwrap();
        assert_eq!(out.trials.len(), 2);
        for row in &out.trials {
            assert!(row.sq_errors[0] < 1e-20, "{row:?}");
            assert!(row.amp_sq_error < 1e-18);
            assert!(row.recovered);
        }
        assert_eq!(out.summary.len(), 4);
    }

    #[test]
    fn outputs_are_reproducible() {
        let mut cfg = on_grid_config();
        cfg.trials = 6;
        cfg.snr_db = Some(5.0);
        cfg.components[0].params = vec![3.4 / 16.0];
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        let fa = a.write(da.path()).unwrap();
        let fb = b.write(db.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let summary = std::fs::read_to_string(&fa[1]).unwrap();
        assert!(summary.starts_with("sweep_value,solver,mse_db,crb_db,n_trials"));
        assert_eq!(a.trials[0].seed, a.trials[cfg.trials].seed);
        assert_ne!(a.trials[0].seed, a.trials[1].seed);
    }

    #[test]
    fn sparsity_sweep_uses_snapshots() {
        let mut cfg = on_grid_config();
        cfg.components.push(ComponentConfig { amp_re: 0.5, amp_im: 0.0, params: vec![9.0 / 16.0] });
        cfg.sweep = Some(Sweep::Sparsity { values: vec![1, 2, 3] });
        let out = run_experiment(&cfg).unwrap();
        let r1 = out.find(1.0, "OMP_M", 0, "f").unwrap();
        let r2 = out.find(2.0, "OMP_M", 0, "f").unwrap();
        let r3 = out.find(3.0, "OMP_M", 0, "f").unwrap();
        assert!(r2.mean_residual_norm < 1e-9);
        assert!(r1.mean_residual_norm > 0.4);
        assert!(r3.mean_spurious_ratio < 1e-6);
    }

    #[test]
    fn solver_failure_is_recorded() {
        let mut cfg = on_grid_config();
        cfg.grid = Some(GridConfig::points(vec![vec![0.2], vec![0.2]]));
        cfg.solvers.truncate(1);
        cfg.solvers[0].options.stop = Some("k=2".into());
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.trials[0].status, "RankDeficient");
    }
}
