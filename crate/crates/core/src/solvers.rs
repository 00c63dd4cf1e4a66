//! Greedy sparse recovery: AMP-CTLS and the plain OMP baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, GridPoint};
use crate::error::{Error, Result};
use crate::ije::{ije_refine, IjeConfig};
use crate::numerics::{least_squares_solve, CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum StopRule {
    /// Stop once the support holds `K` atoms.
    Sparsity(usize),
    /// Stop once `‖r‖₂ < δ`.
    Residual(f64),
    /// Stop once an iteration leaves `‖r^(k)‖₂ ≥ δ ‖r^(k−1)‖₂`.
    Relative(f64),
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StopRule::Sparsity(k) if k >= 1 => Ok(()),
            StopRule::Residual(d) | StopRule::Relative(d) if d > 0.0 && d.is_finite() => Ok(()),
            _ => Err(Error::Config(format!("invalid stop rule {self}"))),
        }
    }
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::Sparsity(k) => write!(f, "k={k}"),
            StopRule::Residual(d) => write!(f, "res={d}"),
            StopRule::Relative(d) => write!(f, "rel={d}"),
        }
    }
}

impl FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("stop rule must look like k=K, res=δ or rel=δ (got {s:?})"));
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        let rule = match key.trim() {
            "k" => StopRule::Sparsity(value.trim().parse().map_err(|_| bad())?),
            "res" => StopRule::Residual(value.trim().parse().map_err(|_| bad())?),
            "rel" => StopRule::Relative(value.trim().parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RuleSatisfied,
    /// Residual is exactly zero.
    ExactFit,
    /// No unselected grid point left, or the support reached `M`.
    CandidatesExhausted,
    /// The enlarged atom matrix was rank deficient; the last atom was dropped.
    RankDeficient,
}

/// State after one outer iteration.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub support: Vec<usize>,
    pub grid_estimates: Vec<GridPoint>,
    pub x: CVector,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    /// Indices into the input grid, in selection order.
    pub support: Vec<usize>,
    pub grid_estimates: Vec<GridPoint>,
    pub x: CVector,
    pub residual: CVector,
    pub k: usize,
    /// `‖r‖₂` before the first selection and after every iteration.
    pub residual_trace: Vec<f64>,
    /// IJE loops spent in each iteration (zero for OMP).
    pub ije_loops: Vec<usize>,
    pub history: Vec<Snapshot>,
    pub stop: StopReason,
}

impl SolverState {
    fn empty(y: &CVector) -> Self {
        Self {
            support: Vec::new(),
            grid_estimates: Vec::new(),
            x: CVector::zeros(0),
            residual: y.clone(),
            k: 0,
            residual_trace: vec![y.norm()],
            ije_loops: Vec::new(),
            history: Vec::new(),
            stop: StopReason::CandidatesExhausted,
        }
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }

    fn record(&mut self) {
        self.history.push(Snapshot {
            support: self.support.clone(),
            grid_estimates: self.grid_estimates.clone(),
            x: self.x.clone(),
            residual_norm: self.residual.norm(),
        });
        self.residual_trace.push(self.residual.norm());
    }
}

/// `|⟨r, φ(g_i)⟩| / ‖φ(g_i)‖₂` for every grid point.
pub fn correlate(residual: &CVector, dict: &dyn Dictionary, grid: &[GridPoint]) -> Result<Vec<f64>> {
    Ok(AtomCache::new(dict, grid)?.correlate(residual))
}

struct AtomCache {
    phi: CMatrix,
    norms: Vec<f64>,
}

impl AtomCache {
    fn new(dict: &dyn Dictionary, grid: &[GridPoint]) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidInput("grid must be nonempty".into()));
        }
        let phi = dict.atom_matrix(grid)?;
        let norms = phi.column_iter().map(|col| col.norm()).collect();
        Ok(Self { phi, norms })
    }

    fn correlate(&self, r: &CVector) -> Vec<f64> {
        let ip = self.phi.ad_mul(r);
        ip.iter()
            .zip(&self.norms)
            .map(|(v, &n)| if n > 0.0 { v.norm() / n } else { 0.0 })
            .collect()
    }

    /// Best unselected index; ties go to the lowest index.
    fn select(&self, r: &CVector, taken: &[usize]) -> Option<usize> {
        let corr = self.correlate(r);
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in corr.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

fn check_inputs(y: &CVector, dict: &dyn Dictionary, stop: &StopRule) -> Result<()> {
    stop.validate()?;
    if y.len() != dict.measurements() {
        return Err(Error::DimensionMismatch {
            context: "solver measurements",
            expected: dict.measurements(),
            got: y.len(),
        });
    }
    crate::numerics::ensure_finite(y.as_slice(), "measurements")?;
    if matches!(stop, StopRule::Residual(_) | StopRule::Relative(_)) && y.norm() == 0.0 {
        return Err(Error::InvalidInput("threshold stop rules need nonzero measurements".into()));
    }
    Ok(())
}

/// Shared greedy loop; `refine` maps the enlarged support to new grid
/// estimates, amplitudes, residual and loop count.
fn greedy<F>(
    y: &CVector,
    dict: &dyn Dictionary,
    grid: &[GridPoint],
    stop: StopRule,
    mut refine: F,
) -> Result<SolverState>
where
    F: FnMut(&[GridPoint]) -> Result<(Vec<GridPoint>, CVector, CVector, usize)>,
{
    check_inputs(y, dict, &stop)?;
    let cache = AtomCache::new(dict, grid)?;
    let cap = dict.measurements().min(grid.len());
    let mut state = SolverState::empty(y);
    loop {
        if let StopRule::Sparsity(k) = stop {
            if state.support.len() >= k {
                state.stop = StopReason::RuleSatisfied;
                break;
            }
        }
        if let StopRule::Residual(delta) = stop {
            if state.residual.norm() < delta {
                state.stop = StopReason::RuleSatisfied;
                break;
            }
        }
        if state.residual.norm() == 0.0 {
            state.stop = StopReason::ExactFit;
            break;
        }
        if state.support.len() >= cap {
            state.stop = StopReason::CandidatesExhausted;
            break;
        }
        let Some(index) = cache.select(&state.residual, &state.support) else {
            state.stop = StopReason::CandidatesExhausted;
            break;
        };
        let mut trial_grid = state.grid_estimates.clone();
        trial_grid.push(grid[index].clone());
        let (refined, x, residual, loops) = match refine(&trial_grid) {
            Ok(v) => v,
            Err(Error::Singular { .. }) => {
                state.stop = StopReason::RankDeficient;
                break;
            }
            Err(e) => return Err(e),
        };
        let prev = state.residual.norm();
        state.support.push(index);
        state.grid_estimates = refined;
        state.x = x;
        state.residual = residual;
        state.k += 1;
        state.ije_loops.push(loops);
        state.record();
        if let StopRule::Relative(delta) = stop {
            if state.residual.norm() >= delta * prev {
                state.stop = StopReason::RuleSatisfied;
                break;
            }
        }
    }
    Ok(state)
}

/// AMP-CTLS: greedy selection on the fixed input grid followed by joint
/// refinement of the whole support after each selection.
pub fn amp_ctls(
    y: &CVector,
    dict: &dyn Dictionary,
    grid0: &[GridPoint],
    stop: StopRule,
    ije: &IjeConfig,
) -> Result<SolverState> {
    ije.validate()?;
    greedy(y, dict, grid0, stop, |support| {
        let res = ije_refine(y, dict, support, ije)?;
        Ok((res.grid, res.x, res.residual, res.loops_run))
    })
}

/// Orthogonal matching pursuit on a fixed grid.
pub fn omp(y: &CVector, dict: &dyn Dictionary, grid: &[GridPoint], stop: StopRule) -> Result<SolverState> {
    greedy(y, dict, grid, stop, |support| {
        let phi = dict.atom_matrix(support)?;
        let x = least_squares_solve(&phi, y)?;
        let r = y - &phi * &x;
        Ok((support.to_vec(), x, r, 0))
    })
}
