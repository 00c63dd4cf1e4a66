//! Iterative joint estimation of grid points and amplitudes over a fixed
//! support: CTLS mismatch solve, real-part grid update, least-squares
//! amplitude refit, repeated until the residual stops shrinking.

use serde::{Deserialize, Serialize};

use crate::ctls::{ctls_newton, CtlsProblem, NewtonOptions};
use crate::dictionary::{Dictionary, GridPoint};
use crate::error::{Error, Result};
use crate::numerics::{identity, least_squares_solve, whitening_factor, CMatrix, CVector};

const TIE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IjeConfig {
    pub max_iters: usize,
    pub rel_residual_tol: f64,
    /// Prior standard deviation of each grid coordinate's mismatch.
    pub sigma_delta: f64,
    pub sigma_w: f64,
    #[serde(skip)]
    pub newton: NewtonOptions,
}

impl Default for IjeConfig {
    fn default() -> Self {
        Self {
            max_iters: 14,
            rel_residual_tol: 1e-6,
            sigma_delta: 0.005,
            sigma_w: 1.0,
            newton: NewtonOptions::default(),
        }
    }
}

impl IjeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("IJE max_iters must be at least 1".into()));
        }
        if !(self.rel_residual_tol > 0.0 && self.rel_residual_tol.is_finite()) {
            return Err(Error::Config("IJE rel_residual_tol must be positive".into()));
        }
        if !(self.sigma_delta > 0.0 && self.sigma_delta.is_finite()) {
            return Err(Error::Config("sigma_delta must be positive".into()));
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::Config("sigma_w must be positive".into()));
        }
        Ok(())
    }

    /// Whitening factor `D` for `C_g = σ_Δ² I_P`.
    pub fn whitening(&self, p: usize) -> Result<CMatrix> {
        let var = self.sigma_delta * self.sigma_delta;
        whitening_factor(&(identity(p) * crate::numerics::c(var, 0.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IjeStatus {
    /// Relative residual decrease fell below the tolerance.
    Converged,
    MaxIters,
    /// A loop increased the residual; the previous state was kept.
    RolledBack,
    /// `Φ(ĝ)` became rank deficient after a grid update.
    RankDeficient,
    /// The CTLS solve failed; the previous state was kept.
    CtlsFailed,
}

#[derive(Debug, Clone)]
pub struct IjeResult {
    pub grid: Vec<GridPoint>,
    pub x: CVector,
    pub residual: CVector,
    /// `‖r‖₂` of the initial fit and after every accepted loop.
    pub residual_norm_trace: Vec<f64>,
    /// Grid estimates matching each entry of `residual_norm_trace`.
    pub grid_trace: Vec<Vec<GridPoint>>,
    /// CTLS loops executed, including a rejected final one.
    pub loops_run: usize,
    pub status: IjeStatus,
}

impl IjeResult {
    pub fn residual_norm(&self) -> f64 {
        *self.residual_norm_trace.last().expect("trace is never empty")
    }

    pub fn rolled_back(&self) -> bool {
        self.status == IjeStatus::RolledBack
    }
}

fn fit(y: &CVector, dict: &dyn Dictionary, grid: &[GridPoint]) -> Result<(CVector, CVector)> {
    let phi = dict.atom_matrix(grid)?;
    let x = least_squares_solve(&phi, y)?;
    let r = y - &phi * &x;
    Ok((x, r))
}

/// Refine `grid0` and its amplitudes against `y`.
///
/// Fails only when the initial least-squares fit is impossible; later
/// failures stop the loop and return the last accepted state with a status
/// flag.
pub fn ije_refine(
    y: &CVector,
    dict: &dyn Dictionary,
    grid0: &[GridPoint],
    config: &IjeConfig,
) -> Result<IjeResult> {
    config.validate()?;
    if grid0.is_empty() {
        return Err(Error::InvalidInput("IJE needs a nonempty support".into()));
    }
    if y.len() != dict.measurements() {
        return Err(Error::DimensionMismatch {
            context: "IJE measurements",
            expected: dict.measurements(),
            got: y.len(),
        });
    }
    for point in grid0 {
        dict.check_point(point)?;
    }
    let n = grid0.len();
    let arity = dict.arity();
    let d = config.whitening(arity * n)?;

    let mut grid = grid0.to_vec();
    let (mut x, mut residual) = fit(y, dict, &grid)?;
    let mut trace = vec![residual.norm()];
    let mut grid_trace = vec![grid.clone()];
    let mut loops_run = 0;
    let mut status = IjeStatus::MaxIters;

    while loops_run < config.max_iters {
        let prev = *trace.last().unwrap();
        if prev == 0.0 {
            status = IjeStatus::Converged;
            break;
        }
        loops_run += 1;
        let bundle = dict.atoms(&grid)?;
        let solution = CtlsProblem::from_bundle(y.clone(), &bundle, d.clone(), config.sigma_w)
            .and_then(|problem| ctls_newton(&problem, &x, &config.newton));
        let solution = match solution {
            Ok(s) => s,
            Err(_) => {
                status = IjeStatus::CtlsFailed;
                break;
            }
        };
        let next_grid: Vec<GridPoint> = grid
            .iter()
            .enumerate()
            .map(|(i, point)| {
                GridPoint::new(
                    (0..arity)
                        .map(|k| point.coords[k] + solution.delta_g[k * n + i])
                        .collect(),
                )
            })
            .collect();
        if next_grid.iter().any(|p| !p.is_finite()) {
            status = IjeStatus::CtlsFailed;
            break;
        }
        let (next_x, next_r) = match fit(y, dict, &next_grid) {
            Ok(v) => v,
            Err(_) => {
                status = IjeStatus::RankDeficient;
                break;
            }
        };
        let norm = next_r.norm();
        if norm > prev {
            // A change at rounding level is a fixed point, not a failure.
            status = if norm <= prev * (1.0 + TIE_SLACK) {
                IjeStatus::Converged
            } else {
                IjeStatus::RolledBack
            };
            break;
        }
        grid = next_grid;
        x = next_x;
        residual = next_r;
        trace.push(norm);
        grid_trace.push(grid.clone());
        if (prev - norm) / prev < config.rel_residual_tol {
            status = IjeStatus::Converged;
            break;
        }
    }

    Ok(IjeResult {
        grid,
        x,
        residual,
        residual_norm_trace: trace,
        grid_trace,
        loops_run,
        status,
    })
}
