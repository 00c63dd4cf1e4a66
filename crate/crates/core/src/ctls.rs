//! Constrained total least squares for a linearized dictionary.
//!
//! Around the current grid the dictionary is replaced by its first-order
//! model `Φ_Λ + Σ_i R_i Δg_i`. Grid mismatch and measurement noise are
//! stacked into one whitened vector `u = [D Δg; w/σ_w]` and the solver finds
//! the amplitudes minimizing `‖u‖²` subject to
//! `−y + Φ_Λ x + W_x u = 0`, with `W_x = [H(x)  σ_w I]`.
//!
//! Eliminating `u` leaves `min_x ‖W_x† (y − Φ_Λ x)‖²`, solved by a complex
//! Newton recursion on `(x, x*)`. The recursion has no convergence guarantee,
//! so each step is damped: a step that raises the penalty is halved until it
//! lowers it, and the solve stops unconverged when halving runs out.

use nalgebra::{Cholesky, Dyn};
use num_complex::Complex64;

use crate::dictionary::AtomBundle;
use crate::error::{Error, Result};
use crate::numerics::{
    identity, is_finite_slice, least_squares_solve, solve_square, CMatrix, CVector, RCOND_GUARD,
};

/// Inputs of one CTLS solve.
///
/// `derivatives` holds the `P` matrices `R_1 … R_P` (each `M × |Λ|`), one per
/// real mismatch coordinate, and `d` is the `P × P` whitening factor with
/// `Dᴴ D = C_g⁻¹`. For two-coordinate models pass the p-blocks first, then
/// the q-blocks, with `d = diag(D_p, D_q)`.
#[derive(Debug, Clone)]
pub struct CtlsProblem {
    y: CVector,
    atoms: CMatrix,
    derivatives: Vec<CMatrix>,
    d: CMatrix,
    d_inv: CMatrix,
    sigma_w: f64,
}

impl CtlsProblem {
    pub fn new(
        y: CVector,
        atoms: CMatrix,
        derivatives: Vec<CMatrix>,
        d: CMatrix,
        sigma_w: f64,
    ) -> Result<Self> {
        let (m, n) = atoms.shape();
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                context: "CTLS measurements",
                expected: m,
                got: y.len(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidInput("CTLS needs a nonempty support".into()));
        }
        if derivatives.is_empty() || derivatives.iter().any(|r| r.shape() != (m, n)) {
            return Err(Error::InvalidInput(format!(
                "CTLS derivative blocks must all be {m}×{n}"
            )));
        }
        if d.shape() != (derivatives.len(), derivatives.len()) {
            return Err(Error::DimensionMismatch {
                context: "CTLS whitening factor",
                expected: derivatives.len(),
                got: d.nrows(),
            });
        }
        if !(sigma_w.is_finite() && sigma_w > 0.0) {
            return Err(Error::InvalidInput(format!(
                "σ_w must be positive (got {sigma_w}); use a floor such as \
                 ctls::sigma_w_floor(y) = 1e-6·‖y‖/√M"
            )));
        }
        if !is_finite_slice(y.as_slice()) || !is_finite_slice(atoms.as_slice()) {
            return Err(Error::NonFinite("CTLS inputs"));
        }
        let d_inv = solve_square(&d, &identity(d.nrows()), "CTLS whitening factor D")?;
        Ok(Self {
            y,
            atoms,
            derivatives,
            d,
            d_inv,
            sigma_w,
        })
    }

    pub fn from_bundle(y: CVector, bundle: &AtomBundle, d: CMatrix, sigma_w: f64) -> Result<Self> {
        Self::new(y, bundle.atoms.clone(), bundle.derivatives.clone(), d, sigma_w)
    }

    pub fn measurements(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn support_size(&self) -> usize {
        self.atoms.ncols()
    }

    /// Number of mismatch coordinates `P`.
    pub fn mismatch_len(&self) -> usize {
        self.derivatives.len()
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn whitening(&self) -> &CMatrix {
        &self.d
    }

    pub fn y(&self) -> &CVector {
        &self.y
    }

    pub fn atoms(&self) -> &CMatrix {
        &self.atoms
    }

    /// `x_ini = Φ_Λ† y`.
    pub fn initial_estimate(&self) -> Result<CVector> {
        least_squares_solve(&self.atoms, &self.y)
    }

    /// `H(x)`: column `k` is `Σ_i (D⁻¹)_{ik} R_i x`.
    pub fn h_matrix(&self, x: &CVector) -> CMatrix {
        h_from_blocks(&self.derivatives, &self.d_inv, x)
    }

    pub fn wx(&self, x: &CVector) -> CMatrix {
        assemble_wx(&[self.h_matrix(x)], self.sigma_w, self.measurements())
    }

    fn linearize(&self, x: &CVector) -> Result<Linearization> {
        let factor = WxFactor::new(self.h_matrix(x), self.sigma_w)?;
        let e = &self.atoms * x - &self.y;
        let e_mat = CMatrix::from_column_slice(e.len(), 1, e.as_slice());
        let h = factor.gram_inverse_apply(&e_mat).column(0).into_owned();
        let u_hat = -factor.adjoint_apply(&CMatrix::from_column_slice(h.len(), 1, h.as_slice())).column(0);
        let penalty = u_hat.norm_squared();
        Ok(Linearization {
            factor,
            h,
            u_hat,
            penalty,
        })
    }

    /// `Δg = [D⁻¹ 0] û`.
    pub fn mismatch_from_u(&self, u_hat: &CVector) -> CVector {
        let p = self.mismatch_len();
        &self.d_inv * u_hat.rows(0, p)
    }
}

/// `W_x = [H  σ_w I]` through the Cholesky factor of
/// `W_x W_xᴴ = H Hᴴ + σ_w² I`, whose condition number is at most
/// `1 + ‖H‖²/σ_w²`.
struct WxFactor {
    h: CMatrix,
    sigma_w: f64,
    chol: Cholesky<Complex64, Dyn>,
}

impl WxFactor {
    fn new(h: CMatrix, sigma_w: f64) -> Result<Self> {
        let s2 = sigma_w * sigma_w;
        // Same threshold as a QR guard on W_xᴴ, whose R has half the
        // log-condition of the Gram matrix.
        let rcond = (s2 / (s2 + h.norm_squared())).sqrt();
        if rcond.is_nan() || rcond < RCOND_GUARD {
            return Err(Error::Singular { context: "CTLS W_x W_xᴴ", rcond });
        }
        let gram = &h * h.adjoint() + CMatrix::identity(h.nrows(), h.nrows()) * Complex64::new(s2, 0.0);
        let chol = gram.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { h, sigma_w, chol })
    }

    /// `(W Wᴴ)⁻¹ V`.
    fn gram_inverse_apply(&self, v: &CMatrix) -> CMatrix {
        self.chol.solve(v)
    }

    /// `Wᴴ V`.
    fn adjoint_apply(&self, v: &CMatrix) -> CMatrix {
        let p = self.h.ncols();
        let mut out = CMatrix::zeros(p + v.nrows(), v.ncols());
        out.view_mut((0, 0), (p, v.ncols())).copy_from(&self.h.ad_mul(v));
        out.view_mut((p, 0), v.shape()).copy_from(&(v * Complex64::new(self.sigma_w, 0.0)));
        out
    }

    /// Leading `P × P` block of the projector `W† W`.
    fn mismatch_projector(&self) -> CMatrix {
        self.h.ad_mul(&self.gram_inverse_apply(&self.h))
    }
}

struct Linearization {
    factor: WxFactor,
    h: CVector,
    u_hat: CVector,
    penalty: f64,
}

fn h_from_blocks(derivatives: &[CMatrix], d_inv: &CMatrix, x: &CVector) -> CMatrix {
    let m = derivatives[0].nrows();
    let mut rx = CMatrix::zeros(m, derivatives.len());
    for (i, r) in derivatives.iter().enumerate() {
        rx.set_column(i, &(r * x));
    }
    rx * d_inv
}

/// `H = G (D⁻¹ ⊗ I_{|Λ|}) (I_P ⊗ x)` for `G = [R_1, …, R_P]`.
///
/// Satisfies `(Σ_i R_i Δg_i) x = H D Δg` for every `Δg`.
pub fn assemble_h(g: &CMatrix, d: &CMatrix, x: &CVector) -> Result<CMatrix> {
    let n = x.len();
    let p = d.nrows();
    if n == 0 || g.ncols() != p * n || !d.is_square() {
        return Err(Error::DimensionMismatch {
            context: "assemble_h",
            expected: p * n,
            got: g.ncols(),
        });
    }
    let d_inv = solve_square(d, &identity(p), "assemble_h whitening factor")?;
    let blocks: Vec<CMatrix> = (0..p)
        .map(|i| g.columns(i * n, n).into_owned())
        .collect();
    Ok(h_from_blocks(&blocks, &d_inv, x))
}

/// `[H_1 … H_k  σ_w I_M]`.
pub fn assemble_wx(h_blocks: &[CMatrix], sigma_w: f64, m: usize) -> CMatrix {
    let width: usize = h_blocks.iter().map(|h| h.ncols()).sum();
    let mut w = CMatrix::zeros(m, width + m);
    let mut col = 0;
    for h in h_blocks {
        w.view_mut((0, col), (m, h.ncols())).copy_from(h);
        col += h.ncols();
    }
    for i in 0..m {
        w[(i, col + i)] = Complex64::new(sigma_w, 0.0);
    }
    w
}

/// Noise floor suggested when no σ_w is known.
pub fn sigma_w_floor(y: &CVector) -> f64 {
    let floor = 1e-6 * y.norm() / (y.len() as f64).sqrt();
    if floor > 0.0 {
        floor
    } else {
        f64::MIN_POSITIVE
    }
}

/// `‖W_x(x)† (y − Φ_Λ x)‖²`.
pub fn ctls_penalty(problem: &CtlsProblem, x: &CVector) -> Result<f64> {
    if x.len() != problem.support_size() {
        return Err(Error::DimensionMismatch {
            context: "ctls_penalty",
            expected: problem.support_size(),
            got: x.len(),
        });
    }
    Ok(problem.linearize(x)?.penalty)
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Relative change `‖Δx‖/‖x‖` below which the solve counts as converged.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-9,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtlsSolution {
    pub x: CVector,
    /// Whitened perturbation `[D Δg; w/σ_w]` at `x`.
    pub u_hat: CVector,
    pub delta_g_complex: CVector,
    /// Real projection of `delta_g_complex`, laid out like the derivative
    /// blocks (`[Δp; Δq]` for two-coordinate models).
    pub delta_g: Vec<f64>,
    pub penalty: f64,
    /// Penalty at the starting point and after every accepted step.
    pub penalty_trace: Vec<f64>,
    pub newton_iters: usize,
    pub converged: bool,
}

/// Newton step `(A*B⁻¹A − B*)⁻¹ (a* − A*B⁻¹a)` at the linearization point.
///
/// `a = ∂f/∂x`, `A = ∂²f/∂x∂xᵀ` and `B = ∂²f/∂x∂xᴴ`, assembled from `B̃`,
/// `Q̃` and the row-space factor of `W_x`.
fn newton_step(problem: &CtlsProblem, lin: &Linearization) -> Result<CVector> {
    let n = problem.support_size();
    let p = problem.mismatch_len();
    let h = &lin.h;

    // B̃ = Φ + G((D⁻¹ û₁) ⊗ I): the dictionary perturbed by the current
    // mismatch estimate.
    let mismatch = problem.mismatch_from_u(&lin.u_hat);
    let mut b_tilde = problem.atoms.clone();
    for (i, r) in problem.derivatives.iter().enumerate() {
        b_tilde += r * mismatch[i];
    }

    // Column j of Q̃ is Q_jᴴ h with Q_j = [[(R_1)_j … (R_P)_j] D⁻¹, 0_M];
    // only its leading P rows can be nonzero, so Q̃₁ keeps those.
    let d_inv_adj = problem.d_inv.adjoint();
    let mut q_tilde = CMatrix::zeros(p, n);
    for j in 0..n {
        let t = CVector::from_iterator(
            p,
            problem.derivatives.iter().map(|r| r.column(j).dotc(h)),
        );
        q_tilde.set_column(j, &(&d_inv_adj * t));
    }

    let a = b_tilde.transpose() * h.conjugate();
    let gram_inv_b = lin.factor.gram_inverse_apply(&b_tilde);
    // Q̃ᴴ W† B̃ = Q̃₁ᴴ Hᴴ (W Wᴴ)⁻¹ B̃.
    let t = q_tilde.ad_mul(&lin.factor.h.ad_mul(&gram_inv_b));
    let big_a = -(&t + t.transpose());
    let projector = lin.factor.mismatch_projector() - identity(p);
    let big_b = q_tilde.adjoint() * projector * &q_tilde
        + (b_tilde.adjoint() * gram_inv_b).transpose();

    let mut rhs = CMatrix::zeros(n, n + 1);
    rhs.view_mut((0, 0), (n, n)).copy_from(&big_a);
    rhs.set_column(n, &a);
    let b_inv = solve_square(&big_b, &rhs, "CTLS Newton B")?;
    let b_inv_a = b_inv.columns(0, n).into_owned();
    let b_inv_vec = b_inv.column(n).into_owned();

    let a_conj = big_a.conjugate();
    let lhs = &a_conj * b_inv_a - big_b.conjugate();
    let rhs = a.conjugate() - &a_conj * b_inv_vec;
    let rhs = CMatrix::from_column_slice(n, 1, rhs.as_slice());
    Ok(solve_square(&lhs, &rhs, "CTLS Newton system")?.column(0).into_owned())
}

pub fn ctls_newton(problem: &CtlsProblem, x0: &CVector, opts: &NewtonOptions) -> Result<CtlsSolution> {
    if x0.len() != problem.support_size() {
        return Err(Error::DimensionMismatch {
            context: "ctls_newton x0",
            expected: problem.support_size(),
            got: x0.len(),
        });
    }
    if !is_finite_slice(x0.as_slice()) {
        return Err(Error::NonFinite("ctls_newton x0"));
    }
    let mut x = x0.clone();
    let mut lin = problem.linearize(&x)?;
    let mut trace = vec![lin.penalty];
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_iters.max(1) {
        iters += 1;
        let step = match newton_step(problem, &lin) {
            Ok(s) if is_finite_slice(s.as_slice()) => s,
            _ => break,
        };
        let scale = x.norm().max(f64::MIN_POSITIVE);
        if step.norm() <= opts.tol * scale {
            let candidate = &x + &step;
            if let Ok(next) = problem.linearize(&candidate) {
                if next.penalty <= lin.penalty {
                    x = candidate;
                    lin = next;
                    trace.push(lin.penalty);
                }
            }
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..=opts.max_halvings {
            let candidate = &x + &step * Complex64::new(t, 0.0);
            if let Ok(next) = problem.linearize(&candidate) {
                if next.penalty.is_finite() && next.penalty < lin.penalty {
                    accepted = Some((candidate, next, t));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((candidate, next, t)) = accepted else {
            break;
        };
        let rel_change = t * step.norm() / scale;
        x = candidate;
        lin = next;
        trace.push(lin.penalty);
        if rel_change < opts.tol {
            converged = true;
            break;
        }
    }

    let delta_g_complex = problem.mismatch_from_u(&lin.u_hat);
    let delta_g = delta_g_complex.iter().map(|v| v.re).collect();
    Ok(CtlsSolution {
        x,
        u_hat: lin.u_hat,
        delta_g_complex,
        delta_g,
        penalty: lin.penalty,
        penalty_trace: trace,
        newton_iters: iters,
        converged,
    })
}

/// Starts from `x_ini = Φ_Λ† y`.
pub fn solve(problem: &CtlsProblem, opts: &NewtonOptions) -> Result<CtlsSolution> {
    let x0 = problem.initial_estimate()?;
    ctls_newton(problem, &x0, opts)
}

/// Real-constrained perturbation for known amplitudes.
#[derive(Debug, Clone)]
pub struct RealConstrainedU {
    pub u1: Vec<f64>,
    pub u2: CVector,
    pub v: CVector,
}

impl RealConstrainedU {
    pub fn u1_complex(&self) -> CVector {
        CVector::from_iterator(self.u1.len(), self.u1.iter().map(|&r| Complex64::new(r, 0.0)))
    }
}

/// Minimizes `u₁ᵀu₁ + u₂ᴴu₂` subject to `z = W₁u₁ + W₂u₂` with `u₁` real.
///
/// The multiplier solves `C₁v + C₂v* = z` with `C₁ = W₁W₁ᴴ + 2W₂W₂ᴴ` and
/// `C₂ = W₁W₁ᵀ`; then `u₁ = 2Re(W₁ᴴv)` and `u₂ = 2W₂ᴴv`. `C₂` is invertible
/// only when `W₁` has full row rank. A `W₁` with no columns reduces to the
/// minimum-norm solution of `W₂u₂ = z`.
pub fn real_constrained_u(w1: &CMatrix, w2: &CMatrix, z: &CVector) -> Result<RealConstrainedU> {
    let m = z.len();
    if w1.nrows() != m || w2.nrows() != m {
        return Err(Error::DimensionMismatch {
            context: "real_constrained_u",
            expected: m,
            got: if w1.nrows() != m { w1.nrows() } else { w2.nrows() },
        });
    }
    let g2 = w2 * w2.adjoint();
    if w1.ncols() == 0 {
        let v = solve_square(&g2, &CMatrix::from_column_slice(m, 1, z.as_slice()), "W₂W₂ᴴ")?
            .column(0)
            * Complex64::new(0.5, 0.0);
        let u2 = w2.adjoint() * &v * Complex64::new(2.0, 0.0);
        return Ok(RealConstrainedU { u1: Vec::new(), u2, v });
    }

    let c1 = w1 * w1.adjoint() + &g2 * Complex64::new(2.0, 0.0);
    let c2 = w1 * w1.transpose();
    let z_mat = CMatrix::from_column_slice(m, 1, z.as_slice());
    let mut rhs2 = CMatrix::zeros(m, m + 1);
    rhs2.view_mut((0, 0), (m, m)).copy_from(&c1);
    rhs2.set_column(m, z);
    let c2_inv = solve_square(&c2, &rhs2, "real_constrained_u C₂")?;
    let mut rhs1 = CMatrix::zeros(m, m + 1);
    rhs1.view_mut((0, 0), (m, m)).copy_from(&c2);
    rhs1.set_column(m, &z_mat.column(0));
    let c1_inv = solve_square(&c1, &rhs1, "real_constrained_u C₁")?;

    let outer = c2_inv.columns(0, m) - c1_inv.columns(0, m).conjugate();
    let inner = c2_inv.column(m) - c1_inv.column(m).conjugate();
    let inner = CMatrix::from_column_slice(m, 1, inner.as_slice());
    let v = solve_square(&outer, &inner, "real_constrained_u outer system")?
        .column(0)
        .into_owned();

    let u1 = (w1.adjoint() * &v).iter().map(|c| 2.0 * c.re).collect();
    let u2 = w2.adjoint() * &v * Complex64::new(2.0, 0.0);
    Ok(RealConstrainedU { u1, u2, v })
}
