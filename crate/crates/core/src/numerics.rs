//! Complex dense linear algebra used throughout the crate.
//!
//! Everything here is a thin layer over `nalgebra` that adds the rank guard
//! the solvers depend on: a reciprocal condition estimate below
//! [`RCOND_GUARD`] is reported as [`Error::Singular`] instead of producing a
//! silently inaccurate answer.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Reciprocal condition numbers below this are treated as rank deficiency.
pub const RCOND_GUARD: f64 = 1e-12;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn cvec(values: &[Complex64]) -> CVector {
    CVector::from_column_slice(values)
}

pub fn real_vec(values: &[f64]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|&v| c(v, 0.0)))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn is_finite_slice(values: &[Complex64]) -> bool {
    values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

pub fn ensure_finite(values: &[Complex64], what: &'static str) -> Result<()> {
    if is_finite_slice(values) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Ratio of extreme singular values; 0 for an empty or all-zero matrix.
pub fn rcond(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || !max.is_finite() {
        0.0
    } else {
        min / max
    }
}

fn guard(m: &CMatrix, context: &'static str) -> Result<()> {
    let rc = rcond(m);
    if rc < RCOND_GUARD || !rc.is_finite() {
        Err(Error::Singular { context, rcond: rc })
    } else {
        Ok(())
    }
}

/// [`guard`] for an upper-triangular `r`. `‖R‖_F ‖R⁻¹‖_F` bounds the 2-norm
/// condition number from above, so the SVD only runs when that bound fails.
fn guard_triangular(r: &CMatrix, context: &'static str) -> Result<()> {
    if let Some(inv) = r.solve_upper_triangular(&CMatrix::identity(r.nrows(), r.ncols())) {
        let bound = r.norm() * inv.norm();
        if bound.is_finite() && bound * RCOND_GUARD <= 1.0 {
            return Ok(());
        }
    }
    guard(r, context)
}

/// Minimizes `‖b − A x‖₂` through a Householder QR of `A`.
pub fn least_squares_solve(a: &CMatrix, b: &CVector) -> Result<CVector> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "least_squares_solve",
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if a.ncols() == 0 || a.ncols() > a.nrows() {
        return Err(Error::Singular {
            context: "least_squares_solve",
            rcond: 0.0,
        });
    }
    let qr = a.clone().qr();
    let r = qr.r();
    guard_triangular(&r, "least_squares_solve")?;
    let qhb = qr.q().adjoint() * b;
    r.solve_upper_triangular(&qhb).ok_or(Error::Singular {
        context: "least_squares_solve",
        rcond: 0.0,
    })
}

/// QR factorization of `Wᴴ` for a wide, full-row-rank `W`.
///
/// With `Wᴴ = Q R` we have `W Wᴴ = Rᴴ R` and `W† = Wᴴ (W Wᴴ)⁻¹ = Q R⁻ᴴ`, so
/// every product the CTLS recursion needs is a triangular solve away.
#[derive(Debug, Clone)]
pub struct RowSpaceFactor {
    q: CMatrix,
    r: CMatrix,
}

impl RowSpaceFactor {
    pub fn new(w: &CMatrix) -> Result<Self> {
        if w.nrows() == 0 || w.nrows() > w.ncols() {
            return Err(Error::Singular {
                context: "right pseudo-inverse (W not wide)",
                rcond: 0.0,
            });
        }
        let qr = w.adjoint().qr();
        let r = qr.r();
        guard_triangular(&r, "right pseudo-inverse (W Wᴴ)")?;
        Ok(Self { q: qr.q(), r })
    }

    pub fn rows(&self) -> usize {
        self.r.nrows()
    }

    /// `R⁻ᴴ v` for a matrix right-hand side.
    fn r_adjoint_solve(&self, v: &CMatrix) -> CMatrix {
        self.r
            .adjoint()
            .solve_lower_triangular(v)
            .expect("R passed the rank guard")
    }

    /// `(W Wᴴ)⁻¹ V`.
    pub fn gram_inverse_apply(&self, v: &CMatrix) -> CMatrix {
        let t = self.r_adjoint_solve(v);
        self.r
            .solve_upper_triangular(&t)
            .expect("R passed the rank guard")
    }

    /// `W† V = Wᴴ (W Wᴴ)⁻¹ V`.
    pub fn pinv_apply(&self, v: &CMatrix) -> CMatrix {
        &self.q * self.r_adjoint_solve(v)
    }

    pub fn pinv_apply_vec(&self, z: &CVector) -> CVector {
        let m = CMatrix::from_column_slice(z.len(), 1, z.as_slice());
        self.pinv_apply(&m).column(0).into_owned()
    }

    /// `W† W`, the orthogonal projector onto the row space of `W`.
    pub fn row_projector(&self) -> CMatrix {
        &self.q * self.q.adjoint()
    }
}

/// Minimum-norm solution of the underdetermined system `W s = z`.
pub fn right_pseudoinverse_apply(w: &CMatrix, z: &CVector) -> Result<CVector> {
    if w.nrows() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "right_pseudoinverse_apply",
            expected: w.nrows(),
            got: z.len(),
        });
    }
    Ok(RowSpaceFactor::new(w)?.pinv_apply_vec(z))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Returns `D` with `Dᴴ D = C⁻¹`.
///
/// With the Cholesky factor `C = L Lᴴ`, `D = L⁻¹` satisfies the identity and
/// is lower triangular.
pub fn whitening_factor(cov: &CMatrix) -> Result<CMatrix> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "whitening_factor",
            expected: n,
            got: cov.ncols(),
        });
    }
    let scale = cov.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let skew = (cov - cov.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if skew > 1e-12 * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // complex square roots let indefinite input slip through the factorization
    let diag_ok = (0..n).all(|i| {
        let v = l[(i, i)];
        v.re > 0.0 && v.im.abs() <= 1e-12 * v.re
    });
    if !diag_ok {
        return Err(Error::NotPositiveDefinite);
    }
    guard(&l, "whitening_factor")?;
    l.solve_lower_triangular(&identity(n))
        .ok_or(Error::NotPositiveDefinite)
}

/// Solves the square system `A X = B` by LU after the rank guard.
pub fn solve_square(a: &CMatrix, b: &CMatrix, context: &'static str) -> Result<CMatrix> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    guard(a, context)?;
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular { context, rcond: 0.0 })
}

pub fn solve_square_vec(a: &CMatrix, b: &CVector, context: &'static str) -> Result<CVector> {
    let rhs = CMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(solve_square(a, &rhs, context)?.column(0).into_owned())
}

/// Spectral norm.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_vector(rng: &mut impl Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn least_squares_identity() {
        let b = cvec(&[c(1.0, 0.0), c(0.0, 1.0), c(-2.0, 0.0)]);
        let x = least_squares_solve(&identity(3), &b).unwrap();
        assert!((x - &b).norm() < 1e-15);
    }

    #[test]
    fn least_squares_exact_fit_unit_modulus_column() {
        let col = CMatrix::from_fn(32, 1, |m, _| Complex64::from_polar(1.0, 0.37 * m as f64));
        let b = col.column(0) * c(2.0, 0.0);
        let x = least_squares_solve(&col, &b).unwrap();
        assert!((x[0] - c(2.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn least_squares_residual_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 8, 3);
        let b = random_vector(&mut rng, 8);
        let x = least_squares_solve(&a, &b).unwrap();
        let r = &b - &a * x;
        assert!((a.adjoint() * r).norm() < 1e-10);
    }

    #[test]
    fn least_squares_rank_deficient_is_error() {
        let mut a = CMatrix::zeros(4, 2);
        for m in 0..4 {
            a[(m, 0)] = c(m as f64, 1.0);
            a[(m, 1)] = c(2.0 * m as f64, 2.0);
        }
        let b = CVector::from_element(4, c(1.0, 0.0));
        assert!(matches!(
            least_squares_solve(&a, &b),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn pseudoinverse_orthonormal_rows() {
        let mut w = CMatrix::zeros(2, 4);
        w[(0, 0)] = c(1.0, 0.0);
        w[(1, 1)] = c(1.0, 0.0);
        let s = right_pseudoinverse_apply(&w, &cvec(&[c(1.0, 0.0), c(1.0, 0.0)])).unwrap();
        let expected = real_vec(&[1.0, 1.0, 0.0, 0.0]);
        assert!((s - expected).norm() < 1e-15);
    }

    #[test]
    fn pseudoinverse_scaling() {
        let w = identity(3) * c(2.0, 0.0);
        let s = right_pseudoinverse_apply(&w, &real_vec(&[3.0, 0.0, 0.0])).unwrap();
        assert!((s - real_vec(&[1.5, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn pseudoinverse_is_minimum_norm_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_matrix(&mut rng, 4, 7);
        let z = random_vector(&mut rng, 4);
        let s = right_pseudoinverse_apply(&w, &z).unwrap();
        assert!((&w * &s - &z).norm() < 1e-10);
        // Any feasible point is s plus a null-space vector; none is shorter.
        let projector = identity(7) - RowSpaceFactor::new(&w).unwrap().row_projector();
        for _ in 0..50 {
            let other = &s + &projector * random_vector(&mut rng, 7);
            assert!((&w * &other - &z).norm() < 1e-10);
            assert!(other.norm() >= s.norm() - 1e-12);
        }
    }

    #[test]
    fn pseudoinverse_rank_deficient_rows() {
        let w = CMatrix::from_element(2, 3, c(1.0, 0.0));
        assert!(right_pseudoinverse_apply(&w, &real_vec(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn kron_small_cases() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.0, 1.0), c(3.0, -1.0)]);
        let k = kron(&identity(2), &m);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k.view((0, 0), (2, 2)), m);
        assert_eq!(k.view((2, 2), (2, 2)), m);
        assert!(k.view((0, 2), (2, 2)).iter().all(|v| *v == c(0.0, 0.0)));
        let a = CMatrix::from_element(1, 1, c(2.0, 1.0));
        let b = CMatrix::from_element(1, 1, c(0.0, 3.0));
        assert_eq!(kron(&a, &b)[(0, 0)], c(2.0, 1.0) * c(0.0, 3.0));
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, cm, d) = (
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
        );
        let lhs = kron(&a, &b) * kron(&cm, &d);
        let rhs = kron(&(&a * &cm), &(&b * &d));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn kron_vec_rearrangement() {
        // (Δg ⊗ I) x = (I ⊗ x) Δg
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..5 {
            let dg = random_matrix(&mut rng, n, 1);
            let x = random_matrix(&mut rng, n, 1);
            let lhs = kron(&dg, &identity(n)) * &x;
            let rhs = kron(&identity(n), &x) * &dg;
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn whitening_scaled_identity() {
        let sigma: f64 = 0.005;
        let d = whitening_factor(&(identity(3) * c(sigma * sigma, 0.0))).unwrap();
        assert!((d - identity(3) * c(1.0 / sigma, 0.0)).norm() < 1e-9);
        let d = whitening_factor(&identity(2)).unwrap();
        assert!((d - identity(2)).norm() < 1e-15);
    }

    #[test]
    fn whitening_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 3);
        let cov = &a * a.adjoint() + identity(3) * c(0.1, 0.0);
        let d = whitening_factor(&cov).unwrap();
        let err = (d.adjoint() * &d * &cov - identity(3)).norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn whitening_rejects_indefinite() {
        let cov = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(whitening_factor(&cov), Err(Error::NotPositiveDefinite)));
        let non_hermitian =
            CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(whitening_factor(&non_hermitian).is_err());
    }

    proptest! {
        #[test]
        fn least_squares_normal_equations(seed in 0u64..10_000, rows in 3usize..12, cols in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, rows, cols);
            let b = random_vector(&mut rng, rows);
            if rcond(&a) > 1e-6 {
                let x = least_squares_solve(&a, &b).unwrap();
                let g = (a.adjoint() * (&b - &a * x)).norm();
                prop_assert!(g <= 1e-9 * op_norm(&a) * b.norm());
            }
        }

        #[test]
        fn pseudoinverse_feasible(seed in 0u64..10_000, rows in 1usize..5, extra in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, rows, rows + extra);
            let z = random_vector(&mut rng, rows);
            if rcond(&w) > 1e-6 {
                let s = right_pseudoinverse_apply(&w, &z).unwrap();
                prop_assert!((&w * s - &z).norm() <= 1e-9 * op_norm(&w) * z.norm());
            }
        }
    }
}
