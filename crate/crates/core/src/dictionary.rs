//! Parametric dictionaries: a grid point maps to an atom, and the atom's
//! partial derivatives with respect to each grid coordinate are available in
//! closed form.
//!
//! Grid coordinates are in cycles per sample. They are refined as unbounded
//! reals (a Taylor step may cross the 0/1 boundary) and wrapped into `[0, 1)`
//! only when reported, see [`GridPoint::wrapped`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridPoint {
    pub coords: Vec<f64>,
}

impl GridPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn scalar(f: f64) -> Self {
        Self { coords: vec![f] }
    }

    pub fn pair(p: f64, q: f64) -> Self {
        Self { coords: vec![p, q] }
    }

    pub fn arity(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|v| v.is_finite())
    }

    /// Every coordinate reduced into `[0, 1)`.
    pub fn wrapped(&self) -> GridPoint {
        GridPoint::new(self.coords.iter().map(|&v| wrap_unit(v)).collect())
    }

    /// Euclidean distance on the unit torus.
    pub fn wrapped_distance(&self, other: &GridPoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| wrapped_difference(*a, *b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn wrap_unit(v: f64) -> f64 {
    let w = v.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed difference `a − b` reduced into `[−0.5, 0.5)`.
pub fn wrapped_difference(a: f64, b: f64) -> f64 {
    wrap_unit(a - b + 0.5) - 0.5
}

/// Atoms for a list of grid points plus their derivative matrices.
///
/// `derivatives` is ordered coordinate-major: entry `k·|Λ| + i` is
/// `∂Φ/∂(coordinate k of point i)`, an `M×|Λ|` matrix whose only nonzero
/// column is `i`. For two-coordinate models this lays the mismatch vector out
/// as `[Δp; Δq]`.
#[derive(Debug, Clone)]
pub struct AtomBundle {
    pub atoms: CMatrix,
    pub derivatives: Vec<CMatrix>,
}

impl AtomBundle {
    pub fn support_size(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn measurements(&self) -> usize {
        self.atoms.nrows()
    }

    /// `G = [R_1, …, R_P]`, of size `M × (P·|Λ|)`.
    pub fn stacked_derivatives(&self) -> CMatrix {
        let (m, n) = self.atoms.shape();
        let mut g = CMatrix::zeros(m, n * self.derivatives.len());
        for (i, r) in self.derivatives.iter().enumerate() {
            g.view_mut((0, i * n), (m, n)).copy_from(r);
        }
        g
    }
}

pub trait Dictionary: Send + Sync {
    fn measurements(&self) -> usize;

    /// Number of real coordinates per grid point.
    fn arity(&self) -> usize;

    fn atom(&self, point: &GridPoint) -> CVector;

    /// One column per coordinate: `∂φ/∂g_k` at `point`.
    fn partials(&self, point: &GridPoint) -> Vec<CVector>;

    fn check_point(&self, point: &GridPoint) -> Result<()> {
        if point.arity() != self.arity() {
            return Err(Error::DimensionMismatch {
                context: "grid point arity",
                expected: self.arity(),
                got: point.arity(),
            });
        }
        if !point.is_finite() {
            return Err(Error::NonFinite("grid point"));
        }
        Ok(())
    }

    fn atom_matrix(&self, grid: &[GridPoint]) -> Result<CMatrix> {
        let m = self.measurements();
        let mut atoms = CMatrix::zeros(m, grid.len());
        for (i, point) in grid.iter().enumerate() {
            self.check_point(point)?;
            atoms.set_column(i, &self.atom(point));
        }
        Ok(atoms)
    }

    fn atoms(&self, grid: &[GridPoint]) -> Result<AtomBundle> {
        let m = self.measurements();
        let n = grid.len();
        let arity = self.arity();
        let atoms = self.atom_matrix(grid)?;
        let mut derivatives = vec![CMatrix::zeros(m, n); arity * n];
        for (i, point) in grid.iter().enumerate() {
            for (k, column) in self.partials(point).into_iter().enumerate() {
                derivatives[k * n + i].set_column(i, &column);
            }
        }
        Ok(AtomBundle { atoms, derivatives })
    }
}

/// Complex exponentials `exp(j2π f m)`, `m = 0..M−1`.
#[derive(Debug, Clone)]
pub struct Harmonic {
    m: usize,
}

impl Harmonic {
    pub fn new(m: usize) -> Self {
        assert!(m > 0, "measurement count must be positive");
        Self { m }
    }
}

impl Dictionary for Harmonic {
    fn measurements(&self) -> usize {
        self.m
    }

    fn arity(&self) -> usize {
        1
    }

    fn atom(&self, point: &GridPoint) -> CVector {
        let f = point.coords[0];
        CVector::from_fn(self.m, |m, _| Complex64::from_polar(1.0, 2.0 * PI * f * m as f64))
    }

    fn partials(&self, point: &GridPoint) -> Vec<CVector> {
        let f = point.coords[0];
        vec![CVector::from_fn(self.m, |m, _| {
            let w = 2.0 * PI * m as f64;
            Complex64::from_polar(1.0, w * f) * Complex64::new(0.0, w)
        })]
    }
}

pub fn harmonic_atoms(grid: &[GridPoint], m: usize) -> Result<AtomBundle> {
    Harmonic::new(m).atoms(grid)
}

/// Randomized step-frequency radar echoes
/// `s_m(p, q) = exp(−j2π C_m p − j2π m (1 + C_m δf/f₀) q)`.
#[derive(Debug, Clone)]
pub struct Rsf {
    code: Vec<usize>,
    ratio: f64,
}

impl Rsf {
    pub const DEFAULT_RATIO: f64 = 0.001;

    pub fn new(code: Vec<usize>, ratio: f64) -> Result<Self> {
        let m = code.len();
        let mut seen = vec![false; m];
        for &c in &code {
            if c >= m || seen[c] {
                return Err(Error::InvalidPermutation(m));
            }
            seen[c] = true;
        }
        if m == 0 {
            return Err(Error::InvalidPermutation(0));
        }
        if !(ratio.is_finite() && ratio >= 0.0) {
            return Err(Error::InvalidInput(format!("RSF ratio must be ≥ 0, got {ratio}")));
        }
        Ok(Self { code, ratio })
    }

    /// Uniformly random frequency code.
    pub fn random_code(m: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut code: Vec<usize> = (0..m).collect();
        code.shuffle(rng);
        code
    }

    pub fn code(&self) -> &[usize] {
        &self.code
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    fn rates(&self, m: usize) -> (f64, f64) {
        let cm = self.code[m] as f64;
        (2.0 * PI * cm, 2.0 * PI * m as f64 * (1.0 + cm * self.ratio))
    }
}

impl Dictionary for Rsf {
    fn measurements(&self) -> usize {
        self.code.len()
    }

    fn arity(&self) -> usize {
        2
    }

    fn atom(&self, point: &GridPoint) -> CVector {
        let (p, q) = (point.coords[0], point.coords[1]);
        CVector::from_fn(self.code.len(), |m, _| {
            let (wp, wq) = self.rates(m);
            Complex64::from_polar(1.0, -wp * p - wq * q)
        })
    }

    fn partials(&self, point: &GridPoint) -> Vec<CVector> {
        let (p, q) = (point.coords[0], point.coords[1]);
        let m = self.code.len();
        let mut dp = CVector::zeros(m);
        let mut dq = CVector::zeros(m);
        for i in 0..m {
            let (wp, wq) = self.rates(i);
            let s = Complex64::from_polar(1.0, -wp * p - wq * q);
            dp[i] = s * Complex64::new(0.0, -wp);
            dq[i] = s * Complex64::new(0.0, -wq);
        }
        vec![dp, dq]
    }
}

pub fn rsf_atoms(grid: &[GridPoint], code: &[usize], ratio: f64, m: usize) -> Result<AtomBundle> {
    if code.len() != m {
        return Err(Error::DimensionMismatch {
            context: "rsf code length",
            expected: m,
            got: code.len(),
        });
    }
    Rsf::new(code.to_vec(), ratio)?.atoms(grid)
}

/// Dictionary that is exactly affine in its coordinates:
/// `φ(g) = offset + Σ_k g_k · directions[k]`.
///
/// The first-order model used by the CTLS step is exact for it, which makes it
/// the reference case for the monotone-descent property of the joint
/// estimator.
#[derive(Debug, Clone)]
pub struct LinearDictionary {
    offset: CVector,
    directions: Vec<CVector>,
}

impl LinearDictionary {
    pub fn new(offset: CVector, directions: Vec<CVector>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidInput("linear dictionary needs a direction".into()));
        }
        for d in &directions {
            if d.len() != offset.len() {
                return Err(Error::DimensionMismatch {
                    context: "linear dictionary direction",
                    expected: offset.len(),
                    got: d.len(),
                });
            }
        }
        Ok(Self { offset, directions })
    }
}

impl Dictionary for LinearDictionary {
    fn measurements(&self) -> usize {
        self.offset.len()
    }

    fn arity(&self) -> usize {
        self.directions.len()
    }

    fn atom(&self, point: &GridPoint) -> CVector {
        let mut a = self.offset.clone();
        for (g, d) in point.coords.iter().zip(&self.directions) {
            a.axpy(Complex64::new(*g, 0.0), d, Complex64::new(1.0, 0.0));
        }
        a
    }

    fn partials(&self, _point: &GridPoint) -> Vec<CVector> {
        self.directions.clone()
    }
}

/// `{0, 1/N, …, (N−1)/N}` per axis. Two-axis grids enumerate the first axis
/// fastest, so point `c + d·C` is `(c/C, d/D)`.
pub fn uniform_grid(counts: &[usize]) -> Result<Vec<GridPoint>> {
    match counts {
        [n] if *n >= 1 => Ok((0..*n).map(|i| GridPoint::scalar(i as f64 / *n as f64)).collect()),
        [cp, cq] if *cp >= 1 && *cq >= 1 => {
            let mut grid = Vec::with_capacity(cp * cq);
            for d in 0..*cq {
                for c in 0..*cp {
                    grid.push(GridPoint::pair(c as f64 / *cp as f64, d as f64 / *cq as f64));
                }
            }
            Ok(grid)
        }
        _ => Err(Error::InvalidInput(format!(
            "uniform grid needs one or two positive counts, got {counts:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-7;

    fn max_rel_error(a: &CVector, b: &CVector) -> f64 {
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max) / scale
    }

    /// Central differences of `dict.atom` along every coordinate.
    fn finite_difference_partials(dict: &dyn Dictionary, point: &GridPoint) -> Vec<CVector> {
        (0..dict.arity())
            .map(|k| {
                let mut plus = point.clone();
                let mut minus = point.clone();
                plus.coords[k] += H;
                minus.coords[k] -= H;
                (dict.atom(&plus) - dict.atom(&minus)) / c(2.0 * H, 0.0)
            })
            .collect()
    }

    #[test]
    fn harmonic_zero_frequency() {
        let b = harmonic_atoms(&[GridPoint::scalar(0.0)], 4).unwrap();
        assert!(b.atoms.iter().all(|v| (*v - c(1.0, 0.0)).norm() < 1e-15));
        let expected = [0.0, 2.0 * PI, 4.0 * PI, 6.0 * PI];
        for (m, e) in expected.iter().enumerate() {
            assert!((b.derivatives[0][(m, 0)] - c(0.0, *e)).norm() < 1e-12);
        }
    }

    #[test]
    fn harmonic_nyquist() {
        let b = harmonic_atoms(&[GridPoint::scalar(0.5)], 2).unwrap();
        assert!((b.atoms[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((b.atoms[(1, 0)] - c(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn harmonic_derivative_matches_finite_difference() {
        let dict = Harmonic::new(32);
        let point = GridPoint::scalar(9.3 / 32.0);
        let fd = finite_difference_partials(&dict, &point);
        assert!(max_rel_error(&fd[0], &dict.partials(&point)[0]) < 1e-5);
    }

    #[test]
    fn rsf_origin_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let code = Rsf::random_code(16, &mut rng);
        let b = rsf_atoms(&[GridPoint::pair(0.0, 0.0)], &code, 0.001, 16).unwrap();
        assert!(b.atoms.iter().all(|v| (*v - c(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn rsf_degenerates_to_sinusoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let code = Rsf::random_code(8, &mut rng);
        let q = 0.23;
        let b = rsf_atoms(&[GridPoint::pair(0.0, q)], &code, 0.0, 8).unwrap();
        for m in 0..8 {
            let expected = Complex64::from_polar(1.0, -2.0 * PI * m as f64 * q);
            assert!((b.atoms[(m, 0)] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn rsf_partials_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dict = Rsf::new(Rsf::random_code(32, &mut rng), 0.001).unwrap();
        let point = GridPoint::pair(10.1 / 32.0, 19.4 / 32.0);
        let fd = finite_difference_partials(&dict, &point);
        let an = dict.partials(&point);
        for k in 0..2 {
            assert!(max_rel_error(&fd[k], &an[k]) < 1e-5);
        }
    }

    #[test]
    fn rsf_rejects_bad_code() {
        assert!(matches!(Rsf::new(vec![0, 0, 1], 0.0), Err(Error::InvalidPermutation(3))));
        assert!(Rsf::new(vec![0, 3, 1], 0.0).is_err());
        assert!(rsf_atoms(&[GridPoint::pair(0.0, 0.0)], &[1, 0], 0.0, 3).is_err());
    }

    #[test]
    fn arity_mismatch_is_error() {
        assert!(harmonic_atoms(&[GridPoint::pair(0.1, 0.2)], 4).is_err());
        assert!(harmonic_atoms(&[GridPoint::scalar(f64::NAN)], 4).is_err());
    }

    #[test]
    fn uniform_grids() {
        let g = uniform_grid(&[4]).unwrap();
        let coords: Vec<f64> = g.iter().map(|p| p.coords[0]).collect();
        assert_eq!(coords, vec![0.0, 0.25, 0.5, 0.75]);

        let g = uniform_grid(&[2, 2]).unwrap();
        let expected = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)];
        for (p, (a, b)) in g.iter().zip(expected) {
            assert_eq!(p.coords, vec![a, b]);
        }

        let g = uniform_grid(&[32]).unwrap();
        assert_eq!(g.len(), 32);
        for w in g.windows(2) {
            assert!((w[1].coords[0] - w[0].coords[0] - 1.0 / 32.0).abs() < 1e-15);
        }

        assert!(uniform_grid(&[0]).is_err());
        assert!(uniform_grid(&[2, 2, 2]).is_err());
    }

    #[test]
    fn derivative_structure_single_nonzero_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid: Vec<GridPoint> = (0..3)
            .map(|_| GridPoint::pair(rng.random(), rng.random()))
            .collect();
        let b = rsf_atoms(&grid, &Rsf::random_code(8, &mut rng), 0.001, 8).unwrap();
        assert_eq!(b.derivatives.len(), 6);
        for (idx, r) in b.derivatives.iter().enumerate() {
            let owner = idx % 3;
            for col in 0..3 {
                let nonzero = r.column(col).iter().any(|v| v.norm() > 0.0);
                assert_eq!(nonzero, col == owner, "block {idx} column {col}");
            }
        }
        assert_eq!(b.stacked_derivatives().shape(), (8, 18));
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_unit(1.25), 0.25);
        assert!((wrap_unit(-0.25) - 0.75).abs() < 1e-15);
        assert!(wrap_unit(-1e-18) < 1.0);
        assert!((wrapped_difference(0.95, 0.05) + 0.1).abs() < 1e-12);
        assert!((wrapped_difference(0.05, 0.95) - 0.1).abs() < 1e-12);
        let a = GridPoint::pair(0.99, 0.5);
        let b = GridPoint::pair(0.01, 0.5);
        assert!((a.wrapped_distance(&b) - 0.02).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn atoms_have_norm_sqrt_m(f in -2.0f64..2.0, p in 0.0f64..1.0, q in 0.0f64..1.0, seed in 0u64..1000) {
            let h = Harmonic::new(32);
            prop_assert!((h.atom(&GridPoint::scalar(f)).norm() - 32f64.sqrt()).abs() < 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = Rsf::new(Rsf::random_code(32, &mut rng), 0.001).unwrap();
            prop_assert!((r.atom(&GridPoint::pair(p, q)).norm() - 32f64.sqrt()).abs() < 1e-12);
        }

        #[test]
        fn analytic_partials_match_central_differences(f in 0.0f64..1.0, p in 0.0f64..1.0, q in 0.0f64..1.0, seed in 0u64..1000) {
            let h = Harmonic::new(32);
            let pt = GridPoint::scalar(f);
            prop_assert!(max_rel_error(&finite_difference_partials(&h, &pt)[0], &h.partials(&pt)[0]) < 1e-5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = Rsf::new(Rsf::random_code(32, &mut rng), 0.001).unwrap();
            let pt = GridPoint::pair(p, q);
            let fd = finite_difference_partials(&r, &pt);
            let an = r.partials(&pt);
            prop_assert!(max_rel_error(&fd[0], &an[0]) < 1e-5);
            prop_assert!(max_rel_error(&fd[1], &an[1]) < 1e-5);
        }
    }
}
