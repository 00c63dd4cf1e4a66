use nalgebra::DMatrix;

use super::scene::{Component, SceneSpec};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, RCOND_GUARD};
use num_complex::Complex64;

/// Inverse Fisher information diagonal.
///
/// Per component the parameters are ordered as the grid coordinates, then
/// `Re α`, then `Im α`.
#[derive(Debug, Clone, PartialEq)]
pub struct Crb {
    pub arity: usize,
    pub values: Vec<f64>,
}

impl Crb {
    fn stride(&self) -> usize {
        self.arity + 2
    }

    pub fn components(&self) -> usize {
        self.values.len() / self.stride()
    }

    pub fn param(&self, component: usize, axis: usize) -> f64 {
        self.values[component * self.stride() + axis]
    }

    /// Bound on `E|α̂ − α|²`.
    pub fn amplitude(&self, component: usize) -> f64 {
        let base = component * self.stride() + self.arity;
        self.values[base] + self.values[base + 1]
    }
}

/// Bound for the scene's own dictionary. RSF scenes need a fixed code.
pub fn crb(scene: &SceneSpec) -> Result<Crb> {
    scene.validate()?;
    if !scene.model.is_fixed() {
        return Err(Error::Config(
            "the bound depends on the RSF code; fix `code` or `code_seed`".into(),
        ));
    }
    let model = scene.trial_model(0)?;
    crb_with_dictionary(model.dict.as_ref(), &scene.components, scene.noise_sigma)
}

/// `FIM = (2/σ²) Re(Jᴴ J)` for complex Gaussian noise with `E|w|² = σ²`.
pub fn crb_with_dictionary(dict: &dyn Dictionary, components: &[Component], sigma: f64) -> Result<Crb> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput("the bound needs σ > 0".into()));
    }
    if components.is_empty() {
        return Err(Error::InvalidInput("the bound needs at least one component".into()));
    }
    let arity = dict.arity();
    let m = dict.measurements();
    let stride = arity + 2;
    let mut jac = CMatrix::zeros(m, stride * components.len());
    for (k, c) in components.iter().enumerate() {
        dict.check_point(&c.params)?;
        let atom = dict.atom(&c.params);
        for (axis, d) in dict.partials(&c.params).into_iter().enumerate() {
            jac.set_column(k * stride + axis, &(d * c.amplitude));
        }
        jac.set_column(k * stride + arity, &atom);
        jac.set_column(k * stride + arity + 1, &(atom * Complex64::new(0.0, 1.0)));
    }
    let gram = jac.ad_mul(&jac);
    let scale = 2.0 / (sigma * sigma);
    let fim = DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| scale * gram[(i, j)].re);
    let sv = fim.singular_values();
    let max = sv.max();
    if max.is_nan() || max <= 0.0 || sv.min() / max < RCOND_GUARD {
        return Err(Error::Singular {
            context: "Fisher information",
            rcond: if max > 0.0 { sv.min() / max } else { 0.0 },
        });
    }
    let chol = fim.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let inv = chol.inverse();
    Ok(Crb {
        arity,
        values: (0..inv.nrows()).map(|i| inv[(i, i)]).collect(),
    })
}
