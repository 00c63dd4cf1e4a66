use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, GridPoint, Harmonic, Rsf};
use crate::error::{Error, Result};
use crate::numerics::CVector;
use num_complex::Complex64;

const CODE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model {
    Harmonic,
    Rsf {
        #[serde(default = "default_ratio")]
        ratio: f64,
        /// Fixed frequency code; drawn per trial when absent.
        #[serde(default)]
        code: Option<Vec<usize>>,
        /// Draw one code from this seed and share it across trials.
        #[serde(default)]
        code_seed: Option<u64>,
    },
}

fn default_ratio() -> f64 {
    Rsf::DEFAULT_RATIO
}

impl Model {
    pub fn arity(&self) -> usize {
        match self {
            Model::Harmonic => 1,
            Model::Rsf { .. } => 2,
        }
    }

    /// Whether every trial sees the same dictionary.
    pub fn is_fixed(&self) -> bool {
        match self {
            Model::Harmonic => true,
            Model::Rsf { code, code_seed, .. } => code.is_some() || code_seed.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub amplitude: Complex64,
    pub params: GridPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub model: Model,
    pub m: usize,
    pub components: Vec<Component>,
    pub noise_sigma: f64,
}

/// A dictionary resolved for one trial, with the RSF code it used.
pub struct TrialModel {
    pub dict: Box<dyn Dictionary>,
    pub code: Option<Vec<usize>>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("M must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be finite and ≥ 0".into()));
        }
        let arity = self.model.arity();
        for (k, c) in self.components.iter().enumerate() {
            if c.params.arity() != arity {
                return Err(Error::Config(format!(
                    "component {k} has {} parameters, model needs {arity}",
                    c.params.arity()
                )));
            }
            if c.params.coords.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Err(Error::Config(format!("component {k} parameters must lie in [0, 1)")));
            }
            if c.amplitude.norm() == 0.0 || !c.amplitude.is_finite() {
                return Err(Error::Config(format!("component {k} amplitude must be nonzero")));
            }
        }
        if let Model::Rsf { ratio, code: Some(code), .. } = &self.model {
            if code.len() != self.m {
                return Err(Error::Config(format!("RSF code must have {} entries", self.m)));
            }
            Rsf::new(code.clone(), *ratio)?;
        }
        Ok(())
    }

    /// Dictionary used by the trial with this seed.
    pub fn trial_model(&self, seed: u64) -> Result<TrialModel> {
        match &self.model {
            Model::Harmonic => Ok(TrialModel {
                dict: Box::new(Harmonic::new(self.m)),
                code: None,
            }),
            Model::Rsf { ratio, code, code_seed } => {
                let code = match (code, code_seed) {
                    (Some(code), _) => code.clone(),
                    (None, Some(s)) => Rsf::random_code(self.m, &mut stream(*s, CODE_STREAM)),
                    (None, None) => Rsf::random_code(self.m, &mut stream(seed, CODE_STREAM)),
                };
                Ok(TrialModel {
                    dict: Box::new(Rsf::new(code.clone(), *ratio)?),
                    code: Some(code),
                })
            }
        }
    }

    pub fn clean_signal(&self, dict: &dyn Dictionary) -> CVector {
        let mut y = CVector::zeros(self.m);
        for c in &self.components {
            y += dict.atom(&c.params) * c.amplitude;
        }
        y
    }

    /// Noise σ for `SNR = |α_ref|²/σ²` in dB.
    pub fn sigma_for_snr(amplitude: f64, snr_db: f64) -> f64 {
        amplitude / 10f64.powf(snr_db / 20.0)
    }

    pub fn weakest_amplitude(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude.norm())
            .fold(f64::INFINITY, f64::min)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed for trial `trial` of sweep point `point` under `master`.
pub fn trial_seed(master: u64, point: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng.random()
}

/// Circular complex Gaussian noise with `E|w_m|² = σ²`.
pub fn complex_noise(m: usize, sigma: f64, seed: u64) -> CVector {
    let mut rng = stream(seed, NOISE_STREAM);
    let s = sigma / std::f64::consts::SQRT_2;
    CVector::from_fn(m, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

/// Measurements of `scene` for one trial; deterministic in `seed`.
pub fn synthesize(scene: &SceneSpec, seed: u64) -> Result<CVector> {
    scene.validate()?;
    let model = scene.trial_model(seed)?;
    Ok(synthesize_with(scene, model.dict.as_ref(), seed))
}

pub(crate) fn synthesize_with(scene: &SceneSpec, dict: &dyn Dictionary, seed: u64) -> CVector {
    let mut y = scene.clean_signal(dict);
    if scene.noise_sigma > 0.0 {
        y += complex_noise(scene.m, scene.noise_sigma, seed);
    }
    y
}
