//! Gaussian-mechanism calibration for the concatenated marginal vector and
//! the high-probability l1 deviation bound of the noisy/synthetic marginals.

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::marginals::{query_count, Marginal};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Failure exponent: deviation bounds hold with probability `1 - 2^-lambda`.
    pub lambda: f64,
    /// Permit `epsilon > 1`, outside the range the Gaussian-mechanism
    /// calibration is proven for.
    #[serde(default)]
    pub allow_large_epsilon: bool,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, lambda: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            delta,
            lambda,
            allow_large_epsilon: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_large_epsilon(mut self) -> Self {
        self.allow_large_epsilon = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid("epsilon must be positive and finite"));
        }
        if self.epsilon > 1.0 && !self.allow_large_epsilon {
            return Err(invalid(format!(
                "epsilon {} > 1 requires the large-epsilon override",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(self.lambda > 0.0) {
            return Err(invalid("lambda must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityMode {
    /// `sqrt(2 |Q|)` with the exact number of queries.
    #[default]
    Exact,
    /// The coarser `sqrt(2 m^d)`.
    Coarse,
}

impl std::str::FromStr for SensitivityMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(Self::Exact),
            "coarse" => Ok(Self::Coarse),
            other => Err(format!("unknown sensitivity mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma: f64,
    pub sensitivity: f64,
    pub mode: SensitivityMode,
    pub d: usize,
    pub m: usize,
    /// Set when `sqrt(2 m^d)` is smaller than the exact sensitivity, i.e. the
    /// coarse mode would under-noise.
    pub coarse_bound_undercovers: bool,
}

/// `sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon`.
pub fn gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !(sensitivity > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(
            "gaussian_sigma needs epsilon > 0, sensitivity > 0 and 0 < delta < 1",
        ));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// l2 sensitivity of all marginals of order `1..=d` over `m` features plus the
/// label: one changed record moves two counts in every marginal by one.
pub fn marginal_set_sensitivity(m: usize, d: usize, mode: SensitivityMode) -> f64 {
    match mode {
        SensitivityMode::Exact => (2.0 * query_count(m + 1, d) as f64).sqrt(),
        SensitivityMode::Coarse => (2.0 * (m as f64).powi(d as i32)).sqrt(),
    }
}

pub fn calibrate(
    m: usize,
    d: usize,
    privacy: &PrivacyParams,
    mode: SensitivityMode,
) -> Result<NoiseCalibration> {
    privacy.validate()?;
    let sensitivity = marginal_set_sensitivity(m, d, mode);
    let exact = marginal_set_sensitivity(m, d, SensitivityMode::Exact);
    let coarse = marginal_set_sensitivity(m, d, SensitivityMode::Coarse);
    Ok(NoiseCalibration {
        sigma: gaussian_sigma(privacy.epsilon, privacy.delta, sensitivity)?,
        sensitivity,
        mode,
        d,
        m,
        coarse_bound_undercovers: coarse < exact,
    })
}

/// Adds an independent `N(0, sigma^2)` draw to every entry.
pub fn add_noise<R: rand::Rng + ?Sized>(h: &Marginal, sigma: f64, rng: &mut R) -> Result<Marginal> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be non-negative"));
    }
    let counts = h
        .counts
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            c + sigma * z
        })
        .collect();
    Ok(Marginal {
        query: h.query.clone(),
        counts,
        exact: false,
    })
}

/// Noises a list of marginals; query `i` draws from its own stream
/// `(seed, i)` so the result does not depend on evaluation order.
pub fn add_noise_all(hs: &[Marginal], sigma: f64, seed: u64) -> Result<Vec<Marginal>> {
    hs.iter()
        .enumerate()
        .map(|(i, h)| add_noise(h, sigma, &mut seed::child_rng(seed, 0x6e6f697365, i as u64)))
        .collect()
}

/// `2 l^d sqrt(2 (ln 2 (1 + lambda) + d ln(m l))) sigma`.
pub fn lemma34_l1_bound(sigma: f64, d: usize, m: usize, l: usize, lambda: f64) -> f64 {
    let (mf, lf, df) = (m as f64, l as f64, d as f64);
    let k = (2.0 * (std::f64::consts::LN_2 * (1.0 + lambda) + df * (mf * lf).ln())).sqrt();
    2.0 * lf.powi(d as i32) * k * sigma
}
