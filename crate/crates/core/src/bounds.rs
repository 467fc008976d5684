//! Excess empirical risk bounds with explicit constants, and the parameter
//! schedule of the matching lower-bound construction.
//!
//! Explicit mode walks the proof chain that compares the risk of the
//! synthetic-data minimizer with the real one: the loss is replaced by its
//! degree `d-1` polynomial approximation four times and the real marginals by
//! the synthetic ones twice. Each polynomial hop costs the Bernstein error
//! certificate on the margin interval `[-R, R]`, `R = max(τ√m, 1)`; widening
//! the interval to length at least 2 keeps every Bernstein coefficient factor
//! `1 + 2/(b-a)` below 3. Each marginal hop costs
//! `(1/n) ‖φ‖_∞ (3 m max{1,τ})^{d-1} ν`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::privacy::{gaussian_sigma, lemma34_l1_bound, marginal_set_sensitivity, SensitivityMode};

pub const APPROX_HOPS: f64 = 4.0;
pub const MARGINAL_HOPS: f64 = 2.0;
/// Bernstein error constant for Lipschitz functions.
pub const LIPSCHITZ_CERTIFICATE: f64 = 5.0 / 4.0;
/// Bernstein error constant for functions with Lipschitz derivative.
pub const SMOOTH_CERTIFICATE: f64 = 3.0 / 4.0;
/// Lipschitz constant of the logistic loss derivative.
pub const LOGISTIC_CURVATURE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsMode {
    #[default]
    Explicit,
    /// The bare asymptotic expressions, for plotting shapes only.
    AsymptoticShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Any K-Lipschitz loss.
    #[default]
    Lipschitz,
    /// Logistic loss, using its smooth derivative.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    /// Number of features.
    pub m: usize,
    /// Marginal order.
    pub d: usize,
    /// Largest attribute domain size.
    #[serde(default = "default_l")]
    pub l: usize,
    pub tau: f64,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default = "ln2")]
    pub phi0: f64,
    /// Worst-case l1 distance between real and synthetic marginals.
    #[serde(default)]
    pub nu: f64,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    #[serde(default)]
    pub mode: ConstantsMode,
}

fn default_l() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn ln2() -> f64 {
    std::f64::consts::LN_2
}

impl BoundInputs {
    pub fn new(n: usize, m: usize, d: usize, tau: f64, nu: f64) -> Self {
        Self {
            n,
            m,
            d,
            l: 2,
            tau,
            k: 1.0,
            phi0: std::f64::consts::LN_2,
            nu,
            sigma: None,
            lambda: None,
            epsilon: None,
            delta: None,
            mode: ConstantsMode::Explicit,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid(format!("bounds need d >= 2, got {}", self.d)));
        }
        if self.n == 0 || self.m == 0 || self.l < 2 {
            return Err(invalid("bounds need n >= 1, m >= 1 and l >= 2"));
        }
        if !(self.tau >= 0.0) || !(self.k > 0.0) || !(self.phi0 >= 0.0) || !(self.nu >= 0.0) {
            return Err(invalid("bounds need tau >= 0, K > 0, phi(0) >= 0 and nu >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub constants_mode: ConstantsMode,
    pub approx_term: f64,
    pub marginal_term: f64,
    pub total: f64,
    pub nu: f64,
    /// Half-width of the margin interval the polynomial covers.
    pub radius: f64,
    /// Per-hop approximation error.
    pub approx_error: f64,
    pub approx_hops: f64,
    pub marginal_hops: f64,
    /// `‖φ‖_∞` on `[-R, R]`.
    pub loss_sup: f64,
    /// `3 m max{1, τ}`.
    pub base: f64,
    pub notes: Vec<String>,
}

fn finish(theorem: Theorem, inp: &BoundInputs, radius: f64, approx_error: f64, loss_sup: f64, notes: Vec<String>) -> BoundReport {
    let base = 3.0 * inp.m as f64 * inp.tau.max(1.0);
    let e = (inp.d - 1) as i32;
    let (hops_a, hops_m) = match inp.mode {
        ConstantsMode::Explicit => (APPROX_HOPS, MARGINAL_HOPS),
        ConstantsMode::AsymptoticShape => (1.0, 1.0),
    };
    let (approx_term, marginal_term) = if inp.tau == 0.0 {
        // both minimizers are w = 0, so the risks coincide
        (0.0, 0.0)
    } else if inp.nu == 0.0 {
        (hops_a * approx_error, 0.0)
    } else {
        (
            hops_a * approx_error,
            hops_m * loss_sup * base.powi(e) * inp.nu / inp.n as f64,
        )
    };
    BoundReport {
        theorem,
        constants_mode: inp.mode,
        approx_term,
        marginal_term,
        total: approx_term + marginal_term,
        nu: inp.nu,
        radius,
        approx_error,
        approx_hops: hops_a,
        marginal_hops: hops_m,
        loss_sup,
        base,
        notes,
    }
}

/// Bound for a K-Lipschitz loss:
/// `4 (5/4) K 2R/√(d-1) + 2 (1/n) (φ(0) + K R) (3 m max{1,τ})^{d-1} ν`.
pub fn thm31_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let dm1 = (inp.d - 1) as f64;
    let scale = inp.tau * (inp.m as f64).sqrt();
    let (radius, approx_error, loss_sup) = match inp.mode {
        ConstantsMode::Explicit => {
            let r = scale.max(1.0);
            (r, LIPSCHITZ_CERTIFICATE * inp.k * 2.0 * r / dm1.sqrt(), inp.phi0 + inp.k * r)
        }
        ConstantsMode::AsymptoticShape => (scale, inp.k * scale / dm1.sqrt(), inp.k * scale + inp.phi0),
    };
    Ok(finish(Theorem::Lipschitz, inp, radius, approx_error, loss_sup, Vec::new()))
}

/// Bound for the logistic loss, whose derivative is 1/4-Lipschitz:
/// `4 (3/4) (1/4) (2R)² / (d-1) + 2 (1/n) (ln 2 + R) (3 m max{1,τ})^{d-1} ν`.
/// `K` and `φ(0)` are taken from the logistic loss, not from the inputs.
pub fn thm32_bound(inp: &BoundInputs) -> Result<BoundReport> {
    let inp = BoundInputs {
        k: 1.0,
        phi0: std::f64::consts::LN_2,
        ..*inp
    };
    inp.validate()?;
    let dm1 = (inp.d - 1) as f64;
    let scale = inp.tau * (inp.m as f64).sqrt();
    let (radius, approx_error, loss_sup) = match inp.mode {
        ConstantsMode::Explicit => {
            let r = scale.max(1.0);
            let width = 2.0 * r;
            // certificate (3/(4√k)) ω(f', 1/√k) with ω(f', h) ≤ (1/4) width² h
            (r, SMOOTH_CERTIFICATE * LOGISTIC_CURVATURE * width * width / dm1, inp.phi0 + r)
        }
        ConstantsMode::AsymptoticShape => (scale, scale / dm1, scale + inp.phi0),
    };
    let notes = vec!["marginal base uses 3m; the 2m variant of the logistic statement is not used".into()];
    Ok(finish(Theorem::Logistic, &inp, radius, approx_error, loss_sup, notes))
}

/// `ν` from the privacy parameters: explicit `σ` if given, otherwise the
/// Gaussian-mechanism `σ` for `ε, δ` with the exact marginal sensitivity.
pub fn privacy_nu(inp: &BoundInputs) -> Result<f64> {
    let lambda = inp.lambda.ok_or_else(|| invalid("lambda is required for the privacy bound"))?;
    let sigma = match (inp.sigma, inp.epsilon, inp.delta) {
        (Some(s), _, _) => s,
        (None, Some(eps), Some(delta)) => {
            gaussian_sigma(eps, delta, marginal_set_sensitivity(inp.m, inp.d, SensitivityMode::Exact))?
        }
        _ => return Err(invalid("either sigma or both epsilon and delta are required")),
    };
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be non-negative"));
    }
    Ok(lemma34_l1_bound(sigma, inp.d, inp.m, inp.l, lambda))
}

/// Substitutes the high-probability l1 deviation of the noisy marginals for
/// `ν` when `use_lemma34` is set (otherwise the given `ν` is kept) and
/// evaluates the chosen bound.
pub fn corollary_bound(inp: &BoundInputs, use_lemma34: bool, theorem: Theorem) -> Result<BoundReport> {
    let mut inp = *inp;
    if use_lemma34 {
        inp.nu = privacy_nu(&inp)?;
    }
    match theorem {
        Theorem::Lipschitz => thm31_bound(&inp),
        Theorem::Logistic => thm32_bound(&inp),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub m: usize,
    pub r: f64,
    pub gamma: f64,
    pub tau: f64,
    /// `exp(γ^{-2r/5})`.
    pub n: f64,
    /// `d` in units of the unspecified constant `c'`, i.e. `d / c'`.
    pub d_over_c_prime: f64,
    /// The constant `c' = min{1/5, c/8}` has no numeric value; kept symbolic.
    pub c_prime: String,
    /// Whether `γ < 2^{-1/(1-r)}` holds.
    pub gamma_precondition: bool,
    pub gamma_limit: f64,
}

pub fn lower_bound_schedule(m: usize) -> Result<LowerBoundParams> {
    let mf = m as f64;
    if mf <= 2.0 * std::f64::consts::E {
        return Err(invalid(format!("the lower-bound schedule needs m > 2e, got {m}")));
    }
    let r = 5.0 / 6.0;
    let gamma = (mf / 2.0).powf(-5.0 / (10.0 - 2.0 * r));
    let g = gamma.powf(-2.0 * r / 5.0);
    let gamma_limit = 2f64.powf(-1.0 / (1.0 - r));
    Ok(LowerBoundParams {
        m,
        r,
        gamma,
        tau: 1.0 / mf.sqrt(),
        n: g.exp(),
        d_over_c_prime: g / -gamma.ln(),
        c_prime: "min{1/5, c/8}".into(),
        gamma_precondition: gamma < gamma_limit,
        gamma_limit,
    })
}
