//! Norm-constrained empirical risk minimization for linear classifiers and a
//! differentially private SGD baseline.
//!
//! The empirical risk is `L(w, D) = (1/n) Σ φ(y ⟨w, x⟩)` over encoded rows
//! (features in `[-1, 1]`, labels in `{-1, +1}`), with no intercept.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode, Dataset, Encoded, Schema};
use crate::error::{invalid, Error, Result};
use crate::polyapprox::logistic_loss;
use crate::seed;

/// Slack allowed on the `φ_γ` domain `[-1, 1]` for rounding in `⟨w, x⟩`.
const PHI_DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `ln(1 + e^{-t})`.
    Logistic,
    /// `γ · φ_γ(t)` on `[-1, 1]`.
    PhiGamma { gamma: f64 },
    /// Piecewise-linear table of `(t, value)` knots, extended linearly.
    Custom { knots: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lipschitz_k: f64,
    pub value_at_zero: f64,
}

/// The unscaled margin loss
/// `φ_γ(t) = (1-t)²/8 + {1 - 2t/γ on [-1,0]; (t-γ)²/γ² on [0,γ]; 0 on [γ,1]}`.
pub fn phi_gamma(gamma: f64, t: f64) -> f64 {
    let base = (1.0 - t).powi(2) / 8.0;
    let hinge = if t <= 0.0 {
        1.0 - 2.0 * t / gamma
    } else if t <= gamma {
        ((t - gamma) / gamma).powi(2)
    } else {
        0.0
    };
    base + hinge
}

fn phi_gamma_derivative(gamma: f64, t: f64) -> f64 {
    let base = -(1.0 - t) / 4.0;
    let hinge = if t <= 0.0 {
        -2.0 / gamma
    } else if t <= gamma {
        2.0 * (t - gamma) / (gamma * gamma)
    } else {
        0.0
    };
    base + hinge
}

impl LossSpec {
    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            lipschitz_k: 1.0,
            value_at_zero: std::f64::consts::LN_2,
        }
    }

    /// Scaled loss `γ φ_γ`. Its derivative is largest in magnitude at `t = -1`,
    /// where it equals `2 + γ/2`; that is the Lipschitz constant recorded.
    pub fn phi_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("phi_gamma needs gamma in (0, 1)"));
        }
        Ok(Self {
            kind: LossKind::PhiGamma { gamma },
            lipschitz_k: 2.0 + gamma / 2.0,
            value_at_zero: gamma * phi_gamma(gamma, 0.0),
        })
    }

    pub fn custom(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(invalid("a custom loss table needs at least two knots"));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("custom loss knots must have distinct abscissae"));
        }
        let k = knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0f64, f64::max);
        if !(k > 0.0) {
            return Err(invalid("custom loss must have a positive Lipschitz constant"));
        }
        let kind = LossKind::Custom { knots };
        let mut spec = Self {
            kind,
            lipschitz_k: k,
            value_at_zero: 0.0,
        };
        spec.value_at_zero = spec.value(0.0)?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz_k > 0.0) {
            return Err(invalid("loss Lipschitz constant must be positive"));
        }
        match &self.kind {
            LossKind::PhiGamma { gamma } if !(*gamma > 0.0 && *gamma < 1.0) => {
                Err(invalid("phi_gamma needs gamma in (0, 1)"))
            }
            LossKind::Custom { knots } if knots.len() < 2 => Err(invalid("a custom loss table needs at least two knots")),
            _ => Ok(()),
        }
    }

    fn check_domain(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        if let LossKind::PhiGamma { .. } = self.kind {
            if t.abs() > 1.0 + PHI_DOMAIN_SLACK {
                return Err(invalid(format!("phi_gamma evaluated at {t}, outside [-1, 1]")));
            }
            return Ok(t.clamp(-1.0, 1.0));
        }
        Ok(t)
    }

    /// `φ(t)`.
    pub fn value(&self, t: f64) -> Result<f64> {
        let t = self.check_domain(t)?;
        let v = match &self.kind {
            LossKind::Logistic => logistic_loss(t),
            LossKind::PhiGamma { gamma } => gamma * phi_gamma(*gamma, t),
            LossKind::Custom { knots } => {
                let (a, b) = custom_segment(knots, t);
                a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss)
        }
    }

    /// `φ'(t)`, taking the right derivative at kinks of a custom table.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        let t = self.check_domain(t)?;
        let v = match &self.kind {
            LossKind::Logistic => -1.0 / (1.0 + t.exp()),
            LossKind::PhiGamma { gamma } => gamma * phi_gamma_derivative(*gamma, t),
            LossKind::Custom { knots } => {
                let (a, b) = custom_segment(knots, t);
                (b.1 - a.1) / (b.0 - a.0)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss)
        }
    }
}

fn custom_segment(knots: &[(f64, f64)], t: f64) -> ((f64, f64), (f64, f64)) {
    let i = knots.partition_point(|k| k.0 <= t).clamp(1, knots.len() - 1);
    (knots[i - 1], knots[i])
}

pub fn loss_value(spec: &LossSpec, t: f64) -> Result<f64> {
    spec.value(t)
}

mod tau_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_finite() {
            s.serialize_some(tau)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A trained linear classifier. `tau` is stored as `null` when unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub schema_digest: String,
    #[serde(with = "tau_serde")]
    pub tau: f64,
    pub loss: LossSpec,
    pub w: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(schema: &Schema, tau: f64, loss: LossSpec) -> Self {
        Self {
            schema_digest: schema.digest(),
            tau,
            loss,
            w: vec![0.0; schema.num_features()],
        }
    }

    pub fn constrained(&self) -> bool {
        self.tau.is_finite()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.loss.validate()?;
        Ok(model)
    }

    /// Fails unless the model was trained on data with this schema.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if self.schema_digest != schema.digest() || self.w.len() != schema.num_features() {
            return Err(Error::Schema("model was trained on a different schema".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `w ← w · min(1, τ/‖w‖)`.
pub fn project_ball(w: &mut [f64], tau: f64) {
    let r = norm(w);
    if r > tau {
        let s = if tau > 0.0 { tau / r } else { 0.0 };
        w.iter_mut().for_each(|x| *x *= s);
    }
}

/// Signed score `⟨w, x⟩` and the predicted label, with ties going to `+1`.
pub fn predict(model: &LinearModel, x: &[f64]) -> Result<(i8, f64)> {
    if x.len() != model.w.len() {
        return Err(invalid(format!(
            "feature vector has {} entries, model expects {}",
            x.len(),
            model.w.len()
        )));
    }
    let s = dot(&model.w, x);
    Ok((if s >= 0.0 { 1 } else { -1 }, s))
}

pub fn empirical_risk(spec: &LossSpec, w: &[f64], data: &Encoded) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("empirical risk of an empty dataset"));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        total += spec.value(data.y[i] * dot(w, data.row(i)))?;
    }
    Ok(total / data.len() as f64)
}

pub fn risk_gradient(spec: &LossSpec, w: &[f64], data: &Encoded) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(invalid("gradient of an empty dataset"));
    }
    let mut g = vec![0.0; data.m];
    for i in 0..data.len() {
        let x = data.row(i);
        let c = spec.derivative(data.y[i] * dot(w, x))? * data.y[i];
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += c * xj;
        }
    }
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Initial step; halved on every rejected trial step.
    pub step_size: f64,
    /// Stop once an accepted step moves `w` by less than this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            step_size: 1.0,
            tolerance: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.step_size > 0.0) || !(self.tolerance > 0.0) {
            return Err(invalid("training iterations, step size and tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub objective: f64,
    /// Objective after each accepted step, starting at `w = 0`.
    pub history: Vec<f64>,
}

/// Projected gradient descent with backtracking over `‖w‖ ≤ τ`.
///
/// A trial step `w⁺ = P(w - η∇L(w))` is accepted when it satisfies the
/// sufficient-decrease test `L(w⁺) ≤ L(w) + ⟨∇L, w⁺-w⟩ + ‖w⁺-w‖²/(2η)` and
/// does not increase the objective; otherwise `η` is halved. After an
/// accepted step `η` may grow back by a factor two, capped at the initial
/// step size.
pub fn train_encoded(data: &Encoded, schema: &Schema, spec: &LossSpec, tau: f64, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if !(tau >= 0.0) {
        return Err(invalid("tau must be non-negative"));
    }
    if data.m != schema.num_features() {
        return Err(invalid("encoded data does not match the schema"));
    }
    let mut model = LinearModel::zeros(schema, tau, spec.clone());
    let mut f = empirical_risk(spec, &model.w, data)?;
    let mut history = vec![f];
    if tau == 0.0 {
        return Ok(TrainOutcome { model, objective: f, history });
    }
    let mut eta = cfg.step_size;
    let mut w = model.w.clone();
    for _ in 0..cfg.max_iters {
        let g = risk_gradient(spec, &w, data)?;
        let mut accepted = None;
        while eta > 1e-18 {
            let mut trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
            project_ball(&mut trial, tau);
            let step: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
            let ft = empirical_risk(spec, &trial, data)?;
            let model_bound = f + dot(&g, &step) + dot(&step, &step) / (2.0 * eta);
            if ft <= model_bound + 1e-15 * f.abs() && ft <= f {
                accepted = Some((trial, ft, norm(&step)));
                break;
            }
            eta /= 2.0;
        }
        let Some((trial, ft, moved)) = accepted else { break };
        w = trial;
        f = ft;
        history.push(f);
        if moved <= cfg.tolerance {
            break;
        }
        eta = (2.0 * eta).min(cfg.step_size);
    }
    model.w = w;
    Ok(TrainOutcome { model, objective: f, history })
}

/// Returns `argmin_{‖w‖ ≤ τ} L(w, D)` to solver tolerance; `τ = ∞` trains
/// unconstrained.
pub fn train_projected(ds: &Dataset, spec: &LossSpec, tau: f64, cfg: &TrainConfig) -> Result<LinearModel> {
    Ok(train_encoded(&encode(ds), ds.schema(), spec, tau, cfg)?.model)
}

// ---------------------------------------------------------------------------
// DP-SGD

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-sample gradient norm bound; `inf` disables clipping.
    pub clip_norm: f64,
    pub lipschitz: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Test hook: skip the Gaussian noise entirely.
    #[serde(default)]
    pub zero_noise: bool,
}

impl DpSgdConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(invalid("DP-SGD needs positive iterations and batch size"));
        }
        if self.batch_size > n {
            return Err(invalid(format!("batch size {} exceeds dataset size {n}", self.batch_size)));
        }
        let positive = [self.learning_rate, self.clip_norm, self.lipschitz, self.epsilon];
        if positive.iter().any(|v| !(*v > 0.0)) || !self.epsilon.is_finite() {
            return Err(invalid("DP-SGD rates, clip norm, Lipschitz constant and epsilon must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `σ² = 16 L² T ln(1/δ) / (n² ε²)`.
pub fn dpsgd_sigma_squared(lipschitz: f64, iterations: usize, n: usize, epsilon: f64, delta: f64) -> f64 {
    let nf = n as f64;
    16.0 * lipschitz * lipschitz * iterations as f64 * (1.0 / delta).ln() / (nf * nf * epsilon * epsilon)
}

pub fn dpsgd_sigma(lipschitz: f64, iterations: usize, n: usize, epsilon: f64, delta: f64) -> f64 {
    dpsgd_sigma_squared(lipschitz, iterations, n, epsilon, delta).sqrt()
}

/// `∇ / max(1, ‖∇‖/C)`.
pub fn clip(g: &mut [f64], c: f64) {
    let scale = (norm(g) / c).max(1.0);
    g.iter_mut().for_each(|v| *v /= scale);
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSgdOutcome {
    pub model: LinearModel,
    pub sigma: f64,
    /// `w` after every update, when requested.
    pub trajectory: Vec<Vec<f64>>,
}

/// Batch indices come from stream 0 of `seed`, noise from stream 1, so the
/// batch sequence does not depend on whether noise is drawn.
pub(crate) fn batch_rng(seed: u64) -> seed::Rng {
    seed::child_rng(seed, 0x736764, 0)
}

fn noise_rng(seed: u64) -> seed::Rng {
    seed::child_rng(seed, 0x736764, 1)
}

/// Minibatch SGD from `w = 0` with per-sample clipping and Gaussian noise on
/// the averaged batch gradient. Returns the last iterate, unprojected.
pub fn dp_sgd_encoded(
    data: &Encoded,
    schema: &Schema,
    spec: &LossSpec,
    cfg: &DpSgdConfig,
    seed: u64,
    record: bool,
) -> Result<DpSgdOutcome> {
    spec.validate()?;
    cfg.validate(data.len())?;
    let n = data.len();
    let sigma = dpsgd_sigma(cfg.lipschitz, cfg.iterations, n, cfg.epsilon, cfg.delta);
    let mut batches = batch_rng(seed);
    let mut noise = noise_rng(seed);
    let mut w = vec![0.0; data.m];
    let mut trajectory = Vec::new();
    let mut gi = vec![0.0; data.m];
    for _ in 0..cfg.iterations {
        let mut g = vec![0.0; data.m];
        for _ in 0..cfg.batch_size {
            let i = batches.random_range(0..n);
            let x = data.row(i);
            let c = spec.derivative(data.y[i] * dot(&w, x))? * data.y[i];
            for (v, xj) in gi.iter_mut().zip(x) {
                *v = c * xj;
            }
            clip(&mut gi, cfg.clip_norm);
            for (a, b) in g.iter_mut().zip(&gi) {
                *a += b;
            }
        }
        let b = cfg.batch_size as f64;
        for v in g.iter_mut() {
            *v /= b;
            if !cfg.zero_noise {
                *v += sigma * noise.sample::<f64, _>(StandardNormal);
            }
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= cfg.learning_rate * gj;
        }
        if record {
            trajectory.push(w.clone());
        }
    }
    let mut model = LinearModel::zeros(schema, f64::INFINITY, spec.clone());
    model.w = w;
    Ok(DpSgdOutcome { model, sigma, trajectory })
}

pub fn dp_sgd(ds: &Dataset, spec: &LossSpec, cfg: &DpSgdConfig, seed: u64) -> Result<DpSgdOutcome> {
    dp_sgd_encoded(&encode(ds), ds.schema(), spec, cfg, seed, false)
}

/// Plain minibatch SGD (no clipping, no noise) drawing batches from the same
/// stream as [`dp_sgd_encoded`]; returns every iterate.
pub fn sgd_trajectory(
    data: &Encoded,
    spec: &LossSpec,
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(invalid("batch size must lie in [1, n]"));
    }
    let mut rng = batch_rng(seed);
    let mut w = vec![0.0; data.m];
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let batch = Encoded {
            x: idx.iter().flat_map(|&i| data.row(i).iter().copied()).collect(),
            y: idx.iter().map(|&i| data.y[i]).collect(),
            m: data.m,
        };
        let g = risk_gradient(spec, &w, &batch)?;
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= learning_rate * gj;
        }
        out.push(w.clone());
    }
    Ok(out)
}
