//! Train-on-synthetic, test-on-real evaluation: classification metrics and
//! the experiment harness that sweeps privacy budgets.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode, preprocess, simulate_planted, split, Dataset, Encoded, RawTable, SchemaFile, SplitSpec};
use crate::error::{invalid, Result};
use crate::learn::{empirical_risk, predict, train_encoded, LinearModel, LossKind, LossSpec, TrainConfig};
use crate::marginals::{compute_marginals, enumerate_queries, normalized_l1_summary};
use crate::privacy::{PrivacyParams, SensitivityMode};
use crate::seed;
use crate::synth::{gen_mechanism1, BruteConfig, FitConfig, ProvenanceReport, SynthMode, SynthOptions};

/// Fraction of rows whose predicted label matches the true label.
pub fn accuracy(model: &LinearModel, data: &Encoded) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("accuracy of an empty test set"));
    }
    let mut hits = 0usize;
    for i in 0..data.len() {
        let (label, _) = predict(model, data.row(i))?;
        hits += (label as f64 == data.y[i]) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

pub fn scores(model: &LinearModel, data: &Encoded) -> Result<Vec<(f64, f64)>> {
    (0..data.len())
        .map(|i| Ok((predict(model, data.row(i))?.1, data.y[i])))
        .collect()
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic:
/// `P(s⁺ > s⁻) + P(s⁺ = s⁻)/2`. Labels are positive when `> 0`.
pub fn roc_auc(scored: &[(f64, f64)]) -> Result<f64> {
    let s: Vec<f64> = scored.iter().map(|p| p.0).collect();
    let ranks = average_ranks(&s);
    let pos = scored.iter().filter(|p| p.1 > 0.0).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(invalid("ROC-AUC needs both classes"));
    }
    let rank_sum: f64 = ranks.iter().zip(scored).filter(|(_, p)| p.1 > 0.0).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("spearman needs two equal-length samples of size >= 2"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid("spearman is undefined for a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// On the real test split.
    pub accuracy: f64,
    pub roc_auc: f64,
    /// `L(w_s, D_train)`.
    pub empirical_risk: f64,
    /// `L(w_s, D_train) - L(w_r, D_train)`.
    pub excess_empirical_risk: f64,
    pub normalized_l1_mean: f64,
    pub normalized_l1_max: f64,
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSpec {
    pub domains: Vec<usize>,
    pub n: usize,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Either a CSV with its schema document, or a simulated planted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub simulate: Option<SimulateSpec>,
}

impl DataSource {
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match (&self.csv, &self.schema, &self.simulate) {
            (Some(csv), Some(schema), None) => {
                let rules = SchemaFile::load(base.join(schema))?;
                preprocess(&RawTable::load_csv(base.join(csv))?, &rules)
            }
            (None, None, Some(s)) => simulate_planted(&s.domains, s.n, &s.weights, s.coupling, s.seed),
            _ => Err(invalid("data needs either `csv` and `schema`, or `simulate`")),
        }
    }
}

fn default_delta() -> f64 {
    1e-5
}
fn default_lambda() -> f64 {
    3.0
}
fn default_repeats() -> usize {
    1
}
fn default_loss() -> LossKind {
    LossKind::Logistic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub d: usize,
    /// Norm budget; omitted means unconstrained.
    pub tau: Option<f64>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub mode: SynthMode,
    #[serde(default)]
    pub sensitivity: SensitivityMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub allow_large_epsilon: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub brute: BruteConfig,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(invalid("the epsilon grid is empty"));
        }
        if self.repeats == 0 {
            return Err(invalid("repeats must be at least 1"));
        }
        for &eps in &self.epsilons {
            self.privacy(eps).validate()?;
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        match &self.loss {
            LossKind::Logistic => Ok(LossSpec::logistic()),
            LossKind::PhiGamma { gamma } => LossSpec::phi_gamma(*gamma),
            LossKind::Custom { knots } => LossSpec::custom(knots.clone()),
        }
    }

    fn privacy(&self, epsilon: f64) -> PrivacyParams {
        PrivacyParams {
            epsilon,
            delta: self.delta,
            lambda: self.lambda,
            allow_large_epsilon: self.allow_large_epsilon,
        }
    }

    fn synth_options(&self) -> SynthOptions {
        SynthOptions {
            mode: self.mode,
            sensitivity: self.sensitivity,
            brute: self.brute,
            fit: self.fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub epsilon: f64,
    pub repeat: usize,
    pub seed: u64,
    pub status: String,
    pub sigma: f64,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub real_accuracy: f64,
    pub real_roc_auc: f64,
    pub empirical_risk: f64,
    pub real_empirical_risk: f64,
    pub excess_empirical_risk: f64,
    pub normalized_l1_mean: f64,
    pub normalized_l1_max: f64,
}

impl RunRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn metrics(&self) -> MetricsReport {
        MetricsReport {
            accuracy: self.accuracy,
            roc_auc: self.roc_auc,
            empirical_risk: self.empirical_risk,
            excess_empirical_risk: self.excess_empirical_risk,
            normalized_l1_mean: self.normalized_l1_mean,
            normalized_l1_max: self.normalized_l1_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub epsilon: f64,
    pub completed: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub roc_auc_mean: f64,
    pub roc_auc_std: f64,
    pub excess_empirical_risk_mean: f64,
    pub excess_empirical_risk_std: f64,
    pub normalized_l1_mean_mean: f64,
    pub normalized_l1_mean_std: f64,
    pub normalized_l1_max_mean: f64,
    pub normalized_l1_max_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub reports: Vec<Option<ProvenanceReport>>,
}

impl ExperimentOutcome {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(RunRow::ok)
    }
}

/// Per-run seed for grid point `i`, repeat `r`.
pub fn cell_seed(seed: u64, i: usize, r: usize) -> u64 {
    seed::derive(seed, 0x6578_7000 + i as u64, r as u64)
}

struct Shared {
    train: Dataset,
    train_enc: Encoded,
    test_enc: Encoded,
    loss: LossSpec,
    tau: f64,
    real_risk: f64,
    real_accuracy: f64,
    real_auc: f64,
}

fn run_cell(cfg: &ExperimentConfig, sh: &Shared, epsilon: f64, seed: u64) -> Result<(RunRow, ProvenanceReport)> {
    let (synthetic, report) = gen_mechanism1(&sh.train, cfg.d, &cfg.privacy(epsilon), &cfg.synth_options(), seed)?;
    let ws = train_encoded(&encode(&synthetic), synthetic.schema(), &sh.loss, sh.tau, &cfg.train)?.model;
    let queries = enumerate_queries(sh.train.schema().width(), cfg.d)?;
    let (l1_mean, l1_max) = normalized_l1_summary(
        &compute_marginals(&sh.train, &queries)?,
        &compute_marginals(&synthetic, &queries)?,
        sh.train.len(),
    )?;
    let risk = empirical_risk(&sh.loss, &ws.w, &sh.train_enc)?;
    let row = RunRow {
        epsilon,
        repeat: 0,
        seed,
        status: "ok".into(),
        sigma: report.sigma,
        accuracy: accuracy(&ws, &sh.test_enc)?,
        roc_auc: roc_auc(&scores(&ws, &sh.test_enc)?)?,
        real_accuracy: sh.real_accuracy,
        real_roc_auc: sh.real_auc,
        empirical_risk: risk,
        real_empirical_risk: sh.real_risk,
        excess_empirical_risk: risk - sh.real_risk,
        normalized_l1_mean: l1_mean,
        normalized_l1_max: l1_max,
    };
    Ok((row, report))
}

/// Runs every `(ε, repeat)` cell: synthesize from the training split, train
/// on the synthetic data, then score on the real test split (accuracy,
/// ROC-AUC) and on the real training split (excess empirical risk). Cells
/// run in parallel; each has its own derived seed, so results do not depend
/// on scheduling. A failing cell yields a row with its error as status.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let real = cfg.data.load(base)?;
    let (train, test) = split(&real, cfg.split)?;
    let loss = cfg.loss_spec()?;
    let tau = cfg.tau.unwrap_or(f64::INFINITY);
    let train_enc = encode(&train);
    let test_enc = encode(&test);
    let wr = train_encoded(&train_enc, train.schema(), &loss, tau, &cfg.train)?;
    let sh = Shared {
        real_risk: wr.objective,
        real_accuracy: accuracy(&wr.model, &test_enc)?,
        real_auc: roc_auc(&scores(&wr.model, &test_enc)?)?,
        train,
        train_enc,
        test_enc,
        loss,
        tau,
    };
    let cells: Vec<(usize, usize)> = (0..cfg.epsilons.len())
        .flat_map(|i| (0..cfg.repeats).map(move |r| (i, r)))
        .collect();
    let results: Vec<(RunRow, Option<ProvenanceReport>)> = cells
        .par_iter()
        .map(|&(i, r)| {
            let eps = cfg.epsilons[i];
            let s = cell_seed(cfg.seed, i, r);
            match run_cell(cfg, &sh, eps, s) {
                Ok((mut row, rep)) => {
                    row.repeat = r;
                    (row, Some(rep))
                }
                Err(e) => (failed_row(eps, r, s, &e.to_string()), None),
            }
        })
        .collect();
    let (runs, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregates = aggregate(&cfg.epsilons, &runs);
    Ok(ExperimentOutcome { runs, aggregates, reports })
}

fn failed_row(epsilon: f64, repeat: usize, seed: u64, msg: &str) -> RunRow {
    RunRow {
        epsilon,
        repeat,
        seed,
        status: format!("failed: {msg}"),
        sigma: f64::NAN,
        accuracy: f64::NAN,
        roc_auc: f64::NAN,
        real_accuracy: f64::NAN,
        real_roc_auc: f64::NAN,
        empirical_risk: f64::NAN,
        real_empirical_risk: f64::NAN,
        excess_empirical_risk: f64::NAN,
        normalized_l1_mean: f64::NAN,
        normalized_l1_max: f64::NAN,
    }
}

/// Mean and sample standard deviation per grid point over completed runs.
pub fn aggregate(epsilons: &[f64], runs: &[RunRow]) -> Vec<AggregateRow> {
    epsilons
        .iter()
        .map(|&eps| {
            let ok: Vec<&RunRow> = runs.iter().filter(|r| r.epsilon == eps && r.ok()).collect();
            let stat = |f: fn(&RunRow) -> f64| {
                if ok.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
                }
            };
            let (accuracy_mean, accuracy_std) = stat(|r| r.accuracy);
            let (roc_auc_mean, roc_auc_std) = stat(|r| r.roc_auc);
            let (excess_empirical_risk_mean, excess_empirical_risk_std) = stat(|r| r.excess_empirical_risk);
            let (normalized_l1_mean_mean, normalized_l1_mean_std) = stat(|r| r.normalized_l1_mean);
            let (normalized_l1_max_mean, normalized_l1_max_std) = stat(|r| r.normalized_l1_max);
            AggregateRow {
                epsilon: eps,
                completed: ok.len(),
                accuracy_mean,
                accuracy_std,
                roc_auc_mean,
                roc_auc_std,
                excess_empirical_risk_mean,
                excess_empirical_risk_std,
                normalized_l1_mean_mean,
                normalized_l1_mean_std,
                normalized_l1_max_mean,
                normalized_l1_max_std,
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `runs.csv`, `aggregates.csv` and one provenance document per
/// completed run under `reports/`.
pub fn write_outcome(out: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("reports"))?;
    write_rows(&out.runs, dir.join("runs.csv"))?;
    write_rows(&out.aggregates, dir.join("aggregates.csv"))?;
    for (row, rep) in out.runs.iter().zip(&out.reports) {
        if let Some(rep) = rep {
            let doc = serde_json::json!({ "run": row, "provenance": rep, "metrics": row.metrics() });
            let name = format!("run_eps{}_rep{}.json", row.epsilon, row.repeat);
            std::fs::write(dir.join("reports").join(name), serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}
