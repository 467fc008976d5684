//! Synthetic data from noisy marginals.
//!
//! Two generators share the same input, a [`NoisyMarginalSet`]:
//! an exact search for the size-`n` dataset minimizing the worst per-query
//! l1 distance ([`brute_force_synth`]), and a least-squares fit of a dense
//! joint distribution followed by conservative sampling
//! ([`fit_distribution`], [`sample_dataset`]).

mod brute;
mod fit;
mod sample;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_search, brute_force_synth, BruteConfig, BruteOutcome};
pub use fit::{fit_distribution, FitConfig};
pub use sample::{sample_column, sample_dataset};

use crate::dataset::{Dataset, Schema};
use crate::error::{invalid, Error, Result};
use crate::marginals::{compute_marginals, enumerate_queries, l1_distance, Marginal, MarginalQuery};
use crate::privacy::{add_noise_all, calibrate, NoiseCalibration, PrivacyParams, SensitivityMode};
use crate::seed;

/// Largest joint domain handled by the dense generators.
pub const DENSE_CELL_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyMarginalSet {
    pub marginals: Vec<Marginal>,
    pub schema: Schema,
    pub sigma: f64,
    pub seed: u64,
}

impl NoisyMarginalSet {
    pub fn new(schema: Schema, marginals: Vec<Marginal>, sigma: f64, seed: u64) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for m in &marginals {
            m.query.validate(&schema)?;
            if m.counts.len() != m.query.cells(&schema) {
                return Err(Error::QueryMismatch(m.query.attrs().to_vec()));
            }
            if !seen.insert(m.query.attrs().to_vec()) {
                return Err(invalid(format!("duplicate query {:?}", m.query.attrs())));
            }
        }
        Ok(Self {
            marginals,
            schema,
            sigma,
            seed,
        })
    }

    pub fn queries(&self) -> Vec<MarginalQuery> {
        self.marginals.iter().map(|m| m.query.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEstimate {
    pub schema: Schema,
    /// Probabilities over the joint domain, row-major with the last attribute
    /// varying fastest.
    pub probs: Vec<f64>,
    /// Objective value after each iteration, starting from the uniform init.
    pub objective_history: Vec<f64>,
}

/// Cell-to-marginal-index tables over the dense joint domain.
pub(crate) struct JointLayout {
    pub cells: usize,
    pub shape: Vec<usize>,
    /// `maps[q][cell]` is the index of `cell` inside marginal `q`.
    pub maps: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
}

impl JointLayout {
    pub fn new(schema: &Schema, queries: &[MarginalQuery]) -> Result<Self> {
        let cells = match schema.joint_size() {
            Some(c) if c <= DENSE_CELL_LIMIT => c,
            c => {
                return Err(Error::DomainTooLarge {
                    cells: c.unwrap_or(usize::MAX),
                    limit: DENSE_CELL_LIMIT,
                })
            }
        };
        let shape = schema.domain_sizes();
        let mut maps = vec![Vec::with_capacity(cells); queries.len()];
        let mut row = vec![0u32; shape.len()];
        let qshapes: Vec<Vec<usize>> = queries.iter().map(|q| q.shape(schema)).collect();
        for _ in 0..cells {
            for (qi, q) in queries.iter().enumerate() {
                maps[qi].push(q.index_of(&row, &qshapes[qi]));
            }
            // odometer increment, last attribute fastest
            for j in (0..row.len()).rev() {
                row[j] += 1;
                if (row[j] as usize) < shape[j] {
                    break;
                }
                row[j] = 0;
            }
        }
        let sizes = qshapes.iter().map(|s| s.iter().product()).collect();
        Ok(Self {
            cells,
            shape,
            maps,
            sizes,
        })
    }

    pub fn decode(&self, mut cell: usize) -> Vec<u32> {
        let mut row = vec![0u32; self.shape.len()];
        for j in (0..self.shape.len()).rev() {
            row[j] = (cell % self.shape[j]) as u32;
            cell /= self.shape[j];
        }
        row
    }

    #[cfg(test)]
    pub fn encode(&self, row: &[u32]) -> usize {
        row.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&v, &l)| acc * l + v as usize)
    }

    /// Marginals of a vector over the joint domain.
    pub fn marginalize(&self, v: &[f64]) -> Vec<Vec<f64>> {
        self.maps
            .iter()
            .zip(&self.sizes)
            .map(|(map, &size)| {
                let mut out = vec![0.0; size];
                for (cell, &t) in map.iter().enumerate() {
                    out[t] += v[cell];
                }
                out
            })
            .collect()
    }

    /// Dataset holding `counts[c]` copies of every cell `c`, in cell order.
    pub fn dataset_from_counts(&self, schema: &Schema, counts: &[u64]) -> Result<Dataset> {
        let mut codes = Vec::new();
        for (cell, &k) in counts.iter().enumerate() {
            let row = self.decode(cell);
            for _ in 0..k {
                codes.extend_from_slice(&row);
            }
        }
        Dataset::from_flat(schema.clone(), codes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Brute,
    #[default]
    Fitted,
}

impl std::str::FromStr for SynthMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "brute" => Ok(Self::Brute),
            "fitted" => Ok(Self::Fitted),
            other => Err(format!("unknown synthesis mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub mode: SynthMode,
    pub sensitivity: SensitivityMode,
    pub brute: BruteConfig,
    pub fit: FitConfig,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            mode: SynthMode::Fitted,
            sensitivity: SensitivityMode::Exact,
            brute: BruteConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Stats {
    pub max: f64,
    pub mean: f64,
}

impl L1Stats {
    pub fn between(a: &[Marginal], b: &[Marginal]) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(invalid("l1 statistics need two equally long, non-empty marginal lists"));
        }
        let d = a
            .iter()
            .zip(b)
            .map(|(x, y)| l1_distance(x, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            max: d.iter().copied().fold(0.0, f64::max),
            mean: d.iter().sum::<f64>() / d.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceReport {
    pub mode: SynthMode,
    pub sensitivity_mode: SensitivityMode,
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub sensitivity: f64,
    pub coarse_bound_undercovers: bool,
    pub seed: u64,
    pub d: usize,
    pub query_count: usize,
    pub n: usize,
    /// Distance between the synthetic marginals and the noisy targets.
    pub l1_vs_noisy: L1Stats,
    /// Distance to the real marginals. Not differentially private; for
    /// evaluation only.
    pub nonprivate_l1_vs_real: Option<L1Stats>,
    pub brute_solves: Option<u64>,
    pub fit_iterations: Option<usize>,
}

impl ProvenanceReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Measurement step: all queries of order `1..=d`, exact counts, calibrated
/// Gaussian noise. This is the only step that reads the real data.
pub fn measure(
    real: &Dataset,
    d: usize,
    privacy: &PrivacyParams,
    sensitivity: SensitivityMode,
    seed: u64,
) -> Result<(NoisyMarginalSet, NoiseCalibration)> {
    let schema = real.schema().clone();
    let queries = enumerate_queries(schema.width(), d)?;
    let cal = calibrate(schema.num_features(), d, privacy, sensitivity)?;
    let exact = compute_marginals(real, &queries)?;
    let noisy = add_noise_all(&exact, cal.sigma, seed::derive(seed, 1, 0))?;
    Ok((NoisyMarginalSet::new(schema, noisy, cal.sigma, seed)?, cal))
}

/// Generation step: consumes only the noisy marginals, the schema and `n`.
pub fn synthesize(
    n: usize,
    nm: &NoisyMarginalSet,
    opts: &SynthOptions,
) -> Result<(Dataset, Option<u64>, Option<usize>)> {
    match opts.mode {
        SynthMode::Brute => {
            let out = brute_force_search(n, nm, &opts.brute)?;
            Ok((out.dataset, Some(out.solves), None))
        }
        SynthMode::Fitted => {
            let dist = fit_distribution(nm, n, &opts.fit)?;
            let iters = dist.objective_history.len() - 1;
            let mut rng = seed::child_rng(nm.seed, 2, 0);
            Ok((sample_dataset(&dist, n, &mut rng)?, None, Some(iters)))
        }
    }
}

/// End-to-end generator: measure, synthesize `|real|` rows, report.
pub fn gen_mechanism1(
    real: &Dataset,
    d: usize,
    privacy: &PrivacyParams,
    opts: &SynthOptions,
    seed: u64,
) -> Result<(Dataset, ProvenanceReport)> {
    let (nm, cal) = measure(real, d, privacy, opts.sensitivity, seed)?;
    let n = real.len();
    let (synthetic, brute_solves, fit_iterations) = synthesize(n, &nm, opts)?;
    let queries = nm.queries();
    let synth_marginals = compute_marginals(&synthetic, &queries)?;
    let report = ProvenanceReport {
        mode: opts.mode,
        sensitivity_mode: opts.sensitivity,
        epsilon: privacy.epsilon,
        delta: privacy.delta,
        sigma: cal.sigma,
        sensitivity: cal.sensitivity,
        coarse_bound_undercovers: cal.coarse_bound_undercovers,
        seed,
        d,
        query_count: queries.len(),
        n,
        l1_vs_noisy: L1Stats::between(&nm.marginals, &synth_marginals)?,
        nonprivate_l1_vs_real: Some(L1Stats::between(
            &compute_marginals(real, &queries)?,
            &synth_marginals,
        )?),
        brute_solves,
        fit_iterations,
    };
    Ok((synthetic, report))
}
