//! Least-squares fit of a dense joint distribution to noisy marginals.

use serde::{Deserialize, Serialize};

use super::{DistributionEstimate, JointLayout, NoisyMarginalSet};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iters: usize,
    /// Stop once the objective improved by less than this fraction over the
    /// last `PATIENCE` iterations.
    pub tol: f64,
    /// Monotone accelerated steps instead of plain projected gradient.
    pub accelerated: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            tol: 1e-12,
            accelerated: true,
        }
    }
}

const PATIENCE: usize = 20;

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct Objective<'a> {
    layout: &'a JointLayout,
    targets: Vec<&'a [f64]>,
    n: f64,
}

impl Objective<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        self.layout
            .marginalize(p)
            .iter()
            .zip(&self.targets)
            .map(|(m, t)| m.iter().zip(t.iter()).map(|(a, b)| (self.n * a - b).powi(2)).sum::<f64>())
            .sum()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let resid: Vec<Vec<f64>> = self
            .layout
            .marginalize(p)
            .iter()
            .zip(&self.targets)
            .map(|(m, t)| m.iter().zip(t.iter()).map(|(a, b)| 2.0 * self.n * (self.n * a - b)).collect())
            .collect();
        let mut g = vec![0.0; p.len()];
        for (map, r) in self.layout.maps.iter().zip(&resid) {
            for (cell, &t) in map.iter().enumerate() {
                g[cell] += r[t];
            }
        }
        g
    }
}

/// Minimizes `Σ_q ||n M_q(p) - ĥ_q||²` over the probability simplex, starting
/// from the uniform distribution. Negative noisy entries are used as given.
pub fn fit_distribution(nm: &NoisyMarginalSet, n: usize, cfg: &FitConfig) -> Result<DistributionEstimate> {
    if nm.marginals.is_empty() {
        return Err(invalid("fitting needs at least one query"));
    }
    if !(cfg.tol >= 0.0) {
        return Err(invalid("fit tolerance must be non-negative"));
    }
    let layout = JointLayout::new(&nm.schema, &nm.queries())?;
    let obj = Objective {
        layout: &layout,
        targets: nm.marginals.iter().map(|m| m.counts.as_slice()).collect(),
        n: n as f64,
    };
    let cells = layout.cells;
    // Lipschitz constant of the gradient: 2 n² λ_max(Σ A_qᵀA_q), and each
    // A_qᵀA_q is block-diagonal with blocks of ones of size |Ω| / |Ω_q|.
    let lip = 2.0 * obj.n * obj.n * layout.sizes.iter().map(|&s| (cells / s) as f64).sum::<f64>();
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };

    let mut x = vec![1.0 / cells as f64; cells];
    let mut fx = obj.value(&x);
    let mut history = vec![fx];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..cfg.iters {
        let g = obj.gradient(&y);
        let mut z: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        project_simplex(&mut z);
        let fz = obj.value(&z);
        let x_prev = x.clone();
        if fz <= fx {
            x = z.clone();
            fx = fz;
        }
        history.push(fx);
        if cfg.accelerated {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            for i in 0..cells {
                y[i] = x[i] + (t / t_next) * (z[i] - x[i]) + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
            }
            t = t_next;
        } else {
            y = x.clone();
        }
        let k = history.len();
        if fx == 0.0 {
            break;
        }
        if k > PATIENCE {
            let old = history[k - 1 - PATIENCE];
            if old - fx <= cfg.tol * old {
                break;
            }
        }
    }
    Ok(DistributionEstimate {
        schema: nm.schema.clone(),
        probs: x,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{simulate_planted, Dataset, Schema};
    use crate::marginals::{compute_marginals, enumerate_queries, MarginalQuery};
    use proptest::prelude::*;

    fn exact_set(ds: &Dataset, d: usize) -> NoisyMarginalSet {
        let qs = enumerate_queries(ds.schema().width(), d).unwrap();
        NoisyMarginalSet::new(ds.schema().clone(), compute_marginals(ds, &qs).unwrap(), 0.0, 0).unwrap()
    }

    #[test]
    fn simplex_projection_examples() {
        let mut v = vec![0.5, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, vec![0.5, 0.5]);
        let mut v = vec![2.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
        let mut v = vec![-1.0, -1.0, -1.0, -1.0];
        project_simplex(&mut v);
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn noiseless_marginals_are_matched() {
        let ds = simulate_planted(&[2, 2], 400, &[1.0, -1.0], 2.0, 3).unwrap();
        let nm = exact_set(&ds, 2);
        let est = fit_distribution(&nm, ds.len(), &FitConfig::default()).unwrap();
        let layout = JointLayout::new(&nm.schema, &nm.queries()).unwrap();
        for (m, target) in layout.marginalize(&est.probs).iter().zip(&nm.marginals) {
            let l1: f64 = m.iter().zip(&target.counts).map(|(a, b)| (400.0 * a - b).abs()).sum();
            assert!(l1 <= 1e-3 * 400.0, "{l1}");
        }
    }

    #[test]
    fn full_query_recovers_distribution() {
        let schema = Schema::from_domains(&[3]).unwrap();
        let ds = Dataset::new(schema, vec![vec![0, 0], vec![2, 1], vec![2, 1], vec![1, 0]]).unwrap();
        let q = MarginalQuery::new(vec![0, 1]).unwrap();
        let m = crate::marginals::compute_marginal(&ds, &q).unwrap();
        let nm = NoisyMarginalSet::new(ds.schema().clone(), vec![m.clone()], 0.0, 0).unwrap();
        let est = fit_distribution(&nm, 4, &FitConfig::default()).unwrap();
        for (p, c) in est.probs.iter().zip(&m.counts) {
            assert!((p - c / 4.0).abs() < 1e-9);
        }
        assert!(*est.objective_history.last().unwrap() < 1e-12);
    }

    #[test]
    fn negative_targets_still_give_a_distribution() {
        let schema = Schema::from_domains(&[2]).unwrap();
        let q = MarginalQuery::new(vec![0, 1]).unwrap();
        let m = crate::marginals::Marginal { query: q, counts: vec![-3.0, 5.0, -1.0, 2.0], exact: false };
        let nm = NoisyMarginalSet::new(schema, vec![m], 1.0, 0).unwrap();
        for accelerated in [true, false] {
            let est = fit_distribution(&nm, 3, &FitConfig { accelerated, ..Default::default() }).unwrap();
            assert!(est.probs.iter().all(|&p| p >= 0.0));
            assert!((est.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn objective_never_increases(noise in proptest::collection::vec(-20.0f64..20.0, 12), accelerated: bool) {
            let ds = simulate_planted(&[2, 2], 60, &[0.5, 1.0], 1.0, 1).unwrap();
            let mut nm = exact_set(&ds, 2);
            let mut it = noise.iter().cycle();
            for m in &mut nm.marginals {
                for c in &mut m.counts {
                    *c += it.next().unwrap();
                }
            }
            let est = fit_distribution(&nm, 60, &FitConfig { iters: 300, tol: 0.0, accelerated }).unwrap();
            for w in est.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!((est.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
