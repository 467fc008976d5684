//! Exact minimizer of `max_q ||ĥ_q - M_q(D)||_1` over datasets of size `n`.
//!
//! A dataset is a vector of non-negative integer cell counts summing to `n`,
//! so the search is a small integer program: minimize `z` subject to
//! `z >= Σ_t e_{q,t}` and `e_{q,t} >= |ĥ_{q,t} - (A_q c)_t|` for every query.
//! It is solved exactly by branch-and-cut. Ties are then broken towards the
//! lexicographically smallest multiset (rows sorted by cell index) by fixing
//! the optimum and maximizing the count of each cell in turn.

use highs::{HighsModelStatus, Model, RowProblem, Sense};
use serde::{Deserialize, Serialize};

use super::{JointLayout, NoisyMarginalSet};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BruteConfig {
    /// Maximum number of branch-and-bound nodes per solve.
    pub node_cap: u64,
}

impl Default for BruteConfig {
    fn default() -> Self {
        Self { node_cap: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteOutcome {
    pub dataset: Dataset,
    pub counts: Vec<u64>,
    pub objective: f64,
    /// Integer programs solved (one for the optimum plus the tie-break steps).
    pub solves: u64,
}

pub fn brute_force_synth(n: usize, nm: &NoisyMarginalSet) -> Result<Dataset> {
    Ok(brute_force_search(n, nm, &BruteConfig::default())?.dataset)
}

/// `max_q ||ĥ_q - M_q(c)||_1` for cell counts `c`.
pub(crate) fn max_l1_objective(layout: &JointLayout, targets: &[&[f64]], counts: &[u64]) -> f64 {
    let mut worst = 0.0f64;
    for (map, target) in layout.maps.iter().zip(targets) {
        let mut m = vec![0.0; target.len()];
        for (cell, &k) in counts.iter().enumerate() {
            m[map[cell]] += k as f64;
        }
        let d: f64 = m.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum();
        worst = worst.max(d);
    }
    worst
}

pub fn brute_force_search(n: usize, nm: &NoisyMarginalSet, cfg: &BruteConfig) -> Result<BruteOutcome> {
    if nm.marginals.is_empty() {
        return Err(invalid("brute-force synthesis needs at least one query"));
    }
    let layout = JointLayout::new(&nm.schema, &nm.queries())?;
    let targets: Vec<&[f64]> = nm.marginals.iter().map(|m| m.counts.as_slice()).collect();
    let cells = layout.cells;
    let nf = n as f64;

    let mut pb = RowProblem::default();
    let cell_cols: Vec<_> = (0..cells).map(|_| pb.add_integer_column(0.0, 0.0..=nf)).collect();
    let z = pb.add_column(1.0, 0.0..);
    for (map, target) in layout.maps.iter().zip(&targets) {
        let mut members = vec![Vec::new(); target.len()];
        for (cell, &t) in map.iter().enumerate() {
            members[t].push(cell);
        }
        let mut total = vec![(z, 1.0)];
        for (t, group) in members.iter().enumerate() {
            let e = pb.add_column(0.0, 0.0..);
            total.push((e, -1.0));
            let mut up = vec![(e, 1.0)];
            let mut down = vec![(e, 1.0)];
            for &cell in group {
                up.push((cell_cols[cell], 1.0));
                down.push((cell_cols[cell], -1.0));
            }
            pb.add_row(target[t].., up);
            pb.add_row(-target[t].., down);
        }
        pb.add_row(0.0.., total);
    }
    pb.add_row(nf..=nf, cell_cols.iter().map(|&c| (c, 1.0)).collect::<Vec<_>>());

    let mut model = pb.optimise(Sense::Minimise);
    configure(&mut model, cfg);
    let (mut model, mut incumbent) = solve(model, cfg)?;
    let mut counts: Vec<u64> = incumbent[..cells].iter().map(|v| v.round().max(0.0) as u64).collect();
    let optimum = max_l1_objective(&layout, &targets, &counts);
    let mut solves = 1;

    // Tie-break: keep the objective within tolerance of the optimum and take
    // the largest feasible count for each cell in index order. The previous
    // solution stays feasible after each fixing, so it seeds the next solve,
    // and a cell already holding every remaining row needs no solve at all.
    let tol = 1e-7 * optimum.max(1.0);
    model.change_column_bounds(z, 0.0..=optimum + tol);
    model.change_column_cost(z, 0.0);
    let mut placed = 0u64;
    for (k, &col) in cell_cols.iter().enumerate().take(cells - 1) {
        let left = n as u64 - placed;
        if left == 0 {
            counts[k] = 0;
            model.change_column_bounds(col, 0.0..=0.0);
            continue;
        }
        let mut v = incumbent[k].round().max(0.0) as u64;
        if v < left {
            model.change_column_cost(col, -1.0);
            // The LP relaxation bounds the achievable count from above; only
            // when it leaves room above the incumbent is an integer solve run.
            model.set_option("solve_relaxation", true);
            let (m, relaxed) = solve(model, cfg)?;
            model = m;
            model.set_option("solve_relaxation", false);
            if (relaxed[k] + 1e-6).floor() as u64 > v {
                model
                    .try_set_solution(Some(&incumbent), None, None, None)
                    .map_err(|e| Error::Lp(format!("{e:?}")))?;
                let (m, values) = solve(model, cfg)?;
                model = m;
                solves += 1;
                v = values[k].round().max(0.0) as u64;
                incumbent = values;
            }
            model.change_column_cost(col, 0.0);
        }
        model.change_column_bounds(col, v as f64..=v as f64);
        counts[k] = v;
        placed += v;
    }
    counts[cells - 1] = n as u64 - placed;
    let objective = max_l1_objective(&layout, &targets, &counts);
    Ok(BruteOutcome {
        dataset: layout.dataset_from_counts(&nm.schema, &counts)?,
        counts,
        objective,
        solves,
    })
}

fn configure(model: &mut Model, cfg: &BruteConfig) {
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    model.set_option("mip_rel_gap", 0.0);
    model.set_option("mip_abs_gap", 1e-9);
    model.set_option("primal_feasibility_tolerance", 1e-10);
    model.set_option("dual_feasibility_tolerance", 1e-10);
    model.set_option("mip_feasibility_tolerance", 1e-10);
    model.set_option("mip_max_nodes", cfg.node_cap.min(i32::MAX as u64) as i32);
}

fn solve(model: Model, cfg: &BruteConfig) -> Result<(Model, Vec<f64>)> {
    let solved = model.try_solve().map_err(|e| Error::Lp(format!("{e:?}")))?;
    match solved.status() {
        HighsModelStatus::Optimal => {
            let values = solved.get_solution().columns().to_vec();
            Ok((Model::from(solved), values))
        }
        HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedTimeLimit
        | HighsModelStatus::ReachedSolutionLimit
        | HighsModelStatus::ReachedInterrupt
        | HighsModelStatus::Unknown => Err(Error::CapExceeded { cap: cfg.node_cap }),
        other => Err(Error::Lp(format!("solver status {other:?}"))),
    }
}
