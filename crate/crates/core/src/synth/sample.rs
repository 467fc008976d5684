//! Conservative sampling: floors first, remainder drawn without replacement.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};

use super::DistributionEstimate;
use crate::dataset::Dataset;
use crate::error::{invalid, Result};

const SNAP: f64 = 1e-9;

/// Emits exactly `n` codes; value `t` appears `floor(μ_t)` or `floor(μ_t) + 1`
/// times (after rescaling `μ` to sum to `n`). The output is shuffled.
pub fn sample_column<R: rand::Rng + ?Sized>(mu: &[f64], n: usize, rng: &mut R) -> Result<Vec<u32>> {
    if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(invalid("sample_column needs finite non-negative weights"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let total: f64 = mu.iter().sum();
    if total <= 0.0 {
        return Err(invalid("sample_column got all-zero weights with n > 0"));
    }
    let scaled: Vec<f64> = mu.iter().map(|&m| m * n as f64 / total).collect();
    let mut floors: Vec<usize> = Vec::with_capacity(scaled.len());
    let mut fracs: Vec<f64> = Vec::with_capacity(scaled.len());
    for &m in &scaled {
        let r = m.round();
        let (f, frac) = if (m - r).abs() < SNAP { (r, 0.0) } else { (m.floor(), m - m.floor()) };
        floors.push(f as usize);
        fracs.push(frac);
    }
    let placed: usize = floors.iter().sum();
    let mut counts = floors;
    if placed > n {
        // only reachable through snapping; take the excess from the largest
        let mut excess = placed - n;
        while excess > 0 {
            let i = (0..counts.len()).max_by(|&a, &b| scaled[a].total_cmp(&scaled[b])).unwrap();
            counts[i] -= 1;
            excess -= 1;
        }
    } else {
        let remainder = n - placed;
        let candidates: Vec<usize> = (0..fracs.len()).filter(|&i| fracs[i] > 0.0).collect();
        let take = remainder.min(candidates.len());
        let chosen: Vec<usize> = candidates
            .choose_multiple_weighted(rng, take, |&i| fracs[i])
            .map_err(|e| invalid(format!("weighted sampling failed: {e}")))?
            .copied()
            .collect();
        for i in chosen {
            counts[i] += 1;
        }
        for _ in take..remainder {
            let i = (0..counts.len()).max_by(|&a, &b| scaled[a].total_cmp(&scaled[b])).unwrap();
            counts[i] += 1;
        }
    }
    let mut out: Vec<u32> = Vec::with_capacity(n);
    for (t, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(t as u32, c));
    }
    out.shuffle(rng);
    Ok(out)
}

/// Draws `n` rows attribute by attribute: the first column from its marginal,
/// then each further column separately within every group of rows sharing the
/// values drawn so far, from the conditional given that prefix.
pub fn sample_dataset<R: rand::Rng + ?Sized>(dist: &DistributionEstimate, n: usize, rng: &mut R) -> Result<Dataset> {
    let schema = &dist.schema;
    let shape = schema.domain_sizes();
    let width = shape.len();
    if dist.probs.len() != shape.iter().product::<usize>() {
        return Err(invalid("distribution does not match its schema"));
    }
    if n == 0 {
        return Ok(Dataset::empty(schema.clone()));
    }
    // prefix[j][idx]: probability of the first j + 1 attribute values `idx`
    let mut prefix: Vec<Vec<f64>> = vec![Vec::new(); width];
    prefix[width - 1] = dist.probs.iter().map(|p| p.max(0.0)).collect();
    for j in (0..width - 1).rev() {
        let l = shape[j + 1];
        prefix[j] = prefix[j + 1].chunks(l).map(|c| c.iter().sum()).collect();
    }
    let mut codes = vec![0u32; n * width];
    // prefix index of each row over the attributes drawn so far
    let mut key = vec![0usize; n];
    let first = sample_column(&prefix[0], n, rng)?;
    for (r, &v) in first.iter().enumerate() {
        codes[r * width] = v;
        key[r] = v as usize;
    }
    for j in 1..width {
        let l = shape[j];
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (r, &k) in key.iter().enumerate() {
            groups.entry(k).or_default().push(r);
        }
        for (g, rows) in groups {
            let cond = &prefix[j][g * l..(g + 1) * l];
            let col = if cond.iter().sum::<f64>() > 0.0 {
                sample_column(cond, rows.len(), rng)?
            } else {
                sample_column(&vec![1.0; l], rows.len(), rng)?
            };
            for (&r, &v) in rows.iter().zip(&col) {
                codes[r * width + j] = v;
                key[r] = g * l + v as usize;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let shuffled: Vec<u32> = order
        .iter()
        .flat_map(|&r| codes[r * width..(r + 1) * width].iter().copied())
        .collect();
    Dataset::from_flat(schema.clone(), shuffled)
}
