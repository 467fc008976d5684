//! Marginal queries and count vectors.
//!
//! A query is a non-empty, strictly increasing set of 0-based attribute
//! indices (the label is index `m`). Marginal cells are laid out row-major
//! with the last attribute of the query varying fastest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Schema};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MarginalQuery(Vec<usize>);

impl TryFrom<Vec<usize>> for MarginalQuery {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        MarginalQuery::new(v)
    }
}

impl From<MarginalQuery> for Vec<usize> {
    fn from(q: MarginalQuery) -> Self {
        q.0
    }
}

impl MarginalQuery {
    pub fn new(attrs: Vec<usize>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(invalid("marginal query must name at least one attribute"));
        }
        if attrs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "query attributes must be strictly increasing: {attrs:?}"
            )));
        }
        Ok(Self(attrs))
    }

    pub fn attrs(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset_of(&self, other: &MarginalQuery) -> bool {
        self.0.iter().all(|a| other.0.binary_search(a).is_ok())
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        match self.0.last() {
            Some(&a) if a < schema.width() => Ok(()),
            _ => Err(Error::QueryMismatch(self.0.clone())),
        }
    }

    /// Domain sizes of the queried attributes.
    pub fn shape(&self, schema: &Schema) -> Vec<usize> {
        let d = schema.domain_sizes();
        self.0.iter().map(|&a| d[a]).collect()
    }

    pub fn cells(&self, schema: &Schema) -> usize {
        self.shape(schema).iter().product()
    }

    /// Flat cell index of a full record under this query.
    pub fn index_of(&self, row: &[u32], shape: &[usize]) -> usize {
        self.0
            .iter()
            .zip(shape)
            .fold(0usize, |acc, (&a, &l)| acc * l + row[a] as usize)
    }
}

/// All subsets of `{0..width}` of size `1..=d`, ordered by size then
/// lexicographically.
pub fn enumerate_queries(width: usize, d: usize) -> Result<Vec<MarginalQuery>> {
    if d == 0 || d > width {
        return Err(invalid(format!(
            "marginal order d={d} must lie in [1, {width}]"
        )));
    }
    let mut out = Vec::new();
    for k in 1..=d {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            out.push(MarginalQuery(comb.clone()));
            // next k-combination in lexicographic order
            let mut i = k;
            while i > 0 && comb[i - 1] == width - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..k {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// `Σ_{k=1}^{d} C(width, k)`.
pub fn query_count(width: usize, d: usize) -> u64 {
    let mut total = 0u64;
    let mut c = 1u64;
    for k in 1..=d.min(width) {
        c = c * (width - k + 1) as u64 / k as u64;
        total += c;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub query: MarginalQuery,
    pub counts: Vec<f64>,
    /// True for counts measured directly from a dataset; cleared by noise.
    pub exact: bool,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

pub fn compute_marginal(ds: &Dataset, q: &MarginalQuery) -> Result<Marginal> {
    q.validate(ds.schema())?;
    let shape = q.shape(ds.schema());
    let mut counts = vec![0.0; shape.iter().product()];
    for r in ds.rows() {
        counts[q.index_of(r, &shape)] += 1.0;
    }
    Ok(Marginal {
        query: q.clone(),
        counts,
        exact: true,
    })
}

pub fn compute_marginals(ds: &Dataset, qs: &[MarginalQuery]) -> Result<Vec<Marginal>> {
    qs.iter().map(|q| compute_marginal(ds, q)).collect()
}

pub fn l1_distance(a: &Marginal, b: &Marginal) -> Result<f64> {
    if a.query != b.query || a.counts.len() != b.counts.len() {
        return Err(Error::QueryMismatch(b.query.attrs().to_vec()));
    }
    Ok(a.counts
        .iter()
        .zip(&b.counts)
        .map(|(x, y)| (x - y).abs())
        .sum())
}

pub fn normalized_l1(a: &Marginal, b: &Marginal, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("normalized l1 requires n > 0"));
    }
    Ok(l1_distance(a, b)? / n as f64)
}

/// Mean and max normalized l1 error across matched marginal lists.
pub fn normalized_l1_summary(a: &[Marginal], b: &[Marginal], n: usize) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid("marginal lists must be non-empty and of equal length"));
    }
    let errs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| normalized_l1(x, y, n))
        .collect::<Result<_>>()?;
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    Ok((mean, max))
}

/// `max_q ||a_q - b_q||_1` across matched marginal lists.
pub fn max_l1(a: &[Marginal], b: &[Marginal]) -> Result<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| l1_distance(x, y))
        .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
}

/// Sums a marginal down onto a sub-query.
pub fn project_marginal(h: &Marginal, sub: &MarginalQuery, schema: &Schema) -> Result<Marginal> {
    if !sub.is_subset_of(&h.query) {
        return Err(Error::QueryMismatch(sub.attrs().to_vec()));
    }
    let shape = h.query.shape(schema);
    let sub_shape = sub.shape(schema);
    let pos: Vec<usize> = sub
        .attrs()
        .iter()
        .map(|a| h.query.attrs().binary_search(a).unwrap())
        .collect();
    let mut out = vec![0.0; sub_shape.iter().product()];
    let mut digits = vec![0usize; shape.len()];
    for &c in &h.counts {
        let idx = pos
            .iter()
            .zip(&sub_shape)
            .fold(0usize, |acc, (&p, &l)| acc * l + digits[p]);
        out[idx] += c;
        // advance mixed-radix counter, last digit fastest
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < shape[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    Ok(Marginal {
        query: sub.clone(),
        counts: out,
        exact: h.exact,
    })
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub attrs: MarginalQuery,
    pub names: Vec<String>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: Schema,
    pub exact: bool,
    pub queries: Vec<ManifestEntry>,
}

/// Writes `marginals.csv` (query id, flat index, count) and
/// `manifest.json` into `dir`.
pub fn write_marginal_set(dir: impl AsRef<Path>, schema: &Schema, ms: &[Marginal]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let names = schema.names();
    let manifest = Manifest {
        schema: schema.clone(),
        exact: ms.iter().all(|m| m.exact),
        queries: ms
            .iter()
            .enumerate()
            .map(|(id, m)| ManifestEntry {
                id,
                attrs: m.query.clone(),
                names: m.query.attrs().iter().map(|&a| names[a].to_owned()).collect(),
                shape: m.query.shape(schema),
            })
            .collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut w = csv::Writer::from_path(dir.join("marginals.csv"))?;
    w.write_record(["query_id", "index", "count"])?;
    for (id, m) in ms.iter().enumerate() {
        for (i, c) in m.counts.iter().enumerate() {
            w.write_record([id.to_string(), i.to_string(), format!("{c:?}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_marginal_set(dir: impl AsRef<Path>) -> Result<(Schema, Vec<Marginal>)> {
    let dir = dir.as_ref();
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut counts: BTreeMap<usize, Vec<f64>> = manifest
        .queries
        .iter()
        .map(|e| (e.id, vec![0.0; e.shape.iter().product()]))
        .collect();
    let mut r = csv::Reader::from_path(dir.join("marginals.csv"))?;
    for rec in r.deserialize::<(usize, usize, f64)>() {
        let (id, idx, c) = rec?;
        let slot = counts
            .get_mut(&id)
            .and_then(|v| v.get_mut(idx))
            .ok_or_else(|| invalid(format!("marginal entry ({id}, {idx}) not in manifest")))?;
        *slot = c;
    }
    let ms = manifest
        .queries
        .into_iter()
        .map(|e| Marginal {
            query: e.attrs,
            counts: counts.remove(&e.id).unwrap(),
            exact: manifest.exact,
        })
        .collect();
    Ok((manifest.schema, ms))
}
