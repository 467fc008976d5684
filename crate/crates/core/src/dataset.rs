//! Discrete tabular datasets: schema, CSV ingestion, preprocessing, numeric
//! encoding and train/test splitting.
//!
//! Every attribute has a finite domain `0..l_j`. The last attribute is the
//! binary label. Encoded features live in `[-1, 1]` via `c -> 2c/(l_j - 1) - 1`
//! and the label maps `{0, 1} -> {-1, +1}`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub domain_size: usize,
}

/// Ordered attribute list; the final attribute is the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct Schema {
    attributes: Vec<Attribute>,
    max_domain: usize,
}

impl TryFrom<Vec<Attribute>> for Schema {
    type Error = Error;
    fn try_from(attributes: Vec<Attribute>) -> Result<Self> {
        Schema::new(attributes)
    }
}

impl From<Schema> for Vec<Attribute> {
    fn from(s: Schema) -> Self {
        s.attributes
    }
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.len() < 2 {
            return Err(Error::Schema(
                "need at least one feature and a label".into(),
            ));
        }
        let mut seen = HashSet::new();
        for a in &attributes {
            if a.domain_size < 2 {
                return Err(Error::Schema(format!(
                    "attribute `{}` has domain size {} (< 2)",
                    a.name, a.domain_size
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute `{}`", a.name)));
            }
        }
        let label = attributes.last().unwrap();
        if label.domain_size != 2 {
            return Err(Error::Schema(format!(
                "label `{}` must be binary, got domain size {}",
                label.name, label.domain_size
            )));
        }
        let max_domain = attributes.iter().map(|a| a.domain_size).max().unwrap();
        Ok(Self {
            attributes,
            max_domain,
        })
    }

    /// Convenience constructor with generated names `x0, x1, ..., y`.
    pub fn from_domains(feature_domains: &[usize]) -> Result<Self> {
        let mut attrs: Vec<Attribute> = feature_domains
            .iter()
            .enumerate()
            .map(|(i, &l)| Attribute {
                name: format!("x{i}"),
                domain_size: l,
            })
            .collect();
        attrs.push(Attribute {
            name: "y".into(),
            domain_size: 2,
        });
        Self::new(attrs)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    /// Total number of attributes including the label (`m + 1`).
    pub fn width(&self) -> usize {
        self.attributes.len()
    }

    /// Number of features `m`.
    pub fn num_features(&self) -> usize {
        self.attributes.len() - 1
    }

    pub fn label_index(&self) -> usize {
        self.attributes.len() - 1
    }

    /// `l = max_j l_j`.
    pub fn max_domain(&self) -> usize {
        self.max_domain
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.domain_size).collect()
    }

    /// Number of cells in the joint domain, or `None` on overflow.
    pub fn joint_size(&self) -> Option<usize> {
        self.attributes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.domain_size))
    }

    pub fn names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    /// Stable FNV-1a digest of names and domain sizes, used to tie model
    /// files to the schema they were trained on.
    pub fn digest(&self) -> String {
        let mut canon = String::new();
        for a in &self.attributes {
            let _ = write!(canon, "{}:{};", a.name, a.domain_size);
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// A multiset of coded records stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    schema: Schema,
    codes: Vec<u32>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<u32>>) -> Result<Self> {
        let w = schema.width();
        let mut codes = Vec::with_capacity(rows.len() * w);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != w {
                return Err(invalid(format!(
                    "row {i} has {} cells, schema has {w}",
                    r.len()
                )));
            }
            codes.extend(r);
        }
        Self::from_flat(schema, codes)
    }

    pub fn from_flat(schema: Schema, codes: Vec<u32>) -> Result<Self> {
        let w = schema.width();
        if codes.len() % w != 0 {
            return Err(invalid("flat code buffer is not a multiple of the row width"));
        }
        for (k, &c) in codes.iter().enumerate() {
            let a = &schema.attributes[k % w];
            if c as usize >= a.domain_size {
                return Err(Error::DomainViolation {
                    attr: a.name.clone(),
                    code: c as i64,
                    size: a.domain_size,
                    row: k / w,
                });
            }
        }
        Ok(Self { schema, codes })
    }

    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            codes: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.schema.width()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let w = self.schema.width();
        &self.codes[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.codes.chunks_exact(self.schema.width())
    }

    /// Rows sorted lexicographically; two datasets are equal as multisets
    /// iff their sorted rows agree.
    pub fn sorted_rows(&self) -> Vec<Vec<u32>> {
        let mut v: Vec<Vec<u32>> = self.rows().map(|r| r.to_vec()).collect();
        v.sort();
        v
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut codes = Vec::with_capacity(idx.len() * self.schema.width());
        for &i in idx {
            codes.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: self.schema.clone(),
            codes,
        }
    }

    /// Concatenates two datasets over the same schema.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(invalid("cannot concatenate datasets with different schemas"));
        }
        let mut codes = self.codes.clone();
        codes.extend_from_slice(&other.codes);
        Ok(Dataset {
            schema: self.schema.clone(),
            codes,
        })
    }
}

// ---------------------------------------------------------------------------
// CSV

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::MissingHeader(path.to_path_buf())),
    };
    let names: Vec<&str> = header.iter().collect();
    if names != schema.names() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!(
                "header {:?} does not match schema attributes {:?}",
                names,
                schema.names()
            ),
        });
    }
    let w = schema.width();
    let mut codes = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != w {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {w} cells, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: i64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("cell `{cell}` is not an integer"),
            })?;
            let a = &schema.attributes[j];
            if v < 0 || v as usize >= a.domain_size {
                return Err(Error::DomainViolation {
                    attr: a.name.clone(),
                    code: v,
                    size: a.domain_size,
                    row: i,
                });
            }
            codes.push(v as u32);
        }
    }
    Dataset::from_flat(schema.clone(), codes)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ds.schema.names())?;
    for r in ds.rows() {
        w.write_record(r.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Preprocessing

/// How one raw column becomes a coded attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Rule {
    /// Already coded `0..domain_size`.
    Identity { domain_size: usize },
    /// Integer values in `[min, max]`, rebased so `min` becomes 0.
    Integer { min: i64, max: i64 },
    /// Listed categories map to their position.
    Categorical { categories: Vec<String> },
    /// Equal-width, left-closed buckets over `[min, max]`; out-of-range
    /// values fall into the end buckets.
    Bucket { buckets: usize, min: f64, max: f64 },
}

impl Rule {
    pub fn domain_size(&self) -> usize {
        match self {
            Rule::Identity { domain_size } => *domain_size,
            Rule::Integer { min, max } => (max - min + 1).max(0) as usize,
            Rule::Categorical { categories } => categories.len(),
            Rule::Bucket { buckets, .. } => *buckets,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Rule::Bucket { buckets, min, max } => {
                if *buckets < 2 {
                    return Err(Error::Schema(format!("`{name}`: bucket count must be >= 2")));
                }
                if !(min < max) || !min.is_finite() || !max.is_finite() {
                    return Err(Error::Schema(format!("`{name}`: bucket range must satisfy min < max")));
                }
            }
            Rule::Integer { min, max } if min >= max => {
                return Err(Error::Schema(format!("`{name}`: integer range must satisfy min < max")));
            }
            _ => {}
        }
        Ok(())
    }

    fn apply(&self, cell: &str) -> std::result::Result<u32, String> {
        match self {
            Rule::Identity { domain_size } => {
                let v: i64 = cell.parse().map_err(|_| format!("`{cell}` is not an integer"))?;
                if v < 0 || v as usize >= *domain_size {
                    return Err(format!("code {v} outside [0, {domain_size})"));
                }
                Ok(v as u32)
            }
            Rule::Integer { min, max } => {
                let v: i64 = cell.parse().map_err(|_| format!("`{cell}` is not an integer"))?;
                if v < *min || v > *max {
                    return Err(format!("value {v} outside [{min}, {max}]"));
                }
                Ok((v - min) as u32)
            }
            Rule::Categorical { categories } => categories
                .iter()
                .position(|c| c == cell)
                .map(|p| p as u32)
                .ok_or_else(|| format!("unknown category `{cell}`")),
            Rule::Bucket { buckets, min, max } => {
                let v: f64 = cell.parse().map_err(|_| format!("`{cell}` is not a number"))?;
                if !v.is_finite() {
                    return Err(format!("`{cell}` is not finite"));
                }
                Ok(bucket_index(v, *buckets, *min, *max) as u32)
            }
        }
    }
}

pub fn bucket_index(v: f64, buckets: usize, min: f64, max: f64) -> usize {
    let width = (max - min) / buckets as f64;
    let k = ((v - min) / width).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(buckets - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub name: String,
    #[serde(flatten)]
    pub rule: Rule,
}

/// Schema document: attributes in order, label last, each with its
/// preprocessing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    #[serde(rename = "attribute")]
    pub attributes: Vec<AttributeRule>,
}

impl SchemaFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sf: SchemaFile = toml::from_str(text)?;
        sf.schema()?;
        Ok(sf)
    }

    pub fn schema(&self) -> Result<Schema> {
        for a in &self.attributes {
            a.rule.validate(&a.name)?;
        }
        Schema::new(
            self.attributes
                .iter()
                .map(|a| Attribute {
                    name: a.name.clone(),
                    domain_size: a.rule.domain_size(),
                })
                .collect(),
        )
    }

    /// Identity rules for an already-coded schema.
    pub fn identity(schema: &Schema) -> Self {
        Self {
            attributes: schema
                .attributes()
                .iter()
                .map(|a| AttributeRule {
                    name: a.name.clone(),
                    rule: Rule::Identity {
                        domain_size: a.domain_size,
                    },
                })
                .collect(),
        }
    }
}

/// Uncoded table as read from disk; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

const MISSING_MARKERS: [&str; 5] = ["", "?", "NA", "NaN", "null"];

impl RawTable {
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut records = rdr.records();
        let header: Vec<String> = match records.next() {
            Some(h) => h?.iter().map(str::to_owned).collect(),
            None => return Err(Error::MissingHeader(path.to_path_buf())),
        };
        let mut rows = Vec::new();
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: format!("expected {} cells, found {}", header.len(), rec.len()),
                });
            }
            rows.push(
                rec.iter()
                    .map(|c| (!MISSING_MARKERS.contains(&c)).then(|| c.to_owned()))
                    .collect(),
            );
        }
        Ok(Self { header, rows })
    }
}

/// Drops rows with missing values in any used column, then codes each column
/// by its rule. Columns the rules do not mention are discarded.
pub fn preprocess(raw: &RawTable, rules: &SchemaFile) -> Result<Dataset> {
    let schema = rules.schema()?;
    let cols: Vec<usize> = rules
        .attributes
        .iter()
        .map(|a| {
            raw.header
                .iter()
                .position(|h| h == &a.name)
                .ok_or_else(|| Error::UnknownAttribute(a.name.clone()))
        })
        .collect::<Result<_>>()?;
    let mut codes = Vec::new();
    let mut kept = 0usize;
    for (i, row) in raw.rows.iter().enumerate() {
        if cols.iter().any(|&c| row[c].is_none()) {
            continue;
        }
        for (rule, &c) in rules.attributes.iter().zip(&cols) {
            let cell = row[c].as_deref().unwrap();
            let code = rule.rule.apply(cell).map_err(|msg| Error::Parse {
                path: Default::default(),
                line: i + 2,
                msg: format!("attribute `{}`: {msg}", rule.name),
            })?;
            codes.push(code);
        }
        kept += 1;
    }
    if kept == 0 && !raw.rows.is_empty() {
        return Err(Error::AllRowsDropped);
    }
    Dataset::from_flat(schema, codes)
}

// ---------------------------------------------------------------------------
// Encoding

/// Affine code maps for every feature plus the fixed label map.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMap {
    domains: Vec<usize>,
}

impl EncodingMap {
    pub fn new(schema: &Schema) -> Self {
        Self {
            domains: schema.domain_sizes(),
        }
    }

    pub fn feature(&self, j: usize, code: u32) -> f64 {
        2.0 * code as f64 / (self.domains[j] - 1) as f64 - 1.0
    }

    pub fn label(code: u32) -> f64 {
        if code == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Numeric view: `x` is row-major `n × m` in `[-1,1]`, `y` in `{-1,+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub m: usize,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.m..(i + 1) * self.m]
    }
}

pub fn encode(ds: &Dataset) -> Encoded {
    let map = EncodingMap::new(ds.schema());
    let m = ds.schema().num_features();
    let mut x = Vec::with_capacity(ds.len() * m);
    let mut y = Vec::with_capacity(ds.len());
    for r in ds.rows() {
        for j in 0..m {
            x.push(map.feature(j, r[j]));
        }
        y.push(EncodingMap::label(r[m]));
    }
    Encoded { x, y, m }
}

// ---------------------------------------------------------------------------
// Splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Random partition with `|train| = round(train_fraction * n)`.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(invalid("train_fraction must lie in (0, 1)"));
    }
    let n = ds.len();
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train == n {
        return Err(invalid(format!(
            "cannot split {n} rows with fraction {} into two non-empty parts",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(spec.seed));
    let (a, b) = idx.split_at(n_train);
    Ok((ds.select(a), ds.select(b)))
}

// ---------------------------------------------------------------------------
// Simulation

/// Generates a dataset with a planted linear decision rule: features are
/// drawn with optional chaining to the previous attribute, labels follow a
/// logistic model on the encoded features.
pub fn simulate_planted(
    feature_domains: &[usize],
    n: usize,
    weights: &[f64],
    coupling: f64,
    seed: u64,
) -> Result<Dataset> {
    let schema = Schema::from_domains(feature_domains)?;
    if weights.len() != feature_domains.len() {
        return Err(invalid("one planted weight per feature is required"));
    }
    let map = EncodingMap::new(&schema);
    let mut rng = seed::rng(seed);
    let m = feature_domains.len();
    let mut codes = Vec::with_capacity(n * (m + 1));
    let mut row = vec![0u32; m + 1];
    for _ in 0..n {
        let mut score = 0.0;
        for j in 0..m {
            let l = feature_domains[j];
            row[j] = if j > 0 && rng.random::<f64>() < coupling {
                let prev = (map.feature(j - 1, row[j - 1]) + 1.0) / 2.0;
                (prev * (l - 1) as f64).round() as u32
            } else {
                rng.random_range(0..l as u32)
            };
            score += weights[j] * map.feature(j, row[j]);
        }
        let p = 1.0 / (1.0 + (-score).exp());
        row[m] = (rng.random::<f64>() < p) as u32;
        codes.extend_from_slice(&row);
    }
    Dataset::from_flat(schema, codes)
}
