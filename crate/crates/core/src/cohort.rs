//! Longitudinal data model: one dataset per visit sharing a visit-1 feature
//! schema, with nested ids across visits and removal of instances after
//! their outcome event.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inverse_opt::{cost_value, Bounds, CostModel};

pub const ID_COLUMN: &str = "id";
pub const OUTCOME_COLUMN: &str = "y_next";
pub const CONFIG_FILE: &str = "cohort.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub raw_unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: String,
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(version: impl Into<String>, features: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            if f.name == ID_COLUMN || f.name == OUTCOME_COLUMN {
                return Err(Error::Schema(format!("reserved column name {:?}", f.name)));
            }
        }
        Ok(Self {
            version: version.into(),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.features[index].name
    }

    pub fn kind(&self, index: usize) -> FeatureKind {
        self.features[index].kind
    }
}

/// Index sets over the visit-1 schema: unchangeable (U), indirectly
/// changeable (I) and directly changeable (D).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePartition {
    pub unchangeable: Vec<usize>,
    pub indirect: Vec<usize>,
    pub direct: Vec<usize>,
}

impl FeaturePartition {
    pub fn new(
        unchangeable: Vec<usize>,
        indirect: Vec<usize>,
        direct: Vec<usize>,
        n_features: usize,
    ) -> Result<Self> {
        let p = Self {
            unchangeable,
            indirect,
            direct,
        };
        p.validate(n_features)?;
        Ok(p)
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.direct.is_empty() {
            return Err(Error::Partition("directly changeable set D is empty".into()));
        }
        let mut seen = vec![false; n_features];
        for &i in self
            .unchangeable
            .iter()
            .chain(&self.indirect)
            .chain(&self.direct)
        {
            if i >= n_features {
                return Err(Error::Partition(format!(
                    "index {i} out of range for {n_features} features"
                )));
            }
            if seen[i] {
                return Err(Error::Partition(format!("index {i} assigned twice")));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("index {i} has no partition")));
        }
        Ok(())
    }
}

/// Instances observed at one visit. Columns of `x` follow `present`, which is
/// sorted ascending by schema index.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitDataset {
    pub visit: usize,
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    pub y_next: Vec<u8>,
    pub present: Vec<usize>,
}

impl VisitDataset {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Column of schema feature `feature`, if measured at this visit.
    pub fn column_of(&self, feature: usize) -> Option<usize> {
        self.present.binary_search(&feature).ok()
    }

    pub fn subset_rows(&self, rows: &[usize]) -> VisitDataset {
        VisitDataset {
            visit: self.visit,
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            x: self.x.select(ndarray::Axis(0), rows),
            y_next: rows.iter().map(|&r| self.y_next[r]).collect(),
            present: self.present.clone(),
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.x.nrows() != self.ids.len() || self.y_next.len() != self.ids.len() {
            return Err(Error::Schema(format!(
                "visit {}: {} ids, {} rows, {} outcomes",
                self.visit,
                self.ids.len(),
                self.x.nrows(),
                self.y_next.len()
            )));
        }
        if self.x.ncols() != self.present.len() {
            return Err(Error::Dimension {
                expected: self.present.len(),
                got: self.x.ncols(),
            });
        }
        if self.present.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema(format!(
                "visit {}: present features must be strictly increasing",
                self.visit
            )));
        }
        let mut seen = HashSet::new();
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    visit: self.visit,
                    id: id.clone(),
                });
            }
        }
        if let Some(&y) = self.y_next.iter().find(|&&y| y > 1) {
            return Err(Error::NonBinary {
                visit: self.visit,
                column: OUTCOME_COLUMN.into(),
                value: y as f64,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub partition: FeaturePartition,
    pub visits: Vec<VisitDataset>,
    pub cost_model: CostModel,
    /// Raw-unit bounds for the D features, aligned with `partition.direct`.
    pub bounds: Bounds,
}

impl Cohort {
    pub fn new(
        schema: FeatureSchema,
        partition: FeaturePartition,
        visits: Vec<VisitDataset>,
        cost_model: CostModel,
        bounds: Bounds,
    ) -> Result<Self> {
        let c = Self {
            schema,
            partition,
            visits,
            cost_model,
            bounds,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn n_visits(&self) -> usize {
        self.visits.len()
    }

    /// 1-based visit accessor.
    pub fn visit(&self, v: usize) -> Result<&VisitDataset> {
        self.check_visit(v)?;
        Ok(&self.visits[v - 1])
    }

    pub fn check_visit(&self, v: usize) -> Result<()> {
        if v == 0 || v > self.visits.len() {
            return Err(Error::VisitOutOfRange {
                visit: v,
                max: self.visits.len(),
            });
        }
        Ok(())
    }

    /// Checks every structural invariant: schema/partition consistency,
    /// per-visit shape and binary encodings, instance continuity and event
    /// exclusion.
    pub fn validate(&self) -> Result<()> {
        let p1 = self.schema.len();
        self.partition.validate(p1)?;
        let d = self.partition.direct.len();
        if self.cost_model.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.cost_model.len(),
            });
        }
        if self.bounds.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.bounds.len(),
            });
        }
        self.bounds.validate()?;
        if self.visits.is_empty() {
            return Err(Error::Schema("cohort has no visits".into()));
        }
        for (k, visit) in self.visits.iter().enumerate() {
            if visit.visit != k + 1 {
                return Err(Error::Schema(format!(
                    "visit at position {} is labelled {}",
                    k + 1,
                    visit.visit
                )));
            }
            visit.check_shape()?;
            if let Some(&bad) = visit.present.iter().find(|&&f| f >= p1) {
                return Err(Error::Schema(format!(
                    "visit {} measures feature index {bad} outside the visit-1 schema",
                    visit.visit
                )));
            }
            for (c, &f) in visit.present.iter().enumerate() {
                if self.schema.kind(f) == FeatureKind::Binary {
                    if let Some(&value) =
                        visit.x.column(c).iter().find(|&&v| v != 0.0 && v != 1.0)
                    {
                        return Err(Error::NonBinary {
                            visit: visit.visit,
                            column: self.schema.name(f).to_string(),
                            value,
                        });
                    }
                }
            }
            if visit.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("visit data"));
            }
        }
        if self.visits[0].present.len() != p1 {
            return Err(Error::Schema(
                "visit 1 must measure every schema feature".into(),
            ));
        }
        check_longitudinal(&self.visits)
    }

    /// Per-D-feature lookup of the bound pair in raw units.
    pub fn direct_bounds(&self) -> &Bounds {
        &self.bounds
    }
}

/// Instance continuity (ids nested across visits) and event exclusion (no id
/// reappears after an outcome event).
pub fn check_longitudinal(visits: &[VisitDataset]) -> Result<()> {
    let mut events: HashMap<&str, usize> = HashMap::new();
    for k in 0..visits.len() {
        let cur = &visits[k];
        if k > 0 {
            let prev: HashSet<&str> = visits[k - 1].ids.iter().map(String::as_str).collect();
            for id in &cur.ids {
                if let Some(&ev) = events.get(id.as_str()) {
                    return Err(Error::ExclusionViolated {
                        id: id.clone(),
                        event_visit: ev,
                        visit: cur.visit,
                    });
                }
                if !prev.contains(id.as_str()) {
                    return Err(Error::ContinuityViolated {
                        visit: cur.visit,
                        prev: visits[k - 1].visit,
                        id: id.clone(),
                    });
                }
            }
        }
        for (id, &y) in cur.ids.iter().zip(&cur.y_next) {
            if y == 1 {
                events.entry(id.as_str()).or_insert(cur.visit);
            }
        }
    }
    Ok(())
}

/// Removes every instance from all visits after the one at which its outcome
/// was positive. Idempotent.
pub fn enforce_exclusion(visits: &[VisitDataset]) -> Vec<VisitDataset> {
    let mut excluded: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(visits.len());
    for visit in visits {
        let keep: Vec<usize> = (0..visit.n())
            .filter(|&i| !excluded.contains(&visit.ids[i]))
            .collect();
        let filtered = if keep.len() == visit.n() {
            visit.clone()
        } else {
            visit.subset_rows(&keep)
        };
        for (id, &y) in filtered.ids.iter().zip(&filtered.y_next) {
            if y == 1 {
                excluded.insert(id.clone());
            }
        }
        out.push(filtered);
    }
    out
}

/// Visit-1 features not measured at visit `v`, as ascending schema indices.
pub fn missing_feature_set(cohort: &Cohort, v: usize) -> Result<Vec<usize>> {
    let visit = cohort.visit(v)?;
    let present: BTreeSet<usize> = visit.present.iter().copied().collect();
    Ok((0..cohort.schema.len())
        .filter(|f| !present.contains(f))
        .collect())
}

// ---------------------------------------------------------------------------
// Config file

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionTag {
    #[serde(rename = "U", alias = "unchangeable")]
    Unchangeable,
    #[serde(rename = "I", alias = "indirect")]
    Indirect,
    #[serde(rename = "D", alias = "direct")]
    Direct,
}

/// One `[[feature]]` entry. Cost and bound keys are only meaningful for D
/// features; an absent cost locks that direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub unit: String,
    pub partition: PartitionTag,
    #[serde(
        default = "locked",
        with = "cost_value",
        skip_serializing_if = "is_locked"
    )]
    pub cost_up: f64,
    #[serde(
        default = "locked",
        with = "cost_value",
        skip_serializing_if = "is_locked"
    )]
    pub cost_down: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

fn locked() -> f64 {
    f64::INFINITY
}

fn is_locked(c: &f64) -> bool {
    c.is_infinite()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub version: String,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureConfig>,
}

impl CohortConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds the schema, partition, cost model and raw bounds.
    pub fn resolve(&self) -> Result<(FeatureSchema, FeaturePartition, CostModel, Bounds)> {
        let schema = FeatureSchema::new(
            self.version.clone(),
            self.features
                .iter()
                .map(|f| FeatureSpec {
                    name: f.name.clone(),
                    kind: f.kind,
                    raw_unit: f.unit.clone(),
                })
                .collect(),
        )?;
        let (mut u, mut i, mut d) = (Vec::new(), Vec::new(), Vec::new());
        let (mut up, mut down, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (idx, f) in self.features.iter().enumerate() {
            match f.partition {
                PartitionTag::Unchangeable => u.push(idx),
                PartitionTag::Indirect => i.push(idx),
                PartitionTag::Direct => {
                    d.push(idx);
                    up.push(f.cost_up);
                    down.push(f.cost_down);
                    let (lo_default, hi_default) = match f.kind {
                        FeatureKind::Binary => (0.0, 1.0),
                        FeatureKind::Continuous => (f64::NEG_INFINITY, f64::INFINITY),
                    };
                    lower.push(f.lower.unwrap_or(lo_default));
                    upper.push(f.upper.unwrap_or(hi_default));
                }
            }
        }
        let partition = FeaturePartition::new(u, i, d, schema.len())?;
        let cost_model = CostModel::new(up, down).map_err(|e| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            other => other,
        })?;
        let bounds = Bounds::new(lower, upper)?;
        Ok((schema, partition, cost_model, bounds))
    }

    /// Inverse of [`CohortConfig::resolve`].
    pub fn from_parts(
        schema: &FeatureSchema,
        partition: &FeaturePartition,
        cost_model: &CostModel,
        bounds: &Bounds,
    ) -> Self {
        let features = schema
            .features
            .iter()
            .enumerate()
            .map(|(idx, f)| {
                let mut fc = FeatureConfig {
                    name: f.name.clone(),
                    kind: f.kind,
                    unit: f.raw_unit.clone(),
                    partition: PartitionTag::Unchangeable,
                    cost_up: f64::INFINITY,
                    cost_down: f64::INFINITY,
                    lower: None,
                    upper: None,
                };
                if partition.indirect.contains(&idx) {
                    fc.partition = PartitionTag::Indirect;
                } else if let Some(k) = partition.direct.iter().position(|&j| j == idx) {
                    fc.partition = PartitionTag::Direct;
                    fc.cost_up = cost_model.up[k];
                    fc.cost_down = cost_model.down[k];
                    fc.lower = Some(bounds.lower[k]).filter(|v| v.is_finite());
                    fc.upper = Some(bounds.upper[k]).filter(|v| v.is_finite());
                }
                fc
            })
            .collect();
        Self {
            version: schema.version.clone(),
            features,
        }
    }
}

// ---------------------------------------------------------------------------
// Visit files

pub fn visit_file_name(v: usize) -> String {
    format!("visit_{v}.csv")
}

/// Loads `visit_1.csv`, `visit_2.csv`, ... from `dir` until the first gap and
/// validates the result against `config`.
pub fn load_cohort(dir: &Path, config: &CohortConfig) -> Result<Cohort> {
    let (schema, partition, cost_model, bounds) = config.resolve()?;
    let mut visits = Vec::new();
    let mut v = 1;
    loop {
        let path = dir.join(visit_file_name(v));
        if !path.exists() {
            break;
        }
        visits.push(read_visit_file(&path, v, &schema)?);
        v += 1;
    }
    if visits.is_empty() {
        return Err(Error::Config(format!(
            "no {} found in {}",
            visit_file_name(1),
            dir.display()
        )));
    }
    Cohort::new(schema, partition, visits, cost_model, bounds)
}

/// Loads a cohort directory holding `cohort.toml` next to the visit files.
pub fn load_cohort_dir(dir: &Path) -> Result<Cohort> {
    let config = CohortConfig::from_path(&dir.join(CONFIG_FILE))?;
    load_cohort(dir, &config)
}

fn csv_err(path: &Path, e: impl ToString) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_visit_file(path: &Path, v: usize, schema: &FeatureSchema) -> Result<VisitDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut id_col = None;
    let mut y_col = None;
    let mut feature_cols: Vec<(usize, usize)> = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        let h = h.trim();
        match h {
            ID_COLUMN => id_col = Some(c),
            OUTCOME_COLUMN => y_col = Some(c),
            name => match schema.index_of(name) {
                Some(f) => {
                    if feature_cols.iter().any(|&(_, g)| g == f) {
                        return Err(Error::Schema(format!(
                            "{}: column {name:?} repeated",
                            path.display()
                        )));
                    }
                    feature_cols.push((c, f));
                }
                None => {
                    return Err(Error::Schema(format!(
                        "{}: column {name:?} at visit {v} is not in the visit-1 schema",
                        path.display()
                    )))
                }
            },
        }
    }
    let id_col = id_col.ok_or_else(|| Error::Schema(format!("{}: no id column", path.display())))?;
    let y_col = y_col
        .ok_or_else(|| Error::Schema(format!("{}: no y_next column", path.display())))?;
    feature_cols.sort_by_key(|&(_, f)| f);
    let present: Vec<usize> = feature_cols.iter().map(|&(_, f)| f).collect();

    let mut ids = Vec::new();
    let mut y_next = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        ids.push(record[id_col].trim().to_string());
        let y = record[y_col].trim();
        y_next.push(match y {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::NonBinary {
                    visit: v,
                    column: OUTCOME_COLUMN.into(),
                    value: other.parse().unwrap_or(f64::NAN),
                })
            }
        });
        for &(c, f) in &feature_cols {
            let raw = record[c].trim();
            let value: f64 = raw.parse().map_err(|_| {
                csv_err(
                    path,
                    format!("unparseable value {raw:?} in column {:?}", schema.name(f)),
                )
            })?;
            values.push(value);
        }
    }
    let n = ids.len();
    let x = Array2::from_shape_vec((n, present.len()), values)
        .map_err(|e| csv_err(path, e))?;
    let visit = VisitDataset {
        visit: v,
        ids,
        x,
        y_next,
        present,
    };
    visit.check_shape()?;
    for (c, &f) in visit.present.iter().enumerate() {
        if schema.kind(f) == FeatureKind::Binary {
            if let Some(&value) = visit.x.column(c).iter().find(|&&x| x != 0.0 && x != 1.0) {
                return Err(Error::NonBinary {
                    visit: v,
                    column: schema.name(f).to_string(),
                    value,
                });
            }
        }
    }
    Ok(visit)
}

/// Writes `id`, the measured features in schema order, then `y_next`.
pub fn write_visit_file(path: &Path, visit: &VisitDataset, schema: &FeatureSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(visit.present.iter().map(|&f| schema.name(f).to_string()));
    header.push(OUTCOME_COLUMN.to_string());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..visit.n() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(visit.ids[i].clone());
        rec.extend(visit.x.row(i).iter().map(|v| v.to_string()));
        rec.push(visit.y_next[i].to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `cohort.toml` plus one visit file per visit into `dir`.
pub fn write_cohort_dir(dir: &Path, cohort: &Cohort) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = CohortConfig::from_parts(
        &cohort.schema,
        &cohort.partition,
        &cohort.cost_model,
        &cohort.bounds,
    );
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    let mut written = vec![config_path];
    for visit in &cohort.visits {
        let path = dir.join(visit_file_name(visit.visit));
        write_visit_file(&path, visit, &cohort.schema)?;
        written.push(path);
    }
    Ok(written)
}
