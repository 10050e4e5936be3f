//! Synthetic longitudinal cohorts with a known risk function.
//!
//! Every feature has a nominal mean and scale; the generator works on the
//! standardized value `z = (x - mean) / sd`.
//!
//! * U features are drawn once and never change.
//! * D features follow a stationary AR(1) walk, `z_v = ρ z_{v-1} + drift ε`
//!   with `ρ = sqrt(1 - drift²)`, clamped to their bounds in raw units.
//! * I features are a linear map of U, D and earlier I features, plus a
//!   per-instance offset that persists across visits and fresh visit noise.
//!   Binary I features threshold that latent value.
//! * The outcome after visit `v` is Bernoulli with logistic risk in the
//!   visit-`v` features; the intercept is calibrated to the event rate.
//!   Positive instances leave the cohort.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    write_cohort_dir, Cohort, CohortConfig, FeatureConfig, FeatureKind, PartitionTag, VisitDataset,
};
use crate::error::{Error, Result};
use crate::inverse_opt::cost_value;
use crate::linalg::sigmoid;

const CALIBRATION_SAMPLES: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenFeature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub unit: String,
    pub partition: PartitionTag,
    /// Mean (continuous) or prevalence (binary U features).
    pub mean: f64,
    /// Scale of continuous features; ignored for binary ones.
    #[serde(default = "one")]
    pub sd: f64,
    /// Coefficient on this feature's standardized value in the risk logit.
    #[serde(default)]
    pub risk_weight: f64,
    /// I features only: coefficients on U, D or earlier I features.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub structural: BTreeMap<String, f64>,
    /// Binary I features only: latent cut-off.
    #[serde(default)]
    pub threshold: f64,
    #[serde(default = "locked", with = "cost_value")]
    pub cost_up: f64,
    #[serde(default = "locked", with = "cost_value")]
    pub cost_down: f64,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn locked() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n1: usize,
    pub visits: usize,
    /// Target probability of an outcome after visit 1.
    pub event_rate: f64,
    /// Innovation scale of the D walk (0 keeps D constant).
    pub drift: f64,
    /// Per-visit noise on I features.
    pub noise: f64,
    /// Scale of the persistent per-instance offset on I features.
    pub persistent: f64,
    /// `missing[k]` lists features not measured at visit `k + 2`; later
    /// visits inherit the last entry.
    pub missing: Vec<Vec<String>>,
    #[serde(rename = "feature")]
    pub features: Vec<GenFeature>,
}

impl GeneratorSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Features not measured at visit `v` (1-based).
    pub fn missing_at(&self, v: usize) -> &[String] {
        if v < 2 || self.missing.is_empty() {
            return &[];
        }
        &self.missing[(v - 2).min(self.missing.len() - 1)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 < 2 {
            return Err(Error::Config("n1 must be at least 2".into()));
        }
        if self.visits == 0 {
            return Err(Error::Config("visits must be positive".into()));
        }
        if !(self.event_rate > 0.0 && self.event_rate < 1.0) {
            return Err(Error::Config(format!(
                "event rate must lie strictly between 0 and 1, got {}",
                self.event_rate
            )));
        }
        if !(0.0..1.0).contains(&self.drift) {
            return Err(Error::Config(format!("drift must lie in [0, 1), got {}", self.drift)));
        }
        if !(self.noise >= 0.0 && self.persistent >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("duplicate feature {:?}", f.name)));
            }
        }
        if !self.features.iter().any(|f| f.partition == PartitionTag::Direct) {
            return Err(Error::Config("at least one D feature is required".into()));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.kind == FeatureKind::Continuous && !(f.sd > 0.0) {
                return Err(Error::Config(format!("feature {:?}: sd must be positive", f.name)));
            }
            if f.kind == FeatureKind::Binary
                && f.partition != PartitionTag::Indirect
                && !(0.0..=1.0).contains(&f.mean)
            {
                return Err(Error::Config(format!(
                    "feature {:?}: prevalence must lie in [0, 1]",
                    f.name
                )));
            }
            if !f.structural.is_empty() && f.partition != PartitionTag::Indirect {
                return Err(Error::Config(format!(
                    "feature {:?}: only I features take structural coefficients",
                    f.name
                )));
            }
            for src in f.structural.keys() {
                match self.index_of(src) {
                    Some(j) if self.features[j].partition != PartitionTag::Indirect || j < i => {}
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "feature {:?}: structural input {src:?} must be U, D or an earlier I feature",
                            f.name
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "feature {:?}: unknown structural input {src:?}",
                            f.name
                        )))
                    }
                }
            }
        }
        for (k, names) in self.missing.iter().enumerate() {
            for name in names {
                let Some(j) = self.index_of(name) else {
                    return Err(Error::Config(format!(
                        "missingness schedule names unknown feature {name:?}"
                    )));
                };
                if self.features[j].partition == PartitionTag::Direct {
                    return Err(Error::Config(format!(
                        "missingness schedule drops D feature {name:?}"
                    )));
                }
            }
            if let Some(next) = self.missing.get(k + 1) {
                if let Some(name) = names.iter().find(|n| !next.contains(n)) {
                    return Err(Error::Config(format!(
                        "nested missingness violated: feature {name:?} is missing at visit {} but measured at visit {}",
                        k + 2,
                        k + 3
                    )));
                }
            }
        }
        self.cohort_config().resolve()?;
        Ok(())
    }

    pub fn cohort_config(&self) -> CohortConfig {
        CohortConfig {
            version: "synthetic-1".into(),
            features: self
                .features
                .iter()
                .map(|f| FeatureConfig {
                    name: f.name.clone(),
                    kind: f.kind,
                    unit: f.unit.clone(),
                    partition: f.partition,
                    cost_up: f.cost_up,
                    cost_down: f.cost_down,
                    lower: f.lower,
                    upper: f.upper,
                })
                .collect(),
        }
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        default_spec()
    }
}

fn feat(name: &str, kind: FeatureKind, unit: &str, partition: PartitionTag, mean: f64, sd: f64) -> GenFeature {
    GenFeature {
        name: name.into(),
        kind,
        unit: unit.into(),
        partition,
        mean,
        sd,
        risk_weight: 0.0,
        structural: BTreeMap::new(),
        threshold: 0.0,
        cost_up: f64::INFINITY,
        cost_down: f64::INFINITY,
        lower: None,
        upper: None,
    }
}

fn with_risk(mut f: GenFeature, w: f64) -> GenFeature {
    f.risk_weight = w;
    f
}

fn structural(mut f: GenFeature, coefs: &[(&str, f64)]) -> GenFeature {
    f.structural = coefs.iter().map(|&(n, c)| (n.to_string(), c)).collect();
    f
}

fn lever(mut f: GenFeature, up: f64, down: f64, lower: f64, upper: f64) -> GenFeature {
    f.cost_up = up;
    f.cost_down = down;
    f.lower = Some(lower);
    f.upper = Some(upper);
    f
}

/// 24 features (6 U, 9 I, 9 D), three visits, roughly a fifth of the
/// features dropped per later visit.
pub fn default_spec() -> GeneratorSpec {
    use FeatureKind::{Binary as B, Continuous as C};
    use PartitionTag::{Direct as D, Indirect as I, Unchangeable as U};
    let inf = f64::INFINITY;
    let features = vec![
        with_risk(feat("age", C, "years", U, 54.0, 5.7), 1.0),
        with_risk(feat("female", B, "indicator", U, 0.55, 1.0), -0.5),
        feat("height", C, "cm", U, 168.0, 9.4),
        feat("race_black", B, "indicator", U, 0.25, 1.0),
        feat("education_years", C, "years", U, 13.0, 3.0),
        with_risk(feat("family_history", B, "indicator", U, 0.4, 1.0), 0.4),
        lever(feat("dark_grain_breads", C, "servings/week", D, 5.0, 3.0), 3.0, inf, 0.0, 35.0),
        with_risk(lever(feat("vegetables", C, "servings/day", D, 2.5, 1.5), 6.0, inf, 0.0, 15.0), -0.2),
        with_risk(lever(feat("fruit", C, "servings/day", D, 2.0, 1.2), 6.0, inf, 0.0, 12.0), -0.2),
        with_risk(lever(feat("fiber", C, "g/day", D, 18.0, 6.0), 7.0, inf, 0.0, 80.0), -0.3),
        with_risk(lever(feat("cigarettes", C, "per day", D, 6.0, 8.0), inf, 9.0, 0.0, 80.0), 0.6),
        with_risk(lever(feat("sodium", C, "mg/day", D, 3200.0, 900.0), inf, 7.0, 500.0, 9000.0), 0.3),
        with_risk(lever(feat("saturated_fat", C, "g/day", D, 25.0, 9.0), inf, 6.0, 0.0, 120.0), 0.3),
        with_risk(lever(feat("exercise_hours", C, "hours/week", D, 3.0, 2.5), 10.0, 10.0, 0.0, 30.0), -0.5),
        lever(feat("alcohol", C, "drinks/week", D, 4.0, 5.0), 9.0, 9.0, 0.0, 60.0),
        with_risk(
            structural(
                feat("bmi", C, "kg/m2", I, 27.0, 4.5),
                &[
                    ("exercise_hours", -0.35),
                    ("saturated_fat", 0.25),
                    ("vegetables", -0.15),
                    ("fruit", -0.1),
                    ("alcohol", 0.1),
                    ("dark_grain_breads", -0.1),
                    ("height", -0.1),
                ],
            ),
            0.4,
        ),
        with_risk(
            structural(
                feat("sbp", C, "mmHg", I, 121.0, 18.0),
                &[
                    ("sodium", 0.4),
                    ("exercise_hours", -0.2),
                    ("alcohol", 0.2),
                    ("cigarettes", 0.1),
                    ("age", 0.35),
                    ("race_black", 0.2),
                ],
            ),
            0.7,
        ),
        with_risk(
            structural(
                feat("ldl", C, "mg/dL", I, 137.0, 37.0),
                &[
                    ("saturated_fat", 0.45),
                    ("fiber", -0.3),
                    ("exercise_hours", -0.1),
                    ("dark_grain_breads", -0.1),
                    ("age", 0.2),
                ],
            ),
            0.6,
        ),
        with_risk(
            structural(
                feat("hdl", C, "mg/dL", I, 50.0, 16.0),
                &[
                    ("exercise_hours", 0.35),
                    ("cigarettes", -0.25),
                    ("alcohol", 0.2),
                    ("saturated_fat", -0.1),
                    ("female", 0.4),
                ],
            ),
            -0.5,
        ),
        structural(
            feat("hematocrit", C, "%", I, 41.0, 4.0),
            &[("cigarettes", 0.3), ("alcohol", 0.1), ("female", -0.6)],
        ),
        with_risk(
            structural(
                feat("glucose", C, "mg/dL", I, 100.0, 25.0),
                &[
                    ("exercise_hours", -0.25),
                    ("fiber", -0.2),
                    ("saturated_fat", 0.15),
                    ("age", 0.25),
                    ("family_history", 0.2),
                ],
            ),
            0.5,
        ),
        structural(
            feat("triglycerides", C, "mg/dL", I, 130.0, 60.0),
            &[
                ("alcohol", 0.3),
                ("saturated_fat", 0.3),
                ("exercise_hours", -0.25),
                ("fruit", 0.05),
            ],
        ),
        structural(
            feat("waist", C, "cm", I, 96.0, 13.0),
            &[
                ("exercise_hours", -0.3),
                ("saturated_fat", 0.25),
                ("alcohol", 0.15),
                ("vegetables", -0.1),
                ("female", -0.3),
                ("height", 0.3),
            ],
        ),
        {
            let mut f = structural(
                feat("statin_use", B, "indicator", I, 0.0, 1.0),
                &[("ldl", 1.5), ("age", 1.2), ("family_history", 0.5)],
            );
            f.threshold = 1.0;
            f
        },
    ];
    GeneratorSpec {
        seed: 20_240_601,
        n1: 2000,
        visits: 3,
        event_rate: 0.02,
        drift: 0.7,
        noise: 0.25,
        persistent: 0.25,
        missing: vec![
            vec![
                "education_years".into(),
                "height".into(),
                "triglycerides".into(),
                "waist".into(),
            ],
            vec![
                "education_years".into(),
                "height".into(),
                "triglycerides".into(),
                "waist".into(),
                "race_black".into(),
                "hematocrit".into(),
                "statin_use".into(),
                "glucose".into(),
            ],
        ],
        features,
    }
}

/// The generating risk function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl GroundTruth {
    pub fn standardize(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.means.len() {
            return Err(Error::Dimension {
                expected: self.means.len(),
                got: x.len(),
            });
        }
        Ok(Array1::from_iter(
            (0..x.len()).map(|j| (x[j] - self.means[j]) / self.scales[j]),
        ))
    }

    pub fn risk_standardized(&self, z: ArrayView1<f64>) -> Result<f64> {
        if z.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: z.len(),
            });
        }
        let eta: f64 = z.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        Ok(sigmoid(self.intercept + eta))
    }

    /// Risk of a raw full-layout instance.
    pub fn risk(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.risk_standardized(self.standardize(x)?.view())
    }
}

pub fn ground_truth_risk(truth: &GroundTruth, x: ArrayView1<f64>) -> Result<f64> {
    truth.risk(x)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

struct Sampler<'a> {
    spec: &'a GeneratorSpec,
    scales: Vec<f64>,
    rho: f64,
}

/// Per-instance latent state carried between visits.
struct Person {
    z_u: Vec<f64>,
    z_d: Vec<f64>,
    offsets: Vec<f64>,
}

impl Sampler<'_> {
    fn new(spec: &GeneratorSpec) -> Sampler<'_> {
        let scales = spec
            .features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Continuous => f.sd,
                FeatureKind::Binary => {
                    let p = binary_mean(f);
                    (p * (1.0 - p)).sqrt().max(1e-6)
                }
            })
            .collect();
        Sampler {
            spec,
            scales,
            rho: (1.0 - spec.drift * spec.drift).sqrt(),
        }
    }

    fn person(&self, rng: &mut ChaCha8Rng) -> Person {
        let p = self.spec.features.len();
        let mut z_u = vec![0.0; p];
        let mut z_d = vec![0.0; p];
        let mut offsets = vec![0.0; p];
        for (j, f) in self.spec.features.iter().enumerate() {
            match f.partition {
                PartitionTag::Unchangeable => {
                    z_u[j] = match f.kind {
                        FeatureKind::Continuous => normal(rng),
                        FeatureKind::Binary => f64::from(u8::from(rng.random::<f64>() < f.mean)),
                    }
                }
                PartitionTag::Direct => z_d[j] = normal(rng),
                PartitionTag::Indirect => offsets[j] = self.spec.persistent * normal(rng),
            }
        }
        Person { z_u, z_d, offsets }
    }

    fn step(&self, person: &mut Person, rng: &mut ChaCha8Rng) {
        for (j, f) in self.spec.features.iter().enumerate() {
            if f.partition == PartitionTag::Direct {
                person.z_d[j] = self.rho * person.z_d[j] + self.spec.drift * normal(rng);
            }
        }
    }

    /// Raw feature values for one visit.
    fn observe(&self, person: &Person, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = self.spec.features.len();
        let mut x = vec![0.0; p];
        let mut z = vec![0.0; p];
        for (j, f) in self.spec.features.iter().enumerate() {
            match (f.partition, f.kind) {
                (PartitionTag::Unchangeable, FeatureKind::Binary) => x[j] = person.z_u[j],
                (PartitionTag::Unchangeable, FeatureKind::Continuous) => x[j] = f.mean + f.sd * person.z_u[j],
                (PartitionTag::Direct, _) => x[j] = clamp_raw(f, f.mean + f.sd * person.z_d[j]),
                (PartitionTag::Indirect, _) => continue,
            }
            z[j] = (x[j] - self.mean(j)) / self.scales[j];
        }
        for (j, f) in self.spec.features.iter().enumerate() {
            if f.partition != PartitionTag::Indirect {
                continue;
            }
            let mut latent = person.offsets[j] + self.spec.noise * normal(rng);
            for (src, c) in &f.structural {
                latent += c * z[self.spec.index_of(src).expect("validated")];
            }
            x[j] = match f.kind {
                FeatureKind::Continuous => f.mean + f.sd * latent,
                FeatureKind::Binary => f64::from(u8::from(latent > f.threshold)),
            };
            z[j] = (x[j] - self.mean(j)) / self.scales[j];
        }
        x
    }

    fn mean(&self, j: usize) -> f64 {
        let f = &self.spec.features[j];
        match f.kind {
            FeatureKind::Continuous => f.mean,
            FeatureKind::Binary => binary_mean(f),
        }
    }
}

/// Nominal prevalence used to standardize a binary feature. Binary I
/// features have no declared prevalence, so 0.5 is used.
fn binary_mean(f: &GenFeature) -> f64 {
    if f.partition == PartitionTag::Indirect {
        0.5
    } else {
        f.mean
    }
}

fn clamp_raw(f: &GenFeature, v: f64) -> f64 {
    v.clamp(f.lower.unwrap_or(f64::NEG_INFINITY), f.upper.unwrap_or(f64::INFINITY))
}

fn calibrate(sampler: &Sampler<'_>, truth: &mut GroundTruth) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.spec.seed ^ 0xca11_b4a7);
    let mut etas = Vec::with_capacity(CALIBRATION_SAMPLES);
    for _ in 0..CALIBRATION_SAMPLES {
        let person = sampler.person(&mut rng);
        let x = Array1::from_vec(sampler.observe(&person, &mut rng));
        let z = truth.standardize(x.view())?;
        etas.push(z.iter().zip(&truth.weights).map(|(a, b)| a * b).sum::<f64>());
    }
    let rate = |b: f64| etas.iter().map(|e| sigmoid(b + e)).sum::<f64>() / etas.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < sampler.spec.event_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    truth.intercept = 0.5 * (lo + hi);
    Ok(())
}

pub fn ground_truth(spec: &GeneratorSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let sampler = Sampler::new(spec);
    let mut truth = GroundTruth {
        names: spec.features.iter().map(|f| f.name.clone()).collect(),
        means: (0..spec.features.len()).map(|j| sampler.mean(j)).collect(),
        scales: sampler.scales.clone(),
        weights: spec.features.iter().map(|f| f.risk_weight).collect(),
        intercept: 0.0,
    };
    calibrate(&sampler, &mut truth)?;
    Ok(truth)
}

pub fn generate(spec: &GeneratorSpec) -> Result<Cohort> {
    Ok(generate_with_truth(spec)?.0)
}

pub fn generate_with_truth(spec: &GeneratorSpec) -> Result<(Cohort, GroundTruth)> {
    let truth = ground_truth(spec)?;
    let sampler = Sampler::new(spec);
    let config = spec.cohort_config();
    let (schema, partition, cost_model, bounds) = config.resolve()?;
    let p = spec.features.len();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut people: Vec<(String, Person)> = (0..spec.n1)
        .map(|i| (format!("p{i:05}"), sampler.person(&mut rng)))
        .collect();
    let mut visits = Vec::with_capacity(spec.visits);
    for v in 1..=spec.visits {
        if v > 1 {
            for (_, person) in people.iter_mut() {
                sampler.step(person, &mut rng);
            }
        }
        let missing: HashSet<usize> = spec
            .missing_at(v)
            .iter()
            .map(|n| spec.index_of(n).expect("validated"))
            .collect();
        let present: Vec<usize> = (0..p).filter(|j| !missing.contains(j)).collect();
        let mut x = Array2::<f64>::zeros((people.len(), present.len()));
        let mut y = Vec::with_capacity(people.len());
        for (i, (_, person)) in people.iter().enumerate() {
            let full = Array1::from_vec(sampler.observe(person, &mut rng));
            let risk = truth.risk(full.view())?;
            y.push(u8::from(rng.random::<f64>() < risk));
            for (c, &j) in present.iter().enumerate() {
                x[[i, c]] = full[j];
            }
        }
        visits.push(VisitDataset {
            visit: v,
            ids: people.iter().map(|(id, _)| id.clone()).collect(),
            x,
            y_next: y.clone(),
            present,
        });
        let mut keep = y.iter().map(|&yi| yi == 0);
        people.retain(|_| keep.next().unwrap());
    }
    let cohort = Cohort::new(schema, partition, visits, cost_model, bounds)?;
    Ok((cohort, truth))
}

/// Generates a cohort and writes it in the loadable directory format.
pub fn generate_to_dir(spec: &GeneratorSpec, dir: &Path) -> Result<Cohort> {
    let cohort = generate(spec)?;
    write_cohort_dir(dir, &cohort)?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        let spec = default_spec();
        spec.validate().unwrap();
        assert_eq!(spec.features.len(), 24);
        let parsed = GeneratorSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn nested_missingness_violation_names_feature() {
        let mut spec = default_spec();
        spec.missing[1].retain(|n| n != "waist");
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("waist"), "{err}");
    }

    #[test]
    fn degenerate_event_rates_rejected() {
        for rate in [0.0, 1.0] {
            let spec = GeneratorSpec {
                event_rate: rate,
                ..default_spec()
            };
            assert!(spec.validate().is_err());
        }
    }
}
