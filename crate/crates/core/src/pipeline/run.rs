use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::experiments::{experiment1, experiment2, experiment3, Experiment1Config, Experiment3Config};
use super::report::ExperimentReport;
use super::train::{train_all, ModelConfig, TrainedModels};
use crate::cohort::{load_cohort_dir, Cohort};
use crate::error::{Error, Result};
use crate::inverse_opt::{cost_value, Bounds, CostModel};
use crate::synth::{default_spec, generate, GeneratorSpec};

pub const EXPERIMENTS: [u8; 3] = [1, 2, 3];
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_SNAPSHOT: &str = "run.toml";

/// A cost that reads either a number or `"locked"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostValue(#[serde(with = "cost_value")] pub f64);

/// Per-feature cost override: one value for both directions or a split pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostOverride {
    Both(CostValue),
    Split {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        up: Option<CostValue>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        down: Option<CostValue>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

/// Cost and bound changes keyed by direct-feature name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Overrides {
    pub costs: BTreeMap<String, CostOverride>,
    pub bounds: BTreeMap<String, BoundOverride>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.costs.is_empty() && self.bounds.is_empty()
    }

    fn position(cohort: &Cohort, name: &str) -> Result<usize> {
        let f = cohort
            .schema
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown feature {name:?}")))?;
        cohort
            .partition
            .direct
            .iter()
            .position(|&d| d == f)
            .ok_or_else(|| Error::Config(format!("feature {name:?} is not directly changeable")))
    }

    /// The cohort's cost model and bounds with these overrides applied.
    pub fn apply(&self, cohort: &Cohort) -> Result<(CostModel, Bounds)> {
        let mut up = cohort.cost_model.up.clone();
        let mut down = cohort.cost_model.down.clone();
        for (name, o) in &self.costs {
            let j = Self::position(cohort, name)?;
            match *o {
                CostOverride::Both(c) => {
                    up[j] = c.0;
                    down[j] = c.0;
                }
                CostOverride::Split { up: u, down: d } => {
                    if let Some(u) = u {
                        up[j] = u.0;
                    }
                    if let Some(d) = d {
                        down[j] = d.0;
                    }
                }
            }
        }
        let mut lower = cohort.bounds.lower.clone();
        let mut upper = cohort.bounds.upper.clone();
        for (name, o) in &self.bounds {
            let j = Self::position(cohort, name)?;
            lower[j] = o.lower.unwrap_or(lower[j]);
            upper[j] = o.upper.unwrap_or(upper[j]);
        }
        let costs = CostModel::new(up, down).map_err(|e| Error::Config(e.to_string()))?;
        let bounds = Bounds::new(lower, upper).map_err(|e| Error::Config(e.to_string()))?;
        Ok((costs, bounds))
    }
}

/// Where the cohort comes from. `"default"` is the built-in generator
/// seeded with the run seed; any other string is a generator spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSource {
    Named(String),
    Inline(Box<GeneratorSpec>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub experiments: Vec<u8>,
    /// Directory written by `generate` (or laid out the same way).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSource>,
    pub model: ModelConfig,
    #[serde(flatten)]
    pub overrides: Overrides,
    /// Budgets swept per held-out patient at visit 1 in experiment 3.
    pub budgets: Vec<f64>,
    pub experiment1: Experiment1Config,
    pub experiment3: Experiment3Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            out: None,
            experiments: EXPERIMENTS.to_vec(),
            cohort: None,
            generator: Some(GeneratorSource::Named("default".into())),
            model: ModelConfig::default(),
            overrides: Overrides::default(),
            budgets: vec![0.0, 1.0, 2.0, 4.0],
            experiment1: Experiment1Config::default(),
            experiment3: Experiment3Config::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative cohort/generator paths against
    /// its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &cfg.cohort {
            if c.is_relative() {
                cfg.cohort = Some(base.join(c));
            }
        }
        if let Some(GeneratorSource::Named(name)) = &cfg.generator {
            if name != "default" && Path::new(name).is_relative() {
                cfg.generator = Some(GeneratorSource::Named(base.join(name).to_string_lossy().into()));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.cohort, &self.generator) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either `cohort` or `generator`, not both".into()))
            }
            (None, None) => return Err(Error::Config("one of `cohort` or `generator` is required".into())),
            _ => {}
        }
        if let Some(bad) = self.experiments.iter().find(|e| !EXPERIMENTS.contains(e)) {
            return Err(Error::Config(format!("unknown experiment {bad}; choose from 1, 2, 3")));
        }
        if self.budgets.windows(2).any(|w| !(w[0] <= w[1])) || self.budgets.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config("budgets must be non-negative and ascending".into()));
        }
        if !(0.0..1.0).contains(&self.model.test_fraction) {
            return Err(Error::Config(format!(
                "test fraction must lie in [0, 1), got {}",
                self.model.test_fraction
            )));
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> Result<Option<GeneratorSpec>> {
        Ok(match &self.generator {
            None => None,
            Some(GeneratorSource::Named(name)) if name == "default" => {
                Some(GeneratorSpec { seed: self.seed, ..default_spec() })
            }
            Some(GeneratorSource::Named(path)) => Some(GeneratorSpec::from_path(Path::new(path))?),
            Some(GeneratorSource::Inline(spec)) => Some((**spec).clone()),
        })
    }

    /// The cohort with this config's cost and bound overrides applied.
    pub fn load_cohort(&self) -> Result<Cohort> {
        self.validate()?;
        let mut cohort = match (&self.cohort, self.generator_spec()?) {
            (Some(dir), _) => load_cohort_dir(dir)?,
            (None, Some(spec)) => {
                spec.validate()?;
                generate(&spec)?
            }
            (None, None) => unreachable!("validated above"),
        };
        if !self.overrides.is_empty() {
            let (costs, bounds) = self.overrides.apply(&cohort)?;
            cohort.cost_model = costs;
            cohort.bounds = bounds;
        }
        Ok(cohort)
    }

    pub fn train(&self, cohort: &Cohort) -> Result<TrainedModels> {
        train_all(cohort, &self.model, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub reports: Vec<ExperimentReport>,
}

#[derive(Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

/// Loads or generates the cohort, trains, runs the selected experiments and
/// writes `experiment{n}/` under `dir`. Wall-clock times go to a separate
/// file so the reports stay byte-reproducible.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut timing = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, timing: &mut Vec<Timing>| {
        timing.push(Timing {
            stage: stage.into(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };
    let cohort = cfg.load_cohort()?;
    lap("cohort", &mut timing);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    std::fs::write(&snapshot, cfg.to_toml()?).map_err(|e| Error::io(&snapshot, e))?;

    let mut experiments = cfg.experiments.clone();
    experiments.sort_unstable();
    experiments.dedup();
    let models = if experiments.iter().any(|&e| e != 1) {
        let m = cfg.train(&cohort)?;
        lap("train", &mut timing);
        Some(m)
    } else {
        None
    };
    let mut reports = Vec::new();
    for e in experiments {
        let report = match e {
            1 => experiment1(&cohort, &cfg.experiment1, &cfg.model, cfg.seed)?,
            2 => experiment2(&cohort, models.as_ref().expect("trained"), cfg.seed)?,
            _ => {
                let mut exp3 = experiment3(&cohort, models.as_ref().expect("trained"), &cfg.experiment3, cfg.seed)?;
                if !cfg.budgets.is_empty() {
                    super::experiments::attach_sweep(&mut exp3, &cohort, models.as_ref().expect("trained"), &cfg.budgets)?;
                }
                exp3
            }
        };
        report.write(&dir.join(format!("experiment{e}")))?;
        lap(&format!("experiment{e}"), &mut timing);
        reports.push(report);
    }
    let path = dir.join(TIMING_FILE);
    let text = serde_json::to_string_pretty(&timing)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        reports,
    })
}
