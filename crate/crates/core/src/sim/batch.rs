//! Batches of simulated harvests with seeded fruit sizes, aggregated into a
//! damage-rate table and detachment-force margins.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::PlantConfig;
use super::scenario::{
    calibrate_plant, run_with_grasp, FruitSpec, PullSpec, Scenario, ScenarioError, ScenarioParseError,
};
use crate::bus::BusConfig;
use crate::controller::{GraspConfig, GraspResult};
use crate::telemetry::{margin_report, rate_table, FruitClass, HarvestLog, HarvestRecord, MarginReport, RateTable};

pub const BATCH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub class: FruitClass,
    pub count: u32,
    pub mean_mm: f64,
    #[serde(default)]
    pub std_mm: f64,
    #[serde(default = "min_mm")]
    pub min_mm: f64,
    #[serde(default = "max_mm")]
    pub max_mm: f64,
    /// Overrides the plant's fruit damage force for this class, N.
    #[serde(default)]
    pub damage_force: Option<f64>,
    /// Overrides the plant's stem force for this class, N.
    #[serde(default)]
    pub stem_force: Option<f64>,
}

fn min_mm() -> f64 {
    21.0
}

fn max_mm() -> f64 {
    51.0
}

fn default_pull() -> Option<PullSpec> {
    Some(PullSpec {
        target: 10.0,
        ramp: 5.0,
        delay_ms: 200,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub grasp: GraspConfig,
    #[serde(default)]
    pub bus: BusConfig,
    #[serde(default = "default_pull")]
    pub pull: Option<PullSpec>,
    #[serde(default, rename = "group")]
    pub groups: Vec<GroupSpec>,
}

impl BatchSpec {
    pub fn parse(text: &str) -> Result<Self, ScenarioParseError> {
        let spec: BatchSpec = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ScenarioParseError {
                line,
                column: None,
                field: None,
                message: e.message().to_string(),
            }
        })?;
        if spec.schema_version != BATCH_SCHEMA_VERSION {
            return Err(ScenarioParseError {
                line: None,
                column: None,
                field: Some("schema_version".into()),
                message: format!("unsupported version {}", spec.schema_version),
            });
        }
        for (i, g) in spec.groups.iter().enumerate() {
            if !(g.mean_mm > 0.0 && g.std_mm >= 0.0 && g.min_mm <= g.max_mm) {
                return Err(ScenarioParseError {
                    line: None,
                    column: None,
                    field: Some(format!("group[{i}]")),
                    message: "need mean_mm > 0, std_mm >= 0 and min_mm <= max_mm".into(),
                });
            }
        }
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text)?)
    }

    /// 23 medium and 33 small tomatoes at their measured mean diameters.
    pub fn tomato_harvest() -> Self {
        Self {
            schema_version: BATCH_SCHEMA_VERSION,
            seed: 56,
            plant: PlantConfig::default(),
            grasp: GraspConfig::default(),
            bus: BusConfig::default(),
            pull: default_pull(),
            groups: vec![
                GroupSpec {
                    class: FruitClass::Medium,
                    count: 23,
                    mean_mm: 43.6,
                    std_mm: 3.0,
                    min_mm: min_mm(),
                    max_mm: max_mm(),
                    damage_force: Some(15.0),
                    stem_force: None,
                },
                GroupSpec {
                    class: FruitClass::Small,
                    count: 33,
                    mean_mm: 24.3,
                    std_mm: 2.0,
                    min_mm: min_mm(),
                    max_mm: max_mm(),
                    damage_force: Some(12.0),
                    stem_force: None,
                },
            ],
        }
    }

    /// One scenario per fruit, sizes drawn from the seeded generator.
    pub fn expand(&self) -> Vec<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for g in &self.groups {
            let normal = Normal::new(g.mean_mm, g.std_mm).ok();
            for i in 0..g.count {
                let d = normal.map_or(g.mean_mm, |n| n.sample(&mut rng)).clamp(g.min_mm, g.max_mm);
                let mut plant = self.plant.clone();
                plant.seed = self.seed.wrapping_add(out.len() as u64);
                let fruit = plant.fruit.get_or_insert_with(Default::default);
                fruit.diameter = d / 1000.0;
                if let Some(f) = g.damage_force {
                    fruit.damage_force = f;
                }
                if let Some(f) = g.stem_force {
                    fruit.stem_force = f;
                }
                out.push(Scenario {
                    name: format!("{}-{:02}", g.class.name(), i + 1),
                    plant,
                    grasp: self.grasp.clone(),
                    bus: self.bus.clone(),
                    fruit: FruitSpec {
                        class: g.class,
                        present: true,
                    },
                    pull: self.pull.clone(),
                    ..Scenario::default()
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchRun {
    pub name: String,
    pub class: FruitClass,
    pub diameter_mm: f64,
    /// Threshold this fruit is judged against, N.
    pub damage_force: f64,
    pub outcome: Result<HarvestRecord, String>,
    pub peak_contact_force: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub calibration_rev: Option<f64>,
    pub runs: Vec<BatchRun>,
    pub rates: RateTable,
    pub margins: Vec<(FruitClass, MarginReport)>,
    /// Runs that ended in an error or without a secured harvest.
    pub failures: Vec<String>,
}

impl BatchReport {
    pub fn damaged(&self) -> u64 {
        self.rates.damaged()
    }

    pub fn violations(&self) -> usize {
        self.margins.iter().map(|(_, m)| m.violations).sum()
    }

    /// Clean: every fruit harvested, none damaged, no margin violations.
    pub fn clean(&self) -> bool {
        self.failures.is_empty() && self.damaged() == 0 && self.violations() == 0
    }
}

impl fmt::Display for BatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} harvests", self.runs.len())?;
        write!(f, "{}", self.rates)?;
        for (class, m) in &self.margins {
            writeln!(f, "\n[{}]", class.name())?;
            writeln!(f, "{m}")?;
        }
        for e in &self.failures {
            writeln!(f, "FAILED {e}")?;
        }
        Ok(())
    }
}

/// Run every fruit of the batch. Failures are collected, not fatal.
pub fn run_batch(spec: &BatchSpec) -> Result<BatchReport, ScenarioError> {
    let scenarios = spec.expand();
    if scenarios.is_empty() {
        return Ok(BatchReport {
            calibration_rev: None,
            runs: Vec::new(),
            rates: RateTable::default(),
            margins: Vec::new(),
            failures: Vec::new(),
        });
    }
    let mut grasp = spec.grasp.clone();
    let calibration_rev = match grasp.empty_closure_position_rev {
        Some(_) => None,
        None => {
            let t = calibrate_plant(&spec.plant, &grasp, &spec.bus)?;
            grasp.empty_closure_position_rev = Some(t);
            Some(t)
        }
    };

    let mut runs = Vec::new();
    let mut logs: Vec<(FruitClass, f64, HarvestLog)> = Vec::new();
    let mut failures = Vec::new();
    for s in &scenarios {
        let fruit = s.plant.fruit.clone().unwrap_or_default();
        let mut run = BatchRun {
            name: s.name.clone(),
            class: s.fruit.class,
            diameter_mm: fruit.diameter * 1000.0,
            damage_force: fruit.damage_force,
            outcome: Err(String::new()),
            peak_contact_force: None,
        };
        match run_with_grasp(s, grasp.clone(), calibration_rev) {
            Ok(r) => {
                run.peak_contact_force = r.samples.iter().filter_map(|x| x.contact_force).reduce(f64::max);
                if let Some(e) = &r.error {
                    failures.push(format!("{}: {e}", s.name));
                } else if r.record.outcome != GraspResult::Secured || !r.record.harvested {
                    failures.push(format!("{}: {:?}, harvested {}", s.name, r.record.outcome, r.record.harvested));
                }
                logs.push((
                    s.fruit.class,
                    fruit.damage_force,
                    HarvestLog {
                        id: s.name.clone(),
                        samples: r.samples,
                    },
                ));
                run.outcome = Ok(r.record);
            }
            Err(e) => {
                failures.push(format!("{}: {e}", s.name));
                run.outcome = Err(e.to_string());
            }
        }
        runs.push(run);
    }

    let records: Vec<HarvestRecord> = runs.iter().filter_map(|r| r.outcome.clone().ok()).collect();
    let mut margins = Vec::new();
    let mut classes: Vec<FruitClass> = logs.iter().map(|(c, _, _)| *c).collect();
    classes.sort();
    classes.dedup();
    for class in classes {
        let group: Vec<&(FruitClass, f64, HarvestLog)> = logs.iter().filter(|(c, _, _)| *c == class).collect();
        let threshold = group.iter().map(|(_, t, _)| *t).fold(f64::INFINITY, f64::min);
        let harvests: Vec<HarvestLog> = group.into_iter().map(|(_, _, l)| l.clone()).collect();
        match margin_report(&harvests, threshold, None) {
            Ok(m) => margins.push((class, m)),
            Err(e) => failures.push(format!("{} margins: {e}", class.name())),
        }
    }
    Ok(BatchReport {
        calibration_rev,
        runs,
        rates: rate_table(&records),
        margins,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_is_seeded_and_clamped() {
        let spec = BatchSpec::tomato_harvest();
        let a = spec.expand();
        let b = spec.expand();
        assert_eq!(a.len(), 56);
        assert_eq!(a, b);
        for s in &a {
            let d = s.plant.fruit.as_ref().unwrap().diameter * 1000.0;
            assert!((21.0..=51.0).contains(&d), "{d}");
        }
        assert_eq!(a.iter().filter(|s| s.fruit.class == FruitClass::Small).count(), 33);
    }

    #[test]
    fn empty_batch_is_clean() {
        let spec = BatchSpec::parse("schema_version = 1\n").unwrap();
        let r = run_batch(&spec).unwrap();
        assert!(r.runs.is_empty());
        assert!(r.clean());
    }

    #[test]
    fn parses_groups() {
        let text = r#"
schema_version = 1
seed = 3

[[group]]
class = "Medium"
count = 2
mean_mm = 43.6
std_mm = 1.0
"#;
        let spec = BatchSpec::parse(text).unwrap();
        assert_eq!(spec.groups.len(), 1);
        assert!(spec.pull.is_some());
        assert!(BatchSpec::parse("schema_version = 1\n[[group]]\nclass = \"Medium\"\n").is_err());
    }
}
