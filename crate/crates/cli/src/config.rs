//! Run configuration: one TOML file naming terrains, archetypes and every
//! tunable constant of the pipeline.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use feasnav::evaluator::{experiment_params, ExecConfig, TrainSetup, TrainingTerrain};
use feasnav::oracle::{Capabilities, LabelConfig};
use feasnav::tensorizer::OodThresholds;
use feasnav::terrain::{TerrainFamily, TerrainParams, TerrainSpec};
use feasnav::{ArchetypeKind, PolicyArchetype, TrainConfig, DIRECTIONS};
use serde::{Deserialize, Serialize};

/// Archetype table used when a config declares none.
const DEFAULT_ARCHETYPES: &str = include_str!("archetypes.toml");

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub constants: Constants,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub tensorizer: OodThresholds,
    pub planner: PlannerConfig,
    pub evaluate: EvaluateConfig,
    pub terrain: Vec<TerrainEntry>,
    pub archetype: Vec<ArchetypeEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            constants: Constants::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            tensorizer: OodThresholds::default(),
            planner: PlannerConfig::default(),
            evaluate: EvaluateConfig::default(),
            terrain: default_terrains(),
            archetype: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Heading channels; the network and file formats support only 8.
    pub directions: usize,
    pub reward_sigma: f64,
    pub tracking_noise_sigma: f64,
}

impl Default for Constants {
    fn default() -> Self {
        let labels = LabelConfig::default();
        Self {
            directions: DIRECTIONS,
            reward_sigma: labels.reward_sigma,
            tracking_noise_sigma: labels.tracking_noise_sigma,
        }
    }
}

impl Constants {
    pub fn labels(&self) -> LabelConfig {
        LabelConfig {
            reward_sigma: self.reward_sigma,
            tracking_noise_sigma: self.tracking_noise_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub samples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { samples: 5000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub f_min: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { f_min: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Executions per planned task.
    pub trials: usize,
    /// Start/goal pairs per map in the coordination experiment.
    pub tasks: usize,
    pub skill_levels: Vec<f64>,
    /// Samples per network in the adaptation experiment.
    pub adaptation_samples: usize,
    /// Samples per network in the coordination experiment.
    pub mixed_samples: usize,
    pub training_terrain: TrainingTerrain,
    pub exec: ExecConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            tasks: 10,
            skill_levels: vec![0.25, 0.5, 1.0],
            adaptation_samples: 5000,
            mixed_samples: 20_000,
            training_terrain: TrainingTerrain::Shared,
            exec: ExecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainEntry {
    pub name: String,
    pub family: TerrainFamily,
    /// (length along x, width along y) in meters.
    pub extent: (f64, f64),
    /// Defaults to the global seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: TerrainParams,
}

impl TerrainEntry {
    pub fn spec(&self, global_seed: u64) -> TerrainSpec {
        TerrainSpec::new(self.family, self.extent)
            .with_params(self.params.clone())
            .with_seed(self.seed.unwrap_or(global_seed))
    }
}

fn default_terrains() -> Vec<TerrainEntry> {
    let entry = |name: &str, family, extent| TerrainEntry {
        name: name.into(),
        family,
        extent,
        seed: None,
        params: experiment_params(),
    };
    vec![
        entry("flat", TerrainFamily::Flat, (3.0, 3.0)),
        entry("steps", TerrainFamily::Steps, (6.0, 2.5)),
        entry("gaps", TerrainFamily::Gaps, (6.0, 2.5)),
        entry("bridge", TerrainFamily::Bridge, (6.0, 2.5)),
        entry("valley", TerrainFamily::Valley, (6.0, 2.5)),
        entry("mixed", TerrainFamily::Mixed, (16.0, 2.5)),
    ]
}

/// Partial capability override; unset limits keep the kind's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapsOverride {
    pub max_step_up: Option<f64>,
    pub max_step_down: Option<f64>,
    pub max_gap: Option<f64>,
    pub min_support_width: Option<f64>,
    pub max_lateral_slope_deg: Option<f64>,
}

impl CapsOverride {
    fn apply(&self, mut caps: Capabilities) -> Capabilities {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut caps.max_step_up, self.max_step_up);
        set(&mut caps.max_step_down, self.max_step_down);
        set(&mut caps.max_gap, self.max_gap);
        set(&mut caps.min_support_width, self.min_support_width);
        set(&mut caps.max_lateral_slope, self.max_lateral_slope_deg.map(f64::to_radians));
        caps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeEntry {
    pub name: String,
    pub id: usize,
    pub kind: ArchetypeKind,
    #[serde(default = "full_skill")]
    pub skill_level: f64,
    #[serde(default)]
    pub caps: CapsOverride,
    /// Terrain entries sampled for training; empty means all of them except
    /// the Mixed composite.
    #[serde(default)]
    pub train_on: Vec<String>,
}

fn full_skill() -> f64 {
    1.0
}

impl ArchetypeEntry {
    pub fn archetype(&self) -> PolicyArchetype {
        let mut a = PolicyArchetype::new(self.id, self.kind).with_skill(self.skill_level);
        a.caps = self.caps.apply(a.caps);
        a
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchetypeTable {
    archetype: Vec<ArchetypeEntry>,
}

pub fn default_archetypes() -> Vec<ArchetypeEntry> {
    toml::from_str::<ArchetypeTable>(DEFAULT_ARCHETYPES)
        .expect("embedded archetype table parses")
        .archetype
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if cfg.archetype.is_empty() {
            cfg.archetype = default_archetypes();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.constants.directions != DIRECTIONS {
            return bad(format!("constants.directions must be {DIRECTIONS}, got {}", self.constants.directions));
        }
        self.constants.labels().validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.dataset.samples == 0 {
            return bad("dataset.samples must be at least 1");
        }
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.tensorizer.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !(self.planner.f_min > 0.0 && self.planner.f_min <= 1.0) {
            return bad(format!("planner.f_min {} outside (0, 1]", self.planner.f_min));
        }
        let ev = &self.evaluate;
        if ev.trials == 0 || ev.tasks == 0 || ev.adaptation_samples == 0 || ev.mixed_samples == 0 {
            return bad("evaluate trials, tasks and sample counts must be at least 1");
        }
        if ev.skill_levels.is_empty() || ev.skill_levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("evaluate.skill_levels must be non-empty and strictly increasing");
        }
        if ev.skill_levels.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("evaluate.skill_levels must lie in [0, 1]");
        }
        if !(ev.exec.success_margin >= 0.0 && ev.exec.success_margin < 1.0) || ev.exec.budget_factor == 0 {
            return bad("evaluate.exec needs success_margin in [0, 1) and budget_factor >= 1");
        }

        let mut names = HashSet::new();
        for t in &self.terrain {
            if !names.insert(t.name.as_str()) {
                return bad(format!("duplicate terrain name `{}`", t.name));
            }
            t.spec(self.seed)
                .validate()
                .map_err(|e| ConfigError(format!("terrain `{}`: {e}", t.name)))?;
        }
        let mut ids = HashSet::new();
        let mut arch_names = HashSet::new();
        for a in &self.archetype {
            if !ids.insert(a.id) {
                return bad(format!("duplicate archetype id {}", a.id));
            }
            if !arch_names.insert(a.name.as_str()) {
                return bad(format!("duplicate archetype name `{}`", a.name));
            }
            a.archetype()
                .validate()
                .map_err(|e| ConfigError(format!("archetype `{}`: {e}", a.name)))?;
            for t in &a.train_on {
                if !names.contains(t.as_str()) {
                    return bad(format!("archetype `{}` trains on unknown terrain `{t}`", a.name));
                }
            }
        }
        Ok(())
    }

    pub fn terrain(&self, name: &str) -> Result<&TerrainEntry, ConfigError> {
        self.terrain.iter().find(|t| t.name == name).ok_or_else(|| {
            let known: Vec<_> = self.terrain.iter().map(|t| t.name.as_str()).collect();
            ConfigError(format!("unknown terrain `{name}` (config defines: {})", known.join(", ")))
        })
    }

    /// Looks an archetype up by name or numeric id.
    pub fn archetype(&self, key: &str) -> Result<&ArchetypeEntry, ConfigError> {
        self.archetype
            .iter()
            .find(|a| a.name == key || key.parse() == Ok(a.id))
            .ok_or_else(|| {
                let known: Vec<_> = self.archetype.iter().map(|a| a.name.as_str()).collect();
                ConfigError(format!("unknown archetype `{key}` (config defines: {})", known.join(", ")))
            })
    }

    pub fn training_specs(&self, entry: &ArchetypeEntry) -> Result<Vec<TerrainSpec>, ConfigError> {
        let specs: Vec<TerrainSpec> = if entry.train_on.is_empty() {
            self.terrain
                .iter()
                .filter(|t| t.family != TerrainFamily::Mixed)
                .map(|t| t.spec(self.seed))
                .collect()
        } else {
            entry
                .train_on
                .iter()
                .map(|n| self.terrain(n).map(|t| t.spec(self.seed)))
                .collect::<Result<_, _>>()?
        };
        if specs.is_empty() {
            return bad(format!("archetype `{}` has no training terrain", entry.name));
        }
        Ok(specs)
    }

    /// Dataset, initialization and optimizer settings for one archetype.
    pub fn train_setup(&self, entry: &ArchetypeEntry) -> TrainSetup {
        TrainSetup {
            samples: self.dataset.samples,
            init_seed: self.seed.wrapping_add(entry.id as u64),
            data_seed: self.seed.wrapping_add(1000 + entry.id as u64),
            labels: self.constants.labels(),
            train: self.train,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.archetype.len(), 5);
        assert_eq!(cfg.archetype[1].kind, ArchetypeKind::GapsExpert);
        assert_eq!(cfg.tensorizer, OodThresholds::default());
        assert_eq!(cfg.constants.directions, 8);
    }

    #[test]
    fn embedded_archetypes_match_kind_defaults() {
        for (id, a) in default_archetypes().iter().enumerate() {
            assert_eq!(a.archetype(), PolicyArchetype::new(id, ArchetypeKind::ALL[id]));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rat = 0.1").is_err());
    }

    #[test]
    fn ranges_are_checked() {
        assert!(RunConfig::parse("[planner]\nf_min = 0.0").is_err());
        assert!(RunConfig::parse("[evaluate]\ntrials = 0").is_err());
        assert!(RunConfig::parse("[constants]\ndirections = 4").is_err());
        assert!(RunConfig::parse("[tensorizer]\ntau_low = 3.0").is_err());
    }

    #[test]
    fn caps_override_and_lookup() {
        let cfg = RunConfig::parse(
            r#"
            [[terrain]]
            name = "f"
            family = "flat"
            extent = [2.0, 2.0]

            [[archetype]]
            name = "climber"
            id = 3
            kind = "steps_expert"
            caps = { max_step_up = 0.2, max_lateral_slope_deg = 30.0 }
            train_on = ["f"]
            "#,
        )
        .unwrap();
        let a = cfg.archetype("climber").unwrap().archetype();
        assert_eq!(a.caps.max_step_up, 0.2);
        assert!((a.caps.max_lateral_slope - 30f64.to_radians()).abs() < 1e-15);
        assert_eq!(cfg.archetype("3").unwrap().name, "climber");
        assert!(cfg.archetype("nope").is_err());
        assert!(RunConfig::parse("[[archetype]]\nname='a'\nid=0\nkind='general'\ntrain_on=['missing']").is_err());
    }
}
