use std::path::{Path, PathBuf};

use gdp_dro::capacity::{EstimationParams, TimeFormat, INTERVAL_MINUTES};
use gdp_dro::maghp::{BuildOptions, Costs};
use gdp_dro::prediction::{PredictorKind, TrainConfig};
use gdp_dro::scenario::{TreeConfig, DEFAULT_MAX_SCENARIOS};
use gdp_dro::solver::SolveOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Input and output locations. Relative paths resolve against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    /// Labeled feature rows for training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Flights and connections without capacity data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    pub model_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            records: None,
            dataset: None,
            schedule: None,
            instance: None,
            predictions: None,
            model_dir: "models".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub intervals: usize,
    pub interval_minutes: u32,
    pub time_format: TimeFormat,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            intervals: 48,
            interval_minutes: INTERVAL_MINUTES,
            time_format: TimeFormat::EpochMinutes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub ground: f64,
    /// Airborne over ground holding cost.
    pub ratio: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { ground: 1.0, ratio: 3.0 }
    }
}

impl CostConfig {
    pub fn costs(&self) -> Costs {
        Costs {
            ground: self.ground,
            airborne: self.ground * self.ratio,
            recourse: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub kind: PredictorKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_capacity: Option<u32>,
    /// Coverage level of the tolerance intervals.
    pub level: f64,
    /// Day whose test rows become the predicted series; the first test day if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub day: Option<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: t.kind,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_capacity: None,
            level: 0.9,
            day: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of time-cluster boundaries.
    pub change_points: usize,
    pub k_per_stage: usize,
    pub max_scenarios: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            change_points: 1,
            k_per_stage: 2,
            max_scenarios: DEFAULT_MAX_SCENARIOS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub levels: Vec<f64>,
    pub variability_cap: f64,
    pub sample_count: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            levels: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            variability_cap: 1.0,
            sample_count: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub time_limit: f64,
    pub mip_rel_gap: f64,
    pub threads: u32,
    pub pin_initial_recourse: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolveOptions::default();
        Self {
            time_limit: s.time_limit,
            mip_rel_gap: s.mip_rel_gap,
            threads: s.threads,
            pin_initial_recourse: BuildOptions::default().pin_initial_recourse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for training, tree compression, sampling and the solver.
    pub seed: u64,
    /// Label written into report rows.
    pub day: String,
    pub epsilons: Vec<f64>,
    pub paths: Paths,
    pub horizon: HorizonConfig,
    pub costs: CostConfig,
    pub estimation: EstimationParams,
    pub training: TrainingConfig,
    pub scenarios: ScenarioConfig,
    pub reduction: ReductionConfig,
    pub solver: SolverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            day: "day".into(),
            epsilons: (0..=10).map(|i| i as f64 / 100.0).collect(),
            paths: Paths::default(),
            horizon: HorizonConfig::default(),
            costs: CostConfig::default(),
            estimation: EstimationParams::default(),
            training: TrainingConfig::default(),
            scenarios: ScenarioConfig::default(),
            reduction: ReductionConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and anchors its relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.paths.anchor(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.estimation;
        check(e.alpha > 0.0 && e.alpha <= 1.0, || format!("estimation.alpha {} outside (0, 1]", e.alpha))?;
        check(e.delay_threshold >= 0.0, || "estimation.delay_threshold is negative".into())?;
        check(self.horizon.intervals > 0, || "horizon.intervals must be positive".into())?;
        check(self.horizon.interval_minutes == INTERVAL_MINUTES, || {
            format!("horizon.interval_minutes must be {INTERVAL_MINUTES}")
        })?;
        let c = &self.costs;
        check(c.ground > 0.0 && c.ratio >= 1.0, || {
            format!("costs need ground > 0 and ratio >= 1, got {} and {}", c.ground, c.ratio)
        })?;
        let t = &self.training;
        check(t.level > 0.0 && t.level <= 1.0, || format!("training.level {} outside (0, 1]", t.level))?;
        check(t.learning_rate > 0.0 && t.batch_size > 0, || "training needs a positive learning rate and batch size".into())?;
        check(self.scenarios.k_per_stage > 0, || "scenarios.k_per_stage must be positive".into())?;
        let r = &self.reduction;
        check(r.levels.iter().all(|l| (0.0..1.0).contains(l)), || "reduction.levels must lie in [0, 1)".into())?;
        check(r.variability_cap >= 0.0, || "reduction.variability_cap is negative".into())?;
        check(r.sample_count > 0, || "reduction.sample_count must be positive".into())?;
        check(
            !self.epsilons.is_empty() && self.epsilons.iter().all(|e| *e >= 0.0 && e.is_finite()),
            || "epsilons must be a non-empty list of non-negative numbers".into(),
        )?;
        check(self.solver.time_limit > 0.0, || "solver.time_limit must be positive".into())?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            kind: t.kind,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            max_capacity: t.max_capacity,
        }
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            k_per_stage: self.scenarios.k_per_stage,
            seed: self.seed,
            max_scenarios: self.scenarios.max_scenarios,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            time_limit: self.solver.time_limit,
            mip_rel_gap: self.solver.mip_rel_gap,
            threads: self.solver.threads,
            seed: self.seed,
            ..SolveOptions::default()
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            pin_initial_recourse: self.solver.pin_initial_recourse,
        }
    }
}

impl Paths {
    fn anchor(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.records,
            &mut self.dataset,
            &mut self.schedule,
            &mut self.instance,
            &mut self.predictions,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.model_dir);
        join(&mut self.out_dir);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn edited_config_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 42;
        cfg.paths.records = Some("data/records.csv".into());
        cfg.training.kind = PredictorKind::Empirical;
        cfg.training.max_capacity = Some(12);
        cfg.horizon.time_format = TimeFormat::Iso8601 {
            horizon_start: "2019-11-13T09:00:00".into(),
        };
        cfg.epsilons = vec![0.0, 0.05];
        let text = cfg.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[costs]\nratio = 2.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.costs.costs().airborne, 2.0);
        assert_eq!(cfg.horizon.intervals, 48);
    }

    #[test]
    fn rejects_out_of_range_values() {
        for text in [
            "[estimation]\nalpha = 1.5\n",
            "[costs]\nratio = 0.5\n",
            "epsilons = [-0.1]\n",
            "[reduction]\nlevels = [1.0]\n",
            "[horizon]\ninterval_minutes = 30\n",
            "unknown = 1\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[paths]\nrecords = \"r.csv\"\nout_dir = \"/abs\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.records.unwrap(), dir.path().join("r.csv"));
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/abs"));
        assert_eq!(cfg.paths.model_dir, dir.path().join("models"));
    }
}
