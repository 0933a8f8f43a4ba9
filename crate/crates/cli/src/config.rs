//! Run configuration: a flat TOML table with an explicit schema version.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazebot_core::policy::{PolicyParams, Preset};
use gazebot_core::segmentation::SegmentationConfig;
use gazebot_core::simenv::{Condition, ExpertParams, ScenarioSpec};
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub task: String,
    pub presets: Vec<String>,
    pub conditions: Vec<String>,
    /// Number of training demonstrations, seeded `demo_seed..demo_seed + demos`.
    pub demos: usize,
    pub demo_seed: u64,
    /// Trials per preset and condition; trial `i` uses world seed `seed + i`.
    pub trials: usize,
    pub seed: u64,
    pub max_steps: usize,
    pub k: usize,
    pub lambda: f64,
    pub bezier_lambda: f64,
    pub resolution: usize,
    pub crop_side: f64,
    pub progress_threshold: f64,
    pub progress_window: usize,
    pub horizon: usize,
    pub reach_speed: f64,
    pub eps_position: f64,
    pub eps_rotation: f64,
    pub gaze_noise: f64,
    pub render_noise: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PolicyParams::default();
        Self {
            version: SCHEMA_VERSION,
            task: "pilebox".into(),
            presets: Preset::ALL.iter().map(|p| p.as_str().to_string()).collect(),
            conditions: Condition::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            demos: 30,
            demo_seed: 0,
            trials: 50,
            seed: 100_000,
            max_steps: 150,
            k: p.k,
            lambda: p.lambda,
            bezier_lambda: p.bezier_lambda,
            resolution: p.resolution,
            crop_side: p.crop_side,
            progress_threshold: p.progress_threshold,
            progress_window: p.progress_window,
            horizon: p.horizon,
            reach_speed: p.reach_speed,
            eps_position: p.eps_position,
            eps_rotation: p.eps_rotation,
            gaze_noise: ExpertParams::default().gaze_noise,
            render_noise: ScenarioSpec::pile_box().render.noise,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Parses a config file body. The `version` key is mandatory.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        match table.get("version") {
            None => bail!("config is missing the `version` key"),
            Some(toml::Value::Integer(v)) if *v == i64::from(SCHEMA_VERSION) => {}
            Some(v) => bail!("unsupported config version {v} (expected {SCHEMA_VERSION})"),
        }
        let cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario()?;
        self.preset_list()?;
        self.condition_list()?;
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.demos == 0 {
            bail!("demos must be at least 1");
        }
        if self.k == 0 || self.resolution == 0 || self.horizon == 0 || self.progress_window == 0 {
            bail!("k, resolution, horizon and progress_window must be positive");
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("bezier_lambda", self.bezier_lambda),
            ("crop_side", self.crop_side),
            ("reach_speed", self.reach_speed),
            ("eps_position", self.eps_position),
            ("eps_rotation", self.eps_rotation),
        ] {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be positive, got {v}");
            }
        }
        for (name, v) in [("gaze_noise", self.gaze_noise), ("render_noise", self.render_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                bail!("{name} must be non-negative, got {v}");
            }
        }
        if !(0.0..=1.0).contains(&self.progress_threshold) {
            bail!("progress_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let mut spec = match self.task.as_str() {
            "pilebox" => ScenarioSpec::pile_box(),
            t => bail!("unknown task `{t}`"),
        };
        spec.render.noise = self.render_noise;
        Ok(spec)
    }

    pub fn preset_list(&self) -> Result<Vec<Preset>> {
        if self.presets.is_empty() {
            bail!("presets must not be empty");
        }
        Ok(self.presets.iter().map(|p| Preset::parse(p)).collect::<Result<_, _>>()?)
    }

    pub fn condition_list(&self) -> Result<Vec<Condition>> {
        if self.conditions.is_empty() {
            bail!("conditions must not be empty");
        }
        self.conditions
            .iter()
            .map(|c| Condition::parse(c).with_context(|| format!("unknown condition `{c}`")))
            .collect()
    }

    pub fn expert(&self) -> ExpertParams {
        ExpertParams { gaze_noise: self.gaze_noise, ..ExpertParams::default() }
    }

    pub fn policy_params(&self) -> PolicyParams {
        PolicyParams {
            k: self.k,
            lambda: self.lambda,
            bezier_lambda: self.bezier_lambda,
            resolution: self.resolution,
            crop_side: self.crop_side,
            progress_threshold: self.progress_threshold,
            progress_window: self.progress_window,
            horizon: self.horizon,
            reach_speed: self.reach_speed,
            eps_position: self.eps_position,
            eps_rotation: self.eps_rotation,
            ..PolicyParams::default()
        }
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig { resolution: self.resolution, crop_side: self.crop_side, ..SegmentationConfig::default() }
    }
}
