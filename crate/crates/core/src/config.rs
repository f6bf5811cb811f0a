//! TOML experiment configuration.
//!
//! A config file fully determines a run: task, topology, model widths,
//! supervision strategy, optimizer rates, and budgets. Unknown keys are
//! rejected so typos surface as validation errors instead of silently
//! falling back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::RibKind;
use crate::crn::{CrnSpec, HeadLayout, HeadSpec, Topology};
use crate::error::{CrnError, Result};
use crate::objective::SupervisionStrategy;
use crate::optim::SgdConfig;
use crate::synthdata::pose::PoseConfig;
use crate::synthdata::shapes::{BSource, ShapesConfig};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Shapes,
    Pose,
}

impl TaskKind {
    pub fn default_steps(self) -> usize {
        match self {
            TaskKind::Shapes => 8,
            TaskKind::Pose => 6,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyName {
    Coupled,
    NonCoupled,
    #[serde(alias = "early")]
    EarlyFusion,
    #[serde(alias = "late")]
    LateFusion,
}

impl TopologyName {
    pub fn topology(self) -> Topology {
        match self {
            TopologyName::Coupled => Topology::Coupled,
            TopologyName::NonCoupled => Topology::NonCoupled,
            TopologyName::EarlyFusion => Topology::EarlyFusion,
            TopologyName::LateFusion => Topology::LateFusion,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TopologyName::Coupled => "coupled",
            TopologyName::NonCoupled => "non-coupled",
            TopologyName::EarlyFusion => "early-fusion",
            TopologyName::LateFusion => "late-fusion",
        }
    }

    fn is_fused(self) -> bool {
        matches!(self, TopologyName::EarlyFusion | TopologyName::LateFusion)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RibKindName {
    Rib,
    Srib,
    Identity,
    None,
}

impl RibKindName {
    pub fn kind(self) -> Option<RibKind> {
        match self {
            RibKindName::Rib => Some(RibKind::Rib),
            RibKindName::Srib => Some(RibKind::Srib),
            RibKindName::Identity => Some(RibKind::Identity),
            RibKindName::None => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RibKindName::Rib => "rib",
            RibKindName::Srib => "srib",
            RibKindName::Identity => "identity",
            RibKindName::None => "none",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum StrategyName {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "d")]
    D,
}

impl StrategyName {
    pub fn strategy(self) -> SupervisionStrategy {
        match self {
            StrategyName::A => SupervisionStrategy::EndOnly,
            StrategyName::B => SupervisionStrategy::EveryStep,
            StrategyName::C => SupervisionStrategy::EndPlusRandom { k: 1 },
            StrategyName::D => SupervisionStrategy::EndPlusRandom { k: 2 },
        }
    }

    pub fn letter(self) -> char {
        match self {
            StrategyName::A => 'a',
            StrategyName::B => 'b',
            StrategyName::C => 'c',
            StrategyName::D => 'd',
        }
    }

    /// Smallest sequence length the strategy can supervise.
    fn min_steps(self) -> usize {
        match self {
            StrategyName::A | StrategyName::B => 1,
            StrategyName::C => 2,
            StrategyName::D => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StemSection {
    pub channels: usize,
}

impl Default for StemSection {
    fn default() -> Self {
        StemSection { channels: 16 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmSection {
    pub layers: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub bias: bool,
}

impl Default for LstmSection {
    fn default() -> Self {
        LstmSection {
            layers: 2,
            hidden: 32,
            kernel: 3,
            bias: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RibSection {
    pub kind: RibKindName,
    /// Interpreted-channel width; defaults to the stem width.
    pub channels: Option<usize>,
}

impl Default for RibSection {
    fn default() -> Self {
        RibSection {
            kind: RibKindName::Rib,
            channels: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSection {
    pub crn: f64,
    pub backbone: f64,
}

impl Default for LrSection {
    fn default() -> Self {
        LrSection {
            crn: 1e-2,
            backbone: 1e-3,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKindName {
    Classification,
    Regression,
}

/// `outputs = 9` or `outputs = [4, 6]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outputs {
    Same(usize),
    PerBranch([usize; 2]),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    pub kind: HeadKindName,
    pub outputs: Outputs,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BSourceName {
    Clean,
    RgbDiff,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesSection {
    pub noise_sigma: f64,
    pub b_source: BSourceName,
}

impl Default for ShapesSection {
    fn default() -> Self {
        ShapesSection {
            noise_sigma: 0.3,
            b_source: BSourceName::Clean,
        }
    }
}

/// Axes for `ablate`; empty axes fall back to the base config's setting,
/// so an all-empty section is a 1-cell matrix.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub topologies: Vec<TopologyName>,
    pub rib_kinds: Vec<RibKindName>,
    pub strategies: Vec<StrategyName>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default = "defaults::topology")]
    pub topology: TopologyName,
    /// Sequence length; defaults to 8 for shapes and 6 for pose.
    #[serde(rename = "T", default)]
    pub steps: Option<usize>,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::strategy")]
    pub strategy: StrategyName,
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    /// Mini-batches drawn per training epoch.
    #[serde(default = "defaults::train_batches")]
    pub train_batches: usize,
    /// Validation samples per evaluation event.
    #[serde(default = "defaults::val_samples")]
    pub val_samples: usize,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub stem: StemSection,
    #[serde(default)]
    pub lstm: LstmSection,
    #[serde(default)]
    pub rib: RibSection,
    /// Optional override; by default heads follow the task (9-way
    /// classification for shapes, 4 heatmaps + 6 field maps for pose).
    #[serde(default)]
    pub head: Option<HeadSection>,
    #[serde(default)]
    pub lr: LrSection,
    #[serde(default)]
    pub shapes: ShapesSection,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
}

mod defaults {
    use super::*;

    pub fn topology() -> TopologyName {
        TopologyName::Coupled
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn seeds() -> Vec<u64> {
        vec![1, 2, 3]
    }
    pub fn strategy() -> StrategyName {
        StrategyName::C
    }
    pub fn batch() -> usize {
        10
    }
    pub fn train_batches() -> usize {
        50
    }
    pub fn val_samples() -> usize {
        500
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        5e-4
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CrnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CrnError::Config(e.to_string()))
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.task.default_steps())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CrnError::Config(msg));
        if self.steps() == 0 {
            return fail("T must be at least 1".into());
        }
        if self.batch == 0 || self.train_batches == 0 || self.val_samples == 0 {
            return fail("batch, train_batches, and val_samples must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must list at least one seed".into());
        }
        if self.steps() < self.strategy.min_steps() {
            return fail(format!(
                "strategy {} needs T >= {}, got {}",
                self.strategy.letter(),
                self.strategy.min_steps(),
                self.steps()
            ));
        }
        if self.task == TaskKind::Pose && self.topology.is_fused() {
            return fail(
                "the pose task regresses two target families and needs a two-branch topology"
                    .into(),
            );
        }
        if self.shapes.noise_sigma < 0.0 {
            return fail("shapes.noise_sigma must be nonnegative".into());
        }
        if !(self.lr.crn.is_finite() && self.lr.backbone.is_finite()) {
            return fail("learning rates must be finite".into());
        }
        self.head_layout()?;
        Ok(())
    }

    pub fn head_layout(&self) -> Result<HeadLayout> {
        let fused = self.topology.is_fused();
        if let Some(head) = &self.head {
            return match (head.kind, head.outputs, fused) {
                (HeadKindName::Classification, Outputs::Same(k), false) => Ok(
                    HeadLayout::PerBranch(
                        HeadSpec::Classification { classes: k },
                        HeadSpec::Classification { classes: k },
                    ),
                ),
                (HeadKindName::Classification, Outputs::Same(k), true) => {
                    Ok(HeadLayout::Single(HeadSpec::Classification { classes: k }))
                }
                (HeadKindName::Regression, Outputs::PerBranch([m, n]), false) => Ok(
                    HeadLayout::PerBranch(
                        HeadSpec::Regression { maps: m },
                        HeadSpec::Regression { maps: n },
                    ),
                ),
                (HeadKindName::Regression, Outputs::Same(m), false) => Ok(HeadLayout::PerBranch(
                    HeadSpec::Regression { maps: m },
                    HeadSpec::Regression { maps: m },
                )),
                (HeadKindName::Regression, Outputs::Same(m), true) => {
                    Ok(HeadLayout::Single(HeadSpec::Regression { maps: m }))
                }
                (_, Outputs::PerBranch(_), true) => Err(CrnError::Config(
                    "fused topologies have a single head; give one output count".into(),
                )),
                (HeadKindName::Classification, Outputs::PerBranch(_), false) => {
                    Err(CrnError::Config(
                        "classification heads share one class count; give a single integer".into(),
                    ))
                }
            };
        }
        Ok(match (self.task, fused) {
            (TaskKind::Shapes, false) => HeadLayout::PerBranch(
                HeadSpec::Classification { classes: 9 },
                HeadSpec::Classification { classes: 9 },
            ),
            (TaskKind::Shapes, true) => HeadLayout::Single(HeadSpec::Classification { classes: 9 }),
            (TaskKind::Pose, _) => HeadLayout::PerBranch(
                HeadSpec::Regression { maps: 4 },
                HeadSpec::Regression { maps: 6 },
            ),
        })
    }

    pub fn to_spec(&self) -> Result<CrnSpec> {
        let spec = CrnSpec {
            topology: self.topology.topology(),
            steps: self.steps(),
            in_channels: (1, 1),
            stem_channels: self.stem.channels,
            lstm_layers: self.lstm.layers,
            lstm_hidden: self.lstm.hidden,
            lstm_kernel: self.lstm.kernel,
            lstm_bias: self.lstm.bias,
            rib_kind: self.rib.kind.kind(),
            rib_channels: self.rib.channels.unwrap_or(self.stem.channels),
            heads: self.head_layout()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig::two_rate(self.lr.crn, self.lr.backbone, self.momentum, self.weight_decay)
    }

    pub fn supervision(&self) -> SupervisionStrategy {
        self.strategy.strategy()
    }

    pub fn shapes_config(&self) -> ShapesConfig {
        ShapesConfig {
            steps: self.steps(),
            noise_sigma: self.shapes.noise_sigma,
            b_source: match self.shapes.b_source {
                BSourceName::Clean => BSource::CleanMotion,
                BSourceName::RgbDiff => BSource::RgbDiff,
            },
        }
    }

    pub fn pose_config(&self) -> PoseConfig {
        PoseConfig {
            steps: self.steps(),
        }
    }
}
