//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semictde::mesosim::{ArrivalLaw, FlowConfig, SimParams};
use semictde::netmodel::GridSpec;
use semictde::policies::ModelTag;
use semictde::qlearn::TrainerConfig;
use semictde::regionform::DEFAULT_WARMUP_HORIZON;
use semictde::spsa::SpsaSchedule;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "GridSpec::standard_grid")]
    pub network: GridSpec,
    pub flow: FlowSection,
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub spsa: SpsaSchedule,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// A preset name alone, or a full inline flow. `horizon` and `demand_scale`
/// compress a preset onto a shorter run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub name: String,
    #[serde(default)]
    pub distribution: Option<ArrivalLaw>,
    #[serde(default)]
    pub total_vehicles: Option<usize>,
    #[serde(default)]
    pub avg_rate: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "one")]
    pub demand_scale: f64,
    #[serde(default)]
    pub center: Option<f64>,
    #[serde(default)]
    pub spread: Option<f64>,
    #[serde(default)]
    pub weibull_shape: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl FlowSection {
    pub fn preset(name: &str) -> Self {
        FlowSection {
            name: name.to_string(),
            distribution: None,
            total_vehicles: None,
            avg_rate: None,
            horizon: None,
            demand_scale: 1.0,
            center: None,
            spread: None,
            weibull_shape: None,
        }
    }

    pub fn resolve(&self) -> Result<FlowConfig, CliError> {
        let inline = self.distribution.is_some() || self.total_vehicles.is_some() || self.avg_rate.is_some();
        let mut flow = match (FlowConfig::preset(&self.name), inline) {
            (Some(p), false) => {
                let horizon = self.horizon.unwrap_or(p.horizon);
                p.scaled(horizon, self.demand_scale)
            }
            (_, true) => {
                let (Some(law), Some(total), Some(rate)) = (self.distribution, self.total_vehicles, self.avg_rate) else {
                    return Err(CliError::Config(format!(
                        "flow {:?}: an inline flow needs distribution, total_vehicles and avg_rate",
                        self.name
                    )));
                };
                let horizon = self.horizon.ok_or_else(|| CliError::Config("inline flow needs a horizon".into()))?;
                FlowConfig::new(&self.name, law, total, rate, horizon).scaled(horizon, self.demand_scale)
            }
            (None, false) => {
                return Err(CliError::Config(format!(
                    "unknown flow preset {:?} (known: {})",
                    self.name,
                    FlowConfig::PRESET_NAMES.join(", ")
                )))
            }
        };
        flow.center = self.center.or(flow.center);
        flow.spread = self.spread.or(flow.spread);
        flow.weibull_shape = self.weibull_shape.or(flow.weibull_shape);
        flow.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(flow)
    }
}

/// Controller to train or evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerKind {
    Learned(ModelTag),
    FixedTime,
    Random,
    Actuated,
}

impl ControllerKind {
    pub fn parse(tag: &str) -> Result<Self, CliError> {
        match tag {
            "fixed_time" => Ok(ControllerKind::FixedTime),
            "random" => Ok(ControllerKind::Random),
            "actuated" => Ok(ControllerKind::Actuated),
            other => ModelTag::parse(other).map(ControllerKind::Learned).map_err(|e| CliError::Config(e.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Learned(t) => t.name(),
            ControllerKind::FixedTime => "fixed_time",
            ControllerKind::Random => "random",
            ControllerKind::Actuated => "actuated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub tag: String,
    /// `per_intersection` or `per_region`; must agree with the tag.
    #[serde(default)]
    pub sharing: Option<String>,
    /// Initial regional reward coefficients (spillback, switching, outflow).
    #[serde(default)]
    pub lambda: Option<[f64; 3]>,
}

impl ModelSection {
    pub fn kind(&self) -> Result<ControllerKind, CliError> {
        let kind = ControllerKind::parse(&self.tag)?;
        if let (ControllerKind::Learned(tag), Some(sharing)) = (kind, self.sharing.as_deref()) {
            let expected = if tag == ModelTag::FullyDecentralized { "per_intersection" } else { "per_region" };
            if sharing != "per_intersection" && sharing != "per_region" {
                return Err(CliError::Config(format!("unknown sharing {sharing:?}")));
            }
            if sharing != expected {
                return Err(CliError::Config(format!("{} uses {expected} sharing, not {sharing}", tag.name())));
            }
        }
        if let Some(l) = self.lambda {
            if l.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(CliError::Config("lambda entries must be finite and >= 0".into()));
            }
        }
        Ok(kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub trainer: TrainerConfig,
    pub eval_repetitions: usize,
    /// Flow preset names for evaluation; empty means the training flow.
    pub eval_flows: Vec<String>,
    /// Seed of the evaluation demand; repetitions derive from it.
    pub eval_seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            episodes: 225,
            seeds: vec![0],
            trainer: TrainerConfig::default(),
            eval_repetitions: 10,
            eval_flows: Vec::new(),
            eval_seed: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSource {
    /// Warm-up run followed by the alpha-cut.
    Compute,
    File,
    Single,
    Singletons,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub source: PartitionSource,
    pub alpha: f64,
    pub file: Option<PathBuf>,
    pub warmup_horizon: f64,
    pub warmup_seed: u64,
    /// Flow preset used for the warm-up run; empty means the training flow.
    pub warmup_flow: Option<String>,
    /// Alpha values tabulated by the partition command.
    pub sweep: Vec<f64>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            source: PartitionSource::Compute,
            alpha: 9.0,
            file: None,
            warmup_horizon: DEFAULT_WARMUP_HORIZON,
            warmup_seed: 7,
            warmup_flow: Some("U1".into()),
            sweep: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write the JSONL event log of the first evaluation repetition.
    pub event_log: bool,
    /// Write encoded states per decision of the first evaluation repetition.
    pub dump_features: bool,
    pub histogram_bin: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs"), event_log: false, dump_features: false, histogram_bin: 10.0 }
    }
}

/// Simulator constants; the horizon comes from the flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub free_flow_speed: f64,
    pub saturation_headway: f64,
    pub vehicle_space: f64,
    pub sample_interval: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let p = SimParams::default();
        SimulationSection {
            free_flow_speed: p.free_flow_speed,
            saturation_headway: p.saturation_headway,
            vehicle_space: p.vehicle_space,
            sample_interval: p.sample_interval,
        }
    }
}

impl SimulationSection {
    pub fn params(&self, horizon: f64) -> SimParams {
        SimParams {
            free_flow_speed: self.free_flow_speed,
            saturation_headway: self.saturation_headway,
            vehicle_space: self.vehicle_space,
            sample_interval: self.sample_interval,
            horizon,
            record_log: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub models: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            models: ["fixed_time", "random", "actuated", "fully_decentralized", "partially_semictde", "regionwide", "onehop"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.network.build().map_err(|e| CliError::Config(e.to_string()))?;
        self.flow.resolve()?;
        self.model.kind()?;
        self.training.trainer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.spsa.validate().map_err(CliError::Config)?;
        if self.training.seeds.is_empty() {
            return Err(CliError::Config("training.seeds is empty".into()));
        }
        if self.training.eval_repetitions == 0 {
            return Err(CliError::Config("training.eval_repetitions must be positive".into()));
        }
        for f in &self.training.eval_flows {
            if FlowConfig::preset(f).is_none() {
                return Err(CliError::Config(format!("unknown evaluation flow {f:?}")));
            }
        }
        if !(self.partition.alpha >= 0.0 && self.partition.alpha.is_finite()) {
            return Err(CliError::Config(format!("partition.alpha must be >= 0, got {}", self.partition.alpha)));
        }
        if let Some(a) = self.partition.sweep.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(CliError::Config(format!("invalid alpha {a} in partition.sweep")));
        }
        if self.partition.source == PartitionSource::File && self.partition.file.is_none() {
            return Err(CliError::Config("partition.source = \"file\" needs partition.file".into()));
        }
        if !(self.output.histogram_bin > 0.0) {
            return Err(CliError::Config("output.histogram_bin must be positive".into()));
        }
        for m in &self.sweep.models {
            ControllerKind::parse(m)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Full-scale defaults: 5x5 grid, U1 training flow, RegionWide.
    pub fn full() -> Self {
        ExperimentConfig {
            network: GridSpec::standard_grid(),
            flow: FlowSection::preset("U1"),
            model: ModelSection { tag: "regionwide".into(), sharing: None, lambda: None },
            training: TrainingSection::default(),
            partition: PartitionSection::default(),
            output: OutputSection::default(),
            simulation: SimulationSection::default(),
            spsa: SpsaSchedule::default(),
            sweep: SweepSection::default(),
        }
    }

    /// Desk-scale profile: 2x2 fully signalized grid, short horizon,
    /// light uniform demand, one region and a faster learning schedule.
    pub fn toy() -> Self {
        let mut network = GridSpec::standard_grid();
        network.rows = 2;
        network.cols = 2;
        network.approach_length = 150.0;
        network.unsignalized = Some(Vec::new());
        ExperimentConfig {
            network,
            flow: FlowSection {
                name: "toy".into(),
                distribution: Some(ArrivalLaw::Uniform),
                total_vehicles: Some(TOY_VEHICLES),
                avg_rate: Some(TOY_VEHICLES as f64 / TOY_HORIZON),
                horizon: Some(TOY_HORIZON),
                ..FlowSection::preset("toy")
            },
            model: ModelSection { tag: "onehop".into(), sharing: None, lambda: None },
            training: TrainingSection {
                episodes: 40,
                seeds: vec![0, 1, 2],
                trainer: toy_trainer(),
                eval_repetitions: 5,
                eval_flows: Vec::new(),
                eval_seed: 9000,
            },
            partition: PartitionSection { source: PartitionSource::Single, ..PartitionSection::default() },
            output: OutputSection { dir: PathBuf::from("runs/toy"), ..OutputSection::default() },
            simulation: SimulationSection::default(),
            spsa: SpsaSchedule { initial_episodes: 20, cycles: 4, train_episodes: 5, ..SpsaSchedule::default() },
            sweep: SweepSection::default(),
        }
    }
}

pub const TOY_HORIZON: f64 = 1800.0;
pub const TOY_VEHICLES: usize = 700;

pub fn toy_trainer() -> TrainerConfig {
    TrainerConfig {
        hidden: vec![128, 64],
        learning_rate: 1e-3,
        gamma: 0.8,
        c_policy: 1,
        c_target: 100,
        epsilon_decay: 0.9,
        ..TrainerConfig::default()
    }
}
