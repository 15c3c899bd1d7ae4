//! Run configuration: a TOML file with one flat section per module. Command
//! line flags are merged on top of the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lars::{AdamWConfig, LarsConfig};
use crate::ue::DEFAULT_SENTSAR_TEMPERATURE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScorerKind {
    Lns,
    SeqProb,
    Weighted,
    Lars,
}

impl ScorerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScorerKind::Lns => "lns",
            ScorerKind::SeqProb => "seq_prob",
            ScorerKind::Weighted => "weighted",
            ScorerKind::Lars => "lars",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Aggregator {
    Confidence,
    Entropy,
    Se,
    Sentsar,
}

impl Aggregator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregator::Confidence => "confidence",
            Aggregator::Entropy => "entropy",
            Aggregator::Se => "se",
            Aggregator::Sentsar => "sentsar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Baseline {
    Lexsim,
    NumSets,
    Degree,
    Eccentricity,
}

impl Baseline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Baseline::Lexsim => "lexsim",
            Baseline::NumSets => "num_sets",
            Baseline::Degree => "degree",
            Baseline::Eccentricity => "eccentricity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EquivalenceKind {
    ExactMatch,
    Rouge,
    Never,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Normalization {
    SumToOne,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Abort on the first malformed record instead of skipping it.
    pub strict: bool,
    pub dedup: bool,
    pub holdout_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            strict: false,
            dedup: true,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub scorers: Vec<ScorerKind>,
    pub normalization: Normalization,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self {
            scorers: vec![ScorerKind::Lns],
            normalization: Normalization::SumToOne,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub aggregators: Vec<Aggregator>,
    pub baselines: Vec<Baseline>,
    pub include_most_likely: bool,
    pub format: ReportFormat,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            aggregators: vec![Aggregator::Confidence, Aggregator::Entropy],
            baselines: Vec::new(),
            include_most_likely: false,
            format: ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub equivalence: EquivalenceKind,
    pub rouge_threshold: f64,
    pub entailment_url: Option<String>,
    pub timeout_secs: f64,
    pub sentsar_temperature: f64,
    pub num_eigvecs: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            equivalence: EquivalenceKind::Rouge,
            rouge_threshold: 0.5,
            entailment_url: None,
            timeout_secs: 30.0,
            sentsar_temperature: DEFAULT_SENTSAR_TEMPERATURE,
            num_eigvecs: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainSection {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = AdamWConfig::default();
        Self {
            epochs: 5,
            batch_size: 8,
            lr: o.lr,
            weight_decay: o.weight_decay,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub data: DataSection,
    pub scoring: ScoringSection,
    pub evaluate: EvaluateSection,
    pub oracle: OracleSection,
    pub lars: LarsConfig,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the settings that influence results. Paths are left out
    /// so the same experiment run from another directory keeps its
    /// fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
