use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use journey::backend::RemoteConfig;
use journey::cohort::{CohortOptions, Partition};
use journey::sampling::SplitConfig;
use journey::simulator::SimConfig;
use journey::SerializerConfig;
use serde::{Deserialize, Serialize};

use crate::error::invalid;

/// Everything a run can be configured with. Each command reads the sections
/// it needs; flags override file values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed for every random stream in the run.
    pub seed: u64,
    pub simulation: SimConfig,
    pub cohort: CohortOptions,
    pub split: SplitConfig,
    pub serializer: SerializerConfig,
    pub remote: RemoteConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            simulation: SimConfig::default(),
            cohort: CohortOptions::default(),
            split: SplitConfig::default(),
            serializer: SerializerConfig::default(),
            remote: RemoteConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Pushes the root seed into the sections that carry their own.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        self.simulation.seed = self.seed;
        self.cohort.seed = self.seed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Fixture,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MockKind {
    /// Repeat the last observed value.
    CopyForward,
    /// Predict the train-set mean of each variable.
    Mean,
}

/// Where event risk scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RiskSource {
    /// Likelihood scoring through the backend.
    Model,
    /// The simulator's per-patient hazard, read from a truth file.
    Truth,
    /// Seeded uniform noise.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub backend: BackendKind,
    pub fixtures: Option<String>,
    pub m_samples: usize,
    pub subset_passes: Option<usize>,
    pub partition: Partition,
    pub top_k: Option<usize>,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub mock_noise: f64,
    pub mock_strategy: MockKind,
    pub horizons: Vec<u32>,
    pub events: Vec<String>,
    pub risk: RiskSource,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            backend: BackendKind::Mock,
            fixtures: None,
            m_samples: 3,
            subset_passes: None,
            partition: Partition::Test,
            top_k: None,
            max_new_tokens: 1024,
            temperature: 1.0,
            mock_noise: 0.0,
            mock_strategy: MockKind::CopyForward,
            horizons: vec![26, 52, 78, 104],
            events: vec!["death".into()],
            risk: RiskSource::Model,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.m_samples == 0 {
            return Err(invalid("m_samples must be positive"));
        }
        if self.subset_passes == Some(0) {
            return Err(invalid("subset_passes must be positive"));
        }
        if !(self.mock_noise >= 0.0 && self.mock_noise.is_finite()) {
            return Err(invalid("mock_noise must be a non-negative number"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(invalid("horizons must be a non-empty list of positive weeks"));
        }
        if self.events.is_empty() {
            return Err(invalid("at least one event is required"));
        }
        Ok(())
    }
}

/// Comma-separated list of positive week counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Horizons(pub Vec<u32>);

impl FromStr for Horizons {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let h: u32 = part
                .parse()
                .map_err(|_| format!("`{part}` is not a week count"))?;
            if h == 0 {
                return Err("horizons must be positive".into());
            }
            out.push(h);
        }
        if out.is_empty() {
            return Err("no horizons given".into());
        }
        Ok(Horizons(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.evaluation.m_samples, 3);
        assert_eq!(cfg.split.splits_per_line, 10);
    }

    #[test]
    fn sections_override_fields() {
        let cfg: PipelineConfig = toml::from_str(
            "seed = 7\n[split]\nsplits_per_line = 4\n[evaluation]\nbackend = \"fixture\"\nhorizons = [13]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.split.splits_per_line, 4);
        assert_eq!(cfg.evaluation.backend, BackendKind::Fixture);
        assert_eq!(cfg.evaluation.horizons, vec![13]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("sed = 1").is_err());
    }

    #[test]
    fn horizon_lists() {
        assert_eq!("26, 52".parse::<Horizons>().unwrap().0, vec![26, 52]);
        assert!("0".parse::<Horizons>().is_err());
        assert!("a".parse::<Horizons>().is_err());
        assert!("".parse::<Horizons>().is_err());
    }
}
