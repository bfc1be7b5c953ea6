//! Run configuration as loaded from JSON.
//!
//! ```json
//! {"env": "env.json", "t_hist": 4096, "t_obs": 1024, "keep_last_pairs": 1,
//!  "history": "generative:history-default", "observation": "none",
//!  "models": {"agent": "gpt-4.1", "compressor": "gpt-4.1", "optimizer": "gpt-4.1"},
//!  "step_limit": 40, "seed": 42}
//! ```
//!
//! Every field has a default, so `{}` is a valid config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compression::{CompressorKind, GatePolicy};
use crate::guideline::{builtin, Guideline, GuidelineKind};
use crate::io::read_json;
use crate::metrics::{MetricsOptions, PricingTable};
use crate::templates;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub agent: String,
    pub compressor: String,
    pub optimizer: String,
}

impl Default for Models {
    fn default() -> Self {
        Models {
            agent: "gpt-4.1".into(),
            compressor: "gpt-4.1".into(),
            optimizer: "gpt-4.1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: Option<PathBuf>,
    pub t_hist: usize,
    pub t_obs: usize,
    pub keep_last_pairs: usize,
    pub history: CompressorKind,
    pub observation: CompressorKind,
    /// Steps after an applied history compression during which the history
    /// gate is not checked.
    pub history_cooldown: usize,
    /// Guideline text files (each with a JSON sidecar); these override the
    /// built-in guidelines with the same id.
    pub guidelines: Vec<PathBuf>,
    pub models: Models,
    pub pricing: Option<PathBuf>,
    pub step_limit: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub success_threshold: f64,
    pub lambda: f64,
    pub metrics: MetricsOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gate = GatePolicy::default();
        RunConfig {
            env: None,
            t_hist: gate.t_hist,
            t_obs: gate.t_obs,
            keep_last_pairs: gate.keep_last_pairs,
            history: CompressorKind::Generative {
                guideline: templates::HISTORY_DEFAULT_ID.into(),
            },
            observation: CompressorKind::None,
            history_cooldown: 1,
            guidelines: Vec::new(),
            models: Models::default(),
            pricing: None,
            step_limit: 40,
            parallelism: 4,
            seed: 42,
            success_threshold: 1.0,
            lambda: 0.1,
            metrics: MetricsOptions::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(config_err(format!(
                "config file {} not found",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn gate(&self) -> GatePolicy {
        GatePolicy {
            t_hist: self.t_hist,
            t_obs: self.t_obs,
            keep_last_pairs: self.keep_last_pairs,
        }
    }

    /// The same config with both compressors switched off.
    pub fn uncompressed(&self) -> Self {
        RunConfig {
            history: CompressorKind::None,
            observation: CompressorKind::None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gate()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if matches!(
            self.observation,
            CompressorKind::Fifo { .. } | CompressorKind::Retrieval { .. }
        ) {
            return Err(config_err(format!(
                "observation compressor cannot be `{}`",
                self.observation
            )));
        }
        if self.step_limit == 0 {
            return Err(config_err("step_limit must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(config_err("parallelism must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err(config_err("success_threshold must lie in [0, 1]"));
        }
        if !(self.lambda >= 0.0) {
            return Err(config_err("lambda must be non-negative"));
        }
        let files = self
            .env
            .iter()
            .chain(self.pricing.iter())
            .chain(self.guidelines.iter());
        for path in files {
            if !path.is_file() {
                return Err(config_err(format!(
                    "referenced file {} not found",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Built-in guidelines overlaid with the configured files, checked
    /// against the compressor kinds that reference them.
    pub fn resolve_guidelines(&self) -> Result<BTreeMap<String, Guideline>> {
        let mut map: BTreeMap<String, Guideline> = [
            templates::HISTORY_DEFAULT_ID,
            templates::OBSERVATION_DEFAULT_ID,
            templates::FEEDBACK_DEFAULT_ID,
            templates::UPDATE_DEFAULT_ID,
            templates::COMPRESS_FEEDBACK_DEFAULT_ID,
            templates::COMPRESS_UPDATE_DEFAULT_ID,
        ]
        .into_iter()
        .filter_map(|id| builtin(id).map(|g| (id.to_string(), g)))
        .collect();
        for path in &self.guidelines {
            let g = Guideline::load(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            map.insert(g.id.clone(), g);
        }
        check_kind(&map, &self.history, GuidelineKind::History)?;
        check_kind(&map, &self.observation, GuidelineKind::Observation)?;
        Ok(map)
    }

    pub fn load_pricing(&self) -> Result<PricingTable> {
        let table = match &self.pricing {
            Some(path) => read_json::<PricingTable>(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?,
            None => PricingTable::reference(),
        };
        table.validate().map_err(|e| config_err(e.to_string()))?;
        for model in [&self.models.agent, &self.models.compressor] {
            table.rates(model).map_err(|e| config_err(e.to_string()))?;
        }
        Ok(table)
    }
}

fn check_kind(
    map: &BTreeMap<String, Guideline>,
    kind: &CompressorKind,
    expected: GuidelineKind,
) -> Result<()> {
    if let Some(id) = kind.guideline_id() {
        let g = map
            .get(id)
            .ok_or_else(|| config_err(format!("unknown guideline `{id}`")))?;
        g.expect_kind(expected)
            .map_err(|e| config_err(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.seed, 42);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.history = "fifo:5".parse().unwrap();
        c.lambda = 0.2;
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn documented_shape_parses() {
        let c: RunConfig = serde_json::from_str(
            r#"{"t_hist": 4096, "t_obs": 1024, "keep_last_pairs": 1,
                "history": "generative:history-default", "observation": "none"}"#,
        )
        .unwrap();
        assert_eq!(c.gate(), GatePolicy::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let c = RunConfig {
            observation: "fifo:3".parse().unwrap(),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig {
            env: Some("/definitely/missing.json".into()),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::load(Path::new("/definitely/missing.json")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn guideline_kinds_are_checked() {
        let c = RunConfig {
            history: "generative:observation-default".parse().unwrap(),
            ..RunConfig::default()
        };
        assert!(c.resolve_guidelines().is_err());
        let c = RunConfig {
            history: "generative:nope".parse().unwrap(),
            ..RunConfig::default()
        };
        assert!(c.resolve_guidelines().is_err());
        assert!(RunConfig::default()
            .resolve_guidelines()
            .unwrap()
            .contains_key("history-default"));
    }
}
