//! Versioned text templates that drive compressors and the optimizer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::GuidelineError;
use crate::io::write_atomic;
use crate::templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidelineKind {
    History,
    Observation,
    FeedbackInstruction,
    UpdateInstruction,
    CompressFeedbackInstruction,
    CompressUpdateInstruction,
}

impl GuidelineKind {
    pub fn allowed_placeholders(self) -> &'static [&'static str] {
        match self {
            GuidelineKind::History => &["task", "prev_summary", "history", "max_chars"],
            GuidelineKind::Observation => &["task", "history", "observation", "max_chars"],
            GuidelineKind::FeedbackInstruction => &[
                "task",
                "task_name",
                "baseline_history",
                "optimized_history",
                "baseline_success",
                "optimized_success",
                "baseline_env_steps",
                "optimized_env_steps",
                "step_ratio",
                "failure_report",
            ],
            GuidelineKind::CompressFeedbackInstruction => &[
                "task",
                "task_name",
                "optimized_history",
                "optimized_success",
                "optimized_env_steps",
            ],
            GuidelineKind::UpdateInstruction | GuidelineKind::CompressUpdateInstruction => {
                &["original_prompt", "feedback", "avg_orig_chars"]
            }
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            GuidelineKind::History => &["history"],
            GuidelineKind::Observation => &["observation"],
            GuidelineKind::FeedbackInstruction => &["baseline_history", "optimized_history"],
            GuidelineKind::CompressFeedbackInstruction => &["optimized_history"],
            GuidelineKind::UpdateInstruction | GuidelineKind::CompressUpdateInstruction => {
                &["original_prompt", "feedback"]
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GuidelineKind::History => "history",
            GuidelineKind::Observation => "observation",
            GuidelineKind::FeedbackInstruction => "feedback-instruction",
            GuidelineKind::UpdateInstruction => "update-instruction",
            GuidelineKind::CompressFeedbackInstruction => "compress-feedback-instruction",
            GuidelineKind::CompressUpdateInstruction => "compress-update-instruction",
        }
    }
}

impl fmt::Display for GuidelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidelineKind {
    type Err = GuidelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            GuidelineKind::History,
            GuidelineKind::Observation,
            GuidelineKind::FeedbackInstruction,
            GuidelineKind::UpdateInstruction,
            GuidelineKind::CompressFeedbackInstruction,
            GuidelineKind::CompressUpdateInstruction,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| GuidelineError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineageRef {
    pub id: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guideline {
    pub id: String,
    pub version: u32,
    pub kind: GuidelineKind,
    pub template: String,
    #[serde(default)]
    pub lineage: Vec<LineageRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    id: String,
    version: u32,
    kind: GuidelineKind,
    #[serde(default)]
    lineage: Vec<LineageRef>,
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\|\s*default\(\s*([^)]*?)\s*\))?\s*\}\}")
        .expect("placeholder regex")
});

/// Placeholder names referenced by `template`, in order of first use.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for cap in PLACEHOLDER.captures_iter(template) {
        let name = cap[1].to_string();
        if !seen.contains(&name) {
            seen.push(name);
        }
    }
    seen
}

pub fn validate_template(kind: GuidelineKind, template: &str) -> Result<(), GuidelineError> {
    let used = placeholders(template);
    if let Some(bad) = used
        .iter()
        .find(|p| !kind.allowed_placeholders().contains(&p.as_str()))
    {
        return Err(GuidelineError::DisallowedPlaceholder {
            placeholder: bad.clone(),
            kind: kind.to_string(),
        });
    }
    if let Some(missing) = kind
        .required_placeholders()
        .iter()
        .find(|r| !used.iter().any(|u| u == *r))
    {
        return Err(GuidelineError::MissingPlaceholder {
            placeholder: missing.to_string(),
            kind: kind.to_string(),
        });
    }
    Ok(())
}

/// Substitutes placeholders. Missing values fall back to the placeholder's
/// `default(...)` argument (quotes stripped), else the empty string.
pub fn fill(template: &str, values: &BTreeMap<&str, String>) -> String {
    PLACEHOLDER
        .replace_all(template, |cap: &regex::Captures<'_>| {
            if let Some(v) = values.get(&cap[1]) {
                return v.clone();
            }
            cap.get(2)
                .map(|d| {
                    d.as_str()
                        .trim_matches(|c| c == '\'' || c == '"')
                        .to_string()
                })
                .unwrap_or_default()
        })
        .into_owned()
}

impl Guideline {
    pub fn new(
        id: impl Into<String>,
        kind: GuidelineKind,
        template: impl Into<String>,
    ) -> Result<Self, GuidelineError> {
        let template = template.into();
        validate_template(kind, &template)?;
        Ok(Guideline {
            id: id.into(),
            version: 0,
            kind,
            template,
            lineage: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<(), GuidelineError> {
        validate_template(self.kind, &self.template)
    }

    /// A successor one version up whose lineage ends at `self`.
    pub fn child(&self, template: impl Into<String>) -> Result<Self, GuidelineError> {
        let template = template.into();
        validate_template(self.kind, &template)?;
        let mut lineage = self.lineage.clone();
        lineage.push(LineageRef {
            id: self.id.clone(),
            version: self.version,
        });
        Ok(Guideline {
            id: self.id.clone(),
            version: self.version + 1,
            kind: self.kind,
            template,
            lineage,
        })
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> String {
        fill(&self.template, values)
    }

    pub fn expect_kind(&self, kind: GuidelineKind) -> Result<(), GuidelineError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(GuidelineError::WrongKind {
                id: self.id.clone(),
                expected: kind.to_string(),
                found: self.kind.to_string(),
            })
        }
    }

    /// Writes `<stem>.txt` and the `<stem>.json` sidecar under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf, GuidelineError> {
        std::fs::create_dir_all(dir)?;
        let text_path = dir.join(format!("{stem}.txt"));
        write_atomic(&text_path, self.template.as_bytes())?;
        let sidecar = Sidecar {
            id: self.id.clone(),
            version: self.version,
            kind: self.kind,
            lineage: self.lineage.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&sidecar)?;
        json.push(b'\n');
        write_atomic(&text_path.with_extension("json"), &json)?;
        Ok(text_path)
    }

    /// Loads a template file and its sidecar (same stem, `.json`).
    pub fn load(text_path: &Path) -> Result<Self, GuidelineError> {
        let template = std::fs::read_to_string(text_path)?;
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(text_path.with_extension("json"))?)?;
        validate_template(sidecar.kind, &template)?;
        Ok(Guideline {
            id: sidecar.id,
            version: sidecar.version,
            kind: sidecar.kind,
            template,
            lineage: sidecar.lineage,
        })
    }
}

/// Built-in guidelines keyed by id.
pub fn builtin(id: &str) -> Option<Guideline> {
    let (kind, text) = match id {
        templates::HISTORY_DEFAULT_ID => (GuidelineKind::History, templates::HISTORY_DEFAULT),
        templates::OBSERVATION_DEFAULT_ID => {
            (GuidelineKind::Observation, templates::OBSERVATION_DEFAULT)
        }
        templates::FEEDBACK_DEFAULT_ID => (
            GuidelineKind::FeedbackInstruction,
            templates::FEEDBACK_DEFAULT,
        ),
        templates::UPDATE_DEFAULT_ID => {
            (GuidelineKind::UpdateInstruction, templates::UPDATE_DEFAULT)
        }
        templates::COMPRESS_FEEDBACK_DEFAULT_ID => (
            GuidelineKind::CompressFeedbackInstruction,
            templates::COMPRESS_FEEDBACK_DEFAULT,
        ),
        templates::COMPRESS_UPDATE_DEFAULT_ID => (
            GuidelineKind::CompressUpdateInstruction,
            templates::COMPRESS_UPDATE_DEFAULT,
        ),
        _ => return None,
    };
    Some(Guideline::new(id, kind, text).expect("built-in templates are valid"))
}
