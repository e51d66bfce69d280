//! Prompt templates with named `{placeholder}` slots.
//!
//! The crate ships a default set; a directory of `.txt` files with the same
//! stem names overrides them, so prompts can be tuned without rebuilding.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("cannot read template dir {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

const EMBEDDED: &[(&str, &str)] = &[
    ("judge_keypoints", include_str!("../templates/judge_keypoints.txt")),
    ("keypoint_extraction", include_str!("../templates/keypoint_extraction.txt")),
    ("config_value", include_str!("../templates/config_value.txt")),
    ("document", include_str!("../templates/document.txt")),
    ("reference_extraction", include_str!("../templates/reference_extraction.txt")),
    ("answer_refinement", include_str!("../templates/answer_refinement.txt")),
    ("generate_answer", include_str!("../templates/generate_answer.txt")),
    ("qra_fq", include_str!("../templates/qra_fq.txt")),
    ("qra_sq", include_str!("../templates/qra_sq.txt")),
    ("qra_mrq", include_str!("../templates/qra_mrq.txt")),
    ("qra_iiq", include_str!("../templates/qra_iiq.txt")),
    ("qra_ncq", include_str!("../templates/qra_ncq.txt")),
    ("qra_tsq", include_str!("../templates/qra_tsq.txt")),
    ("qra_uq", include_str!("../templates/qra_uq.txt")),
];

/// A named collection of prompt templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::embedded()
    }
}

impl TemplateSet {
    /// The templates compiled into the crate.
    pub fn embedded() -> Self {
        TemplateSet {
            templates: EMBEDDED
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Embedded templates overlaid with every `.txt` file found in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut set = Self::embedded();
        let entries = std::fs::read_dir(dir).map_err(|source| TemplateError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| TemplateError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.templates.insert(stem.to_string(), body);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    /// Render a template, substituting each `{key}` whose key appears in
    /// `vars`. Substituted values are never re-scanned, and braces that do
    /// not form a known placeholder (JSON blocks, for instance) pass through
    /// untouched.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        Ok(render_str(self.get(name)?, vars))
    }
}

/// Single-pass `{placeholder}` substitution over a raw template string.
pub fn render_str(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                if let Some((_, value)) = vars.iter().find(|(k, _)| *k == key) {
                    out.push_str(value);
                } else {
                    out.push('{');
                    out.push_str(key);
                    out.push('}');
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
