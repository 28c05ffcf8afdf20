//! Run configuration: one TOML file names the corpus manifest, the provider,
//! the model, the prompt templates per task, and the output root.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dirscribe_core::llmclient::ProviderConfig;
use dirscribe_core::pipeline::{builtin_template, builtin_templates, PromptTemplate};
use serde::Deserialize;

pub struct RunConfig {
    pub manifest: PathBuf,
    pub model: String,
    pub provider: ProviderConfig,
    pub templates: Templates,
    pub threshold: f64,
    pub out: PathBuf,
}

/// The prompt each task runs with, resolved at load time so a broken
/// template or a dangling path fails before any request goes out.
pub struct Templates {
    pub ocr: PromptTemplate,
    pub postcorrect: PromptTemplate,
    pub ner_image: PromptTemplate,
    pub ner_text: PromptTemplate,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    manifest: String,
    model: String,
    provider: ProviderConfig,
    #[serde(default)]
    templates: RawTemplates,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default = "default_out")]
    out: String,
}

/// Template values are either `builtin:<id>` or a path relative to the
/// config file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    ocr: Option<String>,
    postcorrect: Option<String>,
    ner_image: Option<String>,
    ner_text: Option<String>,
}

fn default_threshold() -> f64 {
    0.9
}

fn default_out() -> String {
    "runs".to_string()
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let raw: RawConfig =
        toml::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    raw.provider.validate()?;
    if raw.model.is_empty() {
        bail!("config {}: model must be non-empty", path.display());
    }
    check_threshold(raw.threshold)?;

    let pick = |spec: &Option<String>, fallback: &str| -> Result<PromptTemplate> {
        resolve_template(spec.as_deref().unwrap_or(fallback), base)
    };
    let templates = Templates {
        ocr: pick(&raw.templates.ocr, "builtin:ocr-default")?,
        postcorrect: pick(&raw.templates.postcorrect, "builtin:postcorrect-default")?,
        ner_image: pick(&raw.templates.ner_image, "builtin:ner-image")?,
        ner_text: pick(&raw.templates.ner_text, "builtin:ner-text")?,
    };

    Ok(RunConfig {
        manifest: base.join(raw.manifest),
        model: raw.model,
        provider: raw.provider,
        templates,
        threshold: raw.threshold,
        out: base.join(raw.out),
    })
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        bail!("threshold must be in (0, 1], got {threshold}");
    }
    Ok(())
}

fn resolve_template(spec: &str, base: &Path) -> Result<PromptTemplate> {
    if let Some(id) = spec.strip_prefix("builtin:") {
        builtin_template(id).ok_or_else(|| {
            let known: Vec<String> =
                builtin_templates().into_iter().map(|t| t.template_id).collect();
            anyhow::anyhow!("unknown builtin template {id:?}; available: {}", known.join(", "))
        })
    } else {
        let path = base.join(spec);
        PromptTemplate::from_file(&path)
            .with_context(|| format!("cannot load template {}", path.display()))
    }
}
