use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven-template prompt subset used to contextualize class names.
pub const DEFAULT_TEMPLATES: [&str; 7] = [
    "itap of a {}.",
    "a bad photo of the {}.",
    "a origami {}.",
    "a photo of the large {}.",
    "a {} in a video game.",
    "art of the {}.",
    "a photo of the small {}.",
];

/// Evaluation class names and the prompt templates they are embedded with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSet {
    pub classes: Vec<String>,
    #[serde(default = "default_templates")]
    pub templates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_threshold: Option<f64>,
}

fn default_templates() -> Vec<String> {
    DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect()
}

impl ClassSet {
    pub fn new(classes: Vec<String>, templates: Vec<String>) -> Self {
        Self {
            classes,
            templates,
            background_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("class set has no classes".into()));
        }
        if self.classes.len() > 254 {
            return Err(Error::Config(format!(
                "{} classes do not fit 8-bit masks with a sentinel",
                self.classes.len()
            )));
        }
        check_templates(&self.templates)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn check_templates<S: AsRef<str>>(templates: &[S]) -> Result<()> {
    if templates.is_empty() {
        return Err(Error::Config("no prompt templates".into()));
    }
    for t in templates {
        if !t.as_ref().contains("{}") {
            return Err(Error::Config(format!("template {:?} has no {{}}", t.as_ref())));
        }
    }
    Ok(())
}

/// Replaces the first `{}` of `template` with `name`.
pub fn fill_template(template: &str, name: &str) -> String {
    template.replacen("{}", name, 1)
}
