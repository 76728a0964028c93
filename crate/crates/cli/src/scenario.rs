//! Declarative scenario files.
//!
//! ```toml
//! name = "cars"
//! context = "a photorealistic picture of a car"
//! n = 20
//! seed = 37
//! mode = "quota"        # or "iid"
//! iterations = 1        # regeneration rounds after configuring attributes
//!
//! [mock]
//! q = 1.0
//! sigma = 0.0
//!
//! [[attributes]]
//! name = "color"
//! labels = ["blue", "red"]
//! target = [0.5, 0.5]   # or "balance"; omitted means uniform
//! ```

use std::path::Path;

use divprompt_core::{AttributeSpec, SamplingMode};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub context: String,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default = "one")]
    pub iterations: usize,
    #[serde(default)]
    pub mock: MockSettings,
    #[serde(default)]
    pub attributes: Vec<AttributeBlock>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    #[serde(default = "perfect")]
    pub q: f64,
    #[serde(default)]
    pub sigma: f64,
}

fn perfect() -> f64 {
    1.0
}

impl Default for MockSettings {
    fn default() -> Self {
        Self { q: 1.0, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeBlock {
    pub name: String,
    pub labels: Vec<String>,
    #[serde(default)]
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Weights(Vec<f64>),
    Keyword(String),
    #[default]
    Uniform,
}

impl AttributeBlock {
    /// Raw target weights; `None` means balanced.
    pub fn weights(&self) -> Result<Option<&[f64]>, CliError> {
        match &self.target {
            Target::Weights(w) => Ok(Some(w)),
            Target::Keyword(k) if k == "balance" => Ok(None),
            Target::Keyword(k) => Err(CliError::Parse(format!("attribute {:?}: unknown target {k:?}", self.name))),
            Target::Uniform => Ok(None),
        }
    }

    pub fn spec(&self) -> Result<AttributeSpec, CliError> {
        AttributeSpec::from_texts(&self.name, &self.labels, self.weights()?)
            .map_err(|e| CliError::Parse(format!("attribute {:?}: {e}", self.name)))
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.context.trim().is_empty() {
            return Err(CliError::Parse("context is empty".into()));
        }
        if self.n == 0 {
            return Err(CliError::Parse("n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mock.q) || !(self.mock.sigma >= 0.0) {
            return Err(CliError::Parse("mock q must be in [0, 1] and sigma non-negative".into()));
        }
        let mut seen: Vec<String> = Vec::new();
        for block in &self.attributes {
            let spec = block.spec()?;
            let key = spec.name().to_lowercase();
            if seen.contains(&key) {
                return Err(CliError::Parse(format!("attribute {:?} listed twice", block.name)));
            }
            seen.push(key);
        }
        Ok(())
    }
}
