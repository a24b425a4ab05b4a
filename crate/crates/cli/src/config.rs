//! Flat dotted-key configuration (`model.levels = 2`, `train.lr = 0.001`).
//!
//! Values come from an optional TOML file, then `--set key=value`
//! overrides, then dedicated subcommand flags; later sources win. Every key
//! is checked against the known sections before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mlcgcn::data::{GraphSelector, SyntheticSpec};
use mlcgcn::model::ModelConfig;
use mlcgcn::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

/// Short spellings accepted for long keys.
const ALIASES: [(&str, &str); 3] = [
    ("train.lr", "train.learning_rate"),
    ("model.k", "model.levels"),
    ("model.K", "model.levels"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub truncate_to_min: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: None,
            truncate_to_min: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointSection {
    pub path: Option<PathBuf>,
}

impl Default for CheckpointSection {
    fn default() -> Self {
        Self { path: None }
    }
}

/// Graph choice for exports: `"all"`, `"pearson"`, or a 1-based level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelChoice {
    Index(usize),
    Named(String),
}

impl LevelChoice {
    pub fn selector(&self) -> Result<GraphSelector, CliError> {
        match self {
            LevelChoice::Index(l) => Ok(GraphSelector::Level(*l)),
            LevelChoice::Named(s) => match s.as_str() {
                "all" => Ok(GraphSelector::AllLevels),
                "pearson" => Ok(GraphSelector::Pearson),
                other => other
                    .parse()
                    .map(GraphSelector::Level)
                    .map_err(|_| CliError::usage(format!("export.level `{other}`: expected all, pearson or a level"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExportKind {
    MeanGraph,
    TopEdges,
    NodeImportance,
}

impl ExportKind {
    pub fn key(self) -> &'static str {
        match self {
            ExportKind::MeanGraph => "mean-graph",
            ExportKind::TopEdges => "top-edges",
            ExportKind::NodeImportance => "node-importance",
        }
    }

    /// Output file name inside the run directory.
    pub fn file_name(self) -> &'static str {
        match self {
            ExportKind::MeanGraph => "mean_graph.csv",
            ExportKind::TopEdges => "top_edges.csv",
            ExportKind::NodeImportance => "node_importance.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub what: Option<ExportKind>,
    pub fraction: f64,
    pub signed: bool,
    pub top: usize,
    pub absolute: bool,
    pub level: LevelChoice,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            what: None,
            fraction: 0.01,
            signed: false,
            top: 20,
            absolute: false,
            level: LevelChoice::Named("all".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub tolerance: f64,
    pub eps: f64,
    pub samples_per_class: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            eps: 1e-5,
            samples_per_class: 2,
        }
    }
}

/// Every key the CLI understands, as `(section, field)` pairs.
fn known_keys() -> Vec<String> {
    let mut keys = Vec::new();
    let mut add = |section: &str, value: serde_json::Value| {
        if let serde_json::Value::Object(map) = value {
            keys.extend(map.keys().map(|k| format!("{section}.{k}")));
        }
    };
    add("data", to_json(&DataSection::default()));
    add("model", to_json(&ModelConfig::tiny()));
    add("train", to_json(&TrainConfig::default()));
    add("synth", to_json(&SyntheticSpec::default()));
    add("checkpoint", to_json(&CheckpointSection::default()));
    add("export", to_json(&ExportSection::default()));
    add("gradcheck", to_json(&GradcheckSection::default()));
    keys.sort();
    keys
}

fn to_json<S: Serialize>(s: &S) -> serde_json::Value {
    serde_json::to_value(s).expect("config sections serialize")
}

/// Validated flat key/value settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    /// Parses a config file. Tables and dotted keys are both accepted.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let mut settings = Settings::default();
        flatten("", table, &mut settings.values);
        let values = std::mem::take(&mut settings.values);
        for (k, v) in values {
            settings.insert(&k, v)?;
        }
        Ok(settings)
    }

    /// Applies one `key=value` override; the value is read as TOML, falling
    /// back to a bare string.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override `{pair}` is not key=value")))?;
        self.set_raw(key.trim(), raw.trim())
    }

    pub fn set_raw(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.insert(key, value)
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> Result<(), CliError> {
        self.insert(key, value.into())
    }

    fn insert(&mut self, key: &str, value: Value) -> Result<(), CliError> {
        let key = ALIASES
            .iter()
            .find(|(alias, _)| *alias == key)
            .map_or(key, |(_, full)| full);
        if !known_keys().iter().any(|k| k == key) {
            return Err(CliError::usage(format!("unknown configuration key `{key}`")));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    /// `default` with every `section.*` value applied.
    pub fn section<S: Serialize + DeserializeOwned>(&self, section: &str, default: S) -> Result<S, CliError> {
        let mut json = to_json(&default);
        let map = json.as_object_mut().expect("sections are structs");
        let prefix = format!("{section}.");
        for (k, v) in &self.values {
            if let Some(field) = k.strip_prefix(&prefix) {
                map.insert(field.to_string(), to_json(v));
            }
        }
        serde_json::from_value(json).map_err(|e| CliError::usage(format!("[{section}] {e}")))
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

/// Resolved configuration written next to a run's outputs.
#[derive(Debug, Default)]
pub struct Snapshot {
    lines: Vec<String>,
}

impl Snapshot {
    pub fn add<S: Serialize>(&mut self, section: &str, value: &S) {
        if let serde_json::Value::Object(map) = to_json(value) {
            for (k, v) in map {
                // unset optional fields stay at their default on reload
                if v.is_null() {
                    continue;
                }
                let v = Value::try_from(v).expect("json config values map to toml");
                self.lines.push(format!("{section}.{k} = {v}"));
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut lines = self.lines.clone();
        lines.sort();
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("config.toml");
        fs::write(&path, self.to_text())
            .map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
