//! The resolved configuration of one workflow run and its manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::gradcheck::GradcheckSpec;
use super::report::config_digest;
use super::tradeoff::TradeoffSpec;
use super::train::TrainSpec;
use crate::blender::BlenderConfig;
use crate::error::{Error, Result};
use crate::io::FORMAT_VERSION;
use crate::synth::SceneSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub seeds: u64,
    pub tolerance: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            seeds: 1,
            tolerance: 1e-10,
        }
    }
}

/// Everything a workflow reads, one section per concern.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub blender: BlenderConfig,
    pub scene: SceneSpec,
    /// Frames written by `gen`.
    pub frames: usize,
    pub train: TrainSpec,
    pub tradeoff: TradeoffSpec,
    pub gradcheck: GradcheckSpec,
    pub oracle: OracleSpec,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig {
            frames: 16,
            ..Default::default()
        }
    }

    /// Reads a JSON file; missing sections and keys take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut base = serde_json::to_value(RunConfig::new())?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        merge(&mut base, &file, "")?;
        serde_json::from_value(base).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    /// Applies `section.key=value`. The value is parsed as JSON, falling
    /// back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set_value(path, value)
    }

    pub fn set_value(&mut self, path: &str, value: Value) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::config(path, "unknown key"))?;
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| Error::config(path, e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        fn scoped(section: &str, r: Result<()>) -> Result<()> {
            r.map_err(|e| match e {
                Error::Config { key, reason } => Error::Config {
                    key: format!("{section}.{key}"),
                    reason,
                },
                other => other,
            })
        }
        scoped("blender", self.blender.validate())?;
        scoped("scene", self.scene.validate())?;
        scoped("train", self.train.validate())?;
        scoped("tradeoff", self.tradeoff.validate())?;
        if self.frames < 3 {
            return Err(Error::config("frames", "at least 3 frames"));
        }
        if !(1e-7..=1e-4).contains(&self.gradcheck.epsilon) {
            return Err(Error::config("gradcheck.epsilon", "must lie in [1e-7, 1e-4]"));
        }
        if self.oracle.seeds == 0 {
            return Err(Error::config("oracle.seeds", "must be at least 1"));
        }
        Ok(())
    }

    /// Overrides every seed of the run, keeping train and eval ranges apart.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.blender.seed = seed;
        self.scene.seed = seed;
        let span = self.train.train_sequences as u64;
        self.train.train_seed = seed.wrapping_mul(span.max(1) + self.train.eval_sequences as u64);
        self.train.eval_seed = self.train.train_seed + span;
        self.tradeoff.eval_seed = self.train.eval_seed;
        self
    }

    pub fn digest(&self) -> Result<String> {
        config_digest(self)
    }
}

fn merge(base: &mut Value, over: &Value, prefix: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(Error::config(key, "unknown key")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

/// Written next to every workflow's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub workflow: String,
    pub tool_version: String,
    pub tensor_format: String,
    pub config_digest: String,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(workflow: &str, config: &RunConfig, artifacts: Vec<String>) -> Result<Self> {
        Ok(RunManifest {
            workflow: workflow.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            tensor_format: FORMAT_VERSION.to_string(),
            config_digest: config.digest()?,
            config: config.clone(),
            artifacts,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(dir.as_ref().join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::new().validate().unwrap();
    }

    #[test]
    fn set_paths() {
        let mut c = RunConfig::new();
        c.set("train.steps=7").unwrap();
        c.set("blender.variant=diff").unwrap();
        c.set("scene.grid=[2,8,8]").unwrap();
        c.set("blender.delta=0.5").unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.blender.variant, crate::blender::RelationVariant::Diff);
        assert_eq!(c.scene.grid, [2, 8, 8]);
        assert_eq!(c.blender.delta, 0.5);
    }

    #[test]
    fn bad_paths_name_the_key() {
        let mut c = RunConfig::new();
        let msg = |e: Error| e.to_string();
        assert!(msg(c.set("train.stepz=1").unwrap_err()).contains("train.stepz"));
        assert!(msg(c.set("train.steps=abc").unwrap_err()).contains("train.steps"));
        assert!(msg(c.set("nokey").unwrap_err()).contains("nokey"));
        c.set("train.steps=0").unwrap();
        assert!(msg(c.validate().unwrap_err()).contains("train.steps"));
    }

    #[test]
    fn load_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"blender": {"delta": 0.25}, "train": {"steps": 3}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.blender.delta, 0.25);
        assert_eq!(c.train.steps, 3);
        assert_eq!(c.frames, 16);
        fs::write(&p, r#"{"blender": {"deltta": 0.25}}"#).unwrap();
        assert!(RunConfig::load(&p).unwrap_err().to_string().contains("blender.deltta"));
    }

    #[test]
    fn seeds_keep_ranges_disjoint() {
        for s in [0, 1, 7, 1000] {
            RunConfig::new().with_seed(s).validate().unwrap();
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::new();
        let mut b = a.clone();
        b.set("train.steps=9").unwrap();
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap(), RunConfig::new().digest().unwrap());
    }
}
