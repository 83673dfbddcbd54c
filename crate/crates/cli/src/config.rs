//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use fan_core::corpus::SynthConfig;
use fan_core::trainer::TrainConfig;
use fan_core::{FanError, Result};
use serde::{Deserialize, Serialize};

/// File locations. Relative paths in a config file resolve against the
/// file's directory; unset paths default to files inside the output dir.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub rel2id: Option<PathBuf>,
    pub train_truth: Option<PathBuf>,
    pub test_truth: Option<PathBuf>,
    pub mined: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub filter_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the no-relation label in the corpus files.
    pub na_name: String,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            na_name: fan_core::corpus::NA_RELATION.into(),
            paths: Paths::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Sets `a.b.c = value` inside a TOML table, creating tables on the way.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| FanError::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| FanError::Config("empty override key".into()))?;
    let mut table = root;
    for part in parts {
        table = table
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| FanError::Config(format!("override key {key:?}: {part} is not a table")))?;
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads the file (if any), applies `--set` overrides, then `--seed` and `--out`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| FanError::Config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| FanError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| FanError::Config(e.to_string()))?;

        if let Some(base) = path.and_then(Path::parent) {
            config.paths.resolve_against(base);
        }
        if let Some(s) = seed {
            config.synth.seed = s;
            config.train.seed = s;
        }
        if let Some(dir) = out {
            config.paths.out = Some(dir.to_path_buf());
        }
        config.train.validate()?;
        config.synth.validate()?;
        Ok(config)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("fan-out"))
    }

    fn or_out(&self, p: &Option<PathBuf>, file: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out_dir().join(file))
    }

    pub fn train_path(&self) -> PathBuf {
        self.or_out(&self.paths.train, "train.jsonl")
    }
    pub fn test_path(&self) -> PathBuf {
        self.or_out(&self.paths.test, "test.jsonl")
    }
    pub fn rel2id_path(&self) -> PathBuf {
        self.or_out(&self.paths.rel2id, "rel2id.json")
    }
    pub fn train_truth_path(&self) -> PathBuf {
        self.or_out(&self.paths.train_truth, "train_truth.jsonl")
    }
    pub fn test_truth_path(&self) -> PathBuf {
        self.or_out(&self.paths.test_truth, "test_truth.jsonl")
    }
    pub fn mined_path(&self) -> PathBuf {
        self.or_out(&self.paths.mined, "mined.jsonl")
    }
    pub fn checkpoint_path(&self) -> PathBuf {
        self.or_out(&self.paths.checkpoint, "model.ckpt")
    }
    pub fn filter_checkpoint_path(&self) -> PathBuf {
        self.or_out(&self.paths.filter_checkpoint, "filter.ckpt")
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.out,
            &mut self.train,
            &mut self.test,
            &mut self.rel2id,
            &mut self.train_truth,
            &mut self.test_truth,
            &mut self.mined,
            &mut self.checkpoint,
            &mut self.filter_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::load(
            None,
            &[
                "train.epochs=2".into(),
                "train.objective.gamma=0.5".into(),
                "synth.id_prefix=abc".into(),
            ],
            Some(9),
            None,
        )
        .unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.objective.gamma, 0.5);
        assert_eq!(c.synth.id_prefix, "abc");
        assert_eq!((c.train.seed, c.synth.seed), (9, 9));
    }

    #[test]
    fn bad_keys_are_config_errors() {
        for bad in ["train.nope=1", "train", "train.batch_size=1"] {
            let err = RunConfig::load(None, &[bad.into()], None, None).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{bad}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[paths]\ntrain = \"data/t.jsonl\"\n").unwrap();
        let c = RunConfig::load(Some(&file), &[], None, None).unwrap();
        assert_eq!(c.train_path(), dir.path().join("data/t.jsonl"));
    }
}
