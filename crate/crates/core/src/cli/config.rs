use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{SyntheticConfig, TaskDesign};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::odl::ValidationConfig;
use crate::ps::{ServerConfig, TrainRunConfig};
use crate::scalar::Precision;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub design: TaskDesign,
    pub train: SyntheticConfig,
    pub eval: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            design: TaskDesign::motor(),
            train: SyntheticConfig::default(),
            eval: SyntheticConfig {
                n_signals: 1000,
                noise_sigma: 1.0,
                seed: 1,
                ..SyntheticConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub worker_counts: Vec<usize>,
    /// Updates applied per worker count.
    pub step_budget: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            worker_counts: vec![1, 2, 4],
            step_budget: 100,
        }
    }
}

/// Every setting a command can use. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(with = "precision_name")]
    pub precision: Precision,
    /// Seed of the initial weights.
    pub model_seed: u64,
    pub model: ModelConfig,
    pub server: ServerConfig,
    pub run: TrainRunConfig,
    pub data: DataConfig,
    pub validation: ValidationConfig,
    pub bench: BenchConfig,
    /// Where outputs go.
    pub out: PathBuf,
    /// Where `train.fmts`, `eval.fmts` and `designs.csv` are read from;
    /// defaults to `out`.
    pub data_dir: Option<PathBuf>,
    /// Model file to read; defaults to `out/model.dpsg`.
    pub model_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            precision: Precision::F32,
            model_seed: 0,
            model: ModelConfig::default(),
            server: ServerConfig::default(),
            run: TrainRunConfig::default(),
            data: DataConfig::default(),
            validation: ValidationConfig::default(),
            bench: BenchConfig::default(),
            out: PathBuf::from("run"),
            data_dir: None,
            model_path: None,
        }
    }
}

mod precision_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::Precision;

    pub fn serialize<S: Serializer>(p: &Precision, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match p {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Precision, D::Error> {
        match String::deserialize(d)?.as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(serde::de::Error::custom(format!("precision must be f32 or f64, not {other:?}"))),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    /// Reads a config file, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => Self::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io_at(p, e))?),
        }
    }

    /// Applies flag overrides. A seed replaces every seed in the config:
    /// run, model, ODL, training data, and evaluation data (seed + 1).
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(w) = o.workers {
            self.run.worker_count = w;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
            self.model_seed = s;
            self.validation.odl.seed = s;
            self.data.train.seed = s;
            self.data.eval.seed = s.wrapping_add(1);
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.server.validate()?;
        self.run.worker_plan().validate()?;
        self.validation.odl.validate()?;
        self.data.design.validate()?;
        if self.data.design.length != self.model.input_length {
            return Err(Error::config(format!(
                "design spans {} scans, model expects {}",
                self.data.design.length, self.model.input_length
            )));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.out)
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path.clone().unwrap_or_else(|| self.out.join("model.dpsg"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `<command>.config.json` into the output directory, recording
    /// the crate version next to the resolved settings.
    pub fn write_resolved(&self, command: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let doc = serde_json::json!({
            "command": command,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "config": self,
        });
        let path = self.out.join(format!("{command}.config.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
        Ok(path)
    }

    /// Reads back a file written by [`write_resolved`](Self::write_resolved).
    pub fn read_resolved(path: &Path) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)?;
        let cfg = doc
            .get("config")
            .ok_or_else(|| Error::config(format!("{} has no config entry", path.display())))?;
        serde_json::from_value(cfg.clone()).map_err(|e| Error::config(format!("config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"epochs": 3}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"run": {"workers": 3}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_json(r#"{"precision": "f64", "run": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.precision, Precision::F64);
        assert_eq!(c.run.epochs, 3);
        assert_eq!(c.run.batch_size, 32);
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn seed_override_reaches_every_seed() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            workers: Some(4),
            seed: Some(9),
            out: Some("x".into()),
        });
        assert_eq!(c.run.worker_count, 4);
        assert_eq!((c.run.seed, c.model_seed, c.validation.odl.seed), (9, 9, 9));
        assert_eq!((c.data.train.seed, c.data.eval.seed), (9, 10));
        assert_eq!(c.data_dir(), Path::new("x"));
    }
}
