//! Run configuration: a flat `key = value` map resolved from defaults, an
//! optional config file and command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use refnet::data::vocab::DEFAULT_VOCAB_CAP;
use refnet::data::Limits;
use refnet::training::TrainConfig;
use refnet::{Error, ModelConfig, Result};
use serde_json::{Map, Value};

/// Keys owned by the command line rather than the model or the trainer.
fn extra_defaults() -> Vec<(&'static str, Value)> {
    vec![
        ("vocab_cap", Value::from(DEFAULT_VOCAB_CAP)),
        ("validation_fraction", Value::from(0.1)),
        ("toy_train", Value::from(500)),
        ("toy_validation", Value::from(100)),
        ("toy_test", Value::from(100)),
        ("glove", Value::from("")),
    ]
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("config structs serialize to objects"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl RunConfig {
    /// Full-size defaults, or small model sizes for synthetic corpora.
    pub fn defaults(toy: bool) -> Self {
        let model = if toy {
            ModelConfig::toy(0, 32)
        } else {
            ModelConfig::default()
        };
        let mut values = BTreeMap::new();
        for (k, v) in object(serde_json::to_value(model).expect("model config serializes")) {
            if k != "vocab_size" {
                values.insert(k, v);
            }
        }
        let train = TrainConfig::default();
        for (k, v) in object(serde_json::to_value(&train).expect("train config serializes")) {
            if k != "limits" {
                values.insert(k, v);
            }
        }
        values.insert("max_passage".into(), Value::from(train.limits.max_passage));
        values.insert(
            "max_question".into(),
            Value::from(train.limits.max_question),
        );
        for (k, v) in extra_defaults() {
            values.insert(k.into(), v);
        }
        Self { values }
    }

    /// Sets one key, parsing `raw` as the type of its default.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let slot = self
            .values
            .get_mut(key)
            .ok_or_else(|| Error::config(format!("unknown config key {key:?}")))?;
        let raw = raw.trim();
        let bad = || Error::config(format!("bad value {raw:?} for {key}"));
        *slot = match slot {
            Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
            Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
            Value::Number(_) => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                Value::from(v)
            }
            _ => Value::from(raw),
        };
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("{origin}:{}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("--set expects key=value, got {p:?}")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    fn get(&self, key: &str) -> &Value {
        &self.values[key]
    }

    pub fn usize(&self, key: &str) -> usize {
        self.get(key).as_u64().expect("integer key") as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).as_f64().expect("numeric key")
    }

    pub fn str(&self, key: &str) -> &str {
        self.get(key).as_str().expect("string key")
    }

    pub fn seed(&self) -> u64 {
        self.usize("seed") as u64
    }

    fn subset(&self, keys: impl IntoIterator<Item = String>) -> Map<String, Value> {
        keys.into_iter()
            .filter_map(|k| self.values.get(&k).map(|v| (k, v.clone())))
            .collect()
    }

    pub fn model(&self, vocab_size: usize) -> Result<ModelConfig> {
        let keys = object(serde_json::to_value(ModelConfig::default()).expect("serializes"));
        let mut m = self.subset(keys.into_iter().map(|(k, _)| k));
        m.insert("vocab_size".into(), Value::from(vocab_size));
        let cfg: ModelConfig =
            serde_json::from_value(Value::Object(m)).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_passage: self.usize("max_passage"),
            max_question: self.usize("max_question"),
            clip: self.usize("clip"),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let keys = object(serde_json::to_value(TrainConfig::default()).expect("serializes"));
        let mut m = self.subset(keys.into_iter().map(|(k, _)| k).filter(|k| k != "limits"));
        m.insert(
            "limits".into(),
            serde_json::to_value(self.limits()).expect("serializes"),
        );
        let cfg: TrainConfig =
            serde_json::from_value(Value::Object(m)).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every typed view so errors surface before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model(8)?;
        self.train()?;
        let f = self.f64("validation_fraction");
        if !(0.0..1.0).contains(&f) {
            return Err(Error::config(format!(
                "validation_fraction must be in [0, 1), got {f}"
            )));
        }
        if self.usize("vocab_cap") == 0 {
            return Err(Error::config("vocab_cap must be positive"));
        }
        Ok(())
    }

    /// Sorted `key = value` lines, readable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved run configuration\n");
        for (k, v) in &self.values {
            match v {
                Value::String(t) => s.push_str(&format!("{k} = {t}\n")),
                other => s.push_str(&format!("{k} = {other}\n")),
            }
        }
        s
    }
}
