use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ini::Ini;
use railinspect::cnn::TrainConfig;
use railinspect::inspect::PipelineConfig;
use railinspect::scene::AugmentConfig;
use railinspect::{ComponentKind, DatasetSpec, SceneConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Name of the resolved-config echo written into every output directory.
pub const CONFIG_ECHO: &str = "config.ini";

/// Bad arguments or config; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Settings merged from built-in defaults, an optional INI file and flags,
/// in that order of precedence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    /// `section.key` entries set by the file, for defaults that depend on
    /// the data (such as steps per epoch).
    #[serde(skip)]
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("railinspect-out"),
            scene: SceneConfig::default(),
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let ini = Ini::load_from_file(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_ini(&ini)?;
        }
        if let Some(seed) = seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = out {
            cfg.out = out;
        }
        cfg.propagate_seed();
        Ok(cfg)
    }

    pub fn apply_ini(&mut self, ini: &Ini) -> Result<()> {
        for (section, props) in ini.iter() {
            match section {
                None => {
                    for (key, value) in props.iter() {
                        match key {
                            "seed" => {
                                self.seed = Some(value.parse().map_err(|_| usage(format!("bad seed {value:?}")))?)
                            }
                            "out" => self.out = PathBuf::from(value),
                            _ => return Err(usage(format!("unknown top-level config key {key:?}"))),
                        }
                    }
                }
                Some("scene") => apply_section(&mut self.scene, "scene", props)?,
                Some("pipeline") => apply_section(&mut self.pipeline, "pipeline", props)?,
                Some("train") => apply_section(&mut self.train, "train", props)?,
                Some("dataset") => {
                    let touches_augment = props.iter().any(|(k, _)| k.starts_with("augment."));
                    if touches_augment && self.dataset.augment.is_none() {
                        self.dataset.augment = Some(AugmentConfig::default());
                    }
                    apply_section(&mut self.dataset, "dataset", props)?
                }
                Some(other) => return Err(usage(format!("unknown config section [{other}]"))),
            }
            if let Some(section) = section {
                self.explicit.extend(props.iter().map(|(k, _)| format!("{section}.{k}")));
            }
        }
        Ok(())
    }

    /// The global seed, when given, drives every seeded component.
    pub fn propagate_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.scene.master_seed = seed;
            self.dataset.seed = seed;
            self.train.seed = seed;
        }
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        if let Some(seed) = self.seed {
            ini.with_general_section().set("seed", seed.to_string());
        }
        ini.with_general_section().set("out", self.out.display().to_string());
        let sections: [(&str, Value); 4] = [
            ("scene", serde_json::to_value(&self.scene).expect("serializable")),
            ("pipeline", serde_json::to_value(&self.pipeline).expect("serializable")),
            ("train", serde_json::to_value(&self.train).expect("serializable")),
            ("dataset", serde_json::to_value(&self.dataset).expect("serializable")),
        ];
        for (name, value) in sections {
            let mut flat = Vec::new();
            flatten("", &value, &mut flat);
            for (k, v) in flat {
                ini.with_section(Some(name)).set(k, v);
            }
        }
        ini
    }

    /// Writes the resolved config into `dir` so the run can be repeated.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(CONFIG_ECHO);
        self.to_ini()
            .write_to_file(&path)
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                match v {
                    Value::Object(_) => flatten(&join(k), v, out),
                    Value::Null => {}
                    _ => out.push((join(k), scalar_text(v))),
                }
            }
        }
        Value::Null => {}
        v => out.push((prefix.to_string(), scalar_text(v))),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn parse_scalar(raw: &str, like: &Value) -> Option<Value> {
    match like {
        Value::String(_) => Some(Value::String(raw.to_string())),
        Value::Number(_) | Value::Bool(_) => serde_json::from_str(raw.trim()).ok(),
        _ => serde_json::from_str(raw.trim()).ok().or_else(|| Some(Value::String(raw.trim().to_string()))),
    }
}

fn apply_section<T: Serialize + DeserializeOwned>(target: &mut T, section: &str, props: &ini::Properties) -> Result<()> {
    let mut root = serde_json::to_value(&*target).expect("serializable");
    for (key, raw) in props.iter() {
        let bad = |why: &str| usage(format!("[{section}] {key} = {raw:?}: {why}"));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot.get_mut(part).ok_or_else(|| bad("unknown key"))?;
        }
        let new = if section == "dataset" && key == "defect_kinds" {
            let kinds = raw
                .split(',')
                .map(|k| k.trim().parse::<ComponentKind>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            serde_json::to_value(kinds).expect("serializable")
        } else {
            match &*slot {
                Value::Object(_) => return Err(bad("is a group, set its fields instead")),
                Value::Array(items) => {
                    let like = items.first().cloned().unwrap_or(Value::Null);
                    let parts = raw.split(',').map(str::trim).filter(|p| !p.is_empty());
                    Value::Array(parts.map(|p| parse_scalar(p, &like).ok_or_else(|| bad("bad list item"))).collect::<Result<_>>()?)
                }
                like => parse_scalar(raw, like).ok_or_else(|| bad("wrong value type"))?,
            }
        };
        *slot = new;
    }
    *target = serde_json::from_value(root).map_err(|e| usage(format!("[{section}]: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_ini(&Ini::load_from_str(text).unwrap())?;
        cfg.propagate_seed();
        Ok(cfg)
    }

    #[test]
    fn file_values_override_defaults() {
        let cfg = load("seed = 9\n[pipeline]\ndiff_threshold = 14\n[train]\nlearning_rate = 0.002\nshuffle = false\n[dataset]\ndefect_kinds = block, S\ncounts.train = 40\n").unwrap();
        assert_eq!(cfg.pipeline.diff_threshold, 14);
        assert_eq!(cfg.train.learning_rate, 0.002);
        assert!(!cfg.train.shuffle);
        assert_eq!(cfg.dataset.defect_kinds, vec![ComponentKind::Block, ComponentKind::Screw]);
        assert_eq!(cfg.dataset.counts.train, 40);
        assert_eq!((cfg.scene.master_seed, cfg.dataset.seed, cfg.train.seed), (9, 9, 9));
        assert!(cfg.is_explicit("train.learning_rate"));
        assert!(!cfg.is_explicit("train.steps_per_epoch"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        for text in ["[pipeline]\nthreshold = 3\n", "[train]\nepochs = many\n", "[bogus]\nx = 1\n", "colour = red\n"] {
            let err = load(text).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{text}: {err}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = load("seed = 4\n[dataset]\naugment.flip_probability = 0.5\nimage_size = 96\n").unwrap();
        cfg.pipeline.min_blob_area = 20;
        let text = {
            let mut buf = Vec::new();
            cfg.to_ini().write_to(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let mut back = RunConfig::default();
        back.apply_ini(&Ini::load_from_str(&text).unwrap()).unwrap();
        back.propagate_seed();
        back.explicit.clear();
        cfg.explicit.clear();
        assert_eq!(back, cfg);
    }
}
