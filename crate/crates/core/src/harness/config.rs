//! TOML experiment configuration.
//!
//! ```toml
//! [data]
//! dir = "data/mnist"          # optional; falls back to $OODF_DATA_DIR
//! order = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
//!
//! [strategy]
//! kind = "owm"
//! owm_alpha = [1e-2, 1e-1]
//!
//! [shift]                      # omit the whole section for a control run
//! kind = "occlusion"
//! pixels = 4
//! strength = 32
//! ratio = 0.9
//! target_task = 4
//!
//! [train]
//! epochs = 1
//!
//! [eval]
//! seeds = [0, 1, 2, 3, 4]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::data::{corner_block, Pixel, ShiftKind, ShiftSpec};
use crate::strategies::{Hyperparams, StrategyKind};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "OODF_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    pub strategy: StrategySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_order")]
    pub order: Vec<u8>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            order: default_order(),
        }
    }
}

fn default_order() -> Vec<u8> {
    (0..10).collect()
}

/// Strategy id plus optional overrides of its default hyperparameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub der_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub der_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owm_alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owm_alpha_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gdumb_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seeds: default_seeds(),
            out: None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMethod {
    Occlusion,
    Fgsm,
}

/// Occlusion takes either `pixels` (a perfect square, placed one pixel in
/// from the bottom-right corner) or explicit `positions` as `[row, col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    pub kind: ShiftMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub ratio: f64,
    pub target_task: usize,
}

impl ShiftSection {
    /// Occlusion by a square corner block of `pixels` pixels.
    pub fn occlusion(pixels: usize, strength: u8, ratio: f64, target_task: usize) -> Self {
        ShiftSection {
            kind: ShiftMethod::Occlusion,
            pixels: Some(pixels),
            positions: None,
            strength: Some(strength),
            epsilon: None,
            ratio,
            target_task,
        }
    }

    pub fn to_spec(&self, rows: usize, cols: usize) -> Result<ShiftSpec, HarnessError> {
        let kind = match self.kind {
            ShiftMethod::Occlusion => {
                let strength = self
                    .strength
                    .ok_or_else(|| HarnessError::config("shift.strength", "required for occlusion"))?;
                let positions = match (&self.pixels, &self.positions) {
                    (Some(n), None) => {
                        let side = (*n as f64).sqrt().round() as usize;
                        if side == 0 || side * side != *n {
                            return Err(HarnessError::config(
                                "shift.pixels",
                                format!("{n} is not a positive perfect square"),
                            ));
                        }
                        if side + 1 > rows.min(cols) {
                            return Err(HarnessError::config(
                                "shift.pixels",
                                format!("a {side}x{side} block does not fit a {rows}x{cols} image"),
                            ));
                        }
                        corner_block(side, rows, cols, 1)
                    }
                    (None, Some(list)) => list.iter().map(|&[row, col]| Pixel { row, col }).collect(),
                    _ => {
                        return Err(HarnessError::config(
                            "shift.pixels",
                            "give exactly one of `pixels` or `positions`",
                        ))
                    }
                };
                ShiftKind::Occlusion {
                    positions,
                    strength,
                }
            }
            ShiftMethod::Fgsm => ShiftKind::Fgsm {
                epsilon: self.epsilon.unwrap_or(0.1),
            },
        };
        let spec = ShiftSpec {
            kind,
            ratio: self.ratio,
            target_task: self.target_task,
        };
        spec.validate(rows, cols)
            .map_err(|e| HarnessError::config("shift", e.to_string()))?;
        Ok(spec)
    }
}

impl ExperimentConfig {
    /// A config with every default filled in for `kind`, no shift.
    pub fn new(kind: StrategyKind) -> Self {
        ExperimentConfig {
            data: DataSection::default(),
            strategy: StrategySection {
                kind: Some(kind),
                ..StrategySection::default()
            },
            shift: None,
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Parse(m) => HarnessError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn kind(&self) -> Result<StrategyKind, HarnessError> {
        self.strategy
            .kind
            .ok_or_else(|| HarnessError::config("strategy.kind", "missing"))
    }

    pub fn num_tasks(&self) -> usize {
        self.data.order.len()
    }

    /// Defaults for the strategy with every configured override applied.
    pub fn hyperparams(&self) -> Result<Hyperparams, HarnessError> {
        let s = &self.strategy;
        let mut hp = Hyperparams::for_kind(self.kind()?);
        macro_rules! apply {
            ($src:expr, $($field:ident),*) => {
                $(if let Some(v) = &$src.$field { hp.$field = v.clone(); })*
            };
        }
        apply!(
            s,
            hidden,
            buffer_capacity,
            der_alpha,
            der_beta,
            owm_alpha,
            owm_alpha_decay,
            distill_temperature,
            expert_hidden,
            gdumb_epochs
        );
        apply!(self.train, epochs, batch_size, lr);
        hp.validate()
            .map_err(|e| HarnessError::config("strategy", e.to_string()))?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.kind()?;
        self.hyperparams()?;
        if self.eval.seeds.is_empty() {
            return Err(HarnessError::config("eval.seeds", "must not be empty"));
        }
        if self.data.order.is_empty() {
            return Err(HarnessError::config("data.order", "must not be empty"));
        }
        if let Some(shift) = &self.shift {
            if shift.target_task == 0 || shift.target_task > self.num_tasks() {
                return Err(HarnessError::config(
                    "shift.target_task",
                    format!("{} is outside 1..={}", shift.target_task, self.num_tasks()),
                ));
            }
        }
        Ok(())
    }

    /// Configured directory, else `$OODF_DATA_DIR`.
    pub fn data_dir(&self) -> Result<PathBuf, HarnessError> {
        self.data
            .dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                HarnessError::config("data.dir", format!("not set and ${DATA_DIR_ENV} is empty"))
            })
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Same experiment with the shift section removed.
    pub fn control(&self) -> Self {
        ExperimentConfig {
            shift: None,
            ..self.clone()
        }
    }

    /// Flattened `section.key = value` pairs that differ between the two
    /// configs (`<unset>` where a key is absent on one side).
    pub fn diff(&self, other: &ExperimentConfig) -> Vec<(String, String, String)> {
        let a = flatten(self);
        let b = flatten(other);
        let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        let unset = || "<unset>".to_string();
        keys.into_iter()
            .filter(|k| a.get(*k) != b.get(*k))
            .map(|k| {
                (
                    k.clone(),
                    a.get(k).cloned().unwrap_or_else(unset),
                    b.get(k).cloned().unwrap_or_else(unset),
                )
            })
            .collect()
    }
}

fn flatten(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let value = toml::Value::try_from(cfg).expect("config serializes");
    let mut out = BTreeMap::new();
    if let toml::Value::Table(sections) = value {
        for (section, body) in sections {
            match body {
                toml::Value::Table(fields) => {
                    for (k, v) in fields {
                        out.insert(format!("{section}.{k}"), v.to_string());
                    }
                }
                other => {
                    out.insert(section, other.to_string());
                }
            }
        }
    }
    out
}
