//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys are rejected. [`RunConfig`] bundles the model description
//! with training hyperparameters and data settings; its canonical text form
//! lists every key in a fixed order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::train::{AdamConfig, LrSchedule, TrainConfig};

/// One parsed `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line,
                msg: "empty key".into(),
            });
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::ConfigParse {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        out.push(Entry {
            line,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub(crate) fn parse_num<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| Error::ConfigParse {
        line: e.line,
        msg: format!("`{}`: cannot parse `{}`", e.key, e.value),
    })
}

pub(crate) fn parse_list(e: &Entry) -> Result<Vec<usize>> {
    e.value
        .split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| Error::ConfigParse {
                line: e.line,
                msg: format!("`{}`: cannot parse list item `{}`", e.key, p.trim()),
            })
        })
        .collect()
}

pub(crate) fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::ConfigParse {
            line: e.line,
            msg: format!("`{}`: expected true/false, got `{}`", e.key, e.value),
        }),
    }
}

pub(crate) fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Everything a training run needs besides the dataset itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of samples used for training; the rest is validation.
    pub train_ratio: f64,
    /// Optional manifest path, overridable on the command line.
    pub data: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_ratio: 0.85,
            data: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let (model_entries, rest): (Vec<Entry>, Vec<Entry>) =
            entries.into_iter().partition(|e| ModelConfig::KEYS.contains(&e.key.as_str()));
        let mut cfg = RunConfig {
            model: ModelConfig::from_entries(&model_entries)?,
            ..Default::default()
        };
        let mut train_ratio = cfg.train_ratio;
        let mut data = None;
        let t = &mut cfg.train;
        for e in &rest {
            match e.key.as_str() {
                "lr" => t.adam.lr = parse_num(e)?,
                "beta1" => t.adam.beta1 = parse_num(e)?,
                "beta2" => t.adam.beta2 = parse_num(e)?,
                "epsilon" => t.adam.epsilon = parse_num(e)?,
                "weight_decay" => t.adam.weight_decay = parse_num(e)?,
                "batch" => t.batch = parse_num(e)?,
                "epochs" => t.epochs = parse_num(e)?,
                "seed" => t.seed = parse_num(e)?,
                "lr_schedule" => {
                    t.lr_schedule = LrSchedule::parse(&e.value).ok_or_else(|| Error::ConfigParse {
                        line: e.line,
                        msg: format!("bad lr_schedule `{}` (constant | step:<epochs>:<gamma>)", e.value),
                    })?
                }
                "augment" => t.augment.enabled = parse_bool(e)?,
                "hflip_p" => t.augment.hflip_p = parse_num(e)?,
                "shear" => t.augment.shear = parse_num(e)?,
                "crop" => {
                    t.augment.crop = if e.value == "none" {
                        None
                    } else {
                        let (h, w) = parse_size(&e.value).ok_or_else(|| Error::ConfigParse {
                            line: e.line,
                            msg: format!("bad crop `{}` (HxW or none)", e.value),
                        })?;
                        Some((h, w))
                    }
                }
                "train_ratio" => train_ratio = parse_num(e)?,
                "data" => data = Some(e.value.clone()),
                other => {
                    return Err(Error::ConfigParse {
                        line: e.line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        cfg.train_ratio = train_ratio;
        cfg.data = data;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if t.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !t.adam.lr.is_finite() || t.adam.lr < 0.0 {
            return bad("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&t.adam.beta1) || !(0.0..1.0).contains(&t.adam.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if t.adam.epsilon.is_nan() || t.adam.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if t.adam.weight_decay.is_nan() || t.adam.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&t.augment.hflip_p) {
            return bad("hflip_p must lie in [0, 1]");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must lie in (0, 1)");
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order, `key = value`.
    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        let t = &self.train;
        let a: &AdamConfig = &t.adam;
        let _ = writeln!(s, "lr = {}", a.lr);
        let _ = writeln!(s, "beta1 = {}", a.beta1);
        let _ = writeln!(s, "beta2 = {}", a.beta2);
        let _ = writeln!(s, "epsilon = {}", a.epsilon);
        let _ = writeln!(s, "weight_decay = {}", a.weight_decay);
        let _ = writeln!(s, "batch = {}", t.batch);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "lr_schedule = {}", t.lr_schedule);
        let _ = writeln!(s, "augment = {}", t.augment.enabled);
        let _ = writeln!(s, "hflip_p = {}", t.augment.hflip_p);
        let _ = writeln!(s, "shear = {}", t.augment.shear);
        let crop = t.augment.crop.map(|(h, w)| format!("{h}x{w}")).unwrap_or_else(|| "none".into());
        let _ = writeln!(s, "crop = {crop}");
        let _ = writeln!(s, "train_ratio = {}", self.train_ratio);
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {d}");
        }
        s
    }
}

/// Parses `HxW` (or a single number for a square size).
pub fn parse_size(s: &str) -> Option<(usize, usize)> {
    let s = s.trim();
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Some((h.trim().parse().ok()?, w.trim().parse().ok()?)),
        None => {
            let v = s.parse().ok()?;
            Some((v, v))
        }
    }
}
