//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment. Guidance gains live under
//! `gains.*`, runway geometry under `runway.*`, all in SI units with angles
//! in radians. Vectors are written as three comma-separated numbers.
//!
//! ```text
//! # tuned for the reference airframe
//! gains.k_heading = 1.2
//! runway.touchdown_target = -2, -2, 0.1
//! trials = 10
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use thiserror::Error;

use crate::control::{GuidanceGains, RunwaySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const GAIN_KEYS: [&str; 10] = [
    "gains.k_heading",
    "gains.k_alt",
    "gains.k_speed",
    "gains.target_speed",
    "gains.max_pitch_cmd",
    "gains.capture_radius",
    "gains.standoff",
    "gains.k_closure",
    "gains.trim_throttle",
    "gains.pitch_trim",
];

pub const RUNWAY_KEYS: [&str; 11] = [
    "runway.centerline_start",
    "runway.centerline_end",
    "runway.pad_length",
    "runway.pad_width",
    "runway.pad_height",
    "runway.touchdown_target",
    "runway.glide_slope",
    "runway.flare_altitude",
    "runway.touchdown_epsilon",
    "runway.lookahead",
    "runway.flare_pitch",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            }
            if entries
                .insert(key.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(ConfigError::Duplicate {
                    line: idx + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn vector(&self, key: &str) -> Result<Option<Vector3<f64>>, ConfigError> {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        };
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [x, y, z] => Ok(Some(Vector3::new(x, y, z))),
            _ => Err(bad()),
        }
    }

    /// Fails on the first key outside the gain and runway sets and `extra`.
    pub fn check_keys(&self, extra: &[&str]) -> Result<(), ConfigError> {
        match self
            .keys()
            .find(|k| !GAIN_KEYS.contains(k) && !RUNWAY_KEYS.contains(k) && !extra.contains(k))
        {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn set<T: FromStr>(kv: &KeyValues, key: &str, slot: &mut T) -> Result<(), ConfigError> {
    if let Some(v) = kv.value(key)? {
        *slot = v;
    }
    Ok(())
}

fn set_vec(kv: &KeyValues, key: &str, slot: &mut Vector3<f64>) -> Result<(), ConfigError> {
    if let Some(v) = kv.vector(key)? {
        *slot = v;
    }
    Ok(())
}

fn fmt_vec(v: &Vector3<f64>) -> String {
    format!("{}, {}, {}", v.x, v.y, v.z)
}

pub fn apply_gains(gains: &mut GuidanceGains, kv: &KeyValues) -> Result<(), ConfigError> {
    set(kv, "gains.k_heading", &mut gains.k_heading)?;
    set(kv, "gains.k_alt", &mut gains.k_alt)?;
    set(kv, "gains.k_speed", &mut gains.k_speed)?;
    set(kv, "gains.target_speed", &mut gains.target_speed)?;
    set(kv, "gains.max_pitch_cmd", &mut gains.max_pitch_cmd)?;
    set(kv, "gains.capture_radius", &mut gains.capture_radius)?;
    set(kv, "gains.standoff", &mut gains.standoff)?;
    set(kv, "gains.k_closure", &mut gains.k_closure)?;
    set(kv, "gains.trim_throttle", &mut gains.trim_throttle)?;
    set(kv, "gains.pitch_trim", &mut gains.pitch_trim)?;
    if !gains.is_valid() {
        return Err(ConfigError::BadValue {
            key: "gains".into(),
            value: "gain set fails validation".into(),
        });
    }
    Ok(())
}

pub fn apply_runway(runway: &mut RunwaySpec, kv: &KeyValues) -> Result<(), ConfigError> {
    set_vec(kv, "runway.centerline_start", &mut runway.centerline_start)?;
    set_vec(kv, "runway.centerline_end", &mut runway.centerline_end)?;
    set(kv, "runway.pad_length", &mut runway.pad_length)?;
    set(kv, "runway.pad_width", &mut runway.pad_width)?;
    set(kv, "runway.pad_height", &mut runway.pad_height)?;
    set_vec(kv, "runway.touchdown_target", &mut runway.touchdown_target)?;
    set(kv, "runway.glide_slope", &mut runway.glide_slope)?;
    set(kv, "runway.flare_altitude", &mut runway.flare_altitude)?;
    set(
        kv,
        "runway.touchdown_epsilon",
        &mut runway.touchdown_epsilon,
    )?;
    set(kv, "runway.lookahead", &mut runway.lookahead)?;
    set(kv, "runway.flare_pitch", &mut runway.flare_pitch)?;
    if !runway.is_valid() {
        return Err(ConfigError::BadValue {
            key: "runway".into(),
            value: "runway geometry fails validation".into(),
        });
    }
    Ok(())
}

/// Every gain and runway key with its current value.
pub fn resolved(gains: &GuidanceGains, runway: &RunwaySpec) -> KeyValues {
    let mut kv = KeyValues::default();
    let g = [
        gains.k_heading,
        gains.k_alt,
        gains.k_speed,
        gains.target_speed,
        gains.max_pitch_cmd,
        gains.capture_radius,
        gains.standoff,
        gains.k_closure,
        gains.trim_throttle,
        gains.pitch_trim,
    ];
    for (k, v) in GAIN_KEYS.iter().zip(g) {
        kv.insert(k, v);
    }
    kv.insert("runway.centerline_start", fmt_vec(&runway.centerline_start));
    kv.insert("runway.centerline_end", fmt_vec(&runway.centerline_end));
    kv.insert("runway.pad_length", runway.pad_length);
    kv.insert("runway.pad_width", runway.pad_width);
    kv.insert("runway.pad_height", runway.pad_height);
    kv.insert("runway.touchdown_target", fmt_vec(&runway.touchdown_target));
    kv.insert("runway.glide_slope", runway.glide_slope);
    kv.insert("runway.flare_altitude", runway.flare_altitude);
    kv.insert("runway.touchdown_epsilon", runway.touchdown_epsilon);
    kv.insert("runway.lookahead", runway.lookahead);
    kv.insert("runway.flare_pitch", runway.flare_pitch);
    kv
}
