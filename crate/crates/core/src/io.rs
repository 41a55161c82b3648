//! Reading and writing configuration files as JSON or TOML by extension.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{cuboid_inertia, AirframeModel, Mat3, ModelError, RotorGeometry, Vec3, GRAVITY};

pub const AIRFRAME_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: unsupported extension (expected .json or .toml)")]
    Extension { path: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: unsupported schema_version {found} (expected {expected})")]
    Schema { path: String, found: u32, expected: u32 },
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Toml,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "json" => Some(Format::Json),
            "toml" => Some(Format::Toml),
            _ => None,
        }
    }
}

pub fn parse_str<T: DeserializeOwned>(text: &str, format: Format, origin: &str) -> Result<T, IoError> {
    let parsed = match format {
        Format::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
        Format::Toml => toml::from_str(text).map_err(|e| e.to_string().trim().replace('\n', " ")),
    };
    parsed.map_err(|message| IoError::Parse { path: origin.to_string(), message })
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let name = path.display().to_string();
    let format = Format::from_path(path).ok_or_else(|| IoError::Extension { path: name.clone() })?;
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read { path: name.clone(), source })?;
    parse_str(&text, format, &name)
}

pub fn to_string<T: Serialize>(value: &T, format: Format) -> Result<String, IoError> {
    match format {
        Format::Json => serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| IoError::Serialize(e.to_string())),
        Format::Toml => toml::to_string(value).map_err(|e| IoError::Serialize(e.to_string())),
    }
}

pub fn write_file<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let name = path.display().to_string();
    let format = Format::from_path(path).ok_or_else(|| IoError::Extension { path: name.clone() })?;
    let text = to_string(value, format)?;
    std::fs::write(path, text).map_err(|source| IoError::Read { path: name, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InertiaSpec {
    /// Row-major 3x3.
    Matrix([f64; 9]),
    /// Solid box estimate from `body_size`.
    Shorthand(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorEntry {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirframeFile {
    pub schema_version: u32,
    pub mass: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub inertia: InertiaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_size: Option<[f64; 3]>,
    pub rotors: Vec<RotorEntry>,
}

fn default_gravity() -> f64 {
    GRAVITY
}

impl AirframeFile {
    pub fn from_model(model: &AirframeModel) -> Self {
        let i = model.inertia;
        Self {
            schema_version: AIRFRAME_SCHEMA_VERSION,
            mass: model.mass,
            gravity: model.gravity,
            inertia: InertiaSpec::Matrix([i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 0)], i[(1, 1)], i[(1, 2)], i[(2, 0)], i[(2, 1)], i[(2, 2)]]),
            body_size: None,
            rotors: model
                .rotors
                .iter()
                .map(|r| RotorEntry {
                    x: r.position.x,
                    y: r.position.y,
                    z: r.position.z,
                    alpha: r.alpha,
                    beta: r.beta,
                    sigma: r.sigma,
                    lambda_max: r.max_thrust,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<AirframeModel, IoError> {
        let bad = |m: &str| IoError::Parse { path: "airframe".into(), message: m.to_string() };
        if self.schema_version != AIRFRAME_SCHEMA_VERSION {
            return Err(IoError::Schema { path: "airframe".into(), found: self.schema_version, expected: AIRFRAME_SCHEMA_VERSION });
        }
        let inertia = match &self.inertia {
            InertiaSpec::Matrix(v) => Mat3::from_row_slice(v),
            InertiaSpec::Shorthand(s) if s == "cuboid" => {
                cuboid_inertia(self.mass, self.body_size.unwrap_or(crate::model::presets::BODY_SIZE))
            }
            InertiaSpec::Shorthand(s) => return Err(bad(&format!("inertia: unknown shorthand {s:?}"))),
        };
        let rotors = self
            .rotors
            .iter()
            .map(|r| RotorGeometry::from_angles(Vec3::new(r.x, r.y, r.z), r.alpha, r.beta, r.sigma, r.lambda_max))
            .collect();
        Ok(AirframeModel::new(self.mass, inertia, rotors, self.gravity)?)
    }

    /// The reference unit with the "cuboid" inertia shorthand.
    pub fn reference() -> Self {
        let mut f = Self::from_model(&crate::model::presets::reference_unit());
        f.inertia = InertiaSpec::Shorthand("cuboid".into());
        f
    }
}

pub fn load_airframe(path: &Path) -> Result<AirframeModel, IoError> {
    let file: AirframeFile = read_file(path)?;
    file.to_model().map_err(|e| match e {
        IoError::Parse { message, .. } => IoError::Parse { path: path.display().to_string(), message },
        IoError::Schema { found, expected, .. } => IoError::Schema { path: path.display().to_string(), found, expected },
        other => other,
    })
}
