//! TOML configuration with dotted `section.key=value` overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file, overrides,
//! then dedicated command-line flags applied by the caller.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{DetectorParams, MatcherParams};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::pipeline::PipelineConfig;
use crate::ransac::RansacParams;

/// The shipped defaults, identical to `Config::default()`.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("override `{arg}`: {message}")]
    Override { arg: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub frame_stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
    pub initial_position: [f64; 3],
    /// `(qx, qy, qz, qw)`.
    pub initial_orientation: [f64; 4],
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            frame_stride: 1,
            max_frames: None,
            initial_position: [0.0; 3],
            initial_orientation: [0.0, 0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationSection {
    /// Color to depth timestamp pairing, seconds.
    pub max_diff: f64,
    /// Frame to groundtruth timestamp pairing, seconds.
    pub groundtruth_max_diff: f64,
}

impl Default for AssociationSection {
    fn default() -> Self {
        Self {
            max_diff: 0.02,
            groundtruth_max_diff: 0.02,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub camera: CameraIntrinsics,
    pub detector: DetectorParams,
    pub matcher: MatcherParams,
    pub ransac: RansacParams,
    pub pipeline: PipelineSection,
    pub association: AssociationSection,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, arg: &str) -> Result<(), ConfigError> {
    let fail = |message: &str| ConfigError::Override {
        arg: arg.to_string(),
        message: message.to_string(),
    };
    let (key, value) = arg.split_once('=').ok_or_else(|| fail("expected key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(fail("empty key component"));
    }
    let (last, parents) = path.split_last().expect("split yields one element");
    let mut current = table;
    for p in parents {
        let entry = current
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| fail(&format!("`{p}` is not a section")))?;
    }
    current.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
    }

    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                // Deserializing the text directly keeps line numbers in errors.
                Self::from_toml(&text).map_err(|message| ConfigError::File {
                    path: path.to_path_buf(),
                    message,
                })?;
                toml::from_str::<toml::Table>(&text).expect("validated above")
            }
            None => toml::Table::new(),
        };
        for arg in overrides {
            apply_override(&mut table, arg)?;
            Config::deserialize(toml::Value::Table(table.clone())).map_err(|e| ConfigError::Override {
                arg: arg.clone(),
                message: e.to_string().trim_end().to_string(),
            })?;
        }
        let config = Config::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let p = &self.pipeline;
        let initial_pose = RigidTransform::from_position_quaternion(Vector3::from(p.initial_position), p.initial_orientation)
            .map_err(|e| ConfigError::Invalid(format!("pipeline.initial_orientation: {e}")))?;
        let cfg = PipelineConfig {
            intrinsics: self.camera,
            detector: self.detector.clone(),
            matcher: self.matcher.clone(),
            ransac: self.ransac.clone(),
            frame_stride: p.frame_stride,
            max_frames: p.max_frames,
            initial_pose,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let a = &self.association;
        if !(a.max_diff > 0.0 && a.groundtruth_max_diff > 0.0) {
            return Err(ConfigError::Invalid("association tolerances must be > 0".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn shipped_defaults_match_builtin() {
        assert_eq!(Config::from_toml(DEFAULT_CONFIG).unwrap(), Config::default());
        Config::default().pipeline_config().unwrap();
    }

    #[test]
    fn serialized_config_round_trips() {
        let mut c = Config::default();
        c.pipeline.max_frames = Some(12);
        c.ransac.seed = 99;
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let f = file("[ransac]\ninlier_threshold = 0.05\n");
        let c = Config::load(Some(f.path()), &[]).unwrap();
        assert_eq!(c.ransac.inlier_threshold, 0.05);
        assert_eq!(c.ransac.max_iterations, 500);
        assert_eq!(c.camera, CameraIntrinsics::default());
    }

    #[test]
    fn overrides_beat_file() {
        let f = file("[ransac]\ninlier_threshold = 0.05\nseed = 3\n");
        let c = Config::load(
            Some(f.path()),
            &["ransac.inlier_threshold=0.01".into(), "pipeline.max_frames=7".into(), "detector.filter_sizes=[9,15,21]".into()],
        )
        .unwrap();
        assert_eq!(c.ransac.inlier_threshold, 0.01);
        assert_eq!(c.ransac.seed, 3);
        assert_eq!(c.pipeline.max_frames, Some(7));
        assert_eq!(c.detector.filter_sizes, vec![9, 15, 21]);
    }

    #[test]
    fn malformed_file_reports_line() {
        let f = file("[ransac]\nseed = 1\ninlier_threshold = = 2\n");
        let err = Config::load(Some(f.path()), &[]).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let f = file("[ransac]\nseed = 1\nbogus = 2\n");
        let err = Config::load(Some(f.path()), &[]).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn bad_overrides_rejected() {
        for arg in ["ransac.seed", "ransac.nope=1", "ransac.seed=abc", "ransac..seed=1", "ransac.seed.x=1"] {
            assert!(
                matches!(Config::load(None, &[arg.into()]), Err(ConfigError::Override { .. })),
                "{arg}"
            );
        }
    }

    #[test]
    fn invalid_values_rejected_on_conversion() {
        let c = Config::load(None, &["pipeline.frame_stride=0".into()]).unwrap();
        assert!(c.pipeline_config().is_err());
        let c = Config::load(None, &["camera.fx=-1".into()]).unwrap();
        assert!(c.pipeline_config().is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            Config::load(Some(Path::new("/nonexistent/x.toml")), &[]),
            Err(ConfigError::Io { .. })
        ));
    }
}
