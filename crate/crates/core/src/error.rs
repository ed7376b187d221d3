use std::path::PathBuf;

use crate::geometry::BBox;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate box ({}, {}, {}, {}): zero area", .0.x_min, .0.y_min, .0.x_max, .0.y_max)]
    DegenerateBox(BBox),

    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("frame {frame}: {reason}")]
    Label { frame: u64, reason: String },

    #[error("frame {got} received after frame {last}; frames must strictly increase")]
    FrameOrder { last: u64, got: u64 },

    #[error("frame {frame}: detections present but no label record")]
    FrameMismatch { frame: u64 },

    #[error("{file}: line {line}: {path}: {reason}")]
    Schema {
        file: String,
        line: usize,
        path: String,
        reason: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateBox(_) | Error::InvalidBox { .. } => "geometry",
            Error::InvalidParam { .. } => "parameter",
            Error::Label { .. } => "label",
            Error::FrameOrder { .. } | Error::FrameMismatch { .. } => "frame",
            Error::Schema { .. } => "schema",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
