use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("activation temperature {t_a} °C does not exceed Tg {t_g} °C; no shape recovery")]
    BelowTg { t_a: f64, t_g: f64 },

    #[error("activation temperature {t_a} °C outside calibrated range [{min}, {max}] °C")]
    OutOfRange { t_a: f64, min: f64, max: f64 },

    #[error("singular laminate system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("z = {z} mm outside laminate thickness [{lower}, {upper}] mm")]
    Domain { z: f64, lower: f64, upper: f64 },

    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    #[error("infeasible target: no candidate below threshold {threshold:e} /mm (best residual {best:e} /mm)")]
    Infeasible { best: f64, threshold: f64 },

    #[error("over-constrained: every candidate rejected ({})", reasons.join("; "))]
    OverConstrained { reasons: Vec<String> },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("deformation map is singular: {0}")]
    SingularMap(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    MaterialRange,
    Io,
    Infeasible,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::BelowTg { .. } | Error::OutOfRange { .. } => ErrorKind::MaterialRange,
            Error::Io { .. } => ErrorKind::Io,
            Error::UnsupportedTarget(_)
            | Error::Infeasible { .. }
            | Error::OverConstrained { .. } => ErrorKind::Infeasible,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Singular { .. }
            | Error::Domain { .. }
            | Error::Geometry(_)
            | Error::Topology(_)
            | Error::SingularMap(_) => ErrorKind::Validation,
        }
    }

    /// Stable snake_case tag for machine-readable error reports.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::BelowTg { .. } => "below_tg",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Singular { .. } => "singular_system",
            Error::Domain { .. } => "domain",
            Error::UnsupportedTarget(_) => "unsupported_target",
            Error::Infeasible { .. } => "infeasible_target",
            Error::OverConstrained { .. } => "over_constrained",
            Error::Geometry(_) => "geometry",
            Error::Topology(_) => "topology",
            Error::SingularMap(_) => "singular_map",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
