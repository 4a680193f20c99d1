use thiserror::Error;

/// Errors raised by the map, process, density and extreme value layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A point lies outside the unit box, or has the wrong dimension.
    #[error("domain error: {0}")]
    Domain(String),

    /// The point lies on the singular set, where the map is undefined.
    #[error("point lies on the singular set")]
    SingularHit,

    /// The operation needs exact affine box images and the map does not provide them.
    #[error("unsupported for this map: {0}")]
    Capability(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Invalid parameters or configuration values. The first field names the offending field.
    #[error("invalid {field}: {message}")]
    Config { field: String, message: String },

    /// The point sits on the boundary of some forward image set, where the density is ambiguous.
    #[error("point lies on the boundary of Lambda_{level}")]
    Boundary { level: usize },

    /// The small ball used for analytic levels leaves its density stratum or the domain.
    #[error("level error: {0}")]
    Level(String),

    #[error("attractor error: {0}")]
    Attractor(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("budget error: {0}")]
    Budget(String),

    /// A statistical estimate cannot be formed from the available data.
    #[error("estimate undefined: {0}")]
    Undefined(String),

    #[error("batch error: {0}")]
    Batch(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
