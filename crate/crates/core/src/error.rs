use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. Variant names are part of the CLI
/// contract: they are printed verbatim on stderr.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("observation for unit `{0}` has no assignment")]
    MissingAssignment(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("trigger intensity `{field}` missing on unit `{unit_id}`")]
    MissingTriggerData { unit_id: String, field: &'static str },

    /// E[r²] = 0. There are no trigger observations, so the treatment effect
    /// is zero by definition; see [`Error::defined_ate`].
    #[error("no trigger observations (E[r^2] = 0); ATE is zero by definition")]
    NoTriggers,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unit `{unit_id}` has {available} observations but {requested} were requested without replacement")]
    InsufficientObservations {
        unit_id: String,
        requested: u64,
        available: u64,
    },

    #[error("invalid moments: {0}")]
    InvalidMoments(String),

    #[error("missing column `{0}`")]
    SchemaError(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}`: {reason}")]
    ParseError {
        row: u64,
        column: String,
        value: String,
        reason: String,
    },

    #[error("duplicate unit `{0}`")]
    DuplicateUnit(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Stable error name, as printed by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::MissingAssignment(_) => "MissingAssignment",
            Error::DegenerateDesign(_) => "DegenerateDesign",
            Error::MissingTriggerData { .. } => "MissingTriggerData",
            Error::NoTriggers => "NoTriggers",
            Error::InsufficientData(_) => "InsufficientData",
            Error::InsufficientObservations { .. } => "InsufficientObservations",
            Error::InvalidMoments(_) => "InvalidMoments",
            Error::SchemaError(_) => "SchemaError",
            Error::ParseError { .. } => "ParseError",
            Error::DuplicateUnit(_) => "DuplicateUnit",
            Error::Io(_) => "Io",
        }
    }

    /// The ATE implied by a failed fit, when the failure still pins it down.
    pub fn defined_ate(&self) -> Option<f64> {
        match self {
            Error::NoTriggers => Some(0.0),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
