use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate observation for unit '{unit}' on {date}")]
    Duplicate { unit: String, date: String },

    #[error("input contains no observations")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unit '{unit}': {message}")]
    Metadata { unit: String, message: String },

    #[error("metric mismatch: {0}")]
    Metric(String),

    #[error("no unit satisfies the alignment rule")]
    EmptyAlignment,

    #[error("unit '{unit}': date {date} lies outside the panel calendar")]
    Range { unit: String, date: String },

    #[error("empty donor set: {0}")]
    EmptyDonor(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("need at least 2 pre-intervention observations, found {available}")]
    InsufficientPretreatment { available: usize },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("reduction undefined: reference total {total} is not positive")]
    UndefinedReduction { total: f64 },

    #[error("unit '{unit}' belongs to both '{first}' and '{second}'")]
    Grouping {
        unit: String,
        first: String,
        second: String,
    },

    #[error("unstable integration: {0}")]
    Stability(String),

    #[error("unknown unit '{0}'")]
    UnknownUnit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable short name used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Duplicate { .. } => "DuplicateError",
            Error::EmptyInput => "EmptyInputError",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Metadata { .. } => "MetadataError",
            Error::Metric(_) => "MetricError",
            Error::EmptyAlignment => "EmptyAlignmentError",
            Error::Range { .. } => "RangeError",
            Error::EmptyDonor(_) => "EmptyDonorError",
            Error::DegenerateInput(_) => "DegenerateInputError",
            Error::InsufficientPretreatment { .. } => "InsufficientPretreatmentError",
            Error::DegenerateModel(_) => "DegenerateModelError",
            Error::UndefinedReduction { .. } => "UndefinedReductionError",
            Error::Grouping { .. } => "GroupingError",
            Error::Stability(_) => "StabilityError",
            Error::UnknownUnit(_) => "UnknownUnitError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
        }
    }
}
