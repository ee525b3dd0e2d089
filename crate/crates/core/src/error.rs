use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate row for respondent `{respondent}`, situation `{situation}`, alternative `{alternative}`")]
    DuplicateRow {
        respondent: String,
        situation: String,
        alternative: String,
    },

    #[error("respondent `{respondent}`, situation `{situation}`: {count} chosen rows (expected exactly one)")]
    ChosenCount {
        respondent: String,
        situation: String,
        count: usize,
    },

    #[error("respondent `{respondent}`, situation `{situation}`: chosen unavailable")]
    ChosenUnavailable {
        respondent: String,
        situation: String,
    },

    #[error(
        "respondent `{respondent}`, situation `{situation}`: fewer than two available alternatives"
    )]
    TooFewAvailable {
        respondent: String,
        situation: String,
    },

    #[error("respondent `{respondent}`, indicator `{indicator}`: value {value} out of range [{min}, {max}]")]
    OutOfRange {
        respondent: String,
        indicator: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("duplicate respondent id `{0}`")]
    DuplicateRespondent(String),

    #[error("no respondents in common between choice data and indicators")]
    EmptyIntersection,

    #[error("no available alternative")]
    NoAvailableAlternative,

    #[error("nesting parameter {0} outside (0, 1]")]
    InvalidLambda(f64),

    #[error("invalid nest structure: {0}")]
    InvalidNests(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("{0}")]
    Precondition(String),

    #[error("singular correlation matrix: indicators `{0}` and `{1}` are collinear")]
    Collinear(String, String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("separation detected: coefficient norm {0:.1} exceeds 50")]
    Separation(f64),

    #[error("all items excluded by retention rule")]
    AllItemsExcluded,

    #[error("instance too large for brute-force oracle: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
